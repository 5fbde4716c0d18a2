use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usflow::network::{init_parameters, FlowModel, Mode, NetConfig};

fn config() -> NetConfig {
    NetConfig {
        depth: 2,
        base_channels: 4,
        time_dim: 8,
        nz: 8,
        nx: 8,
    }
}

struct Case {
    model: FlowModel,
    xs: Vec<Array2<f64>>,
    ys: Vec<Array2<f64>>,
    ts: Vec<f64>,
}

/// Random inputs with targets offset by 1..2 from the current prediction, so
/// no L1 residual changes sign under small parameter changes.
fn case(model: FlowModel, rng: &mut ChaCha8Rng, mode: Mode) -> Case {
    let xs: Vec<Array2<f64>> = (0..2)
        .map(|_| Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let ts = vec![0.2, 0.6];
    let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
    let pred = model.forward_mode(&views, &ts, mode).unwrap();
    let ys = pred
        .iter()
        .map(|p| {
            p.mapv(|v| {
                let d: f64 = rng.random_range(1.0..2.0);
                if rng.random_bool(0.5) {
                    v + d
                } else {
                    v - d
                }
            })
        })
        .collect();
    Case { model, xs, ys, ts }
}

/// Counts parameters whose analytic gradient disagrees with the central
/// difference (1e-3 relative or 1e-6 absolute), reporting the worst one.
fn mismatches(c: &Case, mode: Mode, eps: f64) -> (usize, usize, String) {
    let xv: Vec<_> = c.xs.iter().map(|x| x.view()).collect();
    let yv: Vec<_> = c.ys.iter().map(|x| x.view()).collect();
    let g = c.model.gradients(&xv, &c.ts, &yv, mode).unwrap();
    let mut failures = 0;
    let mut total = 0;
    let mut worst = (0.0, String::new());
    let mut probe = c.model.clone();
    for (pi, p) in c.model.params.iter().enumerate() {
        for (flat, &orig) in p.data.iter().enumerate() {
            total += 1;
            let set = |m: &mut FlowModel, v: f64| m.params[pi].data.as_slice_mut().unwrap()[flat] = v;
            set(&mut probe, orig + eps);
            let up = probe.loss(&xv, &c.ts, &yv, mode).unwrap();
            set(&mut probe, orig - eps);
            let down = probe.loss(&xv, &c.ts, &yv, mode).unwrap();
            set(&mut probe, orig);
            let fd = (up - down) / (2.0 * eps);
            let an = g.grads[pi].as_slice().unwrap()[flat];
            let abs = (fd - an).abs();
            let rel = abs / fd.abs().max(an.abs()).max(f64::MIN_POSITIVE);
            if !(rel <= 1e-3 || abs <= 1e-6) {
                failures += 1;
                if abs > worst.0 {
                    worst = (abs, format!("{}[{flat}] fd {fd:e} analytic {an:e}", p.name));
                }
            }
        }
    }
    (failures, total, worst.1)
}

#[test]
fn gradients_match_central_differences_at_eps_1e3() {
    // Batch statistics bound every normalized activation, and shifts of ±4
    // put each ReLU channel clearly on or off, so no kink lies within reach
    // of a 1e-3 perturbation.
    for seed in [1, 2, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = init_parameters(&config(), seed).unwrap();
        for p in &mut model.params {
            let is_shift = p.name.contains("norm") && p.name.ends_with(".bias");
            for (i, v) in p.data.iter_mut().enumerate() {
                if is_shift {
                    *v = if i == 0 || rng.random_bool(0.75) { 4.0 } else { -4.0 };
                } else {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
        }
        let c = case(model, &mut rng, Mode::Train);
        let (failures, total, worst) = mismatches(&c, Mode::Train, 1e-3);
        assert_eq!(failures, 0, "seed {seed}: {failures}/{total} mismatches, worst {worst}");
    }
}

#[test]
fn gradients_match_fine_central_differences_at_generic_points() {
    for seed in [1, 2, 3] {
        for mode in [Mode::Eval, Mode::Train] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let mut model = init_parameters(&config(), seed).unwrap();
            // zero biases can leave ReLU inputs exactly on the kink
            for p in &mut model.params {
                p.data.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
            }
            let c = case(model, &mut rng, mode);
            let (failures, total, worst) = mismatches(&c, mode, 1e-6);
            assert_eq!(failures, 0, "seed {seed} {mode:?}: {failures}/{total} mismatches, worst {worst}");
        }
    }
}
