//! Straight-line flow between high-compounding images (`x0`) and
//! low-compounding images (`x1`).
//!
//! The forward process interpolates `x_t = (1 − t)·x0 + t·x1`; its velocity
//! `x1 − x0` does not depend on `t`. A network trained to predict that
//! velocity from `(x_t, t)` is integrated backwards from `x1` with
//! `x_{t−Δt} = x_t − v·Δt`.

use log::{debug, info};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamformer::{zip_images, RfImage};
use crate::error::{Error, Result};
use crate::network::{init_parameters, lr_schedule, FlowModel, Hyperparams, Mode, NetConfig};

/// Discrete time grid `{1/T, 2/T, …, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSchedule {
    steps: usize,
}

impl FlowSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("flow schedule needs at least one step"));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// Grid point `k/T`, `k ∈ 1..=T`.
    pub fn t(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    pub fn t_grid(&self) -> Vec<f64> {
        (1..=self.steps).map(|k| self.t(k)).collect()
    }

    /// A grid point drawn uniformly.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        self.t(rng.random_range(1..=self.steps))
    }
}

/// Compounding counts of the input (`j`) and target (`k`) images and the
/// number of reverse steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub j: usize,
    pub k: usize,
    pub steps: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self { j: 1, k: 15, steps: 5 }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.k <= self.j {
            return Err(Error::invalid(format!(
                "scenario needs 1 <= J < K, got J={} K={}",
                self.j, self.k
            )));
        }
        FlowSchedule::new(self.steps).map(|_| ())
    }

    pub fn schedule(&self) -> Result<FlowSchedule> {
        FlowSchedule::new(self.steps)
    }
}

/// A high-quality target and its low-quality counterpart on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub x0: RfImage,
    pub x1: RfImage,
}

impl PairedSample {
    pub fn new(x0: RfImage, x1: RfImage) -> Result<Self> {
        let s = Self { x0, x1 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.x0.validate()?;
        self.x1.validate()?;
        if self.x0.grid != self.x1.grid {
            return Err(Error::invalid("paired images live on different grids"));
        }
        if self.x0.n_compound <= self.x1.n_compound {
            return Err(Error::invalid(format!(
                "target compounds {} angles, input {}; the target must use more",
                self.x0.n_compound, self.x1.n_compound
            )));
        }
        Ok(())
    }
}

/// Train / validation / test indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PairedSample>,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    /// Checks that the split is a partition of the sample indices.
    pub fn new(samples: Vec<PairedSample>, split: Split, seed: u64) -> Result<Self> {
        let mut seen = vec![false; samples.len()];
        for &i in split.train.iter().chain(&split.val).chain(&split.test) {
            if i >= samples.len() || seen[i] {
                return Err(Error::invalid(format!("split index {i} repeated or out of range")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("split does not cover every sample"));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| s.x0.grid != first.x0.grid) {
                return Err(Error::invalid("dataset samples live on different grids"));
            }
        }
        Ok(Self { samples, split, seed })
    }

    pub fn train(&self) -> impl Iterator<Item = &PairedSample> {
        self.split.train.iter().map(|&i| &self.samples[i])
    }

    pub fn val(&self) -> impl Iterator<Item = &PairedSample> {
        self.split.val.iter().map(|&i| &self.samples[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &PairedSample> {
        self.split.test.iter().map(|&i| &self.samples[i])
    }
}

/// Seeded 70/20/10 split; validation and test sizes round down.
pub fn split_dataset(samples: Vec<PairedSample>, seed: u64) -> Result<Dataset> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::invalid(format!("at least 10 samples are needed to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, &[0x5b11]));
    let n_val = n * 2 / 10;
    let n_test = n / 10;
    let n_train = n - n_val - n_test;
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Dataset::new(samples, Split { train, val, test }, seed)
}

/// Pixel-wise `(1 − t)·x0 + t·x1`; the endpoints return the inputs unchanged.
pub fn interpolate(x0: &RfImage, x1: &RfImage, t: f64) -> Result<RfImage> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("interpolation time {t} outside [0, 1]")));
    }
    let data = zip_images(x0, x1, |a, b| (1.0 - t) * a + t * b)?;
    if t == 0.0 {
        return Ok(x0.clone());
    }
    if t == 1.0 {
        return Ok(x1.clone());
    }
    x1.with_data(data)
}

/// Pixel-wise `x1 − x0`.
pub fn velocity(x0: &RfImage, x1: &RfImage) -> Result<Array2<f64>> {
    zip_images(x0, x1, |a, b| b - a)
}

/// `x_t − v·dt`.
pub fn reverse_step(x_t: &RfImage, v: ArrayView2<f64>, dt: f64) -> Result<RfImage> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("reverse step size {dt} must be positive")));
    }
    if v.dim() != x_t.data.dim() {
        return Err(Error::ShapeMismatch {
            expected: x_t.data.shape().to_vec(),
            actual: v.shape().to_vec(),
        });
    }
    let data = &x_t.data - &(&v * dt);
    x_t.with_data(data)
}

/// Anything that predicts a velocity field for `(x_t, t)`.
pub trait VelocityModel {
    fn velocity(&self, x_t: &RfImage, t: f64) -> Result<Array2<f64>>;
}

impl VelocityModel for FlowModel {
    fn velocity(&self, x_t: &RfImage, t: f64) -> Result<Array2<f64>> {
        let mut out = self.forward(&[x_t.data.view()], &[t])?;
        Ok(out.remove(0))
    }
}

/// A model that returns the same field for every input.
#[derive(Debug, Clone)]
pub struct ConstantVelocity(pub Array2<f64>);

impl ConstantVelocity {
    /// The exact velocity of a pair.
    pub fn oracle(pair: &PairedSample) -> Result<Self> {
        Ok(Self(velocity(&pair.x0, &pair.x1)?))
    }

    pub fn zero(shape: (usize, usize)) -> Self {
        Self(Array2::zeros(shape))
    }
}

impl VelocityModel for ConstantVelocity {
    fn velocity(&self, x_t: &RfImage, _t: f64) -> Result<Array2<f64>> {
        if self.0.dim() != x_t.data.dim() {
            return Err(Error::ShapeMismatch {
                expected: x_t.data.shape().to_vec(),
                actual: self.0.shape().to_vec(),
            });
        }
        Ok(self.0.clone())
    }
}

/// Integrates from `x1` back to `t = 0` in `steps` equal steps, evaluating
/// the model at `t = 1, 1 − dt, …, dt`.
pub fn sample_reverse<M: VelocityModel + ?Sized>(model: &M, x1: &RfImage, steps: usize) -> Result<RfImage> {
    let schedule = FlowSchedule::new(steps)?;
    let dt = schedule.dt();
    let mut x = x1.clone();
    for k in (1..=steps).rev() {
        let t = schedule.t(k);
        let v = model.velocity(&x, t)?;
        if v.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("predicted velocity at t = {t}")));
        }
        x = reverse_step(&x, v.view(), dt)?;
    }
    Ok(x)
}

/// Mean absolute difference.
pub fn l1_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch {
            expected: target.shape().to_vec(),
            actual: pred.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty images"));
    }
    Ok(ndarray::Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, &p, &t| acc + (p - t).abs())
        / pred.len() as f64)
}

/// Network inputs `x_t` and velocity targets for a batch with given times.
fn batch_tensors(batch: &[&PairedSample], ts: &[f64]) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    let mut inputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for (s, &t) in batch.iter().zip(ts) {
        inputs.push(interpolate(&s.x0, &s.x1, t)?.data);
        targets.push(velocity(&s.x0, &s.x1)?);
    }
    Ok((inputs, targets))
}

/// L1 velocity loss of `model` on `batch` at times `ts`, with parameter
/// gradients. Batch statistics are used for normalization.
pub fn training_loss(
    model: &FlowModel,
    batch: &[&PairedSample],
    ts: &[f64],
) -> Result<crate::network::Gradients> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    if batch.len() != ts.len() {
        return Err(Error::invalid("one time value per sample is required"));
    }
    let (inputs, targets) = batch_tensors(batch, ts)?;
    let iv: Vec<_> = inputs.iter().map(|x| x.view()).collect();
    let tv: Vec<_> = targets.iter().map(|x| x.view()).collect();
    model.gradients(&iv, ts, &tv, Mode::Train)
}

/// Evaluation-mode L1 velocity loss, averaged over samples.
pub fn evaluation_loss(model: &FlowModel, batch: &[&PairedSample], ts: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (s, &t) in batch.iter().zip(ts) {
        let (inputs, targets) = batch_tensors(&[s], &[t])?;
        total += model.loss(&[inputs[0].view()], &[t], &[targets[0].view()], Mode::Eval)?;
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Deterministic generator for a `(seed, tags…)` tuple.
pub fn derived_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TAG_SHUFFLE: u64 = 1;
const TAG_TIMES: u64 = 2;
const TAG_VAL: u64 = 3;

/// Options that are not optimizer hyperparameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Divide each network input by its own standard deviation.
    pub standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: FlowModel,
    pub history: Vec<EpochRecord>,
    /// Epoch of the returned model, `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// RMS amplitude of the training inputs, used as the network's input scale.
pub fn data_scale(dataset: &Dataset) -> f64 {
    let (sum, count) = dataset
        .train()
        .fold((0.0, 0usize), |(s, c), p| (s + p.x1.data.iter().map(|v| v * v).sum::<f64>(), c + p.x1.data.len()));
    let rms = (sum / count.max(1) as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

/// Minibatch training with Adam and the step learning-rate schedule.
///
/// The epoch's shuffle and the per-sample times are pure functions of
/// `(seed, epoch, batch)`; validation times are fixed per sample. The model
/// with the lowest validation loss (training loss when there is no validation
/// set) is returned.
pub fn train(
    dataset: &Dataset,
    scenario: &Scenario,
    net: &NetConfig,
    hyper: &Hyperparams,
    options: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome> {
    scenario.validate()?;
    hyper.validate()?;
    if dataset.split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let grid = &dataset.samples[dataset.split.train[0]].x0.grid;
    if (grid.nz, grid.nx) != (net.nz, net.nx) {
        return Err(Error::ShapeMismatch {
            expected: vec![net.nz, net.nx],
            actual: vec![grid.nz, grid.nx],
        });
    }
    for s in &dataset.samples {
        if s.x1.n_compound != scenario.j || s.x0.n_compound != scenario.k {
            return Err(Error::invalid(format!(
                "dataset pairs {}→{} angles, scenario expects {}→{}",
                s.x1.n_compound, s.x0.n_compound, scenario.j, scenario.k
            )));
        }
    }
    let schedule = scenario.schedule()?;
    let mut model = init_parameters(net, seed)?;
    model.data_scale = data_scale(dataset);
    model.standardize = options.standardize;
    info!(
        "training {} parameters on {} samples (scale {:.4e})",
        model.num_parameters(),
        dataset.split.train.len(),
        model.data_scale
    );

    let val: Vec<&PairedSample> = dataset.val().collect();
    let val_ts: Vec<f64> = (0..val.len())
        .map(|i| schedule.draw(&mut derived_rng(seed, &[TAG_VAL, i as u64])))
        .collect();

    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, FlowModel)> = None;
    for epoch in 0..hyper.epochs {
        let lr = lr_schedule(epoch, hyper);
        let mut order = dataset.split.train.clone();
        order.shuffle(&mut derived_rng(seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&PairedSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let mut rng = derived_rng(seed, &[TAG_TIMES, epoch as u64, b as u64]);
            let ts: Vec<f64> = batch.iter().map(|_| schedule.draw(&mut rng)).collect();
            let g = match training_loss(&model, &batch, &ts) {
                Ok(g) => g,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            model.update_running_stats(&g);
            model.adam_step(&g.grads, lr)?;
            if !model.is_finite() {
                return Err(Error::Diverged { epoch, loss: g.loss });
            }
            weighted += g.loss * batch.len() as f64;
            debug!("epoch {epoch} batch {b} loss {:.6}", g.loss);
        }
        let train_loss = weighted / order.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            match evaluation_loss(&model, &val, &val_ts) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            }
        };
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: if train_loss.is_finite() { val_loss } else { train_loss },
            });
        }
        info!("epoch {epoch}: lr {lr:.2e} train {train_loss:.6} val {val_loss:.6}");
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }
    Ok(match best {
        Some((_, epoch, m)) => TrainOutcome {
            model: m,
            history,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            model,
            history,
            best_epoch: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamformer::ImageGrid;

    fn grid(nz: usize, nx: usize) -> ImageGrid {
        ImageGrid::new(-1e-3, 1e-4, nx, 1e-3, 1e-4, nz).unwrap()
    }

    fn image(data: Array2<f64>, n: usize) -> RfImage {
        let g = grid(data.nrows(), data.ncols());
        RfImage::new(data, g, vec![0.0; n]).unwrap()
    }

    fn random_pair(seed: u64, shape: (usize, usize)) -> PairedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
        let x1 = Array2::from_shape_fn(shape, |_| rng.random_range(-3.0..3.0));
        PairedSample::new(image(x0, 3), image(x1, 1)).unwrap()
    }

    fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn schedule_grid() {
        let s = FlowSchedule::new(4).unwrap();
        assert_eq!(s.t_grid(), vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s.dt() * 4.0, 1.0);
        assert!(FlowSchedule::new(0).is_err());
        for t in [3, 7, 10, 49] {
            let g = FlowSchedule::new(t).unwrap().t_grid();
            assert!(g.iter().all(|&v| v > 0.0 && v <= 1.0));
            assert_eq!(*g.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let x0 = image(Array2::from_elem((2, 2), 2.0), 3);
        let x1 = image(Array2::from_elem((2, 2), 6.0), 1);
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
        assert!(interpolate(&x0, &x1, 0.25).unwrap().data.iter().all(|&v| v == 3.0));
        assert!(interpolate(&x0, &x1, 1.5).is_err());
        let other = RfImage::new(Array2::zeros((2, 3)), grid(2, 3), vec![0.0]).unwrap();
        assert!(interpolate(&x0, &other, 0.5).is_err());
    }

    #[test]
    fn interpolation_is_affine_in_t() {
        let p = random_pair(1, (5, 4));
        let (a, b) = (0.2, 0.7);
        let mid = interpolate(&p.x0, &p.x1, (a + b) / 2.0).unwrap().data;
        let avg = (interpolate(&p.x0, &p.x1, a).unwrap().data + interpolate(&p.x0, &p.x1, b).unwrap().data) / 2.0;
        assert!(mid.iter().zip(&avg).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn velocity_properties() {
        let p = random_pair(2, (4, 4));
        let v = velocity(&p.x0, &p.x1).unwrap();
        let w = velocity(&p.x1, &p.x0).unwrap();
        assert_eq!(v, -w);
        assert!(velocity(&p.x0, &p.x0).unwrap().iter().all(|&v| v == 0.0));
        // dyadic values make the telescoping identity exact
        let x0 = image(Array2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64), 3);
        let x1 = image(Array2::from_shape_fn((3, 3), |(i, j)| (2 * i + 5 * j) as f64 - 4.0), 1);
        let v = velocity(&x0, &x1).unwrap();
        for (t, dt) in [(0.25, 0.25), (0.5, 0.125), (0.0, 0.5)] {
            let a = interpolate(&x0, &x1, t).unwrap().data;
            let b = interpolate(&x0, &x1, t + dt).unwrap().data;
            assert_eq!(&b - &a, &v * dt);
        }
    }

    #[test]
    fn reverse_step_cases() {
        let x0 = image(Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64), 3);
        let x1 = image(Array2::from_shape_fn((3, 2), |(i, j)| (3 * i) as f64 - j as f64), 1);
        let zero = Array2::zeros((3, 2));
        assert_eq!(reverse_step(&x1, zero.view(), 0.3).unwrap().data, x1.data);
        let v = velocity(&x0, &x1).unwrap();
        assert_eq!(reverse_step(&x1, v.view(), 1.0).unwrap().data, x0.data);
        assert!(reverse_step(&x1, v.view(), 0.0).is_err());
    }

    #[test]
    fn oracle_recovery_for_any_step_count() {
        for seed in 0..5 {
            let p = random_pair(seed, (6, 5));
            let oracle = ConstantVelocity::oracle(&p).unwrap();
            for steps in [1, 3, 5, 10] {
                let x = sample_reverse(&oracle, &p.x1, steps).unwrap();
                assert!(max_rel(&x.data, &p.x0.data) <= 1e-6);
            }
        }
    }

    #[test]
    fn zero_model_is_identity_and_sampling_is_deterministic() {
        let p = random_pair(3, (4, 4));
        let z = ConstantVelocity::zero((4, 4));
        assert_eq!(sample_reverse(&z, &p.x1, 5).unwrap(), p.x1);
        let m = init_parameters(
            &NetConfig {
                depth: 1,
                base_channels: 2,
                time_dim: 4,
                nz: 4,
                nx: 4,
            },
            1,
        )
        .unwrap();
        let a = sample_reverse(&m, &p.x1, 3).unwrap();
        let b = sample_reverse(&m, &p.x1, 3).unwrap();
        assert_eq!(a, b);
        assert!(sample_reverse(&z, &p.x1, 0).is_err());
    }

    #[test]
    fn l1_loss_cases() {
        let v = Array2::from_shape_fn((3, 3), |(i, j)| (i as f64) - 2.0 * j as f64);
        assert_eq!(l1_loss(v.view(), v.view()).unwrap(), 0.0);
        assert_eq!(l1_loss((&v + 1.0).view(), v.view()).unwrap(), 1.0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let samples: Vec<_> = (0..10).map(|s| random_pair(s, (2, 2))).collect();
        let d = split_dataset(samples.clone(), 4).unwrap();
        assert_eq!((d.split.train.len(), d.split.val.len(), d.split.test.len()), (7, 2, 1));
        let mut all: Vec<usize> = d.split.train.iter().chain(&d.split.val).chain(&d.split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_dataset(samples.clone(), 4).unwrap().split, d.split);
        let d40 = split_dataset((0..40).map(|s| random_pair(s, (2, 2))).collect(), 1).unwrap();
        assert_eq!((d40.split.train.len(), d40.split.val.len(), d40.split.test.len()), (28, 8, 4));
        assert!(split_dataset(samples[..9].to_vec(), 4).is_err());
    }

    #[test]
    fn paired_sample_requires_more_target_angles() {
        let a = image(Array2::zeros((2, 2)), 1);
        let b = image(Array2::zeros((2, 2)), 1);
        assert!(PairedSample::new(a, b).is_err());
    }
}
