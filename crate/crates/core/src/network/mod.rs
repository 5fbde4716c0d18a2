//! Time-conditioned encoder/decoder CNN that predicts the flow velocity.
//!
//! Every encoder stage runs a 3×3 convolution, batch normalization and ReLU,
//! adds a per-channel projection of the sinusoidal time embedding, keeps the
//! result as a skip tensor and halves the resolution with a stride-2 4×4
//! convolution (again followed by normalization and ReLU). The decoder mirrors
//! this with stride-2 4×4 transposed convolutions and concatenates the skip of
//! the matching encoder stage. A final 3×3 convolution maps back to one
//! channel.
//!
//! Gradients are computed by hand and checked against finite differences in
//! the tests.

pub mod layers;

use ndarray::{concatenate, s, Array1, Array2, Array4, ArrayD, ArrayView2, Axis, Ix1, Ix4};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::{
    batch_norm, batch_norm_backward, conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward,
    relu_backward, relu_inplace, NormCache,
};

/// Scale applied to `t` before the sinusoidal transform.
pub const TIME_BASE_FREQUENCY: f64 = 1000.0;
/// Batch-norm running-statistics momentum.
pub const NORM_MOMENTUM: f64 = 0.1;
/// Batch-norm variance epsilon.
pub const NORM_EPS: f64 = 1e-5;
/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominator epsilon.
pub const ADAM_EPS: f64 = 1e-8;

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Number of down/up stages.
    pub depth: usize,
    /// Channels of the first stage; doubled per stage.
    pub base_channels: usize,
    /// Width of the sinusoidal time embedding.
    pub time_dim: usize,
    /// Input rows (axial samples).
    pub nz: usize,
    /// Input columns (lateral samples).
    pub nx: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            time_dim: 64,
            nz: 256,
            nx: 64,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("network depth must be at least 1"));
        }
        if self.depth > 10 {
            return Err(Error::invalid("network depth above 10 is not supported"));
        }
        if self.base_channels == 0 {
            return Err(Error::invalid("base_channels must be positive"));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::invalid("time_dim must be positive and even"));
        }
        if self.nz == 0 || self.nx == 0 {
            return Err(Error::invalid("input shape must be non-empty"));
        }
        Ok(())
    }

    /// Channels of encoder/decoder stage `i`.
    pub fn channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Input shape after zero padding to a multiple of `2^depth`.
    pub fn padded_shape(&self) -> (usize, usize) {
        let m = 1 << self.depth;
        (self.nz.div_ceil(m) * m, self.nx.div_ceil(m) * m)
    }
}

/// Optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub lr0: f64,
    /// Epochs between learning-rate decays.
    pub step_size: usize,
    pub gamma: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr0: 0.004,
            step_size: 60,
            gamma: 0.5,
            weight_decay: 0.0,
            epochs: 60,
            batch_size: 4,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid("lr0 must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1]"));
        }
        if self.step_size == 0 {
            return Err(Error::invalid("scheduler step_size must be positive"));
        }
        if self.weight_decay != 0.0 {
            return Err(Error::invalid("weight decay is not supported (must be 0)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Step learning-rate schedule: `lr0 · gamma^floor(epoch / step_size)`.
pub fn lr_schedule(epoch: usize, hyper: &Hyperparams) -> f64 {
    hyper.lr0 * hyper.gamma.powi((epoch / hyper.step_size) as i32)
}

/// Sinusoidal embedding of `t`: entries `2i` and `2i+1` are the sine and
/// cosine of `1000·t·10000^(−2i/dim)`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!("time embedding width {dim} must be positive and even")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let phase = TIME_BASE_FREQUENCY * t * omega;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}

/// Whether normalization uses batch statistics (training) or running ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub data: ArrayD<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct StageIdx {
    conv: ConvIdx,
    norm: NormIdx,
    time: ConvIdx,
    resample: ConvIdx,
    resample_norm: NormIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: Vec<StageIdx>,
    dec: Vec<StageIdx>,
    out: ConvIdx,
}

/// Parameter shapes in checkpoint order, with initialization fan-in (0 for
/// tensors that start at a constant).
fn parameter_specs(config: &NetConfig) -> (Vec<(String, Vec<usize>, usize, f64)>, Vec<(String, usize, f64)>, Layout) {
    let mut params: Vec<(String, Vec<usize>, usize, f64)> = Vec::new();
    let mut buffers: Vec<(String, usize, f64)> = Vec::new();
    let td = config.time_dim;

    let conv = |params: &mut Vec<(String, Vec<usize>, usize, f64)>, name: &str, shape: [usize; 4], fan_in: usize| {
        let w = params.len();
        params.push((format!("{name}.weight"), shape.to_vec(), fan_in, 0.0));
        let bias_len = if name.ends_with(".up") { shape[1] } else { shape[0] };
        params.push((format!("{name}.bias"), vec![bias_len], 0, 0.0));
        ConvIdx { w, b: w + 1 }
    };
    let norm = |params: &mut Vec<(String, Vec<usize>, usize, f64)>,
                buffers: &mut Vec<(String, usize, f64)>,
                name: &str,
                c: usize| {
        let gamma = params.len();
        params.push((format!("{name}.weight"), vec![c], 0, 1.0));
        params.push((format!("{name}.bias"), vec![c], 0, 0.0));
        let mean = buffers.len();
        buffers.push((format!("{name}.running_mean"), c, 0.0));
        buffers.push((format!("{name}.running_var"), c, 1.0));
        NormIdx {
            gamma,
            beta: gamma + 1,
            mean,
            var: mean + 1,
        }
    };
    let linear = |params: &mut Vec<(String, Vec<usize>, usize, f64)>, name: &str, c: usize| {
        let w = params.len();
        params.push((format!("{name}.weight"), vec![c, td], td, 0.0));
        params.push((format!("{name}.bias"), vec![c], 0, 0.0));
        ConvIdx { w, b: w + 1 }
    };

    let mut enc = Vec::new();
    let mut c_in = 1;
    for i in 0..config.depth {
        let c = config.channels(i);
        let p = format!("enc{i}");
        let conv_i = conv(&mut params, &format!("{p}.conv"), [c, c_in, 3, 3], c_in * 9);
        let norm_i = norm(&mut params, &mut buffers, &format!("{p}.norm"), c);
        let time_i = linear(&mut params, &format!("{p}.time"), c);
        let down = conv(&mut params, &format!("{p}.down"), [c, c, 4, 4], c * 16);
        let down_norm = norm(&mut params, &mut buffers, &format!("{p}.down_norm"), c);
        enc.push(StageIdx {
            conv: conv_i,
            norm: norm_i,
            time: time_i,
            resample: down,
            resample_norm: down_norm,
        });
        c_in = c;
    }
    let mut dec = Vec::new();
    for i in (0..config.depth).rev() {
        let c = config.channels(i);
        let p = format!("dec{i}");
        let conv_i = conv(&mut params, &format!("{p}.conv"), [c, c_in, 3, 3], c_in * 9);
        let norm_i = norm(&mut params, &mut buffers, &format!("{p}.norm"), c);
        let time_i = linear(&mut params, &format!("{p}.time"), c);
        let up = conv(&mut params, &format!("{p}.up"), [c, c, 4, 4], c * 16);
        let up_norm = norm(&mut params, &mut buffers, &format!("{p}.up_norm"), c);
        dec.push(StageIdx {
            conv: conv_i,
            norm: norm_i,
            time: time_i,
            resample: up,
            resample_norm: up_norm,
        });
        c_in = 2 * c;
    }
    let out = conv(&mut params, "out.conv", [1, c_in, 3, 3], c_in * 9);
    (params, buffers, Layout { enc, dec, out })
}

/// Number of trainable scalars for `config`.
pub fn parameter_count(config: &NetConfig) -> usize {
    parameter_specs(config)
        .0
        .iter()
        .map(|(_, shape, _, _)| shape.iter().product::<usize>())
        .sum()
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
    pub step: u64,
}

/// Per-stage tensors kept for the backward pass.
struct StageTape {
    input: Array4<f64>,
    norm: NormCache,
    act: Array4<f64>,
    resample_in: Array4<f64>,
    resample_norm: NormCache,
    out: Array4<f64>,
}

struct Tape {
    emb: Array2<f64>,
    enc: Vec<StageTape>,
    dec: Vec<StageTape>,
    head_in: Array4<f64>,
}

/// Loss, parameter gradients and the batch statistics seen by each
/// normalization layer.
pub struct Gradients {
    pub loss: f64,
    pub grads: Vec<ArrayD<f64>>,
    norm_stats: Vec<(NormIdx, Array1<f64>, Array1<f64>)>,
}

/// The velocity network with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub config: NetConfig,
    pub params: Vec<Tensor>,
    /// Normalization running statistics.
    pub buffers: Vec<Tensor>,
    pub adam: AdamState,
    /// Global amplitude scale; inputs are divided by it and predictions
    /// multiplied back.
    pub data_scale: f64,
    /// Additionally divide each input by its own standard deviation.
    pub standardize: bool,
    layout: Layout,
}

impl PartialEq for Layout {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

fn as4(a: &ArrayD<f64>) -> Array4<f64> {
    a.view().into_dimensionality::<Ix4>().expect("rank-4 parameter").to_owned()
}

fn as1(a: &ArrayD<f64>) -> Array1<f64> {
    a.view().into_dimensionality::<Ix1>().expect("rank-1 parameter").to_owned()
}

fn as2(a: &ArrayD<f64>) -> Array2<f64> {
    a.view()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("rank-2 parameter")
        .to_owned()
}

/// Initializes a model: kernels uniform in `±1/√fan_in`, biases zero,
/// normalization scale one and shift zero.
pub fn init_parameters(config: &NetConfig, seed: u64) -> Result<FlowModel> {
    config.validate()?;
    let (specs, buffer_specs, layout) = parameter_specs(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<Tensor> = specs
        .into_iter()
        .map(|(name, shape, fan_in, fill)| {
            let data = if fan_in > 0 {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                ArrayD::from_shape_simple_fn(shape, || dist.sample(&mut rng))
            } else {
                ArrayD::from_elem(shape, fill)
            };
            Tensor { name, data }
        })
        .collect();
    let buffers = buffer_specs
        .into_iter()
        .map(|(name, len, fill)| Tensor {
            name,
            data: ArrayD::from_elem(vec![len], fill),
        })
        .collect();
    let adam = AdamState {
        m: params.iter().map(|p| ArrayD::zeros(p.data.raw_dim())).collect(),
        v: params.iter().map(|p| ArrayD::zeros(p.data.raw_dim())).collect(),
        step: 0,
    };
    Ok(FlowModel {
        config: *config,
        params,
        buffers,
        adam,
        data_scale: 1.0,
        standardize: false,
        layout,
    })
}

impl FlowModel {
    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_tensors(
        config: &NetConfig,
        params: Vec<Tensor>,
        buffers: Vec<Tensor>,
        data_scale: f64,
        standardize: bool,
    ) -> Result<Self> {
        let mut model = init_parameters(config, 0)?;
        check_tensors("parameter", &model.params, &params)?;
        check_tensors("buffer", &model.buffers, &buffers)?;
        if params.iter().chain(&buffers).any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("stored model tensors".into()));
        }
        if !(data_scale > 0.0 && data_scale.is_finite()) {
            return Err(Error::invalid("data_scale must be positive"));
        }
        model.params = params;
        model.buffers = buffers;
        model.data_scale = data_scale;
        model.standardize = standardize;
        Ok(model)
    }

    /// Total number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Whether every parameter and buffer is finite.
    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(&self.buffers)
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    fn p4(&self, i: usize) -> Array4<f64> {
        as4(&self.params[i].data)
    }

    fn p1(&self, i: usize) -> Array1<f64> {
        as1(&self.params[i].data)
    }

    fn norm_forward(&self, x: &Array4<f64>, idx: NormIdx, mode: Mode) -> (Array4<f64>, NormCache) {
        let use_batch = mode == Mode::Train && x.dim().0 > 1;
        batch_norm(
            x,
            &self.p1(idx.gamma),
            &self.p1(idx.beta),
            &as1(&self.buffers[idx.mean].data),
            &as1(&self.buffers[idx.var].data),
            use_batch,
            NORM_EPS,
        )
    }

    fn add_time(&self, x: &mut Array4<f64>, emb: &Array2<f64>, idx: ConvIdx) {
        let proj = emb.dot(&as2(&self.params[idx.w].data).t()) + &self.p1(idx.b);
        for (mut img, row) in x.outer_iter_mut().zip(proj.outer_iter()) {
            for (mut ch, &v) in img.outer_iter_mut().zip(row) {
                ch += v;
            }
        }
    }

    fn embed(&self, ts: &[f64]) -> Result<Array2<f64>> {
        let dim = self.config.time_dim;
        let mut emb = Array2::zeros((ts.len(), dim));
        for (mut row, &t) in emb.outer_iter_mut().zip(ts) {
            row.assign(&Array1::from(time_embedding(t, dim)?));
        }
        Ok(emb)
    }

    /// Runs the network on a padded `[n, 1, H, W]` batch.
    fn forward_tape(&self, x: &Array4<f64>, ts: &[f64], mode: Mode) -> Result<(Array4<f64>, Tape)> {
        let emb = self.embed(ts)?;
        let mut h = x.clone();
        let mut enc = Vec::with_capacity(self.config.depth);
        for st in &self.layout.enc {
            let input = h;
            let pre = conv2d(&input, &self.p4(st.conv.w), &self.p1(st.conv.b), 1, 1);
            let (mut act, norm) = self.norm_forward(&pre, st.norm, mode);
            relu_inplace(&mut act);
            let mut resample_in = act.clone();
            self.add_time(&mut resample_in, &emb, st.time);
            let pre = conv2d(&resample_in, &self.p4(st.resample.w), &self.p1(st.resample.b), 2, 1);
            let (mut out, resample_norm) = self.norm_forward(&pre, st.resample_norm, mode);
            relu_inplace(&mut out);
            h = out.clone();
            enc.push(StageTape {
                input,
                norm,
                act,
                resample_in,
                resample_norm,
                out,
            });
        }
        let mut dec = Vec::with_capacity(self.config.depth);
        for (st, skip) in self.layout.dec.iter().zip(enc.iter().rev()) {
            let input = h;
            let pre = conv2d(&input, &self.p4(st.conv.w), &self.p1(st.conv.b), 1, 1);
            let (mut act, norm) = self.norm_forward(&pre, st.norm, mode);
            relu_inplace(&mut act);
            let mut resample_in = act.clone();
            self.add_time(&mut resample_in, &emb, st.time);
            let pre = conv_transpose2d(&resample_in, &self.p4(st.resample.w), &self.p1(st.resample.b), 2, 1);
            let (mut out, resample_norm) = self.norm_forward(&pre, st.resample_norm, mode);
            relu_inplace(&mut out);
            h = concatenate(Axis(1), &[out.view(), skip.resample_in.view()]).expect("matching skip shape");
            dec.push(StageTape {
                input,
                norm,
                act,
                resample_in,
                resample_norm,
                out,
            });
        }
        let out = self.layout.out;
        let y = conv2d(&h, &self.p4(out.w), &self.p1(out.b), 1, 1);
        Ok((
            y,
            Tape {
                emb,
                enc,
                dec,
                head_in: h,
            },
        ))
    }

    fn backward(&self, tape: &Tape, dy: &Array4<f64>) -> Vec<ArrayD<f64>> {
        let mut grads: Vec<ArrayD<f64>> = self.params.iter().map(|p| ArrayD::zeros(p.data.raw_dim())).collect();
        let put4 = |grads: &mut Vec<ArrayD<f64>>, idx: ConvIdx, g: layers::ConvGrads| {
            grads[idx.w] = g.dw.into_dyn();
            grads[idx.b] = g.db.into_dyn();
            g.dx
        };
        let out = self.layout.out;
        let g = conv2d_backward(&tape.head_in, &self.p4(out.w), 1, 1, dy);
        let mut dh = put4(&mut grads, out, g);

        let depth = self.config.depth;
        let mut dskips: Vec<Array4<f64>> = vec![Array4::zeros((0, 0, 0, 0)); depth];
        for (k, (st, t)) in self.layout.dec.iter().zip(&tape.dec).enumerate().rev() {
            // decoder entry k belongs to level depth-1-k
            let level = depth - 1 - k;
            let c = self.config.channels(level);
            let mut du = dh.slice(s![.., ..c, .., ..]).to_owned();
            dskips[level] = dh.slice(s![.., c.., .., ..]).to_owned();
            relu_backward(&t.out, &mut du);
            let dpre = self.norm_backward(&mut grads, st.resample_norm, &t.resample_norm, &du);
            let g = conv_transpose2d_backward(&t.resample_in, &self.p4(st.resample.w), 2, 1, &dpre);
            let ds = put4(&mut grads, st.resample, g);
            dh = self.stage_tail_backward(&mut grads, st, t, &tape.emb, ds);
        }
        for (level, (st, t)) in self.layout.enc.iter().zip(&tape.enc).enumerate().rev() {
            let mut dout = dh;
            relu_backward(&t.out, &mut dout);
            let dpre = self.norm_backward(&mut grads, st.resample_norm, &t.resample_norm, &dout);
            let g = conv2d_backward(&t.resample_in, &self.p4(st.resample.w), 2, 1, &dpre);
            let ds = put4(&mut grads, st.resample, g) + &dskips[level];
            dh = self.stage_tail_backward(&mut grads, st, t, &tape.emb, ds);
        }
        grads
    }

    /// Backward through time addition, ReLU, normalization and the 3×3
    /// convolution of one stage; returns the gradient of the stage input.
    fn stage_tail_backward(
        &self,
        grads: &mut [ArrayD<f64>],
        st: &StageIdx,
        t: &StageTape,
        emb: &Array2<f64>,
        ds: Array4<f64>,
    ) -> Array4<f64> {
        let dproj = ds.sum_axis(Axis(3)).sum_axis(Axis(2));
        grads[st.time.w] = dproj.t().dot(emb).into_dyn();
        grads[st.time.b] = dproj.sum_axis(Axis(0)).into_dyn();
        let mut da = ds;
        relu_backward(&t.act, &mut da);
        let dpre = self.norm_backward(grads, st.norm, &t.norm, &da);
        let g = conv2d_backward(&t.input, &self.p4(st.conv.w), 1, 1, &dpre);
        grads[st.conv.w] = g.dw.into_dyn();
        grads[st.conv.b] = g.db.into_dyn();
        g.dx
    }

    fn norm_backward(&self, grads: &mut [ArrayD<f64>], idx: NormIdx, cache: &NormCache, dy: &Array4<f64>) -> Array4<f64> {
        let (dx, dg, db) = batch_norm_backward(cache, &self.p1(idx.gamma), dy);
        grads[idx.gamma] = dg.into_dyn();
        grads[idx.beta] = db.into_dyn();
        dx
    }

    fn check_batch(&self, inputs: &[ArrayView2<f64>], ts: &[f64]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if inputs.len() != ts.len() {
            return Err(Error::invalid("one time value per input is required"));
        }
        let expected = (self.config.nz, self.config.nx);
        for x in inputs {
            if x.dim() != expected {
                return Err(Error::ShapeMismatch {
                    expected: vec![expected.0, expected.1],
                    actual: x.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Per-sample amplitude scale applied before the network: the image's
    /// own standard deviation when standardizing, `data_scale` otherwise.
    fn input_scales(&self, inputs: &[ArrayView2<f64>]) -> Vec<f64> {
        inputs
            .iter()
            .map(|x| {
                if !self.standardize {
                    return self.data_scale;
                }
                let m = x.mean().unwrap_or(0.0);
                let sd = x.mapv(|v| (v - m) * (v - m)).mean().unwrap_or(0.0).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    self.data_scale
                }
            })
            .collect()
    }

    fn pack(&self, images: &[ArrayView2<f64>], scales: &[f64]) -> Array4<f64> {
        let (hp, wp) = self.config.padded_shape();
        let (nz, nx) = (self.config.nz, self.config.nx);
        let mut x = Array4::zeros((images.len(), 1, hp, wp));
        for ((mut dst, img), &s) in x.outer_iter_mut().zip(images).zip(scales) {
            dst.slice_mut(s![0, ..nz, ..nx]).assign(&img.mapv(|v| v / s));
        }
        x
    }

    /// Predicts the velocity for each `(x_t, t)` with running normalization
    /// statistics.
    pub fn forward(&self, inputs: &[ArrayView2<f64>], ts: &[f64]) -> Result<Vec<Array2<f64>>> {
        self.forward_mode(inputs, ts, Mode::Eval)
    }

    /// [`FlowModel::forward`] with an explicit normalization mode.
    pub fn forward_mode(&self, inputs: &[ArrayView2<f64>], ts: &[f64], mode: Mode) -> Result<Vec<Array2<f64>>> {
        self.check_batch(inputs, ts)?;
        let scales = self.input_scales(inputs);
        let (y, _) = self.forward_tape(&self.pack(inputs, &scales), ts, mode)?;
        let (nz, nx) = (self.config.nz, self.config.nx);
        let out: Vec<Array2<f64>> = y
            .outer_iter()
            .zip(&scales)
            .map(|(img, &s)| img.slice(s![0, ..nz, ..nx]).mapv(|v| v * s))
            .collect();
        if out.iter().any(|o| o.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(out)
    }

    /// Mean absolute error between predictions and targets, in scaled units.
    pub fn loss(&self, inputs: &[ArrayView2<f64>], ts: &[f64], targets: &[ArrayView2<f64>], mode: Mode) -> Result<f64> {
        Ok(self.loss_and_residual(inputs, ts, targets, mode)?.0)
    }

    fn loss_and_residual(
        &self,
        inputs: &[ArrayView2<f64>],
        ts: &[f64],
        targets: &[ArrayView2<f64>],
        mode: Mode,
    ) -> Result<(f64, Array4<f64>, Tape)> {
        self.check_batch(inputs, ts)?;
        self.check_batch(targets, ts)?;
        let scales = self.input_scales(inputs);
        let (y, tape) = self.forward_tape(&self.pack(inputs, &scales), ts, mode)?;
        let target = self.pack(targets, &scales);
        let (nz, nx) = (self.config.nz, self.config.nx);
        let count = (inputs.len() * nz * nx) as f64;
        let mut residual = &y - &target;
        residual.slice_mut(s![.., .., nz.., ..]).fill(0.0);
        residual.slice_mut(s![.., .., .., nx..]).fill(0.0);
        let loss = residual.iter().map(|v| v.abs()).sum::<f64>() / count;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((loss, residual, tape))
    }

    /// L1 loss and exact gradients for every parameter. The subgradient of
    /// `|r|` at `r = 0` is taken as zero.
    pub fn gradients(
        &self,
        inputs: &[ArrayView2<f64>],
        ts: &[f64],
        targets: &[ArrayView2<f64>],
        mode: Mode,
    ) -> Result<Gradients> {
        let (loss, residual, tape) = self.loss_and_residual(inputs, ts, targets, mode)?;
        let count = (inputs.len() * self.config.nz * self.config.nx) as f64;
        let dy = residual.mapv(|r| {
            if r > 0.0 {
                1.0 / count
            } else if r < 0.0 {
                -1.0 / count
            } else {
                0.0
            }
        });
        let grads = self.backward(&tape, &dy);
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradients".into()));
        }
        let mut norm_stats = Vec::new();
        for (st, t) in self.layout.enc.iter().zip(&tape.enc).chain(self.layout.dec.iter().zip(&tape.dec)) {
            for (idx, cache) in [(st.norm, &t.norm), (st.resample_norm, &t.resample_norm)] {
                if cache.batch_stats {
                    norm_stats.push((idx, cache.mean.clone(), cache.var_unbiased.clone()));
                }
            }
        }
        Ok(Gradients { loss, grads, norm_stats })
    }

    /// Folds the batch statistics of a training step into the running
    /// statistics.
    pub fn update_running_stats(&mut self, g: &Gradients) {
        for (idx, mean, var) in &g.norm_stats {
            let m = &mut self.buffers[idx.mean].data;
            *m = &*m * (1.0 - NORM_MOMENTUM) + &(mean * NORM_MOMENTUM).into_dyn();
            let v = &mut self.buffers[idx.var].data;
            *v = &*v * (1.0 - NORM_MOMENTUM) + &(var * NORM_MOMENTUM).into_dyn();
        }
    }

    /// One Adam update with bias correction and no weight decay.
    pub fn adam_step(&mut self, grads: &[ArrayD<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} gradient tensors, got {}",
                self.params.len(),
                grads.len()
            )));
        }
        for (p, g) in self.params.iter().zip(grads) {
            if p.data.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    expected: p.data.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (((p, g), m), v) in self
            .params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.adam.m)
            .zip(&mut self.adam.v)
        {
            ndarray::Zip::from(&mut p.data)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
                });
        }
        Ok(())
    }
}

fn check_tensors(kind: &str, expected: &[Tensor], actual: &[Tensor]) -> Result<()> {
    if expected.len() != actual.len() {
        return Err(Error::invalid(format!(
            "expected {} {kind} tensors, got {}",
            expected.len(),
            actual.len()
        )));
    }
    for (e, a) in expected.iter().zip(actual) {
        if e.name != a.name || e.data.shape() != a.data.shape() {
            return Err(Error::invalid(format!(
                "{kind} {} {:?} does not match expected {} {:?}",
                a.name,
                a.data.shape(),
                e.name,
                e.data.shape()
            )));
        }
    }
    Ok(())
}
