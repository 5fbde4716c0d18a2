//! Tensor primitives with hand-written backward passes.
//!
//! Activations are `[batch, channels, height, width]` arrays in standard
//! layout. Convolutions go through im2col and a single GEMM per call.

use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView4, Axis};

/// Output size of a strided convolution along one axis.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Unfolds `x` into `[c·k·k, n·ho·wo]` patch columns.
pub fn im2col(x: ArrayView4<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);
    let width = n * ho * wo;
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let mut cols = vec![0.0; c * k * k * width];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * width..(row + 1) * width];
                for b in 0..n {
                    let src = &xs[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * w..(ih as usize + 1) * w];
                        let base = (b * ho + oh) * wo;
                        for ow in 0..wo {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw >= 0 && iw < w as isize {
                                dst[base + ow] = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * k * k, width), cols).expect("im2col shape")
}

/// Folds patch columns back into a `[n, c, h, w]` tensor, summing overlaps.
pub fn col2im(
    cols: &Array2<f64>,
    shape: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (n, c, h, w) = shape;
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(w, k, stride, pad);
    let width = n * ho * wo;
    assert_eq!(cols.dim(), (c * k * k, width), "col2im shape");
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cs[row * width..(row + 1) * width];
                for b in 0..n {
                    let dst = &mut out[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[ih as usize * w..(ih as usize + 1) * w];
                        let base = (b * ho + oh) * wo;
                        for ow in 0..wo {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw >= 0 && iw < w as isize {
                                dst_row[iw as usize] += src[base + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec(shape, out).expect("col2im shape")
}

/// `[n, c, h, w]` → `[c, n·h·w]`.
fn to_channel_major(x: ArrayView4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let p = x.permuted_axes([1, 0, 2, 3]);
    let data: Vec<f64> = p.iter().copied().collect();
    Array2::from_shape_vec((c, n * h * w), data).expect("channel-major shape")
}

/// `[c, n·h·w]` → `[n, c, h, w]`, adding `bias` per channel.
fn from_channel_major(m: Array2<f64>, n: usize, h: usize, w: usize, bias: ArrayView1<f64>) -> Array4<f64> {
    let c = m.nrows();
    let m = m
        .into_shape_with_order((c, n, h, w))
        .expect("channel-major shape")
        .permuted_axes([1, 0, 2, 3]);
    let mut out = m.as_standard_layout().into_owned();
    for mut img in out.outer_iter_mut() {
        for (mut ch, &b) in img.outer_iter_mut().zip(bias) {
            if b != 0.0 {
                ch += b;
            }
        }
    }
    out
}

fn weight_matrix(w: &Array4<f64>) -> ndarray::ArrayView2<'_, f64> {
    let (a, b, k1, k2) = w.dim();
    w.view()
        .into_shape_with_order((a, b * k1 * k2))
        .expect("weights in standard layout")
}

/// Per-channel sum over batch and space.
pub fn channel_sum(x: &Array4<f64>) -> Array1<f64> {
    x.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0))
}

/// Gradients of a convolution-like layer.
pub struct ConvGrads {
    pub dx: Array4<f64>,
    pub dw: Array4<f64>,
    pub db: Array1<f64>,
}

/// Cross-correlation with weights `[c_out, c_in, k, k]`.
pub fn conv2d(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>, stride: usize, pad: usize) -> Array4<f64> {
    let (n, _, h, wd) = x.dim();
    let k = w.dim().2;
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(wd, k, stride, pad);
    let cols = im2col(x.view(), k, stride, pad);
    from_channel_major(weight_matrix(w).dot(&cols), n, ho, wo, b.view())
}

/// Backward pass of [`conv2d`].
pub fn conv2d_backward(x: &Array4<f64>, w: &Array4<f64>, stride: usize, pad: usize, dy: &Array4<f64>) -> ConvGrads {
    let k = w.dim().2;
    let cols = im2col(x.view(), k, stride, pad);
    let dy_m = to_channel_major(dy.view());
    let dw = dy_m
        .dot(&cols.t())
        .into_shape_with_order(w.raw_dim())
        .expect("weight shape");
    let dcols = weight_matrix(w).t().dot(&dy_m);
    ConvGrads {
        dx: col2im(&dcols, x.dim(), k, stride, pad),
        dw,
        db: channel_sum(dy),
    }
}

/// Output spatial size of a transposed convolution.
pub fn conv_transpose_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len - 1) * stride + k - 2 * pad
}

/// Transposed convolution with weights `[c_in, c_out, k, k]`.
pub fn conv_transpose2d(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>, stride: usize, pad: usize) -> Array4<f64> {
    let (n, _, h, wd) = x.dim();
    let (_, c_out, k, _) = w.dim();
    let ho = conv_transpose_out_len(h, k, stride, pad);
    let wo = conv_transpose_out_len(wd, k, stride, pad);
    let cols = weight_matrix(w).t().dot(&to_channel_major(x.view()));
    let mut out = col2im(&cols, (n, c_out, ho, wo), k, stride, pad);
    for mut img in out.outer_iter_mut() {
        for (mut ch, &bias) in img.outer_iter_mut().zip(b) {
            if bias != 0.0 {
                ch += bias;
            }
        }
    }
    out
}

/// Backward pass of [`conv_transpose2d`].
pub fn conv_transpose2d_backward(
    x: &Array4<f64>,
    w: &Array4<f64>,
    stride: usize,
    pad: usize,
    dy: &Array4<f64>,
) -> ConvGrads {
    let (n, _, h, wd) = x.dim();
    let k = w.dim().2;
    let dcols = im2col(dy.view(), k, stride, pad);
    let x_m = to_channel_major(x.view());
    let dw = x_m
        .dot(&dcols.t())
        .into_shape_with_order(w.raw_dim())
        .expect("weight shape");
    let dx_m = weight_matrix(w).dot(&dcols);
    let zero = Array1::zeros(dx_m.nrows());
    ConvGrads {
        dx: from_channel_major(dx_m, n, h, wd, zero.view()),
        dw,
        db: channel_sum(dy),
    }
}

/// Normalization statistics used by one batch-norm call.
pub struct NormCache {
    pub xhat: Array4<f64>,
    pub inv_std: Array1<f64>,
    /// Batch statistics were used (as opposed to running statistics).
    pub batch_stats: bool,
    pub mean: Array1<f64>,
    /// Unbiased batch variance, for the running-statistics update.
    pub var_unbiased: Array1<f64>,
}

/// Batch normalization over `(batch, height, width)` per channel.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    x: &Array4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    running_mean: &Array1<f64>,
    running_var: &Array1<f64>,
    use_batch_stats: bool,
    eps: f64,
) -> (Array4<f64>, NormCache) {
    let (n, c, h, w) = x.dim();
    let count = (n * h * w) as f64;
    let (mean, var, var_unbiased) = if use_batch_stats {
        let mean = channel_sum(x) / count;
        let mut var = Array1::<f64>::zeros(c);
        for img in x.outer_iter() {
            for (ci, ch) in img.outer_iter().enumerate() {
                let m = mean[ci];
                var[ci] += ch.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
        }
        let unbiased = if count > 1.0 { &var / (count - 1.0) } else { var.clone() };
        (mean, var / count, unbiased)
    } else {
        (running_mean.clone(), running_var.clone(), running_var.clone())
    };
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let mut xhat = x.clone();
    for mut img in xhat.outer_iter_mut() {
        for (ci, mut ch) in img.outer_iter_mut().enumerate() {
            let (m, s) = (mean[ci], inv_std[ci]);
            ch.mapv_inplace(|v| (v - m) * s);
        }
    }
    let mut y = xhat.clone();
    for mut img in y.outer_iter_mut() {
        for (ci, mut ch) in img.outer_iter_mut().enumerate() {
            let (g, b) = (gamma[ci], beta[ci]);
            ch.mapv_inplace(|v| g * v + b);
        }
    }
    (
        y,
        NormCache {
            xhat,
            inv_std,
            batch_stats: use_batch_stats,
            mean,
            var_unbiased,
        },
    )
}

/// Backward pass of [`batch_norm`]: `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward(
    cache: &NormCache,
    gamma: &Array1<f64>,
    dy: &Array4<f64>,
) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
    let (n, c, h, w) = dy.dim();
    let count = (n * h * w) as f64;
    let dbeta = channel_sum(dy);
    let dgamma = channel_sum(&(dy * &cache.xhat));
    let mut dx = dy.clone();
    for ci in 0..c {
        let scale = gamma[ci] * cache.inv_std[ci];
        let mut ch = dx.slice_mut(s![.., ci, .., ..]);
        if cache.batch_stats {
            let xh = cache.xhat.slice(s![.., ci, .., ..]);
            let (sb, sg) = (dbeta[ci], dgamma[ci]);
            ndarray::Zip::from(&mut ch)
                .and(&xh)
                .for_each(|d, &xv| *d = scale * (*d - (sb + xv * sg) / count));
        } else {
            ch.mapv_inplace(|d| d * scale);
        }
    }
    (dx, dgamma, dbeta)
}

/// In-place ReLU.
pub fn relu_inplace(x: &mut Array4<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Zeroes `dy` wherever the ReLU output was not positive.
pub fn relu_backward(out: &Array4<f64>, dy: &mut Array4<f64>) {
    ndarray::Zip::from(dy).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
}
