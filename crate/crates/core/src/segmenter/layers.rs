//! Forward and backward kernels for the segmentation network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Row/column span over which a tap at offset `d` stays inside `[0, len)`.
#[inline]
fn valid_span(d: isize, len: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// 3x3 same-padded convolution. `weight` is `[cout, cin, 3, 3]`.
pub(crate) fn conv3x3_forward(input: &Tensor, weight: &[f64], bias: Option<&[f64]>, cout: usize) -> Tensor {
    let (h, w, cin) = (input.h, input.w, input.c);
    let mut out = Tensor::zeros(input.n, cout, h, w);
    for n in 0..input.n {
        for co in 0..cout {
            let b = bias.map_or(0.0, |b| b[co]);
            let out_plane = out.plane_mut(n, co);
            if b != 0.0 {
                out_plane.iter_mut().for_each(|v| *v = b);
            }
            for ci in 0..cin {
                let in_plane = input.plane(n, ci);
                let k = &weight[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = valid_span(dy, h);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, x1) = valid_span(dx, w);
                        let wv = k[ky * 3 + kx];
                        for y in y0..y1 {
                            let src_row = ((y as isize + dy) as usize) * w;
                            let src = &in_plane[(src_row as isize + x0 as isize + dx) as usize..][..x1 - x0];
                            let dst = &mut out_plane[y * w + x0..y * w + x1];
                            for (o, i) in dst.iter_mut().zip(src) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns the input gradient and accumulates weight/bias gradients.
pub(crate) fn conv3x3_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: Option<&mut [f64]>,
) -> Tensor {
    let (h, w, cin, cout) = (input.h, input.w, input.c, grad_out.c);
    let mut grad_in = input.zeros_like();
    if let Some(gb) = grad_bias {
        for n in 0..input.n {
            for (co, g) in gb.iter_mut().enumerate() {
                *g += grad_out.plane(n, co).iter().sum::<f64>();
            }
        }
    }
    for n in 0..input.n {
        for co in 0..cout {
            let g_plane = grad_out.plane(n, co);
            for ci in 0..cin {
                let in_plane = input.plane(n, ci);
                let base = (co * cin + ci) * 9;
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = valid_span(dy, h);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, x1) = valid_span(dx, w);
                        let wv = weight[base + ky * 3 + kx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let src_start = (((y as isize + dy) as usize) * w) as isize + x0 as isize + dx;
                            let src = &in_plane[src_start as usize..][..x1 - x0];
                            let g = &g_plane[y * w + x0..y * w + x1];
                            acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        grad_weight[base + ky * 3 + kx] += acc;
                        let gi_plane = grad_in.plane_mut(n, ci);
                        for y in y0..y1 {
                            let src_start = ((((y as isize + dy) as usize) * w) as isize + x0 as isize + dx) as usize;
                            let dst = &mut gi_plane[src_start..src_start + (x1 - x0)];
                            let g = &g_plane[y * w + x0..y * w + x1];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Saved state of a training-mode batch-norm pass.
pub(crate) struct BnCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

pub(crate) struct BnParams<'a> {
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
}

/// Batch statistics per channel; also updates the running estimates.
pub(crate) fn batchnorm_forward_train(
    input: &Tensor,
    p: BnParams<'_>,
    running_mean: &mut [f64],
    running_var: &mut [f64],
) -> (Tensor, BnCache) {
    let m = (input.n * input.plane_len()) as f64;
    let mut out = input.zeros_like();
    let mut x_hat = input.zeros_like();
    let mut inv_std = vec![0.0; input.c];
    for c in 0..input.c {
        let mean = (0..input.n).map(|n| input.plane(n, c).iter().sum::<f64>()).sum::<f64>() / m;
        let var = (0..input.n)
            .map(|n| input.plane(n, c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum::<f64>()
            / m;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = istd;
        for n in 0..input.n {
            let src = input.plane(n, c);
            let xh = x_hat.plane_mut(n, c);
            for (d, s) in xh.iter_mut().zip(src) {
                *d = (s - mean) * istd;
            }
            let xh = x_hat.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (d, s) in dst.iter_mut().zip(xh) {
                *d = p.gamma[c] * s + p.beta[c];
            }
        }
        let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
        running_mean[c] = (1.0 - BN_MOMENTUM) * running_mean[c] + BN_MOMENTUM * mean;
        running_var[c] = (1.0 - BN_MOMENTUM) * running_var[c] + BN_MOMENTUM * unbiased;
    }
    (out, BnCache { x_hat, inv_std })
}

/// Normalizes with frozen running statistics.
pub(crate) fn batchnorm_forward_eval(input: &Tensor, p: BnParams<'_>, running_mean: &[f64], running_var: &[f64]) -> Tensor {
    let mut out = input.zeros_like();
    for c in 0..input.c {
        let scale = p.gamma[c] / (running_var[c] + BN_EPS).sqrt();
        let shift = p.beta[c] - running_mean[c] * scale;
        for n in 0..input.n {
            let src = input.plane(n, c);
            for (d, s) in out.plane_mut(n, c).iter_mut().zip(src) {
                *d = s * scale + shift;
            }
        }
    }
    out
}

pub(crate) fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BnCache,
    gamma: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Tensor {
    let m = (grad_out.n * grad_out.plane_len()) as f64;
    let mut grad_in = grad_out.zeros_like();
    for c in 0..grad_out.c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..grad_out.n {
            for (g, x) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                sum_g += g;
                sum_gx += g * x;
            }
        }
        grad_gamma[c] += sum_gx;
        grad_beta[c] += sum_g;
        let k = gamma[c] * cache.inv_std[c] / m;
        for n in 0..grad_out.n {
            let g = grad_out.plane(n, c);
            let x = cache.x_hat.plane(n, c);
            for ((d, gv), xv) in grad_in.plane_mut(n, c).iter_mut().zip(g).zip(x) {
                *d = k * (m * gv - sum_g - xv * sum_gx);
            }
        }
    }
    grad_in
}

pub(crate) fn relu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient through ReLU given its output.
pub(crate) fn relu_backward(grad_out: &mut Tensor, output: &Tensor) {
    for (g, o) in grad_out.data.iter_mut().zip(&output.data) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 stride-2 max pooling; indices are flat positions within each input plane.
pub(crate) fn maxpool_forward(input: &Tensor) -> (Tensor, Vec<u32>) {
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.n, input.c, oh, ow);
    let mut indices = vec![0u32; out.data.len()];
    let mut k = 0;
    for n in 0..input.n {
        for c in 0..input.c {
            let plane = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = (2 * y) * input.w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * y + dy) * input.w + 2 * x + dx;
                        if plane[idx] > plane[best] {
                            best = idx;
                        }
                    }
                    dst[y * ow + x] = plane[best];
                    indices[k] = best as u32;
                    k += 1;
                }
            }
        }
    }
    (out, indices)
}

pub(crate) fn maxpool_backward(grad_out: &Tensor, indices: &[u32], in_h: usize, in_w: usize) -> Tensor {
    let mut grad_in = Tensor::zeros(grad_out.n, grad_out.c, in_h, in_w);
    let len = grad_out.plane_len();
    for n in 0..grad_out.n {
        for c in 0..grad_out.c {
            let base = (n * grad_out.c + c) * len;
            let g = grad_out.plane(n, c);
            let dst = grad_in.plane_mut(n, c);
            for (i, gv) in g.iter().enumerate() {
                dst[indices[base + i] as usize] += gv;
            }
        }
    }
    grad_in
}

/// Scatters pooled values back to the positions recorded by the encoder.
pub(crate) fn unpool_forward(input: &Tensor, indices: &[u32], out_h: usize, out_w: usize) -> Tensor {
    let mut out = Tensor::zeros(input.n, input.c, out_h, out_w);
    let len = input.plane_len();
    for n in 0..input.n {
        for c in 0..input.c {
            let base = (n * input.c + c) * len;
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (i, v) in src.iter().enumerate() {
                dst[indices[base + i] as usize] = *v;
            }
        }
    }
    out
}

pub(crate) fn unpool_backward(grad_out: &Tensor, indices: &[u32], in_h: usize, in_w: usize) -> Tensor {
    let mut grad_in = Tensor::zeros(grad_out.n, grad_out.c, in_h, in_w);
    let len = in_h * in_w;
    for n in 0..grad_out.n {
        for c in 0..grad_out.c {
            let base = (n * grad_out.c + c) * len;
            let g = grad_out.plane(n, c);
            for (i, d) in grad_in.plane_mut(n, c).iter_mut().enumerate() {
                *d = g[indices[base + i] as usize];
            }
        }
    }
    grad_in
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`. Returns the
/// multiplicative mask so the backward pass can reuse it.
pub(crate) fn dropout_forward(t: &mut Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; t.data.len()];
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..t.data.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    for (v, m) in t.data.iter_mut().zip(&mask) {
        *v *= m;
    }
    mask
}

/// Softmax over a two-channel logit tensor; returns `[n, 2, h, w]` probabilities.
pub(crate) fn softmax2(logits: &Tensor) -> Tensor {
    debug_assert_eq!(logits.c, 2);
    let mut probs = logits.zeros_like();
    for n in 0..logits.n {
        let a = logits.plane(n, 0);
        let b = logits.plane(n, 1);
        let mut p0 = vec![0.0; a.len()];
        let mut p1 = vec![0.0; a.len()];
        for i in 0..a.len() {
            let m = a[i].max(b[i]);
            let ea = (a[i] - m).exp();
            let eb = (b[i] - m).exp();
            let s = ea + eb;
            p0[i] = ea / s;
            p1[i] = eb / s;
        }
        probs.plane_mut(n, 0).copy_from_slice(&p0);
        probs.plane_mut(n, 1).copy_from_slice(&p1);
    }
    probs
}

/// Mean cross-entropy over labelled pixels (`None` is ignored) and its
/// gradient with respect to the logits.
pub(crate) fn cross_entropy(logits: &Tensor, targets: &[Option<u8>]) -> (f64, Tensor, usize) {
    let probs = softmax2(logits);
    let len = logits.plane_len();
    let count = targets.iter().filter(|t| t.is_some()).count();
    let mut grad = logits.zeros_like();
    if count == 0 {
        return (0.0, grad, 0);
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for n in 0..logits.n {
        for i in 0..len {
            let Some(t) = targets[n * len + i] else { continue };
            let t = usize::from(t);
            let p = probs.plane(n, t)[i];
            loss -= p.max(f64::MIN_POSITIVE).ln();
            for c in 0..2 {
                let onehot = if c == t { 1.0 } else { 0.0 };
                grad.plane_mut(n, c)[i] = (probs.plane(n, c)[i] - onehot) * scale;
            }
        }
    }
    (loss * scale, grad, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let input = Tensor::from_vec(1, 1, 3, 4, (0..12).map(f64::from).collect());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(conv3x3_forward(&input, &k, None, 1), input);
        // Shift kernel: output(y, x) = input(y, x + 1), zero past the edge.
        let mut k = vec![0.0; 9];
        k[5] = 1.0;
        let out = conv3x3_forward(&input, &k, Some(&[0.5]), 1);
        assert_eq!(&out.data[0..4], &[1.5, 2.5, 3.5, 0.5]);
    }

    #[test]
    fn pool_unpool_round_trip_keeps_maxima() {
        let input = Tensor::from_vec(1, 1, 2, 4, vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0]);
        let (pooled, idx) = maxpool_forward(&input);
        assert_eq!(pooled.data, vec![5.0, 7.0]);
        let up = unpool_forward(&pooled, &idx, 2, 4);
        assert_eq!(up.data, vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 7.0, 0.0]);
    }

    #[test]
    fn cross_entropy_ignores_unlabelled_pixels() {
        let logits = Tensor::from_vec(1, 2, 1, 2, vec![0.0, 3.0, 0.0, -1.0]);
        let (loss, grad, count) = cross_entropy(&logits, &[Some(0), None]);
        assert_eq!(count, 1);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(grad.data[1], 0.0);
        assert_eq!(grad.data[3], 0.0);
    }
}
