//! Dense CPU kernels behind the autodiff ops.
//!
//! Parallelism is always across disjoint output regions (output channels for
//! convolutions, input channels for the input-gradient gather), so the results
//! do not depend on the thread count or on the `parallel` feature.

use crate::par;
use crate::tensor::Tensor;

/// Output spatial size of a convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Valid output-column range `[lo, hi)` for a given kernel column, i.e. the
/// `ox` for which `ox*stride + kx - pad` lands inside `[0, w_in)`.
fn ox_bounds(kx: usize, stride: usize, pad: usize, w_in: usize, w_out: usize) -> (usize, usize) {
    let kx = kx as isize;
    let s = stride as isize;
    let p = pad as isize;
    let lo = (p - kx + s - 1).div_euclid(s).max(0) as usize;
    let hi_incl = (w_in as isize - 1 - kx + p).div_euclid(s);
    if hi_incl < lo as isize {
        return (0, 0);
    }
    (lo, ((hi_incl + 1) as usize).min(w_out))
}

/// `x: [Ci,H,W] * w: [Co,Ci,k,k] + b: [Co] -> [Co,Ho,Wo]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (ci, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    assert_eq!(w.shape(), &[co, ci, k, k], "conv weight shape");
    assert_eq!(b.shape(), &[co], "conv bias shape");
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(wid, k, stride, pad);

    let mut out = Tensor::zeros(vec![co, ho, wo]);
    let wdata = w.data();
    par::for_each_chunk_mut(out.data_mut(), ho * wo, |oc, oplane| {
        oplane.fill(b.data()[oc]);
        for ic in 0..ci {
            let xplane = x.plane(ic);
            let wbase = (oc * ci + ic) * k * k;
            for ky in 0..k {
                for oy in 0..ho {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let xrow = &xplane[y as usize * wid..y as usize * wid + wid];
                    let orow = &mut oplane[oy * wo..(oy + 1) * wo];
                    for kx in 0..k {
                        let wv = wdata[wbase + ky * k + kx];
                        let (lo, hi) = ox_bounds(kx, stride, pad, wid, wo);
                        let off = kx as isize - pad as isize;
                        for ox in lo..hi {
                            let xi = (ox * stride) as isize + off;
                            orow[ox] += wv * xrow[xi as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of the convolution output w.r.t. its input (the gather form:
/// each input channel is filled independently, so channels parallelize).
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    w: &Tensor,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor {
    let (ci, h, wid) = (x_shape[0], x_shape[1], x_shape[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let (ho, wo) = (grad_out.shape()[1], grad_out.shape()[2]);

    let mut gx = Tensor::zeros(vec![ci, h, wid]);
    let wdata = w.data();
    par::for_each_chunk_mut(gx.data_mut(), h * wid, |ic, gxplane| {
        for oc in 0..co {
            let gplane = grad_out.plane(oc);
            let wbase = (oc * ci + ic) * k * k;
            for ky in 0..k {
                for oy in 0..ho {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let gxrow = &mut gxplane[y as usize * wid..y as usize * wid + wid];
                    let grow = &gplane[oy * wo..(oy + 1) * wo];
                    for kx in 0..k {
                        let wv = wdata[wbase + ky * k + kx];
                        let (lo, hi) = ox_bounds(kx, stride, pad, wid, wo);
                        let off = kx as isize - pad as isize;
                        for ox in lo..hi {
                            let xi = (ox * stride) as isize + off;
                            gxrow[xi as usize] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Gradient of the convolution output w.r.t. the weight tensor.
pub fn conv2d_backward_weight(
    grad_out: &Tensor,
    x: &Tensor,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor {
    let (ci, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w_shape[0], w_shape[2]);
    let (ho, wo) = (grad_out.shape()[1], grad_out.shape()[2]);

    let mut gw = Tensor::zeros(vec![co, ci, k, k]);
    par::for_each_chunk_mut(gw.data_mut(), ci * k * k, |oc, gwchunk| {
        let gplane = grad_out.plane(oc);
        for ic in 0..ci {
            let xplane = x.plane(ic);
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = ox_bounds(kx, stride, pad, wid, wo);
                    let off = kx as isize - pad as isize;
                    let mut acc = 0.0;
                    for oy in 0..ho {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[y as usize * wid..y as usize * wid + wid];
                        let grow = &gplane[oy * wo..(oy + 1) * wo];
                        for ox in lo..hi {
                            let xi = (ox * stride) as isize + off;
                            acc += grow[ox] * xrow[xi as usize];
                        }
                    }
                    gwchunk[(ic * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    gw
}

/// Gradient of the convolution output w.r.t. the bias.
pub fn conv2d_backward_bias(grad_out: &Tensor) -> Tensor {
    let co = grad_out.shape()[0];
    let sums = par::map_indexed(&(0..co).collect::<Vec<_>>(), |_, &oc| {
        grad_out.plane(oc).iter().sum::<f64>()
    });
    Tensor::from_vec(sums)
}

/// Per-channel normalization over the spatial extent, with learned affine.
pub fn instance_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(gamma.shape(), &[c]);
    assert_eq!(beta.shape(), &[c]);
    let m = (h * w) as f64;
    let mut out = Tensor::zeros(vec![c, h, w]);
    par::for_each_chunk_mut(out.data_mut(), h * w, |ch, oplane| {
        let xplane = x.plane(ch);
        let mean = xplane.iter().sum::<f64>() / m;
        let var = xplane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let istd = 1.0 / (var + eps).sqrt();
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for (o, &xv) in oplane.iter_mut().zip(xplane.iter()) {
            *o = g * (xv - mean) * istd + b;
        }
    });
    out
}

/// Backward pass of [`instance_norm_forward`]; returns `(dx, dgamma, dbeta)`.
pub fn instance_norm_backward(
    grad_out: &Tensor,
    x: &Tensor,
    gamma: &Tensor,
    eps: f64,
) -> (Tensor, Tensor, Tensor) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let m = (h * w) as f64;
    let mut dx = Tensor::zeros(vec![c, h, w]);
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    // dgamma/dbeta are tiny; fill them sequentially after the parallel dx pass.
    par::for_each_chunk_mut(dx.data_mut(), h * w, |ch, dxplane| {
        let xplane = x.plane(ch);
        let gplane = grad_out.plane(ch);
        let mean = xplane.iter().sum::<f64>() / m;
        let var = xplane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let istd = 1.0 / (var + eps).sqrt();
        let gmean = gplane.iter().sum::<f64>() / m;
        let gxhat_mean = gplane
            .iter()
            .zip(xplane.iter())
            .map(|(&g, &xv)| g * (xv - mean) * istd)
            .sum::<f64>()
            / m;
        let gval = gamma.data()[ch];
        for ((d, &g), &xv) in dxplane.iter_mut().zip(gplane.iter()).zip(xplane.iter()) {
            let xhat = (xv - mean) * istd;
            *d = gval * istd * (g - gmean - xhat * gxhat_mean);
        }
    });
    for ch in 0..c {
        let xplane = x.plane(ch);
        let gplane = grad_out.plane(ch);
        let mean = xplane.iter().sum::<f64>() / m;
        let var = xplane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let istd = 1.0 / (var + eps).sqrt();
        dbeta[ch] = gplane.iter().sum::<f64>();
        dgamma[ch] = gplane
            .iter()
            .zip(xplane.iter())
            .map(|(&g, &xv)| g * (xv - mean) * istd)
            .sum::<f64>();
    }
    (dx, Tensor::from_vec(dgamma), Tensor::from_vec(dbeta))
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros(vec![c, ho, wo]);
    par::for_each_chunk_mut(out.data_mut(), ho * wo, |ch, oplane| {
        let xplane = x.plane(ch);
        for oy in 0..ho {
            let xrow = &xplane[(oy / factor) * w..(oy / factor) * w + w];
            let orow = &mut oplane[oy * wo..(oy + 1) * wo];
            for (ox, o) in orow.iter_mut().enumerate() {
                *o = xrow[ox / factor];
            }
        }
    });
    out
}

/// Backward of nearest-neighbor upsampling: sum each factor×factor block.
pub fn upsample_nearest_backward(grad_out: &Tensor, factor: usize) -> Tensor {
    let (c, ho, wo) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let (h, w) = (ho / factor, wo / factor);
    let mut gx = Tensor::zeros(vec![c, h, w]);
    par::for_each_chunk_mut(gx.data_mut(), h * w, |ch, gxplane| {
        let gplane = grad_out.plane(ch);
        for oy in 0..ho {
            let grow = &gplane[oy * wo..(oy + 1) * wo];
            let gxrow = &mut gxplane[(oy / factor) * w..(oy / factor) * w + w];
            for (ox, &g) in grow.iter().enumerate() {
                gxrow[ox / factor] += g;
            }
        }
    });
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_passes_through() {
        // 1x1 kernel with weight 1 and zero bias reproduces the input.
        let x = Tensor::new(vec![1, 2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]);
        let b = Tensor::zeros(vec![1]);
        let y = conv2d_forward(&x, &w, &b, 1, 0);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_naive_loop() {
        // Oracle: direct five-deep loop over the convolution definition.
        let mut seed = 1u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        let (ci, h, wid, co, k, stride, pad) = (3, 7, 6, 4, 3, 2, 1);
        let x = Tensor::new(vec![ci, h, wid], (0..ci * h * wid).map(|_| next()).collect());
        let w = Tensor::new(vec![co, ci, k, k], (0..co * ci * k * k).map(|_| next()).collect());
        let b = Tensor::new(vec![co], (0..co).map(|_| next()).collect());

        let got = conv2d_forward(&x, &w, &b, stride, pad);

        let ho = conv_out_size(h, k, stride, pad);
        let wo = conv_out_size(wid, k, stride, pad);
        for oc in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[oc];
                    for ic in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xcol = (ox * stride + kx) as isize - pad as isize;
                                if y >= 0 && y < h as isize && xcol >= 0 && xcol < wid as isize {
                                    acc += w.data()[((oc * ci + ic) * k + ky) * k + kx]
                                        * x.data()[(ic * h + y as usize) * wid + xcol as usize];
                                }
                            }
                        }
                    }
                    let gotv = got.data()[(oc * ho + oy) * wo + ox];
                    assert!((gotv - acc).abs() < 1e-12, "mismatch at {oc},{oy},{ox}");
                }
            }
        }
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let x = Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]);
        let y = upsample_nearest(&x, 2);
        assert_eq!(y.shape(), &[1, 4, 4]);
        assert_eq!(y.plane(0)[0..4], [1., 1., 2., 2.]);
        let g = upsample_nearest_backward(&y, 2);
        // Each input cell received its value in a 2x2 block, so the summed
        // gradient is 4x the upsampled value.
        assert_eq!(g.data(), &[4., 8., 12., 16.]);
    }

    #[test]
    fn instance_norm_is_affine_invariant() {
        let x = Tensor::new(vec![2, 2, 2], vec![0.3, -1.2, 0.7, 2.1, -0.4, 0.9, 1.5, -2.0]);
        let gamma = Tensor::new(vec![2], vec![1.3, 0.7]);
        let beta = Tensor::new(vec![2], vec![0.1, -0.2]);
        let eps = 1e-12;
        let base = instance_norm_forward(&x, &gamma, &beta, eps);
        // Per-channel rescale a>0 and shift b leave the normalized output unchanged.
        let rescaled = {
            let mut t = x.clone();
            let hw = 4;
            for (c, (a, b)) in [(1.7, 0.4), (0.2, -3.0)].iter().enumerate() {
                for v in &mut t.data_mut()[c * hw..(c + 1) * hw] {
                    *v = a * *v + b;
                }
            }
            t
        };
        let other = instance_norm_forward(&rescaled, &gamma, &beta, eps);
        for (a, b) in base.data().iter().zip(other.data().iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
