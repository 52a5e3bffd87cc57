//! Network layers with explicit forward and reverse-mode backward passes.
//!
//! Every layer reads its parameters from a flat f64 vector at offsets fixed
//! by the layout builder, and writes parameter gradients into a congruent
//! flat vector. All loops run in a fixed order, so results are bitwise
//! deterministic.

use super::tensor::{axpy, dot, Tensor};

/// Valid output range of a 1D convolution tap: all o with
/// 0 <= o*stride + d - pad < m_in.
#[inline]
fn tap_range(m_in: usize, m_out: usize, stride: usize, pad: usize, d: usize) -> (usize, usize) {
    let (m_in, m_out, stride) = (m_in as i64, m_out as i64, stride as i64);
    let shift = d as i64 - pad as i64;
    let lo = (-shift).div_euclid(stride).max(0);
    let lo = if lo * stride + shift < 0 { lo + 1 } else { lo };
    let hi = ((m_in - 1 - shift).div_euclid(stride) + 1).clamp(0, m_out);
    (lo.min(hi) as usize, hi as usize)
}

/// 3D convolution, kernel k (1 or 3), zero padding k/2, stride 1 or 2.
/// Weights are [cout, cin, k, k, k] row-major at `w_off`, biases at `b_off`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv3d {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn weight_count(&self) -> usize {
        self.cout * self.cin * self.k * self.k * self.k
    }

    pub fn out_shape(&self, x: &Tensor) -> [usize; 5] {
        let p = self.pad();
        let o = |m: usize| (m + 2 * p - self.k) / self.stride + 1;
        [
            x.shape[0],
            self.cout,
            o(x.shape[2]),
            o(x.shape[3]),
            o(x.shape[4]),
        ]
    }

    #[inline]
    fn w_at(&self, params: &[f64], co: usize, ci: usize, dz: usize, dy: usize, dx: usize) -> f64 {
        let k = self.k;
        params[self.w_off + (((co * self.cin + ci) * k + dz) * k + dy) * k + dx]
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Tensor {
        assert_eq!(x.shape[1], self.cin, "conv input channels");
        let mut out = Tensor::zeros(self.out_shape(x));
        let [n, _, zo, yo, xo] = out.shape;
        let [_, _, zi, yi, xi] = x.shape;
        let (p, s, k) = (self.pad(), self.stride, self.k);
        for ni in 0..n {
            for co in 0..self.cout {
                let ob = out.plane(ni, co);
                out.data[ob..ob + zo * yo * xo].fill(params[self.b_off + co]);
                for ci in 0..self.cin {
                    let ib = x.plane(ni, ci);
                    for dz in 0..k {
                        let (zl, zh) = tap_range(zi, zo, s, p, dz);
                        for dy in 0..k {
                            let (yl, yh) = tap_range(yi, yo, s, p, dy);
                            for dx in 0..k {
                                let w = self.w_at(params, co, ci, dz, dy, dx);
                                let (xl, xh) = tap_range(xi, xo, s, p, dx);
                                if xl >= xh {
                                    continue;
                                }
                                for z in zl..zh {
                                    let src_z = z * s + dz - p;
                                    for y in yl..yh {
                                        let src_y = y * s + dy - p;
                                        let orow = ob + (z * yo + y) * xo;
                                        let irow = ib + (src_z * yi + src_y) * xi;
                                        if s == 1 {
                                            let sx = xl + dx - p;
                                            axpy(
                                                &mut out.data[orow + xl..orow + xh],
                                                &x.data[irow + sx..irow + sx + (xh - xl)],
                                                w,
                                            );
                                        } else {
                                            for xq in xl..xh {
                                                out.data[orow + xq] +=
                                                    w * x.data[irow + xq * s + dx - p];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `gp` and returns the input grad.
    pub fn backward(&self, params: &[f64], x: &Tensor, gout: &Tensor, gp: &mut [f64]) -> Tensor {
        let mut gx = Tensor::zeros(x.shape);
        let [n, _, zo, yo, xo] = gout.shape;
        let [_, _, zi, yi, xi] = x.shape;
        let (p, s, k) = (self.pad(), self.stride, self.k);
        for ni in 0..n {
            for co in 0..self.cout {
                let ob = gout.plane(ni, co);
                let mut bsum = 0.0;
                for v in &gout.data[ob..ob + zo * yo * xo] {
                    bsum += v;
                }
                gp[self.b_off + co] += bsum;
                for ci in 0..self.cin {
                    let ib = x.plane(ni, ci);
                    for dz in 0..k {
                        let (zl, zh) = tap_range(zi, zo, s, p, dz);
                        for dy in 0..k {
                            let (yl, yh) = tap_range(yi, yo, s, p, dy);
                            for dx in 0..k {
                                let (xl, xh) = tap_range(xi, xo, s, p, dx);
                                if xl >= xh {
                                    continue;
                                }
                                let w = self.w_at(params, co, ci, dz, dy, dx);
                                let widx = self.w_off
                                    + (((co * self.cin + ci) * k + dz) * k + dy) * k
                                    + dx;
                                let mut wsum = 0.0;
                                for z in zl..zh {
                                    let src_z = z * s + dz - p;
                                    for y in yl..yh {
                                        let src_y = y * s + dy - p;
                                        let orow = ob + (z * yo + y) * xo;
                                        let irow = ib + (src_z * yi + src_y) * xi;
                                        if s == 1 {
                                            let sx = xl + dx - p;
                                            wsum += dot(
                                                &gout.data[orow + xl..orow + xh],
                                                &x.data[irow + sx..irow + sx + (xh - xl)],
                                            );
                                            axpy(
                                                &mut gx.data[irow + sx..irow + sx + (xh - xl)],
                                                &gout.data[orow + xl..orow + xh],
                                                w,
                                            );
                                        } else {
                                            for xq in xl..xh {
                                                let g = gout.data[orow + xq];
                                                let ii = irow + xq * s + dx - p;
                                                wsum += g * x.data[ii];
                                                gx.data[ii] += w * g;
                                            }
                                        }
                                    }
                                }
                                gp[widx] += wsum;
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Transposed 3D convolution, kernel 2, stride 2 (exact x2 upsampling).
/// Weights are [cin, cout, 2, 2, 2] at `w_off`.
#[derive(Debug, Clone)]
pub struct ConvT3d {
    pub cin: usize,
    pub cout: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvT3d {
    pub fn weight_count(&self) -> usize {
        self.cin * self.cout * 8
    }

    #[inline]
    fn w_at(&self, params: &[f64], ci: usize, co: usize, dz: usize, dy: usize, dx: usize) -> f64 {
        params[self.w_off + (((ci * self.cout + co) * 2 + dz) * 2 + dy) * 2 + dx]
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Tensor {
        assert_eq!(x.shape[1], self.cin);
        let [n, _, zi, yi, xi] = x.shape;
        let mut out = Tensor::zeros([n, self.cout, zi * 2, yi * 2, xi * 2]);
        let (yo, xo) = (yi * 2, xi * 2);
        for ni in 0..n {
            for co in 0..self.cout {
                let ob = out.plane(ni, co);
                out.data[ob..ob + zi * 2 * yo * xo].fill(params[self.b_off + co]);
                for ci in 0..self.cin {
                    let ib = x.plane(ni, ci);
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let w = self.w_at(params, ci, co, dz, dy, dx);
                                for z in 0..zi {
                                    for y in 0..yi {
                                        let irow = ib + (z * yi + y) * xi;
                                        let orow =
                                            ob + ((z * 2 + dz) * yo + y * 2 + dy) * xo + dx;
                                        for xq in 0..xi {
                                            out.data[orow + xq * 2] += w * x.data[irow + xq];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, params: &[f64], x: &Tensor, gout: &Tensor, gp: &mut [f64]) -> Tensor {
        let [n, _, zi, yi, xi] = x.shape;
        let (yo, xo) = (yi * 2, xi * 2);
        let mut gx = Tensor::zeros(x.shape);
        for ni in 0..n {
            for co in 0..self.cout {
                let ob = gout.plane(ni, co);
                let mut bsum = 0.0;
                for v in &gout.data[ob..ob + zi * 2 * yo * xo] {
                    bsum += v;
                }
                gp[self.b_off + co] += bsum;
                for ci in 0..self.cin {
                    let ib = x.plane(ni, ci);
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let w = self.w_at(params, ci, co, dz, dy, dx);
                                let widx = self.w_off
                                    + (((ci * self.cout + co) * 2 + dz) * 2 + dy) * 2
                                    + dx;
                                let mut wsum = 0.0;
                                for z in 0..zi {
                                    for y in 0..yi {
                                        let irow = ib + (z * yi + y) * xi;
                                        let orow =
                                            ob + ((z * 2 + dz) * yo + y * 2 + dy) * xo + dx;
                                        for xq in 0..xi {
                                            let g = gout.data[orow + xq * 2];
                                            wsum += g * x.data[irow + xq];
                                            gx.data[irow + xq] += w * g;
                                        }
                                    }
                                }
                                gp[widx] += wsum;
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Nearest-neighbor x2 upsampling (parameter-free).
pub fn upsample_nearest(x: &Tensor) -> Tensor {
    let [n, c, zi, yi, xi] = x.shape;
    let mut out = Tensor::zeros([n, c, zi * 2, yi * 2, xi * 2]);
    let (yo, xo) = (yi * 2, xi * 2);
    for ni in 0..n {
        for ci in 0..c {
            let ib = x.plane(ni, ci);
            let ob = out.plane(ni, ci);
            for z in 0..zi * 2 {
                for y in 0..yo {
                    let irow = ib + ((z / 2) * yi + y / 2) * xi;
                    let orow = ob + (z * yo + y) * xo;
                    for xq in 0..xo {
                        out.data[orow + xq] = x.data[irow + xq / 2];
                    }
                }
            }
        }
    }
    out
}

pub fn upsample_nearest_backward(gout: &Tensor) -> Tensor {
    let [n, c, zo, yo, xo] = gout.shape;
    let (zi, yi, xi) = (zo / 2, yo / 2, xo / 2);
    let mut gx = Tensor::zeros([n, c, zi, yi, xi]);
    for ni in 0..n {
        for ci in 0..c {
            let ib = gx.plane(ni, ci);
            let ob = gout.plane(ni, ci);
            for z in 0..zo {
                for y in 0..yo {
                    let irow = ib + ((z / 2) * yi + y / 2) * xi;
                    let orow = ob + (z * yo + y) * xo;
                    for xq in 0..xo {
                        gx.data[irow + xq / 2] += gout.data[orow + xq];
                    }
                }
            }
        }
    }
    gx
}

/// Group normalization over (channels/groups, z, y, x) per sample.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub g_off: usize,
    pub b_off: usize,
}

pub struct GnCache {
    pub xhat: Tensor,
    /// 1/sqrt(var + eps) per (n, group).
    pub inv_std: Vec<f64>,
}

const GN_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn forward(&self, params: &[f64], x: &Tensor) -> (Tensor, GnCache) {
        assert_eq!(x.shape[1], self.channels);
        let n = x.shape[0];
        let sp = x.spatial();
        let cpg = self.channels / self.groups;
        let m = (cpg * sp) as f64;
        let mut xhat = Tensor::zeros(x.shape);
        let mut out = Tensor::zeros(x.shape);
        let mut inv_std = vec![0.0; n * self.groups];
        for ni in 0..n {
            for g in 0..self.groups {
                let base = x.plane(ni, g * cpg);
                let len = cpg * sp;
                let slab = &x.data[base..base + len];
                let mut sum = 0.0;
                for v in slab {
                    sum += v;
                }
                let mean = sum / m;
                let mut var = 0.0;
                for v in slab {
                    let d = v - mean;
                    var += d * d;
                }
                var /= m;
                let inv = 1.0 / (var + GN_EPS).sqrt();
                inv_std[ni * self.groups + g] = inv;
                for (i, v) in slab.iter().enumerate() {
                    xhat.data[base + i] = (v - mean) * inv;
                }
                for c in 0..cpg {
                    let ch = g * cpg + c;
                    let gamma = params[self.g_off + ch];
                    let beta = params[self.b_off + ch];
                    let row = base + c * sp;
                    for i in 0..sp {
                        out.data[row + i] = gamma * xhat.data[row + i] + beta;
                    }
                }
            }
        }
        (out, GnCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &GnCache,
        gout: &Tensor,
        gp: &mut [f64],
    ) -> Tensor {
        let n = gout.shape[0];
        let sp = gout.spatial();
        let cpg = self.channels / self.groups;
        let m = (cpg * sp) as f64;
        let mut gx = Tensor::zeros(gout.shape);
        for ni in 0..n {
            for g in 0..self.groups {
                let base = gout.plane(ni, g * cpg);
                let inv = cache.inv_std[ni * self.groups + g];
                // ghat = gout * gamma (per channel); group sums of ghat and
                // ghat*xhat drive the normalization backward.
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for c in 0..cpg {
                    let ch = g * cpg + c;
                    let gamma = params[self.g_off + ch];
                    let row = base + c * sp;
                    let mut dgamma = 0.0;
                    let mut dbeta = 0.0;
                    for i in 0..sp {
                        let go = gout.data[row + i];
                        let xh = cache.xhat.data[row + i];
                        dgamma += go * xh;
                        dbeta += go;
                        let gh = go * gamma;
                        s1 += gh;
                        s2 += gh * xh;
                    }
                    gp[self.g_off + ch] += dgamma;
                    gp[self.b_off + ch] += dbeta;
                }
                let (c1, c2) = (s1 / m, s2 / m);
                for c in 0..cpg {
                    let ch = g * cpg + c;
                    let gamma = params[self.g_off + ch];
                    let row = base + c * sp;
                    for i in 0..sp {
                        let gh = gout.data[row + i] * gamma;
                        gx.data[row + i] = inv * (gh - c1 - cache.xhat.data[row + i] * c2);
                    }
                }
            }
        }
        gx
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU x·σ(x), elementwise.
pub fn silu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| v * sigmoid(v)).collect();
    Tensor::from_vec(x.shape, data)
}

/// Backward of SiLU given the forward *input*.
pub fn silu_backward(x: &Tensor, gout: &Tensor) -> Tensor {
    let data = x
        .data
        .iter()
        .zip(&gout.data)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (1.0 + v * (1.0 - s))
        })
        .collect();
    Tensor::from_vec(x.shape, data)
}

pub fn silu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_vec_backward(x: &[f64], gout: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(gout)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

/// Dense layer on per-sample feature vectors (n x in -> n x out).
/// Weights are [out, in] at `w_off`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub cin: usize,
    pub cout: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Linear {
    pub fn weight_count(&self) -> usize {
        self.cin * self.cout
    }

    pub fn forward(&self, params: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.cin);
        let mut out = vec![0.0; n * self.cout];
        for ni in 0..n {
            let xs = &x[ni * self.cin..(ni + 1) * self.cin];
            for o in 0..self.cout {
                let row = &params[self.w_off + o * self.cin..self.w_off + (o + 1) * self.cin];
                out[ni * self.cout + o] = params[self.b_off + o] + dot(row, xs);
            }
        }
        out
    }

    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        gout: &[f64],
        n: usize,
        gp: &mut [f64],
    ) -> Vec<f64> {
        let mut gx = vec![0.0; n * self.cin];
        for ni in 0..n {
            let xs = &x[ni * self.cin..(ni + 1) * self.cin];
            let gs = &gout[ni * self.cout..(ni + 1) * self.cout];
            for o in 0..self.cout {
                let g = gs[o];
                gp[self.b_off + o] += g;
                let wrow = self.w_off + o * self.cin;
                for i in 0..self.cin {
                    gp[wrow + i] += g * xs[i];
                    gx[ni * self.cin + i] += params[wrow + i] * g;
                }
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect()
    }

    /// Central finite differences on loss = dot(flatten(out), probe).
    fn fd_check<F>(params: &mut Vec<f64>, x: &Tensor, probe: &[f64], run: F)
    where
        F: Fn(&[f64], &Tensor) -> (Tensor, Vec<f64>, Tensor),
    {
        let h = 1e-5;
        let (_, gp, gx) = run(params, x);
        // Parameter gradients.
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let (op, _, _) = run(params, x);
            params[i] = orig - h;
            let (om, _, _) = run(params, x);
            params[i] = orig;
            let fd = (dot(&op.data, probe) - dot(&om.data, probe)) / (2.0 * h);
            let rel = (fd - gp[i]).abs() / fd.abs().max(gp[i].abs()).max(1e-6);
            assert!(rel <= 1e-5, "param {i}: fd {fd} vs bp {}", gp[i]);
        }
        // Input gradients (a sample of coordinates).
        let mut xm = x.clone();
        for i in (0..x.numel()).step_by(7) {
            let orig = xm.data[i];
            xm.data[i] = orig + h;
            let (op, _, _) = run(params, &xm);
            xm.data[i] = orig - h;
            let (om, _, _) = run(params, &xm);
            xm.data[i] = orig;
            let fd = (dot(&op.data, probe) - dot(&om.data, probe)) / (2.0 * h);
            let rel = (fd - gx.data[i]).abs() / fd.abs().max(gx.data[i].abs()).max(1e-6);
            assert!(rel <= 1e-5, "input {i}: fd {fd} vs bp {}", gx.data[i]);
        }
    }

    #[test]
    fn conv3d_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, stride) in [(3usize, 1usize), (3, 2), (1, 1)] {
            let conv = Conv3d {
                cin: 2,
                cout: 3,
                k,
                stride,
                w_off: 0,
                b_off: 2 * 3 * k * k * k,
            };
            let n_params = conv.weight_count() + conv.cout;
            let mut params = randn(n_params, &mut rng);
            let x = Tensor::from_vec([2, 2, 4, 4, 4], randn(2 * 2 * 64, &mut rng));
            let out_shape = conv.out_shape(&x);
            let probe = randn(out_shape.iter().product(), &mut rng);
            fd_check(&mut params, &x, &probe, |p, xin| {
                let out = conv.forward(p, xin);
                let mut gp = vec![0.0; p.len()];
                let gout = Tensor::from_vec(out.shape, probe.clone());
                let gx = conv.backward(p, xin, &gout, &mut gp);
                (out, gp, gx)
            });
        }
    }

    #[test]
    fn conv_transpose_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = ConvT3d {
            cin: 2,
            cout: 2,
            w_off: 0,
            b_off: 2 * 2 * 8,
        };
        let mut params = randn(conv.weight_count() + conv.cout, &mut rng);
        let x = Tensor::from_vec([1, 2, 2, 2, 2], randn(16, &mut rng));
        let probe = randn(2 * 64, &mut rng);
        fd_check(&mut params, &x, &probe, |p, xin| {
            let out = conv.forward(p, xin);
            let mut gp = vec![0.0; p.len()];
            let gout = Tensor::from_vec(out.shape, probe.clone());
            let gx = conv.backward(p, xin, &gout, &mut gp);
            (out, gp, gx)
        });
    }

    #[test]
    fn group_norm_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gn = GroupNorm {
            channels: 4,
            groups: 2,
            g_off: 0,
            b_off: 4,
        };
        let mut params = randn(8, &mut rng);
        let x = Tensor::from_vec([2, 4, 2, 2, 2], randn(2 * 4 * 8, &mut rng));
        let probe = randn(x.numel(), &mut rng);
        fd_check(&mut params, &x, &probe, |p, xin| {
            let (out, cache) = gn.forward(p, xin);
            let mut gp = vec![0.0; p.len()];
            let gout = Tensor::from_vec(out.shape, probe.clone());
            let gx = gn.backward(p, &cache, &gout, &mut gp);
            (out, gp, gx)
        });
    }

    #[test]
    fn silu_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_vec([1, 2, 2, 2, 2], randn(16, &mut rng));
        let probe = randn(16, &mut rng);
        let gout = Tensor::from_vec(x.shape, probe.clone());
        let gx = silu_backward(&x, &gout);
        let h = 1e-6;
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (dot(&silu(&xp).data, &probe) - dot(&silu(&xm).data, &probe)) / (2.0 * h);
            assert!((fd - gx.data[i]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn linear_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lin = Linear {
            cin: 3,
            cout: 4,
            w_off: 0,
            b_off: 12,
        };
        let mut params = randn(16, &mut rng);
        let x = randn(2 * 3, &mut rng);
        let probe = randn(2 * 4, &mut rng);
        let h = 1e-6;
        let run = |p: &[f64]| lin.forward(p, &x, 2);
        let mut gp = vec![0.0; params.len()];
        let gx = lin.backward(&params, &x, &probe, 2, &mut gp);
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let op = run(&params);
            params[i] = orig - h;
            let om = run(&params);
            params[i] = orig;
            let fd = (dot(&op, &probe) - dot(&om, &probe)) / (2.0 * h);
            assert!((fd - gp[i]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (dot(&lin.forward(&params, &xp, 2), &probe)
                - dot(&lin.forward(&params, &xm, 2), &probe))
                / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::from_vec([1, 2, 2, 3, 2], randn(2 * 12, &mut rng));
        let up = upsample_nearest(&x);
        assert_eq!(up.shape, [1, 2, 4, 6, 4]);
        // Adjoint identity: <up(x), g> == <x, up_backward(g)>.
        let g = Tensor::from_vec(up.shape, randn(up.numel(), &mut rng));
        let gx = upsample_nearest_backward(&g);
        let lhs = dot(&up.data, &g.data);
        let rhs = dot(&x.data, &gx.data);
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn tap_range_covers_strided_cases() {
        // stride 2, pad 1, kernel 3, input 8 -> output 4.
        assert_eq!(tap_range(8, 4, 2, 1, 0), (1, 4));
        assert_eq!(tap_range(8, 4, 2, 1, 1), (0, 4));
        assert_eq!(tap_range(8, 4, 2, 1, 2), (0, 4));
        // stride 1, pad 1, kernel 3, input 5.
        assert_eq!(tap_range(5, 5, 1, 1, 0), (1, 5));
        assert_eq!(tap_range(5, 5, 1, 1, 1), (0, 5));
        assert_eq!(tap_range(5, 5, 1, 1, 2), (0, 4));
    }
}
