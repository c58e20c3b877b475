//! 3x3x3 "same" convolution over channel-major volumes.
//!
//! Activations are laid out `[C, nz, ny, nx]`. Forward and backward go
//! through an im2col matrix of shape `(C_in * 27) x N` so both directions
//! reduce to one GEMM each.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::volume::Dims;

pub const TAPS: usize = 27;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    /// `[out, in, 3, 3, 3]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub dilation: usize,
}

impl Conv3d {
    pub fn zeros(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![out_channels, in_channels, 3, 3, 3]),
            bias: Tensor::zeros(vec![out_channels]),
            dilation: dilation.max(1),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_channels: usize, out_channels: usize, dilation: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, dilation);
        let bound = (6.0 / ((in_channels + out_channels) * TAPS) as f64).sqrt();
        for w in conv.weight.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        conv
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, input: &[f64], dims: Dims) -> Result<()> {
        let expected = self.in_channels() * dims.len();
        if input.len() != expected {
            return Err(Error::Shape(format!(
                "conv expects {} channels over {dims} ({expected} values), got {}",
                self.in_channels(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64], dims: Dims) -> Result<Vec<f64>> {
        self.check_input(input, dims)?;
        let n = dims.len();
        let (c_out, k) = (self.out_channels(), self.in_channels() * TAPS);
        let cols = im2col(input, self.in_channels(), dims, self.dilation);
        let mut out = vec![0.0; c_out * n];
        for (o, row) in out.chunks_exact_mut(n).enumerate() {
            row.fill(self.bias.data()[o]);
        }
        gemm(c_out, k, n, self.weight.data(), k, 1, &cols, n, 1, 1.0, &mut out, n, 1);
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, input: &[f64], dims: Dims, grad_out: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input, dims)?;
        let n = dims.len();
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        let k = c_in * TAPS;
        if grad_out.len() != c_out * n {
            return Err(Error::Shape("conv output gradient has wrong length".into()));
        }
        let cols = im2col(input, c_in, dims, self.dilation);

        // dW (c_out x k) += dOut (c_out x n) * cols^T (n x k)
        gemm(
            c_out,
            n,
            k,
            grad_out,
            n,
            1,
            &cols,
            1,
            n,
            1.0,
            self.weight.grad_mut(),
            k,
            1,
        );
        let bias_grad = self.bias.grad_mut();
        for (o, row) in grad_out.chunks_exact(n).enumerate() {
            bias_grad[o] += row.iter().sum::<f64>();
        }

        // dCols (k x n) = W^T (k x c_out) * dOut (c_out x n)
        let mut dcols = vec![0.0; k * n];
        gemm(
            k,
            c_out,
            n,
            self.weight.data(),
            1,
            k,
            grad_out,
            n,
            1,
            0.0,
            &mut dcols,
            n,
            1,
        );
        let mut grad_in = vec![0.0; c_in * n];
        col2im(&dcols, c_in, dims, self.dilation, &mut grad_in);
        Ok(grad_in)
    }
}

#[inline]
fn tap_offset(tap: usize, dilation: usize) -> (i64, i64, i64) {
    let d = dilation as i64;
    let kx = (tap % 3) as i64 - 1;
    let ky = ((tap / 3) % 3) as i64 - 1;
    let kz = (tap / 9) as i64 - 1;
    (kx * d, ky * d, kz * d)
}

/// Valid destination x-range for a shift of `dx` along a row of `nx`.
#[inline]
fn x_range(dx: i64, nx: usize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (nx as i64 - dx.max(0)).max(0) as usize;
    (lo.min(nx), hi.max(lo.min(nx)))
}

fn im2col(input: &[f64], channels: usize, dims: Dims, dilation: usize) -> Vec<f64> {
    let n = dims.len();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let mut cols = vec![0.0; channels * TAPS * n];
    for c in 0..channels {
        let src = &input[c * n..(c + 1) * n];
        for tap in 0..TAPS {
            let (dx, dy, dz) = tap_offset(tap, dilation);
            let dst = &mut cols[(c * TAPS + tap) * n..(c * TAPS + tap + 1) * n];
            let (x0, x1) = x_range(dx, nx);
            if x0 >= x1 {
                continue;
            }
            for z in 0..nz {
                let sz = z as i64 + dz;
                if sz < 0 || sz >= nz as i64 {
                    continue;
                }
                for y in 0..ny {
                    let sy = y as i64 + dy;
                    if sy < 0 || sy >= ny as i64 {
                        continue;
                    }
                    let row = (y + ny * z) * nx;
                    let srow = (sy as usize + ny * sz as usize) * nx;
                    let s0 = (x0 as i64 + dx) as usize;
                    dst[row + x0..row + x1].copy_from_slice(&src[srow + s0..srow + s0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], channels: usize, dims: Dims, dilation: usize, out: &mut [f64]) {
    let n = dims.len();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    for c in 0..channels {
        let dst = &mut out[c * n..(c + 1) * n];
        for tap in 0..TAPS {
            let (dx, dy, dz) = tap_offset(tap, dilation);
            let src = &cols[(c * TAPS + tap) * n..(c * TAPS + tap + 1) * n];
            let (x0, x1) = x_range(dx, nx);
            if x0 >= x1 {
                continue;
            }
            for z in 0..nz {
                let sz = z as i64 + dz;
                if sz < 0 || sz >= nz as i64 {
                    continue;
                }
                for y in 0..ny {
                    let sy = y as i64 + dy;
                    if sy < 0 || sy >= ny as i64 {
                        continue;
                    }
                    let row = (y + ny * z) * nx;
                    let srow = (sy as usize + ny * sz as usize) * nx;
                    let s0 = (x0 as i64 + dx) as usize;
                    for (d, s) in dst[srow + s0..srow + s0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&src[row + x0..row + x1])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `C = alpha * A * B + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(m == 0 || n == 0 || (m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserted extents keep every access inside the slices, and
    // `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Seven nested loops, no im2col.
    fn reference(conv: &Conv3d, input: &[f64], dims: Dims) -> Vec<f64> {
        let (c_in, c_out) = (conv.in_channels(), conv.out_channels());
        let n = dims.len();
        let d = conv.dilation as i64;
        let w = conv.weight.data();
        let mut out = vec![0.0; c_out * n];
        for o in 0..c_out {
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        let mut acc = conv.bias.data()[o];
                        for c in 0..c_in {
                            for kz in 0..3i64 {
                                for ky in 0..3i64 {
                                    for kx in 0..3i64 {
                                        let sx = x as i64 + (kx - 1) * d;
                                        let sy = y as i64 + (ky - 1) * d;
                                        let sz = z as i64 + (kz - 1) * d;
                                        if !dims.contains(sx, sy, sz) {
                                            continue;
                                        }
                                        let wi =
                                            (((o * c_in + c) * 3 + kz as usize) * 3 + ky as usize) * 3 + kx as usize;
                                        acc += w[wi] * input[c * n + dims.index(sx as usize, sy as usize, sz as usize)];
                                    }
                                }
                            }
                        }
                        out[o * n + dims.index(x, y, z)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let dims = Dims::new(4, 3, 2).unwrap();
        let mut conv = Conv3d::zeros(1, 1, 1);
        conv.weight.data_mut()[13] = 1.0;
        let input: Vec<f64> = (0..dims.len()).map(|i| i as f64 * 0.5 - 3.0).collect();
        assert_eq!(conv.forward(&input, dims).unwrap(), input);
    }

    #[test]
    fn ones_kernel_marks_neighbourhood() {
        let dims = Dims::new(5, 5, 5).unwrap();
        let mut conv = Conv3d::zeros(1, 1, 1);
        conv.weight.data_mut().fill(1.0);
        let mut input = vec![0.0; dims.len()];
        input[dims.index(2, 2, 2)] = 1.0;
        let out = conv.forward(&input, dims).unwrap();
        for i in 0..dims.len() {
            let c = dims.coord(i);
            let near = [c.x, c.y, c.z].iter().all(|&v| (v as i64 - 2).abs() <= 1);
            assert_eq!(out[i], if near { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (dims, dilation) in [
            (Dims::new(4, 4, 4).unwrap(), 1),
            (Dims::new(5, 3, 4).unwrap(), 2),
            (Dims::new(1, 6, 2).unwrap(), 1),
        ] {
            let mut conv = Conv3d::glorot(2, 3, dilation, &mut rng);
            for b in conv.bias.data_mut() {
                *b = rng.random_range(-1.0..1.0);
            }
            let input: Vec<f64> = (0..2 * dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv.forward(&input, dims).unwrap();
            let slow = reference(&conv, &input, dims);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sum_loss_through_identity_gives_unit_input_gradient() {
        let dims = Dims::new(3, 3, 3).unwrap();
        let mut conv = Conv3d::zeros(1, 1, 1);
        conv.weight.data_mut()[13] = 1.0;
        let input = vec![0.3; dims.len()];
        let g = conv.backward(&input, dims, &vec![1.0; dims.len()]).unwrap();
        assert!(g.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = Dims::new(3, 4, 2).unwrap();
        let mut conv = Conv3d::glorot(2, 2, 1, &mut rng);
        let input: Vec<f64> = (0..2 * dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad: Vec<f64> = (0..2 * dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        conv.backward(&input, dims, &grad).unwrap();
        let once = conv.weight.grad().unwrap().to_vec();
        conv.backward(&input, dims, &grad).unwrap();
        for (a, b) in conv.weight.grad().unwrap().iter().zip(&once) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = Dims::new(3, 3, 2).unwrap();
        let mut conv = Conv3d::glorot(2, 2, 1, &mut rng);
        let input: Vec<f64> = (0..2 * dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..2 * dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |conv: &Conv3d, input: &[f64]| -> f64 {
            conv.forward(input, dims)
                .unwrap()
                .iter()
                .zip(&probe)
                .map(|(a, b)| a * b)
                .sum()
        };
        let grad_in = conv.backward(&input, dims, &probe).unwrap();
        let h = 1e-5;
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus[i] += h;
            let mut minus = input.clone();
            minus[i] -= h;
            let fd = (loss(&conv, &plus) - loss(&conv, &minus)) / (2.0 * h);
            assert!((fd - grad_in[i]).abs() < 1e-8);
        }
        let analytic = conv.weight.grad().unwrap().to_vec();
        for i in 0..analytic.len() {
            let orig = conv.weight.data()[i];
            conv.weight.data_mut()[i] = orig + h;
            let lp = loss(&conv, &input);
            conv.weight.data_mut()[i] = orig - h;
            let lm = loss(&conv, &input);
            conv.weight.data_mut()[i] = orig;
            assert!(((lp - lm) / (2.0 * h) - analytic[i]).abs() < 1e-8);
        }
    }
}
