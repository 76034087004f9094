//! im2col convolution on NCHW tensors. Fully connected layers are 1×1
//! convolutions over `[N, C, 1, 1]`.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::real::{Layout, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self::new(inputs, outputs, 1, 1, 0)
    }

    /// Weight tensor shape `[cout, cin, k, k]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin, self.kernel, self.kernel]
    }

    /// Number of taps per output (`cin·k·k`).
    pub fn patch(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = |x: usize| -> Result<usize> {
            let padded = x + 2 * self.pad;
            if padded < self.kernel || self.stride == 0 {
                return Err(Error::shape(format!(
                    "kernel {} stride {} does not fit input extent {x} with pad {}",
                    self.kernel, self.stride, self.pad
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((span(h)?, span(w)?))
    }

    /// Validates an NCHW input and returns `(n, h, w, ho, wo)`.
    pub fn check_input(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
        if shape.len() != 4 || shape[1] != self.cin {
            return Err(Error::shape(format!(
                "conv expects [N, {}, H, W], got {shape:?}",
                self.cin
            )));
        }
        let (ho, wo) = self.out_hw(shape[2], shape[3])?;
        Ok((shape[0], shape[2], shape[3], ho, wo))
    }
}

/// Unfolds `x: [n, cin, h, w]` into `[cin·k·k, n·ho·wo]`; out-of-range taps
/// hold `fill`.
pub fn im2col<T: Copy>(x: &[T], n: usize, h: usize, w: usize, g: &ConvGeom, fill: T) -> Vec<T> {
    let (ho, wo) = g.out_hw(h, w).expect("geometry checked by caller");
    let cols = n * ho * wo;
    let k = g.kernel;
    let mut out = vec![fill; g.patch() * cols];
    for c in 0..g.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let src = &x[(b * g.cin + c) * h * w..][..h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..][..w];
                        let drow = &mut dst[(b * ho + oy) * wo..][..wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
pub fn col2im<T: Real>(col: &[T], n: usize, h: usize, w: usize, g: &ConvGeom) -> Vec<T> {
    let (ho, wo) = g.out_hw(h, w).expect("geometry checked by caller");
    let cols = n * ho * wo;
    let k = g.kernel;
    let mut x = vec![T::zero(); n * g.cin * h * w];
    for c in 0..g.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let dst = &mut x[(b * g.cin + c) * h * w..][..h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[(b * ho + oy) * wo..][..wo];
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[cout, n·hw]` → `[n, cout, hw]`.
fn channel_major_to_nchw<T: Copy + Default>(y: &[T], n: usize, cout: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::default(); y.len()];
    for c in 0..cout {
        for b in 0..n {
            out[(b * cout + c) * hw..][..hw].copy_from_slice(&y[(c * n + b) * hw..][..hw]);
        }
    }
    out
}

fn nchw_to_channel_major<T: Copy + Default>(y: &[T], n: usize, cout: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::default(); y.len()];
    for b in 0..n {
        for c in 0..cout {
            out[(c * n + b) * hw..][..hw].copy_from_slice(&y[(b * cout + c) * hw..][..hw]);
        }
    }
    out
}

/// Forward convolution. Returns the output and the unfolded input for reuse
/// in the backward pass.
pub fn conv_forward<T: Real>(x: &Tensor<T>, w: &[T], g: &ConvGeom) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, h, wd, ho, wo) = g.check_input(x.shape())?;
    if w.len() != g.cout * g.patch() {
        return Err(Error::shape(format!(
            "weights hold {} values, geometry needs {}",
            w.len(),
            g.cout * g.patch()
        )));
    }
    let col = im2col(x.data(), n, h, wd, g, T::zero());
    let cols = n * ho * wo;
    let mut y = vec![T::zero(); g.cout * cols];
    T::gemm(g.cout, g.patch(), cols, w, Layout::Normal, &col, Layout::Normal, T::zero(), &mut y);
    let y = channel_major_to_nchw(&y, n, g.cout, ho * wo);
    Ok((Tensor::from_vec(&[n, g.cout, ho, wo], y)?, col))
}

/// Gradients of a convolution: `(∂L/∂w, ∂L/∂x)`.
pub fn conv_backward<T: Real>(
    dy: &Tensor<T>,
    col: &[T],
    w: &[T],
    in_shape: &[usize],
    g: &ConvGeom,
) -> Result<(Vec<T>, Tensor<T>)> {
    let (n, h, wd, ho, wo) = g.check_input(in_shape)?;
    if dy.shape() != [n, g.cout, ho, wo] {
        return Err(Error::shape(format!(
            "upstream {:?} does not match conv output [{n}, {}, {ho}, {wo}]",
            dy.shape(),
            g.cout
        )));
    }
    let cols = n * ho * wo;
    let dyc = nchw_to_channel_major(dy.data(), n, g.cout, ho * wo);
    let mut dw = vec![T::zero(); g.cout * g.patch()];
    T::gemm(g.cout, cols, g.patch(), &dyc, Layout::Normal, col, Layout::Transposed, T::zero(), &mut dw);
    let mut dcol = vec![T::zero(); g.patch() * cols];
    T::gemm(g.patch(), g.cout, cols, w, Layout::Transposed, &dyc, Layout::Normal, T::zero(), &mut dcol);
    let dx = col2im(&dcol, n, h, wd, g);
    Ok((dw, Tensor::from_vec(in_shape, dx)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor<f64>, w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (n, h, wd, ho, wo) = g.check_input(x.shape()).unwrap();
        let k = g.kernel;
        let mut y = vec![0.0; n * g.cout * ho * wo];
        for b in 0..n {
            for co in 0..g.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((b * g.cin + ci) * h + iy as usize) * wd + ix as usize];
                                    acc += xv * w[((co * g.cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        y[((b * g.cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(len: usize, a: f64, b: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 * a + b).sin() * 1.7).round() / 4.0).collect()
    }

    #[test]
    fn matches_direct_convolution() {
        for g in [ConvGeom::new(2, 3, 3, 1, 1), ConvGeom::new(3, 2, 3, 2, 1), ConvGeom::new(4, 5, 1, 1, 0)] {
            let x = Tensor::from_vec(&[2, g.cin, 5, 6], ramp(2 * g.cin * 30, 0.37, 0.1)).unwrap();
            let w = ramp(g.cout * g.patch(), 0.91, 2.0);
            let (y, _) = conv_forward(&x, &w, &g).unwrap();
            assert_eq!(y.data(), naive(&x, &w, &g).as_slice());
        }
    }

    #[test]
    fn backward_is_adjoint() {
        // <conv(x, w), dy> = <x, dx> = <w, dw> for a linear map.
        let g = ConvGeom::new(2, 3, 3, 2, 1);
        let x = Tensor::from_vec(&[2, 2, 5, 5], ramp(100, 0.3, 0.0)).unwrap();
        let w = ramp(3 * 18, 0.7, 1.0);
        let (y, col) = conv_forward(&x, &w, &g).unwrap();
        let dy = Tensor::from_vec(y.shape(), ramp(y.len(), 1.3, 0.5)).unwrap();
        let (dw, dx) = conv_backward(&dy, &col, &w, x.shape(), &g).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(y.data(), dy.data());
        assert!((lhs - dot(x.data(), dx.data())).abs() < 1e-9);
        assert!((lhs - dot(&w, &dw)).abs() < 1e-9);
    }

    #[test]
    fn geometry_errors() {
        let g = ConvGeom::new(2, 3, 3, 1, 0);
        assert!(g.check_input(&[1, 3, 5, 5]).is_err());
        assert!(g.check_input(&[1, 2, 2, 2]).is_err());
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        assert!(conv_forward(&x, &[0.0; 5], &g).is_err());
    }
}
