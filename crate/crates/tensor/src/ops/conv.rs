use crate::error::{Result, TensorError};
use crate::ops::linalg::{gemm, Layout};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel for output position (oy, ox) and kernel tap (i, j), if
    /// it falls inside the unpadded image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, i: usize, j: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + i).checked_sub(self.pad)?;
        let x = (ox * self.stride + j).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    /// Unfolds one image `[C, H, W]` into columns `[C*kh*kw, oh*ow]`.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            cols[row + oy * self.ow + ox] = match self.source(oy, ox, i, j) {
                                Some((y, x)) => img[(c * self.h + y) * self.w + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters columns back, accumulating.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, x)) = self.source(oy, ox, i, j) {
                                img[(c * self.h + y) * self.w + x] += cols[row + oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation of `[B, C, H, W]` with `[O, C, kh, kw]`, zero
    /// padding on all sides, optional per-output-channel bias.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (sx, sw) = (self.shape(), weight.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(TensorError::mismatch("conv2d", sx, sw));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", sx, "stride must be at least 1"));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(TensorError::mismatch("conv2d", sx, sw));
        }
        if let Some(bias) = bias {
            if bias.shape() != [o] {
                return Err(TensorError::mismatch("conv2d", sw, bias.shape()));
            }
        }
        let geo = Geometry {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let (patch, positions) = (geo.patch(), geo.positions());
        let (x, wt) = (self.data_arc(), weight.data_arc());
        let mut out = vec![0.0; b * o * positions];
        let mut cols = vec![0.0; patch * positions];
        for n in 0..b {
            geo.im2col(&x[n * c * h * w..(n + 1) * c * h * w], &mut cols);
            let dst = &mut out[n * o * positions..(n + 1) * o * positions];
            if let Some(bias) = bias {
                for (row, &bv) in dst.chunks_mut(positions).zip(bias.data()) {
                    row.fill(bv);
                }
            }
            gemm(
                o,
                patch,
                positions,
                &wt,
                Layout::Normal,
                &cols,
                Layout::Normal,
                dst,
                bias.is_some(),
            );
        }

        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            "conv2d",
            vec![b, o, geo.oh, geo.ow],
            out,
            inputs,
            move |g, need| {
                let mut gx = need[0].then(|| vec![0.0; b * c * h * w]);
                let mut gw = need[1].then(|| vec![0.0; o * patch]);
                let mut cols = vec![0.0; patch * positions];
                for n in 0..b {
                    let gn = &g[n * o * positions..(n + 1) * o * positions];
                    if let Some(gw) = gw.as_mut() {
                        geo.im2col(&x[n * c * h * w..(n + 1) * c * h * w], &mut cols);
                        gemm(
                            o,
                            positions,
                            patch,
                            gn,
                            Layout::Normal,
                            &cols,
                            Layout::Transposed,
                            gw,
                            true,
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(
                            patch,
                            o,
                            positions,
                            &wt,
                            Layout::Transposed,
                            gn,
                            Layout::Normal,
                            &mut cols,
                            false,
                        );
                        geo.col2im(&cols, &mut gx[n * c * h * w..(n + 1) * c * h * w]);
                    }
                }
                let mut grads = vec![gx, gw];
                if need.len() == 3 {
                    grads.push(need[2].then(|| {
                        let mut gb = vec![0.0; o];
                        for (k, row) in g.chunks(positions).enumerate() {
                            gb[k % o] += row.iter().sum::<f64>();
                        }
                        gb
                    }));
                }
                grads
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[2, 3, 4, 5], |i| (i as f64).sin());
        let mut w = vec![0.0; 9];
        for k in 0..3 {
            w[k * 3 + k] = 1.0;
        }
        let w = Tensor::new(w, &[3, 3, 1, 1]).unwrap();
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn output_size_formula() {
        let x = Tensor::zeros(&[1, 2, 7, 6]);
        let w = Tensor::zeros(&[4, 2, 3, 3]);
        let y = x.conv2d(&w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 3]);
    }

    #[test]
    fn rejects_oversized_kernel_and_zero_stride() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(x.conv2d(&Tensor::zeros(&[1, 1, 3, 3]), None, 1, 0).is_err());
        assert!(x.conv2d(&Tensor::zeros(&[1, 1, 3, 3]), None, 1, 1).is_ok());
        assert!(x.conv2d(&Tensor::zeros(&[1, 1, 1, 1]), None, 0, 0).is_err());
        assert!(x.conv2d(&Tensor::zeros(&[1, 2, 1, 1]), None, 1, 0).is_err());
    }
}
