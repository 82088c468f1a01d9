use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Storage orientation of a row-major operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    /// Stored as the logical `[rows, cols]`.
    Normal,
    /// Stored as `[cols, rows]`; read transposed.
    Transposed,
}

/// `c (m x n) = a (m x k) * b (k x n)`, or `c += ...` when `accumulate`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Batched matrix product `[..., m, k] x [..., k, n] -> [..., m, n]`.
    /// Leading dimensions must be identical.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let ok = sa.len() >= 2
            && sa.len() == sb.len()
            && sa[..sa.len() - 2] == sb[..sb.len() - 2]
            && sa[sa.len() - 1] == sb[sb.len() - 2];
        if !ok {
            return Err(TensorError::mismatch("matmul", sa, sb));
        }
        let r = sa.len();
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let batch: usize = sa[..r - 2].iter().product();
        let (a, b) = (self.data_arc(), other.data_arc());
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a[i * m * k..],
                Layout::Normal,
                &b[i * k * n..],
                Layout::Normal,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        Ok(Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            move |g, need| {
                let ga = need[0].then(|| {
                    let mut ga = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        // dA = dC * B^T
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            Layout::Normal,
                            &b[i * k * n..],
                            Layout::Transposed,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        // dB = A^T * dC
                        gemm(
                            k,
                            m,
                            n,
                            &a[i * m * k..],
                            Layout::Transposed,
                            &g[i * m * n..],
                            Layout::Normal,
                            &mut gb[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Affine map over the last axis: `x [..., in] * w[out, in]^T + b[out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let sx = self.shape();
        let sw = weight.shape();
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[1] {
            return Err(TensorError::mismatch("linear", sx, sw));
        }
        let (fan_in, fan_out) = (sw[1], sw[0]);
        if let Some(b) = bias {
            if b.shape() != [fan_out] {
                return Err(TensorError::mismatch("linear", sw, b.shape()));
            }
        }
        let rows = self.numel() / fan_in;
        let (x, w) = (self.data_arc(), weight.data_arc());
        let mut out = vec![0.0; rows * fan_out];
        if let Some(b) = bias {
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(b.data());
            }
        }
        gemm(
            rows,
            fan_in,
            fan_out,
            &x,
            Layout::Normal,
            &w,
            Layout::Transposed,
            &mut out,
            bias.is_some(),
        );
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op("linear", shape, out, inputs, move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = vec![0.0; rows * fan_in];
                gemm(
                    rows,
                    fan_out,
                    fan_in,
                    g,
                    Layout::Normal,
                    &w,
                    Layout::Normal,
                    &mut gx,
                    false,
                );
                gx
            });
            let gw = need[1].then(|| {
                let mut gw = vec![0.0; fan_out * fan_in];
                gemm(
                    fan_out,
                    rows,
                    fan_in,
                    g,
                    Layout::Transposed,
                    &x,
                    Layout::Normal,
                    &mut gw,
                    false,
                );
                gw
            });
            let mut grads = vec![gx, gw];
            if need.len() == 3 {
                grads.push(need[2].then(|| {
                    let mut gb = vec![0.0; fan_out];
                    for row in g.chunks(fan_out) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                }));
            }
            grads
        }))
    }
}
