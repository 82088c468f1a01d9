use crate::error::{Result, TensorError};
use crate::tensor::{numel, strides, Tensor};

/// Copies `data` (laid out as `shape`) into the axis order given by `perm`.
pub(crate) fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // stride in the source for each output axis
    let src_stride: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    loop {
        out.push(data[offset]);
        // odometer increment over the output index
        let mut axis = rank;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            offset += src_stride[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= src_stride[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

fn check_perm(op: &'static str, shape: &[usize], perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() {
        return Err(TensorError::invalid(
            op,
            shape,
            format!("permutation {perm:?} has wrong rank"),
        ));
    }
    for &p in perm {
        if p >= shape.len() || seen[p] {
            return Err(TensorError::invalid(
                op,
                shape,
                format!("{perm:?} is not a permutation"),
            ));
        }
        seen[p] = true;
    }
    Ok(())
}

impl Tensor {
    /// Same storage under a new shape with identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::mismatch("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op_shared(
            "reshape",
            shape.to_vec(),
            self.data_arc(),
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`. Always copies.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        check_perm("permute", self.shape(), perm)?;
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let out = permute_data(self.data(), self.shape(), perm);
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape_saved = out_shape.clone();
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            out,
            vec![self.clone()],
            move |g, _| vec![Some(permute_data(g, &out_shape_saved, &inverse))],
        ))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(TensorError::invalid(
                "transpose",
                self.shape(),
                format!("axes ({a}, {b})"),
            ));
        }
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Repeats size-1 axes up to `shape`. Ranks must match; this is the only
    /// broadcasting the engine does.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        let src = self.shape();
        if src.len() != shape.len()
            || src.iter().zip(shape).any(|(&s, &t)| s != t && s != 1)
            || shape.contains(&0)
        {
            return Err(TensorError::mismatch("expand", src, shape));
        }
        if src == shape {
            return Ok(self.clone());
        }
        let src_strides = strides(src);
        let eff: Vec<usize> = src
            .iter()
            .zip(&src_strides)
            .map(|(&s, &st)| if s == 1 { 0 } else { st })
            .collect();
        let n = numel(shape);
        let rank = shape.len();
        let source_index = {
            let shape = shape.to_vec();
            move |mut linear: usize| {
                let mut off = 0;
                for axis in (0..rank).rev() {
                    off += (linear % shape[axis]) * eff[axis];
                    linear /= shape[axis];
                }
                off
            }
        };
        let x = self.data();
        let out: Vec<f64> = (0..n).map(|i| x[source_index(i)]).collect();
        let src_n = self.numel();
        Ok(Tensor::from_op(
            "expand",
            shape.to_vec(),
            out,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![0.0; src_n];
                for (i, gv) in g.iter().enumerate() {
                    gx[source_index(i)] += gv;
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(TensorError::invalid(
                "concat",
                base,
                format!("axis {axis} out of range"),
            ));
        }
        for t in tensors {
            let s = t.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::mismatch("concat", base, s));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let chunks: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let row: usize = chunks.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (t, &c) in tensors.iter().zip(&chunks) {
                out.extend_from_slice(&t.data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        Ok(Tensor::from_op(
            "concat",
            shape,
            out,
            tensors.to_vec(),
            move |g, need| {
                let mut starts = Vec::with_capacity(chunks.len());
                let mut acc = 0;
                for &c in &chunks {
                    starts.push(acc);
                    acc += c;
                }
                chunks
                    .iter()
                    .zip(&starts)
                    .zip(need)
                    .map(|((&c, &start), &needed)| {
                        needed.then(|| {
                            let mut gi = Vec::with_capacity(outer * c);
                            for o in 0..outer {
                                gi.extend_from_slice(&g[o * row + start..o * row + start + c]);
                            }
                            gi
                        })
                    })
                    .collect()
            },
        ))
    }

    /// Slice `[start, start + len)` of `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::invalid(
                "narrow",
                shape,
                format!("cannot take [{start}, {}) of axis {axis}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[o * full + start * inner..o * full + (start + len) * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let n = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            out_shape,
            out,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![0.0; n];
                let c = len * inner;
                for o in 0..outer {
                    gx[o * full + start * inner..o * full + start * inner + c]
                        .copy_from_slice(&g[o * c..(o + 1) * c]);
                }
                vec![Some(gx)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_moves_elements() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let y = x.permute(&[1, 0, 2]).unwrap();
        assert_eq!(y.shape(), &[3, 2, 4]);
        // element (b=1, n=2, s=3) -> (2, 1, 3)
        assert_eq!(y.data()[(2 * 2 + 1) * 4 + 3], x.data()[(3 + 2) * 4 + 3]);
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn expand_repeats_and_validates() {
        let x = Tensor::new(vec![1.0, 2.0], &[2, 1]).unwrap();
        let y = x.expand(&[2, 3]).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(x.expand(&[3, 3]).is_err());
        assert!(x.expand(&[2]).is_err());
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = Tensor::from_fn(&[2, 1, 3], |i| i as f64);
        let b = Tensor::from_fn(&[2, 2, 3], |i| 100.0 + i as f64);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.narrow(1, 0, 1).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 1, 2).unwrap().data(), b.data());
        assert!(c.narrow(1, 2, 2).is_err());
        assert!(Tensor::concat(&[a, Tensor::zeros(&[3, 1, 3])], 1).is_err());
    }

    #[test]
    fn reshape_shares_storage() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64);
        let y = x.reshape(&[3, 2]).unwrap();
        assert_eq!(x.data().as_ptr(), y.data().as_ptr());
        assert!(x.reshape(&[4, 2]).is_err());
    }
}
