use crate::tape::{Backprop, Op};
use crate::tensor::numel;
use crate::{Float, Result, Tape, Tensor, TensorError, Var};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Writes `src` (shaped `shape`) permuted by `perm` into `dst`, or, with
/// `inverse`, scatters back the other way (adding into `dst`).
fn permute_into<T: Float>(src: &[T], shape: &[usize], perm: &[usize], dst: &mut [T], inverse: bool) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // Stride in the source for each output axis.
    let walk: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src_off = 0usize;
    for out_off in 0..src.len() {
        if inverse {
            dst[src_off] += src[out_off];
        } else {
            dst[out_off] = src[src_off];
        }
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src_off += walk[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src_off -= walk[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

impl<T: Float> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::config(
                "permute",
                format!("{perm:?} is not a permutation of the axes of {shape:?}"),
            ));
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        permute_into(src, &shape, perm, &mut out, false);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let rg = self.any_grad(&[x]);
        let op = Op::Permute {
            x,
            perm: perm.to_vec(),
        };
        Ok(self.push(Tensor::from_parts(out_shape, out), op, rg))
    }

    /// Embedding lookup: rows of `table: [V×D]` selected by `ids`, giving `[n×D]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(TensorError::config(
                "gather_rows",
                format!("table must be 2-D, got {s:?}"),
            ));
        }
        let (v, d) = (s[0], s[1]);
        if ids.is_empty() {
            return Err(TensorError::config("gather_rows", "no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::Index {
                op: "gather_rows",
                index: bad,
                bound: v,
            });
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.any_grad(&[table]);
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.push(Tensor::from_parts(vec![ids.len(), d], out), op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|v| v.widen()).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::cast(total)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total: f64 = v.data().iter().map(|v| v.widen()).sum();
        let n = v.numel() as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::cast(total / n)), Op::Mean(x), rg)
    }

    /// Forward identity whose output never carries gradient back to `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let out = self.value(x).clone();
        self.push(out, Op::Leaf, false)
    }

    /// Forward value of `value`, backward identity into `through`.
    ///
    /// This is the vector-quantisation estimator: the decoder sees the exact
    /// codebook rows while the encoder output receives their gradient.
    pub fn straight_through(&mut self, value: Var, through: Var) -> Result<Var> {
        if self.shape(value) != self.shape(through) {
            return Err(TensorError::shape(
                "straight_through",
                self.shape(value),
                self.shape(through),
            ));
        }
        let out = self.value(value).clone();
        let rg = self.any_grad(&[through]);
        Ok(self.push(out, Op::StraightThrough { through }, rg))
    }

    /// Mean of squared differences, a convenience composite.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }
}

pub(super) fn backward<T: Float>(bp: &mut Backprop<'_, T>, op: &Op<T>, g: &[T]) {
    match op {
        Op::Reshape(x) => bp.accumulate(*x, g),
        Op::StraightThrough { through } => bp.accumulate(*through, g),
        Op::Permute { x, perm } => {
            if bp.wants(*x) {
                let shape = bp.value(*x).shape();
                permute_into(g, shape, perm, bp.slot(*x), true);
            }
        }
        Op::Gather { table, ids } => {
            if bp.wants(*table) {
                let d = bp.value(*table).shape()[1];
                let s = bp.slot(*table);
                for (r, &i) in ids.iter().enumerate() {
                    s[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(a, &b)| *a += b);
                }
            }
        }
        Op::Sum(x) | Op::Mean(x) => {
            if bp.wants(*x) {
                let n = numel(bp.value(*x).shape());
                let d = match op {
                    Op::Mean(_) => g[0] / T::cast(n as f64),
                    _ => g[0],
                };
                bp.slot(*x).iter_mut().for_each(|v| *v += d);
            }
        }
        _ => unreachable!("not a shape op"),
    }
}
