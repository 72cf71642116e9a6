use crate::tape::{Backprop, Op};
use crate::{Float, Result, Tape, Tensor, TensorError, Var};

const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Float> Tape<T> {
    /// Normalises over the trailing axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let sx = self.shape(x);
        let d = *sx.last().ok_or_else(|| TensorError::config("layer_norm", "scalar input"))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(TensorError::shape("layer_norm", sx, self.shape(p)));
            }
        }
        let xv = self.value(x);
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.numel() / d;
        let mut out = Vec::with_capacity(xv.numel());
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let inv_d = T::cast(1.0 / d as f64);
        for row in xv.data().chunks(d) {
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let r = T::one() / (var + T::cast(LAYER_NORM_EPS)).sqrt();
            out.extend(row.iter().zip(gv).zip(bv).map(|((&v, &g), &b)| (v - mu) * r * g + b));
            mean.push(mu);
            rstd.push(r);
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            mean,
            rstd,
        };
        Ok(self.push(out, op, rg))
    }

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::config(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let xv = self.value(x).data();
        if xv.iter().any(|v| v.is_nan()) {
            return Err(TensorError::Numeric {
                op: "softmax",
                msg: "NaN input".into(),
            });
        }
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let mut max = T::neg_infinity();
                for j in 0..len {
                    max = max.max(xv[idx(j)]);
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (xv[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                let inv = T::one() / sum;
                for j in 0..len {
                    out[idx(j)] *= inv;
                }
            }
        }
        let rg = self.any_grad(&[x]);
        let op = Op::Softmax {
            x,
            outer,
            len,
            inner,
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, rg))
    }

    /// `softmax(scale · x)` over keys `j ≤ i` of each row `i` of the trailing
    /// `L×L` block, with zeros above the diagonal. Equal to `scale`, then
    /// `causal_mask`, then `softmax` over the last axis, in one pass.
    pub fn causal_softmax(&mut self, x: Var, scale: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[shape.len() - 1] != shape[shape.len() - 2] {
            return Err(TensorError::config(
                "causal_softmax",
                format!("needs a square trailing block, got {shape:?}"),
            ));
        }
        let l = shape[shape.len() - 1];
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for (xb, ob) in xv.chunks(l * l).zip(out.chunks_mut(l * l)) {
            for i in 0..l {
                let row = &xb[i * l..i * l + i + 1];
                let orow = &mut ob[i * l..i * l + i + 1];
                let mut max = T::neg_infinity();
                for &v in row {
                    if v.is_nan() {
                        return Err(TensorError::Numeric {
                            op: "causal_softmax",
                            msg: "NaN input".into(),
                        });
                    }
                    max = max.max(v * scale);
                }
                let mut sum = T::zero();
                for (o, &v) in orow.iter_mut().zip(row) {
                    let e = (v * scale - max).exp();
                    *o = e;
                    sum += e;
                }
                let inv = T::one() / sum;
                orow.iter_mut().for_each(|o| *o *= inv);
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::CausalSoftmax { x, scale }, rg))
    }

    /// Sets entries above the diagonal of the trailing `L×L` block to −∞, so
    /// a following softmax over the last axis only sees keys `j ≤ i`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(TensorError::config(
                "causal_mask",
                format!("needs a square trailing block, got {s:?}"),
            ));
        }
        let l = s[s.len() - 1];
        let mut out = self.value(x).clone();
        for block in out.data_mut().chunks_mut(l * l) {
            for i in 0..l {
                block[i * l + i + 1..(i + 1) * l]
                    .iter_mut()
                    .for_each(|v| *v = T::neg_infinity());
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::CausalMask(x), rg))
    }

    /// Mean negative log-likelihood of integer `targets` under row-wise
    /// softmax of `logits: [N×V]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::shape("cross_entropy", s, &[targets.len()]));
        }
        let (n, v) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: bad,
                bound: v,
            });
        }
        let lv = self.value(logits).data();
        if lv.iter().any(|x| x.is_nan()) {
            return Err(TensorError::Numeric {
                op: "cross_entropy",
                msg: "NaN logit".into(),
            });
        }
        let mut probs = vec![T::zero(); n * v];
        let mut total = 0.0f64;
        for (r, (row, &t)) in lv.chunks(v).zip(targets).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            let p = &mut probs[r * v..(r + 1) * v];
            for (p, &x) in p.iter_mut().zip(row) {
                *p = (x - max).exp();
                sum += *p;
            }
            let inv = T::one() / sum;
            p.iter_mut().for_each(|p| *p *= inv);
            total += (sum.ln() + max - row[t]).widen();
        }
        let loss = Tensor::scalar(T::cast(total / n as f64));
        let rg = self.any_grad(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(loss, op, rg))
    }

    /// `x / (‖x‖ + eps)` along the trailing axis.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        let d = *self
            .shape(x)
            .last()
            .ok_or_else(|| TensorError::config("l2_normalize", "scalar input"))?;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let inv = T::one() / (norm + eps);
            out.extend(row.iter().map(|&v| v * inv));
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::L2Normalize { x, eps }, rg))
    }
}

pub(super) fn backward<T: Float>(bp: &mut Backprop<'_, T>, op: &Op<T>, out: &Tensor<T>, g: &[T]) {
    match op {
        Op::LayerNorm {
            x,
            gamma,
            beta,
            mean,
            rstd,
        } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let xv = bp.value(x).data();
            let gv = bp.value(gamma).data();
            let d = gv.len();
            let inv_d = T::cast(1.0 / d as f64);
            if bp.wants(gamma) || bp.wants(beta) {
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for (r, (row, grow)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                    for j in 0..d {
                        let xhat = (row[j] - mean[r]) * rstd[r];
                        dg[j] += grow[j] * xhat;
                        db[j] += grow[j];
                    }
                }
                bp.accumulate(gamma, &dg);
                bp.accumulate(beta, &db);
            }
            if bp.wants(x) {
                let s = bp.slot(x);
                for (r, ((row, grow), srow)) in xv.chunks(d).zip(g.chunks(d)).zip(s.chunks_mut(d)).enumerate() {
                    let mut sum_gy = T::zero();
                    let mut sum_gy_xhat = T::zero();
                    for j in 0..d {
                        let gy = grow[j] * gv[j];
                        let xhat = (row[j] - mean[r]) * rstd[r];
                        sum_gy += gy;
                        sum_gy_xhat += gy * xhat;
                    }
                    for j in 0..d {
                        let gy = grow[j] * gv[j];
                        let xhat = (row[j] - mean[r]) * rstd[r];
                        srow[j] += rstd[r] * (gy - inv_d * sum_gy - xhat * inv_d * sum_gy_xhat);
                    }
                }
            }
        }
        Op::Softmax {
            x,
            outer,
            len,
            inner,
        } => {
            let (x, outer, len, inner) = (*x, *outer, *len, *inner);
            if !bp.wants(x) {
                return;
            }
            let y = out.data();
            let s = bp.slot(x);
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for j in 0..len {
                        let k = base + j * inner;
                        dot += g[k] * y[k];
                    }
                    for j in 0..len {
                        let k = base + j * inner;
                        s[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        }
        Op::CausalSoftmax { x, scale } => {
            let (x, scale) = (*x, *scale);
            if !bp.wants(x) {
                return;
            }
            let shape = bp.value(x).shape();
            let l = shape[shape.len() - 1];
            let y = out.data();
            let s = bp.slot(x);
            for ((sb, gb), yb) in s.chunks_mut(l * l).zip(g.chunks(l * l)).zip(y.chunks(l * l)) {
                for i in 0..l {
                    let r = i * l..i * l + i + 1;
                    let (srow, grow, yrow) = (&mut sb[r.clone()], &gb[r.clone()], &yb[r]);
                    let dot = grow.iter().zip(yrow).fold(T::zero(), |a, (&g, &y)| a + g * y);
                    for ((sv, &gv), &yv) in srow.iter_mut().zip(grow).zip(yrow) {
                        *sv += scale * yv * (gv - dot);
                    }
                }
            }
        }
        Op::CausalMask(x) => {
            let x = *x;
            if !bp.wants(x) {
                return;
            }
            let shape = bp.value(x).shape();
            let l = shape[shape.len() - 1];
            let s = bp.slot(x);
            for (sb, gb) in s.chunks_mut(l * l).zip(g.chunks(l * l)) {
                for i in 0..l {
                    for j in 0..=i {
                        sb[i * l + j] += gb[i * l + j];
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let logits = *logits;
            if !bp.wants(logits) {
                return;
            }
            let n = targets.len();
            let v = probs.len() / n;
            let scale = g[0] / T::cast(n as f64);
            let s = bp.slot(logits);
            for (r, &t) in targets.iter().enumerate() {
                let row = &mut s[r * v..(r + 1) * v];
                for (sv, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                    *sv += scale * p;
                }
                row[t] -= scale;
            }
        }
        Op::L2Normalize { x, eps } => {
            let (x, eps) = (*x, *eps);
            if !bp.wants(x) {
                return;
            }
            let xv = bp.value(x);
            let d = *xv.shape().last().unwrap();
            let s = bp.slot(x);
            for ((row, grow), srow) in xv.data().chunks(d).zip(g.chunks(d)).zip(s.chunks_mut(d)) {
                let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                let den = norm + eps;
                let gx: T = grow.iter().zip(row).map(|(&a, &b)| a * b).sum();
                let coef = if norm > T::zero() {
                    gx / (norm * den * den)
                } else {
                    T::zero()
                };
                for j in 0..d {
                    srow[j] += grow[j] / den - row[j] * coef;
                }
            }
        }
        _ => unreachable!("not an nn op"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_softmax() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[4]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_is_shift_invariant_and_sums_to_one() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::from_f64(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 3.0, -1.0]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[2, 3], &[101.0, 98.0, 100.5, 103.0, 103.0, 99.0]).unwrap());
        let ya = tape.softmax(a, 1).unwrap();
        let yb = tape.softmax(b, 1).unwrap();
        for (p, q) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((p - q).abs() < 1e-6);
            assert!(*p > 0.0 && *p < 1.0);
        }
        for row in tape.value(ya).data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[2], &[0.0, f64::NAN]).unwrap());
        assert!(matches!(tape.softmax(x, 0), Err(TensorError::Numeric { .. })));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_v() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[3, 8]));
        let l = tape.cross_entropy(x, &[0, 5, 7]).unwrap();
        assert!((tape.value(l).item() - 8f64.ln()).abs() < 1e-12);
        assert!((tape.value(l).item() - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_with_large_margin_is_near_zero() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[2, 3], &[50.0, 0.0, 0.0, 0.0, 0.0, 50.0]).unwrap());
        let l = tape.cross_entropy(x, &[0, 2]).unwrap();
        assert!(tape.value(l).item() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        assert_eq!(
            tape.cross_entropy(x, &[4]).unwrap_err(),
            TensorError::Index {
                op: "cross_entropy",
                index: 4,
                bound: 4
            }
        );
    }

    #[test]
    fn causal_mask_then_softmax_ignores_future() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2, 2], &[0.0, 9.0, 1.0, 1.0]).unwrap());
        let m = tape.causal_mask(x).unwrap();
        let p = tape.softmax(m, 2).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 0.0, 0.5, 0.5]);
    }
}
