use crate::kernels::gemm;
use crate::tape::{Backprop, Op};
use crate::{Float, Result, Tape, Tensor, TensorError, Var};

impl<T: Float> Tape<T> {
    /// `[M×K] · [K×N] → [M×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b), rg))
    }

    /// Batched product of `[B×M×K]` and `[B×K×N]`, with either operand
    /// optionally transposed in its last two axes.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(TensorError::shape("bmm", sa, sb));
        }
        let batch = sa[0];
        let (m, k) = if trans_a { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(TensorError::shape("bmm", sa, sb));
        }
        let mut out = vec![T::zero(); batch * m * n];
        let va = self.value(a).data();
        let vb = self.value(b).data();
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &va[i * m * k..(i + 1) * m * k],
                trans_a,
                &vb[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let rg = self.any_grad(&[a, b]);
        let op = Op::Bmm {
            a,
            b,
            trans_a,
            trans_b,
            dims: [batch, m, k, n],
        };
        Ok(self.push(Tensor::from_parts(vec![batch, m, n], out), op, rg))
    }
}

pub(super) fn backward<T: Float>(bp: &mut Backprop<'_, T>, op: &Op<T>, g: &[T]) {
    match *op {
        Op::Matmul(a, b) => {
            let sa = bp.value(a).shape();
            let sb = bp.value(b).shape();
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let va = bp.value(a).data();
            let vb = bp.value(b).data();
            if bp.wants(a) {
                // dA = G · Bᵀ
                gemm(m, n, k, g, false, vb, true, bp.slot(a), true);
            }
            if bp.wants(b) {
                // dB = Aᵀ · G
                gemm(k, m, n, va, true, g, false, bp.slot(b), true);
            }
        }
        Op::Bmm {
            a,
            b,
            trans_a,
            trans_b,
            dims: [batch, m, k, n],
        } => {
            let va = bp.value(a).data();
            let vb = bp.value(b).data();
            if bp.wants(a) {
                let s = bp.slot(a);
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let bi = &vb[i * k * n..(i + 1) * k * n];
                    let si = &mut s[i * m * k..(i + 1) * m * k];
                    if trans_a {
                        // A stored k×m: dA = op(B) · Gᵀ
                        gemm(k, n, m, bi, trans_b, gi, true, si, true);
                    } else {
                        // dA = G · op(B)ᵀ
                        gemm(m, n, k, gi, false, bi, !trans_b, si, true);
                    }
                }
            }
            if bp.wants(b) {
                let s = bp.slot(b);
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &va[i * m * k..(i + 1) * m * k];
                    let si = &mut s[i * k * n..(i + 1) * k * n];
                    if trans_b {
                        // B stored n×k: dB = Gᵀ · op(A)
                        gemm(n, m, k, gi, true, ai, trans_a, si, true);
                    } else {
                        // dB = op(A)ᵀ · G
                        gemm(k, m, n, ai, !trans_a, gi, false, si, true);
                    }
                }
            }
        }
        _ => unreachable!("not a linalg op"),
    }
}
