//! Convolutions via explicit im2col + GEMM.

use crate::kernels::{col2im, gemm, im2col, ConvGeometry};
use crate::tape::{Backprop, Op};
use crate::{Float, Result, Tape, Tensor, TensorError, Var};

impl<T: Float> Tape<T> {
    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [channels] {
                return Err(TensorError::shape(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    /// Cross-correlation of `[B×C×H×W]` with `[O×C×kh×kw]`, plus an
    /// optional per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let si = self.shape(input);
        let sk = self.shape(kernel);
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(TensorError::shape("conv2d", si, sk));
        }
        let batch = si[0];
        let geom = ConvGeometry::conv(si[1], si[2], si[3], sk[0], sk[2], sk[3], stride, padding)?;
        self.check_bias("conv2d", bias, geom.out_c)?;

        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let (plen, olen) = (geom.patch_len(), geom.out_len());
        let in_len = geom.in_c * geom.h * geom.w;
        let out_img = geom.out_c * olen;
        let mut cols = vec![T::zero(); plen * olen];
        let mut out = vec![T::zero(); batch * out_img];
        for b in 0..batch {
            im2col(&geom, &x[b * in_len..(b + 1) * in_len], &mut cols);
            let dst = &mut out[b * out_img..(b + 1) * out_img];
            gemm(geom.out_c, plen, olen, k, false, &cols, false, dst, false);
        }
        if let Some(bv) = bias {
            add_channel_bias(&mut out, self.value(bv).data(), olen);
        }
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        let shape = vec![batch, geom.out_c, geom.out_h, geom.out_w];
        let op = Op::Conv2d {
            input,
            kernel,
            bias,
            geom,
            batch,
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, rg))
    }

    /// Exact adjoint of [`Tape::conv2d`] with the same kernel layout:
    /// `[B×O×H'×W']` with kernel `[O×C×kh×kw]` gives `[B×C×H×W]` where
    /// `H = (H'−1)·stride − 2·padding + kh`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let si = self.shape(input);
        let sk = self.shape(kernel);
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[0] {
            return Err(TensorError::shape("conv_transpose2d", si, sk));
        }
        let batch = si[0];
        let geom = ConvGeometry::transposed(sk[0], si[2], si[3], sk[1], sk[2], sk[3], stride, padding)?;
        self.check_bias("conv_transpose2d", bias, geom.in_c)?;

        let y = self.value(input).data();
        let k = self.value(kernel).data();
        let (plen, olen) = (geom.patch_len(), geom.out_len());
        let in_img = geom.out_c * olen;
        let out_img = geom.in_c * geom.h * geom.w;
        let mut cols = vec![T::zero(); plen * olen];
        let mut out = vec![T::zero(); batch * out_img];
        for b in 0..batch {
            gemm(plen, geom.out_c, olen, k, true, &y[b * in_img..(b + 1) * in_img], false, &mut cols, false);
            col2im(&geom, &cols, &mut out[b * out_img..(b + 1) * out_img]);
        }
        if let Some(bv) = bias {
            add_channel_bias(&mut out, self.value(bv).data(), geom.h * geom.w);
        }
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        let shape = vec![batch, geom.in_c, geom.h, geom.w];
        let op = Op::ConvTranspose2d {
            input,
            kernel,
            bias,
            geom,
            batch,
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, rg))
    }
}

fn add_channel_bias<T: Float>(out: &mut [T], bias: &[T], plane: usize) {
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[i % bias.len()];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_bias_grad<T: Float>(g: &[T], slot: &mut [T], plane: usize) {
    let c = slot.len();
    for (i, chunk) in g.chunks(plane).enumerate() {
        slot[i % c] += chunk.iter().copied().sum::<T>();
    }
}

pub(super) fn backward<T: Float>(bp: &mut Backprop<'_, T>, op: &Op<T>, g: &[T]) {
    match *op {
        Op::Conv2d {
            input,
            kernel,
            bias,
            geom,
            batch,
        } => {
            let (plen, olen) = (geom.patch_len(), geom.out_len());
            let in_len = geom.in_c * geom.h * geom.w;
            let out_img = geom.out_c * olen;
            let x = bp.value(input).data();
            let k = bp.value(kernel).data();
            let mut cols = vec![T::zero(); plen * olen];
            if bp.wants(kernel) {
                for b in 0..batch {
                    im2col(&geom, &x[b * in_len..(b + 1) * in_len], &mut cols);
                    let gb = &g[b * out_img..(b + 1) * out_img];
                    gemm(geom.out_c, olen, plen, gb, false, &cols, true, bp.slot(kernel), true);
                }
            }
            if bp.wants(input) {
                for b in 0..batch {
                    let gb = &g[b * out_img..(b + 1) * out_img];
                    gemm(plen, geom.out_c, olen, k, true, gb, false, &mut cols, false);
                    col2im(&geom, &cols, &mut bp.slot(input)[b * in_len..(b + 1) * in_len]);
                }
            }
            if let Some(bv) = bias.filter(|&bv| bp.wants(bv)) {
                channel_bias_grad(g, bp.slot(bv), olen);
            }
        }
        Op::ConvTranspose2d {
            input,
            kernel,
            bias,
            geom,
            batch,
        } => {
            let (plen, olen) = (geom.patch_len(), geom.out_len());
            let in_img = geom.out_c * olen;
            let out_img = geom.in_c * geom.h * geom.w;
            let y = bp.value(input).data();
            let k = bp.value(kernel).data();
            let mut cols = vec![T::zero(); plen * olen];
            let want_k = bp.wants(kernel);
            let want_y = bp.wants(input);
            if want_k || want_y {
                for b in 0..batch {
                    im2col(&geom, &g[b * out_img..(b + 1) * out_img], &mut cols);
                    if want_y {
                        let dst = &mut bp.slot(input)[b * in_img..(b + 1) * in_img];
                        gemm(geom.out_c, plen, olen, k, false, &cols, false, dst, true);
                    }
                    if want_k {
                        let yb = &y[b * in_img..(b + 1) * in_img];
                        gemm(geom.out_c, olen, plen, yb, false, &cols, true, bp.slot(kernel), true);
                    }
                }
            }
            if let Some(bv) = bias.filter(|&bv| bp.wants(bv)) {
                channel_bias_grad(g, bp.slot(bv), geom.h * geom.w);
            }
        }
        _ => unreachable!("not a conv op"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_one_by_one_kernel_sums_channels() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2, 2, 2], &[1., 2., 3., 4., 10., 20., 30., 40.]).unwrap());
        let k = tape.constant(Tensor::ones(&[1, 2, 1, 1]));
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[11., 22., 33., 44.]);
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 5, 5], 0.5));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn transpose_with_unit_kernel_is_identity() {
        let mut tape = Tape::<f32>::new();
        let data: Vec<f64> = (0..18).map(|v| v as f64).collect();
        let x = tape.constant(Tensor::from_f64(&[2, 1, 3, 3], &data).unwrap());
        let k = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = tape.conv_transpose2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn non_integral_output_is_config_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 6, 6]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(
            tape.conv2d(x, k, None, 2, 0),
            Err(TensorError::Config { .. })
        ));
    }

    #[test]
    fn bias_is_per_output_channel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 1, 2, 2]));
        let k = tape.constant(Tensor::zeros(&[3, 1, 1, 1]));
        let b = tape.param(Tensor::from_f64(&[3], &[1., 2., 3.]).unwrap());
        let y = tape.conv2d(x, k, Some(b), 1, 0).unwrap();
        assert_eq!(&tape.value(y).data()[..12], &[1., 1., 1., 1., 2., 2., 2., 2., 3., 3., 3., 3.]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[8., 8., 8.]);
    }
}
