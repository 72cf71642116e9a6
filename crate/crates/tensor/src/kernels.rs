//! GEMM and im2col/col2im lowering shared by the matmul and convolution ops.

use crate::{Float, Result, TensorError};

/// `C (m×n) = op(A) · op(B)` (or `+=` when `accumulate`).
///
/// `A` is stored `m×k` row-major, or `k×m` when `trans_a`; likewise `B` is
/// `k×n`, or `n×k` when `trans_b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

/// Geometry of a 2-D cross-correlation from `in_c×h×w` to `out_c×out_h×out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn out_extent(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = size + 2 * pad;
    if stride == 0 {
        return Err(TensorError::config(op, "stride must be positive"));
    }
    if span < k || (span - k) % stride != 0 {
        return Err(TensorError::config(
            op,
            format!(
                "extent {size} with kernel {k}, stride {stride}, padding {pad} gives a non-integral output size"
            ),
        ));
    }
    Ok((span - k) / stride + 1)
}

impl ConvGeometry {
    /// Forward convolution geometry; the output extent must be integral.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        in_c: usize,
        h: usize,
        w: usize,
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let out_h = out_extent("conv2d", h, kh, stride, padding)?;
        let out_w = out_extent("conv2d", w, kw, stride, padding)?;
        Ok(ConvGeometry {
            in_c,
            h,
            w,
            out_c,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    /// Geometry of the convolution whose adjoint maps `out_c×in_h×in_w`
    /// back to `in_c×h×w` (the transposed convolution's output).
    #[allow(clippy::too_many_arguments)]
    pub fn transposed(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let extent = |n: usize, k: usize| -> Result<usize> {
            let full = (n - 1) * stride + k;
            if stride == 0 || full <= 2 * padding {
                return Err(TensorError::config(
                    "conv_transpose2d",
                    format!("input extent {n} with kernel {k}, stride {stride}, padding {padding} gives an empty output"),
                ));
            }
            Ok(full - 2 * padding)
        };
        let h = extent(in_h, kh)?;
        let w = extent(in_w, kw)?;
        // `in_c` here is the conv's output channel count (the transpose's input).
        Self::conv(out_c, h, w, in_c, kh, kw, stride, padding)
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `in_c×h×w` image into a `(in_c·kh·kw) × (out_h·out_w)` matrix.
pub fn im2col<T: Float>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let ow = g.out_w;
    let olen = g.out_len();
    for c in 0..g.in_c {
        let plane = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * olen..(row + 1) * olen];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image buffer.
pub fn col2im<T: Float>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let ow = g.out_w;
    let olen = g.out_len();
    for c in 0..g.in_c {
        let plane = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * olen..(row + 1) * olen];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}
