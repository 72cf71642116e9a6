use lvp_tensor::{Float, Tape, Var};

use crate::{Error, Result};

/// H′×W′ code indices of one frame in raster order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodeGrid {
    pub height: usize,
    pub width: usize,
    pub codes: Vec<usize>,
}

impl CodeGrid {
    pub fn new(height: usize, width: usize, codes: Vec<usize>) -> Result<CodeGrid> {
        if codes.len() != height * width {
            return Err(Error::config(format!(
                "{} codes do not fill a {height}x{width} grid",
                codes.len()
            )));
        }
        Ok(CodeGrid { height, width, codes })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Index of the nearest codebook row for each `dim`-wide vector in
/// `vectors`, by squared Euclidean distance accumulated in f64. Ties go to
/// the lowest index.
pub fn nearest_codes<T: Float>(vectors: &[T], codebook: &[T], dim: usize) -> Result<Vec<usize>> {
    if codebook.is_empty() || dim == 0 {
        return Err(Error::config("cannot quantize against an empty codebook"));
    }
    if codebook.len() % dim != 0 || vectors.len() % dim != 0 {
        return Err(Error::config(format!(
            "vector width {dim} does not divide the codebook ({}) or input ({})",
            codebook.len(),
            vectors.len()
        )));
    }
    let mut out = Vec::with_capacity(vectors.len() / dim);
    for v in vectors.chunks_exact(dim) {
        let mut best = (f64::INFINITY, 0);
        for (k, e) in codebook.chunks_exact(dim).enumerate() {
            let d: f64 = v
                .iter()
                .zip(e)
                .map(|(a, b)| {
                    let t = a.widen() - b.widen();
                    t * t
                })
                .sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        out.push(best.1);
    }
    Ok(out)
}

/// Tape handles produced by [`quantize`].
#[derive(Clone, Debug)]
pub struct Quantized {
    /// Decoder input `[B, N_z, H′, W′]`: codebook values forward, identity
    /// gradient into the encoder backward.
    pub z_q: Var,
    /// Encoder output as `[B·H′·W′, N_z]` rows.
    pub z_e_rows: Var,
    /// Selected codebook rows `[B·H′·W′, N_z]`; gradient reaches the codebook.
    pub e_rows: Var,
    /// Straight-through rows feeding `z_q`, exposed for gradient inspection.
    pub st_rows: Var,
    /// Selected indices, batch-major then raster order.
    pub codes: Vec<usize>,
}

/// Replaces each spatial vector of `z_e: [B, N_z, H′, W′]` by its nearest
/// row of `codebook: [K, N_z]`.
pub fn quantize<T: Float>(tape: &mut Tape<T>, z_e: Var, codebook: Var) -> Result<Quantized> {
    let s = tape.shape(z_e).to_vec();
    let cb = tape.shape(codebook).to_vec();
    if s.len() != 4 || cb.len() != 2 || cb[1] != s[1] {
        return Err(Error::config(format!(
            "cannot quantize {s:?} against a codebook of shape {cb:?}"
        )));
    }
    let (b, nz, h, w) = (s[0], s[1], s[2], s[3]);
    let perm = tape.permute(z_e, &[0, 2, 3, 1])?;
    let z_e_rows = tape.reshape(perm, &[b * h * w, nz])?;
    let codes = nearest_codes(tape.value(z_e_rows).data(), tape.value(codebook).data(), nz)?;
    let e_rows = tape.gather_rows(codebook, &codes)?;
    let detached = tape.stop_gradient(e_rows);
    let st_rows = tape.straight_through(detached, z_e_rows)?;
    let grid = tape.reshape(st_rows, &[b, h, w, nz])?;
    let z_q = tape.permute(grid, &[0, 3, 1, 2])?;
    Ok(Quantized {
        z_q,
        z_e_rows,
        e_rows,
        st_rows,
        codes,
    })
}

#[cfg(test)]
mod tests {
    use lvp_tensor::Tensor;

    use super::*;

    #[test]
    fn hand_distance_example() {
        let idx = nearest_codes(&[0.9f32, 0.8], &[0.0, 0.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn single_code_tiles_everything() {
        let mut tape = Tape::<f32>::new();
        let z = tape.constant(Tensor::from_f64(&[1, 2, 2, 2], &[1., -3., 0., 7., 2., 2., -1., 5.]).unwrap());
        let cb = tape.constant(Tensor::from_f64(&[1, 2], &[0.5, -0.5]).unwrap());
        let q = quantize(&mut tape, z, cb).unwrap();
        assert_eq!(q.codes, vec![0; 4]);
        assert_eq!(tape.value(q.z_q).data(), &[0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5]);
    }

    #[test]
    fn empty_codebook_is_a_config_error() {
        assert!(matches!(nearest_codes::<f32>(&[1.0], &[], 1), Err(Error::Config(_))));
    }

    #[test]
    fn equal_distances_pick_the_lower_index() {
        let idx = nearest_codes(&[0.0f64], &[1.0, -1.0], 1).unwrap();
        assert_eq!(idx, vec![0]);
    }
}
