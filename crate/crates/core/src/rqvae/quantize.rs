use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// One level's codewords, `W × latent_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// 1-based level.
    pub level: usize,
    pub vectors: Array2<f64>,
}

impl Codebook {
    pub fn new(level: usize, vectors: Array2<f64>) -> Result<Self> {
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("codebook level {level}")));
        }
        Ok(Self { level, vectors })
    }

    pub fn size(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Index of the nearest codeword by squared Euclidean distance; the
    /// lowest index wins ties.
    pub fn nearest(&self, r: ArrayView1<f64>) -> (usize, f64) {
        nearest_row(self.vectors.view(), r)
    }
}

pub(crate) fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn nearest_row(rows: ArrayView2<f64>, r: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (w, e) in rows.rows().into_iter().enumerate() {
        let d = squared_distance(r, e);
        if d < best.1 {
            best = (w, d);
        }
    }
    best
}

/// Result of residual quantization of a single latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantization {
    pub codes: Vec<usize>,
    /// `residuals[0] = z`, `residuals[l] = residuals[l-1] - e_{c_l}`.
    pub residuals: Vec<Array1<f64>>,
    pub z_star: Array1<f64>,
}

fn check_dims(dim: usize, codebooks: &[Codebook]) -> Result<()> {
    for cb in codebooks {
        if cb.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "quantizer",
                expected: cb.dim(),
                actual: dim,
            });
        }
    }
    Ok(())
}

/// Coarse-to-fine quantization: each level picks the codeword nearest to the
/// residual left by the previous levels.
pub fn quantize_residual(z: ArrayView1<f64>, codebooks: &[Codebook]) -> Result<Quantization> {
    check_dims(z.len(), codebooks)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent vector".into()));
    }
    let mut codes = Vec::with_capacity(codebooks.len());
    let mut residuals = Vec::with_capacity(codebooks.len() + 1);
    let mut z_star = Array1::zeros(z.len());
    residuals.push(z.to_owned());
    for cb in codebooks {
        let prev = residuals.last().expect("r0 present");
        let (c, _) = cb.nearest(prev.view());
        let e = cb.vectors.row(c);
        let next = prev - &e;
        z_star += &e;
        codes.push(c);
        residuals.push(next);
    }
    Ok(Quantization {
        codes,
        residuals,
        z_star,
    })
}

/// Batched form of [`quantize_residual`]; row `b` of every output belongs to
/// row `b` of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchQuantization {
    /// `codes[b][l]`.
    pub codes: Vec<Vec<usize>>,
    /// `L + 1` matrices, each `B × latent_dim`.
    pub residuals: Vec<Array2<f64>>,
    pub z_star: Array2<f64>,
}

pub fn quantize_batch(z: &Array2<f64>, codebooks: &[Codebook]) -> Result<BatchQuantization> {
    check_dims(z.ncols(), codebooks)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent batch".into()));
    }
    let b = z.nrows();
    let mut codes = vec![Vec::with_capacity(codebooks.len()); b];
    let mut residuals = Vec::with_capacity(codebooks.len() + 1);
    let mut z_star = Array2::zeros(z.raw_dim());
    residuals.push(z.clone());
    for cb in codebooks {
        let prev = residuals.last().expect("r0 present");
        let mut next = prev.clone();
        for row in 0..b {
            let (c, _) = cb.nearest(prev.row(row));
            let e = cb.vectors.row(c);
            next.row_mut(row).scaled_add(-1.0, &e);
            z_star.row_mut(row).scaled_add(1.0, &e);
            codes[row].push(c);
        }
        residuals.push(next);
    }
    Ok(BatchQuantization {
        codes,
        residuals,
        z_star,
    })
}
