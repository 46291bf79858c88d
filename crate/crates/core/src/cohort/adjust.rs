use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::BinaryFeatureTensor;

/// Removes the part of each embedding that is a linear function of the
/// episode's static one-hot columns. Demographic columns are replicated over
/// every hour, so the autoencoder devotes whole embedding directions to them
/// and a mixture fit on raw embeddings splits patients by demographics
/// rather than by physiology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticAdjustment {
    /// Static column ids seen in training, in design-matrix order.
    pub columns: Vec<u32>,
    /// `(1 + columns.len())` rows of length `dim`; row 0 is the intercept.
    pub coefficients: Vec<Vec<f64>>,
    pub dim: usize,
}

const RIDGE: f64 = 1e-8;

/// Active static columns of a tensor (columns at or past `static_offset`).
pub fn static_columns(t: &BinaryFeatureTensor, static_offset: usize) -> Vec<u32> {
    t.active
        .first()
        .map(|row| row.iter().copied().filter(|&c| c as usize >= static_offset).collect())
        .unwrap_or_default()
}

impl StaticAdjustment {
    /// Least-squares fit of `embeddings` on an intercept plus static
    /// indicators. One-hot groups are collinear with the intercept, so a
    /// tiny ridge keeps the normal equations solvable.
    pub fn fit(statics: &[Vec<u32>], embeddings: &[Vec<f64>]) -> Result<Self> {
        if statics.len() != embeddings.len() {
            return Err(Error::shape(format!("{} static rows", embeddings.len()), statics.len().to_string()));
        }
        let dim = embeddings.first().map(Vec::len).ok_or_else(|| Error::InsufficientData("no embeddings".into()))?;
        if embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::invalid("embeddings of unequal length"));
        }
        let mut columns: Vec<u32> = statics.iter().flatten().copied().collect();
        columns.sort_unstable();
        columns.dedup();
        let p = columns.len() + 1;
        let n = embeddings.len();

        let mut design = DMatrix::<f64>::zeros(n, p);
        for (i, s) in statics.iter().enumerate() {
            design[(i, 0)] = 1.0;
            for c in s {
                let j = columns.binary_search(c).expect("column collected above");
                design[(i, j + 1)] = 1.0;
            }
        }
        let y = DMatrix::from_fn(n, dim, |i, j| embeddings[i][j]);
        let mut gram = design.transpose() * &design;
        let scale = (gram.trace() / p as f64).max(1.0);
        for j in 0..p {
            gram[(j, j)] += RIDGE * scale;
        }
        let rhs = design.transpose() * y;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("static design matrix is not positive definite".into()))?;
        let beta = chol.solve(&rhs);
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite static adjustment".into()));
        }
        let coefficients = (0..p).map(|r| beta.row(r).iter().copied().collect()).collect();
        Ok(Self { columns, coefficients, dim })
    }

    /// An adjustment that leaves embeddings unchanged.
    pub fn identity(dim: usize) -> Self {
        Self { columns: Vec::new(), coefficients: vec![vec![0.0; dim]], dim }
    }

    /// Embedding minus its fitted static component. Columns unseen in
    /// training contribute nothing.
    pub fn apply(&self, statics: &[u32], embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.dim {
            return Err(Error::shape(self.dim.to_string(), embedding.len().to_string()));
        }
        let mut out = DVector::from_column_slice(embedding);
        let mut sub = |row: &[f64]| {
            for (o, b) in out.iter_mut().zip(row) {
                *o -= b;
            }
        };
        sub(&self.coefficients[0]);
        for c in statics {
            if let Ok(j) = self.columns.binary_search(c) {
                sub(&self.coefficients[j + 1]);
            }
        }
        Ok(out.iter().copied().collect())
    }

    pub fn apply_all(&self, statics: &[Vec<u32>], embeddings: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if statics.len() != embeddings.len() {
            return Err(Error::shape(format!("{} static rows", embeddings.len()), statics.len().to_string()));
        }
        statics.iter().zip(embeddings).map(|(s, e)| self.apply(s, e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn removes_additive_static_effects() {
        let mut rng = seed::rng(4);
        let effect = |c: u32| [0.0, 3.0, -2.0, 5.0, 1.5][c as usize - 10];
        let mut statics = Vec::new();
        let mut emb = Vec::new();
        let mut noise = Vec::new();
        for _ in 0..400 {
            let g = 10 + rng.random_range(0..2u32);
            let a = 12 + rng.random_range(0..3u32);
            let e: f64 = rng.random_range(-1.0..1.0);
            statics.push(vec![g, a]);
            emb.push(vec![0.7 + effect(g) + effect(a) + e, e]);
            noise.push(e);
        }
        let adj = StaticAdjustment::fit(&statics, &emb).unwrap();
        let out = adj.apply_all(&statics, &emb).unwrap();
        let m = noise.iter().sum::<f64>() / noise.len() as f64;
        for (o, e) in out.iter().zip(&noise) {
            // The residual of the first coordinate is the noise up to the
            // noise's projection on the design, which is small here.
            assert!((o[0] - (e - m)).abs() < 0.15, "{o:?} {e}");
        }
        // Residuals are orthogonal to every indicator.
        for c in &adj.columns {
            let s: f64 = out.iter().zip(&statics).filter(|(_, st)| st.contains(c)).map(|(o, _)| o[0]).sum();
            assert!(s.abs() < 1e-5, "{c}: {s}");
        }
    }

    #[test]
    fn no_statics_means_centering() {
        let emb = vec![vec![1.0, 2.0], vec![3.0, 6.0]];
        let adj = StaticAdjustment::fit(&[vec![], vec![]], &emb).unwrap();
        let out = adj.apply_all(&[vec![], vec![]], &emb).unwrap();
        for (o, want) in out.iter().zip([[-1.0, -2.0], [1.0, 2.0]]) {
            assert!((o[0] - want[0]).abs() < 1e-6 && (o[1] - want[1]).abs() < 1e-6);
        }
        assert_eq!(StaticAdjustment::identity(2).apply(&[7], &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert!(adj.apply(&[], &[1.0]).is_err());
    }

    #[test]
    fn reads_statics_from_tensor() {
        let t = BinaryFeatureTensor { hours: 2, columns: 8, active: vec![vec![1, 3, 6, 7], vec![2, 6, 7]] };
        assert_eq!(static_columns(&t, 6), vec![6, 7]);
    }
}
