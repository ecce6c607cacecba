use nalgebra::DMatrix;

use crate::error::{CoreError, Result};

/// Principal directions of a blendshape set.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionPca {
    /// 3N × target_dim orthonormal columns, by decreasing explained variance.
    pub basis: DMatrix<f64>,
    /// Mean squared projection of the input columns onto each direction.
    pub explained_variance: Vec<f64>,
}

/// Compresses an over-complete blendshape set (one blendshape per column) to
/// its `target_dim` leading principal directions.
///
/// Blendshapes are displacements from the neutral face, so the analysis is
/// uncentred: the neutral face is the origin of the subspace.
pub fn compress_expression_basis(raw: &DMatrix<f64>, target_dim: usize) -> Result<ExpressionPca> {
    let k = raw.ncols();
    if target_dim == 0 || target_dim > k {
        return Err(CoreError::Dimensions(format!(
            "target dimension {target_dim} must be in 1..={k}"
        )));
    }
    if raw.nrows() < target_dim {
        return Err(CoreError::Dimensions(format!(
            "{} rows cannot hold {target_dim} orthonormal columns",
            raw.nrows()
        )));
    }
    let svd = raw.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| CoreError::Dimensions("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut basis = DMatrix::zeros(raw.nrows(), target_dim);
    let mut explained_variance = Vec::with_capacity(target_dim);
    for (j, &src) in order.iter().take(target_dim).enumerate() {
        let mut col = u.column(src).clone_owned();
        // Sign convention: the largest-magnitude entry is positive.
        if col[col.iamax()] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(j, &col);
        let s = svd.singular_values[src];
        explained_variance.push(s * s / k as f64);
    }
    Ok(ExpressionPca {
        basis,
        explained_variance,
    })
}
