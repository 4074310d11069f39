//! Eigendecomposition route to the same filter the Chebyshev recurrence
//! computes, used to cross-check [`super::cheb_conv`].
//!
//! `L = U Λ Uᵀ`, and each hop term becomes `U T_k(Λ - I) Uᵀ X`, with the
//! polynomial evaluated in closed form as `cos(k · arccos λ)`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use super::{Activation, ChebLayerParams, GraphOperator};
use crate::error::{Error, Result};

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Eigenvalues of the Laplacian, ascending.
pub fn laplacian_spectrum(graph: &GraphOperator) -> Vec<f64> {
    let eig = SymmetricEigen::new(to_dmatrix(&graph.laplacian));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn chebyshev_closed_form(k: usize, x: f64) -> f64 {
    (k as f64 * x.clamp(-1.0, 1.0).acos()).cos()
}

/// Dense spectral evaluation of a Chebyshev layer.
pub fn spectral_cheb_conv(
    x: ArrayView2<'_, f64>,
    graph: &GraphOperator,
    p: &ChebLayerParams,
    act: Activation,
) -> Result<Array2<f64>> {
    p.validate()?;
    if x.nrows() != graph.n || x.ncols() != p.in_dim() {
        return Err(Error::shape(
            "X",
            format!("{}x{}", graph.n, p.in_dim()),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    let eig = SymmetricEigen::new(to_dmatrix(&graph.laplacian));
    let u = &eig.eigenvectors;
    let xm = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]]);
    let ut_x = u.transpose() * &xm;
    let mut out = DMatrix::<f64>::zeros(graph.n, p.out_dim());
    for (k, w) in p.weights.iter().enumerate() {
        let mut filtered = ut_x.clone();
        for (i, lambda) in eig.eigenvalues.iter().enumerate() {
            let gain = chebyshev_closed_form(k, lambda - 1.0);
            filtered.row_mut(i).scale_mut(gain);
        }
        out += u * filtered * to_dmatrix(w);
    }
    let bias = Array1::from(p.bias.to_vec());
    Ok(Array2::from_shape_fn((graph.n, p.out_dim()), |(i, j)| {
        act.apply(out[(i, j)] + bias[j])
    }))
}
