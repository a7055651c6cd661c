use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use rayon::prelude::*;

pub fn squared_euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    Zip::from(&a).and(&b).fold(0.0, |acc, x, y| {
        let d = x - y;
        acc + d * d
    })
}

/// `out[i, j] = |a_i - b_j|^2`, rows computed in parallel.
pub fn pairwise_squared_euclidean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "dimension mismatch");
    let rows: Vec<Vec<f64>> = (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            b.outer_iter().map(|bj| squared_euclidean(ai, bj)).collect()
        })
        .collect();
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}
