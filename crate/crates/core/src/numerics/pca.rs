use nalgebra::{DMatrix, SymmetricEigen};

use super::Matrix;
use crate::error::{Error, Result};

/// Projects rows onto their two leading principal components.
///
/// Each component's sign is fixed so its largest-magnitude loading is
/// positive, which makes the output a pure function of the input. Missing
/// components (fewer than two columns, or rank below two) project to zero.
pub fn project_2d(x: &Matrix) -> Result<Vec<[f64; 2]>> {
    let (n, m) = x.shape();
    if n == 0 {
        return Err(Error::Empty("project_2d"));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite {
            primitive: "project_2d",
        });
    }
    let mut mean = vec![0.0; m];
    for row in x.iter_rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, m, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = [vec![0.0; m], vec![0.0; m]];
    for (axis, &k) in axes.iter_mut().zip(&order) {
        if eig.eigenvalues[k] <= 1e-12 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let pivot = (0..m)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (a, &c) in axis.iter_mut().zip(v.iter()) {
            *a = sign * c;
        }
    }
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect())
}
