//! Lawson–Hanson non-negative least squares for the small active-set
//! multiplier fits in the KKT check.

use nalgebra::{DMatrix, DVector};

fn restricted_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(passive);
    let z = sub.svd(true, true).solve(b, 1e-13).unwrap_or_else(|_| DVector::zeros(passive.len()));
    let mut full = DVector::zeros(a.ncols());
    for (i, &j) in passive.iter().enumerate() {
        full[j] = z[i];
    }
    full
}

/// `argmin_{x >= 0} ‖A x − b‖`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())) * b.norm().max(1.0);
    let tol = 1e-12 * scale.max(1e-300) * (n as f64);
    let mut passive: Vec<usize> = Vec::new();
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let next = (0..n)
            .filter(|j| !passive.contains(j))
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match next {
            Some(j) if w[j] > tol => passive.push(j),
            _ => break,
        }
        loop {
            let z = restricted_lstsq(a, b, &passive);
            if passive.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &j in &passive {
                if z[j] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - z[j]));
                }
            }
            x += (z - &x) * alpha;
            passive.retain(|&j| x[j] > 1e-15);
            for j in 0..n {
                if !passive.contains(&j) {
                    x[j] = 0.0;
                }
            }
            if passive.is_empty() {
                break;
            }
        }
    }
    x
}
