use crate::error::{Result, SabrError};
use crate::math::Matrix;

/// How often each prototype is among the `k` Euclidean-nearest prototypes
/// of a query. Equal distances go to the lower prototype index.
pub fn k_occurrences(queries: &Matrix, prototypes: &Matrix, k: usize) -> Result<Vec<usize>> {
    if k == 0 || prototypes.rows() < k {
        return Err(SabrError::Config(format!(
            "k={k} needs between 1 and {} prototypes",
            prototypes.rows()
        )));
    }
    if queries.cols() != prototypes.cols() {
        return Err(SabrError::dim(
            "k_occurrences",
            queries.shape_str(),
            prototypes.shape_str(),
        ));
    }
    let mut counts = vec![0usize; prototypes.rows()];
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(prototypes.rows());
    for q in 0..queries.rows() {
        order.clear();
        for p in 0..prototypes.rows() {
            let d: f64 = queries
                .row(q)
                .iter()
                .zip(prototypes.row(p))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            order.push((d, p));
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, p) in &order[..k] {
            counts[p] += 1;
        }
    }
    Ok(counts)
}

/// Population skewness of the k-occurrence distribution; 0 when all counts
/// are equal.
pub fn hubness_skew(queries: &Matrix, prototypes: &Matrix, k: usize) -> Result<f64> {
    let counts = k_occurrences(queries, prototypes, k)?;
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let m2 = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let m3 = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(3))
        .sum::<f64>()
        / n;
    if m2 == 0.0 {
        return Ok(0.0);
    }
    Ok(m3 / m2.powf(1.5))
}
