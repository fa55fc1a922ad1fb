use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `A[i][j] = exp(−‖hᵢ − hⱼ‖² / (2σ²))`.
pub fn gaussian_affinity(h: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("kernel width must be positive, got {sigma}")));
    }
    let n = h.rows();
    let denom = 2.0 * sigma * sigma;
    let mut a = Tensor::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = h.row(i).iter().zip(h.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            let v = (-d2 / denom).exp();
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    Ok(a)
}

/// Median Euclidean distance over distinct pairs of the given rows.
pub fn median_pairwise_distance(h: &Tensor, rows: &[usize]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(Error::Degenerate("median distance needs at least two rows".into()));
    }
    let mut d = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let d2: f64 = h.row(i).iter().zip(h.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            d.push(d2.sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med <= 0.0 {
        return Err(Error::Degenerate("all training embeddings coincide".into()));
    }
    Ok(med)
}

/// Euclidean distance between the two class-mean embeddings.
pub fn class_distance(h: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.len() != h.rows() {
        return Err(Error::dim("class_distance", h.shape(), (labels.len(), 1)));
    }
    let f = h.cols();
    let mut means = [vec![0.0; f], vec![0.0; f]];
    let mut counts = [0usize; 2];
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Contract(format!("label {y} outside 0..2")));
        }
        counts[y] += 1;
        for (m, v) in means[y].iter_mut().zip(h.row(i)) {
            *m += v;
        }
    }
    if counts.contains(&0) {
        return Err(Error::Degenerate("class distance needs both classes".into()));
    }
    Ok(means[0]
        .iter()
        .zip(&means[1])
        .map(|(a, b)| (a / counts[0] as f64 - b / counts[1] as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}
