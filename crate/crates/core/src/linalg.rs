//! Small dense vector helpers shared across the crate. Dimensions here are
//! desk-scale (a handful of coordinates), so plain slices are all we need.

/// Euclidean norm of `x`.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Squared Euclidean norm of `x`.
pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Inner product of `x` and `y`. Panics if lengths differ.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "dot product needs equal lengths");
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Componentwise difference `x - y`.
pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len(), "difference needs equal lengths");
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// Euclidean distance between `x` and `y`.
pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "distance needs equal lengths");
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Componentwise mean of a non-empty family of equally sized vectors.
pub fn mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    assert!(!vectors.is_empty(), "mean of an empty family");
    let n = vectors[0].len();
    let mut out = vec![0.0; n];
    for v in vectors {
        assert_eq!(v.len(), n, "mean needs equal lengths");
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let scale = 1.0 / vectors.len() as f64;
    for o in &mut out {
        *o *= scale;
    }
    out
}
