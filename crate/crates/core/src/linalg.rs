//! Small helpers on `&[f64]` vectors; the crate stores points as flat slices
//! of length `d`.

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest pairwise distance between the `n` points packed in `flat`.
pub fn diameter(flat: &[f64], dim: usize) -> f64 {
    let n = flat.len() / dim;
    let mut best = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.max(dist(&flat[i * dim..(i + 1) * dim], &flat[j * dim..(j + 1) * dim]));
        }
    }
    best
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}
