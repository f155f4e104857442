//! Dense linear algebra and sampling primitives.

mod linalg;
mod rng;

pub use linalg::{
    inv_sqrt_psd, psd_power, row_major, second_moment, span_basis, sym_eigen, Eigen, SubspaceBasis,
    SymMatrix, DEFAULT_RANK_TOL, MEMBERSHIP_TOL,
};
pub use rng::{derive_seed, gaussian_vector, stream, LabRng};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Returns `a / |a|`, or `None` for the zero vector.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let r = norm(a);
    if r == 0.0 || !r.is_finite() {
        return None;
    }
    Some(a.iter().map(|v| v / r).collect())
}

pub fn check_dim(expected: usize, found: usize) -> crate::Result<()> {
    if expected != found {
        return Err(crate::LabError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Evaluates `f(0), f(1), ...` in waves of one task per worker thread and
/// returns the results up to and including the first one accepted by
/// `stop`. The output is identical for every thread count.
pub fn scan_until<T, F, P>(budget: usize, f: F, stop: P) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> crate::Result<T> + Sync,
    P: Fn(&T) -> bool,
{
    use rayon::prelude::*;
    let wave = rayon::current_num_threads().max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < budget {
        let end = (start + wave).min(budget);
        let results: Vec<crate::Result<T>> = (start..end).into_par_iter().map(&f).collect();
        for r in results {
            let v = r?;
            let done = stop(&v);
            out.push(v);
            if done {
                return Ok(out);
            }
        }
        start = end;
    }
    Ok(out)
}

/// Index and value of the first `Some` among `f(0), f(1), ...`.
pub fn first_success<T, F>(budget: usize, f: F) -> crate::Result<Option<(usize, T)>>
where
    T: Send,
    F: Fn(usize) -> crate::Result<Option<T>> + Sync,
{
    let mut all = scan_until(budget, f, Option::is_some)?;
    let idx = all.len().wrapping_sub(1);
    Ok(all.pop().flatten().map(|v| (idx, v)))
}
