//! Consistent-halfspace search and the brute-force baseline learner.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{sign, LabeledSample, Sign, TargetFunction};
use crate::numerics::{dot, norm, normalized};
use crate::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Consistency {
    Weight { w: Vec<f64> },
    Infeasible,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub outcome: Consistency,
    /// Number of perceptron updates performed.
    pub iterations: usize,
}

impl ConsistencyResult {
    pub fn weight(&self) -> Option<&[f64]> {
        match &self.outcome {
            Consistency::Weight { w } => Some(w),
            _ => None,
        }
    }
}

/// True iff `sign(w . x_i) = y_i` for every pair, with `sign(0) = +1`.
pub fn is_consistent(w: &[f64], s: &LabeledSample) -> bool {
    s.iter().all(|(x, y)| sign(dot(w, x)) == y)
}

/// Finds an origin-centered `w` with `sign(w . x_i) = y_i` for all `i`.
///
/// Runs the perceptron on `z_i = y_i x_i / |x_i|`, asking for `w . z_i > 0`,
/// with at most `budget` updates. Zero points labeled `+1` are always
/// satisfied; a zero point labeled `-1`, or a point appearing with both
/// labels, makes the instance infeasible.
pub fn find_consistent_halfspace(s: &LabeledSample, budget: usize) -> Result<ConsistencyResult> {
    let n = s.n;
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(s.len());
    for (x, y) in s.iter() {
        match normalized(x) {
            Some(u) => z.push(u.iter().map(|v| v * y.as_f64()).collect()),
            None if y == Sign::Pos => {}
            None => {
                return Ok(ConsistencyResult {
                    outcome: Consistency::Infeasible,
                    iterations: 0,
                })
            }
        }
    }
    if has_contradiction(s) {
        return Ok(ConsistencyResult {
            outcome: Consistency::Infeasible,
            iterations: 0,
        });
    }
    let mut w = vec![0.0; n];
    let mut updates = 0;
    if z.is_empty() {
        w[0] = 1.0;
    }
    loop {
        let mut clean = true;
        for zi in &z {
            if dot(&w, zi) <= 0.0 {
                if updates >= budget {
                    return Ok(ConsistencyResult {
                        outcome: Consistency::BudgetExhausted,
                        iterations: updates,
                    });
                }
                w.iter_mut().zip(zi).for_each(|(a, b)| *a += b);
                updates += 1;
                clean = false;
            }
        }
        if clean {
            break;
        }
    }
    let w = normalized(&w).unwrap_or_else(|| {
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        e
    });
    if !is_consistent(&w, s) {
        // Normalization can in principle push a tiny positive margin to a
        // wrong sign; report that honestly instead of returning it.
        return Ok(ConsistencyResult {
            outcome: Consistency::BudgetExhausted,
            iterations: updates,
        });
    }
    Ok(ConsistencyResult {
        outcome: Consistency::Weight { w },
        iterations: updates,
    })
}

fn has_contradiction(s: &LabeledSample) -> bool {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| {
        s.points[a]
            .iter()
            .zip(&s.points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx.windows(2)
        .any(|p| s.points[p[0]] == s.points[p[1]] && s.labels[p[0]] != s.labels[p[1]])
}

/// `+1` when at least half of the labels are `+1`.
pub fn majority_label(s: &LabeledSample) -> Result<Sign> {
    if s.is_empty() {
        return Err(LabError::Empty("majority label of an empty sample"));
    }
    let pos = s.count(Sign::Pos);
    Ok(if 2 * pos >= s.len() { Sign::Pos } else { Sign::Neg })
}

pub const BRUTE_MAX_N: usize = 4;
pub const BRUTE_MAX_K: usize = 2;
pub const BRUTE_MAX_POINTS: usize = 60;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BruteForceOutcome {
    Found { target: TargetFunction },
    NoConsistent,
}

/// A labeling of the sample produced by one origin-centered halfspace.
#[derive(Debug, Clone)]
pub struct Dichotomy {
    /// Bit `i` set iff point `i` is classified `+1`.
    pub mask: u64,
    pub w: Vec<f64>,
}

fn combinations(m: usize, r: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, m: usize, r: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == r {
            f(cur);
            return;
        }
        for i in start..m {
            if m - i < r - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, r, cur, f);
            cur.pop();
        }
    }
    rec(0, m, r, &mut Vec::with_capacity(r), f);
}

/// Unit normal of the hyperplane through the origin and the given points,
/// when they are linearly independent.
fn hyperplane_normal(points: &[&[f64]], n: usize) -> Option<Vec<f64>> {
    if points.is_empty() {
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        return Some(e);
    }
    let a = DMatrix::from_fn(points.len(), n, |i, j| points[i][j]);
    let svd = a.transpose().svd(true, false);
    let u = svd.u?;
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if sv.iter().any(|&s| s <= 1e-10 * smax.max(1e-300)) {
        return None;
    }
    // Null space of A: the component of a probe orthogonal to the columns of U.
    for probe in 0..n {
        let mut e = DVector::<f64>::zeros(n);
        e[probe] = 1.0;
        let proj = &u * (u.transpose() * &e);
        let r = e - proj;
        if r.norm() > 1e-6 {
            return normalized(r.as_slice());
        }
    }
    None
}

/// Every dichotomy of `points` realized by a halfspace whose boundary passes
/// through `n - 1` of the points, with both orientations and every
/// assignment of the points on the boundary. Masks are deduplicated; each
/// dichotomy carries a verified weight vector.
pub fn enumerate_dichotomies(points: &[Vec<f64>], n: usize) -> Vec<Dichotomy> {
    let m = points.len();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let r = (n - 1).min(m);
    combinations(m, r, &mut |subset| {
        let chosen: Vec<&[f64]> = subset.iter().map(|&i| points[i].as_slice()).collect();
        let Some(u) = hyperplane_normal(&chosen, n) else {
            return;
        };
        for orient in [1.0, -1.0] {
            let u: Vec<f64> = u.iter().map(|v| v * orient).collect();
            let proj: Vec<f64> = points.iter().map(|p| dot(&u, p)).collect();
            let ties: Vec<usize> = (0..m)
                .filter(|&i| proj[i].abs() <= TIE_TOL * norm(&points[i]).max(1.0))
                .collect();
            if ties.len() > 16 {
                continue;
            }
            let min_strict = (0..m)
                .filter(|i| !ties.contains(i))
                .map(|i| proj[i].abs())
                .fold(f64::INFINITY, f64::min);
            for assign in 0..(1u32 << ties.len()) {
                let want: Vec<f64> = (0..ties.len())
                    .map(|t| if assign >> t & 1 == 1 { 1.0 } else { -1.0 })
                    .collect();
                let Some(w) = realize(&u, points, &ties, &want, min_strict) else {
                    continue;
                };
                let mut mask = 0u64;
                for (i, p) in points.iter().enumerate() {
                    if sign(dot(&w, p)).is_pos() {
                        mask |= 1 << i;
                    }
                }
                let ok = ties
                    .iter()
                    .zip(&want)
                    .all(|(&i, &s)| (mask >> i & 1 == 1) == (s > 0.0));
                if ok && seen.insert(mask) {
                    out.push(Dichotomy { mask, w });
                }
            }
        }
    });
    out
}

/// Tilts `u` by a small `v` with `v . x_t = want_t` on the tie points, small
/// enough not to flip any strictly classified point.
fn realize(u: &[f64], points: &[Vec<f64>], ties: &[usize], want: &[f64], min_strict: f64) -> Option<Vec<f64>> {
    if ties.is_empty() {
        return Some(u.to_vec());
    }
    let n = u.len();
    let a = DMatrix::from_fn(ties.len(), n, |i, j| points[ties[i]][j]);
    let b = DVector::from_column_slice(want);
    let v = a.clone().pseudo_inverse(1e-12).ok()? * b;
    let max_x = points.iter().map(|p| norm(p)).fold(0.0, f64::max).max(1e-300);
    let vn = v.norm().max(1e-300);
    let eps = if min_strict.is_finite() { 0.25 * min_strict / (vn * max_x) } else { 1.0 };
    let w: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| a + eps * b).collect();
    normalized(&w)
}

/// Searches all functions of `k` enumerated halfspaces for one consistent
/// with every labeled point.
pub fn brute_force_learn(s: &LabeledSample, k: usize) -> Result<BruteForceOutcome> {
    if s.n == 0 || s.n > BRUTE_MAX_N || k == 0 || k > BRUTE_MAX_K || s.len() > BRUTE_MAX_POINTS {
        return Err(LabError::GuardViolation(format!(
            "n = {}, k = {}, |S| = {} (limits n <= {BRUTE_MAX_N}, 1 <= k <= {BRUTE_MAX_K}, |S| <= {BRUTE_MAX_POINTS})",
            s.n,
            k,
            s.len()
        )));
    }
    if s.is_empty() {
        return Err(LabError::Empty("brute force on an empty sample"));
    }
    let m = s.len();
    let dich = enumerate_dichotomies(&s.points, s.n);
    let mut pos = 0u64;
    for (i, &l) in s.labels.iter().enumerate() {
        if l.is_pos() {
            pos |= 1 << i;
        }
    }
    let all = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let neg = all & !pos;
    let tables = 1usize << (1 << k);

    let consistent = |masks: &[u64], table_bits: usize| -> bool {
        for cell in 0..(1usize << k) {
            let mut members = all;
            for (i, &mk) in masks.iter().enumerate() {
                members &= if cell >> i & 1 == 1 { mk } else { !mk };
            }
            let want_pos = table_bits >> cell & 1 == 1;
            let wrong = if want_pos { members & neg } else { members & pos };
            if wrong != 0 {
                return false;
            }
        }
        true
    };
    let conflict_free = |masks: &[u64]| -> bool {
        (0..(1usize << k)).all(|cell| {
            let mut members = all;
            for (i, &mk) in masks.iter().enumerate() {
                members &= if cell >> i & 1 == 1 { mk } else { !mk };
            }
            members & pos == 0 || members & neg == 0
        })
    };

    let try_tuple = |idx: &[usize]| -> Result<Option<TargetFunction>> {
        let masks: Vec<u64> = idx.iter().map(|&i| dich[i].mask).collect();
        if !conflict_free(&masks) {
            return Ok(None);
        }
        for t in 0..tables {
            if !consistent(&masks, t) {
                continue;
            }
            let table = (0..(1 << k))
                .map(|c| if t >> c & 1 == 1 { Sign::Pos } else { Sign::Neg })
                .collect();
            let f = TargetFunction::new(idx.iter().map(|&i| dich[i].w.clone()).collect(), table)?;
            if s.iter().all(|(x, y)| f.evaluate(x).map(|v| v == y).unwrap_or(false)) {
                return Ok(Some(f));
            }
        }
        Ok(None)
    };

    match k {
        1 => {
            for i in 0..dich.len() {
                if let Some(f) = try_tuple(&[i])? {
                    return Ok(BruteForceOutcome::Found { target: f });
                }
            }
        }
        _ => {
            for i in 0..dich.len() {
                for j in i..dich.len() {
                    if let Some(f) = try_tuple(&[i, j])? {
                        return Ok(BruteForceOutcome::Found { target: f });
                    }
                }
            }
        }
    }
    Ok(BruteForceOutcome::NoConsistent)
}
