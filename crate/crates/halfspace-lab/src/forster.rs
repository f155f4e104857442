//! Forster transform: put a point set into radial isotropic position.
//!
//! The transform is computed by the classical fixed-point iteration
//! `y <- M^{-1/2} y / |M^{-1/2} y|` with `M = d * mean(y y^T)`. When the set
//! has an over-dense subspace no exact isotropic position exists; the
//! iteration then stalls and we restrict to that subspace and start again.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::LabeledSample;
use crate::numerics::{
    self, check_dim, dot, inv_sqrt_psd, second_moment, span_basis, sym_eigen, Eigen,
    SubspaceBasis, SymMatrix,
};
use crate::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForsterParams {
    /// Half-width of the eigenvalue band `[1 - eps, 1 + eps]`.
    pub eps: f64,
    pub max_iter: usize,
    pub rank_tol: f64,
    /// Iterations without improvement before a stall is declared.
    pub stall_window: usize,
}

impl Default for ForsterParams {
    fn default() -> Self {
        ForsterParams {
            eps: 0.5,
            max_iter: 5000,
            rank_tol: numerics::DEFAULT_RANK_TOL,
            stall_window: 50,
        }
    }
}

impl ForsterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(LabError::InvalidParameter("forster eps must lie in (0, 1)".into()));
        }
        if self.max_iter == 0 || self.stall_window == 0 {
            return Err(LabError::InvalidParameter("forster iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a Forster transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ForsterOutput {
    /// The subspace `V` the kept points span.
    pub basis: SubspaceBasis,
    /// Invertible map on `V`, in basis coordinates; the symmetric polar
    /// factor of the iteration's map whenever that is numerically usable.
    pub map: DMatrix<f64>,
    /// Transformed unit points, in ambient coordinates, one per kept index.
    pub points: Vec<Vec<f64>>,
    /// Indices of the input points lying in `V`.
    pub kept_indices: Vec<usize>,
    pub iterations: usize,
    /// Eigenvalues of `dim(V) * mean(y y^T)` for the output points.
    pub eigenvalues: Vec<f64>,
}

impl ForsterOutput {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn ambient(&self) -> usize {
        self.basis.ambient()
    }

    /// The map as an `n x n` matrix `B^T A B`, which is zero on `V`'s
    /// orthogonal complement.
    pub fn ambient_map(&self) -> DMatrix<f64> {
        let b = self.basis.matrix();
        b.transpose() * &self.map * b
    }

    /// `A x / |A x|` in ambient coordinates.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.ambient(), x.len())?;
        let y = &self.map * self.basis.coords(x);
        let r = y.norm();
        if r == 0.0 {
            return Err(LabError::DegenerateTransform);
        }
        Ok(self.basis.lift(&(y / r)))
    }

    /// The transformed sample, carrying the labels of the kept points.
    pub fn labeled(&self, s: &LabeledSample) -> LabeledSample {
        LabeledSample {
            n: s.n,
            points: self.points.clone(),
            labels: self.kept_indices.iter().map(|&i| s.labels[i]).collect(),
        }
    }
}

/// Checks whether `dim(V) * mean(x x^T)` restricted to `V` has all
/// eigenvalues in `[1 - eps, 1 + eps]`; also returns those eigenvalues.
pub fn is_radially_isotropic(points: &[Vec<f64>], basis: &SubspaceBasis, eps: f64) -> Result<(bool, Vec<f64>)> {
    if points.is_empty() {
        return Err(LabError::Empty("isotropy check of an empty set"));
    }
    let mut coords = Vec::with_capacity(points.len());
    for p in points {
        check_dim(basis.ambient(), p.len())?;
        let r = basis.relative_residual(p);
        if r > numerics::MEMBERSHIP_TOL {
            return Err(LabError::NotInSubspace(r));
        }
        coords.push(basis.coords(p).as_slice().to_vec());
    }
    let d = basis.dim();
    let values = scaled_eigen(&coords, d)?.values;
    let ok = values.iter().all(|&l| (l - 1.0).abs() <= eps);
    Ok((ok, values))
}

fn scaled_eigen(coords: &[Vec<f64>], d: usize) -> Result<Eigen> {
    let m = second_moment(coords)?;
    Ok(sym_eigen(&SymMatrix::new(m.into_matrix() * d as f64)?))
}

fn max_deviation(e: &Eigen) -> f64 {
    e.values.iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max)
}

enum Iterate {
    Converged { map: DMatrix<f64>, iterations: usize },
    Stuck { map: DMatrix<f64>, iterations: usize, best: f64 },
}

/// Runs the fixed-point iteration on unit vectors `z` in `R^d` that span
/// `R^d`. Returns early on a stall so the caller can look for a subspace.
fn iterate(z: &[DVector<f64>], params: &ForsterParams, start: usize, budget: usize) -> Result<(Iterate, Vec<DVector<f64>>)> {
    let d = z[0].len();
    let mut a = DMatrix::<f64>::identity(d, d);
    let mut y: Vec<DVector<f64>> = z.to_vec();
    let mut best = f64::INFINITY;
    let mut since = 0;
    for it in 0..budget {
        let e = moment_eigen(&y)?;
        let dev = max_deviation(&e);
        if dev <= params.eps {
            return Ok((Iterate::Converged { map: a, iterations: start + it }, y));
        }
        if dev < best * (1.0 - 1e-6) {
            best = dev;
            since = 0;
        } else {
            since += 1;
            if since >= params.stall_window {
                return Ok((Iterate::Stuck { map: a, iterations: start + it, best }, y));
            }
        }
        let m = moment(&y)?;
        let r = inv_sqrt_psd(&m, params.rank_tol)?;
        let r = r.as_matrix();
        a = r * a;
        for v in y.iter_mut() {
            let w = r * &*v;
            let nw = w.norm();
            if nw == 0.0 {
                return Err(LabError::DegenerateTransform);
            }
            *v = w / nw;
        }
    }
    Ok((Iterate::Stuck { map: a, iterations: start + budget, best }, y))
}

fn moment(y: &[DVector<f64>]) -> Result<SymMatrix> {
    let d = y[0].len();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for v in y {
        m.ger(1.0, v, v, 1.0);
    }
    SymMatrix::new(m * (d as f64 / y.len() as f64))
}

fn moment_eigen(y: &[DVector<f64>]) -> Result<Eigen> {
    Ok(sym_eigen(&moment(y)?))
}

/// Looks for an over-dense subspace among spans of points that concentrate
/// near top eigenspaces of the current moment, or that the accumulated map
/// nearly annihilates. Returns the member indices (into `z`) of the densest
/// qualifying candidate.
fn dense_subspace(
    z: &[DVector<f64>],
    y: &[DVector<f64>],
    map: &DMatrix<f64>,
    total: usize,
    ambient: usize,
    rank_tol: f64,
) -> Result<Option<Vec<usize>>> {
    let d = z[0].len();
    let m = z.len();
    let e = moment_eigen(y)?;
    let zs: Vec<Vec<f64>> = z.iter().map(|v| v.as_slice().to_vec()).collect();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    let mut consider = |sel: Vec<Vec<f64>>| -> Result<()> {
        if sel.is_empty() {
            return Ok(());
        }
        let w = span_basis(&sel, rank_tol)?;
        let dim_w = w.dim();
        if dim_w == 0 || dim_w >= d {
            return Ok(());
        }
        let members: Vec<usize> = (0..m).filter(|&i| w.contains(&zs[i])).collect();
        let over_dense = members.len() * d > m * dim_w;
        let keeps_enough = members.len() * ambient >= total * dim_w;
        if !(over_dense && keeps_enough) {
            return Ok(());
        }
        let density = members.len() as f64 / dim_w as f64;
        let better = match &best {
            None => true,
            Some((bd, bw, _)) => density > *bd || (density == *bd && dim_w < *bw),
        };
        if better {
            best = Some((density, dim_w, members));
        }
        Ok(())
    };
    for k in 1..d {
        let top = e.vectors.columns(0, k);
        let captured: Vec<f64> = y.iter().map(|v| (top.transpose() * v).norm_squared()).collect();
        for &delta in &[1e-2, 1e-4, 1e-6, 1e-9] {
            consider((0..m).filter(|&i| captured[i] >= 1.0 - delta).map(|i| zs[i].clone()).collect())?;
        }
    }
    // Points squeezed towards the null space of an ill-conditioned map.
    let scale = map.norm();
    if scale > 0.0 && scale.is_finite() {
        let shrink: Vec<f64> = z.iter().map(|v| (map * v).norm() / scale).collect();
        for &delta in &[1e-4, 1e-6, 1e-8] {
            consider((0..m).filter(|&i| shrink[i] <= delta).map(|i| zs[i].clone()).collect())?;
        }
    }
    Ok(best.map(|b| b.2))
}

/// Forster transform of a point set (labels are handled by
/// [`forsterize_sample`]).
pub fn forsterize(points: &[Vec<f64>], params: &ForsterParams) -> Result<ForsterOutput> {
    params.validate()?;
    let first = points.first().ok_or(LabError::Empty("forsterize of an empty set"))?;
    let n = first.len();
    for (i, p) in points.iter().enumerate() {
        check_dim(n, p.len())?;
        if numerics::norm(p) == 0.0 {
            return Err(LabError::ZeroPoint { index: i });
        }
    }
    let total = points.len();
    let mut kept: Vec<usize> = (0..total).collect();
    let mut spent = 0;
    loop {
        let subset: Vec<Vec<f64>> = kept.iter().map(|&i| points[i].clone()).collect();
        let basis = span_basis(&subset, params.rank_tol)?;
        let d = basis.dim();
        let z: Vec<DVector<f64>> = subset
            .iter()
            .map(|p| {
                let c = basis.coords(p);
                let r = c.norm();
                c / r
            })
            .collect();
        let mut phase_best = f64::INFINITY;
        let mut iterations = spent;
        let mut map = DMatrix::identity(d, d);
        let mut current = z.clone();
        let mut converged = None;
        while spent < params.max_iter {
            let (res, y) = iterate(&current, params, spent, params.max_iter - spent)?;
            match res {
                Iterate::Converged { map: a, iterations: it } => {
                    map = a * map;
                    iterations = it;
                    converged = Some(y);
                    break;
                }
                Iterate::Stuck { map: a, iterations: it, best } => {
                    map = a * map;
                    spent = it.max(spent + 1);
                    phase_best = phase_best.min(best);
                    if let Some(members) = dense_subspace(&z, &y, &map, total, n, params.rank_tol)? {
                        kept = members.iter().map(|&j| kept[j]).collect();
                        break;
                    }
                    current = y;
                }
            }
        }
        if let Some(y) = converged {
            // A very ill-conditioned map can bring the iterates into position
            // while the map itself no longer reproduces them; that happens
            // when the set is over-dense, so look for the subspace instead.
            match finish(points, kept.clone(), basis, map.clone(), iterations, params) {
                Err(e @ LabError::NonConvergence { .. }) => match dense_subspace(&z, &y, &map, total, n, params.rank_tol)? {
                    Some(members) => {
                        kept = members.iter().map(|&j| kept[j]).collect();
                        spent = iterations.max(spent + 1);
                        continue;
                    }
                    None => return Err(e),
                },
                other => return other,
            }
        }
        if kept.len() == subset.len() {
            return Err(LabError::NonConvergence {
                iterations: spent,
                dim: d,
                points: kept.len(),
                best_deviation: phase_best,
            });
        }
    }
}

/// Largest condition number accepted for the final map.
const MAX_CONDITION: f64 = 1e8;

fn finish(
    points: &[Vec<f64>],
    kept: Vec<usize>,
    basis: SubspaceBasis,
    map: DMatrix<f64>,
    iterations: usize,
    params: &ForsterParams,
) -> Result<ForsterOutput> {
    // Prefer the symmetric polar factor P = U^T A (from A = U S V^T): its
    // outputs are an orthogonal image of A's. Forming (A^T A)^{1/2} directly
    // squares the condition number, so the factor is taken from the SVD and
    // the result is verified; A itself is the fallback.
    let svd = map.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0 && smax / smin <= MAX_CONDITION) {
        // Isotropy bought with a near-singular map: the images of some points
        // are rounding noise and labels are not preserved.
        return Err(LabError::NonConvergence {
            iterations,
            dim: basis.dim(),
            points: kept.len(),
            best_deviation: f64::INFINITY,
        });
    }
    let mut candidates = Vec::with_capacity(2);
    if let Some(u) = svd.u {
        let p = u.transpose() * &map;
        candidates.push((&p + p.transpose()) * 0.5);
        candidates.push(p);
    }
    candidates.push(map);
    let mut worst = f64::INFINITY;
    for cand in candidates {
        let mut out_points = Vec::with_capacity(kept.len());
        let mut coords = Vec::with_capacity(kept.len());
        let mut degenerate = false;
        for &i in &kept {
            let y = &cand * basis.coords(&points[i]);
            let r = y.norm();
            if r == 0.0 || !r.is_finite() {
                degenerate = true;
                break;
            }
            let y = y / r;
            coords.push(y.as_slice().to_vec());
            out_points.push(basis.lift(&y));
        }
        if degenerate {
            continue;
        }
        let eigenvalues = scaled_eigen(&coords, basis.dim())?.values;
        let dev = eigenvalues.iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max);
        if dev <= params.eps {
            return Ok(ForsterOutput {
                basis,
                map: cand,
                points: out_points,
                kept_indices: kept,
                iterations,
                eigenvalues,
            });
        }
        worst = worst.min(dev);
    }
    Err(LabError::NonConvergence {
        iterations,
        dim: basis.dim(),
        points: kept.len(),
        best_deviation: worst,
    })
}

/// Forster transform of a labeled sample; the second value is `S'` with the
/// labels of the kept points.
pub fn forsterize_sample(s: &LabeledSample, params: &ForsterParams) -> Result<(ForsterOutput, LabeledSample)> {
    let out = forsterize(&s.points, params)?;
    let labeled = out.labeled(s);
    Ok((out, labeled))
}

/// Normal of the image halfspace under a linear map.
///
/// `domain` holds the subspace `U` in source coordinates, `image` the
/// subspace `V = M(U)` in target coordinates, and `ambient_map` the map `M`
/// as an `n x n` matrix. The result `w'` lies in `V`, has unit norm, and
/// satisfies `sign(w . x) = sign(w' . M x)` for every `x` in `U`.
pub fn transform_normal(
    w: &[f64],
    domain: &SubspaceBasis,
    image: &SubspaceBasis,
    ambient_map: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    check_dim(domain.ambient(), w.len())?;
    let c = domain.coords(w);
    let pn = c.norm();
    if pn < 1e-10 {
        return Err(LabError::DegenerateProjection(pn));
    }
    let restricted = image.matrix() * ambient_map * domain.matrix().transpose();
    let solved = restricted
        .transpose()
        .lu()
        .solve(&c)
        .ok_or(LabError::DegenerateTransform)?;
    let r = solved.norm();
    if r == 0.0 || !r.is_finite() {
        return Err(LabError::DegenerateTransform);
    }
    Ok(image.lift(&(solved / r)))
}

/// `w' = A^{-T} P_V w / |A^{-T} P_V w|`.
pub fn transform_halfspace(w: &[f64], out: &ForsterOutput) -> Result<Vec<f64>> {
    transform_normal(w, &out.basis, &out.basis, &out.ambient_map())
}

/// Fraction of points with `|w . x| >= tau`.
pub fn margin_fraction(points: &[Vec<f64>], w: &[f64], tau: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(LabError::Empty("margin fraction of an empty set"));
    }
    let mut hits = 0usize;
    for p in points {
        check_dim(w.len(), p.len())?;
        if dot(w, p).abs() >= tau {
            hits += 1;
        }
    }
    Ok(hits as f64 / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sign, Sign};
    use crate::numerics::{gaussian_vector, normalized, stream};

    fn unit_points(n: usize, m: usize, scales: &[f64], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, &[]);
        (0..m)
            .map(|_| {
                let g = gaussian_vector(n, 1.0, &mut rng);
                let v: Vec<f64> = g.iter().zip(scales).map(|(a, s)| a * s).collect();
                normalized(&v).unwrap()
            })
            .collect()
    }

    fn axes(n: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut v = vec![0.0; n];
                v[i] = s;
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn isotropy_examples() {
        let full = SubspaceBasis::full(2);
        let (ok, vals) = is_radially_isotropic(&axes(2), &full, 0.5).unwrap();
        assert!(ok);
        assert!(vals.iter().all(|v| (v - 1.0).abs() < 1e-14));

        let s = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let (ok, vals) = is_radially_isotropic(&s, &full, 0.5).unwrap();
        assert!(ok);
        assert!((vals[0] - 4.0 / 3.0).abs() < 1e-14 && (vals[1] - 2.0 / 3.0).abs() < 1e-14);
        assert!(!is_radially_isotropic(&s, &full, 0.3).unwrap().0);

        let v = normalized(&[1.0, 2.0, 3.0]).unwrap();
        let line = SubspaceBasis::from_rows(3, &[v.clone()]).unwrap();
        let pm = vec![v.clone(), v.iter().map(|a| -a).collect()];
        assert!(is_radially_isotropic(&pm, &line, 1e-9).unwrap().0);
        assert!(matches!(
            is_radially_isotropic(&[vec![1.0, 0.0, 0.0]], &line, 0.5),
            Err(LabError::NotInSubspace(_))
        ));
    }

    #[test]
    fn already_isotropic_set_is_untouched() {
        let s = axes(4);
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        assert_eq!(out.dim(), 4);
        assert_eq!(out.iterations, 0);
        assert!((out.map.clone() - DMatrix::identity(4, 4)).amax() < 1e-12);
        for (a, b) in out.points.iter().zip(&s) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn rank_deficient_pair() {
        let s = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        assert_eq!(out.dim(), 1);
        assert_eq!(out.kept_indices, vec![0, 1]);
    }

    #[test]
    fn skewed_cloud_becomes_isotropic() {
        let s = unit_points(3, 300, &[10.0, 1.0, 1.0], 1);
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        let (ok, vals) = is_radially_isotropic(&out.points, &out.basis, 0.5).unwrap();
        assert!(ok, "{vals:?}");
        assert_eq!(out.kept_indices.len(), 300);
    }

    #[test]
    fn over_dense_line_is_isolated() {
        let mut s = unit_points(3, 40, &[1.0, 1.0, 1.0], 2);
        let v = normalized(&[1.0, 1.0, 0.0]).unwrap();
        for i in 0..60 {
            s.push(if i % 2 == 0 { v.clone() } else { v.iter().map(|a| -a).collect() });
        }
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        assert_eq!(out.dim(), 1);
        assert_eq!(out.kept_indices, (40..100).collect::<Vec<_>>());
        assert!(out.kept_indices.len() * 3 >= s.len() * out.dim());
    }

    #[test]
    fn half_on_a_line_is_not_bought_with_a_singular_map() {
        // Interleaved so the line is not a contiguous block; the plain
        // iteration reaches the eps band here only by collapsing the line.
        let n = 6;
        let random = unit_points(n, 200, &[1.0; 6], 9);
        let u = normalized(&[0.3, -1.0, 0.2, 0.5, 0.0, 0.7]).unwrap();
        let mut s = Vec::new();
        for (i, p) in random.into_iter().enumerate() {
            s.push(if i % 3 == 0 { u.iter().map(|a| -a).collect() } else { u.clone() });
            s.push(p);
        }
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        assert_eq!(out.dim(), 1);
        assert_eq!(out.kept_indices, (0..400).step_by(2).collect::<Vec<_>>());
        let sv = out.map.clone().svd(false, false).singular_values;
        assert!(sv.max() / sv.min() <= MAX_CONDITION);
    }

    #[test]
    fn over_dense_plane_is_isolated() {
        let n = 5;
        let mut s = unit_points(n, 30, &[1.0; 5], 3);
        let mut rng = stream(3, &[1]);
        for _ in 0..70 {
            let c = gaussian_vector(2, 1.0, &mut rng);
            let mut p = vec![0.0; n];
            p[1] = c[0];
            p[3] = c[1];
            s.push(normalized(&p).unwrap());
        }
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        assert_eq!(out.dim(), 2);
        assert_eq!(out.kept_indices.len(), 70);
        assert!(is_radially_isotropic(&out.points, &out.basis, 0.5).unwrap().0);
    }

    #[test]
    fn forsterize_is_idempotent() {
        let s = unit_points(5, 200, &[5.0, 2.0, 1.0, 1.0, 0.3], 4);
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        let again = forsterize(&out.points, &ForsterParams::default()).unwrap();
        assert_eq!(again.iterations, 0);
        assert!((again.map.clone() - DMatrix::identity(5, 5)).amax() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(forsterize(&[], &ForsterParams::default()), Err(LabError::Empty(_))));
        assert!(matches!(
            forsterize(&[vec![1.0, 0.0], vec![0.0, 0.0]], &ForsterParams::default()),
            Err(LabError::ZeroPoint { index: 1 })
        ));
    }

    #[test]
    fn transform_identity_and_line() {
        let out = forsterize(&axes(3), &ForsterParams::default()).unwrap();
        let w = normalized(&[0.3, -0.4, 0.5]).unwrap();
        let wp = transform_halfspace(&w, &out).unwrap();
        assert!(w.iter().zip(&wp).all(|(a, b)| (a - b).abs() < 1e-12));

        let s = vec![vec![0.0, 1.0], vec![0.0, -1.0], vec![0.0, 1.0]];
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        let w = normalized(&[1.0, 0.5]).unwrap();
        let wp = transform_halfspace(&w, &out).unwrap();
        assert!((wp[1].abs() - 1.0).abs() < 1e-12 && wp[0].abs() < 1e-12);
        for (i, &k) in out.kept_indices.iter().enumerate() {
            assert_eq!(sign(dot(&w, &s[k])), sign(dot(&wp, &out.points[i])));
        }

        let perp = transform_halfspace(&[1.0, 0.0], &out);
        assert!(matches!(perp, Err(LabError::DegenerateProjection(_))));
    }

    #[test]
    fn transform_preserves_labels_on_random_sets() {
        for seed in 0..5u64 {
            let s = unit_points(6, 150, &[4.0, 1.0, 1.0, 0.5, 2.0, 1.0], seed + 10);
            let out = forsterize(&s, &ForsterParams::default()).unwrap();
            let mut rng = stream(seed, &[5]);
            for _ in 0..50 {
                let w = normalized(&gaussian_vector(6, 1.0, &mut rng)).unwrap();
                let wp = transform_halfspace(&w, &out).unwrap();
                for (i, &k) in out.kept_indices.iter().enumerate() {
                    assert_eq!(sign(dot(&w, &s[k])), sign(dot(&wp, &out.points[i])));
                }
            }
        }
    }

    #[test]
    fn labels_follow_kept_points() {
        let pts = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 2.0]];
        let s = LabeledSample::new(2, pts, vec![Sign::Pos, Sign::Neg, Sign::Pos]).unwrap();
        let (out, sp) = forsterize_sample(&s, &ForsterParams::default()).unwrap();
        assert_eq!(sp.len(), out.kept_indices.len());
        for (i, &k) in out.kept_indices.iter().enumerate() {
            assert_eq!(sp.labels[i], s.labels[k]);
        }
    }

    #[test]
    fn margin_examples() {
        let s = axes(2);
        assert_eq!(margin_fraction(&s, &[1.0, 0.0], 0.5).unwrap(), 0.5);
        assert_eq!(margin_fraction(&s, &[1.0, 0.0], 0.0).unwrap(), 1.0);
        assert!(margin_fraction(&[], &[1.0, 0.0], 0.0).is_err());
        let pts = unit_points(4, 100, &[1.0; 4], 7);
        let w = normalized(&[1.0, -1.0, 0.5, 0.0]).unwrap();
        let brute = pts.iter().filter(|p| dot(&w, p).abs() >= 0.3).count() as f64 / 100.0;
        assert_eq!(margin_fraction(&pts, &w, 0.3).unwrap(), brute);
    }

    #[test]
    fn margin_guarantee_after_transform() {
        let n = 6;
        let s = unit_points(n, 250, &[6.0, 1.0, 1.0, 1.0, 0.2, 1.0], 8);
        let out = forsterize(&s, &ForsterParams::default()).unwrap();
        let mut rng = stream(8, &[1]);
        for _ in 0..100 {
            let w = normalized(&gaussian_vector(n, 1.0, &mut rng)).unwrap();
            let wp = transform_halfspace(&w, &out).unwrap();
            let tau = 1.0 / (2.0 * (n as f64).sqrt());
            assert!(margin_fraction(&out.points, &wp, tau).unwrap() >= 1.0 / (4.0 * n as f64));
        }
    }
}
