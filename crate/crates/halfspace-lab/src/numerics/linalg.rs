use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

/// Eigenvalues below `DEFAULT_RANK_TOL * lambda_max` count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;
/// Relative residual above which a point is considered outside a subspace.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_OFF_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Square symmetric matrix. Construction symmetrizes exactly after checking
/// that the input is symmetric to within a relative tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(LabError::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite("symmetric matrix"));
        }
        let scale = m.norm();
        let asym = (&m - m.transpose()).norm();
        if scale > 0.0 && asym > SYMMETRY_TOL * scale {
            return Err(LabError::NonSymmetric(asym / scale));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// Eigen-decomposition with eigenvalues in descending order; the columns of
/// `vectors` are the matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigen {
    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        &self.vectors * d * self.vectors.transpose()
    }
}

/// Cyclic Jacobi eigen-solver.
pub fn sym_eigen(m: &SymMatrix) -> Eigen {
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
        }
        if off.sqrt() <= JACOBI_OFF_TOL * scale || scale == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Eigen { values, vectors }
}

/// Spectral power `M^p` of a PSD matrix on its numerical range; eigenvalues
/// below `rank_tol * lambda_max` map to zero.
pub fn psd_power(m: &SymMatrix, power: f64, rank_tol: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(m);
    let lmax = eig.max();
    if lmax <= 0.0 {
        return Err(LabError::ZeroMatrix);
    }
    let n = m.dim();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (i, &l) in eig.values.iter().enumerate() {
        if l > rank_tol * lmax {
            let col = eig.vectors.column(i);
            out += (col * col.transpose()) * l.powf(power);
        }
    }
    SymMatrix::new(out)
}

pub fn inv_sqrt_psd(m: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    psd_power(m, -0.5, rank_tol)
}

/// `(1/|S|) * sum x x^T`.
pub fn second_moment(points: &[Vec<f64>]) -> Result<SymMatrix> {
    let first = points.first().ok_or(LabError::Empty("second moment of an empty set"))?;
    let n = first.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for x in points {
        super::check_dim(n, x.len())?;
        for i in 0..n {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..n {
                m[(i, j)] += xi * x[j];
            }
        }
    }
    let inv = 1.0 / points.len() as f64;
    for i in 0..n {
        for j in i..n {
            let v = m[(i, j)] * inv;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SymMatrix::new(m)
}

/// Orthonormal basis (rows) of a subspace of `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct SubspaceBasis {
    rows: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisRepr {
    ambient: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<BasisRepr> for SubspaceBasis {
    type Error = LabError;
    fn try_from(r: BasisRepr) -> Result<Self> {
        SubspaceBasis::from_rows(r.ambient, &r.rows)
    }
}

impl From<SubspaceBasis> for BasisRepr {
    fn from(b: SubspaceBasis) -> Self {
        BasisRepr {
            ambient: b.ambient(),
            rows: b.row_vecs(),
        }
    }
}

impl SubspaceBasis {
    /// The whole space `R^n`.
    pub fn full(n: usize) -> Self {
        SubspaceBasis {
            rows: DMatrix::identity(n, n),
        }
    }

    pub fn from_matrix(rows: DMatrix<f64>) -> Result<Self> {
        let d = rows.nrows();
        if d > rows.ncols() {
            return Err(LabError::InvalidParameter(format!(
                "{d} basis rows in dimension {}",
                rows.ncols()
            )));
        }
        let gram = &rows * rows.transpose();
        let err = (gram - DMatrix::<f64>::identity(d, d)).amax();
        if err > 1e-10 {
            return Err(LabError::InvalidParameter(format!(
                "basis rows are not orthonormal (error {err:.3e})"
            )));
        }
        Ok(SubspaceBasis { rows })
    }

    pub fn from_rows(ambient: usize, rows: &[Vec<f64>]) -> Result<Self> {
        for r in rows {
            super::check_dim(ambient, r.len())?;
        }
        let m = DMatrix::from_fn(rows.len(), ambient, |i, j| rows[i][j]);
        Self::from_matrix(m)
    }

    pub fn dim(&self) -> usize {
        self.rows.nrows()
    }

    pub fn ambient(&self) -> usize {
        self.rows.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn row_vecs(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.rows.row(i).iter().copied().collect())
            .collect()
    }

    /// Coordinates `B x` of `x` in the basis.
    pub fn coords(&self, x: &[f64]) -> DVector<f64> {
        &self.rows * DVector::from_column_slice(x)
    }

    /// Maps basis coordinates back to the ambient space.
    pub fn lift(&self, c: &DVector<f64>) -> Vec<f64> {
        (self.rows.transpose() * c).as_slice().to_vec()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.lift(&self.coords(x))
    }

    /// `|x - P x| / |x|`, zero for the zero vector.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let nx = super::norm(x);
        if nx == 0.0 {
            return 0.0;
        }
        let c = self.coords(x);
        let res2 = (nx * nx - c.norm_squared()).max(0.0);
        // The subtraction loses accuracy for tiny residuals; recompute directly.
        if res2 < 1e-12 * nx * nx {
            let p = self.lift(&c);
            let r: f64 = x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
            return r.sqrt() / nx;
        }
        res2.sqrt() / nx
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.relative_residual(x) <= MEMBERSHIP_TOL
    }
}

/// Orthonormal basis of `span(S)`. Points are weighted equally after
/// normalization; directions are added in order of captured mass until every
/// point has relative residual at most `MEMBERSHIP_TOL`.
pub fn span_basis(points: &[Vec<f64>], rank_tol: f64) -> Result<SubspaceBasis> {
    let n = points
        .first()
        .ok_or(LabError::Empty("span of an empty set"))?
        .len();
    let units: Vec<Vec<f64>> = points.iter().filter_map(|p| super::normalized(p)).collect();
    if units.is_empty() {
        return Ok(SubspaceBasis {
            rows: DMatrix::zeros(0, n),
        });
    }
    let eig = sym_eigen(&second_moment(&units)?);
    let lmax = eig.max();
    let mut d = eig.values.iter().filter(|&&l| l > rank_tol * lmax).count().max(1);
    loop {
        let rows = DMatrix::from_fn(d, n, |i, j| eig.vectors[(j, i)]);
        let basis = SubspaceBasis { rows };
        if d == n || units.iter().all(|u| basis.contains(u)) {
            return Ok(basis);
        }
        d += 1;
    }
}

/// Serde adapter storing a dense matrix as a list of rows.
pub mod row_major {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_vector, stream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_sym(n: usize, seed: u64) -> SymMatrix {
        let mut rng = stream(seed, &[]);
        let g = gaussian_vector(n * n, 1.0, &mut rng);
        let m = DMatrix::from_column_slice(n, n, &g);
        SymMatrix::new(&m + m.transpose()).unwrap()
    }

    fn random_psd(n: usize, rank: usize, seed: u64) -> SymMatrix {
        let mut rng = stream(seed, &[1]);
        let g = gaussian_vector(n * rank, 1.0, &mut rng);
        let f = DMatrix::from_column_slice(n, rank, &g);
        SymMatrix::new(&f * f.transpose()).unwrap()
    }

    #[test]
    fn eigen_of_identity_and_diagonal() {
        let e = sym_eigen(&SymMatrix::identity(4));
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let e = sym_eigen(&SymMatrix::from_diagonal(&[1.0, 4.0]));
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_relative_eq!(e.vectors[(1, 0)].abs(), 1.0);
        assert_relative_eq!(e.vectors[(0, 1)].abs(), 1.0);
    }

    #[test]
    fn rejects_non_symmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(LabError::NonSymmetric(_))));
    }

    #[test]
    fn eigen_reconstructs_random_6x6() {
        let m = random_sym(6, 3);
        let e = sym_eigen(&m);
        let res = (e.reconstruct() - m.as_matrix()).norm();
        assert!(res <= 1e-8 * m.as_matrix().norm());
        let orth = (e.vectors.transpose() * &e.vectors - DMatrix::identity(6, 6)).norm();
        assert!(orth < 1e-10);
    }

    #[test]
    fn eigenvalues_agree_with_nalgebra() {
        for seed in 0..20 {
            let n = 2 + (seed as usize % 9);
            let m = random_sym(n, seed);
            let ours = sym_eigen(&m).values;
            let mut theirs: Vec<f64> = m.as_matrix().clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn inv_sqrt_examples() {
        let r = inv_sqrt_psd(&SymMatrix::identity(3), DEFAULT_RANK_TOL).unwrap();
        assert!((r.as_matrix() - DMatrix::identity(3, 3)).amax() < 1e-14);
        let r = inv_sqrt_psd(&SymMatrix::from_diagonal(&[4.0, 1.0]), DEFAULT_RANK_TOL).unwrap();
        assert_relative_eq!(r.as_matrix()[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(r.as_matrix()[(1, 1)], 1.0, epsilon = 1e-14);
        assert!(matches!(
            inv_sqrt_psd(&SymMatrix::from_diagonal(&[0.0, 0.0]), DEFAULT_RANK_TOL),
            Err(LabError::ZeroMatrix)
        ));
    }

    #[test]
    fn inv_sqrt_matches_nalgebra_oracle() {
        let m = random_psd(7, 7, 12);
        let ours = inv_sqrt_psd(&m, DEFAULT_RANK_TOL).unwrap();
        let e = m.as_matrix().clone().symmetric_eigen();
        let d = e.eigenvalues.map(|l| 1.0 / l.sqrt());
        let oracle = &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose();
        assert!((ours.as_matrix() - &oracle).norm() < 1e-8 * oracle.norm());
    }

    #[test]
    fn second_moment_examples() {
        let m = second_moment(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m.as_matrix(), &DMatrix::from_diagonal_element(2, 2, 0.5));
        let m = second_moment(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(m.as_matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(second_moment(&[]).is_err());
    }

    #[test]
    fn second_moment_trace_of_unit_points() {
        let mut rng = stream(4, &[]);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| crate::numerics::normalized(&gaussian_vector(5, 1.0, &mut rng)).unwrap())
            .collect();
        let m = second_moment(&pts).unwrap();
        // Direct summation of squared norms as the oracle.
        let direct: f64 = pts.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / 200.0;
        assert!((m.trace() - direct).abs() < 1e-12);
        assert!((m.trace() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn span_examples() {
        let b = span_basis(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], DEFAULT_RANK_TOL).unwrap();
        assert_eq!(b.dim(), 1);
        let b = span_basis(&[vec![1.0, 1.0], vec![1.0, -2.0]], DEFAULT_RANK_TOL).unwrap();
        assert_eq!(b.dim(), 2);
    }

    #[test]
    fn span_of_random_low_rank_sets() {
        for seed in 0..10u64 {
            let mut rng = stream(seed, &[2]);
            let n = 8;
            let rank = 1 + (seed as usize % 6);
            let gens: Vec<Vec<f64>> = (0..rank).map(|_| gaussian_vector(n, 1.0, &mut rng)).collect();
            let pts: Vec<Vec<f64>> = (0..40)
                .map(|_| {
                    let c = gaussian_vector(rank, 1.0, &mut rng);
                    (0..n).map(|j| (0..rank).map(|i| c[i] * gens[i][j]).sum()).collect()
                })
                .collect();
            let b = span_basis(&pts, DEFAULT_RANK_TOL).unwrap();
            // Oracle: rank from nalgebra's singular values of the stacked points.
            let stacked = DMatrix::from_fn(pts.len(), n, |i, j| pts[i][j]);
            let sv = stacked.singular_values();
            let oracle_rank = sv.iter().filter(|&&s| s > 1e-8 * sv[0]).count();
            assert_eq!(b.dim(), oracle_rank);
            assert!(pts.iter().all(|p| b.contains(p)));
        }
    }

    #[test]
    fn basis_serde_roundtrip() {
        let b = span_basis(&[vec![1.0, 2.0, 0.5], vec![0.3, -1.0, 2.0]], DEFAULT_RANK_TOL).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: SubspaceBasis = serde_json::from_str(&s).unwrap();
        assert_eq!(b, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn inv_sqrt_gives_range_projector(n in 1usize..=20, rank_frac in 0.2f64..=1.0, seed in any::<u64>()) {
            let rank = ((n as f64 * rank_frac).ceil() as usize).clamp(1, n);
            let m = random_psd(n, rank, seed);
            let r = inv_sqrt_psd(&m, DEFAULT_RANK_TOL).unwrap();
            let prod = r.as_matrix() * m.as_matrix() * r.as_matrix();
            let e = sym_eigen(&m);
            let mut proj = DMatrix::<f64>::zeros(n, n);
            for i in 0..rank {
                let c = e.vectors.column(i);
                proj += c * c.transpose();
            }
            prop_assert!((prod - proj).amax() < 1e-7);
        }

        #[test]
        fn eigenvalue_sum_is_trace(n in 1usize..=12, seed in any::<u64>()) {
            let m = random_sym(n, seed);
            let e = sym_eigen(&m);
            let s: f64 = e.values.iter().sum();
            let scale = m.as_matrix().norm().max(1e-300);
            prop_assert!((s - m.trace()).abs() <= 1e-9 * scale);
            prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
