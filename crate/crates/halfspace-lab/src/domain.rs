//! Domain types: signs, samples, targets, hypotheses and learner knobs.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::filtering::Region;
use crate::forster::ForsterParams;
use crate::numerics::{self, check_dim, dot, norm, row_major, stream, SubspaceBasis};
use crate::{LabError, Result};

/// A Boolean label, with `-1` read as false and `+1` as true.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Neg,
    Pos,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Neg, Sign::Pos];

    pub fn value(self) -> i8 {
        match self {
            Sign::Neg => -1,
            Sign::Pos => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Neg => Sign::Pos,
            Sign::Pos => Sign::Neg,
        }
    }

    pub fn is_pos(self) -> bool {
        self == Sign::Pos
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Sign::Neg),
            1 => Ok(Sign::Pos),
            other => Err(format!("label must be -1 or 1, got {other}")),
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value()
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// `+1` iff `t >= 0`, so the boundary itself is positive.
pub fn sign(t: f64) -> Sign {
    if t >= 0.0 {
        Sign::Pos
    } else {
        Sign::Neg
    }
}

/// `sign(w . x - theta)` with a unit normal `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub w: Vec<f64>,
    pub theta: f64,
}

impl Halfspace {
    /// Normalizes `w`; the threshold is rescaled by the same factor so the
    /// classifier is unchanged.
    pub fn new(w: Vec<f64>, theta: f64) -> Result<Self> {
        let r = norm(&w);
        if r == 0.0 || !r.is_finite() {
            return Err(LabError::InvalidParameter("halfspace normal must be nonzero".into()));
        }
        Ok(Halfspace {
            w: w.iter().map(|v| v / r).collect(),
            theta: theta / r,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Sign> {
        check_dim(self.dim(), x.len())?;
        Ok(sign(dot(&self.w, x) - self.theta))
    }
}

/// Lifts `x` to `(x, 1)` and `h` to the origin-centered `(w, -theta)`.
pub fn homogenize(x: &[f64], h: &Halfspace) -> Result<(Vec<f64>, Halfspace)> {
    check_dim(h.dim(), x.len())?;
    let mut xp = x.to_vec();
    xp.push(1.0);
    let mut wp = h.w.clone();
    wp.push(-h.theta);
    Ok((xp, Halfspace::new(wp, 0.0)?))
}

/// `g(h_1(x), ..., h_k(x))` for origin-centered halfspaces `h_i`.
///
/// Table index: halfspace `i` (1-based) contributes bit `2^(i-1)` when
/// `sign(w_i . x) = +1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub weights: Vec<Vec<f64>>,
    pub table: Vec<Sign>,
}

impl TargetFunction {
    pub fn new(weights: Vec<Vec<f64>>, table: Vec<Sign>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || k > 16 {
            return Err(LabError::InvalidParameter(format!("k = {k} halfspaces")));
        }
        if table.len() != 1 << k {
            return Err(LabError::InvalidParameter(format!(
                "truth table has {} entries, expected {}",
                table.len(),
                1usize << k
            )));
        }
        let n = weights[0].len();
        let mut unit = Vec::with_capacity(k);
        for w in &weights {
            check_dim(n, w.len())?;
            let r = norm(w);
            if (r - 1.0).abs() > 1e-9 {
                return Err(LabError::InvalidParameter(format!("weight norm {r}, expected 1")));
            }
            unit.push(w.iter().map(|v| v / r).collect());
        }
        Ok(TargetFunction { weights: unit, table })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn n(&self) -> usize {
        self.weights[0].len()
    }

    pub fn table_index(&self, x: &[f64]) -> Result<usize> {
        check_dim(self.n(), x.len())?;
        Ok(self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| sign(dot(w, x)).is_pos())
            .map(|(i, _)| 1usize << i)
            .sum())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Sign> {
        Ok(self.table[self.table_index(x)?])
    }
}

pub fn evaluate_target(f: &TargetFunction, x: &[f64]) -> Result<Sign> {
    f.evaluate(x)
}

/// Finite multiset of labeled points in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub n: usize,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<Sign>,
}

impl LabeledSample {
    pub fn new(n: usize, points: Vec<Vec<f64>>, labels: Vec<Sign>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(LabError::InvalidParameter(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        for p in &points {
            check_dim(n, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(LabError::NonFinite("sample point"));
            }
        }
        Ok(LabeledSample { n, points, labels })
    }

    pub fn empty(n: usize) -> Self {
        LabeledSample {
            n,
            points: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Labels every point with `f`.
    pub fn labeled_by(f: &TargetFunction, points: Vec<Vec<f64>>) -> Result<Self> {
        let labels = points.iter().map(|p| f.evaluate(p)).collect::<Result<Vec<_>>>()?;
        Self::new(f.n(), points, labels)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Sign)> + '_ {
        self.points.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSample {
        LabeledSample {
            n: self.n,
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn count(&self, s: Sign) -> usize {
        self.labels.iter().filter(|&&l| l == s).count()
    }

    /// Scales every point to the unit sphere; labels of origin-centered
    /// targets are unaffected.
    pub fn normalized(&self) -> Result<LabeledSample> {
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| numerics::normalized(p).ok_or(LabError::ZeroPoint { index: i }))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledSample {
            n: self.n,
            points,
            labels: self.labels.clone(),
        })
    }
}

const BOUNDARY_TOL: f64 = 1e-12;
const PERTURB_SCALE: f64 = 1e-9;

fn on_some_boundary(f: &TargetFunction, x: &[f64]) -> bool {
    let r = norm(x);
    f.weights.iter().any(|w| dot(w, x).abs() <= BOUNDARY_TOL * r)
}

/// Nudges points lying on a target boundary by at most `1e-9`, keeps their
/// norm, and relabels everything with `f`.
pub fn perturb_labelsafe(s: &LabeledSample, f: &TargetFunction, seed: u64) -> Result<LabeledSample> {
    check_dim(f.n(), s.n)?;
    let mut points = Vec::with_capacity(s.len());
    for (i, x) in s.points.iter().enumerate() {
        if !on_some_boundary(f, x) {
            points.push(x.clone());
            continue;
        }
        let mut rng = stream(seed, &[i as u64]);
        let r = norm(x);
        let mut attempt = 0;
        let moved = loop {
            let dir = numerics::normalized(&numerics::gaussian_vector(s.n, 1.0, &mut rng))
                .unwrap_or_else(|| {
                    let mut e = vec![0.0; s.n];
                    e[0] = 1.0;
                    e
                });
            let mut y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + PERTURB_SCALE * d).collect();
            if r > 0.0 {
                let ry = norm(&y);
                y.iter_mut().for_each(|v| *v *= r / ry);
            }
            attempt += 1;
            if !on_some_boundary(f, &y) || attempt >= 1000 {
                break y;
            }
        };
        points.push(moved);
    }
    LabeledSample::labeled_by(f, points)
}

/// Which side of a filtering region counts as inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
}

impl Side {
    pub fn as_sign(self) -> Sign {
        match self {
            Side::Minus => Sign::Neg,
            Side::Plus => Sign::Pos,
        }
    }
}

/// One filtering stage: map the point with `transform`, renormalize, and
/// test membership in `region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    #[serde(with = "row_major")]
    pub transform: DMatrix<f64>,
    pub region: Region,
}

impl Stage {
    /// `A x / |A x|`, or an error if `A x = 0`.
    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.transform.ncols(), x.len())?;
        let y = &self.transform * DVector::from_column_slice(x);
        let r = y.norm();
        if r == 0.0 || !r.is_finite() {
            return Err(LabError::DegenerateTransform);
        }
        Ok(y.iter().map(|v| v / r).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inner {
    Constant { value: Sign },
    /// `sign(w . y)` where `y` is the output of the last stage (or the raw
    /// point when there are no stages).
    Halfspace { w: Vec<f64> },
}

/// Subspace test, then a chain of region tests, then an inner rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseChain {
    pub basis: SubspaceBasis,
    pub stages: Vec<Stage>,
    pub b1: Sign,
    pub b2: Sign,
    pub inner: Inner,
}

impl PiecewiseChain {
    pub fn evaluate(&self, x: &[f64]) -> Result<Sign> {
        check_dim(self.basis.ambient(), x.len())?;
        if !self.basis.contains(x) {
            return Ok(self.b1);
        }
        let mut last: Option<Vec<f64>> = None;
        for stage in &self.stages {
            let y = stage.map(x)?;
            if !stage.region.contains(&y)? {
                return Ok(self.b2);
            }
            last = Some(y);
        }
        match &self.inner {
            Inner::Constant { value } => Ok(*value),
            Inner::Halfspace { w } => {
                let y = last.as_deref().unwrap_or(x);
                check_dim(w.len(), y.len())?;
                Ok(sign(dot(w, y)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hypothesis {
    Constant { value: Sign },
    Chain(PiecewiseChain),
}

impl Hypothesis {
    pub fn constant(value: Sign) -> Self {
        Hypothesis::Constant { value }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Sign> {
        match self {
            Hypothesis::Constant { value } => Ok(*value),
            Hypothesis::Chain(c) => c.evaluate(x),
        }
    }

    pub fn stage_count(&self) -> usize {
        match self {
            Hypothesis::Constant { .. } => 0,
            Hypothesis::Chain(c) => c.stages.len(),
        }
    }
}

/// Result of a weak learner: a hypothesis, or FAIL after the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LearnOutcome {
    Hypothesis { hypothesis: Hypothesis },
    Fail,
}

impl LearnOutcome {
    pub fn hypothesis(&self) -> Option<&Hypothesis> {
        match self {
            LearnOutcome::Hypothesis { hypothesis } => Some(hypothesis),
            LearnOutcome::Fail => None,
        }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, LearnOutcome::Fail)
    }
}

pub fn evaluate_hypothesis(h: &Hypothesis, x: &[f64]) -> Result<Sign> {
    h.evaluate(x)
}

/// Number of points of `s` on which `h` agrees with the label.
pub fn correct_count(h: &Hypothesis, s: &LabeledSample) -> Result<usize> {
    let mut c = 0;
    for (x, y) in s.iter() {
        if h.evaluate(x)? == y {
            c += 1;
        }
    }
    Ok(c)
}

pub fn accuracy(h: &Hypothesis, s: &LabeledSample) -> Result<f64> {
    if s.is_empty() {
        return Err(LabError::Empty("accuracy on an empty sample"));
    }
    Ok(correct_count(h, s)? as f64 / s.len() as f64)
}

/// Fraction of `s` on which the target function agrees with the labels.
pub fn accuracy_of_target(f: &TargetFunction, s: &LabeledSample) -> Result<f64> {
    if s.is_empty() {
        return Err(LabError::Empty("accuracy on an empty sample"));
    }
    let mut c = 0usize;
    for (x, y) in s.iter() {
        if f.evaluate(x)? == y {
            c += 1;
        }
    }
    Ok(c as f64 / s.len() as f64)
}

/// Knobs of the sample-based weak learners. Asymptotic quantities of the
/// analysis become explicit desk-scale parameters here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerParams {
    /// Number of Gaussian guesses (outer iterations).
    pub guess_budget: usize,
    /// Inner-loop length of the k-halfspace learner; `None` means `ceil(L^k)`.
    pub inner_steps: Option<usize>,
    /// Required sample advantage over 1/2.
    pub gamma_desk: f64,
    /// Iteration budget of the consistent-halfspace solver.
    pub lp_budget: usize,
    pub seed: u64,
    /// Floor for the logarithm: `L = max(ln n, log_base_floor)`.
    pub log_base_floor: f64,
    /// Minimum filtered fraction before the halfspace branch is tried;
    /// `None` means `max(2^-sqrt(n), 10/|S'|)`.
    pub size_floor: Option<f64>,
    /// Upper bound on region thresholds.
    pub beta_cap: f64,
    pub forster: ForsterParams,
}

impl Default for LearnerParams {
    fn default() -> Self {
        LearnerParams {
            guess_budget: 20_000,
            inner_steps: None,
            gamma_desk: 0.01,
            lp_budget: 100_000,
            seed: 0,
            log_base_floor: 2.0,
            size_floor: None,
            beta_cap: 0.9,
            forster: ForsterParams::default(),
        }
    }
}

impl LearnerParams {
    /// Defaults for the k-halfspace learner.
    pub fn anyk_defaults() -> Self {
        LearnerParams {
            gamma_desk: 0.005,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::InvalidParameter(m.to_string()));
        if self.guess_budget == 0 {
            return bad("guess_budget must be positive");
        }
        if self.inner_steps == Some(0) {
            return bad("inner_steps must be positive");
        }
        if !(self.gamma_desk > 0.0 && self.gamma_desk < 0.5) {
            return bad("gamma_desk must lie in (0, 1/2)");
        }
        if self.lp_budget == 0 {
            return bad("lp_budget must be positive");
        }
        if !(self.log_base_floor >= 2.0) {
            return bad("log_base_floor must be at least 2");
        }
        if let Some(f) = self.size_floor {
            if !(f > 0.0 && f <= 1.0) {
                return bad("size_floor must lie in (0, 1]");
            }
        }
        if !(self.beta_cap > 0.0) {
            return bad("beta_cap must be positive");
        }
        self.forster.validate()
    }

    /// `L = max(ln n, log_base_floor)`.
    pub fn log_base(&self, n: usize) -> f64 {
        (n as f64).ln().max(self.log_base_floor)
    }
}
