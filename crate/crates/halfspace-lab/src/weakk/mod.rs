//! Weak learner for arbitrary functions of `k` halfspaces over a sample.
//!
//! Each outer iteration runs a chain of random filters: pick a slot `r`, a
//! Gaussian guess `g` and a side `s`, keep the points of the current set in
//! the region `R_s^{beta_r}(g)`, Forsterize what is left and compose the
//! maps. Once every leaderboard slot is filled the chain is turned into a
//! piecewise hypothesis with three constant pieces.

pub mod diagnostics;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    correct_count, Hypothesis, Inner, LabeledSample, LearnOutcome, LearnerParams, PiecewiseChain, Side, Sign, Stage,
};
use crate::filtering::Region;
use crate::forster::{forsterize, transform_normal, ForsterOutput, ForsterParams};
use crate::numerics::{dot, gaussian_vector, scan_until, span_basis, stream, SubspaceBasis};
use crate::weak2::{meets_threshold, tally_index, Tally};
use crate::{LabError, Result};

/// Region thresholds `beta_1 >= ... >= beta_k` and luck thresholds
/// `alpha_j = 10 beta_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub n: usize,
    /// `L = max(ln n, log_base_floor)`.
    pub log_base: f64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl BetaSchedule {
    pub fn k(&self) -> usize {
        self.betas.len()
    }

    /// `beta_j` for a 1-based slot.
    pub fn beta(&self, j: usize) -> f64 {
        self.betas[j - 1]
    }

    pub fn alpha(&self, j: usize) -> f64 {
        self.alphas[j - 1]
    }
}

/// `beta_i = min(L^(5(k-i+1)) / n^(1/4), beta_cap)`.
pub fn beta_schedule(n: usize, k: usize, params: &LearnerParams) -> BetaSchedule {
    let l = params.log_base(n);
    let root = (n as f64).powf(0.25);
    let betas: Vec<f64> = (1..=k)
        .map(|i| (l.powi((5 * (k - i + 1)) as i32) / root).min(params.beta_cap))
        .collect();
    let alphas = betas.iter().map(|b| 10.0 * b).collect();
    BetaSchedule {
        n,
        log_base: l,
        betas,
        alphas,
    }
}

/// Inner-loop length: the configured value, else `ceil(L^k)`.
pub fn inner_steps(n: usize, k: usize, params: &LearnerParams) -> usize {
    params
        .inner_steps
        .unwrap_or_else(|| (params.log_base(n).powi(k as i32) - 1e-9).ceil() as usize)
        .max(1)
}

/// Sets `u_r = t` and clears every later slot. `r` is 1-based.
///
/// # Panics
/// If `r` is not in `1..=u.len()`.
pub fn leaderboard_update(u: &[usize], r: usize, t: usize) -> Vec<usize> {
    assert!(r >= 1 && r <= u.len(), "slot {r} outside 1..={}", u.len());
    let mut out = u.to_vec();
    out[r - 1] = t;
    out[r..].iter_mut().for_each(|v| *v = 0);
    out
}

/// Number of filled slots before the first empty one.
pub fn nnz_prefix(u: &[usize]) -> usize {
    u.iter().take_while(|&&v| v != 0).count()
}

/// A strictly increasing run of timestamps followed only by zeros.
pub fn u_shape_ok(u: &[usize]) -> bool {
    let p = nnz_prefix(u);
    u[..p].windows(2).all(|w| w[0] < w[1]) && u[p..].iter().all(|&v| v == 0)
}

/// Leaderboard timestamps and the current time step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardState {
    pub u: Vec<usize>,
    pub t: usize,
}

impl LeaderboardState {
    pub fn new(k: usize) -> Self {
        LeaderboardState { u: vec![0; k], t: 0 }
    }

    pub fn is_full(&self) -> bool {
        self.u.iter().all(|&v| v != 0)
    }

    pub fn update(&mut self, r: usize) {
        self.u = leaderboard_update(&self.u, r, self.t);
    }
}

/// Outcome of one filtering step.
pub(crate) enum Advance {
    Kept,
    Empty,
    Degenerate,
}

/// The current set `S_t` of a chain together with everything needed to map
/// original points into it.
#[derive(Debug, Clone)]
pub(crate) struct ChainState {
    /// `S_t` as ambient unit vectors.
    pub points: Vec<Vec<f64>>,
    /// Index of each point of `S_t` in the normalized input.
    pub origin: Vec<usize>,
    /// `V_t`, spanned by `S_t`.
    pub image: SubspaceBasis,
    /// `U_t`, spanned by the originals of `S_t`.
    pub domain: SubspaceBasis,
    /// Composite map `A_t`, as an `n x n` matrix.
    pub composite: DMatrix<f64>,
    pub stages: Vec<Stage>,
}

impl ChainState {
    pub fn start(out: &ForsterOutput) -> Self {
        ChainState {
            points: out.points.clone(),
            origin: out.kept_indices.clone(),
            image: out.basis.clone(),
            domain: out.basis.clone(),
            composite: out.ambient_map(),
            stages: Vec::new(),
        }
    }

    /// Filters by `region`, Forsterizes the survivors and composes the map.
    /// Numeric failures leave the state untouched and report `Degenerate`.
    pub fn advance(&mut self, region: Region, originals: &[Vec<f64>], params: &ForsterParams) -> Result<Advance> {
        let keep: Vec<usize> = (0..self.points.len())
            .filter(|&i| region.contains_projection(dot(&region.g, &self.points[i])))
            .collect();
        if keep.is_empty() {
            return Ok(Advance::Empty);
        }
        let sub: Vec<Vec<f64>> = keep.iter().map(|&i| self.points[i].clone()).collect();
        let out = match forsterize(&sub, params) {
            Ok(o) => o,
            Err(e) if e.is_numeric() => return Ok(Advance::Degenerate),
            Err(e) => return Err(e),
        };
        let origin: Vec<usize> = out.kept_indices.iter().map(|&j| self.origin[keep[j]]).collect();
        let pts: Vec<Vec<f64>> = origin.iter().map(|&i| originals[i].clone()).collect();
        let domain = match span_basis(&pts, params.rank_tol) {
            Ok(b) => b,
            Err(e) if e.is_numeric() => return Ok(Advance::Degenerate),
            Err(e) => return Err(e),
        };
        let composite = out.ambient_map() * &self.composite;
        self.stages.push(Stage {
            transform: std::mem::replace(&mut self.composite, composite),
            region,
        });
        self.points = out.points;
        self.origin = origin;
        self.image = out.basis;
        self.domain = domain;
        Ok(Advance::Kept)
    }

    /// `w^(t)`: the normal whose sign on `S_t` matches `w` on the originals,
    /// or `None` when `w` is (numerically) orthogonal to `U_t`.
    pub fn transformed_weight(&self, w: &[f64]) -> Option<Vec<f64>> {
        transform_normal(w, &self.domain, &self.image, &self.composite).ok()
    }

    /// 0 outside `U_t`, 1 when some stage rejects, 2 when every stage
    /// accepts.
    fn category(&self, x: &[f64]) -> Result<usize> {
        if !self.domain.contains(x) {
            return Ok(0);
        }
        for st in &self.stages {
            if !st.region.contains(&st.map(x)?)? {
                return Ok(1);
            }
        }
        Ok(2)
    }
}

/// The hypothesis `h_{b1,b2,b3}` for a chain: `b1` off `U_t`, `b2` when a
/// stage rejects, `b3` when all stages accept.
pub fn assemble_h_b1b2b3(basis: &SubspaceBasis, stages: &[Stage], b1: Sign, b2: Sign, b3: Sign) -> Hypothesis {
    Hypothesis::Chain(PiecewiseChain {
        basis: basis.clone(),
        stages: stages.to_vec(),
        b1,
        b2,
        inner: Inner::Constant { value: b3 },
    })
}

/// Best `(b1, b2, b3)` over the eight choices, `Neg` before `Pos`, first
/// maximum wins.
fn best_triple(tallies: &[Tally; 3]) -> ((Sign, Sign, Sign), usize) {
    let signs = [Sign::Neg, Sign::Pos];
    let mut best = ((Sign::Neg, Sign::Neg, Sign::Neg), 0);
    let mut first = true;
    for b1 in signs {
        for b2 in signs {
            for b3 in signs {
                let c = tallies[0][tally_index(b1)] + tallies[1][tally_index(b2)] + tallies[2][tally_index(b3)];
                if first || c > best.1 {
                    best = ((b1, b2, b3), c);
                    first = false;
                }
            }
        }
    }
    best
}

/// Counters describing how the outer iterations ended.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Chains that filled every slot and were scored.
    pub completed_chains: usize,
    /// Completed chains whose best hypothesis missed the threshold.
    pub rejected_chains: usize,
    pub abandoned_empty: usize,
    pub abandoned_degenerate: usize,
    /// Inner loops that ran out of steps before every slot was filled.
    pub exhausted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakKReport {
    pub outcome: LearnOutcome,
    /// Outer iterations consumed, including the successful one.
    pub iterations_used: usize,
    pub k: usize,
    pub inner_steps: usize,
    pub schedule: BetaSchedule,
    pub summary: TraceSummary,
    /// Recounted sample accuracy minus 1/2.
    pub sample_advantage: Option<f64>,
    pub bits: Option<(Sign, Sign, Sign)>,
    pub stages: Option<usize>,
    pub seed: u64,
    pub forster_dim: usize,
    pub kept: usize,
}

enum Outer {
    Success {
        hypothesis: Hypothesis,
        bits: (Sign, Sign, Sign),
        correct: usize,
    },
    Rejected,
    Empty,
    Degenerate,
    Exhausted,
}

struct Context<'a> {
    s: &'a LabeledSample,
    first: ForsterOutput,
    schedule: BetaSchedule,
    steps: usize,
    params: &'a LearnerParams,
}

impl Context<'_> {
    fn outer(&self, o: usize) -> Result<Outer> {
        let n = self.s.n;
        let k = self.schedule.k();
        let mut rng = stream(self.params.seed, &[o as u64]);
        let mut chain = ChainState::start(&self.first);
        let mut board = LeaderboardState::new(k);
        for t in 1..=self.steps {
            board.t = t;
            if board.is_full() {
                return self.score(&chain);
            }
            let r = rng.random_range(1..=k);
            let g = gaussian_vector(n, 1.0 / n as f64, &mut rng);
            board.update(r);
            let side = if rng.random::<bool>() { Side::Plus } else { Side::Minus };
            let region = Region::new(g, self.schedule.beta(r), side)?;
            match chain.advance(region, &self.s.points, &self.params.forster)? {
                Advance::Kept => {}
                Advance::Empty => return Ok(Outer::Empty),
                Advance::Degenerate => return Ok(Outer::Degenerate),
            }
        }
        Ok(Outer::Exhausted)
    }

    fn score(&self, chain: &ChainState) -> Result<Outer> {
        let mut tallies: [Tally; 3] = [[0, 0]; 3];
        for (x, y) in self.s.iter() {
            let c = match chain.category(x) {
                Ok(c) => c,
                Err(e) if e.is_numeric() => return Ok(Outer::Degenerate),
                Err(e) => return Err(e),
            };
            tallies[c][tally_index(y)] += 1;
        }
        let (bits, correct) = best_triple(&tallies);
        if !meets_threshold(correct, self.s.len(), self.params.gamma_desk) {
            return Ok(Outer::Rejected);
        }
        let hypothesis = assemble_h_b1b2b3(&chain.domain, &chain.stages, bits.0, bits.1, bits.2);
        Ok(Outer::Success {
            hypothesis,
            bits,
            correct,
        })
    }
}

/// Runs the learner on `s` for `k` target halfspaces.
pub fn weak_learn_anyk(s: &LabeledSample, k: usize, params: &LearnerParams) -> Result<WeakKReport> {
    params.validate()?;
    if k == 0 {
        return Err(LabError::InvalidParameter("k must be at least 1".into()));
    }
    if s.len() < 2 {
        return Err(LabError::InvalidParameter("the weak learners need at least two examples".into()));
    }
    let s = s.normalized()?;
    let n = s.n;
    let first = forsterize(&s.points, &params.forster)?;
    let ctx = Context {
        s: &s,
        schedule: beta_schedule(n, k, params),
        steps: inner_steps(n, k, params),
        first,
        params,
    };
    let results = scan_until(params.guess_budget, |o| ctx.outer(o), |r| matches!(r, Outer::Success { .. }))?;

    let mut summary = TraceSummary::default();
    let iterations_used = results.len();
    let mut found = None;
    for r in results {
        match r {
            Outer::Success {
                hypothesis,
                bits,
                correct,
            } => {
                summary.completed_chains += 1;
                found = Some((hypothesis, bits, correct));
            }
            Outer::Rejected => {
                summary.completed_chains += 1;
                summary.rejected_chains += 1;
            }
            Outer::Empty => summary.abandoned_empty += 1,
            Outer::Degenerate => summary.abandoned_degenerate += 1,
            Outer::Exhausted => summary.exhausted += 1,
        }
    }

    let mut report = WeakKReport {
        outcome: LearnOutcome::Fail,
        iterations_used,
        k,
        inner_steps: ctx.steps,
        schedule: ctx.schedule.clone(),
        summary,
        sample_advantage: None,
        bits: None,
        stages: None,
        seed: params.seed,
        forster_dim: ctx.first.dim(),
        kept: ctx.first.kept_indices.len(),
    };
    if let Some((hypothesis, bits, correct)) = found {
        let recount = correct_count(&hypothesis, &s)?;
        if recount != correct {
            return Err(LabError::Internal(format!(
                "internal count {correct} disagrees with recount {recount}"
            )));
        }
        report.sample_advantage = Some(recount as f64 / s.len() as f64 - 0.5);
        report.bits = Some(bits);
        report.stages = Some(hypothesis.stage_count());
        report.outcome = LearnOutcome::Hypothesis { hypothesis };
    }
    Ok(report)
}
