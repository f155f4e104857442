//! Weak learner for intersections of two halfspaces over a fixed sample.
//!
//! One Forster transform, then repeated Gaussian guesses `g`. Each guess
//! yields a region `R-(g)` whose members are all predicted `-1`, and, when
//! `R+(g)` holds enough points, a region on which a consistent halfspace is
//! fitted. The first piecewise hypothesis clearing the accuracy threshold
//! wins.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    correct_count, Hypothesis, Inner, LabeledSample, LearnOutcome, LearnerParams, PiecewiseChain, Side, Sign,
    Stage,
};
use crate::filtering::Region;
use crate::forster::{forsterize, ForsterOutput};
use crate::learners::find_consistent_halfspace;
use crate::numerics::{dot, first_success, gaussian_vector, stream, SubspaceBasis};
use crate::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Minus,
    Plus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weak2Report {
    pub outcome: LearnOutcome,
    /// Guesses consumed, including the successful one.
    pub iterations_used: usize,
    pub branch: Option<Branch>,
    /// Recounted sample accuracy minus 1/2.
    pub sample_advantage: Option<f64>,
    pub seed: u64,
    pub beta: f64,
    pub forster_dim: usize,
    pub kept: usize,
}

/// The `b1, b2` choices in enumeration order.
pub(crate) const BIT_PAIRS: [(Sign, Sign); 4] = [
    (Sign::Neg, Sign::Neg),
    (Sign::Neg, Sign::Pos),
    (Sign::Pos, Sign::Neg),
    (Sign::Pos, Sign::Pos),
];

/// `[negatives, positives]`.
pub(crate) type Tally = [usize; 2];

pub(crate) fn tally_index(s: Sign) -> usize {
    match s {
        Sign::Neg => 0,
        Sign::Pos => 1,
    }
}

/// Points of the sample split by whether they lie in `V`; points in `V`
/// carry their transformed image, computed exactly as hypothesis
/// evaluation does.
pub(crate) struct Prepared {
    pub outside: Tally,
    pub inside: Vec<(Vec<f64>, Sign)>,
}

pub(crate) fn prepare(s: &LabeledSample, basis: &SubspaceBasis, stage_map: &Stage) -> Result<Prepared> {
    let mut outside = [0, 0];
    let mut inside = Vec::new();
    for (x, y) in s.iter() {
        if basis.contains(x) {
            inside.push((stage_map.map(x)?, y));
        } else {
            outside[tally_index(y)] += 1;
        }
    }
    Ok(Prepared { outside, inside })
}

fn validate_input(s: &LabeledSample, params: &LearnerParams) -> Result<LabeledSample> {
    params.validate()?;
    if s.len() < 2 {
        return Err(LabError::InvalidParameter("the weak learners need at least two examples".into()));
    }
    s.normalized()
}

/// `beta = sqrt(L) / n^(1/4)` with `L = max(ln n, floor)`.
pub fn weak2_beta(n: usize, params: &LearnerParams) -> f64 {
    params.log_base(n).sqrt() / (n as f64).powf(0.25)
}

/// Default size floor `max(2^-sqrt(n), 10/|S'|)` unless overridden.
pub fn size_floor(n: usize, kept: usize, params: &LearnerParams) -> f64 {
    params
        .size_floor
        .unwrap_or_else(|| 2f64.powf(-(n as f64).sqrt()).max(10.0 / kept.max(1) as f64))
}

pub fn assemble_h_minus(
    basis: &SubspaceBasis,
    map: &DMatrix<f64>,
    g: &[f64],
    beta: f64,
    b1: Sign,
    b2: Sign,
) -> Result<Hypothesis> {
    Ok(Hypothesis::Chain(PiecewiseChain {
        basis: basis.clone(),
        stages: vec![Stage {
            transform: map.clone(),
            region: Region::new(g.to_vec(), beta, Side::Minus)?,
        }],
        b1,
        b2,
        inner: Inner::Constant { value: Sign::Neg },
    }))
}

pub fn assemble_h_plus(
    basis: &SubspaceBasis,
    map: &DMatrix<f64>,
    g: &[f64],
    beta: f64,
    w_inner: &[f64],
    b1: Sign,
    b2: Sign,
) -> Result<Hypothesis> {
    if w_inner.iter().all(|&v| v == 0.0) {
        return Err(LabError::InvalidParameter("inner halfspace normal must be nonzero".into()));
    }
    Ok(Hypothesis::Chain(PiecewiseChain {
        basis: basis.clone(),
        stages: vec![Stage {
            transform: map.clone(),
            region: Region::new(g.to_vec(), beta, Side::Plus)?,
        }],
        b1,
        b2,
        inner: Inner::Halfspace { w: w_inner.to_vec() },
    }))
}

/// Best `(b1, b2)` given the counts outside `V`, inside `V` but outside the
/// region, and the number of correct predictions inside the region.
pub(crate) fn best_bits(outside: Tally, between: Tally, inner_correct: usize) -> (Sign, Sign, usize) {
    let mut best = (Sign::Neg, Sign::Neg, 0usize);
    let mut first = true;
    for (b1, b2) in BIT_PAIRS {
        let c = outside[tally_index(b1)] + between[tally_index(b2)] + inner_correct;
        if first || c > best.2 {
            best = (b1, b2, c);
            first = false;
        }
    }
    best
}

pub(crate) fn meets_threshold(correct: usize, m: usize, gamma: f64) -> bool {
    correct as f64 >= (0.5 + gamma) * m as f64
}

struct Success {
    hypothesis: Hypothesis,
    branch: Branch,
    correct: usize,
}

struct Context<'a> {
    s: &'a LabeledSample,
    prep: Prepared,
    out: ForsterOutput,
    map: DMatrix<f64>,
    beta: f64,
    floor: f64,
    params: &'a LearnerParams,
}

impl Context<'_> {
    fn guess(&self, it: usize) -> Result<Option<Success>> {
        let n = self.s.n;
        let m = self.s.len();
        let gamma = self.params.gamma_desk;
        let mut rng = stream(self.params.seed, &[it as u64]);
        let g = gaussian_vector(n, 1.0 / n as f64, &mut rng);
        let proj: Vec<f64> = self.prep.inside.iter().map(|(z, _)| dot(&g, z)).collect();

        let minus = Region::new(g.clone(), self.beta, Side::Minus)?;
        let mut between = [0, 0];
        let mut inner_correct = 0;
        for (p, (_, y)) in proj.iter().zip(&self.prep.inside) {
            if minus.contains_projection(*p) {
                inner_correct += (*y == Sign::Neg) as usize;
            } else {
                between[tally_index(*y)] += 1;
            }
        }
        let (b1, b2, correct) = best_bits(self.prep.outside, between, inner_correct);
        if meets_threshold(correct, m, gamma) {
            let h = assemble_h_minus(&self.out.basis, &self.map, &g, self.beta, b1, b2)?;
            return Ok(Some(Success {
                hypothesis: h,
                branch: Branch::Minus,
                correct,
            }));
        }

        let plus = Region::new(g.clone(), self.beta, Side::Plus)?;
        let members: Vec<usize> = (0..proj.len()).filter(|&i| plus.contains_projection(proj[i])).collect();
        let kept = self.prep.inside.len();
        if members.is_empty() || (members.len() as f64) < self.floor * kept as f64 {
            return Ok(None);
        }
        let draws = ((n as f64 * self.params.log_base(n)).ceil() as usize).min(members.len());
        let picked: Vec<usize> = (0..draws).map(|_| members[rng.random_range(0..members.len())]).collect();
        let sub = LabeledSample {
            n,
            points: picked.iter().map(|&i| self.prep.inside[i].0.clone()).collect(),
            labels: picked.iter().map(|&i| self.prep.inside[i].1).collect(),
        };
        let fit = find_consistent_halfspace(&sub, self.params.lp_budget)?;
        let Some(w) = fit.weight() else {
            return Ok(None);
        };
        let mut between = [0, 0];
        let mut inner_correct = 0;
        for (i, (z, y)) in self.prep.inside.iter().enumerate() {
            if plus.contains_projection(proj[i]) {
                inner_correct += (crate::sign(dot(w, z)) == *y) as usize;
            } else {
                between[tally_index(*y)] += 1;
            }
        }
        let (b1, b2, correct) = best_bits(self.prep.outside, between, inner_correct);
        if meets_threshold(correct, m, gamma) {
            let h = assemble_h_plus(&self.out.basis, &self.map, &g, self.beta, w, b1, b2)?;
            return Ok(Some(Success {
                hypothesis: h,
                branch: Branch::Plus,
                correct,
            }));
        }
        Ok(None)
    }
}

/// Runs the two-halfspace weak learner on `s`.
pub fn weak_learn_and2(s: &LabeledSample, params: &LearnerParams) -> Result<Weak2Report> {
    let s = validate_input(s, params)?;
    let n = s.n;
    let out = forsterize(&s.points, &params.forster)?;
    let map = out.ambient_map();
    let beta = weak2_beta(n, params);
    // The stage used only to compute images; its region is irrelevant here.
    let probe = Stage {
        transform: map.clone(),
        region: Region::new(vec![0.0; n], 1.0, Side::Plus)?,
    };
    let prep = prepare(&s, &out.basis, &probe)?;
    let floor = size_floor(n, prep.inside.len(), params);
    let ctx = Context {
        s: &s,
        prep,
        out,
        map,
        beta,
        floor,
        params,
    };
    let found = first_success(params.guess_budget, |it| ctx.guess(it))?;
    let (forster_dim, kept) = (ctx.out.dim(), ctx.out.kept_indices.len());
    match found {
        Some((it, success)) => {
            let recount = correct_count(&success.hypothesis, &s)?;
            if recount != success.correct || !meets_threshold(recount, s.len(), params.gamma_desk) {
                return Err(LabError::Internal(format!(
                    "internal count {} disagrees with recount {recount}",
                    success.correct
                )));
            }
            Ok(Weak2Report {
                outcome: LearnOutcome::Hypothesis {
                    hypothesis: success.hypothesis,
                },
                iterations_used: it + 1,
                branch: Some(success.branch),
                sample_advantage: Some(recount as f64 / s.len() as f64 - 0.5),
                seed: params.seed,
                beta,
                forster_dim,
                kept,
            })
        }
        None => Ok(Weak2Report {
            outcome: LearnOutcome::Fail,
            iterations_used: params.guess_budget,
            branch: None,
            sample_advantage: None,
            seed: params.seed,
            beta,
            forster_dim,
            kept,
        }),
    }
}
