//! Weak learning over a distribution, and weak-to-strong boosting.
//!
//! The sample-based weak learners are lifted to distributions by drawing a
//! sample whose size follows the VC bound. Boosting is multiplicative
//! weights (AdaBoost) over a working sample drawn once; each round realizes
//! the reweighted distribution by sampling the working set with replacement.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DistributionDescriptor, PointSampler};
use crate::domain::{evaluate_target, Hypothesis, LabeledSample, LearnOutcome, LearnerParams, Sign, TargetFunction};
use crate::numerics::{derive_seed, stream, LabRng};
use crate::weak2::weak_learn_and2;
use crate::weakk::{inner_steps, weak_learn_anyk};
use crate::{LabError, Result};

/// Anything that hands out labeled examples one at a time.
pub trait ExampleSource {
    fn n(&self) -> usize;
    fn draw(&mut self) -> Result<(Vec<f64>, Sign)>;

    fn draw_sample(&mut self, m: usize) -> Result<LabeledSample> {
        let mut points = Vec::with_capacity(m);
        let mut labels = Vec::with_capacity(m);
        for _ in 0..m {
            let (x, y) = self.draw()?;
            points.push(x);
            labels.push(y);
        }
        LabeledSample::new(self.n(), points, labels)
    }
}

/// `EX(f, D)`: i.i.d. points from a descriptor, labeled by `f`.
pub struct ExampleOracle {
    target: TargetFunction,
    sampler: PointSampler,
}

pub fn make_oracle(f: &TargetFunction, desc: &DistributionDescriptor, seed: u64) -> Result<ExampleOracle> {
    if f.n() != desc.n {
        return Err(LabError::DimensionMismatch {
            expected: f.n(),
            found: desc.n,
        });
    }
    Ok(ExampleOracle {
        target: f.clone(),
        sampler: PointSampler::new(desc, Some(f), seed)?,
    })
}

impl ExampleOracle {
    pub fn target(&self) -> &TargetFunction {
        &self.target
    }
}

impl ExampleSource for ExampleOracle {
    fn n(&self) -> usize {
        self.sampler.n()
    }

    fn draw(&mut self) -> Result<(Vec<f64>, Sign)> {
        let x = self.sampler.draw();
        let y = evaluate_target(&self.target, &x)?;
        Ok((x, y))
    }
}

/// Draws from a fixed sample with probability proportional to `weights`.
pub struct WeightedSource<'a> {
    sample: &'a LabeledSample,
    cumulative: Vec<f64>,
    rng: LabRng,
}

impl<'a> WeightedSource<'a> {
    pub fn new(sample: &'a LabeledSample, weights: &[f64], seed: u64) -> Result<Self> {
        if sample.is_empty() || weights.len() != sample.len() {
            return Err(LabError::InvalidParameter("weights must match a nonempty sample".into()));
        }
        let mut acc = 0.0;
        let cumulative: Vec<f64> = weights
            .iter()
            .map(|&w| {
                acc += w.max(0.0);
                acc
            })
            .collect();
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(LabError::InvalidParameter("weights must have a positive finite sum".into()));
        }
        Ok(WeightedSource {
            sample,
            cumulative,
            rng: stream(seed, &[]),
        })
    }
}

impl ExampleSource for WeightedSource<'_> {
    fn n(&self) -> usize {
        self.sample.n
    }

    fn draw(&mut self) -> Result<(Vec<f64>, Sign)> {
        let total = *self.cumulative.last().expect("nonempty");
        let u = self.rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        Ok((self.sample.points[i].clone(), self.sample.labels[i]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum WeakLearnerKind {
    Weak2,
    WeakK { k: usize },
}

impl WeakLearnerKind {
    /// VC-dimension plug-in: `n^2` for the two-halfspace class, and
    /// `n^2 * inner_steps` for chains of up to `inner_steps` stages.
    pub fn default_d_vc(&self, n: usize, params: &LearnerParams) -> usize {
        match self {
            WeakLearnerKind::Weak2 => n * n,
            WeakLearnerKind::WeakK { k } => n * n * inner_steps(n, *k, params),
        }
    }

    pub fn learn(&self, s: &LabeledSample, params: &LearnerParams) -> Result<LearnOutcome> {
        Ok(match self {
            WeakLearnerKind::Weak2 => weak_learn_and2(s, params)?.outcome,
            WeakLearnerKind::WeakK { k } => weak_learn_anyk(s, *k, params)?.outcome,
        })
    }
}

/// Sample size `ceil(c_vc * d_vc / gamma'^2)` of the distribution learner.
pub fn vc_sample_size(d_vc: usize, gamma_prime: f64, c_vc: f64) -> usize {
    ((c_vc * d_vc as f64 / (gamma_prime * gamma_prime)).ceil() as usize).max(2)
}

/// Draws `vc_sample_size` examples and runs the sample learner on them.
pub fn weak_learn_over_distribution(
    src: &mut dyn ExampleSource,
    learner: &WeakLearnerKind,
    d_vc: usize,
    gamma_prime: f64,
    c_vc: f64,
    params: &LearnerParams,
) -> Result<LearnOutcome> {
    if !(gamma_prime > 0.0 && gamma_prime < 0.5) {
        return Err(LabError::InvalidParameter("gamma_prime must lie in (0, 1/2)".into()));
    }
    if !(c_vc > 0.0) || d_vc == 0 {
        return Err(LabError::InvalidParameter("c_vc and d_vc must be positive".into()));
    }
    let s = src.draw_sample(vc_sample_size(d_vc, gamma_prime, c_vc))?;
    learner.learn(&s, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Planned per-round advantage; sets the round count and working size.
    pub gamma: f64,
    /// Advantage used to size each round's sample; `None` means `gamma`.
    pub gamma_prime: Option<f64>,
    pub c_vc: f64,
    pub c_boost: f64,
    /// `None` means the learner's default plug-in.
    pub d_vc: Option<usize>,
    /// Fresh draws per round before giving up.
    pub round_retries: usize,
    /// Full boosting runs tried before reporting failure.
    pub retry_budget: usize,
    pub holdout_size: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            epsilon: 0.15,
            delta: 0.1,
            gamma: 0.1,
            gamma_prime: None,
            c_vc: 0.5,
            c_boost: 4.0,
            d_vc: None,
            round_retries: 5,
            retry_budget: 3,
            holdout_size: 20_000,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::InvalidParameter(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad("epsilon must lie in (0, 1/2)");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return bad("gamma must lie in (0, 1/2)");
        }
        if let Some(g) = self.gamma_prime {
            if !(g > 0.0 && g < 0.5) {
                return bad("gamma_prime must lie in (0, 1/2)");
            }
        }
        if !(self.c_vc > 0.0 && self.c_boost > 0.0) {
            return bad("c_vc and c_boost must be positive");
        }
        if self.d_vc == Some(0) || self.round_retries == 0 || self.retry_budget == 0 || self.holdout_size == 0 {
            return bad("d_vc, round_retries, retry_budget and holdout_size must be positive");
        }
        Ok(())
    }

    /// `T = ceil(ln(1/eps) / (2 gamma^2))`.
    pub fn rounds(&self) -> usize {
        ((1.0 / self.epsilon).ln() / (2.0 * self.gamma * self.gamma)).ceil() as usize
    }

    /// `m_work = ceil(c_boost (1/eps) (d_vc / gamma^2 + ln(1/delta)))`.
    pub fn working_size(&self, d_vc: usize) -> usize {
        (self.c_boost / self.epsilon * (d_vc as f64 / (self.gamma * self.gamma) + (1.0 / self.delta).ln())).ceil() as usize
    }
}

/// Weighted majority vote; ties go to `+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedHypothesis {
    pub members: Vec<(Hypothesis, f64)>,
}

impl BoostedHypothesis {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (h, a) in &self.members {
            s += a * h.evaluate(x)?.as_f64();
        }
        Ok(s)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Sign> {
        Ok(crate::sign(self.score(x)?))
    }

    /// Fraction of `s` misclassified, evaluated in parallel.
    pub fn error_on(&self, s: &LabeledSample) -> Result<f64> {
        error_rate(s, |x| self.evaluate(x))
    }
}

fn predictions(h: &Hypothesis, s: &LabeledSample) -> Result<Vec<Sign>> {
    s.points.par_iter().map(|x| h.evaluate(x)).collect()
}

fn error_rate<F: Fn(&[f64]) -> Result<Sign> + Sync>(s: &LabeledSample, f: F) -> Result<f64> {
    if s.is_empty() {
        return Err(LabError::Empty("error rate of an empty sample"));
    }
    let wrong: Result<Vec<bool>> = s
        .points
        .par_iter()
        .zip(&s.labels)
        .map(|(x, &y)| Ok(f(x)? != y))
        .collect();
    Ok(wrong?.iter().filter(|&&w| w).count() as f64 / s.len() as f64)
}

/// One multiplicative-weights step. `weights` sum to one; `mistakes[i]` says
/// whether the round's hypothesis misclassifies example `i`. Returns the
/// weighted error, `alpha = ln((1 - err) / err) / 2`, and the normalized
/// new weights. Requires `0 < err < 1/2`.
pub fn adaboost_update(weights: &[f64], mistakes: &[bool]) -> Result<(f64, f64, Vec<f64>)> {
    if weights.len() != mistakes.len() {
        return Err(LabError::DimensionMismatch {
            expected: weights.len(),
            found: mistakes.len(),
        });
    }
    let err: f64 = weights.iter().zip(mistakes).filter(|p| *p.1).map(|p| p.0).sum();
    if !(err > 0.0 && err < 0.5) {
        return Err(LabError::InvalidParameter(format!("weighted error {err} outside (0, 1/2)")));
    }
    let alpha = 0.5 * ((1.0 - err) / err).ln();
    let up = alpha.exp();
    let down = (-alpha).exp();
    let mut next: Vec<f64> = weights
        .iter()
        .zip(mistakes)
        .map(|(w, &m)| w * if m { up } else { down })
        .collect();
    let z: f64 = next.iter().sum();
    next.iter_mut().for_each(|w| *w /= z);
    Ok((err, alpha, next))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Draws needed before an acceptable weak hypothesis came back.
    pub draws: usize,
    pub weighted_error: f64,
    /// `1/2 - weighted_error`.
    pub edge: f64,
    pub alpha: f64,
    /// Error of the vote so far on the working sample.
    pub training_error: f64,
    /// `exp(-2 sum edge^2)` over the rounds so far.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    pub rounds: Vec<RoundRecord>,
    pub holdout_error: f64,
    pub accepted: bool,
    /// Whether every round respected its training-error bound.
    pub bound_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostReport {
    pub hypothesis: Option<BoostedHypothesis>,
    pub attempts: Vec<AttemptRecord>,
    pub planned_rounds: usize,
    pub working_size: usize,
    pub round_sample_size: usize,
    pub d_vc: usize,
    pub seed: u64,
}

impl BoostReport {
    pub fn accepted(&self) -> Option<&AttemptRecord> {
        self.attempts.iter().find(|a| a.accepted)
    }
}

fn run_attempt(
    oracle: &mut ExampleOracle,
    learner: &WeakLearnerKind,
    lp: &LearnerParams,
    bp: &BoostParams,
    d_vc: usize,
    attempt: usize,
    seed: u64,
) -> Result<(BoostedHypothesis, AttemptRecord)> {
    let m_work = bp.working_size(d_vc);
    let work = oracle.draw_sample(m_work)?;
    let gamma_prime = bp.gamma_prime.unwrap_or(bp.gamma);
    let mut weights = vec![1.0 / m_work as f64; m_work];
    let mut scores = vec![0.0f64; m_work];
    let mut members: Vec<(Hypothesis, f64)> = Vec::new();
    let mut rounds = Vec::new();
    let mut sum_sq = 0.0f64;
    let mut bound_ok = true;
    for t in 1..=bp.rounds() {
        let mut accepted = None;
        for draw in 0..bp.round_retries {
            let rs = derive_seed(seed, &[attempt as u64, t as u64, draw as u64]);
            let mut src = WeightedSource::new(&work, &weights, rs)?;
            let params = LearnerParams { seed: rs, ..lp.clone() };
            let outcome = weak_learn_over_distribution(&mut src, learner, d_vc, gamma_prime, bp.c_vc, &params)?;
            let LearnOutcome::Hypothesis { hypothesis } = outcome else {
                continue;
            };
            let pred = predictions(&hypothesis, &work)?;
            let mistakes: Vec<bool> = pred.iter().zip(&work.labels).map(|(p, y)| p != y).collect();
            let err: f64 = weights.iter().zip(&mistakes).filter(|p| *p.1).map(|p| p.0).sum();
            if err < 0.5 {
                accepted = Some((draw + 1, hypothesis, pred, mistakes, err));
                break;
            }
        }
        let Some((draws, h, pred, mistakes, err)) = accepted else {
            return Err(LabError::BoostFailure(format!(
                "round {t}: no weak hypothesis with weighted error below 1/2 after {} draws",
                bp.round_retries
            )));
        };
        if err == 0.0 {
            // A perfect hypothesis on the working sample is the vote.
            members = vec![(h, 1.0)];
            rounds.push(RoundRecord {
                round: t,
                draws,
                weighted_error: 0.0,
                edge: 0.5,
                alpha: f64::INFINITY,
                training_error: 0.0,
                bound: (-2.0 * (sum_sq + 0.25)).exp(),
            });
            break;
        }
        let (err, alpha, next) = adaboost_update(&weights, &mistakes)?;
        weights = next;
        scores.iter_mut().zip(&pred).for_each(|(s, p)| *s += alpha * p.as_f64());
        members.push((h, alpha));
        let wrong = scores
            .iter()
            .zip(&work.labels)
            .filter(|(s, y)| crate::sign(**s) != **y)
            .count();
        let training_error = wrong as f64 / m_work as f64;
        let edge = 0.5 - err;
        sum_sq += edge * edge;
        let bound = (-2.0 * sum_sq).exp();
        bound_ok &= training_error <= bound + 1e-12;
        rounds.push(RoundRecord {
            round: t,
            draws,
            weighted_error: err,
            edge,
            alpha,
            training_error,
            bound,
        });
        if wrong == 0 {
            break;
        }
    }
    let vote = BoostedHypothesis { members };
    let holdout = oracle.draw_sample(bp.holdout_size)?;
    let holdout_error = vote.error_on(&holdout)?;
    let record = AttemptRecord {
        attempt,
        rounds,
        holdout_error,
        accepted: holdout_error <= bp.epsilon,
        bound_ok,
    };
    Ok((vote, record))
}

/// Boosts `learner` to accuracy `1 - epsilon` on `oracle`, validating each
/// run on a fresh holdout and retrying up to `retry_budget` times.
pub fn boost(
    oracle: &mut ExampleOracle,
    learner: &WeakLearnerKind,
    learner_params: &LearnerParams,
    bp: &BoostParams,
    seed: u64,
) -> Result<BoostReport> {
    bp.validate()?;
    learner_params.validate()?;
    let n = oracle.n();
    let d_vc = bp.d_vc.unwrap_or_else(|| learner.default_d_vc(n, learner_params));
    let mut report = BoostReport {
        hypothesis: None,
        attempts: Vec::new(),
        planned_rounds: bp.rounds(),
        working_size: bp.working_size(d_vc),
        round_sample_size: vc_sample_size(d_vc, bp.gamma_prime.unwrap_or(bp.gamma), bp.c_vc),
        d_vc,
        seed,
    };
    for attempt in 0..bp.retry_budget {
        let (vote, record) = run_attempt(oracle, learner, learner_params, bp, d_vc, attempt, seed)?;
        let ok = record.accepted;
        report.attempts.push(record);
        if ok {
            report.hypothesis = Some(vote);
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_target, TargetMode};
    use crate::numerics::norm;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn oracle_draws_unit_points_with_target_labels() {
        let f = gen_target(5, 2, &TargetMode::AndOfK, 1).unwrap();
        let mut o = make_oracle(&f, &DistributionDescriptor::uniform(5), 2).unwrap();
        for _ in 0..200 {
            let (x, y) = o.draw().unwrap();
            assert!((norm(&x) - 1.0).abs() < 1e-12);
            assert_eq!(evaluate_target(&f, &x).unwrap(), y);
        }
        assert!(make_oracle(&f, &DistributionDescriptor::uniform(4), 2).is_err());
    }

    #[test]
    fn single_halfspace_label_bias_is_zero() {
        // By symmetry of the sphere, P(w.x >= 0) = 1/2.
        let f = gen_target(6, 1, &TargetMode::Fixed { table: vec![Sign::Neg, Sign::Pos] }, 3).unwrap();
        let mut o = make_oracle(&f, &DistributionDescriptor::uniform(6), 4).unwrap();
        let m = 40_000;
        let s = o.draw_sample(m).unwrap();
        let p = s.count(Sign::Pos) as f64 / m as f64;
        let sigma = (0.25 / m as f64).sqrt();
        assert!((p - 0.5).abs() <= 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn weighted_source_follows_weights() {
        let s = LabeledSample::new(
            1,
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![Sign::Pos, Sign::Neg, Sign::Pos],
        )
        .unwrap();
        let mut src = WeightedSource::new(&s, &[0.0, 0.25, 0.75], 1).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            let (x, _) = src.draw().unwrap();
            counts[x[0] as usize - 1] += 1;
        }
        assert_eq!(counts[0], 0);
        let p = counts[2] as f64 / 20_000.0;
        assert!((p - 0.75).abs() < 0.02);
        assert!(WeightedSource::new(&s, &[0.0, 0.0, 0.0], 1).is_err());
    }

    #[test]
    fn update_matches_recomputation() {
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let mistakes = vec![true, false, false, false];
        let (err, alpha, next2) = adaboost_update(&w, &mistakes).unwrap();
        assert_relative_eq!(err, 0.1);
        assert_relative_eq!(alpha, 0.5 * 9f64.ln());
        // Mistakes end with total mass 1/2, as do correct examples.
        assert_relative_eq!(next2[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(next2[1], 0.2 / 0.9 * 0.5, max_relative = 1e-12);
        assert_relative_eq!(next2.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert!(adaboost_update(&w, &[true, false, false, true]).is_err());
    }

    #[test]
    fn update_rejects_bad_errors() {
        assert!(adaboost_update(&[0.5, 0.5], &[false, false]).is_err());
        assert!(adaboost_update(&[0.5, 0.5], &[true, true]).is_err());
        assert!(adaboost_update(&[0.5, 0.5], &[true]).is_err());
    }

    #[test]
    fn planned_sizes() {
        let bp = BoostParams::default();
        assert_eq!(bp.rounds(), ((1.0f64 / 0.15).ln() / 0.02).ceil() as usize);
        let m = bp.working_size(36);
        assert_eq!(m, (4.0 / 0.15 * (3600.0 + 10f64.ln())).ceil() as usize);
        assert_eq!(vc_sample_size(36, 0.1, 0.5), 1800);
    }

    #[test]
    fn constant_oracle_stops_after_one_round() {
        let f = gen_target(4, 1, &TargetMode::Fixed { table: vec![Sign::Neg, Sign::Neg] }, 1).unwrap();
        let mut o = make_oracle(&f, &DistributionDescriptor::uniform(4), 1).unwrap();
        let bp = BoostParams {
            gamma: 0.2,
            holdout_size: 2000,
            ..Default::default()
        };
        let rep = boost(&mut o, &WeakLearnerKind::Weak2, &LearnerParams::default(), &bp, 5).unwrap();
        let acc = rep.accepted().unwrap();
        assert_eq!(acc.rounds.len(), 1);
        assert_eq!(acc.rounds[0].draws, 1);
        assert_eq!(acc.holdout_error, 0.0);
        assert_eq!(rep.hypothesis.unwrap().members.len(), 1);
    }

    #[test]
    fn distribution_learner_on_constant_oracle() {
        let f = gen_target(5, 2, &TargetMode::Fixed { table: vec![Sign::Pos; 4] }, 2).unwrap();
        let mut o = make_oracle(&f, &DistributionDescriptor::uniform(5), 3).unwrap();
        let out = weak_learn_over_distribution(&mut o, &WeakLearnerKind::Weak2, 25, 0.2, 0.5, &LearnerParams::default()).unwrap();
        let h = out.hypothesis().unwrap();
        let probe = o.draw_sample(500).unwrap();
        assert_eq!(crate::accuracy(h, &probe).unwrap(), 1.0);
    }

    #[test]
    fn boosting_is_deterministic_and_bounded() {
        let f = gen_target(4, 2, &TargetMode::AndOfK, 7).unwrap();
        let bp = BoostParams {
            gamma: 0.25,
            holdout_size: 2000,
            retry_budget: 1,
            ..Default::default()
        };
        let lp = LearnerParams::default();
        let run = || {
            let mut o = make_oracle(&f, &DistributionDescriptor::uniform(4), 11).unwrap();
            boost(&mut o, &WeakLearnerKind::Weak2, &lp, &bp, 3).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        for at in &a.attempts {
            assert!(at.bound_ok);
            for r in &at.rounds {
                assert!(r.training_error <= r.bound + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn vote_matches_manual_sum(alphas in proptest::collection::vec(0.01f64..3.0, 1..5), x in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let hs: Vec<(Hypothesis, f64)> = alphas.iter().enumerate().map(|(i, &a)| {
                let v = if i % 2 == 0 { Sign::Pos } else { Sign::Neg };
                (Hypothesis::constant(v), a)
            }).collect();
            let vote = BoostedHypothesis { members: hs.clone() };
            let manual: f64 = hs.iter().map(|(h, a)| a * h.evaluate(&x).unwrap().as_f64()).sum();
            prop_assert_eq!(vote.evaluate(&x).unwrap(), crate::sign(manual));
        }
    }
}
