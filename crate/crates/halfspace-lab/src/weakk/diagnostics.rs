//! Analysis-only instrumentation of the k-halfspace learner.
//!
//! Everything here needs the target weights, so it lives apart from the
//! learner proper. The planted runs replace the learner's random choices of
//! slot, side and guess by the choices that make every step good, which is
//! how the leaderboard invariants are exercised at desk scale.

use serde::{Deserialize, Serialize};

use super::{beta_schedule, leaderboard_update, nnz_prefix, u_shape_ok, Advance, BetaSchedule, ChainState};
use crate::domain::{LabeledSample, LearnerParams, Side, TargetFunction};
use crate::filtering::{sample_lucky_guess, Region};
use crate::forster::{forsterize, margin_fraction};
use crate::numerics::{check_dim, dot, stream};
use crate::{sign, LabError, Result};

/// `tau = L^q / (2 sqrt n)`.
pub fn quality_tau(q: u32, schedule: &BetaSchedule) -> f64 {
    schedule.log_base.powi(q as i32) / (2.0 * (schedule.n as f64).sqrt())
}

/// `p = exp(-n beta_j^2 tau / L) / (4n)`.
pub fn quality_p(j: usize, tau: f64, schedule: &BetaSchedule) -> f64 {
    let n = schedule.n as f64;
    let b = schedule.beta(j);
    (-n * b * b * tau / schedule.log_base).exp() / (4.0 * n)
}

/// The `j`-quality of `w` on `points`: the largest `q` such that at least a
/// `p` fraction of the points has margin `tau`, scanning every `q` with
/// `tau <= 1`. Returns 0 when no `q` qualifies.
pub fn diag_quality(points: &[Vec<f64>], w: &[f64], j: usize, schedule: &BetaSchedule) -> Result<u32> {
    if points.is_empty() {
        return Err(LabError::Empty("quality of an empty set"));
    }
    check_dim(schedule.n, w.len())?;
    let mut best = 0;
    let mut q = 0u32;
    loop {
        let tau = quality_tau(q, schedule);
        if tau > 1.0 {
            break;
        }
        if margin_fraction(points, w, tau)? >= quality_p(j, tau, schedule) {
            best = q;
        }
        q += 1;
    }
    Ok(best)
}

/// Fraction of `points` (original coordinates) with `sign(w . x) != s`.
pub fn diag_impurity(points: &[Vec<f64>], w: &[f64], s: Side) -> Result<f64> {
    if points.is_empty() {
        return Err(LabError::Empty("impurity of an empty set"));
    }
    let mut wrong = 0usize;
    for x in points {
        check_dim(w.len(), x.len())?;
        if sign(dot(w, x)) != s.as_sign() {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / points.len() as f64)
}

/// `exp(-sqrt(n) beta_j^2 L^(qual-1) / 3)`, the impurity floor of slot `j`.
pub fn impurity_floor(j: usize, qual: u32, schedule: &BetaSchedule) -> f64 {
    let b = schedule.beta(j);
    (-(schedule.n as f64).sqrt() * b * b * schedule.log_base.powi(qual as i32 - 1) / 3.0).exp()
}

/// `max(imp, impurity_floor(j, qual))`.
pub fn diag_mimp(imp: f64, j: usize, qual: u32, schedule: &BetaSchedule) -> f64 {
    imp.max(impurity_floor(j, qual, schedule))
}

/// Side of `w` holding more points with `|w . x| >= tau`; ties go to `Plus`.
pub fn majority_side(points: &[Vec<f64>], w: &[f64], tau: f64) -> Side {
    let (mut plus, mut minus) = (0usize, 0usize);
    for x in points {
        let v = dot(w, x);
        if v.abs() >= tau {
            if sign(v).is_pos() {
                plus += 1;
            } else {
                minus += 1;
            }
        }
    }
    if minus > plus {
        Side::Minus
    } else {
        Side::Plus
    }
}

/// A filled leaderboard slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub time: usize,
    /// 0-based index of the target halfspace fixed in this slot.
    pub ind: usize,
    /// Quality recorded when the slot was filled.
    pub quality: u32,
    pub side: Side,
}

/// Which clause of the good-step definition applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoodCase {
    /// An unfixed halfspace beats the incumbent of a filled slot.
    Improve,
    /// No improvement exists; the next empty slot gets filled.
    Fill,
}

/// What a good step must look like at the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub case: GoodCase,
    /// 1-based slot.
    pub r: usize,
    /// 0-based target index, `ind(t)`.
    pub ind: usize,
    /// Quality of `w^(ind)` for slot `r` on `S_t`.
    pub quality: u32,
    /// Required side.
    pub side: Side,
    /// `qual_j(w^(i), t)` indexed `[j-1][i]`.
    pub qualities: Vec<Vec<u32>>,
}

/// Known-target view of a chain.
#[derive(Debug, Clone)]
pub struct DiagState {
    pub(crate) chain: ChainState,
    pub u: Vec<usize>,
    pub slots: Vec<Option<Slot>>,
    pub t: usize,
    pub schedule: BetaSchedule,
    /// `mimp_j` after the previous step, per slot.
    pub mimp_prev: Vec<Option<f64>>,
}

impl DiagState {
    /// Current `S_t` in transformed coordinates.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.chain.points
    }

    /// Normalized input indices of the points of `S_t`.
    pub fn origin(&self) -> &[usize] {
        &self.chain.origin
    }

    /// `w^(i)(t)` for each target halfspace.
    pub fn transformed_weights(&self, target: &TargetFunction) -> Vec<Option<Vec<f64>>> {
        target.weights.iter().map(|w| self.chain.transformed_weight(w)).collect()
    }

    /// Slot qualities of the filled prefix.
    pub fn slot_qualities(&self) -> Vec<u32> {
        self.slots.iter().map_while(|s| s.map(|s| s.quality)).collect()
    }

    /// Resolves the required `(r_t, ind(t), s_t)`: the smallest filled slot
    /// `j`, then smallest unfixed `a`, whose quality beats the incumbent;
    /// otherwise the next empty slot and the smallest unfixed index.
    pub fn resolve(&self, target: &TargetFunction) -> Result<Resolution> {
        let k = self.schedule.k();
        if target.k() != k {
            return Err(LabError::DimensionMismatch {
                expected: k,
                found: target.k(),
            });
        }
        let wts = self.transformed_weights(target);
        let pts = self.points();
        let mut qualities = vec![vec![0u32; k]; k];
        for (j, row) in qualities.iter_mut().enumerate() {
            for (i, wt) in wts.iter().enumerate() {
                if let Some(wt) = wt {
                    row[i] = diag_quality(pts, wt, j + 1, &self.schedule)?;
                }
            }
        }
        let fixed: Vec<usize> = self.slots.iter().flatten().map(|s| s.ind).collect();
        let unfixed: Vec<usize> = (0..k).filter(|a| !fixed.contains(a)).collect();
        let Some(&smallest) = unfixed.first() else {
            return Err(LabError::InvalidParameter("every target halfspace is already fixed".into()));
        };
        let nnz = nnz_prefix(&self.u);
        let mut choice = None;
        'outer: for j in 0..nnz {
            let inc = self.slots[j].expect("filled prefix").quality;
            for &a in &unfixed {
                if qualities[j][a] > inc {
                    choice = Some((GoodCase::Improve, j + 1, a));
                    break 'outer;
                }
            }
        }
        let (case, r, ind) = choice.unwrap_or((GoodCase::Fill, nnz + 1, smallest));
        let quality = qualities[r - 1][ind];
        let side = match &wts[ind] {
            Some(wt) => majority_side(pts, wt, quality_tau(quality, &self.schedule)),
            None => Side::Plus,
        };
        Ok(Resolution {
            case,
            r,
            ind,
            quality,
            side,
            qualities,
        })
    }
}

/// The learner's choices at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepChoice {
    /// 1-based slot.
    pub r: usize,
    pub g: Vec<f64>,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodStep {
    pub resolution: Resolution,
    pub r_ok: bool,
    /// `w^(ind)(t) . g >= alpha_r`.
    pub lucky_ok: bool,
    /// `s_t` is the majority high-margin side of `w^(ind)(t)`.
    pub side_ok: bool,
}

impl GoodStep {
    pub fn all(&self) -> bool {
        self.r_ok && self.lucky_ok && self.side_ok
    }
}

/// Checks a step choice against the three good-step conditions.
pub fn diag_is_good_step(state: &DiagState, target: &TargetFunction, choice: &StepChoice) -> Result<GoodStep> {
    let res = state.resolve(target)?;
    let wt = state.chain.transformed_weight(&target.weights[res.ind]);
    let lucky_ok = match &wt {
        Some(wt) => {
            check_dim(wt.len(), choice.g.len())?;
            choice.r >= 1 && choice.r <= state.schedule.k() && dot(wt, &choice.g) >= state.schedule.alpha(choice.r)
        }
        None => false,
    };
    Ok(GoodStep {
        r_ok: choice.r == res.r,
        side_ok: choice.side == res.side,
        lucky_ok,
        resolution: res,
    })
}

/// The constants hidden in the fine-filter conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineFilterConfig {
    /// Growth allowance `c` in `exp(c sqrt(n) beta_r^2 L^(qual_j+1))`.
    pub c_mimp: f64,
    /// Size allowance `c` in `exp(-c n beta_r^2)`.
    pub c_size: f64,
}

impl Default for FineFilterConfig {
    fn default() -> Self {
        FineFilterConfig {
            c_mimp: 1.0,
            c_size: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineFilter {
    /// Purity of slot `r_t`.
    pub purity: bool,
    /// Bounded growth of `mimp_j` for every `j < r_t` with a previous value.
    pub growth: bool,
    pub size: bool,
    /// `imp_j(t)` per slot, `None` for empty slots.
    pub imp: Vec<Option<f64>>,
    pub mimp: Vec<Option<f64>>,
}

impl FineFilter {
    pub fn all(&self) -> bool {
        self.purity && self.growth && self.size
    }
}

/// Evaluates the fine-filter conditions for step `r` (1-based), where
/// `state` already holds the updated slots, `before` is `S_t` and `after` is
/// `S_{t+1}`, both as original points.
pub fn diag_is_fine_filter(
    before: &[Vec<f64>],
    after: &[Vec<f64>],
    state: &DiagState,
    target: &TargetFunction,
    r: usize,
    cfg: &FineFilterConfig,
) -> Result<FineFilter> {
    let sch = &state.schedule;
    let k = sch.k();
    let mut imp = vec![None; k];
    let mut mimp = vec![None; k];
    for (j, slot) in state.slots.iter().enumerate() {
        if let Some(sl) = slot {
            let v = diag_impurity(after, &target.weights[sl.ind], sl.side)?;
            imp[j] = Some(v);
            mimp[j] = Some(diag_mimp(v, j + 1, sl.quality, sch));
        }
    }
    let slot_r = state.slots[r - 1].ok_or_else(|| LabError::InvalidParameter(format!("slot {r} is empty")))?;
    let purity = imp[r - 1].expect("filled slot") <= impurity_floor(r, slot_r.quality, sch);
    let br = sch.beta(r);
    let root_n = (sch.n as f64).sqrt();
    let mut growth = true;
    for j in 0..r - 1 {
        if let (Some(prev), Some(now), Some(sl)) = (state.mimp_prev[j], mimp[j], state.slots[j]) {
            let allowance = (cfg.c_mimp * root_n * br * br * sch.log_base.powi(sl.quality as i32 + 1)).exp();
            growth &= now <= prev * allowance;
        }
    }
    let size = after.len() as f64 >= (-cfg.c_size * sch.n as f64 * br * br).exp() * before.len() as f64;
    Ok(FineFilter {
        purity,
        growth,
        size,
        imp,
        mimp,
    })
}

/// Why a planted run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedStatus {
    /// Every slot was filled at the start of a step.
    Completed,
    StepsExhausted,
    Empty,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: usize,
    pub u_before: Vec<usize>,
    pub u_after: Vec<usize>,
    pub good: GoodStep,
    pub side: Side,
    /// Slot qualities of the filled prefix after the update.
    pub slot_qualities: Vec<u32>,
    /// `None` when the step ended the run.
    pub fine: Option<FineFilter>,
    pub size_before: usize,
    pub size_after: usize,
}

/// Per-step record of an instrumented run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTrace {
    pub n: usize,
    pub k: usize,
    pub log_base: f64,
    pub steps: Vec<StepTrace>,
    pub status: PlantedStatus,
}

impl DiagnosticTrace {
    /// Steps whose leaderboard lost the prefix shape.
    pub fn shape_violations(&self) -> Vec<usize> {
        self.steps.iter().filter(|s| !u_shape_ok(&s.u_after)).map(|s| s.t).collect()
    }

    /// Steps where some quality sequence over `j` increases: either the
    /// recorded slot qualities or `qual_j(w^(i), t)` for a fixed `i`.
    pub fn quality_violations(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| {
                let slots = s.slot_qualities.windows(2).any(|w| w[0] < w[1]);
                let q = &s.good.resolution.qualities;
                let per_weight = (0..self.k).any(|i| q.windows(2).any(|w| w[0][i] < w[1][i]));
                slots || per_weight
            })
            .map(|s| s.t)
            .collect()
    }

    /// Messages for every violated update-count bound.
    pub fn update_bound_violations(&self) -> Vec<String> {
        let history: Vec<Vec<usize>> = self.steps.iter().map(|s| s.u_after.clone()).collect();
        update_bound_violations(&history, self.k, self.log_base)
    }

    pub fn good_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.good.all()).count()
    }

    /// `(fine steps, steps with a fine-filter verdict)`.
    pub fn fine_steps(&self) -> (usize, usize) {
        let judged: Vec<_> = self.steps.iter().filter_map(|s| s.fine.as_ref()).collect();
        (judged.iter().filter(|f| f.all()).count(), judged.len())
    }
}

/// Checks the update counts of a leaderboard history (the state after each
/// step, starting from all zeros): `u_1` changes at most `ceil(L) + 1`
/// times, and `u_{j+i}` at most `ceil(L^i) + 1` times on every stretch
/// where `u_j` is constant.
pub fn update_bound_violations(history: &[Vec<usize>], k: usize, l: f64) -> Vec<String> {
    let mut prev = vec![0usize; k];
    // changes[j] = step indices at which u_j changed.
    let mut changes: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (step, u) in history.iter().enumerate() {
        for j in 0..k {
            if u[j] != prev[j] {
                changes[j].push(step);
            }
        }
        prev = u.clone();
    }
    let bound = |i: i32| (l.powi(i) - 1e-9).ceil() as usize + 1;
    let mut out = Vec::new();
    if k > 0 && changes[0].len() > bound(1) {
        out.push(format!("u_1 changed {} times, bound {}", changes[0].len(), bound(1)));
    }
    for j in 0..k {
        let mut cuts = vec![None];
        cuts.extend(changes[j].iter().map(|&c| Some(c)));
        cuts.push(None);
        for w in cuts.windows(2) {
            let inside = |c: usize| w[0].is_none_or(|lo| c > lo) && w[1].is_none_or(|hi| c < hi);
            for later in j + 1..k {
                let i = (later - j) as i32;
                let count = changes[later].iter().filter(|&&c| inside(c)).count();
                if count > bound(i) {
                    out.push(format!(
                        "u_{} changed {count} times while u_{} was constant, bound {}",
                        later + 1,
                        j + 1,
                        bound(i)
                    ));
                }
            }
        }
    }
    out
}

/// Runs a chain whose slot, side and guess are chosen to make every step
/// good: the slot and side come from the resolver and the guess is drawn
/// lucky for the resolved halfspace.
pub fn run_planted_chain(
    s: &LabeledSample,
    target: &TargetFunction,
    params: &LearnerParams,
    steps: usize,
    seed: u64,
    cfg: &FineFilterConfig,
) -> Result<DiagnosticTrace> {
    params.validate()?;
    check_dim(target.n(), s.n)?;
    let s = s.normalized()?;
    let n = s.n;
    let k = target.k();
    let schedule = beta_schedule(n, k, params);
    let first = forsterize(&s.points, &params.forster)?;
    let mut state = DiagState {
        chain: ChainState::start(&first),
        u: vec![0; k],
        slots: vec![None; k],
        t: 0,
        schedule: schedule.clone(),
        mimp_prev: vec![None; k],
    };
    let mut rng = stream(seed, &[]);
    let mut trace = DiagnosticTrace {
        n,
        k,
        log_base: schedule.log_base,
        steps: Vec::new(),
        status: PlantedStatus::StepsExhausted,
    };
    for t in 1..=steps {
        state.t = t;
        if state.u.iter().all(|&v| v != 0) {
            trace.status = PlantedStatus::Completed;
            break;
        }
        let res = state.resolve(target)?;
        let Some(wt) = state.chain.transformed_weight(&target.weights[res.ind]) else {
            trace.status = PlantedStatus::Degenerate;
            break;
        };
        let choice = StepChoice {
            r: res.r,
            g: sample_lucky_guess(&wt, schedule.alpha(res.r), n, &mut rng),
            side: res.side,
        };
        let good = diag_is_good_step(&state, target, &choice)?;

        let u_before = state.u.clone();
        state.u = leaderboard_update(&state.u, res.r, t);
        state.slots[res.r - 1] = Some(Slot {
            time: t,
            ind: res.ind,
            quality: res.quality,
            side: res.side,
        });
        for j in res.r..k {
            state.slots[j] = None;
            state.mimp_prev[j] = None;
        }

        let before: Vec<Vec<f64>> = state.chain.origin.iter().map(|&i| s.points[i].clone()).collect();
        let region = Region::new(choice.g.clone(), schedule.beta(res.r), choice.side)?;
        let advanced = state.chain.advance(region, &s.points, &params.forster)?;
        let mut step = StepTrace {
            t,
            u_before,
            u_after: state.u.clone(),
            side: choice.side,
            slot_qualities: state.slot_qualities(),
            good,
            fine: None,
            size_before: before.len(),
            size_after: 0,
        };
        match advanced {
            Advance::Kept => {}
            Advance::Empty | Advance::Degenerate => {
                trace.status = if matches!(advanced, Advance::Empty) {
                    PlantedStatus::Empty
                } else {
                    PlantedStatus::Degenerate
                };
                trace.steps.push(step);
                break;
            }
        }
        let after: Vec<Vec<f64>> = state.chain.origin.iter().map(|&i| s.points[i].clone()).collect();
        let fine = diag_is_fine_filter(&before, &after, &state, target, res.r, cfg)?;
        state.mimp_prev = fine.mimp.clone();
        step.size_after = after.len();
        step.fine = Some(fine);
        trace.steps.push(step);
    }
    if trace.status == PlantedStatus::StepsExhausted && state.u.iter().all(|&v| v != 0) {
        trace.status = PlantedStatus::Completed;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Sign;
    use crate::numerics::{gaussian_vector, normalized};
    use proptest::prelude::*;

    fn sched(n: usize, k: usize) -> BetaSchedule {
        beta_schedule(n, k, &LearnerParams::anyk_defaults())
    }

    fn sphere(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, &[]);
        (0..m)
            .map(|_| normalized(&gaussian_vector(n, 1.0, &mut rng)).unwrap())
            .collect()
    }

    /// Independent scan: every q in a fixed range, direct counting.
    fn quality_oracle(points: &[Vec<f64>], w: &[f64], j: usize, sch: &BetaSchedule) -> u32 {
        let n = sch.n as f64;
        let l = sch.log_base;
        let b = sch.betas[j - 1];
        let mut best = 0;
        for q in 0..40u32 {
            let tau = l.powf(q as f64) / (2.0 * n.sqrt());
            let p = (-n * b * b * tau / l).exp() / (4.0 * n);
            let hits = points
                .iter()
                .filter(|x| x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>().abs() >= tau)
                .count();
            if hits > 0 && hits as f64 >= p * points.len() as f64 {
                best = q;
            }
        }
        best
    }

    #[test]
    fn quality_of_max_margin_set() {
        let sch = sched(9, 2);
        let w = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let pts = vec![w.clone(), w.iter().map(|v| -v).collect()];
        // Largest q with L^q / 6 <= 1 at L = ln 9.
        let l = 9f64.ln();
        let expect = (0..10).filter(|&q| l.powi(q) / 6.0 <= 1.0).max().unwrap() as u32;
        assert_eq!(expect, 2);
        assert_eq!(diag_quality(&pts, &w, 1, &sch).unwrap(), expect);
    }

    #[test]
    fn quality_zero_after_forster() {
        let pts = sphere(7, 200, 4);
        let out = forsterize(&pts, &Default::default()).unwrap();
        let sch = sched(7, 2);
        let mut rng = stream(5, &[]);
        for _ in 0..50 {
            let w = normalized(&gaussian_vector(7, 1.0, &mut rng)).unwrap();
            let tau = quality_tau(0, &sch);
            assert!(margin_fraction(&out.points, &w, tau).unwrap() >= quality_p(2, tau, &sch));
        }
    }

    #[test]
    fn quality_matches_oracle() {
        let mut rng = stream(6, &[]);
        for trial in 0..40 {
            let n = 4 + trial % 6;
            let sch = sched(n, 2);
            let pts = sphere(n, 5 + trial * 3, trial as u64);
            let w = normalized(&gaussian_vector(n, 1.0, &mut rng)).unwrap();
            for j in 1..=2 {
                assert_eq!(diag_quality(&pts, &w, j, &sch).unwrap(), quality_oracle(&pts, &w, j, &sch));
            }
        }
    }

    #[test]
    fn impurity_examples() {
        let w = vec![1.0, 0.0];
        let pts = vec![vec![0.5, 0.5], vec![0.2, -0.9]];
        assert_eq!(diag_impurity(&pts, &w, Side::Plus).unwrap(), 0.0);
        let pts = vec![vec![0.5, 0.5], vec![-0.2, -0.9]];
        assert_eq!(diag_impurity(&pts, &w, Side::Plus).unwrap(), 0.5);
        assert!(diag_impurity(&[], &w, Side::Plus).is_err());
        let sch = sched(9, 1);
        assert_eq!(diag_mimp(0.0, 1, 1, &sch), impurity_floor(1, 1, &sch));
    }

    #[test]
    fn majority_side_counts_high_margin_points() {
        let w = vec![1.0, 0.0];
        let pts = vec![vec![0.9, 0.1], vec![-0.1, 0.9], vec![-0.05, 0.9], vec![0.8, 0.2]];
        assert_eq!(majority_side(&pts, &w, 0.5), Side::Plus);
        assert_eq!(majority_side(&pts, &w, 0.01), Side::Plus);
        assert_eq!(majority_side(&pts[1..3], &w, 0.01), Side::Minus);
    }

    fn planted_setup(n: usize, k: usize, m: usize, seed: u64) -> (LabeledSample, TargetFunction) {
        let mut rng = stream(seed, &[1]);
        let weights: Vec<Vec<f64>> = (0..k)
            .map(|_| normalized(&gaussian_vector(n, 1.0, &mut rng)).unwrap())
            .collect();
        let mut table = vec![Sign::Neg; 1 << k];
        *table.last_mut().unwrap() = Sign::Pos;
        let target = TargetFunction::new(weights, table).unwrap();
        let s = LabeledSample::labeled_by(&target, sphere(n, m, seed)).unwrap();
        (s, target)
    }

    #[test]
    fn planted_steps_are_good() {
        let params = LearnerParams::anyk_defaults();
        for seed in 0..5 {
            let (s, target) = planted_setup(9, 2, 600, seed);
            let tr = run_planted_chain(&s, &target, &params, 5, seed, &FineFilterConfig::default()).unwrap();
            assert!(!tr.steps.is_empty());
            for st in &tr.steps {
                assert!(st.good.all(), "step {} not good: {:?}", st.t, st.good);
            }
            assert!(tr.shape_violations().is_empty());
            assert!(tr.quality_violations().is_empty());
            assert!(tr.update_bound_violations().is_empty());
        }
    }

    #[test]
    fn wrong_side_and_unlucky_guess_flagged() {
        let params = LearnerParams::anyk_defaults();
        let (s, target) = planted_setup(9, 2, 400, 3);
        let s = s.normalized().unwrap();
        let sch = beta_schedule(9, 2, &params);
        let first = forsterize(&s.points, &params.forster).unwrap();
        let state = DiagState {
            chain: ChainState::start(&first),
            u: vec![0; 2],
            slots: vec![None; 2],
            t: 1,
            schedule: sch.clone(),
            mimp_prev: vec![None; 2],
        };
        let res = state.resolve(&target).unwrap();
        assert_eq!(res.case, GoodCase::Fill);
        assert_eq!((res.r, res.ind), (1, 0));
        let wt = state.chain.transformed_weight(&target.weights[0]).unwrap();
        let mut rng = stream(1, &[]);
        let g = sample_lucky_guess(&wt, sch.alpha(1), 9, &mut rng);
        let wrong_side = match res.side {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        };
        let flags = diag_is_good_step(&state, &target, &StepChoice { r: 1, g: g.clone(), side: wrong_side }).unwrap();
        assert!(flags.r_ok && flags.lucky_ok && !flags.side_ok);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let flags = diag_is_good_step(&state, &target, &StepChoice { r: 1, g: neg, side: res.side }).unwrap();
        assert!(!flags.lucky_ok);
        let flags = diag_is_good_step(&state, &target, &StepChoice { r: 2, g, side: res.side }).unwrap();
        assert!(!flags.r_ok);
    }

    #[test]
    fn fine_filter_trivial_cases() {
        let params = LearnerParams::anyk_defaults();
        let (s, target) = planted_setup(5, 1, 100, 2);
        let s = s.normalized().unwrap();
        let first = forsterize(&s.points, &params.forster).unwrap();
        let w = &target.weights[0];
        let plus: Vec<Vec<f64>> = s.points.iter().filter(|x| dot(w, x) >= 0.0).cloned().collect();
        let state = DiagState {
            chain: ChainState::start(&first),
            u: vec![1],
            slots: vec![Some(Slot {
                time: 1,
                ind: 0,
                quality: 0,
                side: Side::Plus,
            })],
            t: 1,
            schedule: beta_schedule(5, 1, &params),
            mimp_prev: vec![None],
        };
        let f = diag_is_fine_filter(&plus, &plus, &state, &target, 1, &FineFilterConfig::default()).unwrap();
        assert!(f.purity && f.size && f.growth);
        assert_eq!(f.imp[0], Some(0.0));
        assert!(f.mimp[0].unwrap() >= f.imp[0].unwrap());
    }

    #[test]
    fn update_bounds_on_histories() {
        let l = 2.0;
        // ceil(L) + 1 = 3 changes of u_1 allowed.
        let ok = vec![vec![1, 0], vec![2, 0], vec![3, 0]];
        assert!(update_bound_violations(&ok, 2, l).is_empty());
        let bad = vec![vec![1, 0], vec![2, 0], vec![3, 0], vec![4, 0]];
        assert_eq!(update_bound_violations(&bad, 2, l).len(), 1);
        let u2 = vec![vec![1, 0], vec![1, 2], vec![1, 3], vec![1, 4], vec![1, 5]];
        assert_eq!(update_bound_violations(&u2, 2, l).len(), 1);
        let reset = vec![vec![1, 0], vec![1, 2], vec![1, 3], vec![4, 0], vec![4, 5], vec![4, 6]];
        assert!(update_bound_violations(&reset, 2, l).is_empty());
    }

    proptest! {
        #[test]
        fn mimp_dominates_imp(imp in 0.0f64..1.0, q in 0u32..4, j in 1usize..3) {
            let sch = sched(9, 2);
            prop_assert!(diag_mimp(imp, j, q, &sch) >= imp);
        }

        #[test]
        fn quality_monotone_in_slot(seed in 0u64..200) {
            let sch = beta_schedule(9, 3, &LearnerParams { beta_cap: 0.5, ..LearnerParams::anyk_defaults() });
            let pts = sphere(9, 40, seed);
            let mut rng = stream(seed, &[7]);
            let w = normalized(&gaussian_vector(9, 1.0, &mut rng)).unwrap();
            let q: Vec<u32> = (1..=3).map(|j| diag_quality(&pts, &w, j, &sch).unwrap()).collect();
            prop_assert!(q.windows(2).all(|p| p[0] >= p[1]));
        }
    }
}
