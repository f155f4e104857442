//! Monte Carlo checks of the quantitative lemmas behind the learners.
//!
//! Every check produces a [`LemmaReport`]: a list of cells, each holding an
//! estimate, a 95% interval and a rule comparing them with a predicted band.
//! The verdict is recomputed from the cells alone, so a serialized report can
//! be re-judged without rerunning anything.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{gen_sample, DistributionDescriptor};
use crate::domain::{LabeledSample, LearnerParams, TargetFunction};
use crate::filtering::{estimate_advantage, gaussian_upper_tail, wilson_interval, AdvantageEstimate};
use crate::forster::margin_fraction;
use crate::numerics::{check_dim, derive_seed, dot, gaussian_vector, normalized, stream};
use crate::weak2::weak2_beta;
use crate::weakk::diagnostics::{run_planted_chain, FineFilterConfig};
use crate::{LabError, Result};

const Z95: f64 = 1.959_963_984_540_054;

/// Serde for floats that may be infinite or NaN: finite values stay numbers,
/// the rest become the strings `"inf"`, `"-inf"` and `"nan"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("unknown float tag {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// How a cell is judged against its band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// Not asserted.
    Report,
    /// Pass iff `ci_low >= bound`.
    CiLowAtLeast { #[serde(with = "extended_f64")] bound: f64 },
    /// Pass iff `ci_low > bound`.
    CiLowAbove { #[serde(with = "extended_f64")] bound: f64 },
    /// Pass iff `lo <= estimate <= hi`.
    Within { #[serde(with = "extended_f64")] lo: f64, #[serde(with = "extended_f64")] hi: f64 },
    /// Pass iff the interval meets `[lo, hi]`.
    Overlaps { #[serde(with = "extended_f64")] lo: f64, #[serde(with = "extended_f64")] hi: f64 },
    /// Pass iff `ci_low >= bound`, fail iff `ci_high < bound`, undecided
    /// otherwise.
    Decide { #[serde(with = "extended_f64")] bound: f64 },
}

impl Rule {
    /// `None` when the cell is not asserted or the data cannot decide.
    pub fn judge(&self, estimate: f64, ci_low: f64, ci_high: f64) -> Option<bool> {
        match *self {
            Rule::Report => None,
            Rule::CiLowAtLeast { bound } => Some(ci_low >= bound),
            Rule::CiLowAbove { bound } => Some(ci_low > bound),
            Rule::Within { lo, hi } => Some(estimate >= lo && estimate <= hi),
            Rule::Overlaps { lo, hi } => Some(ci_high >= lo && ci_low <= hi),
            Rule::Decide { bound } => {
                if ci_low >= bound {
                    Some(true)
                } else if ci_high < bound {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub params: serde_json::Value,
    #[serde(with = "extended_f64")]
    pub estimate: f64,
    #[serde(with = "extended_f64")]
    pub ci_low: f64,
    #[serde(with = "extended_f64")]
    pub ci_high: f64,
    pub rule: Rule,
    pub pass: Option<bool>,
}

impl Cell {
    pub fn new(label: impl Into<String>, params: serde_json::Value, estimate: f64, ci: (f64, f64), rule: Rule) -> Self {
        let pass = rule.judge(estimate, ci.0, ci.1);
        Cell {
            label: label.into(),
            params,
            estimate,
            ci_low: ci.0,
            ci_high: ci.1,
            rule,
            pass,
        }
    }

    fn unasserted(mut self) -> Self {
        self.rule = Rule::Report;
        self.pass = None;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma_id: String,
    pub parameters: serde_json::Value,
    pub seed: u64,
    pub cells: Vec<Cell>,
    pub verdict: Verdict,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Any failing cell fails the report; otherwise any passing cell passes it.
pub fn derive_verdict(cells: &[Cell]) -> Verdict {
    let judged: Vec<bool> = cells.iter().filter_map(|c| c.rule.judge(c.estimate, c.ci_low, c.ci_high)).collect();
    if judged.iter().any(|p| !p) {
        Verdict::Fail
    } else if judged.is_empty() {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

impl LemmaReport {
    fn new(lemma_id: &str, parameters: serde_json::Value, seed: u64, cells: Vec<Cell>, notes: Vec<String>) -> Self {
        let verdict = derive_verdict(&cells);
        LemmaReport {
            lemma_id: lemma_id.to_string(),
            parameters,
            seed,
            cells,
            verdict,
            notes,
        }
    }

    /// True when the stored verdict and pass flags match the numbers.
    pub fn is_consistent(&self) -> bool {
        self.cells
            .iter()
            .all(|c| c.pass == c.rule.judge(c.estimate, c.ci_low, c.ci_high))
            && self.verdict == derive_verdict(&self.cells)
    }
}

/// `c w + sqrt(1 - c^2) u` with `w = e1`, `u = e2`: points sharing their
/// component orthogonal to `w`, so paired trials differ only along `w`.
fn coplanar_point(n: usize, c: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[0] = c;
    x[1] = (1.0 - c * c).max(0.0).sqrt();
    x
}

fn unit_e1(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    w[0] = 1.0;
    w
}

fn adv_params(n: usize, alpha: f64, beta: f64, c: f64, c_ref: f64) -> serde_json::Value {
    json!({ "n": n, "alpha": alpha, "beta": beta, "w_dot_x": c, "w_dot_x_ref": c_ref })
}

// ---- monotonicity ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonotonicityGrid {
    pub ns: Vec<usize>,
    pub betas: Vec<f64>,
    /// `alpha = min(alpha_factor * beta, alpha_cap)`.
    pub alpha_factor: f64,
    pub alpha_cap: f64,
    /// Values of `w.x`; every ordered pair is estimated.
    pub margins: Vec<f64>,
    pub slack: f64,
}

impl Default for MonotonicityGrid {
    fn default() -> Self {
        MonotonicityGrid {
            ns: vec![9, 16],
            betas: vec![0.15, 0.3],
            alpha_factor: 10.0,
            alpha_cap: 2.0,
            margins: vec![0.0, 0.2, 0.5],
            slack: 0.03,
        }
    }
}

/// Estimates `Adv(x, x_ref)` for every ordered pair of margins and asserts
/// `ci_low >= 1 - slack` whenever `w.x >= w.x_ref`. Pairs with `beta > alpha`
/// or `n < 2` are skipped with a note.
pub fn verify_monotonicity(grid: &MonotonicityGrid, trials: u64, seed: u64) -> Result<LemmaReport> {
    let mut cells = Vec::new();
    let mut notes = Vec::new();
    let mut idx = 0u64;
    for &n in &grid.ns {
        for &beta in &grid.betas {
            let alpha = (grid.alpha_factor * beta).min(grid.alpha_cap);
            if n < 2 || beta > alpha || !(beta > 0.0) {
                notes.push(format!("skipped n={n} beta={beta}: needs n >= 2 and 0 < beta <= alpha"));
                continue;
            }
            let w = unit_e1(n);
            for &c in &grid.margins {
                for &c_ref in &grid.margins {
                    idx += 1;
                    if trials == 0 {
                        continue;
                    }
                    let est = estimate_advantage(
                        &coplanar_point(n, c),
                        &coplanar_point(n, c_ref),
                        &w,
                        alpha,
                        beta,
                        trials,
                        derive_seed(seed, &[idx]),
                    )?;
                    let rule = if c >= c_ref {
                        Rule::CiLowAtLeast { bound: 1.0 - grid.slack }
                    } else {
                        Rule::Report
                    };
                    let ratio = if est.infinite { f64::MAX } else { est.ratio };
                    cells.push(Cell::new(
                        "adv",
                        adv_params(n, alpha, beta, c, c_ref),
                        ratio,
                        (est.ci_low, est.ci_high.min(f64::MAX)),
                        rule,
                    ));
                }
            }
        }
    }
    if trials == 0 {
        notes.push("no trials requested".into());
    }
    Ok(LemmaReport::new(
        "monotonicity",
        json!({ "grid": grid, "trials": trials }),
        seed,
        cells,
        notes,
    ))
}

// ---- advantage trend ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvantageGrid {
    pub n: usize,
    pub beta: f64,
    pub alpha: f64,
    /// Values of `w.x` compared against `w.x_ref = 0`.
    pub margins: Vec<f64>,
    pub slope_lo: f64,
    pub slope_hi: f64,
    /// Allowed intercept range for the per-cell band
    /// `slope_lo X + lo <= log Adv <= slope_hi X + hi`.
    pub intercept_band: (f64, f64),
}

impl Default for AdvantageGrid {
    fn default() -> Self {
        AdvantageGrid {
            n: 16,
            beta: 0.3,
            alpha: 2.0,
            margins: vec![0.1, 0.2, 0.4],
            slope_lo: 0.1,
            slope_hi: 10.0,
            intercept_band: (-1.0, 1.0),
        }
    }
}

/// Weighted least squares of `y` on `x`: `(slope, intercept, se(slope))`.
fn weighted_fit(x: &[f64], y: &[f64], var: &[f64]) -> Option<(f64, f64, f64)> {
    let w: Vec<f64> = var.iter().map(|v| 1.0 / v.max(1e-12)).collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx, (1.0 / sxx).sqrt()))
}

/// Fits `log Adv` against `X = n alpha beta (w.x)` and checks the slope band,
/// the per-cell band, strict increase between neighbouring margins, and the
/// reference hit rate against the Gaussian tail at `beta sqrt(n)`.
pub fn verify_advantage_band(grid: &AdvantageGrid, trials: u64, seed: u64) -> Result<LemmaReport> {
    let n = grid.n;
    if n < 2 || !(grid.beta > 0.0) || grid.beta > grid.alpha {
        return Err(LabError::InvalidParameter("advantage grid needs n >= 2 and 0 < beta <= alpha".into()));
    }
    if grid.margins.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
        return Err(LabError::InvalidParameter("margins must lie in (0, 1)".into()));
    }
    if !(grid.slope_lo <= grid.slope_hi) {
        return Err(LabError::InvalidParameter("slope band is empty".into()));
    }
    let mut margins = grid.margins.clone();
    margins.sort_by(f64::total_cmp);
    margins.dedup();
    let w = unit_e1(n);
    let x_ref = coplanar_point(n, 0.0);
    let params = json!({ "grid": grid, "trials": trials });
    let mut notes = Vec::new();
    if trials == 0 {
        notes.push("no trials requested".into());
        return Ok(LemmaReport::new("advantage_band", params, seed, Vec::new(), notes));
    }

    // One stream shared by every margin: the reference hits coincide and
    // neighbouring cells are positively correlated.
    let cell_seed = derive_seed(seed, &[0]);
    let ests: Vec<AdvantageEstimate> = margins
        .iter()
        .map(|&c| estimate_advantage(&coplanar_point(n, c), &x_ref, &w, grid.alpha, grid.beta, trials, cell_seed))
        .collect::<Result<_>>()?;

    let scale = n as f64 * grid.alpha * grid.beta;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut vars = Vec::new();
    let mut cells = Vec::new();
    let mut logs: Vec<Option<(f64, f64)>> = Vec::new();
    for (&c, est) in margins.iter().zip(&ests) {
        let x = scale * c;
        let lr = est.log_ratio();
        logs.push(lr);
        let p = adv_params(n, grid.alpha, grid.beta, c, 0.0);
        match lr {
            Some((y, se)) => {
                xs.push(x);
                ys.push(y);
                vars.push(se * se);
                let band = Rule::Overlaps {
                    lo: grid.slope_lo * x + grid.intercept_band.0,
                    hi: grid.slope_hi * x + grid.intercept_band.1,
                };
                cells.push(Cell::new("log_adv", p, y, (y - Z95 * se, y + Z95 * se), band));
            }
            None => {
                notes.push(format!("w.x = {c}: no hits, log advantage undefined"));
                cells.push(Cell::new("log_adv", p, f64::NAN, (f64::NEG_INFINITY, f64::INFINITY), Rule::Report));
            }
        }
    }
    for (i, pair) in logs.windows(2).enumerate() {
        if let (Some((a, sa)), Some((b, sb))) = (pair[0], pair[1]) {
            let lo = (b - Z95 * sb) - (a + Z95 * sa);
            let hi = (b + Z95 * sb) - (a - Z95 * sa);
            cells.push(Cell::new(
                "log_adv_step",
                json!({ "from": margins[i], "to": margins[i + 1] }),
                b - a,
                (lo, hi),
                Rule::CiLowAbove { bound: 0.0 },
            ));
        }
    }
    match weighted_fit(&xs, &ys, &vars) {
        Some((slope, intercept, se)) => cells.push(Cell::new(
            "slope",
            json!({ "intercept": intercept }),
            slope,
            (slope - Z95 * se, slope + Z95 * se),
            Rule::Within {
                lo: grid.slope_lo.max(f64::MIN_POSITIVE),
                hi: grid.slope_hi,
            },
        )),
        None => notes.push("fewer than two usable cells: no trend can be fitted".into()),
    }

    let hr = ests[0].denominator_hits;
    let rate = hr as f64 / trials as f64;
    let predicted = gaussian_upper_tail(grid.beta * (n as f64).sqrt());
    let sigma = (predicted * (1.0 - predicted) / trials as f64).sqrt();
    cells.push(Cell::new(
        "ref_hit_rate",
        json!({ "predicted": predicted, "sigma": sigma }),
        rate,
        wilson_interval(hr, trials),
        Rule::Within {
            lo: predicted - 3.0 * sigma,
            hi: predicted + 3.0 * sigma,
        },
    ));

    if xs.len() < 2 {
        cells = cells.into_iter().map(Cell::unasserted).collect();
        if !notes.iter().any(|m| m.contains("trend")) {
            notes.push("fewer than two usable cells: no trend can be fitted".into());
        }
    }
    Ok(LemmaReport::new("advantage_band", params, seed, cells, notes))
}

// ---- filtering ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FilteringConfig {
    /// Region threshold; `None` uses the two-halfspace learner's beta.
    pub beta: Option<f64>,
    /// `None` means `16 / n^(4/3)`.
    pub purity_threshold: Option<f64>,
    /// `None` means `2^(-2 sqrt(n) ln n)`.
    pub size_floor: Option<f64>,
    /// Predicted lower bound on the better event's probability; `None`
    /// means the size floor.
    pub min_probability: Option<f64>,
}

impl FilteringConfig {
    pub fn resolved(&self, n: usize) -> (f64, f64, f64, f64) {
        let nf = n as f64;
        let beta = self.beta.unwrap_or_else(|| weak2_beta(n, &LearnerParams::default()));
        let purity = self.purity_threshold.unwrap_or(16.0 / nf.powf(4.0 / 3.0));
        let floor = self.size_floor.unwrap_or((-2.0 * nf.sqrt() * nf.ln()).exp2());
        (beta, purity, floor, self.min_probability.unwrap_or(floor))
    }
}

const FILTER_CHUNK: u64 = 4096;

/// Estimates, under a plain Gaussian guess, the probabilities of the two
/// filtering events: the plus region is nearly free of points with
/// `w.x <= 0` and not too small, or the minus region is nearly free of
/// points with `w.x >= 0` and not too small.
pub fn verify_filtering_simple(
    t: &[Vec<f64>],
    w: &[f64],
    trials: u64,
    seed: u64,
    cfg: &FilteringConfig,
) -> Result<LemmaReport> {
    if t.is_empty() {
        return Err(LabError::Empty("filtering point set"));
    }
    let n = w.len();
    for x in t {
        check_dim(n, x.len())?;
    }
    let w = normalized(w).ok_or(LabError::Empty("zero weight vector"))?;
    let nf = n as f64;
    let p = 1.0 / (4.0 * nf);
    let tau = 1.0 / (2.0 * nf.sqrt());
    let frac = margin_fraction(t, &w, tau)?;
    if frac < p {
        return Err(LabError::InvalidParameter(format!(
            "margin precondition violated: fraction {frac:.4} with margin {tau:.4} is below {p:.4}"
        )));
    }
    let (beta, purity, floor, min_prob) = cfg.resolved(n);
    let wx: Vec<f64> = t.iter().map(|x| dot(&w, x)).collect();
    let size_needed = floor * t.len() as f64;
    let params = json!({
        "n": n, "points": t.len(), "trials": trials, "beta": beta,
        "purity_threshold": purity, "size_floor": floor, "min_probability": min_prob,
        "margin_fraction": frac,
    });
    if trials == 0 {
        return Ok(LemmaReport::new("filtering_simple", params, seed, Vec::new(), vec!["no trials requested".into()]));
    }

    let chunks = trials.div_ceil(FILTER_CHUNK);
    let counts: Vec<(u64, u64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[c]);
            let len = FILTER_CHUNK.min(trials - c * FILTER_CHUNK);
            let (mut e1, mut e2, mut either) = (0u64, 0u64, 0u64);
            for _ in 0..len {
                let g = gaussian_vector(n, 1.0 / nf, &mut rng);
                let (mut plus, mut plus_bad, mut minus, mut minus_bad) = (0usize, 0usize, 0usize, 0usize);
                for (x, &wxi) in t.iter().zip(&wx) {
                    let gx = dot(&g, x);
                    if gx >= beta {
                        plus += 1;
                        plus_bad += (wxi <= 0.0) as usize;
                    } else if gx <= -beta {
                        minus += 1;
                        minus_bad += (wxi >= 0.0) as usize;
                    }
                }
                let a = plus_bad as f64 <= purity * plus as f64 && plus as f64 >= size_needed && plus > 0;
                let b = minus_bad as f64 <= purity * minus as f64 && minus as f64 >= size_needed && minus > 0;
                e1 += a as u64;
                e2 += b as u64;
                either += (a || b) as u64;
            }
            (e1, e2, either)
        })
        .collect();
    let (e1, e2, either) = counts.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let rate = |k: u64| k as f64 / trials as f64;
    let best = e1.max(e2);
    let cells = vec![
        Cell::new("plus_event", json!({}), rate(e1), wilson_interval(e1, trials), Rule::Report),
        Cell::new("minus_event", json!({}), rate(e2), wilson_interval(e2, trials), Rule::Report),
        Cell::new("either_event", json!({}), rate(either), wilson_interval(either, trials), Rule::Report),
        Cell::new(
            "better_event",
            json!({}),
            rate(best),
            wilson_interval(best, trials),
            Rule::Decide { bound: min_prob },
        ),
    ];
    Ok(LemmaReport::new("filtering_simple", params, seed, cells, Vec::new()))
}

// ---- reverse Markov ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReverseMarkovConfig {
    pub max_components: usize,
    pub slack: f64,
}

impl Default for ReverseMarkovConfig {
    fn default() -> Self {
        ReverseMarkovConfig {
            max_components: 6,
            slack: 0.0,
        }
    }
}

/// A finite mixture on `[0, u]` of point masses and uniform intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub u: f64,
    /// `(weight, lo, hi)`; `lo == hi` is a point mass.
    pub parts: Vec<(f64, f64, f64)>,
}

impl Mixture {
    pub fn mean(&self) -> f64 {
        self.parts.iter().map(|&(p, a, b)| p * 0.5 * (a + b)).sum()
    }

    /// `Pr[z >= t]`.
    pub fn upper(&self, t: f64) -> f64 {
        self.parts
            .iter()
            .map(|&(p, a, b)| {
                if b <= a {
                    if a >= t {
                        p
                    } else {
                        0.0
                    }
                } else {
                    p * ((b - t.max(a)) / (b - a)).clamp(0.0, 1.0)
                }
            })
            .sum()
    }

    /// `kappa = E[z] / u`, the largest kappa the hypothesis allows.
    pub fn kappa(&self) -> f64 {
        self.mean() / self.u
    }

    /// `Pr[z >= kappa u / 2] - kappa / 2`.
    pub fn bound_margin(&self) -> f64 {
        let k = self.kappa();
        self.upper(k * self.u / 2.0) - k / 2.0
    }
}

fn random_mixture<R: Rng + ?Sized>(max_components: usize, rng: &mut R) -> Mixture {
    let u = 0.1 + 10.0 * rng.random::<f64>();
    let m = rng.random_range(1..=max_components.max(1));
    let mut raw: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
    // Occasionally make one component dominant.
    if rng.random::<f64>() < 0.3 {
        raw[0] *= 20.0;
    }
    let total: f64 = raw.iter().sum();
    let parts = raw
        .iter()
        .map(|r| {
            let a = u * rng.random::<f64>();
            let b = if rng.random::<bool>() { a } else { a + (u - a) * rng.random::<f64>() };
            (r / total, a, b)
        })
        .collect();
    Mixture { u, parts }
}

/// For random mixtures `z` on `[0, u]` with `kappa = E[z] / u`, checks
/// `Pr[z >= kappa u / 2] >= kappa / 2 - slack` using exact mixture
/// probabilities, plus the constant and two-point cases.
pub fn verify_reverse_markov(trials: u64, seed: u64, cfg: &ReverseMarkovConfig) -> Result<LemmaReport> {
    let params = json!({ "trials": trials, "config": cfg });
    let mut cells = Vec::new();
    // Constant z = kappa u.
    let constant = Mixture {
        u: 1.0,
        parts: vec![(1.0, 0.3, 0.3)],
    };
    let m = constant.bound_margin();
    cells.push(Cell::new("constant", json!({ "kappa": 0.3 }), m, (m, m), Rule::Within { lo: -cfg.slack, hi: f64::INFINITY }));
    // Two points {0, u} with mean kappa u: Pr = kappa.
    let two = Mixture {
        u: 1.0,
        parts: vec![(0.75, 0.0, 0.0), (0.25, 1.0, 1.0)],
    };
    let m = two.bound_margin();
    cells.push(Cell::new("two_point", json!({ "kappa": 0.25 }), m, (m, m), Rule::Within { lo: -cfg.slack, hi: f64::INFINITY }));
    if trials == 0 {
        return Ok(LemmaReport::new("reverse_markov", params, seed, cells, vec!["no random trials".into()]));
    }
    let margins: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| random_mixture(cfg.max_components, &mut stream(seed, &[i])).bound_margin())
        .collect();
    let held = margins.iter().filter(|&&m| m >= -cfg.slack).count() as u64;
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    cells.push(Cell::new(
        "held_fraction",
        json!({}),
        held as f64 / trials as f64,
        wilson_interval(held, trials),
        Rule::Within { lo: 1.0, hi: 1.0 },
    ));
    cells.push(Cell::new("worst_margin", json!({}), worst, (worst, worst), Rule::Report));
    Ok(LemmaReport::new("reverse_markov", params, seed, cells, Vec::new()))
}

// ---- planted chain ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedChainConfig {
    pub runs: usize,
    /// Sample size per run (uniform on the sphere).
    pub m: usize,
    /// `None` means `16 / n^(4/3)`.
    pub purity_threshold: Option<f64>,
    /// Required fraction of finished runs with a pure final slot.
    pub min_pure_rate: f64,
    pub fine: FineFilterConfig,
    pub params: LearnerParams,
}

impl Default for PlantedChainConfig {
    fn default() -> Self {
        PlantedChainConfig {
            runs: 100,
            m: 2000,
            purity_threshold: None,
            min_pure_rate: 0.5,
            fine: FineFilterConfig::default(),
            params: LearnerParams::anyk_defaults(),
        }
    }
}

struct RunSummary {
    shape: usize,
    quality: usize,
    updates: usize,
    steps: usize,
    good: usize,
    fine: (usize, usize),
    final_imp: Vec<Option<f64>>,
}

/// Runs planted chains on fresh uniform samples labelled by `target` and
/// reports structural violations, step flag rates and final impurities.
pub fn verify_planted_chain(
    target: &TargetFunction,
    steps: usize,
    seed: u64,
    cfg: &PlantedChainConfig,
) -> Result<LemmaReport> {
    let n = target.n();
    let k = target.k();
    let desc = DistributionDescriptor::uniform(n);
    let purity = cfg.purity_threshold.unwrap_or(16.0 / (n as f64).powf(4.0 / 3.0));
    let outcomes: Vec<Result<Option<RunSummary>>> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|run| {
            let s: LabeledSample = gen_sample(&desc, target, cfg.m, derive_seed(seed, &[run, 0]))?;
            let trace = match run_planted_chain(&s, target, &cfg.params, steps, derive_seed(seed, &[run, 1]), &cfg.fine) {
                Ok(tr) => tr,
                Err(e) if e.is_numeric() => return Ok(None),
                Err(e) => return Err(e),
            };
            let final_imp = trace
                .steps
                .iter()
                .rev()
                .find_map(|st| st.fine.as_ref())
                .map(|f| f.imp.clone())
                .unwrap_or_else(|| vec![None; k]);
            Ok(Some(RunSummary {
                shape: trace.shape_violations().len(),
                quality: trace.quality_violations().len(),
                updates: trace.update_bound_violations().len(),
                steps: trace.steps.len(),
                good: trace.good_steps(),
                fine: trace.fine_steps(),
                final_imp,
            }))
        })
        .collect();
    let mut runs = Vec::new();
    let mut numeric = 0usize;
    for o in outcomes {
        match o? {
            Some(r) => runs.push(r),
            None => numeric += 1,
        }
    }
    let params = json!({
        "n": n, "k": k, "steps": steps, "runs": cfg.runs, "m": cfg.m,
        "purity_threshold": purity, "min_pure_rate": cfg.min_pure_rate,
    });
    let mut notes = Vec::new();
    if numeric > 0 {
        notes.push(format!("{numeric} runs ended in a numeric failure and are excluded"));
    }
    let zero = Rule::Within { lo: 0.0, hi: 0.0 };
    let total = |f: &dyn Fn(&RunSummary) -> usize| runs.iter().map(f).sum::<usize>();
    let count_cell = |label: &str, v: usize| Cell::new(label, json!({}), v as f64, (v as f64, v as f64), zero);
    let mut cells = vec![
        count_cell("shape_violations", total(&|r| r.shape)),
        count_cell("quality_violations", total(&|r| r.quality)),
        count_cell("update_bound_violations", total(&|r| r.updates)),
    ];
    let rate_cell = |label: &str, hit: usize, of: usize, rule: Rule| {
        let est = if of == 0 { f64::NAN } else { hit as f64 / of as f64 };
        Cell::new(label, json!({ "hits": hit, "of": of }), est, wilson_interval(hit as u64, of as u64), rule)
    };
    cells.push(rate_cell("good_step_rate", total(&|r| r.good), total(&|r| r.steps), Rule::Report));
    cells.push(rate_cell("fine_filter_rate", total(&|r| r.fine.0), total(&|r| r.fine.1), Rule::Report));
    cells.push(rate_cell("runs_completed", runs.len(), cfg.runs, Rule::Report));
    for j in 0..k {
        let imps: Vec<f64> = runs.iter().filter_map(|r| r.final_imp.get(j).copied().flatten()).collect();
        let pure = imps.iter().filter(|&&v| v <= purity).count();
        let rule = if imps.is_empty() {
            Rule::Report
        } else {
            Rule::Within {
                lo: cfg.min_pure_rate,
                hi: 1.0,
            }
        };
        let mut c = rate_cell(&format!("slot_{}_pure_rate", j + 1), pure, imps.len(), rule);
        let mean = if imps.is_empty() { f64::NAN } else { imps.iter().sum::<f64>() / imps.len() as f64 };
        c.params["mean_impurity"] = json!(mean);
        cells.push(c);
    }
    if runs.is_empty() {
        cells = cells.into_iter().map(Cell::unasserted).collect();
        notes.push("no run finished".into());
    }
    Ok(LemmaReport::new("planted_chain", params, seed, cells, notes))
}
