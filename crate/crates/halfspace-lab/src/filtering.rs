//! Gaussian guesses, filtering regions and advantage estimation.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::domain::{LabeledSample, Side};
use crate::numerics::{check_dim, dot, stream};
use crate::{LabError, Result};

/// Closed region `{x : g.x >= beta}` (plus side) or `{x : g.x <= -beta}`
/// (minus side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub g: Vec<f64>,
    pub beta: f64,
    pub side: Side,
}

impl Region {
    pub fn new(g: Vec<f64>, beta: f64, side: Side) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(LabError::InvalidParameter(format!("region threshold {beta} must be positive")));
        }
        Ok(Region { g, beta, side })
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        check_dim(self.g.len(), x.len())?;
        Ok(self.contains_projection(dot(&self.g, x)))
    }

    /// Membership given the precomputed projection `g.x`.
    pub fn contains_projection(&self, gx: f64) -> bool {
        match self.side {
            Side::Plus => gx >= self.beta,
            Side::Minus => gx <= -self.beta,
        }
    }
}

pub fn region_contains(r: &Region, x: &[f64]) -> Result<bool> {
    r.contains(x)
}

/// Indices of the members of `s` inside `r`, in input order.
pub fn region_filter_indices(s: &LabeledSample, r: &Region) -> Result<Vec<usize>> {
    check_dim(r.g.len(), s.n)?;
    Ok((0..s.len())
        .filter(|&i| r.contains_projection(dot(&r.g, &s.points[i])))
        .collect())
}

pub fn region_filter(s: &LabeledSample, r: &Region) -> Result<LabeledSample> {
    Ok(s.subset(&region_filter_indices(s, r)?))
}

/// `Pr[N(0,1) >= t]`.
pub fn gaussian_upper_tail(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Inverse of [`gaussian_upper_tail`] on `(0, 1)`.
fn upper_tail_inv(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)
}

/// Inverse-CDF sampling is accurate while the tail mass is representable
/// with room to spare; past this point the exponential proposal takes over.
const INVERSE_CDF_LIMIT: f64 = 8.0;

/// Draws `Z ~ N(0,1)` conditioned on `Z >= a`.
pub fn sample_normal_tail<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= INVERSE_CDF_LIMIT {
        let mass = gaussian_upper_tail(a);
        loop {
            // u in (0, 1] so the quantile stays finite.
            let u = 1.0 - rng.random::<f64>();
            let z = upper_tail_inv(u * mass);
            if z.is_finite() {
                return z.max(a);
            }
        }
    }
    // Exponential proposal with the optimal rate for threshold a.
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        let accept = (-0.5 * (z - lambda) * (z - lambda)).exp();
        if rng.random::<f64>() <= accept {
            return z;
        }
    }
}

/// `g ~ N(0, I/n)` conditioned on `w.g >= alpha`.
pub fn sample_lucky_guess<R: Rng + ?Sized>(w: &[f64], alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    debug_assert_eq!(w.len(), n);
    let sd = 1.0 / (n as f64).sqrt();
    let along = sd * sample_normal_tail(alpha * (n as f64).sqrt(), rng);
    let h: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect();
    let wh = dot(w, &h);
    let mut g: Vec<f64> = h.iter().zip(w).map(|(hi, wi)| hi - wh * wi + along * wi).collect();
    // Rounding can leave w.g a hair below alpha; push along w until it holds.
    let mut guard = 0;
    while dot(w, &g) < alpha && guard < 64 {
        let gap = alpha - dot(w, &g);
        let step = gap.abs().max(f64::EPSILON * alpha.abs().max(1.0));
        g.iter_mut().zip(w).for_each(|(gi, wi)| *gi += step * wi);
        guard += 1;
    }
    g
}

/// 95% Wilson score interval for `k` successes out of `m`.
pub fn wilson_interval(k: u64, m: u64) -> (f64, f64) {
    if m == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = m as f64;
    let p = k as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEstimate {
    /// `numerator_hits / denominator_hits`; `+inf` when the denominator is 0.
    pub ratio: f64,
    pub numerator_hits: u64,
    pub denominator_hits: u64,
    /// Trials in which both points were hit.
    pub joint_hits: u64,
    pub trials: u64,
    /// 95% interval for the ratio.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Wilson intervals of the two hit rates.
    pub numerator_ci: (f64, f64),
    pub denominator_ci: (f64, f64),
    pub infinite: bool,
}

impl AdvantageEstimate {
    pub fn from_counts(hx: u64, hr: u64, both: u64, trials: u64) -> Self {
        let numerator_ci = wilson_interval(hx, trials);
        let denominator_ci = wilson_interval(hr, trials);
        let z = 1.959_963_984_540_054;
        let (ratio, ci_low, ci_high, infinite) = if hr == 0 {
            let lo = if hx > 0 { numerator_ci.0 / denominator_ci.1 } else { 0.0 };
            (f64::INFINITY, lo, f64::INFINITY, true)
        } else if hx == 0 {
            (0.0, 0.0, numerator_ci.1 / denominator_ci.0, false)
        } else {
            // Paired delta method on the log ratio. With b, c the discordant
            // counts, Var(log R) = (b + c) / (hx * hr).
            let b = hx - both;
            let c = hr - both;
            let r = hx as f64 / hr as f64;
            let se = ((b + c) as f64 / (hx as f64 * hr as f64)).sqrt();
            (r, r * (-z * se).exp(), r * (z * se).exp(), false)
        };
        AdvantageEstimate {
            ratio,
            numerator_hits: hx,
            denominator_hits: hr,
            joint_hits: both,
            trials,
            ci_low,
            ci_high,
            numerator_ci,
            denominator_ci,
            infinite,
        }
    }

    /// Natural log of the ratio and its approximate standard error.
    pub fn log_ratio(&self) -> Option<(f64, f64)> {
        if self.numerator_hits == 0 || self.denominator_hits == 0 {
            return None;
        }
        let b = self.numerator_hits - self.joint_hits;
        let c = self.denominator_hits - self.joint_hits;
        let se = ((b + c) as f64 / (self.numerator_hits as f64 * self.denominator_hits as f64)).sqrt();
        Some((self.ratio.ln(), se))
    }
}

const TRIAL_CHUNK: u64 = 8192;

/// Monte Carlo estimate of `Pr[x in R+] / Pr[x_ref in R+]` where the region
/// uses a lucky guess (`w.g >= alpha`) and threshold `beta`.
///
/// Trials are split into fixed chunks with their own streams, so the result
/// does not depend on the thread count.
pub fn estimate_advantage(
    x: &[f64],
    x_ref: &[f64],
    w: &[f64],
    alpha: f64,
    beta: f64,
    trials: u64,
    seed: u64,
) -> Result<AdvantageEstimate> {
    let n = w.len();
    check_dim(n, x.len())?;
    check_dim(n, x_ref.len())?;
    if trials == 0 {
        return Err(LabError::InvalidParameter("trials must be at least 1".into()));
    }
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let counts: Vec<(u64, u64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[c]);
            let len = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
            let (mut hx, mut hr, mut both) = (0, 0, 0);
            for _ in 0..len {
                let g = sample_lucky_guess(w, alpha, n, &mut rng);
                let a = dot(&g, x) >= beta;
                let b = dot(&g, x_ref) >= beta;
                hx += a as u64;
                hr += b as u64;
                both += (a && b) as u64;
            }
            (hx, hr, both)
        })
        .collect();
    let (hx, hr, both) = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    Ok(AdvantageEstimate::from_counts(hx, hr, both, trials))
}

/// `(beta - gamma z1) / sqrt(1 - z1^2) * sqrt(n)`.
pub fn predicted_tail_param(gamma: f64, beta: f64, z1: f64, n: usize) -> Result<f64> {
    if !(z1.abs() < 1.0) {
        return Err(LabError::InvalidParameter(format!("|z1| = {} must be below 1", z1.abs())));
    }
    Ok((beta - gamma * z1) / (1.0 - z1 * z1).sqrt() * (n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Sign;
    use crate::numerics::{gaussian_vector, normalized};
    use proptest::prelude::*;

    #[test]
    fn region_examples() {
        let plus = Region::new(vec![1.0, 0.0], 0.5, Side::Plus).unwrap();
        let minus = Region::new(vec![1.0, 0.0], 0.5, Side::Minus).unwrap();
        assert!(plus.contains(&[1.0, 0.0]).unwrap());
        assert!(!minus.contains(&[1.0, 0.0]).unwrap());
        assert!(plus.contains(&[0.5, 0.3]).unwrap());
        assert!(minus.contains(&[-0.5, 0.3]).unwrap());
        assert!(plus.contains(&[1.0]).is_err());
        assert!(Region::new(vec![1.0], 0.0, Side::Plus).is_err());
    }

    fn sample(points: Vec<Vec<f64>>) -> LabeledSample {
        let n = points[0].len();
        let labels = points.iter().map(|p| crate::sign(p[0])).collect();
        LabeledSample::new(n, points, labels).unwrap()
    }

    #[test]
    fn filter_examples() {
        let s = sample(vec![vec![0.3, 0.0], vec![-0.2, 1.0], vec![0.3, 0.0], vec![0.9, 0.1]]);
        let big = Region::new(vec![1.0, 0.0], 2.0, Side::Plus).unwrap();
        assert!(region_filter(&s, &big).unwrap().is_empty());
        let r = Region::new(vec![1.0, 0.0], 0.25, Side::Plus).unwrap();
        let f = region_filter(&s, &r).unwrap();
        assert_eq!(f.points, vec![vec![0.3, 0.0], vec![0.3, 0.0], vec![0.9, 0.1]]);
        assert_eq!(f.labels, vec![Sign::Pos; 3]);
    }

    #[test]
    fn filter_with_tiny_beta_matches_recount() {
        let mut rng = stream(2, &[]);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| gaussian_vector(4, 1.0, &mut rng)).collect();
        let s = sample(pts.clone());
        let g = gaussian_vector(4, 0.25, &mut rng);
        let r = Region::new(g.clone(), 1e-300, Side::Plus).unwrap();
        let got = region_filter(&s, &r).unwrap();
        let oracle: Vec<Vec<f64>> = pts.into_iter().filter(|p| dot(&g, p) >= 1e-300).collect();
        assert_eq!(got.points, oracle);
    }

    #[test]
    fn tail_values() {
        assert_eq!(gaussian_upper_tail(0.0), 0.5);
        assert!((gaussian_upper_tail(-40.0) - 1.0).abs() < 1e-15);
        // Oracle: composite Simpson rule on [2, 14] of the normal density.
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (a, b, m) = (2.0, 14.0, 20_000);
        let h = (b - a) / m as f64;
        let mut acc = pdf(a) + pdf(b);
        for i in 1..m {
            acc += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = acc * h / 3.0;
        assert!((gaussian_upper_tail(2.0) - quad).abs() < 1e-8);
    }

    #[test]
    fn tail_sandwich_band() {
        for i in 0..=45 {
            let t = 1.5 + i as f64 * 0.1;
            let r = gaussian_upper_tail(t) / ((-0.5 * t * t).exp() / t);
            assert!((0.2..=0.5).contains(&r), "t={t}: {r}");
        }
    }

    #[test]
    fn tail_param_examples() {
        let n = 16;
        assert!((predicted_tail_param(0.7, 0.3, 0.0, n).unwrap() - 0.3 * 4.0).abs() < 1e-15);
        assert!(predicted_tail_param(0.5, 0.25, 0.5, n).unwrap().abs() < 1e-15);
        let (g, b, z, n) = (1.3, 0.4, -0.35, 9);
        let expected = (0.4 + 1.3 * 0.35) / (1.0f64 - 0.1225).sqrt() * 3.0;
        assert!((predicted_tail_param(g, b, z, n).unwrap() - expected).abs() < 1e-13);
        assert!(predicted_tail_param(g, b, 1.0, n).is_err());
    }

    #[test]
    fn lucky_guess_meets_threshold() {
        let mut rng = stream(3, &[]);
        let w = normalized(&[1.0, 2.0, -1.0, 0.5]).unwrap();
        for &alpha in &[0.1, 1.0, 3.0, 5.0, 9.0] {
            for _ in 0..2000 {
                let g = sample_lucky_guess(&w, alpha, 4, &mut rng);
                assert!(dot(&w, &g) >= alpha);
            }
        }
    }

    #[test]
    fn unconditioned_lucky_guess_is_gaussian() {
        // Two-sample KS test against plain gaussian_vector at level 0.001.
        let n = 5;
        let w = normalized(&[1.0, -1.0, 0.0, 2.0, 1.0]).unwrap();
        let m = 100_000;
        let mut r1 = stream(4, &[0]);
        let mut r2 = stream(4, &[1]);
        let mut a: Vec<f64> = (0..m).map(|_| dot(&w, &sample_lucky_guess(&w, -1e6, n, &mut r1))).collect();
        let mut b: Vec<f64> = (0..m).map(|_| dot(&w, &gaussian_vector(n, 1.0 / n as f64, &mut r2))).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < m && j < m {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / m as f64);
        }
        let crit = 1.949 * (2.0 / m as f64).sqrt();
        assert!(d < crit, "KS statistic {d} vs {crit}");
    }

    #[test]
    fn lucky_histogram_matches_rejection_sampler() {
        let n = 4;
        let alpha = 0.4;
        let w = vec![0.0, 1.0, 0.0, 0.0];
        let m = 100_000;
        let mut r1 = stream(5, &[0]);
        let mut r2 = stream(5, &[1]);
        let lucky: Vec<f64> = (0..m).map(|_| dot(&w, &sample_lucky_guess(&w, alpha, n, &mut r1))).collect();
        let mut rejected = Vec::with_capacity(m);
        while rejected.len() < m {
            let g = gaussian_vector(n, 1.0 / n as f64, &mut r2);
            if dot(&w, &g) >= alpha {
                rejected.push(dot(&w, &g));
            }
        }
        let edges = [0.4, 0.5, 0.6, 0.7, 0.8, 1.0, 1.3, f64::INFINITY];
        for k in 0..edges.len() - 1 {
            let c1 = lucky.iter().filter(|&&v| v >= edges[k] && v < edges[k + 1]).count() as f64;
            let c2 = rejected.iter().filter(|&&v| v >= edges[k] && v < edges[k + 1]).count() as f64;
            let sigma = (c1 + c2).sqrt();
            assert!((c1 - c2).abs() <= 3.0 * sigma, "bin {k}: {c1} vs {c2}");
        }
    }

    #[test]
    fn exponential_proposal_tail_mean() {
        // E[Z | Z >= a] = pdf(a) / Q(a); use the asymptotic form for large a.
        let a = 10.0;
        let mut rng = stream(6, &[]);
        let m = 50_000;
        let mean = (0..m).map(|_| sample_normal_tail(a, &mut rng)).sum::<f64>() / m as f64;
        let expected = a + 1.0 / a - 2.0 / a.powi(3) + 10.0 / a.powi(5);
        assert!((mean - expected).abs() < 0.003, "{mean} vs {expected}");
    }

    #[test]
    fn plain_gaussian_luck_rate_matches_tail() {
        let n = 9;
        let alpha = 0.5;
        let w = normalized(&[1.0; 9]).unwrap();
        let mut rng = stream(7, &[]);
        let m = 100_000;
        let hits = (0..m)
            .filter(|_| dot(&w, &gaussian_vector(n, 1.0 / n as f64, &mut rng)) >= alpha)
            .count() as f64;
        let p = gaussian_upper_tail(alpha * 3.0);
        let sigma = (m as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - m as f64 * p).abs() <= 3.0 * sigma);
    }

    #[test]
    fn identical_points_have_unit_ratio() {
        let w = normalized(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let x = normalized(&[0.3, 1.0, 0.0, 0.0]).unwrap();
        let est = estimate_advantage(&x, &x, &w, 1.0, 0.3, 20_000, 1).unwrap();
        assert_eq!(est.ratio, 1.0);
        assert_eq!(est.ci_low, 1.0);
        assert_eq!(est.ci_high, 1.0);
    }

    #[test]
    fn advantage_is_deterministic_and_monotone() {
        let n = 16;
        let w = {
            let mut v = vec![0.0; n];
            v[0] = 1.0;
            v
        };
        let point = |z: f64| {
            let mut v = vec![0.0; n];
            v[0] = z;
            v[1] = (1.0 - z * z).sqrt();
            v
        };
        let a = estimate_advantage(&point(0.5), &point(0.0), &w, 2.0, 0.3, 30_000, 9).unwrap();
        let b = estimate_advantage(&point(0.5), &point(0.0), &w, 2.0, 0.3, 30_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low >= 1.0);
    }

    #[test]
    fn zero_denominator_is_flagged() {
        let est = AdvantageEstimate::from_counts(5, 0, 0, 100);
        assert!(est.infinite && est.ratio.is_infinite());
        assert!(est.ci_low > 0.0);
    }

    proptest! {
        #[test]
        fn shrinking_beta_only_adds_points(seed in any::<u64>(), b1 in 0.01f64..1.0, shrink in 0.0f64..1.0) {
            let mut rng = stream(seed, &[]);
            let pts: Vec<Vec<f64>> = (0..50).map(|_| gaussian_vector(3, 1.0, &mut rng)).collect();
            let s = sample(pts);
            let g = gaussian_vector(3, 1.0, &mut rng);
            let b2 = b1 * shrink.max(1e-6);
            for side in [Side::Plus, Side::Minus] {
                let big = region_filter_indices(&s, &Region::new(g.clone(), b1, side).unwrap()).unwrap();
                let small = region_filter_indices(&s, &Region::new(g.clone(), b2, side).unwrap()).unwrap();
                prop_assert!(big.iter().all(|i| small.contains(i)));
            }
        }

        #[test]
        fn wilson_contains_point_estimate(k in 0u64..1000, extra in 0u64..1000) {
            let m = k + extra.max(1);
            let (lo, hi) = wilson_interval(k, m);
            let p = k as f64 / m as f64;
            prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
        }
    }
}
