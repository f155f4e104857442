//! Synthetic targets and samples, distribution descriptors, and file formats.
//!
//! Samples are CSV with header `x1,...,xn,label`; targets, hypotheses and
//! reports are JSON objects carrying a `schema_version`; run logs are JSON
//! Lines. Floats are written in shortest round-trip form, so reloading is
//! bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{perturb_labelsafe, LabeledSample, Sign, TargetFunction};
use crate::numerics::{check_dim, dot, gaussian_vector, normalized, stream, LabRng};
use crate::{LabError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest `k` the generators accept.
pub const MAX_K: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TargetMode {
    /// Random weights and a uniformly random truth table.
    Random,
    /// `+1` only when every halfspace says `+1`.
    AndOfK,
    /// `+1` when an odd number of halfspaces say `+1`.
    ParityOfK,
    /// Random weights with the given table.
    Fixed { table: Vec<Sign> },
}

fn random_unit(n: usize, rng: &mut LabRng) -> Vec<f64> {
    loop {
        if let Some(v) = normalized(&gaussian_vector(n, 1.0, rng)) {
            return v;
        }
    }
}

pub fn gen_target(n: usize, k: usize, mode: &TargetMode, seed: u64) -> Result<TargetFunction> {
    if n == 0 {
        return Err(LabError::InvalidParameter("n must be positive".into()));
    }
    if k == 0 || k > MAX_K {
        return Err(LabError::InvalidParameter(format!("k must lie in 1..={MAX_K}")));
    }
    let mut rng = stream(seed, &[0]);
    let weights: Vec<Vec<f64>> = (0..k).map(|_| random_unit(n, &mut rng)).collect();
    let rows = 1usize << k;
    let table = match mode {
        TargetMode::Random => {
            let mut trng = stream(seed, &[1]);
            (0..rows)
                .map(|_| if trng.random::<bool>() { Sign::Pos } else { Sign::Neg })
                .collect()
        }
        TargetMode::AndOfK => (0..rows)
            .map(|i| if i == rows - 1 { Sign::Pos } else { Sign::Neg })
            .collect(),
        TargetMode::ParityOfK => (0..rows)
            .map(|i: usize| if i.count_ones() % 2 == 1 { Sign::Pos } else { Sign::Neg })
            .collect(),
        TargetMode::Fixed { table } => table.clone(),
    };
    TargetFunction::new(weights, table)
}

/// Where examples come from. `n` is carried by the enclosing descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    UniformSphere,
    /// `N(0, diag(scales^2))` pushed to the sphere; empty `scales` means
    /// isotropic.
    GaussianNormalized {
        #[serde(default)]
        scales: Vec<f64>,
    },
    /// Random unit centers, each point a center plus `N(0, spread^2 I)`,
    /// normalized.
    Clustered { centers: usize, spread: f64 },
    /// Points within `offset` of a uniformly chosen target boundary.
    BoundaryHugging {
        #[serde(default = "default_offset")]
        offset: f64,
    },
    /// Points of a sample file, drawn uniformly with replacement.
    File { path: PathBuf },
}

fn default_offset() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionDescriptor {
    pub n: usize,
    #[serde(flatten)]
    pub dist: Distribution,
}

impl DistributionDescriptor {
    pub fn uniform(n: usize) -> Self {
        DistributionDescriptor {
            n,
            dist: Distribution::UniformSphere,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::InvalidParameter(m.to_string()));
        if self.n == 0 {
            return bad("distribution dimension must be positive");
        }
        match &self.dist {
            Distribution::GaussianNormalized { scales } => {
                if !scales.is_empty() && scales.len() != self.n {
                    return bad("scales must be empty or have one entry per coordinate");
                }
                if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || (!scales.is_empty() && scales.iter().all(|&s| s == 0.0)) {
                    return bad("scales must be finite, non-negative and not all zero");
                }
            }
            Distribution::Clustered { centers, spread } => {
                if *centers == 0 || !(spread.is_finite() && *spread >= 0.0) {
                    return bad("clustered needs at least one center and a finite spread");
                }
            }
            Distribution::BoundaryHugging { offset } => {
                if !(*offset >= 0.0 && *offset < 1.0) {
                    return bad("boundary offset must lie in [0, 1)");
                }
            }
            Distribution::UniformSphere | Distribution::File { .. } => {}
        }
        Ok(())
    }
}

/// Draws unlabeled points from a descriptor. Deterministic given its seed.
pub struct PointSampler {
    desc: DistributionDescriptor,
    rng: LabRng,
    centers: Vec<Vec<f64>>,
    pool: Vec<Vec<f64>>,
    boundaries: Vec<Vec<f64>>,
}

impl PointSampler {
    /// `target` supplies the boundaries for `boundary_hugging` and is
    /// otherwise unused.
    pub fn new(desc: &DistributionDescriptor, target: Option<&TargetFunction>, seed: u64) -> Result<Self> {
        desc.validate()?;
        let n = desc.n;
        let mut centers = Vec::new();
        let mut pool = Vec::new();
        let mut boundaries = Vec::new();
        match &desc.dist {
            Distribution::Clustered { centers: c, .. } => {
                let mut crng = stream(seed, &[0]);
                centers = (0..*c).map(|_| random_unit(n, &mut crng)).collect();
            }
            Distribution::File { path } => {
                let s = load_sample_csv(path)?;
                check_dim(n, s.n)?;
                pool = s.points;
            }
            Distribution::BoundaryHugging { .. } => {
                let f = target.ok_or_else(|| LabError::InvalidParameter("boundary_hugging needs a target".into()))?;
                check_dim(n, f.n())?;
                boundaries = f.weights.clone();
            }
            _ => {}
        }
        Ok(PointSampler {
            desc: desc.clone(),
            rng: stream(seed, &[1]),
            centers,
            pool,
            boundaries,
        })
    }

    pub fn n(&self) -> usize {
        self.desc.n
    }

    pub fn draw(&mut self) -> Vec<f64> {
        let n = self.desc.n;
        match &self.desc.dist {
            Distribution::UniformSphere => random_unit(n, &mut self.rng),
            Distribution::GaussianNormalized { scales } => loop {
                let mut g = gaussian_vector(n, 1.0, &mut self.rng);
                if !scales.is_empty() {
                    g.iter_mut().zip(scales).for_each(|(v, s)| *v *= s);
                }
                if let Some(v) = normalized(&g) {
                    return v;
                }
            },
            Distribution::Clustered { spread, .. } => loop {
                let c = &self.centers[self.rng.random_range(0..self.centers.len())];
                let g = gaussian_vector(n, spread * spread, &mut self.rng);
                let x: Vec<f64> = c.iter().zip(&g).map(|(a, b)| a + b).collect();
                if let Some(v) = normalized(&x) {
                    return v;
                }
            },
            Distribution::BoundaryHugging { offset } => {
                let w = &self.boundaries[self.rng.random_range(0..self.boundaries.len())];
                let u = if *offset > 0.0 {
                    self.rng.random_range(-offset..*offset)
                } else {
                    0.0
                };
                // u w + sqrt(1 - u^2) v with v a unit vector orthogonal to w.
                let v = loop {
                    let x = gaussian_vector(n, 1.0, &mut self.rng);
                    let p = dot(w, &x);
                    let y: Vec<f64> = x.iter().zip(w).map(|(a, b)| a - p * b).collect();
                    if let Some(v) = normalized(&y) {
                        break v;
                    }
                    if n == 1 {
                        break vec![0.0];
                    }
                };
                let c = (1.0 - u * u).sqrt();
                w.iter().zip(&v).map(|(a, b)| u * a + c * b).collect()
            }
            Distribution::File { .. } => self.pool[self.rng.random_range(0..self.pool.len())].clone(),
        }
    }
}

/// `m` labeled draws, with boundary points nudged off the target's
/// hyperplanes.
pub fn gen_sample(desc: &DistributionDescriptor, f: &TargetFunction, m: usize, seed: u64) -> Result<LabeledSample> {
    if m == 0 {
        return Err(LabError::InvalidParameter("sample size must be positive".into()));
    }
    check_dim(f.n(), desc.n)?;
    let mut sampler = PointSampler::new(desc, Some(f), seed)?;
    let points: Vec<Vec<f64>> = (0..m).map(|_| sampler.draw()).collect();
    let s = LabeledSample::labeled_by(f, points)?;
    perturb_labelsafe(&s, f, crate::numerics::derive_seed(seed, &[2]))
}

// ---- CSV samples ----

pub fn write_sample_csv<W: Write>(s: &LabeledSample, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=s.n).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    wr.write_record(&header)?;
    for (x, y) in s.iter() {
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        rec.push(y.value().to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_sample_csv<R: std::io::Read>(r: R) -> Result<LabeledSample> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rd.headers()?.clone();
    let cols = header.len();
    if cols < 2 || header.get(cols - 1) != Some("label") {
        return Err(LabError::Parse {
            line: 1,
            message: "header must be x1,...,xn,label".into(),
        });
    }
    for (i, h) in header.iter().take(cols - 1).enumerate() {
        if h != format!("x{}", i + 1) {
            return Err(LabError::Parse {
                line: 1,
                message: format!("column {} should be x{}, found {h:?}", i + 1, i + 1),
            });
        }
    }
    let n = cols - 1;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| LabError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse_err = |message: String| LabError::Parse { line, message };
        let mut x = Vec::with_capacity(n);
        for (j, field) in rec.iter().take(n).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("x{} = {field:?} is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(format!("x{} is not finite", j + 1)));
            }
            x.push(v);
        }
        let label = match rec.get(n).map(str::trim) {
            Some("1") | Some("+1") => Sign::Pos,
            Some("-1") => Sign::Neg,
            other => return Err(parse_err(format!("label must be -1 or 1, found {other:?}"))),
        };
        points.push(x);
        labels.push(label);
    }
    if points.is_empty() {
        return Err(LabError::Empty("sample file has no rows"));
    }
    LabeledSample::new(n, points, labels)
}

pub fn save_sample_csv(s: &LabeledSample, path: &Path) -> Result<()> {
    write_sample_csv(s, BufWriter::new(File::create(path)?))
}

pub fn load_sample_csv(path: &Path) -> Result<LabeledSample> {
    read_sample_csv(BufReader::new(File::open(path)?))
}

// ---- JSON documents ----

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

pub fn to_json_string<T: Serialize>(value: &T, pretty: bool) -> Result<String> {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        body: value,
    };
    Ok(if pretty {
        serde_json::to_string_pretty(&doc)?
    } else {
        serde_json::to_string(&doc)?
    })
}

pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let doc: Versioned<T> = serde_json::from_str(text).map_err(|e| LabError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(LabError::Parse {
            line: 1,
            message: format!("unsupported schema_version {}", doc.schema_version),
        });
    }
    Ok(doc.body)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(to_json_string(value, true)?.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json_str(&std::fs::read_to_string(path)?)
}

// ---- JSON Lines ----

/// Appends one compact JSON object per line.
pub struct JsonlWriter<W: Write> {
    inner: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(inner: W) -> Self {
        JsonlWriter { inner }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, record)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LabError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{evaluate_target, Hypothesis};
    use crate::numerics::norm;
    use crate::weak2::weak_learn_and2;
    use crate::LearnerParams;
    use proptest::prelude::*;

    #[test]
    fn and_table_and_parity_balance() {
        let f = gen_target(5, 2, &TargetMode::AndOfK, 1).unwrap();
        assert_eq!(f.table, vec![Sign::Neg, Sign::Neg, Sign::Neg, Sign::Pos]);
        for k in 1..=6 {
            let f = gen_target(4, k, &TargetMode::ParityOfK, 2).unwrap();
            let pos = f.table.iter().filter(|s| s.is_pos()).count();
            assert_eq!(pos, 1 << (k - 1));
        }
        let f = gen_target(7, 3, &TargetMode::Random, 3).unwrap();
        for w in &f.weights {
            assert!((norm(w) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn target_guards() {
        assert!(gen_target(3, 0, &TargetMode::AndOfK, 0).is_err());
        assert!(gen_target(3, 9, &TargetMode::AndOfK, 0).is_err());
        assert!(gen_target(3, 2, &TargetMode::Fixed { table: vec![Sign::Pos; 3] }, 0).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let f = gen_target(6, 2, &TargetMode::Random, 9).unwrap();
        assert_eq!(f, gen_target(6, 2, &TargetMode::Random, 9).unwrap());
        for dist in [
            Distribution::UniformSphere,
            Distribution::GaussianNormalized { scales: vec![] },
            Distribution::Clustered { centers: 3, spread: 0.2 },
            Distribution::BoundaryHugging { offset: 0.05 },
        ] {
            let d = DistributionDescriptor { n: 6, dist };
            let a = gen_sample(&d, &f, 100, 4).unwrap();
            assert_eq!(a, gen_sample(&d, &f, 100, 4).unwrap());
            for (x, y) in a.iter() {
                assert!((norm(x) - 1.0).abs() < 1e-9);
                assert_eq!(evaluate_target(&f, x).unwrap(), y);
            }
        }
    }

    #[test]
    fn boundary_hugging_is_close_to_a_boundary() {
        let f = gen_target(8, 2, &TargetMode::AndOfK, 5).unwrap();
        let d = DistributionDescriptor {
            n: 8,
            dist: Distribution::BoundaryHugging { offset: 0.05 },
        };
        let s = gen_sample(&d, &f, 2000, 6).unwrap();
        let close = s
            .points
            .iter()
            .filter(|x| f.weights.iter().any(|w| dot(w, x).abs() <= 0.05 + 1e-8))
            .count();
        assert!(close as f64 >= 0.9 * s.len() as f64);
    }

    #[test]
    fn anisotropic_scales_and_validation() {
        let bad = DistributionDescriptor {
            n: 3,
            dist: Distribution::GaussianNormalized { scales: vec![1.0, 2.0] },
        };
        assert!(bad.validate().is_err());
        let flat = DistributionDescriptor {
            n: 3,
            dist: Distribution::GaussianNormalized { scales: vec![1.0, 0.0, 0.0] },
        };
        let mut s = PointSampler::new(&flat, None, 1).unwrap();
        for _ in 0..10 {
            let x = s.draw();
            assert_eq!(x[1], 0.0);
            assert!((x[0].abs() - 1.0).abs() < 1e-12);
        }
        let hug = DistributionDescriptor {
            n: 3,
            dist: Distribution::BoundaryHugging { offset: 0.1 },
        };
        assert!(PointSampler::new(&hug, None, 1).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let f = gen_target(5, 2, &TargetMode::Random, 1).unwrap();
        let s = gen_sample(&DistributionDescriptor::uniform(5), &f, 200, 2).unwrap();
        let mut buf = Vec::new();
        write_sample_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,label\n"));
        assert_eq!(read_sample_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn csv_errors_carry_lines() {
        assert!(matches!(read_sample_csv("x1,label\n".as_bytes()), Err(LabError::Empty(_))));
        match read_sample_csv("x1,x2,label\n0.5,0.1,1\n0.2,abc,-1\n".as_bytes()) {
            Err(LabError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_sample_csv("x1,x2,label\n0.5,0.1,2\n".as_bytes()),
            Err(LabError::Parse { line: 2, .. })
        ));
        assert!(matches!(read_sample_csv("a,b\n1,1\n".as_bytes()), Err(LabError::Parse { line: 1, .. })));
        assert!(read_sample_csv("x1,x2,label\n0.5,1\n".as_bytes()).is_err());
    }

    #[test]
    fn json_round_trips() {
        let f = gen_target(4, 3, &TargetMode::ParityOfK, 8).unwrap();
        let text = to_json_string(&f, false).unwrap();
        assert!(text.contains("\"schema_version\":1"));
        assert_eq!(from_json_str::<TargetFunction>(&text).unwrap(), f);
        let bumped = text.replace("\"schema_version\":1", "\"schema_version\":99");
        assert!(from_json_str::<TargetFunction>(&bumped).is_err());
        assert!(matches!(from_json_str::<TargetFunction>("{\n oops"), Err(LabError::Parse { line: 2, .. })));
    }

    #[test]
    fn hypothesis_round_trip_preserves_evaluation() {
        let f = gen_target(6, 2, &TargetMode::AndOfK, 3).unwrap();
        let s = gen_sample(&DistributionDescriptor::uniform(6), &f, 800, 3).unwrap();
        let rep = weak_learn_and2(&s, &LearnerParams::default().with_seed(2)).unwrap();
        let h = rep.outcome.hypothesis().unwrap().clone();
        let back: Hypothesis = from_json_str(&to_json_string(&h, true).unwrap()).unwrap();
        assert_eq!(back, h);
        let probe = gen_sample(&DistributionDescriptor::uniform(6), &f, 100, 99).unwrap();
        for x in &probe.points {
            assert_eq!(h.evaluate(x).unwrap(), back.evaluate(x).unwrap());
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let mut w = JsonlWriter::new(Vec::new());
        w.write(&serde_json::json!({"a": 1})).unwrap();
        w.write(&serde_json::json!({"a": 2})).unwrap();
        let buf = w.finish().unwrap();
        let rows: Vec<serde_json::Value> = read_jsonl(&buf[..]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1]["a"], 2);
    }

    #[test]
    fn descriptor_json_shape() {
        let d = DistributionDescriptor {
            n: 4,
            dist: Distribution::Clustered { centers: 2, spread: 0.1 },
        };
        let v = serde_json::to_value(&d).unwrap();
        assert_eq!(v["kind"], "clustered");
        assert_eq!(v["n"], 4);
        let back: DistributionDescriptor = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn csv_round_trip_any_floats(
            rows in proptest::collection::vec((proptest::collection::vec(-1e6f64..1e6, 3), any::<bool>()), 1..20)
        ) {
            let points: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            let labels: Vec<Sign> = rows.iter().map(|r| if r.1 { Sign::Pos } else { Sign::Neg }).collect();
            let s = LabeledSample::new(3, points, labels).unwrap();
            let mut buf = Vec::new();
            write_sample_csv(&s, &mut buf).unwrap();
            prop_assert_eq!(read_sample_csv(&buf[..]).unwrap(), s);
        }
    }
}
