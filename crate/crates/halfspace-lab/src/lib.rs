//! Learners for Boolean functions of a few halfspaces.
//!
//! The crate bundles the pieces needed to run the weak-learning pipeline at
//! desk scale: radial-isotropy (Forster) transforms, Gaussian region filters,
//! two weak learners, an AdaBoost wrapper, a brute-force baseline, and a
//! Monte Carlo harness for the quantitative lemmas the learners rely on.

pub mod boosting;
pub mod cli;
pub mod data;
pub mod domain;
pub mod error;
pub mod filtering;
pub mod forster;
pub mod learners;
pub mod lemmalab;
pub mod numerics;
pub mod weak2;
pub mod weakk;

pub use domain::{
    accuracy, evaluate_hypothesis, evaluate_target, homogenize, perturb_labelsafe, sign, LearnOutcome, Side,
    Halfspace, Hypothesis, Inner, LabeledSample, LearnerParams, PiecewiseChain, Sign, Stage,
    TargetFunction,
};
pub use error::{LabError, Result};
