//! Inexact augmented Lagrangian scheme for convex problems whose objective
//! and constraints depend on a parameter that is learned concurrently at a
//! linear rate, together with an analysis suite that computes the dual and
//! primal rate-bound constants and verifies runs against them.
//!
//! The pieces:
//!
//! * [`problem`] — the parametrized problem model, the closed-form augmented
//!   Lagrangian and its λ-gradient, projections and the dual prox map;
//! * [`learning`] — parameter estimate sequences with linear-rate certificates;
//! * [`inner_solver`] — certified inner solves via accelerated projected
//!   gradient;
//! * [`schedule`] + [`driver`] — the outer loop with ergodic averages and the
//!   run trace;
//! * [`analysis`] — the active-set ground-truth oracle, the rate-bound
//!   constants and the per-theorem envelope checks;
//! * [`benchmark`] — seeded problem generators for the verification harness.
//!
//! The embarrassingly parallel verification workloads (oracle certificates,
//! envelope checks over sampled iterations) have `par_*` variants behind the
//! default `parallel` feature; the sequential paths produce identical output.

pub mod analysis;
pub mod benchmark;
pub mod driver;
pub mod error;
pub mod inner_solver;
pub mod learning;
pub mod problem;
pub mod schedule;

pub use error::{Error, Result};
pub use problem::{
    dist_to_nonpos_orthant, eval_aug_lagrangian, eval_dual, grad_lambda_aug_lagrangian,
    multiplier_update, project, prox_map, Certificates, Decision, MisspecifiedProblem, Multiplier,
    Objective, ParamVector, Penalty, QuadraticFamily, SimpleSet, ThetaBox,
};
pub use learning::{LearningSequence, RateCertificate};
pub use schedule::InexactnessSchedule;
