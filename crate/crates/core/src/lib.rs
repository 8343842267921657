//! Controller synthesis for multi-agent robots from a fragment of LTL,
//! using finite-time and zeroing control barrier functions.
//!
//! The pipeline: parse a [`RoboticSpec`], compile it into a [`LassoSequence`]
//! of reachability objectives, then run the closed loop with
//! [`runtime::run`], which solves one small QP per control step. The
//! resulting [`Trajectory`] can be checked against the specification with
//! [`trace::check_descendant`].

pub mod cbf;
pub mod error;
pub mod lasso;
pub mod ltl;
pub mod qp;
pub mod regions;
pub mod runtime;
pub mod trace;

pub use cbf::{AffineConstraint, AlphaKind, CbfParams, ControlAffine, Dynamics};
pub use error::{Error, Result};
pub use lasso::{compile, default_template, LassoSequence, LassoTemplate, ReachabilityObjective};
pub use ltl::{parse_spec, Literal, LiteralSet, RoboticSpec};
pub use qp::{QpProblem, QpSolution, QpStatus};
pub use regions::{Agent, AgentKind, BarrierField, Domain, Shape, Workspace};
pub use runtime::{
    run, Controller, Encoding, Event, EventKind, Integrator, SimConfig, SimFailure, Trajectory,
};
pub use trace::{check_descendant, check_satisfaction, extract_trace, LabelSet, Trace};
