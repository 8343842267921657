//! Closed-loop execution of a lasso: one QP per control evaluation, objective
//! switching when the current goal is reached, and a fixed-step plant.
//!
//! Controls are computed for the stacked output vector (single-integrator
//! positions and unicycle look-ahead points) and mapped to unicycle inputs
//! through the near-identity diffeomorphism. With RK4 integration the QP is
//! re-solved at every stage, so the applied input is a feedback law rather
//! than a zero-order hold.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cbf::{
    composite_rows, fcbf_row, finite_time_bound, relaxed_zcbf_row, zcbf_row, CbfParams, Dynamics,
    DynamicsKind,
};
use crate::error::{Error, Result};
use crate::lasso::{LassoSequence, ReachabilityObjective};
use crate::qp::{solve, QpProblem, QpSolution, QpStatus};
use crate::regions::{AgentKind, BarrierField, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    Rk4,
}

/// How a multi-literal goal becomes constraint rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// One weighted row for the bounded goal fields plus a row per unbounded field.
    #[default]
    Composite,
    /// One finite-time row per goal field.
    PerField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integration step in seconds.
    pub dt: f64,
    pub integrator: Integrator,
    /// Longest time any single objective may take, in seconds.
    pub max_time: f64,
    /// Number of full suffix passes to execute.
    pub suffix_cycles: usize,
    /// A goal counts as reached once every goal field is at least this large.
    pub goal_eps: f64,
    /// Time spent under the final objective's safety set after the last switch.
    pub dwell_time: f64,
    pub encoding: Encoding,
    /// Slack weight per proposition name; safety rows on these propositions
    /// become soft.
    pub relaxation: BTreeMap<String, f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            integrator: Integrator::Rk4,
            max_time: 60.0,
            suffix_cycles: 2,
            goal_eps: 1e-3,
            dwell_time: 1.0,
            encoding: Encoding::Composite,
            relaxation: BTreeMap::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Input(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.max_time.is_finite() && self.max_time > 0.0) {
            return Err(Error::Input(format!(
                "max_time must be positive, got {}",
                self.max_time
            )));
        }
        if self.suffix_cycles == 0 {
            return Err(Error::Input("suffix_cycles must be at least 1".into()));
        }
        if !(self.goal_eps.is_finite() && self.goal_eps >= 0.0) {
            return Err(Error::Input(format!(
                "goal_eps must be non-negative, got {}",
                self.goal_eps
            )));
        }
        if !(self.dwell_time.is_finite() && self.dwell_time >= 0.0) {
            return Err(Error::Input(format!(
                "dwell_time must be non-negative, got {}",
                self.dwell_time
            )));
        }
        if let Some((name, w)) = self
            .relaxation
            .iter()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::Input(format!(
                "relaxation weight for {name} must be positive, got {w}"
            )));
        }
        Ok(())
    }
}

/// Unicycle inputs `(v, omega)` that move the look-ahead point at distance
/// `offset` along the heading with planar velocity `u`.
pub fn nid_transform(u: [f64; 2], heading: f64, offset: f64) -> (f64, f64) {
    let (s, c) = heading.sin_cos();
    (c * u[0] + s * u[1], (-s * u[0] + c * u[1]) / offset)
}

/// Wraps an angle to `(-pi, pi]`.
fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = a - tau * ((a + std::f64::consts::PI) / tau).floor();
    if w <= -std::f64::consts::PI {
        w + tau
    } else {
        w
    }
}

/// Assembles and solves the per-step QP for one objective.
pub struct Controller<'a> {
    pub workspace: &'a Workspace,
    pub params: &'a CbfParams,
    pub config: &'a SimConfig,
    dynamics: Dynamics,
}

impl<'a> Controller<'a> {
    pub fn new(
        workspace: &'a Workspace,
        params: &'a CbfParams,
        config: &'a SimConfig,
    ) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let kinds = workspace
            .agents()
            .iter()
            .map(|a| match a.kind {
                AgentKind::SingleIntegrator { .. } => DynamicsKind::SingleIntegrator,
                AgentKind::Unicycle { .. } => DynamicsKind::UnicycleNid,
            })
            .collect();
        Ok(Controller {
            workspace,
            params,
            config,
            dynamics: Dynamics::new(kinds, workspace.output_dim()),
        })
    }

    /// Goal fields shifted inward by `goal_eps`, so that driving them to zero
    /// reaches the switching threshold.
    pub fn goal_fields(&self, objective: &ReachabilityObjective) -> Result<Vec<BarrierField>> {
        objective
            .goal
            .iter()
            .map(|lit| {
                Ok(self
                    .workspace
                    .literal_field(lit)?
                    .with_margin(self.config.goal_eps))
            })
            .collect()
    }

    /// Whether every goal literal holds with the switching margin at `x`.
    pub fn goal_reached(&self, objective: &ReachabilityObjective, x: &[f64]) -> Result<bool> {
        let z = self.workspace.output(x)?;
        for field in self.goal_fields(objective)? {
            if field.eval(&z)? < 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The QP for `objective` at state `x`. Goal rows are left out when
    /// `with_goal` is false.
    pub fn build_qp(
        &self,
        objective: &ReachabilityObjective,
        x: &[f64],
        with_goal: bool,
        encoding: Encoding,
    ) -> Result<QpProblem> {
        let z = self.workspace.output(x)?;
        let mut prob = QpProblem::new(self.workspace.output_dim());
        if with_goal && !objective.goal.is_empty() {
            let fields = self.goal_fields(objective)?;
            let rows = match encoding {
                Encoding::Composite => composite_rows(&fields, &self.dynamics, self.params, &z)?,
                Encoding::PerField => fields
                    .iter()
                    .map(|f| fcbf_row(f, &self.dynamics, self.params, &z))
                    .collect::<Result<_>>()?,
            };
            let goal_text = objective.goal.to_string();
            for (i, row) in rows.into_iter().enumerate() {
                let tag = match encoding {
                    Encoding::PerField => format!(
                        "goal {}",
                        objective
                            .goal
                            .iter()
                            .nth(i)
                            .map_or(goal_text.clone(), |l| l.to_string())
                    ),
                    Encoding::Composite => format!("goal {goal_text} ({})", row.tag),
                };
                prob.constraints.push(row.tagged(tag));
            }
        }
        for lit in objective.safety.iter() {
            let field = self.workspace.literal_field(lit)?;
            let row = match self.config.relaxation.get(&lit.name) {
                Some(&w) => {
                    prob.slack_weights.push(w);
                    relaxed_zcbf_row(
                        &field,
                        &self.dynamics,
                        self.params,
                        &z,
                        prob.slack_weights.len() - 1,
                    )?
                }
                None => zcbf_row(&field, &self.dynamics, self.params, &z)?,
            };
            prob.constraints.push(row.tagged(format!("safety {lit}")));
        }
        Ok(prob)
    }

    /// Output-level control for `objective` at state `x` and time `t`.
    pub fn step(
        &self,
        objective: &ReachabilityObjective,
        x: &[f64],
        t: f64,
        with_goal: bool,
    ) -> Result<(Vec<f64>, QpSolution)> {
        let prob = self.build_qp(objective, x, with_goal, self.config.encoding)?;
        let sol = solve(&prob)?;
        if sol.status == QpStatus::Infeasible {
            log::debug!("infeasible at t = {t} from x = {x:?}: {prob:?}");
            return Err(Error::Infeasible {
                time: t,
                objective: objective.label.clone(),
                detail: sol.detail,
            });
        }
        Ok((sol.u.clone(), sol))
    }

    /// State derivative under output-level control `u`.
    pub fn plant(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let ws = self.workspace;
        let mut dx = vec![0.0; x.len()];
        for (i, agent) in ws.agents().iter().enumerate() {
            let (so, uo) = (ws.state_offset(i), ws.output_offset(i));
            match agent.kind {
                AgentKind::SingleIntegrator { dim } => {
                    dx[so..so + dim].copy_from_slice(&u[uo..uo + dim])
                }
                AgentKind::Unicycle { lookahead } => {
                    let heading = x[so + 2];
                    let (v, w) = nid_transform([u[uo], u[uo + 1]], heading, lookahead);
                    dx[so] = v * heading.cos();
                    dx[so + 1] = v * heading.sin();
                    dx[so + 2] = w;
                }
            }
        }
        dx
    }

    /// One integration step of length `dt` from `x`, with `u0` the control
    /// already computed at `x`.
    fn advance(
        &self,
        objective: &ReachabilityObjective,
        x: &[f64],
        u0: &[f64],
        t: f64,
        with_goal: bool,
    ) -> Result<Vec<f64>> {
        let dt = self.config.dt;
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> {
            x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
        };
        let mut next = match self.config.integrator {
            Integrator::Euler => axpy(dt, &self.plant(x, u0)),
            Integrator::Rk4 => {
                let k1 = self.plant(x, u0);
                let x2 = axpy(0.5 * dt, &k1);
                let k2 = self.plant(&x2, &self.step(objective, &x2, t + 0.5 * dt, with_goal)?.0);
                let x3 = axpy(0.5 * dt, &k2);
                let k3 = self.plant(&x3, &self.step(objective, &x3, t + 0.5 * dt, with_goal)?.0);
                let x4 = axpy(dt, &k3);
                let k4 = self.plant(&x4, &self.step(objective, &x4, t + dt, with_goal)?.0);
                x.iter()
                    .enumerate()
                    .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        };
        for (i, agent) in self.workspace.agents().iter().enumerate() {
            if let AgentKind::Unicycle { .. } = agent.kind {
                let h = self.workspace.state_offset(i) + 2;
                next[h] = wrap_angle(next[h]);
            }
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Switch,
    Infeasible,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    /// Sample index at which the event happened.
    pub sample: usize,
    /// Lasso position of the objective involved.
    pub position: usize,
    /// Index of the objective in the unrolled execution.
    pub block: usize,
    pub label: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Sampled closed-loop trajectory.
///
/// `controls[k]` and `objective_index[k]` describe the input applied from
/// sample `k` to `k + 1` and the lasso position it was computed for. A
/// switch event at sample `k` means the goal held at `states[k]`; the input
/// at that sample already belongs to the next objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub objective_index: Vec<usize>,
    pub events: Vec<Event>,
}

/// Event file contents written next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub dt: f64,
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub suffix_cycles: usize,
    pub events: Vec<Event>,
}

impl Trajectory {
    fn new() -> Self {
        Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            objective_index: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn switches(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::Switch)
    }

    /// Minimum of `field` over all samples.
    pub fn min_field(&self, workspace: &Workspace, field: &BarrierField) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for x in &self.states {
            lo = lo.min(field.eval(&workspace.output(x)?)?);
        }
        Ok(lo)
    }

    /// CSV with header `t,x0..,u0..,objective_index`, LF line endings and
    /// shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 0..n {
            write!(out, ",x{i}").unwrap();
        }
        for i in 0..m {
            write!(out, ",u{i}").unwrap();
        }
        out.push_str(",objective_index\n");
        for k in 0..self.len() {
            write!(out, "{}", self.times[k]).unwrap();
            for v in self.states[k].iter().chain(&self.controls[k]) {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", self.objective_index[k]).unwrap();
        }
        out
    }

    /// Parses [`Trajectory::to_csv`] output; events come from the JSON log.
    pub fn from_csv(text: &str, events: Vec<Event>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Input("empty trajectory file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") || cols.last() != Some(&"objective_index") {
            return Err(Error::Input(
                "trajectory header must start with t and end with objective_index".into(),
            ));
        }
        let n = cols.iter().filter(|c| c.starts_with('x')).count();
        let m = cols.iter().filter(|c| c.starts_with('u')).count();
        if n + m + 2 != cols.len() {
            return Err(Error::Input(format!(
                "unexpected trajectory columns: {header}"
            )));
        }
        let mut traj = Trajectory::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Input(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    cols.len(),
                    fields.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::Input(format!("line {}: bad number {s:?}", lineno + 2)))
            };
            traj.times.push(num(fields[0])?);
            traj.states.push(
                fields[1..=n]
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<_>>()?,
            );
            traj.controls.push(
                fields[n + 1..=n + m]
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<_>>()?,
            );
            let obj = fields[n + m + 1];
            traj.objective_index.push(obj.parse().map_err(|_| {
                Error::Input(format!("line {}: bad objective index {obj:?}", lineno + 2))
            })?);
        }
        traj.events = events;
        Ok(traj)
    }

    fn push(&mut self, t: f64, x: Vec<f64>, u: Vec<f64>, pos: usize) {
        self.times.push(t);
        self.states.push(x);
        self.controls.push(u);
        self.objective_index.push(pos);
    }
}

/// A failed run together with everything simulated up to the failure.
#[derive(Debug, Clone)]
pub struct SimFailure {
    pub error: Error,
    pub trajectory: Trajectory,
}

impl std::fmt::Display for SimFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for SimFailure {}

impl From<Error> for Box<SimFailure> {
    fn from(error: Error) -> Self {
        Box::new(SimFailure {
            error,
            trajectory: Trajectory::new(),
        })
    }
}

/// Executes the prefix once and the suffix `suffix_cycles` times from `x0`,
/// then holds the last objective's safety set for `dwell_time`.
pub fn run(
    workspace: &Workspace,
    lasso: &LassoSequence,
    params: &CbfParams,
    config: &SimConfig,
    x0: &[f64],
) -> std::result::Result<Trajectory, Box<SimFailure>> {
    let ctl = Controller::new(workspace, params, config)?;
    if x0.len() != workspace.state_dim() {
        return Err(Error::dimension(workspace.state_dim(), x0.len()).into());
    }
    if lasso.suffix.is_empty() {
        return Err(Error::Input("lasso has an empty suffix".into()).into());
    }
    let mut traj = Trajectory::new();
    let fail = |traj: &mut Trajectory, error: Error, k: usize, block: usize, pos: usize| {
        let kind = match error {
            Error::Timeout { .. } => Some(EventKind::Timeout),
            Error::Infeasible { .. } => Some(EventKind::Infeasible),
            _ => None,
        };
        if let Some(kind) = kind {
            traj.events.push(Event {
                time: k as f64 * config.dt,
                sample: k,
                position: pos,
                block,
                label: lasso.objective(pos).label.clone(),
                kind,
                detail: error.to_string(),
            });
        }
        Box::new(SimFailure {
            error,
            trajectory: std::mem::replace(traj, Trajectory::new()),
        })
    };

    let blocks = lasso.p() + lasso.ell() * config.suffix_cycles;
    let mut x = x0.to_vec();
    let mut k = 0usize;
    let first = lasso.objective(0);
    if let Ok(values) = workspace.values(&x) {
        for lit in first.safety.iter() {
            let h = values
                .get(&lit.name)
                .map(|v| if lit.negated { -v } else { *v });
            if h.is_some_and(|h| h < 0.0) {
                log::warn!(
                    "initial state violates safety literal {lit} of {}",
                    first.label
                );
            }
        }
    }

    for block in 0..blocks {
        let pos = lasso.position(block);
        let objective = lasso.objective(pos);
        let entered = k;
        let entry_bound = entry_time_bound(&ctl, objective, &x);
        log::debug!(
            "block {block}: {objective} from t = {:.3}",
            k as f64 * config.dt
        );
        loop {
            let t = k as f64 * config.dt;
            match ctl.goal_reached(objective, &x) {
                Ok(true) => {
                    traj.events.push(Event {
                        time: t,
                        sample: k,
                        position: pos,
                        block,
                        label: objective.label.clone(),
                        kind: EventKind::Switch,
                        detail: String::new(),
                    });
                    log::info!("{} reached at t = {t:.3}", objective.label);
                    break;
                }
                Ok(false) => {}
                Err(e) => return Err(fail(&mut traj, e, k, block, pos)),
            }
            if (k - entered) as f64 * config.dt > config.max_time {
                let error = Error::Timeout {
                    objective: objective.label.clone(),
                    entered: entered as f64 * config.dt,
                    max_time: config.max_time,
                    bound: entry_bound,
                };
                return Err(fail(&mut traj, error, k, block, pos));
            }
            let u = match ctl.step(objective, &x, t, true) {
                Ok((u, _)) => u,
                Err(e) => return Err(fail(&mut traj, e, k, block, pos)),
            };
            let next = match ctl.advance(objective, &x, &u, t, true) {
                Ok(next) => next,
                Err(e) => return Err(fail(&mut traj, e, k, block, pos)),
            };
            traj.push(t, std::mem::replace(&mut x, next), u, pos);
            k += 1;
        }
    }

    // hold the final safety set, goals switched off
    let pos = lasso.position(blocks - 1);
    let objective = lasso.objective(pos);
    let dwell_steps = (config.dwell_time / config.dt).round() as usize;
    for step in 0..=dwell_steps {
        let t = k as f64 * config.dt;
        let u = match ctl.step(objective, &x, t, false) {
            Ok((u, _)) => u,
            Err(e) => return Err(fail(&mut traj, e, k, blocks - 1, pos)),
        };
        if step == dwell_steps {
            traj.push(t, x.clone(), u, pos);
            break;
        }
        let next = match ctl.advance(objective, &x, &u, t, false) {
            Ok(next) => next,
            Err(e) => return Err(fail(&mut traj, e, k, blocks - 1, pos)),
        };
        traj.push(t, std::mem::replace(&mut x, next), u, pos);
        k += 1;
    }
    Ok(traj)
}

/// Finite-time bound for a single-field goal from the entry state, if the goal
/// is not yet met.
fn entry_time_bound(
    ctl: &Controller<'_>,
    objective: &ReachabilityObjective,
    x: &[f64],
) -> Option<f64> {
    let fields = ctl.goal_fields(objective).ok()?;
    let z = ctl.workspace.output(x).ok()?;
    match fields.as_slice() {
        [field] => {
            let h = field.eval(&z).ok()?;
            (h < 0.0).then(|| finite_time_bound(h, ctl.params))
        }
        _ => None,
    }
}
