//! Labeled regions as smooth scalar fields, and the workspace that binds them
//! to agents.
//!
//! A proposition `pi` holds at a point when `h_pi >= 0`. Fields read the
//! *output* vector of the workspace: the stacked planar positions of every
//! agent (for unicycles, the look-ahead point). For single-integrator-only
//! workspaces the output vector is the state itself.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ltl::{Literal, RoboticSpec};

const UNIT_NORMAL_TOL: f64 = 1e-12;

/// Default band below which a field value is treated as sitting on its boundary.
pub const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `r^2 - |p - c|^2`
    Circle {
        center: Vec<f64>,
        radius: f64,
    },
    /// `offset - n . p`, so the region is the side the normal points away from.
    Halfplane {
        normal: Vec<f64>,
        offset: f64,
    },
    /// `1 - sum(((p - c)_k / a_k)^2)`
    Ellipse {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
    },
    /// `(q_1 + delta1)^2 + delta2 - |q - p|^2` where `p` is the first agent
    /// and `q` the second; the allowed distance grows with the second agent's
    /// first coordinate.
    Connectivity {
        delta1: f64,
        delta2: f64,
    },
    ConstantTrue,
}

impl Shape {
    fn slice_len(&self) -> Option<usize> {
        match self {
            Shape::Circle { center, .. } => Some(center.len()),
            Shape::Halfplane { normal, .. } => Some(normal.len()),
            Shape::Ellipse { center, .. } => Some(center.len()),
            Shape::Connectivity { .. } | Shape::ConstantTrue => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Shape::Circle { center, radius } => {
                if center.is_empty() || !finite(center) {
                    return Err(Error::Input(
                        "circle center must be a finite, non-empty vector".into(),
                    ));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Input(format!(
                        "circle radius must be positive, got {radius}"
                    )));
                }
            }
            Shape::Halfplane { normal, offset } => {
                let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                if normal.is_empty() || !finite(normal) || (norm - 1.0).abs() > UNIT_NORMAL_TOL {
                    return Err(Error::Input(format!(
                        "halfplane normal must have unit length, got norm {norm}"
                    )));
                }
                if !offset.is_finite() {
                    return Err(Error::Input("halfplane offset must be finite".into()));
                }
            }
            Shape::Ellipse { center, semi_axes } => {
                if center.is_empty() || center.len() != semi_axes.len() || !finite(center) {
                    return Err(Error::Input(
                        "ellipse center and semi-axes must have equal length".into(),
                    ));
                }
                if semi_axes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(Error::Input("ellipse semi-axes must be positive".into()));
                }
            }
            Shape::Connectivity { delta1, delta2 } => {
                if !delta1.is_finite() || !delta2.is_finite() {
                    return Err(Error::Input("connectivity deltas must be finite".into()));
                }
            }
            Shape::ConstantTrue => {}
        }
        Ok(())
    }
}

/// Where in the stacked output vector a field reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binding {
    Agent {
        offset: usize,
        len: usize,
    },
    Pair {
        first: usize,
        second: usize,
        len: usize,
    },
    Unbound,
}

/// A smooth scalar field `h = scale * raw(p) + bias` over the stacked output vector.
///
/// `scale` is `+1` or `-1`; negation flips both `scale` and `bias`, so
/// negating twice returns the original field bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierField {
    pub shape: Shape,
    pub binding: Binding,
    dim: usize,
    scale: f64,
    bias: f64,
}

impl BarrierField {
    /// Binds `shape` to the output slice `offset..offset + len` of a `dim`-vector.
    pub fn on_slice(shape: Shape, offset: usize, dim: usize) -> Result<Self> {
        shape.validate()?;
        let len = shape
            .slice_len()
            .ok_or_else(|| Error::Input("shape needs a pair binding or none".into()))?;
        if offset + len > dim {
            return Err(Error::dimension(dim, offset + len));
        }
        Ok(BarrierField {
            shape,
            binding: Binding::Agent { offset, len },
            dim,
            scale: 1.0,
            bias: 0.0,
        })
    }

    /// Connectivity field between the slices at `first` and `second`, each of length `len`.
    pub fn connectivity(
        first: usize,
        second: usize,
        len: usize,
        delta1: f64,
        delta2: f64,
        dim: usize,
    ) -> Result<Self> {
        let shape = Shape::Connectivity { delta1, delta2 };
        shape.validate()?;
        if len == 0 {
            return Err(Error::Input("connectivity slices must be non-empty".into()));
        }
        let overlap = first < second + len && second < first + len;
        if overlap {
            return Err(Error::Input("connectivity slices overlap".into()));
        }
        let end = first.max(second) + len;
        if end > dim {
            return Err(Error::dimension(dim, end));
        }
        Ok(BarrierField {
            shape,
            binding: Binding::Pair { first, second, len },
            dim,
            scale: 1.0,
            bias: 0.0,
        })
    }

    pub fn constant_true(dim: usize) -> Self {
        BarrierField {
            shape: Shape::ConstantTrue,
            binding: Binding::Unbound,
            dim,
            scale: 1.0,
            bias: 0.0,
        }
    }

    /// Stacked output dimension this field expects.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_negated(&self) -> bool {
        self.scale < 0.0
    }

    /// Fields bounded above on the whole space. Negated fields never are.
    pub fn is_bounded(&self) -> bool {
        self.scale > 0.0
            && matches!(
                self.shape,
                Shape::Circle { .. } | Shape::Ellipse { .. } | Shape::Connectivity { .. }
            )
    }

    /// Upper bound `M` when one exists in closed form.
    pub fn upper_bound(&self) -> Option<f64> {
        if self.scale < 0.0 {
            return None;
        }
        match &self.shape {
            Shape::Circle { radius, .. } => Some(radius * radius + self.bias),
            Shape::Ellipse { .. } => Some(1.0 + self.bias),
            _ => None,
        }
    }

    pub fn negate(&self) -> BarrierField {
        BarrierField {
            scale: -self.scale,
            bias: -self.bias,
            ..self.clone()
        }
    }

    /// The field `h - margin`, whose zero super-level set sits `margin` inside.
    pub fn with_margin(&self, margin: f64) -> BarrierField {
        BarrierField {
            bias: self.bias - margin,
            ..self.clone()
        }
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::dimension(self.dim, z.len()));
        }
        Ok(())
    }

    fn raw(&self, z: &[f64]) -> f64 {
        match (&self.shape, &self.binding) {
            (Shape::Circle { center, radius }, Binding::Agent { offset, .. }) => {
                let p = &z[*offset..*offset + center.len()];
                radius * radius - sq_dist(p, center)
            }
            (Shape::Halfplane { normal, offset: b }, Binding::Agent { offset, .. }) => {
                let p = &z[*offset..*offset + normal.len()];
                b - dot(normal, p)
            }
            (Shape::Ellipse { center, semi_axes }, Binding::Agent { offset, .. }) => {
                let p = &z[*offset..*offset + center.len()];
                1.0 - p
                    .iter()
                    .zip(center)
                    .zip(semi_axes)
                    .map(|((pk, ck), ak)| ((pk - ck) / ak).powi(2))
                    .sum::<f64>()
            }
            (Shape::Connectivity { delta1, delta2 }, Binding::Pair { first, second, len }) => {
                let p = &z[*first..*first + len];
                let q = &z[*second..*second + len];
                (q[0] + delta1).powi(2) + delta2 - sq_dist(q, p)
            }
            (Shape::ConstantTrue, _) => 1.0,
            _ => unreachable!("shape and binding are paired by construction"),
        }
    }

    fn raw_grad(&self, z: &[f64], out: &mut [f64]) {
        match (&self.shape, &self.binding) {
            (Shape::Circle { center, .. }, Binding::Agent { offset, .. }) => {
                for (k, ck) in center.iter().enumerate() {
                    out[offset + k] = -2.0 * (z[offset + k] - ck);
                }
            }
            (Shape::Halfplane { normal, .. }, Binding::Agent { offset, .. }) => {
                for (k, nk) in normal.iter().enumerate() {
                    out[offset + k] = -nk;
                }
            }
            (Shape::Ellipse { center, semi_axes }, Binding::Agent { offset, .. }) => {
                for (k, (ck, ak)) in center.iter().zip(semi_axes).enumerate() {
                    out[offset + k] = -2.0 * (z[offset + k] - ck) / (ak * ak);
                }
            }
            (Shape::Connectivity { delta1, .. }, Binding::Pair { first, second, len }) => {
                for k in 0..*len {
                    let diff = z[second + k] - z[first + k];
                    out[first + k] = 2.0 * diff;
                    out[second + k] = -2.0 * diff;
                }
                out[*second] += 2.0 * (z[*second] + delta1);
            }
            (Shape::ConstantTrue, _) => {}
            _ => unreachable!("shape and binding are paired by construction"),
        }
    }

    /// Field value at the stacked output vector `z`.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        Ok(self.scale * self.raw(z) + self.bias)
    }

    /// Analytic gradient with respect to the stacked output vector.
    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let mut out = vec![0.0; self.dim];
        self.raw_grad(z, &mut out);
        if self.scale < 0.0 {
            out.iter_mut().for_each(|g| *g = -*g);
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    /// `p' = u` in `dim` dimensions.
    SingleIntegrator { dim: usize },
    /// Planar unicycle `(x, y, heading)` driven through the look-ahead point at
    /// distance `lookahead` along the heading.
    Unicycle { lookahead: f64 },
}

impl AgentKind {
    pub fn state_dim(&self) -> usize {
        match self {
            AgentKind::SingleIntegrator { dim } => *dim,
            AgentKind::Unicycle { .. } => 3,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            AgentKind::SingleIntegrator { dim } => *dim,
            AgentKind::Unicycle { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub name: String,
    pub kind: AgentKind,
}

/// Axis-aligned box applied to every agent's position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Domain {
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.min.len()
            && p.iter()
                .zip(self.min.iter().zip(&self.max))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    agents: Vec<Agent>,
    propositions: BTreeMap<String, BarrierField>,
    pub domain: Option<Domain>,
    state_offsets: Vec<usize>,
    output_offsets: Vec<usize>,
}

impl Workspace {
    pub fn new(agents: Vec<Agent>) -> Result<Self> {
        let mut state_offsets = Vec::with_capacity(agents.len());
        let mut output_offsets = Vec::with_capacity(agents.len());
        let (mut s, mut o) = (0, 0);
        let mut names = BTreeSet::new();
        for agent in &agents {
            if !names.insert(agent.name.clone()) {
                return Err(Error::Input(format!("duplicate agent name {}", agent.name)));
            }
            match agent.kind {
                AgentKind::SingleIntegrator { dim: 0 } => {
                    return Err(Error::Input(format!(
                        "agent {} has zero dimension",
                        agent.name
                    )));
                }
                AgentKind::Unicycle { lookahead }
                    if !(lookahead.is_finite() && lookahead > 0.0) =>
                {
                    return Err(Error::Input(format!(
                        "agent {} needs a positive look-ahead distance",
                        agent.name
                    )));
                }
                _ => {}
            }
            state_offsets.push(s);
            output_offsets.push(o);
            s += agent.kind.state_dim();
            o += agent.kind.output_dim();
        }
        Ok(Workspace {
            agents,
            propositions: BTreeMap::new(),
            domain: None,
            state_offsets,
            output_offsets,
        })
    }

    pub fn single_integrators(count: usize, dim: usize) -> Result<Self> {
        Workspace::new(
            (0..count)
                .map(|i| Agent {
                    name: format!("R{}", i + 1),
                    kind: AgentKind::SingleIntegrator { dim },
                })
                .collect(),
        )
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    pub fn state_dim(&self) -> usize {
        self.agents.iter().map(|a| a.kind.state_dim()).sum()
    }

    /// Dimension of the stacked output vector, which is also the control dimension.
    pub fn output_dim(&self) -> usize {
        self.agents.iter().map(|a| a.kind.output_dim()).sum()
    }

    pub fn state_offset(&self, agent: usize) -> usize {
        self.state_offsets[agent]
    }

    pub fn output_offset(&self, agent: usize) -> usize {
        self.output_offsets[agent]
    }

    /// Binds a single-agent shape to `agent`'s output slice.
    pub fn bind(&self, agent: usize, shape: Shape) -> Result<BarrierField> {
        let a = self
            .agents
            .get(agent)
            .ok_or_else(|| Error::Input(format!("no agent with index {agent}")))?;
        let len = shape.slice_len().unwrap_or(0);
        if len != a.kind.output_dim() {
            return Err(Error::dimension(a.kind.output_dim(), len));
        }
        BarrierField::on_slice(shape, self.output_offsets[agent], self.output_dim())
    }

    pub fn bind_pair(
        &self,
        first: usize,
        second: usize,
        delta1: f64,
        delta2: f64,
    ) -> Result<BarrierField> {
        if first >= self.agents.len() || second >= self.agents.len() || first == second {
            return Err(Error::Input(
                "connectivity needs two distinct agents".into(),
            ));
        }
        let len = self.agents[first].kind.output_dim();
        if self.agents[second].kind.output_dim() != len {
            return Err(Error::dimension(len, self.agents[second].kind.output_dim()));
        }
        BarrierField::connectivity(
            self.output_offsets[first],
            self.output_offsets[second],
            len,
            delta1,
            delta2,
            self.output_dim(),
        )
    }

    pub fn add_proposition(&mut self, name: impl Into<String>, field: BarrierField) -> Result<()> {
        let name = name.into();
        Literal::positive(name.clone())?;
        if field.dim() != self.output_dim() {
            return Err(Error::dimension(self.output_dim(), field.dim()));
        }
        if self.propositions.insert(name.clone(), field).is_some() {
            return Err(Error::Input(format!("proposition {name} defined twice")));
        }
        Ok(())
    }

    pub fn propositions(&self) -> &BTreeMap<String, BarrierField> {
        &self.propositions
    }

    pub fn field(&self, name: &str) -> Option<&BarrierField> {
        self.propositions.get(name)
    }

    /// Field whose non-negative set is the literal's proposition set.
    pub fn literal_field(&self, lit: &Literal) -> Result<BarrierField> {
        let field = self
            .field(&lit.name)
            .ok_or_else(|| Error::Input(format!("unknown proposition {}", lit.name)))?;
        Ok(if lit.negated {
            field.negate()
        } else {
            field.clone()
        })
    }

    /// Checks that every proposition used by `spec` is defined here.
    pub fn check_spec(&self, spec: &RoboticSpec) -> Result<()> {
        let missing: Vec<_> = spec
            .propositions()
            .into_iter()
            .filter(|p| !self.propositions.contains_key(p))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "undefined propositions: {}",
                missing.join(", ")
            )))
        }
    }

    /// Maps a stacked state to the stacked output vector the fields read.
    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::dimension(self.state_dim(), x.len()));
        }
        let mut z = Vec::with_capacity(self.output_dim());
        for (agent, &off) in self.agents.iter().zip(&self.state_offsets) {
            match agent.kind {
                AgentKind::SingleIntegrator { dim } => z.extend_from_slice(&x[off..off + dim]),
                AgentKind::Unicycle { lookahead } => {
                    let (px, py, th) = (x[off], x[off + 1], x[off + 2]);
                    z.push(px + lookahead * th.cos());
                    z.push(py + lookahead * th.sin());
                }
            }
        }
        Ok(z)
    }

    /// Every proposition's field value at state `x`.
    pub fn values(&self, x: &[f64]) -> Result<BTreeMap<String, f64>> {
        let z = self.output(x)?;
        self.propositions
            .iter()
            .map(|(name, f)| Ok((name.clone(), f.eval(&z)?)))
            .collect()
    }

    /// The labeling function: names of the propositions true at `x`.
    ///
    /// Membership is closed: `h = 0` counts as inside.
    pub fn label(&self, x: &[f64]) -> Result<BTreeSet<String>> {
        if let Some(domain) = &self.domain {
            let z = self.output(x)?;
            for (i, agent) in self.agents.iter().enumerate() {
                let off = self.output_offsets[i];
                let p = &z[off..off + agent.kind.output_dim()];
                if !domain.contains(p) {
                    log::debug!("agent {} at {:?} is outside the domain", agent.name, p);
                }
            }
        }
        Ok(self
            .values(x)?
            .into_iter()
            .filter(|(_, h)| *h >= 0.0)
            .map(|(name, _)| name)
            .collect())
    }
}
