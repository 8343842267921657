//! Scenario files: a TOML document describing agents, labeled regions, the
//! specification and controller settings.
//!
//! ```toml
//! spec = "F(A) & G(!O)"
//!
//! [cbf]                 # optional, all keys optional
//! gamma = 1.0
//! rho = 0.0
//! alpha = "cubic"       # or "linear"
//! k = 1.0
//!
//! [sim]                 # optional
//! dt = 0.01
//! integrator = "rk4"    # or "euler"
//! max_time = 60.0
//! suffix_cycles = 2
//! goal_eps = 0.001
//! dwell_time = 1.0
//! encoding = "composite" # or "per-field"
//! nid_offset = 0.1      # look-ahead distance for unicycles
//!
//! [template]            # optional, 1-based visiting orders
//! order2 = [1]
//! order3 = [1]
//!
//! [relaxation]          # optional: proposition name = slack weight
//! O = 1e4
//!
//! [[agents]]
//! name = "R1"
//! kind = "single_integrator"  # or "unicycle" (x0 = [x, y, heading])
//! dim = 2
//! x0 = [0.0, 0.0]
//!
//! [[propositions]]
//! name = "A"
//! agent = "R1"
//! kind = "circle"
//! center = [1.0, 1.0]
//! radius = 0.2
//! ```
//!
//! A proposition may use `bind = { A1 = "R1", A2 = "R2" }` instead of
//! `name`/`agent` to define one copy of the region per agent. Other kinds:
//! `halfplane` (`normal`, `offset`), `ellipse` (`center`, `semi_axes`) and
//! `connectivity` (`agents = [first, second]`, `delta1`, `delta2`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use ltlcbf_core::cbf::{AlphaKind, CbfParams};
use ltlcbf_core::lasso::{default_template, LassoTemplate};
use ltlcbf_core::ltl::{parse_spec, RoboticSpec};
use ltlcbf_core::regions::{Agent, AgentKind, Domain, Shape, Workspace};
use ltlcbf_core::runtime::{Encoding, Integrator, SimConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    spec: String,
    #[serde(default)]
    template: Option<TemplateEntry>,
    #[serde(default)]
    cbf: CbfEntry,
    #[serde(default)]
    sim: SimEntry,
    #[serde(default)]
    relaxation: BTreeMap<String, f64>,
    #[serde(default)]
    domain: Option<Domain>,
    agents: Vec<AgentEntry>,
    #[serde(default)]
    propositions: Vec<PropositionEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateEntry {
    #[serde(default)]
    order2: Option<Vec<usize>>,
    #[serde(default)]
    order3: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CbfEntry {
    gamma: Option<f64>,
    rho: Option<f64>,
    alpha: Option<AlphaKind>,
    k: Option<f64>,
    composite_weights: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimEntry {
    dt: Option<f64>,
    integrator: Option<Integrator>,
    max_time: Option<f64>,
    suffix_cycles: Option<usize>,
    goal_eps: Option<f64>,
    dwell_time: Option<f64>,
    encoding: Option<Encoding>,
    nid_offset: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentEntry {
    name: String,
    #[serde(default = "default_agent_kind")]
    kind: String,
    #[serde(default = "default_dim")]
    dim: usize,
    x0: Vec<f64>,
}

fn default_agent_kind() -> String {
    "single_integrator".into()
}

fn default_dim() -> usize {
    2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PropositionEntry {
    name: Option<String>,
    agent: Option<String>,
    bind: Option<BTreeMap<String, String>>,
    agents: Option<Vec<String>>,
    kind: String,
    center: Option<Vec<f64>>,
    radius: Option<f64>,
    normal: Option<Vec<f64>>,
    offset: Option<f64>,
    semi_axes: Option<Vec<f64>>,
    delta1: Option<f64>,
    delta2: Option<f64>,
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec_text: String,
    pub spec: RoboticSpec,
    pub template: LassoTemplate,
    pub workspace: Workspace,
    pub params: CbfParams,
    pub config: SimConfig,
    pub x0: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Scenario(msg.into())
}

fn need<T>(value: Option<T>, what: &str, name: &str) -> Result<T> {
    value.ok_or_else(|| bad(format!("proposition {name}: missing `{what}`")))
}

impl PropositionEntry {
    fn shape(&self, name: &str) -> Result<Shape> {
        Ok(match self.kind.as_str() {
            "circle" => Shape::Circle {
                center: need(self.center.clone(), "center", name)?,
                radius: need(self.radius, "radius", name)?,
            },
            "halfplane" => Shape::Halfplane {
                normal: need(self.normal.clone(), "normal", name)?,
                offset: need(self.offset, "offset", name)?,
            },
            "ellipse" => Shape::Ellipse {
                center: need(self.center.clone(), "center", name)?,
                semi_axes: need(self.semi_axes.clone(), "semi_axes", name)?,
            },
            other => return Err(bad(format!("proposition {name}: unknown kind {other:?}"))),
        })
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Scenario::from_toml(&text)
    }

    /// Loads `path` after applying `key = value` overrides to the raw document.
    pub fn load_with(path: &Path, overrides: &[(String, String)]) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        for (key, value) in overrides {
            set_key(&mut doc, key, value)?;
        }
        Scenario::from_table(doc)
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        Scenario::from_table(doc)
    }

    fn from_table(doc: toml::Table) -> Result<Scenario> {
        let file: ScenarioFile = doc
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let spec = parse_spec(&file.spec)?;

        let nid_offset = file.sim.nid_offset.unwrap_or(0.1);
        let mut agents = Vec::with_capacity(file.agents.len());
        let mut x0 = Vec::new();
        for a in &file.agents {
            let kind = match a.kind.as_str() {
                "single_integrator" => AgentKind::SingleIntegrator { dim: a.dim },
                "unicycle" => AgentKind::Unicycle {
                    lookahead: nid_offset,
                },
                other => return Err(bad(format!("agent {}: unknown kind {other:?}", a.name))),
            };
            if a.x0.len() != kind.state_dim() {
                return Err(bad(format!(
                    "agent {}: x0 has {} entries, expected {}",
                    a.name,
                    a.x0.len(),
                    kind.state_dim()
                )));
            }
            x0.extend_from_slice(&a.x0);
            agents.push(Agent {
                name: a.name.clone(),
                kind,
            });
        }
        let mut workspace = Workspace::new(agents)?;
        workspace.domain = file.domain;
        let agent = |name: &str, prop: &str| {
            workspace
                .agent_index(name)
                .ok_or_else(|| bad(format!("proposition {prop}: unknown agent {name:?}")))
        };

        let mut fields = Vec::new();
        for p in &file.propositions {
            let label = p.name.clone().unwrap_or_else(|| "<bind>".into());
            if p.kind == "connectivity" {
                let pair = need(p.agents.clone(), "agents", &label)?;
                let [first, second] = pair.as_slice() else {
                    return Err(bad(format!(
                        "proposition {label}: connectivity needs two agents"
                    )));
                };
                let field = workspace.bind_pair(
                    agent(first, &label)?,
                    agent(second, &label)?,
                    p.delta1.unwrap_or(0.0),
                    p.delta2.unwrap_or(0.0),
                )?;
                fields.push((need(p.name.clone(), "name", &label)?, field));
                continue;
            }
            let shape = p.shape(&label)?;
            match (&p.name, &p.agent, &p.bind) {
                (Some(name), Some(a), None) => {
                    fields.push((name.clone(), workspace.bind(agent(a, name)?, shape)?))
                }
                (None, None, Some(bind)) => {
                    for (name, a) in bind {
                        fields.push((
                            name.clone(),
                            workspace.bind(agent(a, name)?, shape.clone())?,
                        ));
                    }
                }
                _ => {
                    return Err(bad(format!(
                        "proposition {label}: give either `name` and `agent`, or `bind`"
                    )))
                }
            }
        }
        for (name, field) in fields {
            workspace.add_proposition(name, field)?;
        }
        workspace.check_spec(&spec)?;

        let mut template = default_template(&spec);
        if let Some(t) = file.template {
            let zero_based = |v: Vec<usize>| -> Result<Vec<usize>> {
                v.into_iter()
                    .map(|i| {
                        i.checked_sub(1)
                            .ok_or_else(|| bad("template indices start at 1"))
                    })
                    .collect()
            };
            if let Some(o) = t.order2 {
                template.order2 = zero_based(o)?;
            }
            if let Some(o) = t.order3 {
                template.order3 = zero_based(o)?;
            }
        }
        template.validate(&spec)?;

        let defaults = CbfParams::default();
        let params = CbfParams {
            gamma: file.cbf.gamma.unwrap_or(defaults.gamma),
            rho: file.cbf.rho.unwrap_or(defaults.rho),
            alpha: file.cbf.alpha.unwrap_or(defaults.alpha),
            k: file.cbf.k.unwrap_or(defaults.k),
            composite_weights: file.cbf.composite_weights,
        };
        params.validate()?;

        for name in file.relaxation.keys() {
            if workspace.field(name).is_none() {
                return Err(bad(format!(
                    "relaxation names unknown proposition {name:?}"
                )));
            }
        }
        let d = SimConfig::default();
        let config = SimConfig {
            dt: file.sim.dt.unwrap_or(d.dt),
            integrator: file.sim.integrator.unwrap_or(d.integrator),
            max_time: file.sim.max_time.unwrap_or(d.max_time),
            suffix_cycles: file.sim.suffix_cycles.unwrap_or(d.suffix_cycles),
            goal_eps: file.sim.goal_eps.unwrap_or(d.goal_eps),
            dwell_time: file.sim.dwell_time.unwrap_or(d.dwell_time),
            encoding: file.sim.encoding.unwrap_or(d.encoding),
            relaxation: file.relaxation,
        };
        config.validate()?;

        Ok(Scenario {
            spec_text: file.spec,
            spec,
            template,
            workspace,
            params,
            config,
            x0,
        })
    }
}

/// Sets a dotted `key` such as `cbf.gamma` or `relaxation.B` in `doc`.
/// Values parse as TOML scalars, falling back to plain strings.
pub fn set_key(doc: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| bad(format!("empty key {key:?}")))?;
    let mut table = doc;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| bad(format!("{key}: {part} is not a table")))?;
    }
    table.insert(last.to_string(), parsed);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_assignment(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| bad(format!("expected key=value, got {text:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
