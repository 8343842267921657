//! Traces of sampled trajectories and the structural check that a trace
//! follows the compiled lasso.
//!
//! A trace is the sequence of label sets a trajectory visits, with
//! consecutive duplicates merged. Label changes that last a single sample
//! and only involve fields within `chatter_band` of their boundary are treated
//! as sampling noise on `h = 0` and suppressed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::LassoTemplate;
use crate::ltl::{Literal, LiteralSet, RoboticSpec};
use crate::regions::Workspace;
use crate::runtime::{EventKind, Trajectory};

/// Truth value of every workspace proposition.
pub type LabelSet = BTreeMap<String, bool>;

/// Names of the true propositions.
pub fn positive_subset(labels: &LabelSet) -> BTreeSet<String> {
    labels
        .iter()
        .filter(|(_, v)| **v)
        .map(|(k, _)| k.clone())
        .collect()
}

/// Full assignment over `all` with exactly `positive` true.
pub fn from_positive(positive: &BTreeSet<String>, all: &BTreeSet<String>) -> LabelSet {
    all.iter()
        .map(|name| (name.clone(), positive.contains(name)))
        .collect()
}

fn holds(labels: &LabelSet, lit: &Literal) -> bool {
    labels.get(&lit.name).is_some_and(|v| *v != lit.negated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Samples a label change must persist to be committed.
    pub hysteresis: usize,
    /// Changes shorter than `hysteresis` are suppressed only if every flipped
    /// field stays within this distance of zero.
    pub chatter_band: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            hysteresis: 2,
            chatter_band: 1e-3,
        }
    }
}

/// One label set held over the samples `start..=end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub labels: LabelSet,
    pub start: usize,
    pub end: usize,
}

/// The samples and trace steps belonging to one objective of the unrolled run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub block: usize,
    pub position: usize,
    pub label: String,
    pub start: usize,
    /// Switch sample, or the last sample for an unfinished block.
    pub end: usize,
    /// Last sample covered, past `end` for the final block's dwell tail.
    pub tail: usize,
    pub complete: bool,
    pub first_step: usize,
    pub last_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    /// Whether the final label set is held for more than one sample, standing
    /// in for infinite repetition.
    pub terminal_repeat: bool,
    pub segments: Vec<Segment>,
    pub times: Vec<f64>,
}

impl Trace {
    fn step_at(&self, sample: usize) -> usize {
        self.steps.partition_point(|s| s.end < sample)
    }

    /// Label set in force at `sample`.
    pub fn labels_at(&self, sample: usize) -> &LabelSet {
        &self.steps[self.step_at(sample)].labels
    }

    /// Label set at the end of a segment.
    pub fn final_labels(&self, segment: &Segment) -> &LabelSet {
        self.labels_at(segment.end)
    }

    pub fn complete_blocks(&self) -> usize {
        self.segments.iter().filter(|s| s.complete).count()
    }
}

pub fn extract_trace(traj: &Trajectory, ws: &Workspace) -> Result<Trace> {
    extract_trace_with(traj, ws, &TraceOptions::default())
}

pub fn extract_trace_with(traj: &Trajectory, ws: &Workspace, opts: &TraceOptions) -> Result<Trace> {
    if traj.is_empty() {
        return Err(Error::Shape("trajectory has no samples".into()));
    }
    let n = traj.len();
    let mut values = Vec::with_capacity(n);
    for x in &traj.states {
        values.push(ws.values(x)?);
    }
    let raw: Vec<LabelSet> = values
        .iter()
        .map(|v| v.iter().map(|(k, h)| (k.clone(), *h >= 0.0)).collect())
        .collect();

    let mut switch_samples = Vec::new();
    for e in traj.events.iter().filter(|e| e.kind == EventKind::Switch) {
        if e.sample >= n {
            return Err(Error::Shape(format!(
                "switch of {} at sample {} but the trajectory has {n} samples",
                e.label, e.sample
            )));
        }
        if switch_samples.last().is_some_and(|&s| e.sample < s) {
            return Err(Error::Shape("switch events out of order".into()));
        }
        switch_samples.push(e.sample);
    }
    let anchors: BTreeSet<usize> = switch_samples.iter().copied().collect();

    let mut steps = vec![TraceStep {
        labels: raw[0].clone(),
        start: 0,
        end: 0,
    }];
    let mut k = 1;
    while k < n {
        let current = &steps.last().expect("non-empty").labels;
        if raw[k] == *current {
            steps.last_mut().expect("non-empty").end = k;
            k += 1;
            continue;
        }
        let run = (k..n).take_while(|&j| raw[j] == raw[k]).count();
        let flipped: Vec<&String> = raw[k]
            .iter()
            .filter(|(name, v)| current.get(*name) != Some(v))
            .map(|(name, _)| name)
            .collect();
        let near_boundary = (k..k + run).all(|j| {
            flipped
                .iter()
                .all(|name| values[j][*name].abs() <= opts.chatter_band)
        });
        let commit = run >= opts.hysteresis
            || k + run == n
            || (k..k + run).any(|j| anchors.contains(&j))
            || !near_boundary;
        if commit {
            steps.push(TraceStep {
                labels: raw[k].clone(),
                start: k,
                end: k + run - 1,
            });
        } else {
            steps.last_mut().expect("non-empty").end = k + run - 1;
        }
        k += run;
    }
    let terminal_repeat = steps.last().is_some_and(|s| s.end > s.start);

    let mut trace = Trace {
        steps,
        terminal_repeat,
        segments: Vec::new(),
        times: traj.times.clone(),
    };
    let switches: Vec<_> = traj
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Switch)
        .collect();
    let mut start = 0;
    for (block, e) in switches.iter().enumerate() {
        trace.segments.push(Segment {
            block,
            position: e.position,
            label: e.label.clone(),
            start,
            end: e.sample,
            tail: e.sample,
            complete: true,
            first_step: trace.step_at(start),
            last_step: trace.step_at(e.sample),
        });
        start = e.sample;
    }
    let last_sample = n - 1;
    let failed = traj.events.iter().any(|e| e.kind != EventKind::Switch);
    let moved_on = traj.objective_index[start..]
        .iter()
        .any(|&p| Some(p) != switches.last().map(|e| e.position));
    let unfinished = (failed || moved_on) && start < last_sample;
    if switches.is_empty() || unfinished {
        let position = traj.objective_index[last_sample];
        trace.segments.push(Segment {
            block: switches.len(),
            position,
            label: String::new(),
            start,
            end: last_sample,
            tail: last_sample,
            complete: false,
            first_step: trace.step_at(start),
            last_step: trace.step_at(last_sample),
        });
    } else if let Some(seg) = trace.segments.last_mut() {
        // the dwell after the final switch belongs to the last objective
        seg.tail = last_sample;
        seg.last_step = trace.steps.len() - 1;
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub block: usize,
    pub step: usize,
    pub time: f64,
    pub literal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: usize,
    pub description: String,
    pub pass: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescendantReport {
    pub pass: bool,
    pub conditions: Vec<ConditionReport>,
    pub complete_blocks: usize,
    pub suffix_cycles_checked: usize,
}

impl DescendantReport {
    pub fn failed(&self) -> Vec<usize> {
        self.conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.condition)
            .collect()
    }
}

struct Checker<'a> {
    trace: &'a Trace,
    violations: Vec<Violation>,
}

impl Checker<'_> {
    /// `set` holds at every step of `seg`.
    fn throughout(&mut self, seg: &Segment, set: &LiteralSet) {
        for step in seg.first_step..=seg.last_step {
            self.at_step(seg.block, step, set);
        }
    }

    /// `set` holds in the segment's final label set.
    fn at_end(&mut self, seg: &Segment, set: &LiteralSet) {
        let step = self.trace.step_at(seg.end);
        self.at_step(seg.block, step, set);
    }

    fn at_step(&mut self, block: usize, step: usize, set: &LiteralSet) {
        let s = &self.trace.steps[step];
        for lit in set.iter() {
            if !holds(&s.labels, lit) {
                self.violations.push(Violation {
                    block,
                    step,
                    time: self.trace.times[s.start],
                    literal: lit.to_string(),
                });
            }
        }
    }

    fn finish(&mut self, condition: usize, description: &str) -> ConditionReport {
        let violations = std::mem::take(&mut self.violations);
        ConditionReport {
            condition,
            description: description.into(),
            pass: violations.is_empty(),
            violations,
        }
    }
}

/// Checks the five structural conditions relating a trace to the lasso built
/// from `spec` and `template`, with prefix length `p` and suffix length `ell`.
///
/// Goal conditions read the label set at each block's switch sample. Blocks
/// are indexed by their place in the unrolled run, so the `i`-th prefix block
/// is checked against the `i`-th goal of the template order.
pub fn check_descendant(
    trace: &Trace,
    spec: &RoboticSpec,
    template: &LassoTemplate,
    p: usize,
    ell: usize,
) -> Result<DescendantReport> {
    template.validate(spec)?;
    let complete = trace.complete_blocks();
    if complete < p + ell {
        return Err(Error::Shape(format!(
            "trace has {complete} finished objectives, need at least {} (prefix {p} + one suffix pass of {ell})",
            p + ell
        )));
    }
    let stay = spec.globe.union(&spec.act)?;
    let segs = &trace.segments;
    let mut c = Checker {
        trace,
        violations: Vec::new(),
    };
    let mut conditions = Vec::new();

    for seg in &segs[..p] {
        c.throughout(seg, &spec.globe);
    }
    conditions.push(c.finish(1, "always-literals hold throughout the prefix"));

    for (i, &j) in template.order2.iter().enumerate() {
        c.at_end(&segs[i], &spec.reach[j]);
    }
    conditions.push(c.finish(2, "each prefix block ends in its reach goal"));

    if !spec.act.is_empty() {
        c.at_end(&segs[p - 1], &spec.act);
    }
    conditions.push(c.finish(3, "the prefix ends in the persistence literals"));

    let mut cycles = 0;
    for (b, seg) in segs.iter().enumerate().skip(p) {
        if !seg.complete {
            continue;
        }
        let i = (b - p) % ell;
        if let Some(goal) = spec.rec.get(template.order3[i]) {
            c.at_end(seg, goal);
        }
        if i == ell - 1 {
            cycles += 1;
        }
    }
    conditions.push(c.finish(4, "each suffix block ends in its recurrence goal"));

    for seg in &segs[p..] {
        c.throughout(seg, &stay);
    }
    conditions.push(c.finish(
        5,
        "always- and persistence literals hold throughout the suffix",
    ));

    Ok(DescendantReport {
        pass: conditions.iter().all(|c| c.pass),
        conditions,
        complete_blocks: complete,
        suffix_cycles_checked: cycles,
    })
}

/// Prefix length implied by a spec: one block per reach clause plus one for
/// the persistence literals when present.
pub fn prefix_len(spec: &RoboticSpec) -> usize {
    spec.k() + usize::from(!spec.act.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionReport {
    pub pass: bool,
    pub descendant: DescendantReport,
    pub terminal_repeat: bool,
    /// Required when the specification has no recurrence clause: the run must settle
    /// into a repeated final label set.
    pub terminal_required: bool,
}

/// Descendant check plus the terminal-repetition requirement for specs
/// without recurrence.
pub fn check_satisfaction(
    trace: &Trace,
    spec: &RoboticSpec,
    template: &LassoTemplate,
) -> Result<SatisfactionReport> {
    let descendant = check_descendant(trace, spec, template, prefix_len(spec), spec.ell())?;
    let terminal_required = spec.rec.is_empty();
    Ok(SatisfactionReport {
        pass: descendant.pass && (!terminal_required || trace.terminal_repeat),
        descendant,
        terminal_repeat: trace.terminal_repeat,
        terminal_required,
    })
}

/// Smallest value each always-literal field takes over the run, plus the
/// persistence literals over suffix samples. Used to cross-check label-based
/// verdicts against the raw fields.
pub fn safety_margins(
    traj: &Trajectory,
    trace: &Trace,
    ws: &Workspace,
    spec: &RoboticSpec,
) -> Result<BTreeMap<String, f64>> {
    let p = prefix_len(spec);
    let suffix_start = trace.segments.get(p).map_or(usize::MAX, |s| s.start);
    let mut out = BTreeMap::new();
    for (k, x) in traj.states.iter().enumerate() {
        let z = ws.output(x)?;
        let lits = spec
            .globe
            .iter()
            .chain(spec.act.iter().filter(|_| k >= suffix_start));
        for lit in lits {
            let h = ws.literal_field(lit)?.eval(&z)?;
            let e = out.entry(lit.to_string()).or_insert(f64::INFINITY);
            *e = f64::min(*e, h);
        }
    }
    Ok(out)
}
