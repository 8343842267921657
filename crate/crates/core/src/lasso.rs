//! Compiles a [`RoboticSpec`] into a lasso of constrained reachability
//! objectives: a finite prefix visited once, then a suffix repeated forever.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ltl::{LiteralSet, RoboticSpec};

/// Visiting order for the reach and recurrence clauses. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LassoTemplate {
    pub order2: Vec<usize>,
    pub order3: Vec<usize>,
}

impl LassoTemplate {
    /// Checks that both orders are permutations of the specification's index sets.
    pub fn validate(&self, spec: &RoboticSpec) -> Result<()> {
        check_permutation("order2", &self.order2, spec.k())?;
        check_permutation("order3", &self.order3, spec.ell())
    }
}

fn check_permutation(name: &str, order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::Template(format!(
            "{name} has {} entries, expected {n}",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n {
            return Err(Error::Template(format!(
                "{name} index {} out of range 1..={n}",
                i + 1
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Template(format!("{name} repeats index {}", i + 1)));
        }
    }
    Ok(())
}

/// Identity visiting orders.
pub fn default_template(spec: &RoboticSpec) -> LassoTemplate {
    LassoTemplate {
        order2: (0..spec.k()).collect(),
        order3: (0..spec.ell()).collect(),
    }
}

/// Reach `goal` while staying in `safety`. An empty goal is the constant-true
/// goal; an empty safety set constrains nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachabilityObjective {
    pub label: String,
    pub safety: LiteralSet,
    pub goal: LiteralSet,
}

impl fmt::Display for ReachabilityObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(safety: {}, goal: {})",
            self.label, self.safety, self.goal
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LassoSequence {
    pub prefix: Vec<ReachabilityObjective>,
    pub suffix: Vec<ReachabilityObjective>,
    /// Safety literals that could not be shown to hold on entry to an objective.
    pub warnings: Vec<String>,
}

impl LassoSequence {
    pub fn p(&self) -> usize {
        self.prefix.len()
    }

    pub fn ell(&self) -> usize {
        self.suffix.len()
    }

    /// Objective at lasso position `pos` in `0..p + ell`.
    pub fn objective(&self, pos: usize) -> &ReachabilityObjective {
        if pos < self.p() {
            &self.prefix[pos]
        } else {
            &self.suffix[pos - self.p()]
        }
    }

    /// Lasso position of the `block`-th objective in the unrolled execution.
    pub fn position(&self, block: usize) -> usize {
        if block < self.p() {
            block
        } else {
            self.p() + (block - self.p()) % self.ell()
        }
    }

    pub fn objectives(&self) -> impl Iterator<Item = &ReachabilityObjective> {
        self.prefix.iter().chain(&self.suffix)
    }

    /// Human-readable listing of the lasso and its warnings.
    pub fn report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("prefix (p = {}):\n", self.p()));
        for obj in &self.prefix {
            out.push_str(&format!("  {obj}\n"));
        }
        out.push_str(&format!("suffix (l = {}, repeated):\n", self.ell()));
        for obj in &self.suffix {
            out.push_str(&format!("  {obj}\n"));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

fn objective(label: usize, safety: &LiteralSet, goal: &LiteralSet) -> ReachabilityObjective {
    ReachabilityObjective {
        label: format!("R{label}"),
        safety: safety.clone(),
        goal: goal.clone(),
    }
}

/// Builds the lasso for `spec` visiting clauses in `template` order.
pub fn compile(spec: &RoboticSpec, template: &LassoTemplate) -> Result<LassoSequence> {
    template.validate(spec)?;
    let empty = LiteralSet::new();
    let rec_goal = |i: usize| spec.rec.get(template.order3[i]).unwrap_or(&empty);

    let mut prefix = Vec::new();
    let mut suffix = Vec::new();
    if !spec.act.is_empty() {
        let stay = spec.globe.union(&spec.act).map_err(|e| match e {
            Error::Fragment(msg) => Error::Fragment(format!("G and FG clauses contradict: {msg}")),
            other => other,
        })?;
        for (i, &j) in template.order2.iter().enumerate() {
            prefix.push(objective(i + 1, &spec.globe, &spec.reach[j]));
        }
        prefix.push(objective(spec.k() + 1, &spec.globe, &spec.act));
        for i in 0..spec.ell() {
            suffix.push(objective(spec.k() + 2 + i, &stay, rec_goal(i)));
        }
    } else {
        for (i, &j) in template.order2.iter().enumerate() {
            prefix.push(objective(i + 1, &spec.globe, &spec.reach[j]));
        }
        for i in 0..spec.ell() {
            suffix.push(objective(spec.k() + 1 + i, &spec.globe, rec_goal(i)));
        }
    }

    let mut lasso = LassoSequence {
        prefix,
        suffix,
        warnings: Vec::new(),
    };
    lasso.warnings = compatibility_warnings(&lasso);
    for w in &lasso.warnings {
        log::warn!("{w}");
    }
    Ok(lasso)
}

/// Checks each hand-off between consecutive objectives, including the wrap
/// from the last suffix objective back to the first. Warns when a goal
/// literal contradicts the next safety set (the goal region lies outside it)
/// and when a next safety literal appears in neither the previous goal nor
/// the previous safety set.
pub fn compatibility_warnings(lasso: &LassoSequence) -> Vec<String> {
    let all: Vec<_> = lasso.objectives().collect();
    let mut pairs: Vec<(usize, usize)> = (1..all.len()).map(|j| (j - 1, j)).collect();
    pairs.push((all.len() - 1, lasso.p()));
    let mut warnings = Vec::new();
    for (from, to) in pairs {
        let (prev, next) = (all[from], all[to]);
        for lit in prev.goal.iter() {
            if next.safety.contains(&lit.complement()) {
                warnings.push(format!(
                    "goal {} of {} lies outside the safety set of {}",
                    lit, prev.label, next.label
                ));
            }
        }
        for lit in next.safety.iter() {
            if !prev.goal.contains(lit) && !prev.safety.contains(lit) {
                warnings.push(format!(
                    "cannot show {} holds when {} ends and {} begins",
                    lit, prev.label, next.label
                ));
            }
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::parse_spec;

    const CASE_STUDY: &str =
        "F(A3) & F(B3) & F(C3) & GF(A1 & B2) & GF(C1 & C2) & G(conn & !O1 & !O2 & !O3)";

    fn set(text: &str) -> LiteralSet {
        if text.is_empty() {
            return LiteralSet::new();
        }
        parse_spec(&format!("G({text})")).unwrap().globe
    }

    fn compiled(text: &str) -> LassoSequence {
        let spec = parse_spec(text).unwrap();
        compile(&spec, &default_template(&spec)).unwrap()
    }

    #[test]
    fn default_orders() {
        let spec = parse_spec(CASE_STUDY).unwrap();
        let t = default_template(&spec);
        assert_eq!((t.order2, t.order3), (vec![0, 1, 2], vec![0, 1]));
        let t = default_template(&parse_spec("G(a)").unwrap());
        assert_eq!((t.order2, t.order3), (vec![], vec![0]));
    }

    #[test]
    fn case_study() {
        let lasso = compiled(CASE_STUDY);
        let safety = set("conn & !O1 & !O2 & !O3");
        let goals: Vec<_> = lasso.objectives().map(|o| o.goal.clone()).collect();
        assert_eq!(
            goals,
            vec![
                set("A3"),
                set("B3"),
                set("C3"),
                set("A1 & B2"),
                set("C1 & C2")
            ]
        );
        assert!(lasso.objectives().all(|o| o.safety == safety));
        let labels: Vec<_> = lasso.objectives().map(|o| o.label.as_str()).collect();
        assert_eq!(labels, ["R1", "R2", "R3", "R4", "R5"]);
        assert_eq!((lasso.p(), lasso.ell()), (3, 2));
        assert!(lasso.warnings.is_empty());
    }

    #[test]
    fn reach_then_dwell() {
        let lasso = compiled("F(A) & F(B) & G(!C)");
        assert_eq!(lasso.p(), 2);
        assert_eq!(lasso.prefix[0].goal, set("A"));
        assert_eq!(lasso.prefix[1].goal, set("B"));
        assert_eq!(lasso.suffix.len(), 1);
        assert!(lasso.suffix[0].goal.is_empty());
        assert!(lasso.objectives().all(|o| o.safety == set("!C")));
    }

    #[test]
    fn recurrence_only() {
        let lasso = compiled("GF(A)");
        assert!(lasso.prefix.is_empty());
        assert_eq!(lasso.suffix[0].goal, set("A"));
        assert!(lasso.suffix[0].safety.is_empty());
    }

    #[test]
    fn persistence_only() {
        let lasso = compiled("FG(D)");
        assert_eq!(lasso.p(), 1);
        assert_eq!(
            (lasso.prefix[0].safety.clone(), lasso.prefix[0].goal.clone()),
            (set(""), set("D"))
        );
        assert_eq!(
            (lasso.suffix[0].safety.clone(), lasso.suffix[0].goal.clone()),
            (set("D"), set(""))
        );
        assert!(lasso.warnings.is_empty());
    }

    #[test]
    fn persistence_with_safety() {
        let lasso = compiled("F(A) & GF(B) & G(!O) & FG(D)");
        assert_eq!(lasso.p(), 2);
        assert_eq!(lasso.prefix[1].goal, set("D"));
        assert_eq!(lasso.suffix[0].safety, set("!O & D"));
        assert_eq!(lasso.suffix[0].goal, set("B"));
        assert!(lasso.warnings.is_empty());
    }

    #[test]
    fn goal_outside_next_safety_warns() {
        let lasso = compiled("F(A) & G(!A)");
        assert_eq!(lasso.warnings.len(), 1, "{:?}", lasso.warnings);
        assert!(lasso.warnings[0].contains("goal A of R1"));

        let lasso = compiled("FG(D) & GF(!D)");
        assert!(lasso
            .warnings
            .iter()
            .any(|w| w.contains("goal !D of R2 lies outside the safety set of R2")));
    }

    #[test]
    fn contradictory_persistence() {
        let spec = parse_spec("G(A) & FG(!A)").unwrap();
        assert!(matches!(
            compile(&spec, &default_template(&spec)),
            Err(Error::Fragment(_))
        ));
    }

    #[test]
    fn template_order_respected() {
        let spec = parse_spec("F(A) & F(B) & GF(C) & GF(D)").unwrap();
        let t = LassoTemplate {
            order2: vec![1, 0],
            order3: vec![1, 0],
        };
        let lasso = compile(&spec, &t).unwrap();
        let goals: Vec<_> = lasso.objectives().map(|o| o.goal.clone()).collect();
        assert_eq!(goals, vec![set("B"), set("A"), set("D"), set("C")]);
    }

    #[test]
    fn bad_templates() {
        let spec = parse_spec("F(A) & F(B) & GF(C)").unwrap();
        for (o2, o3) in [
            (vec![0], vec![0]),
            (vec![0, 0], vec![0]),
            (vec![0, 2], vec![0]),
            (vec![0, 1], vec![]),
        ] {
            let t = LassoTemplate {
                order2: o2,
                order3: o3,
            };
            assert!(matches!(compile(&spec, &t), Err(Error::Template(_))));
        }
    }

    #[test]
    fn unrolled_positions() {
        let lasso = compiled(CASE_STUDY);
        let pos: Vec<_> = (0..9).map(|b| lasso.position(b)).collect();
        assert_eq!(pos, vec![0, 1, 2, 3, 4, 3, 4, 3, 4]);
    }

    #[test]
    fn deterministic() {
        assert_eq!(compiled(CASE_STUDY), compiled(CASE_STUDY));
    }

    #[test]
    fn persistence_literal_invariants() {
        let spec = parse_spec("F(A) & F(B) & GF(C) & G(!O & !P) & FG(D & !E)").unwrap();
        let lasso = compile(&spec, &default_template(&spec)).unwrap();
        assert_eq!(lasso.p(), spec.k() + 1);
        assert_eq!(lasso.ell(), spec.ell());
        for o in lasso.objectives() {
            assert!(spec.globe.is_subset(&o.safety));
        }
        for o in &lasso.suffix {
            assert!(spec.act.is_subset(&o.safety));
        }
        assert!(spec.act.is_subset(&lasso.prefix[lasso.p() - 1].goal));
    }
}
