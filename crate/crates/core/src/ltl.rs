//! The `LTL_robotic` fragment: literals, literal sets and the four-clause
//! specification form `G(..) & F(..)* & GF(..)* & FG(..)`.
//!
//! Concrete syntax:
//!
//! ```text
//! formula := clause ("&" clause)*        (the empty string is the empty spec)
//! clause  := "G(" conj ")" | "F(" conj ")" | "GF(" conj ")" | "FG(" conj ")"
//! conj    := lit ("&" lit)*
//! lit     := "!"* identifier              identifier over [A-Za-z0-9_]
//! ```
//!
//! At most one `G` and one `FG` clause may appear. `U` and `X` are reserved
//! (until / next) and rejected together with `|` and `->`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An atomic proposition or its negation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub name: String,
    pub negated: bool,
}

impl Literal {
    pub fn new(name: impl Into<String>, negated: bool) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Input("literal with empty proposition name".into()));
        }
        if !name.bytes().all(is_ident_byte) {
            return Err(Error::Input(format!("invalid proposition name {name:?}")));
        }
        Ok(Literal { name, negated })
    }

    pub fn positive(name: impl Into<String>) -> Result<Self> {
        Literal::new(name, false)
    }

    pub fn negative(name: impl Into<String>) -> Result<Self> {
        Literal::new(name, true)
    }

    /// The complementary literal; `!!a` is `a`.
    pub fn complement(&self) -> Literal {
        Literal {
            name: self.name.clone(),
            negated: !self.negated,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "!{}", self.name)
        } else {
            f.write_str(&self.name)
        }
    }
}

/// A conjunction of literals that never holds both `a` and `!a`.
///
/// The empty set is the trivially true conjunction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Literal>", into = "Vec<Literal>")]
pub struct LiteralSet {
    literals: BTreeSet<Literal>,
}

impl LiteralSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_literals<I: IntoIterator<Item = Literal>>(iter: I) -> Result<Self> {
        let mut set = LiteralSet::new();
        for lit in iter {
            set.insert(lit)?;
        }
        Ok(set)
    }

    /// Adds a literal, rejecting it when its complement is already present.
    pub fn insert(&mut self, lit: Literal) -> Result<()> {
        if self.literals.contains(&lit.complement()) {
            return Err(Error::Fragment(format!(
                "conjunction contains both {} and {}",
                lit.complement(),
                lit
            )));
        }
        self.literals.insert(lit);
        Ok(())
    }

    pub fn contains(&self, lit: &Literal) -> bool {
        self.literals.contains(lit)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Literal> {
        self.literals.iter()
    }

    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn union(&self, other: &LiteralSet) -> Result<LiteralSet> {
        let mut out = self.clone();
        for lit in other.iter() {
            out.insert(lit.clone())?;
        }
        Ok(out)
    }

    pub fn is_subset(&self, other: &LiteralSet) -> bool {
        self.literals.is_subset(&other.literals)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.literals.iter().map(|l| l.name.as_str())
    }
}

impl TryFrom<Vec<Literal>> for LiteralSet {
    type Error = Error;

    fn try_from(value: Vec<Literal>) -> Result<Self> {
        LiteralSet::from_literals(value)
    }
}

impl From<LiteralSet> for Vec<Literal> {
    fn from(value: LiteralSet) -> Self {
        value.literals.into_iter().collect()
    }
}

impl fmt::Display for LiteralSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.literals.is_empty() {
            return f.write_str("true");
        }
        for (i, lit) in self.literals.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{lit}")?;
        }
        Ok(())
    }
}

/// A specification decomposed into its literal sets.
///
/// `globe` is J1, `reach[j]` is J2^j, `rec[j]` is J3^j and `act` is J4.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoboticSpec {
    pub globe: LiteralSet,
    pub reach: Vec<LiteralSet>,
    pub rec: Vec<LiteralSet>,
    pub act: LiteralSet,
}

impl RoboticSpec {
    /// Number of reach clauses.
    pub fn k(&self) -> usize {
        self.reach.len()
    }

    /// Suffix length `max(|I3|, 1)`.
    pub fn ell(&self) -> usize {
        self.rec.len().max(1)
    }

    /// Every proposition name mentioned anywhere in the formula.
    pub fn propositions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let sets = std::iter::once(&self.globe)
            .chain(self.reach.iter())
            .chain(self.rec.iter())
            .chain(std::iter::once(&self.act));
        for set in sets {
            out.extend(set.names().map(str::to_owned));
        }
        out
    }
}

impl fmt::Display for RoboticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_spec(self))
    }
}

impl std::str::FromStr for RoboticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_spec(s)
    }
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    And,
    Not,
    Or,
    Implies,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'!' | b'~' => out.push((Tok::Not, start)),
            b'&' => {
                if bytes.get(i + 1) == Some(&b'&') {
                    i += 1;
                }
                out.push((Tok::And, start));
            }
            b'|' => {
                if bytes.get(i + 1) == Some(&b'|') {
                    i += 1;
                }
                out.push((Tok::Or, start));
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                i += 1;
                out.push((Tok::Implies, start));
            }
            b'<' if bytes.get(i + 1) == Some(&b'-') && bytes.get(i + 2) == Some(&b'>') => {
                i += 2;
                out.push((Tok::Implies, start));
            }
            _ if is_ident_byte(b) => {
                while i < bytes.len() && is_ident_byte(bytes[i]) {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_owned()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(Error::syntax(start, format!("unexpected character {ch:?}")));
            }
        }
        i += 1;
    }
    Ok(out)
}

/// Rejects operators outside the fragment before attempting a structural parse,
/// so `a U b` reports the until operator rather than a generic syntax error.
fn reject_foreign_operators(tokens: &[(Tok, usize)]) -> Result<()> {
    let has_ident = |word: &str| {
        tokens
            .iter()
            .any(|(t, _)| matches!(t, Tok::Ident(s) if s == word))
    };
    if has_ident("U") {
        return Err(Error::Fragment("until not in fragment".into()));
    }
    if has_ident("X") {
        return Err(Error::Fragment("next not in fragment".into()));
    }
    if tokens.iter().any(|(t, _)| *t == Tok::Or) {
        return Err(Error::Fragment("disjunction not in fragment".into()));
    }
    if tokens.iter().any(|(t, _)| *t == Tok::Implies) {
        return Err(Error::Fragment("implication not in fragment".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ClauseKind {
    Always,
    Eventually,
    Recurrence,
    Persistence,
}

fn clause_kind(word: &str) -> Option<ClauseKind> {
    match word {
        "G" => Some(ClauseKind::Always),
        "F" => Some(ClauseKind::Eventually),
        "GF" => Some(ClauseKind::Recurrence),
        "FG" => Some(ClauseKind::Persistence),
        _ => None,
    }
}

struct Parser<'a> {
    tokens: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, ahead: usize) -> Option<&'a Tok> {
        self.tokens.get(self.pos + ahead).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::syntax(self.offset(), format!("expected {what}"))),
        }
    }

    fn literal(&mut self) -> Result<Literal> {
        let mut negated = false;
        while self.peek() == Some(&Tok::Not) {
            negated = !negated;
            self.pos += 1;
        }
        match self.peek() {
            Some(Tok::Ident(name)) => {
                if clause_kind(name).is_some() && self.peek_at(1) == Some(&Tok::LParen) {
                    return Err(Error::Fragment(format!(
                        "nested temporal operator {name}(..) at byte {} not in fragment",
                        self.offset()
                    )));
                }
                self.pos += 1;
                Literal::new(name.clone(), negated)
            }
            _ => Err(Error::syntax(self.offset(), "expected proposition")),
        }
    }

    fn conjunction(&mut self) -> Result<LiteralSet> {
        let start = self.offset();
        let mut lits = vec![self.literal()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lits.push(self.literal()?);
        }
        LiteralSet::from_literals(lits).map_err(|e| match e {
            Error::Fragment(msg) => Error::Fragment(format!("{msg} (clause at byte {start})")),
            other => other,
        })
    }

    fn clause(&mut self) -> Result<(ClauseKind, LiteralSet)> {
        let at = self.offset();
        let kind = match self.peek() {
            Some(Tok::Ident(word)) => clause_kind(word).ok_or_else(|| {
                Error::syntax(at, format!("expected G, F, GF or FG, found {word:?}"))
            })?,
            _ => return Err(Error::syntax(at, "expected G, F, GF or FG")),
        };
        self.pos += 1;
        self.expect(Tok::LParen, "'('")?;
        let conj = self.conjunction()?;
        self.expect(Tok::RParen, "')'")?;
        Ok((kind, conj))
    }
}

/// Parses and validates a specification.
pub fn parse_spec(text: &str) -> Result<RoboticSpec> {
    let tokens = lex(text)?;
    reject_foreign_operators(&tokens)?;

    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        end: text.len(),
    };
    let mut spec = RoboticSpec::default();
    let mut seen_globe = false;
    let mut seen_act = false;
    if tokens.is_empty() {
        return Ok(spec);
    }
    loop {
        let at = parser.offset();
        let (kind, conj) = parser.clause()?;
        match kind {
            ClauseKind::Always => {
                if seen_globe {
                    return Err(Error::Fragment(format!("second G clause at byte {at}")));
                }
                seen_globe = true;
                spec.globe = conj;
            }
            ClauseKind::Persistence => {
                if seen_act {
                    return Err(Error::Fragment(format!("second FG clause at byte {at}")));
                }
                seen_act = true;
                spec.act = conj;
            }
            ClauseKind::Eventually => spec.reach.push(conj),
            ClauseKind::Recurrence => spec.rec.push(conj),
        }
        match parser.peek() {
            None => break,
            Some(Tok::And) => parser.pos += 1,
            Some(_) => {
                return Err(Error::syntax(
                    parser.offset(),
                    "expected '&' between clauses",
                ))
            }
        }
    }
    Ok(spec)
}

/// Parses raw bytes, reporting invalid UTF-8 as a syntax error.
pub fn parse_spec_bytes(bytes: &[u8]) -> Result<RoboticSpec> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_spec(text),
        Err(e) => Err(Error::syntax(e.valid_up_to(), "invalid UTF-8")),
    }
}

/// Canonical text form. Re-parsing the output yields an equal spec.
pub fn format_spec(spec: &RoboticSpec) -> String {
    fn conj(set: &LiteralSet) -> String {
        set.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" & ")
    }

    let mut clauses = Vec::new();
    if !spec.globe.is_empty() {
        clauses.push(format!("G({})", conj(&spec.globe)));
    }
    clauses.extend(spec.reach.iter().map(|s| format!("F({})", conj(s))));
    clauses.extend(spec.rec.iter().map(|s| format!("GF({})", conj(s))));
    if !spec.act.is_empty() {
        clauses.push(format!("FG({})", conj(&spec.act)));
    }
    clauses.join(" & ")
}

/// Human-readable J1..J4 decomposition, as printed by `ltlcbf check`.
pub fn describe(spec: &RoboticSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "J1 (always):      {{{}}}\n",
        join_set(&spec.globe)
    ));
    for (j, set) in spec.reach.iter().enumerate() {
        out.push_str(&format!(
            "J2^{} (reach):     {{{}}}\n",
            j + 1,
            join_set(set)
        ));
    }
    for (j, set) in spec.rec.iter().enumerate() {
        out.push_str(&format!(
            "J3^{} (recurrence): {{{}}}\n",
            j + 1,
            join_set(set)
        ));
    }
    out.push_str(&format!("J4 (persistence): {{{}}}\n", join_set(&spec.act)));
    out.push_str(&format!("k = {}, l = {}\n", spec.k(), spec.ell()));
    out
}

fn join_set(set: &LiteralSet) -> String {
    set.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Structured decomposition used for JSON reports.
pub fn decomposition(spec: &RoboticSpec) -> BTreeMap<&'static str, serde_json::Value> {
    let mut out = BTreeMap::new();
    out.insert("J1", serde_json::json!(spec.globe));
    out.insert("J2", serde_json::json!(spec.reach));
    out.insert("J3", serde_json::json!(spec.rec));
    out.insert("J4", serde_json::json!(spec.act));
    out.insert("k", serde_json::json!(spec.k()));
    out.insert("l", serde_json::json!(spec.ell()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CASE_STUDY: &str =
        "G(conn & !O1 & !O2 & !O3) & F(A3) & F(B3) & F(C3) & GF(A1 & B2) & GF(C1 & C2)";

    fn lit(s: &str) -> Literal {
        match s.strip_prefix('!') {
            Some(name) => Literal::negative(name).unwrap(),
            None => Literal::positive(s).unwrap(),
        }
    }

    fn set(items: &[&str]) -> LiteralSet {
        LiteralSet::from_literals(items.iter().map(|s| lit(s))).unwrap()
    }

    #[test]
    fn case_study_decomposition() {
        let spec = parse_spec(CASE_STUDY).unwrap();
        assert_eq!(spec.globe, set(&["conn", "!O1", "!O2", "!O3"]));
        assert_eq!(spec.reach, vec![set(&["A3"]), set(&["B3"]), set(&["C3"])]);
        assert_eq!(spec.rec, vec![set(&["A1", "B2"]), set(&["C1", "C2"])]);
        assert!(spec.act.is_empty());
        assert_eq!((spec.k(), spec.ell()), (3, 2));
    }

    #[test]
    fn minimal_reach() {
        let spec = parse_spec("F(A)").unwrap();
        assert!(spec.globe.is_empty());
        assert_eq!(spec.reach, vec![set(&["A"])]);
        assert!(spec.rec.is_empty());
        assert!(spec.act.is_empty());
    }

    #[test]
    fn contradiction_is_fragment_error() {
        assert!(matches!(parse_spec("G(A & !A)"), Err(Error::Fragment(_))));
    }

    #[test]
    fn repeated_reach_clauses_kept() {
        let spec = parse_spec("F(A)&F(A)").unwrap();
        assert_eq!(spec.reach, vec![set(&["A"]), set(&["A"])]);
    }

    #[test]
    fn duplicate_literals_collapse() {
        let spec = parse_spec("F(A & A & !!A)").unwrap();
        assert_eq!(spec.reach[0].len(), 1);
    }

    #[test]
    fn empty_text_is_empty_spec() {
        assert_eq!(parse_spec("  \n").unwrap(), RoboticSpec::default());
        assert_eq!(format_spec(&RoboticSpec::default()), "");
    }

    #[test]
    fn format_minimal() {
        let spec = RoboticSpec {
            reach: vec![set(&["A"])],
            ..Default::default()
        };
        assert_eq!(format_spec(&spec), "F(A)");
    }

    #[test]
    fn case_study_round_trip() {
        let spec = parse_spec(CASE_STUDY).unwrap();
        let text = format_spec(&spec);
        assert_eq!(parse_spec(&text).unwrap(), spec);
    }

    #[test]
    fn fragment_violations() {
        for (text, needle) in [
            ("X U Y", "until"),
            ("G(A) & G(B)", "second G"),
            ("FG(A) & FG(B)", "second FG"),
            ("F(A | B)", "disjunction"),
            ("F(X)", "next"),
            ("G(F(A))", "nested"),
            ("F(A -> B)", "implication"),
        ] {
            match parse_spec(text) {
                Err(Error::Fragment(msg)) => assert!(msg.contains(needle), "{text}: {msg}"),
                other => panic!("{text}: expected fragment error, got {other:?}"),
            }
        }
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        for (text, offset) in [
            ("F(A", 3),
            ("F(A) F(B)", 5),
            ("H(A)", 0),
            ("F()", 2),
            ("F(A) & ", 7),
            ("F(A$)", 3),
        ] {
            match parse_spec(text) {
                Err(Error::Syntax { offset: got, .. }) => assert_eq!(got, offset, "{text}"),
                other => panic!("{text}: expected syntax error, got {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_utf8_is_syntax_error() {
        assert!(matches!(
            parse_spec_bytes(b"F(A) & \xff"),
            Err(Error::Syntax { offset: 7, .. })
        ));
    }

    #[test]
    fn literal_sets_serialize_as_lists() {
        let s = set(&["b", "!a"]);
        let json = serde_json::to_string(&s).unwrap();
        let back: LiteralSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad: std::result::Result<LiteralSet, _> =
            serde_json::from_str(r#"[{"name":"a","negated":true},{"name":"a","negated":false}]"#);
        assert!(bad.is_err());
    }

    fn arb_literal() -> impl Strategy<Value = (String, bool)> {
        ("[a-dA-D][0-9]?", any::<bool>())
    }

    fn arb_conj() -> impl Strategy<Value = String> {
        prop::collection::vec(arb_literal(), 1..4).prop_filter_map("contradiction", |lits| {
            let mut seen = BTreeMap::new();
            for (name, neg) in &lits {
                if let Some(prev) = seen.insert(name.clone(), *neg) {
                    if prev != *neg {
                        return None;
                    }
                }
            }
            Some(
                lits.iter()
                    .map(|(n, neg)| if *neg { format!("!{n}") } else { n.clone() })
                    .collect::<Vec<_>>()
                    .join(" & "),
            )
        })
    }

    fn arb_spec_text() -> impl Strategy<Value = String> {
        (
            prop::option::of(arb_conj()),
            prop::collection::vec(arb_conj(), 0..3),
            prop::collection::vec(arb_conj(), 0..3),
            prop::option::of(arb_conj()),
        )
            .prop_map(|(g, f, gf, fg)| {
                let mut clauses = Vec::new();
                clauses.extend(f.into_iter().map(|c| format!("F({c})")));
                if let Some(c) = g {
                    clauses.push(format!("G({c})"));
                }
                clauses.extend(gf.into_iter().map(|c| format!("GF( {c} )")));
                if let Some(c) = fg {
                    clauses.push(format!("FG({c})"));
                }
                clauses.join(" && ")
            })
    }

    proptest! {
        #[test]
        fn round_trip(text in arb_spec_text()) {
            let spec = parse_spec(&text).unwrap();
            let again = parse_spec(&format_spec(&spec)).unwrap();
            prop_assert_eq!(&again, &spec);
            prop_assert_eq!(format_spec(&again), format_spec(&spec));
        }

        #[test]
        fn arbitrary_text_never_panics(text in ".{0,40}") {
            match parse_spec(&text) {
                Ok(_) | Err(Error::Syntax { .. }) | Err(Error::Fragment(_)) => {}
                Err(other) => prop_assert!(false, "unexpected error kind {other:?}"),
            }
        }
    }
}
