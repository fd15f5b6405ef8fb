//! Pre-condition expressions attached to tasks.
//!
//! Grammar (lowest to highest binding): `or`, `and`, `not`, atoms and
//! parentheses. Atoms are `completed(ref)`, `phase_completed(phase)` and
//! `responded(ref)`, where `ref` is either `task` or `phase/task`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::ids::{PhaseId, TaskId};

/// A task reference inside a condition. Unqualified references resolve in the
/// owning phase first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TaskRef {
    pub phase: Option<PhaseId>,
    pub task: TaskId,
}

impl TaskRef {
    pub fn bare(task: impl Into<TaskId>) -> Self {
        Self { phase: None, task: task.into() }
    }

    pub fn qualified(phase: impl Into<PhaseId>, task: impl Into<TaskId>) -> Self {
        Self { phase: Some(phase.into()), task: task.into() }
    }
}

impl fmt::Display for TaskRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.phase {
            Some(p) => write!(f, "{p}/{}", self.task),
            None => write!(f, "{}", self.task),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionExpr {
    Completed(TaskRef),
    PhaseCompleted(PhaseId),
    Responded(TaskRef),
    Not(Box<ConditionExpr>),
    And(Box<ConditionExpr>, Box<ConditionExpr>),
    Or(Box<ConditionExpr>, Box<ConditionExpr>),
}

impl ConditionExpr {
    pub fn negate(e: ConditionExpr) -> Self {
        Self::Not(Box::new(e))
    }

    pub fn and(a: ConditionExpr, b: ConditionExpr) -> Self {
        Self::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: ConditionExpr, b: ConditionExpr) -> Self {
        Self::Or(Box::new(a), Box::new(b))
    }

    /// Calls `f` on every atom, left to right.
    pub fn for_each_atom<'a>(&'a self, f: &mut impl FnMut(Atom<'a>)) {
        match self {
            Self::Completed(r) => f(Atom::Completed(r)),
            Self::PhaseCompleted(p) => f(Atom::PhaseCompleted(p)),
            Self::Responded(r) => f(Atom::Responded(r)),
            Self::Not(e) => e.for_each_atom(f),
            Self::And(a, b) | Self::Or(a, b) => {
                a.for_each_atom(f);
                b.for_each_atom(f);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atom<'a> {
    Completed(&'a TaskRef),
    PhaseCompleted(&'a PhaseId),
    Responded(&'a TaskRef),
}

/// Binary operators are always parenthesised so that the text form parses
/// back to the identical tree.
impl fmt::Display for ConditionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Completed(r) => write!(f, "completed({r})"),
            Self::PhaseCompleted(p) => write!(f, "phase_completed({p})"),
            Self::Responded(r) => write!(f, "responded({r})"),
            Self::Not(e) => write!(f, "not {e}"),
            Self::And(a, b) => write!(f, "({a} and {b})"),
            Self::Or(a, b) => write!(f, "({a} or {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("condition syntax error at offset {offset}: {message}")]
pub struct ConditionSyntaxError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok<'a> {
    Ident(&'a str),
    Open,
    Close,
    Slash,
}

fn is_ident_byte(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'-'
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok<'_>)>, ConditionSyntaxError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            b'/' => {
                out.push((i, Tok::Slash));
                i += 1;
            }
            c if is_ident_byte(c) => {
                let start = i;
                while i < bytes.len() && is_ident_byte(bytes[i]) {
                    i += 1;
                }
                out.push((start, Tok::Ident(&src[start..i])));
            }
            _ => {
                return Err(ConditionSyntaxError {
                    offset: i,
                    message: format!("unexpected character {:?}", src[i..].chars().next().unwrap_or('?')),
                })
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ConditionSyntaxError> {
        Err(ConditionSyntaxError { offset: self.offset(), message: message.into() })
    }

    fn expect(&mut self, tok: Tok<'a>, what: &str) -> Result<(), ConditionSyntaxError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {what}"))
        }
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if *w == kw)
    }

    fn or_expr(&mut self) -> Result<ConditionExpr, ConditionSyntaxError> {
        let mut lhs = self.and_expr()?;
        while self.keyword("or") {
            self.pos += 1;
            let rhs = self.and_expr()?;
            lhs = ConditionExpr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<ConditionExpr, ConditionSyntaxError> {
        let mut lhs = self.unary()?;
        while self.keyword("and") {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = ConditionExpr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<ConditionExpr, ConditionSyntaxError> {
        if self.keyword("not") {
            self.pos += 1;
            return Ok(ConditionExpr::negate(self.unary()?));
        }
        match self.peek() {
            Some(Tok::Open) => {
                self.pos += 1;
                let inner = self.or_expr()?;
                self.expect(Tok::Close, "')'")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                let name = *name;
                self.pos += 1;
                self.expect(Tok::Open, "'(' after atom name")?;
                let atom = match name {
                    "completed" => ConditionExpr::Completed(self.task_ref()?),
                    "responded" => ConditionExpr::Responded(self.task_ref()?),
                    "phase_completed" => ConditionExpr::PhaseCompleted(PhaseId::new(self.ident()?)),
                    other => {
                        self.pos -= 2;
                        return self.fail(format!("unknown atom {other:?}"));
                    }
                };
                self.expect(Tok::Close, "')'")?;
                Ok(atom)
            }
            _ => self.fail("expected an atom, 'not' or '('"),
        }
    }

    fn ident(&mut self) -> Result<&'a str, ConditionSyntaxError> {
        match self.peek() {
            Some(Tok::Ident(w)) if !matches!(*w, "and" | "or" | "not") => {
                let w = *w;
                self.pos += 1;
                Ok(w)
            }
            _ => self.fail("expected an identifier"),
        }
    }

    fn task_ref(&mut self) -> Result<TaskRef, ConditionSyntaxError> {
        let first = self.ident()?;
        if self.peek() == Some(&Tok::Slash) {
            self.pos += 1;
            let task = self.ident()?;
            Ok(TaskRef::qualified(first, task))
        } else {
            Ok(TaskRef::bare(first))
        }
    }
}

/// Parses the text form of a condition.
pub fn parse_condition(src: &str) -> Result<ConditionExpr, ConditionSyntaxError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len() };
    let expr = p.or_expr()?;
    if p.pos != p.toks.len() {
        return p.fail("trailing input");
    }
    Ok(expr)
}

/// Read-only view of the instance facts a condition can observe.
///
/// Each method returns `None` when the identifier is unknown to the view.
pub trait ConditionState {
    fn task_completed(&self, task: &TaskRef) -> Option<bool>;
    fn phase_completed(&self, phase: &PhaseId) -> Option<bool>;
    fn task_responded(&self, task: &TaskRef) -> Option<bool>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("condition references unknown identifier {0}")]
pub struct UnknownIdentifier(pub String);

/// Evaluates `expr` against `state`. Pure; both operands of `and`/`or` are
/// always resolved so unknown identifiers surface regardless of short-circuit.
pub fn evaluate_condition(expr: &ConditionExpr, state: &impl ConditionState) -> Result<bool, UnknownIdentifier> {
    Ok(match expr {
        ConditionExpr::Completed(r) => state.task_completed(r).ok_or_else(|| UnknownIdentifier(format!("{r}")))?,
        ConditionExpr::PhaseCompleted(p) => {
            state.phase_completed(p).ok_or_else(|| UnknownIdentifier(format!("{p}")))?
        }
        ConditionExpr::Responded(r) => state.task_responded(r).ok_or_else(|| UnknownIdentifier(format!("{r}")))?,
        ConditionExpr::Not(e) => !evaluate_condition(e, state)?,
        ConditionExpr::And(a, b) => {
            let (a, b) = (evaluate_condition(a, state)?, evaluate_condition(b, state)?);
            a && b
        }
        ConditionExpr::Or(a, b) => {
            let (a, b) = (evaluate_condition(a, state)?, evaluate_condition(b, state)?);
            a || b
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    /// Atom truth values keyed by display form.
    struct Table(BTreeMap<String, bool>);

    impl ConditionState for Table {
        fn task_completed(&self, t: &TaskRef) -> Option<bool> {
            self.0.get(&format!("completed({t})")).copied()
        }
        fn phase_completed(&self, p: &PhaseId) -> Option<bool> {
            self.0.get(&format!("phase_completed({p})")).copied()
        }
        fn task_responded(&self, t: &TaskRef) -> Option<bool> {
            self.0.get(&format!("responded({t})")).copied()
        }
    }

    fn atoms() -> Vec<ConditionExpr> {
        vec![
            ConditionExpr::Completed(TaskRef::bare("a")),
            ConditionExpr::Completed(TaskRef::qualified("p1", "b")),
            ConditionExpr::PhaseCompleted(PhaseId::new("p2")),
            ConditionExpr::Responded(TaskRef::bare("c")),
        ]
    }

    fn arb_expr() -> impl Strategy<Value = ConditionExpr> {
        let leaf = (0usize..4).prop_map(|i| atoms()[i].clone());
        leaf.prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(ConditionExpr::negate),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| ConditionExpr::and(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| ConditionExpr::or(a, b)),
            ]
        })
    }

    /// Brute-force oracle: substitute atom truth values into the text form and
    /// fold it with a stack machine, never touching `evaluate_condition`.
    fn oracle(expr: &ConditionExpr, assignment: &[bool; 4]) -> bool {
        let mut text = expr.to_string();
        for (i, atom) in atoms().iter().enumerate() {
            text = text.replace(&atom.to_string(), if assignment[i] { "T" } else { "F" });
        }
        let text = text.replace(" and ", "&").replace(" or ", "|").replace("not ", "!");
        fn value(chars: &[char], pos: &mut usize) -> bool {
            match chars[*pos] {
                'T' => {
                    *pos += 1;
                    true
                }
                'F' => {
                    *pos += 1;
                    false
                }
                '!' => {
                    *pos += 1;
                    !value(chars, pos)
                }
                '(' => {
                    *pos += 1;
                    let a = value(chars, pos);
                    let op = chars[*pos];
                    *pos += 1;
                    let b = value(chars, pos);
                    assert_eq!(chars[*pos], ')');
                    *pos += 1;
                    if op == '&' {
                        a && b
                    } else {
                        a || b
                    }
                }
                c => panic!("unexpected {c}"),
            }
        }
        let chars: Vec<char> = text.chars().collect();
        let mut pos = 0;
        let v = value(&chars, &mut pos);
        assert_eq!(pos, chars.len());
        v
    }

    fn table(assignment: &[bool; 4]) -> Table {
        Table(atoms().iter().zip(assignment).map(|(a, v)| (a.to_string(), *v)).collect())
    }

    #[test]
    fn parses_precedence_and_qualification() {
        let e = parse_condition("completed(a) or not completed(p1/b) and phase_completed(p2)").unwrap();
        assert_eq!(
            e,
            ConditionExpr::or(
                ConditionExpr::Completed(TaskRef::bare("a")),
                ConditionExpr::and(
                    ConditionExpr::negate(ConditionExpr::Completed(TaskRef::qualified("p1", "b"))),
                    ConditionExpr::PhaseCompleted(PhaseId::new("p2")),
                ),
            )
        );
        assert_eq!(parse_condition("a and b and c").unwrap_err().offset, 2, "bare identifiers are not atoms");
    }

    #[test]
    fn rejects_malformed_text() {
        for bad in [
            "",
            "completed(a",
            "completed()",
            "(completed(a)",
            "completed(a) and",
            "done(a)",
            "completed(a) completed(b)",
            "completed(a/b/c)",
            "completed(a) % b",
        ] {
            assert!(parse_condition(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn unknown_identifier_is_reported() {
        let t = table(&[true; 4]);
        let e = parse_condition("completed(a) or completed(zzz)").unwrap();
        assert_eq!(evaluate_condition(&e, &t), Err(UnknownIdentifier("zzz".into())));
    }

    proptest! {
        #[test]
        fn evaluation_matches_truth_table(expr in arb_expr()) {
            for bits in 0u8..16 {
                let assignment = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, bits & 8 != 0];
                prop_assert_eq!(evaluate_condition(&expr, &table(&assignment)).unwrap(), oracle(&expr, &assignment));
            }
        }

        #[test]
        fn text_form_round_trips(expr in arb_expr()) {
            prop_assert_eq!(parse_condition(&expr.to_string()).unwrap(), expr);
        }
    }
}
