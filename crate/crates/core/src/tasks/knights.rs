//! Knights-and-knaves puzzles. Knights only make true statements, knaves only
//! false ones.

use serde::{Deserialize, Serialize};

use super::Verdict;

pub const MAX_CHARACTERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args")]
pub enum Claim {
    IsKnight(usize),
    IsKnave(usize),
    Not(Box<Claim>),
    And(Box<Claim>, Box<Claim>),
    Or(Box<Claim>, Box<Claim>),
    Implies(Box<Claim>, Box<Claim>),
}

impl Claim {
    /// Truth value under `assignment` (`true` = knight).
    pub fn eval(&self, assignment: &[bool]) -> bool {
        match self {
            Claim::IsKnight(i) => assignment[*i],
            Claim::IsKnave(i) => !assignment[*i],
            Claim::Not(c) => !c.eval(assignment),
            Claim::And(a, b) => a.eval(assignment) && b.eval(assignment),
            Claim::Or(a, b) => a.eval(assignment) || b.eval(assignment),
            Claim::Implies(a, b) => !a.eval(assignment) || b.eval(assignment),
        }
    }

    pub fn max_index(&self) -> usize {
        match self {
            Claim::IsKnight(i) | Claim::IsKnave(i) => *i,
            Claim::Not(c) => c.max_index(),
            Claim::And(a, b) | Claim::Or(a, b) | Claim::Implies(a, b) => a.max_index().max(b.max_index()),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Claim::IsKnight(i) => format!("{} is a knight", name(*i)),
            Claim::IsKnave(i) => format!("{} is a knave", name(*i)),
            Claim::Not(c) => format!("it is not the case that ({})", c.render()),
            Claim::And(a, b) => format!("({} and {})", a.render(), b.render()),
            Claim::Or(a, b) => format!("({} or {})", a.render(), b.render()),
            Claim::Implies(a, b) => format!("(if {} then {})", a.render(), b.render()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub speaker: usize,
    pub claim: Claim,
}

impl Statement {
    pub fn render(&self) -> String {
        format!("{} says: {}.", name(self.speaker), self.claim.render())
    }
}

pub fn name(i: usize) -> String {
    ((b'A' + i as u8) as char).to_string()
}

pub fn consistent(statements: &[Statement], assignment: &[bool]) -> bool {
    statements
        .iter()
        .all(|s| assignment[s.speaker] == s.claim.eval(assignment))
}

/// Every consistent assignment, by enumerating all `2^n` of them in
/// ascending bit order (bit `i` set = character `i` is a knight).
pub fn solve_kk(statements: &[Statement], n_characters: usize) -> Vec<Vec<bool>> {
    assert!(n_characters <= MAX_CHARACTERS, "at most {MAX_CHARACTERS} characters");
    (0u32..(1 << n_characters))
        .map(|bits| (0..n_characters).map(|i| bits >> i & 1 == 1).collect::<Vec<bool>>())
        .filter(|a| consistent(statements, a))
        .collect()
}

/// Partial assignment: `None` = not yet decided.
pub type Partial = Vec<Option<bool>>;

pub fn extendable(statements: &[Statement], partial: &[Option<bool>]) -> bool {
    solve_kk(statements, partial.len()).iter().any(|full| {
        full.iter()
            .zip(partial)
            .all(|(f, p)| p.is_none_or(|p| p == *f))
    })
}

pub fn format_partial(partial: &[Option<bool>]) -> String {
    let parts: Vec<&str> = partial
        .iter()
        .map(|p| match p {
            Some(true) => "Knight",
            Some(false) => "Knave",
            None => "?",
        })
        .collect();
    format!("[{}]", parts.join(","))
}

pub fn parse_partial(s: &str) -> Option<Partial> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    inner
        .split(',')
        .map(|t| match t.trim() {
            "Knight" => Some(Some(true)),
            "Knave" => Some(Some(false)),
            "?" => Some(None),
            _ => None,
        })
        .collect()
}

pub fn verify_kk(statements: &[Statement], assignment: &[Option<bool>]) -> Verdict {
    if assignment.iter().any(Option::is_none) {
        return Verdict::reject("assignment is incomplete");
    }
    let full: Vec<bool> = assignment.iter().map(|a| a.unwrap_or(false)).collect();
    if statements.iter().any(|s| s.speaker >= full.len() || s.claim.max_index() >= full.len()) {
        return Verdict::reject("statement refers to an unknown character");
    }
    for s in statements {
        if full[s.speaker] != s.claim.eval(&full) {
            return Verdict::reject(format!("{} contradicts the assignment", s.render()));
        }
    }
    Verdict::accept()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knave(i: usize) -> Claim {
        Claim::IsKnave(i)
    }

    #[test]
    fn self_accusation_has_no_solution() {
        let st = [Statement { speaker: 0, claim: knave(0) }];
        assert!(solve_kk(&st, 1).is_empty());
    }

    #[test]
    fn two_character_puzzle() {
        // A: "B is a knave". B: "A and B are both knaves".
        let st = [
            Statement { speaker: 0, claim: knave(1) },
            Statement {
                speaker: 1,
                claim: Claim::And(Box::new(knave(0)), Box::new(knave(1))),
            },
        ];
        let sols = solve_kk(&st, 2);
        assert_eq!(sols, vec![vec![true, false]]);
        assert!(verify_kk(&st, &[Some(true), Some(false)]).accepted);
        assert!(!verify_kk(&st, &[Some(false), Some(true)]).accepted);
    }

    #[test]
    fn no_statements_allows_everything() {
        assert_eq!(solve_kk(&[], 2).len(), 4);
    }

    #[test]
    fn partial_round_trip() {
        let p = vec![Some(true), None, Some(false)];
        assert_eq!(format_partial(&p), "[Knight,?,Knave]");
        assert_eq!(parse_partial(&format_partial(&p)).unwrap(), p);
    }
}
