//! Game of 24: exact-rational verifier, exhaustive solver and move enumeration.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub};

use super::Verdict;

pub type Value = Ratio<i64>;

pub const TARGET: i64 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        match token {
            "+" => Some(Op::Add),
            "-" | "−" => Some(Op::Sub),
            "*" | "×" | "x" => Some(Op::Mul),
            "/" | "÷" => Some(Op::Div),
            _ => None,
        }
    }

    /// `None` on division by zero.
    pub fn apply(self, a: Value, b: Value) -> Option<Value> {
        match self {
            Op::Add => a.checked_add(&b),
            Op::Sub => a.checked_sub(&b),
            Op::Mul => a.checked_mul(&b),
            Op::Div => {
                if b == Value::from_integer(0) {
                    None
                } else {
                    a.checked_div(&b)
                }
            }
        }
    }
}

/// One arithmetic step `lhs op rhs = result`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Move {
    pub lhs: Value,
    pub op: Op,
    pub rhs: Value,
    pub result: Value,
    /// Remaining values: untouched inputs in original order, then the result.
    pub output: Vec<Value>,
}

impl Move {
    pub fn plan(&self) -> String {
        format!(
            "{} {} {} = {}",
            format_value(self.lhs),
            self.op.symbol(),
            format_value(self.rhs),
            format_value(self.result)
        )
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.plan())
    }
}

/// Integers print bare, terminating fractions as decimals, others as `p/q`.
pub fn format_value(v: Value) -> String {
    if v.is_integer() {
        return v.to_integer().to_string();
    }
    let mut den = *v.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{}/{}", v.numer(), v.denom());
    }
    let digits = twos.max(fives);
    let scale = 10i64.pow(digits);
    let scaled = (v * Value::from_integer(scale)).to_integer();
    let sign = if scaled < 0 { "-" } else { "" };
    let abs = scaled.abs();
    let int_part = abs / scale;
    let frac = abs % scale;
    format!("{sign}{int_part}.{frac:0width$}", width = digits as usize)
}

pub fn parse_value(token: &str) -> Option<Value> {
    let token = token.trim();
    if token.is_empty() {
        return None;
    }
    if let Some((n, d)) = token.split_once('/') {
        let n: i64 = n.parse().ok()?;
        let d: i64 = d.parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(Value::new(n, d));
    }
    if let Some((int_part, frac_part)) = token.split_once('.') {
        let negative = int_part.starts_with('-');
        let int_digits = int_part.strip_prefix('-').unwrap_or(int_part);
        let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
        if frac_part.is_empty() || frac_part.len() > 12 || !all_digits(frac_part) || !all_digits(int_digits) {
            return None;
        }
        let int_abs: i64 = if int_digits.is_empty() { 0 } else { int_digits.parse().ok()? };
        let scale = 10i64.checked_pow(frac_part.len() as u32)?;
        let frac: i64 = frac_part.parse().ok()?;
        let mag = int_abs.checked_mul(scale)?.checked_add(frac)?;
        let v = Value::new(mag, scale);
        return Some(if negative { -v } else { v });
    }
    token.parse::<i64>().ok().map(Value::from_integer)
}

pub fn format_values(values: &[Value]) -> String {
    let parts: Vec<String> = values.iter().map(|&v| format_value(v)).collect();
    format!("[{}]", parts.join(","))
}

/// Parses a bracketed list such as `[9,3,12]`.
pub fn parse_values(list: &str) -> Option<Vec<Value>> {
    let inner = list.trim().strip_prefix('[')?.strip_suffix(']')?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    inner.split(',').map(parse_value).collect()
}

pub fn integers(values: &[i64]) -> Vec<Value> {
    values.iter().map(|&v| Value::from_integer(v)).collect()
}

/// Every distinct-outcome move from `state`, in a fixed canonical order.
pub fn moves(state: &[Value]) -> Vec<Move> {
    let mut out: Vec<Move> = Vec::new();
    let mut seen: Vec<Vec<Value>> = Vec::new();
    for i in 0..state.len() {
        for j in (i + 1)..state.len() {
            let (a, b) = (state[i], state[j]);
            let candidates = [
                (a, Op::Add, b),
                (a, Op::Sub, b),
                (b, Op::Sub, a),
                (a, Op::Mul, b),
                (a, Op::Div, b),
                (b, Op::Div, a),
            ];
            for (lhs, op, rhs) in candidates {
                let Some(result) = op.apply(lhs, rhs) else { continue };
                let mut output: Vec<Value> = state
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i && k != j)
                    .map(|(_, &v)| v)
                    .collect();
                output.push(result);
                let mut key = output.clone();
                key.sort();
                if seen.contains(&key) {
                    continue;
                }
                seen.push(key);
                out.push(Move {
                    lhs,
                    op,
                    rhs,
                    result,
                    output,
                });
            }
        }
    }
    out
}

pub fn is_solved(state: &[Value]) -> bool {
    state.len() == 1 && state[0] == Value::from_integer(TARGET)
}

fn memo() -> &'static Mutex<HashMap<Vec<Value>, bool>> {
    static MEMO: OnceLock<Mutex<HashMap<Vec<Value>, bool>>> = OnceLock::new();
    MEMO.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Whether some sequence of moves reaches exactly `[24]`.
pub fn solvable(state: &[Value]) -> bool {
    if state.is_empty() {
        return false;
    }
    if state.len() == 1 {
        return is_solved(state);
    }
    let mut key = state.to_vec();
    key.sort();
    if let Some(&hit) = memo().lock().expect("solver memo poisoned").get(&key) {
        return hit;
    }
    let result = moves(state).iter().any(|m| solvable(&m.output));
    memo().lock().expect("solver memo poisoned").insert(key, result);
    result
}

/// Depth-first search for a winning line; returns the plan lines.
pub fn solve_from(state: &[Value]) -> Option<Vec<String>> {
    if is_solved(state) {
        return Some(Vec::new());
    }
    if state.len() < 2 || !solvable(state) {
        return None;
    }
    for m in moves(state) {
        if solvable(&m.output) {
            let mut rest = solve_from(&m.output)?;
            rest.insert(0, m.plan());
            return Some(rest);
        }
    }
    None
}

pub fn solve_24(numbers: &[i64]) -> Option<Vec<String>> {
    solve_from(&integers(numbers))
}

/// Pulls the `a op b = c` part out of a thought or plan line.
fn extract_plan(line: &str) -> &str {
    let s = match line.find("Plan:") {
        Some(i) => &line[i + "Plan:".len()..],
        None => line,
    };
    match s.find("Output:") {
        Some(i) => &s[..i],
        None => s,
    }
    .trim()
}

/// Checks a sequence of plan lines against the starting numbers with exact
/// arithmetic. All numbers must be consumed and the last value must be 24.
pub fn verify_24<S: AsRef<str>>(numbers: &[i64], trace: &[S]) -> Verdict {
    let mut pool = integers(numbers);
    if trace.is_empty() {
        return Verdict::reject("no arithmetic steps given");
    }
    for (idx, line) in trace.iter().enumerate() {
        let plan = extract_plan(line.as_ref());
        let tokens: Vec<&str> = plan.split_whitespace().collect();
        let parsed = match tokens.as_slice() {
            [a, op, b, "=", c] => parse_value(a)
                .zip(Op::parse(op))
                .zip(parse_value(b))
                .zip(parse_value(c))
                .map(|(((a, op), b), c)| (a, op, b, c)),
            _ => None,
        };
        let Some((a, op, b, c)) = parsed else {
            return Verdict::reject(format!("line {idx}: cannot parse '{plan}'"));
        };
        match op.apply(a, b) {
            Some(v) if v == c => {}
            _ => return Verdict::reject(format!("line {idx}: '{plan}' is not exact")),
        }
        for operand in [a, b] {
            match pool.iter().position(|&p| p == operand) {
                Some(pos) => {
                    pool.remove(pos);
                }
                None => {
                    return Verdict::reject(format!(
                        "line {idx}: operand {} is not available",
                        format_value(operand)
                    ))
                }
            }
        }
        pool.push(c);
    }
    if is_solved(&pool) {
        Verdict::accept()
    } else {
        Verdict::reject(format!("final values {} are not [24]", format_values(&pool)))
    }
}
