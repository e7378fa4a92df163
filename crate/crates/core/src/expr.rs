//! A small arithmetic expression language.
//!
//! Every scalar function of a problem (contact Lagrangians, constraints,
//! control vector fields, cost rates) is written in this language and
//! evaluated numerically. The grammar is fixed:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := base ('^' unary)?
//! base   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! so `^` is right associative and binds tighter than unary minus
//! (`-q1^2` is `-(q1^2)`), which binds tighter than `*` and `/`.
//!
//! Variables are resolved against an explicit list at parse time. Each
//! variable node remembers its position in that list, which lets hot loops
//! evaluate through [`Expr::eval_slots`] instead of a name lookup.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

/// Variable bindings for [`Expr::eval`].
pub type Env = HashMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable '{name}' at offset {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("unknown function '{name}' at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("no binding for variable '{0}'")]
    MissingBinding(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnaryOp {
    const FUNCTIONS: [UnaryOp; 7] = [
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tan,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sqrt,
        UnaryOp::Abs,
    ];

    fn from_function(name: &str) -> Option<Self> {
        Self::FUNCTIONS.into_iter().find(|op| op.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    fn apply(self, x: f64) -> Result<f64, ExprError> {
        let y = match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tan => x.tan(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => {
                if !(x > 0.0) {
                    return Err(ExprError::Domain(format!("log of non-positive value {x}")));
                }
                x.ln()
            }
            UnaryOp::Sqrt => {
                if x < 0.0 || x.is_nan() {
                    return Err(ExprError::Domain(format!("sqrt of negative value {x}")));
                }
                x.sqrt()
            }
            UnaryOp::Abs => x.abs(),
        };
        finite(y, self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => " + ",
            BinaryOp::Sub => " - ",
            BinaryOp::Mul => " * ",
            BinaryOp::Div => " / ",
            BinaryOp::Pow => "^",
        }
    }

    fn apply(self, a: f64, b: f64) -> Result<f64, ExprError> {
        let y = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b == 0.0 {
                    return Err(ExprError::Domain("division by zero".into()));
                }
                a / b
            }
            BinaryOp::Pow => {
                if a < 0.0 && b.fract() != 0.0 {
                    return Err(ExprError::Domain(format!(
                        "negative base {a} raised to non-integer power {b}"
                    )));
                }
                if a == 0.0 && b < 0.0 {
                    return Err(ExprError::Domain("division by zero (0 to a negative power)".into()));
                }
                a.powf(b)
            }
        };
        finite(y, self.symbol().trim())
    }
}

fn finite(y: f64, op: &str) -> Result<f64, ExprError> {
    if y.is_finite() {
        Ok(y)
    } else {
        Err(ExprError::Domain(format!("non-finite result from '{op}'")))
    }
}

/// Parsed expression tree. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// `slot` is the index of `name` in the variable list the tree was
    /// resolved against.
    Var { name: String, slot: usize },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Parse `source`, accepting only identifiers listed in `allowed_vars`.
pub fn parse<S: AsRef<str>>(source: &str, allowed_vars: &[S]) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: source,
        pos: 0,
        allowed: allowed_vars,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn var(name: impl Into<String>, slot: usize) -> Self {
        Expr::Var {
            name: name.into(),
            slot,
        }
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Evaluate with variables looked up by name.
    pub fn eval(&self, env: &Env) -> Result<f64, ExprError> {
        self.eval_with(&|name, _| {
            env.get(name)
                .copied()
                .ok_or_else(|| ExprError::MissingBinding(name.to_string()))
        })
    }

    /// Evaluate with variables read from `values[slot]`.
    pub fn eval_slots(&self, values: &[f64]) -> Result<f64, ExprError> {
        self.eval_with(&|name, slot| {
            values
                .get(slot)
                .copied()
                .ok_or_else(|| ExprError::MissingBinding(name.to_string()))
        })
    }

    fn eval_with<F>(&self, lookup: &F) -> Result<f64, ExprError>
    where
        F: Fn(&str, usize) -> Result<f64, ExprError>,
    {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var { name, slot } => lookup(name, *slot),
            Expr::Unary(op, arg) => op.apply(arg.eval_with(lookup)?),
            Expr::Binary(op, a, b) => op.apply(a.eval_with(lookup)?, b.eval_with(lookup)?),
        }
    }

    /// Replace the variables named in `values` by constants.
    pub fn bind(&self, values: &Env) -> Expr {
        match self {
            Expr::Var { name, .. } if values.contains_key(name) => Expr::Const(values[name]),
            Expr::Const(_) | Expr::Var { .. } => self.clone(),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.bind(values))),
            Expr::Binary(op, a, b) => {
                Expr::Binary(*op, Box::new(a.bind(values)), Box::new(b.bind(values)))
            }
        }
    }

    /// Re-resolve every variable slot against a new variable list.
    pub fn relabel<S: AsRef<str>>(&self, vars: &[S]) -> Result<Expr, ExprError> {
        Ok(match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var { name, .. } => {
                let slot = vars
                    .iter()
                    .position(|v| v.as_ref() == name)
                    .ok_or_else(|| ExprError::MissingBinding(name.clone()))?;
                Expr::var(name.clone(), slot)
            }
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.relabel(vars)?)),
            Expr::Binary(op, a, b) => {
                Expr::Binary(*op, Box::new(a.relabel(vars)?), Box::new(b.relabel(vars)?))
            }
        })
    }

    pub fn references(&self, var: &str) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var { name, .. } => name == var,
            Expr::Unary(_, a) => a.references(var),
            Expr::Binary(_, a, b) => a.references(var) || b.references(var),
        }
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var { name, .. } => {
                out.insert(name);
            }
            Expr::Unary(_, a) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if c.is_sign_negative() => PREC_NEG,
            Expr::Const(_) | Expr::Var { .. } => PREC_ATOM,
            Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
            Expr::Unary(..) => PREC_ATOM,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => PREC_ADD,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PREC_MUL,
            Expr::Binary(BinaryOp::Pow, ..) => PREC_POW,
        }
    }
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints the minimal parenthesization that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // Debug formatting of f64 is the shortest exact round-trip form.
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var { name, .. } => f.write_str(name),
            Expr::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                write_operand(f, a, PREC_NEG)
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let (lhs, rhs) = match op {
                    BinaryOp::Add | BinaryOp::Sub => (PREC_ADD, PREC_ADD + 1),
                    BinaryOp::Mul | BinaryOp::Div => (PREC_MUL, PREC_MUL + 1),
                    BinaryOp::Pow => (PREC_ATOM, PREC_NEG),
                };
                write_operand(f, a, lhs)?;
                f.write_str(op.symbol())?;
                write_operand(f, b, rhs)
            }
        }
    }
}

struct Parser<'a, S> {
    src: &'a str,
    pos: usize,
    allowed: &'a [S],
}

impl<S: AsRef<str>> Parser<'_, S> {
    fn syntax(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.as_bytes().get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::binary(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.base()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            return Ok(Expr::binary(BinaryOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_close()?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn expect_close(&mut self) -> Result<(), ExprError> {
        if self.peek() == Some(b')') {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax("expected ')'"))
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let bytes = self.src.as_bytes();
        let start = self.pos;
        let mut end = start;
        let digits = |mut i: usize| {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            i
        };
        end = digits(end);
        let int_digits = end - start;
        let mut frac_digits = 0;
        if end < bytes.len() && bytes[end] == b'.' {
            let after = digits(end + 1);
            frac_digits = after - end - 1;
            end = after;
        }
        if int_digits + frac_digits == 0 {
            return Err(self.syntax("malformed number"));
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut exp = end + 1;
            if exp < bytes.len() && (bytes[exp] == b'+' || bytes[exp] == b'-') {
                exp += 1;
            }
            let exp_end = digits(exp);
            if exp_end > exp {
                end = exp_end;
            }
        }
        let value: f64 = self.src[start..end]
            .parse()
            .map_err(|_| self.syntax("malformed number"))?;
        self.pos = end;
        Ok(Expr::Const(value))
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let bytes = self.src.as_bytes();
        let start = self.pos;
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
            end += 1;
        }
        let name = &self.src[start..end];
        self.pos = end;
        if self.peek() == Some(b'(') {
            let op = UnaryOp::from_function(name).ok_or_else(|| ExprError::UnknownFunction {
                name: name.to_string(),
                offset: start,
            })?;
            self.pos += 1;
            let arg = self.expr()?;
            self.expect_close()?;
            return Ok(Expr::Unary(op, Box::new(arg)));
        }
        match self.allowed.iter().position(|v| v.as_ref() == name) {
            Some(slot) => Ok(Expr::var(name, slot)),
            None => Err(ExprError::UnknownVariable {
                name: name.to_string(),
                offset: start,
            }),
        }
    }
}
