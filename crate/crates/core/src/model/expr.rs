//! Scalar expressions `V(t, x1..xn)` for potentials and initial data.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-' unary | atom
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `t`, `x1`..`x9` and the functions `sin cos exp tanh sqrt abs`.
//! Note that unary minus binds tighter than `^`, so `-x1^2` is `(-x1)^2`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    /// Zero-based spatial coordinate; `X(0)` prints as `x1`.
    X(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Sqrt,
    Abs,
    // Internal nodes created by differentiation; not part of the input grammar.
    Ln,
    Sign,
    /// `1 / (2 sqrt(u))`, undefined at `u <= 0`.
    HalfInvSqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Ln => "ln",
            Func::Sign => "sign",
            Func::HalfInvSqrt => "halfinvsqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    Expr::Bin(op, Box::new(a), Box::new(b))
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

// Constructors with constant folding and the usual 0/1 identities, so that
// derivative trees stay small.
fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x + y),
        (Expr::Num(x), _) if *x == 0.0 => b,
        (_, Expr::Num(y)) if *y == 0.0 => a,
        _ => bin(BinOp::Add, a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x - y),
        (_, Expr::Num(y)) if *y == 0.0 => a,
        (Expr::Num(x), _) if *x == 0.0 => neg(b),
        _ => bin(BinOp::Sub, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x * y),
        (Expr::Num(x), _) | (_, Expr::Num(x)) if *x == 0.0 => num(0.0),
        (Expr::Num(x), _) if *x == 1.0 => b,
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => bin(BinOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) if *x == 0.0 => num(0.0),
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => bin(BinOp::Div, a, b),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => num(-x),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

impl Expr {
    /// Parses an expression from source text.
    pub fn parse(source: &str) -> Result<Expr> {
        let mut p = Parser::new(source);
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(Error::Syntax {
                offset: p.pos,
                message: format!("unexpected `{}`", p.src[p.pos] as char),
            });
        }
        Ok(e)
    }

    /// Largest zero-based spatial index referenced, if any.
    pub fn max_x_index(&self) -> Option<usize> {
        match self {
            Expr::Num(_) | Expr::Var(Var::T) => None,
            Expr::Var(Var::X(i)) => Some(*i),
            Expr::Neg(a) | Expr::Call(_, a) => a.max_x_index(),
            Expr::Bin(_, a, b) => match (a.max_x_index(), b.max_x_index()) {
                (Some(i), Some(j)) => Some(i.max(j)),
                (i, j) => i.or(j),
            },
        }
    }

    pub fn depends_on_t(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(Var::X(_)) => false,
            Expr::Var(Var::T) => true,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on_t(),
            Expr::Bin(_, a, b) => a.depends_on_t() || b.depends_on_t(),
        }
    }

    /// Evaluates at time `t` and position `x`. Points where a derivative node of
    /// `abs`/`sqrt` is undefined yield [`Error::NonSmooth`]; any other
    /// non-finite intermediate yields [`Error::Domain`].
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        let v = self.eval_raw(t, x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("expression evaluated to {v}")))
        }
    }

    fn eval_raw(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::X(i)) => *x.get(*i).ok_or(Error::VariableOutOfRange {
                index: i + 1,
                dim: x.len(),
            })?,
            Expr::Neg(a) => -a.eval_raw(t, x)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval_raw(t, x)?;
                let b = b.eval_raw(t, x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
            Expr::Call(f, a) => {
                let a = a.eval_raw(t, x)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Ln => a.ln(),
                    Func::Sign => {
                        if a == 0.0 {
                            return Err(Error::NonSmooth("abs at 0"));
                        }
                        a.signum()
                    }
                    Func::HalfInvSqrt => {
                        if a <= 0.0 {
                            return Err(Error::NonSmooth("sqrt at 0"));
                        }
                        0.5 / a.sqrt()
                    }
                }
            }
        })
    }

    /// Symbolic partial derivative.
    pub fn derivative(&self, wrt: Var) -> Expr {
        match self {
            Expr::Num(_) => num(0.0),
            Expr::Var(v) => num(if *v == wrt { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.derivative(wrt)),
            Expr::Bin(op, a, b) => {
                let da = a.derivative(wrt);
                let db = b.derivative(wrt);
                let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, b.clone()), mul(a, db)),
                    BinOp::Div => div(sub(mul(da, b.clone()), mul(a, db)), bin(BinOp::Pow, b, num(2.0))),
                    BinOp::Pow => match b {
                        Expr::Num(c) => mul(mul(num(c), pow_expr(a, num(c - 1.0))), da),
                        _ => {
                            // d(a^b) = a^b (b' ln a + b a'/a)
                            let whole = bin(BinOp::Pow, a.clone(), b.clone());
                            let term = add(mul(db, call(Func::Ln, a.clone())), div(mul(b, da), a));
                            mul(whole, term)
                        }
                    },
                }
            }
            Expr::Call(f, a) => {
                let da = a.derivative(wrt);
                if da == num(0.0) {
                    return num(0.0);
                }
                let a = a.as_ref().clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, a),
                    Func::Cos => neg(call(Func::Sin, a)),
                    Func::Exp => call(Func::Exp, a),
                    Func::Tanh => sub(num(1.0), bin(BinOp::Pow, call(Func::Tanh, a), num(2.0))),
                    Func::Sqrt => call(Func::HalfInvSqrt, a),
                    Func::Abs => call(Func::Sign, a),
                    Func::Ln => div(num(1.0), a),
                    // Piecewise constant away from the singular point.
                    Func::Sign => return num(0.0),
                    // d/du (1/2) u^{-1/2} = -(1/4) u^{-3/2}
                    Func::HalfInvSqrt => mul(num(-0.25), pow_expr(a, num(-1.5))),
                };
                mul(outer, da)
            }
        }
    }
}

fn pow_expr(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Num(c)) if *c == 1.0 => a,
        (_, Expr::Num(c)) if *c == 0.0 => num(1.0),
        _ => bin(BinOp::Pow, a, b),
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b == 2.0 {
        a * a
    } else if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized form that parses back to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a}{sym}{b})")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(s: &'a str) -> Self {
        Parser {
            src: s.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.factor()?;
            return Ok(bin(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        let start = {
            self.skip_ws();
            self.pos
        };
        match self.src.get(self.pos).copied() {
            None => self.syntax(start, "unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.syntax(self.pos, "expected `)`");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(start),
            Some(c) if c.is_ascii_alphabetic() => self.ident(start),
            Some(c) => self.syntax(start, format!("unexpected `{}`", c as char)),
        }
    }

    fn number(&mut self, start: usize) -> Result<Expr> {
        let s = self.src;
        let mut i = start;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        if i < s.len() && s[i] == b'.' {
            i += 1;
            while i < s.len() && s[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            let digits = j;
            while j < s.len() && s[j].is_ascii_digit() {
                j += 1;
            }
            if j == digits {
                return self.syntax(j, "malformed exponent");
            }
            i = j;
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii");
        let value: f64 = text
            .parse()
            .or_else(|_| self.syntax(start, format!("malformed number `{text}`")))?;
        if !value.is_finite() {
            return self.syntax(start, format!("number `{text}` is out of range"));
        }
        self.pos = i;
        Ok(Expr::Num(value))
    }

    fn ident(&mut self, start: usize) -> Result<Expr> {
        let s = self.src;
        let mut i = start;
        while i < s.len() && s[i].is_ascii_alphanumeric() {
            i += 1;
        }
        let name = std::str::from_utf8(&s[start..i]).expect("ascii").to_string();
        self.pos = i;
        let called = self.peek() == Some(b'(');

        if let Some(func) = Func::from_name(&name) {
            if !called {
                return Err(Error::Arity {
                    name,
                    offset: start,
                    expected: 1,
                    found: 0,
                });
            }
            self.pos += 1;
            if self.peek() == Some(b')') {
                return Err(Error::Arity {
                    name,
                    offset: start,
                    expected: 1,
                    found: 0,
                });
            }
            let arg = self.expr()?;
            let mut found = 1;
            while self.peek() == Some(b',') {
                self.pos += 1;
                self.expr()?;
                found += 1;
            }
            if found != 1 {
                return Err(Error::Arity {
                    name,
                    offset: start,
                    expected: 1,
                    found,
                });
            }
            if self.peek() != Some(b')') {
                return self.syntax(self.pos, "expected `)`");
            }
            self.pos += 1;
            return Ok(call(func, arg));
        }

        let var = match name.as_str() {
            "t" => Var::T,
            _ => match name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                Some(k) if (1..=9).contains(&k) && name.len() == 2 => Var::X(k - 1),
                _ => return Err(Error::UnknownIdentifier { name, offset: start }),
            },
        };
        if called {
            return Err(Error::Arity {
                name,
                offset: start,
                expected: 0,
                found: 1,
            });
        }
        Ok(Expr::Var(var))
    }
}
