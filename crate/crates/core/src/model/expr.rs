//! A minimal arithmetic expression language used by model files and CLI
//! control profiles: `+ - * / ^`, parentheses, numeric literals, named
//! variables and the functions `sin cos exp sqrt`. Expressions are differentiated symbolically so parsed models
//! carry analytic Jacobians.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

impl Expr {
    /// Parses `src`, resolving identifiers through `resolve`.
    pub fn parse(src: &str, resolve: &dyn Fn(&str) -> Option<usize>) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, resolve };
        let e = p.expr()?;
        if let Some((tok, off)) = p.tokens.get(p.pos) {
            return Err(Error::Parse {
                offset: *off,
                message: format!("unexpected token {tok:?}"),
            });
        }
        Ok(e)
    }

    /// Parses with variables named `{prefix}1 .. {prefix}n` (1-based).
    pub fn parse_indexed(src: &str, prefix: &str, n: usize) -> Result<Expr> {
        let resolve = |name: &str| -> Option<usize> {
            let idx: usize = name.strip_prefix(prefix)?.parse().ok()?;
            (1..=n).contains(&idx).then(|| idx - 1)
        };
        Expr::parse(src, &resolve)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => vars[*i],
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, e) => {
                let base = a.eval(vars);
                if e.fract() == 0.0 && e.abs() < i32::MAX as f64 {
                    base.powi(*e as i32)
                } else {
                    base.powf(*e)
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(vars)),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const(_))
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn diff(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.diff(var)),
            Add(a, b) => add(a.diff(var), b.diff(var)),
            Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Mul(a, b) => add(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))),
            Div(a, b) => div(sub(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))), pow((**b).clone(), 2.0)),
            Pow(a, e) => mul(mul(Const(*e), pow((**a).clone(), e - 1.0)), a.diff(var)),
            Call(f, a) => {
                let outer = match f {
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                    Func::Exp => self.clone(),
                    Func::Sqrt => div(Const(0.5), self.clone()),
                };
                mul(outer, a.diff(var))
            }
        }
    }
}

fn call(f: Func, a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(f.apply(c)),
        a => Expr::Call(f, Box::new(a)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(z), e) | (e, Expr::Const(z)) if z == 0.0 => e,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (e, Expr::Const(z)) if z == 0.0 => e,
        (Expr::Const(z), e) if z == 0.0 => neg(e),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x / y),
        (Expr::Const(z), _) if z == 0.0 => Expr::Const(0.0),
        (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, e: f64) -> Expr {
    match a {
        _ if e == 0.0 => Expr::Const(1.0),
        a if e == 1.0 => a,
        Expr::Const(c) => Expr::Const(c.powf(e)),
        a => Expr::Pow(Box::new(a), e),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "v{}", i + 1),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, e) => write!(f, "({a})^{e}"),
            Expr::Call(g, a) => write!(f, "{}({a})", g.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let value = text.parse::<f64>().map_err(|_| Error::Parse {
                offset: start,
                message: format!("bad number literal '{text}'"),
            })?;
            out.push((Tok::Num(value), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else if c == '(' {
            out.push((Tok::LParen, i));
            i += 1;
        } else if c == ')' {
            out.push((Tok::RParen, i));
            i += 1;
        } else {
            return Err(Error::Parse {
                offset: i,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    resolve: &'a dyn Fn(&str) -> Option<usize>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, o)| *o)
            .or_else(|| self.tokens.last().map(|(_, o)| o + 1))
            .unwrap_or(0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { add(lhs, rhs) } else { sub(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { mul(lhs, rhs) } else { div(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(neg(self.unary()?))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let at = self.offset();
            let exponent = self.unary()?;
            return match exponent {
                Expr::Const(e) => Ok(pow(base, e)),
                _ => Err(Error::Parse {
                    offset: at,
                    message: "exponent must be a constant".into(),
                }),
            };
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Ident(name)) => match (self.resolve)(&name) {
                Some(idx) => {
                    self.pos += 1;
                    Ok(Expr::Var(idx))
                }
                None => match Func::from_name(&name) {
                    Some(f) if self.tokens.get(self.pos + 1).map(|t| &t.0) == Some(&Tok::LParen) => {
                        self.pos += 1;
                        let arg = self.atom()?;
                        Ok(call(f, arg))
                    }
                    _ => self.err(format!("unknown variable '{name}'")),
                },
            },
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(tok) => self.err(format!("unexpected token {tok:?}")),
            None => self.err("unexpected end of expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(src: &str) -> Expr {
        Expr::parse_indexed(src, "q", 3).unwrap()
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(q("1 + 2 * 3").eval(&[]), 7.0);
        assert_eq!(q("-q1^2").eval(&[3.0, 0.0, 0.0]), -9.0);
        assert_eq!(q("(q1 + q2) / 2").eval(&[1.0, 3.0, 0.0]), 2.0);
        assert_eq!(q("2^3^2").eval(&[]), 512.0);
        assert_eq!(q("1.5e-1 * 2").eval(&[]), 0.3);
    }

    #[test]
    fn symbolic_derivative_of_martinet_component() {
        let e = q("q1^2/2");
        let d = e.diff(0);
        assert_eq!(d.eval(&[1.5, 0.0, 0.0]), 1.5);
        assert!(d.diff(0).eval(&[0.3, 0.0, 0.0]) == 1.0);
        assert!(e.diff(1).is_const());
    }

    #[test]
    fn functions_and_chain_rule() {
        let e = q("sin(q1^2) + sqrt(q2) * exp(-q3) - cos(2*q1)^2");
        let x = [0.7, 2.0, 0.3];
        let exact = |x: &[f64]| (x[0] * x[0]).sin() + x[1].sqrt() * (-x[2]).exp() - (2.0 * x[0]).cos().powi(2);
        assert!((e.eval(&x) - exact(&x)).abs() < 1e-15);
        for k in 0..3 {
            let mut hi = x;
            let mut lo = x;
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            let fd = (exact(&hi) - exact(&lo)) / 2e-6;
            assert!((e.diff(k).eval(&x) - fd).abs() < 1e-8, "d/dq{}", k + 1);
        }
        assert!(Expr::parse_indexed("sin + 1", "q", 3).is_err());
    }

    #[test]
    fn quotient_rule() {
        let e = q("q1 / (1 + q2)");
        let x = [2.0, 1.0, 0.0];
        assert!((e.diff(1).eval(&x) - (-2.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_offsets() {
        match Expr::parse_indexed("q1 + q4", "q", 3) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse_indexed("q1 ^ q2", "q", 3).is_err());
        assert!(Expr::parse_indexed("(q1", "q", 3).is_err());
        assert!(Expr::parse_indexed("q1 $", "q", 3).is_err());
    }
}
