//! Scalar formula language used for user-supplied `f(t)`, `g(r)`, `h(r)`, `φ(r,u,v)`
//! and `F(x,y)` in config files.
//!
//! Grammar (whitespace is insignificant, there is no implicit multiplication):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          exponent must be constant; right-associative
//! primary := number | name | name '(' expr ')' | '(' expr ')'
//! number  := digits ['.' digits] [('e'|'E') ['+'|'-'] digits]   (or a leading '.')
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`. Functions:
//! `sqrt sin cos exp log abs`.

use std::fmt;

use thiserror::Error;

use crate::jets::{ArithOp, Func, Jet, JetError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("exponent at byte {offset} must be a constant")]
    NonConstantExponent { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("no variable bindings supplied")]
    NoBindings,
    #[error("bound jets disagree in shape")]
    ShapeMismatch,
    #[error("{source} in `{node}` (byte {offset})")]
    Jet { source: JetError, node: String, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn arith(self) -> ArithOp {
        match self {
            BinOp::Add => ArithOp::Add,
            BinOp::Sub => ArithOp::Sub,
            BinOp::Mul => ArithOp::Mul,
            BinOp::Div => ArithOp::Div,
        }
    }
}

const FUNCTIONS: [(&str, Func); 6] = [
    ("sqrt", Func::Sqrt),
    ("sin", Func::Sin),
    ("cos", Func::Cos),
    ("exp", Func::Exp),
    ("log", Func::Log),
    ("abs", Func::Abs),
];

#[derive(Debug, Clone)]
pub enum ExprKind {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Pow(Box<Expr>, f64),
}

/// A parsed formula. Equality is structural and ignores source offsets.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub offset: usize,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Expr) -> bool {
        use ExprKind::*;
        match (&self.kind, &other.kind) {
            (Const(a), Const(b)) => a.to_bits() == b.to_bits(),
            (Var(a), Var(b)) => a == b,
            (Neg(a), Neg(b)) => a == b,
            (Binary(o1, a1, b1), Binary(o2, a2, b2)) => o1 == o2 && a1 == a2 && b1 == b2,
            (Call(f1, a1), Call(f2, a2)) => f1 == f2 && a1 == a2,
            (Pow(a1, p1), Pow(a2, p2)) => a1 == a2 && p1.to_bits() == p2.to_bits(),
            _ => false,
        }
    }
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Expr { kind, offset: 0 }
    }

    pub fn parse(source: &str, allowed_vars: &[&str]) -> Result<Expr, ParseError> {
        let tokens = lex(source)?;
        if tokens.is_empty() {
            return Err(ParseError::Empty);
        }
        let mut p = Parser { tokens, pos: 0, allowed: allowed_vars, end: source.len() };
        let e = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(ParseError::Syntax { offset: t.offset, message: format!("unexpected {}", t.tok) });
        }
        Ok(e)
    }

    /// Names of all variables referenced, sorted and deduplicated.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match &self.kind {
            ExprKind::Const(_) => {}
            ExprKind::Var(v) => out.push(v.clone()),
            ExprKind::Neg(a) | ExprKind::Call(_, a) | ExprKind::Pow(a, _) => a.collect_vars(out),
            ExprKind::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates over jets. Every bound jet must share one shape; constants adopt it.
    pub fn eval(&self, bindings: &[(&str, &Jet)]) -> Result<Jet, EvalError> {
        let (_, first) = bindings.first().ok_or(EvalError::NoBindings)?;
        let (m, order) = (first.nvars(), first.order());
        if bindings.iter().any(|(_, j)| j.nvars() != m || j.order() != order) {
            return Err(EvalError::ShapeMismatch);
        }
        self.eval_inner(bindings, m, order)
    }

    fn eval_inner(&self, b: &[(&str, &Jet)], m: usize, order: usize) -> Result<Jet, EvalError> {
        let at = |source: JetError| EvalError::Jet { source, node: self.to_string(), offset: self.offset };
        match &self.kind {
            ExprKind::Const(c) => Ok(Jet::constant(*c, m, order)),
            ExprKind::Var(name) => b
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, j)| (*j).clone())
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            ExprKind::Neg(a) => Ok(-a.eval_inner(b, m, order)?),
            ExprKind::Binary(op, l, r) => {
                let l = l.eval_inner(b, m, order)?;
                let r = r.eval_inner(b, m, order)?;
                Jet::arith(op.arith(), &l, &r).map_err(at)
            }
            ExprKind::Call(f, a) => {
                let a = a.eval_inner(b, m, order)?;
                Jet::func(*f, &a, None).map_err(at)
            }
            ExprKind::Pow(a, p) => {
                let a = a.eval_inner(b, m, order)?;
                Jet::func(Func::PowConst, &a, Some(*p)).map_err(at)
            }
        }
    }

    /// Univariate convenience: value and first three derivatives at `t`.
    pub fn derivatives_at(&self, var: &str, t: f64) -> Result<[f64; 4], EvalError> {
        let x = Jet::lift_var(0, t, 1, 3).expect("valid seed");
        let j = self.eval(&[(var, &x)])?;
        Ok([j.value(), j.grad(0), j.hess(0, 0), j.third(0, 0, 0)])
    }

    /// Univariate plain evaluation.
    pub fn value_at(&self, var: &str, t: f64) -> Result<f64, EvalError> {
        let x = Jet::constant(t, 1, 0);
        Ok(self.eval(&[(var, &x)])?.value())
    }

    fn const_value(&self) -> Option<f64> {
        match &self.kind {
            ExprKind::Const(c) => Some(*c),
            ExprKind::Var(_) => None,
            ExprKind::Neg(a) => a.const_value().map(|x| -x),
            _ => {
                if !self.variables().is_empty() {
                    return None;
                }
                let j = self.eval_inner(&[], 0, 0).ok()?;
                Some(j.value())
            }
        }
    }
}

fn fmt_number(x: f64) -> String {
    if x < 0.0 || (x == 0.0 && x.is_sign_negative()) {
        format!("(-{:?})", -x)
    } else {
        format!("{x:?}")
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized; re-parses to a structurally identical tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Const(c) => f.write_str(&fmt_number(*c)),
            ExprKind::Var(v) => f.write_str(v),
            ExprKind::Neg(a) => write!(f, "(-{a})"),
            ExprKind::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            ExprKind::Call(func, a) => write!(f, "{}({a})", func.name()),
            ExprKind::Pow(a, p) => write!(f, "({a})^{}", fmt_number(*p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(x) => write!(f, "number {x}"),
            Tok::Ident(s) => write!(f, "name `{s}`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Caret => f.write_str("`^`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let simple = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, offset: start });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text
                .parse()
                .map_err(|_| ParseError::Syntax { offset: start, message: format!("malformed number `{text}`") })?;
            if !value.is_finite() {
                return Err(ParseError::Syntax { offset: start, message: format!("number `{text}` overflows") });
            }
            out.push(Token { tok: Tok::Num(value), offset: start });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), offset: start });
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('?');
        return Err(ParseError::Syntax { offset: start, message: format!("unexpected character `{ch}`") });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    allowed: &'a [&'a str],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek().map(|t| &t.tok) == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let offset = self.here();
            let op = if self.eat(&Tok::Plus) {
                BinOp::Add
            } else if self.eat(&Tok::Minus) {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), offset };
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let offset = self.here();
            let op = if self.eat(&Tok::Star) {
                BinOp::Mul
            } else if self.eat(&Tok::Slash) {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), offset };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.here();
        if self.eat(&Tok::Minus) {
            let inner = self.unary()?;
            return Ok(Expr { kind: ExprKind::Neg(Box::new(inner)), offset });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        let offset = self.here();
        if self.eat(&Tok::Caret) {
            let exp_offset = self.here();
            let exponent = self.unary()?;
            let p = exponent
                .const_value()
                .filter(|p| p.is_finite())
                .ok_or(ParseError::NonConstantExponent { offset: exp_offset })?;
            return Ok(Expr { kind: ExprKind::Pow(Box::new(base), p), offset });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(token) = self.peek().cloned() else {
            return Err(ParseError::Syntax { offset: self.end, message: "unexpected end of input".into() });
        };
        self.pos += 1;
        let offset = token.offset;
        match token.tok {
            Tok::Num(x) => Ok(Expr { kind: ExprKind::Const(x), offset }),
            Tok::LParen => {
                let e = self.expr()?;
                if !self.eat(&Tok::RParen) {
                    return Err(ParseError::Syntax { offset: self.here(), message: "expected `)`".into() });
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.eat(&Tok::LParen) {
                    let func = FUNCTIONS
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, f)| *f)
                        .ok_or(ParseError::UnknownFunction { name: name.clone(), offset })?;
                    let arg = self.expr()?;
                    if !self.eat(&Tok::RParen) {
                        return Err(ParseError::Syntax { offset: self.here(), message: "expected `)`".into() });
                    }
                    return Ok(Expr { kind: ExprKind::Call(func, Box::new(arg)), offset });
                }
                if !self.allowed.contains(&name.as_str()) {
                    return Err(ParseError::UnknownVariable { name, offset });
                }
                Ok(Expr { kind: ExprKind::Var(name), offset })
            }
            other => Err(ParseError::Syntax { offset, message: format!("unexpected {other}") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reciprocal_sqrt() {
        let e = Expr::parse("1/sqrt(1+t)", &["t"]).unwrap();
        assert!(matches!(e.kind, ExprKind::Binary(BinOp::Div, _, _)));
        let t = Jet::lift_var(0, 0.0, 1, 2).unwrap();
        let j = e.eval(&[("t", &t)]).unwrap();
        assert_eq!((j.value(), j.grad(0)), (1.0, -0.5));
    }

    #[test]
    fn caret_binds_before_times() {
        let e = Expr::parse("2*r^2 - 1", &["r"]).unwrap();
        let ExprKind::Binary(BinOp::Sub, lhs, _) = &e.kind else { panic!("{e:?}") };
        let ExprKind::Binary(BinOp::Mul, _, pow) = &lhs.kind else { panic!("{lhs:?}") };
        assert!(matches!(pow.kind, ExprKind::Pow(_, p) if p == 2.0));
    }

    #[test]
    fn caret_is_right_associative_and_above_negation() {
        let e = Expr::parse("-x^2^3", &["x"]).unwrap();
        let ExprKind::Neg(inner) = &e.kind else { panic!() };
        assert!(matches!(inner.kind, ExprKind::Pow(_, p) if p == 8.0));
        assert_eq!(Expr::parse("x^-0.5", &["x"]).unwrap(), Expr::parse("x^(-0.5)", &["x"]).unwrap());
    }

    #[test]
    fn unknown_names() {
        assert_eq!(
            Expr::parse("1/sqrt(1+s)", &["t"]),
            Err(ParseError::UnknownVariable { name: "s".into(), offset: 9 })
        );
        assert!(matches!(Expr::parse("tan(t)", &["t"]), Err(ParseError::UnknownFunction { .. })));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!(Expr::parse("", &[]), Err(ParseError::Empty));
        assert!(matches!(Expr::parse("1 +", &[]), Err(ParseError::Syntax { offset: 3, .. })));
        assert!(matches!(Expr::parse("2 t", &["t"]), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(Expr::parse("(1", &[]), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expr::parse("1 $ 2", &[]), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(Expr::parse("t^t", &["t"]), Err(ParseError::NonConstantExponent { offset: 2 })));
    }

    #[test]
    fn scientific_literals() {
        let e = Expr::parse("1.5e-3 + 2E2 + .5", &[]).unwrap();
        assert_eq!(e.const_value(), Some(1.5e-3 + 200.0 + 0.5));
    }

    #[test]
    fn eval_square() {
        let e = Expr::parse("r^2", &["r"]).unwrap();
        let r = Jet::lift_var(0, 3.0, 1, 2).unwrap();
        let j = e.eval(&[("r", &r)]).unwrap();
        assert_eq!((j.value(), j.grad(0), j.hess(0, 0)), (9.0, 6.0, 2.0));
    }

    #[test]
    fn eval_reports_failing_node() {
        let e = Expr::parse("1 + sqrt(t-2)", &["t"]).unwrap();
        let t = Jet::lift_var(0, 1.0, 1, 1).unwrap();
        match e.eval(&[("t", &t)]) {
            Err(EvalError::Jet { source: JetError::Domain { func: "sqrt", .. }, offset, .. }) => {
                assert_eq!(offset, 4)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn display_round_trips() {
        for src in ["-x^2 + 3*y/(1-x)", "sqrt(abs(x))^(-1.5) - 1e-7", "exp(-(x*y))", "-(-2)"] {
            let e = Expr::parse(src, &["x", "y"]).unwrap();
            let again = Expr::parse(&e.to_string(), &["x", "y"]).unwrap();
            assert_eq!(e, again, "{src} -> {e}");
        }
    }
}
