//! Forward-mode truncated Taylor arithmetic ("jets") in `m` variables up to order 3.
//!
//! A [`Jet`] carries the value of a scalar together with its gradient, Hessian and
//! third-derivative tensor at a point. Symmetric tensors are stored once per sorted
//! multi-index: the pair `i <= j` lives at `j(j+1)/2 + i`, the triple `i <= j <= k`
//! at `k(k+1)(k+2)/6 + j(j+1)/2 + i`. Iterating `k`, then `j <= k`, then `i <= j`
//! therefore visits the packed storage sequentially.
//!
//! Every checked operation refuses to produce a non-finite component; domain
//! violations surface as [`JetError`] instead of NaN or infinities.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Highest supported derivative order.
pub const MAX_ORDER: usize = 3;

/// Divisors with magnitude below this threshold raise [`JetError::DivisionByZero`].
pub const DIVISION_GUARD: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("variable index {index} out of range for {nvars} variables")]
    IndexOutOfRange { index: usize, nvars: usize },
    #[error("jet order {0} exceeds the supported maximum of 3")]
    OrderTooHigh(usize),
    #[error("jet shapes differ: ({0} vars, order {1}) vs ({2} vars, order {3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("division by {value:e} (below the guard 1e-300)")]
    DivisionByZero { value: f64 },
    #[error("{func} is undefined at {value}")]
    Domain { func: &'static str, value: f64 },
    #[error("{op} produced a non-finite result")]
    NonFinite { op: &'static str },
    #[error("cannot differentiate an order-0 jet")]
    NoDerivative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Elementary functions understood by [`Jet::func`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
    PowConst,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::PowConst => "pow_const",
            Func::Abs => "abs",
        }
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
pub fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

#[inline]
pub fn triple_index(i: usize, j: usize, k: usize) -> usize {
    let mut s = [i, j, k];
    if s[0] > s[1] {
        s.swap(0, 1);
    }
    if s[1] > s[2] {
        s.swap(1, 2);
    }
    if s[0] > s[1] {
        s.swap(0, 1);
    }
    s[2] * (s[2] + 1) * (s[2] + 2) / 6 + s[1] * (s[1] + 1) / 2 + s[0]
}

fn pair_len(m: usize) -> usize {
    m * (m + 1) / 2
}

fn triple_len(m: usize) -> usize {
    m * (m + 1) * (m + 2) / 6
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    order: usize,
    nvars: usize,
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
    third: Vec<f64>,
}

impl Jet {
    fn zeros(nvars: usize, order: usize) -> Self {
        Jet {
            order,
            nvars,
            value: 0.0,
            grad: vec![0.0; if order >= 1 { nvars } else { 0 }],
            hess: vec![0.0; if order >= 2 { pair_len(nvars) } else { 0 }],
            third: vec![0.0; if order >= 3 { triple_len(nvars) } else { 0 }],
        }
    }

    pub fn constant(value: f64, nvars: usize, order: usize) -> Self {
        assert!(order <= MAX_ORDER, "jet order {order} > 3");
        let mut j = Jet::zeros(nvars, order);
        j.value = value;
        j
    }

    /// Seeds variable `index` of `nvars` at `value`.
    pub fn lift_var(index: usize, value: f64, nvars: usize, order: usize) -> Result<Self, JetError> {
        if order > MAX_ORDER {
            return Err(JetError::OrderTooHigh(order));
        }
        if index >= nvars {
            return Err(JetError::IndexOutOfRange { index, nvars });
        }
        let mut j = Jet::zeros(nvars, order);
        j.value = value;
        if order >= 1 {
            j.grad[index] = 1.0;
        }
        Ok(j)
    }

    /// Lifts every coordinate of `point` as its own variable.
    pub fn lift_all(point: &[f64], order: usize) -> Result<Vec<Jet>, JetError> {
        let m = point.len();
        point.iter().enumerate().map(|(i, &x)| Jet::lift_var(i, x, m, order)).collect()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn grad(&self, i: usize) -> f64 {
        if self.order >= 1 {
            self.grad[i]
        } else {
            0.0
        }
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        if self.order >= 2 {
            self.hess[pair_index(i, j)]
        } else {
            0.0
        }
    }

    pub fn third(&self, i: usize, j: usize, k: usize) -> f64 {
        if self.order >= 3 {
            self.third[triple_index(i, j, k)]
        } else {
            0.0
        }
    }

    /// Packed unique Hessian entries.
    pub fn hess_packed(&self) -> &[f64] {
        &self.hess
    }

    /// Packed unique third-order entries.
    pub fn third_packed(&self) -> &[f64] {
        &self.third
    }

    /// All stored components in a fixed order: value, gradient, Hessian, third.
    pub fn components(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.grad.len() + self.hess.len() + self.third.len());
        out.push(self.value);
        out.extend_from_slice(&self.grad);
        out.extend_from_slice(&self.hess);
        out.extend_from_slice(&self.third);
        out
    }

    /// Inverse of [`Jet::components`].
    pub fn from_components(nvars: usize, order: usize, comps: &[f64]) -> Self {
        let mut j = Jet::zeros(nvars, order);
        let (g, h, t) = (j.grad.len(), j.hess.len(), j.third.len());
        assert_eq!(comps.len(), 1 + g + h + t, "component count mismatch");
        j.value = comps[0];
        j.grad.copy_from_slice(&comps[1..1 + g]);
        j.hess.copy_from_slice(&comps[1 + g..1 + g + h]);
        j.third.copy_from_slice(&comps[1 + g + h..]);
        j
    }

    pub fn set_value(&mut self, value: f64) {
        self.value = value;
    }

    pub fn set_grad(&mut self, i: usize, x: f64) {
        self.grad[i] = x;
    }

    pub fn set_hess(&mut self, i: usize, j: usize, x: f64) {
        self.hess[pair_index(i, j)] = x;
    }

    pub fn set_third(&mut self, i: usize, j: usize, k: usize, x: f64) {
        self.third[triple_index(i, j, k)] = x;
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad.iter().all(|x| x.is_finite())
            && self.hess.iter().all(|x| x.is_finite())
            && self.third.iter().all(|x| x.is_finite())
    }

    fn checked(self, op: &'static str) -> Result<Self, JetError> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(JetError::NonFinite { op })
        }
    }

    fn same_shape(&self, other: &Jet) -> Result<(), JetError> {
        if self.nvars != other.nvars || self.order != other.order {
            Err(JetError::ShapeMismatch(self.nvars, self.order, other.nvars, other.order))
        } else {
            Ok(())
        }
    }

    /// Drops derivatives above `order`.
    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.order {
            return self.clone();
        }
        let mut j = Jet::zeros(self.nvars, order);
        j.value = self.value;
        if order >= 1 {
            j.grad.copy_from_slice(&self.grad);
        }
        if order >= 2 {
            j.hess.copy_from_slice(&self.hess);
        }
        j
    }

    /// The partial derivative with respect to variable `i`, one order lower.
    pub fn partial(&self, i: usize) -> Result<Jet, JetError> {
        if self.order == 0 {
            return Err(JetError::NoDerivative);
        }
        if i >= self.nvars {
            return Err(JetError::IndexOutOfRange { index: i, nvars: self.nvars });
        }
        let m = self.nvars;
        let mut d = Jet::zeros(m, self.order - 1);
        d.value = self.grad[i];
        if self.order >= 2 {
            for j in 0..m {
                d.grad[j] = self.hess[pair_index(i, j)];
            }
        }
        if self.order >= 3 {
            for k in 0..m {
                for j in 0..=k {
                    d.hess[pair_index(j, k)] = self.third[triple_index(i, j, k)];
                }
            }
        }
        Ok(d)
    }

    pub fn scale(&self, c: f64) -> Jet {
        let mut j = self.clone();
        j.value *= c;
        j.grad.iter_mut().for_each(|x| *x *= c);
        j.hess.iter_mut().for_each(|x| *x *= c);
        j.third.iter_mut().for_each(|x| *x *= c);
        j
    }

    pub fn add_scalar(&self, c: f64) -> Jet {
        let mut j = self.clone();
        j.value += c;
        j
    }

    fn zip_with(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        Jet {
            order: self.order,
            nvars: self.nvars,
            value: f(self.value, other.value),
            grad: self.grad.iter().zip(&other.grad).map(|(a, b)| f(*a, *b)).collect(),
            hess: self.hess.iter().zip(&other.hess).map(|(a, b)| f(*a, *b)).collect(),
            third: self.third.iter().zip(&other.third).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    fn mul_unchecked(&self, b: &Jet) -> Jet {
        let a = self;
        let m = a.nvars;
        let mut out = Jet::zeros(m, a.order);
        out.value = a.value * b.value;
        if a.order >= 1 {
            for i in 0..m {
                out.grad[i] = a.grad[i] * b.value + a.value * b.grad[i];
            }
        }
        if a.order >= 2 {
            let mut idx = 0;
            for j in 0..m {
                for i in 0..=j {
                    out.hess[idx] =
                        a.hess[idx] * b.value + a.grad[i] * b.grad[j] + a.grad[j] * b.grad[i] + a.value * b.hess[idx];
                    idx += 1;
                }
            }
        }
        if a.order >= 3 {
            let mut idx = 0;
            for k in 0..m {
                for j in 0..=k {
                    for i in 0..=j {
                        let (ij, ik, jk) = (pair_index(i, j), pair_index(i, k), pair_index(j, k));
                        out.third[idx] = a.third[idx] * b.value
                            + a.hess[ij] * b.grad[k]
                            + a.hess[ik] * b.grad[j]
                            + a.hess[jk] * b.grad[i]
                            + a.grad[i] * b.hess[jk]
                            + a.grad[j] * b.hess[ik]
                            + a.grad[k] * b.hess[ij]
                            + a.value * b.third[idx];
                        idx += 1;
                    }
                }
            }
        }
        out
    }

    /// Composes a univariate function with this jet, given the function's
    /// derivatives `d = [h, h', h'', h''']` at `self.value()`.
    pub fn compose(&self, d: [f64; 4]) -> Jet {
        let a = self;
        let m = a.nvars;
        let mut out = Jet::zeros(m, a.order);
        out.value = d[0];
        if a.order >= 1 {
            for i in 0..m {
                out.grad[i] = d[1] * a.grad[i];
            }
        }
        if a.order >= 2 {
            let mut idx = 0;
            for j in 0..m {
                for i in 0..=j {
                    out.hess[idx] = d[1] * a.hess[idx] + d[2] * a.grad[i] * a.grad[j];
                    idx += 1;
                }
            }
        }
        if a.order >= 3 {
            let mut idx = 0;
            for k in 0..m {
                for j in 0..=k {
                    for i in 0..=j {
                        let (ij, ik, jk) = (pair_index(i, j), pair_index(i, k), pair_index(j, k));
                        out.third[idx] = d[1] * a.third[idx]
                            + d[2] * (a.hess[ij] * a.grad[k] + a.hess[ik] * a.grad[j] + a.hess[jk] * a.grad[i])
                            + d[3] * a.grad[i] * a.grad[j] * a.grad[k];
                        idx += 1;
                    }
                }
            }
        }
        out
    }

    /// Multivariate chain rule: `outer` is a jet in `inner.len()` variables,
    /// each `inner[a]` a jet in a common set of `m` variables. Returns the
    /// composite as a jet in the `m` variables, at the lower of the two orders.
    pub fn compose_multi(outer: &Jet, inner: &[Jet]) -> Result<Jet, JetError> {
        let k = outer.nvars;
        if inner.len() != k || k == 0 {
            return Err(JetError::ShapeMismatch(k, outer.order, inner.len(), 0));
        }
        for g in &inner[1..] {
            inner[0].same_shape(g)?;
        }
        let m = inner[0].nvars;
        let order = outer.order.min(inner[0].order);
        let inner: Vec<Jet> = inner.iter().map(|g| g.truncate(order)).collect();
        let mut out = Jet::zeros(m, order);
        out.value = outer.value;
        if order >= 1 {
            for i in 0..m {
                out.grad[i] = (0..k).map(|a| outer.grad[a] * inner[a].grad[i]).sum();
            }
        }
        if order >= 2 {
            let mut idx = 0;
            for j in 0..m {
                for i in 0..=j {
                    let mut s = 0.0;
                    for a in 0..k {
                        s += outer.grad[a] * inner[a].hess[idx];
                        for b in 0..k {
                            s += outer.hess[pair_index(a, b)] * inner[a].grad[i] * inner[b].grad[j];
                        }
                    }
                    out.hess[idx] = s;
                    idx += 1;
                }
            }
        }
        if order >= 3 {
            let mut idx = 0;
            for kk in 0..m {
                for j in 0..=kk {
                    for i in 0..=j {
                        let (ij, ik, jk) = (pair_index(i, j), pair_index(i, kk), pair_index(j, kk));
                        let mut s = 0.0;
                        for a in 0..k {
                            let ga = &inner[a];
                            s += outer.grad[a] * ga.third[idx];
                            for b in 0..k {
                                let gb = &inner[b];
                                let hab = outer.hess[pair_index(a, b)];
                                s += hab
                                    * (ga.hess[ij] * gb.grad[kk] + ga.hess[ik] * gb.grad[j] + ga.hess[jk] * gb.grad[i]);
                                for (c, gc) in inner.iter().enumerate() {
                                    s += outer.third[triple_index(a, b, c)] * ga.grad[i] * gb.grad[j] * gc.grad[kk];
                                }
                            }
                        }
                        out.third[idx] = s;
                        idx += 1;
                    }
                }
            }
        }
        out.checked("chain rule")
    }

    /// Checked binary arithmetic.
    pub fn arith(op: ArithOp, a: &Jet, b: &Jet) -> Result<Jet, JetError> {
        a.same_shape(b)?;
        match op {
            ArithOp::Add => a.zip_with(b, |x, y| x + y).checked("+"),
            ArithOp::Sub => a.zip_with(b, |x, y| x - y).checked("-"),
            ArithOp::Mul => a.mul_unchecked(b).checked("*"),
            ArithOp::Div => {
                let inv = b.recip()?;
                a.mul_unchecked(&inv).checked("/")
            }
        }
    }

    pub fn div(&self, other: &Jet) -> Result<Jet, JetError> {
        Jet::arith(ArithOp::Div, self, other)
    }

    pub fn recip(&self) -> Result<Jet, JetError> {
        let x = self.value;
        if x.abs() < DIVISION_GUARD {
            return Err(JetError::DivisionByZero { value: x });
        }
        let i = 1.0 / x;
        self.compose([i, -i * i, 2.0 * i * i * i, -6.0 * i * i * i * i]).checked("/")
    }

    /// Checked elementary function. `exponent` is required for [`Func::PowConst`]
    /// and ignored otherwise.
    pub fn func(name: Func, a: &Jet, exponent: Option<f64>) -> Result<Jet, JetError> {
        let x = a.value;
        let domain = |func| Err(JetError::Domain { func, value: x });
        let d = match name {
            Func::Sqrt => {
                if !(x > 0.0) {
                    return domain("sqrt");
                }
                let s = x.sqrt();
                [s, 0.5 / s, -0.25 / (s * x), 0.375 / (s * x * x)]
            }
            Func::Sin => {
                let (s, c) = x.sin_cos();
                [s, c, -s, -c]
            }
            Func::Cos => {
                let (s, c) = x.sin_cos();
                [c, -s, -c, s]
            }
            Func::Exp => {
                let e = x.exp();
                [e, e, e, e]
            }
            Func::Log => {
                if !(x > 0.0) {
                    return domain("log");
                }
                let i = 1.0 / x;
                [x.ln(), i, -i * i, 2.0 * i * i * i]
            }
            Func::Abs => {
                if x == 0.0 || x.is_nan() {
                    return domain("abs");
                }
                [x.abs(), x.signum(), 0.0, 0.0]
            }
            Func::PowConst => {
                let p = match exponent {
                    Some(p) if p.is_finite() => p,
                    _ => return domain("pow_const"),
                };
                pow_derivatives(x, p).ok_or(JetError::Domain { func: "pow_const", value: x })?
            }
        };
        a.compose(d).checked(name.name())
    }

    pub fn sqrt(&self) -> Result<Jet, JetError> {
        Jet::func(Func::Sqrt, self, None)
    }

    pub fn sin(&self) -> Result<Jet, JetError> {
        Jet::func(Func::Sin, self, None)
    }

    pub fn cos(&self) -> Result<Jet, JetError> {
        Jet::func(Func::Cos, self, None)
    }

    pub fn exp(&self) -> Result<Jet, JetError> {
        Jet::func(Func::Exp, self, None)
    }

    pub fn ln(&self) -> Result<Jet, JetError> {
        Jet::func(Func::Log, self, None)
    }

    pub fn abs(&self) -> Result<Jet, JetError> {
        Jet::func(Func::Abs, self, None)
    }

    pub fn powf(&self, p: f64) -> Result<Jet, JetError> {
        Jet::func(Func::PowConst, self, Some(p))
    }

    pub fn square(&self) -> Jet {
        self.mul_unchecked(self)
    }
}

/// `[x^p, p x^(p-1), p(p-1) x^(p-2), p(p-1)(p-2) x^(p-3)]`, or `None` outside the domain.
fn pow_derivatives(x: f64, p: f64) -> Option<[f64; 4]> {
    let integer = p.fract() == 0.0 && p.abs() < 1e9;
    if !integer && !(x > 0.0) {
        return None;
    }
    let mut out = [0.0; 4];
    let mut coeff = 1.0;
    for (k, slot) in out.iter_mut().enumerate() {
        if k > 0 {
            coeff *= p - (k as f64 - 1.0);
        }
        if coeff == 0.0 {
            *slot = 0.0;
            continue;
        }
        let e = p - k as f64;
        let power = if integer { x.powi(e as i32) } else { x.powf(e) };
        *slot = coeff * power;
    }
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

// Operator sugar for infallible arithmetic. Mixing shapes is a programming
// error and panics; use `Jet::arith` for the checked form.

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.same_shape(rhs).expect("jet shape mismatch in +");
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.same_shape(rhs).expect("jet shape mismatch in -");
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        self.same_shape(rhs).expect("jet shape mismatch in *");
        self.mul_unchecked(rhs)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        &self + &rhs
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        &self - &rhs
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        &self * &rhs
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Add<f64> for &Jet {
    type Output = Jet;
    fn add(self, rhs: f64) -> Jet {
        self.add_scalar(rhs)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, rhs: f64) -> Jet {
        self.add_scalar(rhs)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}
