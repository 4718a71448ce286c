use std::collections::BTreeMap;

use finsler_core::expr::Expr;
use finsler_core::metric::{fundamental_tensor, fundamental_tensor_ad, homogeneity_residual, Metric, SphericalMetric};
use finsler_core::Jet;
use proptest::prelude::*;

const VARS: [&str; 2] = ["a", "b"];

const BUILTINS: [&str; 6] = ["euclidean", "klein", "funk", "berwald", "spherical", "bryant"];

fn params(name: &str) -> BTreeMap<String, f64> {
    if name == "bryant" {
        BTreeMap::from([("alpha".to_string(), 0.7)])
    } else {
        BTreeMap::new()
    }
}

fn expr_source() -> impl Strategy<Value = String> {
    let leaf =
        prop_oneof![Just("a".to_string()), Just("b".to_string()), (-3.0..3.0f64).prop_map(|c| format!("{c:.3}")),];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), 0..4usize)
                .prop_map(|(l, r, op)| format!("({l} {} {r})", ["+", "-", "*", "/"][op])),
            (inner.clone(), 0..5usize).prop_map(|(e, f)| format!("{}({e})", ["sqrt", "sin", "cos", "exp", "log"][f])),
            (inner, 1..4i32).prop_map(|(e, k)| format!("({e})^{k}")),
        ]
    })
}

fn eval(e: &Expr, a: f64, b: f64, order: usize) -> Option<Jet> {
    let va = Jet::lift_var(0, a, 2, order).ok()?;
    let vb = Jet::lift_var(1, b, 2, order).ok()?;
    let j = e.eval(&[("a", &va), ("b", &vb)]).ok()?;
    let parts = j.components();
    (parts.iter().all(|c| c.is_finite() && c.abs() < 1e6)).then_some(j)
}

/// Plain floating-point interpreter over the display form, independent of the jet code.
fn interpret(src: &str, a: f64, b: f64) -> f64 {
    struct P<'s> {
        s: &'s [u8],
        i: usize,
        a: f64,
        b: f64,
    }
    impl P<'_> {
        fn ws(&mut self) {
            while self.i < self.s.len() && self.s[self.i] == b' ' {
                self.i += 1;
            }
        }
        fn expr(&mut self) -> f64 {
            let mut v = self.term();
            loop {
                self.ws();
                match self.s.get(self.i) {
                    Some(b'+') => {
                        self.i += 1;
                        v += self.term();
                    }
                    Some(b'-') => {
                        self.i += 1;
                        v -= self.term();
                    }
                    _ => return v,
                }
            }
        }
        fn term(&mut self) -> f64 {
            let mut v = self.unary();
            loop {
                self.ws();
                match self.s.get(self.i) {
                    Some(b'*') => {
                        self.i += 1;
                        v *= self.unary();
                    }
                    Some(b'/') => {
                        self.i += 1;
                        v /= self.unary();
                    }
                    _ => return v,
                }
            }
        }
        fn unary(&mut self) -> f64 {
            self.ws();
            if self.s.get(self.i) == Some(&b'-') {
                self.i += 1;
                return -self.unary();
            }
            self.power()
        }
        fn power(&mut self) -> f64 {
            let base = self.primary();
            self.ws();
            if self.s.get(self.i) == Some(&b'^') {
                self.i += 1;
                let e = self.unary();
                return base.powf(e);
            }
            base
        }
        fn primary(&mut self) -> f64 {
            self.ws();
            let c = self.s[self.i];
            if c == b'(' {
                self.i += 1;
                let v = self.expr();
                self.ws();
                self.i += 1;
                return v;
            }
            let start = self.i;
            if c.is_ascii_digit() || c == b'.' {
                while self.i < self.s.len()
                    && (self.s[self.i].is_ascii_alphanumeric()
                        || self.s[self.i] == b'.'
                        || (matches!(self.s[self.i], b'+' | b'-') && matches!(self.s[self.i - 1], b'e' | b'E')))
                {
                    self.i += 1;
                }
                return std::str::from_utf8(&self.s[start..self.i]).unwrap().parse().unwrap();
            }
            while self.i < self.s.len() && self.s[self.i].is_ascii_alphanumeric() {
                self.i += 1;
            }
            let name = std::str::from_utf8(&self.s[start..self.i]).unwrap();
            match name {
                "a" => self.a,
                "b" => self.b,
                f => {
                    let x = self.primary();
                    match f {
                        "sqrt" => x.sqrt(),
                        "sin" => x.sin(),
                        "cos" => x.cos(),
                        "exp" => x.exp(),
                        "log" => x.ln(),
                        "abs" => x.abs(),
                        other => panic!("unknown function {other}"),
                    }
                }
            }
        }
    }
    P { s: src.as_bytes(), i: 0, a, b }.expr()
}

fn close(ad: f64, fd: f64) -> bool {
    (ad - fd).abs() <= 1e-5 * ad.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, max_global_rejects: 20_000, ..ProptestConfig::default() })]

    #[test]
    fn jet_derivatives_match_central_differences(src in expr_source(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let e = Expr::parse(&src, &VARS).unwrap();
        let h = 1e-5;
        let j = eval(&e, a, b, 3);
        prop_assume!(j.is_some());
        let j = j.unwrap();
        let shifted = |i: usize, s: f64| {
            let (pa, pb) = if i == 0 { (a + s, b) } else { (a, b + s) };
            eval(&e, pa, pb, 2)
        };
        for i in 0..2 {
            let (plus, minus) = (shifted(i, h), shifted(i, -h));
            prop_assume!(plus.is_some() && minus.is_some());
            let (plus, minus) = (plus.unwrap(), minus.unwrap());
            let fd = |p: f64, m: f64| (p - m) / (2.0 * h);
            prop_assert!(close(j.grad(i), fd(plus.value(), minus.value())), "{src} grad {i}");
            for k in 0..2 {
                prop_assert!(close(j.hess(i, k), fd(plus.grad(k), minus.grad(k))), "{src} hess {i}{k}");
                for l in 0..2 {
                    prop_assert!(close(j.third(i, k, l), fd(plus.hess(k, l), minus.hess(k, l))), "{src} third {i}{k}{l}");
                }
            }
        }
    }

    #[test]
    fn display_then_parse_is_identity(src in expr_source()) {
        let e = Expr::parse(&src, &VARS).unwrap();
        let again = Expr::parse(&e.to_string(), &VARS).unwrap();
        prop_assert_eq!(&e, &again);
        prop_assert_eq!(e.to_string(), again.to_string());
    }

    #[test]
    fn jet_value_matches_plain_interpreter(src in expr_source(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let e = Expr::parse(&src, &VARS).unwrap();
        let j = eval(&e, a, b, 0);
        prop_assume!(j.is_some());
        let plain = interpret(&e.to_string(), a, b);
        let v = j.unwrap().value();
        prop_assert!((v - plain).abs() <= 1e-12 * v.abs().max(1.0), "{src}: {v} vs {plain}");
    }

    #[test]
    fn builtins_are_positively_homogeneous(
        which in 0..6usize,
        r in 0.05..0.95f64,
        u in 0.1..2.0f64,
        c in -1.0..1.0f64,
        lam in 0.1..5.0f64,
    ) {
        let name = BUILTINS[which];
        let m = SphericalMetric::builtin(name, &params(name)).unwrap();
        let v = c * r * u;
        let f = m.phi(r, u, v).unwrap();
        let scaled = m.phi(r, lam * u, lam * v).unwrap();
        prop_assert!((scaled - lam * f).abs() <= 1e-12 * scaled.abs());
        prop_assert!(homogeneity_residual(&m, r, u, v).unwrap() <= 1e-10);
    }

    #[test]
    fn fundamental_tensor_closed_form_matches_ad(
        which in 0..6usize,
        x in proptest::collection::vec(-0.55..0.55f64, 3),
        y in proptest::collection::vec(-1.0..1.0f64, 3),
    ) {
        prop_assume!(x.iter().map(|c| c * c).sum::<f64>() > 0.01 && y.iter().map(|c| c * c).sum::<f64>() > 0.01);
        let name = BUILTINS[which];
        let m = Metric::builtin(name, &params(name)).unwrap();
        let closed = fundamental_tensor(&m, &x, &y).unwrap();
        let ad = fundamental_tensor_ad(&m, &x, &y).unwrap();
        prop_assert!((&closed - &ad).amax() <= 1e-9 * ad.amax(), "{name}");
        // g_ij yⁱ yʲ = F²
        let f = m.evaluate(&x, &y).unwrap();
        let quad: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| closed[(i, j)] * y[i] * y[j]).sum();
        prop_assert!((quad - f * f).abs() <= 1e-10 * f * f);
    }
}
