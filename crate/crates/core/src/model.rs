//! Nonlinearities `f(u, v)` for `x'(t) = r f(x(t), x(t - 1))`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dual::Dual2;
use crate::error::{Error, Result};
use crate::expr::{BinOp, Expr};

/// Closed rectangle `[u0, u1] x [v0, v1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

impl Domain {
    pub fn square(lo: f64, hi: f64) -> Self {
        Self {
            u: [lo, hi],
            v: [lo, hi],
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u[0] && u <= self.u[1] && v >= self.v[0] && v <= self.v[1]
    }

    /// The diagonal interval `{x : (x, x) in domain}`.
    pub fn diagonal(&self) -> Option<[f64; 2]> {
        let lo = self.u[0].max(self.v[0]);
        let hi = self.u[1].min(self.v[1]);
        (lo < hi).then_some([lo, hi])
    }
}

/// Value and both partials of `f` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grad {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone)]
struct Hamiltonian {
    h: Expr,
    g: Expr,
}

#[derive(Debug, Clone)]
pub struct ModelDefinition {
    pub name: String,
    pub source: String,
    pub params: BTreeMap<String, f64>,
    pub domain: Domain,
    /// Sign of `d2f` on the domain, as sampled at its centre.
    pub feedback_sign: f64,
    f: Expr,
    hamiltonian: Option<Hamiltonian>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificationReport {
    pub certified: bool,
    pub sign: f64,
    pub min_abs_d2f: f64,
    pub argmin: [f64; 2],
    pub cells: usize,
    /// Grid nodes where `d2f` vanished or took the minority sign.
    pub offending: Vec<[f64; 2]>,
}

pub const DEFAULT_CERT_CELLS: usize = 256;
pub const CERT_TOLERANCE: f64 = 1e-10;

impl ModelDefinition {
    pub fn parse(
        name: &str,
        source: &str,
        params: BTreeMap<String, f64>,
        domain: Domain,
    ) -> Result<Self> {
        let f = Expr::parse(source, &["u", "v"], &params)?;
        Self::from_expr(name, f, params, domain)
    }

    fn from_expr(
        name: &str,
        f: Expr,
        params: BTreeMap<String, f64>,
        domain: Domain,
    ) -> Result<Self> {
        if !(domain.u[0] < domain.u[1] && domain.v[0] < domain.v[1]) {
            return Err(Error::InvalidInput(format!("empty domain {domain:?}")));
        }
        let mut model = Self {
            name: name.to_string(),
            source: f.to_string(),
            params,
            domain,
            feedback_sign: 0.0,
            f,
            hamiltonian: None,
        };
        let cu = 0.5 * (domain.u[0] + domain.u[1]);
        let cv = 0.5 * (domain.v[0] + domain.v[1]);
        model.feedback_sign = model
            .eval_with_grad(cu, cv)
            .map(|g| g.d2.signum())
            .unwrap_or(0.0);
        Ok(model)
    }

    /// `f = 1 - e^v`, the logistic delay equation in `x = log N`.
    pub fn hutchinson_log() -> Self {
        Self::parse(
            "hutchinson-log",
            "1 - exp(v)",
            BTreeMap::new(),
            Domain::square(-20.0, 5.0),
        )
        .expect("builtin")
    }

    /// `f = u (1 - v)` in population coordinates.
    pub fn hutchinson() -> Self {
        Self::parse(
            "hutchinson",
            "u*(1 - v)",
            BTreeMap::new(),
            Domain::square(1e-8, 100.0),
        )
        .expect("builtin")
    }

    /// `f = -Omega(u^2 + v^2) v`, with `omega` an expression in `s`.
    pub fn enharmonic(omega: &str, params: BTreeMap<String, f64>) -> Result<Self> {
        let omega = Expr::parse(omega, &["s"], &params)?;
        let u = || Expr::Var {
            slot: 0,
            name: "u".into(),
        };
        let v = || Expr::Var {
            slot: 1,
            name: "v".into(),
        };
        let sq = |e: Expr| Expr::binary(BinOp::Pow, e, Expr::Const(2.0));
        let radius2 = Expr::binary(BinOp::Add, sq(u()), sq(v()));
        let f = Expr::Neg(Box::new(Expr::binary(
            BinOp::Mul,
            omega.substitute(0, &radius2),
            v(),
        )));
        Self::from_expr("enharmonic", f, params, Domain::square(-10.0, 10.0))
    }

    /// Double well `f = -dH/dv` with
    /// `H = u^2 v^2 + (u^2 v + u v^2) + (u^2 + v^2)/2`.
    pub fn qrt_doublewell() -> Self {
        let empty = BTreeMap::new();
        let vars = ["u", "v"];
        let f = Expr::parse("-(2*u^2*v + u^2 + 2*u*v + v)", &vars, &empty).expect("builtin");
        let h = Expr::parse("u^2*v^2 + (u^2*v + u*v^2) + (u^2 + v^2)/2", &vars, &empty)
            .expect("builtin");
        let g = Expr::parse("2*u*v^2 + 2*u*v + v^2 + u", &vars, &empty).expect("builtin");
        let mut model = Self::from_expr("qrt-doublewell", f, empty, Domain::square(-3.0, 3.0))
            .expect("builtin");
        model.hamiltonian = Some(Hamiltonian { h, g });
        model
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "hutchinson-log" => Some(Self::hutchinson_log()),
            "hutchinson" => Some(Self::hutchinson()),
            "enharmonic" => Self::enharmonic("1", BTreeMap::new()).ok(),
            "qrt-doublewell" => Some(Self::qrt_doublewell()),
            _ => None,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn expression(&self) -> &Expr {
        &self.f
    }

    fn eval_error(&self, u: f64, v: f64, source: crate::expr::EvalError) -> Error {
        Error::Eval {
            model: self.name.clone(),
            u,
            v,
            source,
        }
    }

    pub fn eval(&self, u: f64, v: f64) -> Result<f64> {
        self.f.eval(&[u, v]).map_err(|e| self.eval_error(u, v, e))
    }

    pub fn eval_with_grad(&self, u: f64, v: f64) -> Result<Grad> {
        let out = self
            .f
            .eval(&[Dual2::variable(u, 0), Dual2::variable(v, 1)])
            .map_err(|e| self.eval_error(u, v, e))?;
        Ok(Grad {
            f: out.v,
            d1: out.d[0],
            d2: out.d[1],
        })
    }

    /// The Hamiltonian `H`, for models that carry one.
    pub fn hamiltonian(&self, u: f64, v: f64) -> Option<f64> {
        let ham = self.hamiltonian.as_ref()?;
        ham.h.eval(&[u, v]).ok()
    }

    /// The analytic companion field `g = dH/du`, for models that carry one.
    pub fn companion(&self, u: f64, v: f64) -> Option<f64> {
        let ham = self.hamiltonian.as_ref()?;
        ham.g.eval(&[u, v]).ok()
    }

    /// Gradient of the Hamiltonian.
    pub fn hamiltonian_grad(&self, u: f64, v: f64) -> Option<[f64; 2]> {
        let ham = self.hamiltonian.as_ref()?;
        let out = ham
            .h
            .eval(&[Dual2::variable(u, 0), Dual2::variable(v, 1)])
            .ok()?;
        Some(out.d)
    }

    /// Samples `d2f` on a `(cells + 1)^2` node grid over the domain.
    pub fn certify_feedback(&self, cells: usize) -> Result<CertificationReport> {
        let cells = cells.max(1);
        let node = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / cells as f64;
        let mut values = Vec::with_capacity((cells + 1) * (cells + 1));
        for i in 0..=cells {
            let u = node(self.domain.u[0], self.domain.u[1], i);
            for j in 0..=cells {
                let v = node(self.domain.v[0], self.domain.v[1], j);
                values.push(([u, v], self.eval_with_grad(u, v)?.d2));
            }
        }
        let positive = values.iter().filter(|(_, d)| *d > 0.0).count();
        let negative = values.iter().filter(|(_, d)| *d < 0.0).count();
        let sign = if positive >= negative { 1.0 } else { -1.0 };
        let (argmin, min_abs) = values
            .iter()
            .map(|(p, d)| (*p, d.abs()))
            .fold(([0.0; 2], f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        let offending: Vec<[f64; 2]> = values
            .iter()
            .filter(|(_, d)| d.signum() != sign || d.abs() <= CERT_TOLERANCE)
            .map(|(p, _)| *p)
            .collect();
        let certified = offending.is_empty() && min_abs > CERT_TOLERANCE;
        Ok(CertificationReport {
            certified,
            sign,
            min_abs_d2f: min_abs,
            argmin,
            cells,
            offending,
        })
    }

    /// Like [`certify_feedback`](Self::certify_feedback), but a failed
    /// certification is an error listing (up to 16 of) the offending nodes.
    pub fn require_certified(&self, cells: usize) -> Result<CertificationReport> {
        let report = self.certify_feedback(cells)?;
        if report.certified {
            return Ok(report);
        }
        let listed: Vec<String> = report
            .offending
            .iter()
            .take(16)
            .map(|p| format!("({:.6}, {:.6})", p[0], p[1]))
            .collect();
        Err(Error::NotCertified {
            model: self.name.clone(),
            reason: format!(
                "d2f vanishes or changes sign at {} grid nodes (min |d2f| = {:e}): {}",
                report.offending.len(),
                report.min_abs_d2f,
                listed.join(", ")
            ),
        })
    }
}

/// Model block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `"expr"` or a builtin name.
    pub kind: String,
    #[serde(default)]
    pub f: Option<String>,
    /// Frequency function for the enharmonic builtin, in the variable `s`.
    #[serde(default)]
    pub omega: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub domain: Option<[[f64; 2]; 2]>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<ModelDefinition> {
        let model = match self.kind.as_str() {
            "expr" => {
                let source = self.f.as_deref().ok_or_else(|| {
                    Error::InvalidInput("model kind `expr` needs an `f` expression".into())
                })?;
                let domain = self.domain.ok_or_else(|| {
                    Error::InvalidInput("model kind `expr` needs a `domain`".into())
                })?;
                return ModelDefinition::parse(
                    "expr",
                    source,
                    self.params.clone(),
                    Domain {
                        u: domain[0],
                        v: domain[1],
                    },
                );
            }
            "enharmonic" => ModelDefinition::enharmonic(
                self.omega.as_deref().unwrap_or("1"),
                self.params.clone(),
            )?,
            other => ModelDefinition::builtin(other)
                .ok_or_else(|| Error::InvalidInput(format!("unknown model kind `{other}`")))?,
        };
        Ok(match self.domain {
            Some(d) => model.with_domain(Domain { u: d[0], v: d[1] }),
            None => model,
        })
    }
}

/// Zeros of `x -> f(x, x)` on `interval`, bracketed on a uniform scan and
/// refined by bisection followed by Newton polishing.
pub fn find_equilibria(model: &ModelDefinition, interval: [f64; 2], samples: usize) -> Result<Vec<f64>> {
    let diag = |x: f64| model.eval(x, x);
    let diag_grad = |x: f64| -> Result<(f64, f64)> {
        let g = model.eval_with_grad(x, x)?;
        Ok((g.f, g.d1 + g.d2))
    };
    let n = samples.max(2);
    let xs: Vec<f64> = (0..=n)
        .map(|i| interval[0] + (interval[1] - interval[0]) * i as f64 / n as f64)
        .collect();
    let vals: Vec<f64> = xs.iter().map(|&x| diag(x)).collect::<Result<_>>()?;
    let mut roots: Vec<f64> = Vec::new();
    for i in 0..n {
        let (mut lo, mut hi) = (xs[i], xs[i + 1]);
        let (mut flo, fhi) = (vals[i], vals[i + 1]);
        if flo == 0.0 {
            roots.push(lo);
            continue;
        }
        if i + 1 == n && fhi == 0.0 {
            roots.push(hi);
            continue;
        }
        if flo * fhi > 0.0 || fhi == 0.0 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = diag(mid)?;
            if fm == 0.0 || hi - lo < 1e-15 * (1.0 + mid.abs()) {
                lo = mid;
                hi = mid;
                break;
            }
            if (fm > 0.0) == (flo > 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..3 {
            let (fx, dfx) = diag_grad(x)?;
            if fx == 0.0 || dfx == 0.0 {
                break;
            }
            x -= fx / dfx;
        }
        roots.push(x);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(roots)
}

/// The QRT map of the double well, `(u, v) -> (v, -u - 2v^2 / (2v^2 + 2v + 1))`.
/// It preserves every level set of `H` and maps `(x(t+1), x(t))` to
/// `(x(t), x(t-1))` along periodic solutions.
pub fn qrt_map(u: f64, v: f64) -> (f64, f64) {
    (v, -u - 2.0 * v * v / (2.0 * v * v + 2.0 * v + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_grad(g: Grad, expect: (f64, f64, f64)) {
        assert!((g.f - expect.0).abs() < 1e-15, "{g:?}");
        assert!((g.d1 - expect.1).abs() < 1e-15, "{g:?}");
        assert!((g.d2 - expect.2).abs() < 1e-15, "{g:?}");
    }

    #[test]
    fn builtin_gradients() {
        assert_grad(
            ModelDefinition::hutchinson_log().eval_with_grad(0.0, 0.0).unwrap(),
            (0.0, 0.0, -1.0),
        );
        assert_grad(
            ModelDefinition::qrt_doublewell().eval_with_grad(0.0, 0.0).unwrap(),
            (0.0, 0.0, -1.0),
        );
        let enh = ModelDefinition::enharmonic("1", BTreeMap::new()).unwrap();
        for a in [0.5, 1.0, 2.0] {
            assert_grad(enh.eval_with_grad(0.0, a).unwrap(), (-a, 0.0, -1.0));
        }
    }

    #[test]
    fn parse_hutchinson_forms() {
        let log = ModelDefinition::parse("h", "1 - exp(v)", BTreeMap::new(), Domain::square(-3.0, 3.0))
            .unwrap();
        let g = log.eval_with_grad(0.3, -0.4).unwrap();
        assert!((g.f - (1.0 - (-0.4f64).exp())).abs() < 1e-15);
        assert_eq!(g.d1, 0.0);
        let raw = ModelDefinition::parse("h", "u*(1-v)", BTreeMap::new(), Domain::square(-1.0, 1.0))
            .unwrap();
        let g = raw.eval_with_grad(2.0, 3.0).unwrap();
        assert_eq!((g.f, g.d1, g.d2), (-4.0, -2.0, -2.0));
    }

    #[test]
    fn certification_examples() {
        let qrt = ModelDefinition::qrt_doublewell().with_domain(Domain::square(-2.0, 2.0));
        let rep = qrt.certify_feedback(DEFAULT_CERT_CELLS).unwrap();
        assert!(rep.certified);
        assert_eq!(rep.sign, -1.0);
        assert!((rep.min_abs_d2f - 0.5).abs() < 1e-15, "{}", rep.min_abs_d2f);
        assert!((rep.argmin[0] + 0.5).abs() < 1e-15);

        let log = ModelDefinition::hutchinson_log().with_domain(Domain::square(-3.0, 3.0));
        let rep = log.certify_feedback(DEFAULT_CERT_CELLS).unwrap();
        assert!(rep.certified);
        assert_eq!(rep.sign, -1.0);

        let raw = ModelDefinition::hutchinson().with_domain(Domain::square(-1.0, 1.0));
        let rep = raw.certify_feedback(DEFAULT_CERT_CELLS).unwrap();
        assert!(!rep.certified);
        assert!(rep.offending.iter().any(|p| p[0] == 0.0));
        assert!(matches!(
            raw.require_certified(DEFAULT_CERT_CELLS),
            Err(Error::NotCertified { .. })
        ));
        for name in ["hutchinson-log", "hutchinson", "enharmonic", "qrt-doublewell"] {
            let m = ModelDefinition::builtin(name).unwrap();
            assert!(m.certify_feedback(64).unwrap().certified, "{name}");
        }
    }

    #[test]
    fn qrt_equilibria_and_saddle() {
        let qrt = ModelDefinition::qrt_doublewell();
        let eq = find_equilibria(&qrt, [-2.0, 1.0], 3001).unwrap();
        assert_eq!(eq.len(), 3, "{eq:?}");
        let expected = [-1.0, -0.5, 0.0];
        for (x, e) in eq.iter().zip(expected) {
            assert!((x - e).abs() < 1e-14, "{eq:?}");
        }
        assert!((qrt.hamiltonian(-0.5, -0.5).unwrap() - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn enharmonic_substitutes_omega() {
        let m = ModelDefinition::enharmonic("1 + s", BTreeMap::new()).unwrap();
        let (u, v) = (0.7f64, -1.3f64);
        let f = m.eval(u, v).unwrap();
        assert!((f + (1.0 + u * u + v * v) * v).abs() < 1e-14);
    }

    fn central(m: &ModelDefinition, u: f64, v: f64) -> (f64, f64) {
        let h = 1e-6;
        (
            (m.eval(u + h, v).unwrap() - m.eval(u - h, v).unwrap()) / (2.0 * h),
            (m.eval(u, v + h).unwrap() - m.eval(u, v - h).unwrap()) / (2.0 * h),
        )
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn dual_partials_match_central_differences(s in 0.0f64..1.0, t in 0.0f64..1.0, which in 0usize..5) {
            let parsed = ModelDefinition::parse(
                "p",
                "sin(u*v) + u^3/(2 + cos(v)) - sqrt(1 + u^2)*exp(-v/4)",
                BTreeMap::new(),
                Domain::square(-3.0, 3.0),
            ).unwrap();
            let m = match which {
                0 => ModelDefinition::hutchinson_log().with_domain(Domain::square(-3.0, 3.0)),
                1 => ModelDefinition::hutchinson().with_domain(Domain::square(0.01, 5.0)),
                2 => ModelDefinition::enharmonic("1 + s/2", BTreeMap::new()).unwrap()
                    .with_domain(Domain::square(-2.0, 2.0)),
                3 => ModelDefinition::qrt_doublewell(),
                _ => parsed,
            };
            let u = m.domain.u[0] + s * (m.domain.u[1] - m.domain.u[0]);
            let v = m.domain.v[0] + t * (m.domain.v[1] - m.domain.v[0]);
            let g = m.eval_with_grad(u, v).unwrap();
            let (c1, c2) = central(&m, u, v);
            prop_assert!(close(g.d1, c1), "d1 {} vs {}", g.d1, c1);
            prop_assert!(close(g.d2, c2), "d2 {} vs {}", g.d2, c2);
        }

        #[test]
        fn qrt_is_minus_dh_dv(u in -3.0f64..3.0, v in -3.0f64..3.0) {
            let m = ModelDefinition::qrt_doublewell();
            let grad = m.hamiltonian_grad(u, v).unwrap();
            prop_assert!((m.eval(u, v).unwrap() + grad[1]).abs() < 1e-12);
            prop_assert!((m.companion(u, v).unwrap() - grad[0]).abs() < 1e-12);
        }

        #[test]
        fn pretty_print_round_trip(s in 0.0f64..1.0, t in 0.0f64..1.0, which in 0usize..4) {
            let sources = [
                "1 - exp(v)",
                "-(2*u^2*v + u^2 + 2*u*v + v)",
                "u/(1 + v^2) - -u*2.5e-1 ^ 2",
                "-(u - v)^3 + log(2 + sin(u)) / sqrt(4 + v*v)",
            ];
            let m = ModelDefinition::parse("p", sources[which], BTreeMap::new(), Domain::square(-2.0, 2.0)).unwrap();
            let again = ModelDefinition::parse("p", &m.expression().to_string(), BTreeMap::new(), m.domain).unwrap();
            let (u, v) = (-2.0 + 4.0 * s, -2.0 + 4.0 * t);
            prop_assert_eq!(m.eval(u, v).unwrap(), again.eval(u, v).unwrap());
        }
    }
}
