//! Amplitude continuation of periodic orbits into branches `a -> (r(a), p(a))`,
//! classification of the branch ends, and the time-rescaled branch copies
//! `r -> (1 + m p) r`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BoundarySignal, Error, Result};
use crate::fourier::mirror;
use crate::model::{qrt_map, ModelDefinition};
use crate::orbit::{
    check_oscillation, orbit_residual, solve_orbit_with_stats, OrbitGuess, OrbitTarget, PeriodicOrbit,
    SolverOptions,
};

/// Amplitude minus depth below which a branch end counts as a Hopf point.
pub const HOPF_SPREAD_TOL: f64 = 1e-4;
/// Amplitude change between the last two orbits of a homoclinic approach.
pub const HOMOCLINIC_CAUCHY_TOL: f64 = 1e-5;

/// A root `(nu, r)` of `i nu = r (A + B e^{-i nu})` at an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfData {
    pub equilibrium: f64,
    pub nu: f64,
    pub delay: f64,
}

impl HopfData {
    pub fn period(&self) -> f64 {
        2.0 * PI / self.nu
    }

    /// `|i nu - r (A + e^{-i nu} B)|` at `(x, x)`.
    pub fn characteristic_residual(&self, model: &ModelDefinition) -> Result<f64> {
        let g = model.eval_with_grad(self.equilibrium, self.equilibrium)?;
        let re = -self.delay * (g.d1 + g.d2 * self.nu.cos());
        let im = self.nu + self.delay * g.d2 * self.nu.sin();
        Ok(re.hypot(im))
    }

    /// Starting guess `x + eps cos(2 pi s)` with the linear period.
    pub fn seed(&self, eps: f64, n: usize) -> OrbitGuess {
        OrbitGuess::hopf(self.equilibrium, self.nu, self.delay, eps, n)
    }
}

/// Hopf roots at the equilibrium `xbar`, ordered by frequency, at most `count`.
pub fn hopf_scan(model: &ModelDefinition, xbar: f64, count: usize) -> Result<Vec<HopfData>> {
    let g = model.eval_with_grad(xbar, xbar)?;
    if g.f.abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "{xbar} is not an equilibrium: f(x, x) = {:e}",
            g.f
        )));
    }
    let (a, b) = (g.d1, g.d2);
    if b == 0.0 || a.abs() > b.abs() {
        return Err(Error::NoHopfRoot(format!(
            "|A| = {:e} exceeds |B| = {:e}, so cos nu = -A/B has no solution",
            a.abs(),
            b.abs()
        )));
    }
    let nu0 = (-a / b).clamp(-1.0, 1.0).acos();
    let mut out = Vec::new();
    let mut k = 0;
    while out.len() < count && k < count + 2 {
        let base = 2.0 * PI * k as f64;
        for nu in [base + nu0, base + 2.0 * PI - nu0] {
            let s = nu.sin();
            // sin nu = 0 is the degenerate case A = -B (or A = B); no finite delay.
            if nu <= 0.0 || s.abs() < 1e-12 {
                continue;
            }
            out.push(HopfData {
                equilibrium: xbar,
                nu,
                delay: -nu / (b * s),
            });
        }
        k += 1;
    }
    out.sort_by(|x, y| x.nu.total_cmp(&y.nu));
    out.dedup_by(|x, y| (x.nu - y.nu).abs() < 1e-12);
    out.truncate(count);
    if out.is_empty() {
        return Err(Error::NoHopfRoot("only degenerate roots with sin nu = 0".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepPolicy {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    /// Step growth after a cheap Newton solve.
    pub grow: f64,
    /// Amplitude window `[lo, hi]`; reaching an edge ends the branch there.
    pub window: [f64; 2],
    pub max_orbits: usize,
    /// `|dp/da|` above which continuation switches to prescribed periods.
    pub switch_slope: f64,
    /// Period ratio between consecutive orbits once periods are prescribed.
    pub period_growth: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            initial: 0.02,
            min: 1e-8,
            max: 0.1,
            grow: 1.5,
            window: [-1e6, 1e6],
            max_orbits: 2000,
            switch_slope: 1e4,
            period_growth: 1.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    Hopf {
        hopf: HopfData,
        /// Delay and period extrapolated to zero oscillation size.
        extrapolated_delay: f64,
        extrapolated_period: f64,
    },
    Homoclinic {
        limit_amplitude: f64,
        /// Aitken extrapolation of the last three amplitudes; no error bound.
        aitken: f64,
        max_period: f64,
        cauchy: f64,
    },
    DomainEdge {
        amplitude: f64,
    },
    Unresolved {
        reason: String,
    },
}

impl Boundary {
    pub fn label(&self) -> &'static str {
        match self {
            Boundary::Hopf { .. } => "hopf",
            Boundary::Homoclinic { .. } => "homoclinic",
            Boundary::DomainEdge { .. } => "domain_edge",
            Boundary::Unresolved { .. } => "unresolved",
        }
    }
}

/// Orbits ordered by increasing amplitude, plus the orbits of prescribed
/// period that approach a homoclinic end (their amplitudes agree to many
/// digits, so they are kept apart from the amplitude grid).
#[derive(Debug, Clone)]
pub struct Branch {
    pub orbits: Vec<PeriodicOrbit>,
    pub lower: Boundary,
    pub upper: Boundary,
    /// Ordered away from the amplitude grid, toward the boundary.
    pub lower_approach: Vec<PeriodicOrbit>,
    pub upper_approach: Vec<PeriodicOrbit>,
    /// Rescaling copy; 0 is the slow branch.
    pub m_index: i64,
}

impl Branch {
    pub fn amplitude_domain(&self) -> (f64, f64) {
        let lo = self
            .lower_approach
            .last()
            .or(self.orbits.first())
            .map_or(f64::NAN, |o| o.amplitude);
        let hi = self
            .upper_approach
            .last()
            .or(self.orbits.last())
            .map_or(f64::NAN, |o| o.amplitude);
        (lo, hi)
    }

    /// Every orbit, from the lower end to the upper end.
    pub fn all_orbits(&self) -> impl DoubleEndedIterator<Item = &PeriodicOrbit> {
        self.lower_approach
            .iter()
            .rev()
            .chain(self.orbits.iter())
            .chain(self.upper_approach.iter())
    }

    pub fn len(&self) -> usize {
        self.orbits.len() + self.lower_approach.len() + self.upper_approach.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn amplitudes_increasing(&self) -> bool {
        self.orbits.windows(2).all(|w| w[1].amplitude > w[0].amplitude)
    }

    /// Solves for the orbit at delay `r`, seeded from the branch orbit
    /// whose delay is closest.
    pub fn orbit_at_delay(&self, model: &ModelDefinition, r: f64, opts: &SolverOptions) -> Result<PeriodicOrbit> {
        let seed = self
            .all_orbits()
            .min_by(|x, y| (x.delay - r).abs().total_cmp(&(y.delay - r).abs()))
            .ok_or_else(|| Error::InvalidInput("empty branch".into()))?;
        solve_orbit_with_stats(model, OrbitTarget::Delay(r), &seed.into(), opts).map(|(o, _)| o)
    }

    /// Orbits at `count` amplitudes spaced evenly over the main grid (the
    /// approach orbits are left out), interpolated from the bracketing pair.
    pub fn orbits_across(&self, model: &ModelDefinition, count: usize, opts: &SolverOptions) -> Result<Vec<PeriodicOrbit>> {
        let n = self.orbits.len();
        if n < 2 || count < 2 {
            return Err(Error::InvalidInput(format!("{n} branch orbits, {count} requested")));
        }
        let (lo, hi) = (self.orbits[0].amplitude, self.orbits[n - 1].amplitude);
        (0..count)
            .into_par_iter()
            .map(|k| {
                let a = lo + (hi - lo) * k as f64 / (count - 1) as f64;
                let j = self.orbits.partition_point(|o| o.amplitude <= a).clamp(1, n - 1);
                let (left, right) = (&self.orbits[j - 1], &self.orbits[j]);
                if a == left.amplitude {
                    return Ok(left.clone());
                }
                if a == right.amplitude {
                    return Ok(right.clone());
                }
                let guess = OrbitGuess::secant(left, right, a);
                solve_orbit_with_stats(model, OrbitTarget::Amplitude(a), &guess, opts).map(|(o, _)| o)
            })
            .collect()
    }
}

enum Stop {
    Edge,
    Signal,
    Stall(String),
}

/// One-sided continuation from `seed`; the end in the other direction is
/// left `Unresolved`.
pub fn continue_branch(
    model: &ModelDefinition,
    seed: &PeriodicOrbit,
    direction: Direction,
    policy: &StepPolicy,
    opts: &SolverOptions,
) -> Result<Branch> {
    let (mut orbits, approach, boundary) = march(model, seed, direction, policy, opts)?;
    let open = Boundary::Unresolved {
        reason: "continuation not run in this direction".into(),
    };
    Ok(match direction {
        Direction::Up => Branch {
            orbits,
            lower: open,
            upper: boundary,
            lower_approach: Vec::new(),
            upper_approach: approach,
            m_index: 0,
        },
        Direction::Down => {
            orbits.reverse();
            Branch {
                orbits,
                lower: boundary,
                upper: open,
                lower_approach: approach,
                upper_approach: Vec::new(),
                m_index: 0,
            }
        }
    })
}

/// Continues in both directions from `seed` (concurrently) and joins.
pub fn trace_branch(
    model: &ModelDefinition,
    seed: &PeriodicOrbit,
    policy: &StepPolicy,
    opts: &SolverOptions,
) -> Result<Branch> {
    let (down, up) = rayon::join(
        || continue_branch(model, seed, Direction::Down, policy, opts),
        || continue_branch(model, seed, Direction::Up, policy, opts),
    );
    let (down, up) = (down?, up?);
    let mut orbits = down.orbits;
    orbits.extend(up.orbits.into_iter().skip(1));
    Ok(Branch {
        orbits,
        lower: down.lower,
        upper: up.upper,
        lower_approach: down.lower_approach,
        upper_approach: up.upper_approach,
        m_index: 0,
    })
}

/// Solves the first orbit of a branch born at a Hopf point.
pub fn orbit_from_hopf(
    model: &ModelDefinition,
    hopf: &HopfData,
    eps: f64,
    opts: &SolverOptions,
) -> Result<PeriodicOrbit> {
    let guess = hopf.seed(eps, opts.n_modes);
    solve_orbit_with_stats(model, OrbitTarget::Amplitude(hopf.equilibrium + eps), &guess, opts).map(|(o, _)| o)
}

type MarchOutcome = (Vec<PeriodicOrbit>, Vec<PeriodicOrbit>, Boundary);

fn march(
    model: &ModelDefinition,
    seed: &PeriodicOrbit,
    direction: Direction,
    policy: &StepPolicy,
    opts: &SolverOptions,
) -> Result<MarchOutcome> {
    let sigma = direction.sign();
    let edge = if sigma > 0.0 { policy.window[1] } else { policy.window[0] };
    let mut orbits = vec![seed.clone()];
    let mut approach = Vec::new();
    let mut h = policy.initial;
    let stop = loop {
        let last = orbits.last().expect("nonempty");
        if last.amplitude - last.depth < HOPF_SPREAD_TOL {
            break Stop::Signal;
        }
        if (edge - last.amplitude) * sigma <= 0.0 {
            break Stop::Edge;
        }
        if orbits.len() >= policy.max_orbits {
            break Stop::Stall(format!("orbit budget of {} exhausted", policy.max_orbits));
        }
        let mut a_next = last.amplitude + sigma * h;
        if (a_next - edge) * sigma >= 0.0 {
            a_next = edge;
        }
        if sigma < 0.0 {
            // Never more than halve the distance to the oscillation centre.
            let centre = 0.5 * (last.amplitude + last.depth);
            a_next = a_next.max(centre + 0.5 * (last.amplitude - centre));
        }
        let guess = match orbits.len() {
            1 => OrbitGuess::from(last),
            k => OrbitGuess::secant(&orbits[k - 2], last, a_next),
        };
        let accepted = match solve_orbit_with_stats(model, OrbitTarget::Amplitude(a_next), &guess, opts) {
            Ok((orbit, stats)) if plausible(model, &guess, &orbit) => Some((orbit, stats.iterations)),
            Ok(_) => None,
            Err(Error::Boundary(BoundarySignal::Equilibrium { .. } | BoundarySignal::Collapse { .. })) => None,
            Err(e @ (Error::Eval { .. } | Error::Linalg(_))) if orbits.len() == 1 => return Err(e),
            Err(e) => {
                log::debug!("continuation step to a = {a_next} failed: {e}");
                None
            }
        };
        match accepted {
            Some((orbit, iterations)) => {
                let prev = orbits.last().expect("nonempty");
                let slope = ((orbit.period - prev.period) / (orbit.amplitude - prev.amplitude)).abs();
                let growing = (orbit.period - prev.period) > 0.0;
                orbits.push(orbit);
                if iterations <= 4 {
                    h = (h * policy.grow).min(policy.max);
                }
                if growing && slope > policy.switch_slope {
                    approach = period_leg(model, &orbits, sigma, policy, opts);
                    break Stop::Signal;
                }
            }
            None => {
                h *= 0.5;
                if h < policy.min {
                    let n = orbits.len();
                    if n >= 3 && orbits[n - 1].period > orbits[n - 2].period && orbits[n - 2].period > orbits[n - 3].period
                    {
                        approach = period_leg(model, &orbits, sigma, policy, opts);
                        break Stop::Signal;
                    }
                    let last = orbits.last().expect("nonempty");
                    break Stop::Stall(format!(
                        "step underflow at a = {}, p = {}, r = {}",
                        last.amplitude, last.period, last.delay
                    ));
                }
            }
        }
    };
    let mut tail: Vec<PeriodicOrbit> = orbits.iter().rev().take(5).rev().cloned().collect();
    tail.extend(approach.iter().cloned());
    let boundary = match stop {
        Stop::Edge => classify_boundary(model, &tail, true, opts.p_max),
        Stop::Signal => classify_boundary(model, &tail, false, opts.p_max),
        Stop::Stall(reason) => match classify_boundary(model, &tail, false, opts.p_max) {
            Boundary::Unresolved { reason: r2 } => Boundary::Unresolved {
                reason: format!("{reason}; {r2}"),
            },
            b => b,
        },
    };
    Ok((orbits, approach, boundary))
}

/// Rejects converged orbits that jumped to another branch or fail the
/// oscillation structure.
fn plausible(model: &ModelDefinition, guess: &OrbitGuess, orbit: &PeriodicOrbit) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 0.25 * y.abs() + 1e-3;
    close(orbit.period, guess.period)
        && close(orbit.delay, guess.delay)
        && check_oscillation(model, orbit).is_ok_and(|rep| rep.passed())
}

/// Prescribed-period continuation toward a homoclinic end, geometric in `p`
/// up to (just past) `p_max`.
fn period_leg(
    model: &ModelDefinition,
    orbits: &[PeriodicOrbit],
    sigma: f64,
    policy: &StepPolicy,
    opts: &SolverOptions,
) -> Vec<PeriodicOrbit> {
    let leg_opts = SolverOptions {
        p_max: opts.p_max * 1.01,
        ..opts.clone()
    };
    let cap = opts.p_max * (1.0 + 1e-3);
    let n = orbits.len();
    let mut prev = orbits[n.saturating_sub(2)].clone();
    let mut cur = orbits[n - 1].clone();
    let mut out = Vec::new();
    let mut factor = policy.period_growth;
    while cur.period < opts.p_max {
        let target = (cur.period * factor).min(cap);
        let dp = cur.period - prev.period;
        let slope = if dp.abs() > 0.0 { (cur.delay - prev.delay) / dp } else { 0.0 };
        let guess = OrbitGuess {
            profile: cur.profile.clone(),
            period: target,
            delay: cur.delay + slope * (target - cur.period),
        };
        let step = solve_orbit_with_stats(model, OrbitTarget::Period(target), &guess, &leg_opts);
        match step {
            Ok((orbit, _))
                if (orbit.amplitude - cur.amplitude) * sigma > -1e-12
                    && check_oscillation(model, &orbit).is_ok_and(|r| r.passed()) =>
            {
                log::debug!("homoclinic approach: p = {}, a = {}", orbit.period, orbit.amplitude);
                prev = std::mem::replace(&mut cur, orbit.clone());
                out.push(orbit);
                factor = (factor * factor).min(policy.period_growth);
            }
            other => {
                if let Err(e) = other {
                    log::debug!("period step to {target} failed: {e}");
                }
                factor = factor.sqrt();
                if factor < 1.0005 {
                    break;
                }
            }
        }
    }
    out
}

/// Decides what ends a branch from its last orbits (at least five, ordered
/// toward the end).
pub fn classify_boundary(model: &ModelDefinition, tail: &[PeriodicOrbit], window_edge: bool, p_max: f64) -> Boundary {
    let Some(last) = tail.last() else {
        return Boundary::Unresolved {
            reason: "no orbits".into(),
        };
    };
    let spread = last.amplitude - last.depth;
    let hopf_signal = spread < HOPF_SPREAD_TOL;
    let cauchy = match tail.len() {
        0 | 1 => f64::INFINITY,
        k => (tail[k - 1].amplitude - tail[k - 2].amplitude).abs(),
    };
    let homoclinic_signal = last.period >= p_max && cauchy < HOMOCLINIC_CAUCHY_TOL;
    if hopf_signal && homoclinic_signal {
        return Boundary::Unresolved {
            reason: format!(
                "contradictory signals: amplitude - depth = {spread:e} (Hopf) and p = {} with amplitude change {cauchy:e} (homoclinic)",
                last.period
            ),
        };
    }
    if (hopf_signal || homoclinic_signal) && tail.len() < 5 {
        return Boundary::Unresolved {
            reason: format!("only {} orbits near the end, need 5", tail.len()),
        };
    }
    if hopf_signal {
        return match hopf_limit(model, tail) {
            Ok(b) => b,
            Err(e) => Boundary::Unresolved {
                reason: format!("oscillation collapsed (amplitude - depth = {spread:e}) but {e}"),
            },
        };
    }
    if homoclinic_signal {
        let k = tail.len();
        let (a0, a1, a2) = (tail[k - 3].amplitude, tail[k - 2].amplitude, tail[k - 1].amplitude);
        return Boundary::Homoclinic {
            limit_amplitude: a2,
            aitken: aitken(a0, a1, a2),
            max_period: last.period,
            cauchy,
        };
    }
    if window_edge {
        return Boundary::DomainEdge {
            amplitude: last.amplitude,
        };
    }
    Boundary::Unresolved {
        reason: format!(
            "no boundary signal at a = {}: amplitude - depth = {spread:e}, p = {} (p_max {p_max}), amplitude change {cauchy:e}",
            last.amplitude, last.period
        ),
    }
}

/// Aitken's delta-squared estimate of the limit of `x0, x1, x2`.
pub fn aitken(x0: f64, x1: f64, x2: f64) -> f64 {
    let den = x2 - 2.0 * x1 + x0;
    if den.abs() < 1e-300 || !den.is_finite() {
        return x2;
    }
    let est = x2 - (x2 - x1).powi(2) / den;
    if est.is_finite() {
        est
    } else {
        x2
    }
}

/// Value at zero of the quadratic through `(s_i, y_i)`, `i < 3`.
fn extrapolate_to_zero(s: [f64; 3], y: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        let mut w = 1.0;
        for j in 0..3 {
            if i != j {
                w *= -s[j] / (s[i] - s[j]);
            }
        }
        acc += w * y[i];
    }
    acc
}

fn hopf_limit(model: &ModelDefinition, tail: &[PeriodicOrbit]) -> Result<Boundary> {
    let k = tail.len();
    let pick = |f: &dyn Fn(&PeriodicOrbit) -> f64| [f(&tail[k - 3]), f(&tail[k - 2]), f(&tail[k - 1])];
    let s = pick(&|o| o.amplitude - o.depth);
    if s[0] == s[1] || s[1] == s[2] || s[0] == s[2] {
        return Err(Error::InvalidInput("repeated oscillation sizes".into()));
    }
    let centre = extrapolate_to_zero(s, pick(&|o| 0.5 * (o.amplitude + o.depth)));
    let r_lim = extrapolate_to_zero(s, pick(&|o| o.delay));
    let p_lim = extrapolate_to_zero(s, pick(&|o| o.period));
    let mut x = centre;
    for _ in 0..30 {
        let g = model.eval_with_grad(x, x)?;
        let slope = g.d1 + g.d2;
        if slope == 0.0 {
            break;
        }
        let dx = g.f / slope;
        x -= dx;
        if dx.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    let fx = model.eval(x, x)?;
    if fx.abs() > 1e-10 || (x - centre).abs() > 1e-2 {
        return Err(Error::NoHopfRoot(format!(
            "no equilibrium near the collapse centre {centre} (f = {fx:e} at {x})"
        )));
    }
    let roots = hopf_scan(model, x, 8)?;
    let hopf = roots
        .into_iter()
        .min_by(|u, v| (u.delay - r_lim).abs().total_cmp(&(v.delay - r_lim).abs()))
        .expect("hopf_scan returns at least one root");
    Ok(Boundary::Hopf {
        hopf,
        extrapolated_delay: r_lim,
        extrapolated_period: p_lim,
    })
}

/// The orbit `x((1 + m p) t)`, a solution at delay `(1 + m p) r` with the
/// same planar projection.
pub fn rescale_orbit(model: &ModelDefinition, orbit: &PeriodicOrbit, m: i64) -> Result<PeriodicOrbit> {
    let c = 1.0 + m as f64 * orbit.period;
    if c.abs() < 1e-12 {
        return Err(Error::SingularRescaling { m, factor: c });
    }
    if m == 0 {
        return Ok(orbit.clone());
    }
    let profile = if c > 0.0 {
        orbit.profile.clone()
    } else {
        mirror(&orbit.profile)
    };
    let mut out = PeriodicOrbit::from_profile(model, profile, orbit.period / c.abs(), c * orbit.delay)?;
    out.residual = orbit_residual(model, &out, 4 * out.modes())?;
    Ok(out)
}

/// Applies [`rescale_orbit`] to every orbit; errors if `1 + m p` vanishes or
/// changes sign along the branch.
pub fn rescale_branch(model: &ModelDefinition, branch: &Branch, m: i64) -> Result<Branch> {
    let factors: Vec<f64> = branch.all_orbits().map(|o| 1.0 + m as f64 * o.period).collect();
    if let Some(&c) = factors.iter().find(|c| c.abs() < 1e-12) {
        return Err(Error::SingularRescaling { m, factor: c });
    }
    if factors.iter().any(|c| *c > 0.0) && factors.iter().any(|c| *c < 0.0) {
        return Err(Error::SingularRescaling { m, factor: 0.0 });
    }
    let map = |list: &[PeriodicOrbit]| -> Result<Vec<PeriodicOrbit>> {
        use rayon::prelude::*;
        list.par_iter().map(|o| rescale_orbit(model, o, m)).collect()
    };
    let map_boundary = |b: &Boundary| match b {
        Boundary::Hopf {
            hopf,
            extrapolated_delay,
            extrapolated_period,
        } => {
            let c = 1.0 + m as f64 * hopf.period();
            Boundary::Hopf {
                hopf: HopfData {
                    equilibrium: hopf.equilibrium,
                    nu: (hopf.nu * c).abs(),
                    delay: hopf.delay * c,
                },
                extrapolated_delay: extrapolated_delay * (1.0 + m as f64 * extrapolated_period),
                extrapolated_period: extrapolated_period / (1.0 + m as f64 * extrapolated_period).abs(),
            }
        }
        Boundary::Homoclinic {
            limit_amplitude,
            aitken,
            max_period,
            cauchy,
        } => Boundary::Homoclinic {
            limit_amplitude: *limit_amplitude,
            aitken: *aitken,
            max_period: max_period / (1.0 + m as f64 * max_period).abs(),
            cauchy: *cauchy,
        },
        other => other.clone(),
    };
    Ok(Branch {
        orbits: map(&branch.orbits)?,
        lower: map_boundary(&branch.lower),
        upper: map_boundary(&branch.upper),
        lower_approach: map(&branch.lower_approach)?,
        upper_approach: map(&branch.upper_approach)?,
        m_index: branch.m_index + m,
    })
}

/// Seed for the double well at amplitude `a`, from its Hamiltonian flow.
///
/// Along a periodic solution `(x(t), x(t-1))` moves on a level set of `H`
/// under `u' = r f`, `v' = r g`, and the QRT map is the time `-1` map. So
/// `r` is the unit-rate flow time from the QRT image of the maximum point to
/// the maximum point, and `p = T / r` with `T` the unit-rate period.
pub fn qrt_seed(model: &ModelDefinition, a: f64, n: usize) -> Result<OrbitGuess> {
    if model.companion(0.0, 0.0).is_none() {
        return Err(Error::InvalidInput(format!(
            "model `{}` carries no Hamiltonian",
            model.name
        )));
    }
    let field = |u: f64, v: f64| -> Result<[f64; 2]> {
        let g = model
            .companion(u, v)
            .ok_or_else(|| Error::InvalidInput("companion field evaluation failed".into()))?;
        Ok([model.eval(u, v)?, g])
    };
    // Maximum point: u' = 0, i.e. f(a, v) = 0.
    let mut v0 = 0.0;
    for _ in 0..50 {
        let g = model.eval_with_grad(a, v0)?;
        let dv = g.f / g.d2;
        v0 -= dv;
        if dv.abs() < 1e-15 * (1.0 + v0.abs()) {
            break;
        }
    }
    let start = [a, v0];
    if field(a, v0)?[1] <= 0.0 {
        return Err(Error::InvalidInput(format!("({a}, {v0}) is not a maximum point of a level set")));
    }
    // Unit-rate period from the first return to v = v0 moving upward.
    let dt = 1e-3;
    let (period, _) = first_crossing(&field, start, dt, |q| q[1] - v0, true, 1e5)?;
    // Exact-grid pass for the profile.
    let n = crate::fourier::odd_size(n);
    let sub = ((period / n as f64) / 2e-4).ceil().max(1.0) as usize;
    let h = period / (n * sub) as f64;
    let mut q = start;
    let mut profile = Vec::with_capacity(n);
    for _ in 0..n {
        profile.push(q[0]);
        for _ in 0..sub {
            q = rk4(&field, q, h)?;
        }
    }
    // Delay: backward time to the QRT image of the maximum point.
    let target = qrt_map(a, v0);
    let mut best: Option<(f64, f64)> = None;
    let mut q = start;
    let mut t = 0.0;
    let back = -1e-3;
    while t < period {
        let next = rk4(&field, q, back)?;
        if (q[0] - target.0) * (next[0] - target.0) <= 0.0 && (next[0] - q[0]).abs() > 0.0 {
            let tau = refine_crossing(&field, q, back, |z| z[0] - target.0)?;
            let z = rk4(&field, q, tau)?;
            let dist = (z[1] - target.1).abs();
            if best.is_none_or(|b| dist < b.1) {
                best = Some((t + tau.abs(), dist));
            }
        }
        q = next;
        t += back.abs();
    }
    let (r, dist) = best.ok_or_else(|| Error::InvalidInput("QRT image not reached".into()))?;
    if dist > 1e-6 {
        return Err(Error::InvalidInput(format!("QRT image missed by {dist:e}")));
    }
    Ok(OrbitGuess {
        profile,
        period: period / r,
        delay: r,
    })
}

fn rk4(field: &impl Fn(f64, f64) -> Result<[f64; 2]>, q: [f64; 2], h: f64) -> Result<[f64; 2]> {
    let k1 = field(q[0], q[1])?;
    let k2 = field(q[0] + 0.5 * h * k1[0], q[1] + 0.5 * h * k1[1])?;
    let k3 = field(q[0] + 0.5 * h * k2[0], q[1] + 0.5 * h * k2[1])?;
    let k4 = field(q[0] + h * k3[0], q[1] + h * k3[1])?;
    Ok([
        q[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        q[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ])
}

/// Sub-step `tau` (same sign as `h`) at which `phi` vanishes within one step.
fn refine_crossing(
    field: &impl Fn(f64, f64) -> Result<[f64; 2]>,
    q: [f64; 2],
    h: f64,
    phi: impl Fn([f64; 2]) -> f64,
) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, h);
    let f_lo = phi(q);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fm = phi(rk4(field, q, mid)?);
        if (fm > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-17 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// First time `phi` crosses zero with the given direction after leaving `q`.
fn first_crossing(
    field: &impl Fn(f64, f64) -> Result<[f64; 2]>,
    start: [f64; 2],
    h: f64,
    phi: impl Fn([f64; 2]) -> f64 + Copy,
    upward: bool,
    t_max: f64,
) -> Result<(f64, [f64; 2])> {
    let mut q = rk4(field, start, h)?;
    let mut t = h;
    while t < t_max {
        let next = rk4(field, q, h)?;
        let (a, b) = (phi(q), phi(next));
        if (upward && a < 0.0 && b >= 0.0) || (!upward && a > 0.0 && b <= 0.0) {
            let tau = refine_crossing(field, q, h, phi)?;
            return Ok((t + tau, rk4(field, q, tau)?));
        }
        q = next;
        t += h;
    }
    Err(Error::InvalidInput("level set did not close".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn hopf_roots_of_negative_feedback() {
        let model = ModelDefinition::hutchinson_log();
        let roots = hopf_scan(&model, 0.0, 3).unwrap();
        let expect = [(FRAC_PI_2, FRAC_PI_2), (1.5 * PI, -1.5 * PI), (2.5 * PI, 2.5 * PI)];
        for (h, (nu, r)) in roots.iter().zip(expect) {
            assert!((h.nu - nu).abs() < 1e-14 && (h.delay - r).abs() < 1e-14, "{h:?}");
            assert!(h.characteristic_residual(&model).unwrap() < 1e-10);
        }
        assert!((roots[0].period() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn saddle_has_no_hopf_root() {
        let qrt = ModelDefinition::qrt_doublewell();
        assert!(matches!(hopf_scan(&qrt, -0.5, 3), Err(Error::NoHopfRoot(_))));
        assert!(matches!(hopf_scan(&qrt, 0.3, 3), Err(Error::InvalidInput(_))));
        let h = hopf_scan(&qrt, -1.0, 1).unwrap()[0];
        assert!((h.delay - FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn aitken_recovers_geometric_limit() {
        let x = |k: i32| 2.0 + 0.3 * 0.5f64.powi(k);
        assert!((aitken(x(1), x(2), x(3)) - 2.0).abs() < 1e-14);
        assert_eq!(aitken(1.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn rescaled_enharmonic_orbits() {
        let model = ModelDefinition::enharmonic("1", BTreeMap::new()).unwrap();
        let hopf = hopf_scan(&model, 0.0, 1).unwrap()[0];
        let opts = SolverOptions {
            n_modes: 33,
            ..Default::default()
        };
        let guess = OrbitGuess::hopf(0.0, hopf.nu, hopf.delay, 0.9, 33);
        let (o, _) = solve_orbit_with_stats(&model, OrbitTarget::Amplitude(1.0), &guess, &opts).unwrap();
        let same = rescale_orbit(&model, &o, 0).unwrap();
        assert_eq!(same.profile, o.profile);
        let up = rescale_orbit(&model, &o, 1).unwrap();
        assert!((up.delay - 2.5 * PI).abs() < 1e-8 && (up.period - 0.8).abs() < 1e-8);
        let down = rescale_orbit(&model, &o, -1).unwrap();
        assert!((down.delay + 1.5 * PI).abs() < 1e-8 && (down.period - 4.0 / 3.0).abs() < 1e-8);
        for r in [&up, &down] {
            assert!(r.residual < 1e-9);
            assert!(((r.period * r.delay).abs() - o.period * o.delay).abs() < 1e-12);
            assert!(check_oscillation(&model, r).unwrap().passed());
        }
    }

    #[test]
    fn qrt_seed_matches_linearization_near_the_centre() {
        let qrt = ModelDefinition::qrt_doublewell();
        let g = qrt_seed(&qrt, 1e-3, 65).unwrap();
        assert!((g.delay - FRAC_PI_2).abs() < 1e-2, "{}", g.delay);
        assert!((g.period - 4.0).abs() < 1e-2, "{}", g.period);
        assert!((g.profile[0] - 1e-3).abs() < 1e-15);
    }
}
