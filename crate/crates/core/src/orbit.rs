//! Periodic solutions in normalized form: `x(t) = X(t / p)` with `X` of period
//! one, maximum `X(0) = a`, solving `X'(s) = p r f(X(s), X(s - 1/p))`.
//!
//! The boundary value problem is discretized by trigonometric collocation on
//! an odd grid and solved by damped Newton with an analytic Jacobian.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{BoundarySignal, Error, Result};
use crate::fourier::{diff_row, odd_size, shift_row, TrigInterpolant};
use crate::linalg::solve_checked;
use crate::model::ModelDefinition;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Requested collocation size; rounded up to odd.
    pub n_modes: usize,
    /// Bound on the real-time collocation residual `max |x' - r f|`.
    pub newton_tol: f64,
    pub p_max: f64,
    pub max_iterations: usize,
    /// Grid refinement `N -> 2N - 1` stops here.
    pub max_modes: usize,
    /// Refine while the top eighth of the spectrum exceeds this fraction.
    pub tail_tol: f64,
    /// Amplitude minus depth below this is a collapse onto an equilibrium.
    pub collapse_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_modes: 128,
            newton_tol: 1e-10,
            p_max: 200.0,
            max_iterations: 40,
            max_modes: 4097,
            tail_tol: 5e-14,
            collapse_tol: 1e-6,
        }
    }
}

/// Which scalar is prescribed; the other two of `(a, p, r)` are unknowns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrbitTarget {
    Amplitude(f64),
    Delay(f64),
    Period(f64),
}

/// Starting point for Newton: a normalized profile with period and delay.
#[derive(Debug, Clone)]
pub struct OrbitGuess {
    pub profile: Vec<f64>,
    pub period: f64,
    pub delay: f64,
}

impl OrbitGuess {
    /// Small cosine around an equilibrium, `xbar + eps cos(2 pi s)`.
    pub fn hopf(equilibrium: f64, nu: f64, delay: f64, eps: f64, n: usize) -> Self {
        let n = odd_size(n);
        Self {
            profile: (0..n)
                .map(|j| equilibrium + eps * (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos())
                .collect(),
            period: 2.0 * std::f64::consts::PI / nu,
            delay,
        }
    }

    /// Linear extrapolation through two orbits, evaluated at amplitude `a`.
    pub fn secant(prev: &PeriodicOrbit, last: &PeriodicOrbit, a: f64) -> Self {
        let da = last.amplitude - prev.amplitude;
        let w = if da == 0.0 { 0.0 } else { (a - last.amplitude) / da };
        let n = last.profile.len().max(prev.profile.len());
        let x1 = last.samples(n);
        let x0 = prev.samples(n);
        Self {
            profile: x1.iter().zip(&x0).map(|(b, a0)| b + w * (b - a0)).collect(),
            period: last.period + w * (last.period - prev.period),
            delay: last.delay + w * (last.delay - prev.delay),
        }
    }
}

impl From<&PeriodicOrbit> for OrbitGuess {
    fn from(o: &PeriodicOrbit) -> Self {
        Self {
            profile: o.profile.clone(),
            period: o.period,
            delay: o.delay,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub amplitude: f64,
    pub depth: f64,
    pub period: f64,
    pub delay: f64,
    pub time_of_depth: f64,
    /// Collocation residual in real time.
    pub residual: f64,
    pub n_index: u32,
    /// Samples of the normalized profile at `s_j = j / N`.
    pub profile: Vec<f64>,
    interp: TrigInterpolant,
}

/// Serialized form of a [`PeriodicOrbit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub a: f64,
    pub p: f64,
    pub r: f64,
    pub q: f64,
    pub depth: f64,
    pub residual: f64,
    pub n_index: u32,
    pub profile: Vec<f64>,
}

/// `n` with `p` in `J_n = (2/n, 2/(n-1))`.
pub fn period_interval_index(p: f64) -> u32 {
    (2.0 / p).floor() as u32 + 1
}

impl PeriodicOrbit {
    /// Builds an orbit from a converged normalized profile (maximum at `s = 0`).
    pub fn from_profile(model: &ModelDefinition, profile: Vec<f64>, period: f64, delay: f64) -> Result<Self> {
        if profile.len() % 2 == 0 || profile.len() < 5 {
            return Err(Error::InvalidInput(format!(
                "profile needs an odd number (>= 5) of samples, got {}",
                profile.len()
            )));
        }
        let interp = TrigInterpolant::from_samples(&profile);
        let mut orbit = Self {
            amplitude: profile[0],
            depth: profile[0],
            period,
            delay,
            time_of_depth: 0.0,
            residual: 0.0,
            n_index: period_interval_index(period),
            profile,
            interp,
        };
        let (q, depth) = locate_depth(&orbit)?;
        orbit.time_of_depth = q;
        orbit.depth = depth;
        orbit.residual = collocation_residual(model, &orbit.profile, period, delay)?.0;
        Ok(orbit)
    }

    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(
        profile: Vec<f64>,
        period: f64,
        delay: f64,
        time_of_depth: f64,
        depth: f64,
        residual: f64,
    ) -> Self {
        let interp = TrigInterpolant::from_samples(&profile);
        Self {
            amplitude: profile[0],
            depth,
            period,
            delay,
            time_of_depth,
            residual,
            n_index: period_interval_index(period),
            profile,
            interp,
        }
    }

    pub fn from_record(model: &ModelDefinition, rec: &OrbitRecord) -> Result<Self> {
        Self::from_profile(model, rec.profile.clone(), rec.p, rec.r)
    }

    pub fn record(&self) -> OrbitRecord {
        OrbitRecord {
            a: self.amplitude,
            p: self.period,
            r: self.delay,
            q: self.time_of_depth,
            depth: self.depth,
            residual: self.residual,
            n_index: self.n_index,
            profile: self.profile.clone(),
        }
    }

    pub fn interpolant(&self) -> &TrigInterpolant {
        &self.interp
    }

    pub fn modes(&self) -> usize {
        self.profile.len()
    }

    /// Profile resampled on an `n`-point grid (`n` odd).
    pub fn samples(&self, n: usize) -> Vec<f64> {
        if n == self.profile.len() {
            self.profile.clone()
        } else {
            self.interp.samples(n)
        }
    }

    /// `x(t)` in real time.
    pub fn x(&self, t: f64) -> f64 {
        self.interp.eval(t / self.period)
    }

    pub fn dx(&self, t: f64) -> f64 {
        self.interp.eval_deriv(t / self.period, 1) / self.period
    }

    pub fn ddx(&self, t: f64) -> f64 {
        self.interp.eval_deriv(t / self.period, 2) / (self.period * self.period)
    }

    /// The planar projection `(x(t), x(t - 1))`.
    pub fn planar(&self, t: f64) -> (f64, f64) {
        (self.x(t), self.x(t - 1.0))
    }
}

/// Collocation residual: `(max_j |X'_j - p r f_j| / p, per-node values)`.
pub fn collocation_residual(
    model: &ModelDefinition,
    profile: &[f64],
    p: f64,
    r: f64,
) -> Result<(f64, Vec<f64>)> {
    let interp = TrigInterpolant::from_samples(profile);
    let dx = interp.derivative_samples();
    let y = interp.shifted_samples(1.0 / p);
    let mut res = Vec::with_capacity(profile.len());
    for j in 0..profile.len() {
        res.push(dx[j] - p * r * model.eval(profile[j], y[j])?);
    }
    let worst = res.iter().fold(0.0f64, |m, v| m.max(v.abs())) / p;
    Ok((worst, res))
}

/// Real-time residual `max |x' - r f(x, x(t-1))|` on `m` points staggered
/// between collocation nodes (`m >= 4N` recommended).
pub fn orbit_residual(model: &ModelDefinition, orbit: &PeriodicOrbit, m: usize) -> Result<f64> {
    let m = m.max(orbit.modes());
    let off = 0.5 / m as f64;
    let interp = orbit.interpolant();
    let x = interp.grid_values(m, 0, off);
    let dx = interp.grid_values(m, 1, off);
    let y = interp.grid_values(m, 0, off - 1.0 / orbit.period);
    let (p, r) = (orbit.period, orbit.delay);
    let mut worst: f64 = 0.0;
    for i in 0..m {
        worst = worst.max((dx[i] / p - r * model.eval(x[i], y[i])?).abs());
    }
    Ok(worst)
}

/// Relative size below which derivative samples are treated as zero when
/// counting critical points; near a homoclinic loop the profile is flat to
/// rounding level along the plateau by the saddle.
pub const DERIVATIVE_FLOOR: f64 = 1e-8;

/// Time of depth `q` (real time) and the depth value; errors unless the
/// profile has exactly one maximum (at `s = 0`) and one minimum per period.
pub fn locate_depth(orbit: &PeriodicOrbit) -> Result<(f64, f64)> {
    let interp = orbit.interpolant();
    let m = (8 * orbit.modes()).max(2048);
    let off = 0.5 / m as f64;
    let d = interp.grid_values(m, 1, off);
    let floor = DERIVATIVE_FLOOR * d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let significant: Vec<usize> = (0..m).filter(|&i| d[i].abs() > floor).collect();
    if significant.is_empty() {
        return Err(Error::NotSimpleOscillation("constant profile".into()));
    }
    // Sign changes between consecutive significant samples (cyclically),
    // as (last index before, first index after, rising).
    let mut changes = Vec::new();
    for (k, &i) in significant.iter().enumerate() {
        let j = significant[(k + 1) % significant.len()];
        if (d[i] > 0.0) != (d[j] > 0.0) {
            changes.push((i, j, d[i] < 0.0));
        }
    }
    if changes.len() != 2 {
        return Err(Error::NotSimpleOscillation(format!(
            "derivative changes sign {} times per period",
            changes.len()
        )));
    }
    let &(lo_i, hi_i, _) = changes.iter().find(|c| c.2).expect("one rising change");
    let &(max_i, max_j, _) = changes.iter().find(|c| !c.2).expect("one falling change");
    // The maximum must sit at s = 0, i.e. between the last and first nodes.
    if !(max_i == m - 1 || max_j == 0 || max_i > max_j) {
        return Err(Error::NotSimpleOscillation(format!(
            "maximum not at s = 0 (near s = {:.6})",
            (max_i as f64 + 1.0) / m as f64
        )));
    }
    let curv_max = interp.eval_deriv(0.0, 2);
    let scale = (orbit.amplitude - orbit.profile.iter().fold(f64::INFINITY, |a, &v| a.min(v))).max(1e-300);
    let flat_top = (max_j + m - max_i) % m > 1;
    if !flat_top && curv_max >= -1e-10 * scale {
        return Err(Error::NotSimpleOscillation("degenerate maximum".into()));
    }
    let node = |i: usize| off + i as f64 / m as f64;
    let s = if (hi_i + m - lo_i) % m == 1 {
        // Ordinary case: one sign change between neighbouring samples.
        let (mut lo, mut hi) = (node(lo_i), node(lo_i) + 1.0 / m as f64);
        let mut s = 0.5 * (lo + hi);
        for _ in 0..60 {
            let g = interp.eval_deriv(s, 1);
            if g == 0.0 {
                break;
            }
            if g < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let g2 = interp.eval_deriv(s, 2);
            let newton = s - g / g2;
            s = if g2 > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 {
                break;
            }
        }
        if interp.eval_deriv(s, 2) <= 1e-10 * scale {
            return Err(Error::NotSimpleOscillation("degenerate minimum".into()));
        }
        s
    } else {
        // Flat bottom: smallest value across the unresolved stretch.
        let x = interp.grid_values(m, 0, off);
        let mut best = lo_i;
        let mut i = lo_i;
        while i != hi_i {
            if x[i] < x[best] {
                best = i;
            }
            i = (i + 1) % m;
        }
        node(best)
    };
    let s = s.rem_euclid(1.0);
    Ok((s * orbit.period, interp.eval(s)))
}

/// Outcome of the structural checks on one orbit.
#[derive(Debug, Clone, Serialize)]
pub struct OscillationReport {
    pub simple: bool,
    pub period_not_1_or_2: bool,
    pub n_index: u32,
    pub in_interval: bool,
    /// `n` odd iff `r d2f < 0`.
    pub parity: bool,
    /// `x''(0) x''(q)`, `x'(1) x'(-1)`, `x'(q+1) x'(q-1)`; all must be negative.
    pub products: [f64; 3],
    /// Products whose factors are below the derivative floor and so carry no
    /// reliable sign; they are not counted as failures.
    pub unresolved_products: u8,
    pub zero_distance: bool,
}

impl OscillationReport {
    pub fn passed(&self) -> bool {
        self.simple && self.period_not_1_or_2 && self.in_interval && self.parity && self.products_ok() && self.zero_distance
    }

    pub fn products_ok(&self) -> bool {
        self.products.iter().filter(|&&v| v < 0.0).count() + self.unresolved_products as usize == 3
    }
}

pub fn check_oscillation(model: &ModelDefinition, orbit: &PeriodicOrbit) -> Result<OscillationReport> {
    let simple = locate_depth(orbit).is_ok();
    let p = orbit.period;
    let q = orbit.time_of_depth;
    let n = period_interval_index(p);
    let lo = 2.0 / n as f64;
    let hi = if n == 1 { f64::INFINITY } else { 2.0 / (n - 1) as f64 };
    let d2f = model.eval_with_grad(orbit.x(0.0), orbit.x(-1.0))?.d2;
    let parity = (n % 2 == 1) == (orbit.delay * d2f < 0.0);
    let interp = orbit.interpolant();
    let grid = (8 * orbit.modes()).max(2048);
    let peak = |d: u32| {
        interp
            .grid_values(grid, d, 0.0)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            / p.powi(d as i32)
    };
    let (floor1, floor2) = (DERIVATIVE_FLOOR * peak(1), DERIVATIVE_FLOOR * peak(2));
    let factors = [
        (orbit.ddx(0.0), orbit.ddx(q), floor2),
        (orbit.dx(1.0), orbit.dx(-1.0), floor1),
        (orbit.dx(q + 1.0), orbit.dx(q - 1.0), floor1),
    ];
    let products = factors.map(|(a, b, _)| a * b);
    let mut unresolved = 0;
    for (i, (a, b, fl)) in factors.iter().enumerate() {
        if (a.abs() <= *fl || b.abs() <= *fl) && products[i] >= 0.0 {
            unresolved += 1;
        }
    }
    let n1 = ((n - 1) / 2) as f64;
    let zero_distance = if n % 2 == 1 {
        n1 * p < 1.0 && 1.0 < q + n1 * p && q + n1 * p < q + 1.0 && q + 1.0 < (n1 + 1.0) * p
    } else {
        n1 * p < q - p + 1.0 && q - p + 1.0 < q + n1 * p && q + n1 * p < 1.0 && 1.0 < (n1 + 1.0) * p
    };
    Ok(OscillationReport {
        simple,
        period_not_1_or_2: (p - 1.0).abs() > 1e-9 && (p - 2.0).abs() > 1e-9,
        n_index: n,
        in_interval: p > lo && p < hi && n == orbit.n_index,
        parity,
        products,
        unresolved_products: unresolved,
        zero_distance,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub modes: usize,
}

pub fn solve_orbit(
    model: &ModelDefinition,
    target: OrbitTarget,
    guess: &OrbitGuess,
    opts: &SolverOptions,
) -> Result<PeriodicOrbit> {
    solve_orbit_with_stats(model, target, guess, opts).map(|(o, _)| o)
}

pub fn solve_orbit_with_stats(
    model: &ModelDefinition,
    target: OrbitTarget,
    guess: &OrbitGuess,
    opts: &SolverOptions,
) -> Result<(PeriodicOrbit, SolveStats)> {
    if let OrbitTarget::Amplitude(a) = target {
        let fa = model.eval(a, a)?;
        if fa.abs() <= 1e-14 * (1.0 + a.abs()) {
            return Err(Error::Boundary(BoundarySignal::Equilibrium { value: a }));
        }
    }
    let n = odd_size(opts.n_modes).max(guess.profile.len());
    let mut x = if guess.profile.len() == n {
        guess.profile.clone()
    } else {
        TrigInterpolant::from_samples(&odd_profile(&guess.profile)).samples(n)
    };
    let mut p = match target {
        OrbitTarget::Period(p) => p,
        _ => guess.period,
    };
    let mut r = match target {
        OrbitTarget::Delay(r) => r,
        _ => guess.delay,
    };
    if let OrbitTarget::Amplitude(a) = target {
        // Start on the constraint manifold.
        let shift = a - x[0];
        x.iter_mut().for_each(|v| *v += shift);
    }
    let reference = TrigInterpolant::from_samples(&x);
    let mut iterations = 0;
    loop {
        let phase = Phase::for_target(target, &reference, x.len());
        iterations += newton(model, target, &phase, &mut x, &mut p, &mut r, opts)?;
        let spread = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
            - x.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if spread < opts.collapse_tol {
            return Err(Error::Boundary(BoundarySignal::Collapse {
                amplitude: x[0],
                depth: x[0] - spread,
            }));
        }
        let interp = TrigInterpolant::from_samples(&x);
        if interp.tail_ratio() > opts.tail_tol && 2 * x.len() - 1 <= opts.max_modes {
            log::debug!("refining collocation grid {} -> {}", x.len(), 2 * x.len() - 1);
            x = interp.samples(2 * x.len() - 1);
            continue;
        }
        break;
    }
    // Delay and period targets leave the phase free up to the choice of the
    // extremum at s = 0; rotate so that it is the maximum.
    if !matches!(target, OrbitTarget::Amplitude(_)) {
        x = rotate_to_max(&x);
    }
    let modes = x.len();
    let orbit = PeriodicOrbit::from_profile(model, x, p, r)?;
    Ok((orbit, SolveStats { iterations, modes }))
}

fn odd_profile(profile: &[f64]) -> Vec<f64> {
    if profile.len() % 2 == 1 {
        return profile.to_vec();
    }
    // Even sample counts are linearly resampled onto the next odd grid.
    let n = profile.len();
    let m = n + 1;
    (0..m)
        .map(|j| {
            let pos = j as f64 * n as f64 / m as f64;
            let i = pos.floor() as usize;
            let w = pos - i as f64;
            (1.0 - w) * profile[i % n] + w * profile[(i + 1) % n]
        })
        .collect()
}

fn rotate_to_max(x: &[f64]) -> Vec<f64> {
    let interp = TrigInterpolant::from_samples(x);
    let n = x.len();
    let (imax, _) = x
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let mut s = imax as f64 / n as f64;
    for _ in 0..20 {
        let g2 = interp.eval_deriv(s, 2);
        if g2 >= 0.0 {
            break;
        }
        let step = interp.eval_deriv(s, 1) / g2;
        s -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    if s.abs() < 1e-15 {
        return x.to_vec();
    }
    interp.shifted_samples(-s)
}

/// Gauge condition closing the system.
enum Phase {
    /// `X'(0) = 0`.
    MaxAtZero,
    /// `sum_j X_ref'(s_j) (X(s_j) - X_ref(s_j)) = 0`; well posed even when the
    /// maximum sits on a flat stretch.
    Integral { dref: Vec<f64>, xref: Vec<f64> },
}

impl Phase {
    fn for_target(target: OrbitTarget, reference: &TrigInterpolant, n: usize) -> Self {
        match target {
            OrbitTarget::Amplitude(_) => Phase::MaxAtZero,
            _ => {
                let r = reference.resample(n);
                let scale = 1.0 / n as f64;
                Phase::Integral {
                    dref: r.derivative_samples().iter().map(|v| v * scale).collect(),
                    xref: r.samples(n),
                }
            }
        }
    }
}

struct Evaluation {
    merit: f64,
    rhs: Vec<f64>,
    f: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    dy: Vec<f64>,
}

fn evaluate(
    model: &ModelDefinition,
    target: OrbitTarget,
    phase: &Phase,
    x: &[f64],
    p: f64,
    r: f64,
) -> Result<Evaluation> {
    let n = x.len();
    let interp = TrigInterpolant::from_samples(x);
    let dx = interp.derivative_samples();
    let y = interp.shifted_samples(1.0 / p);
    let dy = interp.shifted_derivative_samples(1.0 / p);
    let mut f = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    let mut f2 = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n + 2);
    let mut merit: f64 = 0.0;
    for j in 0..n {
        let g = model.eval_with_grad(x[j], y[j])?;
        let res = dx[j] - p * r * g.f;
        merit = merit.max(res.abs() / p);
        rhs.push(res);
        f.push(g.f);
        f1.push(g.d1);
        f2.push(g.d2);
    }
    if let OrbitTarget::Amplitude(a) = target {
        rhs.push(x[0] - a);
        merit = merit.max((x[0] - a).abs());
    }
    let gauge = match phase {
        Phase::MaxAtZero => dx[0] / p,
        Phase::Integral { dref, xref } => (0..n).map(|j| dref[j] * (x[j] - xref[j])).sum(),
    };
    rhs.push(gauge * p);
    merit = merit.max(gauge.abs());
    Ok(Evaluation {
        merit,
        rhs,
        f,
        f1,
        f2,
        dy,
    })
}

fn jacobian(target: OrbitTarget, phase: &Phase, ev: &Evaluation, n: usize, p: f64, r: f64) -> Array2<f64> {
    let size = match target {
        OrbitTarget::Amplitude(_) => n + 2,
        _ => n + 1,
    };
    let drow = diff_row(n);
    let srow = shift_row(n, 1.0 / p);
    let pr = p * r;
    let mut jac = Array2::<f64>::zeros((size, size));
    for j in 0..n {
        let c2 = pr * ev.f2[j];
        let mut row = jac.row_mut(j);
        for k in 0..n {
            let d = (j + n - k) % n;
            row[k] = drow[d] - c2 * srow[d];
        }
        row[j] -= pr * ev.f1[j];
        let dp = -r * ev.f[j] - r * ev.f2[j] * ev.dy[j] / p;
        let dr = -p * ev.f[j];
        match target {
            OrbitTarget::Amplitude(_) => {
                row[n] = dp;
                row[n + 1] = dr;
            }
            OrbitTarget::Delay(_) => row[n] = dp,
            OrbitTarget::Period(_) => row[n] = dr,
        }
    }
    let mut next = n;
    if let OrbitTarget::Amplitude(_) = target {
        jac[[n, 0]] = 1.0;
        next += 1;
    }
    for k in 0..n {
        jac[[next, k]] = match phase {
            Phase::MaxAtZero => drow[(n - k) % n],
            Phase::Integral { dref, .. } => dref[k] * p,
        };
    }
    jac
}

/// Damped Newton at fixed grid size; returns the iteration count.
fn newton(
    model: &ModelDefinition,
    target: OrbitTarget,
    phase: &Phase,
    x: &mut Vec<f64>,
    p: &mut f64,
    r: &mut f64,
    opts: &SolverOptions,
) -> Result<usize> {
    let n = x.len();
    let mut ev = evaluate(model, target, phase, x, *p, *r)?;
    for it in 0..opts.max_iterations {
        if ev.merit < opts.newton_tol {
            return Ok(it);
        }
        let jac = jacobian(target, phase, &ev, n, *p, *r);
        let rhs = Array1::from_vec(ev.rhs.iter().map(|v| -v).collect());
        let delta = solve_checked(&jac, rhs)?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=20 {
            let trial_x: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + lambda * d).collect();
            let (tp, tr) = match target {
                OrbitTarget::Amplitude(_) => (*p + lambda * delta[n], *r + lambda * delta[n + 1]),
                OrbitTarget::Delay(_) => (*p + lambda * delta[n], *r),
                OrbitTarget::Period(_) => (*p, *r + lambda * delta[n]),
            };
            if tp > 0.0 && tp <= opts.p_max {
                if let Ok(tev) = evaluate(model, target, phase, &trial_x, tp, tr) {
                    if tev.merit < ev.merit {
                        accepted = Some((trial_x, tp, tr, tev));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((tx, tp, tr, tev)) => {
                *x = tx;
                *p = tp;
                *r = tr;
                ev = tev;
            }
            None => {
                let p_try = *p + delta.get(n).copied().unwrap_or(0.0);
                if matches!(target, OrbitTarget::Amplitude(_) | OrbitTarget::Delay(_))
                    && (p_try <= 0.0 || p_try > opts.p_max)
                {
                    return Err(Error::PeriodOutOfRange {
                        p: p_try,
                        p_max: opts.p_max,
                    });
                }
                return Err(Error::NewtonDivergence {
                    iterations: it,
                    residual: ev.merit,
                });
            }
        }
    }
    if ev.merit < opts.newton_tol {
        Ok(opts.max_iterations)
    } else {
        Err(Error::NewtonDivergence {
            iterations: opts.max_iterations,
            residual: ev.merit,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn enharmonic(omega: &str) -> ModelDefinition {
        ModelDefinition::enharmonic(omega, BTreeMap::new()).unwrap()
    }

    fn cosine_guess(a: f64, p: f64, r: f64, n: usize) -> OrbitGuess {
        OrbitGuess {
            profile: (0..n).map(|j| a * (2.0 * PI * j as f64 / n as f64).cos() * 0.9).collect(),
            period: p,
            delay: r,
        }
    }

    #[test]
    fn enharmonic_unit_frequency() {
        let model = enharmonic("1");
        let opts = SolverOptions::default();
        for a in [0.5, 1.0, 2.0] {
            let guess = cosine_guess(a, 4.3, 1.4, 33);
            let o = solve_orbit(&model, OrbitTarget::Amplitude(a), &guess, &opts).unwrap();
            assert!((o.period - 4.0).abs() < 1e-8, "{}", o.period);
            assert!((o.delay - FRAC_PI_2).abs() < 1e-8, "{}", o.delay);
            assert!(o.residual < opts.newton_tol);
            for s in [0.0, 0.1, 0.35, 0.8] {
                assert!((o.interpolant().eval(s) - a * (2.0 * PI * s).cos()).abs() < 1e-8);
            }
            let (q, depth) = locate_depth(&o).unwrap();
            assert!((q - 2.0).abs() < 1e-8 && (depth + a).abs() < 1e-8);
            assert!(orbit_residual(&model, &o, 4 * o.modes()).unwrap() < 1e-10);
            let rep = check_oscillation(&model, &o).unwrap();
            assert!(rep.passed(), "{rep:?}");
            assert_eq!(rep.n_index, 1);
        }
    }

    #[test]
    fn enharmonic_quadratic_frequency() {
        let model = enharmonic("1 + s");
        let guess = cosine_guess(2.0, 4.0, 0.3, 33);
        let o = solve_orbit(&model, OrbitTarget::Amplitude(2.0), &guess, &SolverOptions::default()).unwrap();
        assert!((o.delay - PI / 10.0).abs() < 1e-8);
        assert!((o.period - 4.0).abs() < 1e-8);
    }

    #[test]
    fn perturbed_period_has_large_residual() {
        let model = enharmonic("1");
        let guess = cosine_guess(1.0, 4.0, 1.5, 33);
        let o = solve_orbit(&model, OrbitTarget::Amplitude(1.0), &guess, &SolverOptions::default()).unwrap();
        let bad = PeriodicOrbit::from_parts_unchecked(o.profile.clone(), o.period + 1e-3, o.delay, 0.0, -1.0, 0.0);
        assert!(orbit_residual(&model, &bad, 4 * bad.modes()).unwrap() > 1e-4);
        let flat = PeriodicOrbit::from_parts_unchecked(vec![0.0; 33], 4.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(orbit_residual(&model, &flat, 4 * 33).unwrap(), 0.0);
        assert!(locate_depth(&flat).is_err());
    }

    #[test]
    fn qrt_saddle_amplitude_is_a_boundary() {
        let model = ModelDefinition::qrt_doublewell();
        let guess = cosine_guess(-0.5, 10.0, 1.5, 33);
        let err = solve_orbit(&model, OrbitTarget::Amplitude(-0.5), &guess, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Boundary(BoundarySignal::Equilibrium { .. })), "{err}");
    }

    #[test]
    fn two_hump_profile_is_rejected() {
        let n = 65;
        let profile: Vec<f64> = (0..n)
            .map(|j| {
                let s = j as f64 / n as f64;
                (2.0 * PI * s).cos() + 0.8 * (4.0 * PI * s).cos()
            })
            .collect();
        let orbit = PeriodicOrbit::from_parts_unchecked(profile, 4.0, 1.0, 0.0, 0.0, 0.0);
        assert!(matches!(locate_depth(&orbit), Err(Error::NotSimpleOscillation(_))));
    }

    #[test]
    fn delay_target_recovers_the_enharmonic_period() {
        let model = enharmonic("1 + s");
        let guess = cosine_guess(1.0, 4.1, 0.8, 33);
        let o = solve_orbit(&model, OrbitTarget::Delay(PI / 4.0), &guess, &SolverOptions::default()).unwrap();
        assert!((o.amplitude - 1.0).abs() < 1e-8, "{}", o.amplitude);
        assert!((o.period - 4.0).abs() < 1e-8);
    }

    #[test]
    fn record_round_trip() {
        let model = enharmonic("1");
        let guess = cosine_guess(1.0, 4.0, 1.5, 33);
        let o = solve_orbit(&model, OrbitTarget::Amplitude(1.0), &guess, &SolverOptions::default()).unwrap();
        let back = PeriodicOrbit::from_record(&model, &o.record()).unwrap();
        assert_eq!(back.record(), o.record());
    }
}
