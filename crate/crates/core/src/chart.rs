//! The planar chart `G(t, a) = (x^a(t), x^a(t - 1))` of a branch, its inverse
//! `(u, v) -> (alpha, tau)`, and the companion field
//! `g(u, v) = f(x^a(tau - 1), x^a(tau - 2))` of the planar system
//! `u' = r(alpha) f(u, v)`, `v' = r(alpha) g(u, v)`.
//!
//! Between branch orbits the family is interpolated in amplitude by cubic
//! Lagrange polynomials in normalized time; at the orbits themselves the chart
//! is exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDefinition;
use crate::orbit::{solve_orbit, OrbitGuess, OrbitTarget, PeriodicOrbit, SolverOptions};

/// Largest `|G(tau, alpha) - (u, v)|` accepted from the inverter.
pub const INVERSION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct ChartNode {
    pub t: f64,
    pub a: f64,
    pub u: f64,
    pub v: f64,
    pub det_dg: f64,
    pub g: f64,
    /// `alpha(u, v) - a`, inverted from a neighbouring seed.
    pub alpha_check: f64,
    /// `dG/dt` and `dG/da` columns.
    #[serde(skip)]
    pub jacobian: [[f64; 2]; 2],
    /// `(dg/dt, dg/da)`.
    #[serde(skip)]
    pub g_grad: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct PlanarChart {
    model: ModelDefinition,
    orbits: Vec<PeriodicOrbit>,
    pub t_per_period: usize,
    /// Row `j` (amplitude) major, time index `i` minor.
    pub nodes: Vec<ChartNode>,
    /// Common sign of `det DG`.
    pub det_sign: f64,
}

/// Weights of the Lagrange polynomial through `xs` at `x`, and their derivatives.
fn lagrange(xs: &[f64], x: f64) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let mut w = vec![0.0; n];
    let mut dw = vec![0.0; n];
    for j in 0..n {
        let den: f64 = (0..n).filter(|&k| k != j).map(|k| xs[j] - xs[k]).product();
        w[j] = (0..n).filter(|&k| k != j).map(|k| x - xs[k]).product::<f64>() / den;
        dw[j] = (0..n)
            .filter(|&k| k != j)
            .map(|skip| {
                (0..n)
                    .filter(|&k| k != j && k != skip)
                    .map(|k| x - xs[k])
                    .product::<f64>()
            })
            .sum::<f64>()
            / den;
    }
    (w, dw)
}

/// Second-order derivative weights at the middle of three unevenly spaced points.
fn three_point(h1: f64, h2: f64) -> [f64; 3] {
    [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))]
}

/// Interpolated family member at amplitude `alpha`.
struct Member {
    idx: Vec<usize>,
    w: Vec<f64>,
    dw: Vec<f64>,
    period: f64,
    dperiod: f64,
    delay: f64,
}

pub struct Evaluation {
    pub u: f64,
    pub v: f64,
    /// `[[du/dtau, du/dalpha], [dv/dtau, dv/dalpha]]`.
    pub jacobian: [[f64; 2]; 2],
}

impl PlanarChart {
    pub fn orbits(&self) -> &[PeriodicOrbit] {
        &self.orbits
    }

    pub fn model(&self) -> &ModelDefinition {
        &self.model
    }

    pub fn amplitude_range(&self) -> (f64, f64) {
        (self.orbits[0].amplitude, self.orbits[self.orbits.len() - 1].amplitude)
    }

    pub fn node(&self, i: usize, j: usize) -> &ChartNode {
        &self.nodes[j * self.t_per_period + i]
    }

    fn member(&self, alpha: f64) -> Member {
        let n = self.orbits.len();
        let amps: Vec<f64> = self.orbits.iter().map(|o| o.amplitude).collect();
        let k = amps.partition_point(|&a| a <= alpha).clamp(1, n - 1) - 1;
        let width = n.min(4);
        let start = (k as isize - 1).clamp(0, (n - width) as isize) as usize;
        let idx: Vec<usize> = (start..start + width).collect();
        let xs: Vec<f64> = idx.iter().map(|&j| amps[j]).collect();
        let (w, dw) = lagrange(&xs, alpha);
        let period = idx.iter().zip(&w).map(|(&j, w)| w * self.orbits[j].period).sum();
        let dperiod = idx.iter().zip(&dw).map(|(&j, w)| w * self.orbits[j].period).sum();
        let delay = idx.iter().zip(&w).map(|(&j, w)| w * self.orbits[j].delay).sum();
        Member {
            idx,
            w,
            dw,
            period,
            dperiod,
            delay,
        }
    }

    /// `(x, dx/dt, dx/dalpha)` of the interpolated member at time `t`.
    fn member_eval(&self, m: &Member, t: f64) -> (f64, f64, f64) {
        let phase = t / m.period;
        let dphase = -t * m.dperiod / (m.period * m.period);
        let (mut x, mut dxds, mut dxda) = (0.0, 0.0, 0.0);
        for ((&j, &w), &dw) in m.idx.iter().zip(&m.w).zip(&m.dw) {
            let interp = self.orbits[j].interpolant();
            let xj = interp.eval(phase);
            let dj = interp.eval_deriv(phase, 1);
            x += w * xj;
            dxds += w * dj;
            dxda += dw * xj;
        }
        (x, dxds / m.period, dxda + dxds * dphase)
    }

    /// `r(alpha)` by the same interpolation as the chart.
    pub fn delay_at(&self, alpha: f64) -> f64 {
        self.member(alpha).delay
    }

    pub fn period_at(&self, alpha: f64) -> f64 {
        self.member(alpha).period
    }

    /// `G(tau, alpha)` with its Jacobian.
    pub fn eval(&self, tau: f64, alpha: f64) -> Evaluation {
        let m = self.member(alpha);
        let (u, ut, ua) = self.member_eval(&m, tau);
        let (v, vt, va) = self.member_eval(&m, tau - 1.0);
        Evaluation {
            u,
            v,
            jacobian: [[ut, ua], [vt, va]],
        }
    }

    fn nearest_node(&self, u: f64, v: f64) -> (f64, f64) {
        let n = self
            .nodes
            .iter()
            .min_by(|a, b| ((a.u - u).hypot(a.v - v)).total_cmp(&(b.u - u).hypot(b.v - v)))
            .expect("chart has nodes");
        (n.t, n.a)
    }

    /// `(alpha, tau)` with `G(tau, alpha) = (u, v)` and `tau` in `[0, p(alpha))`.
    pub fn amplitude_at(&self, u: f64, v: f64) -> Result<(f64, f64)> {
        let (t, a) = self.nearest_node(u, v);
        self.invert_from(u, v, t, a)
    }

    /// Newton from a given `(tau, alpha)` seed.
    pub fn invert_from(&self, u: f64, v: f64, tau0: f64, alpha0: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.amplitude_range();
        let slack = 1e-9 * (hi - lo);
        // Iterates may overshoot the outermost orbits a little; the
        // interpolated family extends smoothly past them.
        let (wlo, whi) = (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo));
        let (mut tau, mut alpha) = (tau0, alpha0.clamp(lo, hi));
        let mut pinned = 0;
        for _ in 0..60 {
            let e = self.eval(tau, alpha);
            let (ru, rv) = (e.u - u, e.v - v);
            let res = ru.hypot(rv);
            if res < 1e-13 * (1.0 + u.abs().max(v.abs())) {
                break;
            }
            let [[a, b], [c, d]] = e.jacobian;
            let det = a * d - b * c;
            if det == 0.0 || !det.is_finite() {
                return Err(Error::OutsideAnnulus { u, v });
            }
            let mut dt = (d * ru - b * rv) / det;
            let mut da = (-c * ru + a * rv) / det;
            // Keep steps local: at most a tenth of a period in time.
            let limit = 0.1 * self.period_at(alpha);
            let scale = (dt.abs() / limit).max(1.0);
            dt /= scale;
            da /= scale;
            tau -= dt;
            alpha -= da;
            if alpha < wlo || alpha > whi {
                pinned += 1;
                if pinned > 3 {
                    return Err(Error::OutsideAnnulus { u, v });
                }
                alpha = alpha.clamp(wlo, whi);
            } else {
                pinned = 0;
            }
        }
        let e = self.eval(tau, alpha);
        if (e.u - u).hypot(e.v - v) > INVERSION_TOL || alpha < lo - slack || alpha > hi + slack {
            return Err(Error::OutsideAnnulus { u, v });
        }
        Ok((alpha, tau.rem_euclid(self.period_at(alpha))))
    }

    /// `g(u, v) = f(x^alpha(tau - 1), x^alpha(tau - 2))`.
    pub fn g_field(&self, u: f64, v: f64) -> Result<f64> {
        let (alpha, tau) = self.amplitude_at(u, v)?;
        self.g_at(tau, alpha)
    }

    pub fn g_at(&self, tau: f64, alpha: f64) -> Result<f64> {
        let m = self.member(alpha);
        let (x1, _, _) = self.member_eval(&m, tau - 1.0);
        let (x2, _, _) = self.member_eval(&m, tau - 2.0);
        self.model.eval(x1, x2)
    }
}

fn prepare(orbits: &[PeriodicOrbit], t_per_period: usize) -> Result<Vec<PeriodicOrbit>> {
    if t_per_period < 64 {
        return Err(Error::Chart(format!("{t_per_period} time nodes per period, need at least 64")));
    }
    let mut orbits: Vec<PeriodicOrbit> = orbits.to_vec();
    orbits.sort_by(|a, b| a.amplitude.total_cmp(&b.amplitude));
    orbits.dedup_by(|a, b| (a.amplitude - b.amplitude).abs() <= 1e-12 * b.amplitude.abs().max(1.0));
    if orbits.len() < 3 {
        return Err(Error::Chart(format!(
            "{} distinct amplitudes; differencing across the branch needs at least 3",
            orbits.len()
        )));
    }
    Ok(orbits)
}

fn fill_nodes(model: &ModelDefinition, orbits: &[PeriodicOrbit], n: usize) -> Result<Vec<ChartNode>> {
    let na = orbits.len();
    let stencil = |j: usize| -> ([usize; 3], usize) {
        let c = j.clamp(1, na - 2);
        ([c - 1, c, c + 1], j + 1 - c)
    };
    let derivative_weights = |j: usize| -> ([usize; 3], [f64; 3]) {
        let (idx, pos) = stencil(j);
        let a = [orbits[idx[0]].amplitude, orbits[idx[1]].amplitude, orbits[idx[2]].amplitude];
        let (_, dw) = lagrange(&a, a[pos]);
        let w = if pos == 1 {
            three_point(a[1] - a[0], a[2] - a[1])
        } else {
            [dw[0], dw[1], dw[2]]
        };
        (idx, w)
    };
    let nodes: Vec<ChartNode> = (0..na * n)
        .into_par_iter()
        .map(|k| -> Result<ChartNode> {
            let (j, i) = (k / n, k % n);
            let o = &orbits[j];
            let t = i as f64 * o.period / n as f64;
            let (x0, x1, x2) = (o.x(t), o.x(t - 1.0), o.x(t - 2.0));
            let g = model.eval_with_grad(x1, x2)?;
            let ut = o.delay * model.eval(x0, x1)?;
            let vt = o.delay * g.f;
            // d/da at fixed t, through the normalized profiles: the amplitude
            // derivative of X_a(tau / p(a)) is stable even where neighbouring
            // orbits drift apart in phase.
            let (idx, w) = derivative_weights(j);
            let dp: f64 = idx.iter().zip(&w).map(|(&jj, ww)| ww * orbits[jj].period).sum();
            let along = |tau: f64| -> f64 {
                let phase = tau / o.period;
                let spread: f64 = idx
                    .iter()
                    .zip(&w)
                    .map(|(&jj, ww)| ww * orbits[jj].interpolant().eval(phase))
                    .sum();
                spread - o.dx(tau) * tau * dp / o.period
            };
            let ua = along(t);
            let va = along(t - 1.0);
            let ga = g.d1 * va + g.d2 * along(t - 2.0);
            let gt = g.d1 * o.dx(t - 1.0) + g.d2 * o.dx(t - 2.0);
            Ok(ChartNode {
                t,
                a: o.amplitude,
                u: x0,
                v: x1,
                det_dg: ut * va - ua * vt,
                g: g.f,
                alpha_check: f64::NAN,
                jacobian: [[ut, ua], [vt, va]],
                g_grad: [gt, ga],
            })
        })
        .collect::<Result<_>>()?;
    Ok(nodes)
}

/// Amplitude rows whose `det DG` sign differs from the majority (or vanishes).
fn sign_defects(nodes: &[ChartNode], n: usize) -> (f64, Vec<usize>) {
    let positive = nodes.iter().filter(|n| n.det_dg > 0.0).count();
    let sign = if 2 * positive > nodes.len() { 1.0 } else { -1.0 };
    let mut rows: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, node)| !(node.det_dg * sign > 0.0))
        .map(|(k, _)| k / n)
        .collect();
    rows.dedup();
    (sign, rows)
}

/// Builds the chart over `orbits` (at least three, distinct amplitudes) with
/// `t_per_period` time nodes per orbit.
pub fn build_chart(model: &ModelDefinition, orbits: &[PeriodicOrbit], t_per_period: usize) -> Result<PlanarChart> {
    let orbits = prepare(orbits, t_per_period)?;
    let n = t_per_period;
    let na = orbits.len();
    let nodes = fill_nodes(model, &orbits, n)?;
    let positive = nodes.iter().filter(|n| n.det_dg > 0.0).count();
    let negative = nodes.iter().filter(|n| n.det_dg < 0.0).count();
    if positive > 0 && negative > 0 || positive + negative < nodes.len() {
        let worst = nodes
            .iter()
            .min_by(|a, b| a.det_dg.abs().total_cmp(&b.det_dg.abs()))
            .expect("nodes");
        return Err(Error::Chart(format!(
            "det DG is not sign-definite ({positive} positive, {negative} negative nodes; smallest |det| {:e} at t = {}, a = {})",
            worst.det_dg.abs(),
            worst.t,
            worst.a
        )));
    }
    let mut chart = PlanarChart {
        model: model.clone(),
        orbits,
        t_per_period: n,
        nodes,
        det_sign: if positive > 0 { 1.0 } else { -1.0 },
    };
    // Invert every node from the midpoint to its next neighbours.
    let checks: Vec<f64> = (0..chart.nodes.len())
        .into_par_iter()
        .map(|k| {
            let (j, i) = (k / n, k % n);
            let node = &chart.nodes[k];
            let jn = if j + 1 < na { j + 1 } else { j - 1 };
            let other = chart.node((i + 1) % n, jn);
            let seed_t = node.t + 0.5 * chart.orbits[j].period / n as f64;
            let seed_a = 0.5 * (node.a + other.a);
            match chart.invert_from(node.u, node.v, seed_t, seed_a) {
                Ok((alpha, _)) => alpha - node.a,
                Err(_) => f64::NAN,
            }
        })
        .collect();
    for (node, c) in chart.nodes.iter_mut().zip(checks) {
        node.alpha_check = c;
    }
    Ok(chart)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartOptions {
    pub t_per_period: usize,
    /// Orbits are added until neighbouring amplitudes are at most this far apart.
    pub max_amplitude_gap: Option<f64>,
    pub refine_rounds: usize,
    /// Orbits with longer periods are left out of the chart.
    pub max_period: Option<f64>,
}

impl Default for ChartOptions {
    fn default() -> Self {
        Self {
            t_per_period: 64,
            max_amplitude_gap: None,
            refine_rounds: 8,
            max_period: None,
        }
    }
}

/// Like [`build_chart`], but the amplitude grid is refined first: extra
/// orbits are solved at midpoints of gaps wider than the configured maximum
/// and around rows where `det DG` loses its sign.
pub fn build_chart_refined(
    model: &ModelDefinition,
    orbits: &[PeriodicOrbit],
    chart_opts: &ChartOptions,
    opts: &SolverOptions,
) -> Result<PlanarChart> {
    let n = chart_opts.t_per_period;
    let cap = chart_opts.max_period.unwrap_or(f64::INFINITY);
    let kept: Vec<PeriodicOrbit> = orbits.iter().filter(|o| o.period <= cap).cloned().collect();
    let mut orbits = prepare(&kept, n)?;
    for round in 0..chart_opts.refine_rounds {
        let nodes = fill_nodes(model, &orbits, n)?;
        let (_, rows) = sign_defects(&nodes, n);
        let mut gaps: Vec<usize> = rows
            .iter()
            .flat_map(|&j| [j.saturating_sub(2), j.saturating_sub(1), j, j + 1])
            .filter(|&k| k + 1 < orbits.len())
            .collect();
        if let Some(gap) = chart_opts.max_amplitude_gap {
            gaps.extend((0..orbits.len() - 1).filter(|&k| orbits[k + 1].amplitude - orbits[k].amplitude > gap));
        }
        gaps.sort_unstable();
        gaps.dedup();
        if gaps.is_empty() {
            break;
        }
        log::debug!("chart refinement round {round}: {} sign defects, {} new orbits", rows.len(), gaps.len());
        let fresh: Vec<PeriodicOrbit> = gaps
            .par_iter()
            .filter_map(|&k| {
                let (lo, hi) = (&orbits[k], &orbits[k + 1]);
                let a = 0.5 * (lo.amplitude + hi.amplitude);
                let guess = OrbitGuess::secant(lo, hi, a);
                solve_orbit(model, OrbitTarget::Amplitude(a), &guess, opts)
                    .ok()
                    .filter(|o| o.period <= cap)
            })
            .collect();
        if fresh.is_empty() {
            break;
        }
        orbits.extend(fresh);
        orbits = prepare(&orbits, n)?;
    }
    build_chart(model, &orbits, n)
}

#[derive(Debug, Clone, Serialize)]
pub struct PredatorPreyReport {
    pub interior_nodes: usize,
    pub min_product: f64,
    pub max_product: f64,
    pub negative_fraction: f64,
    pub passed: bool,
}

/// Sign of `d1g * d2f` over the chart nodes off the first and last orbit.
/// `d1g` comes from the node derivatives `(dg/dt, dg/da)` through `DG^{-1}`.
pub fn verify_predator_prey(chart: &PlanarChart) -> Result<PredatorPreyReport> {
    let na = chart.orbits.len();
    let n = chart.t_per_period;
    let mut products = Vec::with_capacity((na - 2) * n);
    for node in &chart.nodes[n..(na - 1) * n] {
        let d1g = node_d1g(node);
        let d2f = chart.model.eval_with_grad(node.u, node.v)?.d2;
        products.push(d1g * d2f);
    }
    let min_product = products.iter().copied().fold(f64::INFINITY, f64::min);
    let max_product = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let negative = products.iter().filter(|&&p| p < 0.0).count();
    Ok(PredatorPreyReport {
        interior_nodes: products.len(),
        min_product,
        max_product,
        negative_fraction: if products.is_empty() { 0.0 } else { negative as f64 / products.len() as f64 },
        passed: !products.is_empty() && max_product < 0.0,
    })
}

/// `d1g` at an interior node, for comparison with closed forms.
pub fn node_d1g(node: &ChartNode) -> f64 {
    let [[_, _], [vt, va]] = node.jacobian;
    let [gt, ga] = node.g_grad;
    (gt * va - ga * vt) / node.det_dg
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub alpha0: f64,
    pub max_alpha_drift: f64,
    /// Drift of the model's Hamiltonian, when it has one.
    pub max_hamiltonian_drift: Option<f64>,
    pub steps: usize,
    pub end: [f64; 2],
}

/// Integrates the planar system from `start` over `[0, span]` by RK4 with
/// `dt` close to `0.01` and records how far `alpha` moves.
pub fn first_integral_drift(chart: &PlanarChart, start: [f64; 2], span: f64) -> Result<DriftReport> {
    let steps = (span / 0.01).ceil() as usize;
    let dt = if steps == 0 { 0.0 } else { span / steps as f64 };
    let (alpha0, tau0) = chart.amplitude_at(start[0], start[1])?;
    let mut seed = (tau0, alpha0);
    let h0 = chart.model.hamiltonian(start[0], start[1]);
    let field = |p: [f64; 2], seed: &mut (f64, f64)| -> Result<([f64; 2], f64)> {
        let (alpha, tau) = chart.invert_from(p[0], p[1], seed.0, seed.1)?;
        *seed = (tau, alpha);
        let r = chart.delay_at(alpha);
        Ok(([r * chart.model.eval(p[0], p[1])?, r * chart.g_at(tau, alpha)?], alpha))
    };
    let mut p = start;
    let mut drift: f64 = 0.0;
    let mut hdrift: f64 = 0.0;
    for _ in 0..steps {
        let (k1, _) = field(p, &mut seed)?;
        let mut s = seed;
        let (k2, _) = field([p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]], &mut s)?;
        let (k3, _) = field([p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]], &mut s)?;
        let (k4, _) = field([p[0] + dt * k3[0], p[1] + dt * k3[1]], &mut s)?;
        p = [
            p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        let (alpha, tau) = chart.invert_from(p[0], p[1], s.0, s.1)?;
        seed = (tau, alpha);
        drift = drift.max((alpha - alpha0).abs());
        if let (Some(h0), Some(h)) = (h0, chart.model.hamiltonian(p[0], p[1])) {
            hdrift = hdrift.max((h - h0).abs());
        }
    }
    Ok(DriftReport {
        alpha0,
        max_alpha_drift: drift,
        max_hamiltonian_drift: h0.map(|_| hdrift),
        steps,
        end: p,
    })
}

/// The orbit `N = e^x` of the population model behind a log-coordinate orbit.
pub fn exp_orbit(population_model: &ModelDefinition, orbit: &PeriodicOrbit) -> Result<PeriodicOrbit> {
    let profile = orbit.profile.iter().map(|x| x.exp()).collect();
    PeriodicOrbit::from_profile(population_model, profile, orbit.period, orbit.delay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn circles(omega: &str, amps: &[f64]) -> (ModelDefinition, Vec<PeriodicOrbit>) {
        let model = ModelDefinition::enharmonic(omega, Default::default()).unwrap();
        let opts = SolverOptions {
            n_modes: 33,
            ..Default::default()
        };
        let orbits = amps
            .iter()
            .map(|&a| {
                // f(0, -a) = Omega(a^2) a, and r = pi / (2 Omega(a^2)).
                let r = FRAC_PI_2 * a / model.eval(0.0, -a).unwrap();
                let guess = OrbitGuess::hopf(0.0, FRAC_PI_2, r, a, 33);
                solve_orbit(&model, OrbitTarget::Amplitude(a), &guess, &opts).unwrap()
            })
            .collect();
        (model, orbits)
    }

    #[test]
    fn lagrange_weights_reproduce_cubics() {
        let xs = [0.0, 0.3, 1.0, 1.7];
        let (w, dw) = lagrange(&xs, 0.55);
        let f = |x: f64| x * x * x - 2.0 * x;
        let v: f64 = xs.iter().zip(&w).map(|(x, w)| w * f(*x)).sum();
        let d: f64 = xs.iter().zip(&dw).map(|(x, w)| w * f(*x)).sum();
        assert!((v - f(0.55)).abs() < 1e-14);
        assert!((d - (3.0 * 0.55 * 0.55 - 2.0)).abs() < 1e-13);
        let [a, b, c] = three_point(0.2, 0.5);
        assert!((a * 0.8f64.powi(2) + b + c * 1.5f64.powi(2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn enharmonic_chart_is_polar() {
        let amps: Vec<f64> = (0..8).map(|k| 0.5 + 0.25 * k as f64).collect();
        let (model, orbits) = circles("1", &amps);
        let chart = build_chart(&model, &orbits, 64).unwrap();
        assert!(chart.nodes.iter().all(|n| n.alpha_check.abs() < 1e-8));
        let (alpha, _) = chart.amplitude_at(0.6, 0.8).unwrap();
        assert!((alpha - 1.0).abs() < 1e-6, "{alpha}");
        for &(u, v) in &[(0.3, -0.9), (-1.2, 0.4), (0.0, 2.1)] {
            let (alpha, _) = chart.amplitude_at(u, v).unwrap();
            assert!((alpha - f64::hypot(u, v)).abs() < 1e-6);
            assert!((chart.g_field(u, v).unwrap() - u).abs() < 1e-6);
        }
        assert!(matches!(chart.amplitude_at(0.1, 0.1), Err(Error::OutsideAnnulus { .. })));
        assert!(matches!(chart.amplitude_at(3.0, 0.0), Err(Error::OutsideAnnulus { .. })));
        let pp = verify_predator_prey(&chart).unwrap();
        assert!(pp.passed && (pp.min_product + 1.0).abs() < 1e-6 && (pp.max_product + 1.0).abs() < 1e-6);
        let drift = first_integral_drift(&chart, [1.0, 0.0], 100.0).unwrap();
        assert!(drift.max_alpha_drift < 1e-6, "{drift:?}");
        let still = first_integral_drift(&chart, [chart.nodes[70].u, chart.nodes[70].v], 0.0).unwrap();
        assert_eq!(still.max_alpha_drift, 0.0);
    }

    #[test]
    fn coarse_or_sparse_input_is_rejected() {
        let (model, orbits) = circles("1", &[1.0, 1.5]);
        assert!(matches!(build_chart(&model, &orbits, 64), Err(Error::Chart(_))));
        let (model, orbits) = circles("1", &[1.0, 1.5, 2.0]);
        assert!(matches!(build_chart(&model, &orbits, 16), Err(Error::Chart(_))));
    }
}
