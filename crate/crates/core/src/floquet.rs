//! Linearization about a periodic orbit: `y' = A(t) y + B(t) y(t - 1)` with
//! `A = r d1f(x*(t), x*(t-1))`, `B = r d2f(x*(t), x*(t-1))`. Monodromy matrix
//! and multipliers, the formal adjoint `y'(t) = -A(t) y(t) - B(t+1) y(t+1)`
//! solved backwards, and the bilinear form pairing the two.

use ndarray::Array2;
use ndarray_linalg::Eig;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::{march_linear, DenseSolution, HistorySegment};
use crate::model::ModelDefinition;
use crate::orbit::PeriodicOrbit;
use crate::quadrature::GaussLegendre;

/// Nodes of the bilinear-form quadrature (per smooth panel).
pub const QUADRATURE_NODES: usize = 64;
/// `|mu_c - 1|` above which an orbit counts as hyperbolic.
pub const HYPERBOLIC_TOL: f64 = 1e-6;

/// `(A(t), B(t))`.
pub fn coefficients(model: &ModelDefinition, orbit: &PeriodicOrbit, t: f64) -> Result<(f64, f64)> {
    let g = model.eval_with_grad(orbit.x(t), orbit.x(t - 1.0))?;
    Ok((orbit.delay * g.d1, orbit.delay * g.d2))
}

/// Coefficients on the half-step grid `t0 + sign * j h / 2`, `j <= 2 steps`,
/// with `B` read at `shift_b` later than `A`.
fn sample_coefficients(
    model: &ModelDefinition,
    orbit: &PeriodicOrbit,
    t0: f64,
    sign: f64,
    shift_b: f64,
    m: usize,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = 1.0 / m as f64;
    (0..=2 * steps)
        .into_par_iter()
        .map(|j| {
            let t = t0 + sign * j as f64 * 0.5 * h;
            let (a, _) = coefficients(model, orbit, t)?;
            let (_, b) = coefficients(model, orbit, t + shift_b)?;
            Ok((a, b))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

fn steps_for(span: f64, m: usize) -> usize {
    (span * m as f64 - 1e-9).ceil().max(1.0) as usize
}

/// A solution of the (possibly forced) linearized equation started at `t0`.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub t0: f64,
    pub dense: DenseSolution,
}

impl LinearSolution {
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.dense.eval(t - self.t0)
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dense.t_end
    }
}

/// Integrates `y' = A y + B y(t-1) + l(t)` with `y(t0 + theta) = history(theta)`
/// over `[t0, t0 + span]`.
pub fn linear_integrate(
    model: &ModelDefinition,
    orbit: &PeriodicOrbit,
    history: &HistorySegment,
    t0: f64,
    span: f64,
    steps_per_delay: usize,
    forcing: Option<&(dyn Fn(f64) -> f64 + Sync)>,
) -> Result<LinearSolution> {
    let m = steps_per_delay;
    let steps = steps_for(span, m);
    let (a, b) = sample_coefficients(model, orbit, t0, 1.0, 0.0, m, steps)?;
    let l: Option<Vec<f64>> = forcing.map(|f| (0..=2 * steps).map(|j| f(t0 + j as f64 * 0.5 / m as f64)).collect());
    let dense = march_linear(history, m, &a, &b, l.as_deref())?;
    Ok(LinearSolution { t0, dense })
}

/// Backward solution `y^T(t)` of the formal adjoint equation on
/// `[t0 - span, t0 + 1]`, with `y^T(t0 + theta) = psi(theta)` for
/// `theta` in `[0, 1]`.
///
/// Internally `z(s) = y^T(t0 - s)` solves the forward equation
/// `z'(s) = A(t0 - s) z(s) + B(t0 - s + 1) z(s - 1)`.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub t0: f64,
    pub dense: DenseSolution,
}

impl AdjointSolution {
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.dense.eval(self.t0 - t)
    }

    pub fn eval_deriv(&self, t: f64) -> Result<f64> {
        Ok(-self.dense.eval_deriv(self.t0 - t)?)
    }

    pub fn t_start(&self) -> f64 {
        self.t0 - self.dense.t_end
    }

    /// Largest `|y' + A y + B(t+1) y(t+1)|` at the mesh points, where the
    /// stored slopes are compared against coefficients recomputed from the
    /// orbit.
    pub fn residual(&self, model: &ModelDefinition, orbit: &PeriodicOrbit) -> Result<f64> {
        let h = self.dense.h;
        let mut worst: f64 = 0.0;
        for k in 0..self.dense.x.len() {
            let t = self.t0 - k as f64 * h;
            let (a, _) = coefficients(model, orbit, t)?;
            let (_, b1) = coefficients(model, orbit, t + 1.0)?;
            let y = self.dense.x[k];
            let dy = -self.dense.dx[k];
            worst = worst.max((dy + a * y + b1 * self.eval(t + 1.0)?).abs());
        }
        Ok(worst)
    }
}

/// `psi` holds samples on a uniform grid of `[0, 1]`.
pub fn adjoint_integrate(
    model: &ModelDefinition,
    orbit: &PeriodicOrbit,
    psi: &[f64],
    t0: f64,
    span: f64,
    steps_per_delay: usize,
) -> Result<AdjointSolution> {
    let m = steps_per_delay;
    let steps = steps_for(span, m);
    let reversed: Vec<f64> = psi.iter().rev().copied().collect();
    let history = HistorySegment::new(reversed)?;
    let (a, b) = sample_coefficients(model, orbit, t0, -1.0, 1.0, m, steps)?;
    let dense = march_linear(&history, m, &a, &b, None)?;
    Ok(AdjointSolution { t0, dense })
}

/// `[phi^T, phi]_t = phi^T(0) phi(0) + int_0^1 phi^T(th) B(t+th) phi(th-1) dth`,
/// by Gauss-Legendre on panels split at `breaks` (points of `[0, 1]` where
/// either factor is known to be less smooth).
pub fn bilinear_form(
    model: &ModelDefinition,
    orbit: &PeriodicOrbit,
    phi_t: impl Fn(f64) -> Result<f64>,
    phi: impl Fn(f64) -> Result<f64>,
    t: f64,
    breaks: &[f64],
) -> Result<f64> {
    let rule = GaussLegendre::new(QUADRATURE_NODES);
    let integral = rule.integrate_split(0.0, 1.0, breaks, |th| {
        let (_, b) = coefficients(model, orbit, t + th)?;
        Ok::<f64, Error>(phi_t(th)? * b * phi(th - 1.0)?)
    })?;
    Ok(phi_t(0.0)? * phi(0.0)? + integral)
}

/// Points of `[0, 1]` congruent to `t0 - t` modulo 1.
fn kink_offsets(t: f64, t0: f64) -> f64 {
    (t0 - t).rem_euclid(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConservationCheck {
    pub start: f64,
    pub end: f64,
    /// `int_0^p y^T l`, by independent quadrature (zero when unforced).
    pub forcing_integral: f64,
    /// `|end - start - forcing_integral|` relative to the form's size.
    pub relative_error: f64,
}

/// Pairs a forward solution on `[0, p]` (smooth start `cos(theta) + 1/2`) with
/// an adjoint solution whose data sit on `[p, p + 1]` (`1 + sin(2 theta) / 2`),
/// and compares `[y^T_t, y_t]_t` at `t = 0` and `t = p`. With `forced` the
/// forward equation carries `l(t) = x*'(t) / r`.
pub fn conservation_check(
    model: &ModelDefinition,
    orbit: &PeriodicOrbit,
    steps_per_delay: usize,
    forced: bool,
) -> Result<ConservationCheck> {
    let p = orbit.period;
    let r = orbit.delay;
    let history = HistorySegment::from_fn(4 * steps_per_delay + 1, |th| th.cos() + 0.5)?;
    let ell = move |t: f64| orbit.dx(t) / r;
    let forcing: Option<&(dyn Fn(f64) -> f64 + Sync)> = if forced { Some(&ell) } else { None };
    let y = linear_integrate(model, orbit, &history, 0.0, p, steps_per_delay, forcing)?;
    let psi: Vec<f64> = (0..=4 * steps_per_delay)
        .map(|i| 1.0 + 0.5 * (2.0 * i as f64 / (4 * steps_per_delay) as f64).sin())
        .collect();
    let yt = adjoint_integrate(model, orbit, &psi, p, p, steps_per_delay)?;
    let form_at = |t: f64| {
        let breaks = [kink_offsets(t, 0.0), kink_offsets(t, p)];
        bilinear_form(
            model,
            orbit,
            |th| yt.eval(t + th),
            |th| {
                let s = t + th;
                if s < 0.0 {
                    history.eval(s)
                } else {
                    y.eval(s)
                }
            },
            t,
            &breaks,
        )
    };
    let start = form_at(0.0)?;
    let end = form_at(p)?;
    let forcing_integral = if forced {
        let rule = GaussLegendre::new(QUADRATURE_NODES);
        let mut breaks: Vec<f64> = (1..=p.floor() as usize).map(|k| k as f64).collect();
        breaks.extend((0..=p.floor() as usize).map(|k| p - k as f64));
        rule.integrate_split(0.0, p, &breaks, |t| Ok::<f64, Error>(yt.eval(t)? * ell(t)))?
    } else {
        0.0
    };
    let scale = start.abs().max(end.abs()).max(1e-300);
    Ok(ConservationCheck {
        start,
        end,
        forcing_integral,
        relative_error: (end - start - forcing_integral).abs() / scale,
    })
}

#[derive(Debug, Clone)]
pub struct MonodromyDiscretization {
    pub dimension: usize,
    /// Column `i` holds the time-`p` image of the `i`-th cardinal function.
    pub matrix: Array2<f64>,
    /// Uniform mesh of `[-1, 0]`.
    pub mesh: Vec<f64>,
    pub steps_per_delay: usize,
    pub orbit: PeriodicOrbit,
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Time-`p` map of the linearized equation on piecewise cubic histories
/// over an `M`-point mesh. The step count per delay is a multiple of
/// `M - 1`, so the mesh nodes (and their kinks) stay on the step grid.
pub fn monodromy(model: &ModelDefinition, orbit: &PeriodicOrbit, basis: usize) -> Result<MonodromyDiscretization> {
    if basis < 16 {
        return Err(Error::InvalidInput(format!("basis size {basis} below 16")));
    }
    let cells = basis - 1;
    let m = cells * 128usize.div_ceil(cells);
    let p = orbit.period;
    let steps = steps_for(p, m);
    let (a, b) = sample_coefficients(model, orbit, 0.0, 1.0, 0.0, m, steps)?;
    let mesh: Vec<f64> = (0..basis).map(|i| -1.0 + i as f64 / cells as f64).collect();
    let columns: Vec<Vec<f64>> = (0..basis)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; basis];
            e[i] = 1.0;
            let dense = march_linear(&HistorySegment::new(e)?, m, &a, &b, None)?;
            mesh.iter().map(|th| dense.eval(p + th)).collect()
        })
        .collect::<Result<_>>()?;
    let matrix = Array2::from_shape_fn((basis, basis), |(row, col)| columns[col][row]);
    Ok(MonodromyDiscretization {
        dimension: basis,
        matrix,
        mesh,
        steps_per_delay: m,
        orbit: orbit.clone(),
        a,
        b,
    })
}

impl MonodromyDiscretization {
    /// Sign changes over `[0, p)` of the solution from mesh samples `v`,
    /// ignoring values below `1e-8` of the largest.
    pub fn zero_count(&self, v: &[f64]) -> Result<usize> {
        let dense = march_linear(&HistorySegment::new(v.to_vec())?, self.steps_per_delay, &self.a, &self.b, None)?;
        let steps = (self.orbit.period / dense.h).floor() as usize;
        let vals = &dense.x[..=steps.min(dense.x.len() - 1)];
        let floor = 1e-8 * vals.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let signs: Vec<bool> = vals.iter().filter(|x| x.abs() > floor).map(|x| *x > 0.0).collect();
        let mut changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        // One more across the period boundary for real (sign-preserving) multipliers.
        if let (Some(first), Some(last)) = (signs.first(), signs.last()) {
            if first != last {
                changes += 1;
            }
        }
        Ok(changes)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FloquetReport {
    /// `[re, im]`, by decreasing modulus.
    pub multipliers: Vec<[f64; 2]>,
    pub trivial_error: f64,
    /// Cosine similarity of the trivial eigenvector with `x*'` on the mesh.
    pub trivial_alignment: f64,
    pub mu_c: f64,
    pub mu_c_zero_count: usize,
    pub hyperbolic: bool,
    /// Largest modulus outside the critical pair, and the smaller modulus of
    /// the pair.
    pub spectral_gap: [f64; 2],
    /// `mu_c` taken as the second largest multiplier because no positive
    /// multiplier with a two-zero eigenfunction was found.
    pub fallback: bool,
    pub basis: usize,
}

pub fn floquet_report(disc: &MonodromyDiscretization) -> Result<FloquetReport> {
    if disc.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Linalg("monodromy matrix has non-finite entries".into()));
    }
    let (values, vectors) = disc.matrix.eig()?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].norm().total_cmp(&values[i].norm()));
    let one = Complex64::new(1.0, 0.0);
    let trivial = *order
        .iter()
        .min_by(|&&i, &&j| (values[i] - one).norm().total_cmp(&(values[j] - one).norm()))
        .expect("nonempty spectrum");
    let trivial_error = (values[trivial] - one).norm();
    let real_vec = |k: usize| -> Vec<f64> {
        let col = vectors.column(k);
        let re: Vec<f64> = col.iter().map(|c| c.re).collect();
        let im: Vec<f64> = col.iter().map(|c| c.im).collect();
        let nr: f64 = re.iter().map(|x| x * x).sum();
        let ni: f64 = im.iter().map(|x| x * x).sum();
        if nr >= ni {
            re
        } else {
            im
        }
    };
    let deriv: Vec<f64> = disc.mesh.iter().map(|&th| disc.orbit.dx(th)).collect();
    // Projection of x*' onto the span of all eigenvectors at the trivial
    // multiplier (a cluster when 1 is not simple).
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in (0..values.len()).filter(|&k| k == trivial || (values[k] - one).norm() < 1e-6) {
        let col = vectors.column(k);
        for part in [col.iter().map(|c| c.re).collect::<Vec<f64>>(), col.iter().map(|c| c.im).collect()] {
            let mut v = part;
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-8 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
    }
    let dnorm = deriv.iter().map(|x| x * x).sum::<f64>().sqrt();
    let projected: f64 = basis
        .iter()
        .map(|q| q.iter().zip(&deriv).map(|(a, b)| a * b).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt();
    let trivial_alignment = if dnorm > 0.0 { projected / dnorm } else { 0.0 };

    // Candidates: positive real multipliers (or members of a cluster at 1,
    // which the eigensolver may return as a slightly complex pair).
    let mut best: Option<(usize, usize)> = None;
    for &k in &order {
        if k == trivial {
            continue;
        }
        let mu = values[k];
        let near_one = (mu - one).norm() < 1e-3;
        if mu.re <= 0.0 || (mu.im.abs() > 1e-8 * mu.norm().max(1.0) && !near_one) {
            continue;
        }
        let zeros = disc.zero_count(&real_vec(k))?;
        if zeros == 2 {
            best = match best {
                Some((j, z)) if values[j].im.abs() <= mu.im.abs() => Some((j, z)),
                _ => Some((k, zeros)),
            };
            if mu.im.abs() <= 1e-8 * mu.norm().max(1.0) {
                break;
            }
        }
    }
    let (mu_index, zero_count, fallback) = match best {
        Some((k, z)) => (k, z, false),
        None => {
            let k = *order
                .iter()
                .find(|&&k| k != trivial)
                .ok_or_else(|| Error::Linalg("spectrum has a single multiplier".into()))?;
            log::warn!("no positive multiplier with a two-zero eigenfunction; using the second largest");
            (k, disc.zero_count(&real_vec(k))?, true)
        }
    };
    let mu_c = values[mu_index].re;
    let inner = order
        .iter()
        .filter(|&&k| k != trivial && k != mu_index)
        .map(|&k| values[k].norm())
        .fold(0.0f64, f64::max);
    Ok(FloquetReport {
        multipliers: order.iter().map(|&k| [values[k].re, values[k].im]).collect(),
        trivial_error,
        trivial_alignment,
        mu_c,
        mu_c_zero_count: zero_count,
        hyperbolic: (mu_c - 1.0).abs() > HYPERBOLIC_TOL,
        spectral_gap: [inner, values[mu_index].norm().min(1.0)],
        fallback,
        basis: disc.dimension,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::{solve_orbit, OrbitGuess, OrbitTarget, SolverOptions};
    use std::collections::BTreeMap;
    use std::f64::consts::FRAC_PI_2;

    fn enharmonic_orbit() -> (ModelDefinition, PeriodicOrbit) {
        let model = ModelDefinition::enharmonic("1", BTreeMap::new()).unwrap();
        let guess = OrbitGuess::hopf(0.0, FRAC_PI_2, FRAC_PI_2, 0.9, 33);
        let opts = SolverOptions {
            n_modes: 33,
            ..Default::default()
        };
        let o = solve_orbit(&model, OrbitTarget::Amplitude(1.0), &guess, &opts).unwrap();
        (model, o)
    }

    #[test]
    fn enharmonic_trivial_multiplier() {
        let (model, o) = enharmonic_orbit();
        let disc = monodromy(&model, &o, 64).unwrap();
        let rep = floquet_report(&disc).unwrap();
        assert!(rep.trivial_error < 1e-8, "{}", rep.trivial_error);
        assert!(rep.trivial_alignment > 1.0 - 1e-6);
        assert!(rep.mu_c > 0.0 && rep.mu_c_zero_count == 2);
        assert!(monodromy(&model, &o, 8).is_err());
    }

    #[test]
    fn varying_frequency_orbit() {
        // Omega = 1 + s: x = a cos(pi t / 2) at r = pi / (2 (1 + a^2)).
        let model = ModelDefinition::enharmonic("1 + s", BTreeMap::new()).unwrap();
        let r = FRAC_PI_2 / 2.0;
        let guess = OrbitGuess::hopf(0.0, FRAC_PI_2, r, 1.0, 65);
        let o = solve_orbit(&model, OrbitTarget::Amplitude(1.0), &guess, &SolverOptions::default()).unwrap();
        let rep = floquet_report(&monodromy(&model, &o, 64).unwrap()).unwrap();
        assert!(rep.trivial_error < 1e-6, "{}", rep.trivial_error);
        assert!(rep.trivial_alignment > 1.0 - 1e-6);
        assert!(rep.hyperbolic && rep.mu_c > 0.0 && !rep.fallback);
        for forced in [false, true] {
            let c = conservation_check(&model, &o, 256, forced).unwrap();
            assert!(c.relative_error < 1e-8, "{c:?}");
        }
    }

    #[test]
    fn zero_terminal_data_stay_zero() {
        let (model, o) = enharmonic_orbit();
        let z = adjoint_integrate(&model, &o, &vec![0.0; 33], 0.0, 5.0, 128).unwrap();
        assert!(z.dense.x.iter().all(|&v| v == 0.0));
        let form = bilinear_form(&model, &o, |_| Ok(0.0), |_| Ok(0.0), 0.3, &[]).unwrap();
        assert_eq!(form, 0.0);
    }

    #[test]
    fn enharmonic_adjoint_is_a_sinusoid() {
        // A = 0, B = -r: the adjoint reads y' = r y(t + 1), solved by cos(pi t / 2 + c).
        let (model, o) = enharmonic_orbit();
        let m = 128;
        let psi: Vec<f64> = (0..=m).map(|i| (FRAC_PI_2 * i as f64 / m as f64 + 0.4).cos()).collect();
        let z = adjoint_integrate(&model, &o, &psi, 0.0, 8.0, m).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..=800 {
            let t = -8.0 + k as f64 * 0.01;
            worst = worst.max((z.eval(t).unwrap() - (FRAC_PI_2 * t + 0.4).cos()).abs());
        }
        assert!(worst < 1e-8, "{worst}");
        assert!(z.residual(&model, &o).unwrap() < 1e-12);
        assert!((z.t_start() + 8.0).abs() < 1e-12);
    }
}
