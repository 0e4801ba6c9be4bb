//! Whole orbit families of the three example models.

mod common;

use cyclicity_core::branch::{qrt_seed, Boundary};
use cyclicity_core::chart::{build_chart, build_chart_refined, exp_orbit, ChartOptions};
use cyclicity_core::curves::JordanCurve;
use cyclicity_core::floquet::{floquet_report, monodromy};
use cyclicity_core::model::{qrt_map, ModelDefinition};
use cyclicity_core::orbit::{orbit_residual, solve_orbit, OrbitTarget, PeriodicOrbit};
use cyclicity_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn chart_inversion_round_trips() {
    let amps: Vec<f64> = (0..11).map(|k| 0.5 + 0.25 * k as f64).collect();
    let (model, orbits) = common::circles("1 + s", &amps);
    let chart = build_chart(&model, &orbits, 64).unwrap();
    let (lo, hi) = chart.amplitude_range();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let alpha = rng.gen_range(lo..hi);
        let p = chart.period_at(alpha);
        let tau = rng.gen_range(0.0..p);
        let e = chart.eval(tau, alpha);
        let (a2, t2) = chart.amplitude_at(e.u, e.v).unwrap();
        let dt = (t2 - tau).abs().min(p - (t2 - tau).abs());
        worst = worst.max((a2 - alpha).abs()).max(dt);
    }
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn hutchinson_orbit_at_delay_two_is_stable() {
    let model = ModelDefinition::hutchinson_log();
    let branch = common::hopf_branch(&model, 0.0, [-1e6, 1.5]);
    assert!(matches!(branch.lower, Boundary::Hopf { .. }), "{:?}", branch.lower);
    let orbit = branch.orbit_at_delay(&model, 2.0, &common::opts(128)).unwrap();
    let coarse = floquet_report(&monodromy(&model, &orbit, 64).unwrap()).unwrap();
    let fine = floquet_report(&monodromy(&model, &orbit, 128).unwrap()).unwrap();
    assert!(coarse.trivial_error < 1e-4, "{}", coarse.trivial_error);
    let moduli = |m: &[[f64; 2]]| m.iter().map(|z| z[0].hypot(z[1])).collect::<Vec<_>>();
    let (mc, mf) = (moduli(&coarse.multipliers), moduli(&fine.multipliers));
    for k in 0..5 {
        assert!((mc[k] - mf[k]).abs() < 1e-6, "multiplier {k}: {} vs {}", mc[k], mf[k]);
    }
    // Everything but the trivial multiplier lies inside the unit circle.
    let inside = mc.iter().filter(|m| (**m - 1.0).abs() > 1e-3).all(|m| *m < 1.0);
    assert!(inside, "{:?}", &mc[..4]);
}

#[test]
fn double_well_seed_matches_the_solved_orbit() {
    let model = ModelDefinition::qrt_doublewell();
    for a in [0.5, 1.0, 1.4] {
        let guess = qrt_seed(&model, a, 128).unwrap();
        let orbit = solve_orbit(&model, OrbitTarget::Amplitude(a), &guess, &common::opts(128)).unwrap();
        let direct = PeriodicOrbit::from_profile(&model, guess.profile.clone(), guess.period, guess.delay).unwrap();
        assert!(orbit_residual(&model, &direct, 512).unwrap() < 1e-8);
        assert!((guess.period - orbit.period).abs() < 1e-6 * orbit.period);
        assert!((guess.delay - orbit.delay).abs() < 1e-6 * orbit.delay.abs());
    }
}

#[test]
fn double_well_curves_are_invariant_under_the_map() {
    let model = ModelDefinition::qrt_doublewell();
    let branch = common::hopf_branch(&model, 0.0, [0.0, 0.3]);
    let chart_opts = ChartOptions {
        max_period: Some(6.5),
        max_amplitude_gap: Some(0.02),
        ..ChartOptions::default()
    };
    let chart = build_chart_refined(&model, &branch.orbits, &chart_opts, &common::opts(128)).unwrap();
    let middle = branch.orbits.iter().find(|o| o.amplitude > 0.15).unwrap();
    for orbit in [middle, branch.orbits.last().unwrap()] {
        let curve = JordanCurve::from_orbit(0, orbit, 512).unwrap();
        let mut pointwise: f64 = 0.0;
        let mut off_curve: f64 = 0.0;
        for k in 0..200 {
            let t = orbit.period * k as f64 / 200.0;
            let (u, v) = orbit.planar(t);
            let (mu, mv) = qrt_map(u, v);
            let (pu, pv) = orbit.planar(t - 1.0);
            pointwise = pointwise.max((mu - pu).hypot(mv - pv));
            off_curve = off_curve.max(curve.distance([mu, mv]));
        }
        assert!(pointwise < 1e-6 && off_curve < 1e-4);
    }
    // g = dH/du on the chart nodes.
    let mut worst: f64 = 0.0;
    for n in &chart.nodes {
        let dh = model.hamiltonian_grad(n.u, n.v).unwrap();
        worst = worst.max((n.g - dh[0]).abs());
    }
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn population_chart_surrounds_the_positive_equilibrium() {
    let log_model = ModelDefinition::hutchinson_log();
    let population = ModelDefinition::hutchinson();
    let branch = common::hopf_branch(&log_model, 0.0, [-1e6, 1.2]);
    let orbits: Vec<_> = branch
        .orbits
        .iter()
        .map(|o| exp_orbit(&population, o).unwrap())
        .collect();
    let chart = build_chart(&population, &orbits, 64).unwrap();
    assert!(matches!(chart.amplitude_at(1.0, 1.0), Err(Error::OutsideAnnulus { .. })));
    let mid = &orbits[orbits.len() / 2];
    let (u, v) = mid.planar(0.3 * mid.period);
    let (alpha, _) = chart.amplitude_at(u, v).unwrap();
    assert!((alpha - mid.amplitude).abs() < 1e-8, "{alpha} vs {}", mid.amplitude);
}
