#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use cyclicity_core::branch::{hopf_scan, orbit_from_hopf, trace_branch, Branch, StepPolicy};
use cyclicity_core::model::ModelDefinition;
use cyclicity_core::orbit::{solve_orbit, OrbitGuess, OrbitTarget, PeriodicOrbit, SolverOptions};

pub fn opts(n: usize) -> SolverOptions {
    SolverOptions {
        n_modes: n,
        ..SolverOptions::default()
    }
}

/// Circle orbits of the enharmonic model, solved directly at each amplitude.
pub fn circles(omega: &str, amps: &[f64]) -> (ModelDefinition, Vec<PeriodicOrbit>) {
    let model = ModelDefinition::enharmonic(omega, Default::default()).unwrap();
    let orbits = amps
        .iter()
        .map(|&a| {
            let r = FRAC_PI_2 * a / model.eval(0.0, -a).unwrap();
            let guess = OrbitGuess::hopf(0.0, FRAC_PI_2, r, a, 33);
            solve_orbit(&model, OrbitTarget::Amplitude(a), &guess, &opts(33)).unwrap()
        })
        .collect();
    (model, orbits)
}

/// Branch born at the first Hopf root of `xbar`, traced inside `window`.
pub fn hopf_branch(model: &ModelDefinition, xbar: f64, window: [f64; 2]) -> Branch {
    let hopf = hopf_scan(model, xbar, 1).unwrap()[0];
    let seed = orbit_from_hopf(model, &hopf, 1e-2, &opts(128)).unwrap();
    let policy = StepPolicy {
        window,
        ..StepPolicy::default()
    };
    trace_branch(model, &seed, &policy, &opts(128)).unwrap()
}
