use tbnoise::lindblad::{
    adiabatic_offdiagonals, dephasing_mode, offdiagonal_norm, offdiagonal_profile, reduced_diffusion_step,
    LindbladIntegrator, LindbladState, WeightVector,
};
use tbnoise::observables::coherence_time_estimate;
use tbnoise::{Boundary, InitialState, ModelParams};

fn relaxed(gamma: f64, initial: InitialState, t: f64) -> LindbladState {
    let params = ModelParams { gamma, n_sites: 61, dt: 1e-3, t_max: t, ..Default::default() };
    let mut state = LindbladState::from_initial(&params, &initial).unwrap();
    LindbladIntegrator::for_params(&params).unwrap().evolve_to(&mut state, t).unwrap();
    state
}

fn coherence_time(gamma: f64) -> f64 {
    let n = 16;
    let mut state = LindbladState::new(dephasing_mode(n, 1, 0.01).unwrap());
    let mut integ = LindbladIntegrator::new(gamma, Boundary::Periodic, n, 1e-3 / gamma.max(1.0)).unwrap();
    let (mut times, mut norms) = (Vec::new(), Vec::new());
    for k in 0..=30 {
        let t = k as f64 * 0.1 / gamma;
        integ.evolve_to(&mut state, t).unwrap();
        times.push(t);
        norms.push(offdiagonal_norm(&state.rho));
    }
    let fit = coherence_time_estimate(&times, &norms).unwrap();
    assert!(!fit.poor_fit);
    fit.tau
}

#[test]
fn coherence_time_is_inverse_gamma() {
    let tau10 = coherence_time(10.0);
    let tau1 = coherence_time(1.0);
    let tau20 = coherence_time(20.0);
    assert!((tau10 - 0.1).abs() < 0.02 * 0.1, "{tau10}");
    assert!((tau1 - 1.0).abs() < 0.02, "{tau1}");
    assert!((tau20 / tau10 - 0.5).abs() < 0.05 * 0.5);
}

#[test]
fn first_offdiagonal_halves_when_gamma_doubles() {
    let p20 = offdiagonal_profile(&relaxed(20.0, InitialState::gaussian(4.0), 1.0), Boundary::Open);
    let p40 = offdiagonal_profile(&relaxed(40.0, InitialState::gaussian(4.0), 1.0), Boundary::Open);
    let ratio = p40[1] / p20[1];
    assert!((ratio - 0.5).abs() <= 0.25 * 0.5, "ratio {ratio}");
    // Each further off-diagonal is smaller by about another factor of γ.
    assert!(p20[2] < p20[1] / 10.0 && p40[2] < p40[1] / 20.0);
}

#[test]
fn first_offdiagonal_of_a_narrow_packet_is_order_inverse_gamma() {
    let gamma = 20.0;
    let p = offdiagonal_profile(&relaxed(gamma, InitialState::delta(), 1.0), Boundary::Open);
    let r = p[1] / p[0];
    assert!((0.5 / gamma..=2.0 / gamma).contains(&r), "{r}");
}

#[test]
fn adiabatic_estimate_matches_integration() {
    let gamma = 40.0;
    for initial in [InitialState::gaussian(4.0), InitialState::delta()] {
        let state = relaxed(gamma, initial, 1.0);
        let est = adiabatic_offdiagonals(&state.weights(), gamma, Boundary::Open).unwrap();
        let actual: Vec<_> = (0..est.len()).map(|b| state.rho.rho[(b + 1, b)]).collect();
        let largest = actual.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (a, e) in actual.iter().zip(est.iter()) {
            if a.norm() >= 1e-2 * largest {
                assert!((a - e).norm() <= 0.1 * a.norm(), "{initial}: {a} vs {e}");
            }
        }
    }
}

#[test]
fn reduced_equation_tracks_full_diagonal() {
    let gamma = 40.0;
    let params = ModelParams { gamma, n_sites: 61, dt: 1e-3, t_max: 2.0, ..Default::default() };
    let initial = InitialState::gaussian(4.0);
    let mut state = LindbladState::from_initial(&params, &initial).unwrap();
    let mut integ = LindbladIntegrator::for_params(&params).unwrap();
    let mut reduced = state.weights();
    let (h, mut t) = (0.01, 0.0);
    for target in [0.5, 1.0, 2.0] {
        integ.evolve_to(&mut state, target).unwrap();
        while t < target - 1e-12 {
            reduced_diffusion_step(&mut reduced, gamma, h, Boundary::Open).unwrap();
            t += h;
        }
        let full = state.weights();
        let peak = full.p.iter().cloned().fold(0.0, f64::max);
        for (a, b) in full.p.iter().zip(reduced.p.iter()) {
            if *a >= 1e-3 * peak {
                assert!((a - b).abs() <= 0.05 * a, "t={target}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn reduced_equation_spreads_diffusively() {
    let gamma = 10.0;
    let mut w = WeightVector::delta(401, -200, 0).unwrap();
    let h = 0.05;
    let steps = 2000;
    for _ in 0..steps {
        reduced_diffusion_step(&mut w, gamma, h, Boundary::Open).unwrap();
    }
    let d = w.variance() / (h * steps as f64);
    assert!((d - 4.0 / gamma).abs() < 0.01 * 4.0 / gamma, "{d}");
}
