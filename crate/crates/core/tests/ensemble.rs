use tbnoise::ensemble::{compare_unravellings, ensemble_projectors, run_ensemble_with, CompareSpec, RunSpec};
use tbnoise::hamiltonian::free_evolve;
use tbnoise::lattice::make_initial;
use tbnoise::observables::{measure, GridSpec, Observables};
use tbnoise::results::to_csv_string;
use tbnoise::unravelling::qsd_step;
use tbnoise::{Boundary, InitialState, ModelParams, NoiseKind, NoiseStream, NoiseVariant, UnravellingKind};

fn small_run(kind: UnravellingKind, gamma: f64, n: u64) -> RunSpec {
    let params = ModelParams { gamma, n_sites: 201, t_max: 1.0, seed: 11, ..Default::default() };
    let mut spec = RunSpec::new(params, kind, InitialState::gaussian(4.0), n);
    spec.grid = GridSpec::Linear { points: 11 };
    spec
}

#[test]
fn single_noiseless_trajectory_is_free_evolution() {
    let mut spec = small_run(UnravellingKind::JumpEventDriven, 0.0, 1);
    spec.initial = InitialState::delta();
    spec.params.t_max = 5.0;
    let summary = run_ensemble_with(&spec, 1).unwrap().summary;
    let psi0 = make_initial(&spec.params, &spec.initial).unwrap();
    for (k, &t) in summary.t.iter().enumerate() {
        let Observables { mean_x, mean_x2, var_x, pn } = measure(&free_evolve(&psi0, t, Boundary::Open).unwrap());
        assert_eq!(summary.mean_x2[k], mean_x2);
        assert_eq!(summary.mean_x_sq[k], mean_x * mean_x);
        assert_eq!(summary.mean_var[k], var_x);
        assert_eq!(summary.mean_pn[k], pn);
        assert_eq!(summary.stderr_mean_x2[k], 0.0);
    }
}

#[test]
fn worker_count_does_not_change_results() {
    for kind in [UnravellingKind::Wnp, UnravellingKind::Qsd(NoiseVariant::Real), UnravellingKind::JumpEventDriven] {
        let spec = small_run(kind, 5.0, 100);
        let one = to_csv_string(&run_ensemble_with(&spec, 1).unwrap().summary);
        let eight = to_csv_string(&run_ensemble_with(&spec, 8).unwrap().summary);
        assert_eq!(one, eight, "{kind}");
    }
}

#[test]
fn records_come_back_in_trajectory_order() {
    let mut spec = small_run(UnravellingKind::Wnp, 5.0, 70);
    spec.keep_records = true;
    let out = run_ensemble_with(&spec, 4).unwrap();
    let records = out.records.unwrap();
    assert_eq!(records.len(), 70);
    let mut single = small_run(UnravellingKind::Wnp, 5.0, 70);
    single.keep_records = true;
    assert_eq!(run_ensemble_with(&single, 1).unwrap().records.unwrap(), records);
}

#[test]
fn standard_errors_shrink_as_inverse_root_of_count() {
    let small = run_ensemble_with(&small_run(UnravellingKind::Wnp, 5.0, 256), 1).unwrap().summary;
    let large = run_ensemble_with(&small_run(UnravellingKind::Wnp, 5.0, 1024), 1).unwrap().summary;
    let late = small.len() / 2..small.len();
    let ratio: f64 = late.clone().map(|k| small.stderr_mean_x2[k] / large.stderr_mean_x2[k]).sum::<f64>()
        / late.len() as f64;
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn noiseless_comparison_passes_for_every_unravelling() {
    let mut spec = CompareSpec::default();
    spec.params.gamma = 0.0;
    spec.n_trajectories = 8;
    let report = compare_unravellings(&spec, 2).unwrap();
    assert!(report.passed(), "{}", report.summary_line());
    assert!(report.max_corrected_z < 1e-9);
}

#[test]
fn mismatched_reference_is_caught() {
    let mut spec = CompareSpec::default();
    spec.oracle_gamma = Some(2.0 * spec.params.gamma);
    spec.n_trajectories = 500;
    spec.unravellings = vec![UnravellingKind::Wnp];
    let report = compare_unravellings(&spec, 2).unwrap();
    assert!(!report.passed());
    assert!(report.summary_line().starts_with("FAIL"));
}

#[test]
fn white_noise_and_state_diffusion_agree_sitewise() {
    let spec = CompareSpec::default();
    let at = [1.0];
    let a = ensemble_projectors(&spec.params, UnravellingKind::Wnp, &spec.initial, &at, 2000, 2).unwrap();
    let b = ensemble_projectors(&spec.params, UnravellingKind::Qsd(NoiseVariant::Complex), &spec.initial, &at, 2000, 2)
        .unwrap();
    // Far-site weights are heavy-tailed across trajectories and their sample
    // errors are unreliable at this count, so only well-populated sites count.
    let mut compared = 0;
    for i in 0..spec.params.n_sites {
        let p = a[0].mean[(i, i)].re;
        if p < 1e-2 {
            continue;
        }
        compared += 1;
        let diff = p - b[0].mean[(i, i)].re;
        let se = a[0].stderr_re[(i, i)].hypot(b[0].stderr_re[(i, i)]);
        assert!(diff.abs() < 4.0 * se, "site {i}: {diff} vs se {se}");
    }
    assert!(compared >= 3);
}

#[test]
fn state_diffusion_noise_does_not_move_the_mean_position() {
    // A packet with momentum, so the Hamiltonian drift is nonzero.
    let params = ModelParams { gamma: 4.0, dt: 1e-3, n_sites: 64, boundary: Boundary::Periodic, ..Default::default() };
    let mut psi = make_initial(&params, &InitialState::gaussian(4.0)).unwrap();
    for (i, c) in psi.amps.iter_mut().enumerate() {
        *c *= num_complex::Complex64::from_polar(1.0, 0.7 * i as f64);
    }
    let x0 = measure(&psi).mean_x;
    let mut free = psi.clone();
    let noiseless = ModelParams { gamma: 0.0, ..params.clone() };
    qsd_step(&mut free, &noiseless, &mut NoiseStream::new(0, 0, NoiseKind::ComplexWiener), NoiseVariant::Complex)
        .unwrap();
    let drift = measure(&free).mean_x - x0;
    assert!(drift.abs() > 1e-4);

    let samples = 100_000u64;
    let (mut sum, mut sum2) = (0.0, 0.0);
    for k in 0..samples {
        let mut state = psi.clone();
        let mut stream = NoiseStream::new(5, k, NoiseKind::ComplexWiener);
        qsd_step(&mut state, &params, &mut stream, NoiseVariant::Complex).unwrap();
        let dx = measure(&state).mean_x - x0;
        sum += dx;
        sum2 += dx * dx;
    }
    let mean = sum / samples as f64;
    let se = ((sum2 / samples as f64 - mean * mean) / samples as f64).sqrt();
    assert!((mean - drift).abs() < 4.0 * se, "mean {mean}, drift {drift}, se {se}");
    assert!(drift.abs() > 4.0 * se, "drift must be resolvable");
}
