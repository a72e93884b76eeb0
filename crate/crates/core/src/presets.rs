//! Named run settings for the standard diffusion, centre-of-mass, width and
//! wide-open studies.
//!
//! Each preset runs long enough to cover the window its analysis uses.
//!
//! White-noise and state-diffusion presets shrink the step above `γ = 10`
//! so that `γ·dt` stays at 10⁻³. The per-step norm error grows like `γ·dt`
//! times the square of a noise draw, and with larger steps a rare draw on a
//! heavily weighted site trips the norm-deviation guard.

use crate::ensemble::{CompareSpec, RunSpec};
use crate::lattice::{Boundary, InitialState, ModelParams, DEFAULT_DT};
use crate::observables::GridSpec;
use crate::unravelling::{NoiseVariant, UnravellingKind};

#[derive(Debug, Clone, PartialEq)]
pub enum PresetSpec {
    Run(RunSpec),
    Compare(CompareSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub spec: PresetSpec,
}

/// Largest `γ·dt` used by the diffusive-noise presets.
pub const MAX_GAMMA_DT: f64 = 1e-3;

/// Step size for `kind` at noise strength `gamma`.
pub fn preset_dt(kind: UnravellingKind, gamma: f64) -> f64 {
    match kind {
        UnravellingKind::Wnp | UnravellingKind::Qsd(_) | UnravellingKind::QsdWideOpen(_) if gamma > 0.0 => {
            DEFAULT_DT.min(MAX_GAMMA_DT / gamma)
        }
        _ => DEFAULT_DT,
    }
}

fn run_preset(
    name: String,
    description: String,
    kind: UnravellingKind,
    gamma: f64,
    variance: f64,
    trajectories: u64,
    t_max: f64,
) -> Preset {
    let dt = preset_dt(kind, gamma);
    let params = ModelParams { gamma, dt, n_sites: 1000, boundary: Boundary::Open, t_max, ..Default::default() };
    let mut spec = RunSpec::new(params, kind, InitialState::gaussian(variance), trajectories);
    spec.grid = GridSpec::Log { t_min: 1e-2, points_per_decade: 40 };
    Preset { name, description, spec: PresetSpec::Run(spec) }
}

/// Every preset, in listing order.
pub fn all() -> Vec<Preset> {
    let mut out = Vec::new();
    for gamma in [5.0, 10.0, 20.0] {
        // Diffusion fits use γt ∈ [10, 100].
        out.push(run_preset(
            format!("fig1-gamma{gamma}"),
            format!("white-noise potential, gamma {gamma}, packet variance 4, 10^4 trajectories"),
            UnravellingKind::Wnp,
            gamma,
            4.0,
            10_000,
            100.0 / gamma,
        ));
        out.push(run_preset(
            format!("fig1-qsd-gamma{gamma}"),
            format!("state diffusion, gamma {gamma}, packet variance 4, 10^4 trajectories"),
            UnravellingKind::Qsd(NoiseVariant::Complex),
            gamma,
            4.0,
            10_000,
            100.0 / gamma,
        ));
    }
    out.push(run_preset(
        "fig2".into(),
        "white-noise potential centre-of-mass motion, gamma 10, packet variance 4, 4*10^3 trajectories"
            .into(),
        UnravellingKind::Wnp,
        10.0,
        4.0,
        4_000,
        100.0,
    ));
    for gamma in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
        let trajectories = if gamma <= 4.0 { 5_000 } else { 10_000 };
        out.push(run_preset(
            format!("fig3-gamma{gamma}"),
            format!("state diffusion width, gamma {gamma}, packet variance 25, {trajectories} trajectories"),
            UnravellingKind::Qsd(NoiseVariant::Complex),
            gamma,
            25.0,
            trajectories,
            100.0 / gamma,
        ));
    }
    out.push(run_preset(
        "fig5".into(),
        "wide-open state diffusion (no hopping), gamma 16, packet variance 25, 10^3 trajectories".into(),
        UnravellingKind::QsdWideOpen(NoiseVariant::Complex),
        16.0,
        25.0,
        1_000,
        40.0 / 16.0,
    ));
    out.push(Preset {
        name: "compare-small".into(),
        description: "all unravellings against the master equation, 11-site ring, gamma 4".into(),
        spec: PresetSpec::Compare(CompareSpec::default()),
    });
    out
}

pub fn names() -> Vec<String> {
    all().into_iter().map(|p| p.name).collect()
}

pub fn find(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}
