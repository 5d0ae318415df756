//! Fast invariant suite (`validate`) and the master-equation cross-check
//! (`oracle crosscheck`).

use ndarray::Array2;
use ndarray_linalg::{EigValsh, UPLO};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unravel_core::analysis::mean_and_error;
use unravel_core::entanglement::{entanglement_entropy, renyi_entropy, state_spectrum, SubsystemSpec};
use unravel_core::ising::{build_bdg, dispersion, momentum_grid};
use unravel_core::oracle::{
    build_dense_hamiltonian, dense_entropy, gaussian_ket, integrate_lindblad, monitor_operators, DenseDensityMatrix,
    DenseKet,
};
use unravel_core::trajectories::{
    hamiltonian_step, run_ensemble, NoiseStream, Stepper, TrajectoryConfig, DEFAULT_QSD_DT,
};
use unravel_core::{GaussianState, IsingParams, Result, Unraveling};

/// Result of one named property.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from(name: &'static str, result: Result<std::result::Result<String, String>>) -> Self {
        match result {
            Ok(Ok(detail)) => Self { name, passed: true, detail },
            Ok(Err(detail)) => Self { name, passed: false, detail },
            Err(e) => Self { name, passed: false, detail: format!("error: {e}") },
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

type Verdict = std::result::Result<String, String>;

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok { Ok(detail) } else { Err(detail) }
}

/// Largest deviation between the BdG spectrum (doubled) and `±ω_k` on the
/// antiperiodic grid, for a given way of assembling the `2L × 2L` matrix.
pub fn dispersion_deviation(params: &IsingParams, full: &Array2<f64>) -> Result<f64> {
    let mut numeric: Vec<f64> = full.eigvalsh(UPLO::Lower)?.iter().map(|e| 2.0 * e).collect();
    numeric.sort_by(f64::total_cmp);
    let mut analytic: Vec<f64> = momentum_grid(params.sites)
        .iter()
        .flat_map(|&k| {
            let w = dispersion(params, k);
            [w, -w]
        })
        .collect();
    analytic.sort_by(f64::total_cmp);
    Ok(numeric.iter().zip(&analytic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

pub fn check_dispersion(assemble: impl Fn(&IsingParams) -> Result<Array2<f64>>) -> Result<Verdict> {
    let mut worst = 0.0_f64;
    for l in [4, 8, 16] {
        for h in [0.0, 0.5, 1.0, 2.0] {
            let p = IsingParams::new(1.0, h, l)?;
            worst = worst.max(dispersion_deviation(&p, &assemble(&p)?)?);
        }
    }
    Ok(verdict(worst < 1e-10, format!("max |E - (±ω_k)| = {worst:.2e}")))
}

fn nambu_projector_error(state: &GaussianState) -> Result<f64> {
    let g = state.correlations()?.nambu();
    let diff = g.dot(&g) - &g;
    Ok(diff.iter().fold(0.0_f64, |m, z| m.max(z.norm())))
}

/// Canonical relations and `𝔾² = 𝔾` after `steps` steps of every stepper.
pub fn check_canonical(sites: usize, steps: usize, seeds: u64) -> Result<Verdict> {
    let p = IsingParams::new(1.0, 1.0, sites)?;
    let mut worst = 0.0_f64;
    for seed in 0..seeds {
        for cfg in [
            TrajectoryConfig::qsd(1.0, 1.0, seed),
            TrajectoryConfig::quantum_jump(1.0, 1.0, sites, 1.0, seed),
            TrajectoryConfig::non_hermitian(1.0, 1.0, 1.0, seed),
        ] {
            let stepper = Stepper::new(&cfg, &p)?;
            let mut noise = NoiseStream::new(seed, 0);
            let mut state = GaussianState::vacuum(sites);
            for _ in 0..steps {
                state = stepper.step(&state, &mut noise)?.0;
            }
            worst = worst.max(state.canonical_deviation()).max(nambu_projector_error(&state)?);
        }
    }
    Ok(verdict(worst <= 1e-9, format!("max deviation {worst:.2e} after {steps} steps, L={sites}, {seeds} seeds")))
}

/// `0 ≤ H₂ ≤ S ≤ ℓ ln 2` and `S_A = S_B` on random states.
pub fn check_entropy_bounds(sites: usize, samples: usize) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    for _ in 0..samples {
        let s = GaussianState::random(sites, &mut rng);
        for length in 1..sites {
            let a = SubsystemSpec::new(0, length, sites)?;
            let b = SubsystemSpec::new(length, sites - length, sites)?;
            let sa = entanglement_entropy(&state_spectrum(&s, &a)?);
            let sb = entanglement_entropy(&state_spectrum(&s, &b)?);
            let h2 = renyi_entropy(&state_spectrum(&s, &a)?, 2.0)?;
            let cap = length.min(sites - length) as f64 * std::f64::consts::LN_2;
            if !(h2 >= -1e-12 && h2 <= sa + 1e-12 && sa <= cap + 1e-12 && (sa - sb).abs() < 1e-8) {
                failures += 1;
            }
        }
    }
    Ok(verdict(failures == 0, format!("{failures} violations over {samples} states, L={sites}")))
}

/// Without monitoring the jump and no-click steppers reduce to unitary steps.
pub fn check_gamma_zero(sites: usize, steps: usize) -> Result<Verdict> {
    let p = IsingParams::new(1.0, 0.7, sites)?;
    let h = build_bdg(&p)?;
    let mut exact = GaussianState::vacuum(sites);
    let stepper_nh = Stepper::new(&TrajectoryConfig::non_hermitian(0.0, 1.0, 1.0, 0), &p)?;
    let stepper_qj = Stepper::new(&TrajectoryConfig::quantum_jump(0.0, 1.0, sites, 1.0, 0), &p)?;
    let (mut nh, mut qj) = (exact.clone(), exact.clone());
    let mut noise = NoiseStream::new(0, 0);
    for _ in 0..steps {
        exact = hamiltonian_step(&exact, &h, DEFAULT_QSD_DT)?;
        nh = stepper_nh.step(&nh, &mut noise)?.0;
        qj = stepper_qj.step(&qj, &mut noise)?.0;
    }
    let g = exact.correlations()?.nambu();
    let diff = |s: &GaussianState| -> Result<f64> {
        Ok((s.correlations()?.nambu() - &g).iter().fold(0.0_f64, |m, z| m.max(z.norm())))
    };
    let worst = diff(&nh)?.max(diff(&qj)?);
    Ok(verdict(worst < 1e-10, format!("max |Δ𝔾| = {worst:.2e}")))
}

/// Gaussian entropies against the dense partial trace on random states.
pub fn check_dense_entropy(sites: usize, samples: usize) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let s = GaussianState::random(sites, &mut rng);
        let ket = gaussian_ket(&s.pairing_matrix()?)?;
        let spec = SubsystemSpec::new(0, sites / 2, sites)?;
        worst = worst.max((entanglement_entropy(&state_spectrum(&s, &spec)?) - dense_entropy(&ket, &spec)?).abs());
    }
    Ok(verdict(worst < 1e-8, format!("max |ΔS| = {worst:.2e} over {samples} states, L={sites}")))
}

/// The fast invariant suite; `quick` keeps it well under a minute.
pub fn validate_suite(quick: bool) -> Vec<CheckOutcome> {
    let (sites, steps, seeds) = if quick { (8, 500, 2) } else { (16, 2000, 4) };
    vec![
        CheckOutcome::from("dispersion", check_dispersion(|p| Ok(build_bdg(p)?.full()))),
        CheckOutcome::from("nh-gap-closing", check_nh_gap()),
        CheckOutcome::from("canonical-pairs", check_canonical(sites, steps, seeds)),
        CheckOutcome::from("entropy-bounds", check_entropy_bounds(sites, if quick { 10 } else { 50 })),
        CheckOutcome::from("gamma-zero-collapse", check_gamma_zero(sites, steps)),
        CheckOutcome::from("gaussian-vs-dense-entropy", check_dense_entropy(6, if quick { 5 } else { 20 })),
    ]
}

/// `Re ω_{π/2}` of the no-click dispersion vanishes at `γ = 4J`.
pub fn check_nh_gap() -> Result<Verdict> {
    let w = unravel_core::ising::nh_dispersion(4.0, std::f64::consts::FRAC_PI_2, 1.0);
    Ok(verdict(w.re.abs() < 1e-12, format!("|Re ω(π/2)| = {:.2e} at γ = 4", w.re.abs())))
}

/// Ensemble means of `⟨n_j⟩(t)` for one unraveling at `L` sites.
pub fn occupation_ensemble(cfg: &TrajectoryConfig, params: &IsingParams, n_traj: usize) -> Result<Vec<(f64, f64)>> {
    let mut cfg = cfg.clone();
    cfg.record_occupations = true;
    cfg.record_every = cfg.steps();
    let series = run_ensemble(&cfg, params, &SubsystemSpec::quarter(params.sites), n_traj)?;
    Ok((0..params.sites)
        .map(|j| {
            let finals: Vec<f64> = series.iter().map(|s| s.occupations.last().unwrap()[j]).collect();
            mean_and_error(&finals)
        })
        .collect())
}

/// Master-equation occupations at time `t` from the vacuum quench.
pub fn lindblad_occupations(params: &IsingParams, gamma: f64, t: f64, max_step: f64, shifted: bool) -> Result<DenseDensityMatrix> {
    let h = build_dense_hamiltonian(params)?;
    let rho0 = DenseDensityMatrix::pure(&DenseKet::vacuum(params.sites)?);
    integrate_lindblad(&rho0, &h, &monitor_operators(params.sites, shifted), gamma, t, max_step)
}

/// Quantum-state diffusion and jump ensembles against the master equation,
/// plus the identity of the `n` and `1 + n` dissipators.
pub fn lindblad_consistency(sites: usize, n_traj: usize, seed: u64) -> Vec<CheckOutcome> {
    let (gamma, t, dt) = (1.0, 1.0, 0.002);
    let run = || -> Result<(Vec<f64>, f64)> {
        let p = IsingParams::new(1.0, 1.0, sites)?;
        let a = lindblad_occupations(&p, gamma, t, dt / 10.0, false)?;
        let b = lindblad_occupations(&p, gamma, t, dt / 10.0, true)?;
        let diff = (a.matrix() - b.matrix()).iter().fold(0.0_f64, |m, z: &C64| m.max(z.norm()));
        Ok((a.occupations(sites), diff))
    };
    let (exact, dissipator_diff) = match run() {
        Ok(v) => v,
        Err(e) => return vec![CheckOutcome { name: "lindblad-reference", passed: false, detail: format!("error: {e}") }],
    };
    let mut out = vec![CheckOutcome {
        name: "dissipator-shift-identity",
        passed: dissipator_diff < 1e-9,
        detail: format!("max |ρ_n − ρ_(1+n)| = {dissipator_diff:.2e}"),
    }];
    for (name, unraveling) in [("qsd-vs-lindblad", Unraveling::Qsd), ("qj-vs-lindblad", Unraveling::QuantumJump)] {
        let result = (|| -> Result<Verdict> {
            let p = IsingParams::new(1.0, 1.0, sites)?;
            let mut cfg = match unraveling {
                Unraveling::Qsd => TrajectoryConfig::qsd(gamma, t, seed),
                _ => TrajectoryConfig::quantum_jump(gamma, 1.0, sites, t, seed),
            };
            cfg.dt = dt;
            let means = occupation_ensemble(&cfg, &p, n_traj)?;
            let worst = means
                .iter()
                .zip(&exact)
                .map(|((m, e), x)| (m - x).abs() / e)
                .fold(0.0, f64::max);
            let summary: Vec<String> = means
                .iter()
                .zip(&exact)
                .map(|((m, e), x)| format!("{m:.4}±{e:.4} vs {x:.4}"))
                .collect();
            Ok(verdict(worst <= 3.0, format!("max {worst:.2}σ; n_j: {}", summary.join(", "))))
        })();
        out.push(CheckOutcome::from(name, result));
    }
    out
}
