//! Gaussian machinery against the full Fock-space oracle.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unravel_core::entanglement::{entanglement_entropy, renyi_entropy, state_spectrum, SubsystemSpec};
use unravel_core::gaussian::GaussianState;
use unravel_core::ising::{build_bdg, ground_state, IsingParams};
use unravel_core::oracle::{
    build_dense_hamiltonian, dense_entropy, dense_ground_state, dense_nh_trajectory, dense_qj_trajectory,
    dense_qsd_trajectory, dense_renyi, dense_spectrum, even_sector, evolve_unitary, gaussian_ket, project, DenseKet,
};
use unravel_core::trajectories::{run_trajectory, NoiseStream, TrajectoryConfig};

fn params(h: f64, l: usize) -> IsingParams {
    IsingParams::new(1.0, h, l).unwrap()
}

fn ket_of(state: &GaussianState) -> DenseKet {
    gaussian_ket(&state.pairing_matrix().unwrap()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn ground_energy_matches_free_fermion_sum() {
    let p = params(1.0, 8);
    let h = build_dense_hamiltonian(&p).unwrap();
    let even = dense_spectrum(&project(&h, &even_sector(8))).unwrap();
    let free: f64 = -build_bdg(&p)
        .unwrap()
        .quasiparticle_energies()
        .unwrap()
        .iter()
        .filter(|e| **e > 0.0)
        .sum::<f64>()
        / 2.0;
    assert!((even[0] - free).abs() < 1e-10, "{} vs {}", even[0], free);
}

#[test]
fn pairing_matrix_round_trip_on_ground_state() {
    let p = params(2.0, 4);
    let gauss = ground_state(&build_bdg(&p).unwrap()).unwrap();
    let (_, dense) = dense_ground_state(&build_dense_hamiltonian(&p).unwrap(), 4).unwrap();
    let overlap = dense.inner(&ket_of(&gauss)).norm_sqr();
    assert!(overlap >= 1.0 - 1e-9, "overlap {overlap}");
}

#[test]
fn random_state_correlations_match_operator_expectations() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let s = GaussianState::random(4, &mut rng);
        let c = s.correlations().unwrap();
        let (g, f) = ket_of(&s).correlations();
        let diff = |a: &Array2<C64>, b: &Array2<C64>| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(diff(&c.g, &g) < 1e-10);
        assert!(diff(&c.f, &f) < 1e-10);
    }
}

#[test]
fn entropies_match_partial_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let s = GaussianState::random(6, &mut rng);
        let ket = ket_of(&s);
        for (offset, length) in [(0, 1), (0, 2), (0, 3), (2, 3), (1, 4)] {
            let spec = SubsystemSpec::new(offset, length, 6).unwrap();
            let spectrum = state_spectrum(&s, &spec).unwrap();
            assert!((entanglement_entropy(&spectrum) - dense_entropy(&ket, &spec).unwrap()).abs() < 1e-8);
            assert!((renyi_entropy(&spectrum, 2.0).unwrap() - dense_renyi(&ket, &spec, 2.0).unwrap()).abs() < 1e-8);
        }
    }
}

#[test]
fn unitary_quench_matches_schroedinger() {
    let spec = SubsystemSpec::new(0, 2, 8).unwrap();
    for h in [0.5, 1.0, 2.0] {
        let p = params(h, 8);
        let cfg = TrajectoryConfig::qsd(0.0, 5.0, 0).with_dt(0.05).with_record_every(10);
        let series = run_trajectory(&cfg, &p, &spec, 0).unwrap();
        let dense_h = build_dense_hamiltonian(&p).unwrap();
        let vacuum = DenseKet::vacuum(8).unwrap();
        for (i, t) in series.times.iter().enumerate() {
            let ket = evolve_unitary(&vacuum, &dense_h, *t).unwrap();
            assert!((series.entropy[i] - dense_entropy(&ket, &spec).unwrap()).abs() < 1e-8);
            assert!(max_diff(&series.occupations[i], &ket.occupations()) < 1e-8);
        }
    }
}

fn shared_noise_case(cfg: &TrajectoryConfig, index: u64) -> f64 {
    let p = params(1.0, 6);
    let spec = SubsystemSpec::quarter(6);
    let gauss = run_trajectory(cfg, &p, &spec, index).unwrap();
    let mut noise = NoiseStream::new(cfg.seed, index);
    let vacuum = DenseKet::vacuum(6).unwrap();
    let dense = match cfg.unraveling {
        unravel_core::Unraveling::Qsd => dense_qsd_trajectory(&vacuum, &p, cfg, &spec, &mut noise),
        unravel_core::Unraveling::QuantumJump => dense_qj_trajectory(&vacuum, &p, cfg, &spec, &mut noise),
        unravel_core::Unraveling::NonHermitian => dense_nh_trajectory(&vacuum, &p, cfg, &spec),
    }
    .unwrap();
    assert_eq!(gauss.times, dense.times);
    assert_eq!(gauss.jumps as usize, dense.jumps.len());
    if cfg.unraveling == unravel_core::Unraveling::QuantumJump {
        assert!(gauss.jumps > 0);
    }
    assert!(gauss.entropy.iter().cloned().fold(0.0, f64::max) > 0.1);
    max_diff(&gauss.entropy, &dense.entropy)
}

#[test]
fn diffusion_with_shared_noise() {
    let cfg = TrajectoryConfig::qsd(1.0, 2.0, 99).with_dt(0.01);
    for index in 0..2 {
        let d = shared_noise_case(&cfg, index);
        assert!(d < 1e-6, "trajectory {index}: {d:e}");
    }
}

#[test]
fn jumps_with_shared_draws() {
    let cfg = TrajectoryConfig::quantum_jump(1.0, 1.0, 6, 2.0, 99).with_dt(0.01);
    for index in 0..2 {
        let d = shared_noise_case(&cfg, index);
        assert!(d < 1e-6, "trajectory {index}: {d:e}");
    }
}

#[test]
fn no_click_evolution() {
    let cfg = TrajectoryConfig::non_hermitian(0.5, 2f64.sqrt() - 1.0, 5.0, 0).with_dt(0.05);
    let d = shared_noise_case(&cfg, 0);
    assert!(d < 1e-7, "{d:e}");
}
