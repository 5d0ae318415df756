//! The transverse-field Ising ring in Bogoliubov–De Gennes form.
//!
//! The chain is mapped to spinless fermions by Jordan–Wigner. Dynamics are
//! restricted to the even-parity sector, where the fermions see antiperiodic
//! boundary conditions. `ℍ` stores the `½ Ψ† ℍ Ψ` normalization, so the
//! many-body Hamiltonian is `Ψ† ℍ Ψ` and single-particle frames evolve with
//! `exp(-2iℍt)`.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use ndarray_linalg::{EigValsh, Eigh, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::linalg::to_complex;

/// Couplings and size of the chain. Only the even-parity sector is modelled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    /// Spin-spin coupling `J`.
    pub coupling: f64,
    /// Transverse field `h`.
    pub field: f64,
    /// Number of sites `L`.
    pub sites: usize,
}

impl IsingParams {
    pub fn new(coupling: f64, field: f64, sites: usize) -> Result<Self> {
        let p = Self { coupling, field, sites };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 || self.sites % 2 != 0 {
            return Err(Error::InvalidParams(format!(
                "L must be an even integer >= 2, got {}",
                self.sites
            )));
        }
        if !(self.coupling > 0.0) || !self.coupling.is_finite() {
            return Err(Error::InvalidParams(format!("J must be positive, got {}", self.coupling)));
        }
        if !self.field.is_finite() {
            return Err(Error::InvalidParams(format!("h must be finite, got {}", self.field)));
        }
        Ok(())
    }
}

/// Real BdG blocks: `A` symmetric, `B` antisymmetric, `ℍ = [[A, B], [-B, -A]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BdgMatrix {
    a: Array2<f64>,
    b: Array2<f64>,
}

impl BdgMatrix {
    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn sites(&self) -> usize {
        self.a.nrows()
    }

    /// The assembled `2L × 2L` matrix.
    pub fn full(&self) -> Array2<f64> {
        let l = self.sites();
        let mut h = Array2::zeros((2 * l, 2 * l));
        for i in 0..l {
            for j in 0..l {
                h[[i, j]] = self.a[[i, j]];
                h[[i, j + l]] = self.b[[i, j]];
                h[[i + l, j]] = -self.b[[i, j]];
                h[[i + l, j + l]] = -self.a[[i, j]];
            }
        }
        h
    }

    pub fn full_complex(&self) -> Array2<C64> {
        to_complex(&self.full())
    }

    /// Quasiparticle energies `±ω_k`: the spectrum of the generator `2ℍ`.
    pub fn quasiparticle_energies(&self) -> Result<Vec<f64>> {
        let vals = self.full().eigvalsh(UPLO::Lower)?;
        Ok(vals.iter().map(|e| 2.0 * e).collect())
    }
}

/// Non-Hermitian BdG matrix acting on the `[U; V]` frame during no-click
/// evolution: `A`'s diagonal carries `h + iγα(2+α)/4`.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveBdgMatrix {
    matrix: Array2<C64>,
    gamma_eff: f64,
}

impl EffectiveBdgMatrix {
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// `γ·α(2+α)`.
    pub fn gamma_eff(&self) -> f64 {
        self.gamma_eff
    }

    pub fn sites(&self) -> usize {
        self.matrix.nrows() / 2
    }
}

pub fn build_bdg(params: &IsingParams) -> Result<BdgMatrix> {
    params.validate()?;
    let l = params.sites;
    let half = params.coupling / 2.0;
    let mut a = Array2::zeros((l, l));
    let mut b = Array2::zeros((l, l));
    for j in 0..l {
        a[[j, j]] = params.field;
    }
    for j in 0..l - 1 {
        a[[j, j + 1]] = -half;
        a[[j + 1, j]] = -half;
        b[[j, j + 1]] = -half;
        b[[j + 1, j]] = half;
    }
    // Antiperiodic closing bond. At L = 2 it lands on the same entries as the
    // bulk bond and cancels the hopping, as it should.
    a[[l - 1, 0]] += half;
    a[[0, l - 1]] += half;
    b[[l - 1, 0]] += half;
    b[[0, l - 1]] -= half;
    Ok(BdgMatrix { a, b })
}

/// `ω_k = 2J sqrt(1 + (h/J)² − 2(h/J) cos k)`.
pub fn dispersion(params: &IsingParams, k: f64) -> f64 {
    let g = params.field / params.coupling;
    2.0 * params.coupling * (1.0 + g * g - 2.0 * g * k.cos()).max(0.0).sqrt()
}

/// Dispersion of the no-click generator at zero real field, `h = iγ/4`.
pub fn nh_dispersion(gamma: f64, k: f64, coupling: f64) -> C64 {
    // sin(π/2 − k) keeps cos k exact near the branch point at k = π/2.
    let cos_k = (std::f64::consts::FRAC_PI_2 - k).sin();
    let radicand = C64::new(1.0 - gamma * gamma / (16.0 * coupling * coupling), -gamma / (2.0 * coupling) * cos_k);
    2.0 * coupling * radicand.sqrt()
}

/// Antiperiodic momenta `k = π(2n − 1)/L`, `n = 1..L`, folded into `(−π, π]`.
pub fn momentum_grid(sites: usize) -> Vec<f64> {
    (1..=sites)
        .map(|n| {
            let k = PI * (2 * n - 1) as f64 / sites as f64;
            if k > PI { k - 2.0 * PI } else { k }
        })
        .collect()
}

/// Ground state at `h = +∞`: the fermionic vacuum.
pub fn initial_state(params: &IsingParams) -> GaussianState {
    GaussianState::vacuum(params.sites)
}

/// Quasiparticle vacuum of `ℍ`: the frame spans its positive-energy eigenvectors.
pub fn ground_state(h: &BdgMatrix) -> Result<GaussianState> {
    let l = h.sites();
    let (vals, vecs) = h.full().eigh(UPLO::Lower)?;
    if vals[l - 1] >= 0.0 || vals[l] <= 0.0 {
        return Err(Error::InvalidParams("BdG spectrum has a zero mode; ground state is degenerate".into()));
    }
    let frame = to_complex(&vecs.slice(s![.., l..]).to_owned());
    GaussianState::from_frame(frame)
}

pub fn build_effective_bdg(params: &IsingParams, gamma: f64, alpha: f64) -> Result<EffectiveBdgMatrix> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParams(format!("alpha must be positive, got {alpha}")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParams(format!("gamma must be non-negative, got {gamma}")));
    }
    let bdg = build_bdg(params)?;
    let gamma_eff = gamma * alpha * (2.0 + alpha);
    let mut matrix = bdg.full_complex();
    let l = params.sites;
    if gamma_eff != 0.0 {
        let shift = C64::new(0.0, gamma_eff / 4.0);
        for j in 0..l {
            matrix[[j, j]] += shift;
            matrix[[j + l, j + l]] -= shift;
        }
    }
    Ok(EffectiveBdgMatrix { matrix, gamma_eff })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(h: f64, l: usize) -> IsingParams {
        IsingParams::new(1.0, h, l).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(IsingParams::new(1.0, 1.0, 3).is_err());
        assert!(IsingParams::new(1.0, 1.0, 0).is_err());
        assert!(IsingParams::new(0.0, 1.0, 4).is_err());
    }

    #[test]
    fn blocks_at_zero_field() {
        let bdg = build_bdg(&params(0.0, 4)).unwrap();
        let a = bdg.a();
        let b = bdg.b();
        for j in 0..4 {
            assert_eq!(a[[j, j]], 0.0);
        }
        assert_eq!(a[[0, 1]], -0.5);
        assert_eq!(a[[2, 3]], -0.5);
        assert_eq!(a[[3, 0]], 0.5);
        assert_eq!(a[[0, 3]], 0.5);
        assert_eq!(b[[0, 1]], -0.5);
        assert_eq!(b[[1, 0]], 0.5);
        assert_eq!(b[[3, 0]], 0.5);
        assert_eq!(b[[0, 3]], -0.5);
        assert_eq!(a, &a.t().to_owned());
        assert_eq!(b, &b.t().mapv(|x| -x));
    }

    #[test]
    fn diagonal_is_the_field() {
        let bdg = build_bdg(&params(2.0, 4)).unwrap();
        let zero = build_bdg(&params(0.0, 4)).unwrap();
        for j in 0..4 {
            assert_eq!(bdg.a()[[j, j]], 2.0);
        }
        let diff = bdg.a() - zero.a();
        assert_eq!(diff.sum(), 8.0);
    }

    #[test]
    fn dispersion_values() {
        assert!(dispersion(&params(1.0, 4), 0.0).abs() < 1e-15);
        for k in [0.0, 0.3, 1.7, PI] {
            assert!((dispersion(&params(0.0, 4), k) - 2.0).abs() < 1e-15);
        }
        assert!((dispersion(&params(2.0, 4), PI) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn nh_dispersion_values() {
        let w = nh_dispersion(0.0, 0.0, 1.0);
        assert!((w - C64::new(2.0, 0.0)).norm() < 1e-15);
        assert!(nh_dispersion(4.0, PI / 2.0, 1.0).norm() < 1e-7);
        let expect = 2.0 * C64::new(0.75, -1.0).sqrt();
        assert!((nh_dispersion(2.0, 0.0, 1.0) - expect).norm() < 1e-15);
    }

    #[test]
    fn spectrum_matches_dispersion_on_antiperiodic_grid() {
        let p = params(1.0, 8);
        let mut dense = build_bdg(&p).unwrap().quasiparticle_energies().unwrap();
        let mut expect: Vec<f64> = momentum_grid(8)
            .iter()
            .flat_map(|&k| [dispersion(&p, k), -dispersion(&p, k)])
            .collect();
        dense.sort_by(f64::total_cmp);
        expect.sort_by(f64::total_cmp);
        for (d, e) in dense.iter().zip(&expect) {
            assert!((d - e).abs() < 1e-10, "{d} vs {e}");
        }
    }

    #[test]
    fn particle_hole_symmetry() {
        let p = params(0.7, 6);
        let h = build_bdg(&p).unwrap().full();
        let l = 6;
        let mut tau = Array2::<f64>::zeros((12, 12));
        for j in 0..l {
            tau[[j, j + l]] = 1.0;
            tau[[j + l, j]] = 1.0;
        }
        // ℍ is real, so conjugation is trivial.
        let lhs = tau.dot(&h).dot(&tau);
        assert!((&lhs + &h).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn effective_bdg() {
        let p = params(1.0, 4);
        let plain = build_bdg(&p).unwrap().full_complex();
        let eff0 = build_effective_bdg(&p, 0.0, 1.0).unwrap();
        assert_eq!(eff0.matrix(), &plain);
        let eff = build_effective_bdg(&p, 2.0, 1.0).unwrap();
        assert_eq!(eff.matrix()[[0, 0]], C64::new(1.0, 1.5));
        assert_eq!(eff.matrix()[[4, 4]], C64::new(-1.0, -1.5));
        let alpha = 2f64.sqrt() - 1.0;
        let eff = build_effective_bdg(&p, 3.0, alpha).unwrap();
        assert!((eff.matrix()[[1, 1]].im - 0.75).abs() < 1e-15);
        assert!(build_effective_bdg(&p, 1.0, 0.0).is_err());
    }

    #[test]
    fn vacuum_initial_state() {
        let s = initial_state(&params(1.0, 4));
        assert_eq!(s.u(), Array2::<C64>::eye(4));
        assert!(s.v().iter().all(|z| *z == C64::new(0.0, 0.0)));
    }
}
