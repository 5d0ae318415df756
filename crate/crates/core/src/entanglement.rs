//! Subsystem entropies and correlation functions from two-point functions.
//!
//! Majoranas are `č_{j,1} = c†_j + c_j`, `č_{j,2} = i(c†_j − c_j)`, stacked as
//! `(č_{·,1}, č_{·,2}) = 𝕎 Ψ`. Their correlation matrix is `𝕄 = I + iA` with
//! `A` real antisymmetric; a block's entropy follows from the spectrum of the
//! restriction of `iA` to that block.

use ndarray::{s, Array2, ArrayView2};
use ndarray_linalg::{EigValsh, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{CorrelationMatrices, GaussianState};
use crate::linalg::{dagger, I};

/// A contiguous block of sites `[offset, offset + length)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub offset: usize,
    pub length: usize,
}

impl SubsystemSpec {
    pub fn new(offset: usize, length: usize, sites: usize) -> Result<Self> {
        if length == 0 || offset + length > sites {
            return Err(Error::InvalidParams(format!(
                "subsystem [{offset}, {}) does not fit in {sites} sites",
                offset + length
            )));
        }
        Ok(Self { offset, length })
    }

    /// The leading quarter of the chain (at least one site).
    pub fn quarter(sites: usize) -> Self {
        Self { offset: 0, length: (sites / 4).max(1) }
    }

    /// The rest of the chain, when it is itself contiguous.
    pub fn complement(&self, sites: usize) -> Option<Self> {
        if self.length >= sites {
            None
        } else if self.offset == 0 {
            Some(Self { offset: self.length, length: sites - self.length })
        } else if self.offset + self.length == sites {
            Some(Self { offset: 0, length: self.offset })
        } else {
            None
        }
    }

    fn check(&self, sites: usize) -> Result<()> {
        Self::new(self.offset, self.length, sites).map(|_| ())
    }
}

/// Real antisymmetric part `A` of `𝕄 = I + iA`.
#[derive(Clone, Debug, PartialEq)]
pub struct MajoranaCorrelation {
    pub a: Array2<f64>,
}

impl MajoranaCorrelation {
    /// `𝕄` itself.
    pub fn matrix(&self) -> Array2<C64> {
        let n = self.a.nrows();
        Array2::<C64>::eye(n) + self.a.mapv(|x| I * x)
    }
}

/// Canonical-form coefficients `λ_q ∈ [0, 1]` of a block and the
/// corresponding eigenvalues `P_q = (1 + λ_q)/2` of its reduced state.
#[derive(Clone, Debug, PartialEq)]
pub struct MajoranaSpectrum {
    pub lambdas: Vec<f64>,
    pub p: Vec<f64>,
}

impl MajoranaSpectrum {
    pub fn from_lambdas(lambdas: Vec<f64>) -> Self {
        let p = lambdas.iter().map(|l| 0.5 * (1.0 + l)).collect();
        Self { lambdas, p }
    }
}

const ANTISYMMETRY_TOLERANCE: f64 = 1e-9;
const LAMBDA_TOLERANCE: f64 = 1e-9;

fn majorana_from_nambu(nambu: ArrayView2<'_, C64>) -> Result<Array2<f64>> {
    let n = nambu.nrows() / 2;
    let mut w = Array2::<C64>::zeros((2 * n, 2 * n));
    for j in 0..n {
        w[[j, j]] = C64::new(1.0, 0.0);
        w[[j, j + n]] = C64::new(1.0, 0.0);
        w[[j + n, j]] = -I;
        w[[j + n, j + n]] = I;
    }
    let m = w.dot(&nambu).dot(&dagger(&w));
    // A = −i(𝕄 − I)
    let a_complex = (m - Array2::<C64>::eye(2 * n)).mapv(|z| -I * z);
    let imag = a_complex.iter().fold(0.0_f64, |acc, z| acc.max(z.im.abs()));
    let a = a_complex.mapv(|z| z.re);
    let asym = a.iter().zip(a.t().iter()).fold(0.0_f64, |acc, (x, y)| acc.max((x + y).abs()));
    if imag > ANTISYMMETRY_TOLERANCE || asym > ANTISYMMETRY_TOLERANCE {
        return Err(Error::Corruption(format!(
            "Majorana matrix not of the form I + iA (imaginary part {imag:.3e}, asymmetry {asym:.3e})"
        )));
    }
    Ok(a)
}

pub fn majorana_correlation(corr: &CorrelationMatrices) -> Result<MajoranaCorrelation> {
    Ok(MajoranaCorrelation { a: majorana_from_nambu(corr.nambu().view())? })
}

fn block_indices(spec: &SubsystemSpec, sites: usize) -> Vec<usize> {
    let sites_in = spec.offset..spec.offset + spec.length;
    sites_in.clone().chain(sites_in.map(|j| j + sites)).collect()
}

fn spectrum_of_block(a_block: &Array2<f64>) -> Result<MajoranaSpectrum> {
    let ell = a_block.nrows() / 2;
    let ia = a_block.mapv(|x| I * x);
    let vals = ia.eigvalsh(UPLO::Lower)?;
    // Ascending ±λ pairs: the upper half holds the λ_q.
    let mut lambdas = Vec::with_capacity(ell);
    for &v in vals.iter().skip(ell) {
        if v < -LAMBDA_TOLERANCE || v > 1.0 + LAMBDA_TOLERANCE || !v.is_finite() {
            return Err(Error::Corruption(format!("Majorana eigenvalue {v} outside [0, 1]")));
        }
        lambdas.push(v.clamp(0.0, 1.0));
    }
    Ok(MajoranaSpectrum::from_lambdas(lambdas))
}

/// Restricts `A` to both Majorana flavours of the sites in `spec`.
pub fn subsystem_spectrum(a: &Array2<f64>, spec: &SubsystemSpec) -> Result<MajoranaSpectrum> {
    let sites = a.nrows() / 2;
    spec.check(sites)?;
    let idx = block_indices(spec, sites);
    let block = Array2::from_shape_fn((idx.len(), idx.len()), |(i, j)| a[[idx[i], idx[j]]]);
    spectrum_of_block(&block)
}

/// Block spectrum straight from the frame, touching only the block's rows.
pub fn state_spectrum(state: &GaussianState, spec: &SubsystemSpec) -> Result<MajoranaSpectrum> {
    let l = state.sites();
    spec.check(l)?;
    let ell = spec.length;
    let rows = spec.offset..spec.offset + ell;
    let u_a = state.u().slice(s![rows.clone(), ..]).to_owned();
    let v_a = state.v().slice(s![rows, ..]).to_owned();
    let g = u_a.dot(&dagger(&u_a));
    let f = u_a.dot(&dagger(&v_a));
    let sub = CorrelationMatrices { g, f };
    let a = majorana_from_nambu(sub.nambu().view())?;
    spectrum_of_block(&a)
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 { 0.0 } else { x * x.ln() }
}

/// Von Neumann entropy in nats.
pub fn entanglement_entropy(spectrum: &MajoranaSpectrum) -> f64 {
    spectrum
        .p
        .iter()
        .map(|&p| {
            let p = p.clamp(0.5, 1.0);
            -(xlogx(p) + xlogx(1.0 - p))
        })
        .sum::<f64>()
        .max(0.0)
}

/// Rényi entropy of order `beta` (`beta > 0`, `beta != 1`).
pub fn renyi_entropy(spectrum: &MajoranaSpectrum, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || beta == 1.0 || !beta.is_finite() {
        return Err(Error::InvalidParams(format!(
            "Rényi order must be positive and != 1, got {beta} (use entanglement_entropy for 1)"
        )));
    }
    let sum: f64 = spectrum
        .p
        .iter()
        .map(|&p| {
            let p = p.clamp(0.5, 1.0);
            (p.powf(beta) + (1.0 - p).powf(beta)).ln()
        })
        .sum();
    Ok((sum / (1.0 - beta)).max(0.0))
}

/// `C_j(r) = |⟨c†_j c_{j+r}⟩|²` for every `j`, indices wrapping around the ring.
pub fn square_correlation(corr: &CorrelationMatrices, r: usize) -> Vec<f64> {
    let l = corr.sites();
    (0..l)
        .map(|j| {
            let jr = (j + r) % l;
            let delta = if jr == j { 1.0 } else { 0.0 };
            (C64::new(delta, 0.0) - corr.g[[jr, j]]).norm_sqr()
        })
        .collect()
}

/// Site-averaged `C(r)` for `r = 0..=L/2` from the frame.
pub fn square_correlation_profile(state: &GaussianState) -> Result<Vec<f64>> {
    let u = state.u();
    let g = u.dot(&u.t().mapv(|z| z.conj()));
    let corr = CorrelationMatrices { f: Array2::zeros(g.dim()), g };
    let l = state.sites();
    Ok((0..=l / 2)
        .map(|r| square_correlation(&corr, r).iter().sum::<f64>() / l as f64)
        .collect())
}

/// `S_ℓ` of a state's block.
pub fn state_entropy(state: &GaussianState, spec: &SubsystemSpec) -> Result<f64> {
    Ok(entanglement_entropy(&state_spectrum(state, spec)?))
}
