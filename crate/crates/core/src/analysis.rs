//! Ensemble statistics, asymptotic time averages and size-scaling fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectories::EntropyTimeSeries;

/// Block length, in time units, for the autocorrelation correction of
/// [`time_average`].
pub const BLOCK_LENGTH: f64 = 10.0;
/// Iteration cap of the tanh fit.
pub const MAX_FIT_ITERATIONS: usize = 500;
/// Upper bound on the fitted rate; `tanh` is saturated long before.
const LAMBDA_CAP: f64 = 50.0;
const TIME_SLACK: f64 = 1e-9;

/// Which recorded observable to aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "entropy")]
    Entropy,
    #[serde(rename = "renyi2")]
    Renyi2,
}

impl Quantity {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Entropy => "entropy",
            Self::Renyi2 => "renyi2",
        }
    }

    fn values<'a>(&self, s: &'a EntropyTimeSeries) -> &'a [f64] {
        match self {
            Self::Entropy => &s.entropy,
            Self::Renyi2 => &s.renyi2,
        }
    }
}

/// Mean and standard error of `values`, summed in the given order.
///
/// The mean is accumulated as deviations from the first value, so identical
/// inputs return that value exactly.
pub fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let base = values[0];
    let mean = base + values.iter().map(|x| x - base).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation over `√N_rand`.
    pub error: Vec<f64>,
    pub n_rand: usize,
    /// `(seed, index)` of each contributing trajectory.
    pub trajectories: Vec<(u64, u64)>,
}

fn check_grids(series: &[EntropyTimeSeries]) -> Result<()> {
    if series.len() < 2 {
        return Err(Error::Analysis(format!("need at least 2 trajectories, got {}", series.len())));
    }
    let grid = &series[0].times;
    if series.iter().any(|s| &s.times != grid) {
        return Err(Error::Analysis("trajectories are recorded on different time grids".into()));
    }
    Ok(())
}

/// Pointwise mean and standard error of `quantity` over trajectories.
pub fn ensemble_average_of(series: &[EntropyTimeSeries], quantity: Quantity) -> Result<EnsembleStats> {
    check_grids(series)?;
    let times = series[0].times.clone();
    let mut mean = Vec::with_capacity(times.len());
    let mut error = Vec::with_capacity(times.len());
    let mut column = vec![0.0; series.len()];
    for i in 0..times.len() {
        for (slot, s) in column.iter_mut().zip(series) {
            *slot = quantity.values(s)[i];
        }
        let (m, e) = mean_and_error(&column);
        mean.push(m);
        error.push(e);
    }
    Ok(EnsembleStats {
        times,
        mean,
        error,
        n_rand: series.len(),
        trajectories: series.iter().map(|s| (s.seed, s.index)).collect(),
    })
}

/// Ensemble average of the entanglement entropy.
pub fn ensemble_average(series: &[EntropyTimeSeries]) -> Result<EnsembleStats> {
    ensemble_average_of(series, Quantity::Entropy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticEstimate {
    pub value: f64,
    pub error: f64,
    pub t_star: f64,
    pub t_max: f64,
}

/// Indices of the samples in `[t_star, t_max]`, which must span the window.
fn window(times: &[f64], t_star: f64, t_max: f64) -> Result<(usize, usize)> {
    if !(t_star < t_max) {
        return Err(Error::Analysis(format!("empty averaging window [{t_star}, {t_max}]")));
    }
    let first = times.iter().position(|t| *t >= t_star - TIME_SLACK);
    let last = times.iter().rposition(|t| *t <= t_max + TIME_SLACK);
    match (first, last) {
        (Some(a), Some(b))
            if b > a && (times[a] - t_star).abs() <= TIME_SLACK && (times[b] - t_max).abs() <= TIME_SLACK =>
        {
            Ok((a, b))
        }
        _ => Err(Error::Analysis(format!("recorded samples do not span [{t_star}, {t_max}]"))),
    }
}

/// Trapezoid weights normalized to sum to one.
fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (times[i + 1] - times[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// `Σ w_i x_i` accumulated as deviations from `x_0`, so a constant is returned
/// exactly.
fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let base = values[0];
    base + values.iter().zip(weights).map(|(x, w)| w * (x - base)).sum::<f64>()
}

/// Per-trajectory time average of `values` over the window.
pub fn trapezoid_average(times: &[f64], values: &[f64], t_star: f64, t_max: f64) -> Result<f64> {
    let (a, b) = window(times, t_star, t_max)?;
    Ok(weighted_mean(&values[a..=b], &trapezoid_weights(&times[a..=b])))
}

/// `1/(T−t*) ∫_{t*}^{T} S(t) dt` of the ensemble mean.
///
/// The error treats blocks of [`BLOCK_LENGTH`] time units as independent and
/// samples inside a block as fully correlated: each block contributes its
/// averaged pointwise standard error, and blocks add in quadrature.
pub fn time_average(stats: &EnsembleStats, t_star: f64, t_max: f64) -> Result<AsymptoticEstimate> {
    let (a, b) = window(&stats.times, t_star, t_max)?;
    let times = &stats.times[a..=b];
    let weights = trapezoid_weights(times);
    let value = weighted_mean(&stats.mean[a..=b], &weights);
    let n_blocks = ((t_max - t_star) / BLOCK_LENGTH).ceil().max(1.0) as usize;
    let mut block_err = vec![0.0; n_blocks];
    for (i, t) in times.iter().enumerate() {
        let k = (((t - t_star) / BLOCK_LENGTH) as usize).min(n_blocks - 1);
        block_err[k] += weights[i] * stats.error[a + i];
    }
    let error = block_err.iter().map(|e| e * e).sum::<f64>().sqrt();
    Ok(AsymptoticEstimate { value, error, t_star, t_max })
}

/// Time average per trajectory, then mean and standard error across the
/// independent trajectories.
pub fn asymptotic_from_trajectories(
    series: &[EntropyTimeSeries],
    quantity: Quantity,
    t_star: f64,
    t_max: f64,
) -> Result<AsymptoticEstimate> {
    check_grids(series)?;
    let averages = series
        .iter()
        .map(|s| trapezoid_average(&s.times, quantity.values(s), t_star, t_max))
        .collect::<Result<Vec<_>>>()?;
    let (value, error) = mean_and_error(&averages);
    Ok(AsymptoticEstimate { value, error, t_star, t_max })
}

/// Warns when the halves `[t*, m]` and `[m, T]` disagree by more than three
/// combined errors.
pub fn stationarity_warning(stats: &EnsembleStats, t_star: f64, t_max: f64) -> Option<String> {
    let grid_mid = {
        let mid = 0.5 * (t_star + t_max);
        let idx = stats.times.iter().position(|t| *t >= mid)?;
        stats.times[idx]
    };
    let early = time_average(stats, t_star, grid_mid).ok()?;
    let late = time_average(stats, grid_mid, t_max).ok()?;
    let combined = (early.error.powi(2) + late.error.powi(2)).sqrt();
    ((early.value - late.value).abs() > 3.0 * combined).then(|| {
        format!(
            "not stationary: mean {:.4} on [{t_star}, {grid_mid}] vs {:.4} on [{grid_mid}, {t_max}] (±{:.4})",
            early.value, late.value, combined
        )
    })
}

/// Warns where `S̄(γ)` rises with `γ` by more than three combined errors;
/// points are `(γ, value, error)`.
pub fn monotonicity_warnings(points: &[(f64, f64, f64)]) -> Vec<String> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted
        .windows(2)
        .filter(|w| w[1].1 - w[0].1 > 3.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt())
        .map(|w| format!("S̄ rises from γ={} ({:.4}) to γ={} ({:.4})", w[0].0, w[0].1, w[1].0, w[1].1))
        .collect()
}

/// Site- and time-averaged `C(r)`, `r = 0..=L/2`, as `(mean, error)` over
/// trajectories.
pub fn asymptotic_correlation(series: &[EntropyTimeSeries], t_star: f64, t_max: f64) -> Result<Vec<(f64, f64)>> {
    check_grids(series)?;
    let width = series[0].correlations.first().map(|c| c.len()).unwrap_or(0);
    if width == 0 || series.iter().any(|s| s.correlations.len() != s.times.len()) {
        return Err(Error::Analysis("correlation profiles were not recorded".into()));
    }
    (0..width)
        .map(|r| {
            let per_traj = series
                .iter()
                .map(|s| {
                    let column: Vec<f64> = s.correlations.iter().map(|c| c[r]).collect();
                    trapezoid_average(&s.times, &column, t_star, t_max)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_and_error(&per_traj))
        })
        .collect()
}

/// Weighted straight-line fit `y = c + s·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub slope_error: f64,
    pub intercept: f64,
    pub chi2: f64,
}

/// Fits `y = c + s·ln L` to `(L, y, σ)` with weights `1/σ²`.
pub fn fit_log_slope(points: &[(usize, f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 || points.iter().any(|p| !(p.2 > 0.0)) {
        return Err(Error::Analysis("slope fit needs two or more points with positive errors".into()));
    }
    let (mut s0, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(l, y, e) in points {
        let (x, w) = ((l as f64).ln(), 1.0 / (e * e));
        s0 += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = s0 * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::Analysis("slope fit needs two distinct sizes".into()));
    }
    let slope = (s0 * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2 = points
        .iter()
        .map(|&(l, y, e)| ((y - intercept - slope * (l as f64).ln()) / e).powi(2))
        .sum();
    Ok(LineFit { slope, slope_error: (s0 / det).sqrt(), intercept, chi2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TanhFit {
    pub lambda: f64,
    pub lambda_error: f64,
    pub amplitude: f64,
    pub amplitude_error: f64,
    /// Weighted sum of squared residuals.
    pub residual: f64,
    pub l_max: usize,
    pub converged: bool,
}

impl TanhFit {
    /// `λ` used downstream: a failed fit counts as subextensive.
    pub fn effective_lambda(&self) -> f64 {
        if self.converged { self.lambda } else { 0.0 }
    }
}

struct TanhProblem {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl TanhProblem {
    fn chi2(&self, a: f64, lambda: f64) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((x, y), w)| w * (y - a * (lambda * x).tanh()).powi(2))
            .sum()
    }

    /// Best amplitude for fixed `λ` (the model is linear in `a`).
    fn best_amplitude(&self, lambda: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for ((x, y), w) in self.x.iter().zip(&self.y).zip(&self.w) {
            let t = (lambda * x).tanh();
            num += w * y * t;
            den += w * t * t;
        }
        if den > 0.0 { num / den } else { 0.0 }
    }

    /// `JᵀWJ` and `JᵀWr` at `(a, λ)`.
    fn normal_equations(&self, a: f64, lambda: f64) -> ([[f64; 2]; 2], [f64; 2]) {
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for ((x, y), w) in self.x.iter().zip(&self.y).zip(&self.w) {
            let t = (lambda * x).tanh();
            let j = [t, a * x * (1.0 - t * t)];
            let r = y - a * t;
            for p in 0..2 {
                jtr[p] += w * j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += w * j[p] * j[q];
                }
            }
        }
        (jtj, jtr)
    }
}

fn invert2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 0.0) || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Weighted least squares of `S̄(L) = a·tanh(λ ln L)` over `(L, S̄, σ)`.
///
/// Levenberg–Marquardt starts from the better of the two-point slope estimate
/// and a coarse logarithmic scan in `λ`. A run that does not settle within
/// [`MAX_FIT_ITERATIONS`] is returned with `converged = false`.
pub fn fit_tanh_log(points: &[(usize, f64, f64)]) -> Result<TanhFit> {
    if points.len() < 4 {
        return Err(Error::Analysis(format!("tanh fit needs at least 4 sizes, got {}", points.len())));
    }
    if points.iter().any(|p| p.0 < 4 || !(p.2 > 0.0) || !p.1.is_finite()) {
        return Err(Error::Analysis("tanh fit needs L >= 4 and positive finite errors".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.0);
    let problem = TanhProblem {
        x: sorted.iter().map(|p| (p.0 as f64).ln()).collect(),
        y: sorted.iter().map(|p| p.1).collect(),
        w: sorted.iter().map(|p| 1.0 / (p.2 * p.2)).collect(),
    };
    let l_max = sorted.last().map(|p| p.0).unwrap_or(0);

    // Two-point slope: in the linear regime S̄ ≈ aλ ln L.
    let (x0, x1) = (problem.x[0], problem.x[problem.x.len() - 1]);
    let (y0, y1) = (problem.y[0], problem.y[problem.y.len() - 1]);
    let slope = (y1 - y0) / (x1 - x0);
    let mut starts = Vec::new();
    if slope > 0.0 && y1 > 0.0 {
        let a = y1.max(slope * x1) * 1.5;
        starts.push((a, (slope / a).min(LAMBDA_CAP)));
    }
    for k in 0..=40 {
        let lambda = 1e-3 * 10f64.powf(k as f64 * 0.1);
        starts.push((problem.best_amplitude(lambda), lambda));
    }
    let (mut a, mut lambda) = starts
        .into_iter()
        .min_by(|p, q| problem.chi2(p.0, p.1).total_cmp(&problem.chi2(q.0, q.1)))
        .unwrap();

    let mut chi2 = problem.chi2(a, lambda);
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_FIT_ITERATIONS {
        let (jtj, jtr) = problem.normal_equations(a, lambda);
        let damped = [[jtj[0][0] * (1.0 + mu), jtj[0][1]], [jtj[1][0], jtj[1][1] * (1.0 + mu)]];
        let Some(inv) = invert2(damped) else {
            // λ has no leverage: the model is flat in λ (saturated or zero data).
            converged = true;
            break;
        };
        let da = inv[0][0] * jtr[0] + inv[0][1] * jtr[1];
        let dl = inv[1][0] * jtr[0] + inv[1][1] * jtr[1];
        let (na, nl) = (a + da, (lambda + dl).clamp(0.0, LAMBDA_CAP));
        let trial = problem.chi2(na, nl);
        if trial <= chi2 {
            let improvement = chi2 - trial;
            let small_step = (na - a).abs() <= 1e-10 * (1.0 + a.abs()) && (nl - lambda).abs() <= 1e-10 * (1.0 + lambda);
            a = na;
            lambda = nl;
            chi2 = trial;
            mu = (mu * 0.3).max(1e-12);
            if small_step || improvement <= 1e-14 * (1.0 + chi2) {
                converged = true;
                break;
            }
        } else {
            mu *= 10.0;
            if mu > 1e12 {
                converged = true;
                break;
            }
        }
    }
    let (jtj, _) = problem.normal_equations(a, lambda);
    let cov = invert2(jtj);
    let err = |i: usize| cov.map(|c| c[i][i].max(0.0).sqrt()).unwrap_or(f64::INFINITY);
    // a·tanh(λx) = (−a)·tanh(−λx); report the λ ≥ 0 branch with its amplitude.
    Ok(TanhFit {
        lambda: lambda.abs(),
        lambda_error: err(1),
        amplitude: a,
        amplitude_error: err(0),
        residual: chi2,
        l_max,
        converged: converged && chi2.is_finite(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    /// `λ ln L_max < 1` on the whole grid.
    Subextensive,
    /// `λ ln L_max > 1` on the whole grid.
    AreaLaw,
    Crossing,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Subextensive => "subextensive",
            Self::AreaLaw => "area-law",
            Self::Crossing => "crossing",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverEstimate {
    pub verdict: Verdict,
    /// Interpolated crossover field (only for [`Verdict::Crossing`]).
    pub field: Option<f64>,
    pub error: Option<f64>,
    pub l_max: usize,
}

/// Field where `λ(h_f) ln L_max` first crosses one, by linear interpolation.
///
/// The uncertainty adds half the bracketing grid spacing and the shift
/// propagated from the two bracketing fit errors in quadrature.
pub fn crossover_field(fits: &[(f64, TanhFit)], l_max: usize) -> Result<CrossoverEstimate> {
    if fits.is_empty() || l_max < 2 {
        return Err(Error::Analysis("crossover needs fitted rates and L_max >= 2".into()));
    }
    let log_l = (l_max as f64).ln();
    let mut grid: Vec<(f64, f64, f64)> = fits
        .iter()
        .map(|(h, f)| {
            let err = if f.converged { f.lambda_error } else { 0.0 };
            (*h, f.effective_lambda() * log_l - 1.0, err * log_l)
        })
        .collect();
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    if grid.iter().all(|g| g.1 < 0.0) {
        return Ok(CrossoverEstimate { verdict: Verdict::Subextensive, field: None, error: None, l_max });
    }
    if grid.iter().all(|g| g.1 > 0.0) {
        return Ok(CrossoverEstimate { verdict: Verdict::AreaLaw, field: None, error: None, l_max });
    }
    if let Some(g) = grid.iter().find(|g| g.1 == 0.0) {
        let spacing = grid.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
        let error = if spacing.is_finite() { 0.5 * spacing } else { 0.0 };
        return Ok(CrossoverEstimate { verdict: Verdict::Crossing, field: Some(g.0), error: Some(error), l_max });
    }
    let w = grid.windows(2).find(|w| (w[0].1 < 0.0) != (w[1].1 < 0.0)).unwrap();
    let (h0, q0, e0) = w[0];
    let (h1, q1, e1) = w[1];
    let dh = h1 - h0;
    let field = h0 + dh * q0 / (q0 - q1);
    let dq0 = dh * -q1 / (q0 - q1).powi(2);
    let dq1 = dh * q0 / (q0 - q1).powi(2);
    let error = ((0.5 * dh).powi(2) + (dq0 * e0).powi(2) + (dq1 * e1).powi(2)).sqrt();
    Ok(CrossoverEstimate { verdict: Verdict::Crossing, field: Some(field), error: Some(error), l_max })
}
