//! Ensemble execution with per-trajectory checkpoints, and the CSV outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unravel_core::analysis::{
    asymptotic_correlation, asymptotic_from_trajectories, crossover_field, ensemble_average_of, fit_tanh_log,
    monotonicity_warnings, stationarity_warning, AsymptoticEstimate, Quantity, TanhFit,
};
use unravel_core::gaussian::GaussianState;
use unravel_core::trajectories::{Checkpoint, EntropyTimeSeries, TrajectoryRun};

use crate::config::{ResolvedRun, RunConfig, SweepConfig};
use crate::output::{manifest_hash, number, unix_now, write_atomic, write_json, Table, VERSION};
use crate::CliError;

const TIDY_COLUMNS: [&str; 8] = ["unraveling", "gamma", "h_f", "L", "ell", "quantity", "value", "error"];

fn cell_dir(out: &Path, run: &ResolvedRun) -> PathBuf {
    let c = &run.config;
    out.join("cells").join(format!("{}_g{}_h{}_L{}", c.unraveling.label(), c.gamma, c.field, c.sites))
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    step: usize,
    /// Keystream position, as a string because JSON numbers cannot hold it.
    noise_position: String,
    series: EntropyTimeSeries,
}

struct TrajectoryFiles {
    done: PathBuf,
    meta: PathBuf,
    frame: PathBuf,
}

impl TrajectoryFiles {
    fn new(dir: &Path, index: u64) -> Self {
        Self {
            done: dir.join(format!("traj_{index:05}.json")),
            meta: dir.join(format!("traj_{index:05}.ckpt.json")),
            frame: dir.join(format!("traj_{index:05}.gfst")),
        }
    }

    fn load_checkpoint(&self) -> Result<Option<Checkpoint>, CliError> {
        if !self.meta.exists() || !self.frame.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&self.meta).map_err(|e| CliError::io(&self.meta, e))?;
        let meta: CheckpointMeta =
            serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("corrupt checkpoint {}: {e}", self.meta.display())))?;
        let bytes = fs::read(&self.frame).map_err(|e| CliError::io(&self.frame, e))?;
        let state = GaussianState::read_snapshot(bytes.as_slice())?;
        let noise_position = meta
            .noise_position
            .parse()
            .map_err(|_| CliError::Runtime(format!("corrupt checkpoint {}", self.meta.display())))?;
        Ok(Some(Checkpoint { step: meta.step, noise_position, state, series: meta.series }))
    }

    fn save_checkpoint(&self, cp: &Checkpoint) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        cp.state.write_snapshot(&mut bytes)?;
        write_atomic(&self.frame, &bytes)?;
        let meta = CheckpointMeta { step: cp.step, noise_position: cp.noise_position.to_string(), series: cp.series.clone() };
        write_json(&self.meta, &meta)
    }

    fn clear_checkpoint(&self) {
        let _ = fs::remove_file(&self.meta);
        let _ = fs::remove_file(&self.frame);
    }
}

/// Runs, resumes or reloads trajectory `index` of a cell. With `budget`, stops
/// after that many checkpoint chunks and returns `None` if still unfinished.
fn trajectory_unit(run: &ResolvedRun, dir: &Path, index: u64, budget: Option<usize>) -> Result<Option<EntropyTimeSeries>, CliError> {
    let files = TrajectoryFiles::new(dir, index);
    if files.done.exists() {
        let text = fs::read_to_string(&files.done).map_err(|e| CliError::io(&files.done, e))?;
        return serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Runtime(format!("corrupt trajectory file {}: {e}", files.done.display())));
    }
    let cfg = &run.trajectory;
    let mut traj = match files.load_checkpoint()? {
        Some(cp) => TrajectoryRun::resume(cfg, &run.params, run.spec, cp)?,
        None => TrajectoryRun::new(cfg, &run.params, run.spec, index)?,
    };
    let chunk = match run.config.checkpoint_every {
        0 => usize::MAX,
        n => n * cfg.record_every,
    };
    let mut chunks = 0;
    while !traj.is_finished() {
        if budget.is_some_and(|b| chunks >= b) {
            return Ok(None);
        }
        traj.advance(chunk)?;
        chunks += 1;
        if !traj.is_finished() {
            files.save_checkpoint(&traj.checkpoint()?)?;
        }
    }
    let series = traj.finish()?;
    write_json(&files.done, &series)?;
    files.clear_checkpoint();
    Ok(Some(series))
}

/// Runs every `(cell, trajectory)` unit in parallel; results come back in
/// cell order, trajectories by index.
pub fn execute_cells(cells: &[ResolvedRun], out: &Path) -> Result<Vec<Vec<EntropyTimeSeries>>, CliError> {
    let results = run_units(cells, out, None)?;
    let mut grouped = Vec::with_capacity(cells.len());
    let mut it = results.into_iter().map(|r| r.expect("unbudgeted units finish"));
    for run in cells {
        grouped.push(it.by_ref().take(run.config.n_traj).collect());
    }
    Ok(grouped)
}

/// Advances every trajectory of `config` by at most `chunks` checkpoint
/// intervals and leaves the checkpoints on disk, as an interrupted run would.
pub fn simulate_partial(config: &RunConfig, out: &Path, chunks: usize) -> Result<(), CliError> {
    let run = config.resolve()?;
    if run.config.checkpoint_every == 0 {
        return Err(CliError::Config("partial runs need checkpoint_every > 0".into()));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    run_units(&[run], out, Some(chunks)).map(|_| ())
}

fn run_units(cells: &[ResolvedRun], out: &Path, budget: Option<usize>) -> Result<Vec<Option<EntropyTimeSeries>>, CliError> {
    let mut dirs = Vec::with_capacity(cells.len());
    for run in cells {
        let dir = cell_dir(out, run);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let hash = manifest_hash(&run.config, run.config.seed);
        let stamp = dir.join("cell.sha256");
        match fs::read_to_string(&stamp) {
            Ok(existing) if existing.trim() != hash => {
                return Err(CliError::Config(format!(
                    "{} holds results of a different configuration; use a fresh output directory",
                    dir.display()
                )))
            }
            Ok(_) => {}
            Err(_) => write_atomic(&stamp, hash.as_bytes())?,
        }
        dirs.push(dir);
    }
    let units: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, run)| (0..run.config.n_traj as u64).map(move |i| (c, i)))
        .collect();
    units
        .par_iter()
        .map(|&(c, i)| trajectory_unit(&cells[c], &dirs[c], i, budget))
        .collect()
}

fn tidy_row(run: &ResolvedRun, quantity: &str, value: f64, error: f64) -> Vec<String> {
    let c = &run.config;
    vec![
        c.unraveling.label().to_string(),
        number(c.gamma),
        number(c.field),
        c.sites.to_string(),
        run.spec.length.to_string(),
        quantity.to_string(),
        number(value),
        number(error),
    ]
}

/// Asymptotic entropy and Rényi-2 estimates for one cell.
pub fn cell_asymptotics(run: &ResolvedRun, series: &[EntropyTimeSeries]) -> Result<[AsymptoticEstimate; 2], CliError> {
    let t_max = run.trajectory.t_max;
    Ok([
        asymptotic_from_trajectories(series, Quantity::Entropy, run.t_star, t_max)?,
        asymptotic_from_trajectories(series, Quantity::Renyi2, run.t_star, t_max)?,
    ])
}

pub fn timeseries_table(hash: &str, run: &ResolvedRun, series: &[EntropyTimeSeries]) -> Result<Table, CliError> {
    let s = ensemble_average_of(series, Quantity::Entropy)?;
    let r = ensemble_average_of(series, Quantity::Renyi2)?;
    let mut table = Table::new(hash, "ensemble-averaged entropies", &["t", "S_mean", "S_err", "H2_mean", "H2_err"]);
    table.comment(format!("n_traj {}", s.n_rand));
    for i in 0..s.times.len() {
        table.row(vec![number(s.times[i]), number(s.mean[i]), number(s.error[i]), number(r.mean[i]), number(r.error[i])]);
    }
    if let Some(w) = stationarity_warning(&s, run.t_star, run.trajectory.t_max) {
        table.comment(format!("warning: {w}"));
    }
    Ok(table)
}

fn correlation_table(hash: &str, runs: &[(&ResolvedRun, &[EntropyTimeSeries])]) -> Result<Table, CliError> {
    let mut table = Table::new(hash, "site- and time-averaged square correlations", &["unraveling", "gamma", "h_f", "L", "r", "value", "error"]);
    for (run, series) in runs {
        let profile = asymptotic_correlation(series, run.t_star, run.trajectory.t_max)?;
        let c = &run.config;
        for (r, (value, error)) in profile.iter().enumerate().skip(1) {
            table.row(vec![
                c.unraveling.label().to_string(),
                number(c.gamma),
                number(c.field),
                c.sites.to_string(),
                r.to_string(),
                number(*value),
                number(*error),
            ]);
        }
    }
    Ok(table)
}

#[derive(Serialize)]
struct CellStatus {
    unraveling: &'static str,
    gamma: f64,
    field: f64,
    sites: usize,
    dt: f64,
    status: &'static str,
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    version: &'a str,
    seed: u64,
    manifest_sha256: &'a str,
    config: &'a C,
    started_unix: u64,
    finished_unix: u64,
    cells: Vec<CellStatus>,
}

fn statuses(cells: &[ResolvedRun]) -> Vec<CellStatus> {
    cells
        .iter()
        .map(|r| CellStatus {
            unraveling: r.config.unraveling.label(),
            gamma: r.config.gamma,
            field: r.config.field,
            sites: r.config.sites,
            dt: r.trajectory.dt,
            status: "complete",
        })
        .collect()
}

/// One ensemble: `timeseries.csv`, `asymptotic.csv`, optionally
/// `correlations.csv`, and `manifest.json`.
pub fn simulate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let started = unix_now();
    let run = config.resolve()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let hash = manifest_hash(&run.config, run.config.seed);
    let cells = [run];
    let series = execute_cells(&cells, out)?.remove(0);
    let run = &cells[0];
    timeseries_table(&hash, run, &series)?.write(&out.join("timeseries.csv"))?;
    let mut asym = Table::new(&hash, "asymptotic time averages", &TIDY_COLUMNS);
    asym.comment(format!("t_star {} t_max {}", run.t_star, run.trajectory.t_max));
    let [s, h2] = cell_asymptotics(run, &series)?;
    asym.row(tidy_row(run, "entropy", s.value, s.error));
    asym.row(tidy_row(run, "renyi2", h2.value, h2.error));
    asym.write(&out.join("asymptotic.csv"))?;
    if run.config.record_correlations {
        correlation_table(&hash, &[(run, &series)])?.write(&out.join("correlations.csv"))?;
    }
    write_json(
        &out.join("manifest.json"),
        &RunManifest {
            version: VERSION,
            seed: run.config.seed,
            manifest_sha256: &hash,
            config: &run.config,
            started_unix: started,
            finished_unix: unix_now(),
            cells: statuses(&cells),
        },
    )
}

/// Fits and verdicts of one `γ` row of a sweep.
pub struct GammaSummary {
    pub gamma: f64,
    pub fits: Vec<(f64, TanhFit)>,
    pub crossover: Option<unravel_core::analysis::CrossoverEstimate>,
    pub l_max: usize,
}

/// The full grid: per-cell outputs, `asymptotic.csv`, `lambda.csv`,
/// `phase_diagram.csv` and `manifest.json`.
pub fn sweep(config: &SweepConfig, out: &Path) -> Result<Vec<GammaSummary>, CliError> {
    let started = unix_now();
    let cells = config.cells()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let hash = manifest_hash(config, config.run.seed);
    let results = execute_cells(&cells, out)?;

    let mut asym = Table::new(&hash, "asymptotic time averages", &TIDY_COLUMNS);
    let mut estimates = Vec::with_capacity(cells.len());
    for (run, series) in cells.iter().zip(&results) {
        let cell_hash = manifest_hash(&run.config, run.config.seed);
        timeseries_table(&cell_hash, run, series)?.write(&cell_dir(out, run).join("timeseries.csv"))?;
        let [s, h2] = cell_asymptotics(run, series)?;
        asym.row(tidy_row(run, "entropy", s.value, s.error));
        asym.row(tidy_row(run, "renyi2", h2.value, h2.error));
        estimates.push(s);
    }
    asym.write(&out.join("asymptotic.csv"))?;
    if config.run.record_correlations {
        let pairs: Vec<_> = cells.iter().zip(&results).map(|(r, s)| (r, s.as_slice())).collect();
        correlation_table(&hash, &pairs)?.write(&out.join("correlations.csv"))?;
    }

    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let l_max = *sizes.last().unwrap();
    let lookup = |gamma: f64, field: f64, sites: usize| {
        cells
            .iter()
            .position(|r| r.config.gamma == gamma && r.config.field == field && r.config.sites == sites)
            .map(|i| estimates[i])
    };
    let mut lambda_table = Table::new(
        &hash,
        "fits of a*tanh(lambda*ln L)",
        &["gamma", "h_f", "lambda", "lambda_error", "amplitude", "residual", "L_max", "converged"],
    );
    let mut phase = Table::new(&hash, "crossover fields", &["gamma", "h_c", "error", "L_max", "verdict"]);
    let mut summaries = Vec::new();
    for &gamma in &config.gammas {
        let mut fits = Vec::new();
        if sizes.len() >= 4 {
            for &field in &config.fields {
                let points: Vec<_> = sizes
                    .iter()
                    .filter_map(|&l| lookup(gamma, field, l).map(|e| (l, e.value, e.error)))
                    .collect();
                let fit = fit_tanh_log(&points)?;
                lambda_table.row(vec![
                    number(gamma),
                    number(field),
                    number(fit.lambda),
                    number(fit.lambda_error),
                    number(fit.amplitude),
                    number(fit.residual),
                    fit.l_max.to_string(),
                    fit.converged.to_string(),
                ]);
                fits.push((field, fit));
            }
        }
        let crossover = if fits.is_empty() { None } else { Some(crossover_field(&fits, l_max)?) };
        match crossover {
            Some(c) => phase.row(vec![
                number(gamma),
                c.field.map(number).unwrap_or_default(),
                c.error.map(number).unwrap_or_default(),
                l_max.to_string(),
                c.verdict.label().to_string(),
            ]),
            None => phase.row(vec![number(gamma), String::new(), String::new(), l_max.to_string(), "insufficient-sizes".into()]),
        }
        summaries.push(GammaSummary { gamma, fits, crossover, l_max });
    }
    for &field in &config.fields {
        for &sites in &sizes {
            let points: Vec<_> = config
                .gammas
                .iter()
                .filter_map(|&g| lookup(g, field, sites).map(|e| (g, e.value, e.error)))
                .collect();
            for w in monotonicity_warnings(&points) {
                phase.comment(format!("warning: h_f={field} L={sites}: {w}"));
            }
        }
    }
    lambda_table.write(&out.join("lambda.csv"))?;
    phase.write(&out.join("phase_diagram.csv"))?;
    write_json(
        &out.join("manifest.json"),
        &RunManifest {
            version: VERSION,
            seed: config.run.seed,
            manifest_sha256: &hash,
            config,
            started_unix: started,
            finished_unix: unix_now(),
            cells: statuses(&cells),
        },
    )?;
    Ok(summaries)
}
