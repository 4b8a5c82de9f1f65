//! Monte Carlo drivers: rank-selection frequency tables, error-rate sweeps
//! with log–log slope fits, and forecast benchmarks against the baselines.
//!
//! Every replication draws from `child_seed(master, cell_key(coords), rep)`,
//! so results do not depend on worker count, scheduling or on which other
//! cells share the grid.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{sample_params_on, simulate, DgpConfig, TrueModel};
use crate::error::{Error, Result};
use crate::estimator::{self, select_rank, FitConfig, RankSpec};
use crate::eval::{dist_upper, rolling_eval, ForecastReport, Fitter, MarFitter, NarFitter, RrnarFitter, RrvarFitter};
use crate::graph::{build_k_regular_cycle, row_normalize, WeightMatrix};
use crate::linalg::sorted_svd;
use crate::model::{ModelDims, PanelSeries};
use crate::rng::{cell_key, child_seed, rng_from_seed};

/// Runs `f(0..len)` on a pool of `parallelism` workers; output order is the
/// index order whatever the schedule.
fn run_indexed<T, F>(parallelism: usize, len: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallelism <= 1 {
        return Ok((0..len).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {parallelism} workers: {e}")))?;
    Ok(pool.install(|| (0..len).into_par_iter().map(f).collect()))
}

/// Network topology of a simulation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// k-regular directed cycle with fixed degree.
    SparseK(usize),
    /// Degree `⌊N/2⌋`.
    DenseHalf,
}

impl Topology {
    pub fn degree(&self, n: usize) -> usize {
        match *self {
            Topology::SparseK(k) => k,
            Topology::DenseHalf => n / 2,
        }
    }
}

/// One grid point of a single-lag simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub t: usize,
    pub k: usize,
}

impl Cell {
    pub fn key(&self) -> u64 {
        cell_key(&[self.n as u64, self.d as u64, self.r as u64, self.t as u64, self.k as u64])
    }

    fn dgp(&self, seed: u64) -> Result<DgpConfig> {
        Ok(DgpConfig::new(ModelDims::new(self.n, self.d, vec![self.r])?, self.t, self.k, seed))
    }

    fn weight(&self) -> Result<WeightMatrix> {
        Ok(row_normalize(&build_k_regular_cycle(self.n, self.k)?))
    }
}

/// Per-replication record. Error fields are absent for rank-only runs and
/// for failed replications (`failure` then holds the message).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub t: usize,
    pub k: usize,
    pub rep: usize,
    pub seed: u64,
    pub selected_rank: Option<usize>,
    pub kron_err: Option<f64>,
    pub beta_a_err: Option<f64>,
    pub beta_n_err: Option<f64>,
    pub proj_u_err: Option<f64>,
    pub proj_v_err: Option<f64>,
    /// `φ = ‖B*_net‖_F = ‖B*_var‖_F` after balancing.
    pub phi: Option<f64>,
    /// `σ_r` of the balanced `B*_var`.
    pub sigma_r: Option<f64>,
    pub failure: Option<String>,
    /// Not deterministic; excluded from every aggregated table.
    pub wall_time: f64,
}

impl ReplicationResult {
    fn new(cell: &Cell, rep: usize, seed: u64) -> Self {
        Self {
            n: cell.n,
            d: cell.d,
            r: cell.r,
            t: cell.t,
            k: cell.k,
            rep,
            seed,
            selected_rank: None,
            kron_err: None,
            beta_a_err: None,
            beta_n_err: None,
            proj_u_err: None,
            proj_v_err: None,
            phi: None,
            sigma_r: None,
            failure: None,
            wall_time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRankConfig {
    pub cells: Vec<Cell>,
    pub reps: usize,
    pub seed: u64,
    pub parallelism: usize,
    /// Estimation settings; `ranks` is ignored and `r_bar` defaults to
    /// `min(D/2, 10)`.
    pub fit: FitConfig,
}

/// One row of the frequency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub t: usize,
    pub k: usize,
    pub r_bar: usize,
    pub reps: usize,
    pub correct: usize,
    pub failures: usize,
    pub frequency: f64,
}

fn rank_replication(cell: &Cell, rep: usize, master: u64, fit: &FitConfig, r_bar: usize) -> ReplicationResult {
    let seed = child_seed(master, cell.key(), rep as u64);
    let mut out = ReplicationResult::new(cell, rep, seed);
    let start = Instant::now();
    let run = || -> Result<usize> {
        let dgp = cell.dgp(seed)?;
        let mut rng = rng_from_seed(seed);
        let model = sample_params_on(&dgp, cell.weight()?, &mut rng)?;
        let panel = simulate(&model, &dgp, &mut rng)?;
        let cfg = FitConfig { ranks: RankSpec::Auto, lags: 1, seed, ..fit.clone() };
        Ok(select_rank(&panel, &model.weight, r_bar, &cfg)?[0])
    };
    match run() {
        Ok(r) => out.selected_rank = Some(r),
        Err(e) => out.failure = Some(e.to_string()),
    }
    out.wall_time = start.elapsed().as_secs_f64();
    out
}

/// Frequency of `r̂ = r` per cell. `on_cell` sees each finished cell (row and
/// replications) in grid order, so partial results can be flushed.
pub fn mc_rank(cfg: &McRankConfig, on_cell: &mut dyn FnMut(&RankRow, &[ReplicationResult]) -> Result<()>) -> Result<Vec<RankRow>> {
    if cfg.reps == 0 || cfg.cells.is_empty() {
        return Err(Error::InvalidInput("mc-rank needs reps >= 1 and a non-empty grid".into()));
    }
    let mut rows = Vec::with_capacity(cfg.cells.len());
    for cell in &cfg.cells {
        let r_bar = cfg.fit.r_bar_for(cell.d);
        // the ratio rule only returns ranks below r_bar
        if cell.r >= r_bar || r_bar > cell.d {
            return Err(Error::InvalidInput(format!("cell {cell:?}: true rank must be below r_bar={r_bar}")));
        }
        let reps = run_indexed(cfg.parallelism, cfg.reps, |rep| rank_replication(cell, rep, cfg.seed, &cfg.fit, r_bar))?;
        let correct = reps.iter().filter(|x| x.selected_rank == Some(cell.r)).count();
        let failures = reps.iter().filter(|x| x.failure.is_some()).count();
        let row = RankRow {
            n: cell.n,
            d: cell.d,
            r: cell.r,
            t: cell.t,
            k: cell.k,
            r_bar,
            reps: cfg.reps,
            correct,
            failures,
            frequency: correct as f64 / cfg.reps as f64,
        };
        on_cell(&row, &reps)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Which dimension an error-rate sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatesKind {
    VaryN,
    VaryD,
    VaryT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRatesConfig {
    pub kind: RatesKind,
    /// Values of the varied dimension.
    pub grid: Vec<usize>,
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub t: usize,
    pub topology: Topology,
    pub reps: usize,
    pub seed: u64,
    pub parallelism: usize,
    /// True `(β_A, β_N)`; drawn per replication when absent.
    pub fixed_betas: Option<(f64, f64)>,
    /// Singular values of `B*_var`; drawn per replication when absent.
    pub fixed_singular: Option<Vec<f64>>,
    pub fit: FitConfig,
}

impl McRatesConfig {
    /// Defaults of the three sweeps: vary-N fixes `(β_A, β_N) = (0.35, 0.25)`,
    /// vary-D fixes the spectrum to `r` points evenly spread over `[0.5, 1.5]`,
    /// vary-T keeps one truth per replication across all `T`.
    pub fn preset(kind: RatesKind, topology: Topology, reps: usize, seed: u64) -> Self {
        let base = Self {
            kind,
            grid: vec![],
            n: 50,
            d: 6,
            r: 2,
            t: 500,
            topology,
            reps,
            seed,
            parallelism: 1,
            fixed_betas: None,
            fixed_singular: None,
            fit: FitConfig::default(),
        };
        match kind {
            RatesKind::VaryN => Self {
                grid: log_grid(10, 200, 6),
                d: 6,
                r: 2,
                t: 500,
                fixed_betas: Some((0.35, 0.25)),
                ..base
            },
            RatesKind::VaryD => Self {
                grid: vec![5, 10, 20, 50, 100, 200],
                n: 15,
                r: 3,
                t: 500,
                fixed_singular: Some(even_spectrum(3)),
                ..base
            },
            RatesKind::VaryT => Self { grid: log_grid(100, 10_000, 5), n: 50, d: 30, r: 3, ..base },
        }
    }

    fn cell(&self, x: usize) -> Cell {
        let (n, d, t) = match self.kind {
            RatesKind::VaryN => (x, self.d, self.t),
            RatesKind::VaryD => (self.n, x, self.t),
            RatesKind::VaryT => (self.n, self.d, x),
        };
        Cell { n, d, r: self.r, t, k: self.topology.degree(n) }
    }
}

/// `m` integers spaced evenly in `log` between `lo` and `hi` inclusive.
pub fn log_grid(lo: usize, hi: usize, m: usize) -> Vec<usize> {
    if m <= 1 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..m).map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp().round() as usize).collect();
    out.dedup();
    out
}

/// `r` values from 1.5 down to 0.5.
pub fn even_spectrum(r: usize) -> Vec<f64> {
    if r == 1 {
        return vec![1.0];
    }
    (0..r).map(|i| 1.5 - i as f64 / (r - 1) as f64).collect()
}

/// Aggregated errors of one grid point. Scalar errors are multiplied by
/// `φ²`, projector errors by `φ²σ_r²`, per replication; `kron_err_sq` is raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesRow {
    pub x: usize,
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub t: usize,
    pub k: usize,
    pub weight_frob_sq: f64,
    pub reps: usize,
    pub failures: usize,
    pub kron_err_sq: f64,
    pub beta_a_err: f64,
    pub beta_n_err: f64,
    pub proj_u_err: f64,
    pub proj_v_err: f64,
    pub beta_a_err_raw: f64,
    pub beta_n_err_raw: f64,
}

pub const RATE_METRICS: [&str; 5] = ["kron_err_sq", "beta_a_err", "beta_n_err", "proj_u_err", "proj_v_err"];

impl RatesRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "kron_err_sq" => Some(self.kron_err_sq),
            "beta_a_err" => Some(self.beta_a_err),
            "beta_n_err" => Some(self.beta_n_err),
            "proj_u_err" => Some(self.proj_u_err),
            "proj_v_err" => Some(self.proj_v_err),
            _ => None,
        }
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `ln y = intercept + slope · ln x` over all points.
pub fn slope_fit(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData("slope fit needs at least two paired points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("slope fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidInput("slope fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    Ok(SlopeFit { slope, intercept: my - slope * mx, r_squared })
}

/// Centered three-point moving average of `ln y`, mapped back; a plotting aid.
pub fn smoothed(y: &[f64]) -> Vec<f64> {
    if y.is_empty() {
        return vec![];
    }
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    (0..ly.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(ly.len() - 1);
            (ly[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64).exp()
        })
        .collect()
}

fn rates_replication(cfg: &McRatesConfig, cell: &Cell, rep: usize) -> ReplicationResult {
    // vary-T reuses each replication's truth across sample sizes
    let model_key = match cfg.kind {
        RatesKind::VaryT => cell_key(&[cell.n as u64, cell.d as u64, cell.r as u64, 0, cell.k as u64]),
        _ => cell.key(),
    };
    let truth_seed = child_seed(cfg.seed, model_key, rep as u64);
    let data_seed = child_seed(cfg.seed ^ 0xDA7A, cell.key(), rep as u64);
    let mut out = ReplicationResult::new(cell, rep, data_seed);
    let start = Instant::now();
    let run = |out: &mut ReplicationResult| -> Result<()> {
        let mut dgp = cell.dgp(data_seed)?;
        dgp.fixed_betas = cfg.fixed_betas.map(|b| vec![b]);
        dgp.fixed_singular = cfg.fixed_singular.clone().map(|s| vec![s]);
        let model: TrueModel = sample_params_on(&dgp, cell.weight()?, &mut rng_from_seed(truth_seed))?;
        let panel = simulate(&model, &dgp, &mut rng_from_seed(data_seed))?;
        let fit_cfg = FitConfig { ranks: RankSpec::Fixed(vec![cell.r]), lags: 1, seed: data_seed, ..cfg.fit.clone() };
        let res = estimator::fit(&panel, &model.weight, &fit_cfg)?;
        let err = dist_upper(&res.params, &model.params, &model.weight)?;
        let truth = model.params.lags[0].balanced(&model.weight, 1.0);
        let phi2 = truth.bnet_frob_sq(&model.weight);
        let sigma_r = sorted_svd(&truth.b_var()).1[cell.r - 1];
        out.kron_err = Some(err.kron_err);
        out.beta_a_err = Some(err.beta_a_err[0]);
        out.beta_n_err = Some(err.beta_n_err[0]);
        out.proj_u_err = Some(err.proj_u_err[0].powi(2));
        out.proj_v_err = Some(err.proj_v_err[0].powi(2));
        out.phi = Some(phi2.sqrt());
        out.sigma_r = Some(sigma_r);
        out.selected_rank = Some(cell.r);
        Ok(())
    };
    if let Err(e) = run(&mut out) {
        out.failure = Some(e.to_string());
    }
    out.wall_time = start.elapsed().as_secs_f64();
    out
}

fn aggregate(x: usize, cell: &Cell, reps: &[ReplicationResult]) -> Result<RatesRow> {
    let ok: Vec<&ReplicationResult> = reps.iter().filter(|r| r.failure.is_none()).collect();
    if ok.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every replication failed at {cell:?}: {}",
            reps[0].failure.as_deref().unwrap_or("")
        )));
    }
    let m = ok.len() as f64;
    let mean = |f: &dyn Fn(&ReplicationResult) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / m;
    let get = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let phi2 = |r: &ReplicationResult| get(r.phi).powi(2);
    let sig2 = |r: &ReplicationResult| get(r.sigma_r).powi(2);
    Ok(RatesRow {
        x,
        n: cell.n,
        d: cell.d,
        r: cell.r,
        t: cell.t,
        k: cell.k,
        weight_frob_sq: cell.n as f64 / cell.k as f64,
        reps: reps.len(),
        failures: reps.len() - ok.len(),
        kron_err_sq: mean(&|r| get(r.kron_err).powi(2)),
        beta_a_err: mean(&|r| get(r.beta_a_err) * phi2(r)),
        beta_n_err: mean(&|r| get(r.beta_n_err) * phi2(r)),
        proj_u_err: mean(&|r| get(r.proj_u_err) * phi2(r) * sig2(r)),
        proj_v_err: mean(&|r| get(r.proj_v_err) * phi2(r) * sig2(r)),
        beta_a_err_raw: mean(&|r| get(r.beta_a_err)),
        beta_n_err_raw: mean(&|r| get(r.beta_n_err)),
    })
}

/// Per-cell mean errors for a sweep, in grid order.
pub fn mc_rates(cfg: &McRatesConfig, on_cell: &mut dyn FnMut(&RatesRow, &[ReplicationResult]) -> Result<()>) -> Result<Vec<RatesRow>> {
    if cfg.reps == 0 || cfg.grid.is_empty() {
        return Err(Error::InvalidInput("mc-rates needs reps >= 1 and a non-empty grid".into()));
    }
    let mut rows = Vec::with_capacity(cfg.grid.len());
    for &x in &cfg.grid {
        let cell = cfg.cell(x);
        if cell.r > cell.d {
            return Err(Error::InvalidInput(format!("rank {} exceeds D={}", cell.r, cell.d)));
        }
        let reps = run_indexed(cfg.parallelism, cfg.reps, |rep| rates_replication(cfg, &cell, rep))?;
        let row = aggregate(x, &cell, &reps)?;
        on_cell(&row, &reps)?;
        rows.push(row);
    }
    Ok(rows)
}

/// One line of the slope summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub metric: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Slope of every metric in [`RATE_METRICS`] against the varied dimension.
pub fn rate_slopes(rows: &[RatesRow]) -> Result<Vec<SlopeRow>> {
    let x: Vec<f64> = rows.iter().map(|r| r.x as f64).collect();
    RATE_METRICS
        .iter()
        .map(|&name| {
            let y: Vec<f64> = rows.iter().filter_map(|r| r.metric(name)).collect();
            let s = slope_fit(&x, &y)?;
            Ok(SlopeRow { metric: name.to_string(), slope: s.slope, intercept: s.intercept, r_squared: s.r_squared })
        })
        .collect()
}

/// Three-point log-scale moving average of every metric, one row per grid
/// point; for plotting only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedRow {
    pub x: usize,
    pub kron_err_sq: f64,
    pub beta_a_err: f64,
    pub beta_n_err: f64,
    pub proj_u_err: f64,
    pub proj_v_err: f64,
}

pub fn smoothed_rows(rows: &[RatesRow]) -> Vec<SmoothedRow> {
    let cols: Vec<Vec<f64>> =
        RATE_METRICS.iter().map(|&m| smoothed(&rows.iter().filter_map(|r| r.metric(m)).collect::<Vec<_>>())).collect();
    rows.iter()
        .enumerate()
        .map(|(i, r)| SmoothedRow {
            x: r.x,
            kron_err_sq: cols[0][i],
            beta_a_err: cols[1][i],
            beta_n_err: cols[2][i],
            proj_u_err: cols[3][i],
            proj_v_err: cols[4][i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub train_frac: f64,
    /// `None`: fit once on the training window.
    pub refit_every: Option<usize>,
    pub fit: FitConfig,
    /// RRVAR rank; defaults to `min(N·D, r·N)` with `r` the RRNAR rank.
    pub rrvar_rank: Option<usize>,
    pub mar_iters: usize,
    /// RRVAR is skipped above this `N·D`.
    pub rrvar_max_dim: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { train_frac: 0.8, refit_every: None, fit: FitConfig::default(), rrvar_rank: None, mar_iters: 50, rrvar_max_dim: 2000 }
    }
}

/// Rolling one-step evaluation of RRNAR, NAR, RRVAR and MAR on one panel.
/// Models that cannot be fitted are reported in `skipped` instead of failing
/// the whole comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub reports: Vec<ForecastReport>,
    pub skipped: Vec<(String, String)>,
}

pub fn bench(panel: &PanelSeries, w: &WeightMatrix, cfg: &BenchConfig) -> Result<BenchOutcome> {
    let (n, d) = (panel.n(), panel.d());
    let n_train = (cfg.train_frac * panel.len() as f64).floor() as usize;
    let rank = match &cfg.fit.ranks {
        RankSpec::Fixed(r) => r[0],
        RankSpec::Auto => {
            let train = panel.window(0..n_train.max(2).min(panel.len()))?;
            select_rank(&train, w, cfg.fit.r_bar_for(d), &cfg.fit)?[0]
        }
    };
    let rrvar_rank = cfg.rrvar_rank.unwrap_or(rank * n).min(n * d);
    let mut fitters: Vec<Box<dyn Fitter>> = vec![
        Box::new(RrnarFitter { weight: w.clone(), config: FitConfig { ranks: RankSpec::Fixed(vec![rank; cfg.fit.num_lags()]), ..cfg.fit.clone() } }),
        Box::new(NarFitter { weight: w.clone() }),
    ];
    let mut skipped = Vec::new();
    if n * d <= cfg.rrvar_max_dim {
        fitters.push(Box::new(RrvarFitter { rank: rrvar_rank }));
    } else {
        skipped.push(("RRVAR".to_string(), format!("N·D = {} exceeds rrvar_max_dim = {}", n * d, cfg.rrvar_max_dim)));
    }
    fitters.push(Box::new(MarFitter { iters: cfg.mar_iters }));
    let mut reports = Vec::new();
    for f in &fitters {
        match rolling_eval(f.as_ref(), panel, cfg.train_frac, cfg.refit_every) {
            Ok(r) => reports.push(r),
            Err(e) if e.is_input_error() => return Err(e),
            Err(e) => skipped.push((f.name(), e.to_string())),
        }
    }
    Ok(BenchOutcome { reports, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_fit_examples() {
        let x = [10.0, 20.0, 40.0, 80.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.0)).collect();
        let s = slope_fit(&x, &y).unwrap();
        assert!((s.slope + 1.0).abs() < 1e-12 && (s.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((s.r_squared - 1.0).abs() < 1e-12);
        let flat = slope_fit(&x, &[2.0; 4]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(slope_fit(&x, &[1.0, -1.0, 1.0, 1.0]).is_err());
        assert!(slope_fit(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(log_grid(10, 1000, 3), vec![10, 100, 1000]);
        assert_eq!(even_spectrum(3), vec![1.5, 1.0, 0.5]);
        let s = smoothed(&[1.0, 100.0, 1.0]);
        assert!((s[1] - 100f64.powf(1.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn mc_rank_is_deterministic_across_workers() {
        let cfg = McRankConfig {
            cells: vec![Cell { n: 10, d: 6, r: 2, t: 150, k: 3 }],
            reps: 4,
            seed: 11,
            parallelism: 1,
            fit: FitConfig::default(),
        };
        let mut seen = Vec::new();
        let a = mc_rank(&cfg, &mut |_, reps| {
            seen.extend(reps.iter().map(|r| (r.seed, r.selected_rank)));
            Ok(())
        })
        .unwrap();
        let b = mc_rank(&McRankConfig { parallelism: 3, ..cfg.clone() }, &mut |_, _| Ok(())).unwrap();
        assert_eq!(a, b);
        assert_eq!(seen.len(), 4);
        assert_eq!(a[0].r_bar, 3);
        let unreachable = McRankConfig { cells: vec![Cell { n: 10, d: 6, r: 3, t: 150, k: 3 }], ..cfg };
        assert!(mc_rank(&unreachable, &mut |_, _| Ok(())).is_err());
    }

    #[test]
    fn rates_rows_are_positive_and_finite() {
        let mut cfg = McRatesConfig::preset(RatesKind::VaryT, Topology::SparseK(3), 2, 5);
        cfg.grid = vec![100, 200];
        cfg.n = 8;
        cfg.d = 4;
        cfg.r = 2;
        let rows = mc_rates(&cfg, &mut |_, _| Ok(())).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.failures, 0);
            for m in RATE_METRICS {
                let v = r.metric(m).unwrap();
                assert!(v > 0.0 && v.is_finite(), "{m} = {v}");
            }
        }
        assert_eq!(rate_slopes(&rows).unwrap().len(), 5);
        assert_eq!(smoothed_rows(&rows).len(), 2);

        // emitted tables come back unchanged through the CSV reader
        let dir = tempfile::tempdir().unwrap();
        let mut reps = Vec::new();
        let rows = mc_rates(&cfg, &mut |_, r| {
            reps.extend_from_slice(r);
            Ok(())
        })
        .unwrap();
        let path = dir.path().join("rates.csv");
        crate::io::write_records_csv(&rows, &path).unwrap();
        assert_eq!(crate::io::read_records_csv::<RatesRow>(&path).unwrap(), rows);
        let mut failed = reps[0].clone();
        failed.failure = Some("boom, with a comma".into());
        failed.kron_err = None;
        reps.push(failed);
        crate::io::write_records_csv(&reps, &path).unwrap();
        assert_eq!(crate::io::read_records_csv::<ReplicationResult>(&path).unwrap(), reps);
        let slopes = rate_slopes(&rows).unwrap();
        crate::io::write_records_csv(&slopes, &path).unwrap();
        assert_eq!(crate::io::read_records_csv::<SlopeRow>(&path).unwrap(), slopes);
    }
}
