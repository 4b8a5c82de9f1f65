//! `rrnar` command-line driver.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 estimation hit
//! the iteration cap without converging, 4 numerical failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rrnar::dgp::{sample_params, simulate, DgpConfig, NoiseSpec};
use rrnar::error::{Error, Result};
use rrnar::estimator::{self, select_rank_detailed, FitConfig, RankSpec};
use rrnar::eval::{dist_upper, kron_error, rolling_eval, FixedFitter, RrnarFitter};
use rrnar::experiments::{
    bench, mc_rank, mc_rates, rate_slopes, smoothed_rows, BenchConfig, Cell, McRankConfig, McRatesConfig, Topology,
};
use rrnar::graph::{row_normalize, WeightMatrix};
use rrnar::io::{self, CsvSink, Document};
use rrnar::model::{ModelDims, PanelSeries, ParamSet};
use rrnar::objective::panel_loss;
use rrnar::rng::rng_from_seed;

use config::{rates_kind, resolve_parallelism, resolve_seed, single, ExperimentConfig, Kind};

#[derive(Parser)]
#[command(name = "rrnar", version, about = "Reduced-rank network autoregression: simulate, fit, forecast, Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment document; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (default: config, then RRNAR_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files (default: config, then the current directory).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Long-format panel CSV (`t,node,variable,value`).
    #[arg(long)]
    panel: PathBuf,
    /// Edge-list CSV (`src,dst`).
    #[arg(long)]
    adjacency: PathBuf,
}

#[derive(Args, Clone, Default)]
struct FitArgs {
    /// Ranks per lag (`2`, `2,1`) or `auto`.
    #[arg(long, value_parser = parse_ranks)]
    rank: Option<RankSpec>,
    /// Lag order for `auto` ranks.
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    als_sweeps: Option<usize>,
    /// Upper bound of the rank search.
    #[arg(long)]
    r_bar: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a stationary model and simulate a panel.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Ranks per lag, comma separated.
        #[arg(long, value_delimiter = ',')]
        rank: Option<Vec<usize>>,
        #[arg(long)]
        t: Option<usize>,
        /// Degree of the k-regular cycle.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        noiseless: bool,
    },
    /// Estimate the model on a panel.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Truth document; adds aligned errors to the output.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Output document (default: <output-dir>/fit.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select ranks by the singular-value ratio criterion.
    Rank {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Rolling one-step forecasts on a chronological split.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Forecast with fixed parameters from a truth or fit document.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        refit_every: Option<usize>,
    },
    /// Rank-selection frequency over a grid of (N, D, r, T, k).
    McRank {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        d: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        r: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Estimation-error sweep over N, D or T with log–log slope fits.
    McRates {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Option<SweepArg>,
        /// `sparse` (k=3), `sparse:<k>` or `dense` (k=N/2).
        #[arg(long, value_parser = parse_topology)]
        topology: Option<Topology>,
        /// Values of the varied dimension.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Forecast comparison of RRNAR, NAR, RRVAR and MAR.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        refit_every: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    VaryN,
    VaryD,
    VaryT,
}

fn parse_ranks(s: &str) -> std::result::Result<RankSpec, String> {
    if s.trim() == "auto" {
        return Ok(RankSpec::Auto);
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("expected `auto` or comma-separated ranks, got {s:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(RankSpec::Fixed)
}

fn parse_topology(s: &str) -> std::result::Result<Topology, String> {
    match s.trim() {
        "dense" | "dense_half" => Ok(Topology::DenseHalf),
        "sparse" => Ok(Topology::SparseK(3)),
        other => other
            .strip_prefix("sparse:")
            .and_then(|k| k.parse().ok())
            .map(Topology::SparseK)
            .ok_or_else(|| format!("expected `sparse`, `sparse:<k>` or `dense`, got {s:?}")),
    }
}

/// Failure carrying its exit status.
enum Failure {
    Error(Error),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 4 })
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Simulate { common, n, d, rank, t, k, burn_in, noise_sd, noiseless } => {
            let mut cfg = load(&common, &[Kind::Simulate])?;
            override_list(&mut cfg.grid.n, n);
            override_list(&mut cfg.grid.d, d);
            override_list(&mut cfg.grid.t, t);
            override_list(&mut cfg.grid.k, k);
            if let Some(r) = rank {
                cfg.simulate.ranks = Some(r);
            }
            set(&mut cfg.simulate.burn_in, burn_in);
            set(&mut cfg.simulate.noise_sd, noise_sd);
            cfg.simulate.noiseless |= noiseless;
            cmd_simulate(&cfg, resolve_seed(common.seed, cfg.seed)?, &out_dir(&common, &cfg))
        }
        Command::Fit { common, data, fit, truth, out } => {
            let mut cfg = load(&common, &[Kind::Fit])?;
            apply_fit_args(&mut cfg.fit, &fit);
            cfg.fit.seed = resolve_seed(common.seed, cfg.seed)?;
            let out = out.unwrap_or_else(|| out_dir(&common, &cfg).join("fit.json"));
            cmd_fit(&cfg.fit, &data, truth.as_deref(), &out)
        }
        Command::Rank { common, data, fit } => {
            let mut cfg = load(&common, &[Kind::Rank])?;
            apply_fit_args(&mut cfg.fit, &fit);
            cfg.fit.ranks = RankSpec::Auto;
            cfg.fit.seed = resolve_seed(common.seed, cfg.seed)?;
            cmd_rank(&cfg.fit, &data, &out_dir(&common, &cfg))
        }
        Command::Forecast { common, data, fit, params, train_frac, refit_every } => {
            let mut cfg = load(&common, &[Kind::Forecast])?;
            apply_fit_args(&mut cfg.fit, &fit);
            cfg.fit.seed = resolve_seed(common.seed, cfg.seed)?;
            set(&mut cfg.bench.train_frac, train_frac);
            if refit_every.is_some() {
                cfg.bench.refit_every = refit_every;
            }
            cmd_forecast(&cfg, &data, params.as_deref(), &out_dir(&common, &cfg))
        }
        Command::McRank { common, n, d, r, t, k, reps, parallelism } => {
            let mut cfg = load(&common, &[Kind::McRank])?;
            for (slot, v) in [(&mut cfg.grid.n, n), (&mut cfg.grid.d, d), (&mut cfg.grid.r, r), (&mut cfg.grid.t, t), (&mut cfg.grid.k, k)] {
                if let Some(v) = v {
                    *slot = v;
                }
            }
            let seed = resolve_seed(common.seed, cfg.seed)?;
            let par = resolve_parallelism(parallelism, cfg.parallelism)?;
            cmd_mc_rank(&cfg, reps.or(cfg.reps).unwrap_or(100), seed, par, &out_dir(&common, &cfg))
        }
        Command::McRates { common, kind, topology, grid, n, d, r, t, reps, parallelism } => {
            let mut cfg = load(&common, &[Kind::McRatesN, Kind::McRatesD, Kind::McRatesT])?;
            let kind = match kind {
                Some(SweepArg::VaryN) => Kind::McRatesN,
                Some(SweepArg::VaryD) => Kind::McRatesD,
                Some(SweepArg::VaryT) => Kind::McRatesT,
                None => cfg.kind.ok_or_else(|| Error::InvalidInput("mc-rates needs --kind or a config `kind`".into()))?,
            };
            let swept = match kind {
                Kind::McRatesN => &mut cfg.grid.n,
                Kind::McRatesD => &mut cfg.grid.d,
                _ => &mut cfg.grid.t,
            };
            if let Some(g) = grid {
                *swept = g;
            }
            override_list(&mut cfg.grid.n, n);
            override_list(&mut cfg.grid.d, d);
            override_list(&mut cfg.grid.r, r);
            override_list(&mut cfg.grid.t, t);
            if topology.is_some() {
                cfg.topology = topology;
            }
            let seed = resolve_seed(common.seed, cfg.seed)?;
            let par = resolve_parallelism(parallelism, cfg.parallelism)?;
            cmd_mc_rates(&cfg, kind, reps.or(cfg.reps).unwrap_or(50), seed, par, &out_dir(&common, &cfg))
        }
        Command::Bench { common, data, fit, train_frac, refit_every } => {
            let mut cfg = load(&common, &[Kind::Bench])?;
            apply_fit_args(&mut cfg.fit, &fit);
            cfg.fit.seed = resolve_seed(common.seed, cfg.seed)?;
            set(&mut cfg.bench.train_frac, train_frac);
            if refit_every.is_some() {
                cfg.bench.refit_every = refit_every;
            }
            cmd_bench(&cfg, &data, &out_dir(&common, &cfg))
        }
    }
}

fn load(common: &Common, kinds: &[Kind]) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(common.config.as_deref())?;
    cfg.check_kind(kinds)?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.output_dir.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn override_list(slot: &mut Vec<usize>, v: Option<usize>) {
    if let Some(v) = v {
        *slot = vec![v];
    }
}

fn apply_fit_args(fit: &mut FitConfig, a: &FitArgs) {
    if let Some(r) = &a.rank {
        fit.ranks = r.clone();
        if let RankSpec::Fixed(r) = r {
            fit.lags = r.len();
        }
    }
    set(&mut fit.lags, a.lags);
    set(&mut fit.eta, a.eta);
    set(&mut fit.max_iter, a.max_iter);
    set(&mut fit.als_sweeps, a.als_sweeps);
    if a.r_bar.is_some() {
        fit.r_bar = a.r_bar;
    }
}

fn load_data(data: &DataArgs) -> Result<(PanelSeries, WeightMatrix)> {
    let panel = io::read_panel_csv(&data.panel)?;
    let adj = io::read_edges_csv(&data.adjacency, Some(panel.n()))?;
    Ok((panel, row_normalize(&adj)))
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// `‖A‖_F` for the stacked transition `[A_1, …, A_L]`.
fn transition_norm(p: &ParamSet, w: &WeightMatrix) -> f64 {
    p.lags.iter().map(|l| l.bnet_frob_sq(w) * l.bvar_frob_sq()).sum::<f64>().sqrt()
}

fn cmd_simulate(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> CmdResult {
    let g = &cfg.grid;
    let s = &cfg.simulate;
    let (n, d, t, k) = (single(&g.n, "n", 20)?, single(&g.d, "d", 10)?, single(&g.t, "t", 200)?, single(&g.k, "k", 3)?);
    let ranks = match &s.ranks {
        Some(r) => r.clone(),
        None => vec![single(&g.r, "r", 2)?],
    };
    let mut dgp = DgpConfig::new(ModelDims::new(n, d, ranks)?, t, k, seed);
    dgp.burn_in = s.burn_in;
    dgp.noise = NoiseSpec::Isotropic { sd: s.noise_sd };
    dgp.singular_low = s.singular_low;
    dgp.singular_high = s.singular_high;
    dgp.fixed_betas = s.fixed_betas.clone();
    dgp.fixed_singular = s.fixed_singular.clone();
    dgp.exact_stationarity = s.exact_stationarity;
    if s.noiseless {
        dgp = dgp.noiseless();
    }
    let mut rng = rng_from_seed(seed);
    let model = sample_params(&dgp, &mut rng)?;
    let panel = simulate(&model, &dgp, &mut rng)?;
    let adj = dgp.adjacency()?;
    let wfs = model.weight.frob_sq();

    io::write_panel_csv(&panel, &dir.join("panel.csv"))?;
    io::write_edges_csv(&adj, &dir.join("adjacency.csv"))?;
    let mut doc = Document::truth(&model.params, model.rho, wfs, seed);
    doc.config = Some(serde_json::json!({ "n": n, "d": d, "t": t, "k": k, "simulate": to_value(s)? }));
    io::write_json(&doc, &dir.join("truth.json"))?;
    println!("rho = {:.6}", model.rho);
    println!("weight_frob_sq = {wfs:.6}");
    println!("wrote {} observations of {n}x{d} to {}", panel.len(), dir.display());
    Ok(())
}

fn cmd_fit(fit: &FitConfig, data: &DataArgs, truth: Option<&Path>, out: &Path) -> CmdResult {
    let (panel, w) = load_data(data)?;
    let truth = truth.map(|p| io::read_json::<Document>(p)?.param_set()).transpose()?;
    let res = estimator::fit(&panel, &w, fit)?;
    let mut doc = Document::fit(&res, fit.seed);
    doc.config = Some(to_value(fit)?);
    println!("ranks = {:?}", res.selected_ranks);
    println!("iters = {}", res.iters);
    println!("converged = {}", res.converged);
    println!("final_loss = {:e}", res.loss_trace.last().copied().unwrap_or(f64::NAN));
    if let Some(t) = &truth {
        let kron = kron_error(&res.params, t, &w)?;
        println!("kron_err = {kron:e}");
        println!("kron_err_rel = {:e}", kron / transition_norm(t, &w));
        println!("fit_panel_loss = {:e}", panel_loss(&res.params, &w, &panel)?);
        println!("truth_panel_loss = {:e}", panel_loss(t, &w, &panel)?);
        if t.ranks() == res.params.ranks() {
            doc.errors = Some(dist_upper(&res.params, t, &w)?);
        }
    }
    io::write_json(&doc, out)?;
    if !res.converged {
        return Err(Failure::NotConverged(format!("no convergence within {} iterations; result written to {}", res.iters, out.display())));
    }
    Ok(())
}

fn cmd_rank(fit: &FitConfig, data: &DataArgs, dir: &Path) -> CmdResult {
    let (panel, w) = load_data(data)?;
    fit.validate(panel.d())?;
    let r_bar = fit.r_bar_for(panel.d());
    let sel = select_rank_detailed(&panel, &w, r_bar, fit)?;
    let doc = Document {
        kind: "rank".into(),
        ranks: Some(sel.ranks.clone()),
        singular_values: Some(sel.singular_values),
        seed: Some(fit.seed),
        config: Some(serde_json::json!({ "r_bar": r_bar, "ridge": sel.ridge, "fit": to_value(fit)? })),
        ..Document::default()
    };
    io::write_json(&doc, &dir.join("rank.json"))?;
    println!("ranks = {:?}", sel.ranks);
    Ok(())
}

fn cmd_forecast(cfg: &ExperimentConfig, data: &DataArgs, params: Option<&Path>, dir: &Path) -> CmdResult {
    let (panel, w) = load_data(data)?;
    let report = match params {
        Some(p) => {
            let params = io::read_json::<Document>(p)?.param_set()?;
            rolling_eval(&FixedFitter { params, weight: w }, &panel, cfg.bench.train_frac, cfg.bench.refit_every)?
        }
        None => rolling_eval(
            &RrnarFitter { weight: w, config: cfg.fit.clone() },
            &panel,
            cfg.bench.train_frac,
            cfg.bench.refit_every,
        )?,
    };
    let reports = vec![report];
    io::write_mse_table(&reports, None, &dir.join("mse.csv"))?;
    let doc = Document { kind: "forecast".into(), reports: Some(reports.clone()), ..Document::default() };
    io::write_json(&doc, &dir.join("forecast.json"))?;
    println!("global_mse = {:e}", reports[0].global_mse);
    println!("median_se = {:e}", reports[0].median_se);
    Ok(())
}

fn cmd_mc_rank(cfg: &ExperimentConfig, reps: usize, seed: u64, parallelism: usize, dir: &Path) -> CmdResult {
    let g = &cfg.grid;
    let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
    let (ns, ds, rs, ts, ks) = (or(&g.n, 50), or(&g.d, 10), or(&g.r, 2), or(&g.t, 200), or(&g.k, 3));
    let mut cells = Vec::new();
    for &n in &ns {
        for &d in &ds {
            for &r in &rs {
                for &t in &ts {
                    for &k in &ks {
                        cells.push(Cell { n, d, r, t, k });
                    }
                }
            }
        }
    }
    let mc = McRankConfig { cells, reps, seed, parallelism, fit: cfg.fit.clone() };
    let mut table = CsvSink::create(&dir.join("rank_table.csv"))?;
    let mut reps_out = CsvSink::create(&dir.join("replications.csv"))?;
    println!("n,d,r,t,k,r_bar,frequency");
    mc_rank(&mc, &mut |row, reps| {
        table.push(row)?;
        for r in reps {
            reps_out.push(r)?;
        }
        println!("{},{},{},{},{},{},{:.3}", row.n, row.d, row.r, row.t, row.k, row.r_bar, row.frequency);
        Ok(())
    })?;
    Ok(())
}

fn cmd_mc_rates(cfg: &ExperimentConfig, kind: Kind, reps: usize, seed: u64, parallelism: usize, dir: &Path) -> CmdResult {
    let rk = rates_kind(kind).ok_or_else(|| Error::InvalidInput(format!("{kind:?} is not a rates sweep")))?;
    let topology = cfg.topology.unwrap_or(Topology::SparseK(3));
    let mut mc = McRatesConfig::preset(rk, topology, reps, seed);
    let g = &cfg.grid;
    let first = |v: &Vec<usize>, d: usize| v.first().copied().unwrap_or(d);
    let swept = match rk {
        rrnar::experiments::RatesKind::VaryN => &g.n,
        rrnar::experiments::RatesKind::VaryD => &g.d,
        rrnar::experiments::RatesKind::VaryT => &g.t,
    };
    if !swept.is_empty() {
        mc.grid = swept.clone();
    }
    mc.n = first(&g.n, mc.n);
    mc.d = first(&g.d, mc.d);
    mc.r = first(&g.r, mc.r);
    mc.t = first(&g.t, mc.t);
    if !g.r.is_empty() && mc.fixed_singular.is_some() {
        mc.fixed_singular = Some(rrnar::experiments::even_spectrum(mc.r));
    }
    if cfg.rates.fixed_betas.is_some() {
        mc.fixed_betas = cfg.rates.fixed_betas;
    }
    if cfg.rates.fixed_singular.is_some() {
        mc.fixed_singular = cfg.rates.fixed_singular.clone();
    }
    mc.parallelism = parallelism;
    mc.fit = cfg.fit.clone();

    let mut table = CsvSink::create(&dir.join("rates.csv"))?;
    let mut reps_out = CsvSink::create(&dir.join("replications.csv"))?;
    let rows = mc_rates(&mc, &mut |row, reps| {
        table.push(row)?;
        for r in reps {
            reps_out.push(r)?;
        }
        eprintln!("x = {}: kron_err_sq = {:.3e}, beta_a = {:.3e}, beta_n = {:.3e}", row.x, row.kron_err_sq, row.beta_a_err, row.beta_n_err);
        Ok(())
    })?;
    io::write_records_csv(&smoothed_rows(&rows), &dir.join("rates_smoothed.csv"))?;
    let slopes = rate_slopes(&rows)?;
    io::write_records_csv(&slopes, &dir.join("slopes.csv"))?;
    println!("metric,slope,intercept,r_squared");
    for s in &slopes {
        println!("{},{:.4},{:.4},{:.4}", s.metric, s.slope, s.intercept, s.r_squared);
    }
    Ok(())
}

fn cmd_bench(cfg: &ExperimentConfig, data: &DataArgs, dir: &Path) -> CmdResult {
    let (panel, w) = load_data(data)?;
    let bc = BenchConfig { fit: cfg.fit.clone(), ..cfg.bench.clone() };
    let outcome = bench(&panel, &w, &bc)?;
    io::write_mse_table(&outcome.reports, None, &dir.join("mse.csv"))?;
    let doc = Document {
        kind: "bench".into(),
        reports: Some(outcome.reports.clone()),
        config: Some(serde_json::json!({ "bench": to_value(&bc)?, "skipped": outcome.skipped })),
        ..Document::default()
    };
    io::write_json(&doc, &dir.join("bench.json"))?;
    println!("model,global_mse,median_se");
    for r in &outcome.reports {
        println!("{},{:.6e},{:.6e}", r.model, r.global_mse, r.median_se);
    }
    for (m, why) in &outcome.skipped {
        eprintln!("skipped {m}: {why}");
    }
    Ok(())
}
