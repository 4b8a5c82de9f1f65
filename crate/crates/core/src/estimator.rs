//! Estimation: RRR/OLS alternating initializer, scaled gradient descent, and
//! singular-value-ratio rank selection.

use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::WeightMatrix;
use crate::linalg::{solve_normal, sorted_svd, spd_condition, sym_eigen_desc, Mat};
use crate::model::{LagParams, PanelSeries, ParamSet};
use crate::moments::{MomentGrad, Moments};
use crate::objective::{grad_blocks_panel, panel_loss};
use crate::rng::{rng_from_seed, Rng};

/// Fixed ranks per lag, or selection by the singular-value-ratio rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankSpec {
    Fixed(Vec<usize>),
    Auto,
}

impl Serialize for RankSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RankSpec::Fixed(r) => r.serialize(s),
            RankSpec::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for RankSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<usize>),
            One(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(r) => Ok(RankSpec::Fixed(r)),
            Raw::One(r) => Ok(RankSpec::Fixed(vec![r])),
            Raw::Word(w) if w == "auto" => Ok(RankSpec::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("ranks must be a list or \"auto\", got {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// All blocks move from the same iterate.
    #[default]
    Simultaneous,
    /// Gauss–Seidel: β, then U, then V, each with a fresh gradient.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSolver {
    #[default]
    ScaledGd,
    AlsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub eta: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub als_sweeps: usize,
    pub ranks: RankSpec,
    /// Lag order; must agree with `ranks` when those are fixed.
    pub lags: usize,
    /// Rank cap for `auto`; defaults to `min(D/2, 10)` (at least 2).
    pub r_bar: Option<usize>,
    pub ridge_factor: f64,
    pub gram_cond_limit: f64,
    pub seed: u64,
    pub update_order: UpdateOrder,
    pub rank_solver: RankSolver,
    /// Divide `eta` by the largest regressor-Gram eigenvalue per row so the
    /// step is invariant to the units of the panel. Off reproduces the raw step.
    pub normalize_step: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            eta: 0.25,
            max_iter: 2000,
            rel_tol: 1e-10,
            als_sweeps: 1,
            ranks: RankSpec::Fixed(vec![1]),
            lags: 1,
            r_bar: None,
            ridge_factor: 0.5,
            gram_cond_limit: 1e12,
            seed: 0,
            update_order: UpdateOrder::Simultaneous,
            rank_solver: RankSolver::ScaledGd,
            normalize_step: true,
        }
    }
}

impl FitConfig {
    pub fn with_ranks(ranks: Vec<usize>) -> Self {
        Self { lags: ranks.len(), ranks: RankSpec::Fixed(ranks), ..Self::default() }
    }

    pub fn num_lags(&self) -> usize {
        match &self.ranks {
            RankSpec::Fixed(r) => r.len(),
            RankSpec::Auto => self.lags,
        }
    }

    pub fn r_bar_for(&self, d: usize) -> usize {
        self.r_bar.unwrap_or_else(|| (d / 2).clamp(2, 10).min(d))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidInput(format!("eta must be positive, got {}", self.eta)));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        match &self.ranks {
            RankSpec::Fixed(r) => {
                if r.is_empty() {
                    return Err(Error::InvalidInput("need at least one rank".into()));
                }
                if let RankSpec::Fixed(_) = self.ranks {
                    if self.lags != r.len() && self.lags != 1 {
                        return Err(Error::InvalidInput(format!(
                            "lags={} disagrees with {} rank(s)",
                            self.lags,
                            r.len()
                        )));
                    }
                }
                if let Some(&bad) = r.iter().find(|&&x| x == 0 || x > d) {
                    return Err(Error::RankMismatch(format!("rank {bad} outside 1..={d}")));
                }
            }
            RankSpec::Auto => {
                if self.lags < 1 {
                    return Err(Error::InvalidInput("lags must be at least 1".into()));
                }
                let rb = self.r_bar_for(d);
                if rb < 2 || rb > d {
                    return Err(Error::RankMismatch(format!("r_bar={rb} must lie in 2..={d}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Norm-balanced with `β_A ≥ 0` per lag.
    pub params: ParamSet,
    pub loss_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    pub selected_ranks: Vec<usize>,
    pub init_params: ParamSet,
}

/// `U = LΣ^{1/2}`, `V = RΣ^{1/2}` from the best rank-`r` truncation.
pub fn factor_split(b_var: &Mat, rank: usize) -> (Mat, Mat) {
    let d = b_var.nrows();
    let (l, s, r) = sorted_svd(b_var);
    let mut u = Mat::zeros(d, rank);
    let mut v = Mat::zeros(d, rank);
    for j in 0..rank.min(s.len()) {
        let root = s[j].max(0.0).sqrt();
        u.set_column(j, &(l.column(j) * root));
        v.set_column(j, &(r.column(j) * root));
    }
    (u, v)
}

/// Reduced-rank regression from `S_yx = Σ Y_tᵀX_t` and `S_xx = Σ X_tᵀX_t`:
/// `B = ΓΓᵀ S_yx S_xx⁻¹` with `Γ` the leading eigenvectors of `S_yx S_xx⁻¹ S_yxᵀ`.
pub fn rrr_from_moments(syx: &Mat, sxx: &Mat, rank: usize, cond_limit: f64) -> Result<Mat> {
    let d = syx.nrows();
    if rank == 0 || rank > d {
        return Err(Error::RankMismatch(format!("rank {rank} outside 1..={d}")));
    }
    let z = solve_normal(sxx, &syx.transpose(), cond_limit, true).map_err(|c| {
        Error::IllConditioned(format!("predictor Gram condition number {c:.3e} after ridge"))
    })?;
    let b_ols = z.transpose();
    if rank == d {
        return Ok(b_ols);
    }
    let (_, vecs) = sym_eigen_desc(&(syx * &z));
    let gamma = vecs.columns(0, rank).into_owned();
    Ok(&gamma * (gamma.transpose() * b_ols))
}

/// RRR on paired slices: minimizes `Σ ‖Y_t − X_t Bᵀ‖_F²` over rank-`r` `B`.
pub fn rrr_solve(x_pred: &[Mat], y_resp: &[Mat], rank: usize) -> Result<Mat> {
    if x_pred.len() != y_resp.len() || x_pred.is_empty() {
        return Err(Error::Shape("predictor and response sequences must be non-empty and equally long".into()));
    }
    let d = x_pred[0].ncols();
    let mut syx = Mat::zeros(y_resp[0].ncols(), d);
    let mut sxx = Mat::zeros(d, d);
    for (x, y) in x_pred.iter().zip(y_resp) {
        if x.shape() != x_pred[0].shape() || y.nrows() != x.nrows() {
            return Err(Error::Shape("inconsistent slice shapes".into()));
        }
        syx.gemm_tr(1.0, y, x, 1.0);
        sxx.gemm_tr(1.0, x, x, 1.0);
    }
    rrr_from_moments(&syx, &sxx, rank, 1e12)
}

/// Joint least squares for every `(β_A,ℓ, β_N,ℓ)` with `B_var,ℓ` held fixed.
/// With `with_net = false` the `β_N` are pinned at zero.
pub(crate) fn ols_from_moments(m: &Moments, b_vars: &[Mat], with_net: bool, cond_limit: f64) -> Result<Vec<(f64, f64)>> {
    let (g, rhs) = m.beta_system(b_vars);
    let idx: Vec<usize> = (0..2 * m.lags).filter(|i| with_net || i % 2 == 0).collect();
    let gs = Mat::from_fn(idx.len(), idx.len(), |i, j| g[(idx[i], idx[j])]);
    let rs = Mat::from_fn(idx.len(), 1, |i, _| rhs[idx[i]]);
    let sol = solve_normal(&gs, &rs, cond_limit, false)
        .map_err(|c| Error::CollinearDesign(format!("β design Gram condition number {c:.3e}")))?;
    let mut out = vec![(0.0, 0.0); m.lags];
    for (k, &i) in idx.iter().enumerate() {
        if i % 2 == 0 {
            out[i / 2].0 = sol[(k, 0)];
        } else {
            out[i / 2].1 = sol[(k, 0)];
        }
    }
    Ok(out)
}

/// OLS for the network scalars given each lag's `B_var`.
pub fn ols_betas(b_var_per_lag: &[Mat], panel: &PanelSeries, w: &WeightMatrix) -> Result<Vec<(f64, f64)>> {
    let m = Moments::from_panel(panel, w, b_var_per_lag.len())?;
    ols_from_moments(&m, b_var_per_lag, true, 1e12)
}

/// Uniform draw on `{β_A, β_N > 0, β_A + β_N < 1}` by reflection.
fn triangle_draw(rng: &mut Rng) -> (f64, f64) {
    let (a, b): (f64, f64) = (rng.random(), rng.random());
    if a + b >= 1.0 {
        (1.0 - a, 1.0 - b)
    } else {
        (a, b)
    }
}

fn assemble(n: usize, d: usize, betas: &[(f64, f64)], b_vars: &[Mat], ranks: &[usize]) -> Result<ParamSet> {
    let lags = betas
        .iter()
        .zip(b_vars)
        .zip(ranks)
        .map(|((&(a, b), bv), &r)| {
            let (u, v) = factor_split(bv, r);
            LagParams { beta_a: a, beta_n: b, u, v }
        })
        .collect();
    ParamSet::new(n, d, lags)
}

pub(crate) fn initialize_moments(
    m: &Moments,
    w: &WeightMatrix,
    ranks: &[usize],
    cfg: &FitConfig,
    rng: &mut Rng,
) -> Result<ParamSet> {
    let with_net = w.frob_sq() > 0.0;
    let mut betas: Vec<(f64, f64)> = ranks
        .iter()
        .map(|_| {
            let (a, b) = triangle_draw(rng);
            (a, if with_net { b } else { 0.0 })
        })
        .collect();
    let mut b_vars = vec![Mat::zeros(m.d, m.d); ranks.len()];
    // one backfitting pass over lags: each lag's RRR sees the others' current fit
    let rrr_pass = |betas: &[(f64, f64)], b_vars: &mut Vec<Mat>| -> Result<()> {
        for l in 0..ranks.len() {
            let current = assemble(m.n, m.d, betas, b_vars, ranks)?;
            let (syx, sxx) = m.rrr_inputs(&current, l);
            b_vars[l] = rrr_from_moments(&syx, &sxx, ranks[l], cfg.gram_cond_limit)?;
        }
        Ok(())
    };
    rrr_pass(&betas, &mut b_vars)?;
    for sweep in 0..cfg.als_sweeps {
        if sweep > 0 {
            rrr_pass(&betas, &mut b_vars)?;
        }
        betas = ols_from_moments(m, &b_vars, with_net, cfg.gram_cond_limit)?;
    }
    assemble(m.n, m.d, &betas, &b_vars, ranks)
}

/// ALS warm start: random network scalars, then `als_sweeps` rounds of
/// RRR for every `B_var,ℓ` followed by joint OLS for the scalars.
pub fn initialize(panel: &PanelSeries, w: &WeightMatrix, ranks: &[usize], cfg: &FitConfig, rng: &mut Rng) -> Result<ParamSet> {
    if w.n() != panel.n() {
        return Err(Error::Shape(format!("W is {0}x{0} but the panel has N={1}", w.n(), panel.n())));
    }
    let m = Moments::from_panel(panel, w, ranks.len())?;
    initialize_moments(&m, w, ranks, cfg, rng)
}

/// Loss and gradients on the moment path. Near an exact fit the moment
/// identities lose every significant digit to cancellation, so both are
/// recomputed from the residuals there.
fn eval_loss_grad(m: &Moments, panel: &PanelSeries, w: &WeightMatrix, p: &ParamSet) -> Result<(f64, Vec<MomentGrad>)> {
    let (fast, grads) = m.loss_grad(p);
    if fast >= 1e-6 * m.loss_zero() {
        return Ok((fast, grads));
    }
    let g = grad_blocks_panel(p, w, panel)?;
    let grads = g
        .lags
        .into_iter()
        .map(|l| MomentGrad { g_beta_a: l.g_beta_a, g_beta_n: l.g_beta_n, g_bvar: l.g_bvar })
        .collect();
    Ok((panel_loss(p, w, panel)?, grads))
}

struct Precond {
    n: f64,
    w: f64,
}

impl Precond {
    fn check(&self, p: &LagParams, limit: f64, l: usize) -> Result<(Mat, Mat)> {
        let gu = p.u.transpose() * &p.u;
        let gv = p.v.transpose() * &p.v;
        for (name, g) in [("UᵀU", &gu), ("VᵀV", &gv)] {
            let c = spd_condition(g);
            if c > limit {
                return Err(Error::DegenerateFactors(format!(
                    "lag {} {name} condition number {c:.3e} exceeds {limit:.1e}",
                    l + 1
                )));
            }
        }
        Ok((gu, gv))
    }

    fn inv(g: &Mat) -> Result<Mat> {
        crate::linalg::spd_inverse(g).ok_or_else(|| Error::DegenerateFactors("factor Gram not invertible".into()))
    }

    fn beta_step(&self, p: &mut LagParams, gu: &Mat, gv: &Mat, eta: f64, ga: f64, gn: f64) -> Result<()> {
        let tr = crate::linalg::frob_inner(gu, gv);
        if !(tr > 0.0) {
            return Err(Error::DegenerateFactors("B_var vanished".into()));
        }
        p.beta_a -= eta / (tr * self.n) * ga;
        if self.w > 0.0 {
            p.beta_n -= eta / (tr * self.w) * gn;
        }
        Ok(())
    }

    fn scale(&self, p: &LagParams) -> Result<f64> {
        let s = p.beta_a * p.beta_a * self.n + p.beta_n * p.beta_n * self.w;
        if !(s > 0.0) {
            return Err(Error::DegenerateFactors("B_net vanished".into()));
        }
        Ok(s)
    }
}

/// Scaled gradient descent from `init`; `observe` sees every iterate
/// (including the starting point) before balancing.
pub fn scaled_gd_observed(
    panel: &PanelSeries,
    w: &WeightMatrix,
    init: &ParamSet,
    cfg: &FitConfig,
    observe: &mut dyn FnMut(usize, &ParamSet),
) -> Result<FitResult> {
    init.check_against(w, panel)?;
    let m = Moments::from_panel(panel, w, init.num_lags())?;
    run_scaled_gd(&m, panel, w, init, cfg, observe)
}

pub fn scaled_gd(panel: &PanelSeries, w: &WeightMatrix, init: &ParamSet, cfg: &FitConfig) -> Result<FitResult> {
    scaled_gd_observed(panel, w, init, cfg, &mut |_, _| {})
}

fn run_scaled_gd(
    m: &Moments,
    panel: &PanelSeries,
    w: &WeightMatrix,
    init: &ParamSet,
    cfg: &FitConfig,
    observe: &mut dyn FnMut(usize, &ParamSet),
) -> Result<FitResult> {
    cfg.validate(init.d)?;
    let pc = Precond { n: init.n as f64, w: w.frob_sq() };
    let loss_zero = m.loss_zero();
    let scale = m.regressor_scale();
    let eta = if cfg.normalize_step && scale > 0.0 { cfg.eta / scale } else { cfg.eta };
    let mut theta = init.clone();
    let (mut loss, mut grads) = eval_loss_grad(m, panel, w, &theta)?;
    let mut trace = vec![loss];
    observe(0, &theta);
    let mut increases = 0;
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=cfg.max_iter {
        match cfg.update_order {
            UpdateOrder::Simultaneous => {
                let mut next = theta.clone();
                for (l, (p, g)) in theta.lags.iter().zip(&grads).enumerate() {
                    let (gu, gv) = pc.check(p, cfg.gram_cond_limit, l)?;
                    let q = &mut next.lags[l];
                    pc.beta_step(q, &gu, &gv, eta, g.g_beta_a, g.g_beta_n)?;
                    let s = pc.scale(p)?;
                    let g_u = &g.g_bvar * &p.v;
                    let g_v = g.g_bvar.transpose() * &p.u;
                    q.u -= g_u * Precond::inv(&gv)? * (eta / s);
                    q.v -= g_v * Precond::inv(&gu)? * (eta / s);
                }
                theta = next;
            }
            UpdateOrder::Sequential => {
                for l in 0..theta.num_lags() {
                    let (gu, gv) = pc.check(&theta.lags[l], cfg.gram_cond_limit, l)?;
                    let g = eval_loss_grad(m, panel, w, &theta)?.1.swap_remove(l);
                    pc.beta_step(&mut theta.lags[l], &gu, &gv, eta, g.g_beta_a, g.g_beta_n)?;
                    let g = eval_loss_grad(m, panel, w, &theta)?.1.swap_remove(l);
                    let p = &theta.lags[l];
                    let step = &g.g_bvar * &p.v * Precond::inv(&gv)? * (eta / pc.scale(p)?);
                    theta.lags[l].u -= step;
                    let g = eval_loss_grad(m, panel, w, &theta)?.1.swap_remove(l);
                    let p = &theta.lags[l];
                    let (gu, _) = pc.check(p, cfg.gram_cond_limit, l)?;
                    let step = g.g_bvar.transpose() * &p.u * Precond::inv(&gu)? * (eta / pc.scale(p)?);
                    theta.lags[l].v -= step;
                }
            }
        }
        if theta.lags.iter().any(|p| !p.beta_a.is_finite() || !p.u.iter().chain(p.v.iter()).all(|x| x.is_finite())) {
            return Err(Error::Divergence(format!("non-finite iterate at iteration {it} with eta={eta}")));
        }
        observe(it, &theta);
        let (new_loss, g) = eval_loss_grad(m, panel, w, &theta)?;
        grads = g;
        trace.push(new_loss);
        iters = it;
        if new_loss > loss + 1e-12 * loss_zero {
            increases += 1;
            if increases >= 10 {
                return Err(Error::Divergence(format!(
                    "loss increased for 10 consecutive iterations (at iteration {it}, eta={eta})"
                )));
            }
        } else {
            increases = 0;
        }
        let change = (new_loss - loss).abs() / loss.max(1e-300);
        loss = new_loss;
        if change < cfg.rel_tol || loss <= 1e-24 * loss_zero {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        params: theta.balanced(w),
        loss_trace: trace,
        iters,
        converged,
        selected_ranks: init.ranks(),
        init_params: init.clone(),
    })
}

/// `s(D, T) = factor · √(D ln T / T)`.
pub fn ridge_term(d: usize, t: usize, factor: f64) -> f64 {
    let t = t as f64;
    factor * (d as f64 * t.ln() / t).sqrt()
}

/// `argmin_{1≤j<r̄} (σ_{j+1} + s)/(σ_j + s)`, smallest `j` on ties.
pub fn rank_from_singular_values(sv: &[f64], s: f64) -> usize {
    let mut best = 1;
    let mut best_ratio = f64::INFINITY;
    for j in 1..sv.len() {
        let ratio = (sv[j] + s) / (sv[j - 1] + s);
        if ratio < best_ratio {
            best_ratio = ratio;
            best = j;
        }
    }
    best
}

/// Rank-selection outcome with the balanced singular values it used.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSelection {
    pub ranks: Vec<usize>,
    pub singular_values: Vec<Vec<f64>>,
    pub ridge: f64,
}

fn select_with_moments(
    m: &Moments,
    panel: &PanelSeries,
    w: &WeightMatrix,
    r_bar: usize,
    cfg: &FitConfig,
    rng: &mut Rng,
) -> Result<RankSelection> {
    let d = panel.d();
    if r_bar < 2 || r_bar > d {
        return Err(Error::RankMismatch(format!("r_bar={r_bar} must lie in 2..={d}")));
    }
    let ranks = vec![r_bar; m.lags];
    let init = initialize_moments(m, w, &ranks, cfg, rng)?;
    let fitted = match cfg.rank_solver {
        RankSolver::AlsOnly => init,
        RankSolver::ScaledGd => match run_scaled_gd(m, panel, w, &init, cfg, &mut |_, _| {}) {
            Ok(f) => f.params,
            // an over-specified exact fit leaves trailing factor directions empty;
            // the warm start already carries the spectrum needed here
            Err(Error::DegenerateFactors(_)) => init,
            Err(e) => return Err(e),
        },
    };
    let balanced = fitted.balanced(w);
    let ridge = ridge_term(d, m.t, cfg.ridge_factor);
    let singular_values: Vec<Vec<f64>> = balanced
        .lags
        .iter()
        .map(|p| {
            let (_, s, _) = sorted_svd(&p.b_var());
            s[..r_bar].to_vec()
        })
        .collect();
    let ranks = singular_values.iter().map(|s| rank_from_singular_values(s, ridge)).collect();
    Ok(RankSelection { ranks, singular_values, ridge })
}

/// Fits at rank `r̄` for every lag and picks each `r̂_ℓ` by the ratio rule.
pub fn select_rank_detailed(panel: &PanelSeries, w: &WeightMatrix, r_bar: usize, cfg: &FitConfig) -> Result<RankSelection> {
    if w.n() != panel.n() {
        return Err(Error::Shape(format!("W is {0}x{0} but the panel has N={1}", w.n(), panel.n())));
    }
    let lags = cfg.num_lags();
    let m = Moments::from_panel(panel, w, lags)?;
    select_with_moments(&m, panel, w, r_bar, cfg, &mut rng_from_seed(cfg.seed))
}

pub fn select_rank(panel: &PanelSeries, w: &WeightMatrix, r_bar: usize, cfg: &FitConfig) -> Result<Vec<usize>> {
    Ok(select_rank_detailed(panel, w, r_bar, cfg)?.ranks)
}

/// Full pipeline: optional rank selection, ALS warm start, scaled GD.
pub fn fit(panel: &PanelSeries, w: &WeightMatrix, cfg: &FitConfig) -> Result<FitResult> {
    let d = panel.d();
    cfg.validate(d)?;
    if w.n() != panel.n() {
        return Err(Error::Shape(format!("W is {0}x{0} but the panel has N={1}", w.n(), panel.n())));
    }
    let lags = cfg.num_lags();
    let m = Moments::from_panel(panel, w, lags)?;
    let mut rng = rng_from_seed(cfg.seed);
    let ranks = match &cfg.ranks {
        RankSpec::Fixed(r) => r.clone(),
        RankSpec::Auto => select_with_moments(&m, panel, w, cfg.r_bar_for(d), cfg, &mut rng)?.ranks,
    };
    let init = initialize_moments(&m, w, &ranks, cfg, &mut rng)?;
    let mut res = run_scaled_gd(&m, panel, w, &init, cfg, &mut |_, _| {})?;
    res.selected_ranks = ranks;
    Ok(res)
}
