//! Least-squares loss and its gradients, evaluated slice by slice so the
//! `ND×ND` transition is never formed on the main path.

use crate::error::{Error, Result};
use crate::graph::WeightMatrix;
use crate::linalg::{frob_inner, frob_sq, mat_of, rearrange, Mat};
use crate::model::{PanelSeries, ParamSet};

/// Vectorized responses and stacked lagged regressors, columns in
/// increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedData {
    /// `ND×T`; column `t` is `vec(Y_{t+L})`.
    pub y: Mat,
    /// `(L·ND)×T`; block `ℓ` of column `t` is `vec(Y_{t+L−ℓ})`.
    pub x: Mat,
    pub n: usize,
    pub d: usize,
    pub lags: usize,
    /// Effective sample count `T_total − L`.
    pub t: usize,
    panel: PanelSeries,
}

impl StackedData {
    pub fn panel(&self) -> &PanelSeries {
        &self.panel
    }
}

pub fn stack_lag(panel: &PanelSeries, lags: usize) -> Result<StackedData> {
    if lags == 0 {
        return Err(Error::InvalidInput("lag order must be at least 1".into()));
    }
    panel.require_len(lags)?;
    let (n, d) = (panel.n(), panel.d());
    let nd = n * d;
    let t = panel.len() - lags;
    let mut y = Mat::zeros(nd, t);
    let mut x = Mat::zeros(lags * nd, t);
    for c in 0..t {
        y.column_mut(c).copy_from_slice(panel.get(c + lags).as_slice());
        for l in 1..=lags {
            x.view_mut(((l - 1) * nd, c), (nd, 1))
                .copy_from_slice(panel.get(c + lags - l).as_slice());
        }
    }
    Ok(StackedData { y, x, n, d, lags, t, panel: panel.clone() })
}

/// Per-lag block gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LagGradient {
    pub g_beta_a: f64,
    pub g_beta_n: f64,
    pub g_u: Mat,
    pub g_v: Mat,
    pub g_bnet: Mat,
    pub g_bvar: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub lags: Vec<LagGradient>,
}

fn check(params: &ParamSet, w: &WeightMatrix, data: &StackedData) -> Result<()> {
    if params.num_lags() != data.lags {
        return Err(Error::Shape(format!(
            "parameters have {} lag(s), data is stacked for {}",
            params.num_lags(),
            data.lags
        )));
    }
    params.check_against(w, &data.panel)
}

/// `W Y_t` for every observation.
pub(crate) fn network_lags(w: &WeightMatrix, panel: &PanelSeries) -> Vec<Mat> {
    panel.slices().iter().map(|y| w.entries() * y).collect()
}

/// Residuals `R_t = Y_t − Σ_ℓ B_net,ℓ Y_{t−ℓ} B_var,ℓᵀ` for `t = L..T_total`,
/// together with the cached `W Y_t`.
pub(crate) fn residuals(params: &ParamSet, w: &WeightMatrix, panel: &PanelSeries) -> (Vec<Mat>, Vec<Mat>) {
    let wy = network_lags(w, panel);
    let lags = params.num_lags();
    let res = (lags..panel.len())
        .map(|t| {
            let mut r = panel.get(t).clone();
            for (l, p) in params.lags.iter().enumerate() {
                let prev = t - 1 - l;
                let x = panel.get(prev) * p.beta_a + &wy[prev] * p.beta_n;
                r -= (x * &p.v) * p.u.transpose();
            }
            r
        })
        .collect();
    (res, wy)
}

/// `(1/2T) Σ_t ‖R_t‖_F²` directly on a panel.
pub fn panel_loss(params: &ParamSet, w: &WeightMatrix, panel: &PanelSeries) -> Result<f64> {
    panel.require_len(params.num_lags())?;
    params.check_against(w, panel)?;
    let (res, _) = residuals(params, w, panel);
    let t = res.len() as f64;
    Ok(res.iter().map(frob_sq).sum::<f64>() / (2.0 * t))
}

/// `(1/2T)‖Y − A X‖_F²` with `A_ℓ = B_var,ℓ ⊗ B_net,ℓ`, evaluated per slice.
pub fn loss(params: &ParamSet, w: &WeightMatrix, data: &StackedData) -> Result<f64> {
    check(params, w, data)?;
    panel_loss(params, w, &data.panel)
}

/// Concatenated `A = [A_1 … A_L]` (`ND×L·ND`).
fn explicit_a(params: &ParamSet, w: &WeightMatrix) -> Mat {
    let blocks = params.transition_blocks(w);
    let nd = params.n * params.d;
    let mut a = Mat::zeros(nd, nd * blocks.len());
    for (l, b) in blocks.iter().enumerate() {
        a.view_mut((0, l * nd), (nd, nd)).copy_from(b);
    }
    a
}

/// Same loss through the explicit Kronecker transition; for cross-checks on
/// small problems.
pub fn loss_explicit(params: &ParamSet, w: &WeightMatrix, data: &StackedData) -> Result<f64> {
    check(params, w, data)?;
    let r = &data.y - explicit_a(params, w) * &data.x;
    Ok(frob_sq(&r) / (2.0 * data.t as f64))
}

/// `∇_A L = −(1/T)(Y − A X) Xᵀ`, shape `ND×(L·ND)`.
pub fn grad_a(params: &ParamSet, w: &WeightMatrix, data: &StackedData) -> Result<Mat> {
    check(params, w, data)?;
    let r = &data.y - explicit_a(params, w) * &data.x;
    Ok(-(r * data.x.transpose()) / data.t as f64)
}

fn finish_lag(p: &crate::model::LagParams, w: &WeightMatrix, g_bnet: Mat, g_bvar: Mat) -> LagGradient {
    LagGradient {
        g_beta_a: g_bnet.trace(),
        g_beta_n: frob_inner(w.entries(), &g_bnet),
        g_u: &g_bvar * &p.v,
        g_v: g_bvar.transpose() * &p.u,
        g_bnet,
        g_bvar,
    }
}

/// Block gradients from residual contractions:
/// `g_bvar = −(1/T) Σ R_tᵀ B_net Y_{t−ℓ}`, `g_bnet = −(1/T) Σ R_t B_var Y_{t−ℓ}ᵀ`.
pub fn grad_blocks(params: &ParamSet, w: &WeightMatrix, data: &StackedData) -> Result<GradientSet> {
    check(params, w, data)?;
    grad_blocks_panel(params, w, &data.panel)
}

pub fn grad_blocks_panel(params: &ParamSet, w: &WeightMatrix, panel: &PanelSeries) -> Result<GradientSet> {
    panel.require_len(params.num_lags())?;
    params.check_against(w, panel)?;
    let (res, wy) = residuals(params, w, panel);
    let lags = params.num_lags();
    let scale = -1.0 / res.len() as f64;
    let (n, d) = (params.n, params.d);
    let out = params
        .lags
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let b_var = p.b_var();
            let mut g_bnet = Mat::zeros(n, n);
            let mut g_bvar = Mat::zeros(d, d);
            for (i, r) in res.iter().enumerate() {
                let prev = i + lags - 1 - l;
                let y = panel.get(prev);
                let x = y * p.beta_a + &wy[prev] * p.beta_n;
                g_bvar.gemm_tr(scale, r, &x, 1.0);
                g_bnet.gemm(scale, &(r * &b_var), &y.transpose(), 1.0);
            }
            finish_lag(p, w, g_bnet, g_bvar)
        })
        .collect();
    Ok(GradientSet { lags: out })
}

/// Block gradients through the rearrangement operator applied to `∇_{A_ℓ}`.
/// Quadratic in `ND` memory; used to validate [`grad_blocks`].
pub fn grad_blocks_rearranged(params: &ParamSet, w: &WeightMatrix, data: &StackedData) -> Result<GradientSet> {
    let ga = grad_a(params, w, data)?;
    let (n, d) = (params.n, params.d);
    let nd = n * d;
    let mut out = Vec::with_capacity(params.num_lags());
    for (l, p) in params.lags.iter().enumerate() {
        let pg = rearrange(&ga.columns(l * nd, nd).into_owned(), n, d)?;
        let vec_bvar = crate::linalg::vec_of(&p.b_var());
        let vec_bnet = crate::linalg::vec_of(&p.b_net(w));
        let g_bnet = mat_of((pg.transpose() * vec_bvar).as_slice(), n, n);
        let g_bvar = mat_of((&pg * vec_bnet).as_slice(), d, d);
        out.push(finish_lag(p, w, g_bnet, g_bvar));
    }
    Ok(GradientSet { lags: out })
}

/// `A_ℓ` blocks for the concatenated transition; exposed for evaluation.
pub fn transition(params: &ParamSet, w: &WeightMatrix) -> Mat {
    explicit_a(params, w)
}
