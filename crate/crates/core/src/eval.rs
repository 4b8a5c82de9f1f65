//! Error metrics aligned to the identification conventions, one-step
//! forecasting, rolling evaluation, and baseline estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, rrr_from_moments, FitConfig};
use crate::graph::WeightMatrix;
use crate::linalg::{frob_inner, frob_sq, rearrange, solve_normal, sorted_svd, spd_condition, spd_inverse, Mat};
use crate::model::{LagParams, PanelSeries, ParamSet};

/// Equivalence-aligned errors, one entry per lag where per-lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedError {
    /// Weighted factor distance at the canonical alignment; an upper
    /// bound on the infimum over the equivalence class.
    pub dist_upper: f64,
    pub kron_err: f64,
    pub beta_a_err: Vec<f64>,
    pub beta_n_err: Vec<f64>,
    pub proj_u_err: Vec<f64>,
    pub proj_v_err: Vec<f64>,
}

fn same_shape(fit: &ParamSet, truth: &ParamSet, w: &WeightMatrix) -> Result<()> {
    if fit.n != truth.n || fit.d != truth.d || fit.num_lags() != truth.num_lags() || w.n() != fit.n {
        return Err(Error::Shape(format!(
            "fit is (N={}, D={}, L={}), truth is (N={}, D={}, L={}), W has N={}",
            fit.n,
            fit.d,
            fit.num_lags(),
            truth.n,
            truth.d,
            truth.num_lags(),
            w.n()
        )));
    }
    Ok(())
}

/// `⟨β_A I + β_N W, γ_A I + γ_N W⟩`.
fn bnet_inner(a: (f64, f64), b: (f64, f64), w: &WeightMatrix) -> f64 {
    a.0 * b.0 * w.n() as f64 + (a.0 * b.1 + a.1 * b.0) * w.trace() + a.1 * b.1 * w.frob_sq()
}

/// `‖B̂_var⊗B̂_net − B*_var⊗B*_net‖_F` summed in quadrature over lags,
/// without forming any `ND×ND` product.
pub fn kron_error(fit: &ParamSet, truth: &ParamSet, w: &WeightMatrix) -> Result<f64> {
    same_shape(fit, truth, w)?;
    let mut total = 0.0;
    for (f, t) in fit.lags.iter().zip(&truth.lags) {
        // put both in balanced scale so the difference terms are small when
        // the products are close; the products themselves are unchanged
        let balance = |p: &LagParams| -> ((f64, f64), Mat) {
            let nk = p.bnet_frob_sq(w).sqrt();
            let nm = p.bvar_frob_sq().sqrt();
            if nk > 0.0 && nm > 0.0 {
                let c = (nk / nm).sqrt();
                ((p.beta_a / c, p.beta_n / c), p.b_var() * c)
            } else {
                ((0.0, 0.0), Mat::zeros(p.d(), p.d()))
            }
        };
        let (mut kf, mut mf) = balance(f);
        let (kt, mt) = balance(t);
        if bnet_inner(kf, kt, w) < 0.0 {
            kf = (-kf.0, -kf.1);
            mf = -mf;
        }
        let dm = &mf - &mt;
        let dk = (kf.0 - kt.0, kf.1 - kt.1);
        let v = frob_sq(&dm) * bnet_inner(kf, kf, w)
            + 2.0 * frob_inner(&dm, &mt) * bnet_inner(kf, dk, w)
            + frob_sq(&mt) * bnet_inner(dk, dk, w);
        total += v.max(0.0);
    }
    Ok(total.sqrt())
}

/// `‖P_{M₁} − P_{M₂}‖_F` for full-column-rank inputs.
pub fn projector_dist(m1: &Mat, m2: &Mat) -> Result<f64> {
    Ok((projector(m1)? - projector(m2)?).norm())
}

fn projector(m: &Mat) -> Result<Mat> {
    let g = m.transpose() * m;
    if spd_condition(&g) > 1e24 {
        return Err(Error::DegenerateFactors("projector of a rank-deficient factor".into()));
    }
    let gi = spd_inverse(&g).ok_or_else(|| Error::DegenerateFactors("projector of a rank-deficient factor".into()))?;
    Ok(m * gi * m.transpose())
}

/// Canonical alignment of `fit` to `truth` and the weighted distance there.
pub fn dist_upper(fit: &ParamSet, truth: &ParamSet, w: &WeightMatrix) -> Result<AlignedError> {
    same_shape(fit, truth, w)?;
    if fit.ranks() != truth.ranks() {
        return Err(Error::RankMismatch(format!("fit ranks {:?} vs truth ranks {:?}", fit.ranks(), truth.ranks())));
    }
    let n = w.n() as f64;
    let wf = w.frob_sq();
    let mut dist2 = 0.0;
    let mut out = AlignedError {
        dist_upper: 0.0,
        kron_err: kron_error(fit, truth, w)?,
        beta_a_err: vec![],
        beta_n_err: vec![],
        proj_u_err: vec![],
        proj_v_err: vec![],
    };
    for (f, t) in fit.lags.iter().zip(&truth.lags) {
        let sign = if t.beta_a >= 0.0 { 1.0 } else { -1.0 };
        let ts = t.balanced(w, sign);
        let fs = f.balanced(w, sign);
        let r = ts.rank();
        let (_, sigma, _) = sorted_svd(&ts.b_var());
        let root = Mat::from_diagonal(&nalgebra::DVector::from_iterator(r, sigma[..r].iter().map(|s| s.sqrt())));
        let bvar2 = ts.bvar_frob_sq();
        let bnet2 = ts.bnet_frob_sq(w);
        let gu = fs.u.transpose() * &fs.u;
        let gi = spd_inverse(&gu).ok_or_else(|| Error::DegenerateFactors("fitted U is rank deficient".into()))?;
        let q = gi * fs.u.transpose() * &ts.u;
        let q_inv_t = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateFactors("alignment rotation is singular".into()))?
            .transpose();
        let u1 = &fs.u * &q;
        let v1 = &fs.v * q_inv_t;
        let da = (fs.beta_a - ts.beta_a).powi(2);
        let dn = (fs.beta_n - ts.beta_n).powi(2);
        dist2 += da * n * bvar2
            + dn * wf * bvar2
            + frob_sq(&((&u1 - &ts.u) * &root)) * bnet2
            + frob_sq(&((&v1 - &ts.v) * &root)) * bnet2;
        out.beta_a_err.push(da);
        out.beta_n_err.push(dn);
        out.proj_u_err.push(projector_dist(&fs.u, &ts.u)?);
        out.proj_v_err.push(projector_dist(&fs.v, &ts.v)?);
    }
    out.dist_upper = dist2.sqrt();
    Ok(out)
}

/// `Ŷ = Σ_ℓ B_net,ℓ Y_{t+1−ℓ} B_var,ℓᵀ` from the last `L` observations
/// (chronological order).
pub fn forecast(params: &ParamSet, w: &WeightMatrix, history: &[Mat]) -> Result<Mat> {
    let l = params.num_lags();
    if history.len() < l {
        return Err(Error::InsufficientData(format!("forecast needs {l} past observations, got {}", history.len())));
    }
    let mut y = Mat::zeros(params.n, params.d);
    for (i, p) in params.lags.iter().enumerate() {
        let prev = &history[history.len() - 1 - i];
        if prev.shape() != (params.n, params.d) {
            return Err(Error::Shape("history slice has the wrong shape".into()));
        }
        let x = prev * p.beta_a + w.entries() * prev * p.beta_n;
        y += (x * &p.v) * p.u.transpose();
    }
    Ok(y)
}

/// A fitted one-step-ahead predictor.
pub trait OneStepModel: Send + Sync {
    fn lags(&self) -> usize;
    /// `history` ends with the most recent observation.
    fn predict(&self, history: &[Mat]) -> Result<Mat>;
}

/// An estimation procedure usable in rolling evaluation.
pub trait Fitter: Sync {
    fn name(&self) -> String;
    fn fit(&self, train: &PanelSeries) -> Result<Box<dyn OneStepModel>>;
}

pub struct RrnarModel {
    pub params: ParamSet,
    pub weight: WeightMatrix,
}

impl OneStepModel for RrnarModel {
    fn lags(&self) -> usize {
        self.params.num_lags()
    }
    fn predict(&self, history: &[Mat]) -> Result<Mat> {
        forecast(&self.params, &self.weight, history)
    }
}

pub struct RrnarFitter {
    pub weight: WeightMatrix,
    pub config: FitConfig,
}

impl Fitter for RrnarFitter {
    fn name(&self) -> String {
        "RRNAR".into()
    }
    fn fit(&self, train: &PanelSeries) -> Result<Box<dyn OneStepModel>> {
        let res = estimator::fit(train, &self.weight, &self.config)?;
        Ok(Box::new(RrnarModel { params: res.params, weight: self.weight.clone() }))
    }
}

/// Always predicts the stored parameters (e.g. the truth).
pub struct FixedFitter {
    pub params: ParamSet,
    pub weight: WeightMatrix,
}

impl Fitter for FixedFitter {
    fn name(&self) -> String {
        "fixed".into()
    }
    fn fit(&self, _: &PanelSeries) -> Result<Box<dyn OneStepModel>> {
        Ok(Box::new(RrnarModel { params: self.params.clone(), weight: self.weight.clone() }))
    }
}

struct ZeroModel;

impl OneStepModel for ZeroModel {
    fn lags(&self) -> usize {
        1
    }
    fn predict(&self, history: &[Mat]) -> Result<Mat> {
        let last = history.last().ok_or_else(|| Error::InsufficientData("empty history".into()))?;
        Ok(Mat::zeros(last.nrows(), last.ncols()))
    }
}

pub struct ZeroFitter;

impl Fitter for ZeroFitter {
    fn name(&self) -> String {
        "zero".into()
    }
    fn fit(&self, _: &PanelSeries) -> Result<Box<dyn OneStepModel>> {
        Ok(Box::new(ZeroModel))
    }
}

/// Per-variable NAR: for each column `d`, pooled OLS of `y_{·,d,t}` on
/// `[y_{·,d,t−1}, W y_{·,d,t−1}]`.
pub fn fit_nar(panel: &PanelSeries, w: &WeightMatrix) -> Result<Vec<(f64, f64)>> {
    panel.require_len(1)?;
    if w.n() != panel.n() {
        return Err(Error::Shape("W does not match the panel's node count".into()));
    }
    let d = panel.d();
    let mut g = vec![Mat::zeros(2, 2); d];
    let mut b = vec![Mat::zeros(2, 1); d];
    for t in 1..panel.len() {
        let prev = panel.get(t - 1);
        let wprev = w.entries() * prev;
        let cur = panel.get(t);
        for j in 0..d {
            let (x0, x1, y) = (prev.column(j), wprev.column(j), cur.column(j));
            g[j][(0, 0)] += x0.dot(&x0);
            g[j][(0, 1)] += x0.dot(&x1);
            g[j][(1, 1)] += x1.dot(&x1);
            b[j][(0, 0)] += x0.dot(&y);
            b[j][(1, 0)] += x1.dot(&y);
        }
    }
    (0..d)
        .map(|j| {
            g[j][(1, 0)] = g[j][(0, 1)];
            let s = solve_normal(&g[j], &b[j], 1e12, true)
                .map_err(|c| Error::CollinearDesign(format!("NAR design for variable {j}, condition {c:.3e}")))?;
            Ok((s[(0, 0)], s[(1, 0)]))
        })
        .collect()
}

pub struct NarModel {
    pub coefs: Vec<(f64, f64)>,
    pub weight: WeightMatrix,
}

impl OneStepModel for NarModel {
    fn lags(&self) -> usize {
        1
    }
    fn predict(&self, history: &[Mat]) -> Result<Mat> {
        let y = history.last().ok_or_else(|| Error::InsufficientData("empty history".into()))?;
        let wy = self.weight.entries() * y;
        let mut out = Mat::zeros(y.nrows(), y.ncols());
        for (j, &(a, b)) in self.coefs.iter().enumerate() {
            out.set_column(j, &(y.column(j) * a + wy.column(j) * b));
        }
        Ok(out)
    }
}

pub struct NarFitter {
    pub weight: WeightMatrix,
}

impl Fitter for NarFitter {
    fn name(&self) -> String {
        "NAR".into()
    }
    fn fit(&self, train: &PanelSeries) -> Result<Box<dyn OneStepModel>> {
        Ok(Box::new(NarModel { coefs: fit_nar(train, &self.weight)?, weight: self.weight.clone() }))
    }
}

/// Reduced-rank VAR(1) on `vec(Y_t)`; returns the `ND×ND` coefficient.
pub fn fit_rrvar(panel: &PanelSeries, rank: usize) -> Result<Mat> {
    panel.require_len(1)?;
    let nd = panel.n() * panel.d();
    if rank == 0 || rank > nd {
        return Err(Error::RankMismatch(format!("RRVAR rank {rank} outside 1..={nd}")));
    }
    let t = panel.len() - 1;
    let mut x = Mat::zeros(nd, t);
    let mut y = Mat::zeros(nd, t);
    for c in 0..t {
        x.column_mut(c).copy_from_slice(panel.get(c).as_slice());
        y.column_mut(c).copy_from_slice(panel.get(c + 1).as_slice());
    }
    let syx = &y * x.transpose();
    let sxx = &x * x.transpose();
    // short panels leave S_xx rank deficient; the ridge alone regularizes it
    rrr_from_moments(&syx, &sxx, rank, f64::INFINITY)
}

pub struct VarModel {
    pub coef: Mat,
}

impl OneStepModel for VarModel {
    fn lags(&self) -> usize {
        1
    }
    fn predict(&self, history: &[Mat]) -> Result<Mat> {
        let y = history.last().ok_or_else(|| Error::InsufficientData("empty history".into()))?;
        let v = &self.coef * crate::linalg::vec_of(y);
        Ok(crate::linalg::mat_of(v.as_slice(), y.nrows(), y.ncols()))
    }
}

pub struct RrvarFitter {
    pub rank: usize,
}

impl Fitter for RrvarFitter {
    fn name(&self) -> String {
        "RRVAR".into()
    }
    fn fit(&self, train: &PanelSeries) -> Result<Box<dyn OneStepModel>> {
        Ok(Box::new(VarModel { coef: fit_rrvar(train, self.rank)? }))
    }
}

/// Bilinear `Y_t = A Y_{t−1} Bᵀ` by alternating least squares from `A = I`;
/// normalized to `‖A‖_F = ‖B‖_F` with the largest-magnitude diagonal entry
/// of `A` positive.
/// Largest `N·D` for which the unrestricted VAR start is attempted.
const MAR_PROJECTION_LIMIT: usize = 400;

/// Unrestricted VAR(1) least squares projected onto the nearest Kronecker
/// product `B ⊗ A`. `None` when too large or under-determined.
fn mar_projection_start(panel: &PanelSeries) -> Option<(Mat, Mat)> {
    let (n, d) = (panel.n(), panel.d());
    let nd = n * d;
    if nd > MAR_PROJECTION_LIMIT || panel.len() <= nd {
        return None;
    }
    let ys = panel.slices();
    let mut sxx = Mat::zeros(nd, nd);
    let mut sxy = Mat::zeros(nd, nd);
    for t in 1..ys.len() {
        let x = Mat::from_column_slice(nd, 1, ys[t - 1].as_slice());
        let y = Mat::from_column_slice(nd, 1, ys[t].as_slice());
        sxx.gemm(1.0, &x, &x.transpose(), 1.0);
        sxy.gemm(1.0, &x, &y.transpose(), 1.0);
    }
    let phi = solve_normal(&sxx, &sxy, 1e12, false).ok()?.transpose();
    let (l, s, r) = sorted_svd(&rearrange(&phi, n, d).ok()?);
    if !(s[0] > 0.0) {
        return None;
    }
    let root = s[0].sqrt();
    let b = Mat::from_column_slice(d, d, (l.column(0) * root).as_slice());
    let a = Mat::from_column_slice(n, n, (r.column(0) * root).as_slice());
    Some((a, b))
}

pub fn fit_mar(panel: &PanelSeries, iters: usize) -> Result<(Mat, Mat)> {
    panel.require_len(1)?;
    if iters == 0 {
        return Err(Error::InvalidInput("MAR needs at least one sweep".into()));
    }
    let (n, d) = (panel.n(), panel.d());
    let ys = panel.slices();
    let (mut a, mut b) = mar_projection_start(panel).unwrap_or_else(|| (Mat::identity(n, n), Mat::identity(d, d)));
    let degenerate = |c: f64| Error::DegenerateFactors(format!("MAR least squares, condition {c:.3e}"));
    for _ in 0..iters {
        // B given A: Y_t ≈ (A Y_{t−1}) Bᵀ
        let mut g = Mat::zeros(d, d);
        let mut r = Mat::zeros(d, d);
        for t in 1..ys.len() {
            let x = &a * &ys[t - 1];
            g.gemm_tr(1.0, &x, &x, 1.0);
            r.gemm_tr(1.0, &x, &ys[t], 1.0);
        }
        b = solve_normal(&g, &r, 1e14, true).map_err(degenerate)?.transpose();
        // A given B: Y_t ≈ A (Y_{t−1} Bᵀ)
        let mut g = Mat::zeros(n, n);
        let mut r = Mat::zeros(n, n);
        for t in 1..ys.len() {
            let x = &ys[t - 1] * b.transpose();
            g.gemm(1.0, &x, &x.transpose(), 1.0);
            r.gemm(1.0, &x, &ys[t].transpose(), 1.0);
        }
        a = solve_normal(&g, &r, 1e14, true).map_err(degenerate)?.transpose();
    }
    let (na, nb) = (a.norm(), b.norm());
    if na > 0.0 && nb > 0.0 {
        let s = (na / nb).sqrt();
        a /= s;
        b *= s;
    }
    let k = (0..n).max_by(|&i, &j| a[(i, i)].abs().total_cmp(&a[(j, j)].abs())).unwrap_or(0);
    if a[(k, k)] < 0.0 {
        a = -a;
        b = -b;
    }
    Ok((a, b))
}

pub struct MarModel {
    pub a: Mat,
    pub b: Mat,
}

impl OneStepModel for MarModel {
    fn lags(&self) -> usize {
        1
    }
    fn predict(&self, history: &[Mat]) -> Result<Mat> {
        let y = history.last().ok_or_else(|| Error::InsufficientData("empty history".into()))?;
        Ok(&self.a * y * self.b.transpose())
    }
}

pub struct MarFitter {
    pub iters: usize,
}

impl Fitter for MarFitter {
    fn name(&self) -> String {
        "MAR".into()
    }
    fn fit(&self, train: &PanelSeries) -> Result<Box<dyn OneStepModel>> {
        let (a, b) = fit_mar(train, self.iters)?;
        Ok(Box::new(MarModel { a, b }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub model: String,
    /// Original units squared, one per variable.
    pub per_variable_mse: Vec<f64>,
    /// Standardized by training-window mean and sd per variable.
    pub global_mse: f64,
    pub median_se: f64,
    pub horizon: usize,
    pub n_forecasts: usize,
}

/// One-step-ahead forecasts over `t = ⌊train_frac·T⌋ .. T`, refitting on
/// the expanding window every `refit_every` steps (`None`: fit once).
pub fn rolling_eval(
    fitter: &dyn Fitter,
    panel: &PanelSeries,
    train_frac: f64,
    refit_every: Option<usize>,
) -> Result<ForecastReport> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidInput(format!("train_frac must lie in (0, 1), got {train_frac}")));
    }
    if refit_every == Some(0) {
        return Err(Error::InvalidInput("refit_every must be positive".into()));
    }
    let total = panel.len();
    let n_train = (train_frac * total as f64).floor() as usize;
    if n_train == 0 || n_train >= total {
        return Err(Error::InsufficientData(format!("empty training or test window (T={total}, train_frac={train_frac})")));
    }
    let (n, d) = (panel.n(), panel.d());
    // training-window moments per variable
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    let cnt = (n_train * n) as f64;
    for y in &panel.slices()[..n_train] {
        for j in 0..d {
            mean[j] += y.column(j).sum() / cnt;
        }
    }
    for y in &panel.slices()[..n_train] {
        for j in 0..d {
            sd[j] += y.column(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / cnt;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();

    let mut model = fitter.fit(&panel.window(0..n_train)?)?;
    let mut sq = vec![0.0; d];
    let mut z2 = Vec::with_capacity((total - n_train) * n * d);
    for t in n_train..total {
        if let Some(k) = refit_every {
            if t > n_train && (t - n_train) % k == 0 {
                model = fitter.fit(&panel.window(0..t)?)?;
            }
        }
        let l = model.lags();
        if t < l {
            return Err(Error::InsufficientData(format!("forecast at t={t} needs {l} past observations")));
        }
        let pred = model.predict(&panel.slices()[t - l..t])?;
        let err = panel.get(t) - pred;
        for j in 0..d {
            for i in 0..n {
                let e = err[(i, j)];
                sq[j] += e * e;
                z2.push((e / sd[j]).powi(2));
            }
        }
    }
    let nf = total - n_train;
    let per_variable_mse = sq.iter().map(|s| s / (nf * n) as f64).collect();
    let global_mse = z2.iter().sum::<f64>() / z2.len() as f64;
    z2.sort_by(f64::total_cmp);
    let m = z2.len();
    let median_se = if m % 2 == 1 { z2[m / 2] } else { 0.5 * (z2[m / 2 - 1] + z2[m / 2]) };
    Ok(ForecastReport { model: fitter.name(), per_variable_mse, global_mse, median_se, horizon: 1, n_forecasts: nf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_params, simulate, DgpConfig};
    use crate::graph::{build_k_regular_cycle, row_normalize};
    use crate::linalg::kron;
    use crate::model::ModelDims;
    use crate::rng::{rng_from_seed, standard_normal_matrix};
    use rand::Rng as _;

    fn random_params(rng: &mut crate::rng::Rng, n: usize, d: usize, r: usize) -> ParamSet {
        ParamSet::new(
            n,
            d,
            vec![LagParams::new(
                rng.random_range(0.1..0.9),
                rng.random_range(-0.5..0.5),
                standard_normal_matrix(rng, d, r),
                standard_normal_matrix(rng, d, r),
            )
            .unwrap()],
        )
        .unwrap()
    }

    fn w(n: usize) -> WeightMatrix {
        row_normalize(&build_k_regular_cycle(n, 2).unwrap())
    }

    #[test]
    fn kron_error_matches_explicit_and_is_scale_invariant() {
        let mut rng = rng_from_seed(1);
        let wm = w(4);
        let a = random_params(&mut rng, 4, 3, 2);
        let b = random_params(&mut rng, 4, 3, 2);
        let ka = kron(&a.lags[0].b_var(), &a.lags[0].b_net(&wm));
        let kb = kron(&b.lags[0].b_var(), &b.lags[0].b_net(&wm));
        let want = (ka - kb).norm();
        let got = kron_error(&a, &b, &wm).unwrap();
        assert!((got - want).abs() <= 1e-12 * want);
        assert_eq!(kron_error(&a, &a, &wm).unwrap(), 0.0);
        let q = Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let moved = ParamSet::new(4, 3, vec![a.lags[0].transformed(3.0, -0.5, &q).unwrap()]).unwrap();
        assert!(kron_error(&moved, &a, &wm).unwrap() < 1e-12);
    }

    #[test]
    fn dist_upper_vanishes_on_equivalence_class() {
        let mut rng = rng_from_seed(2);
        let wm = w(5);
        let a = random_params(&mut rng, 5, 4, 2);
        assert!(dist_upper(&a, &a, &wm).unwrap().dist_upper < 1e-10);
        let q = Mat::from_row_slice(2, 2, &[0.5, 1.0, -1.0, 2.0]);
        let moved = ParamSet::new(5, 4, vec![a.lags[0].transformed(2.0, -3.0, &q).unwrap()]).unwrap();
        let e = dist_upper(&moved, &a, &wm).unwrap();
        assert!(e.dist_upper < 1e-8, "{e:?}");
        assert!(e.proj_u_err[0] < 1e-8 && e.beta_a_err[0] < 1e-8);
        let other = random_params(&mut rng, 5, 4, 1);
        assert!(matches!(dist_upper(&other, &a, &wm), Err(Error::RankMismatch(_))));
    }

    #[test]
    fn dist_upper_sandwiches_kron_error() {
        let mut rng = rng_from_seed(3);
        let wm = w(6);
        for _ in 0..200 {
            let t = random_params(&mut rng, 6, 4, 2);
            let mut f = t.clone();
            let eps = 10f64.powf(rng.random_range(-6.0..-2.0));
            f.lags[0].beta_a += eps * rng.random_range(-1.0..1.0);
            f.lags[0].beta_n += eps * rng.random_range(-1.0..1.0);
            f.lags[0].u += standard_normal_matrix(&mut rng, 4, 2) * eps;
            f.lags[0].v += standard_normal_matrix(&mut rng, 4, 2) * eps;
            let e = dist_upper(&f, &t, &wm).unwrap();
            let ratio = e.dist_upper / e.kron_err;
            assert!((0.05..=20.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn projector_examples() {
        let e1 = Mat::from_row_slice(2, 1, &[1.0, 0.0]);
        let e2 = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!((projector_dist(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let mut rng = rng_from_seed(4);
        let m = standard_normal_matrix(&mut rng, 5, 2);
        let q = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -1.0]);
        assert!(projector_dist(&m, &(&m * q)).unwrap() < 1e-10);
        let a = Mat::identity(6, 6).columns(0, 3).into_owned();
        let b = Mat::identity(6, 6).columns(3, 3).into_owned();
        assert!((projector_dist(&a, &b).unwrap() - 6f64.sqrt()).abs() < 1e-12);
        assert!(projector_dist(&Mat::zeros(3, 1), &e1.clone().insert_row(2, 0.0)).is_err());
    }

    #[test]
    fn forecast_examples() {
        let wm = w(4);
        let id = ParamSet::new(4, 3, vec![LagParams::new(1.0, 0.0, Mat::identity(3, 3), Mat::identity(3, 3)).unwrap()]).unwrap();
        let y = standard_normal_matrix(&mut rng_from_seed(5), 4, 3);
        assert_eq!(forecast(&id, &wm, std::slice::from_ref(&y)).unwrap(), y);
        let z = ParamSet::zeros(4, 3, &[2]);
        assert_eq!(forecast(&z, &wm, &[y]).unwrap(), Mat::zeros(4, 3));
        assert!(forecast(&z, &wm, &[]).is_err());
    }

    #[test]
    fn rolling_eval_examples() {
        let dims = ModelDims::new(6, 3, vec![2]).unwrap();
        let cfg = DgpConfig::new(dims, 99, 2, 0).noiseless();
        let mut rng = rng_from_seed(6);
        let m = sample_params(&cfg, &mut rng).unwrap();
        let panel = simulate(&m, &cfg, &mut rng).unwrap();
        assert_eq!(panel.len(), 100);
        let truth = FixedFitter { params: m.params.clone(), weight: m.weight.clone() };
        let r = rolling_eval(&truth, &panel, 0.8, None).unwrap();
        assert_eq!(r.n_forecasts, 20);
        assert!(r.per_variable_mse.iter().all(|&x| x < 1e-20) && r.global_mse < 1e-20);
        let r = rolling_eval(&truth, &panel, 0.8, Some(7)).unwrap();
        assert_eq!(r.n_forecasts, 20);
        assert!(rolling_eval(&truth, &panel, 1.0, None).is_err());

        let noise = PanelSeries::new((0..3000).map(|_| standard_normal_matrix(&mut rng, 2, 2)).collect()).unwrap();
        let r = rolling_eval(&ZeroFitter, &noise, 0.8, None).unwrap();
        assert!(r.n_forecasts >= 500);
        assert!((r.global_mse - 1.0).abs() < 0.1);
    }

    #[test]
    fn nar_matches_generic_least_squares() {
        let mut rng = rng_from_seed(7);
        let wm = w(5);
        let panel = PanelSeries::new((0..30).map(|_| standard_normal_matrix(&mut rng, 5, 2)).collect()).unwrap();
        let got = fit_nar(&panel, &wm).unwrap();
        for j in 0..2 {
            let rows = 29 * 5;
            let mut x = Mat::zeros(rows, 2);
            let mut y = Mat::zeros(rows, 1);
            for t in 1..30 {
                let prev = panel.get(t - 1).column(j).into_owned();
                let wp = wm.entries() * &prev;
                for i in 0..5 {
                    x[((t - 1) * 5 + i, 0)] = prev[i];
                    x[((t - 1) * 5 + i, 1)] = wp[i];
                    y[((t - 1) * 5 + i, 0)] = panel.get(t)[(i, j)];
                }
            }
            let sol = x.svd(true, true).solve(&y, 1e-14).unwrap();
            assert!((sol[0] - got[j].0).abs() < 1e-10 && (sol[1] - got[j].1).abs() < 1e-10);
        }
        let zero = PanelSeries::new(vec![Mat::zeros(5, 2); 10]).unwrap();
        assert_eq!(fit_nar(&zero, &wm).unwrap(), vec![(0.0, 0.0); 2]);
    }

    #[test]
    fn rrvar_full_rank_is_ols_and_dominates_random_candidates() {
        let mut rng = rng_from_seed(8);
        let panel = PanelSeries::new((0..60).map(|_| standard_normal_matrix(&mut rng, 3, 2)).collect()).unwrap();
        let full = fit_rrvar(&panel, 6).unwrap();
        let mut x = Mat::zeros(6, 59);
        let mut y = Mat::zeros(6, 59);
        for c in 0..59 {
            x.column_mut(c).copy_from_slice(panel.get(c).as_slice());
            y.column_mut(c).copy_from_slice(panel.get(c + 1).as_slice());
        }
        let ols = &y * x.transpose() * (&x * x.transpose()).try_inverse().unwrap();
        assert!((&full - ols).amax() < 1e-10);
        let rr = fit_rrvar(&panel, 2).unwrap();
        let resid = |a: &Mat| frob_sq(&(&y - a * &x));
        let best = resid(&rr);
        for _ in 0..200 {
            let c = standard_normal_matrix(&mut rng, 6, 2) * standard_normal_matrix(&mut rng, 2, 6);
            let s = frob_inner(&y, &(&c * &x)) / frob_sq(&(&c * &x));
            assert!(best <= resid(&(c * s)) + 1e-9);
        }
    }

    #[test]
    fn mar_recovers_noiseless_bilinear_dynamics() {
        // near-unitary dynamics keep every direction excited; strongly
        // decaying ones leave a numerically singular regressor Gram
        let mut rng = rng_from_seed(9);
        let (n, d) = (4, 3);
        let a = standard_normal_matrix(&mut rng, n, n).qr().q() * 0.99;
        let b = standard_normal_matrix(&mut rng, d, d).qr().q();
        let mut ys = vec![standard_normal_matrix(&mut rng, n, d)];
        for t in 1..80 {
            let next = &a * &ys[t - 1] * b.transpose();
            ys.push(next);
        }
        let panel = PanelSeries::new(ys).unwrap();
        let (ah, bh) = fit_mar(&panel, 20).unwrap();
        let res: f64 = (1..80).map(|t| frob_sq(&(panel.get(t) - &ah * panel.get(t - 1) * bh.transpose()))).sum();
        assert!(res < 1e-8, "residual {res}");
        assert!((ah.norm() - bh.norm()).abs() < 1e-10);
        // scalar case: A·B is the AR coefficient
        let s = PanelSeries::new((0..20).map(|t| Mat::from_element(1, 1, 0.7f64.powi(t))).collect()).unwrap();
        let (a1, b1) = fit_mar(&s, 3).unwrap();
        assert!((a1[(0, 0)] * b1[(0, 0)] - 0.7).abs() < 1e-10);
    }
}
