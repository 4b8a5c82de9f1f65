//! Second-moment summaries of a panel. With regressor blocks
//! `Z_t = [Y_{t−1}, WY_{t−1}, …, Y_{t−L}, WY_{t−L}]` (`N × 2LD`), the loss,
//! block gradients, RRR inputs and the β normal equations are all functions
//! of `Σ Z_tᵀZ_t`, `Σ Y_tᵀZ_t` and `Σ ‖Y_t‖²`, so iterating costs nothing in
//! `N` or `T` once these are accumulated.

use crate::error::Result;
use crate::graph::WeightMatrix;
use crate::linalg::{frob_inner, Mat};
use crate::model::{PanelSeries, ParamSet};

const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub d: usize,
    pub lags: usize,
    /// Effective sample count.
    pub t: usize,
    /// `Σ Z_tᵀ Z_t`, `2LD × 2LD`.
    pub gram: Mat,
    /// `Σ Y_tᵀ Z_t`, `D × 2LD`.
    pub cross: Mat,
    /// `Σ ‖Y_t‖_F²`.
    pub yy: f64,
}

/// Per-lag gradient pieces from the moment path.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGrad {
    pub g_beta_a: f64,
    pub g_beta_n: f64,
    pub g_bvar: Mat,
}

impl Moments {
    pub fn from_panel(panel: &PanelSeries, w: &WeightMatrix, lags: usize) -> Result<Self> {
        panel.require_len(lags)?;
        let (n, d) = (panel.n(), panel.d());
        let p = 2 * lags * d;
        let wy: Vec<Mat> = panel.slices().iter().map(|y| w.entries() * y).collect();
        let t_eff = panel.len() - lags;
        let per_chunk = (CHUNK_ROWS / n).max(1);
        let mut gram = Mat::zeros(p, p);
        let mut cross = Mat::zeros(d, p);
        let mut yy = 0.0;
        let mut start = lags;
        while start < panel.len() {
            let end = (start + per_chunk).min(panel.len());
            let rows = (end - start) * n;
            let mut z = Mat::zeros(rows, p);
            let mut yc = Mat::zeros(rows, d);
            for (c, t) in (start..end).enumerate() {
                let y = panel.get(t);
                yy += y.norm_squared();
                yc.view_mut((c * n, 0), (n, d)).copy_from(y);
                for l in 0..lags {
                    let prev = t - 1 - l;
                    z.view_mut((c * n, 2 * l * d), (n, d)).copy_from(panel.get(prev));
                    z.view_mut((c * n, (2 * l + 1) * d), (n, d)).copy_from(&wy[prev]);
                }
            }
            gram.gemm_tr(1.0, &z, &z, 1.0);
            cross.gemm_tr(1.0, &yc, &z, 1.0);
            start = end;
        }
        gram = (&gram + gram.transpose()) * 0.5;
        Ok(Self { n, d, lags, t: t_eff, gram, cross, yy })
    }

    /// Largest eigenvalue of the regressor Gram per observed row,
    /// `λ_max(Σ_t Z_tᵀZ_t) / (T·N)`: the stiffest curvature of the loss per
    /// unit of parameter scale. Zero for an all-zero panel.
    pub fn regressor_scale(&self) -> f64 {
        let (vals, _) = crate::linalg::sym_eigen_desc(&self.gram);
        vals.first().copied().unwrap_or(0.0).max(0.0) / (self.t * self.n) as f64
    }

    /// Loss of the all-zero model.
    pub fn loss_zero(&self) -> f64 {
        self.yy / (2.0 * self.t as f64)
    }

    fn block(&self, m: &Mat, k: usize) -> Mat {
        m.columns(k * self.d, self.d).into_owned()
    }

    fn gram_block(&self, j: usize, k: usize) -> Mat {
        self.gram.view((j * self.d, k * self.d), (self.d, self.d)).into_owned()
    }

    /// `C = [β_A,1 B_1, β_N,1 B_1, …]`, so that the fit is `Z_t Cᵀ`.
    fn coef(&self, params: &ParamSet, skip: Option<usize>) -> Mat {
        let d = self.d;
        let mut c = Mat::zeros(d, 2 * self.lags * d);
        for (l, p) in params.lags.iter().enumerate() {
            if Some(l) == skip {
                continue;
            }
            let b = p.b_var();
            c.columns_mut(2 * l * d, d).copy_from(&(&b * p.beta_a));
            c.columns_mut((2 * l + 1) * d, d).copy_from(&(&b * p.beta_n));
        }
        c
    }

    /// Loss and per-lag gradients in one pass. `H = Σ R_tᵀ Z_t = cross − C·gram`.
    pub fn loss_grad(&self, params: &ParamSet) -> (f64, Vec<MomentGrad>) {
        let c = self.coef(params, None);
        let h = &self.cross - &c * &self.gram;
        let t = self.t as f64;
        let loss = (self.yy - frob_inner(&c, &self.cross) - frob_inner(&c, &h)) / (2.0 * t);
        let grads = params
            .lags
            .iter()
            .enumerate()
            .map(|(l, p)| {
                let b = p.b_var();
                let h0 = self.block(&h, 2 * l);
                let h1 = self.block(&h, 2 * l + 1);
                MomentGrad {
                    g_beta_a: -frob_inner(&h0, &b) / t,
                    g_beta_n: -frob_inner(&h1, &b) / t,
                    g_bvar: -(h0 * p.beta_a + h1 * p.beta_n) / t,
                }
            })
            .collect();
        (loss.max(0.0), grads)
    }

    pub fn loss(&self, params: &ParamSet) -> f64 {
        let c = self.coef(params, None);
        let h = &self.cross - &c * &self.gram;
        ((self.yy - frob_inner(&c, &self.cross) - frob_inner(&c, &h)) / (2.0 * self.t as f64)).max(0.0)
    }

    /// `(S_yx, S_xx)` for lag `l` with predictors `X_t = B_net,l Y_{t−l}` and
    /// responses net of every other lag's current fit.
    pub fn rrr_inputs(&self, params: &ParamSet, l: usize) -> (Mat, Mat) {
        let d = self.d;
        let p = &params.lags[l];
        let mut sel = Mat::zeros(2 * self.lags * d, d);
        sel.view_mut((2 * l * d, 0), (d, d)).fill_diagonal(p.beta_a);
        sel.view_mut(((2 * l + 1) * d, 0), (d, d)).fill_diagonal(p.beta_n);
        let c_other = self.coef(params, Some(l));
        let syx = (&self.cross - c_other * &self.gram) * &sel;
        let sxx = sel.transpose() * &self.gram * &sel;
        (syx, (&sxx + sxx.transpose()) * 0.5)
    }

    /// Normal equations for `(β_A,1, β_N,1, …)` given every `B_var,ℓ`.
    pub fn beta_system(&self, b_vars: &[Mat]) -> (Mat, Vec<f64>) {
        let k = 2 * self.lags;
        let mut g = Mat::zeros(k, k);
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            let bi = &b_vars[i / 2];
            rhs[i] = frob_inner(&self.block(&self.cross, i), bi);
            for j in i..k {
                let bj = &b_vars[j / 2];
                let v = (bi * self.gram_block(i, j) * bj.transpose()).trace();
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        (g, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_k_regular_cycle, row_normalize};
    use crate::model::LagParams;
    use crate::objective::{grad_blocks_panel, panel_loss};
    use crate::rng::{rng_from_seed, standard_normal_matrix};

    #[test]
    fn moments_reproduce_slice_loss_and_gradients() {
        let mut rng = rng_from_seed(9);
        let (n, d) = (7, 4);
        let w = row_normalize(&build_k_regular_cycle(n, 3).unwrap());
        // long enough that chunking splits the sum
        let panel = PanelSeries::new((0..1300).map(|_| standard_normal_matrix(&mut rng, n, d)).collect()).unwrap();
        for ranks in [vec![2], vec![1, 3]] {
            let lags: Vec<LagParams> = ranks
                .iter()
                .map(|&r| {
                    LagParams::new(0.3, -0.2, standard_normal_matrix(&mut rng, d, r), standard_normal_matrix(&mut rng, d, r))
                        .unwrap()
                })
                .collect();
            let params = ParamSet::new(n, d, lags).unwrap();
            let m = Moments::from_panel(&panel, &w, ranks.len()).unwrap();
            let (l, g) = m.loss_grad(&params);
            let l0 = panel_loss(&params, &w, &panel).unwrap();
            assert!((l - l0).abs() < 1e-10 * l0);
            let g0 = grad_blocks_panel(&params, &w, &panel).unwrap();
            for (a, b) in g.iter().zip(&g0.lags) {
                assert!((a.g_beta_a - b.g_beta_a).abs() < 1e-10 * (1.0 + b.g_beta_a.abs()));
                assert!((a.g_beta_n - b.g_beta_n).abs() < 1e-10 * (1.0 + b.g_beta_n.abs()));
                assert!((&a.g_bvar - &b.g_bvar).amax() < 1e-10 * (1.0 + b.g_bvar.amax()));
            }
        }
    }
}
