//! Data model: panels of node×variable observations and the per-lag
//! parameter tuples `(β_A, β_N, U, V)`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::WeightMatrix;
use crate::linalg::{frob_inner, Mat};

/// Ordered sequence of `N×D` observations `Y_1 … Y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    data: Vec<Mat>,
    n: usize,
    d: usize,
    pub node_labels: Option<Vec<String>>,
    pub var_labels: Option<Vec<String>>,
}

impl PanelSeries {
    pub fn new(data: Vec<Mat>) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| Error::InsufficientData("panel has no observations".into()))?;
        let (n, d) = first.shape();
        if n == 0 || d == 0 {
            return Err(Error::Shape("panel observations must be non-empty matrices".into()));
        }
        if let Some((t, m)) = data.iter().enumerate().find(|(_, m)| m.shape() != (n, d)) {
            return Err(Error::Shape(format!(
                "observation {t} is {}x{}, expected {n}x{d}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self { data, n, d, node_labels: None, var_labels: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of observations `T_total`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slices(&self) -> &[Mat] {
        &self.data
    }

    pub fn get(&self, t: usize) -> &Mat {
        &self.data[t]
    }

    /// Contiguous sub-panel, keeping labels.
    pub fn window(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InsufficientData(format!(
                "window {range:?} outside a panel of length {}",
                self.len()
            )));
        }
        let mut out = Self::new(self.data[range].to_vec())?;
        out.node_labels = self.node_labels.clone();
        out.var_labels = self.var_labels.clone();
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|m| *m *= c);
        out
    }

    /// Requires at least `lags + 1` observations.
    pub fn require_len(&self, lags: usize) -> Result<()> {
        if self.len() < lags + 1 {
            return Err(Error::InsufficientData(format!(
                "need at least {} observations for {lags} lag(s), have {}",
                lags + 1,
                self.len()
            )));
        }
        Ok(())
    }
}

/// Dimensions of an RRNAR(L) model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub n: usize,
    pub d: usize,
    pub lags: usize,
    pub ranks: Vec<usize>,
}

impl ModelDims {
    pub fn new(n: usize, d: usize, ranks: Vec<usize>) -> Result<Self> {
        if n == 0 || d == 0 || ranks.is_empty() {
            return Err(Error::InvalidInput("need N >= 1, D >= 1 and at least one lag".into()));
        }
        if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > d) {
            return Err(Error::InvalidInput(format!("rank {r} outside 1..={d}")));
        }
        Ok(Self { n, d, lags: ranks.len(), ranks })
    }
}

/// Parameters of one lag: `B_net = β_A I + β_N W` and `B_var = U Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagParams {
    pub beta_a: f64,
    pub beta_n: f64,
    pub u: Mat,
    pub v: Mat,
}

impl LagParams {
    pub fn new(beta_a: f64, beta_n: f64, u: Mat, v: Mat) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "U is {}x{} but V is {}x{}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(Self { beta_a, beta_n, u, v })
    }

    pub fn zeros(d: usize, rank: usize) -> Self {
        Self { beta_a: 0.0, beta_n: 0.0, u: Mat::zeros(d, rank), v: Mat::zeros(d, rank) }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn d(&self) -> usize {
        self.u.nrows()
    }

    pub fn b_var(&self) -> Mat {
        &self.u * self.v.transpose()
    }

    pub fn b_net(&self, w: &WeightMatrix) -> Mat {
        let n = w.n();
        Mat::identity(n, n) * self.beta_a + w.entries() * self.beta_n
    }

    /// `‖B_net‖_F² = β_A² N + 2 β_A β_N tr(W) + β_N² ‖W‖_F²`.
    pub fn bnet_frob_sq(&self, w: &WeightMatrix) -> f64 {
        let (a, b) = (self.beta_a, self.beta_n);
        a * a * w.n() as f64 + 2.0 * a * b * w.trace() + b * b * w.frob_sq()
    }

    /// `‖U Vᵀ‖_F² = tr(UᵀU VᵀV)`.
    pub fn bvar_frob_sq(&self) -> f64 {
        let gu = self.u.transpose() * &self.u;
        let gv = self.v.transpose() * &self.v;
        frob_inner(&gu, &gv)
    }

    /// Member of the equivalence class: `β/(c₁c₂)`, `c₁ U Q`, `c₂ V Q⁻ᵀ`.
    pub fn transformed(&self, c1: f64, c2: f64, q: &Mat) -> Result<Self> {
        let qinv = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("Q must be invertible".into()))?;
        let s = 1.0 / (c1 * c2);
        Ok(Self {
            beta_a: self.beta_a * s,
            beta_n: self.beta_n * s,
            u: &self.u * q * c1,
            v: &self.v * qinv.transpose() * c2,
        })
    }

    /// Norm-balanced representative: `‖B_net‖_F = ‖B_var‖_F`, the sign of
    /// `β_A` matching `sign_ref` (non-negative when `sign_ref >= 0`), and the
    /// factors re-split as `U = LΣ^{1/2}`, `V = RΣ^{1/2}`.
    pub fn balanced(&self, w: &WeightMatrix, sign_ref: f64) -> Self {
        let nb = self.bnet_frob_sq(w).sqrt();
        let nv = self.bvar_frob_sq().sqrt();
        let rank = self.rank();
        if !(nb > 0.0) || !(nv > 0.0) {
            return Self::zeros(self.d(), rank);
        }
        let c = (nb / nv).sqrt();
        let mut sign = 1.0;
        let want_positive = sign_ref >= 0.0;
        if (self.beta_a < 0.0 && want_positive) || (self.beta_a > 0.0 && !want_positive) {
            sign = -1.0;
        }
        let b_var = self.b_var() * (c * sign);
        let (u, v) = crate::estimator::factor_split(&b_var, rank);
        Self { beta_a: self.beta_a * sign / c, beta_n: self.beta_n * sign / c, u, v }
    }
}

/// Parameters `Θ = {(β_A,ℓ, β_N,ℓ, U_ℓ, V_ℓ)}` of an RRNAR(L) model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub lags: Vec<LagParams>,
    pub n: usize,
    pub d: usize,
}

impl ParamSet {
    pub fn new(n: usize, d: usize, lags: Vec<LagParams>) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::InvalidInput("parameter set needs at least one lag".into()));
        }
        for (l, p) in lags.iter().enumerate() {
            if p.d() != d || p.rank() > d || p.rank() == 0 {
                return Err(Error::Shape(format!(
                    "lag {} factors are {}x{}, expected D={d} rows and 1..={d} columns",
                    l + 1,
                    p.u.nrows(),
                    p.u.ncols()
                )));
            }
        }
        Ok(Self { lags, n, d })
    }

    pub fn zeros(n: usize, d: usize, ranks: &[usize]) -> Self {
        Self { lags: ranks.iter().map(|&r| LagParams::zeros(d, r)).collect(), n, d }
    }

    pub fn num_lags(&self) -> usize {
        self.lags.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.lags.iter().map(LagParams::rank).collect()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims { n: self.n, d: self.d, lags: self.num_lags(), ranks: self.ranks() }
    }

    pub fn balanced(&self, w: &WeightMatrix) -> Self {
        Self {
            lags: self.lags.iter().map(|p| p.balanced(w, 1.0)).collect(),
            n: self.n,
            d: self.d,
        }
    }

    /// Explicit `A_ℓ = B_var,ℓ ⊗ B_net,ℓ` (ND×ND each). Only for small problems.
    pub fn transition_blocks(&self, w: &WeightMatrix) -> Vec<Mat> {
        self.lags.iter().map(|p| crate::linalg::kron(&p.b_var(), &p.b_net(w))).collect()
    }

    pub(crate) fn check_against(&self, w: &WeightMatrix, panel: &PanelSeries) -> Result<()> {
        if w.n() != self.n || panel.n() != self.n || panel.d() != self.d {
            return Err(Error::Shape(format!(
                "parameters are for N={}, D={}, but W is {}x{} and the panel is {}x{}",
                self.n,
                self.d,
                w.n(),
                w.n(),
                panel.n(),
                panel.d()
            )));
        }
        Ok(())
    }
}
