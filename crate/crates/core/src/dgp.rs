//! Synthetic RRNAR data: parameter sampling with stationarity rejection and
//! simulation with burn-in.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::factor_split;
use crate::graph::{build_k_regular_cycle, row_normalize, AdjacencyMatrix, WeightMatrix};
use crate::linalg::{spectral_radius, Mat};
use crate::model::{LagParams, ModelDims, PanelSeries, ParamSet};
use crate::rng::{haar_frame, standard_normal_matrix, Rng};

const MAX_DRAWS: usize = 10_000;

/// Innovation covariance. `Diagonal` holds one standard deviation per entry
/// of `vec(E_t)` (length `N·D`, column-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Isotropic { sd: f64 },
    Diagonal { sd: Vec<f64> },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Isotropic { sd: 1.0 }
    }
}

/// State the recursion starts from before burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Zeros,
    /// i.i.d. standard normal entries; used for noiseless panels, which
    /// would otherwise be identically zero.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub dims: ModelDims,
    /// Effective sample length.
    pub t: usize,
    pub burn_in: usize,
    /// Degree of the k-regular directed cycle.
    pub k: usize,
    pub singular_low: f64,
    pub singular_high: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Hold `(β_A, β_N)` per lag fixed instead of drawing them.
    pub fixed_betas: Option<Vec<(f64, f64)>>,
    /// Hold the singular values of each `B_var,ℓ` fixed.
    pub fixed_singular: Option<Vec<Vec<f64>>>,
    pub initial: InitialState,
    /// Reject with the companion-matrix spectral radius instead of the
    /// sufficient condition `Σ ρ(B_net,ℓ) ρ(B_var,ℓ) < 1`.
    pub exact_stationarity: bool,
}

impl DgpConfig {
    pub fn new(dims: ModelDims, t: usize, k: usize, seed: u64) -> Self {
        Self {
            dims,
            t,
            burn_in: 100,
            k,
            singular_low: 0.5,
            singular_high: 1.5,
            noise: NoiseSpec::default(),
            seed,
            fixed_betas: None,
            fixed_singular: None,
            initial: InitialState::Zeros,
            exact_stationarity: false,
        }
    }

    /// Zero innovations, Gaussian initial state, no burn-in.
    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseSpec::Isotropic { sd: 0.0 };
        self.initial = InitialState::Gaussian;
        self.burn_in = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 1 {
            return Err(Error::InvalidInput("T must be at least 1".into()));
        }
        if !(self.singular_low > 0.0 && self.singular_low <= self.singular_high) {
            return Err(Error::InvalidInput(format!(
                "singular value range [{}, {}] must satisfy 0 < low <= high",
                self.singular_low, self.singular_high
            )));
        }
        if let Some(b) = &self.fixed_betas {
            if b.len() != self.dims.lags {
                return Err(Error::InvalidInput("fixed_betas needs one pair per lag".into()));
            }
        }
        if let Some(s) = &self.fixed_singular {
            if s.len() != self.dims.lags || s.iter().zip(&self.dims.ranks).any(|(v, &r)| v.len() != r) {
                return Err(Error::InvalidInput("fixed_singular needs r_l values per lag".into()));
            }
        }
        if let NoiseSpec::Diagonal { sd } = &self.noise {
            if sd.len() != self.dims.n * self.dims.d {
                return Err(Error::InvalidInput("diagonal noise needs N*D standard deviations".into()));
            }
        }
        Ok(())
    }

    /// Network for this configuration: k-regular directed cycle, or the
    /// empty graph when `N = 1`.
    pub fn adjacency(&self) -> Result<AdjacencyMatrix> {
        if self.dims.n == 1 {
            return Ok(AdjacencyMatrix::empty(1));
        }
        build_k_regular_cycle(self.dims.n, self.k)
    }
}

/// Ground-truth parameters with their network and spectral radius.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub params: ParamSet,
    pub weight: WeightMatrix,
    pub rho: f64,
}

/// Samples truth on the configured k-regular cycle.
pub fn sample_params(config: &DgpConfig, rng: &mut Rng) -> Result<TrueModel> {
    let adj = config.adjacency()?;
    sample_params_on(config, row_normalize(&adj), rng)
}

/// Samples truth on a given network, redrawing the whole tuple until the
/// stationarity check passes.
pub fn sample_params_on(config: &DgpConfig, weight: WeightMatrix, rng: &mut Rng) -> Result<TrueModel> {
    config.validate()?;
    let ModelDims { n, d, ref ranks, .. } = config.dims;
    if weight.n() != n {
        return Err(Error::Shape(format!("weight matrix is {0}x{0}, expected N={n}", weight.n())));
    }
    for _ in 0..MAX_DRAWS {
        let mut lags = Vec::with_capacity(ranks.len());
        for (l, &r) in ranks.iter().enumerate() {
            let (beta_a, beta_n) = match &config.fixed_betas {
                Some(b) => b[l],
                None => (rng.random::<f64>(), if n == 1 { 0.0 } else { rng.random::<f64>() }),
            };
            let q1 = haar_frame(rng, d, r);
            let q2 = haar_frame(rng, d, r);
            let sv: Vec<f64> = match &config.fixed_singular {
                Some(s) => s[l].clone(),
                None => (0..r)
                    .map(|_| {
                        if config.singular_low == config.singular_high {
                            config.singular_low
                        } else {
                            rng.random_range(config.singular_low..=config.singular_high)
                        }
                    })
                    .collect(),
            };
            let lambda = Mat::from_diagonal(&nalgebra::DVector::from_vec(sv));
            let b_var = &q1 * lambda * q2.transpose();
            let (u, v) = factor_split(&b_var, r);
            lags.push(LagParams { beta_a, beta_n, u, v });
        }
        let params = ParamSet::new(n, d, lags)?;
        let rho = if config.exact_stationarity {
            companion_radius(&params, &weight)?
        } else {
            check_stationary(&params, &weight)?.1
        };
        if rho < 1.0 {
            return Ok(TrueModel { params, weight, rho });
        }
    }
    Err(Error::Infeasible(format!(
        "no stationary parameter draw within {MAX_DRAWS} attempts"
    )))
}

fn bnet_radius(p: &LagParams, w: &WeightMatrix) -> Result<f64> {
    // Nonnegative β with a row-stochastic W: B_net is nonnegative with constant
    // row sums, so its Perron root is β_A + β_N.
    let rows_stochastic = (0..w.n()).all(|i| (w.entries().row(i).sum() - 1.0).abs() < 1e-12);
    if p.beta_a >= 0.0 && p.beta_n >= 0.0 && rows_stochastic {
        return Ok(p.beta_a + p.beta_n);
    }
    spectral_radius(&p.b_net(w))
}

/// Stationarity via `Σ_ℓ ρ(B_net,ℓ) ρ(B_var,ℓ) < 1` (exact for one lag).
pub fn check_stationary(params: &ParamSet, w: &WeightMatrix) -> Result<(bool, f64)> {
    let mut total = 0.0;
    for p in &params.lags {
        total += bnet_radius(p, w)? * spectral_radius(&p.b_var())?;
    }
    Ok((total < 1.0, total))
}

/// Spectral radius of the `LND×LND` companion matrix of the VAR(L) form.
pub fn companion_radius(params: &ParamSet, w: &WeightMatrix) -> Result<f64> {
    let blocks = params.transition_blocks(w);
    let nd = params.n * params.d;
    let l = blocks.len();
    let mut comp = Mat::zeros(l * nd, l * nd);
    for (i, b) in blocks.iter().enumerate() {
        comp.view_mut((0, i * nd), (nd, nd)).copy_from(b);
    }
    for i in 1..l {
        comp.view_mut((i * nd, (i - 1) * nd), (nd, nd)).fill_with_identity();
    }
    spectral_radius(&comp)
}

/// Runs `Y_t = Σ_ℓ B_net,ℓ Y_{t−ℓ} B_var,ℓᵀ + E_t` for `burn_in + T` steps
/// after `L` initial states, discards the first `burn_in` observations, and
/// returns the remaining `T + L`.
pub fn simulate(model: &TrueModel, config: &DgpConfig, rng: &mut Rng) -> Result<PanelSeries> {
    config.validate()?;
    let params = &model.params;
    let (n, d) = (params.n, params.d);
    let l = params.num_lags();
    let w = model.weight.entries();
    let total = config.burn_in + config.t;

    let mut series: Vec<Mat> = (0..l)
        .map(|_| match config.initial {
            InitialState::Zeros => Mat::zeros(n, d),
            InitialState::Gaussian => standard_normal_matrix(rng, n, d),
        })
        .collect();
    series.reserve(total);
    for _ in 0..total {
        let now = series.len();
        let mut y = Mat::zeros(n, d);
        for (lag, p) in params.lags.iter().enumerate() {
            let prev = &series[now - 1 - lag];
            let mut x = prev * p.beta_a;
            if p.beta_n != 0.0 {
                x += w * prev * p.beta_n;
            }
            y += (x * &p.v) * p.u.transpose();
        }
        match &config.noise {
            NoiseSpec::Isotropic { sd } => {
                if *sd != 0.0 {
                    y += standard_normal_matrix(rng, n, d) * *sd;
                }
            }
            NoiseSpec::Diagonal { sd } => {
                let e = standard_normal_matrix(rng, n, d);
                y.iter_mut().zip(e.iter().zip(sd)).for_each(|(yv, (ev, s))| *yv += ev * s);
            }
        }
        series.push(y);
    }
    PanelSeries::new(series.split_off(config.burn_in))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sorted_svd;
    use crate::rng::rng_from_seed;

    fn cfg(n: usize, d: usize, r: usize, t: usize) -> DgpConfig {
        DgpConfig::new(ModelDims::new(n, d, vec![r]).unwrap(), t, 3, 7)
    }

    #[test]
    fn sampled_truth_is_stationary_and_in_range() {
        let c = cfg(20, 10, 2, 50);
        for seed in 0..20 {
            let m = sample_params(&c, &mut rng_from_seed(seed)).unwrap();
            assert!(m.rho < 1.0);
            assert!(check_stationary(&m.params, &m.weight).unwrap().0);
            let (_, s, _) = sorted_svd(&m.params.lags[0].b_var());
            assert!(s[0] <= 1.5 + 1e-12 && s[1] >= 0.5 - 1e-12);
            assert!(s[2] < 1e-12);
        }
    }

    #[test]
    fn degenerate_singular_interval() {
        let mut c = cfg(6, 4, 2, 10);
        c.singular_low = 1.0;
        c.singular_high = 1.0;
        c.fixed_betas = Some(vec![(0.3, 0.2)]);
        let m = sample_params(&c, &mut rng_from_seed(1)).unwrap();
        let (_, s, _) = sorted_svd(&m.params.lags[0].b_var());
        assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let c = cfg(8, 4, 2, 30);
        let a = sample_params(&c, &mut rng_from_seed(42)).unwrap();
        let b = sample_params(&c, &mut rng_from_seed(42)).unwrap();
        assert_eq!(a, b);
        let pa = simulate(&a, &c, &mut rng_from_seed(5)).unwrap();
        let pb = simulate(&b, &c, &mut rng_from_seed(5)).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(pa.len(), 31);
    }

    #[test]
    fn zero_model_without_noise_is_zero() {
        let mut c = cfg(4, 3, 1, 20);
        c.noise = NoiseSpec::Isotropic { sd: 0.0 };
        let w = row_normalize(&c.adjacency().unwrap());
        let params = ParamSet::zeros(4, 3, &[1]);
        let m = TrueModel { params, weight: w, rho: 0.0 };
        let p = simulate(&m, &c, &mut rng_from_seed(0)).unwrap();
        assert!(p.slices().iter().all(|y| y.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn ar1_stationary_variance() {
        // β_A = 0.5, β_N = 0, B_var = I: each entry is AR(1) with variance 1/(1-0.25)
        let d = 2;
        let mut c = cfg(2, d, d, 50_000);
        c.noise = NoiseSpec::Isotropic { sd: 1.0 };
        let w = row_normalize(&AdjacencyMatrix::empty(2));
        let lag = LagParams::new(0.5, 0.0, Mat::identity(d, d), Mat::identity(d, d)).unwrap();
        let m = TrueModel { params: ParamSet::new(2, d, vec![lag]).unwrap(), weight: w, rho: 0.5 };
        let p = simulate(&m, &c, &mut rng_from_seed(3)).unwrap();
        let vals: Vec<f64> = p.slices().iter().flat_map(|y| y.iter().copied()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let target = 1.0 / (1.0 - 0.25);
        assert!((var - target).abs() < 0.05 * target, "variance {var}");
        // lag-1 autocovariance 0.5·target
        let cov: f64 = (1..p.len())
            .map(|t| (p.get(t) - Mat::from_element(2, d, mean)).component_mul(&(p.get(t - 1) - Mat::from_element(2, d, mean))).sum())
            .sum::<f64>()
            / ((p.len() - 1) * 2 * d) as f64;
        assert!((cov - 0.5 * target).abs() < 0.05 * target);
    }

    #[test]
    fn stationarity_examples() {
        let w = row_normalize(&build_k_regular_cycle(5, 2).unwrap());
        let zero = ParamSet::zeros(5, 3, &[1]);
        assert_eq!(check_stationary(&zero, &w).unwrap(), (true, 0.0));
        let e1 = Mat::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let p = ParamSet::new(5, 3, vec![LagParams::new(0.6, 0.5, e1.clone(), e1.clone()).unwrap()]).unwrap();
        let (ok, v) = check_stationary(&p, &w).unwrap();
        assert!(!ok && (v - 1.1).abs() < 1e-12);
        let w3 = row_normalize(&build_k_regular_cycle(3, 1).unwrap());
        let p = ParamSet::new(3, 3, vec![LagParams::new(0.3, 0.4, e1.clone(), e1).unwrap()]).unwrap();
        let (ok, v) = check_stationary(&p, &w3).unwrap();
        assert!(ok && (v - 0.7).abs() < 1e-12);
        // the general eigen path agrees with the Perron shortcut
        assert!((spectral_radius(&p.lags[0].b_net(&w3)).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn infeasible_configuration_errors() {
        // full-rank orthogonal B_var has spectral radius 1, so β_A+β_N=1.8 can never pass
        let mut c = cfg(5, 3, 3, 10);
        c.fixed_betas = Some(vec![(0.9, 0.9)]);
        c.fixed_singular = Some(vec![vec![1.0, 1.0, 1.0]]);
        assert!(matches!(sample_params(&c, &mut rng_from_seed(0)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn lag_two_draws_are_stationary() {
        let mut c = DgpConfig::new(ModelDims::new(6, 4, vec![2, 1]).unwrap(), 20, 2, 0);
        let m = sample_params(&c, &mut rng_from_seed(9)).unwrap();
        assert!(m.rho < 1.0);
        c.exact_stationarity = true;
        let m = sample_params(&c, &mut rng_from_seed(9)).unwrap();
        let comp = companion_radius(&m.params, &m.weight).unwrap();
        assert!(m.rho < 1.0 && (comp - m.rho).abs() < 1e-9);
    }
}
