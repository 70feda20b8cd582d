//! Test-time personalisation: pick the effect sample whose decoded
//! trajectory best matches a subject's observed window, then extrapolate.

use alloc::vec::Vec;

use crate::autodiff::{reparam_sample, Eager};
use crate::model::{stack_rows, MeNodeModel};
use crate::ode::{LatentTrajectory, Method, TimeGrid};
use crate::rng;
use crate::train::row_mse;
use crate::{math, Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrateConfig {
    pub n_candidates: usize,
    pub seed: u64,
    pub method: Method,
    /// Also sample `z0 ~ q(z0)` per candidate instead of fixing it at `μ`.
    pub joint_z0: bool,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            n_candidates: 256,
            seed: 0,
            method: Method::Rk4,
            joint_z0: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationResult {
    pub z0: Vec<f64>,
    pub w: Vec<f64>,
    /// Observed-window MSE of the chosen candidate.
    pub mse: f64,
    pub n_candidates: usize,
    pub n_diverged: usize,
    /// Observed-window MSE of every candidate (`+∞` when diverged).
    pub candidate_mse: Vec<f64>,
    pub min_mse: f64,
    pub median_mse: f64,
    pub max_mse: f64,
}

/// Draws `n_candidates` effects from `N(β, Σ_b)` (and optionally initial
/// states from `q(z0)`) and keeps the one with the smallest observed-window
/// MSE.
pub fn calibrate(
    model: &MeNodeModel,
    x_obs: &Tensor,
    grid_obs: &TimeGrid,
    cfg: &CalibrateConfig,
) -> Result<CalibrationResult> {
    if cfg.n_candidates == 0 {
        return Err(Error::contract("n_candidates must be >= 1"));
    }
    let (p, m) = (model.config().latent_dim, model.config().effect_dim);
    let mut r = rng::stream(cfg.seed, 0);
    let nw = rng::normal_matrix(&mut r, cfg.n_candidates, m);
    let (beta, sigma_b) = model.effect_with(&Eager, model.params())?;
    let w = reparam_sample(&Eager, &beta, &sigma_b, &nw)?;
    let (mu, sigma) = model.encode(x_obs)?;
    let z0 = if cfg.joint_z0 {
        let nz = rng::normal_matrix(&mut r, cfg.n_candidates, p);
        reparam_sample(&Eager, &mu, &sigma, &nz)?
    } else {
        repeat_row(&mu, cfg.n_candidates)
    };
    calibrate_with_candidates(model, x_obs, grid_obs, &z0, &w, cfg.method)
}

/// Calibration over explicit candidates: `z0` is `[n, p]` and `w` is `[n, m]`.
/// Ties go to the lowest index.
pub fn calibrate_with_candidates(
    model: &MeNodeModel,
    x_obs: &Tensor,
    grid_obs: &TimeGrid,
    z0: &Tensor,
    w: &Tensor,
    method: Method,
) -> Result<CalibrationResult> {
    if grid_obs.len() != x_obs.dims2().0 {
        return Err(Error::contract("observed grid and window lengths differ"));
    }
    let n = w.dims2().0;
    let params = model.params();
    let traj = model.rollout_with(&Eager, params, z0, w, grid_obs, method, false)?;
    let preds = model.decode_traj_with(&Eager, params, &traj)?;
    let candidate_mse = row_mse(x_obs, &preds, 0);
    let n_diverged = candidate_mse.iter().filter(|v| !v.is_finite()).count();
    let best = candidate_mse
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or(Error::Calibration { candidates: n })?;
    let mut finite: Vec<f64> = candidate_mse.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    Ok(CalibrationResult {
        z0: z0.row(best).to_vec(),
        w: w.row(best).to_vec(),
        mse: candidate_mse[best],
        n_candidates: n,
        n_diverged,
        min_mse: finite[0],
        median_mse: median_sorted(&finite),
        max_mse: finite[finite.len() - 1],
        candidate_mse,
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn repeat_row(row: &Tensor, n: usize) -> Tensor {
    let d = row.numel();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend_from_slice(row.data());
    }
    Tensor::matrix(n, d, data)
}

/// A single decoded prediction `[T, d]` and its latent path.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub decoded: Tensor,
    pub latent: LatentTrajectory<Tensor>,
}

impl Prediction {
    /// Latent path as `[T, p]`.
    pub fn latent_matrix(&self) -> Result<Tensor> {
        stack_rows(&self.latent.states)
    }
}

/// Rolls the calibrated `(z0, w)` out over `grid_full` and decodes it.
pub fn predict(
    model: &MeNodeModel,
    calib: &CalibrationResult,
    grid_full: &TimeGrid,
    method: Method,
) -> Result<Prediction> {
    let z0 = Tensor::matrix(1, calib.z0.len(), calib.z0.clone());
    let w = Tensor::matrix(1, calib.w.len(), calib.w.clone());
    let params = model.params();
    let latent = model.rollout_with(&Eager, params, &z0, &w, grid_full, method, true)?;
    let decoded = stack_rows(&model.decode_traj_with(&Eager, params, &latent)?)?;
    Ok(Prediction { decoded, latent })
}

/// Pointwise mean and standard deviation over unselected posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    /// `[T, d]`
    pub mean: Tensor,
    /// `[T, d]`, sample (n − 1) standard deviation.
    pub std: Tensor,
    pub n_samples: usize,
    pub n_diverged: usize,
}

/// Samples `z0 ~ q(z0 | x_obs)` and `w ~ N(β, Σ_b)` `n_samples` times with
/// no selection. Diverged draws are excluded and counted.
pub fn ensemble_predict(
    model: &MeNodeModel,
    x_obs: &Tensor,
    grid_full: &TimeGrid,
    n_samples: usize,
    seed: u64,
    method: Method,
) -> Result<EnsemblePrediction> {
    if n_samples < 2 {
        return Err(Error::contract("ensemble needs at least 2 samples"));
    }
    let (p, m) = (model.config().latent_dim, model.config().effect_dim);
    let mut r = rng::stream(seed, 0);
    let nz = rng::normal_matrix(&mut r, n_samples, p);
    let nw = rng::normal_matrix(&mut r, n_samples, m);
    let params = model.params();
    let (mu, sigma) = model.encode(x_obs)?;
    let (z0, w) = model.sample_with(&Eager, params, &mu, &sigma, &nz, &nw)?;
    let traj = model.rollout_with(&Eager, params, &z0, &w, grid_full, method, false)?;
    let preds = model.decode_traj_with(&Eager, params, &traj)?;
    let d = model.config().obs_dim;
    let ok: Vec<usize> = (0..n_samples)
        .filter(|&r| preds.iter().all(|t| t.row(r).iter().all(|v| v.is_finite())))
        .collect();
    if ok.len() < 2 {
        return Err(Error::Divergence {
            time: *grid_full.times().last().unwrap(),
        });
    }
    let k = ok.len() as f64;
    let t_len = preds.len();
    let mut mean = Vec::with_capacity(t_len * d);
    let mut std = Vec::with_capacity(t_len * d);
    for t in &preds {
        for j in 0..d {
            let vals: Vec<f64> = ok.iter().map(|&r| t.row(r)[j]).collect();
            let mu = vals.iter().sum::<f64>() / k;
            let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (k - 1.0);
            mean.push(mu);
            std.push(math::sqrt(var));
        }
    }
    Ok(EnsemblePrediction {
        mean: Tensor::matrix(t_len, d, mean),
        std: Tensor::matrix(t_len, d, std),
        n_samples,
        n_diverged: n_samples - ok.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy_subject;
    use crate::model::ModelConfig;

    fn toy_model(beta: f64) -> MeNodeModel {
        let mut model = MeNodeModel::new(ModelConfig::toy(), 0).unwrap();
        model.params_mut()[0] = Tensor::vector(alloc::vec![beta]);
        model
    }

    #[test]
    fn single_candidate_is_chosen() {
        let model = toy_model(0.3);
        let times: Vec<f64> = (0..10).map(|k| k as f64 / 3.0).collect();
        let s = toy_subject(0, 1.3, 0.25, &times);
        let grid = TimeGrid::new(times, 3).unwrap();
        let cfg = CalibrateConfig {
            n_candidates: 1,
            ..CalibrateConfig::default()
        };
        let c = calibrate(&model, &s.obs, &grid, &cfg).unwrap();
        assert_eq!(c.n_candidates, 1);
        assert_eq!(c.mse, c.candidate_mse[0]);
        assert_eq!(c.z0, alloc::vec![1.3]);
    }

    #[test]
    fn injected_candidates_pick_truth() {
        let model = toy_model(0.3);
        let times: Vec<f64> = (0..10).map(|k| 3.0 * k as f64 / 19.0).collect();
        let s = toy_subject(0, 1.3, 0.3, &times);
        let grid = TimeGrid::new(times, 3).unwrap();
        let z0 = Tensor::full(&[3, 1], 1.3);
        let w = Tensor::matrix(3, 1, alloc::vec![0.2, 0.3, 0.4]);
        let c = calibrate_with_candidates(&model, &s.obs, &grid, &z0, &w, Method::Rk4).unwrap();
        assert_eq!(c.w, alloc::vec![0.3]);
        assert!(c.candidate_mse.iter().all(|&v| v >= c.mse));
    }

    #[test]
    fn collapsed_posterior_has_no_spread() {
        let cfg = ModelConfig {
            init_sigma0: 1e-12,
            init_sigma_b: 1e-12,
            ..ModelConfig::toy()
        };
        let model = MeNodeModel::new(cfg, 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 3.0, 20, 3).unwrap();
        let x = Tensor::full(&[10, 1], 1.3);
        let e = ensemble_predict(&model, &x, &grid, 8, 1, Method::Rk4).unwrap();
        assert!(e.std.data().iter().all(|&s| s < 1e-9));
        let again = ensemble_predict(&model, &x, &grid, 8, 1, Method::Rk4).unwrap();
        assert_eq!(e, again);
    }
}
