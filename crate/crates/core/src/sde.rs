//! Scalar Stratonovich SDEs and their random-coefficient ODE approximation.
//!
//! `dz = f(z,t) dt + L(z,t) ∘ dW` is simulated with the Euler–Heun scheme
//! (Euler drift, trapezoidal diffusion), which converges to the Stratonovich
//! solution. The comparison ensemble instead solves `ż = f(z,t) + g(z,t)·b`
//! with one `b ~ N(0,1)` per path, i.e. the mixed-effects ODE with a scalar
//! effect.

use alloc::vec::Vec;

use crate::ode::{Method, TimeGrid};
use crate::rng;
use crate::{math, Error, Result};

/// Per-time marginal moments of an ensemble of scalar paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMoments {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) variance.
    pub var: Vec<f64>,
    /// Paths that went non-finite and were excluded.
    pub n_diverged: usize,
    pub n_paths: usize,
}

impl EnsembleMoments {
    /// Monte Carlo standard error of the mean at each time.
    pub fn std_err(&self) -> Vec<f64> {
        let n = (self.n_paths - self.n_diverged) as f64;
        self.var.iter().map(|v| math::sqrt(v / n)).collect()
    }

    fn from_paths(times: &[f64], paths: &[Vec<f64>], n_paths: usize) -> Result<Self> {
        if paths.len() < 2 {
            return Err(Error::Divergence {
                time: *times.last().unwrap_or(&0.0),
            });
        }
        let n = paths.len() as f64;
        let mut mean = Vec::with_capacity(times.len());
        let mut var = Vec::with_capacity(times.len());
        for k in 0..times.len() {
            let m = paths.iter().map(|p| p[k]).sum::<f64>() / n;
            let v = paths.iter().map(|p| (p[k] - m) * (p[k] - m)).sum::<f64>() / (n - 1.0);
            mean.push(m);
            var.push(v);
        }
        Ok(EnsembleMoments {
            times: times.to_vec(),
            mean,
            var,
            n_diverged: n_paths - paths.len(),
            n_paths,
        })
    }
}

/// One Euler–Heun sample path at the grid times, reproducible from `seed`.
pub fn integrate_stratonovich<F, L>(
    f: F,
    l: L,
    z0: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(f64, f64) -> f64,
    L: Fn(f64, f64) -> f64,
{
    let mut noise = rng::stream(seed, 0);
    let times = grid.times();
    let mut out = Vec::with_capacity(times.len());
    out.push(z0);
    let mut z = z0;
    for win in times.windows(2) {
        let h = (win[1] - win[0]) / grid.substeps() as f64;
        let sqrt_h = math::sqrt(h);
        for s in 0..grid.substeps() {
            let t = win[0] + h * s as f64;
            let dw = sqrt_h * rng::normal(&mut noise);
            let diff = l(z, t);
            let predictor = z + diff * dw;
            z = z + f(z, t) * h + 0.5 * (diff + l(predictor, t + h)) * dw;
            if !z.is_finite() {
                return Err(Error::Divergence { time: t + h });
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// Solves the scalar ODE `ż = rhs(z, t)` on the grid.
fn solve_scalar<R>(rhs: R, z0: f64, grid: &TimeGrid, method: Method) -> Result<Vec<f64>>
where
    R: Fn(f64, f64) -> f64,
{
    let times = grid.times();
    let mut out = Vec::with_capacity(times.len());
    out.push(z0);
    let mut z = z0;
    for win in times.windows(2) {
        let h = (win[1] - win[0]) / grid.substeps() as f64;
        for s in 0..grid.substeps() {
            let t = win[0] + h * s as f64;
            z = match method {
                Method::Euler => z + h * rhs(z, t),
                Method::Rk4 => {
                    let k1 = rhs(z, t);
                    let k2 = rhs(z + 0.5 * h * k1, t + 0.5 * h);
                    let k3 = rhs(z + 0.5 * h * k2, t + 0.5 * h);
                    let k4 = rhs(z + h * k3, t + h);
                    z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                }
            };
            if !z.is_finite() {
                return Err(Error::Divergence { time: t + h });
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// Ensemble of `ż = f(z,t) + g(z,t)·b`, `b ~ N(0,1)` drawn once per path.
/// Path `i` uses the seed `derive_seed(seed, i)`.
pub fn wong_zakai_ensemble<F, G>(
    f: F,
    g: G,
    z0: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    method: Method,
) -> Result<EnsembleMoments>
where
    F: Fn(f64, f64) -> f64,
    G: Fn(f64, f64) -> f64,
{
    if n_paths == 0 {
        return Err(Error::contract("n_paths must be >= 1"));
    }
    let mut paths = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let mut r = rng::stream(rng::derive_seed(seed, i as u64), 0);
        let b = rng::normal(&mut r);
        if let Ok(p) = solve_scalar(|z, t| f(z, t) + g(z, t) * b, z0, grid, method) {
            paths.push(p);
        }
    }
    if n_paths == 1 && paths.len() == 1 {
        let p = &paths[0];
        return Ok(EnsembleMoments {
            times: grid.times().to_vec(),
            mean: p.clone(),
            var: alloc::vec![0.0; p.len()],
            n_diverged: 0,
            n_paths,
        });
    }
    EnsembleMoments::from_paths(grid.times(), &paths, n_paths)
}

/// Monte Carlo moments of the Stratonovich SDE over `n_paths` Euler–Heun
/// paths (path `i` seeded with `derive_seed(seed, i)`).
pub fn stratonovich_ensemble<F, L>(
    f: F,
    l: L,
    z0: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<EnsembleMoments>
where
    F: Fn(f64, f64) -> f64,
    L: Fn(f64, f64) -> f64,
{
    if n_paths < 2 {
        return Err(Error::contract("n_paths must be >= 2"));
    }
    let paths: Vec<Vec<f64>> = (0..n_paths)
        .filter_map(|i| {
            integrate_stratonovich(&f, &l, z0, grid, rng::derive_seed(seed, i as u64)).ok()
        })
        .collect();
    EnsembleMoments::from_paths(grid.times(), &paths, n_paths)
}
