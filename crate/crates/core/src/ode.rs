//! Fixed-step integration of `ż = drift(z, w, t)`.
//!
//! Steps are unrolled on whichever [`Backend`] the caller provides, so the
//! same routine yields plain forward trajectories or a taped graph whose
//! gradients are exact for the discrete solution.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::Backend;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

impl core::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::contract(format!("unknown method {other:?}"))),
        }
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        })
    }
}

/// Observation times plus the number of solver steps per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    substeps: usize,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, substeps: usize) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::contract("time grid needs at least one time"));
        }
        if substeps == 0 {
            return Err(Error::contract("substeps must be >= 1"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::contract("time grid contains non-finite times"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("times must be strictly increasing"));
        }
        Ok(TimeGrid { times, substeps })
    }

    /// `n` evenly spaced times on `[t0, t1]`, both ends included.
    pub fn uniform(t0: f64, t1: f64, n: usize, substeps: usize) -> Result<Self> {
        let times = if n == 1 {
            alloc::vec![t0]
        } else {
            (0..n)
                .map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64)
                .collect()
        };
        Self::new(times, substeps)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The first `n` times, same substep count.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.times.len() {
            return Err(Error::contract(format!(
                "prefix of length {n} from grid of {}",
                self.times.len()
            )));
        }
        Self::new(self.times[..n].to_vec(), self.substeps)
    }
}

/// Right-hand side of the latent ODE.
pub trait Drift<B: Backend> {
    fn eval(&self, b: &B, z: &B::Value, w: &B::Value, t: f64) -> Result<B::Value>;
}

impl<B, F> Drift<B> for F
where
    B: Backend,
    F: Fn(&B, &B::Value, &B::Value, f64) -> Result<B::Value>,
{
    fn eval(&self, b: &B, z: &B::Value, w: &B::Value, t: f64) -> Result<B::Value> {
        self(b, z, w, t)
    }
}

/// States at every grid time; `states[0]` is the initial condition.
#[derive(Debug, Clone)]
pub struct LatentTrajectory<V> {
    pub times: Vec<f64>,
    pub states: Vec<V>,
}

impl<V> LatentTrajectory<V> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &V {
        self.states.last().expect("trajectory has at least z0")
    }
}

/// Integrates from `z0` over `grid`. Fails with [`Error::Divergence`] as soon
/// as a non-finite state appears.
pub fn integrate<B, D>(
    b: &B,
    drift: &D,
    z0: &B::Value,
    w: &B::Value,
    grid: &TimeGrid,
    method: Method,
) -> Result<LatentTrajectory<B::Value>>
where
    B: Backend,
    D: Drift<B> + ?Sized,
{
    integrate_impl(b, drift, z0, w, grid, method, true)
}

/// Like [`integrate`] but lets non-finite values propagate, so rows of a
/// batched state can diverge independently.
pub(crate) fn integrate_lenient<B, D>(
    b: &B,
    drift: &D,
    z0: &B::Value,
    w: &B::Value,
    grid: &TimeGrid,
    method: Method,
) -> Result<LatentTrajectory<B::Value>>
where
    B: Backend,
    D: Drift<B> + ?Sized,
{
    integrate_impl(b, drift, z0, w, grid, method, false)
}

fn integrate_impl<B, D>(
    b: &B,
    drift: &D,
    z0: &B::Value,
    w: &B::Value,
    grid: &TimeGrid,
    method: Method,
    strict: bool,
) -> Result<LatentTrajectory<B::Value>>
where
    B: Backend,
    D: Drift<B> + ?Sized,
{
    if strict && !b.with_value(z0, |t| t.all_finite()) {
        return Err(Error::Divergence {
            time: grid.times[0],
        });
    }
    let z_shape = b.with_value(z0, |t| t.shape().to_vec());
    let eval = |z: &B::Value, t: f64| -> Result<B::Value> {
        let dz = drift.eval(b, z, w, t)?;
        let shape_ok = b.with_value(&dz, |d| d.shape() == z_shape.as_slice());
        if !shape_ok {
            return Err(Error::Dimension {
                op: "drift",
                lhs: z_shape.clone(),
                rhs: b.with_value(&dz, |d| d.shape().to_vec()),
            });
        }
        Ok(dz)
    };

    let mut states = Vec::with_capacity(grid.len());
    states.push(z0.clone());
    let mut z = z0.clone();
    for win in grid.times.windows(2) {
        let (t_a, t_b) = (win[0], win[1]);
        let h = (t_b - t_a) / grid.substeps as f64;
        for s in 0..grid.substeps {
            let t = t_a + h * s as f64;
            z = match method {
                Method::Euler => {
                    let k1 = eval(&z, t)?;
                    b.add(&z, &b.scale(&k1, h)?)?
                }
                Method::Rk4 => {
                    let k1 = eval(&z, t)?;
                    let z2 = b.add(&z, &b.scale(&k1, 0.5 * h)?)?;
                    let k2 = eval(&z2, t + 0.5 * h)?;
                    let z3 = b.add(&z, &b.scale(&k2, 0.5 * h)?)?;
                    let k3 = eval(&z3, t + 0.5 * h)?;
                    let z4 = b.add(&z, &b.scale(&k3, h)?)?;
                    let k4 = eval(&z4, t + h)?;
                    let mid = b.add(&k2, &k3)?;
                    let sum = b.add(&b.add(&k1, &k4)?, &b.scale(&mid, 2.0)?)?;
                    b.add(&z, &b.scale(&sum, h / 6.0)?)?
                }
            };
            if strict && !b.with_value(&z, |v| v.all_finite()) {
                return Err(Error::Divergence { time: t + h });
            }
        }
        states.push(z.clone());
    }
    Ok(LatentTrajectory {
        times: grid.times.clone(),
        states,
    })
}
