//! Panel datasets and the synthetic generators.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;

use crate::rng;
use crate::{math, Error, Result, Tensor};

/// One subject: observations `[T, d]` on the dataset grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Subject {
    pub id: u64,
    pub group: u32,
    pub obs: Tensor,
    pub true_z0: Option<Vec<f64>>,
    pub true_w: Option<Vec<f64>>,
}

/// Subjects sharing one time grid. Times `[0, split)` form the
/// interpolation window, `[split, T)` the extrapolation window.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PanelDataset {
    pub times: Vec<f64>,
    pub split: usize,
    pub obs_dim: usize,
    pub subjects: Vec<Subject>,
}

impl PanelDataset {
    pub fn new(times: Vec<f64>, split: usize, obs_dim: usize, subjects: Vec<Subject>) -> Result<Self> {
        let ds = PanelDataset {
            times,
            split,
            obs_dim,
            subjects,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n < 2 || self.split == 0 || self.split >= n {
            return Err(Error::contract(format!(
                "split {} must lie strictly inside a grid of {n} times",
                self.split
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract("times must be strictly increasing"));
        }
        if self.obs_dim == 0 {
            return Err(Error::contract("obs_dim must be >= 1"));
        }
        for s in &self.subjects {
            if s.obs.shape() != [n, self.obs_dim] {
                return Err(Error::contract(format!(
                    "subject {} has observations of shape {:?}, expected [{n}, {}]",
                    s.id,
                    s.obs.shape(),
                    self.obs_dim
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn interp_times(&self) -> &[f64] {
        &self.times[..self.split]
    }

    pub fn extrap_times(&self) -> &[f64] {
        &self.times[self.split..]
    }

    /// The first `split` rows of a subject's observations.
    pub fn observed_window(&self, subject: &Subject) -> Tensor {
        window(&subject.obs, 0, self.split)
    }

    /// The held-out rows `[split, T)`.
    pub fn extrap_window(&self, subject: &Subject) -> Tensor {
        window(&subject.obs, self.split, self.times.len())
    }

    /// First `round(frac·n)` subjects for training, the rest for testing.
    pub fn train_test_split(&self, frac: f64) -> Result<(PanelDataset, PanelDataset)> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::contract(format!("train fraction {frac} outside [0, 1]")));
        }
        let n_train = libm::round(frac * self.len() as f64) as usize;
        let mut train = self.clone();
        let test_subjects = train.subjects.split_off(n_train);
        let test = PanelDataset {
            subjects: test_subjects,
            ..self.clone_empty()
        };
        Ok((train, test))
    }

    /// Same grid and split, no subjects.
    pub fn clone_empty(&self) -> PanelDataset {
        PanelDataset {
            times: self.times.clone(),
            split: self.split,
            obs_dim: self.obs_dim,
            subjects: Vec::new(),
        }
    }

    /// Subjects whose group is in `groups`, in original order.
    pub fn filter_groups(&self, groups: &[u32]) -> PanelDataset {
        PanelDataset {
            subjects: self
                .subjects
                .iter()
                .filter(|s| groups.contains(&s.group))
                .cloned()
                .collect(),
            ..self.clone_empty()
        }
    }
}

fn window(obs: &Tensor, from: usize, to: usize) -> Tensor {
    let d = obs.dims2().1;
    Tensor::matrix(to - from, d, obs.data()[from * d..to * d].to_vec())
}

/// Settings of the one-dimensional exponential-growth panel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToySpec {
    pub mu: f64,
    pub sigma: f64,
    pub beta: f64,
    pub sigma_b: f64,
    pub n_subjects: usize,
    pub train_frac: f64,
    pub n_times: usize,
    pub t_max: f64,
    /// Interpolation window length.
    pub n_interp: usize,
    /// Random (sorted, shared) times instead of an even grid.
    pub jitter: bool,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            mu: 1.3,
            sigma: 0.01,
            beta: 0.3,
            sigma_b: 0.01,
            n_subjects: 1000,
            train_frac: 0.8,
            n_times: 20,
            t_max: 3.0,
            n_interp: 10,
            jitter: false,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("beta", self.beta),
            ("sigma_b", self.sigma_b),
            ("train_frac", self.train_frac),
            ("t_max", self.t_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        if self.train_frac > 1.0 {
            return Err(Error::contract("train_frac must be <= 1"));
        }
        if self.n_times < 2 || self.n_interp == 0 || self.n_interp >= self.n_times {
            return Err(Error::contract(format!(
                "n_interp {} must lie strictly inside n_times {}",
                self.n_interp, self.n_times
            )));
        }
        Ok(())
    }
}

fn grid_times(n: usize, t_max: f64, jitter: bool, seed: u64) -> Vec<f64> {
    if !jitter {
        return (0..n).map(|k| t_max * k as f64 / (n - 1) as f64).collect();
    }
    let mut r = rng::stream(seed, u64::MAX);
    let mut t: Vec<f64> = (1..n).map(|_| r.random::<f64>() * t_max).collect();
    t.sort_by(f64::total_cmp);
    t.insert(0, 0.0);
    t
}

/// `x_t = z0·exp(w·t)` with `z0 ~ N(μ, σ²)` and `w ~ N(β, σ_b²)` per subject.
/// Subject `i` draws from stream `i` of `seed`.
pub fn generate_toy(spec: &ToySpec, seed: u64) -> Result<PanelDataset> {
    spec.validate()?;
    let times = grid_times(spec.n_times, spec.t_max, spec.jitter, seed);
    let subjects = (0..spec.n_subjects)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let z0 = spec.mu + spec.sigma * rng::normal(&mut r);
            let w = spec.beta + spec.sigma_b * rng::normal(&mut r);
            toy_subject(i as u64, z0, w, &times)
        })
        .collect();
    PanelDataset::new(times, spec.n_interp, 1, subjects)
}

/// Noise-free toy subject with the given draws.
pub fn toy_subject(id: u64, z0: f64, w: f64, times: &[f64]) -> Subject {
    Subject {
        id,
        group: 0,
        obs: Tensor::matrix(times.len(), 1, times.iter().map(|&t| z0 * math::exp(w * t)).collect()),
        true_z0: Some(vec![z0]),
        true_w: Some(vec![w]),
    }
}

/// Settings of the grouped planar-rotation panel `ż = ω·(−z₂, z₁)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grouped2dSpec {
    pub n_subjects: usize,
    /// Angular velocity of each group.
    pub omegas: Vec<f64>,
    /// Optional `[start, end)` range of initial angles per group; the full
    /// circle otherwise.
    pub arcs: Option<Vec<(f64, f64)>>,
    pub noise_sigma: f64,
    pub n_times: usize,
    pub t_max: f64,
    pub n_interp: usize,
}

impl Grouped2dSpec {
    /// `n_groups ∈ {1, 4, 8}`: `{π/4}` for one group, otherwise
    /// `ω_g = (π/2)(g+1)/G`.
    pub fn with_groups(n_groups: usize, n_subjects: usize) -> Result<Self> {
        let omegas = match n_groups {
            1 => vec![PI / 4.0],
            4 | 8 => (0..n_groups)
                .map(|g| PI / 2.0 * (g + 1) as f64 / n_groups as f64)
                .collect(),
            other => {
                return Err(Error::contract(format!(
                    "n_groups must be 1, 4 or 8, got {other}"
                )))
            }
        };
        Ok(Grouped2dSpec {
            n_subjects,
            omegas,
            arcs: None,
            noise_sigma: 0.01,
            n_times: 20,
            t_max: 3.0,
            n_interp: 10,
        })
    }

    /// Two groups that stay apart on `[0, 3]`: `ω = π/4` starting on
    /// `[0, π/4)` and `ω = π/2` starting on `[π, 5π/4)`.
    pub fn separated_pair(n_subjects: usize) -> Self {
        Grouped2dSpec {
            n_subjects,
            omegas: vec![PI / 4.0, PI / 2.0],
            arcs: Some(vec![(0.0, PI / 4.0), (PI, 1.25 * PI)]),
            noise_sigma: 0.01,
            n_times: 20,
            t_max: 3.0,
            n_interp: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.omegas.is_empty() {
            return Err(Error::contract("at least one group is required"));
        }
        if let Some(arcs) = &self.arcs {
            if arcs.len() != self.omegas.len() {
                return Err(Error::contract("one arc per group is required"));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.t_max > 0.0) {
            return Err(Error::contract("noise_sigma must be >= 0 and t_max > 0"));
        }
        if self.n_times < 2 || self.n_interp == 0 || self.n_interp >= self.n_times {
            return Err(Error::contract("n_interp must lie strictly inside n_times"));
        }
        Ok(())
    }
}

/// Convenience for [`Grouped2dSpec::with_groups`].
pub fn generate_grouped_2d(n_groups: usize, n_subjects: usize, seed: u64) -> Result<PanelDataset> {
    generate_grouped_2d_with(&Grouped2dSpec::with_groups(n_groups, n_subjects)?, seed)
}

/// Each subject picks a group uniformly, an initial angle `θ` (uniform on
/// the group's arc) and is observed at `(cos(θ+ωt), sin(θ+ωt)) + noise`.
pub fn generate_grouped_2d_with(spec: &Grouped2dSpec, seed: u64) -> Result<PanelDataset> {
    spec.validate()?;
    let times = grid_times(spec.n_times, spec.t_max, false, seed);
    let g_count = spec.omegas.len();
    let subjects = (0..spec.n_subjects)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let g = r.random_range(0..g_count);
            let (lo, hi) = spec.arcs.as_ref().map_or((0.0, 2.0 * PI), |a| a[g]);
            let theta = lo + (hi - lo) * r.random::<f64>();
            let omega = spec.omegas[g];
            let mut obs = Vec::with_capacity(2 * times.len());
            for &t in &times {
                let a = theta + omega * t;
                obs.push(math::cos(a) + spec.noise_sigma * rng::normal(&mut r));
                obs.push(math::sin(a) + spec.noise_sigma * rng::normal(&mut r));
            }
            Subject {
                id: i as u64,
                group: g as u32,
                obs: Tensor::matrix(times.len(), 2, obs),
                true_z0: Some(vec![math::cos(theta), math::sin(theta)]),
                true_w: Some(vec![omega]),
            }
        })
        .collect();
    PanelDataset::new(times, spec.n_interp, 2, subjects)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_closed_form_value() {
        let times: Vec<f64> = (0..20).map(|k| 3.0 * k as f64 / 19.0).collect();
        let s = toy_subject(0, 1.3, 0.3, &times);
        assert!((s.obs.data()[19] - 3.1972).abs() < 1e-3);
        let flat = toy_subject(1, 1.3, 0.0, &times);
        assert!(flat.obs.data().iter().all(|&v| v == 1.3));
    }

    #[test]
    fn toy_defaults_and_split() {
        let ds = generate_toy(&ToySpec::default(), 7).unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.n_times(), 20);
        assert_eq!(ds.times[19], 3.0);
        assert_eq!(ds.split, 10);
        let (tr, te) = ds.train_test_split(0.8).unwrap();
        assert_eq!((tr.len(), te.len()), (800, 200));
        assert_eq!(ds.observed_window(&ds.subjects[0]).shape(), &[10, 1]);
        assert_eq!(ds.extrap_window(&ds.subjects[0]).shape(), &[10, 1]);
    }

    #[test]
    fn rotation_closed_form() {
        let spec = Grouped2dSpec {
            noise_sigma: 0.0,
            arcs: Some(vec![(0.0, 0.0)]),
            n_times: 4,
            t_max: 3.0,
            n_interp: 2,
            ..Grouped2dSpec::with_groups(1, 1).unwrap()
        };
        let ds = generate_grouped_2d_with(&spec, 1).unwrap();
        // t = 2 sits at row 2.
        let row = ds.subjects[0].obs.row(2);
        assert!(row[0].abs() < 1e-12 && (row[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn group_sets() {
        assert!(generate_grouped_2d(3, 10, 0).is_err());
        let ds = generate_grouped_2d(8, 200, 0).unwrap();
        assert!(ds.subjects.iter().all(|s| s.group < 8));
        let one = generate_grouped_2d(1, 20, 0).unwrap();
        assert!(one.subjects.iter().all(|s| s.true_w == Some(vec![PI / 4.0])));
    }

    #[test]
    fn jittered_grid_is_increasing() {
        let spec = ToySpec {
            jitter: true,
            n_subjects: 3,
            ..ToySpec::default()
        };
        let ds = generate_toy(&spec, 2).unwrap();
        assert_eq!(ds.times[0], 0.0);
        assert!(ds.times.windows(2).all(|w| w[1] > w[0]));
    }
}
