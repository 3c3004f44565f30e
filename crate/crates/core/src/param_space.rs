//! Parameter domains and sampled realizations.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALTON_PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Axis-aligned box of admissible parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    bounds: Vec<(f64, f64)>,
}

impl ParamSpace {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Argument("parameter space needs at least one dimension".into()));
        }
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Argument(format!(
                    "invalid bounds ({lo}, {hi}) for parameter {d}"
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// Builds a space from a flat `(lo1, hi1, lo2, hi2, ...)` list.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Argument("flat bounds must come in (lo, hi) pairs".into()));
        }
        Self::new(flat.chunks(2).map(|c| (c[0], c[1])).collect())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Maps a point of the unit cube into the box, axis by axis.
    pub fn map_unit(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.bounds)
            .map(|(&u, &(lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(&self.bounds)
                .all(|(&m, &(lo, hi))| m >= lo && m <= hi)
    }
}

/// A parameter box crossed with a uniform time grid `t_0 < ... < t_{N_t}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientParamSpace {
    space: ParamSpace,
    times: Vec<f64>,
}

impl TransientParamSpace {
    pub fn new(space: ParamSpace, t0: f64, dt: f64, nsteps: usize) -> Result<Self> {
        if nsteps == 0 || !(dt > 0.0) {
            return Err(Error::Argument(format!(
                "time grid needs nsteps >= 1 and dt > 0 (got {nsteps}, {dt})"
            )));
        }
        let times = (0..=nsteps).map(|n| t0 + n as f64 * dt).collect();
        Ok(Self { space, times })
    }

    /// Wraps an explicit grid, rejecting non-increasing or nonuniform grids.
    pub fn from_grid(space: ParamSpace, times: Vec<f64>) -> Result<Self> {
        check_uniform_grid(&times)?;
        Ok(Self { space, times })
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    /// Full grid including `t_0`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nsteps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        (self.times[self.times.len() - 1] - self.times[0]) / self.nsteps() as f64
    }
}

/// Checks that `times` is strictly increasing with uniform spacing (1e-12 relative).
pub fn check_uniform_grid(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Argument("time grid needs at least two points".into()));
    }
    let nsteps = times.len() - 1;
    let dt = (times[nsteps] - times[0]) / nsteps as f64;
    if !(dt > 0.0) {
        return Err(Error::Argument("time grid must be increasing".into()));
    }
    for (n, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if !(step > 0.0) || ((step - dt) / dt).abs() > 1e-12 {
            return Err(Error::Argument(format!(
                "nonuniform time grid: step {n} has size {step}, expected {dt}"
            )));
        }
    }
    Ok(())
}

/// Anything a realization can be sampled from.
pub trait ParamDomain {
    fn param_space(&self) -> &ParamSpace;
    fn time_grid(&self) -> Option<&[f64]> {
        None
    }
}

impl ParamDomain for ParamSpace {
    fn param_space(&self) -> &ParamSpace {
        self
    }
}

impl ParamDomain for TransientParamSpace {
    fn param_space(&self) -> &ParamSpace {
        &self.space
    }
    fn time_grid(&self) -> Option<&[f64]> {
        Some(&self.times)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    #[default]
    Halton,
    LatinHypercube,
    Normal,
    TensorialUniform,
}

impl Sampling {
    pub const ALL: [Sampling; 5] = [
        Sampling::Uniform,
        Sampling::Halton,
        Sampling::LatinHypercube,
        Sampling::Normal,
        Sampling::TensorialUniform,
    ];

    pub fn code(self) -> u32 {
        match self {
            Sampling::Uniform => 0,
            Sampling::Halton => 1,
            Sampling::LatinHypercube => 2,
            Sampling::Normal => 3,
            Sampling::TensorialUniform => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Sampling::Uniform => "uniform",
            Sampling::Halton => "halton",
            Sampling::LatinHypercube => "latin_hypercube",
            Sampling::Normal => "normal",
            Sampling::TensorialUniform => "tensorial_uniform",
        }
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Sampling::Uniform),
            "halton" => Ok(Sampling::Halton),
            "latin_hypercube" | "lhs" => Ok(Sampling::LatinHypercube),
            "normal" => Ok(Sampling::Normal),
            "tensorial_uniform" | "tensorial" => Ok(Sampling::TensorialUniform),
            other => Err(Error::Config(format!("unknown sampling strategy '{other}'"))),
        }
    }
}

/// A sampled set of parameter vectors, optionally crossed with a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    params: Vec<Vec<f64>>,
    times: Option<Vec<f64>>,
    seed: u64,
    strategy: Sampling,
    bounds: Vec<(f64, f64)>,
}

impl Realization {
    /// Wraps explicitly given parameters (no sampling involved).
    pub fn from_params(
        space: &ParamSpace,
        params: Vec<Vec<f64>>,
        times: Option<Vec<f64>>,
    ) -> Result<Self> {
        for mu in &params {
            if mu.len() != space.dim() {
                return Err(Error::Argument(format!(
                    "parameter of length {} in a {}-dimensional space",
                    mu.len(),
                    space.dim()
                )));
            }
        }
        if let Some(t) = &times {
            check_uniform_grid(t)?;
        }
        Ok(Self {
            params,
            times,
            seed: 0,
            strategy: Sampling::Uniform,
            bounds: space.bounds().to_vec(),
        })
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn param(&self, j: usize) -> &[f64] {
        &self.params[j]
    }

    pub fn nparams(&self) -> usize {
        self.params.len()
    }

    /// Full time grid including `t_0`, if transient.
    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }

    /// Number of time steps (`N_t`); 0 for steady realizations.
    pub fn nsteps(&self) -> usize {
        self.times.as_ref().map_or(0, |t| t.len() - 1)
    }

    pub fn dt(&self) -> Option<f64> {
        self.times.as_ref().map(|t| (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn strategy(&self) -> Sampling {
        self.strategy
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// The first `n` parameters, with the same time grid and provenance.
    pub fn truncated(&self, n: usize) -> Realization {
        let mut r = self.clone();
        r.params.truncate(n);
        r
    }

    /// Drops the time grid.
    pub fn steady(&self) -> Realization {
        let mut r = self.clone();
        r.times = None;
        r
    }
}

/// Radical-inverse Halton point (`index >= 1`) in the unit cube.
pub fn halton_point(index: u64, dims: usize) -> Result<Vec<f64>> {
    if dims > HALTON_PRIMES.len() {
        return Err(Error::UnsupportedDimension {
            dims,
            max: HALTON_PRIMES.len(),
        });
    }
    if index == 0 {
        return Err(Error::Argument("Halton indices start at 1".into()));
    }
    Ok(HALTON_PRIMES[..dims]
        .iter()
        .map(|&base| radical_inverse(index, base))
        .collect())
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// Samples `nparams` points of `domain` with the given strategy.
///
/// Output is a pure function of `(domain, nparams, strategy, seed)`. Transient
/// domains attach their full time grid.
pub fn sample_realization<D: ParamDomain + ?Sized>(
    domain: &D,
    nparams: usize,
    strategy: Sampling,
    seed: u64,
) -> Result<Realization> {
    if nparams == 0 {
        return Err(Error::Argument("nparams must be at least 1".into()));
    }
    let space = domain.param_space();
    let p = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit: Vec<Vec<f64>> = match strategy {
        Sampling::Uniform => (0..nparams)
            .map(|_| (0..p).map(|_| rng.random::<f64>()).collect())
            .collect(),
        Sampling::Halton => (1..=nparams as u64)
            .map(|i| halton_point(i, p))
            .collect::<Result<_>>()?,
        Sampling::LatinHypercube => {
            let perms: Vec<Vec<usize>> = (0..p)
                .map(|_| {
                    let mut perm: Vec<usize> = (0..nparams).collect();
                    perm.shuffle(&mut rng);
                    perm
                })
                .collect();
            (0..nparams)
                .map(|i| {
                    perms
                        .iter()
                        .map(|perm| (perm[i] as f64 + 0.5) / nparams as f64)
                        .collect()
                })
                .collect()
        }
        Sampling::Normal => (0..nparams)
            .map(|_| {
                (0..p)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (0.5 + z / 6.0).clamp(0.0, 1.0)
                    })
                    .collect()
            })
            .collect(),
        Sampling::TensorialUniform => tensor_grid(nparams, p),
    };
    Ok(Realization {
        params: unit.iter().map(|u| space.map_unit(u)).collect(),
        times: domain.time_grid().map(<[f64]>::to_vec),
        seed,
        strategy,
        bounds: space.bounds().to_vec(),
    })
}

/// Cell-midpoint tensor grid with `k = ceil(n^(1/p))` points per axis,
/// enumerated lexicographically (last axis fastest) and truncated to `n`.
fn tensor_grid(n: usize, p: usize) -> Vec<Vec<f64>> {
    let mut k = 1usize;
    while k.checked_pow(p as u32).is_some_and(|kp| kp < n) {
        k += 1;
    }
    let mid = |i: usize| (2 * i + 1) as f64 / (2 * k) as f64;
    (0..n)
        .map(|mut flat| {
            let mut point = vec![0.0; p];
            for d in (0..p).rev() {
                point[d] = mid(flat % k);
                flat /= k;
            }
            point
        })
        .collect()
}
