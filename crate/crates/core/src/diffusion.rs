//! Diffusion process, time grids, and forward sampling.
//!
//! The process is the variance-exploding form with zero drift: noising to
//! level t adds N(0, t^2 I), so sigma(t) = t and the terminal prior is
//! N(0, sigma_max^2 I). Everything downstream (posterior weights, the
//! probability flow field, samplers) assumes this parameterization.
//!
//! Randomness is organized as substreams: one master seed, and each
//! (grid index, sample index) pair gets its own counter-mode stream, so
//! batches can be generated in parallel without changing the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{PspcError, Result};
use crate::store::dataset::ImageDataset;

/// Noise process parameters. sigma(t) = t; the listed values only bound
/// the time grids built from the process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionProcess {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for DiffusionProcess {
    fn default() -> Self {
        DiffusionProcess {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
        }
    }
}

impl DiffusionProcess {
    pub fn new(sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min) {
            return Err(PspcError::ConfigError(format!(
                "need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
            )));
        }
        if !(rho > 0.0) {
            return Err(PspcError::ConfigError(format!("rho must be positive, got {rho}")));
        }
        Ok(DiffusionProcess {
            sigma_min,
            sigma_max,
            rho,
        })
    }

    /// Noise level at time t (identity under this parameterization).
    #[inline]
    pub fn sigma(&self, t: f64) -> f64 {
        t
    }
}

/// A strictly decreasing list of positive times, optionally terminated by
/// an exact 0 for sampler use.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSchedule {
    positive: Vec<f64>,
    terminal_zero: bool,
}

impl TimeSchedule {
    /// Validates and wraps a raw list. A single trailing 0 is allowed;
    /// everything before it must be positive, finite, strictly decreasing.
    pub fn new(ts: Vec<f64>) -> Result<Self> {
        if ts.is_empty() {
            return Err(PspcError::ConfigError("empty time schedule".into()));
        }
        let terminal_zero = *ts.last().unwrap() == 0.0;
        let positive = if terminal_zero {
            ts[..ts.len() - 1].to_vec()
        } else {
            ts
        };
        if positive.is_empty() {
            return Err(PspcError::ConfigError(
                "schedule needs at least one positive time".into(),
            ));
        }
        for &t in &positive {
            if !t.is_finite() || t <= 0.0 {
                return Err(PspcError::ConfigError(format!(
                    "schedule time {t} is not a positive finite value"
                )));
            }
        }
        for pair in positive.windows(2) {
            if pair[1] >= pair[0] {
                return Err(PspcError::ConfigError(format!(
                    "schedule must be strictly decreasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(TimeSchedule {
            positive,
            terminal_zero,
        })
    }

    /// The positive times, largest first.
    pub fn positive(&self) -> &[f64] {
        &self.positive
    }

    pub fn has_terminal_zero(&self) -> bool {
        self.terminal_zero
    }

    /// The full list including the trailing 0 when present.
    pub fn all(&self) -> Vec<f64> {
        let mut ts = self.positive.clone();
        if self.terminal_zero {
            ts.push(0.0);
        }
        ts
    }

    /// Drops the trailing 0, if any.
    pub fn without_terminal_zero(&self) -> TimeSchedule {
        TimeSchedule {
            positive: self.positive.clone(),
            terminal_zero: false,
        }
    }
}

/// The rho-warped sampling grid: n positive times from sigma_max down to
/// sigma_min plus a terminal 0. Interior points follow
/// (sigma_max^(1/rho) + i/(n-1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho;
/// both endpoints are pinned to the exact configured values so grids of
/// different lengths share them bit for bit.
pub fn edm_schedule(process: &DiffusionProcess, n: usize) -> Result<TimeSchedule> {
    if n < 2 {
        return Err(PspcError::ConfigError(format!(
            "sampling grid needs at least 2 positive times, got {n}"
        )));
    }
    let inv_rho = 1.0 / process.rho;
    let a = process.sigma_max.powf(inv_rho);
    let b = process.sigma_min.powf(inv_rho);
    let mut ts = Vec::with_capacity(n + 1);
    ts.push(process.sigma_max);
    for i in 1..n - 1 {
        let frac = i as f64 / (n - 1) as f64;
        ts.push((a + frac * (b - a)).powf(process.rho));
    }
    ts.push(process.sigma_min);
    ts.push(0.0);
    TimeSchedule::new(ts)
}

/// A geometrically spaced grid of positive times, increasing, endpoints
/// included exactly.
pub fn log_uniform_grid(t_lo: f64, t_hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(t_lo > 0.0 && t_lo.is_finite()) || !(t_hi > t_lo) || !t_hi.is_finite() {
        return Err(PspcError::ConfigError(format!(
            "need 0 < t_lo < t_hi, got {t_lo}, {t_hi}"
        )));
    }
    if count < 2 {
        return Err(PspcError::ConfigError(format!(
            "grid needs at least 2 points, got {count}"
        )));
    }
    let (lo, hi) = (t_lo.ln(), t_hi.ln());
    let mut ts = Vec::with_capacity(count);
    ts.push(t_lo);
    for k in 1..count - 1 {
        let frac = k as f64 / (count - 1) as f64;
        ts.push((lo + frac * (hi - lo)).exp());
    }
    ts.push(t_hi);
    Ok(ts)
}

/// Converts a denoiser output into the score of the noised marginal:
/// score = (x_hat - z) / t^2.
pub fn denoiser_to_score(x_hat: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
    if x_hat.len() != z.len() {
        return Err(PspcError::ShapeMismatch(format!(
            "x_hat has {} values, z has {}",
            x_hat.len(),
            z.len()
        )));
    }
    if !(t > 0.0) {
        return Err(PspcError::DomainError(format!("t must be positive, got {t}")));
    }
    let inv = 1.0 / (t * t);
    Ok(x_hat
        .iter()
        .zip(z)
        .map(|(&x, &zi)| (x - zi) * inv)
        .collect())
}

/// Inverse of [`denoiser_to_score`]: x_hat = z + t^2 * score.
pub fn score_to_denoiser(score: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
    if score.len() != z.len() {
        return Err(PspcError::ShapeMismatch(format!(
            "score has {} values, z has {}",
            score.len(),
            z.len()
        )));
    }
    if !(t > 0.0) {
        return Err(PspcError::DomainError(format!("t must be positive, got {t}")));
    }
    let t2 = t * t;
    Ok(score
        .iter()
        .zip(z)
        .map(|(&s, &zi)| zi + t2 * s)
        .collect())
}

/// Mixes an index into a master seed (splitmix64 finalizer). Used to give
/// every grid point its own seed without correlating streams.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A counter-mode generator for one (seed, stream) pair. Streams with the
/// same seed are independent, so per-sample streams parallelize cleanly.
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One forward-process draw: z = x_source + t * eps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSample {
    pub z: Vec<f64>,
    pub source: usize,
}

/// Draws `count` forward samples at level t. Each sample uses its own
/// stream of `seed`: first one uniform source index, then one standard
/// normal per value. Sample k of any run equals sample k of a longer run
/// with the same seed.
pub fn sample_forward(
    dataset: &ImageDataset,
    t: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<ForwardSample>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(PspcError::DomainError(format!(
            "noise level must be positive and finite, got {t}"
        )));
    }
    let n = dataset.n();
    let len = dataset.shape().len();
    Ok((0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream_rng(seed, k as u64);
            let source = rng.random_range(0..n);
            let img = dataset.image(source);
            let mut z = Vec::with_capacity(len);
            for &x in img {
                let eps: f64 = rng.sample(StandardNormal);
                z.push(x + t * eps);
            }
            ForwardSample { z, source }
        })
        .collect())
}

/// Draws `count` prior samples z ~ N(0, sigma_max^2 I), one stream each.
pub fn sample_prior(len: usize, sigma_max: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(sigma_max > 0.0) || !sigma_max.is_finite() {
        return Err(PspcError::DomainError(format!(
            "prior scale must be positive and finite, got {sigma_max}"
        )));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream_rng(seed, k as u64);
            (0..len)
                .map(|_| {
                    let eps: f64 = rng.sample(StandardNormal);
                    sigma_max * eps
                })
                .collect()
        })
        .collect())
}
