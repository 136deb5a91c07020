//! Zero-mean noise models.
//!
//! The security predicates need the band probability `N(x) = Pr[|n| <= x]`
//! and its inverse, defined as the smallest `x >= 0` reaching a given
//! probability. Gaussian noise uses closed forms through the error function;
//! the empirical model works on a measured sample set and is treated as
//! symmetric about zero.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalSampler};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::{erf, erf_inv};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Zero,
    Gaussian {
        sigma: f64,
    },
    /// Measured noise samples. Stored as sorted magnitudes.
    Empirical {
        #[serde(rename = "samples")]
        magnitudes: Vec<f64>,
    },
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!(
                "gaussian sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(NoiseModel::Gaussian { sigma })
    }

    /// Empirical model from raw noise samples.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empirical noise needs at least one sample"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("empirical noise samples must be finite"));
        }
        let mut magnitudes: Vec<f64> = samples.iter().map(|v| v.abs()).collect();
        magnitudes.sort_by(f64::total_cmp);
        Ok(NoiseModel::Empirical { magnitudes })
    }

    /// Check the invariants of a model that may have come from a config file.
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::Zero => Ok(()),
            NoiseModel::Gaussian { sigma } => Self::gaussian(*sigma).map(|_| ()),
            NoiseModel::Empirical { magnitudes } => {
                if magnitudes.is_empty() {
                    return Err(Error::invalid("empirical noise needs at least one sample"));
                }
                if magnitudes.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("empirical noise samples must be finite"));
                }
                Ok(())
            }
        }
    }

    /// Re-sort after deserialization; config files carry raw signed samples.
    pub fn normalized(self) -> Result<Self> {
        match self {
            NoiseModel::Empirical { magnitudes } => Self::empirical(&magnitudes),
            other => {
                other.validate()?;
                Ok(other)
            }
        }
    }

    /// Standard deviation of the model (RMS of the samples for empirical).
    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::Zero => 0.0,
            NoiseModel::Gaussian { sigma } => *sigma,
            NoiseModel::Empirical { magnitudes } => crate::trace::rms(magnitudes),
        }
    }

    fn is_degenerate(&self) -> bool {
        match self {
            NoiseModel::Zero => true,
            NoiseModel::Gaussian { sigma } => *sigma == 0.0,
            NoiseModel::Empirical { magnitudes } => magnitudes.iter().all(|&m| m == 0.0),
        }
    }

    /// `N(x) = Pr[|n| <= x]`.
    pub fn cdf_band(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::invalid(format!("band half-width must be >= 0, got {x}")));
        }
        if self.is_degenerate() {
            return Ok(1.0);
        }
        Ok(match self {
            NoiseModel::Zero => 1.0,
            NoiseModel::Gaussian { sigma } => erf(x / (sigma * std::f64::consts::SQRT_2)),
            NoiseModel::Empirical { magnitudes } => {
                let count = magnitudes.partition_point(|&m| m <= x);
                count as f64 / magnitudes.len() as f64
            }
        })
    }

    /// `N^-1(eps)`, the smallest `x >= 0` with `N(x) = eps`.
    ///
    /// The empirical model interpolates linearly between the points
    /// `(i / n, |n|_(i))` anchored at `(0, 0)`.
    pub fn inverse(&self, eps: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::invalid(format!("probability must lie in [0, 1), got {eps}")));
        }
        Ok(self.inverse_unchecked(eps))
    }

    /// Like [`inverse`](Self::inverse) but also defined at `eps = 1`
    /// (infinite for gaussian noise, the largest magnitude for empirical).
    pub(crate) fn inverse_unchecked(&self, eps: f64) -> f64 {
        if eps <= 0.0 || self.is_degenerate() {
            return 0.0;
        }
        match self {
            NoiseModel::Zero => 0.0,
            NoiseModel::Gaussian { sigma } => {
                if eps >= 1.0 {
                    f64::INFINITY
                } else {
                    sigma * std::f64::consts::SQRT_2 * erf_inv(eps)
                }
            }
            NoiseModel::Empirical { magnitudes } => {
                let n = magnitudes.len();
                let pos = eps.min(1.0) * n as f64;
                let i = pos.floor() as usize;
                let frac = pos - i as f64;
                let at = |k: usize| if k == 0 { 0.0 } else { magnitudes[k - 1] };
                if i >= n {
                    at(n)
                } else {
                    at(i) + (at(i + 1) - at(i)) * frac
                }
            }
        }
    }

    /// Percentile point function `x` with `Pr[n <= x] = p`, for `p` in `[0.5, 1)`.
    ///
    /// For symmetric zero-mean noise `inverse(eps) == ppf((1 + eps) / 2)`.
    pub fn ppf(&self, p: f64) -> Result<f64> {
        if !(0.5..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "ppf is defined on [0.5, 1) for symmetric noise, got {p}"
            )));
        }
        if p == 0.5 || self.is_degenerate() {
            return Ok(0.0);
        }
        Ok(match self {
            NoiseModel::Gaussian { sigma } => Normal::new(0.0, *sigma)
                .map_err(|e| Error::invalid(e.to_string()))?
                .inverse_cdf(p),
            _ => self.inverse_unchecked(2.0 * p - 1.0),
        })
    }

    /// `count` samples, deterministic under `seed`.
    pub fn draw(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            NoiseModel::Zero => vec![0.0; count],
            NoiseModel::Gaussian { sigma } if *sigma == 0.0 => vec![0.0; count],
            NoiseModel::Gaussian { sigma } => {
                let dist = NormalSampler::new(0.0, *sigma).expect("sigma validated");
                dist.sample_iter(&mut rng).take(count).collect()
            }
            NoiseModel::Empirical { magnitudes } => (0..count)
                .map(|_| {
                    let m = magnitudes[rng.random_range(0..magnitudes.len())];
                    if rng.random::<bool>() {
                        m
                    } else {
                        -m
                    }
                })
                .collect(),
        }
    }
}

/// Population standard deviation about the sample mean.
pub fn estimate_sigma(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let m = crate::trace::mean(samples);
    (samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / samples.len() as f64).sqrt()
}
