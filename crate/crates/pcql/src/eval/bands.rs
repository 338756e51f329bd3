//! Gaussian-policy confidence bands: around the deterministic recommendation
//! `f(s)`, sample `Normal(f(s), σ²)` actions, clip to [0, 1], convert to
//! physical doses, and report empirical quantiles per step.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::algorithms::PcqlAgent;
use crate::domain::Episode;
use crate::error::{Error, Result};

/// Default Gaussian std in normalized-action units.
pub const DEFAULT_BAND_SIGMA: f64 = 0.05;
/// Default number of action samples per step.
pub const DEFAULT_BAND_SAMPLES: usize = 100;
/// Default quantiles: a 90% band around the median.
pub const DEFAULT_QUANTILES: (f64, f64, f64) = (0.05, 0.5, 0.95);

/// Per-step physical-dose quantile curves for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCurve {
    pub episode_id: String,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Linear-interpolation empirical quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Samples the band for one episode. Deterministic given `seed`.
pub fn confidence_band(
    agent: &PcqlAgent,
    episode: &Episode,
    sigma: f64,
    n_samples: usize,
    quantiles: (f64, f64, f64),
    seed: u64,
) -> Result<BandCurve> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Config(format!("band sigma must be finite and >= 0, got {sigma}")));
    }
    if n_samples < 2 {
        return Err(Error::Config(format!("band n_samples must be >= 2, got {n_samples}")));
    }
    let (ql, qm, qu) = quantiles;
    if !(0.0..=1.0).contains(&ql) || !(0.0..=1.0).contains(&qm) || !(0.0..=1.0).contains(&qu)
        || !(ql <= qm && qm <= qu)
    {
        return Err(Error::Config(format!(
            "band quantiles must be ordered within [0, 1], got {quantiles:?}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p_max = agent.meta.p_max;
    let mut curve = BandCurve {
        episode_id: episode.episode_id.clone(),
        lower: Vec::with_capacity(episode.transitions.len()),
        median: Vec::with_capacity(episode.transitions.len()),
        upper: Vec::with_capacity(episode.transitions.len()),
    };
    for tr in &episode.transitions {
        let mean = agent.act(&tr.state)?.normalized();
        let mut samples: Vec<f64> = if sigma == 0.0 {
            vec![mean * p_max; n_samples]
        } else {
            let normal = Normal::new(mean, sigma)
                .map_err(|e| Error::Numeric(format!("bad Gaussian: {e}")))?;
            (0..n_samples).map(|_| normal.sample(&mut rng).clamp(0.0, 1.0) * p_max).collect()
        };
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        curve.lower.push(quantile_sorted(&samples, ql));
        curve.median.push(quantile_sorted(&samples, qm));
        curve.upper.push(quantile_sorted(&samples, qu));
    }
    Ok(curve)
}
