//! Seeded synthetic weights and calibration statistics.
//!
//! Weights are a clipped zero-mean Gaussian; per-channel activation maxima are
//! log-normal with a small fraction of channels blown up to mimic the
//! activation outliers seen in large language models.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::ActivationSample;
use crate::tensor::{ActivationStats, WeightTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub weight_std: f64,
    pub weight_clip: f64,
    pub act_mu: f64,
    pub act_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "layer".into(),
            rows: 512,
            cols: 512,
            weight_std: 0.2,
            weight_clip: 1.0,
            act_mu: -1.0,
            act_sigma: 1.0,
            outlier_fraction: 0.02,
            outlier_scale: 20.0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "synthetic dims must be positive, got {}x{}",
                self.rows, self.cols
            )));
        }
        let ok = self.weight_std > 0.0
            && self.weight_clip > 0.0
            && self.act_sigma >= 0.0
            && self.act_mu.is_finite()
            && (0.0..=1.0).contains(&self.outlier_fraction)
            && self.outlier_scale > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("bad synthetic spec {self:?}")));
        }
        Ok(())
    }
}

/// One synthetic layer. A pure function of `(spec, seed)`.
pub fn synth_ensemble(spec: &SynthSpec, seed: u64) -> Result<(WeightTensor, ActivationStats)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let normal = Normal::new(0.0, spec.weight_std)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let clip = spec.weight_clip;
    let values: Vec<f64> = (0..spec.rows * spec.cols)
        .map(|_| normal.sample(&mut rng).clamp(-clip, clip))
        .collect();

    let lognormal = LogNormal::new(spec.act_mu, spec.act_sigma)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut channel_max: Vec<f64> = (0..spec.cols).map(|_| lognormal.sample(&mut rng)).collect();

    let n_outliers = (spec.outlier_fraction * spec.cols as f64).round() as usize;
    for c in index::sample(&mut rng, spec.cols, n_outliers.min(spec.cols)) {
        channel_max[c] *= spec.outlier_scale;
    }

    Ok((
        WeightTensor::new(spec.name.clone(), spec.rows, spec.cols, values)?,
        ActivationStats::new(spec.name.clone(), channel_max)?,
    ))
}

/// `layers` independent layers named `{spec.name}.{i}`.
pub fn synth_layers(
    spec: &SynthSpec,
    layers: usize,
    seed: u64,
) -> Result<Vec<(WeightTensor, ActivationStats)>> {
    (0..layers)
        .map(|i| {
            let layer = SynthSpec {
                name: format!("{}.{i}", spec.name),
                ..spec.clone()
            };
            synth_ensemble(&layer, layer_seed(seed, i))
        })
        .collect()
}

/// `tokens` activation rows whose per-channel maxima equal `stats` exactly.
///
/// Entries are uniform in `[-m_c, m_c]`; one token per channel, chosen at
/// random, is pinned to `+-m_c`.
pub fn synth_activations(stats: &ActivationStats, tokens: usize, seed: u64) -> Result<ActivationSample> {
    if tokens == 0 || stats.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cols = stats.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..tokens * cols)
        .map(|i| stats.channel_max[i % cols] * rng.random_range(-1.0..=1.0))
        .collect();
    for (c, &m) in stats.channel_max.iter().enumerate() {
        let t = rng.random_range(0..tokens);
        values[t * cols + c] = if rng.random::<bool>() { m } else { -m };
    }
    ActivationSample::new(tokens, cols, values)
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    // splitmix64 step so neighbouring seeds do not give correlated layers
    let mut z = seed.wrapping_add((layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::analyze_float;

    #[test]
    fn activations_hit_the_recorded_maxima() {
        let stats = ActivationStats::new("a", vec![0.5, 3.0, 40.0]).unwrap();
        let x = synth_activations(&stats, 7, 3).unwrap();
        assert_eq!(x.tokens(), 7);
        assert_eq!(x.channel_max(), stats.channel_max);
        assert_eq!(x, synth_activations(&stats, 7, 3).unwrap());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SynthSpec { rows: 32, cols: 48, ..Default::default() };
        let a = synth_ensemble(&spec, 7).unwrap();
        let b = synth_ensemble(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_ensemble(&spec, 8).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn no_outliers_keeps_lognormal_band() {
        let spec = SynthSpec { outlier_fraction: 0.0, ..Default::default() };
        let (_, stats) = synth_ensemble(&spec, 1).unwrap();
        let lo = (spec.act_mu - 6.0 * spec.act_sigma).exp();
        let hi = (spec.act_mu + 6.0 * spec.act_sigma).exp();
        assert!(stats.channel_max.iter().all(|&m| m >= lo && m <= hi));
    }

    #[test]
    fn default_spec_has_wider_activations_than_weights() {
        let (w, stats) = synth_ensemble(&SynthSpec::default(), 3).unwrap();
        let wr = analyze_float(&w).unwrap();
        assert!(wr.max.abs() < 1.0 && wr.min.abs() < 1.0);
        let weight_range = wr.max - wr.min;
        let act = crate::tensor::analyze_float_values(&stats.channel_max).unwrap();
        assert!(act.max - act.min > 10.0 * weight_range);
    }

    #[test]
    fn non_positive_dims_rejected() {
        let spec = SynthSpec { rows: 0, ..Default::default() };
        assert!(synth_ensemble(&spec, 0).is_err());
    }

    #[test]
    fn layers_get_distinct_names_and_data() {
        let spec = SynthSpec { rows: 8, cols: 8, ..Default::default() };
        let layers = synth_layers(&spec, 3, 11).unwrap();
        assert_eq!(layers[2].0.name(), "layer.2");
        assert_ne!(layers[0].0.values(), layers[1].0.values());
    }
}
