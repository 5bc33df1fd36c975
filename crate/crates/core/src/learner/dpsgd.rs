use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Examples, ModelParams};
use crate::error::{NexusError, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DPConfig {
    /// Per-example L2 clipping norm; `inf` disables clipping.
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub delta: f64,
    pub learning_rate: f64,
}

impl Default for DPConfig {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            noise_multiplier: 1.1,
            batch_size: 4,
            local_epochs: 5,
            delta: 1e-5,
            learning_rate: 0.05,
        }
    }
}

impl DPConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(NexusError::config("dp.clip_norm", "must be positive"));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(NexusError::config("dp.noise_multiplier", "must be finite and >= 0"));
        }
        if self.noise_multiplier > 0.0 && !self.clip_norm.is_finite() {
            return Err(NexusError::config(
                "dp.clip_norm",
                "noise requires a finite clipping norm",
            ));
        }
        if self.batch_size == 0 {
            return Err(NexusError::config("dp.batch_size", "must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(NexusError::config("dp.local_epochs", "must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(NexusError::config("dp.delta", "must be in (0, 1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(NexusError::config("dp.learning_rate", "must be positive"));
        }
        Ok(())
    }

    pub fn steps_for(&self, shard_len: usize) -> usize {
        self.local_epochs * shard_len.div_ceil(self.batch_size)
    }
}

/// Scales `g` down to norm `clip` when it is longer; returns the factor applied.
pub fn clip_in_place(g: &mut [f64], clip: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let factor = clip_factor(norm, clip);
    if factor != 1.0 {
        g.iter_mut().for_each(|v| *v *= factor);
    }
    factor
}

fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainResult {
    pub model: ModelParams,
    pub steps: usize,
}

/// Local DP-SGD: per-example gradients clipped to `clip_norm`, summed, perturbed
/// with `N(0, (sigma C)^2 I)`, divided by the batch size and applied with the
/// configured learning rate. Batches come from a fresh shuffle each epoch.
///
/// Shuffling and noise use separate child streams so the batch order does not
/// depend on the noise level.
pub fn local_train_dpsgd<R: Rng + ?Sized>(
    model: &ModelParams,
    shard: &Examples,
    dp: &DPConfig,
    rng: &mut R,
) -> Result<LocalTrainResult> {
    if shard.is_empty() {
        return Err(NexusError::InvalidArgument("cannot train on an empty shard".into()));
    }
    model.check_examples(shard)?;
    let mut shuffle_rng = SimRng::seed_from_u64(rng.random());
    let mut noise_rng = SimRng::seed_from_u64(rng.random());

    let mut theta = model.clone();
    let dim = shard.dim;
    let classes = shard.classes;
    let bias_at = classes * dim;
    let noise_std = dp.noise_multiplier * dp.clip_norm;
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut err = vec![0.0; classes];
    let mut grad = vec![0.0; theta.len()];
    let mut step = 0usize;

    for _ in 0..dp.local_epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(dp.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = shard.row(i);
                let e_norm2 = theta.output_error(x, shard.labels[i], &mut err);
                let x_norm2: f64 = x.iter().map(|v| v * v).sum();
                let g_norm = (e_norm2 * (x_norm2 + 1.0)).sqrt();
                if !g_norm.is_finite() {
                    return Err(NexusError::NonFiniteGradient { step });
                }
                let factor = clip_factor(g_norm, dp.clip_norm);
                for (c, &e) in err.iter().enumerate() {
                    let s = factor * e;
                    for (g, xv) in grad[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                        *g += s * xv;
                    }
                    grad[bias_at + c] += s;
                }
            }
            if noise_std > 0.0 {
                for g in grad.iter_mut() {
                    let z: f64 = noise_rng.sample(StandardNormal);
                    *g += noise_std * z;
                }
            }
            let scale = dp.learning_rate / batch.len() as f64;
            for (w, g) in theta.values.iter_mut().zip(&grad) {
                *w -= scale * g;
            }
            step += 1;
        }
    }
    if !theta.is_finite() {
        return Err(NexusError::NonFiniteGradient { step });
    }
    Ok(LocalTrainResult {
        model: theta,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::generate_dataset;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand_chacha::ChaCha8Rng;

    /// Unclipped, noiseless minibatch SGD following the same batch order.
    fn plain_sgd(model: &ModelParams, shard: &Examples, dp: &DPConfig, seed: u64) -> ModelParams {
        let mut parent = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffle_rng = SimRng::seed_from_u64(parent.random());
        let mut theta = model.clone();
        let mut order: Vec<usize> = (0..shard.len()).collect();
        let dim = shard.dim;
        for _ in 0..dp.local_epochs {
            order.shuffle(&mut shuffle_rng);
            for batch in order.chunks(dp.batch_size) {
                let mut grad = vec![0.0; theta.len()];
                for &i in batch {
                    let x = shard.row(i);
                    let mut err = vec![0.0; shard.classes];
                    theta.output_error(x, shard.labels[i], &mut err);
                    for (c, &e) in err.iter().enumerate() {
                        for (j, xv) in x.iter().enumerate() {
                            grad[c * dim + j] += e * xv;
                        }
                        grad[shard.classes * dim + c] += e;
                    }
                }
                let scale = dp.learning_rate / batch.len() as f64;
                for (w, g) in theta.values.iter_mut().zip(&grad) {
                    *w -= scale * g;
                }
            }
        }
        theta
    }

    #[test]
    fn noiseless_unclipped_is_plain_sgd_bitwise() {
        let data = generate_dataset(10, 8, 90, 3.0, 2).unwrap();
        let dp = DPConfig {
            clip_norm: f64::INFINITY,
            noise_multiplier: 0.0,
            ..Default::default()
        };
        let start = ModelParams::zeros(10, 8);
        let got = local_train_dpsgd(&start, &data, &dp, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let want = plain_sgd(&start, &data, &dp, 5);
        let bits = |m: &ModelParams| m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&got.model), bits(&want));
    }

    #[test]
    fn step_count_for_reference_shard() {
        let data = generate_dataset(10, 4, 225, 3.0, 2).unwrap();
        let dp = DPConfig::default();
        let out = local_train_dpsgd(
            &ModelParams::zeros(10, 4),
            &data,
            &dp,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(out.steps, 285);
        assert_eq!(dp.steps_for(225), 285);
    }

    #[test]
    fn rejects_empty_shard_and_bad_config() {
        let dp = DPConfig::default();
        let empty = Examples::empty(4, 10);
        assert!(local_train_dpsgd(
            &ModelParams::zeros(10, 4),
            &empty,
            &dp,
            &mut ChaCha8Rng::seed_from_u64(1)
        )
        .is_err());
        let bad = DPConfig {
            clip_norm: f64::INFINITY,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn diverging_training_is_reported() {
        let mut data = generate_dataset(10, 4, 20, 3.0, 2).unwrap();
        data.features[0] = f64::INFINITY;
        let dp = DPConfig::default();
        let err = local_train_dpsgd(
            &ModelParams::zeros(10, 4),
            &data,
            &dp,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(matches!(err, Err(NexusError::NonFiniteGradient { .. })));
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_bound(
            g in proptest::collection::vec(-100.0f64..100.0, 1..64),
            clip in 0.01f64..10.0,
        ) {
            let mut v = g.clone();
            clip_in_place(&mut v, clip);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= clip * (1.0 + 1e-12));
            let orig = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if orig <= clip {
                prop_assert_eq!(v, g);
            }
        }
    }
}
