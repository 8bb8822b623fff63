//! Training a fixed circuit architecture: readout, MSE loss, parameter-shift
//! gradients and Adam.
//!
//! The class-1 probability of an input is `p = (1 - ⟨Z₀⟩) / 2`, read on
//! qubit 0 after running the circuit on the amplitude-encoded input.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::Architecture;
use crate::data::{sample_batch, Sample};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::statevector::{run_circuit, StateVector};

pub const READOUT_QUBIT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 25,
            max_epochs: 300,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Uniform draws on `[0, 2π)`.
pub fn init_params<R: Rng>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| rng.gen_range(0.0..TAU)).collect()
}

fn readout(arch: &Architecture, params: &[f64], input: &StateVector) -> Result<f64> {
    let out = run_circuit(arch, params, input)?;
    Ok((1.0 - out.expectation_z(READOUT_QUBIT)?) / 2.0)
}

/// Class-1 probability for one input vector.
pub fn predict(arch: &Architecture, params: &[f64], x: &[f64]) -> Result<f64> {
    readout(arch, params, &StateVector::amplitude_encode(x)?)
}

pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Arity {
            what: "mse inputs",
            expected: labels.len().max(1),
            actual: predictions.len(),
        });
    }
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (y - p) * (y - p))
        .sum::<f64>()
        / n)
}

/// Loss on a batch together with its exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

/// MSE loss on `batch` and `∂J/∂θ` via the two-point shift rule
/// `∂⟨Z⟩/∂θ = [⟨Z⟩(θ+π/2) - ⟨Z⟩(θ-π/2)] / 2`, chained through `p` and MSE.
pub fn loss_and_gradient(
    arch: &Architecture,
    params: &[f64],
    batch: &[&Sample],
) -> Result<LossGradient> {
    if batch.is_empty() {
        return Err(Error::Arity {
            what: "batch",
            expected: 1,
            actual: 0,
        });
    }
    if params.len() != arch.parameter_count() {
        return Err(Error::Arity {
            what: "circuit parameters",
            expected: arch.parameter_count(),
            actual: params.len(),
        });
    }
    // per sample: (p, y, dp/dθ)
    let per_sample = batch
        .par_iter()
        .map(|s| -> Result<(f64, f64, Vec<f64>)> {
            let input = StateVector::amplitude_encode(&s.pixels)?;
            let p = readout(arch, params, &input)?;
            let mut shifted = params.to_vec();
            let mut dp = Vec::with_capacity(params.len());
            for j in 0..params.len() {
                shifted[j] = params[j] + FRAC_PI_2;
                let plus = readout(arch, &shifted, &input)?;
                shifted[j] = params[j] - FRAC_PI_2;
                let minus = readout(arch, &shifted, &input)?;
                shifted[j] = params[j];
                // p is affine in ⟨Z⟩, so the shift rule carries over unchanged
                dp.push((plus - minus) / 2.0);
            }
            Ok((p, f64::from(s.label), dp))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_sample.len() as f64;
    let mut gradient = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (p, y, dp) in &per_sample {
        let residual = p - y;
        loss += residual * residual;
        for (g, d) in gradient.iter_mut().zip(dp) {
            *g += 2.0 * residual * d / n;
        }
    }
    Ok(LossGradient {
        loss: loss / n,
        gradient,
    })
}

pub fn parameter_shift_gradient(
    arch: &Architecture,
    params: &[f64],
    batch: &[&Sample],
) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(arch, params, batch)?.gradient)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    /// Batch loss observed at each epoch, before that epoch's update.
    pub loss_history: Vec<f64>,
}

/// Runs `cfg.max_epochs` iterations of: draw one random batch, evaluate loss
/// and gradient, take one Adam step.
pub fn train_circuit<R: Rng>(
    arch: &Architecture,
    initial: Vec<f64>,
    train: &[Sample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Arity {
            what: "training set",
            expected: 1,
            actual: 0,
        });
    }
    let mut params = initial;
    let mut state = AdamState::new(params.len());
    let mut loss_history = Vec::with_capacity(cfg.max_epochs);
    let batch_size = cfg.batch_size.min(train.len());
    for epoch in 0..cfg.max_epochs {
        let batch = sample_batch(train, batch_size, rng)?;
        let LossGradient { loss, gradient } = loss_and_gradient(arch, &params, &batch)?;
        if !loss.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("circuit loss at epoch {epoch}")));
        }
        loss_history.push(loss);
        adam_step(&mut params, &gradient, &mut state, &cfg.adam)?;
    }
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}

/// Fraction of samples where `p >= 0.5` agrees with `label == 1`.
pub fn evaluate_accuracy(arch: &Architecture, params: &[f64], data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Arity {
            what: "evaluation set",
            expected: 1,
            actual: 0,
        });
    }
    let correct = data
        .par_iter()
        .map(|s| {
            predict(arch, params, &s.pixels).map(|p| usize::from((p >= 0.5) == (s.label == 1)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}

/// Mean squared error over a whole split (no gradient).
pub fn evaluate_loss(arch: &Architecture, params: &[f64], data: &[&Sample]) -> Result<f64> {
    let preds = data
        .par_iter()
        .map(|s| predict(arch, params, &s.pixels))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = data.iter().map(|s| f64::from(s.label)).collect();
    mse_loss(&preds, &labels)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::circuit::GateDescriptor;
    use crate::statevector::GateType;

    fn rx0(q: usize) -> Architecture {
        Architecture::from_layers(q, vec![vec![GateDescriptor::single(GateType::Rx, 0)]]).unwrap()
    }

    fn basis0(q: usize) -> Vec<f64> {
        let mut x = vec![0.0; 1 << q];
        x[0] = 1.0;
        x
    }

    #[test]
    fn readout_mapping() {
        let x = basis0(2);
        assert_eq!(predict(&Architecture::empty(2), &[], &x).unwrap(), 0.0);
        assert!((predict(&rx0(2), &[PI], &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((predict(&rx0(2), &[PI / 2.0], &x).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn predict_rejects_zero_input() {
        assert!(matches!(
            predict(&rx0(2), &[0.1], &[0.0; 4]),
            Err(Error::ZeroInput)
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.25);
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn shift_rule_on_cosine() {
        // ⟨Z⟩ = cos θ so d⟨Z⟩/dθ = -sin θ = -1 at π/2; dp/dθ = +1/2.
        // With label 0 and p = 1/2: dJ/dθ = 2·(p - 0)·dp/dθ = 1/2.
        let s = Sample {
            pixels: basis0(1),
            label: 0,
        };
        let arch = rx0(1);
        let g = parameter_shift_gradient(&arch, &[PI / 2.0], &[&s]).unwrap();
        let dz = -2.0 * (g[0] / (2.0 * 0.5));
        assert!((dz + 1.0).abs() < 1e-12, "{dz}");
    }

    #[test]
    fn all_noop_has_empty_gradient() {
        let arch = Architecture::from_layers(
            2,
            vec![vec![
                GateDescriptor::single(GateType::NoOp, 0),
                GateDescriptor::single(GateType::NoOp, 1),
            ]],
        )
        .unwrap();
        let s = Sample {
            pixels: basis0(2),
            label: 1,
        };
        assert!(parameter_shift_gradient(&arch, &[], &[&s])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let data = vec![Sample {
            pixels: basis0(2),
            label: 1,
        }];
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = train_circuit(&rx0(2), vec![0.25], &data, &cfg, &mut rng).unwrap();
        assert_eq!(out.params, vec![0.25]);
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn history_length_matches_epochs() {
        let data = vec![Sample {
            pixels: basis0(2),
            label: 1,
        }];
        let cfg = TrainConfig {
            max_epochs: 17,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = train_circuit(&rx0(2), vec![0.25], &data, &cfg, &mut rng).unwrap();
        assert_eq!(out.loss_history.len(), 17);
    }

    #[test]
    fn accuracy_counts_and_tie_rule() {
        // equal superposition gives p = 0.5 exactly, which counts as class 1
        let ones = vec![Sample {
            pixels: vec![1.0, 1.0],
            label: 1,
        }];
        let empty = Architecture::empty(1);
        assert_eq!(predict(&empty, &[], &ones[0].pixels).unwrap(), 0.5);
        assert_eq!(evaluate_accuracy(&empty, &[], &ones).unwrap(), 1.0);
        // the empty circuit on |00⟩ gives p = 0, i.e. class 0 everywhere
        let basis: Vec<Sample> = [0u8, 1, 1, 0, 0]
            .iter()
            .map(|&label| Sample {
                pixels: basis0(2),
                label,
            })
            .collect();
        assert_eq!(
            evaluate_accuracy(&Architecture::empty(2), &[], &basis).unwrap(),
            0.6
        );
        assert!(evaluate_accuracy(&rx0(1), &[0.0], &[]).is_err());
    }

    #[test]
    fn predict_is_bitwise_pure() {
        let arch = rx0(2);
        let x = [0.3, -0.2, 0.9, 0.1];
        let a = predict(&arch, &[1.234], &x).unwrap();
        let b = predict(&arch, &[1.234], &x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
