//! The search loop: each episode grows a circuit from empty, one sampled
//! layer at a time, trains it, scores it on the validation split, and feeds
//! the scores back to the controller.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{ActionSpace, Architecture};
use crate::controller::{
    Baseline, EpisodeTrace, LayerStep, PolicyConfig, PolicyNetwork, ReinforceConfig,
};
use crate::data::{DataSplits, Sample};
use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::trainer::{evaluate_accuracy, evaluate_loss, init_params, train_circuit, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Validation accuracy.
    Accuracy,
    /// `1 - MSE` over the validation split.
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub embed_dim: usize,
    pub encoder_width: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let p = PolicyConfig::new(2);
        Self {
            embed_dim: p.embed_dim,
            encoder_width: p.encoder_width,
            hidden: p.hidden,
            adam: p.adam,
            bn_eps: p.bn_eps,
            bn_momentum: p.bn_momentum,
        }
    }
}

impl ControllerConfig {
    pub fn policy(&self, num_actions: usize) -> PolicyConfig {
        PolicyConfig {
            num_actions,
            embed_dim: self.embed_dim,
            encoder_width: self.encoder_width,
            hidden: self.hidden,
            adam: self.adam,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub max_epochs: usize,
    pub max_layers: usize,
    pub gates_per_layer: usize,
    pub warm_start: bool,
    pub seed: u64,
    pub reward: RewardKind,
    pub reinforce: ReinforceConfig,
    pub train: TrainConfig,
    pub controller: ControllerConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            max_layers: 5,
            gates_per_layer: 8,
            warm_start: true,
            seed: 0,
            reward: RewardKind::Accuracy,
            reinforce: ReinforceConfig::default(),
            train: TrainConfig::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_layers == 0 || self.gates_per_layer == 0 {
            return Err(Error::Config(
                "max_layers and gates_per_layer must be at least 1".into(),
            ));
        }
        let g = self.reinforce.gamma;
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {g}")));
        }
        let d = self.reinforce.baseline_decay;
        if !(0.0..1.0).contains(&d) {
            return Err(Error::Config(format!(
                "baseline_decay must lie in [0, 1), got {d}"
            )));
        }
        self.train.validate()?;
        self.controller.policy(2).validate()
    }
}

/// Number of qubits needed to amplitude-encode the samples.
pub fn qubits_for(data: &DataSplits) -> Result<usize> {
    let len = data
        .train()
        .first()
        .map(|s| s.pixels.len())
        .ok_or(Error::Arity {
            what: "training set",
            expected: 1,
            actual: 0,
        })?;
    if !len.is_power_of_two() || len < 2 {
        return Err(Error::Dimension {
            expected: len.next_power_of_two().max(2),
            actual: len,
        });
    }
    Ok(len.trailing_zeros() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub actions: Vec<usize>,
    pub reward: f64,
    pub validation_accuracy: f64,
    pub gates: usize,
    pub params: usize,
    /// Circuit training hit a non-finite loss; the reward was set to zero.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub architecture: Architecture,
    pub layers: Vec<LayerRecord>,
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
    pub validation_accuracy: f64,
    pub best_validation_accuracy: f64,
    pub gradient_norm: f64,
    pub controller_updated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCircuit {
    pub episode: usize,
    pub architecture: Architecture,
    pub params: Vec<f64>,
    pub validation_accuracy: f64,
    pub gates: usize,
    pub parameters: usize,
}

impl BestCircuit {
    /// Higher validation accuracy wins; ties go to fewer gates, then fewer
    /// parameters.
    fn beaten_by(&self, acc: f64, gates: usize, params: usize) -> bool {
        (acc, std::cmp::Reverse(gates), std::cmp::Reverse(params))
            > (
                self.validation_accuracy,
                std::cmp::Reverse(self.gates),
                std::cmp::Reverse(self.parameters),
            )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub episodes: Vec<EpisodeRecord>,
    pub best: Option<BestCircuit>,
    /// Accuracy of the best circuit on the test split, measured once after
    /// the last episode.
    pub test_accuracy: Option<f64>,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    TrainLoss {
        episode: usize,
        layer: usize,
        epoch: usize,
        loss: f64,
    },
    Layer {
        episode: usize,
        layer: usize,
        reward: f64,
        val_acc: f64,
        gates: usize,
        params: usize,
        failed: bool,
        wall_ms: u64,
    },
    Episode {
        episode: usize,
        #[serde(rename = "return")]
        discounted_return: f64,
        val_acc: f64,
        best_val_acc: f64,
        gates: usize,
        params: usize,
        gradient_norm: f64,
        wall_ms: u64,
    },
    Final {
        episodes: usize,
        val_acc: Option<f64>,
        test_acc: Option<f64>,
        gates: Option<usize>,
        params: Option<usize>,
    },
}

pub trait MetricsSink {
    fn emit(&mut self, metric: &Metric) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn emit(&mut self, _: &Metric) -> Result<()> {
        Ok(())
    }
}

/// Writes one JSON object per line and flushes after each.
pub struct JsonLinesSink<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricsSink for JsonLinesSink<W> {
    fn emit(&mut self, metric: &Metric) -> Result<()> {
        let line = serde_json::to_string(metric)?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::Checkpoint(format!("metrics stream: {e}")))
    }
}

impl MetricsSink for Vec<Metric> {
    fn emit(&mut self, metric: &Metric) -> Result<()> {
        self.push(metric.clone());
        Ok(())
    }
}

/// Everything needed to continue a search after the last finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub version: u32,
    pub config: SearchConfig,
    pub num_qubits: usize,
    pub policy: PolicyNetwork,
    pub baseline: Baseline,
    pub rng: ChaCha8Rng,
    pub record: SearchRecord,
}

impl SearchState {
    pub fn new(config: SearchConfig, num_qubits: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let actions = ActionSpace::new(num_qubits).size();
        let policy = PolicyNetwork::new(config.controller.policy(actions), &mut rng)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config,
            num_qubits,
            policy,
            baseline: Baseline::default(),
            rng,
            record: SearchRecord::default(),
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.record.episodes.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        write_atomic(path, &json)
    }

    /// Loads a checkpoint and checks it belongs to a run with `config`.
    pub fn load(path: &Path, config: &SearchConfig, num_qubits: usize) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let state: SearchState = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if state.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                state.version
            )));
        }
        if state.config != *config || state.num_qubits != num_qubits {
            return Err(Error::Checkpoint(
                "checkpoint was written by a run with a different configuration".into(),
            ));
        }
        let actions = ActionSpace::new(num_qubits).size();
        state
            .policy
            .check_shapes(&config.controller.policy(actions))?;
        Ok(state)
    }
}

/// Writes to a sibling temporary file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Validation reward for a trained circuit, in `[0, 1]`.
pub fn compute_reward(
    kind: RewardKind,
    arch: &Architecture,
    params: &[f64],
    valid: &[Sample],
) -> Result<f64> {
    match kind {
        RewardKind::Accuracy => evaluate_accuracy(arch, params, valid),
        RewardKind::Loss => {
            let refs: Vec<&Sample> = valid.iter().collect();
            Ok(1.0 - evaluate_loss(arch, params, &refs)?)
        }
    }
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Runs one episode and the controller update that follows it.
pub fn run_episode(
    state: &mut SearchState,
    data: &DataSplits,
    sink: &mut dyn MetricsSink,
) -> Result<EpisodeRecord> {
    let cfg = state.config;
    let episode = state.episodes_done();
    let episode_start = Instant::now();
    let mut arch = Architecture::empty(state.num_qubits);
    let mut params: Vec<f64> = Vec::new();
    let mut steps = Vec::with_capacity(cfg.max_layers);
    let mut layers = Vec::with_capacity(cfg.max_layers);

    for layer in 0..cfg.max_layers {
        let layer_start = Instant::now();
        let prefix = arch.action_sequence();
        let sampled = state
            .policy
            .sample_layer(&prefix, cfg.gates_per_layer, &mut state.rng)?;
        arch = arch.append_layer(&sampled.actions, cfg.max_layers)?;

        let fresh = arch.parameter_count() - params.len();
        let initial = if cfg.warm_start {
            let mut p = params.clone();
            p.extend(init_params(fresh, &mut state.rng));
            p
        } else {
            init_params(arch.parameter_count(), &mut state.rng)
        };

        let (trained, failed) = match train_circuit(
            &arch,
            initial.clone(),
            data.train(),
            &cfg.train,
            &mut state.rng,
        ) {
            Ok(outcome) => {
                for (epoch, &loss) in outcome.loss_history.iter().enumerate() {
                    sink.emit(&Metric::TrainLoss {
                        episode,
                        layer,
                        epoch,
                        loss,
                    })?;
                }
                (outcome.params, false)
            }
            Err(Error::NonFinite(what)) => {
                tracing::warn!(episode, layer, %what, "circuit training diverged, reward set to 0");
                (initial, true)
            }
            Err(e) => return Err(e),
        };
        params = trained;

        let validation_accuracy = evaluate_accuracy(&arch, &params, data.valid())?;
        let reward = if failed {
            0.0
        } else {
            match cfg.reward {
                RewardKind::Accuracy => validation_accuracy,
                kind => compute_reward(kind, &arch, &params, data.valid())?,
            }
        };
        let (gates, n_params) = (arch.gate_count(), arch.parameter_count());

        let improves = match &state.record.best {
            None => true,
            Some(best) => best.beaten_by(validation_accuracy, gates, n_params),
        };
        if improves && !failed {
            state.record.best = Some(BestCircuit {
                episode,
                architecture: arch.clone(),
                params: params.clone(),
                validation_accuracy,
                gates,
                parameters: n_params,
            });
        }

        sink.emit(&Metric::Layer {
            episode,
            layer,
            reward,
            val_acc: validation_accuracy,
            gates,
            params: n_params,
            failed,
            wall_ms: elapsed_ms(layer_start),
        })?;
        let actions: Vec<usize> = sampled.actions.iter().map(|a| a.0).collect();
        steps.push(LayerStep {
            prefix: prefix.iter().map(|a| a.0).collect(),
            actions: actions.clone(),
            log_probs: sampled.log_probs,
            reward,
        });
        layers.push(LayerRecord {
            actions,
            reward,
            validation_accuracy,
            gates,
            params: n_params,
            failed,
        });
    }

    let trace = EpisodeTrace::new(steps, cfg.reinforce.gamma);
    let report = state
        .policy
        .reinforce_update(&trace, &cfg.reinforce, &mut state.baseline)?;

    let best_validation_accuracy = state
        .record
        .best
        .as_ref()
        .map_or(0.0, |b| b.validation_accuracy);
    let record = EpisodeRecord {
        episode,
        validation_accuracy: layers.last().map_or(0.0, |l| l.validation_accuracy),
        rewards: trace.rewards(),
        discounted_return: trace.discounted_return,
        architecture: arch,
        layers,
        best_validation_accuracy,
        gradient_norm: report.gradient_norm,
        controller_updated: report.applied,
    };
    sink.emit(&Metric::Episode {
        episode,
        discounted_return: record.discounted_return,
        val_acc: record.validation_accuracy,
        best_val_acc: best_validation_accuracy,
        gates: record.architecture.gate_count(),
        params: record.architecture.parameter_count(),
        gradient_norm: report.gradient_norm,
        wall_ms: elapsed_ms(episode_start),
    })?;
    state.record.episodes.push(record.clone());
    Ok(record)
}

/// Runs the remaining episodes of `state`, checkpointing after each one when
/// `checkpoint` is given, then scores the best circuit on the test split.
pub fn continue_search(
    mut state: SearchState,
    data: &DataSplits,
    sink: &mut dyn MetricsSink,
    checkpoint: Option<&Path>,
) -> Result<SearchRecord> {
    while state.episodes_done() < state.config.max_epochs {
        let rec = run_episode(&mut state, data, sink)?;
        tracing::info!(
            episode = rec.episode,
            val_acc = rec.validation_accuracy,
            best = rec.best_validation_accuracy,
            "episode finished"
        );
        if let Some(path) = checkpoint {
            state.save(path)?;
        }
    }
    let mut record = state.record;
    if let Some(best) = &record.best {
        record.test_accuracy = Some(evaluate_accuracy(
            &best.architecture,
            &best.params,
            data.test(),
        )?);
    }
    let best = record.best.as_ref();
    sink.emit(&Metric::Final {
        episodes: record.episodes.len(),
        val_acc: best.map(|b| b.validation_accuracy),
        test_acc: record.test_accuracy,
        gates: best.map(|b| b.gates),
        params: best.map(|b| b.parameters),
    })?;
    Ok(record)
}

/// A full search from scratch, without checkpoints.
pub fn run_search(
    cfg: &SearchConfig,
    data: &DataSplits,
    sink: &mut dyn MetricsSink,
) -> Result<SearchRecord> {
    let state = SearchState::new(*cfg, qubits_for(data)?)?;
    continue_search(state, data, sink, None)
}

impl SearchConfig {
    /// The full-scale settings.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Reduced budgets that finish in minutes.
    pub fn desk() -> Self {
        Self {
            max_epochs: 10,
            max_layers: 2,
            gates_per_layer: 4,
            train: TrainConfig {
                max_epochs: 30,
                adam: AdamConfig {
                    learning_rate: 0.05,
                    ..AdamConfig::default()
                },
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }
}
