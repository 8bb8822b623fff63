//! The architecture controller: an LSTM policy over gate actions trained by
//! Monte Carlo policy gradient.
//!
//! Network: `embedding → BN → linear → ReLU → LSTM → BN → linear → softmax`.
//! The observation for a layer is the action sequence of the current
//! architecture (a dedicated start token when it is empty). After running the
//! LSTM over it, the policy samples `L` gates autoregressively, feeding each
//! sampled action back as the next input.
//!
//! Batch-norm uses running statistics while sampling (one position at a
//! time) and per-sequence batch statistics in the update pass, where one
//! layer's sequence is the batch.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::ActionIndex;
use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, linear_backward, linear_forward,
    log_softmax, sample_categorical, softmax, BatchStats, LstmWeights, Param, RunningStats,
};
use crate::optim::{adam_step, AdamConfig, AdamState};

/// Index of each tensor in [`PolicyNetwork::params`].
pub const EMBED: usize = 0;
pub const ENC_GAMMA: usize = 1;
pub const ENC_BETA: usize = 2;
pub const ENC_W: usize = 3;
pub const ENC_B: usize = 4;
pub const LSTM_W_IH: usize = 5;
pub const LSTM_W_HH: usize = 6;
pub const LSTM_B: usize = 7;
pub const DEC_GAMMA: usize = 8;
pub const DEC_BETA: usize = 9;
pub const DEC_W: usize = 10;
pub const DEC_B: usize = 11;
const PARAM_COUNT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub num_actions: usize,
    pub embed_dim: usize,
    pub encoder_width: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl PolicyConfig {
    pub fn new(num_actions: usize) -> Self {
        Self {
            num_actions,
            embed_dim: 32,
            encoder_width: 100,
            hidden: 100,
            adam: AdamConfig::default(),
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.num_actions < 2
            || self.embed_dim == 0
            || self.encoder_width == 0
            || self.hidden == 0
        {
            return Err(Error::Config(format!(
                "controller dimensions must be positive with at least 2 actions: {self:?}"
            )));
        }
        Ok(())
    }

    fn shapes(&self) -> [(&'static str, usize, usize); PARAM_COUNT] {
        let (a, e, w, h) = (
            self.num_actions,
            self.embed_dim,
            self.encoder_width,
            self.hidden,
        );
        [
            ("embedding", a + 1, e),
            ("encoder.bn.gamma", e, 1),
            ("encoder.bn.beta", e, 1),
            ("encoder.linear.weight", w, e),
            ("encoder.linear.bias", w, 1),
            ("lstm.weight_ih", 4 * h, w),
            ("lstm.weight_hh", 4 * h, h),
            ("lstm.bias", 4 * h, 1),
            ("decoder.bn.gamma", h, 1),
            ("decoder.bn.beta", h, 1),
            ("decoder.linear.weight", a, h),
            ("decoder.linear.bias", a, 1),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightGroup {
    Embedding,
    Encoder,
    Lstm,
    Decoder,
}

impl WeightGroup {
    pub const ALL: [WeightGroup; 4] = [
        WeightGroup::Embedding,
        WeightGroup::Encoder,
        WeightGroup::Lstm,
        WeightGroup::Decoder,
    ];

    /// Parameter slots belonging to this group.
    pub fn members(self) -> std::ops::Range<usize> {
        match self {
            WeightGroup::Embedding => EMBED..ENC_GAMMA,
            WeightGroup::Encoder => ENC_GAMMA..LSTM_W_IH,
            WeightGroup::Lstm => LSTM_W_IH..DEC_GAMMA,
            WeightGroup::Decoder => DEC_GAMMA..PARAM_COUNT,
        }
    }
}

impl fmt::Display for WeightGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            WeightGroup::Embedding => "embedding",
            WeightGroup::Encoder => "encoder",
            WeightGroup::Lstm => "lstm",
            WeightGroup::Decoder => "decoder",
        };
        f.write_str(name)
    }
}

/// Gradient buffers aligned with [`PolicyNetwork::params`].
pub type Gradients = Vec<Vec<f64>>;

/// One sampled layer as remembered for the update pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStep {
    /// Action sequence of the architecture the layer was sampled from.
    pub prefix: Vec<usize>,
    pub actions: Vec<usize>,
    /// Log-probabilities at sampling time, one per action.
    pub log_probs: Vec<f64>,
    pub reward: f64,
}

/// A full episode: sampled layers, their rewards, and the discounted return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<LayerStep>,
    pub gamma: f64,
    pub discounted_return: f64,
}

impl EpisodeTrace {
    pub fn new(steps: Vec<LayerStep>, gamma: f64) -> Self {
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        Self {
            discounted_return: compute_return(&rewards, gamma),
            steps,
            gamma,
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Copy with every reward multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let steps = self
            .steps
            .iter()
            .map(|s| LayerStep {
                reward: s.reward * c,
                ..s.clone()
            })
            .collect();
        Self::new(steps, self.gamma)
    }
}

/// `Σ_t γ^t r_t` with `t` counted from the first layer.
pub fn compute_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// `G_t = Σ_{k≥t} γ^{k-t} r_k` for every `t`.
pub fn rewards_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// How each step's log-probability is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Credit {
    /// Step `t` is weighted by its discounted reward-to-go.
    RewardToGo,
    /// Every step is weighted by the full episode return.
    FullReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReinforceConfig {
    pub gamma: f64,
    pub credit: Credit,
    pub baseline: bool,
    pub baseline_decay: f64,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            credit: Credit::RewardToGo,
            baseline: true,
            baseline_decay: 0.9,
        }
    }
}

/// Bias-corrected exponential moving average of observed returns, kept per
/// layer position (reward-to-go shrinks with position).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    ema: Vec<f64>,
    observations: Vec<u32>,
}

impl Baseline {
    pub fn value(&self, position: usize, decay: f64) -> f64 {
        match self.observations.get(position) {
            Some(&n) if n > 0 => self.ema[position] / (1.0 - decay.powi(n as i32)),
            _ => 0.0,
        }
    }

    pub fn observe(&mut self, position: usize, value: f64, decay: f64) {
        if self.ema.len() <= position {
            self.ema.resize(position + 1, 0.0);
            self.observations.resize(position + 1, 0);
        }
        self.ema[position] = decay * self.ema[position] + (1.0 - decay) * value;
        self.observations[position] += 1;
    }
}

/// Per-step weights on `log P(a)`: the credited return minus the baseline.
pub fn step_weights(trace: &EpisodeTrace, cfg: &ReinforceConfig, baseline: &Baseline) -> Vec<f64> {
    let credited = credited_returns(trace, cfg);
    credited
        .iter()
        .enumerate()
        .map(|(t, g)| {
            if cfg.baseline {
                g - baseline.value(baseline_slot(cfg, t), cfg.baseline_decay)
            } else {
                *g
            }
        })
        .collect()
}

fn credited_returns(trace: &EpisodeTrace, cfg: &ReinforceConfig) -> Vec<f64> {
    match cfg.credit {
        Credit::RewardToGo => rewards_to_go(&trace.rewards(), trace.gamma),
        Credit::FullReturn => vec![trace.discounted_return; trace.steps.len()],
    }
}

fn baseline_slot(cfg: &ReinforceConfig, t: usize) -> usize {
    match cfg.credit {
        Credit::RewardToGo => t,
        Credit::FullReturn => 0,
    }
}

/// Result of sampling one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledLayer {
    pub actions: Vec<ActionIndex>,
    pub log_probs: Vec<f64>,
    /// The categorical distribution each action was drawn from.
    pub distributions: Vec<Vec<f64>>,
}

impl SampledLayer {
    pub fn log_prob_sum(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub weights: Vec<f64>,
    pub gradient_norm: f64,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNetwork {
    config: PolicyConfig,
    params: Vec<Param>,
    encoder_stats: RunningStats,
    decoder_stats: RunningStats,
    optimizer: Vec<AdamState>,
}

struct LayerCache {
    tokens: Vec<usize>,
    enc_in: Vec<Vec<f64>>,
    enc_bn: crate::nn::BatchNormCache,
    enc_pre: Vec<Vec<f64>>,
    lstm: Vec<crate::nn::LstmStep>,
    decode_from: usize,
    dec_bn_in: Vec<Vec<f64>>,
    dec_bn: crate::nn::BatchNormCache,
    probs: Vec<Vec<f64>>,
    chosen_log_prob: f64,
}

impl PolicyNetwork {
    /// Uniform `[-k, k]` initialization with `k = 1/√fan_in` per matrix; the
    /// embedding table is treated as a one-hot layer (`fan_in = 1`).
    pub fn new<R: Rng>(config: PolicyConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        let fan_in = [
            1,
            0,
            0,
            config.embed_dim,
            config.embed_dim,
            config.encoder_width,
            config.hidden,
            config.hidden,
            0,
            0,
            config.hidden,
            config.hidden,
        ];
        let params: Vec<Param> = shapes
            .iter()
            .zip(fan_in)
            .enumerate()
            .map(|(slot, (&(name, rows, cols), fan))| match slot {
                ENC_GAMMA | DEC_GAMMA => Param::filled(name, rows, cols, 1.0),
                ENC_BETA | DEC_BETA => Param::zeros(name, rows, cols),
                _ => Param::uniform(name, rows, cols, 1.0 / (fan as f64).sqrt(), rng),
            })
            .collect();
        let optimizer = params.iter().map(|p| AdamState::new(p.len())).collect();
        Ok(Self {
            config,
            encoder_stats: RunningStats::new(config.embed_dim),
            decoder_stats: RunningStats::new(config.hidden),
            params,
            optimizer,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_actions(&self) -> usize {
        self.config.num_actions
    }

    /// Row of the embedding table reserved for the empty architecture.
    pub fn start_token(&self) -> usize {
        self.config.num_actions
    }

    /// Rejects a network whose configuration or tensor shapes differ from
    /// `expected`.
    pub fn check_shapes(&self, expected: &PolicyConfig) -> Result<()> {
        let shapes = expected.shapes();
        if self.params.len() != shapes.len() || self.optimizer.len() != shapes.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} weight groups, found {}",
                shapes.len(),
                self.params.len()
            )));
        }
        for ((p, opt), &(name, rows, cols)) in self.params.iter().zip(&self.optimizer).zip(&shapes)
        {
            if p.name != name || p.rows != rows || p.cols != cols || p.data.len() != rows * cols {
                return Err(Error::Checkpoint(format!(
                    "weight {:?} has shape {}x{}, expected {name:?} {rows}x{cols}",
                    p.name, p.rows, p.cols
                )));
            }
            if opt.len() != p.len() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state for {name:?} has length {}, expected {}",
                    opt.len(),
                    p.len()
                )));
            }
        }
        if self.encoder_stats.mean.len() != expected.embed_dim
            || self.decoder_stats.mean.len() != expected.hidden
        {
            return Err(Error::Checkpoint(
                "batch-norm statistics have wrong width".into(),
            ));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.config.num_actions) {
            Some(&t) => Err(Error::ActionRange {
                index: t,
                size: self.config.num_actions,
            }),
            None => Ok(()),
        }
    }

    fn lstm(&self) -> LstmWeights<'_> {
        LstmWeights {
            w_ih: &self.params[LSTM_W_IH],
            w_hh: &self.params[LSTM_W_HH],
            bias: &self.params[LSTM_B],
        }
    }

    fn with_start(&self, tokens: &[usize]) -> Vec<usize> {
        if tokens.is_empty() {
            vec![self.start_token()]
        } else {
            tokens.to_vec()
        }
    }

    /// `ReLU(linear(BN(embed(tokens))))` with batch statistics over the
    /// sequence. An empty sequence is replaced by the start token.
    pub fn encode_input(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_tokens(tokens)?;
        let tokens = self.with_start(tokens);
        let (_, _, pre) = self.encode_train(&tokens);
        Ok(relu_rows(&pre))
    }

    /// Hidden states of the LSTM over a feature sequence, from zero state.
    pub fn lstm_forward(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(f) = features
            .iter()
            .find(|f| f.len() != self.config.encoder_width)
        {
            return Err(Error::Dimension {
                expected: self.config.encoder_width,
                actual: f.len(),
            });
        }
        Ok(self
            .lstm()
            .forward(features)
            .into_iter()
            .map(|s| s.h)
            .collect())
    }

    fn encode_train(
        &self,
        tokens: &[usize],
    ) -> (Vec<Vec<f64>>, crate::nn::BatchNormCache, Vec<Vec<f64>>) {
        let emb = &self.params[EMBED];
        let enc_in: Vec<Vec<f64>> = tokens.iter().map(|&t| emb.row(t).to_vec()).collect();
        let (normed, cache) = batchnorm_train(
            &self.params[ENC_GAMMA],
            &self.params[ENC_BETA],
            self.config.bn_eps,
            &enc_in,
        );
        let pre = normed
            .iter()
            .map(|x| linear_forward(&self.params[ENC_W], &self.params[ENC_B], x))
            .collect();
        (enc_in, cache, pre)
    }

    fn encode_infer(&self, token: usize) -> Vec<f64> {
        let normed = batchnorm_infer(
            &self.params[ENC_GAMMA],
            &self.params[ENC_BETA],
            self.config.bn_eps,
            &self.encoder_stats,
            self.params[EMBED].row(token),
        );
        linear_forward(&self.params[ENC_W], &self.params[ENC_B], &normed)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect()
    }

    fn decode_infer(&self, h: &[f64]) -> Vec<f64> {
        let normed = batchnorm_infer(
            &self.params[DEC_GAMMA],
            &self.params[DEC_BETA],
            self.config.bn_eps,
            &self.decoder_stats,
            h,
        );
        linear_forward(&self.params[DEC_W], &self.params[DEC_B], &normed)
    }

    /// Samples `gates` actions autoregressively after observing `arch`.
    pub fn sample_layer<R: Rng>(
        &self,
        arch: &[ActionIndex],
        gates: usize,
        rng: &mut R,
    ) -> Result<SampledLayer> {
        if gates == 0 {
            return Err(Error::Arity {
                what: "gates per layer",
                expected: 1,
                actual: 0,
            });
        }
        let raw: Vec<usize> = arch.iter().map(|a| a.0).collect();
        self.check_tokens(&raw)?;
        let lstm = self.lstm();
        let hidden = self.config.hidden;
        let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
        for token in self.with_start(&raw) {
            let s = lstm.step(&self.encode_infer(token), &h, &c);
            (h, c) = (s.h, s.c);
        }
        let mut out = SampledLayer {
            actions: Vec::with_capacity(gates),
            log_probs: Vec::with_capacity(gates),
            distributions: Vec::with_capacity(gates),
        };
        for k in 0..gates {
            let logits = self.decode_infer(&h);
            let log_probs = log_softmax(&logits);
            let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
            let action = sample_categorical(&probs, rng);
            out.actions.push(ActionIndex(action));
            out.log_probs.push(log_probs[action]);
            out.distributions.push(probs);
            if k + 1 < gates {
                let s = lstm.step(&self.encode_infer(action), &h, &c);
                (h, c) = (s.h, s.c);
            }
        }
        Ok(out)
    }

    fn forward_layer(&self, step: &LayerStep) -> Result<LayerCache> {
        self.check_tokens(&step.prefix)?;
        self.check_tokens(&step.actions)?;
        let gates = step.actions.len();
        if gates == 0 {
            return Err(Error::Arity {
                what: "layer actions",
                expected: 1,
                actual: 0,
            });
        }
        let mut tokens = self.with_start(&step.prefix);
        let decode_from = tokens.len() - 1;
        tokens.extend_from_slice(&step.actions[..gates - 1]);

        let (enc_in, enc_bn, enc_pre) = self.encode_train(&tokens);
        let feats = relu_rows(&enc_pre);
        let lstm = self.lstm().forward(&feats);
        let dec_bn_in: Vec<Vec<f64>> = lstm[decode_from..].iter().map(|s| s.h.clone()).collect();
        let (dec_normed, dec_bn) = batchnorm_train(
            &self.params[DEC_GAMMA],
            &self.params[DEC_BETA],
            self.config.bn_eps,
            &dec_bn_in,
        );
        let mut probs = Vec::with_capacity(gates);
        let mut chosen_log_prob = 0.0;
        for (x, &a) in dec_normed.iter().zip(&step.actions) {
            let logits = linear_forward(&self.params[DEC_W], &self.params[DEC_B], x);
            chosen_log_prob += log_softmax(&logits)[a];
            probs.push(softmax(&logits));
        }
        Ok(LayerCache {
            tokens,
            enc_in,
            enc_bn,
            enc_pre,
            lstm,
            decode_from,
            dec_bn_in,
            dec_bn,
            probs,
            chosen_log_prob,
        })
    }

    /// `Σ_t w_t · Σ_k log P(a_{t,k})` in update (batch-statistics) mode.
    pub fn objective(&self, steps: &[LayerStep], weights: &[f64]) -> Result<f64> {
        check_weights(steps, weights)?;
        let mut total = 0.0;
        for (step, w) in steps.iter().zip(weights) {
            total += w * self.forward_layer(step)?.chosen_log_prob;
        }
        Ok(total)
    }

    /// Gradient of [`PolicyNetwork::objective`] with respect to every
    /// parameter, plus the batch statistics seen by each batch-norm.
    pub fn policy_gradient(
        &self,
        steps: &[LayerStep],
        weights: &[f64],
    ) -> Result<(Gradients, Vec<(BatchStats, BatchStats)>)> {
        check_weights(steps, weights)?;
        let mut grads: Gradients = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut stats = Vec::with_capacity(steps.len());
        for (step, &w) in steps.iter().zip(weights) {
            let cache = self.forward_layer(step)?;
            if w != 0.0 {
                self.backward_layer(step, &cache, w, &mut grads);
            }
            stats.push((cache.enc_bn.stats.clone(), cache.dec_bn.stats.clone()));
        }
        Ok((grads, stats))
    }

    fn backward_layer(
        &self,
        step: &LayerStep,
        cache: &LayerCache,
        weight: f64,
        grads: &mut Gradients,
    ) {
        let p = &self.params;
        let hidden = self.config.hidden;

        // d/dlogits of w·log softmax(logits)[a] = w·(onehot(a) - softmax)
        let dec_normed_grads: Vec<Vec<f64>> = {
            let (dec_normed, _) = batchnorm_train(
                &p[DEC_GAMMA],
                &p[DEC_BETA],
                self.config.bn_eps,
                &cache.dec_bn_in,
            );
            let [dw, db] = grads_pair(grads, DEC_W, DEC_B);
            dec_normed
                .iter()
                .zip(&cache.probs)
                .zip(&step.actions)
                .map(|((x, probs), &a)| {
                    let dlogits: Vec<f64> = probs
                        .iter()
                        .enumerate()
                        .map(|(j, pj)| weight * (f64::from(u8::from(j == a)) - pj))
                        .collect();
                    linear_backward(&p[DEC_W], x, &dlogits, dw, db)
                })
                .collect()
        };
        let dh_dec = {
            let [dg, db] = grads_pair(grads, DEC_GAMMA, DEC_BETA);
            batchnorm_backward(&p[DEC_GAMMA], &cache.dec_bn, &dec_normed_grads, dg, db)
        };

        let mut dhs = vec![vec![0.0; hidden]; cache.lstm.len()];
        for (k, dh) in dh_dec.into_iter().enumerate() {
            dhs[cache.decode_from + k] = dh;
        }
        let dfeats = {
            let (head, tail) = grads.split_at_mut(LSTM_W_HH);
            let (mid, rest) = tail.split_at_mut(1);
            self.lstm().backward(
                &cache.lstm,
                &dhs,
                &mut head[LSTM_W_IH],
                &mut mid[0],
                &mut rest[0],
            )
        };

        let (enc_normed, _) = batchnorm_train(
            &p[ENC_GAMMA],
            &p[ENC_BETA],
            self.config.bn_eps,
            &cache.enc_in,
        );
        let dnormed: Vec<Vec<f64>> = {
            let [dw, db] = grads_pair(grads, ENC_W, ENC_B);
            dfeats
                .iter()
                .zip(&cache.enc_pre)
                .zip(&enc_normed)
                .map(|((df, pre), x)| {
                    let dpre: Vec<f64> = df
                        .iter()
                        .zip(pre)
                        .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
                        .collect();
                    linear_backward(&p[ENC_W], x, &dpre, dw, db)
                })
                .collect()
        };
        let demb = {
            let [dg, db] = grads_pair(grads, ENC_GAMMA, ENC_BETA);
            batchnorm_backward(&p[ENC_GAMMA], &cache.enc_bn, &dnormed, dg, db)
        };
        let cols = p[EMBED].cols;
        for (&token, d) in cache.tokens.iter().zip(&demb) {
            for (g, v) in grads[EMBED][token * cols..(token + 1) * cols]
                .iter_mut()
                .zip(d)
            {
                *g += v;
            }
        }
    }

    /// One REINFORCE step: weights each layer's log-probability by its
    /// credited return minus the baseline, ascends with Adam, then folds the
    /// episode into the baseline and the batch-norm running statistics.
    ///
    /// A non-finite gradient aborts the update and leaves the network as it
    /// was.
    pub fn reinforce_update(
        &mut self,
        trace: &EpisodeTrace,
        cfg: &ReinforceConfig,
        baseline: &mut Baseline,
    ) -> Result<UpdateReport> {
        let weights = step_weights(trace, cfg, baseline);
        let (grads, stats) = self.policy_gradient(&trace.steps, &weights)?;
        let gradient_norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !gradient_norm.is_finite() {
            return Err(Error::NonFinite("controller policy gradient".into()));
        }

        let applied = gradient_norm > 0.0;
        if applied {
            let backup = (self.params.clone(), self.optimizer.clone());
            for ((param, state), grad) in
                self.params.iter_mut().zip(&mut self.optimizer).zip(&grads)
            {
                // Adam descends, so feed it the negated ascent direction
                let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
                adam_step(&mut param.data, &descent, state, &self.config.adam)?;
            }
            if !self.all_finite() {
                (self.params, self.optimizer) = backup;
                return Err(Error::NonFinite("controller weights after update".into()));
            }
            for (enc, dec) in &stats {
                self.encoder_stats.update(enc, self.config.bn_momentum);
                self.decoder_stats.update(dec, self.config.bn_momentum);
            }
        }

        for (t, g) in credited_returns(trace, cfg).into_iter().enumerate() {
            baseline.observe(baseline_slot(cfg, t), g, cfg.baseline_decay);
        }
        Ok(UpdateReport {
            weights,
            gradient_norm,
            applied,
        })
    }
}

fn check_weights(steps: &[LayerStep], weights: &[f64]) -> Result<()> {
    if steps.len() != weights.len() {
        return Err(Error::Arity {
            what: "step weights",
            expected: steps.len(),
            actual: weights.len(),
        });
    }
    Ok(())
}

fn relu_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|v| v.max(0.0)).collect())
        .collect()
}

/// Mutable borrows of two distinct gradient slots `a < b`.
fn grads_pair(grads: &mut Gradients, a: usize, b: usize) -> [&mut Vec<f64>; 2] {
    debug_assert!(a < b);
    let (head, tail) = grads.split_at_mut(b);
    [&mut head[a], &mut tail[0]]
}
