//! Independent reference implementations and fixtures shared by the
//! integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use num_complex::Complex64;
use qas_core::circuit::{ActionIndex, ActionSpace, Architecture, GateDescriptor};
use qas_core::controller::{LayerStep, PolicyConfig, PolicyNetwork};
use qas_core::data::{MnistFiles, Sample};
use qas_core::statevector::GateType;
use rand::Rng;

pub type Matrix = Vec<Vec<Complex64>>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| c(if i == j { 1.0 } else { 0.0 }, 0.0))
                .collect()
        })
        .collect()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0, 0.0); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![c(0.0, 0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == c(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn matvec(a: &Matrix, x: &[Complex64]) -> Vec<Complex64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(m, v)| m * v).sum())
        .collect()
}

/// Textbook single-qubit rotation matrices.
pub fn rotation_matrix(kind: GateType, theta: f64) -> Matrix {
    let (cs, sn) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    match kind {
        GateType::Rx => vec![vec![c(cs, 0.0), c(0.0, -sn)], vec![c(0.0, -sn), c(cs, 0.0)]],
        GateType::Ry => vec![vec![c(cs, 0.0), c(-sn, 0.0)], vec![c(sn, 0.0), c(cs, 0.0)]],
        GateType::Rz => vec![
            vec![Complex64::from_polar(1.0, -theta / 2.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), Complex64::from_polar(1.0, theta / 2.0)],
        ],
        _ => identity(2),
    }
}

/// `I ⊗ … ⊗ g ⊗ … ⊗ I` with the leftmost factor acting on qubit 0.
pub fn embed_single(g: &Matrix, qubit: usize, q: usize) -> Matrix {
    let mut out = vec![vec![c(1.0, 0.0)]];
    for k in 0..q {
        let factor = if k == qubit { g.clone() } else { identity(2) };
        out = kron(&out, &factor);
    }
    out
}

/// CNOT as `|0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ X` placed on the two qubits.
pub fn embed_cnot(control: usize, target: usize, q: usize) -> Matrix {
    let p0 = vec![
        vec![c(1.0, 0.0), c(0.0, 0.0)],
        vec![c(0.0, 0.0), c(0.0, 0.0)],
    ];
    let p1 = vec![
        vec![c(0.0, 0.0), c(0.0, 0.0)],
        vec![c(0.0, 0.0), c(1.0, 0.0)],
    ];
    let x = vec![
        vec![c(0.0, 0.0), c(1.0, 0.0)],
        vec![c(1.0, 0.0), c(0.0, 0.0)],
    ];
    let term = |on_control: &Matrix, on_target: &Matrix| {
        let mut out = vec![vec![c(1.0, 0.0)]];
        for k in 0..q {
            let factor = if k == control {
                on_control.clone()
            } else if k == target {
                on_target.clone()
            } else {
                identity(2)
            };
            out = kron(&out, &factor);
        }
        out
    };
    let a = term(&p0, &identity(2));
    let b = term(&p1, &x);
    a.iter()
        .zip(&b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(u, v)| u + v).collect())
        .collect()
}

/// Full circuit unitary built gate by gate from dense matrices.
pub fn dense_unitary(arch: &Architecture, params: &[f64]) -> Matrix {
    let q = arch.num_qubits();
    let mut u = identity(1 << q);
    let mut next = params.iter();
    for g in arch.gates() {
        let gate = match g.kind {
            GateType::Cnot => embed_cnot(g.begin, g.end, q),
            GateType::NoOp => identity(1 << q),
            kind => embed_single(&rotation_matrix(kind, *next.next().unwrap()), g.begin, q),
        };
        u = matmul(&gate, &u);
    }
    u
}

pub fn random_gate<R: Rng>(q: usize, rng: &mut R) -> GateDescriptor {
    let space = ActionSpace::new(q);
    space
        .decode(ActionIndex(rng.gen_range(0..space.size())))
        .unwrap()
}

/// Random architecture of `layers × width` gates.
pub fn random_arch<R: Rng>(q: usize, layers: usize, width: usize, rng: &mut R) -> Architecture {
    let layers = (0..layers)
        .map(|_| (0..width).map(|_| random_gate(q, rng)).collect())
        .collect();
    Architecture::from_layers(q, layers).unwrap()
}

pub fn random_angles<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        .collect()
}

pub fn random_state<R: Rng>(q: usize, rng: &mut R) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..1 << q)
        .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

pub fn random_samples<R: Rng>(q: usize, n: usize, rng: &mut R) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            pixels: (0..1 << q).map(|_| rng.gen_range(0.0..1.0)).collect(),
            label: rng.gen_range(0..2),
        })
        .collect()
}

/// Relative error with a floor on the denominator for vanishing gradients.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Adam exactly as written, one scalar at a time.
pub struct ScalarAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: f64,
    n: f64,
    t: i32,
}

impl ScalarAdam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: 0.0,
            n: 0.0,
            t: 0,
        }
    }

    pub fn step(&mut self, theta: f64, g: f64) -> f64 {
        self.t += 1;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g;
        self.n = self.beta2 * self.n + (1.0 - self.beta2) * g * g;
        let m_hat = self.m / (1.0 - self.beta1.powi(self.t));
        let n_hat = self.n / (1.0 - self.beta2.powi(self.t));
        theta - self.lr / (n_hat + self.eps).sqrt() * m_hat
    }
}

pub fn small_policy(num_actions: usize) -> PolicyConfig {
    PolicyConfig {
        embed_dim: 5,
        encoder_width: 6,
        hidden: 4,
        ..PolicyConfig::new(num_actions)
    }
}

/// Two frozen layer steps over 2–3 positions each, one from the start token.
pub fn frozen_steps(num_actions: usize) -> (Vec<LayerStep>, Vec<f64>) {
    let a = |i: usize| i % num_actions;
    let steps = vec![
        LayerStep {
            prefix: vec![],
            actions: vec![a(3), a(7), a(1)],
            log_probs: vec![-1.0; 3],
            reward: 0.8,
        },
        LayerStep {
            prefix: vec![a(3), a(7)],
            actions: vec![a(5), a(2)],
            log_probs: vec![-1.0; 2],
            reward: 0.6,
        },
    ];
    (steps, vec![1.3, -0.7])
}

/// Largest relative error between the analytic policy gradient and central
/// differences of the objective, per weight group, over at most
/// `per_param` entries of each tensor.
pub fn controller_fd_errors(
    net: &PolicyNetwork,
    steps: &[LayerStep],
    weights: &[f64],
    per_param: usize,
) -> Vec<(String, f64)> {
    use qas_core::controller::WeightGroup;
    let (grads, _) = net.policy_gradient(steps, weights).unwrap();
    let h = 1e-5;
    let mut out = Vec::new();
    for group in WeightGroup::ALL {
        let mut worst: f64 = 0.0;
        for slot in group.members() {
            let len = net.params()[slot].len();
            let stride = (len / per_param).max(1);
            for i in (0..len).step_by(stride) {
                let mut plus = net.clone();
                plus.params_mut()[slot].data[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[slot].data[i] -= h;
                let numeric = (plus.objective(steps, weights).unwrap()
                    - minus.objective(steps, weights).unwrap())
                    / (2.0 * h);
                worst = worst.max(rel_err(grads[slot][i], numeric, 1e-6));
            }
        }
        out.push((group.to_string(), worst));
    }
    out
}

/// Directory holding the MNIST IDX files: `QAS_DATA_DIR`, else `data/mnist`
/// at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("QAS_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn load_mnist() -> MnistFiles {
    let dir = mnist_dir();
    MnistFiles::load(&dir).unwrap_or_else(|e| {
        panic!(
            "MNIST files not found in {} ({e}); set QAS_DATA_DIR or place the four IDX files there",
            dir.display()
        )
    })
}

/// Two-armed bandit: one layer of one gate, reward 1 for action 0. Returns
/// the probability of action 0 after `updates` REINFORCE steps.
pub fn bandit_final_probability(seed: u64, updates: usize) -> f64 {
    use qas_core::controller::{Baseline, EpisodeTrace, ReinforceConfig};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut net = PolicyNetwork::new(PolicyConfig::new(2), &mut rng).unwrap();
    let cfg = ReinforceConfig::default();
    let mut baseline = Baseline::default();
    for _ in 0..updates {
        let layer = net.sample_layer(&[], 1, &mut rng).unwrap();
        let action = layer.actions[0].0;
        let step = LayerStep {
            prefix: vec![],
            actions: vec![action],
            log_probs: layer.log_probs.clone(),
            reward: if action == 0 { 1.0 } else { 0.0 },
        };
        net.reinforce_update(
            &EpisodeTrace::new(vec![step], cfg.gamma),
            &cfg,
            &mut baseline,
        )
        .unwrap();
    }
    net.sample_layer(&[], 1, &mut rng).unwrap().distributions[0][0]
}
