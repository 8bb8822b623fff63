//! Dense statevector simulation.
//!
//! Qubit 0 is the most significant bit of a basis-state index, so for a
//! 2-qubit register `|10⟩` is index 2. Every gate acts in place on the
//! amplitude buffer; [`run_circuit`] is the pure, allocating entry point used
//! by the trainer.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::Architecture;
use crate::error::{Error, Result};

/// The gate alphabet of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateType {
    Rx,
    Ry,
    Rz,
    Cnot,
    /// Identity placeholder; lets a layer carry fewer effective gates.
    NoOp,
}

impl GateType {
    pub const ALL: [GateType; 5] = [
        GateType::Rx,
        GateType::Ry,
        GateType::Rz,
        GateType::Cnot,
        GateType::NoOp,
    ];

    /// Whether the gate carries a trainable angle.
    pub fn is_rotation(self) -> bool {
        matches!(self, GateType::Rx | GateType::Ry | GateType::Rz)
    }

    pub fn token(self) -> &'static str {
        match self {
            GateType::Rx => "Rx",
            GateType::Ry => "Ry",
            GateType::Rz => "Rz",
            GateType::Cnot => "CNOT",
            GateType::NoOp => "NoOp",
        }
    }

    pub fn from_token(token: &str) -> Option<GateType> {
        GateType::ALL.into_iter().find(|g| g.token() == token)
    }
}

impl fmt::Display for GateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    num_qubits: usize,
}

impl StateVector {
    /// `|0…0⟩` on `num_qubits` qubits.
    pub fn zero_state(num_qubits: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self {
            amplitudes,
            num_qubits,
        }
    }

    /// Computational basis state `|index⟩`.
    pub fn basis_state(num_qubits: usize, index: usize) -> Result<Self> {
        let dim = 1usize << num_qubits;
        if index >= dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: index,
            });
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self {
            amplitudes,
            num_qubits,
        })
    }

    /// Wraps raw amplitudes. The length must be a power of two and the
    /// vector must already be normalized to within 1e-10.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let num_qubits = qubits_for_len(amplitudes.len())?;
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidGate(format!(
                "state is not normalized (squared norm {norm_sq})"
            )));
        }
        Ok(Self {
            amplitudes,
            num_qubits,
        })
    }

    /// Amplitude encoding: `amplitudes[i] = x[i] / ‖x‖₂`.
    pub fn amplitude_encode(x: &[f64]) -> Result<Self> {
        let num_qubits = qubits_for_len(x.len())?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("amplitude encoding input".into()));
        }
        if norm == 0.0 {
            return Err(Error::ZeroInput);
        }
        let amplitudes = x.iter().map(|&v| Complex64::new(v / norm, 0.0)).collect();
        Ok(Self {
            amplitudes,
            num_qubits,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn mask(&self, qubit: usize) -> Result<usize> {
        if qubit >= self.num_qubits {
            return Err(Error::QubitOutOfRange {
                qubit,
                num_qubits: self.num_qubits,
            });
        }
        Ok(1 << (self.num_qubits - 1 - qubit))
    }

    /// Applies `Rx`, `Ry` or `Rz` with the given angle (radians) to one qubit.
    pub fn apply_rotation(&mut self, axis: GateType, qubit: usize, angle: f64) -> Result<()> {
        let mask = self.mask(qubit)?;
        if !angle.is_finite() {
            return Err(Error::NonFinite(format!("{axis} angle")));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        // [[m00, m01], [m10, m11]] acting on (|…0…⟩, |…1…⟩)
        let (m00, m01, m10, m11) = match axis {
            GateType::Rx => (
                Complex64::new(c, 0.0),
                Complex64::new(0.0, -s),
                Complex64::new(0.0, -s),
                Complex64::new(c, 0.0),
            ),
            GateType::Ry => (
                Complex64::new(c, 0.0),
                Complex64::new(-s, 0.0),
                Complex64::new(s, 0.0),
                Complex64::new(c, 0.0),
            ),
            GateType::Rz => {
                let phase = Complex64::new(c, -s);
                for (i, amp) in self.amplitudes.iter_mut().enumerate() {
                    *amp *= if i & mask == 0 { phase } else { phase.conj() };
                }
                return Ok(());
            }
            other => {
                return Err(Error::InvalidGate(format!(
                    "{other} is not a rotation gate"
                )))
            }
        };
        for i in 0..self.amplitudes.len() {
            if i & mask != 0 {
                continue;
            }
            let j = i | mask;
            let a = self.amplitudes[i];
            let b = self.amplitudes[j];
            self.amplitudes[i] = m00 * a + m01 * b;
            self.amplitudes[j] = m10 * a + m11 * b;
        }
        Ok(())
    }

    /// Flips `target` on every basis state whose `control` bit is set.
    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        let cmask = self.mask(control)?;
        let tmask = self.mask(target)?;
        if control == target {
            return Err(Error::InvalidGate(format!(
                "CNOT control and target are both qubit {control}"
            )));
        }
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
        Ok(())
    }

    /// Exact `⟨Z⟩` on one qubit: `Σᵢ ±|αᵢ|²` with `+` where the bit is 0.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        let mask = self.mask(qubit)?;
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if i & mask == 0 {
                    a.norm_sqr()
                } else {
                    -a.norm_sqr()
                }
            })
            .sum())
    }
}

fn qubits_for_len(len: usize) -> Result<usize> {
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::Dimension {
            expected: len.max(2).next_power_of_two(),
            actual: len,
        });
    }
    Ok(len.trailing_zeros() as usize)
}

/// Applies `arch` to a copy of `input`, consuming `params` in layer order and
/// then gate order within each layer.
pub fn run_circuit(
    arch: &Architecture,
    params: &[f64],
    input: &StateVector,
) -> Result<StateVector> {
    let expected = arch.parameter_count();
    if params.len() != expected {
        return Err(Error::Arity {
            what: "circuit parameters",
            expected,
            actual: params.len(),
        });
    }
    if arch.num_qubits() != input.num_qubits() {
        return Err(Error::Dimension {
            expected: arch.num_qubits(),
            actual: input.num_qubits(),
        });
    }
    let mut state = input.clone();
    let mut next = params.iter();
    for gate in arch.gates() {
        match gate.kind {
            GateType::Rx | GateType::Ry | GateType::Rz => {
                let angle = *next.next().expect("parameter count checked above");
                state.apply_rotation(gate.kind, gate.begin, angle)?;
            }
            GateType::Cnot => state.apply_cnot(gate.begin, gate.end)?,
            GateType::NoOp => {}
        }
    }
    Ok(state)
}
