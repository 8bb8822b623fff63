//! Circuit architecture representation.
//!
//! An [`Architecture`] is a list of equal-length [`Layer`]s of
//! [`GateDescriptor`]s. The controller speaks in flat [`ActionIndex`]es; the
//! [`ActionSpace`] codec maps between the two using the fixed layout
//!
//! ```text
//! [0, q)            Rx on qubit i
//! [q, 2q)           Ry on qubit i
//! [2q, 3q)          Rz on qubit i
//! [3q, 4q)          NoOp on qubit i
//! [4q, 4q+q(q-1))   CNOT (B, E), B != E, lexicographic in (B, E)
//! ```
//!
//! The text format is line oriented:
//!
//! ```text
//! # comments and blank lines are ignored
//! qubits 8
//! 0 3 3 Rx 1.5707963267948966
//! 0 0 1 CNOT
//! 1 5 5 NoOp
//! ```
//!
//! Each gate line is `layer begin end type [param]`. Parameters are either
//! present on every rotation line or on none of them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevector::GateType;

/// One placed gate: begin qubit, end qubit and type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateDescriptor {
    pub begin: usize,
    pub end: usize,
    pub kind: GateType,
}

impl GateDescriptor {
    pub fn single(kind: GateType, qubit: usize) -> Self {
        Self {
            begin: qubit,
            end: qubit,
            kind,
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            begin: control,
            end: target,
            kind: GateType::Cnot,
        }
    }

    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        for qubit in [self.begin, self.end] {
            if qubit >= num_qubits {
                return Err(Error::QubitOutOfRange { qubit, num_qubits });
            }
        }
        match (self.kind, self.begin == self.end) {
            (GateType::Cnot, true) => Err(Error::InvalidGate(format!(
                "CNOT with begin == end == {}",
                self.begin
            ))),
            (GateType::Cnot, false) | (_, true) => Ok(()),
            (kind, false) => Err(Error::InvalidGate(format!(
                "{kind} must have begin == end, got {} and {}",
                self.begin, self.end
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    gates: Vec<GateDescriptor>,
}

impl Layer {
    pub fn gates(&self) -> &[GateDescriptor] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    num_qubits: usize,
    layers: Vec<Layer>,
}

impl Architecture {
    pub fn empty(num_qubits: usize) -> Self {
        Self {
            num_qubits,
            layers: Vec::new(),
        }
    }

    /// Builds an architecture from explicit gate lists, validating every
    /// descriptor and requiring all layers to share one nonzero length.
    pub fn from_layers(num_qubits: usize, layers: Vec<Vec<GateDescriptor>>) -> Result<Self> {
        if num_qubits == 0 {
            return Err(Error::InvalidGate(
                "architecture needs at least one qubit".into(),
            ));
        }
        let width = layers.first().map(Vec::len);
        let mut out = Vec::with_capacity(layers.len());
        for gates in layers {
            if gates.is_empty() || Some(gates.len()) != width {
                return Err(Error::Arity {
                    what: "gates per layer",
                    expected: width.unwrap_or(1),
                    actual: gates.len(),
                });
            }
            for g in &gates {
                g.validate(num_qubits)?;
            }
            out.push(Layer { gates });
        }
        Ok(Self {
            num_qubits,
            layers: out,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn gates_per_layer(&self) -> Option<usize> {
        self.layers.first().map(Layer::len)
    }

    /// All descriptors in execution order.
    pub fn gates(&self) -> impl Iterator<Item = &GateDescriptor> + '_ {
        self.layers.iter().flat_map(|l| l.gates.iter())
    }

    /// Gates that do something (NoOps excluded).
    pub fn gate_count(&self) -> usize {
        self.gates().filter(|g| g.kind != GateType::NoOp).count()
    }

    /// Number of trainable angles (rotation gates).
    pub fn parameter_count(&self) -> usize {
        self.gates().filter(|g| g.kind.is_rotation()).count()
    }

    /// The flat action sequence the controller observes.
    pub fn action_sequence(&self) -> Vec<ActionIndex> {
        let space = ActionSpace::new(self.num_qubits);
        self.gates()
            .map(|g| space.encode(g).expect("architecture gates are validated"))
            .collect()
    }

    /// Returns a new architecture with `actions` decoded and appended as one
    /// layer.
    pub fn append_layer(&self, actions: &[ActionIndex], max_layers: usize) -> Result<Self> {
        if self.layers.len() >= max_layers {
            return Err(Error::Capacity { max_layers });
        }
        let width = self.gates_per_layer().unwrap_or(actions.len());
        if actions.is_empty() || actions.len() != width {
            return Err(Error::Arity {
                what: "gates per layer",
                expected: width.max(1),
                actual: actions.len(),
            });
        }
        let space = ActionSpace::new(self.num_qubits);
        let gates = actions
            .iter()
            .map(|&a| space.decode(a))
            .collect::<Result<Vec<_>>>()?;
        let mut next = self.clone();
        next.layers.push(Layer { gates });
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionIndex(pub usize);

/// Codec between [`GateDescriptor`]s and flat action indices for a fixed
/// qubit count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    num_qubits: usize,
}

impl ActionSpace {
    pub fn new(num_qubits: usize) -> Self {
        Self { num_qubits }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    /// `4q + q(q-1)`.
    pub fn size(&self) -> usize {
        let q = self.num_qubits;
        4 * q + q * q.saturating_sub(1)
    }

    pub fn encode(&self, gate: &GateDescriptor) -> Result<ActionIndex> {
        gate.validate(self.num_qubits)?;
        let q = self.num_qubits;
        let index = match gate.kind {
            GateType::Rx => gate.begin,
            GateType::Ry => q + gate.begin,
            GateType::Rz => 2 * q + gate.begin,
            GateType::NoOp => 3 * q + gate.begin,
            GateType::Cnot => {
                let e = if gate.end < gate.begin {
                    gate.end
                } else {
                    gate.end - 1
                };
                4 * q + gate.begin * (q - 1) + e
            }
        };
        Ok(ActionIndex(index))
    }

    pub fn decode(&self, action: ActionIndex) -> Result<GateDescriptor> {
        let size = self.size();
        let q = self.num_qubits;
        let a = action.0;
        if a >= size {
            return Err(Error::ActionRange { index: a, size });
        }
        let gate = if a < 4 * q {
            let kind = [GateType::Rx, GateType::Ry, GateType::Rz, GateType::NoOp][a / q];
            GateDescriptor::single(kind, a % q)
        } else {
            let offset = a - 4 * q;
            let begin = offset / (q - 1);
            let e = offset % (q - 1);
            GateDescriptor::cnot(begin, if e < begin { e } else { e + 1 })
        };
        Ok(gate)
    }
}

/// A parsed architecture file: the circuit and, when present, its trained
/// rotation angles.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitDocument {
    pub arch: Architecture,
    pub params: Option<Vec<f64>>,
}

pub fn serialize_arch(arch: &Architecture, params: Option<&[f64]>) -> Result<String> {
    if let Some(p) = params {
        if p.len() != arch.parameter_count() {
            return Err(Error::Arity {
                what: "circuit parameters",
                expected: arch.parameter_count(),
                actual: p.len(),
            });
        }
        if let Some(bad) = p.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("circuit parameter {bad}")));
        }
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} gates, {} parameters",
        arch.gate_count(),
        arch.parameter_count()
    );
    let _ = writeln!(out, "qubits {}", arch.num_qubits());
    let mut next_param = params.map(|p| p.iter());
    for (layer_idx, layer) in arch.layers().iter().enumerate() {
        for g in layer.gates() {
            let _ = write!(out, "{layer_idx} {} {} {}", g.begin, g.end, g.kind);
            if let (true, Some(it)) = (g.kind.is_rotation(), next_param.as_mut()) {
                // `{}` on f64 prints the shortest string that parses back exactly
                let _ = write!(out, " {}", it.next().expect("length checked"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn parse_arch(text: &str) -> Result<CircuitDocument> {
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let mut num_qubits: Option<usize> = None;
    let mut layers: Vec<Vec<GateDescriptor>> = Vec::new();
    let mut params = Vec::new();
    let mut rotations_with_param = 0usize;
    let mut rotations = 0usize;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some(q) = num_qubits else {
            match fields.as_slice() {
                ["qubits", n] => {
                    let n: usize = n
                        .parse()
                        .map_err(|e| parse_err(line_no, format!("qubit count {n:?}: {e}")))?;
                    if n == 0 {
                        return Err(parse_err(line_no, "qubit count must be positive".into()));
                    }
                    num_qubits = Some(n);
                    continue;
                }
                _ => {
                    return Err(parse_err(
                        line_no,
                        format!("expected header `qubits <n>`, found {line:?}"),
                    ))
                }
            }
        };
        if !(4..=5).contains(&fields.len()) {
            return Err(parse_err(
                line_no,
                format!(
                    "expected `layer begin end type [param]`, found {} fields",
                    fields.len()
                ),
            ));
        }
        let field = |idx: usize, name: &str| -> Result<usize> {
            fields[idx]
                .parse()
                .map_err(|e| parse_err(line_no, format!("{name} {:?}: {e}", fields[idx])))
        };
        let layer = field(0, "layer")?;
        let begin = field(1, "begin")?;
        let end = field(2, "end")?;
        let kind = GateType::from_token(fields[3])
            .ok_or_else(|| parse_err(line_no, format!("unknown gate type {:?}", fields[3])))?;
        let gate = GateDescriptor { begin, end, kind };
        gate.validate(q)
            .map_err(|e| parse_err(line_no, e.to_string()))?;

        if layer == layers.len() {
            layers.push(Vec::new());
        } else if layer + 1 != layers.len() {
            return Err(parse_err(
                line_no,
                format!(
                    "layer index {layer} out of sequence (current layer {})",
                    layers.len().saturating_sub(1)
                ),
            ));
        }
        layers.last_mut().expect("pushed above").push(gate);

        if kind.is_rotation() {
            rotations += 1;
        }
        if let Some(p) = fields.get(4) {
            if !kind.is_rotation() {
                return Err(parse_err(line_no, format!("{kind} takes no parameter")));
            }
            let v: f64 = p
                .parse()
                .map_err(|e| parse_err(line_no, format!("parameter {p:?}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("parameter {p:?} is not finite")));
            }
            params.push(v);
            rotations_with_param += 1;
        }
    }

    let num_qubits =
        num_qubits.ok_or_else(|| parse_err(0, "missing `qubits <n>` header".into()))?;
    if rotations_with_param != 0 && rotations_with_param != rotations {
        return Err(parse_err(
            0,
            format!("{rotations_with_param} of {rotations} rotation gates carry parameters; expected all or none"),
        ));
    }
    let arch =
        Architecture::from_layers(num_qubits, layers).map_err(|e| parse_err(0, e.to_string()))?;
    Ok(CircuitDocument {
        arch,
        params: (rotations_with_param > 0).then_some(params),
    })
}
