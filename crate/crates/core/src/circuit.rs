//! Gate lists over a register of data qubits followed by ancillas, their JSON
//! form, and a dense gate-by-gate simulator used for equivalence checks.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::check_exponential_alloc;
use crate::error::{invalid, LabsError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    Cnot { control: usize, target: usize },
    Cz { a: usize, b: usize },
    /// `exp(-i angle/2 Z Z)`.
    Rzz { q1: usize, q2: usize, angle: f64 },
    /// `exp(-i angle/2 Z)`.
    Rz { q: usize, angle: f64 },
    /// `exp(-i angle/2 X)`.
    Rx { q: usize, angle: f64 },
    H { q: usize },
    X { q: usize },
    Y { q: usize },
    Z { q: usize },
    /// Couples the Z parity of every data qubit onto `ancilla` (a CZ chain).
    ParityCheckZ { ancilla: usize },
    /// Couples the X parity of every data qubit onto `ancilla` (a CNOT chain
    /// controlled by the ancilla).
    ParityCheckX { ancilla: usize },
    Measure { q: usize },
    Reset { q: usize },
}

impl Gate {
    pub fn kind(&self) -> &'static str {
        match self {
            Gate::Cnot { .. } => "CNOT",
            Gate::Cz { .. } => "CZ",
            Gate::Rzz { .. } => "RZZ",
            Gate::Rz { .. } => "RZ",
            Gate::Rx { .. } => "RX",
            Gate::H { .. } => "H",
            Gate::X { .. } => "X",
            Gate::Y { .. } => "Y",
            Gate::Z { .. } => "Z",
            Gate::ParityCheckZ { .. } => "PARITY_CHECK_Z",
            Gate::ParityCheckX { .. } => "PARITY_CHECK_X",
            Gate::Measure { .. } => "MEASURE",
            Gate::Reset { .. } => "RESET",
        }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::Cnot { control, target } => vec![control, target],
            Gate::Cz { a, b } => vec![a, b],
            Gate::Rzz { q1, q2, .. } => vec![q1, q2],
            Gate::Rz { q, .. }
            | Gate::Rx { q, .. }
            | Gate::H { q }
            | Gate::X { q }
            | Gate::Y { q }
            | Gate::Z { q }
            | Gate::Measure { q }
            | Gate::Reset { q } => vec![q],
            Gate::ParityCheckZ { ancilla } | Gate::ParityCheckX { ancilla } => vec![ancilla],
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rzz { angle, .. } | Gate::Rz { angle, .. } | Gate::Rx { angle, .. } => Some(angle),
            _ => None,
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Cnot { .. } | Gate::Cz { .. } | Gate::Rzz { .. })
    }

    pub fn touches(&self, q: usize) -> bool {
        self.qubits().contains(&q)
    }
}

#[derive(Serialize, Deserialize)]
struct GateRecord {
    kind: String,
    qubits: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    angle: Option<f64>,
}

impl Serialize for Gate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GateRecord { kind: self.kind().to_string(), qubits: self.qubits(), angle: self.angle() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Gate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = GateRecord::deserialize(d)?;
        gate_from_record(&rec).map_err(serde::de::Error::custom)
    }
}

fn gate_from_record(rec: &GateRecord) -> Result<Gate> {
    let arity = match rec.kind.as_str() {
        "CNOT" | "CZ" | "RZZ" => 2,
        _ => 1,
    };
    if rec.qubits.len() != arity {
        return Err(LabsError::Format(format!("{} takes {arity} qubits, got {}", rec.kind, rec.qubits.len())));
    }
    let q = rec.qubits[0];
    let angle = || match rec.angle {
        Some(a) if a.is_finite() => Ok(a),
        Some(_) => Err(LabsError::Format(format!("{} has a non-finite angle", rec.kind))),
        None => Err(LabsError::Format(format!("{} needs an angle", rec.kind))),
    };
    Ok(match rec.kind.as_str() {
        "CNOT" => Gate::Cnot { control: q, target: rec.qubits[1] },
        "CZ" => Gate::Cz { a: q, b: rec.qubits[1] },
        "RZZ" => Gate::Rzz { q1: q, q2: rec.qubits[1], angle: angle()? },
        "RZ" => Gate::Rz { q, angle: angle()? },
        "RX" => Gate::Rx { q, angle: angle()? },
        "H" => Gate::H { q },
        "X" => Gate::X { q },
        "Y" => Gate::Y { q },
        "Z" => Gate::Z { q },
        "PARITY_CHECK_Z" => Gate::ParityCheckZ { ancilla: q },
        "PARITY_CHECK_X" => Gate::ParityCheckX { ancilla: q },
        "MEASURE" => Gate::Measure { q },
        "RESET" => Gate::Reset { q },
        other => return Err(LabsError::Format(format!("unknown gate kind {other:?}"))),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitMetadata {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    /// How gate angles relate to the schedule.
    pub gamma_convention: String,
    pub ordering: String,
    pub seed: u64,
    pub two_qubit_count: usize,
}

pub const GAMMA_CONVENTION: &str = "phase layer exp(-i gamma H_C); RZZ(theta) = exp(-i theta/2 ZZ), theta = 2 gamma c";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircuitFile")]
pub struct Circuit {
    pub n_data: usize,
    pub n_ancilla: usize,
    pub gates: Vec<Gate>,
    pub metadata: CircuitMetadata,
}

#[derive(Deserialize)]
struct CircuitFile {
    n_data: usize,
    n_ancilla: usize,
    gates: Vec<Gate>,
    metadata: CircuitMetadata,
}

impl TryFrom<CircuitFile> for Circuit {
    type Error = LabsError;

    fn try_from(f: CircuitFile) -> Result<Self> {
        let c = Circuit { n_data: f.n_data, n_ancilla: f.n_ancilla, gates: f.gates, metadata: f.metadata };
        c.validate()?;
        Ok(c)
    }
}

impl Circuit {
    pub fn n_qubits(&self) -> usize {
        self.n_data + self.n_ancilla
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.n_qubits();
        for (pos, g) in self.gates.iter().enumerate() {
            let qs = g.qubits();
            if qs.iter().any(|&q| q >= total) {
                return invalid(format!("gate {pos} ({}) addresses a qubit outside 0..{total}", g.kind()));
            }
            if qs.len() == 2 && qs[0] == qs[1] {
                return invalid(format!("gate {pos} ({}) repeats qubit {}", g.kind(), qs[0]));
            }
            if matches!(g, Gate::ParityCheckZ { ancilla } | Gate::ParityCheckX { ancilla } if *ancilla < self.n_data) {
                return invalid(format!("gate {pos}: parity checks must target an ancilla"));
            }
            if g.angle().is_some_and(|a| !a.is_finite()) {
                return invalid(format!("gate {pos} ({}) has a non-finite angle", g.kind()));
            }
        }
        Ok(())
    }

    pub fn two_qubit_count(&self) -> usize {
        self.gates.iter().filter(|g| g.is_two_qubit()).count()
    }

    pub fn cnot_count(&self) -> usize {
        self.gates.iter().filter(|g| matches!(g, Gate::Cnot { .. })).count()
    }

    /// Replaces parity-check meta-gates by their chains over all data qubits.
    pub fn expanded(&self) -> Circuit {
        let mut gates = Vec::with_capacity(self.gates.len());
        for g in &self.gates {
            match *g {
                Gate::ParityCheckZ { ancilla } => gates.extend((0..self.n_data).map(|q| Gate::Cz { a: ancilla, b: q })),
                Gate::ParityCheckX { ancilla } => {
                    gates.extend((0..self.n_data).map(|q| Gate::Cnot { control: ancilla, target: q }))
                }
                ref other => gates.push(other.clone()),
            }
        }
        Circuit { gates, ..self.clone() }
    }
}

/// Dense state over `n` qubits; qubit `q` is bit `q` of the basis index.
#[derive(Clone, Debug)]
pub struct DenseRegister {
    n: usize,
    amps: Vec<Complex64>,
}

impl DenseRegister {
    pub fn zero(n: usize) -> Result<Self> {
        check_exponential_alloc(n, std::mem::size_of::<Complex64>() as u64, "dense register")?;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1usize << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    /// Embeds a data state into a larger register with ancillas in `|0>`.
    pub fn with_data(data: &[Complex64], n_total: usize) -> Result<Self> {
        let mut reg = Self::zero(n_total)?;
        if !data.len().is_power_of_two() || data.len() > reg.amps.len() {
            return Err(LabsError::SizeMismatch { expected: reg.amps.len(), actual: data.len() });
        }
        reg.amps[..data.len()].copy_from_slice(data);
        reg.amps[data.len()..].fill(Complex64::new(0.0, 0.0));
        Ok(reg)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    fn single(&mut self, q: usize, m: [[Complex64; 2]; 2]) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let (a, b) = (self.amps[i], self.amps[i | bit]);
                self.amps[i] = m[0][0] * a + m[0][1] * b;
                self.amps[i | bit] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    fn diagonal(&mut self, f: impl Fn(usize) -> Complex64) {
        for (i, a) in self.amps.iter_mut().enumerate() {
            *a *= f(i);
        }
    }

    /// Applies a unitary gate. Meta-gates must be expanded first; measurement
    /// and reset go through [`DenseRegister::measure`].
    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match *gate {
            Gate::Cnot { control, target } => {
                let (c, t) = (1usize << control, 1usize << target);
                for x in 0..self.amps.len() {
                    if x & c != 0 && x & t == 0 {
                        self.amps.swap(x, x | t);
                    }
                }
            }
            Gate::Cz { a, b } => {
                let mask = (1usize << a) | (1usize << b);
                self.diagonal(|x| if x & mask == mask { -one } else { one });
            }
            Gate::Rzz { q1, q2, angle } => {
                let (even, odd) = (Complex64::from_polar(1.0, -angle / 2.0), Complex64::from_polar(1.0, angle / 2.0));
                self.diagonal(|x| if ((x >> q1) ^ (x >> q2)) & 1 == 0 { even } else { odd });
            }
            Gate::Rz { q, angle } => {
                let (up, down) = (Complex64::from_polar(1.0, -angle / 2.0), Complex64::from_polar(1.0, angle / 2.0));
                self.diagonal(|x| if (x >> q) & 1 == 0 { up } else { down });
            }
            Gate::Rx { q, angle } => {
                let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
                self.single(q, [[c.into(), -i * s], [-i * s, c.into()]]);
            }
            Gate::H { q } => {
                let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                self.single(q, [[h, h], [h, -h]]);
            }
            Gate::X { q } => self.single(q, [[zero, one], [one, zero]]),
            Gate::Y { q } => self.single(q, [[zero, -i], [i, zero]]),
            Gate::Z { q } => self.diagonal(|x| if (x >> q) & 1 == 0 { one } else { -one }),
            Gate::ParityCheckZ { .. } | Gate::ParityCheckX { .. } | Gate::Measure { .. } | Gate::Reset { .. } => {
                return Err(LabsError::Internal(format!("{} is not a unitary gate", gate.kind())))
            }
        }
        Ok(())
    }

    pub fn apply_all<'a>(&mut self, gates: impl IntoIterator<Item = &'a Gate>) -> Result<()> {
        gates.into_iter().try_for_each(|g| self.apply(g))
    }

    /// Projective Z measurement of qubit `q`; collapses and renormalizes.
    pub fn measure(&mut self, q: usize, rng: &mut impl Rng) -> bool {
        let bit = 1usize << q;
        let p1: f64 = self.amps.iter().enumerate().filter(|(x, _)| x & bit != 0).map(|(_, a)| a.norm_sqr()).sum();
        let outcome = rng.gen::<f64>() < p1;
        let keep = if outcome { p1 } else { 1.0 - p1 };
        let scale = 1.0 / keep.max(f64::MIN_POSITIVE).sqrt();
        for (x, a) in self.amps.iter_mut().enumerate() {
            if (x & bit != 0) == outcome {
                *a *= scale;
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        outcome
    }

    pub fn reset(&mut self, q: usize, rng: &mut impl Rng) {
        if self.measure(q, rng) {
            let _ = self.apply(&Gate::X { q });
        }
    }

    /// Marginal distribution of the lowest `n_data` qubits.
    pub fn data_probabilities(&self, n_data: usize) -> Vec<f64> {
        let mask = (1usize << n_data) - 1;
        let mut out = vec![0.0; 1usize << n_data];
        for (x, a) in self.amps.iter().enumerate() {
            out[x & mask] += a.norm_sqr();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(n: usize) -> CircuitMetadata {
        CircuitMetadata {
            n,
            p: 1,
            gamma_convention: GAMMA_CONVENTION.into(),
            ordering: "manual".into(),
            seed: 0,
            two_qubit_count: 0,
        }
    }

    #[test]
    fn json_uses_kind_qubits_angle() {
        let c = Circuit {
            n_data: 2,
            n_ancilla: 1,
            gates: vec![
                Gate::Cnot { control: 0, target: 1 },
                Gate::Rzz { q1: 0, q2: 1, angle: 0.25 },
                Gate::ParityCheckZ { ancilla: 2 },
                Gate::Measure { q: 2 },
            ],
            metadata: meta(2),
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains(r#"{"kind":"CNOT","qubits":[0,1]}"#));
        assert!(text.contains(r#"{"kind":"RZZ","qubits":[0,1],"angle":0.25}"#));
        assert!(text.contains(r#""N":2"#));
        let back: Circuit = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn malformed_circuits_are_rejected() {
        let bad_index = r#"{"n_data":2,"n_ancilla":0,"gates":[{"kind":"H","qubits":[2]}],"metadata":
            {"N":2,"p":1,"gamma_convention":"","ordering":"","seed":0,"two_qubit_count":0}}"#;
        assert!(serde_json::from_str::<Circuit>(bad_index).is_err());
        let missing_angle = r#"{"n_data":2,"n_ancilla":0,"gates":[{"kind":"RZ","qubits":[0]}],"metadata":
            {"N":2,"p":1,"gamma_convention":"","ordering":"","seed":0,"two_qubit_count":0}}"#;
        assert!(serde_json::from_str::<Circuit>(missing_angle).is_err());
        let check_on_data = Circuit {
            n_data: 2,
            n_ancilla: 1,
            gates: vec![Gate::ParityCheckX { ancilla: 1 }],
            metadata: meta(2),
        };
        assert!(check_on_data.validate().is_err());
    }

    #[test]
    fn expansion_is_a_chain_over_data() {
        let c = Circuit {
            n_data: 3,
            n_ancilla: 1,
            gates: vec![Gate::ParityCheckZ { ancilla: 3 }, Gate::ParityCheckX { ancilla: 3 }],
            metadata: meta(3),
        };
        let e = c.expanded();
        assert_eq!(e.gates.len(), 6);
        assert_eq!(e.gates[1], Gate::Cz { a: 3, b: 1 });
        assert_eq!(e.gates[5], Gate::Cnot { control: 3, target: 2 });
    }

    #[test]
    fn gate_identities() {
        // H Z H = X and RZZ(theta) = CNOT RZ(theta) CNOT on the target
        let mut a = DenseRegister::zero(2).unwrap();
        a.apply_all(&[Gate::H { q: 0 }, Gate::Rx { q: 1, angle: 0.7 }, Gate::H { q: 1 }]).unwrap();
        let mut b = a.clone();
        a.apply_all(&[Gate::H { q: 0 }, Gate::Z { q: 0 }, Gate::H { q: 0 }]).unwrap();
        b.apply(&Gate::X { q: 0 }).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x - y).norm() < 1e-12);
        }
        let mut c = a.clone();
        a.apply(&Gate::Rzz { q1: 0, q2: 1, angle: 0.9 }).unwrap();
        c.apply_all(&[Gate::Cnot { control: 0, target: 1 }, Gate::Rz { q: 1, angle: 0.9 }, Gate::Cnot { control: 0, target: 1 }])
            .unwrap();
        for (x, y) in a.amplitudes().iter().zip(c.amplitudes()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn measurement_collapses() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut r = DenseRegister::zero(2).unwrap();
        r.apply_all(&[Gate::H { q: 0 }, Gate::Cnot { control: 0, target: 1 }]).unwrap();
        let a = r.measure(0, &mut rng);
        let b = r.measure(1, &mut rng);
        assert_eq!(a, b);
        assert!((r.amplitudes().iter().map(|a| a.norm_sqr()).sum::<f64>() - 1.0).abs() < 1e-12);
        r.reset(1, &mut rng);
        assert!(!r.measure(1, &mut rng));
    }
}
