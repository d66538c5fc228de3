//! Parity-check error detection around the phase operator: check insertion,
//! Pauli-trajectory noise simulation with post-selection, the detection
//! property, and the average-time models for early stopping.
//!
//! The phase operator only contains CNOT, RZZ and RZ gates, so a prefix of it
//! is an affine permutation `x -> A x ^ b` of basis states preceded by a
//! diagonal phase. The fast simulator tracks `(A, b)` as bit rows and the
//! phase as Walsh coefficients over masks, injecting Paulis in that picture,
//! and only touches the state vector when a non-diagonal gate arrives.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, DenseRegister, Gate};
use crate::compiler::{compile_qaoa_chunked, Ordering};
use crate::error::{invalid, LabsError, Result};
use crate::problem::{merit_factor_of, EnergyTable, ProblemInstance};
use crate::schedules::Schedule;
use crate::seeding::{derive_seed, rng_from};

/// Largest total register (data plus ancillas) for the dense simulator.
pub const DENSE_MAX_QUBITS: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    fn has_x(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    fn has_z(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }

    fn gate(self, q: usize) -> Gate {
        match self {
            Pauli::X => Gate::X { q },
            Pauli::Y => Gate::Y { q },
            Pauli::Z => Gate::Z { q },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Error probability after each two-qubit gate.
    pub p2: f64,
    /// Weights of X, Y, Z for the injected Pauli; it lands on one of the
    /// gate's two qubits chosen uniformly.
    pub channel: [f64; 3],
    pub seed: u64,
    /// Also inject after the CZ/CNOT gates of the checks themselves.
    pub noisy_checks: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { p2: 2e-3, channel: [1.0 / 3.0; 3], seed: 0, noisy_checks: false }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p2) {
            return invalid(format!("p2={} must lie in [0, 1]", self.p2));
        }
        if self.channel.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("channel weights must be finite and non-negative");
        }
        if (self.channel.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid(format!("channel weights {:?} must sum to 1", self.channel));
        }
        Ok(())
    }

    fn sample_pauli(&self, rng: &mut impl Rng) -> Pauli {
        let u: f64 = rng.gen();
        if u < self.channel[0] {
            Pauli::X
        } else if u < self.channel[0] + self.channel[1] {
            Pauli::Y
        } else {
            Pauli::Z
        }
    }
}

/// One split of a phase segment: gates `start..end` of the base circuit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub layer: usize,
    pub start: usize,
    pub end: usize,
    pub two_qubit_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckedCircuit {
    pub base: Circuit,
    pub m: usize,
    pub splits: Vec<SplitInfo>,
    pub z_ancilla: usize,
    pub x_ancilla: usize,
    /// The base circuit with a Z/X check sandwich around every split.
    pub circuit: Circuit,
}

impl CheckedCircuit {
    /// Checks in measurement order: `2s` is the Z check of split `s`,
    /// `2s + 1` its X check.
    pub fn n_checks(&self) -> usize {
        2 * self.splits.len()
    }

    /// Largest difference in two-qubit count between splits of one layer.
    pub fn max_imbalance(&self) -> usize {
        let mut worst = 0;
        for layer in self.splits.iter().map(|s| s.layer).collect::<std::collections::BTreeSet<_>>() {
            let counts: Vec<usize> =
                self.splits.iter().filter(|s| s.layer == layer).map(|s| s.two_qubit_count).collect();
            worst = worst.max(counts.iter().max().unwrap() - counts.iter().min().unwrap());
        }
        worst
    }
}

fn is_phase_gate(g: &Gate) -> bool {
    matches!(g, Gate::Cnot { .. } | Gate::Rzz { .. } | Gate::Rz { .. })
}

/// `rows[q]` holds which input bits XOR into output bit `q`.
fn identity_rows(n: usize) -> Vec<u64> {
    (0..n).map(|q| 1u64 << q).collect()
}

fn full(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// The frame commutes with both global parities: every row has odd weight
/// (`A 1 = 1`) and the rows XOR to all ones (`1^T A = 1^T`).
fn preserves_parities(rows: &[u64]) -> bool {
    rows.iter().all(|r| r.count_ones() % 2 == 1) && rows.iter().fold(0, |acc, r| acc ^ r) == full(rows.len())
}

/// Offsets `c` in `0..=gates.len()` at which the CNOT prefix preserves both
/// parities, with the two-qubit count before each offset.
fn parity_cuts(n: usize, gates: &[Gate]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rows = identity_rows(n);
    let mut cuts = vec![0];
    let mut tq = vec![0];
    let mut count = 0;
    for (off, g) in gates.iter().enumerate() {
        match *g {
            Gate::Cnot { control, target } => rows[target] ^= rows[control],
            Gate::Rzz { q1, q2, .. } => {
                if (rows[q1] ^ rows[q2]).count_ones() % 2 == 1 {
                    return Err(LabsError::Internal("phase rotation on an odd-weight parity".into()));
                }
            }
            _ => {}
        }
        if g.is_two_qubit() {
            count += 1;
        }
        if preserves_parities(&rows) {
            cuts.push(off + 1);
            tq.push(count);
        }
    }
    if cuts.last() != Some(&gates.len()) {
        return invalid("phase segment does not commute with the parity checks");
    }
    Ok((cuts, tq))
}

/// Splits every phase segment (maximal run of CNOT/RZZ/RZ gates) of `circuit`
/// into `m` parts of near-equal two-qubit count and wraps each part in a
/// Z-parity check (outer) and X-parity check (inner) sharing two reusable
/// ancillas. Parts end only where the CNOT frame commutes with both parities.
pub fn insert_checks(circuit: &Circuit, m: usize) -> Result<CheckedCircuit> {
    circuit.validate()?;
    if circuit.n_ancilla != 0 {
        return invalid("insert_checks expects a circuit without ancillas");
    }
    if m == 0 {
        return invalid("m must be at least 1");
    }
    let n = circuit.n_data;
    let (za, xa) = (n, n + 1);
    let gates = &circuit.gates;
    let mut out = Vec::with_capacity(gates.len() + 16 * m);
    let mut splits = Vec::new();
    let mut layer = 0;
    let mut pos = 0;
    while pos < gates.len() {
        if !is_phase_gate(&gates[pos]) {
            out.push(gates[pos].clone());
            pos += 1;
            continue;
        }
        let end = (pos..gates.len()).find(|&i| !is_phase_gate(&gates[i])).unwrap_or(gates.len());
        let segment = &gates[pos..end];
        let (cuts, tq) = parity_cuts(n, segment)?;
        let total = *tq.last().unwrap();
        if total == 0 {
            out.extend_from_slice(segment);
            pos = end;
            continue;
        }
        if m > total {
            return invalid(format!("m={m} exceeds the {total} two-qubit gates of phase layer {layer}"));
        }
        let chosen = choose_cuts(&cuts, &tq, m).ok_or_else(|| {
            LabsError::InvalidArgument(format!("phase layer {layer} has too few parity-preserving cut points for m={m}"))
        })?;
        for w in chosen.windows(2) {
            let (a, b) = (cuts[w[0]], cuts[w[1]]);
            splits.push(SplitInfo { layer, start: pos + a, end: pos + b, two_qubit_count: tq[w[1]] - tq[w[0]] });
            out.extend([
                Gate::Reset { q: za },
                Gate::H { q: za },
                Gate::Reset { q: xa },
                Gate::H { q: xa },
                Gate::ParityCheckZ { ancilla: za },
                Gate::ParityCheckX { ancilla: xa },
            ]);
            out.extend_from_slice(&segment[a..b]);
            out.extend([
                Gate::ParityCheckX { ancilla: xa },
                Gate::ParityCheckZ { ancilla: za },
                Gate::H { q: za },
                Gate::Measure { q: za },
                Gate::H { q: xa },
                Gate::Measure { q: xa },
            ]);
        }
        layer += 1;
        pos = end;
    }
    if splits.is_empty() {
        return invalid("circuit has no phase gates to check");
    }
    let mut checked = Circuit { n_data: n, n_ancilla: 2, gates: out, metadata: circuit.metadata.clone() };
    checked.metadata.two_qubit_count = checked.expanded().two_qubit_count();
    Ok(CheckedCircuit { base: circuit.clone(), m, splits, z_ancilla: za, x_ancilla: xa, circuit: checked })
}

/// Indices into `cuts` (first and last included) whose two-qubit prefix
/// counts come closest to `k T / m`, strictly increasing.
fn choose_cuts(cuts: &[usize], tq: &[usize], m: usize) -> Option<Vec<usize>> {
    let total = *tq.last()? as f64;
    let last = cuts.len() - 1;
    let mut chosen = vec![0];
    for k in 1..m {
        let target = total * k as f64 / m as f64;
        let prev = *chosen.last().unwrap();
        // leave room for the remaining m - k cuts
        let hi = last.checked_sub(m - k)?;
        let best = (prev + 1..=hi)
            .filter(|&c| tq[c] > tq[prev])
            .min_by(|&a, &b| (tq[a] as f64 - target).abs().total_cmp(&(tq[b] as f64 - target).abs()))?;
        chosen.push(best);
    }
    if tq[last] <= tq[*chosen.last().unwrap()] {
        return None;
    }
    chosen.push(last);
    Some(chosen)
}

/// A Pauli applied right after gate `after` of the expanded checked circuit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub after: usize,
    pub qubit: usize,
    pub pauli: Pauli,
}

#[derive(Clone, Debug)]
pub struct ShotOutcome {
    /// One entry per check, `true` when the ancilla read 1.
    pub syndromes: Vec<bool>,
    /// Final distribution over data basis states.
    pub probabilities: Vec<f64>,
}

impl ShotOutcome {
    pub fn detected(&self) -> bool {
        self.syndromes.iter().any(|&s| s)
    }
}

/// In-place unnormalized Walsh-Hadamard transform.
fn fwht(v: &mut [f64]) {
    let mut h = 1;
    while h < v.len() {
        for block in v.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Pending affine frame plus diagonal phase, relative to the last time the
/// state vector was materialized.
struct Frame {
    n: usize,
    rows: Vec<u64>,
    b: u64,
    /// `1^T A^{-1}`: the global X parity of a Pauli pulled back to the frame start.
    zrow: u64,
    coeffs: Vec<f64>,
    dirty: bool,
}

impl Frame {
    fn new(n: usize) -> Self {
        Self { n, rows: identity_rows(n), b: 0, zrow: full(n), coeffs: vec![0.0; 1usize << n], dirty: false }
    }

    fn sign(&self, q: usize) -> f64 {
        if (self.b >> q) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn cnot(&mut self, c: usize, t: usize) {
        self.rows[t] ^= self.rows[c];
        self.b ^= ((self.b >> c) & 1) << t;
        self.zrow ^= ((self.zrow >> t) & 1) << c;
        self.dirty = true;
    }

    /// `exp(-i angle/2 prod_q Z_q)` for the qubits in `qs`.
    fn rotation(&mut self, qs: &[usize], angle: f64) {
        let mask = qs.iter().fold(0, |m, &q| m ^ self.rows[q]);
        let sign: f64 = qs.iter().map(|&q| self.sign(q)).product();
        self.coeffs[mask as usize] += sign * angle / 2.0;
        self.dirty = true;
    }

    /// Applies `P_q`; returns its contribution to the (Z-check, X-check)
    /// syndromes of the enclosing sandwich.
    fn pauli(&mut self, q: usize, p: Pauli) -> (bool, bool) {
        let mut syn = (false, false);
        if p.has_z() {
            // Z_q = exp(i pi/2) exp(-i pi/2 Z_q); the global phase is dropped
            self.coeffs[self.rows[q] as usize] += std::f64::consts::FRAC_PI_2;
            syn.1 = self.rows[q].count_ones() % 2 == 1;
        }
        if p.has_x() {
            self.b ^= 1 << q;
            syn.0 = (self.zrow >> q) & 1 == 1;
        }
        self.dirty = true;
        syn
    }

    fn materialize(&mut self, state: &mut Vec<Complex64>) {
        if !self.dirty {
            return;
        }
        fwht(&mut self.coeffs);
        for (a, &phi) in state.iter_mut().zip(&self.coeffs) {
            *a *= Complex64::from_polar(1.0, -phi);
        }
        // columns of A, then image[x] = A x ^ b built from lower indices
        let cols: Vec<u64> = (0..self.n)
            .map(|j| self.rows.iter().enumerate().fold(0u64, |c, (q, r)| c | (((r >> j) & 1) << q)))
            .collect();
        let mut image = vec![0u64; state.len()];
        for x in 1..state.len() {
            image[x] = image[x & (x - 1)] ^ cols[x.trailing_zeros() as usize];
        }
        let mut out = vec![Complex64::new(0.0, 0.0); state.len()];
        for (x, &a) in state.iter().enumerate() {
            out[(image[x] ^ self.b) as usize] = a;
        }
        *state = out;
        let n = self.n;
        self.rows = identity_rows(n);
        self.b = 0;
        self.zrow = full(n);
        self.coeffs.fill(0.0);
        self.dirty = false;
    }
}

fn apply_single(state: &mut [Complex64], q: usize, gate: &Gate) -> Result<()> {
    let i = Complex64::new(0.0, 1.0);
    let m: [[Complex64; 2]; 2] = match *gate {
        Gate::H { .. } => {
            let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            [[h, h], [h, -h]]
        }
        Gate::Rx { angle, .. } => {
            let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
            [[c.into(), -i * s], [-i * s, c.into()]]
        }
        _ => return Err(LabsError::Internal(format!("{} is not a single-qubit mixing gate", gate.kind()))),
    };
    let bit = 1usize << q;
    for x in 0..state.len() {
        if x & bit == 0 {
            let (a, b) = (state[x], state[x | bit]);
            state[x] = m[0][0] * a + m[0][1] * b;
            state[x | bit] = m[1][0] * a + m[1][1] * b;
        }
    }
    Ok(())
}

/// Trajectory simulator for one checked circuit.
pub struct NoisySimulator {
    checked: CheckedCircuit,
    gates: Vec<Gate>,
    /// Noise sites on data-only two-qubit gates, and on check gates.
    data_sites: Vec<usize>,
    check_sites: Vec<usize>,
    /// Sites inside a sandwich where the frame preserves both parities.
    parity_sites: Vec<usize>,
    /// Ideal data state at the start of each phase segment, with the position
    /// of that segment's first gate.
    checkpoints: Vec<(usize, Vec<Complex64>)>,
    ideal: Vec<f64>,
}

impl NoisySimulator {
    pub fn new(checked: &CheckedCircuit) -> Result<Self> {
        let n = checked.circuit.n_data;
        crate::budget::check_exponential_alloc(n, 40, "noisy simulation")?;
        let gates = checked.circuit.expanded().gates;
        let mut data_sites = Vec::new();
        let mut check_sites = Vec::new();
        let mut parity_sites = Vec::new();
        let mut rows = identity_rows(n);
        let mut open = false;
        for (pos, g) in gates.iter().enumerate() {
            let on_ancilla = g.qubits().iter().any(|&q| q >= n);
            if g.is_two_qubit() {
                if on_ancilla {
                    check_sites.push(pos);
                } else {
                    data_sites.push(pos);
                }
            }
            match *g {
                Gate::Cnot { control, target } if !on_ancilla => rows[target] ^= rows[control],
                Gate::ParityCheckZ { .. } | Gate::ParityCheckX { .. } => unreachable!("expanded"),
                Gate::Reset { q } if q == checked.z_ancilla => open = true,
                Gate::Measure { q } if q == checked.z_ancilla => open = false,
                _ if !is_phase_gate(g) && !on_ancilla => rows = identity_rows(n),
                _ => {}
            }
            let closes_opening = matches!(*g, Gate::Cnot { control, .. } if control == checked.x_ancilla)
                && gates.get(pos + 1).is_some_and(|next| !next.touches(checked.x_ancilla));
            if open && preserves_parities(&rows) && ((!on_ancilla && is_phase_gate(g)) || closes_opening) {
                parity_sites.push(pos);
            }
        }
        let mut sim = Self {
            checked: checked.clone(),
            gates,
            data_sites,
            check_sites,
            parity_sites,
            checkpoints: Vec::new(),
            ideal: Vec::new(),
        };
        let (ideal, checkpoints) = sim.run_fast_inner(&[], true)?;
        sim.ideal = ideal.probabilities;
        sim.checkpoints = checkpoints;
        Ok(sim)
    }

    pub fn checked(&self) -> &CheckedCircuit {
        &self.checked
    }

    /// The expanded gate list that injection positions refer to.
    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn data_sites(&self) -> &[usize] {
        &self.data_sites
    }

    pub fn check_sites(&self) -> &[usize] {
        &self.check_sites
    }

    pub fn parity_sites(&self) -> &[usize] {
        &self.parity_sites
    }

    pub fn ideal_probabilities(&self) -> &[f64] {
        &self.ideal
    }

    fn n(&self) -> usize {
        self.checked.circuit.n_data
    }

    /// Frame-picture trajectory; `injections` must be sorted by position and
    /// act on data qubits.
    pub fn run_fast(&self, injections: &[Injection]) -> Result<ShotOutcome> {
        Ok(self.run_fast_inner(injections, false)?.0)
    }

    fn run_fast_inner(
        &self,
        injections: &[Injection],
        record: bool,
    ) -> Result<(ShotOutcome, Vec<(usize, Vec<Complex64>)>)> {
        let n = self.n();
        if injections.windows(2).any(|w| w[0].after > w[1].after) {
            return invalid("injections must be sorted by position");
        }
        if let Some(bad) = injections.iter().find(|inj| inj.qubit >= n || inj.after >= self.gates.len()) {
            return invalid(format!("fast simulation only injects on data qubits in range, got {bad:?}"));
        }
        let (za, xa) = (self.checked.z_ancilla, self.checked.x_ancilla);
        // resume from the last ideal checkpoint before the first injection
        let first = injections.first().map_or(usize::MAX, |inj| inj.after);
        let (start, mut state) = match self.checkpoints.iter().rev().find(|(pos, _)| *pos <= first) {
            Some((pos, s)) if !record => (*pos, s.clone()),
            _ => {
                let mut s = vec![Complex64::new(0.0, 0.0); 1usize << n];
                s[0] = Complex64::new(1.0, 0.0);
                (0, s)
            }
        };
        let mut frame = Frame::new(n);
        let mut acc = (false, false);
        let mut syndromes = Vec::with_capacity(self.checked.n_checks());
        let mut checkpoints = Vec::new();
        let mut next = 0;
        let mut in_phase = false;
        for (pos, g) in self.gates.iter().enumerate().skip(start) {
            let on_ancilla = g.qubits().iter().any(|&q| q >= n);
            if record && !on_ancilla && is_phase_gate(g) && !in_phase {
                frame.materialize(&mut state);
                checkpoints.push((pos, state.clone()));
            }
            if !on_ancilla {
                in_phase = is_phase_gate(g) || matches!(g, Gate::X { .. } | Gate::Y { .. } | Gate::Z { .. });
            }
            match *g {
                Gate::Measure { q } if q == za => {
                    syndromes.push(acc.0);
                    acc.0 = false;
                }
                Gate::Measure { q } if q == xa => {
                    syndromes.push(acc.1);
                    acc.1 = false;
                }
                Gate::Reset { q } if q == za => acc.0 = false,
                Gate::Reset { q } if q == xa => acc.1 = false,
                _ if on_ancilla => {}
                Gate::Cnot { control, target } => frame.cnot(control, target),
                Gate::Rzz { q1, q2, angle } => frame.rotation(&[q1, q2], angle),
                Gate::Rz { q, angle } => frame.rotation(&[q], angle),
                Gate::X { q } | Gate::Y { q } | Gate::Z { q } => {
                    let p = match g {
                        Gate::X { .. } => Pauli::X,
                        Gate::Y { .. } => Pauli::Y,
                        _ => Pauli::Z,
                    };
                    let (sz, sx) = frame.pauli(q, p);
                    acc = (acc.0 ^ sz, acc.1 ^ sx);
                }
                Gate::H { q } | Gate::Rx { q, .. } => {
                    frame.materialize(&mut state);
                    apply_single(&mut state, q, g)?;
                }
                _ => {
                    return Err(LabsError::Internal(format!("fast simulation cannot apply {} on data", g.kind())));
                }
            }
            while next < injections.len() && injections[next].after == pos {
                let (sz, sx) = frame.pauli(injections[next].qubit, injections[next].pauli);
                acc = (acc.0 ^ sz, acc.1 ^ sx);
                next += 1;
            }
        }
        frame.materialize(&mut state);
        let probabilities = state.iter().map(|a| a.norm_sqr()).collect();
        // a shot resumed from a checkpoint skipped no measurements: checks
        // only sit inside phase segments, after their checkpoint
        let missing = self.checked.n_checks() - syndromes.len();
        let mut all = vec![false; missing];
        all.extend(syndromes);
        Ok((ShotOutcome { syndromes: all, probabilities }, checkpoints))
    }

    /// Gate-by-gate simulation with explicit ancillas; injections may also
    /// sit on check gates and ancillas.
    pub fn run_dense(&self, injections: &[Injection], rng: &mut impl Rng) -> Result<ShotOutcome> {
        let total = self.checked.circuit.n_qubits();
        if total > DENSE_MAX_QUBITS {
            return Err(LabsError::Resource(format!(
                "dense checked simulation needs {total} qubits, limit {DENSE_MAX_QUBITS}"
            )));
        }
        let mut reg = DenseRegister::zero(total)?;
        let mut syndromes = Vec::with_capacity(self.checked.n_checks());
        let mut next = 0;
        for (pos, g) in self.gates.iter().enumerate() {
            match *g {
                Gate::Measure { q } => syndromes.push(reg.measure(q, rng)),
                Gate::Reset { q } => reg.reset(q, rng),
                _ => reg.apply(g)?,
            }
            while next < injections.len() && injections[next].after == pos {
                reg.apply(&injections[next].pauli.gate(injections[next].qubit))?;
                next += 1;
            }
        }
        Ok(ShotOutcome { syndromes, probabilities: reg.data_probabilities(self.n()) })
    }

    /// Independent errors after each noisy two-qubit gate.
    pub fn sample_injections(&self, noise: &NoiseModel, rng: &mut impl Rng) -> Vec<Injection> {
        let mut out = Vec::new();
        if noise.p2 == 0.0 {
            return out;
        }
        let mut sites: Vec<usize> = self.data_sites.clone();
        if noise.noisy_checks {
            sites.extend(&self.check_sites);
            sites.sort_unstable();
        }
        for pos in sites {
            if rng.gen::<f64>() < noise.p2 {
                let qs = self.gates[pos].qubits();
                let qubit = qs[rng.gen_range(0..qs.len())];
                out.push(Injection { after: pos, qubit, pauli: noise.sample_pauli(rng) });
            }
        }
        out
    }

    /// Fast path when every injection is on a data qubit, dense otherwise.
    pub fn run(&self, injections: &[Injection], rng: &mut impl Rng) -> Result<ShotOutcome> {
        if injections.is_empty() {
            return Ok(ShotOutcome { syndromes: vec![false; self.checked.n_checks()], probabilities: self.ideal.clone() });
        }
        if injections.iter().all(|inj| inj.qubit < self.n()) && !self.touches_check_gate(injections) {
            self.run_fast(injections)
        } else {
            self.run_dense(injections, rng)
        }
    }

    fn touches_check_gate(&self, injections: &[Injection]) -> bool {
        injections.iter().any(|inj| self.gates[inj.after].qubits().iter().any(|&q| q >= self.n()))
    }
}

fn sample_index(probabilities: &[f64], u: f64) -> usize {
    let total: f64 = probabilities.iter().sum();
    let mut target = u * total;
    for (i, &p) in probabilities.iter().enumerate() {
        if target < p {
            return i;
        }
        target -= p;
    }
    probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostSelectionStats {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub p2: f64,
    pub shots: u64,
    pub shots_kept: u64,
    pub ratio: f64,
    pub mf_all: f64,
    /// `None` when every shot was discarded.
    pub mf_kept: Option<f64>,
    pub detections_per_check: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: u64,
    pub bitstring: String,
    pub kept: bool,
    pub syndrome: String,
}

/// Samples `shots` noisy trajectories and post-selects on all-zero syndromes.
pub fn simulate_noisy(
    sim: &NoisySimulator,
    noise: &NoiseModel,
    shots: u64,
    table: &EnergyTable,
    keep_shots: bool,
) -> Result<(PostSelectionStats, Vec<ShotRecord>)> {
    noise.validate()?;
    let n = sim.n();
    if table.n() != n {
        return Err(LabsError::SizeMismatch { expected: n, actual: table.n() });
    }
    if shots == 0 {
        return invalid("shots must be positive");
    }
    let m = sim.checked.m;
    let results: Vec<Result<(u64, Vec<bool>)>> = (0..shots)
        .into_par_iter()
        .map(|shot| {
            let mut rng = rng_from(noise.seed, &[n as u64, m as u64, shot]);
            let injections = sim.sample_injections(noise, &mut rng);
            let outcome = sim.run(&injections, &mut rng)?;
            let x = sample_index(&outcome.probabilities, rng.gen());
            Ok((x as u64, outcome.syndromes))
        })
        .collect();
    let mut detections = vec![0u64; sim.checked.n_checks()];
    let (mut sum_all, mut sum_kept, mut kept) = (0.0, 0.0, 0u64);
    let mut records = Vec::new();
    for (shot, r) in results.into_iter().enumerate() {
        let (x, syndromes) = r?;
        let mf = merit_factor_of(n, table.energy(x))?;
        let ok = !syndromes.iter().any(|&s| s);
        sum_all += mf;
        if ok {
            kept += 1;
            sum_kept += mf;
        }
        for (d, &s) in detections.iter_mut().zip(&syndromes) {
            *d += s as u64;
        }
        if keep_shots {
            records.push(ShotRecord {
                shot: shot as u64,
                bitstring: crate::problem::index_to_hex(x, n),
                kept: ok,
                syndrome: syndromes.iter().map(|&s| if s { '1' } else { '0' }).collect(),
            });
        }
    }
    let stats = PostSelectionStats {
        n,
        p: sim.checked.base.metadata.p,
        m,
        p2: noise.p2,
        shots,
        shots_kept: kept,
        ratio: kept as f64 / shots as f64,
        mf_all: sum_all / shots as f64,
        mf_kept: (kept > 0).then(|| sum_kept / kept as f64),
        detections_per_check: detections,
    };
    Ok((stats, records))
}

/// Checked QAOA circuit for a schedule: greedy term order, each layer's
/// phase operator compiled in `m` chunks so every split boundary is a clean
/// cut point.
pub fn checked_qaoa(n: usize, schedule: &Schedule, m: usize, seed: u64) -> Result<CheckedCircuit> {
    let inst = ProblemInstance::new(n)?;
    insert_checks(&compile_qaoa_chunked(&inst, schedule, Ordering::Greedy, seed, m)?, m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub trials: u64,
    pub detected: u64,
    /// Detected fraction for single Paulis at parity-preserving sites.
    pub rate: f64,
    /// Same experiment over every two-qubit gate; mid-gadget errors can
    /// spread to even weight and evade both checks.
    pub all_sites_rate: f64,
}

/// Injects exactly one uniformly random single-qubit Pauli per trial on a
/// random data qubit inside a random sandwich and reports the detected
/// fraction (expected 1).
pub fn detection_theorem_check(n: usize, m: usize, trials: u64, seed: u64) -> Result<DetectionReport> {
    let mut rng = rng_from(seed, &[n as u64, m as u64]);
    let schedule = Schedule::manual(vec![rng.gen_range(0.1..0.5)], vec![rng.gen_range(0.05..0.5)])?;
    let sim = NoisySimulator::new(&checked_qaoa(n, &schedule, m, seed)?)?;
    let trial = |sites: &[usize], rng: &mut rand_chacha::ChaCha8Rng| -> Result<bool> {
        let inj = Injection {
            after: sites[rng.gen_range(0..sites.len())],
            qubit: rng.gen_range(0..n),
            pauli: Pauli::ALL[rng.gen_range(0..3)],
        };
        Ok(sim.run_fast(&[inj])?.detected())
    };
    let mut detected = 0;
    let mut all_detected = 0;
    for _ in 0..trials {
        detected += trial(sim.parity_sites(), &mut rng)? as u64;
        all_detected += trial(sim.data_sites(), &mut rng)? as u64;
    }
    let rate = |d: u64| if trials == 0 { 0.0 } else { d as f64 / trials as f64 };
    Ok(DetectionReport { n, m, trials, detected, rate: rate(detected), all_sites_rate: rate(all_detected) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgTimes {
    pub t1: f64,
    pub t2: f64,
    /// Some split never runs error-free; both times are infinite.
    pub infinite: bool,
}

/// Average time to an all-clear shot without (`t1`) and with (`t2`) early
/// stopping at the first failed check; `p_list[i]` is the probability that
/// split `i + 1` of `m` shows no detectable error.
pub fn avg_time_models(t0: f64, p_list: &[f64]) -> Result<AvgTimes> {
    if !(t0.is_finite() && t0 >= 0.0) {
        return invalid("t0 must be finite and non-negative");
    }
    if p_list.is_empty() {
        return invalid("need at least one split probability");
    }
    if let Some(p) = p_list.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return invalid(format!("split probability {p} outside [0, 1]"));
    }
    if p_list.contains(&0.0) {
        return Ok(AvgTimes { t1: f64::INFINITY, t2: f64::INFINITY, infinite: true });
    }
    let m = p_list.len();
    let all: f64 = p_list.iter().product();
    let t1 = t0 / all;
    // abandoned after failing split i (1-based, i < m): time fraction i/m
    let mut survive = 1.0;
    let mut expected_fraction = 0.0;
    for (i, &p) in p_list.iter().enumerate().take(m - 1) {
        expected_fraction += survive * (1.0 - p) * (i + 1) as f64 / m as f64;
        survive *= p;
    }
    expected_fraction += survive;
    Ok(AvgTimes { t1, t2: t1 * expected_fraction, infinite: false })
}

/// `true` when the diagonal `hc` is invariant under complementing all bits,
/// i.e. commutes with the global X parity. Commutation with the global Z
/// parity is automatic for any diagonal operator.
pub fn parity_symmetry_check(n: usize, hc: impl Fn(u64) -> i64) -> Result<bool> {
    if !(1..=20).contains(&n) {
        return invalid(format!("exhaustive symmetry check supports 1 <= N <= 20, got {n}"));
    }
    let mask = full(n);
    Ok((0..1u64 << n).all(|x| hc(x) == hc(x ^ mask)))
}

pub fn symmetry_commutation_check(instance: &ProblemInstance) -> Result<bool> {
    instance.validate()?;
    parity_symmetry_check(instance.n, |x| instance.hamiltonian_value_index(x))
}

/// Seed for shot `shot` of a noisy run; exposed for shot-level replays.
pub fn shot_seed(noise: &NoiseModel, n: usize, m: usize, shot: u64) -> u64 {
    derive_seed(noise.seed, &[n as u64, m as u64, shot])
}
