//! Phase-operator compilation: four-body gadgets, term ordering for CNOT
//! cancellation, the cancellation pass and gate-count reports.

use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, CircuitMetadata, Gate, GAMMA_CONVENTION};
use crate::error::{invalid, LabsError, Result};
use crate::problem::{ProblemInstance, FOUR_BODY_COEFF};
use crate::schedules::Schedule;
use crate::seeding::rng_from;

const RANDOM_ORDER_STREAM: u64 = 0x7261_6e64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Four([usize; 4]),
    Two([usize; 2]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Greedy,
    Random,
}

impl Ordering {
    pub fn name(self) -> &'static str {
        match self {
            Ordering::Greedy => "greedy",
            Ordering::Random => "random",
        }
    }
}

impl FromStr for Ordering {
    type Err = LabsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Ordering::Greedy),
            "random" => Ok(Ordering::Random),
            other => invalid(format!("unknown ordering {other:?} (expected greedy or random)")),
        }
    }
}

/// `CNOT(i->j) CNOT(l->k) RZZ(j,k) CNOT(l->k) CNOT(i->j)`: the CNOTs fold the
/// parity of all four qubits onto the inner pair, giving
/// `exp(-i gamma c Z_i Z_j Z_k Z_l)` with `c` the four-body coefficient.
pub fn decompose_four_body(quad: [usize; 4], gamma: f64) -> Result<Vec<Gate>> {
    let [i, j, k, l] = quad;
    if !(i < j && j < k && k < l) {
        return invalid(format!("four-body term {quad:?} must be strictly increasing"));
    }
    if !gamma.is_finite() {
        return invalid("gamma must be finite");
    }
    let angle = 2.0 * gamma * FOUR_BODY_COEFF as f64;
    Ok(vec![
        Gate::Cnot { control: i, target: j },
        Gate::Cnot { control: l, target: k },
        Gate::Rzz { q1: j, q2: k, angle },
        Gate::Cnot { control: l, target: k },
        Gate::Cnot { control: i, target: j },
    ])
}

fn locality(quad: &[usize; 4]) -> Result<usize> {
    let d = quad[1] - quad[0];
    if quad[3] - quad[2] != d {
        return Err(LabsError::Internal(format!("four-body term {quad:?} has unequal outer spacings")));
    }
    Ok(d)
}

/// Greedy term order for CNOT cancellation. Four-body terms are grouped by
/// locality `d = j - i`; each group starts from a random term and then
/// repeatedly takes the best-scoring term (ties: smallest tuple). Two-body
/// terms go right after the first four-body term sharing their pair, or at
/// the end.
pub fn greedy_order(instance: &ProblemInstance, seed: u64) -> Result<Vec<Term>> {
    instance.validate()?;
    let mut groups: BTreeMap<usize, Vec<[usize; 4]>> = BTreeMap::new();
    for quad in &instance.four_body {
        groups.entry(locality(quad)?).or_default().push(*quad);
    }
    let mut circuit: Vec<Term> = Vec::with_capacity(instance.four_body.len() + instance.two_body.len());
    for (d, mut pool) in groups {
        pool.sort_unstable();
        let mut rng = rng_from(seed, &[instance.n as u64, d as u64]);
        let current = pool.remove(rng.gen_range(0..pool.len()));
        circuit.push(Term::Four(current));
        let mut tops: HashSet<(usize, usize)> = HashSet::from([(current[0], current[1])]);
        let mut bottoms: HashSet<(usize, usize)> = HashSet::from([(current[2], current[3])]);
        // second entries of the pair sets, for the stranded-CNOT penalty
        let mut top_targets: HashSet<usize> = HashSet::from([current[1]]);
        let mut bottom_controls: HashSet<usize> = HashSet::from([current[3]]);
        while !pool.is_empty() {
            let mut best: Option<(i32, usize)> = None;
            for (idx, &[r, s, t, v]) in pool.iter().enumerate() {
                let mut score = if tops.contains(&(r, s)) || bottoms.contains(&(t, v)) { 1 } else { -1 };
                if bottom_controls.contains(&r) || top_targets.contains(&t) {
                    score -= 1;
                }
                // pool is sorted, so the first maximum is the smallest tuple
                if best.is_none_or(|(b, _)| score > b) {
                    best = Some((score, idx));
                }
            }
            let [a, b, c, e] = pool.remove(best.expect("pool is non-empty").1);
            circuit.push(Term::Four([a, b, c, e]));
            tops.insert((a, b));
            bottoms.insert((c, e));
            top_targets.insert(b);
            bottom_controls.insert(e);
        }
    }
    for &[i, j] in &instance.two_body {
        let slot = circuit.iter().position(|term| match *term {
            Term::Four([r, s, t, v]) => (i, j) == (r, s) || (i, j) == (t, v),
            Term::Two(_) => false,
        });
        match slot {
            Some(pos) => circuit.insert(pos + 1, Term::Two([i, j])),
            None => circuit.push(Term::Two([i, j])),
        }
    }
    Ok(circuit)
}

/// All terms in a uniformly random order.
pub fn random_order(instance: &ProblemInstance, seed: u64) -> Result<Vec<Term>> {
    instance.validate()?;
    let mut terms: Vec<Term> = instance
        .four_body
        .iter()
        .map(|&q| Term::Four(q))
        .chain(instance.two_body.iter().map(|&p| Term::Two(p)))
        .collect();
    terms.shuffle(&mut rng_from(seed, &[instance.n as u64, RANDOM_ORDER_STREAM]));
    Ok(terms)
}

pub fn order_terms(instance: &ProblemInstance, ordering: Ordering, seed: u64) -> Result<Vec<Term>> {
    match ordering {
        Ordering::Greedy => greedy_order(instance, seed),
        Ordering::Random => random_order(instance, seed),
    }
}

/// Gates for the terms in order; two-body terms become a bare
/// `RZZ(i, j, 2 gamma)`.
pub fn decompose_terms(terms: &[Term], gamma: f64) -> Result<Vec<Gate>> {
    let mut gates = Vec::with_capacity(terms.len() * 5);
    for term in terms {
        match *term {
            Term::Four(quad) => gates.extend(decompose_four_body(quad, gamma)?),
            Term::Two([i, j]) => {
                if i >= j {
                    return invalid(format!("two-body term {:?} must be increasing", [i, j]));
                }
                gates.push(Gate::Rzz { q1: i, q2: j, angle: 2.0 * gamma });
            }
        }
    }
    Ok(gates)
}

/// Removes pairs of identical CNOTs separated only by gates acting on other
/// qubits, until none remain. Parity-check meta-gates act as barriers.
pub fn cancel_pass(gates: Vec<Gate>) -> Vec<Gate> {
    let mut current = gates;
    loop {
        let before = current.len();
        current = cancel_once(current);
        if current.len() == before {
            return current;
        }
    }
}

fn cancel_once(gates: Vec<Gate>) -> Vec<Gate> {
    let width = gates.iter().flat_map(|g| g.qubits()).max().map_or(0, |q| q + 1);
    let mut out: Vec<Option<Gate>> = Vec::with_capacity(gates.len());
    // per qubit, indices into `out` of the surviving gates acting on it
    let mut stacks: Vec<Vec<usize>> = vec![Vec::new(); width];
    for gate in gates {
        if let Gate::Cnot { control, target } = gate {
            if let (Some(&a), Some(&b)) = (stacks[control].last(), stacks[target].last()) {
                if a == b && out[a] == Some(gate.clone()) {
                    out[a] = None;
                    stacks[control].pop();
                    stacks[target].pop();
                    continue;
                }
            }
        }
        let idx = out.len();
        if matches!(gate, Gate::ParityCheckZ { .. } | Gate::ParityCheckX { .. }) {
            stacks.iter_mut().for_each(|s| s.push(idx));
        } else {
            for q in gate.qubits() {
                stacks[q].push(idx);
            }
        }
        out.push(Some(gate));
    }
    out.into_iter().flatten().collect()
}

fn metadata(n: usize, p: usize, ordering: Ordering, seed: u64, gates: &[Gate]) -> CircuitMetadata {
    CircuitMetadata {
        n,
        p,
        gamma_convention: GAMMA_CONVENTION.to_string(),
        ordering: ordering.name().to_string(),
        seed,
        two_qubit_count: gates.iter().filter(|g| g.is_two_qubit()).count(),
    }
}

pub fn compile_phase_with(instance: &ProblemInstance, gamma: f64, ordering: Ordering, seed: u64) -> Result<Circuit> {
    let terms = order_terms(instance, ordering, seed)?;
    let gates = cancel_pass(decompose_terms(&terms, gamma)?);
    Ok(Circuit {
        n_data: instance.n,
        n_ancilla: 0,
        metadata: metadata(instance.n, 1, ordering, seed, &gates),
        gates,
    })
}

/// `exp(-i gamma H_C)` as a greedily ordered, CNOT-cancelled gate list.
pub fn compile_phase(instance: &ProblemInstance, gamma: f64, seed: u64) -> Result<Circuit> {
    compile_phase_with(instance, gamma, Ordering::Greedy, seed)
}

/// The full ansatz: Hadamards, then per layer the compiled phase operator
/// followed by `RX(2 beta)` on every qubit. One term order serves all layers.
pub fn compile_qaoa(instance: &ProblemInstance, schedule: &Schedule, ordering: Ordering, seed: u64) -> Result<Circuit> {
    compile_qaoa_chunked(instance, schedule, ordering, seed, 1)
}

/// Splits the ordered terms into `chunks` contiguous runs whose cancelled
/// two-qubit counts are close to equal. Cancellation never crosses a chunk
/// boundary, so the CNOT frame there is the identity.
pub fn chunk_terms(terms: &[Term], chunks: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if chunks == 0 || chunks > terms.len() {
        return invalid(format!("cannot cut {} terms into {chunks} chunks", terms.len()));
    }
    let count = |range: std::ops::Range<usize>| -> Result<usize> {
        Ok(cancel_pass(decompose_terms(&terms[range], 0.1)?).iter().filter(|g| g.is_two_qubit()).count())
    };
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for k in 0..chunks - 1 {
        let target = count(start..terms.len())? as f64 / (chunks - k) as f64;
        // room for one term per remaining chunk
        let last_end = terms.len() - (chunks - k - 1);
        let mut best = (f64::INFINITY, start + 1);
        for end in start + 1..=last_end {
            let c = count(start..end)?;
            let miss = (c as f64 - target).abs();
            if miss < best.0 {
                best = (miss, end);
            }
            if c as f64 > target {
                break;
            }
        }
        out.push(start..best.1);
        start = best.1;
    }
    out.push(start..terms.len());
    // nudge boundaries one term at a time while the spread shrinks
    let spread = |bounds: &[usize]| -> Result<usize> {
        let counts = bounds.windows(2).map(|w| count(w[0]..w[1])).collect::<Result<Vec<_>>>()?;
        Ok(counts.iter().max().unwrap() - counts.iter().min().unwrap())
    };
    let mut bounds: Vec<usize> = out.iter().map(|r| r.start).chain([terms.len()]).collect();
    let mut current = spread(&bounds)?;
    while current > 1 {
        let mut improved = false;
        for i in 1..chunks {
            for step in [-1isize, 1] {
                let moved = bounds[i] as isize + step;
                if moved <= bounds[i - 1] as isize || moved >= bounds[i + 1] as isize {
                    continue;
                }
                let mut trial = bounds.clone();
                trial[i] = moved as usize;
                let s = spread(&trial)?;
                if s < current {
                    (bounds, current, improved) = (trial, s, true);
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(bounds.windows(2).map(|w| w[0]..w[1]).collect())
}

/// [`compile_qaoa`] with each layer's phase operator compiled as `chunks`
/// independently cancelled parts, ready for one check sandwich per part.
pub fn compile_qaoa_chunked(
    instance: &ProblemInstance,
    schedule: &Schedule,
    ordering: Ordering,
    seed: u64,
    chunks: usize,
) -> Result<Circuit> {
    let terms = order_terms(instance, ordering, seed)?;
    let ranges = chunk_terms(&terms, chunks)?;
    let n = instance.n;
    let mut gates: Vec<Gate> = (0..n).map(|q| Gate::H { q }).collect();
    for (&beta, &gamma) in schedule.betas.iter().zip(&schedule.gammas) {
        for r in &ranges {
            gates.extend(cancel_pass(decompose_terms(&terms[r.clone()], gamma)?));
        }
        gates.extend((0..n).map(|q| Gate::Rx { q, angle: 2.0 * beta }));
    }
    Ok(Circuit { n_data: n, n_ancilla: 0, metadata: metadata(n, schedule.p(), ordering, seed, &gates), gates })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateCountRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub ordering: Ordering,
    pub two_qubit_count: usize,
    pub cnot_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    #[serde(rename = "N")]
    pub n: usize,
    /// Mean over seeds; the greedy order depends on the seed only through
    /// each group's random first term.
    pub greedy_count: f64,
    pub random_mean: f64,
    pub random_std: f64,
    /// `random_mean / greedy_count`.
    pub reduction_ratio: f64,
    pub rows: Vec<GateCountRow>,
}

/// Two-qubit counts (CNOT + RZZ, after cancellation) for greedy and random
/// orderings at seeds `0..seeds`.
pub fn count_report(instance: &ProblemInstance, seeds: u64) -> Result<CountReport> {
    if seeds == 0 {
        return invalid("count_report needs at least one seed");
    }
    let mut rows = Vec::with_capacity(2 * seeds as usize);
    for seed in 0..seeds {
        for ordering in [Ordering::Greedy, Ordering::Random] {
            // the count does not depend on gamma; any nonzero angle will do
            let c = compile_phase_with(instance, 0.1, ordering, seed)?;
            rows.push(GateCountRow {
                n: instance.n,
                seed,
                ordering,
                two_qubit_count: c.two_qubit_count(),
                cnot_count: c.cnot_count(),
            });
        }
    }
    let counts = |o: Ordering| -> Vec<f64> {
        rows.iter().filter(|r| r.ordering == o).map(|r| r.two_qubit_count as f64).collect()
    };
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let greedy = counts(Ordering::Greedy);
    let random = counts(Ordering::Random);
    let greedy_count = mean(&greedy);
    let random_mean = mean(&random);
    let random_std = if random.len() > 1 {
        (random.iter().map(|x| (x - random_mean).powi(2)).sum::<f64>() / (random.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(CountReport {
        n: instance.n,
        greedy_count,
        random_mean,
        random_std,
        reduction_ratio: random_mean / greedy_count,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::DenseRegister;
    use crate::statevector::{PhaseDiagonal, Statevector};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand::Rng;

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        let mut v: Vec<Complex64> =
            (0..1usize << n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        v
    }

    /// Max deviation after removing the global phase that best aligns `a` with `b`.
    fn dev_up_to_phase(a: &[Complex64], b: &[Complex64]) -> f64 {
        let overlap: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { Complex64::new(1.0, 0.0) };
        a.iter().zip(b).map(|(x, y)| (x * phase - y).norm()).fold(0.0, f64::max)
    }

    fn run_gates(n: usize, input: &[Complex64], gates: &[Gate]) -> Vec<Complex64> {
        let mut reg = DenseRegister::with_data(input, n).unwrap();
        reg.apply_all(gates).unwrap();
        reg.amplitudes().to_vec()
    }

    #[test]
    fn gadget_matches_four_body_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &gamma in &[0.0, 0.3, -1.1, 2.5] {
            let gates = decompose_four_body([0, 1, 2, 3], gamma).unwrap();
            for _ in 0..5 {
                let input = random_state(4, &mut rng);
                let got = run_gates(4, &input, &gates);
                // exp(-i gamma 2 Z0Z1Z2Z3) straight from the parity of each basis index
                for (x, (&a, &g)) in input.iter().zip(&got).enumerate() {
                    let z = if (x as u32).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    let want = a * Complex64::from_polar(1.0, -gamma * 2.0 * z);
                    assert!((want - g).norm() < 1e-13, "gamma={gamma} x={x}");
                }
            }
        }
        assert!(decompose_four_body([0, 2, 1, 3], 0.1).is_err());
        assert!(decompose_four_body([0, 1, 2, 3], f64::NAN).is_err());
    }

    #[test]
    fn cancellation_examples() {
        let c01 = Gate::Cnot { control: 0, target: 1 };
        assert!(cancel_pass(vec![c01.clone(), c01.clone()]).is_empty());
        let rz = Gate::Rz { q: 3, angle: 0.4 };
        assert_eq!(cancel_pass(vec![c01.clone(), rz.clone(), c01.clone()]), vec![rz]);
        let rzz = Gate::Rzz { q1: 1, q2: 2, angle: 0.4 };
        let blocked = vec![c01.clone(), rzz, c01.clone()];
        assert_eq!(cancel_pass(blocked.clone()), blocked);
        let reversed = vec![c01.clone(), Gate::Cnot { control: 1, target: 0 }];
        assert_eq!(cancel_pass(reversed.clone()), reversed);
        // nested pairs collapse in one go
        let c23 = Gate::Cnot { control: 2, target: 3 };
        assert!(cancel_pass(vec![c01.clone(), c23.clone(), c23, c01]).is_empty());
    }

    #[test]
    fn zero_angle_gadget_leaves_only_the_rotation() {
        let gates = cancel_pass(decompose_four_body([0, 1, 2, 3], 0.0).unwrap());
        assert_eq!(gates.len(), 5, "the RZZ blocks the CNOTs even at zero angle");
        let mut twice = decompose_four_body([0, 1, 2, 3], 0.2).unwrap();
        twice.extend(decompose_four_body([0, 1, 2, 3], 0.2).unwrap());
        let out = cancel_pass(twice);
        assert_eq!(out.iter().filter(|g| matches!(g, Gate::Rzz { .. })).count(), 2);
        assert_eq!(out.iter().filter(|g| matches!(g, Gate::Cnot { .. })).count(), 4);
    }

    #[test]
    fn greedy_orders_contain_every_term_once() {
        for n in 3..=14 {
            let inst = ProblemInstance::new(n).unwrap();
            for seed in 0..3 {
                for ordering in [Ordering::Greedy, Ordering::Random] {
                    let mut terms = order_terms(&inst, ordering, seed).unwrap();
                    terms.sort_unstable();
                    let mut want: Vec<Term> = inst
                        .four_body
                        .iter()
                        .map(|&q| Term::Four(q))
                        .chain(inst.two_body.iter().map(|&p| Term::Two(p)))
                        .collect();
                    want.sort_unstable();
                    assert_eq!(terms, want);
                }
            }
        }
    }

    #[test]
    fn greedy_places_pairs_after_matching_quadruples() {
        let inst = ProblemInstance::new(10).unwrap();
        let order = greedy_order(&inst, 4).unwrap();
        for (pos, term) in order.iter().enumerate() {
            if let Term::Two([i, j]) = *term {
                let first = order.iter().position(|t| matches!(*t, Term::Four([r, s, u, v]) if (r, s) == (i, j) || (u, v) == (i, j)));
                match first {
                    Some(q) => {
                        assert!(pos > q);
                        assert!(order[q + 1..pos].iter().all(|t| matches!(t, Term::Two(_))));
                    }
                    None => assert!(order[pos..].iter().all(|t| matches!(t, Term::Two(_)))),
                }
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_per_seed() {
        let inst = ProblemInstance::new(12).unwrap();
        assert_eq!(greedy_order(&inst, 9).unwrap(), greedy_order(&inst, 9).unwrap());
        let a = serde_json::to_string(&compile_phase(&inst, 0.2, 9).unwrap()).unwrap();
        let b = serde_json::to_string(&compile_phase(&inst, 0.2, 9).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_instances() {
        let c3 = compile_phase(&ProblemInstance::new(3).unwrap(), 0.5, 0).unwrap();
        assert_eq!(c3.gates, vec![Gate::Rzz { q1: 0, q2: 2, angle: 1.0 }]);
        assert_eq!(c3.metadata.two_qubit_count, 1);
        let inst4 = ProblemInstance::new(4).unwrap();
        assert_eq!(inst4.four_body.len(), 1);
        let r = count_report(&inst4, 5).unwrap();
        assert_eq!(r.greedy_count, r.random_mean);
        assert_eq!(r.random_std, 0.0);
        assert!(count_report(&inst4, 0).is_err());
    }

    #[test]
    fn compiled_phase_matches_direct_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 3..=8 {
            let inst = ProblemInstance::new(n).unwrap();
            let diag = PhaseDiagonal::build(n).unwrap();
            for ordering in [Ordering::Greedy, Ordering::Random] {
                let gamma = rng.gen_range(-2.0..2.0);
                let c = compile_phase_with(&inst, gamma, ordering, rng.gen()).unwrap();
                for _ in 0..20 {
                    let input = random_state(n, &mut rng);
                    let got = run_gates(n, &input, &c.gates);
                    let mut want = Statevector::from_amplitudes(n, input).unwrap();
                    want.apply_phase(&diag, gamma).unwrap();
                    assert!(dev_up_to_phase(&got, want.amplitudes()) < 1e-8, "n={n} {ordering:?}");
                }
            }
        }
    }

    #[test]
    fn compiled_qaoa_matches_simulator() {
        let n = 6;
        let inst = ProblemInstance::new(n).unwrap();
        let sched = Schedule::manual(vec![0.3, 0.2], vec![0.1, -0.4]).unwrap();
        let c = compile_qaoa(&inst, &sched, Ordering::Greedy, 2).unwrap();
        assert_eq!(c.metadata.p, 2);
        let mut reg = DenseRegister::zero(n).unwrap();
        reg.apply_all(&c.gates).unwrap();
        let sim = crate::statevector::QaoaSimulator::new(n).unwrap();
        let want = sim.state(&sched.betas, &sched.gammas).unwrap();
        assert!(dev_up_to_phase(reg.amplitudes(), want.amplitudes()) < 1e-10);
    }

    #[test]
    fn greedy_beats_random_on_average() {
        let r = count_report(&ProblemInstance::new(8).unwrap(), 20).unwrap();
        assert!(r.greedy_count <= r.random_mean, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn cancel_pass_is_sound_and_never_grows(
            spec in proptest::collection::vec((0usize..4, 0usize..5, 0usize..5, -2.0f64..2.0), 0..40),
            seed in 0u64..1000,
        ) {
            let n = 5;
            let gates: Vec<Gate> = spec
                .iter()
                .map(|&(kind, a, b, angle)| {
                    let b = if a == b { (b + 1) % n } else { b };
                    match kind {
                        0 | 1 => Gate::Cnot { control: a, target: b },
                        2 => Gate::Rzz { q1: a, q2: b, angle },
                        _ => Gate::Rz { q: a, angle },
                    }
                })
                .collect();
            let out = cancel_pass(gates.clone());
            prop_assert!(out.len() <= gates.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input = random_state(n, &mut rng);
            let a = run_gates(n, &input, &gates);
            let b = run_gates(n, &input, &out);
            let d = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            prop_assert!(d < 1e-12);
        }
    }

    #[test]
    fn reordering_terms_keeps_the_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 4..=6 {
            let inst = ProblemInstance::new(n).unwrap();
            let gamma = 0.37;
            let input = random_state(n, &mut rng);
            let base = run_gates(n, &input, &decompose_terms(&random_order(&inst, 0).unwrap(), gamma).unwrap());
            for seed in 1..5 {
                let other = run_gates(n, &input, &decompose_terms(&random_order(&inst, seed).unwrap(), gamma).unwrap());
                let d = base.iter().zip(&other).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
                assert!(d < 1e-12);
            }
        }
    }
}
