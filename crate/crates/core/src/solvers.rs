//! Classical baselines with evaluation accounting: exhaustive Gray-code search,
//! tabu search over single-spin flips, and a memetic algorithm whose offspring
//! are refined by tabu search.
//!
//! Accounting: every energy computed, from scratch or as an incremental flip
//! delta, costs one evaluation. Applying a move whose delta was just charged is
//! free, and so is the energy of a caller-supplied start. `evaluations_to_best`
//! is the counter value when the best sequence was first seen.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabsError, Result};
use crate::problem::{exhaustive_ground_truth, gray_walk, index_to_hex, orbit_of_index, FlipState, SpinSequence};
use crate::seeding;
use crate::sweep::{fmt_f64, run_sweep, FailedCell, SweepRow, SweepSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exhaustive,
    Tabu,
    MemeticTabu,
}

impl std::str::FromStr for SolverKind {
    type Err = LabsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "exhaustive" => Ok(SolverKind::Exhaustive),
            "tabu" => Ok(SolverKind::Tabu),
            "memetic_tabu" | "memetic" | "mts" => Ok(SolverKind::MemeticTabu),
            other => invalid(format!("unknown solver {other:?}")),
        }
    }
}

/// Tabu parameters; `None` picks the size-dependent default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TabuParams {
    /// Tenure is drawn uniformly per walk from `[min, max]`,
    /// default `[N/10 + 1, N/2 + 1]`.
    pub tenure_min: Option<usize>,
    pub tenure_max: Option<usize>,
    /// Iterations per walk before restarting, default `10 N`.
    pub max_iters: Option<usize>,
}

impl TabuParams {
    fn tenure_range(&self, n: usize) -> (usize, usize) {
        let lo = self.tenure_min.unwrap_or(n / 10 + 1);
        let hi = self.tenure_max.unwrap_or(n / 2 + 1).max(lo);
        (lo, hi)
    }

    fn iters(&self, n: usize) -> usize {
        self.max_iters.unwrap_or(10 * n).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemeticParams {
    pub population: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    /// Per-spin mutation probability, default `1/N`.
    pub mutation_rate: Option<f64>,
}

impl Default for MemeticParams {
    fn default() -> Self {
        Self { population: 20, tournament: 2, crossover_rate: 0.9, mutation_rate: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub seed: u64,
    /// Stop as soon as an energy at or below this is found.
    pub target_energy: Option<i64>,
    /// Maximum evaluations.
    pub budget: u64,
    pub tabu: TabuParams,
    pub memetic: MemeticParams,
    pub skew_symmetric_only: bool,
    /// Exhaustive search over sequences starting `++`, expanded by symmetry.
    pub symmetry_reduced: bool,
    /// Recompute every accepted energy from scratch and compare.
    pub audit: bool,
}

impl SolverConfig {
    pub fn new(kind: SolverKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            target_energy: None,
            budget: 100_000_000,
            tabu: TabuParams::default(),
            memetic: MemeticParams::default(),
            skew_symmetric_only: false,
            symmetry_reduced: false,
            audit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return invalid("evaluation budget must be positive");
        }
        if self.kind == SolverKind::MemeticTabu {
            if self.memetic.population < 2 {
                return invalid("memetic population must be at least 2");
            }
            if self.memetic.tournament == 0 {
                return invalid("tournament size must be positive");
            }
            if !(0.0..=1.0).contains(&self.memetic.crossover_rate) {
                return invalid("crossover rate must lie in [0, 1]");
            }
        }
        if let Some(r) = self.memetic.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return invalid("mutation rate must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    #[serde(rename = "N")]
    pub n: usize,
    pub best_sequence: String,
    pub best_energy: i64,
    pub evaluations_to_best: u64,
    pub evaluations_total: u64,
    pub wall_ms: f64,
    pub hit_target: bool,
    /// Every optimal sequence, hex encoded; exhaustive search only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub optimal_set: Option<Vec<String>>,
}

/// The search space: single flips, or mirrored pairs under skew-symmetry.
#[derive(Clone, Debug)]
struct MoveSpace {
    n: usize,
    /// Each move flips one or two positions (0-based).
    moves: Vec<(usize, Option<usize>)>,
    skew: bool,
}

impl MoveSpace {
    fn new(n: usize, skew: bool) -> Result<Self> {
        if n < 2 {
            return invalid(format!("solvers need N >= 2, got {n}"));
        }
        if !skew {
            return Ok(Self { n, moves: (0..n).map(|i| (i, None)).collect(), skew });
        }
        if n % 2 == 0 {
            return invalid(format!("skew-symmetric search needs odd N, got {n}"));
        }
        let k = n.div_ceil(2);
        // free spin s_j (1-based j < k) is tied to s_{2k-j}; the centre s_k is alone
        let moves = (0..k).map(|j| if j + 1 == k { (j, None) } else { (j, Some(n - 1 - j)) }).collect();
        Ok(Self { n, moves, skew })
    }

    fn random<R: Rng>(&self, rng: &mut R) -> SpinSequence {
        let mut spins: Vec<i8> = (0..self.n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        if self.skew {
            self.symmetrize(&mut spins);
        }
        SpinSequence::new(spins).expect("valid spins")
    }

    /// Overwrites the dependent half so that the sequence is skew-symmetric.
    fn symmetrize(&self, spins: &mut [i8]) {
        let k = self.n.div_ceil(2);
        for l in 1..k {
            let sign = if l % 2 == 0 { 1 } else { -1 };
            spins[k + l - 1] = sign * spins[k - l - 1];
        }
    }

    fn delta(&self, state: &mut FlipState, mv: (usize, Option<usize>)) -> i64 {
        match mv {
            (i, None) => state.delta(i),
            (i, Some(j)) => {
                let before = state.energy();
                state.flip(i);
                let after = state.energy() + state.delta(j);
                state.flip(i);
                after - before
            }
        }
    }

    fn apply(&self, state: &mut FlipState, mv: (usize, Option<usize>)) {
        state.flip(mv.0);
        if let Some(j) = mv.1 {
            state.flip(j);
        }
    }
}

/// Mutable search bookkeeping shared by every phase of one run.
struct Tracker {
    evaluations: u64,
    budget: u64,
    target: Option<i64>,
    best: Option<(i64, SpinSequence)>,
    evaluations_to_best: u64,
    audit: bool,
}

impl Tracker {
    fn new(config: &SolverConfig) -> Self {
        Self {
            evaluations: 0,
            budget: config.budget,
            target: config.target_energy,
            best: None,
            evaluations_to_best: 0,
            audit: config.audit,
        }
    }

    /// Charges one evaluation; `Break` once the budget is spent.
    fn charge(&mut self) -> ControlFlow<()> {
        if self.evaluations >= self.budget {
            return ControlFlow::Break(());
        }
        self.evaluations += 1;
        ControlFlow::Continue(())
    }

    fn best_energy(&self) -> i64 {
        self.best.as_ref().map_or(i64::MAX, |b| b.0)
    }

    fn offer(&mut self, state: &FlipState) -> Result<()> {
        if self.audit {
            let scratch = state.to_sequence().sidelobe_energy();
            if scratch != state.energy() {
                return Err(LabsError::Internal(format!(
                    "incremental energy {} disagrees with recomputed {scratch}",
                    state.energy()
                )));
            }
        }
        if state.energy() < self.best_energy() {
            self.best = Some((state.energy(), state.to_sequence()));
            self.evaluations_to_best = self.evaluations;
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.evaluations >= self.budget || self.target.is_some_and(|t| self.best_energy() <= t)
    }

    fn finish(self, n: usize, started: Instant) -> SolveResult {
        let (best_energy, seq) = self.best.expect("at least one sequence evaluated");
        SolveResult {
            n,
            best_sequence: seq.to_pm_string(),
            best_energy,
            evaluations_to_best: self.evaluations_to_best,
            evaluations_total: self.evaluations,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            hit_target: self.target.is_some_and(|t| best_energy <= t),
            optimal_set: None,
        }
    }
}

/// One tabu walk from `state`. Returns the best state seen during the walk.
fn tabu_walk(
    space: &MoveSpace,
    state: &mut FlipState,
    iters: usize,
    tenure: usize,
    tracker: &mut Tracker,
) -> Result<FlipState> {
    let mut tabu_until = vec![0usize; space.moves.len()];
    let mut walk_best = state.clone();
    for it in 1..=iters {
        if tracker.done() {
            break;
        }
        let mut choice: Option<(usize, i64)> = None;
        let mut fallback: Option<(usize, i64)> = None;
        for (m, &mv) in space.moves.iter().enumerate() {
            if tracker.charge().is_break() {
                break;
            }
            let e = state.energy() + space.delta(state, mv);
            let allowed = tabu_until[m] < it || e < tracker.best_energy();
            let slot = if allowed { &mut choice } else { &mut fallback };
            if slot.map_or(true, |(_, best)| e < best) {
                *slot = Some((m, e));
            }
        }
        let Some((m, _)) = choice.or(fallback) else { break };
        space.apply(state, space.moves[m]);
        tabu_until[m] = it + tenure;
        tracker.offer(state)?;
        if state.energy() < walk_best.energy() {
            walk_best = state.clone();
        }
    }
    Ok(walk_best)
}

fn draw_tenure(params: &TabuParams, n: usize, rng: &mut ChaCha8Rng) -> usize {
    let (lo, hi) = params.tenure_range(n);
    rng.gen_range(lo..=hi)
}

/// Tabu search with random restarts, starting from `start`.
pub fn solve_tabu(n: usize, config: &SolverConfig, start: &SpinSequence) -> Result<SolveResult> {
    config.validate()?;
    if start.len() != n {
        return Err(LabsError::SizeMismatch { expected: n, actual: start.len() });
    }
    let space = MoveSpace::new(n, config.skew_symmetric_only)?;
    if config.skew_symmetric_only && !start.is_skew_symmetric() {
        return invalid("skew-symmetric search needs a skew-symmetric start");
    }
    let started = Instant::now();
    let mut rng = seeding::rng_from(config.seed, &[n as u64, 0x7ab0]);
    let mut tracker = Tracker::new(config);
    let mut state = FlipState::new(start);
    tracker.offer(&state)?;
    let iters = config.tabu.iters(n);
    while !tracker.done() {
        let tenure = draw_tenure(&config.tabu, n, &mut rng);
        tabu_walk(&space, &mut state, iters, tenure, &mut tracker)?;
        if tracker.done() || tracker.charge().is_break() {
            break;
        }
        state = FlipState::new(&space.random(&mut rng));
        tracker.offer(&state)?;
    }
    Ok(tracker.finish(n, started))
}

/// Tabu search from a random start drawn from the config seed.
pub fn solve_tabu_random_start(n: usize, config: &SolverConfig) -> Result<SolveResult> {
    let space = MoveSpace::new(n, config.skew_symmetric_only)?;
    let mut rng = seeding::rng_from(config.seed, &[n as u64, 0x57a7]);
    solve_tabu(n, config, &space.random(&mut rng))
}

/// Memetic search. With `initial` the population is taken as given (and not
/// charged); otherwise it is drawn at random and each member charged once.
pub fn solve_memetic_tabu(n: usize, config: &SolverConfig, initial: Option<Vec<SpinSequence>>) -> Result<SolveResult> {
    config.validate()?;
    let space = MoveSpace::new(n, config.skew_symmetric_only)?;
    let params = &config.memetic;
    let started = Instant::now();
    let mut rng = seeding::rng_from(config.seed, &[n as u64, 0x3e3e]);
    let mut tracker = Tracker::new(config);
    let mut population: Vec<FlipState> = Vec::with_capacity(params.population);
    match initial {
        Some(seqs) => {
            if seqs.len() < 2 {
                return invalid("memetic population must be at least 2");
            }
            for s in &seqs {
                if s.len() != n {
                    return Err(LabsError::SizeMismatch { expected: n, actual: s.len() });
                }
                let st = FlipState::new(s);
                tracker.offer(&st)?;
                population.push(st);
            }
        }
        None => {
            for _ in 0..params.population {
                if tracker.charge().is_break() {
                    break;
                }
                let st = FlipState::new(&space.random(&mut rng));
                tracker.offer(&st)?;
                population.push(st);
                if tracker.done() {
                    break;
                }
            }
        }
    }
    let mutation = params.mutation_rate.unwrap_or(1.0 / n as f64);
    let iters = config.tabu.iters(n);
    while !tracker.done() && population.len() >= 2 {
        let pick = |rng: &mut ChaCha8Rng| -> usize {
            let mut best = rng.gen_range(0..population.len());
            for _ in 1..params.tournament {
                let c = rng.gen_range(0..population.len());
                if population[c].energy() < population[best].energy() {
                    best = c;
                }
            }
            best
        };
        let a = pick(&mut rng);
        let b = pick(&mut rng);
        let mut spins: Vec<i8> = if rng.gen::<f64>() < params.crossover_rate {
            population[a]
                .spins()
                .iter()
                .zip(population[b].spins())
                .map(|(&x, &y)| if rng.gen::<bool>() { x } else { y })
                .collect()
        } else {
            population[a].spins().to_vec()
        };
        for s in spins.iter_mut() {
            if rng.gen::<f64>() < mutation {
                *s = -*s;
            }
        }
        if space.skew {
            space.symmetrize(&mut spins);
        }
        if tracker.charge().is_break() {
            break;
        }
        let mut child = FlipState::new(&SpinSequence::new(spins)?);
        tracker.offer(&child)?;
        let tenure = draw_tenure(&config.tabu, n, &mut rng);
        let improved = tabu_walk(&space, &mut child, iters, tenure, &mut tracker)?;
        let worst = (0..population.len()).max_by_key(|&i| (population[i].energy(), i)).unwrap();
        let duplicate = population.iter().any(|p| p.spins() == improved.spins());
        if !duplicate && improved.energy() <= population[worst].energy() {
            population[worst] = improved;
        }
    }
    Ok(tracker.finish(n, started))
}

/// Exact search by Gray-code enumeration (or over skew-symmetric sequences).
pub fn solve_exhaustive(n: usize, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    if n > 40 {
        return Err(LabsError::Resource(format!("exhaustive search at N={n} is beyond the supported range")));
    }
    if n > 28 {
        log::warn!("exhaustive search at N={n} enumerates 2^{n} sequences and will take a long time");
    }
    let started = Instant::now();
    if config.skew_symmetric_only {
        return solve_exhaustive_skew(n, config, started);
    }
    let mut tracker = Tracker::new(config);
    if config.symmetry_reduced && config.target_energy.is_none() && n >= 2 {
        let (best, optimal) = exhaustive_ground_truth(n, true)?;
        // charged as the fundamental domain size
        tracker.evaluations = 1 << (n - 2);
        tracker.evaluations_to_best = tracker.evaluations;
        let seq = SpinSequence::from_index(optimal[0], n)?;
        tracker.best = Some((best, seq));
        let mut result = tracker.finish(n, started);
        result.optimal_set = Some(optimal.iter().map(|&x| index_to_hex(x, n)).collect());
        return Ok(result);
    }
    let mut best = i64::MAX;
    let mut first_best = 0u64;
    let mut optimal: Vec<u64> = Vec::new();
    let target = config.target_energy;
    let mut count = 0u64;
    let budget = config.budget;
    gray_walk(n, |x, e| {
        if count >= budget {
            return ControlFlow::Break(());
        }
        count += 1;
        if e < best {
            best = e;
            first_best = count;
            optimal.clear();
        }
        if e == best {
            optimal.push(x);
        }
        if target.is_some_and(|t| best <= t) {
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })?;
    optimal.sort_unstable();
    let complete = count == 1u64 << n;
    let seq = SpinSequence::from_index(optimal[0], n)?;
    tracker.evaluations = count;
    tracker.evaluations_to_best = first_best;
    tracker.best = Some((best, seq));
    let mut result = tracker.finish(n, started);
    if complete {
        result.optimal_set = Some(optimal.iter().map(|&x| index_to_hex(x, n)).collect());
    }
    Ok(result)
}

fn solve_exhaustive_skew(n: usize, config: &SolverConfig, started: Instant) -> Result<SolveResult> {
    let space = MoveSpace::new(n, true)?;
    let mut tracker = Tracker::new(config);
    let mut state = FlipState::from_index(0, n)?;
    let k = space.moves.len();
    // the all-plus sequence is not skew-symmetric; start from its symmetrized form
    let mut spins = state.spins().to_vec();
    space.symmetrize(&mut spins);
    state = FlipState::new(&SpinSequence::new(spins)?);
    let _ = tracker.charge();
    tracker.offer(&state)?;
    let mut optimal = vec![state.to_sequence().index()];
    for t in 1..(1u64 << k) {
        if tracker.done() {
            break;
        }
        if tracker.charge().is_break() {
            break;
        }
        let bit = t.trailing_zeros() as usize;
        space.apply(&mut state, space.moves[bit]);
        let before = tracker.best_energy();
        tracker.offer(&state)?;
        if state.energy() < before {
            optimal.clear();
        }
        if state.energy() == tracker.best_energy() {
            optimal.push(state.to_sequence().index());
        }
    }
    let complete = tracker.evaluations == 1u64 << k;
    let mut result = tracker.finish(n, started);
    if complete {
        optimal.sort_unstable();
        result.optimal_set = Some(optimal.iter().map(|&x| index_to_hex(x, n)).collect());
    }
    Ok(result)
}

/// Runs the configured solver once at size `n`.
pub fn solve(n: usize, config: &SolverConfig) -> Result<SolveResult> {
    match config.kind {
        SolverKind::Exhaustive => solve_exhaustive(n, config),
        SolverKind::Tabu => solve_tabu_random_start(n, config),
        SolverKind::MemeticTabu => solve_memetic_tabu(n, config, None),
    }
}

/// Minimum energy and all optimal indices, by symmetry-reduced enumeration.
pub fn ground_truth(n: usize) -> Result<(i64, Vec<u64>)> {
    if n > 32 {
        return Err(LabsError::Resource(format!("ground truth at N={n} needs more than 2^30 evaluations")));
    }
    exhaustive_ground_truth(n, true)
}

/// Confirms that every optimal index's orbit is in the set.
pub fn optimal_set_is_closed(n: usize, optimal: &[u64]) -> bool {
    optimal.iter().all(|&x| orbit_of_index(x, n).iter().all(|y| optimal.binary_search(y).is_ok()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtsRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub evaluations_to_best: u64,
    pub hit_target: bool,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtsSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub target_energy: i64,
    pub mean_evaluations: f64,
    pub seeds: usize,
    pub misses: usize,
    /// Some seed missed the target; the row is excluded from fits.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtsTable {
    pub rows: Vec<TtsRow>,
    pub summary: Vec<TtsSummary>,
    pub failed: Vec<FailedCell>,
    /// Rows in the spec'd CSV layout, including wall time.
    #[serde(skip)]
    pub csv: String,
    /// Rows without wall time; identical across reruns and worker counts.
    #[serde(skip)]
    pub canonical_csv: String,
}

impl SweepRow for TtsRow {
    const HEADER: &'static [&'static str] = &["N", "seed", "evaluations_to_best", "hit_target", "wall_ms"];
    const CANONICAL_HEADER: &'static [&'static str] = &["N", "seed", "evaluations_to_best", "hit_target"];
    fn fields(&self) -> Vec<String> {
        let mut f = self.canonical_fields();
        f.push(fmt_f64(self.wall_ms));
        f
    }
    fn canonical_fields(&self) -> Vec<String> {
        vec![self.n.to_string(), self.seed.to_string(), self.evaluations_to_best.to_string(), self.hit_target.to_string()]
    }
}

/// Runs `base` to the exact optimum for every `(N, seed index)` cell.
pub fn measure_tts(base: &SolverConfig, sizes: &[usize], seeds: usize) -> Result<TtsTable> {
    measure_tts_sweep(base, sizes, seeds, None, None)
}

/// [`measure_tts`] on an explicit worker count, optionally resumable from
/// `dir`. Each cell's solver seed is derived from `(base.seed, N, 0, index)`.
pub fn measure_tts_sweep(
    base: &SolverConfig,
    sizes: &[usize],
    seeds: usize,
    workers: Option<usize>,
    dir: Option<&Path>,
) -> Result<TtsTable> {
    base.validate()?;
    let spec = SweepSpec { sizes: sizes.to_vec(), depths: vec![0], seeds, global_seed: base.seed };
    spec.validate()?;
    let targets: BTreeMap<usize, i64> =
        spec.cells().iter().map(|c| c.n).collect::<BTreeSet<_>>().into_iter().map(|n| Ok((n, ground_truth(n)?.0))).collect::<Result<_>>()?;
    let outcome = run_sweep(&spec, workers, dir, |cell| {
        let mut config = base.clone();
        config.seed = cell.seed;
        config.target_energy = Some(targets[&cell.n]);
        let r = solve(cell.n, &config)?;
        Ok(TtsRow {
            n: cell.n,
            seed: cell.seed_index as u64,
            evaluations_to_best: r.evaluations_to_best,
            hit_target: r.hit_target,
            wall_ms: r.wall_ms,
        })
    })?;
    let summary = targets
        .iter()
        .map(|(&n, &target)| {
            let mine: Vec<&TtsRow> = outcome.rows.iter().map(|(_, r)| r).filter(|r| r.n == n).collect();
            let hits: Vec<&&TtsRow> = mine.iter().filter(|r| r.hit_target).collect();
            let misses = mine.len() - hits.len();
            if misses > 0 {
                log::warn!("N={n}: {misses} seeds missed the optimum within budget; excluded from fits");
            }
            let incomplete = mine.len() < seeds;
            let mean = hits.iter().map(|r| r.evaluations_to_best as f64).sum::<f64>() / hits.len().max(1) as f64;
            TtsSummary { n, target_energy: target, mean_evaluations: mean, seeds: mine.len(), misses, flagged: misses > 0 || incomplete }
        })
        .collect();
    Ok(TtsTable { csv: outcome.csv(), canonical_csv: outcome.canonical_csv(), rows: outcome.rows.into_iter().map(|(_, r)| r).collect(), summary, failed: outcome.failed })
}

impl TtsTable {
    /// `(N, mean evaluations)` for unflagged sizes.
    pub fn fit_points(&self) -> Vec<(usize, f64)> {
        self.summary.iter().filter(|s| !s.flagged).map(|s| (s.n, s.mean_evaluations)).collect()
    }
}
