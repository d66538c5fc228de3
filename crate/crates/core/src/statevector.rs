//! Exact QAOA simulation on a dense statevector.
//!
//! The phase operator is diagonal, so every basis state carries its sidelobe
//! energy (a `u16`, since `E <= sum_{k<40} k^2 < 2^16`) and a layer only looks
//! up one precomputed phase per distinct energy. The mixer is applied one qubit
//! at a time over stride-`2^j` index pairs.

use std::ops::ControlFlow;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget;
use crate::error::{invalid, LabsError, Result};
use crate::problem::{merit_factor_of, EnergyTable, ProblemInstance};
use crate::schedules::Schedule;

/// Below this qubit count the kernels run single-threaded.
const PARALLEL_MIN_QUBITS: usize = 14;
/// Fixed reduction block, so sums do not depend on the worker count.
const REDUCE_BLOCK: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    n: usize,
    amps: Vec<Complex64>,
}

impl Statevector {
    /// `|+>^N`.
    pub fn init_plus(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("statevector needs at least one qubit");
        }
        budget::check_exponential_alloc(n, 16, "statevector")?;
        let a = (0.5f64).powf(n as f64 / 2.0);
        Ok(Self { n, amps: vec![Complex64::new(a, 0.0); 1 << n] })
    }

    pub fn basis(n: usize, index: u64) -> Result<Self> {
        if n == 0 {
            return invalid("statevector needs at least one qubit");
        }
        budget::check_exponential_alloc(n, 16, "statevector")?;
        if index >> n != 0 {
            return invalid(format!("basis index {index} out of range for N={n}"));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[index as usize] = Complex64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    pub fn from_amplitudes(n: usize, amps: Vec<Complex64>) -> Result<Self> {
        if n == 0 || amps.len() != 1usize << n {
            return invalid(format!("expected 2^{n} amplitudes, got {}", amps.len()));
        }
        Ok(Self { n, amps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        block_sums(&self.amps, |a| a.norm_sqr())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `a_x <- exp(-i gamma H_C(x)) a_x`.
    pub fn apply_phase(&mut self, diag: &PhaseDiagonal, gamma: f64) -> Result<()> {
        if diag.n != self.n {
            return Err(LabsError::SizeMismatch { expected: self.n, actual: diag.n });
        }
        let phases = diag.phase_lookup(gamma);
        let kernel = |(a, &e): (&mut Complex64, &u16)| *a *= phases[e as usize];
        if self.n >= PARALLEL_MIN_QUBITS {
            self.amps.par_iter_mut().zip(diag.energy.par_iter()).for_each(kernel);
        } else {
            self.amps.iter_mut().zip(diag.energy.iter()).for_each(kernel);
        }
        Ok(())
    }

    /// `prod_j exp(-i beta X_j)`.
    pub fn apply_mixer(&mut self, beta: f64) {
        let (s, c) = beta.sin_cos();
        let parallel = self.n >= PARALLEL_MIN_QUBITS;
        for j in 0..self.n {
            let half = 1usize << j;
            let rotate = |lo: &mut Complex64, hi: &mut Complex64| {
                let (a, b) = (*lo, *hi);
                // [[c, -is], [-is, c]]
                *lo = Complex64::new(c * a.re + s * b.im, c * a.im - s * b.re);
                *hi = Complex64::new(c * b.re + s * a.im, c * b.im - s * a.re);
            };
            let block = |chunk: &mut [Complex64]| {
                let (lo, hi) = chunk.split_at_mut(half);
                lo.iter_mut().zip(hi.iter_mut()).for_each(|(a, b)| rotate(a, b));
            };
            if !parallel {
                self.amps.chunks_mut(2 * half).for_each(block);
            } else if half < REDUCE_BLOCK {
                self.amps.par_chunks_mut(2 * half).with_min_len(REDUCE_BLOCK / (2 * half)).for_each(block);
            } else {
                for chunk in self.amps.chunks_mut(2 * half) {
                    let (lo, hi) = chunk.split_at_mut(half);
                    lo.par_iter_mut().zip(hi.par_iter_mut()).with_min_len(4096).for_each(|(a, b)| rotate(a, b));
                }
            }
        }
    }
}

/// Sum of `f` over `xs`, computed as compensated per-block sums combined in
/// block order. Deterministic for any worker count.
fn block_sums<T: Sync>(xs: &[T], f: impl Fn(&T) -> f64 + Sync) -> f64 {
    let partial: Vec<f64> = xs.par_chunks(REDUCE_BLOCK).map(|c| neumaier(c.iter().map(&f))).collect();
    neumaier(partial.into_iter())
}

pub(crate) fn neumaier(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// The cost diagonal: the sidelobe energy of every basis state plus the
/// distinct energy levels. `H_C(x) = (E(x) - N(N-1)/2) / 2`.
#[derive(Clone, Debug)]
pub struct PhaseDiagonal {
    n: usize,
    offset: i64,
    energy: Vec<u16>,
    /// Distinct energies, ascending; level 0 is the optimum.
    levels: Vec<u16>,
    degeneracy: Vec<u64>,
    /// Energy -> level index, `u16::MAX` where no state has that energy.
    level_of_energy: Vec<u16>,
}

impl PhaseDiagonal {
    /// Builds the diagonal by Gray-code enumeration without an `i64` table.
    pub fn build(n: usize) -> Result<Self> {
        if !(2..=budget::MAX_N).contains(&n) {
            return invalid(format!("phase diagonal needs 2 <= N <= {}, got {n}", budget::MAX_N));
        }
        budget::check_exponential_alloc(n, 2, "phase diagonal")?;
        let mut energy = vec![0u16; 1 << n];
        let high_bits = n.min(8);
        let low_bits = n - high_bits;
        energy.par_chunks_mut(1 << low_bits).enumerate().for_each(|(block, chunk)| {
            let base = (block as u64) << low_bits;
            let mut state = crate::problem::FlipState::from_index(base, n).expect("valid index");
            chunk[0] = state.energy() as u16;
            let mut index = 0usize;
            for t in 1..chunk.len() as u64 {
                let bit = t.trailing_zeros() as usize;
                let e = state.flip(bit);
                index ^= 1 << bit;
                chunk[index] = e as u16;
            }
        });
        Ok(Self::from_energies(n, energy))
    }

    pub fn from_table(table: &EnergyTable) -> Result<Self> {
        let n = table.n();
        if n < 2 {
            return invalid("phase diagonal needs N >= 2");
        }
        budget::check_exponential_alloc(n, 2, "phase diagonal")?;
        let energy = table.energies().iter().map(|&e| e as u16).collect();
        Ok(Self::from_energies(n, energy))
    }

    fn from_energies(n: usize, energy: Vec<u16>) -> Self {
        let max_e = max_energy(n);
        let counts: Vec<u64> = energy
            .par_chunks(REDUCE_BLOCK)
            .map(|chunk| {
                let mut c = vec![0u64; max_e + 1];
                chunk.iter().for_each(|&e| c[e as usize] += 1);
                c
            })
            .reduce(|| vec![0u64; max_e + 1], |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            });
        let mut levels = Vec::new();
        let mut degeneracy = Vec::new();
        let mut level_of_energy = vec![u16::MAX; max_e + 1];
        for (e, &c) in counts.iter().enumerate() {
            if c > 0 {
                level_of_energy[e] = levels.len() as u16;
                levels.push(e as u16);
                degeneracy.push(c);
            }
        }
        Self { n, offset: (n * (n - 1) / 2) as i64, energy, levels, degeneracy, level_of_energy }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn energy(&self, index: u64) -> i64 {
        self.energy[index as usize] as i64
    }

    pub fn energies(&self) -> &[u16] {
        &self.energy
    }

    pub fn hc(&self, index: u64) -> f64 {
        (self.energy(index) - self.offset) as f64 / 2.0
    }

    pub fn levels(&self) -> &[u16] {
        &self.levels
    }

    pub fn degeneracy(&self) -> &[u64] {
        &self.degeneracy
    }

    pub fn min_energy(&self) -> i64 {
        self.levels[0] as i64
    }

    pub fn optimal_count(&self) -> u64 {
        self.degeneracy[0]
    }

    pub fn level_index(&self, energy: i64) -> Option<usize> {
        let idx = *self.level_of_energy.get(usize::try_from(energy).ok()?)?;
        (idx != u16::MAX).then_some(idx as usize)
    }

    fn phase_lookup(&self, gamma: f64) -> Vec<Complex64> {
        let mut table = vec![Complex64::new(1.0, 0.0); self.level_of_energy.len()];
        for &e in &self.levels {
            let hc = (e as i64 - self.offset) as f64 / 2.0;
            table[e as usize] = Complex64::from_polar(1.0, -gamma * hc);
        }
        table
    }

    /// Probability mass per energy level (compensated, deterministic).
    pub fn level_distribution(&self, state: &Statevector) -> Result<Vec<f64>> {
        if state.n != self.n {
            return Err(LabsError::SizeMismatch { expected: self.n, actual: state.n });
        }
        let nl = self.levels.len();
        let partial: Vec<Vec<(f64, f64)>> = state
            .amps
            .par_chunks(REDUCE_BLOCK)
            .zip(self.energy.par_chunks(REDUCE_BLOCK))
            .map(|(amps, energies)| {
                let mut acc = vec![(0.0f64, 0.0f64); nl];
                for (a, &e) in amps.iter().zip(energies) {
                    let (sum, comp) = &mut acc[self.level_of_energy[e as usize] as usize];
                    let x = a.norm_sqr();
                    let t = *sum + x;
                    if sum.abs() >= x {
                        *comp += (*sum - t) + x;
                    } else {
                        *comp += (x - t) + *sum;
                    }
                    *sum = t;
                }
                acc
            })
            .collect();
        Ok((0..nl).map(|l| neumaier(partial.iter().flat_map(|p| [p[l].0, p[l].1]))).collect())
    }
}

/// Largest possible sidelobe energy at length `n` (the all-ones sequence).
fn max_energy(n: usize) -> usize {
    (1..n).map(|k| k * k).sum()
}

/// Probability of one energy level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelProbability {
    pub energy: i64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaoaResult {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    #[serde(rename = "beta")]
    pub betas: Vec<f64>,
    #[serde(rename = "gamma")]
    pub gammas: Vec<f64>,
    pub expected_merit_factor: f64,
    pub p_opt: f64,
    pub tts: f64,
    pub levels: Vec<LevelProbability>,
}

/// The two figures of merit for one parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Figures {
    pub expected_merit_factor: f64,
    pub p_opt: f64,
}

/// QAOA simulator for one problem size, holding the precomputed diagonal.
#[derive(Clone, Debug)]
pub struct QaoaSimulator {
    diag: PhaseDiagonal,
}

impl QaoaSimulator {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self { diag: PhaseDiagonal::build(n)? })
    }

    pub fn from_table(table: &EnergyTable) -> Result<Self> {
        Ok(Self { diag: PhaseDiagonal::from_table(table)? })
    }

    pub fn n(&self) -> usize {
        self.diag.n
    }

    pub fn diagonal(&self) -> &PhaseDiagonal {
        &self.diag
    }

    /// Final state after `p` layers; layer 1 (`betas[0]`, `gammas[0]`) acts first.
    pub fn state(&self, betas: &[f64], gammas: &[f64]) -> Result<Statevector> {
        if betas.len() != gammas.len() {
            return invalid(format!("{} betas but {} gammas", betas.len(), gammas.len()));
        }
        if betas.iter().chain(gammas).any(|v| !v.is_finite()) {
            return invalid("schedule contains a non-finite angle");
        }
        let mut psi = Statevector::init_plus(self.diag.n)?;
        for (&b, &g) in betas.iter().zip(gammas) {
            psi.apply_phase(&self.diag, g)?;
            psi.apply_mixer(b);
        }
        Ok(psi)
    }

    pub fn figures(&self, betas: &[f64], gammas: &[f64]) -> Result<Figures> {
        let psi = self.state(betas, gammas)?;
        let dist = self.diag.level_distribution(&psi)?;
        self.figures_from_levels(&dist)
    }

    fn figures_from_levels(&self, dist: &[f64]) -> Result<Figures> {
        let n = self.diag.n;
        let mf = dist
            .iter()
            .zip(&self.diag.levels)
            .map(|(&pr, &e)| merit_factor_of(n, e as i64).map(|f| pr * f))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Figures { expected_merit_factor: neumaier(mf.into_iter()), p_opt: dist[0] })
    }

    pub fn run(&self, schedule: &Schedule) -> Result<QaoaResult> {
        if schedule.p() == 0 {
            return invalid("schedule depth must be at least 1");
        }
        let psi = self.state(&schedule.betas, &schedule.gammas)?;
        let dist = self.diag.level_distribution(&psi)?;
        let figures = self.figures_from_levels(&dist)?;
        let levels = dist
            .iter()
            .zip(&self.diag.levels)
            .map(|(&probability, &e)| LevelProbability { energy: e as i64, probability })
            .collect();
        Ok(QaoaResult {
            n: self.diag.n,
            p: schedule.p(),
            betas: schedule.betas.clone(),
            gammas: schedule.gammas.clone(),
            expected_merit_factor: figures.expected_merit_factor,
            p_opt: figures.p_opt,
            tts: 1.0 / figures.p_opt,
            levels,
        })
    }
}

/// One-shot QAOA run against an explicit instance and energy table.
pub fn run_qaoa(instance: &ProblemInstance, schedule: &Schedule, table: &EnergyTable) -> Result<QaoaResult> {
    if instance.n != table.n() {
        return Err(LabsError::SizeMismatch { expected: instance.n, actual: table.n() });
    }
    QaoaSimulator::from_table(table)?.run(schedule)
}

/// Energy-level probabilities of `state`, keyed by level energy.
pub fn energy_level_distribution(state: &Statevector, table: &EnergyTable) -> Result<Vec<LevelProbability>> {
    let diag = PhaseDiagonal::from_table(table)?;
    let dist = diag.level_distribution(state)?;
    Ok(dist
        .into_iter()
        .zip(diag.levels())
        .map(|(probability, &e)| LevelProbability { energy: e as i64, probability })
        .collect())
}

/// Walks every basis state of `n` qubits, handing the callback `(index, H_C)`.
/// Used by consumers that need `H_C` without allocating a diagonal.
pub fn for_each_hc(n: usize, mut f: impl FnMut(u64, f64)) -> Result<()> {
    let offset = (n * (n - 1) / 2) as i64;
    crate::problem::gray_walk(n, |x, e| {
        f(x, (e - offset) as f64 / 2.0);
        ControlFlow::Continue(())
    })
}
