//! Amplitude-amplification success model and a Monte-Carlo simulation of
//! minimum finding driven by repeated exponential search over a sampling
//! distribution.
//!
//! Each search is modelled as an ideal sampler from the distribution
//! conditioned on `E < threshold`, charged `ceil(2 C N / sqrt(P(E < threshold)))`
//! queries. Thresholds are energies of the returned sequences.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::problem::EnergyTable;
use crate::seeding;
use crate::statevector::QaoaResult;

/// `sin^2((2 steps + 1) asin(sqrt(p0)))`.
pub fn aa_success_probability(p0: f64, steps: u32) -> Result<f64> {
    if !(p0 > 0.0 && p0 <= 1.0) {
        return invalid(format!("initial success probability must lie in (0, 1], got {p0}"));
    }
    if steps == 0 {
        return Ok(p0);
    }
    let theta = p0.sqrt().asin();
    Ok(((2 * steps as u64 + 1) as f64 * theta).sin().powi(2))
}

/// Gain of each step over the previous one; entry `i` is step `i + 1`.
pub fn aa_gain_curve(p0: f64, max_steps: u32) -> Result<Vec<f64>> {
    let mut prev = aa_success_probability(p0, 0)?;
    let mut gains = Vec::with_capacity(max_steps as usize);
    for step in 1..=max_steps {
        let cur = aa_success_probability(p0, step)?;
        gains.push(cur / prev);
        prev = cur;
    }
    Ok(gains)
}

/// Number of amplification steps before the success probability first peaks.
pub fn aa_peak_step(p0: f64) -> Result<u32> {
    aa_success_probability(p0, 0)?;
    let theta = p0.sqrt().asin();
    // (2k+1) theta closest to pi/2 from below
    Ok(((std::f64::consts::FRAC_PI_2 / theta - 1.0) / 2.0).floor().max(0.0) as u32)
}

/// Bare QMF time-to-solution `1 / sqrt(p_opt)`.
pub fn qmf_tts(p_opt: f64) -> Result<f64> {
    if !(p_opt > 0.0 && p_opt <= 1.0) {
        return invalid(format!("p_opt must lie in (0, 1], got {p_opt}"));
    }
    Ok(1.0 / p_opt.sqrt())
}

/// A probability distribution over energy levels, ascending in energy. The
/// problem's global minimum is tracked separately, since the distribution may
/// put no mass on it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelDistribution {
    pub energies: Vec<i64>,
    pub probabilities: Vec<f64>,
    pub global_min: i64,
    /// `cumulative[k] = P(E < energies[k])`; one extra entry for the total.
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl LevelDistribution {
    pub fn new(energies: Vec<i64>, probabilities: Vec<f64>, global_min: i64) -> Result<Self> {
        if energies.is_empty() || energies.len() != probabilities.len() {
            return invalid("level distribution needs matching non-empty energy and probability lists");
        }
        if energies.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("level energies must be strictly ascending");
        }
        if probabilities.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return invalid("level probabilities must be finite and non-negative");
        }
        if global_min > energies[0] {
            return invalid(format!("global minimum {global_min} exceeds the lowest level {}", energies[0]));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return invalid(format!("level probabilities sum to {total}, expected 1"));
        }
        let probabilities: Vec<f64> = probabilities.iter().map(|p| p / total).collect();
        let mut cumulative = Vec::with_capacity(probabilities.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for p in &probabilities {
            acc += p;
            cumulative.push(acc);
        }
        Ok(Self { energies, probabilities, global_min, cumulative })
    }

    /// Uniform sampling over all `2^N` sequences.
    pub fn uniform(table: &EnergyTable) -> Result<Self> {
        let total = (1u64 << table.n()) as f64;
        let (energies, probs): (Vec<i64>, Vec<f64>) = table.levels().into_iter().map(|(e, c)| (e, c as f64 / total)).unzip();
        Self::new(energies, probs, table.min_energy())
    }

    /// Output distribution of a QAOA run; its lowest level is the optimum.
    pub fn from_qaoa(result: &QaoaResult) -> Result<Self> {
        let energies = result.levels.iter().map(|l| l.energy).collect::<Vec<_>>();
        let probs = result.levels.iter().map(|l| l.probability).collect();
        let min = energies.first().copied().unwrap_or(0);
        Self::new(energies, probs, min)
    }

    /// Mass on the global minimum.
    pub fn p_opt(&self) -> f64 {
        if self.energies[0] == self.global_min {
            self.probabilities[0]
        } else {
            0.0
        }
    }

    /// `P(E < energies[level])`.
    fn below(&self, level: usize) -> f64 {
        self.cumulative[level]
    }

    /// Samples a level from the distribution restricted to levels `< limit`.
    fn sample_below<R: Rng>(&self, limit: usize, rng: &mut R) -> usize {
        let mass = self.cumulative[limit];
        let u = rng.gen::<f64>() * mass;
        // first k with cumulative[k+1] > u
        let k = self.cumulative[1..=limit].partition_point(|&c| c <= u);
        let mut k = k.min(limit - 1);
        while self.probabilities[k] == 0.0 && k > 0 {
            k -= 1;
        }
        k
    }

    fn has_mass_below(&self, limit: usize) -> bool {
        self.probabilities[..limit].iter().any(|&p| p > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QmfRun {
    pub delta: f64,
    /// Budget parameter `M <= 2^N`.
    pub m: f64,
    /// Search-cost constant `C`.
    pub c: f64,
    pub trials: usize,
    pub seed: u64,
    /// Each search returns nothing with probability `1 / (6 2^N)`.
    pub failure_injection: bool,
}

impl QmfRun {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return invalid(format!("C must be positive, got {}", self.c));
        }
        if !(self.m > 0.0 && self.m <= (n as f64).exp2()) {
            return invalid(format!("M must lie in (0, 2^N], got {}", self.m));
        }
        if self.trials == 0 {
            return invalid("need at least one trial");
        }
        Ok(())
    }

    /// `ceil(ln(1/delta))` outer repetitions.
    pub fn repetitions(&self) -> usize {
        ((1.0 / self.delta).ln().ceil() as usize).max(1)
    }

    /// Query budget of one repetition, `3 C M N`.
    pub fn repetition_budget(&self, n: usize) -> f64 {
        3.0 * self.c * self.m * n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QmfTrial {
    pub success: bool,
    pub queries: u64,
    pub best_energy: i64,
    /// Threshold energies visited in each repetition.
    pub chains: Vec<Vec<i64>>,
    /// Queries charged in each repetition.
    pub repetition_queries: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QmfOutcome {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    pub delta: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub trials: usize,
    pub success_rate: f64,
    /// Mean total queries per trial, all repetitions included.
    pub mean_queries: f64,
    /// Mean queries per repetition.
    pub mean_repetition_queries: f64,
    pub max_queries: u64,
    /// Per-trial cap `ceil(ln(1/delta)) 3 C M N`.
    pub budget: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_trial: Vec<QmfTrial>,
}

fn search_cost(c: f64, n: usize, tail: f64) -> u64 {
    (2.0 * c * n as f64 / tail.sqrt()).ceil() as u64
}

fn run_trial(n: usize, dist: &LevelDistribution, run: &QmfRun, trial: usize, p: usize) -> QmfTrial {
    let mut rng = seeding::rng_from(run.seed, &[n as u64, p as u64, trial as u64]);
    let budget = run.repetition_budget(n);
    let fail_prob = 1.0 / (6.0 * (n as f64).exp2());
    let nl = dist.energies.len();
    let mut chains = Vec::new();
    let mut repetition_queries = Vec::new();
    let mut best = i64::MAX;
    for _ in 0..run.repetitions() {
        // `limit` = number of levels still below the threshold
        let mut limit = nl;
        let mut charged = 0u64;
        let mut chain = Vec::new();
        loop {
            if !dist.has_mass_below(limit) {
                break;
            }
            let tail = dist.below(limit);
            let cost = search_cost(run.c, n, tail);
            if (charged + cost) as f64 > budget {
                break;
            }
            charged += cost;
            if run.failure_injection && rng.gen::<f64>() < fail_prob {
                continue;
            }
            let k = dist.sample_below(limit, &mut rng);
            chain.push(dist.energies[k]);
            limit = k;
        }
        if let Some(&e) = chain.last() {
            best = best.min(e);
        }
        chains.push(chain);
        repetition_queries.push(charged);
    }
    QmfTrial {
        success: best == dist.global_min,
        queries: repetition_queries.iter().sum(),
        best_energy: best,
        chains,
        repetition_queries,
    }
}

/// Runs `run.trials` independent minimum-finding trials over `dist`.
pub fn simulate_qmf(n: usize, p: usize, dist: &LevelDistribution, run: &QmfRun, keep_trials: bool) -> Result<QmfOutcome> {
    if n < 3 {
        return invalid(format!("the query accounting assumes N >= 3, got {n}"));
    }
    run.validate(n)?;
    let trials: Vec<QmfTrial> = (0..run.trials).into_par_iter().map(|t| run_trial(n, dist, run, t, p)).collect();
    let successes = trials.iter().filter(|t| t.success).count();
    let total: u64 = trials.iter().map(|t| t.queries).sum();
    let reps = run.repetitions();
    Ok(QmfOutcome {
        n,
        p,
        delta: run.delta,
        m: run.m,
        c: run.c,
        trials: run.trials,
        success_rate: successes as f64 / run.trials as f64,
        mean_queries: total as f64 / run.trials as f64,
        mean_repetition_queries: total as f64 / (run.trials * reps) as f64,
        max_queries: trials.iter().map(|t| t.queries).max().unwrap_or(0),
        budget: reps as f64 * run.repetition_budget(n),
        per_trial: if keep_trials { trials } else { Vec::new() },
    })
}

/// Expected queries of one unbudgeted threshold descent, summed exactly over
/// the chain law: level `k` is visited with probability `q_k / P(E <= e_k)`,
/// and the search that follows a visit to `k` costs `2CN / sqrt(P(E < e_k))`.
pub fn expected_descent_queries(n: usize, c: f64, dist: &LevelDistribution) -> f64 {
    let first = search_cost(c, n, 1.0) as f64;
    let mut total = first;
    for k in 0..dist.energies.len() {
        let q = dist.probabilities[k];
        if q == 0.0 || !dist.has_mass_below(k) {
            continue;
        }
        let visit = q / dist.cumulative[k + 1];
        total += visit * search_cost(c, n, dist.below(k)) as f64;
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLevel {
    pub energy: i64,
    pub empirical: f64,
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLawStat {
    pub trials: usize,
    pub max_abs_deviation: f64,
    pub levels: Vec<ChainLevel>,
}

/// Frequency with which each level appears in an unbudgeted threshold chain,
/// against the exact law `P(E = e_k) / P(E <= e_k)`.
pub fn sample_chain_law_check(dist: &LevelDistribution, trials: usize, seed: u64) -> Result<ChainLawStat> {
    if trials == 0 {
        return invalid("need at least one trial");
    }
    let nl = dist.energies.len();
    const BLOCK: usize = 1024;
    let counts: Vec<Vec<u64>> = (0..trials.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = seeding::rng_from(seed, &[0xc4a1, b as u64]);
            let mut c = vec![0u64; nl];
            for _ in (b * BLOCK)..((b + 1) * BLOCK).min(trials) {
                let mut limit = nl;
                while dist.has_mass_below(limit) {
                    let k = dist.sample_below(limit, &mut rng);
                    c[k] += 1;
                    limit = k;
                }
            }
            c
        })
        .collect();
    let mut levels = Vec::new();
    let mut max_dev: f64 = 0.0;
    for k in 0..nl {
        if dist.probabilities[k] == 0.0 {
            continue;
        }
        let seen: u64 = counts.iter().map(|c| c[k]).sum();
        let empirical = seen as f64 / trials as f64;
        let expected = dist.probabilities[k] / dist.cumulative[k + 1];
        max_dev = max_dev.max((empirical - expected).abs());
        levels.push(ChainLevel { energy: dist.energies[k], empirical, expected });
    }
    Ok(ChainLawStat { trials, max_abs_deviation: max_dev, levels })
}
