//! QAOA parameter schedules: the FOURIER frequency-domain reparameterization,
//! local and multi-start optimization of either figure of merit, and
//! size-independent fixed parameters obtained by averaging `(beta, N gamma)`.

pub mod optimize;

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabsError, Result};
use crate::seeding;
use crate::statevector::QaoaSimulator;
use optimize::{minimize, LocalOptions};

/// Where a schedule came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Manual,
    DirectlyOptimized { n: usize },
    FourierExtended { n: usize },
    FixedRescaled { n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct Schedule {
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    p: usize,
    betas: Vec<f64>,
    gammas: Vec<f64>,
    #[serde(default = "manual")]
    provenance: Provenance,
}

fn manual() -> Provenance {
    Provenance::Manual
}

impl TryFrom<ScheduleFile> for Schedule {
    type Error = LabsError;
    fn try_from(f: ScheduleFile) -> Result<Self> {
        if f.betas.len() != f.p {
            return Err(LabsError::Format(format!("schedule declares p={} but has {} betas", f.p, f.betas.len())));
        }
        Schedule::new(f.betas, f.gammas, f.provenance)
    }
}

impl From<Schedule> for ScheduleFile {
    fn from(s: Schedule) -> Self {
        ScheduleFile { p: s.p(), betas: s.betas, gammas: s.gammas, provenance: s.provenance }
    }
}

impl Schedule {
    pub fn new(betas: Vec<f64>, gammas: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if betas.is_empty() || betas.len() != gammas.len() {
            return invalid(format!("schedule needs equal non-empty beta/gamma lists, got {} and {}", betas.len(), gammas.len()));
        }
        if betas.iter().chain(&gammas).any(|v| !v.is_finite()) {
            return invalid("schedule angles must be finite");
        }
        Ok(Self { betas, gammas, provenance })
    }

    pub fn manual(betas: Vec<f64>, gammas: Vec<f64>) -> Result<Self> {
        Self::new(betas, gammas, Provenance::Manual)
    }

    pub fn p(&self) -> usize {
        self.betas.len()
    }

    /// Appends a layer with both angles zero, which leaves the state unchanged.
    pub fn with_idle_layer(&self) -> Self {
        let mut s = self.clone();
        s.betas.push(0.0);
        s.gammas.push(0.0);
        s
    }
}

/// Frequency-domain coefficients: `u` drives gamma, `v` drives beta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierCoeffs {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn sine_basis(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, k| ((k as f64 + 0.5) * (i as f64 + 0.5) * PI / p as f64).sin())
}

fn cosine_basis(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, k| ((k as f64 + 0.5) * (i as f64 + 0.5) * PI / p as f64).cos())
}

impl FourierCoeffs {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.is_empty() || u.len() != v.len() {
            return invalid(format!("coefficient lists must match and be non-empty, got {} and {}", u.len(), v.len()));
        }
        Ok(Self { u, v })
    }

    pub fn p(&self) -> usize {
        self.u.len()
    }

    /// `gamma_i = sum_k u_k sin[(k-1/2)(i-1/2) pi/p]`,
    /// `beta_i = sum_k v_k cos[(k-1/2)(i-1/2) pi/p]`.
    pub fn to_schedule(&self, p: usize) -> Result<Schedule> {
        if self.u.len() != p || self.v.len() != p {
            return invalid(format!("expected {p} coefficients, got u={} v={}", self.u.len(), self.v.len()));
        }
        let gammas = sine_basis(p) * DVector::from_column_slice(&self.u);
        let betas = cosine_basis(p) * DVector::from_column_slice(&self.v);
        Schedule::manual(betas.as_slice().to_vec(), gammas.as_slice().to_vec())
    }

    /// Least-squares coefficients reproducing `schedule` at its own depth.
    pub fn fit(schedule: &Schedule) -> Result<Self> {
        let p = schedule.p();
        let solve = |basis: DMatrix<f64>, rhs: &[f64]| -> Result<Vec<f64>> {
            basis
                .svd(true, true)
                .solve(&DVector::from_column_slice(rhs), 1e-14)
                .map(|x| x.as_slice().to_vec())
                .map_err(|e| LabsError::Internal(format!("Fourier fit failed: {e}")))
        };
        Ok(Self { u: solve(sine_basis(p), &schedule.gammas)?, v: solve(cosine_basis(p), &schedule.betas)? })
    }

    /// `(u, 0)`, `(v, 0)`.
    pub fn padded(&self) -> Self {
        let mut c = self.clone();
        c.u.push(0.0);
        c.v.push(0.0);
        c
    }

    fn flat(&self) -> Vec<f64> {
        self.u.iter().chain(&self.v).copied().collect()
    }

    fn from_flat(x: &[f64]) -> Self {
        let p = x.len() / 2;
        Self { u: x[..p].to_vec(), v: x[p..].to_vec() }
    }
}

/// Figure of merit being maximized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Expected merit factor of the sampled sequences.
    MeritFactor,
    /// Probability of sampling an optimal sequence.
    POpt,
}

impl Objective {
    pub fn value(self, sim: &QaoaSimulator, betas: &[f64], gammas: &[f64]) -> Result<f64> {
        let f = sim.figures(betas, gammas)?;
        Ok(match self {
            Objective::MeritFactor => f.expected_merit_factor,
            Objective::POpt => f.p_opt,
        })
    }

    /// Uniform initialization box `(beta range, N*gamma range)` for the
    /// depth-1 multi-start search.
    ///
    /// The gamma ranges are negative: with phase `exp(-i gamma H_C)` and mixer
    /// `exp(-i beta sum X)` the good basin sits at `gamma * beta < 0`, and
    /// `(gamma, beta) -> (-gamma, -beta)` leaves every figure of merit unchanged.
    pub fn p1_init_box(self) -> ([f64; 2], [f64; 2]) {
        match self {
            Objective::MeritFactor => ([0.1, 0.2], [-0.85, 0.0]),
            Objective::POpt => ([0.15, 0.3], [-1.2, -0.6]),
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = LabsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mf" | "merit_factor" => Ok(Objective::MeritFactor),
            "p_opt" | "popt" => Ok(Objective::POpt),
            other => invalid(format!("unknown objective {other:?} (expected mf or p_opt)")),
        }
    }
}

/// Outcome of one schedule optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimized {
    pub schedule: Schedule,
    pub coeffs: FourierCoeffs,
    pub objective: Objective,
    pub value: f64,
    pub evaluations: usize,
    pub hit_eval_cap: bool,
}

/// Local optimization directly over `(beta, gamma)`.
pub fn optimize_schedule(
    sim: &QaoaSimulator,
    objective: Objective,
    start: &Schedule,
    opts: &LocalOptions,
) -> Result<Optimized> {
    let p = start.p();
    let x0: Vec<f64> = start.betas.iter().chain(&start.gammas).copied().collect();
    let r = minimize(|x| objective.value(sim, &x[..p], &x[p..]).map(|v| -v), &x0, opts)?;
    let schedule = Schedule::new(r.x[..p].to_vec(), r.x[p..].to_vec(), Provenance::DirectlyOptimized { n: sim.n() })?;
    Ok(Optimized {
        coeffs: FourierCoeffs::fit(&schedule)?,
        schedule,
        objective,
        value: -r.f,
        evaluations: r.evaluations,
        hit_eval_cap: r.hit_eval_cap,
    })
}

/// Local optimization over FOURIER coefficients.
pub fn optimize_fourier(
    sim: &QaoaSimulator,
    objective: Objective,
    start: &FourierCoeffs,
    opts: &LocalOptions,
) -> Result<Optimized> {
    let p = start.p();
    let basis_s = sine_basis(p);
    let basis_c = cosine_basis(p);
    let to_angles = |x: &[f64]| {
        let g = &basis_s * DVector::from_column_slice(&x[..p]);
        let b = &basis_c * DVector::from_column_slice(&x[p..]);
        (b.as_slice().to_vec(), g.as_slice().to_vec())
    };
    let r = minimize(
        |x| {
            let (b, g) = to_angles(x);
            objective.value(sim, &b, &g).map(|v| -v)
        },
        &start.flat(),
        opts,
    )?;
    let coeffs = FourierCoeffs::from_flat(&r.x);
    let mut schedule = coeffs.to_schedule(p)?;
    schedule.provenance = Provenance::FourierExtended { n: sim.n() };
    Ok(Optimized { schedule, coeffs, objective, value: -r.f, evaluations: r.evaluations, hit_eval_cap: r.hit_eval_cap })
}

/// Result of the depth-1 multi-start search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P1Search {
    pub best: Optimized,
    pub best_restart: usize,
    pub restarts: usize,
    pub total_evaluations: usize,
}

pub const P1_RESTARTS: usize = 400;

/// Best of `restarts` local optimizations at depth 1 from uniform starts in
/// the objective's initialization box. Ties go to the lowest restart index.
pub fn optimize_p1_grid(
    sim: &QaoaSimulator,
    objective: Objective,
    restarts: usize,
    seed: u64,
    opts: &LocalOptions,
) -> Result<P1Search> {
    if restarts == 0 {
        return invalid("need at least one restart");
    }
    let n = sim.n() as f64;
    let (b_box, g_box) = objective.p1_init_box();
    let runs: Vec<Result<Optimized>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeding::rng_from(seed, &[sim.n() as u64, 1, r as u64]);
            let beta = rng.gen_range(b_box[0]..=b_box[1]);
            let gamma = rng.gen_range(g_box[0]..=g_box[1]) / n;
            optimize_schedule(sim, objective, &Schedule::manual(vec![beta], vec![gamma])?, opts)
        })
        .collect();
    let mut best: Option<(usize, Optimized)> = None;
    let mut total = 0;
    for (r, run) in runs.into_iter().enumerate() {
        let run = run?;
        total += run.evaluations;
        if best.as_ref().map_or(true, |(_, b)| run.value > b.value) {
            best = Some((r, run));
        }
    }
    let (best_restart, best) = best.expect("at least one restart");
    Ok(P1Search { best, best_restart, restarts, total_evaluations: total })
}

/// One FOURIER step: pad the depth-(p-1) optimum with zeros and optimize at depth p.
pub fn fourier_extend(
    sim: &QaoaSimulator,
    previous: &FourierCoeffs,
    objective: Objective,
    opts: &LocalOptions,
) -> Result<Optimized> {
    optimize_fourier(sim, objective, &previous.padded(), opts)
}

/// FOURIER ladder from a depth-1 optimum up to `p_max`.
///
/// With `monotone_guard`, a depth whose padded start ends below the previous
/// depth is re-optimized from the previous schedule plus an idle layer, which
/// starts exactly at the previous value.
pub fn fourier_ladder(
    sim: &QaoaSimulator,
    objective: Objective,
    start: Optimized,
    p_max: usize,
    monotone_guard: bool,
    opts: &LocalOptions,
) -> Result<Vec<Optimized>> {
    let mut ladder = vec![start];
    while ladder.len() < p_max {
        let prev = ladder.last().unwrap();
        let mut next = fourier_extend(sim, &prev.coeffs, objective, opts)?;
        if monotone_guard && next.value < prev.value {
            let alt_start = FourierCoeffs::fit(&prev.schedule.with_idle_layer())?;
            let alt = optimize_fourier(sim, objective, &alt_start, opts)?;
            log::debug!("depth {}: padded start reached {}, idle-layer start {}", next.coeffs.p(), next.value, alt.value);
            let used = next.evaluations + alt.evaluations;
            if alt.value > next.value {
                next = alt;
            }
            next.evaluations = used;
        }
        ladder.push(next);
    }
    Ok(ladder)
}

/// Size-independent parameters: per-layer means of `beta*` and `N gamma*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub p: usize,
    pub beta_fixed: Vec<f64>,
    pub gamma_fixed_scaled: Vec<f64>,
    pub source_sizes: Vec<usize>,
}

pub fn make_fixed_params(optimized: &[(usize, Schedule)]) -> Result<FixedParams> {
    let Some((_, first)) = optimized.first() else {
        return invalid("fixed parameters need at least one optimized schedule");
    };
    let p = first.p();
    if let Some((n, s)) = optimized.iter().find(|(_, s)| s.p() != p) {
        return invalid(format!("depth mismatch: N={n} schedule has p={}, expected {p}", s.p()));
    }
    let m = optimized.len() as f64;
    let mut beta_fixed = vec![0.0; p];
    let mut gamma_fixed_scaled = vec![0.0; p];
    for (n, s) in optimized {
        for l in 0..p {
            beta_fixed[l] += s.betas[l];
            gamma_fixed_scaled[l] += *n as f64 * s.gammas[l];
        }
    }
    beta_fixed.iter_mut().chain(gamma_fixed_scaled.iter_mut()).for_each(|v| *v /= m);
    Ok(FixedParams { p, beta_fixed, gamma_fixed_scaled, source_sizes: optimized.iter().map(|(n, _)| *n).collect() })
}

/// `(beta_fixed, gamma_fixed_scaled / N)`.
pub fn instantiate_fixed(fixed: &FixedParams, n: usize) -> Result<Schedule> {
    if n < 2 {
        return invalid(format!("fixed parameters need N >= 2, got {n}"));
    }
    let gammas = fixed.gamma_fixed_scaled.iter().map(|g| g / n as f64).collect();
    Schedule::new(fixed.beta_fixed.clone(), gammas, Provenance::FixedRescaled { n })
}

/// A collection of fixed-parameter sets, one per depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedParamsSet {
    pub objective: Objective,
    pub sets: Vec<FixedParams>,
}

/// Source window used for the bundled fixed parameters.
pub const BUNDLED_SOURCE_SIZES: std::ops::RangeInclusive<usize> = 12..=17;

impl FixedParamsSet {
    /// p_opt-optimized fixed parameters for depths 1 to 12, averaged over
    /// [`BUNDLED_SOURCE_SIZES`] (seed 7, 50 depth-1 restarts).
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../data/fixed_params_popt.json")).expect("bundled fixed parameters parse")
    }

    pub fn at_depth(&self, p: usize) -> Option<&FixedParams> {
        self.sets.iter().find(|f| f.p == p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// A schedule file may hold an explicit schedule, fixed parameters, or a
/// fixed-parameter set; fixed parameters are rescaled to the target size.
/// A set needs `depth`; otherwise `depth`, when given, must match the file.
pub fn load_schedule_for(path: &Path, n: usize, depth: Option<usize>) -> Result<Schedule> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let schedule = if value.get("sets").is_some() {
        let set: FixedParamsSet = serde_json::from_value(value)?;
        let Some(p) = depth else {
            return invalid("a fixed-parameter set needs a depth");
        };
        let fixed = set.at_depth(p).ok_or_else(|| LabsError::InvalidArgument(format!("no fixed parameters at p={p}")))?;
        instantiate_fixed(fixed, n)?
    } else if value.get("beta_fixed").is_some() {
        let fixed: FixedParams = serde_json::from_value(value)?;
        instantiate_fixed(&fixed, n)?
    } else {
        serde_json::from_value(value)?
    };
    if let Some(p) = depth.filter(|&p| p != schedule.p()) {
        return invalid(format!("requested p={p} but the file holds depth {}", schedule.p()));
    }
    Ok(schedule)
}

/// Optimizes FOURIER ladders at every source size and averages per depth.
pub fn fixed_params_from_sources(
    objective: Objective,
    source_sizes: &[usize],
    p_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<FixedParamsSet> {
    let mut per_size = Vec::new();
    for &n in source_sizes {
        let sim = QaoaSimulator::new(n)?;
        let opts = LocalOptions::for_size(n);
        let p1 = optimize_p1_grid(&sim, objective, restarts, seed, &opts)?;
        let ladder = fourier_ladder(&sim, objective, p1.best, p_max, true, &opts)?;
        log::info!("N={n}: depth-{p_max} objective {}", ladder.last().map_or(f64::NAN, |o| o.value));
        per_size.push((n, ladder));
    }
    let sets = (0..p_max)
        .map(|d| {
            let rows: Vec<(usize, Schedule)> = per_size.iter().map(|(n, l)| (*n, l[d].schedule.clone())).collect();
            make_fixed_params(&rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FixedParamsSet { objective, sets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_closed_forms() {
        let zero = FourierCoeffs::new(vec![0.0; 3], vec![0.0; 3]).unwrap().to_schedule(3).unwrap();
        assert!(zero.betas.iter().chain(&zero.gammas).all(|&v| v == 0.0));
        let s = FourierCoeffs::new(vec![0.4], vec![0.2]).unwrap().to_schedule(1).unwrap();
        assert!((s.gammas[0] - 0.4 * (PI / 4.0).sin()).abs() < 1e-15);
        assert!((s.betas[0] - 0.2 * (PI / 4.0).cos()).abs() < 1e-15);
        assert!(FourierCoeffs::new(vec![0.1], vec![0.1]).unwrap().to_schedule(2).is_err());
    }

    #[test]
    fn fourier_fit_round_trip_and_linearity() {
        let s = Schedule::manual(vec![0.3, 0.2, 0.1, 0.05], vec![0.01, 0.02, 0.04, 0.05]).unwrap();
        let c = FourierCoeffs::fit(&s).unwrap();
        let back = c.to_schedule(4).unwrap();
        for (a, b) in s.betas.iter().chain(&s.gammas).zip(back.betas.iter().chain(&back.gammas)) {
            assert!((a - b).abs() < 1e-10);
        }
        let a = FourierCoeffs::new(vec![0.1, -0.2, 0.3], vec![0.5, 0.0, -0.1]).unwrap();
        let b = FourierCoeffs::new(vec![0.7, 0.1, 0.0], vec![-0.2, 0.4, 0.3]).unwrap();
        let mix = FourierCoeffs::new(
            a.u.iter().zip(&b.u).map(|(x, y)| 2.0 * x - 0.5 * y).collect(),
            a.v.iter().zip(&b.v).map(|(x, y)| 2.0 * x - 0.5 * y).collect(),
        )
        .unwrap();
        let (sa, sb, sm) = (a.to_schedule(3).unwrap(), b.to_schedule(3).unwrap(), mix.to_schedule(3).unwrap());
        for i in 0..3 {
            assert!((sm.gammas[i] - (2.0 * sa.gammas[i] - 0.5 * sb.gammas[i])).abs() < 1e-14);
            assert!((sm.betas[i] - (2.0 * sa.betas[i] - 0.5 * sb.betas[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn schedule_json_shape() {
        let s = Schedule::new(vec![0.1, 0.2], vec![0.3, 0.4], Provenance::DirectlyOptimized { n: 9 }).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["p"], 2);
        assert_eq!(v["provenance"]["kind"], "directly_optimized");
        let back: Schedule = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        let bad = serde_json::json!({"p": 3, "betas": [0.1], "gammas": [0.1]});
        assert!(serde_json::from_value::<Schedule>(bad).is_err());
    }

    #[test]
    fn fixed_params_definitions() {
        let s = Schedule::manual(vec![0.2, 0.1], vec![0.05, 0.08]).unwrap();
        let f = make_fixed_params(&[(10, s.clone())]).unwrap();
        assert_eq!(f.beta_fixed, s.betas);
        assert_eq!(f.gamma_fixed_scaled, vec![0.5, 0.8]);
        let back = instantiate_fixed(&f, 10).unwrap();
        assert_eq!(back.betas, s.betas);
        assert_eq!(back.gammas, s.gammas);
        assert_eq!(back.provenance, Provenance::FixedRescaled { n: 10 });
        let twice = instantiate_fixed(&f, 20).unwrap();
        for (a, b) in twice.gammas.iter().zip(&back.gammas) {
            assert_eq!(*a * 2.0, *b);
        }
        let same = make_fixed_params(&[(10, s.clone()), (10, s.clone())]).unwrap();
        assert_eq!(same, FixedParams { source_sizes: vec![10, 10], ..f.clone() });
        let deeper = Schedule::manual(vec![0.1; 3], vec![0.1; 3]).unwrap();
        assert!(make_fixed_params(&[(10, s), (11, deeper)]).is_err());
        assert!(make_fixed_params(&[]).is_err());
    }

    #[test]
    fn conjugate_angles_give_the_same_figures() {
        let sim = QaoaSimulator::new(8).unwrap();
        let (b, g) = ([0.21, 0.13], [-0.1, -0.17]);
        let a = sim.figures(&b, &g).unwrap();
        let c = sim.figures(&[-b[0], -b[1]], &[-g[0], -g[1]]).unwrap();
        assert!((a.p_opt - c.p_opt).abs() < 1e-14);
        assert!((a.expected_merit_factor - c.expected_merit_factor).abs() < 1e-12);
    }

    #[test]
    fn bundled_set_covers_depths_one_to_twelve() {
        let set = FixedParamsSet::bundled();
        assert_eq!(set.objective, Objective::POpt);
        for p in 1..=12 {
            let f = set.at_depth(p).unwrap();
            assert_eq!(f.beta_fixed.len(), p);
            assert_eq!(f.source_sizes, BUNDLED_SOURCE_SIZES.collect::<Vec<_>>());
        }
    }

    #[test]
    fn idle_layer_preserves_the_state() {
        let sim = QaoaSimulator::new(7).unwrap();
        let s = Schedule::manual(vec![0.2], vec![0.1]).unwrap();
        let a = Objective::MeritFactor.value(&sim, &s.betas, &s.gammas).unwrap();
        let t = s.with_idle_layer();
        assert_eq!(a, Objective::MeritFactor.value(&sim, &t.betas, &t.gammas).unwrap());
    }

    #[test]
    fn p1_search_beats_init_box_grid_at_n3() {
        let sim = QaoaSimulator::new(3).unwrap();
        let opts = LocalOptions::for_size(3);
        for objective in [Objective::MeritFactor, Objective::POpt] {
            let best = optimize_p1_grid(&sim, objective, 40, 5, &opts).unwrap();
            let (b_box, g_box) = objective.p1_init_box();
            let mut grid_max = f64::NEG_INFINITY;
            for i in 0..100 {
                for j in 0..100 {
                    let b = b_box[0] + (b_box[1] - b_box[0]) * i as f64 / 99.0;
                    let g = (g_box[0] + (g_box[1] - g_box[0]) * j as f64 / 99.0) / 3.0;
                    grid_max = grid_max.max(objective.value(&sim, &[b], &[g]).unwrap());
                }
            }
            assert!(best.best.value >= grid_max - 1e-12, "{objective:?}: {} < {grid_max}", best.best.value);
        }
    }

    #[test]
    fn p1_search_is_deterministic() {
        let sim = QaoaSimulator::new(6).unwrap();
        let opts = LocalOptions::for_size(6);
        let a = optimize_p1_grid(&sim, Objective::POpt, 8, 11, &opts).unwrap();
        let b = optimize_p1_grid(&sim, Objective::POpt, 8, 11, &opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
