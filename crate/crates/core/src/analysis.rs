//! Exponential scaling fits with t-intervals, fit-quality sweeps over the
//! cutoff, Hamming-distance/objective correlation, and per-layer gains.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, LabsError, Result};
use crate::minfind::{aa_gain_curve, qmf_tts};
use crate::problem::EnergyTable;
use crate::schedules::{instantiate_fixed, FixedParamsSet};
use crate::statevector::QaoaSimulator;
use crate::sweep::{fmt_f64, SweepRow};

/// Desk-scale default cutoff.
pub const DEFAULT_N_MIN: usize = 10;

pub const DESK_SCALE_CAVEAT: &str =
    "fitted on small N; headline exponents need N >= 28 and are not comparable to desk-scale fits";

/// `tts ~ exp(log_intercept) * base^N` by least squares on `ln tts`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub base: f64,
    pub log_intercept: f64,
    /// 95% interval for the base.
    pub ci: [f64; 2],
    pub r2: f64,
    /// Points used.
    pub n: usize,
    #[serde(rename = "N_min")]
    pub n_min: usize,
    pub slope_std_err: f64,
    pub caveat: String,
}

impl ScalingFit {
    pub fn ci_low(&self) -> f64 {
        self.ci[0]
    }

    pub fn ci_high(&self) -> f64 {
        self.ci[1]
    }
}

/// Two-sided 95% Student-t quantile.
pub fn t_quantile_95(df: usize) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| LabsError::InvalidArgument(format!("t distribution: {e}")))?;
    Ok(t.inverse_cdf(0.975))
}

pub fn fit_exponential(points: &[(usize, f64)], n_min: usize) -> Result<ScalingFit> {
    let used: Vec<(f64, f64)> = points.iter().filter(|(n, _)| *n >= n_min).map(|&(n, t)| (n as f64, t)).collect();
    if used.len() < 3 {
        return invalid(format!("need at least 3 points with N >= {n_min}, got {}", used.len()));
    }
    if let Some((n, t)) = used.iter().find(|(_, t)| !(t.is_finite() && *t > 0.0)) {
        return invalid(format!("tts must be positive and finite, got {t} at N={n}"));
    }
    let k = used.len() as f64;
    let xbar = used.iter().map(|p| p.0).sum::<f64>() / k;
    let ybar = used.iter().map(|p| p.1.ln()).sum::<f64>() / k;
    let sxx: f64 = used.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("all points share one N");
    }
    let sxy: f64 = used.iter().map(|p| (p.0 - xbar) * (p.1.ln() - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = used.iter().map(|p| (p.1.ln() - intercept - slope * p.0).powi(2)).sum();
    let sst: f64 = used.iter().map(|p| (p.1.ln() - ybar).powi(2)).sum();
    let df = used.len() - 2;
    let se = (ssr / df as f64 / sxx).sqrt();
    let half = t_quantile_95(df)? * se;
    let r2 = if sst == 0.0 { 1.0 } else { (1.0 - ssr / sst).clamp(0.0, 1.0) };
    Ok(ScalingFit {
        base: slope.exp(),
        log_intercept: intercept,
        ci: [(slope - half).exp(), (slope + half).exp()],
        r2,
        n: used.len(),
        n_min,
        slope_std_err: se,
        caveat: DESK_SCALE_CAVEAT.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitQualityRow {
    #[serde(rename = "N_min")]
    pub n_min: usize,
    pub r2: f64,
    pub base: f64,
    pub n_points: usize,
}

pub fn fit_quality_sweep(points: &[(usize, f64)], n_min_range: std::ops::RangeInclusive<usize>) -> Result<Vec<FitQualityRow>> {
    n_min_range
        .map(|n_min| {
            let fit = fit_exponential(points, n_min)?;
            Ok(FitQualityRow { n_min, r2: fit.r2, base: fit.base, n_points: fit.n })
        })
        .collect()
}

/// Pearson correlation; `None` when either variable is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Distance from every `n`-bit string to the nearest target, by
/// breadth-first search over the hypercube from all targets at once.
pub fn hamming_distances(n: usize, targets: &[u64]) -> Result<Vec<u32>> {
    if n > 24 {
        return invalid(format!("Hamming distance table supports N <= 24, got {n}"));
    }
    let mut dist = vec![u32::MAX; 1usize << n];
    let mut queue = VecDeque::new();
    for &t in targets {
        if dist[t as usize] == u32::MAX {
            dist[t as usize] = 0;
            queue.push_back(t as usize);
        }
    }
    while let Some(x) = queue.pop_front() {
        for b in 0..n {
            let y = x ^ (1 << b);
            if dist[y] == u32::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    Ok(dist)
}

/// Pearson correlation between distance-to-nearest-target and `objective`
/// over all `2^n` strings.
pub fn hamming_correlation(n: usize, targets: &[u64], objective: impl Fn(u64) -> f64) -> Result<f64> {
    if targets.is_empty() {
        return invalid("need at least one target string");
    }
    let dist = hamming_distances(n, targets)?;
    let xs: Vec<f64> = dist.iter().map(|&d| d as f64).collect();
    let ys: Vec<f64> = (0..1u64 << n).map(objective).collect();
    pearson(&xs, &ys).ok_or_else(|| LabsError::InvalidArgument("correlation undefined: a variable is constant".into()))
}

pub fn hamming_objective_correlation(table: &EnergyTable) -> Result<f64> {
    let n = table.n();
    if n > 16 {
        return invalid(format!("exhaustive correlation supports N <= 16, got {n}"));
    }
    hamming_correlation(n, table.optimal_indices(), |x| table.energy(x) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub step: usize,
    pub p_opt: f64,
    pub qaoa_gain: f64,
    pub aa_gain: f64,
}

/// Per-step gain `p_opt(step) / p_opt(step - 1)` for QAOA with fixed
/// parameters and for amplitude amplification from `p0 = |optimal| / 2^N`.
pub fn gain_comparison(sim: &QaoaSimulator, fixed: &FixedParamsSet, max_p: usize) -> Result<Vec<GainRow>> {
    let n = sim.n();
    let p0 = sim.diagonal().optimal_count() as f64 / (1u64 << n) as f64;
    let aa = aa_gain_curve(p0, max_p as u32)?;
    let mut prev = p0;
    let mut rows = Vec::with_capacity(max_p);
    for (step, aa_gain) in (1..=max_p).zip(aa) {
        let params = fixed
            .at_depth(step)
            .ok_or_else(|| LabsError::InvalidArgument(format!("no fixed parameters at p={step}")))?;
        let schedule = instantiate_fixed(params, n)?;
        let p_opt = sim.figures(&schedule.betas, &schedule.gammas)?.p_opt;
        rows.push(GainRow { step, p_opt, qaoa_gain: p_opt / prev, aa_gain });
        prev = p_opt;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaoaTtsPoint {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    pub p_opt: f64,
    /// `1 / p_opt`.
    pub qaoa_tts: f64,
    /// `1 / sqrt(p_opt)`.
    pub qmf_tts: f64,
}

impl SweepRow for QaoaTtsPoint {
    const HEADER: &'static [&'static str] = &["N", "p", "p_opt", "qaoa_tts", "qmf_tts"];
    const CANONICAL_HEADER: &'static [&'static str] = Self::HEADER;
    fn fields(&self) -> Vec<String> {
        vec![self.n.to_string(), self.p.to_string(), fmt_f64(self.p_opt), fmt_f64(self.qaoa_tts), fmt_f64(self.qmf_tts)]
    }
    fn canonical_fields(&self) -> Vec<String> {
        self.fields()
    }
}

/// One TTS point for size `n` at depth `p` with fixed parameters.
pub fn qaoa_tts_point(fixed: &FixedParamsSet, n: usize, p: usize) -> Result<QaoaTtsPoint> {
    let params = fixed.at_depth(p).ok_or_else(|| LabsError::InvalidArgument(format!("no fixed parameters at p={p}")))?;
    let schedule = instantiate_fixed(params, n)?;
    let p_opt = QaoaSimulator::new(n)?.figures(&schedule.betas, &schedule.gammas)?.p_opt;
    Ok(QaoaTtsPoint { n, p, p_opt, qaoa_tts: 1.0 / p_opt, qmf_tts: qmf_tts(p_opt)? })
}

/// QAOA and QAOA+QMF time-to-solution at depth `p` with fixed parameters.
pub fn qaoa_tts_table(fixed: &FixedParamsSet, sizes: &[usize], p: usize) -> Result<Vec<QaoaTtsPoint>> {
    sizes.iter().map(|&n| qaoa_tts_point(fixed, n, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::SymmetryAction;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand::distributions::Distribution;
    use statrs::distribution::Normal;

    #[test]
    fn noiseless_exponential_is_exact() {
        let pts: Vec<(usize, f64)> = (8..20).map(|n| (n, 3.0 * 1.5f64.powi(n as i32))).collect();
        let f = fit_exponential(&pts, 8).unwrap();
        assert!((f.base - 1.5).abs() < 1e-12);
        assert!((f.log_intercept - 3f64.ln()).abs() < 1e-10);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(f.ci_low() <= f.base && f.base <= f.ci_high());
        assert!((f.ci_high() - f.ci_low()) < 1e-9);
    }

    #[test]
    fn t_quantiles_match_tables() {
        // two-sided 95% critical values
        for (df, want) in [(1, 12.706), (2, 4.303), (5, 2.571), (10, 2.228), (30, 2.042)] {
            assert!((t_quantile_95(df).unwrap() - want).abs() < 1e-3, "df={df}");
        }
    }

    #[test]
    fn interval_is_symmetric_in_log_space() {
        let pts = vec![(10, 5.0), (11, 7.9), (12, 11.0), (13, 18.5), (14, 25.0)];
        let f = fit_exponential(&pts, 10).unwrap();
        let (lo, mid, hi) = (f.ci_low().ln(), f.base.ln(), f.ci_high().ln());
        assert!(((mid - lo) - (hi - mid)).abs() < 1e-12);
        assert!(((hi - mid) - t_quantile_95(3).unwrap() * f.slope_std_err).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        assert!(fit_exponential(&[(10, 1.0), (11, 2.0)], 10).is_err());
        assert!(fit_exponential(&[(10, 1.0), (11, 0.0), (12, 3.0)], 10).is_err());
        assert!(fit_exponential(&[(9, 1.0), (10, 1.0), (11, 2.0), (12, 4.0)], 11).is_err());
    }

    #[test]
    fn interval_coverage_with_lognormal_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut covered = 0;
        for _ in 0..200 {
            let pts: Vec<(usize, f64)> =
                (10..22).map(|n| (n, 2.0 * 1.3f64.powi(n as i32) * noise.sample(&mut rng).exp())).collect();
            let f = fit_exponential(&pts, 10).unwrap();
            covered += (f.ci_low() <= 1.3 && 1.3 <= f.ci_high()) as u32;
        }
        assert!(covered >= 180, "coverage {covered}/200");
    }

    #[test]
    fn square_root_relation_passes_through_the_fit() {
        let pts: Vec<(usize, f64)> = (10..18).map(|n| (n, 1.46f64.powi(n as i32) * (1.0 + 0.1 * (n % 3) as f64))).collect();
        let roots: Vec<(usize, f64)> = pts.iter().map(|&(n, t)| (n, t.sqrt())).collect();
        let a = fit_exponential(&pts, 10).unwrap();
        let b = fit_exponential(&roots, 10).unwrap();
        assert!((b.base - a.base.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn sweep_sees_curvature_drop_out() {
        // exponential plus a term that only matters for small N
        let pts: Vec<(usize, f64)> = (6..24).map(|n| (n, 1.4f64.powi(n as i32) * (1.0 + 40.0 * (-(n as f64) / 1.5).exp()))).collect();
        let rows = fit_quality_sweep(&pts, 6..=14).unwrap();
        assert!(rows.windows(2).all(|w| w[1].r2 >= w[0].r2 - 1e-12));
        assert!(rows[0].r2 < rows.last().unwrap().r2);
        assert!((rows.last().unwrap().base - 1.4).abs() < 1e-3);
        assert!((rows[0].base - 1.4).abs() > (rows.last().unwrap().base - 1.4).abs());
        let clean: Vec<(usize, f64)> = (6..16).map(|n| (n, 1.2f64.powi(n as i32))).collect();
        assert!(fit_quality_sweep(&clean, 6..=10).unwrap().iter().all(|r| (r.r2 - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constructed_correlations() {
        let targets = [0b1011u64, 0b0100];
        let d = hamming_distances(6, &targets).unwrap();
        assert!((hamming_correlation(6, &targets, |x| d[x as usize] as f64).unwrap() - 1.0).abs() < 1e-12);
        assert!((hamming_correlation(6, &targets, |x| -3.0 * d[x as usize] as f64).unwrap() + 1.0).abs() < 1e-12);
        assert!(hamming_correlation(6, &targets, |_| 1.0).is_err());
        // brute-force distances
        for x in 0..64u64 {
            let want = targets.iter().map(|t| (x ^ t).count_ones()).min().unwrap();
            assert_eq!(d[x as usize], want);
        }
    }

    #[test]
    fn labs_correlation_is_weak_and_symmetric() {
        for n in [10, 12] {
            let table = EnergyTable::build(n, false).unwrap();
            let r = hamming_objective_correlation(&table).unwrap();
            assert!((-1.0..=1.0).contains(&r));
            assert!(r < 0.5, "N={n} r={r}");
            // relabel every string by a symmetry: distances and energies move together
            let act = SymmetryAction { negate: true, alternate: true, reverse: false };
            let targets: Vec<u64> = table.optimal_indices().iter().map(|&x| act.apply_index(x, n)).collect();
            let moved = hamming_correlation(n, &targets, |x| table.energy(act.apply_index(x, n)) as f64).unwrap();
            assert!((moved - r).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn pearson_is_bounded_and_affine_invariant(
            xs in proptest::collection::vec(-100.0f64..100.0, 3..30),
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
            seed in 0u64..100,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = xs.iter().map(|x| x * 0.3 + rng.gen_range(-20.0..20.0)).collect();
            if let Some(r) = pearson(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                prop_assert!((pearson(&scaled, &ys).unwrap() - r).abs() < 1e-9);
            }
        }
    }
}
