use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::json;

use labs::analysis::{self, fit_exponential, fit_quality_sweep, QaoaTtsPoint};
use labs::compiler::{self, Ordering};
use labs::errdetect::{self, NoiseModel, NoisySimulator};
use labs::minfind::{self, LevelDistribution, QmfRun};
use labs::schedules::optimize::LocalOptions;
use labs::schedules::{self, FixedParamsSet};
use labs::solvers::{self, SolverConfig, SolverKind};
use labs::sweep::{run_sweep, SweepSpec};
use labs::{EnergyTable, Objective, ProblemInstance, QaoaSimulator, Schedule, SpinSequence};

use crate::output::Output;
use crate::{usage, Cli, Command, Global};

/// Largest size for which a missing solver target is filled in exhaustively.
const AUTO_TARGET_MAX_N: usize = 20;

pub fn run(cli: &Cli) -> anyhow::Result<Output> {
    let g = &cli.global;
    match &cli.command {
        Command::Energy { seq, hex } => energy(g, seq.as_deref(), hex.as_deref()),
        Command::Table { parallel } => table(g, *parallel),
        Command::Optimal { symmetry_reduced } => optimal(g, *symmetry_reduced),
        Command::Qaoa { params } => {
            let n = need_n(g)?;
            let result = QaoaSimulator::new(n)?.run(&schedule_for(g, params.as_deref())?)?;
            let mut csv = String::from("energy,probability\n");
            for l in &result.levels {
                csv.push_str(&format!("{},{:?}\n", l.energy, l.probability));
            }
            Ok(Output::json(&result)?.with_csv(csv))
        }
        Command::Optimize { objective, restarts } => optimize(g, objective, *restarts),
        Command::FixedParams { sources, objective, restarts } => {
            let objective: Objective = objective.parse()?;
            let set = schedules::fixed_params_from_sources(objective, &sources.0, g.p.unwrap_or(12), g.seed, *restarts)?;
            Ok(Output::json(&set)?)
        }
        Command::Qmf { params, trials, delta, c, m, failure_injection, keep_trials } => {
            let n = need_n(g)?;
            let p = g.p.unwrap_or(0);
            let table = EnergyTable::build(n, true)?;
            let dist = if p == 0 {
                LevelDistribution::uniform(&table)?
            } else {
                let inst = ProblemInstance::new(n)?;
                LevelDistribution::from_qaoa(&labs::statevector::run_qaoa(&inst, &schedule_for(g, params.as_deref())?, &table)?)?
            };
            let p_opt = dist.p_opt();
            let run = QmfRun {
                delta: *delta,
                m: m.unwrap_or(1.0 / p_opt.sqrt()).min((n as f64).exp2()),
                c: *c,
                trials: *trials,
                seed: g.seed,
                failure_injection: *failure_injection,
            };
            let outcome = minfind::simulate_qmf(n, p, &dist, &run, *keep_trials)?;
            let mut value = serde_json::to_value(&outcome)?;
            value["p_opt"] = json!(p_opt);
            value["query_bound"] = json!(run.c * n as f64 / p_opt.sqrt());
            Ok(Output { json: value, ..Output::default() })
        }
        Command::Aa { p0, steps, qaoa } => aa(g, *p0, *steps, *qaoa),
        Command::Solve { solver, budget, target, skew, symmetry_reduced, audit } => {
            let n = need_n(g)?;
            let mut config = SolverConfig::new(solver.parse::<SolverKind>()?, g.seed);
            if let Some(b) = budget {
                config.budget = *b;
            }
            config.target_energy = match target {
                Some(t) => Some(*t),
                None if n <= AUTO_TARGET_MAX_N && config.kind != SolverKind::Exhaustive => Some(solvers::ground_truth(n)?.0),
                None => None,
            };
            config.skew_symmetric_only = *skew;
            config.symmetry_reduced = *symmetry_reduced;
            config.audit = *audit;
            let r = solvers::solve(n, &config)?;
            let text = format!("E={} F={} evaluations_to_best={} hit_target={}", r.best_energy, merit(n, r.best_energy)?, r.evaluations_to_best, r.hit_target);
            Ok(Output::json(json!({ "config": config, "result": r }))?.with_text(text))
        }
        Command::TtsSweep { solver, sizes, seeds, budget, params, nmin } => tts_sweep(g, solver, &sizes.0, *seeds, *budget, params.as_deref(), *nmin),
        Command::Fit { input, nmin, column, sweep } => fit(input, *nmin, column.as_deref(), sweep.as_ref().map(|s| &s.0[..])),
        Command::Correlate { sizes } => {
            let sizes = match (sizes, g.n) {
                (Some(s), _) => s.0.clone(),
                (None, Some(n)) => vec![n],
                (None, None) => return usage("correlate needs --n or --sizes"),
            };
            let mut rows = Vec::new();
            let mut csv = String::from("N,correlation\n");
            for n in sizes {
                let r = analysis::hamming_objective_correlation(&EnergyTable::build(n, true)?)?;
                csv.push_str(&format!("{n},{r:?}\n"));
                rows.push(json!({ "N": n, "correlation": r }));
            }
            Ok(Output::json(rows)?.with_csv(csv))
        }
        Command::Compile { params, ordering, gamma, chunks } => {
            let n = need_n(g)?;
            let inst = ProblemInstance::new(n)?;
            let ordering: Ordering = ordering.parse()?;
            let circuit = match gamma {
                Some(gamma) => compiler::compile_phase_with(&inst, *gamma, ordering, g.seed)?,
                None => compiler::compile_qaoa_chunked(&inst, &schedule_for(g, params.as_deref())?, ordering, g.seed, *chunks)?,
            };
            let text = format!(
                "N={n} gates={} two_qubit={} cnot={}",
                circuit.gates.len(),
                circuit.two_qubit_count(),
                circuit.cnot_count()
            );
            Ok(Output::json(&circuit)?.with_text(text))
        }
        Command::GateCount { sizes, seeds } => {
            let mut reports = Vec::new();
            let mut csv = String::from("N,seed,ordering,two_qubit_count,cnot_count\n");
            for &n in &sizes.0 {
                let r = compiler::count_report(&ProblemInstance::new(n)?, *seeds)?;
                for row in &r.rows {
                    csv.push_str(&format!("{},{},{},{},{}\n", row.n, row.seed, row.ordering.name(), row.two_qubit_count, row.cnot_count));
                }
                reports.push(json!({
                    "N": r.n,
                    "greedy_count": r.greedy_count,
                    "random_mean": r.random_mean,
                    "random_std": r.random_std,
                    "reduction_ratio": r.reduction_ratio,
                }));
            }
            Ok(Output::json(reports)?.with_csv(csv))
        }
        Command::Checks { params, m, verify } => {
            let n = need_n(g)?;
            let checked = errdetect::checked_qaoa(n, &schedule_for(g, params.as_deref())?, *m, g.seed)?;
            let mut value = serde_json::to_value(&checked)?;
            if let Some(trials) = verify {
                value["detection"] = serde_json::to_value(errdetect::detection_theorem_check(n, *m, *trials, g.seed)?)?;
            }
            Ok(Output { json: value, ..Output::default() })
        }
        Command::NoisySim { params, m, p2, shots, channel, noisy_checks, shots_csv } => {
            let n = need_n(g)?;
            let channel = match channel.as_ref().map(|c| &c.0[..]) {
                None => NoiseModel::default().channel,
                Some([x, y, z]) => [*x, *y, *z],
                Some(other) => return usage(format!("--channel needs three weights, got {}", other.len())),
            };
            let noise = NoiseModel { p2: *p2, channel, seed: g.seed, noisy_checks: *noisy_checks };
            let checked = errdetect::checked_qaoa(n, &schedule_for(g, params.as_deref())?, *m, g.seed)?;
            let sim = NoisySimulator::new(&checked)?;
            let table = EnergyTable::build(n, true)?;
            let (stats, records) = errdetect::simulate_noisy(&sim, &noise, *shots, &table, *shots_csv)?;
            let mut out = Output::json(&stats)?;
            if *shots_csv {
                let mut csv = String::from("shot,bitstring,kept,syndrome\n");
                for r in &records {
                    csv.push_str(&format!("{},{},{},{}\n", r.shot, r.bitstring, r.kept, r.syndrome));
                }
                out = out.with_file("shots.csv", csv);
            }
            Ok(out)
        }
        Command::TimeModel { t0, p_list } => {
            let t = errdetect::avg_time_models(*t0, &p_list.0)?;
            Ok(Output::json(&t)?.with_text(format!("t1={} t2={}", t.t1, t.t2)))
        }
    }
}

fn need_n(g: &Global) -> anyhow::Result<usize> {
    match g.n {
        Some(n) => Ok(n),
        None => usage("this command needs --n"),
    }
}

fn merit(n: usize, energy: i64) -> anyhow::Result<f64> {
    Ok(labs::problem::merit_factor_of(n, energy)?)
}

/// Schedule from `--params` (a schedule, fixed parameters or a fixed-parameter
/// set, rescaled to `--n`), else the bundled fixed parameters at `--p` (default 1).
fn schedule_for(g: &Global, params: Option<&Path>) -> anyhow::Result<Schedule> {
    let n = need_n(g)?;
    match params {
        Some(path) => Ok(schedules::load_schedule_for(path, n, g.p).with_context(|| format!("loading {}", path.display()))?),
        None => {
            let p = g.p.unwrap_or(1);
            let set = FixedParamsSet::bundled();
            match set.at_depth(p) {
                Some(f) => Ok(schedules::instantiate_fixed(f, n)?),
                None => usage(format!("bundled fixed parameters cover p = 1..{}; pass --params for p={p}", set.sets.len())),
            }
        }
    }
}

fn energy(g: &Global, seq: Option<&str>, hex: Option<&str>) -> anyhow::Result<Output> {
    let s = match (seq, hex) {
        (Some(text), None) => SpinSequence::parse_pm(text)?,
        (None, Some(text)) => SpinSequence::from_hex(text, need_n(g)?)?,
        _ => return usage("energy needs exactly one of --seq or --hex"),
    };
    if let Some(n) = g.n {
        if n != s.len() {
            return usage(format!("--n {n} does not match the sequence length {}", s.len()));
        }
    }
    let n = s.len();
    let e = s.sidelobe_energy();
    let f = s.merit_factor()?;
    let value = json!({
        "N": n,
        "sequence": s.to_pm_string(),
        "hex": s.to_hex(),
        "energy": e,
        "merit_factor": f,
        "hamiltonian_value": ProblemInstance::new(n)?.hamiltonian_value(&s)?,
        "autocorrelations": s.autocorrelations(),
        "skew_symmetric": s.is_skew_symmetric(),
    });
    Ok(Output::json(value)?.with_text(format!("E={e} F={f}")).text_by_default())
}

fn table(g: &Global, parallel: bool) -> anyhow::Result<Output> {
    let n = need_n(g)?;
    let table = EnergyTable::build(n, parallel)?;
    let mut csv = String::from("energy,degeneracy\n");
    for (e, c) in table.levels() {
        csv.push_str(&format!("{e},{c}\n"));
    }
    let mut out = Output::json(json!({ "summary": table.summary(), "levels": table.levels().len() }))?.with_csv(csv);
    if g.out.is_some() {
        let mut bin = Vec::with_capacity(8 + (8usize << n));
        table.write_binary(&mut bin)?;
        out = out.with_file("table.bin", bin);
    }
    Ok(out)
}

fn optimal(g: &Global, symmetry_reduced: bool) -> anyhow::Result<Output> {
    let n = need_n(g)?;
    let (e, set) = labs::problem::exhaustive_ground_truth(n, symmetry_reduced)?;
    let seqs = set.iter().map(|&x| Ok(SpinSequence::from_index(x, n)?.to_pm_string())).collect::<anyhow::Result<Vec<_>>>()?;
    let f = merit(n, e)?;
    let text = format!("N={n} E={e} F={f} optimal={}", set.len());
    Ok(Output::json(json!({
        "N": n,
        "min_energy": e,
        "merit_factor": f,
        "count": set.len(),
        "sequences": seqs,
        "bitstrings": set.iter().map(|&x| labs::problem::index_to_hex(x, n)).collect::<Vec<_>>(),
    }))?
    .with_text(text))
}

fn optimize(g: &Global, objective: &str, restarts: usize) -> anyhow::Result<Output> {
    let n = need_n(g)?;
    let p_max = g.p.unwrap_or(1);
    if p_max == 0 {
        return usage("--p must be at least 1");
    }
    let objective: Objective = objective.parse()?;
    let sim = QaoaSimulator::new(n)?;
    let opts = LocalOptions::for_size(n);
    let p1 = schedules::optimize_p1_grid(&sim, objective, restarts, g.seed, &opts)?;
    let (best_restart, total) = (p1.best_restart, p1.total_evaluations);
    let ladder = schedules::fourier_ladder(&sim, objective, p1.best, p_max, true, &opts)?;
    let mut csv = String::from("p,value,evaluations\n");
    for o in &ladder {
        csv.push_str(&format!("{},{:?},{}\n", o.schedule.p(), o.value, o.evaluations));
    }
    let last = ladder.last().expect("ladder has depth 1").schedule.clone();
    Ok(Output::json(json!({
        "N": n,
        "objective": objective,
        "p1_best_restart": best_restart,
        "p1_evaluations": total,
        "ladder": ladder,
    }))?
    .with_csv(csv)
    .with_file(&format!("schedule_p{p_max}.json"), serde_json::to_string_pretty(&last)? + "\n"))
}

fn aa(g: &Global, p0: Option<f64>, steps: u32, qaoa: bool) -> anyhow::Result<Output> {
    let p0 = match (p0, g.n) {
        (Some(p0), _) => p0,
        (None, Some(n)) => EnergyTable::build(n, true)?.p0(),
        (None, None) => return usage("aa needs --p0 or --n"),
    };
    let gains = minfind::aa_gain_curve(p0, steps)?;
    let mut rows = Vec::new();
    let mut csv = String::from("step,success_probability,gain\n");
    for step in 0..=steps {
        let prob = minfind::aa_success_probability(p0, step)?;
        let gain = if step == 0 { 1.0 } else { gains[step as usize - 1] };
        csv.push_str(&format!("{step},{prob:?},{gain:?}\n"));
        rows.push(json!({ "step": step, "success_probability": prob, "gain": gain }));
    }
    let mut value = json!({ "p0": p0, "peak_step": minfind::aa_peak_step(p0)?, "curve": rows });
    if qaoa {
        let n = match g.n {
            Some(n) => n,
            None => return usage("--qaoa needs --n"),
        };
        let sim = QaoaSimulator::new(n)?;
        value["qaoa_gains"] = serde_json::to_value(analysis::gain_comparison(&sim, &FixedParamsSet::bundled(), steps as usize)?)?;
    }
    Ok(Output { json: value, csv: Some(csv), ..Output::default() })
}

fn tts_sweep(
    g: &Global,
    solver: &str,
    sizes: &[usize],
    seeds: usize,
    budget: Option<u64>,
    params: Option<&Path>,
    nmin: usize,
) -> anyhow::Result<Output> {
    let dir = g.out.as_deref();
    let (points, csv, canonical, mut value) = if solver == "qaoa" {
        let p = g.p.unwrap_or(12);
        let fixed = match params {
            Some(path) => FixedParamsSet::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => FixedParamsSet::bundled(),
        };
        let spec = SweepSpec { sizes: sizes.to_vec(), depths: vec![p], seeds: 1, global_seed: g.seed };
        let outcome = run_sweep(&spec, g.workers, dir, |cell| analysis::qaoa_tts_point(&fixed, cell.n, cell.p))?;
        let rows: Vec<&QaoaTtsPoint> = outcome.rows.iter().map(|(_, r)| r).collect();
        let qaoa_points: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.qaoa_tts)).collect();
        let qmf_points: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.qmf_tts)).collect();
        let value = json!({
            "solver": "qaoa",
            "p": p,
            "rows": rows,
            "failed": outcome.failed,
            "qmf_fit": fit_exponential(&qmf_points, nmin).ok(),
        });
        (qaoa_points, outcome.csv(), outcome.canonical_csv(), value)
    } else {
        let mut base = SolverConfig::new(solver.parse::<SolverKind>()?, g.seed);
        if let Some(b) = budget {
            base.budget = b;
        }
        let table = solvers::measure_tts_sweep(&base, sizes, seeds, g.workers, dir)?;
        let value = json!({ "solver": base.kind, "config": base, "summary": table.summary, "failed": table.failed });
        (table.fit_points(), table.csv.clone(), table.canonical_csv.clone(), value)
    };
    value["fit"] = serde_json::to_value(fit_exponential(&points, nmin).ok())?;
    Ok(Output { json: value, csv: Some(csv.clone()), ..Output::default() }
        .with_file("tts.csv", csv)
        .with_file("tts_canonical.csv", canonical))
}

/// Mean TTS per N from a CSV with an `N` column.
fn read_tts_csv(path: &PathBuf, column: Option<&str>) -> anyhow::Result<Vec<(usize, f64)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let n_col = match find("N") {
        Some(c) => c,
        None => return usage(format!("{} has no N column", path.display())),
    };
    let col = match column {
        Some(name) => match find(name) {
            Some(c) => c,
            None => return usage(format!("{} has no {name} column", path.display())),
        },
        None => match ["tts", "mean_evaluations", "qaoa_tts", "evaluations_to_best"].iter().find_map(|c| find(c)) {
            Some(c) => c,
            None => return usage(format!("{} has no TTS column; pass --column", path.display())),
        },
    };
    let hit_col = find("hit_target");
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        if hit_col.is_some_and(|c| &record[c] == "false") {
            continue;
        }
        let n: usize = record[n_col].trim().parse().map_err(|e| crate::UsageError(format!("bad N {:?}: {e}", &record[n_col])))?;
        let v: f64 = record[col].trim().parse().map_err(|e| crate::UsageError(format!("bad value {:?}: {e}", &record[col])))?;
        let slot = sums.entry(n).or_default();
        slot.0 += v;
        slot.1 += 1;
    }
    Ok(sums.into_iter().map(|(n, (s, c))| (n, s / c as f64)).collect())
}

fn fit(input: &PathBuf, nmin: usize, column: Option<&str>, sweep: Option<&[usize]>) -> anyhow::Result<Output> {
    let points = read_tts_csv(input, column)?;
    let f = fit_exponential(&points, nmin)?;
    let text = format!("base={} ci=[{}, {}] r2={} n={} N_min={}", f.base, f.ci[0], f.ci[1], f.r2, f.n, f.n_min);
    let mut value = serde_json::to_value(&f)?;
    if let Some(range) = sweep {
        let lo = *range.iter().min().expect("nonempty");
        let hi = *range.iter().max().expect("nonempty");
        value["quality"] = serde_json::to_value(fit_quality_sweep(&points, lo..=hi)?)?;
    }
    Ok(Output { json: value, text: Some(text), ..Output::default() })
}
