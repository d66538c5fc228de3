use labs::schedules::optimize::LocalOptions;
use labs::schedules::{instantiate_fixed, optimize_p1_grid, optimize_schedule, FixedParamsSet};
use labs::statevector::{energy_level_distribution, run_qaoa};
use labs::{EnergyTable, Objective, ProblemInstance, QaoaSimulator};

fn p_opt_curve(sim: &QaoaSimulator, set: &FixedParamsSet, max_p: usize) -> Vec<f64> {
    (1..=max_p)
        .map(|p| sim.run(&instantiate_fixed(set.at_depth(p).unwrap(), sim.n()).unwrap()).unwrap().p_opt)
        .collect()
}

// N=10 sits below the source window and saturates near p=8; see README.
#[test]
fn p_opt_increases_with_depth_under_fixed_params() {
    let set = FixedParamsSet::bundled();
    for n in 11..=20 {
        let sim = QaoaSimulator::new(n).unwrap();
        let curve = p_opt_curve(&sim, &set, 12);
        for (p, w) in curve.windows(2).enumerate() {
            assert!(w[1] > w[0], "N={n}: p_opt({}) = {} not above p_opt({}) = {}", p + 2, w[1], p + 1, w[0]);
        }
    }
}

#[test]
fn ground_level_mass_is_p_opt() {
    let n = 10;
    let inst = ProblemInstance::new(n).unwrap();
    let table = EnergyTable::build(n, false).unwrap();
    let schedule = instantiate_fixed(FixedParamsSet::bundled().at_depth(6).unwrap(), n).unwrap();
    let result = run_qaoa(&inst, &schedule, &table).unwrap();
    let sim = QaoaSimulator::new(n).unwrap();
    let state = sim.state(&schedule.betas, &schedule.gammas).unwrap();
    let levels = energy_level_distribution(&state, &table).unwrap();
    assert_eq!(levels[0].energy, 13);
    assert!((levels[0].probability - result.p_opt).abs() < 1e-15);
    let total: f64 = levels.iter().map(|l| l.probability).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn fixed_params_are_close_to_direct_optimization_outside_the_window() {
    let n = 18;
    let set = FixedParamsSet::bundled();
    let sim = QaoaSimulator::new(n).unwrap();
    let opts = LocalOptions::for_size(n);
    for p in 1..=5 {
        let fixed = instantiate_fixed(set.at_depth(p).unwrap(), n).unwrap();
        let at_fixed = sim.run(&fixed).unwrap().p_opt;
        let direct = optimize_schedule(&sim, Objective::POpt, &fixed, &opts).unwrap().value;
        assert!(at_fixed >= 0.9 * direct, "p={p}: fixed {at_fixed} vs direct {direct}");
    }
}

#[test]
fn depth_one_gamma_scales_as_one_over_n() {
    let scaled: Vec<f64> = (10..=16)
        .map(|n| {
            let sim = QaoaSimulator::new(n).unwrap();
            let best = optimize_p1_grid(&sim, Objective::MeritFactor, 20, 3, &LocalOptions::for_size(n)).unwrap();
            n as f64 * best.best.schedule.gammas[0]
        })
        .collect();
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g.abs()), b.max(g.abs())));
    assert!((hi - lo) / hi < 0.25, "N*gamma* across N=10..16: {scaled:?}");
}
