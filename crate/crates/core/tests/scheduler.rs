use famtune::experiment::{build_backend, build_landscape, RunSetup};
use famtune::family::{cluster, ClusterAlgo, FamilyRegistry};
use famtune::fixtures;
use famtune::graph::ModelGraph;
use famtune::scheduler::{
    baseline_tune, foresee_tune, ModelAssignment, Mode, Phase, Policy, PotentialFn, SearchConfig, Tuner, TunerState,
};
use famtune::simbackend::{brute_force_optimum, LandscapeParams};

fn setup(budget: usize, sigma: f64) -> RunSetup {
    RunSetup {
        budget,
        landscape: LandscapeParams {
            noise_sigma: sigma,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn tuner(model: &ModelGraph, s: &RunSetup, families: FamilyRegistry, assignment: ModelAssignment, foresee: bool, seed: u64) -> Tuner<f64> {
    let land = build_landscape(model, s, seed).unwrap();
    let backend = build_backend(model, land, s, seed).unwrap();
    Tuner::new(
        backend,
        families,
        assignment,
        foresee,
        s.potential,
        s.budget,
        s.foresee_p,
        SearchConfig { seed, ..s.search },
    )
    .unwrap()
}

fn run(model: &ModelGraph, s: &RunSetup, mode: Mode, seed: u64) -> TunerState<f64> {
    let (assignment, foresee) = match mode {
        Mode::Foresee => (ModelAssignment::PerFamily, true),
        Mode::Monolithic => (ModelAssignment::Monolithic, false),
    };
    tuner(model, s, cluster(&model.subgraphs, s.cluster_algo), assignment, foresee, seed)
        .run()
        .unwrap()
        .0
}

fn check_accounting(st: &TunerState<f64>) {
    assert_eq!(st.b, st.measurements.len());
    assert_eq!(st.b, st.subgraphs.iter().map(|s| s.allocated).sum::<usize>());
    let fs = ((st.g as f64 * st.p).floor() as usize).max(1);
    assert!(st.b < st.budget + st.g + fs, "b={} overshoots", st.b);
    for w in st.curve.windows(2) {
        assert!(w[1].b > w[0].b);
        assert!(w[1].wall_seconds > w[0].wall_seconds);
        assert!(w[1].model_latency <= w[0].model_latency);
    }
    assert_eq!(st.curve.last().unwrap().b, st.b);
}

#[test]
fn budget_is_conserved_and_curves_only_improve() {
    let model = fixtures::bert_large();
    for mode in [Mode::Foresee, Mode::Monolithic] {
        for seed in 0..2 {
            let st = run(&model, &setup(1100, 0.02), mode, seed);
            assert_eq!(st.g, 64);
            assert!(st.b >= st.budget);
            check_accounting(&st);
        }
    }
}

#[test]
fn final_latency_is_bounded_by_the_oracle() {
    let model = fixtures::tiny();
    let s = setup(700, 0.0);
    let land = build_landscape::<f64>(&model, &s, 4).unwrap();
    let oracle: f64 = model
        .subgraphs
        .iter()
        .map(|sg| sg.weight as f64 * brute_force_optimum(sg, &land).unwrap().1)
        .sum();
    for mode in [Mode::Foresee, Mode::Monolithic] {
        let st = run(&model, &s, mode, 4);
        assert!(st.final_latency() >= oracle);
        for (sg, state) in model.subgraphs.iter().zip(&st.subgraphs) {
            let best = brute_force_optimum(sg, &land).unwrap().1;
            let mut prev = f64::INFINITY;
            for &(_, l) in &state.trajectory {
                assert!(l <= prev && l >= best);
                prev = l;
            }
        }
    }
}

#[test]
fn foresee_steps_add_g_plus_quarter_g() {
    let model = fixtures::bert_large();
    let st = run(&model, &setup(1100, 0.02), Mode::Foresee, 1);
    let phases: Vec<_> = st.curve.iter().map(|c| c.phase).collect();
    for (i, w) in st.curve.windows(2).enumerate() {
        let d = w[1].b - w[0].b;
        match phases[i + 1] {
            Phase::Main => assert_eq!(d, 64),
            Phase::Foresee => {
                assert_eq!(d, 16);
                assert_eq!(phases[i], Phase::Main);
            }
            Phase::Init => unreachable!(),
        }
    }
    assert!(phases.contains(&Phase::Foresee));
}

#[test]
fn singleton_families_disable_the_foresee_phase() {
    let model = fixtures::bert_large();
    let s = setup(1100, 0.02);
    let n = model.len();
    let with = tuner(&model, &s, FamilyRegistry::singletons(n), ModelAssignment::PerFamily, true, 2)
        .run()
        .unwrap()
        .0;
    let without = tuner(&model, &s, FamilyRegistry::singletons(n), ModelAssignment::PerFamily, false, 2)
        .run()
        .unwrap()
        .0;
    assert_eq!(with.measurements, without.measurements);
    assert!(with.curve.windows(2).all(|w| w[1].b - w[0].b == with.g));
}

#[test]
fn first_pass_touches_every_subgraph() {
    let model = fixtures::bert_large();
    let n = model.len();
    let s = setup(n * 64, 0.02);
    let st = run(&model, &s, Mode::Monolithic, 0);
    assert_eq!(st.b, n * 64);
    assert!(st.subgraphs.iter().all(|s| s.allocated == 64));
}

#[test]
fn monolithic_model_holds_every_measurement() {
    let model = fixtures::tiny();
    let s = setup(500, 0.02);
    let land = build_landscape::<f64>(&model, &s, 3).unwrap();
    let backend = build_backend(&model, land, &s, 3).unwrap();
    let policy = Policy {
        mode: Mode::Monolithic,
        ..Default::default()
    };
    let (st, models) = baseline_tune(backend, s.budget, &policy, s.search).unwrap();
    assert_eq!(models.len(), 1);
    assert_eq!(models[0].training_len(), st.b);

    let land = build_landscape::<f64>(&model, &s, 3).unwrap();
    let backend = build_backend(&model, land, &s, 3).unwrap();
    let (st, models) = foresee_tune(backend, s.budget, 0.25, &Policy::default(), s.search).unwrap();
    assert_eq!(models.len(), cluster(&model.subgraphs, ClusterAlgo::CoreOp).len());
    assert_eq!(models.iter().map(|m| m.training_len()).sum::<usize>(), st.b);
}

#[test]
fn noise_free_long_runs_reach_the_oracle() {
    let model = fixtures::tiny();
    let total: u64 = model.subgraphs.iter().map(|s| s.space_size().unwrap()).sum();
    let s = setup(2 * total as usize, 0.0);
    let land = build_landscape::<f64>(&model, &s, 8).unwrap();
    let oracle: f64 = model
        .subgraphs
        .iter()
        .map(|sg| sg.weight as f64 * brute_force_optimum(sg, &land).unwrap().1)
        .sum();
    for mode in [Mode::Foresee, Mode::Monolithic] {
        let st = run(&model, &s, mode, 8);
        assert_eq!(st.final_latency(), oracle, "{mode}");
        assert!(st.subgraphs.iter().all(|s| s.exhausted));
    }
}

#[test]
fn small_space_is_exhausted_then_skipped() {
    let model = fixtures::with_small_space();
    let small = model.subgraphs.iter().position(|s| s.space_size().unwrap() == 320).unwrap();
    let s = setup(1500, 0.02);
    for mode in [Mode::Foresee, Mode::Monolithic] {
        let st = run(&model, &s, mode, 0);
        assert!(st.b >= s.budget);
        assert!(st.subgraphs[small].exhausted);
        assert_eq!(st.subgraphs[small].allocated, 320);
        check_accounting(&st);
    }
}

#[test]
fn worker_count_leaves_b_space_curves_unchanged() {
    let model = fixtures::tiny();
    let curves: Vec<Vec<(usize, f64)>> = [1, 2, 4]
        .iter()
        .map(|&w| {
            let s = RunSetup {
                workers: w,
                ..setup(600, 0.02)
            };
            run(&model, &s, Mode::Foresee, 5)
                .curve
                .iter()
                .map(|c| (c.b, c.model_latency))
                .collect()
        })
        .collect();
    assert_eq!(curves[0], curves[1]);
    assert_eq!(curves[0], curves[2]);
}

#[test]
fn gradient_potential_and_f32_runs_complete() {
    let model = fixtures::bert_large();
    let s = RunSetup {
        potential: PotentialFn::Gradient,
        ..setup(1100, 0.02)
    };
    let st = run(&model, &s, Mode::Foresee, 0);
    check_accounting(&st);

    let land = build_landscape::<f32>(&model, &s, 0).unwrap();
    let st32 = famtune::experiment::run_tune(&model, &land, &s, Mode::Monolithic, 0).unwrap();
    assert!(st32.b >= s.budget);
    assert!(st32.final_latency() < st32.curve[0].model_latency);
}

#[test]
fn identical_inputs_give_identical_curves() {
    let model = fixtures::bert_large();
    let a = run(&model, &setup(800, 0.02), Mode::Foresee, 6).curve_csv();
    let b = run(&model, &setup(800, 0.02), Mode::Foresee, 6).curve_csv();
    assert_eq!(a, b);
}
