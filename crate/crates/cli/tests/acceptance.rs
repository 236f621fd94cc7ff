//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured figures (visible with `--nocapture`).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use finite_team::fixtures::{noisy_service, seeded_random_model, two_state_flow};
use finite_team::planning::value_iteration_dss_bounded;
use finite_team::{
    deep_state_marginal, evaluate_strategy_cost, extract_dss_strategy, extract_ns_strategy,
    joint_deep_kernel_exact, q_star_oracle, run_q_learning, value_iteration_dss,
    value_iteration_ns, BehaviorPolicy, DeepStateSpace, FiniteTeamModel, LawGrid,
    LearningSchedule, MeanField, QLearningConfig,
};
use lq_team::fixtures::{consensus_grid, smart_grid};
use lq_team::{
    build_aggregate_matrices, dss_controller, gauge_transform, ns_controller, per_step_cost,
    run_policy_gradient, simulate_lq_team_with, solve_deep_riccati, DistributionSpec,
    LqSimOptions, LqTeamModel, LqTeamParams, PgHyperparams,
};

const PG_SEEDS: [u64; 3] = [1, 5, 6];
/// Q-learning budget frozen from a pilot run: 10^5 updates reach sup errors
/// around 3e-3 on the drain model.
const QLEARN_EPISODES: usize = 10_000;
const QLEARN_HORIZON: usize = 10;

#[test]
fn acceptance_1_riccati_reproduction() {
    let started = Instant::now();
    let model = smart_grid();
    let solution = solve_deep_riccati(&model, 1e-12, 100_000).unwrap();
    let elapsed = started.elapsed();

    // Independent quadratic-formula oracle: P^2 = P + 1, Pb^2 = 5 Pb + 10.
    let p = (1.0 + 5.0f64.sqrt()) / 2.0;
    let pb = (5.0 + 65.0f64.sqrt()) / 2.0;
    let theta = -p / (p + 1.0);
    let thetab = -pb / (pb + 2.0);

    let errs = [
        (solution.p[(0, 0)] - p).abs(),
        (solution.pbold[(0, 0)] - pb).abs(),
        (solution.theta[(0, 0)] - theta).abs(),
        (solution.thetabold[(0, 0)] - thetab).abs(),
    ];
    let max_err = errs.iter().cloned().fold(0.0, f64::max);
    assert!(max_err <= 1e-8, "max error {max_err} exceeds 1e-8");
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "solve took {:.3}s",
        elapsed.as_secs_f64()
    );
    println!(
        "acceptance 1 riccati-reproduction: PASS (max error {max_err:.2e}, {:.3}s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn acceptance_2_policy_gradient_convergence() {
    let started = Instant::now();
    let model = smart_grid();
    let reference = solve_deep_riccati(&model, 1e-12, 100_000).unwrap();
    let mut hits = 0usize;
    let mut details = Vec::new();
    for &seed in &PG_SEEDS {
        let hyper = PgHyperparams {
            trajectories: 100,
            horizon: 10,
            smoothing_radius: 0.15,
            step_size: 0.3,
            beta: 1.0,
            iters: 5000,
            seed,
            cost_ceiling: 1e6,
        };
        let trace = run_policy_gradient(
            &model,
            &hyper,
            Some((&reference.theta, &reference.thetabold)),
        )
        .unwrap();
        let hit = trace.first_iteration_within(0.05);
        if hit.is_some() {
            hits += 1;
        }
        details.push(format!(
            "seed {seed} -> {}",
            hit.map(|h| h.to_string()).unwrap_or_else(|| "never".into())
        ));
    }
    let elapsed = started.elapsed();
    assert!(
        hits >= 2,
        "only {hits}/3 seeds entered the 0.05 band within 5000 iterations ({details:?})"
    );
    assert!(
        elapsed.as_secs_f64() <= 600.0,
        "policy gradient took {:.1}s",
        elapsed.as_secs_f64()
    );
    println!(
        "acceptance 2 policy-gradient-convergence: PASS ({hits}/3 seeds, [{}], {:.1}s)",
        details.join(", "),
        elapsed.as_secs_f64()
    );
}

#[test]
fn acceptance_3_deep_kernel_oracle_equivalence() {
    let started = Instant::now();
    let mut models: Vec<FiniteTeamModel> = Vec::new();
    for n in 1..=4u32 {
        models.push(two_state_flow(n, 0.9));
        models.push(seeded_random_model(2, 2, n, 0.9, 100 + u64::from(n)));
        models.push(seeded_random_model(3, 2, n, 0.9, 200 + u64::from(n)));
        models.push(seeded_random_model(3, 1, n, 0.9, 300 + u64::from(n)));
        models.push(seeded_random_model(2, 1, n, 0.9, 400 + u64::from(n)));
    }
    let mut checked = 0usize;
    let mut max_dev = 0.0f64;
    for model in &models {
        let space = DeepStateSpace::new(model.n(), model.num_states());
        let grid = LawGrid::deterministic(model.num_states(), model.num_actions()).unwrap();
        for d in space.iter() {
            for law in grid.laws() {
                let exact = joint_deep_kernel_exact(model, &d, law).unwrap();
                for x_next in 0..model.num_states() {
                    for y in 0..=model.n() {
                        let from_exact: f64 = exact
                            .iter()
                            .filter(|(ds, _)| ds.count(x_next) == y)
                            .map(|(_, p)| p)
                            .sum();
                        let from_conv = deep_state_marginal(model, &d, law, x_next, y).unwrap();
                        let dev = (from_exact - from_conv).abs();
                        max_dev = max_dev.max(dev);
                        assert!(
                            dev <= 1e-12,
                            "marginal deviation {dev} at |X|={}, n={}, d={:?}, x'={x_next}, y={y}",
                            model.num_states(),
                            model.n(),
                            d.counts()
                        );
                        checked += 1;
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {:.1}s", elapsed.as_secs_f64());
    println!(
        "acceptance 3 deep-kernel-oracle-equivalence: PASS ({checked} marginals, max dev {max_dev:.2e}, {:.2}s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn acceptance_4_q_learning_convergence() {
    let started = Instant::now();
    // Drain model with a full-support initial law so episode restarts keep
    // every deep state recurrent.
    let model = two_state_flow(3, 0.9)
        .with_initial_law(vec![0.5, 0.5])
        .unwrap();
    let reference = q_star_oracle(&model).unwrap();
    let grid = LawGrid::deterministic(2, 2).unwrap();
    let planner = value_iteration_dss(&model, &grid, 1e-10, 100_000).unwrap();

    let mut passing = 0usize;
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let config = QLearningConfig {
            episodes: QLEARN_EPISODES,
            horizon: QLEARN_HORIZON,
            behavior: BehaviorPolicy::UniformRandom,
            schedule: LearningSchedule::InverseVisits,
            seed,
            trace_every: 0,
        };
        let run = run_q_learning(&model, &config, Some(&reference)).unwrap();
        let sup = run.table.sup_distance(&reference);
        worst = worst.max(sup);
        let greedy_matches = (0..run.table.space().len()).all(|rank| {
            run.table.min_over_laws(rank).0 == planner.policy_indices()[rank]
        });
        if sup <= 0.01 && greedy_matches {
            passing += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(
        passing >= 9,
        "only {passing}/10 seeds reached sup error <= 0.01 with matching greedy policy"
    );
    assert!(elapsed.as_secs_f64() <= 120.0, "took {:.1}s", elapsed.as_secs_f64());
    println!(
        "acceptance 4 q-learning-convergence: PASS ({passing}/10 seeds, worst sup error {worst:.2e}, {:.1}s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn acceptance_5_value_iteration_correctness() {
    let mut worst = 0.0f64;
    for n in [2u32, 3, 4] {
        let model = two_state_flow(n, 0.9);
        let grid = LawGrid::deterministic(2, 2).unwrap();
        let table = value_iteration_dss(&model, &grid, 1e-10, 100_000).unwrap();
        for d in table.space().iter() {
            let err = (table.value(&d) - d.fraction(0)).abs();
            worst = worst.max(err);
            assert!(
                err <= 1e-9,
                "value error {err} at n={n}, d={:?}",
                d.counts()
            );
        }
    }
    println!("acceptance 5 value-iteration-correctness: PASS (worst error {worst:.2e})");
}

fn random_orthonormal_alpha(n: usize, z: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let raw = DMatrix::from_fn(n, z, |_, _| rng.random_range(-1.0..1.0));
        let q = raw.qr().q();
        if q.ncols() < z {
            continue;
        }
        let alpha = q.columns(0, z).into_owned() * (n as f64).sqrt();
        let gram = alpha.transpose() * &alpha / n as f64;
        if (gram - DMatrix::<f64>::identity(z, z)).amax() < 1e-10 {
            return alpha;
        }
    }
}

#[test]
fn acceptance_6_gauge_cost_decomposition() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_identity = 0.0f64;
    let mut worst_mean = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        let z = rng.random_range(1..=3usize.min(n - 1).max(1));
        let h_x = rng.random_range(1..=2);
        let h_u = rng.random_range(1..=2);
        let alpha = random_orthonormal_alpha(n, z, &mut rng);
        let spd = |dim: usize, rng: &mut ChaCha8Rng| {
            let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            &m * m.transpose() + DMatrix::identity(dim, dim) * 0.5
        };
        let model = LqTeamModel::new(LqTeamParams {
            a: DMatrix::identity(h_x, h_x),
            b: DMatrix::from_fn(h_x, h_u, |i, j| f64::from(i == j)),
            abar: vec![],
            bbar: vec![],
            q: spd(h_x, &mut rng),
            r: spd(h_u, &mut rng),
            qbar: spd(z * h_x, &mut rng),
            rbar: spd(z * h_u, &mut rng),
            alpha: alpha.clone(),
            beta: 1.0,
            noise: DistributionSpec::Point {
                value: nalgebra::DVector::zeros(h_x),
            },
            initial: DistributionSpec::Point {
                value: nalgebra::DVector::zeros(h_x),
            },
            weakly_coupled: false,
        })
        .unwrap();
        let states = DMatrix::from_fn(h_x, n, |_, _| rng.random_range(-2.0..2.0));
        let actions = DMatrix::from_fn(h_u, n, |_, _| rng.random_range(-2.0..2.0));
        let g = gauge_transform(&states, &actions, &alpha).unwrap();

        let mean_dev = (&g.delta_states * &alpha / n as f64).amax();
        worst_mean = worst_mean.max(mean_dev);
        assert!(mean_dev <= 1e-10, "weighted deviation mean {mean_dev}");

        let mut direct = 0.0;
        for i in 0..n {
            direct += per_step_cost(
                &model,
                &states.column(i).into_owned(),
                &actions.column(i).into_owned(),
                &g.xbar,
                &g.ubar,
            );
        }
        direct /= n as f64;
        let agg = build_aggregate_matrices(&model);
        let mut split = 0.0;
        for i in 0..n {
            let dx = g.delta_states.column(i);
            let du = g.delta_actions.column(i);
            split += (dx.transpose() * model.q() * dx)[(0, 0)]
                + (du.transpose() * model.r() * du)[(0, 0)];
        }
        split /= n as f64;
        split += (g.xbar.transpose() * &agg.qbold * &g.xbar)[(0, 0)];
        split += (g.ubar.transpose() * &agg.rbold * &g.ubar)[(0, 0)];
        let identity_dev = (direct - split).abs() / direct.abs().max(1.0);
        worst_identity = worst_identity.max(identity_dev);
        assert!(identity_dev <= 1e-9, "decomposition deviation {identity_dev}");
    }
    println!(
        "acceptance 6 gauge-cost-decomposition: PASS (1000 profiles, worst identity dev {worst_identity:.2e}, worst mean dev {worst_mean:.2e}, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

/// Paired per-trial objectives under common random streams.
fn lq_paired_objectives(
    model: &LqTeamModel,
    controller: &dyn lq_team::LqController,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Vec<f64> {
    let options = LqSimOptions::default();
    (0..trials)
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64 + 1);
            let log =
                simulate_lq_team_with(model, controller, horizon, seed, &options, &mut rng)
                    .unwrap();
            log.costs().iter().sum::<f64>() / horizon as f64
        })
        .collect()
}

#[test]
fn acceptance_7_ns_gap_trend() {
    let started = Instant::now();

    // LQ side: mean-field substitution versus deep-state feedback.
    let horizon = 150;
    let trials = 120;
    let mut lq_gaps = Vec::new();
    let mut lq_cis = Vec::new();
    for n in [10usize, 40, 160] {
        let model = consensus_grid(n);
        let solution = solve_deep_riccati(&model, 1e-12, 100_000).unwrap();
        let dss = dss_controller(&solution, model.alpha());
        let ns = ns_controller(&model, &solution, None).unwrap();
        let j_dss = lq_paired_objectives(&model, &dss, horizon, trials, 7001);
        let j_ns = lq_paired_objectives(&model, &ns, horizon, trials, 7001);
        let diffs: Vec<f64> = j_ns.iter().zip(&j_dss).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / trials as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / (trials as f64 - 1.0);
        lq_gaps.push(mean);
        lq_cis.push(1.96 * (var / trials as f64).sqrt());
    }
    for i in 1..lq_gaps.len() {
        assert!(
            lq_gaps[i] <= lq_gaps[i - 1] + lq_cis[i] + lq_cis[i - 1],
            "LQ gap trend violated: {lq_gaps:?} with CIs {lq_cis:?}"
        );
    }

    // Finite side: joint-independent model, exact planner versus quantized
    // mean-field strategy.
    let beta = 0.9;
    let f_horizon = 120;
    let f_trials = 200;
    let grid = LawGrid::deterministic(2, 2).unwrap();
    let mut fi_gaps = Vec::new();
    let mut fi_cis = Vec::new();
    for n in [5u32, 10, 20] {
        let model = noisy_service(n, beta);
        let dss_table =
            value_iteration_dss_bounded(&model, &grid, 1e-9, 100_000, 10_000_000).unwrap();
        let dss = extract_dss_strategy(&dss_table);
        let ns_table = value_iteration_ns(&model, 32, &grid, 1e-9, 100_000).unwrap();
        let ns = extract_ns_strategy(
            &ns_table,
            MeanField::new(model.initial_law().to_vec()).unwrap(),
        );
        let j_dss =
            evaluate_strategy_cost(&model, &dss, beta, f_horizon, f_trials, 7002).unwrap();
        let j_ns = evaluate_strategy_cost(&model, &ns, beta, f_horizon, f_trials, 7002).unwrap();
        fi_gaps.push((j_ns.mean - j_dss.mean).abs());
        fi_cis.push(1.96 * (j_ns.std_error + j_dss.std_error));
    }
    for i in 1..fi_gaps.len() {
        assert!(
            fi_gaps[i] <= fi_gaps[i - 1] + fi_cis[i] + fi_cis[i - 1],
            "finite gap trend violated: {fi_gaps:?} with CIs {fi_cis:?}"
        );
    }
    println!(
        "acceptance 7 ns-gap-trend: PASS (LQ gaps {:?}, finite gaps {:?}, {:.1}s)",
        lq_gaps
            .iter()
            .map(|g| format!("{g:.2e}"))
            .collect::<Vec<_>>(),
        fi_gaps
            .iter()
            .map(|g| format!("{g:.2e}"))
            .collect::<Vec<_>>(),
        started.elapsed().as_secs_f64()
    );
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_deep-teams"))
        .args(args)
        .status()
        .expect("binary runs");
    assert!(status.success(), "cli failed: deep-teams {args:?}");
}

fn comparable_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("output dir exists") {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().to_string();
        let is_csv = name.ends_with(".csv");
        let is_json = name.ends_with(".json") && name != "manifest.json";
        if is_csv || is_json {
            map.insert(name, std::fs::read(entry.path()).unwrap());
        }
    }
    map
}

#[test]
fn acceptance_8_reproducibility() {
    let started = Instant::now();
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let flow = scenarios.join("two_state_flow.toml");
    let flow_q = scenarios.join("two_state_flow_qlearn.toml");
    let service = scenarios.join("service_mean_field.toml");
    let grid = scenarios.join("smart_grid.toml");
    let flow_s = flow.to_str().unwrap();
    let flow_q_s = flow_q.to_str().unwrap();
    let service_s = service.to_str().unwrap();
    let grid_s = grid.to_str().unwrap();

    let tasks: Vec<(&str, Vec<String>)> = vec![
        ("plan-dss", vec!["--scenario".into(), flow_s.into()]),
        ("plan-ns", vec!["--scenario".into(), service_s.into()]),
        (
            "qlearn",
            vec![
                "--scenario".into(),
                flow_q_s.into(),
                "--override".into(),
                "hyper.episodes=500".into(),
                "--override".into(),
                "hyper.trace_every=1000".into(),
            ],
        ),
        (
            "riccati",
            vec![
                "--scenario".into(),
                grid_s.into(),
                "--override".into(),
                "task.kind=riccati".into(),
            ],
        ),
        (
            "pg",
            vec![
                "--scenario".into(),
                grid_s.into(),
                "--override".into(),
                "hyper.iters=5".into(),
            ],
        ),
        (
            "simulate",
            vec![
                "--scenario".into(),
                flow_s.into(),
                "--override".into(),
                "task.kind=simulate".into(),
                "--override".into(),
                "hyper.horizon=20".into(),
            ],
        ),
        (
            "evaluate",
            vec![
                "--scenario".into(),
                flow_s.into(),
                "--override".into(),
                "task.kind=evaluate".into(),
                "--override".into(),
                "hyper.trials=10".into(),
            ],
        ),
    ];

    let root = tempfile::tempdir().unwrap();
    for (task, extra) in &tasks {
        let out_a = root.path().join(format!("{task}-a"));
        let out_b = root.path().join(format!("{task}-b"));
        for out in [&out_a, &out_b] {
            let mut args: Vec<&str> = vec![task, "--seed", "42", "--out", out.to_str().unwrap()];
            args.extend(extra.iter().map(String::as_str));
            run_cli(&args);
        }
        let a = comparable_outputs(&out_a);
        let b = comparable_outputs(&out_b);
        assert!(!a.is_empty(), "task {task} produced no outputs");
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "task {task} produced different file sets"
        );
        for (name, bytes) in &a {
            assert_eq!(
                bytes, &b[name],
                "task {task} artifact {name} differs between identical runs"
            );
        }
    }

    // The bundled example, end to end.
    let out_a = root.path().join("example-a");
    let out_b = root.path().join("example-b");
    for out in [&out_a, &out_b] {
        run_cli(&[
            "example",
            "smart-grid",
            "--override",
            "hyper.iters=3",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let a = comparable_outputs(&out_a);
    let b = comparable_outputs(&out_b);
    assert_eq!(a, b, "smart-grid example artifacts differ between identical runs");

    println!(
        "acceptance 8 reproducibility: PASS ({} tasks plus bundled example, {:.1}s)",
        tasks.len(),
        started.elapsed().as_secs_f64()
    );
}
