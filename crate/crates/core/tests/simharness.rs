use ganmc::estimators::{EstimatorId, Learner};
use ganmc::rng::rng_from_seed;
use ganmc::simharness::*;
use ganmc::tabular::{ldw_schema, load_csv, Dataset};
use ganmc::wgan::{train_two_stage, GeneratorModel, TrainConfig};
use std::sync::OnceLock;

fn ldw() -> Dataset {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ldw_exp.csv");
    load_csv(&path, &ldw_schema()).unwrap()
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        total_steps: 3,
        n_critic: 1,
        batch_size: 64,
        generator_hidden: vec![8],
        critic_hidden: vec![8],
        ..Default::default()
    }
}

fn models() -> &'static (GeneratorModel, GeneratorModel) {
    static M: OnceLock<(GeneratorModel, GeneratorModel)> = OnceLock::new();
    M.get_or_init(|| train_two_stage(&ldw(), &tiny_train(), &tiny_train(), None).unwrap())
}

fn population(n: usize, seed: u64) -> SyntheticPopulation {
    let (gx, gy) = models();
    synthesize_population(gx, gy, n, 185.0 / 445.0, seed).unwrap()
}

fn lm_config(reps: usize, threads: usize) -> MonteCarloConfig {
    MonteCarloConfig {
        reps,
        threads,
        estimators: vec![
            EstimatorId::Diff,
            EstimatorId::Cm(Learner::Lm),
            EstimatorId::Ht(Learner::Lm),
            EstimatorId::Dr(Learner::Lm),
        ],
        ..Default::default()
    }
}

#[test]
fn population_layout_and_truth() {
    let pop = population(1000, 1);
    assert_eq!(pop.n(), 1000);
    assert_eq!(pop.n_treated(), 416);
    assert!(pop.w[..416].iter().all(|&b| b) && pop.w[416..].iter().all(|&b| !b));
    assert!(pop.y0.iter().chain(&pop.y1).all(|&v| v >= 0.0));
    let mut s = 0.0;
    for i in 0..416 {
        s += pop.y1[i] - pop.y0[i];
    }
    assert!((pop.tau_true - s / 416.0).abs() < 1e-12);
    let obs = pop.observed_outcome();
    assert!((0..1000).all(|i| obs[i] == if pop.w[i] { pop.y1[i] } else { pop.y0[i] }));
    let ds = pop.observed_dataset().unwrap();
    assert_eq!(ds.n(), 1000);
    assert_eq!(ds.n_treated(), 416);
}

#[test]
fn truth_at_full_scale_matches_streaming_mean() {
    let pop = population(1_000_000, 2);
    let mut mean = 0.0;
    let mut k = 0.0;
    for i in 0..pop.n() {
        if pop.w[i] {
            k += 1.0;
            mean += (pop.y1[i] - pop.y0[i] - mean) / k;
        }
    }
    assert!((pop.tau_true - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
}

#[test]
fn population_bytes_round_trip_and_hash_is_seeded() {
    let pop = population(500, 3);
    let mut buf = Vec::new();
    write_population(&pop, &mut buf).unwrap();
    assert_eq!(&buf[..8], POPULATION_MAGIC);
    let back = read_population(buf.as_slice()).unwrap();
    assert_eq!(back, pop);
    assert_eq!(back.hash(), pop.hash());
    assert_eq!(population(500, 3).hash(), pop.hash());
    assert_ne!(population(500, 4).hash(), pop.hash());
    let mut bad = buf.clone();
    let last = bad.len() - 1;
    bad[last] ^= 0xff;
    assert!(read_population(bad.as_slice()).is_err());
    assert!(read_population(&buf[..buf.len() / 2]).is_err());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pop.bin");
    save_population(&pop, &p).unwrap();
    assert_eq!(load_population(&p).unwrap(), pop);
}

#[test]
fn stratified_draws_keep_the_treated_share() {
    let pop = population(2000, 5);
    let mut rng = rng_from_seed(1);
    for _ in 0..20 {
        let idx = draw_indices(&pop.w, 445, Sampling::Stratified, &mut rng).unwrap();
        assert_eq!(idx.len(), 445);
        assert_eq!(idx.iter().filter(|&&i| pop.w[i]).count(), 185);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
    assert!(draw_indices(&pop.w, 2001, Sampling::Uniform, &mut rng).is_err());
}

#[test]
fn metrics_satisfy_the_rmse_identity() {
    let pop = population(5000, 6);
    let rep = monte_carlo(&pop, 445, &lm_config(40, 1), 9).unwrap();
    assert_eq!(rep.rows.len(), 4);
    for r in &rep.rows {
        assert_eq!(r.successes, 40);
        assert!((r.rmse.powi(2) - r.bias.powi(2) - r.sdev.powi(2)).abs() < 1e-9 * (1.0 + r.rmse.powi(2)));
        assert!((0.0..=1.0).contains(&r.coverage));
        let d: Vec<f64> = rep.draws[0].iter().flatten().map(|p| p.0).collect();
        assert_eq!(d.len(), 40);
    }
    let diff = rep.row("DIFF").unwrap();
    let est: Vec<f64> = rep.draws[0].iter().map(|p| p.unwrap().0).collect();
    let bias = est.iter().sum::<f64>() / 40.0 - rep.tau_true;
    assert!((diff.bias - bias).abs() < 1e-12);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let pop = population(3000, 7);
    let a = monte_carlo(&pop, 300, &lm_config(12, 1), 4).unwrap();
    let b = monte_carlo(&pop, 300, &lm_config(12, 3), 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.draws, b.draws);
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let c = monte_carlo(&pop, 300, &lm_config(12, 1), 5).unwrap();
    assert_ne!(a.draws, c.draws);
}

#[test]
fn ten_row_population_smoke() {
    let pop = population(10, 8);
    let cfg = MonteCarloConfig {
        reps: 5,
        estimators: vec![EstimatorId::Diff],
        ..Default::default()
    };
    let rep = monte_carlo(&pop, 10, &cfg, 1).unwrap();
    let r = rep.row("DIFF").unwrap();
    assert_eq!(r.successes, 5);
    assert!(r.rmse.is_finite());
    match monte_carlo(&pop, 11, &cfg, 1) {
        Err(_) => {}
        Ok(over) => assert_eq!(over.rows[0].failures, 5),
    }
}

#[test]
fn invalid_settings_are_all_listed() {
    let cfg = MonteCarloConfig {
        reps: 1,
        estimators: vec![],
        n: Some(0),
        ..Default::default()
    };
    assert_eq!(cfg.validate().len(), 3);
    let pop = population(100, 9);
    assert!(matches!(monte_carlo(&pop, 10, &cfg, 0), Err(ganmc::Error::Config(_))));
}

#[test]
fn subsampling_keeps_arm_proportions() {
    let ds = ldw();
    let sub = subsample_rows(&ds, 0.5, &mut rng_from_seed(2)).unwrap();
    assert_eq!(sub.n_treated(), 93);
    assert_eq!(sub.n_control(), 130);
    assert_eq!(subsample_rows(&ds, 1.0, &mut rng_from_seed(2)).unwrap(), ds);
    assert!(subsample_rows(&ds, 0.0, &mut rng_from_seed(2)).is_err());
}

fn tiny_pipeline() -> PipelineConfig {
    PipelineConfig {
        train_x: tiny_train(),
        train_y: tiny_train(),
        population_size: 2000,
        simulate: MonteCarloConfig {
            n: Some(200),
            ..lm_config(5, 1)
        },
        ..Default::default()
    }
}

#[test]
fn pipeline_is_reproducible() {
    let ds = ldw();
    let a = run_pipeline(&ds, 200, &tiny_pipeline(), 11).unwrap();
    let b = run_pipeline(&ds, 200, &tiny_pipeline(), 11).unwrap();
    assert_eq!(a, b);
    let c = run_pipeline(&ds, 200, &tiny_pipeline(), 12).unwrap();
    assert_ne!(a.population_hash, c.population_hash);
}

#[test]
fn robustness_runs_produce_summaries() {
    let ds = ldw();
    let cfg = tiny_pipeline();
    let study = robustness_subsample(&ds, 2, 0.8, &cfg, 3).unwrap();
    assert_eq!(study.runs.len(), 2);
    assert_eq!(study.summary.len(), 4 * 4);
    assert!(study.summary.iter().all(|s| s.runs == 2 && !s.degenerate));
    let one = robustness_subsample(&ds, 1, 0.8, &cfg, 3).unwrap();
    assert!(one.summary.iter().all(|s| s.degenerate && s.sd == 0.0));

    let archs = vec![
        Architecture {
            name: "a".into(),
            generator_hidden: vec![4],
            critic_hidden: vec![4],
        },
        Architecture {
            name: "b".into(),
            generator_hidden: vec![6, 3],
            critic_hidden: vec![3, 6],
        },
    ];
    let table = robustness_architecture(&ds, &archs, &cfg, 3).unwrap();
    assert_eq!(table.columns, vec!["a".to_string(), "b".to_string()]);
    assert!(table.value(1, "DIFF", "rmse").unwrap().is_finite());
    let sizes = robustness_training_size(&ds, &[0.5, 1.0], &cfg, 3).unwrap();
    assert_eq!(sizes.columns.len(), 2);
    let mut out = Vec::new();
    sizes.write_csv(&cfg.simulate.estimators, &mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().contains("DR-LM"));
    assert!(Architecture::preset("alt1").is_ok());
    assert!(Architecture::preset("nope").is_err());
}
