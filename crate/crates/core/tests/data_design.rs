use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stratadj::data::{read_csv, write_csv};
use stratadj::datagen::{
    outcome_mean, stratum_probs, true_ate, Generator, ModelSpec, TruthMethod, MODEL1_TAU, SIGMA0, SIGMA1,
};
use stratadj::randomize::{randomize, stratified_block};
use stratadj::{CsvSchema, RandomizerConfig, RandomizerKind, StratumStats, TrialDataset};

fn sample(model: u8, n: usize, seed: u64) -> stratadj::SyntheticSample {
    Generator::new(ModelSpec::new(model, n).unwrap()).unwrap().generate(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn assigned(model: u8, n: usize, seed: u64) -> TrialDataset {
    let s = sample(model, n, seed);
    let cfg = RandomizerConfig::new(RandomizerKind::StratifiedBlock, 0.5);
    let arms = randomize(&cfg, &s.strata, &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
    s.assign(arms, 0.5).unwrap()
}

#[test]
fn csv_round_trip_preserves_every_value() {
    let ds = assigned(1, 120, 1);
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf, true).unwrap();
    let schema = CsvSchema { pi_target: Some(0.5), potential: Some(("y0".into(), "y1".into())), ..CsvSchema::default() };
    let back = read_csv(buf.as_slice(), &schema).unwrap();
    assert_eq!(back.y, ds.y);
    assert_eq!(back.arms, ds.arms);
    assert_eq!(back.strata, ds.strata);
    assert_eq!(back.x, ds.x);
    assert_eq!(back.potential, ds.potential);
    assert_eq!(back.meta.covariate_names, vec!["x1", "x2", "x3", "x4"]);
}

#[test]
fn csv_labels_are_densified_and_bad_rows_rejected() {
    let text = "y,a,site,age\n1,1,north,30\n2,0,north,40\n3,1,south,50\n4,0,south,60\n";
    let schema = CsvSchema { stratum: "site".into(), ..CsvSchema::default() };
    let ds = read_csv(text.as_bytes(), &schema).unwrap();
    assert_eq!(ds.strata, vec![0, 0, 1, 1]);
    assert_eq!(ds.meta.stratum_labels, vec!["north", "south"]);
    assert_eq!(ds.pi_target, 0.5);

    let numeric = "y,a,stratum\n1,1,10\n2,0,2\n3,1,10\n4,0,2\n";
    let ds = read_csv(numeric.as_bytes(), &CsvSchema::default()).unwrap();
    assert_eq!(ds.meta.stratum_labels, vec!["2", "10"]);
    assert_eq!(ds.strata, vec![1, 0, 1, 0]);

    let non_binary = "y,a,stratum\n1,2,1\n";
    let err = read_csv(non_binary.as_bytes(), &CsvSchema::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("non-binary"));
    let missing = "y,arm,stratum\n1,1,1\n";
    assert!(read_csv(missing.as_bytes(), &CsvSchema::default()).unwrap_err().to_string().contains("missing column 'a'"));
    let text_cov = "y,a,stratum,x\n1,1,1,abc\n";
    assert!(read_csv(text_cov.as_bytes(), &CsvSchema::default()).is_err());
}

#[test]
fn generated_datasets_validate_for_every_model() {
    for model in 1..=8u8 {
        for n in [50, 1000] {
            let seeds = if model >= 5 && n == 1000 { 100 } else { 150 };
            let gen = Generator::new(ModelSpec::new(model, n).unwrap()).unwrap();
            for seed in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = gen.generate(&mut rng);
                let arms: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
                let ds = s.assign(arms, 0.5).unwrap();
                let v = ds.validate();
                // Tiny samples may miss a stratum altogether; nothing else may fail.
                assert!(v.iter().all(|v| v.invariant == "nonempty strata"), "model {model}, n {n}: {:?}", v);
                if n == 1000 {
                    assert!(v.is_empty());
                }
            }
        }
    }
}

#[test]
fn stratum_counts_are_permutation_invariant() {
    let ds = assigned(3, 500, 2);
    let st = ds.stats();
    assert_eq!(st.cells.iter().map(|c| c.n).sum::<usize>(), 500);
    assert!(st.cells.iter().all(|c| c.n == c.n1 + c.n0));
    let mut idx: Vec<usize> = (0..500).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let perm = ds.subset(&idx);
    assert_eq!(perm.stats(), st);
    assert_eq!(StratumStats::compute(&perm.strata, &perm.arms, perm.n_strata), st);
}

#[test]
fn unequal_blocks_treat_four_of_six() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let strata: Vec<usize> = (0..1000).map(|_| rng.random_range(0..2)).collect();
    let cfg = RandomizerConfig::new(RandomizerKind::StratifiedBlock, 2.0 / 3.0);
    let arms = stratified_block(&strata, &cfg, &mut rng).unwrap();
    for k in 0..2 {
        let members: Vec<usize> = (0..1000).filter(|&i| strata[i] == k).collect();
        let chunks: Vec<&[usize]> = members.chunks(6).collect();
        for chunk in &chunks {
            let treated = chunk.iter().filter(|&&i| arms[i] == 1).count();
            if chunk.len() == 6 {
                assert_eq!(treated, 4);
            } else {
                assert_eq!(treated, (chunk.len() as f64 * 2.0 / 3.0 + 0.5).floor() as usize);
            }
        }
        let complete = members.len() / 6;
        let treated_complete = members[..complete * 6].iter().filter(|&&i| arms[i] == 1).count();
        assert_eq!(treated_complete, complete * 4);
    }
}

#[test]
fn realized_stratum_shares_approach_target() {
    let cases = [
        (RandomizerKind::Simple, 0.5),
        (RandomizerKind::StratifiedBlock, 0.5),
        (RandomizerKind::StratifiedBlock, 2.0 / 3.0),
        (RandomizerKind::EfronBiasedCoin, 0.5),
        (RandomizerKind::Minimization, 0.5),
        (RandomizerKind::Minimization, 2.0 / 3.0),
    ];
    for (kind, pi) in cases {
        let cfg = RandomizerConfig::new(kind, pi);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Two strata, as in Models 3 and 4.
            let strata: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
            let arms = randomize(&cfg, &strata, &mut rng).unwrap();
            let st = StratumStats::compute(&strata, &arms, 2);
            let worst = st.cells.iter().map(|c| (c.pi - pi).abs()).fold(0.0, f64::max);
            assert!(worst < 0.03, "{kind:?} pi={pi} seed {seed}: {worst}");
        }
    }
}

#[test]
fn assignment_is_reproducible() {
    let a = sample(2, 300, 5);
    for kind in [RandomizerKind::StratifiedBlock, RandomizerKind::EfronBiasedCoin, RandomizerKind::Minimization] {
        let cfg = RandomizerConfig::new(kind, 0.5);
        let first = randomize(&cfg, &a.strata, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let again = randomize(&cfg, &a.strata, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(first, again);
        let other = randomize(&cfg, &a.strata, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(first, other);
    }
}

#[test]
fn noise_variances_and_stratum_frequencies() {
    let n = 100_000;
    for model in 1..=4u8 {
        let s = sample(model, n, 7 + u64::from(model));
        for (arm, sigma, ys) in [(0u8, SIGMA0, &s.y0), (1u8, SIGMA1, &s.y1)] {
            let resid: Vec<f64> =
                (0..n).map(|i| ys[i] - outcome_mean(model, arm, s.x.row(i), s.strata[i])).collect();
            let mean = resid.iter().sum::<f64>() / n as f64;
            let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "model {model} arm {arm}: {var}");
        }
        for (k, p) in stratum_probs(model).iter().enumerate() {
            let count = s.strata.iter().filter(|&&v| v == k).count() as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() < 4.0 * sd, "model {model} stratum {k}: {count}");
        }
    }
}

#[test]
fn covariate_moments() {
    let n = 100_000;
    let s = sample(1, n, 11);
    let col_mean = |j: usize| s.x.column(j).iter().sum::<f64>() / n as f64;
    // Beta(3, 4) mean 3/7; uniform(-2, 2) mean 0; Rademacher mean 0; {3, 5} with P(3) = 0.6.
    for (j, mu, sd) in [(0, 3.0 / 7.0, (12.0f64 / 392.0).sqrt()), (1, 0.0, (16.0f64 / 12.0).sqrt()), (2, 0.0, 1.0), (3, 3.8, 0.96f64.sqrt())] {
        assert!((col_mean(j) - mu).abs() < 4.0 * sd / (n as f64).sqrt(), "column {j}: {}", col_mean(j));
    }
    let s7 = Generator::new(ModelSpec::with_dim(7, 20_000, 12).unwrap()).unwrap().generate(&mut ChaCha8Rng::seed_from_u64(12));
    // Toeplitz block: corr(x_{j}, x_{j+1}) = 0.5 among the extra covariates.
    let (a, b) = (s7.x.column(4), s7.x.column(5));
    let corr = a.iter().zip(&b).map(|(u, v)| u * v).sum::<f64>() / 20_000.0;
    assert!((corr - 0.5).abs() < 0.04, "{corr}");
    let s5 = Generator::new(ModelSpec::with_dim(5, 20_000, 12).unwrap()).unwrap().generate(&mut ChaCha8Rng::seed_from_u64(13));
    let (a, b) = (s5.x.column(4), s5.x.column(9));
    let corr = a.iter().zip(&b).map(|(u, v)| u * v).sum::<f64>() / 20_000.0;
    assert!((corr - 0.2).abs() < 0.04, "{corr}");
}

#[test]
fn generation_is_deterministic_in_the_seed() {
    for model in [1u8, 4, 6, 7] {
        assert_eq!(sample(model, 200, 21), sample(model, 200, 21));
        assert_ne!(sample(model, 200, 21).y0, sample(model, 200, 22).y0);
    }
}

#[test]
fn interaction_models_multiply_a_third_of_the_extra_covariates() {
    for model in [6u8, 8] {
        let p = 30;
        let spec = ModelSpec::with_dim(model, 50, p).unwrap();
        let s = Generator::new(spec).unwrap().generate(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s.interactions.len(), p / 3);
        let base = spec.base_dim();
        assert!(s.interactions.iter().all(|&(c, w)| c >= base && c < p && w <= 1));
        let ds = s.assign(vec![0; 50], 0.5).unwrap();
        assert!(ds.meta.notes.iter().any(|n| n.starts_with("interactions:")));
        let again = Generator::new(spec).unwrap().generate(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s.interactions, again.interactions);
    }
    assert!(sample(5, 50, 1).interactions.is_empty());
}

#[test]
fn model_one_truth_matches_moment_arithmetic() {
    // E[g1 - g0] = 3 + 25 E[X1] + 45 E[X2] - 65 E[X3] - 40 E[X4].
    let expected = 3.0 + 25.0 * (3.0 / 7.0) + 45.0 * 0.0 - 65.0 * 0.0 - 40.0 * 3.8;
    assert!((MODEL1_TAU - expected).abs() < 1e-12);
    assert!((expected + 138.2857).abs() < 1e-4);
    let t = true_ate(ModelSpec::new(5, 10).unwrap(), TruthMethod::ClosedForm).unwrap();
    assert_eq!(t.tau, MODEL1_TAU);
    assert!(true_ate(ModelSpec::new(2, 10).unwrap(), TruthMethod::ClosedForm).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(ModelSpec::new(0, 10).is_err());
    assert!(ModelSpec::new(9, 10).is_err());
    assert!(ModelSpec::with_dim(2, 10, 5).is_err());
    assert!(ModelSpec::with_dim(7, 10, 3).is_err());
    assert!(RandomizerConfig::new(RandomizerKind::StratifiedBlock, 0.4).validate().is_err());
    assert!(RandomizerConfig::new(RandomizerKind::EfronBiasedCoin, 2.0 / 3.0).validate().is_err());
}

proptest! {
    #[test]
    fn block_randomization_is_balanced_within_complete_blocks(
        strata in prop::collection::vec(0usize..3, 1..200),
        seed in any::<u64>(),
    ) {
        let cfg = RandomizerConfig::new(RandomizerKind::StratifiedBlock, 0.5);
        let arms = stratified_block(&strata, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for k in 0..3 {
            let members: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == k).collect();
            for chunk in members.chunks(6).filter(|c| c.len() == 6) {
                prop_assert_eq!(chunk.iter().filter(|&&i| arms[i] == 1).count(), 3);
            }
        }
    }
}
