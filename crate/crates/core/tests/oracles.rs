mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chatgate::classifiers::{grid_search_svm, predict_linear, train_svm_with, SvmData, SvmParams};
use chatgate::corpus::{synth_with_truth, Corpus, Label, SynthSpec};
use chatgate::eval::{
    apply_threshold, compute_metrics, run_experiment, select_threshold, ExperimentConfig, LearningCurveConfig, Method, Resources,
};
use chatgate::features::{build_feature_space, featurize, ExternalFeatures, FeatureConfig, SparseVector};

/// P(Bin(n, p) ≥ k) by summing the mass function.
fn binomial_tail(n: u32, p: f64, k: u32) -> f64 {
    let choose = |n: u32, r: u32| (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (k..=n).map(|r| choose(n, r) * p.powi(r as i32) * (1.0 - p).powi((n - r) as i32)).sum()
}

#[test]
fn binomial_oracle_sanity() {
    assert!((binomial_tail(7, 0.1, 4) - 0.002728).abs() < 1e-6);
    assert!((binomial_tail(7, 0.5, 4) - 0.5).abs() < 1e-12);
}

#[test]
fn synth_flip_rate_matches_binomial_tail() {
    for (noise, n) in [(0.3, 4000), (0.1, 20000)] {
        let (corpus, truth) = synth_with_truth(&SynthSpec::new(n / 2, n / 2, noise, 13)).unwrap();
        let flips = corpus.utterances().iter().zip(&truth).filter(|(u, t)| u.label != **t).count() as f64;
        let p = binomial_tail(7, noise, 4);
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((flips - n as f64 * p).abs() < 4.0 * sd, "noise {noise}: {flips} flips, expected {}", n as f64 * p);
    }
}

#[test]
fn threshold_is_dev_optimal_against_fine_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.gen_range(5..60);
        let gold: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.4) { Label::Chat } else { Label::NonChat }).collect();
        let scores: Vec<f64> = gold
            .iter()
            .map(|l| rng.gen_range(-3.0..-1.0) + if l.is_chat() { 0.7 } else { 0.0 })
            .collect();
        let choice = select_threshold(&scores, &gold).unwrap();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5;
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5;
        let f1 = |t: f64| compute_metrics(&apply_threshold(&scores, t), &gold).unwrap().f1.unwrap_or(0.0);
        let grid_best = (0..10_000)
            .map(|i| f1(lo + (hi - lo) * i as f64 / 9999.0))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(choice.dev_f1 >= grid_best - 1e-9, "{} < {grid_best}", choice.dev_f1);
        assert!((f1(choice.threshold) - choice.dev_f1).abs() < 1e-12);
    }
}

fn featurized(corpus: &Corpus, idx: &[usize], space: &chatgate::features::FeatureSpace) -> (Vec<SparseVector>, Vec<Label>) {
    let u = corpus.utterances();
    let x = idx
        .iter()
        .map(|&i| featurize(&u[i].text, space, None, ExternalFeatures::default()).unwrap())
        .collect();
    (x, idx.iter().map(|&i| u[i].label).collect())
}

#[test]
fn grid_search_equals_exhaustive_rerun() {
    let (corpus, _) = synth_with_truth(&SynthSpec::new(150, 250, 0.15, 8)).unwrap();
    let train_idx: Vec<usize> = (0..300).collect();
    let dev_idx: Vec<usize> = (300..400).collect();
    let texts: Vec<&str> = train_idx.iter().map(|&i| corpus.utterances()[i].text.as_str()).collect();
    let space = build_feature_space(
        &texts,
        &FeatureConfig {
            embedding_dim: 0,
            ..FeatureConfig::default()
        },
    )
    .unwrap();
    let (tx, ty) = featurized(&corpus, &train_idx, &space);
    let (dx, dy) = featurized(&corpus, &dev_idx, &space);
    let grid: Vec<f64> = (-6..=4).map(|e| 2f64.powi(e)).collect();
    let base = SvmParams::default();
    let out = grid_search_svm(SvmData { x: &tx, y: &ty }, SvmData { x: &dx, y: &dy }, space.total_dim(), &grid, &base).unwrap();

    let mut best = (f64::NEG_INFINITY, 0.0);
    for &c in &grid {
        let (m, _) = train_svm_with(&tx, &ty, space.total_dim(), &SvmParams { c, ..base }).unwrap();
        let pred: Vec<Label> = dx.iter().map(|x| predict_linear(&m, x).unwrap().0).collect();
        let f1 = compute_metrics(&pred, &dy).unwrap().f1.unwrap_or(0.0);
        if f1 > best.0 {
            best = (f1, c);
        }
    }
    assert_eq!(out.dev_f1, best.0);
    assert_eq!(out.config, best.1);
}

#[test]
fn two_fold_report_accounting() {
    let (corpus, _) = synth_with_truth(&SynthSpec::new(20, 30, 0.2, 2)).unwrap();
    let config = ExperimentConfig {
        k: 2,
        methods: vec![Method::Majority, Method::Svm {
            embeddings: false,
            externals: false,
        }],
        ..ExperimentConfig::default()
    };
    let r = run_experiment(&corpus, &Resources::default(), &config).unwrap();
    for m in &r.methods {
        assert_eq!(m.folds.len(), 2);
        assert_eq!(m.folds.iter().map(|f| f.test_size).sum::<usize>(), corpus.len());
        assert_eq!(m.predictions.len(), corpus.len());
        let votes: usize = m.vote_breakdown.as_ref().unwrap().iter().map(|b| b.support).sum();
        let lens: usize = m.length_breakdown.iter().map(|b| b.support).sum();
        assert_eq!((votes, lens), (corpus.len(), corpus.len()));
        let mut ids: Vec<&str> = m.predictions.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), corpus.len());
    }
    assert_eq!(r.to_json().unwrap(), run_experiment(&corpus, &Resources::default(), &config).unwrap().to_json().unwrap());
}

#[test]
fn full_fraction_matches_standard_cv() {
    let (corpus, _) = synth_with_truth(&SynthSpec::new(60, 90, 0.1, 5)).unwrap();
    let method = Method::Svm {
        embeddings: false,
        externals: false,
    };
    let mut config = ExperimentConfig {
        k: 5,
        methods: vec![method],
        learning_curve: Some(LearningCurveConfig {
            method,
            fractions: vec![1.0],
        }),
        ..ExperimentConfig::default()
    };
    config.train.c_grid = vec![0.125, 1.0, 8.0];
    let r = run_experiment(&corpus, &Resources::default(), &config).unwrap();
    let lc = r.learning_curve.unwrap();
    assert_eq!(lc.points[0].mean_accuracy.unwrap(), r.methods[0].macro_mean.accuracy);
}

#[test]
fn externals_do_not_hurt_short_utterances() {
    let resources = common::synthetic_resources(2000, 16, 3);
    let (corpus, _) = synth_with_truth(&SynthSpec::new(320, 680, 0.1, 61)).unwrap();
    let mut config = ExperimentConfig {
        seed: 2,
        methods: vec![
            Method::Svm {
                embeddings: true,
                externals: false,
            },
            Method::Svm {
                embeddings: true,
                externals: true,
            },
        ],
        ..ExperimentConfig::default()
    };
    config.train.features.embedding_dim = 16;
    let r = run_experiment(&corpus, &resources, &config).unwrap();
    let short = |m: usize| {
        let row = &r.methods[m].length_breakdown[0];
        assert_eq!(row.key, "1-5");
        row.metrics.unwrap().accuracy
    };
    assert!(r.methods[0].length_breakdown[0].support > 0);
    assert!(short(1) >= short(0), "short-bin accuracy {} with externals < {} without", short(1), short(0));
}
