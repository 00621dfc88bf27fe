//! The twelve acceptance criteria, one PASS/FAIL line each. Runs as a plain
//! binary (no libtest harness) so the lines always reach the test log.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chatgate::classifiers::{
    fit_classifier, train_svm_with, ClassifierKind, ClassifierSpec, CnnModel, CnnParams, Example, LinearModel, SvmParams,
    TrainOptions,
};
use chatgate::corpus::{synth_corpus, Label, MarkovSource, SynthSpec};
use chatgate::eval::{
    compute_metrics, kfold_splits, majority_baseline, run_experiment, ExperimentConfig, LearningCurveConfig, Method, Resources,
};
use chatgate::features::{ExternalFeatures, FeatureConfig};
use chatgate::lm::{
    lm_score, next_char_dist, train_gru_lm, train_ngram_lm, CharLm, CharVocab, GruLm, GruParams, LanguageModel,
};
use chatgate::linalg::Mat;

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, || format!("took {:.1}s, limit {:.0}s", t.as_secs_f64(), limit.as_secs_f64()))
}

fn gru_gradients() -> Outcome {
    let start = Instant::now();
    // 19 characters plus UNK
    let vocab = CharVocab::new("abcdefghijklmnopqrs".chars().collect());
    let v = vocab.size();
    let lm = GruLm::random(vocab, 8, 12, 42);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch: Vec<Vec<u32>> = (0..3)
        .map(|_| (0..rng.gen_range(3..7)).map(|_| rng.gen_range(0..v as u32)).collect())
        .collect();
    let (_, grad) = lm.batch_loss_and_grad(&batch);
    let mut worst: f64 = 0.0;
    for (k, name) in GruParams::NAMES.iter().enumerate() {
        let fd = finite_diff(&lm, k, 1e-5, |m: &mut GruLm| m.params.tensors_mut().into_iter().collect(), |m| m.batch_loss(&batch));
        let e = rel_error(grad.tensors()[k], &fd);
        check(e < 1e-4, || format!("tensor {name}: relative error {e:.2e}"))?;
        worst = worst.max(e);
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("V={v}, E=8, H=12; worst relative error {worst:.1e}"))
}

fn cnn_gradients() -> Outcome {
    let start = Instant::now();
    let (dim, maps, regions) = (4, 2, [2usize, 3]);
    let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let mut p = CnnParams::zeros(words.len() + 2, dim, maps, &regions);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (k, t) in p.tensors_mut().into_iter().enumerate() {
        let skip = if k == 0 { dim } else { 0 };
        t[skip..].iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
    }
    let model = CnnModel::new(words, regions.to_vec(), maps, 0.5, p).unwrap();
    let cases: [(&[u32], [f64; 3], Label); 3] = [
        (&[2, 5, 3, 7], [0.3, -1.2, 1.0], Label::Chat),
        (&[4, 6], [-0.5, 0.4, 0.0], Label::NonChat),
        (&[7, 2, 2, 5, 1, 3], [1.1, 0.2, 1.0], Label::Chat),
    ];
    let mut worst: f64 = 0.0;
    for (ids, ext, label) in cases {
        let (_, grad) = model.loss_and_grad(ids, ext, label);
        let n = grad.tensors().len();
        for k in 0..n {
            let mut fd = finite_diff(&model, k, 1e-6, |m: &mut CnnModel| m.params.tensors_mut(), |m| m.loss(ids, ext, label));
            if k == 0 {
                // the PAD row is fixed, not a parameter
                fd[..dim].iter_mut().for_each(|v| *v = 0.0);
            }
            let e = rel_error(grad.tensors()[k], &fd);
            check(e < 1e-4, || format!("tensor {k}: relative error {e:.2e}"))?;
            worst = worst.max(e);
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("dim=4, maps=2, regions {{2,3}}; worst relative error {worst:.1e}"))
}

fn lm_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet: Vec<char> = "abcdefgh xyz".chars().collect();
    let mut worst_sum: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    for i in 0..1000 {
        let n_chars = rng.gen_range(2..alphabet.len());
        let vocab = CharVocab::new(alphabet[..n_chars].to_vec());
        let len = rng.gen_range(1..12);
        let text: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        let model = if i % 2 == 0 {
            LanguageModel::Gru(GruLm::random(vocab, rng.gen_range(2..6), rng.gen_range(2..8), i))
        } else {
            let lines: Vec<String> = (0..5)
                .map(|_| (0..8).map(|_| alphabet[rng.gen_range(0..n_chars)]).collect())
                .collect();
            LanguageModel::Ngram(train_ngram_lm(&lines, rng.gen_range(1..5), None, 1).unwrap())
        };
        let ids = model.vocab().encode(&text);
        let mut logs = Vec::with_capacity(ids.len());
        for t in 0..ids.len() {
            let p = next_char_dist(&ids[..t], &model);
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
            logs.push(p[ids[t] as usize].ln());
        }
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let s = lm_score(&text, &model).map_err(|e| e.to_string())?;
        worst_mean = worst_mean.max((s - mean).abs());
    }
    check(worst_sum <= 1e-6, || format!("distribution off by {worst_sum:.2e}"))?;
    check(worst_mean <= 1e-10, || format!("score differs from mean log-prob by {worst_mean:.2e}"))?;
    Ok(format!("1000 pairs; max |Σp − 1| = {worst_sum:.1e}, max score gap {worst_mean:.1e}"))
}

fn uniform_score() -> Outcome {
    let vocab = CharVocab::new(vec!['a', 'b', 'c']);
    let v = vocab.size();
    let mut lm = GruLm::random(vocab, 5, 7, 3);
    lm.params.out = Mat::zeros(v, 7);
    lm.params.out_bias = vec![0.0; v];
    let s = lm_score("abcabca", &lm).map_err(|e| e.to_string())?;
    check(v == 4, || format!("V = {v}"))?;
    check((s - -1.386294).abs() <= 1e-6 && (s + 4f64.ln()).abs() <= 1e-9, || format!("score {s}"))?;
    Ok(format!("V=4, lm_score = {s:.9}"))
}

fn svm_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let dense: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut y: Vec<Label> = (0..10).map(|_| if rng.gen_bool(0.5) { Label::Chat } else { Label::NonChat }).collect();
        y[0] = Label::Chat;
        y[1] = Label::NonChat;
        let c = 2f64.powi(rng.gen_range(-3..4));
        let x = dense_to_sparse(&dense);
        let params = SvmParams {
            c,
            seed: trial,
            ..SvmParams::default()
        };
        let (m, trace) = train_svm_with(&x, &y, 5, &params).map_err(|e| e.to_string())?;
        check(trace.dual_objective.windows(2).all(|w| w[1] >= w[0]), || format!("trial {trial}: dual decreased"))?;
        let ys: Vec<f64> = y.iter().map(|l| l.sign()).collect();
        let (_, reference) = svm_projected_gradient(&dense, &ys, c, 200_000);
        let mut w = m.weights.clone();
        w.push(m.bias);
        let aug: Vec<Vec<f64>> = dense.iter().map(|r| r.iter().copied().chain([1.0]).collect()).collect();
        let ours = primal(&aug, &ys, &w, c);
        let rel = (ours - reference).abs() / reference.abs();
        check(rel <= 1e-4, || format!("trial {trial}: primal {ours} vs reference {reference}"))?;
        worst = worst.max(rel);
    }
    // separable toy set with default stopping rule
    let toy = dense_to_sparse(&[vec![2.0, 1.0], vec![1.0, 3.0], vec![-1.0, -2.0], vec![-3.0, -0.5]]);
    let ty = [Label::Chat, Label::Chat, Label::NonChat, Label::NonChat];
    let (m, _): (LinearModel, _) = train_svm_with(&toy, &ty, 2, &SvmParams::default()).map_err(|e| e.to_string())?;
    let acc = toy
        .iter()
        .zip(&ty)
        .filter(|(x, l)| chatgate::classifiers::predict_linear(&m, x).unwrap().0 == **l)
        .count();
    check(acc == 4, || format!("toy accuracy {acc}/4"))?;
    Ok(format!("10 problems, worst primal gap {worst:.1e}; toy set 4/4"))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..100 {
        let n = rng.gen_range(1..=1000);
        let draw = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.4) { Label::Chat } else { Label::NonChat };
        let pred: Vec<Label> = (0..n).map(|_| draw(&mut rng)).collect();
        let gold: Vec<Label> = (0..n).map(|_| draw(&mut rng)).collect();
        let m = compute_metrics(&pred, &gold).map_err(|e| e.to_string())?;
        let (tp, fp, fn_, tn) = brute_confusion(&pred, &gold);
        let c = m.confusion;
        check((c.tp, c.fp, c.fn_, c.tn) == (tp, fp, fn_, tn), || format!("vector {i}: confusion mismatch"))?;
        let acc = 100.0 * (tp + tn) as f64 / n as f64;
        check((m.accuracy - acc).abs() < 1e-9, || format!("vector {i}: accuracy"))?;
        if tp + fp > 0 && tp + fn_ > 0 && tp > 0 {
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fn_) as f64;
            check((m.f1.unwrap() - 200.0 * p * r / (p + r)).abs() < 1e-9, || format!("vector {i}: f1"))?;
        }
    }
    let mut gold = vec![Label::NonChat; 10327];
    gold.extend(vec![Label::Chat; 4833]);
    let m = majority_baseline(&gold).map_err(|e| e.to_string())?;
    check((m.accuracy - 68.12).abs() <= 0.01, || format!("majority accuracy {}", m.accuracy))?;
    check(m.precision.is_none() && m.f1.is_none(), || "majority precision/F1 should be N/A".into())?;
    Ok(format!("100 vectors agree; Majority accuracy {:.2}, P/F1 N/A", m.accuracy))
}

fn fold_hygiene() -> Outcome {
    let corpus = synth_corpus(&SynthSpec::new(500, 1000, 0.1, 3)).map_err(|e| e.to_string())?;
    let n = corpus.len();
    let splits = kfold_splits(n, 10, 17).map_err(|e| e.to_string())?;
    let mut seen = vec![0; n];
    for s in &splits {
        s.test.iter().for_each(|&i| seen[i] += 1);
        check(s.train.len().abs_diff(1200) <= 1 && s.dev.len().abs_diff(150) <= 1 && s.test.len().abs_diff(150) <= 1, || {
            format!("fold {} sizes {}/{}/{}", s.fold, s.train.len(), s.dev.len(), s.test.len())
        })?;
        let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
        all.sort_unstable();
        all.dedup();
        check(all.len() == n, || format!("fold {} sets overlap or miss items", s.fold))?;
    }
    check(seen.iter().all(|&c| c == 1), || "test sets do not partition the corpus".into())?;
    Ok(format!("{n} utterances, 10 folds of 1200/150/150"))
}

fn lm_separation() -> Outcome {
    let start = Instant::now();
    let chat = MarkovSource::chat_profile().generate_lines(2200, 31);
    let non = MarkovSource::nonchat_profile().generate_lines(2200, 32);
    let (chat_train, chat_held) = chat.split_at(2000);
    let (non_train, non_held) = non.split_at(2000);
    let cfg = small_gru_config(5);
    let (chat_lm, _) = train_gru_lm(chat_train, &cfg).map_err(|e| e.to_string())?;
    let (non_lm, _) = train_gru_lm(non_train, &cfg).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut total = 0;
    for (held, own_is_chat) in [(chat_held, true), (non_held, false)] {
        for line in held {
            let a = lm_score(line, &chat_lm).map_err(|e| e.to_string())?;
            let b = lm_score(line, &non_lm).map_err(|e| e.to_string())?;
            if (own_is_chat && a > b) || (!own_is_chat && b > a) {
                wins += 1;
            }
            total += 1;
        }
    }
    let rate = 100.0 * wins as f64 / total as f64;
    check(rate >= 90.0, || format!("only {rate:.1}% prefer their own source"))?;
    within(start, Duration::from_secs(120))?;
    Ok(format!("GRU E=24 H=32; {rate:.1}% of {total} held-out lines prefer their own-source LM"))
}

/// Corpus with a Chat share of about 32%.
fn direction_corpus(n: usize, seed: u64) -> SynthSpec {
    let n_chat = n * 32 / 100;
    SynthSpec::new(n_chat, n - n_chat, 0.1, seed)
}

fn svm_options(emb_dim: usize) -> TrainOptions {
    TrainOptions {
        features: FeatureConfig {
            embedding_dim: emb_dim,
            ..FeatureConfig::default()
        },
        ..TrainOptions::default()
    }
}

fn end_to_end(resources: &Resources) -> Outcome {
    let start = Instant::now();
    let corpus = synth_corpus(&direction_corpus(2000, 41)).map_err(|e| e.to_string())?;
    let config = ExperimentConfig {
        k: 10,
        seed: 3,
        methods: vec![
            Method::Majority,
            Method::Svm {
                embeddings: true,
                externals: false,
            },
            Method::Svm {
                embeddings: true,
                externals: true,
            },
        ],
        train: svm_options(32),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&corpus, resources, &config).map_err(|e| e.to_string())?;
    let (maj, emb, ext) = (&report.methods[0], &report.methods[1], &report.methods[2]);
    let prior = 100.0 * corpus.n_nonchat() as f64 / corpus.len() as f64;
    let f1_emb = emb.macro_mean.f1.unwrap_or(0.0);
    let f1_ext = ext.macro_mean.f1.unwrap_or(0.0);
    check((maj.macro_mean.accuracy - prior).abs() < 1.0, || {
        format!("Majority accuracy {:.2} vs prior {prior:.2}", maj.macro_mean.accuracy)
    })?;
    check(emb.macro_mean.accuracy >= 85.0, || format!("SVM+emb accuracy {:.2}", emb.macro_mean.accuracy))?;
    check(f1_ext >= f1_emb, || format!("F1 with externals {f1_ext:.2} < without {f1_emb:.2}"))?;
    within(start, Duration::from_secs(600))?;
    Ok(format!(
        "Majority acc {:.2} (prior {prior:.2}); SVM+emb acc {:.2} F1 {f1_emb:.2}; SVM+emb+ext F1 {f1_ext:.2}; {:.0}s",
        maj.macro_mean.accuracy,
        emb.macro_mean.accuracy,
        start.elapsed().as_secs_f64()
    ))
}

fn learning_curve_shape(resources: &Resources) -> Outcome {
    let corpus = synth_corpus(&direction_corpus(2000, 43)).map_err(|e| e.to_string())?;
    let method = Method::Svm {
        embeddings: true,
        externals: false,
    };
    let config = ExperimentConfig {
        seed: 5,
        methods: vec![Method::Majority],
        train: svm_options(32),
        learning_curve: Some(LearningCurveConfig {
            method,
            fractions: vec![0.05, 0.25, 1.0],
        }),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&corpus, resources, &config).map_err(|e| e.to_string())?;
    let lc = report.learning_curve.unwrap();
    let acc = |i: usize| lc.points[i].mean_accuracy.unwrap_or(f64::NAN);
    let (lo, hi) = (acc(0), acc(2));
    check(hi - lo >= 2.0, || format!("accuracy at 1.0 is {hi:.2}, at 0.05 is {lo:.2}"))?;
    Ok(format!("{}: 0.05 → {lo:.2}, 0.25 → {:.2}, 1.0 → {hi:.2}", lc.method, acc(1)))
}

fn vote_breakdown_shape(resources: &Resources) -> Outcome {
    let spec = direction_corpus(2000, 47).with_ambiguity(0.25, 0.35);
    let corpus = synth_corpus(&spec).map_err(|e| e.to_string())?;
    let config = ExperimentConfig {
        seed: 9,
        methods: vec![Method::Svm {
            embeddings: true,
            externals: true,
        }],
        train: svm_options(32),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&corpus, resources, &config).map_err(|e| e.to_string())?;
    let rows = report.methods[0].vote_breakdown.clone().unwrap();
    let accs: Vec<(String, f64)> = rows.iter().map(|r| (r.key.clone(), r.metrics.map_or(f64::NAN, |m| m.accuracy))).collect();
    check(accs.len() == 4, || format!("expected rows for 4..7, got {accs:?}"))?;
    let drops: Vec<f64> = accs.windows(2).map(|w| w[0].1 - w[1].1).filter(|d| *d > 0.0).collect();
    check(drops.len() <= 1 && drops.iter().all(|&d| d <= 0.5), || format!("not monotone: {accs:?}"))?;
    let shown: Vec<String> = accs.iter().map(|(k, a)| format!("{k}: {a:.2}")).collect();
    Ok(format!("SVM+emb+ext accuracy by votes: {}", shown.join(", ")))
}

fn determinism(resources: &Resources) -> Outcome {
    let spec = SynthSpec::new(60, 90, 0.2, 77).with_ambiguity(0.1, 0.3);
    let a = synth_corpus(&spec).map_err(|e| e.to_string())?;
    check(a == synth_corpus(&spec).unwrap(), || "synth differs".into())?;

    let lines = MarkovSource::chat_profile().generate_lines(200, 3);
    let cfg = small_gru_config(4);
    let bytes = || {
        let (g, _) = train_gru_lm(&lines, &cfg).unwrap();
        LanguageModel::Gru(g).to_container(None).unwrap().to_bytes().unwrap()
    };
    check(bytes() == bytes(), || "train-lm (gru) differs".into())?;
    let ng = || {
        LanguageModel::Ngram(train_ngram_lm(&lines, 4, None, 1).unwrap())
            .to_container(None)
            .unwrap()
            .to_bytes()
            .unwrap()
    };
    check(ng() == ng(), || "train-lm (ngram) differs".into())?;

    let ext = resources.externals.as_ref().unwrap();
    let feats: Vec<ExternalFeatures> = a.utterances().iter().map(|u| ext.features(&u.text).unwrap()).collect();
    let ex: Vec<Example> = a
        .utterances()
        .iter()
        .zip(&feats)
        .map(|(u, f)| Example {
            text: &u.text,
            external: *f,
            label: u.label,
        })
        .collect();
    let (train, dev) = ex.split_at(120);
    for kind in [ClassifierKind::Svm, ClassifierKind::Cnn] {
        let spec = ClassifierSpec {
            kind,
            embeddings: true,
            externals: true,
        };
        let mut opts = svm_options(32);
        opts.c_grid = vec![0.25, 1.0, 4.0];
        opts.cnn_grid = vec![chatgate::classifiers::CnnArch {
            n_maps: 4,
            regions: vec![2, 3],
        }];
        opts.cnn.max_epochs = 3;
        let fit = || {
            fit_classifier(spec, train, dev, resources.embeddings.as_ref(), &opts)
                .unwrap()
                .classifier
                .to_container(None)
                .unwrap()
                .to_bytes()
                .unwrap()
        };
        check(fit() == fit(), || format!("train ({kind:?}) differs"))?;
    }

    let config = ExperimentConfig {
        k: 5,
        methods: vec![
            Method::Majority,
            Method::LmThreshold,
            Method::Svm {
                embeddings: true,
                externals: true,
            },
        ],
        train: svm_options(32),
        ..ExperimentConfig::default()
    };
    let run = || run_experiment(&a, resources, &config).unwrap().to_json().unwrap();
    let first = run();
    check(first == run(), || "evaluate differs".into())?;
    chatgate::par::set_enabled(false);
    let sequential = run();
    chatgate::par::set_enabled(true);
    check(first == sequential, || "parallel and sequential evaluate differ".into())?;
    Ok("synth, train-lm (gru, ngram), train (svm, cnn), evaluate: identical bytes; parallel == sequential".into())
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("GRU gradient fidelity", gru_gradients()),
        ("CNN gradient fidelity", cnn_gradients()),
        ("LM normalization", lm_normalization()),
        ("Uniform-model score", uniform_score()),
        ("SVM correctness", svm_correctness()),
        ("Metrics oracle", metrics_oracle()),
        ("Fold hygiene", fold_hygiene()),
        ("LM separation on synthetic sources", lm_separation()),
    ];
    let resources = synthetic_resources(3000, 32, 1);
    results.push(("End-to-end direction check", end_to_end(&resources)));
    results.push(("Learning-curve shape", learning_curve_shape(&resources)));
    results.push(("Vote breakdown shape", vote_breakdown_shape(&resources)));
    results.push(("Determinism", determinism(&resources)));

    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
