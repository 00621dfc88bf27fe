use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::breakdown::{breakdown_by_length, breakdown_by_votes, default_length_bins, BreakdownRow, LengthBin, PredictionRecord};
use super::metrics::{compute_metrics, macro_mean, micro_mean, MeanMetrics, Metrics};
use super::splits::{kfold_splits, stratified_subsample, FoldSplit};
use super::threshold::{apply_threshold, select_threshold};
use crate::classifiers::{fit_classifier, ClassifierKind, ClassifierSpec, Example, ExternalResources, TrainOptions};
use crate::corpus::{Corpus, Label};
use crate::embeddings::{load_table, EmbeddingTable};
use crate::error::{Error, Result};
use crate::features::ExternalFeatures;
use crate::lm::{ExternalScorer, LanguageModel, QuerySet};
use crate::meta::ArtifactMeta;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Majority,
    LmThreshold,
    Svm {
        #[serde(default)]
        embeddings: bool,
        #[serde(default)]
        externals: bool,
    },
    Cnn {
        #[serde(default)]
        externals: bool,
    },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Majority => "Majority".into(),
            Method::LmThreshold => "LM threshold".into(),
            _ => self.classifier().unwrap().name(),
        }
    }

    fn classifier(&self) -> Option<ClassifierSpec> {
        match *self {
            Method::Svm { embeddings, externals } => Some(ClassifierSpec {
                kind: ClassifierKind::Svm,
                embeddings,
                externals,
            }),
            Method::Cnn { externals } => Some(ClassifierSpec {
                kind: ClassifierKind::Cnn,
                embeddings: true,
                externals,
            }),
            _ => None,
        }
    }

    fn needs_externals(&self) -> bool {
        matches!(self, Method::LmThreshold) || self.classifier().is_some_and(|c| c.externals)
    }

    fn needs_embeddings(&self) -> bool {
        self.classifier().is_some_and(|c| c.embeddings)
    }
}

/// A character LM given either as one model file or as a GRU/n-gram pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LmSource {
    Single(PathBuf),
    Combined {
        gru: PathBuf,
        ngram: PathBuf,
        #[serde(default = "half")]
        weight: f64,
    },
}

fn half() -> f64 {
    0.5
}

/// File references, resolved relative to the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourcePaths {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub tweet_lm: Option<LmSource>,
    pub query_lm: Option<LmSource>,
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveConfig {
    pub method: Method,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
}

pub fn default_fractions() -> Vec<f64> {
    vec![0.05, 0.1, 0.25, 0.5, 0.75, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub resources: ResourcePaths,
    pub k: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub train: TrainOptions,
    pub learning_curve: Option<LearningCurveConfig>,
    pub length_bins: Vec<LengthBin>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            resources: ResourcePaths::default(),
            k: 10,
            seed: 1,
            methods: vec![Method::Majority],
            train: TrainOptions::default(),
            learning_curve: None,
            length_bins: default_length_bins(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Loaded resources shared by all folds.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub embeddings: Option<Arc<EmbeddingTable>>,
    pub externals: Option<Arc<ExternalResources>>,
}

fn load_lm(src: &LmSource, base: &Path) -> Result<ExternalScorer> {
    Ok(match src {
        LmSource::Single(p) => ExternalScorer::Single(LanguageModel::load(&base.join(p))?),
        LmSource::Combined { gru, ngram, weight } => {
            if !(0.0..=1.0).contains(weight) {
                return Err(Error::InvalidConfig(format!("LM combination weight {weight} outside [0, 1]")));
            }
            match (LanguageModel::load(&base.join(gru))?, LanguageModel::load(&base.join(ngram))?) {
                (LanguageModel::Gru(g), LanguageModel::Ngram(n)) => ExternalScorer::Combined {
                    gru: g,
                    ngram: n,
                    weight: *weight,
                },
                _ => return Err(Error::InvalidConfig("combined LM needs a GRU model and an n-gram model".into())),
            }
        }
    })
}

impl Resources {
    pub fn load(paths: &ResourcePaths, base: &Path) -> Result<Self> {
        let embeddings = match &paths.embeddings {
            Some(p) => Some(Arc::new(load_table(&base.join(p))?)),
            None => None,
        };
        let externals = match (&paths.tweet_lm, &paths.query_lm, &paths.queries) {
            (Some(t), Some(q), Some(qs)) => Some(Arc::new(ExternalResources {
                tweet: load_lm(t, base)?,
                query: load_lm(q, base)?,
                queries: QuerySet::load(&base.join(qs))?,
            })),
            (None, None, None) => None,
            _ => {
                return Err(Error::InvalidConfig(
                    "external features need all of tweet_lm, query_lm and queries".into(),
                ))
            }
        };
        Ok(Resources { embeddings, externals })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    pub metrics: Metrics,
    /// Winning grid point or threshold, empty for the majority baseline.
    pub selected: String,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub method: Method,
    pub folds: Vec<FoldResult>,
    /// Mean over folds (primary).
    pub macro_mean: MeanMetrics,
    /// Pooled over all test predictions.
    pub micro: Metrics,
    pub vote_breakdown: Option<Vec<BreakdownRow>>,
    pub length_breakdown: Vec<BreakdownRow>,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    /// Mean test accuracy over the folds that trained.
    pub mean_accuracy: Option<f64>,
    pub fold_accuracy: Vec<Option<f64>>,
    pub failed_folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub method: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(rename = "_meta")]
    pub meta: ArtifactMeta,
    pub corpus_size: usize,
    pub n_chat: usize,
    pub k: usize,
    pub methods: Vec<MethodReport>,
    pub learning_curve: Option<LearningCurve>,
}

struct Context<'a> {
    corpus: &'a Corpus,
    external: Vec<ExternalFeatures>,
    resources: &'a Resources,
    config: &'a ExperimentConfig,
}

struct FoldOutcome {
    predictions: Vec<Label>,
    selected: String,
    dev_f1: Option<f64>,
}

fn fold_seed(base: u64, fold: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(fold as u64 + 1)
}

impl Context<'_> {
    fn examples(&self, idx: &[usize]) -> Vec<Example<'_>> {
        let u = self.corpus.utterances();
        idx.iter()
            .map(|&i| Example {
                text: &u[i].text,
                external: self.external[i],
                label: u[i].label,
            })
            .collect()
    }

    fn labels(&self, idx: &[usize]) -> Vec<Label> {
        let u = self.corpus.utterances();
        idx.iter().map(|&i| u[i].label).collect()
    }

    fn run_fold(&self, method: &Method, split: &FoldSplit, train: &[usize]) -> Result<FoldOutcome> {
        match method {
            Method::Majority => Ok(FoldOutcome {
                predictions: vec![Label::NonChat; split.test.len()],
                selected: String::new(),
                dev_f1: None,
            }),
            Method::LmThreshold => {
                let scores = |idx: &[usize]| idx.iter().map(|&i| self.external[i].tweet_score).collect::<Vec<_>>();
                let choice = select_threshold(&scores(&split.dev), &self.labels(&split.dev))?;
                Ok(FoldOutcome {
                    predictions: apply_threshold(&scores(&split.test), choice.threshold),
                    selected: format!("threshold={:.6}", choice.threshold),
                    dev_f1: Some(choice.dev_f1),
                })
            }
            _ => {
                let spec = method.classifier().unwrap();
                let mut opts = self.config.train.clone();
                opts.svm.seed = fold_seed(opts.svm.seed, split.fold);
                opts.cnn.seed = fold_seed(opts.cnn.seed, split.fold);
                let fitted = fit_classifier(
                    spec,
                    &self.examples(train),
                    &self.examples(&split.dev),
                    self.resources.embeddings.as_ref(),
                    &opts,
                )?;
                let test = self.examples(&split.test);
                let predictions = par::map(&test, |e| fitted.classifier.predict(e.text, e.external).map(|p| p.0))
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                Ok(FoldOutcome {
                    predictions,
                    selected: fitted.selected,
                    dev_f1: Some(fitted.dev_f1),
                })
            }
        }
    }
}

fn check_resources(config: &ExperimentConfig, resources: &Resources) -> Result<()> {
    let methods = config.methods.iter().chain(config.learning_curve.as_ref().map(|l| &l.method));
    for m in methods {
        if m.needs_externals() && resources.externals.is_none() {
            return Err(Error::InvalidConfig(format!("method {} needs the tweet/query LMs and the query set", m.name())));
        }
        if m.needs_embeddings() && resources.embeddings.is_none() {
            return Err(Error::InvalidConfig(format!("method {} needs an embedding table", m.name())));
        }
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("experiment lists no methods".into()));
    }
    if config.length_bins.is_empty() {
        return Err(Error::InvalidConfig("length breakdown needs at least one bin".into()));
    }
    if let Some(lc) = &config.learning_curve {
        if lc.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::InvalidConfig("learning-curve fractions must lie in (0, 1]".into()));
        }
    }
    Ok(())
}

/// Checks that every method's inputs are present without training anything.
pub fn validate_experiment(corpus: &Corpus, resources: &Resources, config: &ExperimentConfig) -> Result<()> {
    check_resources(config, resources)?;
    kfold_splits(corpus.len(), config.k, config.seed)?;
    Ok(())
}

/// Raw external features per utterance; zeros when no resources are loaded.
fn raw_externals(corpus: &Corpus, resources: &Resources) -> Result<Vec<ExternalFeatures>> {
    match &resources.externals {
        Some(ext) => par::map(corpus.utterances(), |u| ext.features(&u.text)).into_iter().collect(),
        None => Ok(vec![ExternalFeatures::default(); corpus.len()]),
    }
}

pub fn run_experiment(corpus: &Corpus, resources: &Resources, config: &ExperimentConfig) -> Result<Report> {
    check_resources(config, resources)?;
    let splits = kfold_splits(corpus.len(), config.k, config.seed)?;
    let external = raw_externals(corpus, resources)?;
    let ctx = Context {
        corpus,
        external,
        resources,
        config,
    };
    let has_votes = corpus.utterances().iter().all(|u| u.votes.is_some());

    let mut methods = Vec::with_capacity(config.methods.len());
    for method in &config.methods {
        let name = method.name();
        let outcomes = par::map(&splits, |s| ctx.run_fold(method, s, &s.train).map_err(|e| e.in_fold(s.fold, &name)));
        let mut folds = Vec::with_capacity(splits.len());
        let mut predictions = Vec::with_capacity(corpus.len());
        for (split, out) in splits.iter().zip(outcomes) {
            let out = out?;
            let gold = ctx.labels(&split.test);
            folds.push(FoldResult {
                fold: split.fold,
                test_size: split.test.len(),
                metrics: compute_metrics(&out.predictions, &gold)?,
                selected: out.selected,
                dev_f1: out.dev_f1,
            });
            for (&i, &pred) in split.test.iter().zip(&out.predictions) {
                let u = &corpus.utterances()[i];
                predictions.push(PredictionRecord {
                    id: u.id.clone(),
                    fold: split.fold,
                    gold: u.label,
                    pred,
                    majority_count: u.majority_count(),
                    char_len: u.char_len(),
                });
            }
        }
        let fm: Vec<Metrics> = folds.iter().map(|f| f.metrics).collect();
        methods.push(MethodReport {
            name,
            method: *method,
            macro_mean: macro_mean(&fm),
            micro: micro_mean(&fm),
            vote_breakdown: if has_votes { Some(breakdown_by_votes(&predictions)?) } else { None },
            length_breakdown: breakdown_by_length(&predictions, &config.length_bins),
            folds,
            predictions,
        });
    }

    let learning_curve = match &config.learning_curve {
        Some(lc) => Some(learning_curve(&ctx, &splits, lc)?),
        None => None,
    };
    Ok(Report {
        meta: ArtifactMeta::new(config, config.seed),
        corpus_size: corpus.len(),
        n_chat: corpus.n_chat(),
        k: config.k,
        methods,
        learning_curve,
    })
}

fn learning_curve(ctx: &Context<'_>, splits: &[FoldSplit], lc: &LearningCurveConfig) -> Result<LearningCurve> {
    let labels = ctx.corpus.labels();
    let name = lc.method.name();
    let mut points = Vec::with_capacity(lc.fractions.len());
    for &fraction in &lc.fractions {
        let accs = par::map(splits, |s| -> Result<Option<f64>> {
            let train = stratified_subsample(&s.train, &labels, fraction, fold_seed(ctx.config.seed, s.fold))?;
            match ctx.run_fold(&lc.method, s, &train) {
                Ok(out) => Ok(Some(compute_metrics(&out.predictions, &ctx.labels(&s.test))?.accuracy)),
                Err(Error::SingleClass) => Ok(None),
                Err(e) => Err(e.in_fold(s.fold, &name)),
            }
        });
        let fold_accuracy = accs.into_iter().collect::<Result<Vec<_>>>()?;
        let ok: Vec<f64> = fold_accuracy.iter().flatten().copied().collect();
        points.push(CurvePoint {
            fraction,
            mean_accuracy: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
            failed_folds: fold_accuracy.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(i, _)| i).collect(),
            fold_accuracy,
        });
    }
    Ok(LearningCurve { method: name, points })
}

/// Learning curve on its own, without the per-method table.
pub fn run_learning_curve(corpus: &Corpus, resources: &Resources, config: &ExperimentConfig, lc: &LearningCurveConfig) -> Result<LearningCurve> {
    let config = ExperimentConfig {
        learning_curve: Some(lc.clone()),
        ..config.clone()
    };
    check_resources(&config, resources)?;
    let splits = kfold_splits(corpus.len(), config.k, config.seed)?;
    let external = raw_externals(corpus, resources)?;
    let ctx = Context {
        corpus,
        external,
        resources,
        config: &config,
    };
    learning_curve(&ctx, &splits, lc)
}
