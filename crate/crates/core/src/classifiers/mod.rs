//! Base classifiers fused with the external features, and the glue that fits
//! one on a train/dev split and applies it to new text.

mod cnn;
mod grid;
mod svm;

pub use cnn::{cnn_forward, train_cnn, CnnConfig, CnnExample, CnnModel, CnnParams, CnnTrainLog, CHAT, PAD, UNK_TOKEN};
pub use grid::{cnn_grid, grid_search, grid_search_cnn, grid_search_svm, svm_c_grid, CnnArch, GridOutcome, SvmData, REGION_SETS};
pub use svm::{predict_linear, primal_objective, train_svm, train_svm_with, LinearModel, SvmParams, SvmTrace};

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::Container;
use crate::corpus::Label;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{build_feature_space, featurize, ExternalFeatures, FeatureConfig, FeatureSpace, Standardizer, Tokenizer, TokenizerKind};
use crate::linalg::Mat;
use crate::lm::{query_presence, ExternalScorer, QuerySet};
use crate::meta::ArtifactMeta;
use crate::par;

/// The two LM scorers and the query dictionary behind the three external features.
#[derive(Debug, Clone)]
pub struct ExternalResources {
    pub tweet: ExternalScorer,
    pub query: ExternalScorer,
    pub queries: QuerySet,
}

impl ExternalResources {
    /// Raw (unscaled) `(tweet_score, query_score, query_binary)`.
    pub fn features(&self, text: &str) -> Result<ExternalFeatures> {
        Ok(ExternalFeatures::new(
            self.tweet.score(text)?,
            self.query.score(text)?,
            query_presence(text, &self.queries) as f64,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Svm,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    /// Averaged word embeddings as SVM features (the CNN always uses the table).
    pub embeddings: bool,
    pub externals: bool,
}

impl ClassifierSpec {
    pub fn name(&self) -> String {
        let mut s = match self.kind {
            ClassifierKind::Svm => "SVM".to_string(),
            ClassifierKind::Cnn => "CNN".to_string(),
        };
        if self.kind == ClassifierKind::Svm && self.embeddings {
            s.push_str("+emb");
        }
        if self.externals {
            s.push_str("+ext");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub features: FeatureConfig,
    pub svm: SvmParams,
    pub c_grid: Vec<f64>,
    pub cnn: CnnConfig,
    pub cnn_grid: Vec<CnnArch>,
    /// Standardize external features on the training split.
    pub standardize: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            features: FeatureConfig::default(),
            svm: SvmParams::default(),
            c_grid: svm_c_grid(),
            cnn: CnnConfig::default(),
            cnn_grid: cnn_grid(),
            standardize: true,
        }
    }
}

/// One utterance with its raw external features.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub text: &'a str,
    pub external: ExternalFeatures,
    pub label: Label,
}

#[derive(Debug, Clone)]
pub enum Classifier {
    Svm {
        space: FeatureSpace,
        model: LinearModel,
        table: Option<Arc<EmbeddingTable>>,
        /// `None` when external features are off.
        standardizer: Option<Standardizer>,
    },
    Cnn {
        model: CnnModel,
        tokenizer: TokenizerKind,
        standardizer: Option<Standardizer>,
    },
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub classifier: Classifier,
    /// Human-readable winning grid point.
    pub selected: String,
    pub dev_f1: f64,
}

fn scaled(standardizer: &Option<Standardizer>, raw: ExternalFeatures) -> ExternalFeatures {
    match standardizer {
        Some(s) => s.apply(raw),
        None => ExternalFeatures::default(),
    }
}

pub fn fit_classifier(
    spec: ClassifierSpec,
    train: &[Example<'_>],
    dev: &[Example<'_>],
    table: Option<&Arc<EmbeddingTable>>,
    opts: &TrainOptions,
) -> Result<Fitted> {
    if train.iter().all(|e| e.label == train[0].label) {
        return Err(Error::SingleClass);
    }
    let standardizer = spec.externals.then(|| {
        if opts.standardize {
            Standardizer::fit(&train.iter().map(|e| e.external).collect::<Vec<_>>())
        } else {
            Standardizer::default()
        }
    });
    match spec.kind {
        ClassifierKind::Svm => {
            let table = if spec.embeddings {
                Some(table.ok_or_else(|| Error::InvalidConfig("SVM with embeddings needs an embedding table".into()))?)
            } else {
                None
            };
            let config = FeatureConfig {
                embedding_dim: table.map_or(0, |t| t.dim()),
                ..opts.features.clone()
            };
            let texts: Vec<&str> = train.iter().map(|e| e.text).collect();
            let space = build_feature_space(&texts, &config)?;
            let feats = |ex: &[Example<'_>]| -> Result<Vec<_>> {
                par::map(ex, |e| featurize(e.text, &space, table.map(|t| &**t), scaled(&standardizer, e.external)))
                    .into_iter()
                    .collect()
            };
            let (tx, dx) = (feats(train)?, feats(dev)?);
            let ty: Vec<Label> = train.iter().map(|e| e.label).collect();
            let dy: Vec<Label> = dev.iter().map(|e| e.label).collect();
            let out = grid_search_svm(SvmData { x: &tx, y: &ty }, SvmData { x: &dx, y: &dy }, space.total_dim(), &opts.c_grid, &opts.svm)?;
            Ok(Fitted {
                selected: format!("c=2^{}", out.config.log2()),
                dev_f1: out.dev_f1,
                classifier: Classifier::Svm {
                    space,
                    model: out.model,
                    table: table.cloned(),
                    standardizer,
                },
            })
        }
        ClassifierKind::Cnn => {
            let table = table.ok_or_else(|| Error::InvalidConfig("the CNN needs pre-trained embeddings".into()))?;
            let tok = opts.features.tokenizer;
            let examples = |ex: &[Example<'_>]| -> Vec<CnnExample> {
                ex.iter()
                    .map(|e| CnnExample {
                        tokens: tok.tokenize(e.text).tokens().to_vec(),
                        external: scaled(&standardizer, e.external).as_array(),
                        label: e.label,
                    })
                    .collect()
            };
            let out = grid_search_cnn(&examples(train), &examples(dev), table, &opts.cnn_grid, &opts.cnn)?;
            Ok(Fitted {
                selected: format!("maps={} regions={:?}", out.config.n_maps, out.config.regions),
                dev_f1: out.dev_f1,
                classifier: Classifier::Cnn {
                    model: out.model,
                    tokenizer: tok,
                    standardizer,
                },
            })
        }
    }
}

pub const SVM_KIND: &str = "svm";
pub const CNN_KIND: &str = "cnn";

impl Classifier {
    pub fn uses_externals(&self) -> bool {
        match self {
            Classifier::Svm { standardizer, .. } | Classifier::Cnn { standardizer, .. } => standardizer.is_some(),
        }
    }

    /// Prediction and its score (SVM margin or CNN Chat probability).
    pub fn predict(&self, text: &str, raw_external: ExternalFeatures) -> Result<(Label, f64)> {
        match self {
            Classifier::Svm {
                space,
                model,
                table,
                standardizer,
            } => {
                let x = featurize(text, space, table.as_deref(), scaled(standardizer, raw_external))?;
                predict_linear(model, &x)
            }
            Classifier::Cnn {
                model,
                tokenizer,
                standardizer,
            } => Ok(model.predict(tokenizer.tokenize(text).tokens(), scaled(standardizer, raw_external).as_array())),
        }
    }

    pub fn to_container(&self, meta: Option<ArtifactMeta>) -> Result<Container> {
        match self {
            Classifier::Svm {
                space,
                model,
                table,
                standardizer,
            } => {
                let words = table.as_ref().map(|t| t.words().to_vec());
                let mut c = Container::new(
                    SVM_KIND,
                    meta,
                    json!({
                        "feature_space": serde_json::from_str::<serde_json::Value>(&space.to_json()?)?,
                        "c": model.c,
                        "standardizer": standardizer,
                        "embedding_words": words,
                    }),
                );
                c.push("weights", vec![model.weights.len()], &model.weights);
                c.push("bias", vec![1], &[model.bias]);
                if let Some(t) = table {
                    let data: Vec<f64> = (0..t.len()).flat_map(|i| t.row(i).to_vec()).collect();
                    c.push("embeddings", vec![t.len(), t.dim()], &data);
                }
                Ok(c)
            }
            Classifier::Cnn {
                model,
                tokenizer,
                standardizer,
            } => {
                let mut c = Container::new(
                    CNN_KIND,
                    meta,
                    json!({
                        "vocab": model.vocab,
                        "regions": model.regions,
                        "n_maps": model.n_maps,
                        "dropout": model.dropout,
                        "tokenizer": tokenizer,
                        "standardizer": standardizer,
                    }),
                );
                let p = &model.params;
                c.push("embed", vec![p.embed.rows, p.embed.cols], &p.embed.data);
                for (i, (f, b)) in p.filters.iter().zip(&p.filter_bias).enumerate() {
                    c.push(&format!("filter{i}"), vec![f.rows, f.cols], &f.data);
                    c.push(&format!("filter_bias{i}"), vec![b.len()], b);
                }
                c.push("out", vec![2, p.out.cols], &p.out.data);
                c.push("out_bias", vec![2], &p.out_bias);
                Ok(c)
            }
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let standardizer: Option<Standardizer> = c.extra_field("standardizer")?;
        match c.kind.as_str() {
            SVM_KIND => {
                let fs: serde_json::Value = c.extra_field("feature_space")?;
                let space = FeatureSpace::from_json(&fs.to_string())?;
                let dim = space.total_dim();
                let words: Option<Vec<String>> = c.extra_field("embedding_words")?;
                let table = match words {
                    Some(words) => {
                        let d = space.embedding_dim;
                        let data = c.tensor("embeddings", &[words.len(), d])?;
                        let rows = words.into_iter().zip(data.chunks_exact(d.max(1))).map(|(w, r)| (w, r.to_vec())).collect();
                        Some(Arc::new(EmbeddingTable::from_rows(rows, d)?))
                    }
                    None => None,
                };
                Ok(Classifier::Svm {
                    model: LinearModel {
                        weights: c.tensor("weights", &[dim])?.to_vec(),
                        bias: c.tensor("bias", &[1])?[0],
                        c: c.extra_field("c")?,
                    },
                    space,
                    table,
                    standardizer,
                })
            }
            CNN_KIND => {
                let vocab: Vec<String> = c.extra_field("vocab")?;
                let regions: Vec<usize> = c.extra_field("regions")?;
                let n_maps: usize = c.extra_field("n_maps")?;
                let embed = c
                    .tensors
                    .iter()
                    .find(|t| t.name == "embed")
                    .ok_or_else(|| Error::Format("missing tensor `embed`".into()))?;
                let d = embed.shape.get(1).copied().unwrap_or(0);
                let mat = |name: &str, r: usize, cols: usize| -> Result<Mat> { Ok(Mat::from_vec(r, cols, c.tensor(name, &[r, cols])?.to_vec())) };
                let mut filters = Vec::new();
                let mut filter_bias = Vec::new();
                for (i, &s) in regions.iter().enumerate() {
                    filters.push(mat(&format!("filter{i}"), n_maps, s * d)?);
                    filter_bias.push(c.tensor(&format!("filter_bias{i}"), &[n_maps])?.to_vec());
                }
                let params = CnnParams {
                    embed: mat("embed", vocab.len() + 2, d)?,
                    filters,
                    filter_bias,
                    out: mat("out", 2, n_maps * regions.len() + 3)?,
                    out_bias: c.tensor("out_bias", &[2])?.to_vec(),
                };
                Ok(Classifier::Cnn {
                    model: CnnModel::new(vocab, regions, n_maps, c.extra_field("dropout")?, params)?,
                    tokenizer: c.extra_field("tokenizer")?,
                    standardizer,
                })
            }
            other => Err(Error::Format(format!("not a classifier model: `{other}`"))),
        }
    }

    pub fn save(&self, path: &Path, meta: Option<ArtifactMeta>) -> Result<()> {
        self.to_container(meta)?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
