//! Single-layer convolutional sentence classifier: token embeddings, one
//! convolution per region size with ReLU and max-pooling over time, dropout on
//! the pooled values, then a softmax over the pooled values concatenated with
//! the three external features.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::linalg::{dot, softmax, Mat};
use crate::optim::{Adam, AdamConfig};
use crate::par;

pub const PAD: u32 = 0;
pub const UNK_TOKEN: u32 = 1;
/// Output index of the Chat class; NonChat is the other one.
pub const CHAT: usize = 0;

fn class_index(l: Label) -> usize {
    match l {
        Label::Chat => CHAT,
        Label::NonChat => 1 - CHAT,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    /// Row 0 is PAD and stays zero.
    pub embed: Mat,
    /// One bank per region size, `n_maps × (s·dim)`.
    pub filters: Vec<Mat>,
    pub filter_bias: Vec<Vec<f64>>,
    /// `2 × (pooled + 3)`.
    pub out: Mat,
    pub out_bias: Vec<f64>,
}

impl CnnParams {
    pub fn zeros(vocab: usize, dim: usize, n_maps: usize, regions: &[usize]) -> Self {
        CnnParams {
            embed: Mat::zeros(vocab, dim),
            filters: regions.iter().map(|&s| Mat::zeros(n_maps, s * dim)).collect(),
            filter_bias: regions.iter().map(|_| vec![0.0; n_maps]).collect(),
            out: Mat::zeros(2, n_maps * regions.len() + 3),
            out_bias: vec![0.0; 2],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embed.data];
        for (f, b) in self.filters.iter().zip(&self.filter_bias) {
            v.push(&f.data);
            v.push(b);
        }
        v.push(&self.out.data);
        v.push(&self.out_bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.embed.data];
        for (f, b) in self.filters.iter_mut().zip(self.filter_bias.iter_mut()) {
            v.push(&mut f.data);
            v.push(b);
        }
        v.push(&mut self.out.data);
        v.push(&mut self.out_bias);
        v
    }

    fn add_assign(&mut self, other: &CnnParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    /// Words for ids 2.. (0 is PAD, 1 is UNK).
    pub vocab: Vec<String>,
    index: HashMap<String, u32>,
    pub regions: Vec<usize>,
    pub n_maps: usize,
    pub dropout: f64,
    pub params: CnnParams,
}

struct Forward {
    ids: Vec<u32>,
    /// Per region, per filter: window start of the max and the max pre-activation.
    argmax: Vec<Vec<(usize, f64)>>,
    mask: Vec<f64>,
    z: Vec<f64>,
    probs: [f64; 2],
}

impl CnnModel {
    pub fn new(vocab: Vec<String>, regions: Vec<usize>, n_maps: usize, dropout: f64, params: CnnParams) -> Result<Self> {
        if regions.is_empty() || regions.contains(&0) || n_maps == 0 {
            return Err(Error::InvalidConfig("cnn needs at least one nonzero region size and one map".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        let dim = params.embed.cols;
        let ok = params.embed.rows == vocab.len() + 2
            && params.filters.len() == regions.len()
            && params.filters.iter().zip(&regions).all(|(f, &s)| f.rows == n_maps && f.cols == s * dim)
            && params.filter_bias.iter().all(|b| b.len() == n_maps)
            && params.out.rows == 2
            && params.out.cols == n_maps * regions.len() + 3
            && params.out_bias.len() == 2;
        if !ok {
            return Err(Error::Shape("cnn parameter shapes do not match the configuration".into()));
        }
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32 + 2)).collect();
        Ok(CnnModel {
            vocab,
            index,
            regions,
            n_maps,
            dropout,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.embed.cols
    }

    pub fn pooled_len(&self) -> usize {
        self.n_maps * self.regions.len()
    }

    pub fn max_region(&self) -> usize {
        self.regions.iter().copied().max().unwrap_or(1)
    }

    pub fn token_id(&self, tok: &str) -> u32 {
        self.index.get(tok).copied().unwrap_or(UNK_TOKEN)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.token_id(t.as_ref())).collect()
    }

    /// Strips trailing PADs, then pads up to the largest region size.
    pub fn prepare(&self, ids: &[u32]) -> Vec<u32> {
        let end = ids.iter().rposition(|&i| i != PAD).map_or(0, |p| p + 1);
        let mut v = ids[..end].to_vec();
        if v.len() < self.max_region() {
            v.resize(self.max_region(), PAD);
        }
        v
    }

    fn forward(&self, ids: &[u32], external: [f64; 3], mask: Option<Vec<f64>>) -> Forward {
        let ids = self.prepare(ids);
        let d = self.dim();
        let p = &self.params;
        let mut argmax = Vec::with_capacity(self.regions.len());
        let mut z = Vec::with_capacity(self.pooled_len() + 3);
        let mut window = Vec::new();
        for (r, &s) in self.regions.iter().enumerate() {
            let bank = &p.filters[r];
            let mut best = vec![(0usize, f64::NEG_INFINITY); self.n_maps];
            for t in 0..=ids.len() - s {
                window.clear();
                for &id in &ids[t..t + s] {
                    window.extend_from_slice(p.embed.row(id as usize));
                }
                debug_assert_eq!(window.len(), s * d);
                for (f, b) in best.iter_mut().enumerate() {
                    let a = dot(bank.row(f), &window) + p.filter_bias[r][f];
                    if a > b.1 {
                        *b = (t, a);
                    }
                }
            }
            z.extend(best.iter().map(|&(_, a)| a.max(0.0)));
            argmax.push(best);
        }
        let mask = mask.unwrap_or_else(|| vec![1.0; self.pooled_len()]);
        z.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        z.extend_from_slice(&external);
        let mut logits = p.out.matvec(&z);
        logits.iter_mut().zip(&p.out_bias).for_each(|(l, b)| *l += b);
        let s = softmax(&logits);
        Forward {
            ids,
            argmax,
            mask,
            z,
            probs: [s[0], s[1]],
        }
    }

    fn dropout_mask<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..self.pooled_len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    /// Adds the gradient of `−ln p(label)` to `grad`; returns the loss.
    fn backward(&self, fw: &Forward, label: Label, grad: &mut CnnParams) -> f64 {
        let gold = class_index(label);
        let mut dlogits = [fw.probs[0], fw.probs[1]];
        dlogits[gold] -= 1.0;
        grad.out.add_outer(&dlogits, &fw.z);
        grad.out_bias.iter_mut().zip(dlogits).for_each(|(g, d)| *g += d);
        let mut dz = vec![0.0; fw.z.len()];
        self.params.out.matvec_t_acc(&dlogits, &mut dz);
        let d = self.dim();
        let mut j = 0;
        for (r, &s) in self.regions.iter().enumerate() {
            let bank = &self.params.filters[r];
            for f in 0..self.n_maps {
                let (t, a) = fw.argmax[r][f];
                let dpre = dz[j] * fw.mask[j];
                j += 1;
                if a <= 0.0 || dpre == 0.0 {
                    continue;
                }
                grad.filter_bias[r][f] += dpre;
                let frow = bank.row(f);
                for k in 0..s {
                    let id = fw.ids[t + k] as usize;
                    let e = self.params.embed.row(id);
                    let grow = &mut grad.filters[r].row_mut(f)[k * d..(k + 1) * d];
                    grow.iter_mut().zip(e).for_each(|(g, x)| *g += dpre * x);
                    if id != PAD as usize {
                        let erow = grad.embed.row_mut(id);
                        erow.iter_mut()
                            .zip(&frow[k * d..(k + 1) * d])
                            .for_each(|(g, w)| *g += dpre * w);
                    }
                }
            }
        }
        -fw.probs[gold].max(f64::MIN_POSITIVE).ln()
    }

    /// Loss and gradient for one example with dropout disabled.
    pub fn loss_and_grad(&self, ids: &[u32], external: [f64; 3], label: Label) -> (f64, CnnParams) {
        let fw = self.forward(ids, external, None);
        let mut g = self.params.zeros_like();
        let loss = self.backward(&fw, label, &mut g);
        (loss, g)
    }

    pub fn loss(&self, ids: &[u32], external: [f64; 3], label: Label) -> f64 {
        let fw = self.forward(ids, external, None);
        -fw.probs[class_index(label)].ln()
    }

    /// `(p_chat, p_nonchat)`; Chat iff `p_chat > p_nonchat`.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S], external: [f64; 3]) -> (Label, f64) {
        let p = cnn_forward(&self.encode(tokens), external, self, None);
        (if p[CHAT] > p[1 - CHAT] { Label::Chat } else { Label::NonChat }, p[CHAT])
    }
}

/// Class probabilities indexed by [`CHAT`]. Dropout is applied only when an RNG is given.
pub fn cnn_forward(ids: &[u32], external: [f64; 3], model: &CnnModel, train: Option<&mut ChaCha8Rng>) -> [f64; 2] {
    let mask = train.map(|rng| model.dropout_mask(rng));
    model.forward(ids, external, mask).probs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub n_maps: usize,
    pub regions: Vec<usize>,
    pub dropout: f64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            n_maps: 100,
            regions: vec![3],
            dropout: 0.5,
            batch: 32,
            adam: AdamConfig::default(),
            max_epochs: 50,
            patience: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnExample {
    pub tokens: Vec<String>,
    pub external: [f64; 3],
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CnnTrainLog {
    pub train_loss: Vec<f64>,
    pub dev_f1: Vec<f64>,
    pub best_epoch: usize,
}

impl CnnTrainLog {
    pub fn best_dev_f1(&self) -> f64 {
        self.dev_f1.get(self.best_epoch.wrapping_sub(1)).copied().unwrap_or(0.0)
    }
}

/// Chat-class F1 in percent, 0 when undefined.
pub(crate) fn f1_or_zero(pred: &[Label], gold: &[Label]) -> f64 {
    compute_metrics(pred, gold).ok().and_then(|m| m.f1).unwrap_or(0.0)
}

fn init_model(train: &[CnnExample], embeddings: &EmbeddingTable, config: &CnnConfig) -> Result<CnnModel> {
    let mut words: BTreeSet<&str> = embeddings.words().iter().map(|s| s.as_str()).collect();
    for ex in train {
        words.extend(ex.tokens.iter().map(|s| s.as_str()));
    }
    let vocab: Vec<String> = words.into_iter().map(String::from).collect();
    let d = embeddings.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = CnnParams::zeros(vocab.len() + 2, d, config.n_maps, &config.regions);
    for j in 0..d {
        p.embed.row_mut(UNK_TOKEN as usize)[j] = rng.gen_range(-0.25..0.25);
    }
    for (i, w) in vocab.iter().enumerate() {
        let row = p.embed.row_mut(i + 2);
        match embeddings.get(w) {
            Some(v) => row.copy_from_slice(v),
            None => row.iter_mut().for_each(|x| *x = rng.gen_range(-0.25..0.25)),
        }
    }
    for f in p.filters.iter_mut() {
        let a = (6.0 / (f.cols + f.rows) as f64).sqrt();
        *f = Mat::uniform(f.rows, f.cols, a, &mut rng);
    }
    let a = (6.0 / (p.out.cols + 2) as f64).sqrt();
    p.out = Mat::uniform(2, p.out.cols, a, &mut rng);
    CnnModel::new(vocab, config.regions.clone(), config.n_maps, config.dropout, p)
}

pub fn train_cnn(
    train: &[CnnExample],
    dev: &[CnnExample],
    embeddings: &EmbeddingTable,
    config: &CnnConfig,
) -> Result<(CnnModel, CnnTrainLog)> {
    if train.iter().all(|e| e.label == Label::Chat) || train.iter().all(|e| e.label == Label::NonChat) {
        return Err(Error::SingleClass);
    }
    if config.batch == 0 || config.max_epochs == 0 {
        return Err(Error::InvalidConfig("cnn batch size and epoch budget must be positive".into()));
    }
    let mut model = init_model(train, embeddings, config)?;
    let train_ids: Vec<Vec<u32>> = train.iter().map(|e| model.encode(&e.tokens)).collect();
    let dev_ids: Vec<Vec<u32>> = dev.iter().map(|e| model.encode(&e.tokens)).collect();
    let dev_gold: Vec<Label> = dev.iter().map(|e| e.label).collect();
    let sizes: Vec<usize> = model.params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(config.adam, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = CnnTrainLog::default();
    let mut best = (f64::NEG_INFINITY, model.params.clone());
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch) {
            let masks: Vec<Vec<f64>> = batch.iter().map(|_| model.dropout_mask(&mut rng)).collect();
            let items: Vec<(usize, &Vec<f64>)> = batch.iter().copied().zip(&masks).collect();
            let chunks: Vec<&[(usize, &Vec<f64>)]> = items.chunks(4).collect();
            let m = &model;
            let parts = par::map(&chunks, |chunk| {
                let mut g = m.params.zeros_like();
                let mut loss = 0.0;
                for &(i, mask) in chunk.iter() {
                    let fw = m.forward(&train_ids[i], train[i].external, Some(mask.clone()));
                    loss += m.backward(&fw, train[i].label, &mut g);
                }
                (loss, g)
            });
            let mut grad = model.params.zeros_like();
            let mut loss = 0.0;
            for (l, g) in &parts {
                loss += l;
                grad.add_assign(g);
            }
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("cnn loss became {loss} in epoch {epoch}")));
            }
            epoch_loss += loss;
            let scale = 1.0 / batch.len() as f64;
            let mut gt = grad.tensors_mut();
            gt.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v *= scale));
            // PAD stays at zero
            let d = model.dim();
            gt[0][..d].iter_mut().for_each(|v| *v = 0.0);
            let grads: Vec<&[f64]> = gt.iter().map(|t| &**t).collect();
            adam.step(&mut model.params.tensors_mut(), &grads);
        }
        if !model.params.is_finite() {
            return Err(Error::Divergence(format!("cnn weights became non-finite in epoch {epoch}")));
        }
        log.train_loss.push(epoch_loss / train.len() as f64);
        let m = &model;
        let pred: Vec<Label> = par::map_range(dev.len(), |i| m.predict_ids(&dev_ids[i], dev[i].external));
        let f1 = f1_or_zero(&pred, &dev_gold);
        log.dev_f1.push(f1);
        if f1 > best.0 {
            best = (f1, model.params.clone());
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.params = best.1;
    Ok((model, log))
}

impl CnnModel {
    pub(crate) fn predict_ids(&self, ids: &[u32], external: [f64; 3]) -> Label {
        let p = self.forward(ids, external, None).probs;
        if p[CHAT] > p[1 - CHAT] {
            Label::Chat
        } else {
            Label::NonChat
        }
    }
}
