//! Character-level GRU language model with full-softmax output, trained by
//! backpropagation through time over whole utterances.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::CharVocab;
use super::CharLm;
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softmax, Mat};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::par;

/// Weights of the recurrence and the output layer. Gates carry no biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    /// (V+1) × E; the last row embeds BOS.
    pub embed: Mat,
    pub w_z: Mat,
    pub u_z: Mat,
    pub w_r: Mat,
    pub u_r: Mat,
    pub w_h: Mat,
    pub u_h: Mat,
    /// V × H
    pub out: Mat,
    pub out_bias: Vec<f64>,
}

impl GruParams {
    pub const NAMES: [&'static str; 9] = ["embed", "w_z", "u_z", "w_r", "u_r", "w_h", "u_h", "out", "out_bias"];

    pub fn zeros(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        let (v, e, h) = (vocab_size, embed_dim, hidden_dim);
        GruParams {
            embed: Mat::zeros(v + 1, e),
            w_z: Mat::zeros(h, e),
            u_z: Mat::zeros(h, h),
            w_r: Mat::zeros(h, e),
            u_r: Mat::zeros(h, h),
            w_h: Mat::zeros(h, e),
            u_h: Mat::zeros(h, h),
            out: Mat::zeros(v, h),
            out_bias: vec![0.0; v],
        }
    }

    pub fn random(vocab_size: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, e, h) = (vocab_size, embed_dim, hidden_dim);
        let se = 1.0 / (e as f64).sqrt();
        let sh = 1.0 / (h as f64).sqrt();
        GruParams {
            embed: Mat::uniform(v + 1, e, 0.1, &mut rng),
            w_z: Mat::uniform(h, e, se, &mut rng),
            u_z: Mat::uniform(h, h, sh, &mut rng),
            w_r: Mat::uniform(h, e, se, &mut rng),
            u_r: Mat::uniform(h, h, sh, &mut rng),
            w_h: Mat::uniform(h, e, se, &mut rng),
            u_h: Mat::uniform(h, h, sh, &mut rng),
            out: Mat::uniform(v, h, sh, &mut rng),
            out_bias: vec![0.0; v],
        }
    }

    pub fn zeros_like(&self) -> Self {
        GruParams::zeros(self.out.rows, self.embed.cols, self.w_z.rows)
    }

    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            &self.embed.data,
            &self.w_z.data,
            &self.u_z.data,
            &self.w_r.data,
            &self.u_r.data,
            &self.w_h.data,
            &self.u_h.data,
            &self.out.data,
            &self.out_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.embed.data,
            &mut self.w_z.data,
            &mut self.u_z.data,
            &mut self.w_r.data,
            &mut self.u_r.data,
            &mut self.w_h.data,
            &mut self.u_h.data,
            &mut self.out.data,
            &mut self.out_bias,
        ]
    }

    fn add_assign(&mut self, other: &GruParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows
    }

    fn check_shapes(&self) -> Result<()> {
        let (e, h, v) = (self.embed.cols, self.w_z.rows, self.out.rows);
        let ok = self.embed.rows == v + 1
            && [&self.w_z, &self.w_r, &self.w_h].iter().all(|m| m.rows == h && m.cols == e)
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|m| m.rows == h && m.cols == h)
            && self.out.cols == h
            && self.out_bias.len() == v;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("inconsistent GRU parameter shapes".into()))
        }
    }
}

/// One GRU update:
///
/// ```text
/// z  = σ(W_z x + U_z h)
/// r  = σ(W_r x + U_r h)
/// h̃ = tanh(W_h x + U_h (r ⊙ h))
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_step(x: &[f64], h_prev: &[f64], params: &GruParams) -> Result<Vec<f64>> {
    if x.len() != params.embed_dim() || h_prev.len() != params.hidden_dim() {
        return Err(Error::Shape(format!(
            "gru_step: x has {} (want {}), h has {} (want {})",
            x.len(),
            params.embed_dim(),
            h_prev.len(),
            params.hidden_dim()
        )));
    }
    Ok(step(params, x, h_prev).h)
}

struct StepCache {
    input: u32,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    h: Vec<f64>,
}

struct Step {
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    h: Vec<f64>,
}

fn step(p: &GruParams, x: &[f64], h_prev: &[f64]) -> Step {
    let hd = p.hidden_dim();
    let mut z = p.w_z.matvec(x);
    p.u_z.matvec_acc(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut r = p.w_r.matvec(x);
    p.u_r.matvec_acc(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut cand = p.w_h.matvec(x);
    p.u_h.matvec_acc(&rh, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());
    let h = (0..hd).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * cand[i]).collect();
    Step { z, r, cand, h }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLm {
    pub vocab: CharVocab,
    pub params: GruParams,
}

impl GruLm {
    pub fn new(vocab: CharVocab, params: GruParams) -> Result<Self> {
        params.check_shapes()?;
        if params.out.rows != vocab.size() {
            return Err(Error::Shape(format!(
                "output layer has {} rows, vocabulary has {} symbols",
                params.out.rows,
                vocab.size()
            )));
        }
        Ok(GruLm { vocab, params })
    }

    pub fn random(vocab: CharVocab, embed_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let params = GruParams::random(vocab.size(), embed_dim, hidden_dim, seed);
        GruLm { vocab, params }
    }

    fn embed(&self, id: u32) -> &[f64] {
        self.params.embed.row(id as usize)
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut l = self.params.out_bias.clone();
        self.params.out.matvec_acc(h, &mut l);
        l
    }

    /// Summed negative log-likelihood of `ids` (BOS-conditioned, no end symbol).
    pub fn sequence_nll(&self, ids: &[u32]) -> f64 {
        let mut h = vec![0.0; self.params.hidden_dim()];
        let mut input = self.vocab.bos();
        let mut nll = 0.0;
        for &target in ids {
            h = step(&self.params, self.embed(input), &h).h;
            let p = softmax(&self.logits(&h));
            nll -= p[target as usize].ln();
            input = target;
        }
        nll
    }

    /// Mean per-character cross entropy over a batch of encoded strings.
    pub fn batch_loss(&self, batch: &[Vec<u32>]) -> f64 {
        let n: usize = batch.iter().map(Vec::len).sum();
        batch.iter().map(|s| self.sequence_nll(s)).sum::<f64>() / n.max(1) as f64
    }

    /// [`batch_loss`](Self::batch_loss) and its gradient w.r.t. every parameter tensor.
    pub fn batch_loss_and_grad(&self, batch: &[Vec<u32>]) -> (f64, GruParams) {
        let n: usize = batch.iter().map(Vec::len).sum();
        // fixed-size chunks keep the summation order independent of the thread count
        let chunks: Vec<&[Vec<u32>]> = batch.chunks(4).collect();
        let partial = par::map(&chunks, |chunk| {
            let mut g = self.params.zeros_like();
            let mut nll = 0.0;
            for s in chunk.iter() {
                nll += self.accumulate_grad(s, &mut g);
            }
            (nll, g)
        });
        let mut grad = self.params.zeros_like();
        let mut nll = 0.0;
        for (l, g) in &partial {
            nll += l;
            grad.add_assign(g);
        }
        let inv = 1.0 / n.max(1) as f64;
        grad.scale(inv);
        (nll * inv, grad)
    }

    fn accumulate_grad(&self, ids: &[u32], g: &mut GruParams) -> f64 {
        let p = &self.params;
        let hd = p.hidden_dim();
        let ed = p.embed_dim();
        let mut caches = Vec::with_capacity(ids.len());
        let mut probs = Vec::with_capacity(ids.len());
        let mut h = vec![0.0; hd];
        let mut input = self.vocab.bos();
        let mut nll = 0.0;
        for &target in ids {
            let s = step(p, self.embed(input), &h);
            let pr = softmax(&self.logits(&s.h));
            nll -= pr[target as usize].ln();
            caches.push(StepCache {
                input,
                h_prev: std::mem::replace(&mut h, s.h.clone()),
                z: s.z,
                r: s.r,
                cand: s.cand,
                h: s.h,
            });
            probs.push(pr);
            input = target;
        }

        let mut dh_next = vec![0.0; hd];
        for t in (0..ids.len()).rev() {
            let c = &caches[t];
            let mut dlogits = std::mem::take(&mut probs[t]);
            dlogits[ids[t] as usize] -= 1.0;
            g.out.add_outer(&dlogits, &c.h);
            g.out_bias.iter_mut().zip(&dlogits).for_each(|(a, b)| *a += b);
            let mut dh = dh_next;
            p.out.matvec_t_acc(&dlogits, &mut dh);

            let x = self.embed(c.input);
            let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh[i] * (1.0 - c.z[i])).collect();
            let da_h: Vec<f64> = (0..hd).map(|i| dh[i] * c.z[i] * (1.0 - c.cand[i] * c.cand[i])).collect();
            let da_z: Vec<f64> = (0..hd)
                .map(|i| dh[i] * (c.cand[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i]))
                .collect();
            let rh: Vec<f64> = (0..hd).map(|i| c.r[i] * c.h_prev[i]).collect();
            g.w_h.add_outer(&da_h, x);
            g.u_h.add_outer(&da_h, &rh);
            let mut drh = vec![0.0; hd];
            p.u_h.matvec_t_acc(&da_h, &mut drh);
            let da_r: Vec<f64> = (0..hd)
                .map(|i| drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]))
                .collect();
            for i in 0..hd {
                dh_prev[i] += drh[i] * c.r[i];
            }
            g.w_r.add_outer(&da_r, x);
            g.u_r.add_outer(&da_r, &c.h_prev);
            g.w_z.add_outer(&da_z, x);
            g.u_z.add_outer(&da_z, &c.h_prev);
            p.u_r.matvec_t_acc(&da_r, &mut dh_prev);
            p.u_z.matvec_t_acc(&da_z, &mut dh_prev);

            let mut dx = vec![0.0; ed];
            p.w_h.matvec_t_acc(&da_h, &mut dx);
            p.w_r.matvec_t_acc(&da_r, &mut dx);
            p.w_z.matvec_t_acc(&da_z, &mut dx);
            g.embed.row_mut(c.input as usize).iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            dh_next = dh_prev;
        }
        nll
    }
}

impl CharLm for GruLm {
    type State = Vec<f64>;

    fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    fn start(&self) -> Vec<f64> {
        let h0 = vec![0.0; self.params.hidden_dim()];
        step(&self.params, self.embed(self.vocab.bos()), &h0).h
    }

    fn advance(&self, state: &mut Vec<f64>, id: u32) {
        *state = step(&self.params, self.embed(id), state).h;
    }

    fn dist(&self, state: &Vec<f64>) -> Vec<f64> {
        softmax(&self.logits(state))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GruTrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Utterances per gradient step.
    pub batch: usize,
    /// Global gradient-norm clip.
    pub clip: f64,
    pub seed: u64,
    /// Characters rarer than this map to UNK.
    pub min_char_count: u32,
    /// Share of lines held out for per-epoch perplexity.
    pub held_out_fraction: f64,
}

impl Default for GruTrainConfig {
    fn default() -> Self {
        GruTrainConfig {
            embed_dim: 256,
            hidden_dim: 256,
            epochs: 10,
            lr: 0.005,
            batch: 32,
            clip: 5.0,
            seed: 1,
            min_char_count: 2,
            held_out_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GruTrainLog {
    /// Training-set perplexity before training and after each epoch.
    pub train_perplexity: Vec<f64>,
    /// Held-out perplexity before training and after each epoch.
    pub held_out_perplexity: Vec<f64>,
}

/// Train a GRU LM with Adam on next-character cross entropy.
pub fn train_gru_lm<S: AsRef<str> + Sync>(lines: &[S], config: &GruTrainConfig) -> Result<(GruLm, GruTrainLog)> {
    let lines: Vec<&str> = lines.iter().map(|l| l.as_ref()).filter(|l| !l.is_empty()).collect();
    if lines.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.embed_dim == 0 || config.hidden_dim == 0 || config.batch == 0 {
        return Err(Error::InvalidConfig("embed_dim, hidden_dim and batch must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.shuffle(&mut rng);
    let n_held = if lines.len() >= 20 {
        ((lines.len() as f64 * config.held_out_fraction).round() as usize).min(lines.len() / 2)
    } else {
        0
    };
    let (held_idx, train_idx) = order.split_at(n_held);
    let train_lines: Vec<&str> = train_idx.iter().map(|&i| lines[i]).collect();
    let held_lines: Vec<&str> = if held_idx.is_empty() {
        train_lines.clone()
    } else {
        held_idx.iter().map(|&i| lines[i]).collect()
    };

    let vocab = CharVocab::build(&train_lines, config.min_char_count.max(1));
    let mut lm = GruLm::random(vocab, config.embed_dim, config.hidden_dim, config.seed);
    let train: Vec<Vec<u32>> = train_lines.iter().map(|l| lm.vocab.encode(l)).collect();

    let sizes: Vec<usize> = lm.params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &sizes,
    );
    let mut log = GruTrainLog::default();
    log.train_perplexity.push(super::perplexity(&train_lines, &lm));
    log.held_out_perplexity.push(super::perplexity(&held_lines, &lm));

    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        idx.shuffle(&mut rng);
        for b in idx.chunks(config.batch) {
            let batch: Vec<Vec<u32>> = b.iter().map(|&i| train[i].clone()).collect();
            let (loss, mut grad) = lm.batch_loss_and_grad(&batch);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss in epoch {epoch}; try a lower learning rate than {}",
                    config.lr
                )));
            }
            let mut gt = grad.tensors_mut();
            clip_global_norm(&mut gt, config.clip);
            let grads: Vec<&[f64]> = gt.iter().map(|g| &**g).collect();
            adam.step(&mut lm.params.tensors_mut(), &grads);
        }
        if !lm.params.is_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }
        log.train_perplexity.push(super::perplexity(&train_lines, &lm));
        log.held_out_perplexity.push(super::perplexity(&held_lines, &lm));
    }
    Ok((lm, log))
}
