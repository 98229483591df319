use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use travgrid_nn::{Graph, SgdState, Tensor};

use super::model::{window_loss, Classifier, LossMode, QueueView};
use super::ops::{entropy, refine_label};
use super::prototypes::PrototypeBank;
use super::queue::QueuePair;
use super::schedule::Schedules;
use super::Model;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{CoreError, Result};
use crate::labeling::{PatchToken, PseudoLabel};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub schedules: Schedules,
    /// Number of classes / prototypes `K`.
    pub classes: usize,
    pub queue_capacity: usize,
    /// Queue size from which the contrastive term is active.
    pub queue_warmup: usize,
    pub loss: LossMode,
    pub seed: u64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    /// Re-anchor the first prototype on the mean positive embedding after
    /// the first epoch.
    pub reanchor_positive: bool,
    pub prototype_init: PrototypeInit,
    /// Windows per SGD step.
    pub batch_windows: usize,
}

/// Where the prototypes start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeInit {
    /// Random unit vectors.
    Random,
    /// Prototype 1 on the mean positive embedding, the others on mutually
    /// distant unlabeled embeddings of the untrained key encoder.
    Data,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderConfig::default(),
            schedules: Schedules::default(),
            classes: 4,
            queue_capacity: 8192,
            queue_warmup: 1024,
            loss: LossMode::Sum,
            seed: 42,
            sgd_momentum: 0.9,
            weight_decay: 1e-5,
            reanchor_positive: true,
            prototype_init: PrototypeInit::Data,
            batch_windows: 1,
        }
    }
}

/// Contiguous ranges of tokens sharing `(frame, window)`. Tokens must be
/// sorted by id.
pub fn window_ranges(tokens: &[PatchToken]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=tokens.len() {
        let split = i == tokens.len()
            || (tokens[i].id.frame, tokens[i].id.window)
                != (tokens[start].id.frame, tokens[start].id.window);
        if split {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Flattened token features as an `N x len` matrix.
pub fn window_tensor(tokens: &[PatchToken]) -> Result<Tensor<f32>> {
    let len = tokens.first().map(|t| t.features.len()).unwrap_or(0);
    let mut data = Vec::with_capacity(tokens.len() * len);
    for t in tokens {
        if t.features.len() != len {
            return Err(CoreError::Shape(format!(
                "token {:?} has {} values, expected {len}",
                t.id,
                t.features.len()
            )));
        }
        data.extend_from_slice(&t.features);
    }
    Ok(Tensor::from_vec(tokens.len(), len, data)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub tokens: usize,
    pub cls: f64,
    pub cont: Option<f64>,
    pub total: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub cls: f64,
    pub cont: f64,
    pub sum: f64,
    /// Mean soft-label entropy over unlabeled tokens (nats).
    pub entropy: f64,
    pub lr: f64,
    pub label_momentum: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,l_cls,l_cont,l_sum,entropy,lr,m_l";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.cls, self.cont, self.sum, self.entropy, self.lr, self.label_momentum
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(EpochMetrics::CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Mean soft-label entropy over unlabeled tokens.
pub fn mean_unlabeled_entropy(tokens: &[PatchToken]) -> f64 {
    let (sum, n) = tokens
        .iter()
        .filter(|t| t.label == PseudoLabel::Unlabeled)
        .fold((0.0, 0usize), |(s, n), t| (s + entropy(&t.soft), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

const SEED_ITERATIONS: usize = 20;

/// Owns the query and key encoders, the classifier, optimiser state, the
/// queue and the prototypes, and runs the training loop.
pub struct Trainer {
    pub config: TrainConfig,
    pub query: Encoder<f32>,
    pub key: Encoder<f32>,
    pub classifier: Classifier<f32>,
    sgd_encoder: SgdState<f32>,
    sgd_classifier: SgdState<f32>,
    pub queue: QueuePair,
    pub prototypes: PrototypeBank,
    rng: ChaCha8Rng,
    /// Masked predictions that had to fall back to the candidate set.
    pub fallbacks: usize,
    anchor: Vec<f64>,
    anchor_count: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.schedules.validate()?;
        if config.classes < 2 {
            return Err(CoreError::Config(
                "at least two classes are required".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let query = Encoder::new(config.encoder.clone(), &mut rng)?;
        let dim = config.encoder.dim;
        let classifier = Classifier::new(dim, config.classes, config.encoder.init_std, &mut rng);
        let prototypes = PrototypeBank::random(config.classes, dim, &mut rng);
        let shapes = |p: &travgrid_nn::ParamSet<f32>| {
            p.tensors().iter().map(Tensor::shape).collect::<Vec<_>>()
        };
        let (m, wd) = (config.sgd_momentum as f32, config.weight_decay as f32);
        Ok(Trainer {
            sgd_encoder: SgdState::new(shapes(&query.params), m, wd),
            sgd_classifier: SgdState::new(shapes(&classifier.params), m, wd),
            key: query.clone(),
            queue: QueuePair::new(config.queue_capacity, dim)?,
            query,
            classifier,
            prototypes,
            rng,
            fallbacks: 0,
            anchor: vec![0.0; dim],
            anchor_count: 0,
            config,
        })
    }

    pub fn model(&self) -> Model {
        Model {
            encoder: self.query.clone(),
            classifier: self.classifier.clone(),
        }
    }

    /// One update on the tokens of a single window.
    pub fn train_step(&mut self, tokens: &mut [PatchToken], epoch: usize) -> Result<StepReport> {
        let n = tokens.len();
        self.train_batch(tokens, &[0..n], epoch)
    }

    /// One update on several windows, in the documented order: forward both
    /// encoders, predict, losses, SGD on the query side, key momentum,
    /// prototypes, soft labels, enqueue. Windows attend only within
    /// themselves; the objective is the token-weighted mean over windows.
    pub fn train_batch(
        &mut self,
        tokens: &mut [PatchToken],
        windows: &[Range<usize>],
        epoch: usize,
    ) -> Result<StepReport> {
        let windows: Vec<Range<usize>> =
            windows.iter().filter(|w| !w.is_empty()).cloned().collect();
        let n_total: usize = windows.iter().map(|w| w.len()).sum();
        if n_total == 0 {
            return Ok(StepReport::default());
        }
        let sched = &self.config.schedules;
        let k = self.config.classes;
        let batch = || {
            let t = &tokens[windows[0].start];
            format!(
                "batch starting at frame {} window {}",
                t.id.frame, t.id.window
            )
        };

        let mut g = Graph::new();
        let enc_vars = self.query.bind(&mut g, true);
        let cls_vars = self
            .classifier
            .bind(&mut g, self.config.loss != LossMode::Cont);
        let queue_tensor = (self.queue.len() >= self.config.queue_warmup.max(1))
            .then(|| self.queue.embeddings_tensor());
        let mut outs = Vec::with_capacity(windows.len());
        let mut keys = Vec::with_capacity(windows.len());
        let mut total_var = None;
        let (mut cls, mut cont, mut any_cont) = (0.0, 0.0, false);
        for w in &windows {
            let part = &tokens[w.clone()];
            let x = window_tensor(part)?;
            keys.push(self.key.embed_window(&x)?);
            let xv = g.constant(x);
            let candidates: Vec<Vec<f32>> = part.iter().map(|t| t.label.vector(k)).collect();
            let soft = Tensor::from_vec(
                part.len(),
                k,
                part.iter().flat_map(|t| t.soft.iter().copied()).collect(),
            )?;
            let queue = queue_tensor.as_ref().map(|q| QueueView {
                embeddings: q,
                labels: self.queue.labels(),
            });
            let out = window_loss(
                &mut g,
                &self.query,
                &enc_vars,
                &self.classifier,
                &cls_vars,
                xv,
                &candidates,
                soft,
                queue,
                sched.temperature,
                sched.contrastive_weight,
                self.config.loss,
            )?;
            let share = w.len() as f64 / n_total as f64;
            cls += share * out.cls;
            if let Some(c) = out.cont {
                cont += share * c;
                any_cont = true;
            }
            if let Some(t) = out.total {
                let t = g.scale(t, share as f32);
                total_var = Some(match total_var {
                    Some(acc) => g.add(acc, t)?,
                    None => t,
                });
            }
            outs.push(out);
        }
        let total = total_var.map(|v| g.value(v).item() as f64);
        if let Some(t) = total {
            if !t.is_finite() {
                return Err(CoreError::NonFinite(format!("loss of {}", batch())));
            }
        }
        self.fallbacks += outs
            .iter()
            .flat_map(|o| &o.predictions)
            .filter(|p| p.fell_back)
            .count();

        if let Some(loss) = total_var {
            let mut grads = g.backward(loss)?;
            let lr = sched.lr_at(epoch) as f32;
            let take = |grads: &mut travgrid_nn::Gradients<f32>,
                        vars: &[travgrid_nn::Var],
                        g: &Graph<f32>| {
                vars.iter()
                    .map(|&v| {
                        grads.take(v).unwrap_or_else(|| {
                            let (r, c) = g.value(v).shape();
                            Tensor::zeros(r, c)
                        })
                    })
                    .collect::<Vec<_>>()
            };
            let enc_grads = take(&mut grads, &enc_vars, &g);
            self.sgd_encoder
                .step(self.query.params.tensors_mut(), &enc_grads, lr)
                .map_err(|e| CoreError::NonFinite(format!("{e} in {}", batch())))?;
            if self.config.loss != LossMode::Cont {
                let cls_grads = take(&mut grads, &cls_vars, &g);
                self.sgd_classifier
                    .step(self.classifier.params.tensors_mut(), &cls_grads, lr)
                    .map_err(|e| CoreError::NonFinite(format!("{e} in {}", batch())))?;
            }
        }

        self.key
            .momentum_from(&self.query, sched.encoder_momentum as f32)?;

        let m_p = sched.prototype_momentum as f32;
        let m_l = sched.label_momentum_at(epoch) as f32;
        for (w, out) in windows.iter().zip(&outs) {
            let zq = g.value(out.embeddings);
            for (i, p) in out.predictions.iter().enumerate() {
                self.prototypes.update(p.class, zq.row(i), m_p);
            }
            for (i, t) in tokens[w.clone()].iter_mut().enumerate() {
                if epoch == 1 && t.label == PseudoLabel::Positive {
                    for (a, &v) in self.anchor.iter_mut().zip(zq.row(i)) {
                        *a += v as f64;
                    }
                    self.anchor_count += 1;
                }
                if t.label == PseudoLabel::Unlabeled {
                    let target = self.prototypes.nearest(zq.row(i));
                    refine_label(&mut t.soft, target, m_l);
                }
            }
        }
        for (out, z_key) in outs.iter().zip(&keys) {
            for (i, p) in out.predictions.iter().enumerate() {
                self.queue.push(z_key.row(i), p.class)?;
            }
        }
        Ok(StepReport {
            tokens: n_total,
            cls,
            cont: any_cont.then_some(cont),
            total,
        })
    }

    /// One pass over all windows in a seeded random order.
    pub fn train_epoch(&mut self, tokens: &mut [PatchToken], epoch: usize) -> Result<EpochMetrics> {
        let mut windows = window_ranges(tokens);
        windows.shuffle(&mut self.rng);
        let (mut cls, mut cont, mut sum) = (0.0, 0.0, 0.0);
        let (mut n, mut n_cont) = (0usize, 0usize);
        for chunk in windows.chunks(self.config.batch_windows.max(1)) {
            let r = self.train_batch(tokens, chunk, epoch)?;
            cls += r.cls * r.tokens as f64;
            if let Some(c) = r.cont {
                cont += c * r.tokens as f64;
                n_cont += r.tokens;
            }
            sum += (r.cls + self.config.schedules.contrastive_weight * r.cont.unwrap_or(0.0))
                * r.tokens as f64;
            n += r.tokens;
        }
        if epoch == 1 && self.config.reanchor_positive && self.anchor_count > 0 {
            let mean: Vec<f32> = self
                .anchor
                .iter()
                .map(|&a| (a / self.anchor_count as f64) as f32)
                .collect();
            self.prototypes.set(0, &mean);
        }
        let sched = &self.config.schedules;
        let n = n.max(1) as f64;
        Ok(EpochMetrics {
            epoch,
            cls: cls / n,
            cont: if n_cont > 0 {
                cont / n_cont as f64
            } else {
                0.0
            },
            sum: sum / n,
            entropy: mean_unlabeled_entropy(tokens),
            lr: sched.lr_at(epoch),
            label_momentum: sched.label_momentum_at(epoch),
        })
    }

    /// Places the prototypes on key-encoder embeddings of `tokens`:
    /// prototype 1 on the normalised mean of the positives, each further one
    /// on the unlabeled embedding least similar to those already placed
    /// (ties to the lowest index).
    pub fn seed_prototypes(&mut self, tokens: &[PatchToken]) -> Result<()> {
        let mut z: Vec<Vec<f32>> = Vec::with_capacity(tokens.len());
        for w in window_ranges(tokens) {
            let e = self.key.embed_window(&window_tensor(&tokens[w])?)?;
            z.extend((0..e.shape().0).map(|i| e.row(i).to_vec()));
        }
        let dim = self.config.encoder.dim;
        let positive: Vec<usize> = (0..tokens.len())
            .filter(|&i| tokens[i].label == PseudoLabel::Positive)
            .collect();
        let mut pool: Vec<usize> = (0..tokens.len())
            .filter(|&i| tokens[i].label == PseudoLabel::Unlabeled)
            .collect();
        if pool.is_empty() {
            pool = (0..tokens.len()).collect();
        }
        if pool.is_empty() {
            return Ok(());
        }
        let first: Vec<usize> = if positive.is_empty() {
            vec![pool[0]]
        } else {
            positive
        };
        let mut mean = vec![0.0f64; dim];
        for &i in &first {
            for (m, &v) in mean.iter_mut().zip(&z[i]) {
                *m += v as f64;
            }
        }
        let mean: Vec<f32> = mean
            .iter()
            .map(|&m| (m / first.len() as f64) as f32)
            .collect();
        if !self.prototypes.set(0, &mean) {
            self.prototypes.set(0, &z[first[0]]);
        }
        let dot = |a: &[f32], b: &[f32]| {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum::<f64>()
        };
        let mut closest: Vec<f64> = pool
            .iter()
            .map(|&i| dot(&z[i], self.prototypes.get(0)))
            .collect();
        for c in 1..self.config.classes {
            let mut best = 0;
            for j in 1..pool.len() {
                if closest[j] < closest[best] {
                    best = j;
                }
            }
            self.prototypes.set(c, &z[pool[best]]);
            for (j, &i) in pool.iter().enumerate() {
                closest[j] = closest[j].max(dot(&z[i], self.prototypes.get(c)));
            }
        }
        // spherical k-means with prototype 1 held on the positives
        let all: Vec<usize> = (0..tokens.len()).collect();
        for _ in 0..SEED_ITERATIONS {
            let mut sums = vec![vec![0.0f64; dim]; self.config.classes];
            for &i in &all {
                let c = self.prototypes.nearest(&z[i]);
                for (s, &v) in sums[c].iter_mut().zip(&z[i]) {
                    *s += v as f64;
                }
            }
            for (c, s) in sums.iter().enumerate().skip(1) {
                let v: Vec<f32> = s.iter().map(|&x| x as f32).collect();
                self.prototypes.set(c, &v);
            }
        }
        self.align_classifier();
        Ok(())
    }

    /// Identity hidden layer and prototype rows in the output layer, so the
    /// untrained classifier ranks classes by prototype similarity.
    fn align_classifier(&mut self) {
        let dim = self.config.encoder.dim;
        let k = self.config.classes;
        let scale = 1.0 / self.config.schedules.temperature as f32;
        let p = self.classifier.params.tensors_mut();
        p[0] = Tensor::from_fn(dim, dim, |r, c| if r == c { 1.0 } else { 0.0 });
        p[1] = Tensor::zeros(1, dim);
        let protos = self.prototypes.vectors();
        p[2] = Tensor::from_fn(dim, k, |r, c| protos[c][r] * scale);
        p[3] = Tensor::zeros(1, k);
    }

    /// Runs all configured epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        tokens: &mut [PatchToken],
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        if self.config.prototype_init == PrototypeInit::Data {
            self.seed_prototypes(tokens)?;
        }
        let mut rows = Vec::with_capacity(self.config.schedules.epochs);
        for e in 1..=self.config.schedules.epochs {
            let m = self.train_epoch(tokens, e)?;
            on_epoch(&m);
            rows.push(m);
        }
        Ok(rows)
    }
}
