use rand::Rng;
use serde::{Deserialize, Serialize};
use travgrid_nn::init::trunc_normal;
use travgrid_nn::{Graph, ParamSet, Scalar, Tensor, Var};

use super::ops::{masked_predict, MaskedPrediction};
use crate::encoder::Encoder;
use crate::error::{CoreError, Result};

/// Two-layer head `D -> D -> K` with GELU and a softmax output.
#[derive(Clone, Debug)]
pub struct Classifier<T> {
    pub params: ParamSet<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, classes: usize, std: f64, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        params.push("cls.w1", trunc_normal(dim, dim, std, rng));
        params.push("cls.b1", Tensor::zeros(1, dim));
        params.push("cls.w2", trunc_normal(dim, classes, std, rng));
        params.push("cls.b2", Tensor::zeros(1, classes));
        Classifier { params }
    }

    pub fn from_params(dim: usize, classes: usize, params: ParamSet<T>) -> Result<Self> {
        let shapes = [(dim, dim), (1, dim), (dim, classes), (1, classes)];
        if params.len() != 4
            || params
                .tensors()
                .iter()
                .zip(shapes)
                .any(|(t, s)| t.shape() != s)
        {
            return Err(CoreError::Shape(format!(
                "classifier checkpoint does not match dim={dim} classes={classes}"
            )));
        }
        Ok(Classifier { params })
    }

    pub fn classes(&self) -> usize {
        self.params.get(3).cols()
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    /// Class probabilities, one row per embedding.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], z: Var) -> Result<Var> {
        let h = g.matmul(z, p[0])?;
        let h = g.add_row(h, p[1])?;
        let a = g.gelu(h);
        let l = g.matmul(a, p[2])?;
        let l = g.add_row(l, p[3])?;
        Ok(g.softmax(l))
    }

    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        Classifier {
            params: self.params.cast(),
        }
    }
}

/// Which terms drive the parameter update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Cross-entropy plus weighted contrastive term.
    Sum,
    /// Cross-entropy only.
    Cls,
    /// Contrastive term only; the classifier is not trained.
    Cont,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(LossMode::Sum),
            "cls" => Ok(LossMode::Cls),
            "cont" => Ok(LossMode::Cont),
            other => Err(CoreError::Config(format!(
                "unknown loss mode '{other}' (expected sum, cls or cont)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Sum => "sum",
            LossMode::Cls => "cls",
            LossMode::Cont => "cont",
        }
    }
}

/// Key embeddings and predicted classes the contrastive term compares against.
pub struct QueueView<'a, T> {
    pub embeddings: &'a Tensor<T>,
    pub labels: &'a [usize],
}

pub struct WindowLoss {
    /// Scalar driving the update, absent when no term is active.
    pub total: Option<Var>,
    pub cls: f64,
    /// `None` while the contrastive term is inactive.
    pub cont: Option<f64>,
    pub embeddings: Var,
    pub probs: Var,
    pub predictions: Vec<MaskedPrediction>,
}

/// Builds the per-window objective on the tape: query embeddings, class
/// probabilities, masked predictions, the mean cross-entropy against the
/// soft labels and, when a queue is given, the mean contrastive term.
#[allow(clippy::too_many_arguments)]
pub fn window_loss<T: Scalar>(
    g: &mut Graph<T>,
    encoder: &Encoder<T>,
    enc_vars: &[Var],
    classifier: &Classifier<T>,
    cls_vars: &[Var],
    x: Var,
    candidates: &[Vec<f32>],
    soft: Tensor<T>,
    queue: Option<QueueView<'_, T>>,
    temperature: f64,
    weight: f64,
    mode: LossMode,
) -> Result<WindowLoss> {
    let z = encoder.forward(g, enc_vars, x)?;
    let probs = classifier.forward(g, cls_vars, z)?;
    let pv = g.value(probs);
    if candidates.len() != pv.rows() {
        return Err(CoreError::Shape(format!(
            "{} candidate sets for {} tokens",
            candidates.len(),
            pv.rows()
        )));
    }
    let predictions: Vec<MaskedPrediction> = (0..pv.rows())
        .map(|r| {
            let row: Vec<f32> = pv.row(r).iter().map(|v| v.as_f64() as f32).collect();
            masked_predict(&row, &candidates[r])
        })
        .collect();
    let ce = g.soft_cross_entropy(probs, soft)?;
    let cls = g.value(ce).item().as_f64();

    let mut cont_var = None;
    if let Some(q) = queue.filter(|q| !q.labels.is_empty()) {
        let qv = g.constant(q.embeddings.clone());
        let sims = g.matmul_nt(z, qv)?;
        let logits = g.scale(sims, T::lit(1.0 / temperature));
        let mut mask = Vec::with_capacity(predictions.len() * q.labels.len());
        for p in &predictions {
            mask.extend(q.labels.iter().map(|&l| l == p.class));
        }
        cont_var = Some(g.masked_nll(logits, mask)?);
    }
    let cont = cont_var.map(|v| g.value(v).item().as_f64());
    let total = match (mode, cont_var) {
        (LossMode::Sum, Some(c)) => {
            let wc = g.scale(c, T::lit(weight));
            Some(g.add(ce, wc)?)
        }
        (LossMode::Sum, None) | (LossMode::Cls, _) => Some(ce),
        (LossMode::Cont, c) => c,
    };
    Ok(WindowLoss {
        total,
        cls,
        cont,
        embeddings: z,
        probs,
        predictions,
    })
}
