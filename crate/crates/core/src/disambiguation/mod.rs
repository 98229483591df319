//! Prototype-based contrastive label disambiguation: dual encoders, the
//! key/label queue, class prototypes, soft-label refinement, the training
//! loop and map inference.

mod infer;
mod model;
pub mod ops;
mod prototypes;
mod queue;
mod schedule;
mod trainer;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use travgrid_nn::checkpoint::{read_params, write_params};
use travgrid_nn::{Graph, ParamSet, Tensor};

pub use infer::{
    classify_tokens, infer_map, read_class_grid, write_class_grid, ClassGrid, UNKNOWN_CLASS,
};
pub use model::{window_loss, Classifier, LossMode, QueueView, WindowLoss};
pub use prototypes::PrototypeBank;
pub use queue::QueuePair;
pub use schedule::Schedules;
pub use trainer::{
    mean_unlabeled_entropy, metrics_csv, window_ranges, window_tensor, EpochMetrics, PrototypeInit,
    StepReport, TrainConfig, Trainer,
};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::Result;

/// Query encoder plus classifier: everything inference needs.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Encoder<f32>,
    pub classifier: Classifier<f32>,
}

impl Model {
    pub fn to_params(&self) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        for (n, t) in self
            .encoder
            .params
            .iter()
            .chain(self.classifier.params.iter())
        {
            p.push(n, t.clone());
        }
        p
    }

    /// Splits a combined table back into encoder and classifier, checking
    /// every shape against the configuration.
    pub fn from_params(
        config: EncoderConfig,
        classes: usize,
        params: ParamSet<f32>,
    ) -> Result<Self> {
        let (mut enc, mut cls) = (ParamSet::new(), ParamSet::new());
        for (n, t) in params.iter() {
            if n.starts_with("cls.") {
                cls.push(n, t.clone());
            } else {
                enc.push(n, t.clone());
            }
        }
        let dim = config.dim;
        Ok(Model {
            encoder: Encoder::from_params(config, enc)?,
            classifier: Classifier::from_params(dim, classes, cls)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_params(&mut w, &self.to_params())?;
        Ok(())
    }

    pub fn load(path: &Path, config: EncoderConfig, classes: usize) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::from_params(config, classes, read_params(&mut r)?)
    }

    /// Embeddings and class probabilities for one window of tokens.
    pub fn forward_window(&self, x: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut g = Graph::new();
        let ev = self.encoder.bind(&mut g, false);
        let cv = self.classifier.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let z = self.encoder.forward(&mut g, &ev, xv)?;
        let p = self.classifier.forward(&mut g, &cv, z)?;
        Ok((g.value(z).clone(), g.value(p).clone()))
    }
}
