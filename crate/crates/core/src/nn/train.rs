use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;

use super::{argmax, backward, cross_entropy, forward, forward_tape, read_weights, weight_gradients, write_weights, CnnModel, Dataset, Mnist};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Plain mini-batch SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Training samples held out to decide when to stop.
    pub validation: usize,
    pub target_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, batch: 64, max_epochs: 12, validation: 5000, target_accuracy: 0.985 }
    }
}

fn accuracy(model: &CnnModel, data: &Dataset) -> Result<f64> {
    let mut correct = 0;
    for (x, y) in data.batches(500) {
        let logits = forward(model, &x)?;
        correct += logits.column_iter().zip(&y).filter(|(c, y)| argmax(c.as_view()) == **y as usize).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains until the held-out accuracy reaches the target, then rounds the
/// weights to `f32` so the model equals its saved form.
pub fn train(data: &Dataset, cfg: &TrainConfig, seeds: &SeedStream) -> Result<CnnModel> {
    if cfg.validation >= data.len() {
        return Err(Error::InvalidArgument("validation split larger than the training set".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seeds.substream("train-split", 0));
    let val = data.subset(&order[..cfg.validation]);
    let mut pool = order[cfg.validation..].to_vec();
    let mut model = CnnModel::init(&mut seeds.substream("train-init", 0));
    for epoch in 0..cfg.max_epochs {
        pool.shuffle(&mut seeds.substream("train-epoch", epoch as u64));
        for idx in pool.chunks(cfg.batch) {
            let (x, y) = data.batch_of(idx);
            let tape = forward_tape(&model, &x, None)?;
            let (loss, dlogits) = cross_entropy(tape.logits(), &y);
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence(format!("non-finite loss in epoch {epoch}")));
            }
            let deltas = backward(&model, &tape, dlogits);
            for (layer, (dw, db)) in model.layers.iter_mut().zip(weight_gradients(&tape, &deltas)) {
                layer.w -= dw * cfg.learning_rate;
                layer.b -= db * cfg.learning_rate;
            }
        }
        if accuracy(&model, &val)? >= cfg.target_accuracy {
            for l in &mut model.layers {
                l.w.apply(|v| *v = *v as f32 as f64);
                l.b.apply(|v| *v = *v as f32 as f64);
            }
            return Ok(model);
        }
    }
    Err(Error::TrainingDivergence(format!(
        "held-out accuracy below {} after {} epochs",
        cfg.target_accuracy, cfg.max_epochs
    )))
}

/// Loads `path` if present, otherwise trains on `mnist.train` and saves.
pub fn train_or_load(path: &Path, mnist: Option<&Mnist>, cfg: &TrainConfig, seeds: &SeedStream) -> Result<CnnModel> {
    if path.exists() {
        return read_weights(BufReader::new(File::open(path)?));
    }
    let Some(mnist) = mnist else {
        return Err(Error::DataMissing(path.to_path_buf()));
    };
    let model = train(&mnist.train, cfg, seeds)?;
    write_weights(&model, BufWriter::new(File::create(path)?))?;
    Ok(model)
}
