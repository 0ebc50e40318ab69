//! Training configuration and the minibatch training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::checkpoint::Checkpoint;
use crate::data::dataset::item_seed;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::latent::standard_normal;
use crate::loss::{LossComponents, LossWeights};
use crate::model::{bind, forward, stack, MinMax, ModelConfig, ModelParams};
use crate::optim::{adamw_step, AdamState, AdamWConfig};
use crate::real::{Precision, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub image_size: usize,
    pub precision: Precision,
    pub loss: LossWeights,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(64)
    }
}

impl TrainConfig {
    /// Full-scale hyperparameters and network.
    pub fn reference(image_size: usize) -> Self {
        let adam = AdamWConfig::default();
        TrainConfig {
            learning_rate: adam.learning_rate,
            batch_size: 128,
            epochs: 100,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            image_size,
            precision: Precision::F64,
            loss: LossWeights::default(),
            model: ModelConfig::reference(image_size),
        }
    }

    /// Reduced run for a single CPU core. The TV weight is lowered because
    /// at 1.0 the smoothness penalty outweighs the reconstruction gain of
    /// any non-constant field on [0, 1]-normalized slices.
    pub fn desk(image_size: usize) -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 16,
            epochs: 30,
            precision: Precision::F32,
            loss: LossWeights {
                tv: 0.01,
                ..LossWeights::default()
            },
            model: ModelConfig::desk(image_size),
            ..Self::reference(image_size)
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer().validate()?;
        self.loss.validate()?;
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.image_size != self.model.image_size {
            return Err(Error::Config(format!(
                "image_size {} differs from model.image_size {}",
                self.image_size, self.model.image_size
            )));
        }
        Ok(())
    }

    /// Parses TOML; missing fields keep the desk defaults and
    /// `model.image_size` follows `image_size` unless given explicitly.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let size = match value.get("image_size") {
            Some(v) => v
                .as_integer()
                .and_then(|i| usize::try_from(i).ok())
                .ok_or_else(|| Error::Config("image_size must be a non-negative integer".into()))?,
            None => 64,
        };
        let mut base = toml::Table::try_from(Self::desk(size)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, value);
        let cfg: TrainConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Input and reference mapped to the network's intensity range with the
/// input's min-max transform.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub x: Image,
    pub y: Image,
}

impl TrainPair {
    pub fn normalized(x: &Image, y: &Image) -> Result<Self> {
        if !x.same_shape(y) {
            return Err(Error::dim("input and reference differ in shape"));
        }
        let n = MinMax::fit(x);
        Ok(TrainPair {
            x: n.apply(x),
            y: n.apply(y),
        })
    }
}

/// Epoch means of the weighted loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub kl: f64,
    pub sparsity: f64,
    pub tv: f64,
    pub mse: f64,
    pub total: f64,
}

impl EpochRecord {
    fn from_mean(epoch: usize, c: &LossComponents, w: &LossWeights) -> Self {
        let wc = c.weighted(w);
        EpochRecord {
            epoch,
            kl: wc.kl,
            sparsity: wc.sparsity,
            tv: wc.tv,
            mse: wc.mse,
            total: c.total(w),
        }
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub state: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(config.model.clone(), &mut ChaCha8Rng::seed_from_u64(config.seed))?;
        let shapes: Vec<Vec<usize>> = params.net.leaves().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        Ok(Trainer {
            state: AdamState::new(&refs),
            config,
            params,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Continues from a checkpoint; the run's epoch target comes from
    /// `config`, everything else from the checkpoint.
    pub fn resume(config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ck.params.config != config.model {
            return Err(Error::Config(
                "checkpoint model differs from the configured model".into(),
            ));
        }
        let state = match ck.moments {
            Some(s) => s,
            None => {
                let mut t = Self::new(config.clone())?;
                t.state.step = ck.step;
                t.state
            }
        };
        Ok(Trainer {
            config,
            params: ck.params,
            state,
            epoch: ck.epoch,
            history: ck.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            epoch: self.epoch,
            step: self.state.step,
            history: self.history.clone(),
            moments: Some(self.state.clone()),
        }
    }

    /// One optimizer update on `batch`; returns the unweighted terms before
    /// the update.
    pub fn step(&mut self, batch: &[&TrainPair], rng: &mut ChaCha8Rng) -> Result<LossComponents> {
        match self.config.precision {
            Precision::F64 => self.step_in::<f64>(batch, rng),
            Precision::F32 => self.step_in::<f32>(batch, rng),
        }
    }

    fn step_in<T: Real>(&mut self, batch: &[&TrainPair], rng: &mut ChaCha8Rng) -> Result<LossComponents> {
        let (comps, grads) = loss_and_grads::<T>(&self.params, batch, rng, &self.config.loss)?;
        if let Some(name) = comps.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "loss term {name} at step {}",
                self.state.step + 1
            )));
        }
        let mut leaves: Vec<&mut Tensor> = self.params.net.leaves_mut().into_iter().map(|(_, t)| t).collect();
        adamw_step(&mut leaves, &grads, &mut self.state, &self.config.optimizer())?;
        if let Some(name) = self.params.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "parameter {name} after step {}",
                self.state.step
            )));
        }
        Ok(comps)
    }

    /// Shuffles, runs every minibatch once and records the epoch mean.
    pub fn run_epoch(&mut self, data: &[TrainPair]) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(self.config.seed, self.epoch as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut acc = LossComponents::default();
        let mut steps = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainPair> = chunk.iter().map(|&i| &data[i]).collect();
            let c = self.step(&batch, &mut rng)?;
            acc.kl += c.kl;
            acc.sparsity += c.sparsity;
            acc.tv += c.tv;
            acc.mse += c.mse;
            steps += 1;
        }
        let n = steps as f64;
        let mean = LossComponents {
            kl: acc.kl / n,
            sparsity: acc.sparsity / n,
            tv: acc.tv / n,
            mse: acc.mse / n,
        };
        self.epoch += 1;
        let rec = EpochRecord::from_mean(self.epoch, &mean, &self.config.loss);
        self.history.push(rec);
        Ok(rec)
    }

    /// Runs until `config.epochs` epochs are complete, writing a checkpoint
    /// after each one when `checkpoint` is given.
    pub fn run(
        &mut self,
        data: &[TrainPair],
        checkpoint: Option<&Path>,
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(data)?;
            if let Some(path) = checkpoint {
                self.checkpoint().write(path)?;
            }
            on_epoch(self, &rec)?;
        }
        Ok(())
    }
}

/// Unweighted loss terms and parameter gradients (in canonical leaf order)
/// for one batch, drawing one posterior sample per example.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams,
    batch: &[&TrainPair],
    rng: &mut ChaCha8Rng,
    w: &LossWeights,
) -> Result<(LossComponents, Vec<Tensor>)> {
    let eps: Vec<T> = standard_normal(rng, batch.len() * params.config.latent_dim)
        .into_iter()
        .map(T::of)
        .collect();
    let mut g = Graph::<T>::new();
    let net = bind(&mut g, &params.net, true);
    let xs: Vec<&Image> = batch.iter().map(|p| &p.x).collect();
    let ys: Vec<&Image> = batch.iter().map(|p| &p.y).collect();
    let x = g.constant(stack(&xs)?);
    let y = g.constant(stack(&ys)?);
    let e = g.constant(Tensor::new(&[batch.len(), params.config.latent_dim], eps)?);
    let terms = forward::training_terms(&mut g, &net, &params.config, x, y, e, w)?;
    let val = |v| g.value(v).item().map(Real::to_f64);
    let comps = LossComponents {
        kl: val(terms.kl)?,
        sparsity: val(terms.sparsity)?,
        tv: val(terms.tv)?,
        mse: val(terms.mse)?,
    };
    if comps.first_non_finite().is_some() {
        return Ok((comps, Vec::new()));
    }
    g.backward(terms.total)?;
    let grads = net
        .leaves()
        .into_iter()
        .map(|(_, &v)| {
            let shape = g.value(v).shape().to_vec();
            g.take_grad(v)
                .map(|t| t.cast::<f64>())
                .unwrap_or_else(|| Tensor::zeros(&shape))
        })
        .collect();
    Ok((comps, grads))
}

/// Trains from scratch to `config.epochs`.
pub fn train(data: &[TrainPair], config: TrainConfig, checkpoint: Option<&Path>) -> Result<Trainer> {
    let mut t = Trainer::new(config)?;
    t.run(data, checkpoint, |_, _| Ok(()))?;
    Ok(t)
}

/// Structured loss-history lines, one JSON object per epoch.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_and_defaults() {
        let cfg = TrainConfig::from_toml("epochs = 3\nimage_size = 32\n[loss]\nkl = 2.0\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.model.image_size, 32);
        assert_eq!(cfg.loss.kl, 2.0);
        assert_eq!(cfg.loss.tv, 0.01);
        assert_eq!(cfg.batch_size, 16);
        let back = TrainConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::from_toml("epochz = 3").is_err());
        assert!(TrainConfig::from_toml("image_size = 63").is_err());
        assert!(TrainConfig::from_toml("learning_rate = 0.0").is_err());
        assert!(TrainConfig::from_toml("batch_size = 0").is_err());
    }

    #[test]
    fn reference_hyperparameters() {
        let c = TrainConfig::reference(256);
        assert_eq!(
            (c.learning_rate, c.batch_size, c.epochs, c.weight_decay),
            (1e-4, 128, 100, 1e-2)
        );
        let d = TrainConfig::desk(64);
        assert_eq!((d.batch_size, d.epochs), (16, 30));
    }
}
