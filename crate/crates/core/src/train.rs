//! Metric-learning loop: one sampled timepoint per subject per epoch, the
//! standard-form triplet loss per batch, AdamW on both encoders with
//! separate step-decayed learning rates.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datakit::{Dataset, PairedSample, Split};
use crate::error::{MrisError, Result};
use crate::metric::{sample_epoch, triplet_loss_batch, EmbeddingPairBatch, LossConfig};
use crate::numerics::{
    Activation, AdamW, AdamWConfig, EncoderGrads, EncoderParams, LrSchedule, OptimizerState, Tape,
};
use crate::pipeline::Preprocess;
use crate::types::RecordId;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: LossConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub query_lr: f64,
    pub target_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 32,
            hidden: vec![64],
            activation: Activation::Relu,
            loss: LossConfig::default(),
            batch_size: 64,
            epochs: 200,
            query_lr: 1e-3,
            target_lr: 1e-5,
            decay_factor: 0.8,
            decay_every: 150,
            adamw: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(MrisError::Config(format!(
                "batch size must be >= 2 for the triplet loss, got {}",
                self.batch_size
            )));
        }
        if self.embed_dim < 2 {
            return Err(MrisError::Config("embedding dimension must be >= 2".into()));
        }
        if self.epochs == 0 {
            return Err(MrisError::Config("epochs must be >= 1".into()));
        }
        self.loss.validate()?;
        self.adamw.validate()?;
        LrSchedule::new(self.query_lr, self.decay_factor, self.decay_every)?;
        LrSchedule::new(self.target_lr, self.decay_factor, self.decay_every)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub loss_per_term: f64,
    pub active_fraction: f64,
    pub query_lr: f64,
    pub target_lr: f64,
    pub batches: usize,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedEncoders {
    pub query: EncoderParams<f32>,
    pub target: EncoderParams<f32>,
    pub history: Vec<EpochLog>,
}

pub fn init_encoders(
    cfg: &TrainConfig,
    query_dim: usize,
    target_dim: usize,
) -> Result<(EncoderParams<f32>, EncoderParams<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q = EncoderParams::mlp(query_dim, &cfg.hidden, cfg.embed_dim, cfg.activation, &mut rng)?;
    let t = EncoderParams::mlp(target_dim, &cfg.hidden, cfg.embed_dim, cfg.activation, &mut rng)?;
    Ok((q, t))
}

/// Trains on the `train_db` split of `dataset`.
pub fn train(dataset: &Dataset, prep: &Preprocess, cfg: &TrainConfig) -> Result<TrainedEncoders> {
    train_with(dataset, prep, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    dataset: &Dataset,
    prep: &Preprocess,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainedEncoders> {
    cfg.validate()?;
    let index = dataset.subject_index(Split::TrainDb);
    if index.len() < 2 {
        return Err(MrisError::Constraint(
            "training needs at least 2 subjects in the train_db split".into(),
        ));
    }
    let lookup: HashMap<&RecordId, &PairedSample> =
        dataset.samples_in(Split::TrainDb).into_iter().map(|s| (&s.id, s)).collect();

    // Inputs are fixed across epochs; preprocess once.
    let mut inputs: HashMap<RecordId, (Vec<f64>, Vec<f64>)> = HashMap::with_capacity(lookup.len());
    for (id, s) in &lookup {
        inputs.insert((*id).clone(), (prep.query_input(s)?, prep.target_input(s, dataset.shape)?));
    }

    let target_dim = prep.target_dim(dataset.shape)?;
    let (mut query, mut target) = init_encoders(cfg, dataset.query_dim, target_dim)?;
    let mut q_state = OptimizerState::new(cfg.adamw, &query)?;
    let mut t_state = OptimizerState::new(cfg.adamw, &target)?;
    let q_sched = LrSchedule::new(cfg.query_lr, cfg.decay_factor, cfg.decay_every)?;
    let t_sched = LrSchedule::new(cfg.target_lr, cfg.decay_factor, cfg.decay_every)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let plan = sample_epoch(&index, cfg.batch_size, cfg.seed, epoch)?;
        let (q_lr, t_lr) = (q_sched.lr(epoch), t_sched.lr(epoch));
        let mut loss = 0.0;
        let mut terms = 0usize;
        let mut active = 0usize;
        for batch in &plan.batches {
            let step = batch_step(&query, &target, batch, &inputs, &cfg.loss)?;
            loss += step.loss;
            terms += step.terms;
            active += step.active;
            AdamW::step(&mut query, &step.query_grads, &mut q_state, q_lr)?;
            AdamW::step(&mut target, &step.target_grads, &mut t_state, t_lr)?;
        }
        if !loss.is_finite() {
            return Err(MrisError::NonFinite("training loss"));
        }
        let log = EpochLog {
            epoch,
            loss,
            loss_per_term: loss / terms.max(1) as f64,
            active_fraction: active as f64 / terms.max(1) as f64,
            query_lr: q_lr,
            target_lr: t_lr,
            batches: plan.batches.len(),
            samples: plan.num_samples(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.6} ({:.6}/term, {:.1}% active)",
            log.loss,
            log.loss_per_term,
            100.0 * log.active_fraction
        );
        on_epoch(&log);
        history.push(log);
    }
    Ok(TrainedEncoders {
        query,
        target,
        history,
    })
}

struct BatchStep {
    loss: f64,
    terms: usize,
    active: usize,
    query_grads: EncoderGrads,
    target_grads: EncoderGrads,
}

fn batch_step(
    query: &EncoderParams<f32>,
    target: &EncoderParams<f32>,
    batch: &[RecordId],
    inputs: &HashMap<RecordId, (Vec<f64>, Vec<f64>)>,
    loss_cfg: &LossConfig,
) -> Result<BatchStep> {
    // Ordered collect keeps the reduction order independent of thread count.
    let forward: Vec<((Vec<f64>, Tape), (Vec<f64>, Tape))> = batch
        .par_iter()
        .map(|id| {
            let (x, y) = &inputs[id];
            Ok((query.forward(x)?, target.forward(y)?))
        })
        .collect::<Result<_>>()?;

    let pair = EmbeddingPairBatch {
        queries: forward.iter().map(|f| f.0 .0.clone()).collect(),
        targets: forward.iter().map(|f| f.1 .0.clone()).collect(),
        subject_ids: batch.iter().map(|id| id.subject.clone()).collect(),
    };
    let out = triplet_loss_batch(&pair, loss_cfg)?;

    let per_sample: Vec<(EncoderGrads, EncoderGrads)> = forward
        .par_iter()
        .enumerate()
        .map(|(i, ((_, q_tape), (_, t_tape)))| {
            let (qg, _) = query.backward(q_tape, &out.query_grads[i])?;
            let (tg, _) = target.backward(t_tape, &out.target_grads[i])?;
            Ok((qg, tg))
        })
        .collect::<Result<_>>()?;

    let mut query_grads = EncoderGrads::zeros_like(query);
    let mut target_grads = EncoderGrads::zeros_like(target);
    for (qg, tg) in &per_sample {
        query_grads.add_assign(qg);
        target_grads.add_assign(tg);
    }
    Ok(BatchStep {
        loss: out.loss,
        terms: out.terms,
        active: out.active_terms,
        query_grads,
        target_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{generate_synthetic, GeneratorConfig};

    fn tiny() -> Dataset {
        generate_synthetic(&GeneratorConfig {
            num_subjects: 30,
            latent_dim: 3,
            query_dim: 8,
            height: 2,
            width: 4,
            seed: 1,
            ..GeneratorConfig::default()
        })
        .unwrap()
        .dataset
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            embed_dim: 4,
            hidden: vec![8],
            batch_size: 8,
            epochs: 5,
            query_lr: 1e-2,
            target_lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_size_one_is_rejected() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..quick()
        };
        assert!(matches!(
            train(&tiny(), &Preprocess::default(), &cfg),
            Err(MrisError::Config(_))
        ));
    }

    #[test]
    fn history_is_finite_and_training_is_deterministic() {
        let ds = tiny();
        let a = train(&ds, &Preprocess::default(), &quick()).unwrap();
        let b = train(&ds, &Preprocess::default(), &quick()).unwrap();
        assert_eq!(a.history.len(), 5);
        assert!(a.history.iter().all(|h| h.loss.is_finite()));
        assert_eq!(a.query, b.query);
        assert_eq!(a.target, b.target);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn thread_count_does_not_change_the_result() {
        let ds = tiny();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&ds, &Preprocess::default(), &quick()).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.query, four.query);
        assert_eq!(one.history, four.history);
    }
}
