//! Optimization loop, evaluation and checkpoints.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, TensorRecord, FORMAT_VERSION, MAGIC};
pub use optim::{
    adam_step, clip_gradients, gradient_norm, Moments, OptimizerState, DEFAULT_CLIP_NORM,
    DEFAULT_LEARNING_RATE,
};

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use crate::ctc::{
    best_path_decode, ctc_loss, lexicon_match, required_frames, Alphabet, LabelSequence, Lexicon,
};
use crate::data::{batch_images, evaluation_filter, Sample};
use crate::error::{Error, Result};
use crate::init::RngSeed;
use crate::model::{ArchitectureDescriptor, Model};
use crate::tensor::{no_grad, Mode};

/// Training hyperparameters and output locations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchitectureDescriptor,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Evaluate, log and checkpoint every this many steps (and at the end).
    pub eval_every: u64,
    /// Seeds both initialization and batch order.
    pub seed: RngSeed,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchitectureDescriptor::standard(),
            steps: 2000,
            batch_size: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: DEFAULT_CLIP_NORM,
            eval_every: 250,
            seed: RngSeed(1),
            checkpoint: None,
            metrics: None,
        }
    }
}

/// Per-step progress handed to the observer.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Mean CTC loss per sample in the batch.
    pub loss: f64,
    pub clip_scale: f64,
    pub skipped: usize,
}

/// Evaluation snapshot taken during training.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub step: u64,
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    /// Samples dropped because their label cannot fit the output length.
    pub infeasible: usize,
}

/// Sample indices of the batch at `step`: consecutive slices of per-epoch
/// permutations, so resuming at a step reproduces the same order.
fn batch_indices(n: usize, batch: usize, step: u64, seed: RngSeed, cache: &mut Option<(u64, Vec<usize>)>) -> Vec<usize> {
    let start = step as usize * batch;
    (start..start + batch)
        .map(|p| {
            let epoch = (p / n) as u64;
            if cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut seed.derive(0x5EED_0000 + epoch).rng());
                *cache = Some((epoch, perm));
            }
            cache.as_ref().unwrap().1[p % n]
        })
        .collect()
}

/// Runs `config.steps` optimizer steps, starting from `resume` when given.
///
/// Each step is forward, CTC loss (mean over the batch), backward, global
/// norm clipping and Adam. `eval` is scored every `eval_every` steps; the
/// score and the mean loss since the previous evaluation are appended to the
/// metrics log and a checkpoint is written.
pub fn train(
    config: &TrainConfig,
    train_set: &[Sample],
    eval_set: &[Sample],
    resume: Option<Checkpoint>,
    observer: &mut dyn FnMut(&StepReport),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.batch_size == 0 || config.eval_every == 0 {
        return Err(Error::InvalidArgument("batch_size and eval_every must be positive".into()));
    }
    let (model, mut optimizer, mut step) = match resume {
        Some(ckpt) => {
            if ckpt.arch != config.arch {
                return Err(Error::Checkpoint("checkpoint architecture differs from the configured one".into()));
            }
            let model = ckpt.restore()?;
            let opt = ckpt
                .optimizer
                .clone()
                .unwrap_or_else(|| OptimizerState::new(&model.parameters(), config.learning_rate));
            (model, opt, ckpt.step)
        }
        None => {
            let model = Model::new(config.arch.clone(), config.seed)?;
            let opt = OptimizerState::new(&model.parameters(), config.learning_rate);
            (model, opt, 0)
        }
    };
    optimizer.learning_rate = config.learning_rate;
    let params = model.parameters();
    let frames = config.arch.sequence_length();
    let mut infeasible = 0;
    let mut losses = Vec::new();
    let mut evals = Vec::new();
    let mut window = Vec::new();
    let mut cache = None;

    while step < config.steps {
        let idx = batch_indices(train_set.len(), config.batch_size, step, config.seed, &mut cache);
        let (batch, skipped): (Vec<&Sample>, Vec<&Sample>) = idx
            .iter()
            .map(|&i| &train_set[i])
            .partition(|s| required_frames(&s.label) <= frames);
        if !skipped.is_empty() {
            infeasible += skipped.len();
            for s in &skipped {
                eprintln!(
                    "warning: skipping sample with label of length {} (needs {} frames, model has {frames})",
                    s.label.len(),
                    required_frames(&s.label)
                );
            }
        }
        step += 1;
        if batch.is_empty() {
            continue;
        }
        let images = batch_images(&batch);
        let targets: Vec<LabelSequence> = batch.iter().map(|s| s.label.clone()).collect();
        let logits = model.logits(&images, Mode::Train)?;
        let loss = ctc_loss(&logits, &targets)?.scale(1.0 / batch.len() as f64);
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        model.zero_grad();
        loss.backward()?;
        let clip_scale = clip_gradients(&params, config.clip_norm)?;
        adam_step(&params, &mut optimizer)?;
        losses.push(value);
        window.push(value);
        observer(&StepReport {
            step,
            loss: value,
            clip_scale,
            skipped: skipped.len(),
        });

        if step % config.eval_every == 0 || step == config.steps {
            let accuracy = if eval_set.is_empty() {
                f64::NAN
            } else {
                evaluate(&model, eval_set, None)?.accuracy()
            };
            let mean_loss = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            if let Some(path) = &config.metrics {
                let mut f = OpenOptions::new().create(true).append(true).open(path)?;
                writeln!(f, "{step}\t{mean_loss}\t{accuracy}")?;
            }
            if let Some(path) = &config.checkpoint {
                Checkpoint::capture(&model, step, Some(&optimizer)).save(path)?;
            }
            evals.push(EvalPoint {
                step,
                loss: mean_loss,
                accuracy,
            });
        }
    }
    model.zero_grad();
    Ok(TrainOutcome {
        model,
        optimizer,
        step,
        losses,
        evals,
        infeasible,
    })
}

/// Decoding result for one evaluated image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub truth: LabelSequence,
    pub free: LabelSequence,
    pub lexicon: Option<LabelSequence>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Samples passing the evaluation filter.
    pub evaluated: usize,
    /// Samples the filter removed.
    pub excluded: usize,
    pub correct: usize,
    pub lexicon_correct: Option<usize>,
    /// Images whose unconstrained prediction was empty but were still mapped
    /// to the nearest lexicon word.
    pub empty_under_lexicon: usize,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.evaluated as f64
    }

    pub fn lexicon_accuracy(&self) -> Option<f64> {
        self.lexicon_correct.map(|c| c as f64 / self.evaluated as f64)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "evaluated={} excluded={} lexicon_free_accuracy={:.6}",
            self.evaluated,
            self.excluded,
            self.accuracy()
        );
        if let Some(a) = self.lexicon_accuracy() {
            s.push_str(&format!(
                " lexicon_accuracy={a:.6} empty_under_lexicon={}",
                self.empty_under_lexicon
            ));
        }
        s
    }
}

const EVAL_BATCH: usize = 32;

/// Sequence accuracy on the samples passing the evaluation filter, in infer
/// mode. With a lexicon, also the lexicon-constrained accuracy.
pub fn evaluate(model: &Model, samples: &[Sample], lexicon: Option<&Lexicon>) -> Result<EvalReport> {
    let alphabet = Alphabet::alphanumeric();
    if model.arch().num_classes != alphabet.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "model has {} classes, decoder expects {}",
            model.arch().num_classes,
            alphabet.num_classes()
        )));
    }
    let kept: Vec<&Sample> = samples.iter().filter(|s| evaluation_filter(&s.label)).collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument(
            "no samples left to evaluate after the evaluation filter".into(),
        ));
    }
    let mut report = EvalReport {
        evaluated: kept.len(),
        excluded: samples.len() - kept.len(),
        correct: 0,
        lexicon_correct: lexicon.map(|_| 0),
        empty_under_lexicon: 0,
        predictions: Vec::with_capacity(kept.len()),
    };
    for chunk in kept.chunks(EVAL_BATCH) {
        let dists = no_grad(|| model.forward(&batch_images(chunk), Mode::Infer))?;
        for (s, y) in chunk.iter().zip(&dists) {
            let free = best_path_decode(y);
            report.correct += usize::from(free == s.label);
            let lex = match lexicon {
                Some(l) => {
                    let m = lexicon_match(y, l)?;
                    report.empty_under_lexicon += usize::from(m.prediction.is_empty());
                    if m.word == s.label {
                        *report.lexicon_correct.as_mut().unwrap() += 1;
                    }
                    Some(m.word)
                }
                None => None,
            };
            report.predictions.push(Prediction {
                truth: s.label.clone(),
                free,
                lexicon: lex,
            });
        }
    }
    Ok(report)
}
