//! Conventional fine-tuned classifier used as the non-episodic comparison:
//! the same backbone with a fresh linear head, trained with cross-entropy on
//! shuffled mini-batches of the budgeted training data.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassKey, PatchSource};
use crate::episode::BudgetedDataset;
use crate::metrics::{classification_metrics, ClassificationMetrics};
use crate::nn::{Adam, AdamConfig, Encoder, EncoderKind, Layer, Linear, Param, Tensor};
use crate::proto::{episode_loss_grad, patch_batch};
use crate::{seed, Error, Real, Result};

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub backbone: EncoderKind,
    pub n_classes: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("a classifier needs at least 2 classes".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        Ok(())
    }

    /// Optimizer steps for `n` training patches.
    pub fn steps_for(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

/// Smallest epoch count whose step total reaches `target_steps` (at least 1).
pub fn epochs_for_steps(n: usize, batch_size: usize, target_steps: usize) -> usize {
    let per_epoch = n.div_ceil(batch_size.max(1)).max(1);
    target_steps.div_ceil(per_epoch).max(1)
}

pub struct Classifier<T> {
    pub encoder: Encoder<T>,
    pub head: Linear<T>,
    /// Class of each output unit.
    pub classes: Vec<ClassKey>,
}

impl<T: Real> Classifier<T> {
    pub fn new(encoder: Encoder<T>, classes: Vec<ClassKey>, seed: u64) -> Self {
        let mut rng = seed::rng_from(&[seed, 0x4ead]);
        let head = Linear::new(encoder.dim, classes.len(), &mut rng);
        Self { encoder, head, classes }
    }

    fn label_of(&self, class: ClassKey) -> Result<usize> {
        self.classes
            .iter()
            .position(|&c| c == class)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("classifier has no output for class {class}")))
    }

    /// Eval-mode logits, `N × n_classes`.
    pub fn logits(&self, input: &Tensor<T>) -> Tensor<T> {
        self.head.forward(&self.encoder.forward(input))
    }

    pub fn predict(&self, input: &Tensor<T>) -> Vec<usize> {
        let k = self.classes.len();
        self.logits(input)
            .data
            .chunks_exact(k)
            .map(|row| {
                let mut best = 0;
                for j in 1..k {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.encoder.visit(f);
        self.head.visit("fc", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_mut(f);
        self.head.visit_mut("fc", f);
    }
}

pub struct TrainedClassifier<T> {
    pub classifier: Classifier<T>,
    pub steps: usize,
    pub loss_history: Vec<f64>,
}

/// Fine-tunes `encoder` plus a fresh head end to end on every patch of
/// `data`. Output units follow the class order of `data`.
pub fn train_baseline<T: Real, S: PatchSource>(
    config: &ClassifierConfig,
    encoder: Encoder<T>,
    data: &BudgetedDataset,
    source: &S,
) -> Result<TrainedClassifier<T>> {
    config.validate()?;
    if encoder.kind != config.backbone {
        return Err(Error::InvalidArgument(alloc::format!(
            "encoder is {}, config asks for {}",
            encoder.kind,
            config.backbone
        )));
    }
    let classes: Vec<ClassKey> = data.classes().collect();
    if classes.len() != config.n_classes {
        return Err(Error::InsufficientClasses {
            requested: config.n_classes,
            available: classes.len(),
        });
    }
    if let Some((&class, _)) = data.selected.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyClass(class));
    }
    let mut items: Vec<(usize, usize)> = Vec::with_capacity(data.len());
    for (label, class) in classes.iter().enumerate() {
        items.extend(data.selected[class].iter().map(|&r| (r, label)));
    }

    let mut model = Classifier::new(encoder, classes, config.seed);
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate));
    let mut loss_history = Vec::with_capacity(config.steps_for(items.len()));
    let n_classes = config.n_classes;
    for epoch in 0..config.epochs {
        let mut rng = seed::rng_from(&[config.seed, 0xba5e, epoch as u64]);
        items.shuffle(&mut rng);
        for batch in items.chunks(config.batch_size) {
            let step = loss_history.len();
            let records: Vec<usize> = batch.iter().map(|b| b.0).collect();
            let labels: Vec<usize> = batch.iter().map(|b| b.1).collect();
            let input: Tensor<T> = patch_batch(source, &records)?;
            model.encoder.zero_grad();
            model.head.visit_mut("", &mut |_, p| p.zero_grad());
            let features = model.encoder.forward_train(&input);
            let logits = model.head.forward_train(&features);
            let (loss, grad) = episode_loss_grad(&logits.data, n_classes, &labels).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss(step),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(step));
            }
            let d_features = model.head.backward(&Tensor::from_vec(logits.shape, grad));
            model.encoder.backward(&d_features);
            adam.step(|f| model.visit_mut(f));
            loss_history.push(loss.as_f64());
        }
    }
    Ok(TrainedClassifier {
        classifier: model,
        steps: loss_history.len(),
        loss_history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEvaluation {
    pub metrics: ClassificationMetrics,
    /// Every evaluated record index, in evaluation order.
    pub covered: Vec<usize>,
}

/// Single pass over every patch of `test`, in mini-batches.
pub fn evaluate_baseline<T: Real, S: PatchSource>(
    classifier: &Classifier<T>,
    test: &BudgetedDataset,
    source: &S,
    batch_size: usize,
) -> Result<BaselineEvaluation> {
    if test.is_empty() {
        return Err(Error::Empty("baseline evaluation needs test patches"));
    }
    let mut covered = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for (class, records) in &test.selected {
        let label = classifier.label_of(*class)?;
        covered.extend_from_slice(records);
        truth.extend(core::iter::repeat_n(label, records.len()));
    }
    let mut predictions = Vec::with_capacity(covered.len());
    for chunk in covered.chunks(batch_size.max(1)) {
        let input: Tensor<T> = patch_batch(source, chunk)?;
        predictions.extend(classifier.predict(&input));
    }
    Ok(BaselineEvaluation {
        metrics: classification_metrics(&predictions, &truth, classifier.classes.len())?,
        covered,
    })
}
