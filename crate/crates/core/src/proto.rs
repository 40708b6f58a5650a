//! Prototype computation, distance-based classification and the episodic
//! trainer / evaluator.
//!
//! Logits are negative squared Euclidean distances to the class prototypes:
//! `logit[b, k] = −‖q_b − c_k‖²`, where `c_k` is the mean support embedding
//! of class `k`. Training minimizes the mean query cross-entropy of those
//! logits, with gradients flowing through both the query embeddings and the
//! prototypes back into the encoder.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{ClassKey, PatchSource, CHANNELS};
use crate::episode::Episode;
use crate::metrics::{episode_metrics, EpisodeMetrics};
use crate::nn::{Adam, AdamConfig, Encoder, Tensor};
use crate::{Error, Real, Result};

/// Row-major `B×D` embeddings with their episode labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    pub dim: usize,
    pub vectors: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> EmbeddingBatch<T> {
    pub fn new(dim: usize, vectors: Vec<T>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() || dim == 0 {
            return Err(Error::Empty("embedding batch"));
        }
        if vectors.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: vectors.len(),
            });
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i / dim));
        }
        Ok(Self { dim, vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Eval-mode embedding of `input` (`B×3×S×S`, standardized).
pub fn embed<T: Real>(encoder: &Encoder<T>, input: &Tensor<T>, labels: Vec<usize>) -> Result<EmbeddingBatch<T>> {
    if input.batch() == 0 {
        return Err(Error::Empty("embedding input batch"));
    }
    let y = encoder.forward(input);
    EmbeddingBatch::new(encoder.dim, y.data, labels)
}

/// `n_way × D` class centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet<T> {
    pub n_way: usize,
    pub dim: usize,
    pub prototypes: Vec<T>,
    pub class_order: Vec<ClassKey>,
}

impl<T: Real> PrototypeSet<T> {
    pub fn row(&self, k: usize) -> &[T] {
        &self.prototypes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn with_class_order(mut self, classes: &[ClassKey]) -> Self {
        self.class_order = classes.to_vec();
        self
    }
}

/// Mean support embedding per label `0..n_way`.
pub fn compute_prototypes<T: Real>(support: &EmbeddingBatch<T>, n_way: usize) -> Result<PrototypeSet<T>> {
    let d = support.dim;
    let mut sums = vec![T::zero(); n_way * d];
    let mut counts = vec![0usize; n_way];
    for (i, &label) in support.labels.iter().enumerate() {
        if label >= n_way {
            return Err(Error::LabelOutOfRange { label, classes: n_way });
        }
        counts[label] += 1;
        for (s, &v) in sums[label * d..(label + 1) * d].iter_mut().zip(support.row(i)) {
            *s += v;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(k));
    }
    for (k, &c) in counts.iter().enumerate() {
        let inv = T::one() / T::from_usize(c);
        sums[k * d..(k + 1) * d].iter_mut().for_each(|v| *v *= inv);
    }
    Ok(PrototypeSet {
        n_way,
        dim: d,
        prototypes: sums,
        class_order: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification<T> {
    pub n_way: usize,
    /// `B×n_way`, negative squared distances.
    pub logits: Vec<T>,
    /// Row-wise softmax of `logits`.
    pub probabilities: Vec<T>,
    /// Arg-max per row; ties go to the lowest class index.
    pub predictions: Vec<usize>,
}

fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn softmax_row<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

pub fn classify_queries<T: Real>(queries: &EmbeddingBatch<T>, prototypes: &PrototypeSet<T>) -> Result<Classification<T>> {
    if queries.dim != prototypes.dim {
        return Err(Error::DimensionMismatch {
            expected: prototypes.dim,
            got: queries.dim,
        });
    }
    let n_way = prototypes.n_way;
    let b = queries.len();
    let mut logits = vec![T::zero(); b * n_way];
    let mut probabilities = vec![T::zero(); b * n_way];
    let mut predictions = Vec::with_capacity(b);
    for i in 0..b {
        let row = &mut logits[i * n_way..(i + 1) * n_way];
        for (k, z) in row.iter_mut().enumerate() {
            *z = -squared_distance(queries.row(i), prototypes.row(k));
        }
        let mut best = 0;
        for k in 1..n_way {
            if row[k] > row[best] {
                best = k;
            }
        }
        predictions.push(best);
        softmax_row(row, &mut probabilities[i * n_way..(i + 1) * n_way]);
    }
    Ok(Classification {
        n_way,
        logits,
        probabilities,
        predictions,
    })
}

fn check_logits<T: Real>(logits: &[T], n_way: usize, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty("loss needs at least one query"));
    }
    if logits.len() != labels.len() * n_way {
        return Err(Error::DimensionMismatch {
            expected: labels.len() * n_way,
            got: logits.len(),
        });
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i / n_way));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_way) {
        return Err(Error::LabelOutOfRange { label, classes: n_way });
    }
    Ok(())
}

/// Mean over queries of `−log softmax(logits)[label]`.
pub fn episode_loss<T: Real>(logits: &[T], n_way: usize, labels: &[usize]) -> Result<T> {
    check_logits(logits, n_way, labels)?;
    let mut total = T::zero();
    for (row, &y) in logits.chunks_exact(n_way).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        total += lse - row[y];
    }
    Ok(total / T::from_usize(labels.len()))
}

/// Loss and its gradient with respect to the logits.
pub fn episode_loss_grad<T: Real>(logits: &[T], n_way: usize, labels: &[usize]) -> Result<(T, Vec<T>)> {
    let loss = episode_loss(logits, n_way, labels)?;
    let inv_b = T::one() / T::from_usize(labels.len());
    let mut grad = vec![T::zero(); logits.len()];
    for ((row, g), &y) in logits.chunks_exact(n_way).zip(grad.chunks_exact_mut(n_way)).zip(labels) {
        softmax_row(row, g);
        g[y] -= T::one();
        g.iter_mut().for_each(|v| *v *= inv_b);
    }
    Ok((loss, grad))
}

/// Prototypical loss of an episode and its gradients with respect to every
/// support and query embedding.
pub struct ProtoLoss<T> {
    pub loss: T,
    pub d_support: Vec<T>,
    pub d_query: Vec<T>,
}

pub fn prototypical_loss<T: Real>(
    support: &EmbeddingBatch<T>,
    query: &EmbeddingBatch<T>,
    n_way: usize,
) -> Result<ProtoLoss<T>> {
    let protos = compute_prototypes(support, n_way)?;
    let cls = classify_queries(query, &protos)?;
    let (loss, g) = episode_loss_grad(&cls.logits, n_way, &query.labels)?;
    let d = support.dim;
    let mut d_query = vec![T::zero(); query.vectors.len()];
    let mut d_proto = vec![T::zero(); protos.prototypes.len()];
    let two = T::from_f64(2.0);
    for b in 0..query.len() {
        let q = query.row(b);
        for k in 0..n_way {
            let gk = g[b * n_way + k];
            let c = protos.row(k);
            for j in 0..d {
                let diff = two * gk * (q[j] - c[j]);
                d_query[b * d + j] -= diff;
                d_proto[k * d + j] += diff;
            }
        }
    }
    let mut counts = vec![0usize; n_way];
    support.labels.iter().for_each(|&l| counts[l] += 1);
    let mut d_support = vec![T::zero(); support.vectors.len()];
    for (i, &l) in support.labels.iter().enumerate() {
        let inv = T::one() / T::from_usize(counts[l]);
        for j in 0..d {
            d_support[i * d + j] = d_proto[l * d + j] * inv;
        }
    }
    Ok(ProtoLoss {
        loss,
        d_support,
        d_query,
    })
}

/// Standardized `[support; query]` batch for an episode.
pub fn episode_batch<T: Real, S: PatchSource>(source: &S, episode: &Episode) -> Result<Tensor<T>> {
    let records: Vec<usize> = episode
        .support
        .iter()
        .chain(&episode.query)
        .map(|i| i.record)
        .collect();
    patch_batch(source, &records)
}

/// Standardized batch of the given records, `N×3×S×S`.
pub fn patch_batch<T: Real, S: PatchSource>(source: &S, records: &[usize]) -> Result<Tensor<T>> {
    let s = source.patch_size();
    let mut t = Tensor::zeros([records.len(), CHANNELS, s, s]);
    for (n, &r) in records.iter().enumerate() {
        if r >= source.patch_count() {
            return Err(Error::UnknownPatch(alloc::format!("#{r}")));
        }
        source.write_patch(r, t.item_mut(n))?;
    }
    Ok(t)
}

fn split_embeddings<T: Real>(
    dim: usize,
    y: Vec<T>,
    support_labels: &[usize],
    query_labels: &[usize],
) -> Result<(EmbeddingBatch<T>, EmbeddingBatch<T>)> {
    let cut = support_labels.len() * dim;
    let mut support = y;
    let query = support.split_off(cut);
    Ok((
        EmbeddingBatch::new(dim, support, support_labels.to_vec())?,
        EmbeddingBatch::new(dim, query, query_labels.to_vec())?,
    ))
}

/// Train-mode forward and backward for one episode batch (`[support;
/// query]`). Parameter gradients are reset first, then hold `∂loss/∂θ`.
pub fn loss_and_gradients<T: Real>(
    encoder: &mut Encoder<T>,
    input: &Tensor<T>,
    support_labels: &[usize],
    query_labels: &[usize],
    n_way: usize,
) -> Result<T> {
    if input.batch() != support_labels.len() + query_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: support_labels.len() + query_labels.len(),
            got: input.batch(),
        });
    }
    encoder.zero_grad();
    let dim = encoder.dim;
    let y = encoder.forward_train(input);
    let (support, query) = split_embeddings(dim, y.data, support_labels, query_labels)?;
    let ProtoLoss {
        loss,
        mut d_support,
        d_query,
    } = prototypical_loss(&support, &query, n_way)?;
    d_support.extend(d_query);
    encoder.backward(&Tensor::from_vec([input.batch(), dim, 1, 1], d_support));
    Ok(loss)
}

/// Eval-mode prototypical loss of one episode batch.
pub fn episode_objective<T: Real>(
    encoder: &Encoder<T>,
    input: &Tensor<T>,
    support_labels: &[usize],
    query_labels: &[usize],
    n_way: usize,
) -> Result<T> {
    let y = encoder.forward(input);
    let (support, query) = split_embeddings(encoder.dim, y.data, support_labels, query_labels)?;
    Ok(prototypical_loss(&support, &query, n_way)?.loss)
}

/// Encoder plus optimizer state across episodic training.
pub struct TrainState<T> {
    pub encoder: Encoder<T>,
    pub optimizer: Adam<T>,
    pub step: usize,
    pub max_steps: usize,
    pub loss_history: Vec<f64>,
}

impl<T: Real> TrainState<T> {
    pub fn new(encoder: Encoder<T>, learning_rate: f64, max_steps: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        Ok(Self {
            encoder,
            optimizer: Adam::new(AdamConfig::with_learning_rate(learning_rate)),
            step: 0,
            max_steps,
            loss_history: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.config.learning_rate
    }
}

/// Runs `iterations` episodes: embed support + query in one train-mode
/// pass, compute prototypes and query loss, take one Adam step.
pub fn train_episodic<T, S, I>(
    mut state: TrainState<T>,
    episodes: I,
    source: &S,
    iterations: usize,
) -> Result<TrainState<T>>
where
    T: Real,
    S: PatchSource,
    I: IntoIterator<Item = Result<Episode>>,
{
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    if state.step + iterations > state.max_steps {
        return Err(Error::InvalidArgument(alloc::format!(
            "{iterations} more steps would exceed the configured {}",
            state.max_steps
        )));
    }
    let mut episodes = episodes.into_iter();
    for _ in 0..iterations {
        let episode = episodes.next().ok_or(Error::InvalidArgument(alloc::format!(
            "episode stream ended before {iterations} iterations"
        )))??;
        let input = episode_batch(source, &episode)?;
        let loss = loss_and_gradients(
            &mut state.encoder,
            &input,
            &episode.support_labels(),
            &episode.query_labels(),
            episode.n_way(),
        )
        .map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFiniteLoss(state.step),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(state.step));
        }
        let encoder = &mut state.encoder;
        state.optimizer.step(|f| encoder.visit_mut(f));
        state.step += 1;
        state.loss_history.push(loss.as_f64());
    }
    Ok(state)
}

/// Eval-mode metrics for one episode; never touches encoder state.
pub fn evaluate_episode<T: Real, S: PatchSource>(
    encoder: &Encoder<T>,
    episode: &Episode,
    source: &S,
) -> Result<EpisodeMetrics> {
    let n_way = episode.n_way();
    let support_in: Tensor<T> = patch_batch(source, &episode.support.iter().map(|i| i.record).collect::<Vec<_>>())?;
    let query_in: Tensor<T> = patch_batch(source, &episode.query.iter().map(|i| i.record).collect::<Vec<_>>())?;
    let support = embed(encoder, &support_in, episode.support_labels())?;
    let query = embed(encoder, &query_in, episode.query_labels())?;
    let protos = compute_prototypes(&support, n_way)?.with_class_order(&episode.classes);
    let cls = classify_queries(&query, &protos)?;
    let mut m = episode_metrics(&cls.predictions, &query.labels, n_way)?;
    m.episode_index = episode.index;
    Ok(m)
}

pub fn evaluate<T: Real, S: PatchSource>(
    encoder: &Encoder<T>,
    episodes: &[Episode],
    source: &S,
) -> Result<Vec<EpisodeMetrics>> {
    if episodes.is_empty() {
        return Err(Error::Empty("evaluation needs at least one episode"));
    }
    episodes
        .iter()
        .map(|e| evaluate_episode(encoder, e, source))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::EncoderKind;

    fn batch(dim: usize, rows: &[&[f64]], labels: &[usize]) -> EmbeddingBatch<f64> {
        EmbeddingBatch::new(dim, rows.concat(), labels.to_vec()).unwrap()
    }

    #[test]
    fn single_shot_prototype_is_the_vector() {
        let s = batch(2, &[&[1.0, 2.0], &[3.0, -1.0]], &[0, 1]);
        let p = compute_prototypes(&s, 2).unwrap();
        assert_eq!(p.prototypes, vec![1.0, 2.0, 3.0, -1.0]);
    }

    #[test]
    fn midpoint_prototype() {
        let s = batch(2, &[&[0.0, 0.0], &[2.0, 2.0]], &[0, 0]);
        assert_eq!(compute_prototypes(&s, 1).unwrap().prototypes, vec![1.0, 1.0]);
    }

    #[test]
    fn missing_class_rejected() {
        let s = batch(1, &[&[0.0], &[1.0]], &[0, 0]);
        assert_eq!(compute_prototypes(&s, 2), Err(Error::MissingClass(1)));
    }

    #[test]
    fn zero_distance_dominates() {
        let s = batch(2, &[&[0.0, 0.0], &[5.0, 0.0], &[0.0, 5.0]], &[0, 1, 2]);
        let p = compute_prototypes(&s, 3).unwrap();
        let q = batch(2, &[&[5.0, 0.0]], &[0]);
        let c = classify_queries(&q, &p).unwrap();
        assert_eq!(c.predictions, vec![1]);
        assert!(c.probabilities[1] > c.probabilities[0] && c.probabilities[1] > c.probabilities[2]);
    }

    #[test]
    fn equidistant_query_is_uniform() {
        let s = batch(2, &[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]], &[0, 1, 2, 3]);
        let p = compute_prototypes(&s, 4).unwrap();
        let c = classify_queries(&batch(2, &[&[0.0, 0.0]], &[0]), &p).unwrap();
        for v in &c.probabilities {
            assert!((v - 0.25).abs() < 1e-12);
        }
        assert_eq!(c.predictions, vec![0]);
    }

    #[test]
    fn two_prototype_softmax() {
        // squared distances 1 and 4
        let s = batch(1, &[&[1.0], &[2.0]], &[0, 1]);
        let p = compute_prototypes(&s, 2).unwrap();
        let c = classify_queries(&batch(1, &[&[0.0]], &[0]), &p).unwrap();
        assert_eq!(c.logits, vec![-1.0, -4.0]);
        assert!((c.probabilities[0] - 0.9526).abs() < 1e-4);
        assert!((c.probabilities[1] - 0.0474).abs() < 1e-4);
    }

    #[test]
    fn duplicate_prototypes_pick_lower_index() {
        let s = batch(1, &[&[3.0], &[3.0], &[3.0]], &[0, 1, 2]);
        let p = compute_prototypes(&s, 3).unwrap();
        let c = classify_queries(&batch(1, &[&[0.0], &[7.0]], &[0, 0]), &p).unwrap();
        assert_eq!(c.predictions, vec![0, 0]);
    }

    #[test]
    fn dimension_mismatch() {
        let s = batch(2, &[&[0.0, 0.0]], &[0]);
        let p = compute_prototypes(&s, 1).unwrap();
        assert!(matches!(
            classify_queries(&batch(1, &[&[0.0]], &[0]), &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn uniform_logits_loss_is_log_n() {
        let logits = vec![0.3f64; 6 * 4];
        let l = episode_loss(&logits, 6, &[0, 3, 5, 2]).unwrap();
        assert!((l - 1.791759).abs() < 1e-6);
    }

    #[test]
    fn saturated_loss_vanishes() {
        let mut logits = vec![0.0f64; 3 * 2];
        logits[1] = 1000.0;
        logits[3 + 2] = 1000.0;
        assert!(episode_loss(&logits, 3, &[1, 2]).unwrap() < 1e-6);
    }

    #[test]
    fn loss_rejects_bad_input() {
        assert!(matches!(
            episode_loss(&[f64::NAN, 0.0], 2, &[0]),
            Err(Error::NonFinite(0))
        ));
        assert!(matches!(
            episode_loss(&[0.0, 0.0], 2, &[2]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let logits: Vec<f64> = vec![0.5, -1.0, 2.0, 0.1, 0.0, -0.3];
        let labels = [2, 0];
        let (_, g) = episode_loss_grad(&logits, 3, &labels).unwrap();
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p[i] += 1e-6;
            let mut m = logits.clone();
            m[i] -= 1e-6;
            let fd = (episode_loss(&p, 3, &labels).unwrap() - episode_loss(&m, 3, &labels).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        let support = batch(2, &[&[0.1, 0.2], &[0.5, -0.3], &[-0.4, 0.9], &[0.0, 0.1]], &[0, 0, 1, 1]);
        let query = batch(2, &[&[0.3, 0.0], &[-0.2, 0.6]], &[0, 1]);
        let g = prototypical_loss(&support, &query, 2).unwrap();
        let h = 1e-6;
        let loss = |s: &EmbeddingBatch<f64>, q: &EmbeddingBatch<f64>| prototypical_loss(s, q, 2).unwrap().loss;
        for i in 0..support.vectors.len() {
            let mut p = support.clone();
            p.vectors[i] += h;
            let mut m = support.clone();
            m.vectors[i] -= h;
            let fd = (loss(&p, &query) - loss(&m, &query)) / (2.0 * h);
            assert!((fd - g.d_support[i]).abs() < 1e-8, "support {i}");
        }
        for i in 0..query.vectors.len() {
            let mut p = query.clone();
            p.vectors[i] += h;
            let mut m = query.clone();
            m.vectors[i] -= h;
            let fd = (loss(&support, &p) - loss(&support, &m)) / (2.0 * h);
            assert!((fd - g.d_query[i]).abs() < 1e-8, "query {i}");
        }
    }

    #[test]
    fn embed_duplicates_give_identical_rows() {
        let enc = Encoder::<f32>::new(EncoderKind::TinyTestCnn, 3);
        let one: Vec<f32> = (0..3 * 8 * 8).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect();
        let input = Tensor::from_vec([2, 3, 8, 8], [one.clone(), one].concat());
        let e = embed(&enc, &input, vec![0, 0]).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.row(0), e.row(1));
        assert_eq!(e.dim, 16);
    }

    #[test]
    fn non_finite_embedding_reports_row() {
        assert_eq!(
            EmbeddingBatch::new(2, vec![0.0, 1.0, f64::INFINITY, 0.0], vec![0, 1]),
            Err(Error::NonFinite(1))
        );
    }
}
