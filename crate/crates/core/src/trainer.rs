//! Training-set construction and mini-batch optimization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, SpeakerProfile};
use crate::error::{Error, Result};
use crate::identification::{build_sequence, permute_profiles, IdentificationSequence, Identifier};
use crate::rmc::{Parameters, RmcModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {},
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Number of sequences drawn by `make_training_examples` for a run.
    pub examples: usize,
    pub optimizer: Optimizer,
    /// Inclusive range of profile counts per training sequence.
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    /// Context windows on each side of the center window.
    pub context: usize,
    pub seed: u64,
    /// Shuffle profile order so labels are uniform over positions.
    pub augment: bool,
    /// Stop once an epoch's running training accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 20,
            examples: 20_000,
            optimizer: Optimizer::default(),
            seq_len_min: 2,
            seq_len_max: 4,
            context: 1,
            seed: 0,
            augment: true,
            stop_at_accuracy: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, n_max: usize) -> Result<()> {
        if self.seq_len_min < 2 {
            return Err(Error::invalid("minimum sequence length must be at least 2"));
        }
        if self.seq_len_max < self.seq_len_min {
            return Err(Error::invalid("sequence length range is empty"));
        }
        if self.seq_len_max > n_max {
            return Err(Error::invalid(format!(
                "maximum sequence length {} exceeds n_max {n_max}",
                self.seq_len_max
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Consecutive windows of one speaker; context never crosses utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker_id: String,
    pub windows: Vec<Embedding>,
}

/// Windows of a multi-speaker recording with one speaker per window.
/// Context runs across speaker changes, and distractor profiles are taken
/// from the other participants before the rest of the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub windows: Vec<Embedding>,
    pub speakers: Vec<String>,
}

impl Conversation {
    /// Distinct speakers, sorted.
    pub fn participants(&self) -> Vec<String> {
        let mut p = self.speakers.clone();
        p.sort();
        p.dedup();
        p
    }
}

/// Labeled utterances and conversations plus one profile per speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePool {
    utterances: Vec<Utterance>,
    conversations: Vec<Conversation>,
    profiles: BTreeMap<String, SpeakerProfile>,
    speaker_ids: Vec<String>,
}

impl ExamplePool {
    pub fn new(utterances: Vec<Utterance>, profiles: Vec<SpeakerProfile>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in profiles {
            if map.insert(p.speaker_id.clone(), p).is_some() {
                return Err(Error::invalid("duplicate speaker profile"));
            }
        }
        for u in &utterances {
            if u.windows.is_empty() {
                return Err(Error::invalid("empty utterance"));
            }
            if !map.contains_key(&u.speaker_id) {
                return Err(Error::invalid(format!(
                    "speaker {} has windows but no profile",
                    u.speaker_id
                )));
            }
        }
        let speaker_ids = map.keys().cloned().collect();
        Ok(ExamplePool {
            utterances,
            conversations: Vec::new(),
            profiles: map,
            speaker_ids,
        })
    }

    /// Adds conversations; every window speaker needs a profile.
    pub fn with_conversations(mut self, conversations: Vec<Conversation>) -> Result<Self> {
        for c in &conversations {
            Error::check_dim(c.windows.len(), c.speakers.len())?;
            if c.windows.is_empty() {
                return Err(Error::invalid("empty conversation"));
            }
            if let Some(s) = c.speakers.iter().find(|s| !self.profiles.contains_key(*s)) {
                return Err(Error::invalid(format!(
                    "speaker {s} has windows but no profile"
                )));
            }
        }
        self.conversations.extend(conversations);
        Ok(self)
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn profile(&self, speaker_id: &str) -> Option<&SpeakerProfile> {
        self.profiles.get(speaker_id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &SpeakerProfile> {
        self.profiles.values()
    }

    /// Sorted speaker ids.
    pub fn speaker_ids(&self) -> &[String] {
        &self.speaker_ids
    }

    pub fn window_count(&self) -> usize {
        self.utterances
            .iter()
            .map(|u| u.windows.len())
            .sum::<usize>()
            + self
                .conversations
                .iter()
                .map(|c| c.windows.len())
                .sum::<usize>()
    }

    /// Window `k` of the concatenation of all utterances and then all
    /// conversations: `(windows, index, speaker, other participants)`.
    fn locate(&self, mut k: usize) -> (&[Embedding], usize, &str, Vec<String>) {
        for u in &self.utterances {
            if k < u.windows.len() {
                return (&u.windows, k, &u.speaker_id, Vec::new());
            }
            k -= u.windows.len();
        }
        for c in &self.conversations {
            if k < c.windows.len() {
                let own = &c.speakers[k];
                let others = c.participants().into_iter().filter(|p| p != own).collect();
                return (&c.windows, k, own, others);
            }
            k -= c.windows.len();
        }
        panic!("window index beyond the pool")
    }
}

/// Draws `count` labeled sequences: a random window (with context from its
/// utterance or conversation), its speaker's profile and `Ñ - 1` distinct
/// distractors. For conversation windows the other participants are
/// preferred as distractors.
pub fn make_training_examples<R: Rng + ?Sized>(
    pool: &ExamplePool,
    cfg: &TrainingConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<IdentificationSequence>> {
    if cfg.seq_len_min < 2 || cfg.seq_len_max < cfg.seq_len_min {
        return Err(Error::invalid("invalid sequence length range"));
    }
    if pool.speaker_ids.len() < cfg.seq_len_max {
        return Err(Error::invalid(format!(
            "pool has {} speakers, sequences need up to {}",
            pool.speaker_ids.len(),
            cfg.seq_len_max
        )));
    }
    let total = pool.window_count();
    if total == 0 {
        return Err(Error::invalid("pool has no windows"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (windows, k, speaker, others) = pool.locate(rng.random_range(0..total));
        let n = rng.random_range(cfg.seq_len_min..=cfg.seq_len_max);
        let mut profiles = Vec::with_capacity(n);
        profiles.push(pool.profiles[speaker].clone());
        let from_others = others.len().min(n - 1);
        for j in index::sample(rng, others.len(), from_others) {
            profiles.push(pool.profiles[&others[j]].clone());
        }
        // Everyone else: pool speakers that are neither the target nor a
        // co-participant.
        let rest: Vec<&String> = pool
            .speaker_ids
            .iter()
            .filter(|s| s.as_str() != speaker && !others.contains(s))
            .collect();
        if rest.len() < n - 1 - from_others {
            return Err(Error::invalid("not enough distractor speakers"));
        }
        for j in index::sample(rng, rest.len(), n - 1 - from_others) {
            profiles.push(pool.profiles[rest[j]].clone());
        }
        let mut seq = build_sequence(windows, k, cfg.context, &profiles)?;
        seq.window_index = k;
        seq.label = Some(0);
        if cfg.augment {
            seq = permute_profiles(&seq, rng)?;
        }
        out.push(seq);
    }
    Ok(out)
}

/// Labeled sequences for every window of a meeting.
pub fn meeting_sequences(
    meeting_id: &str,
    windows: &[Embedding],
    labels: &[usize],
    profiles: &[SpeakerProfile],
    c: usize,
) -> Result<Vec<IdentificationSequence>> {
    Error::check_dim(windows.len(), labels.len())?;
    (0..windows.len())
        .map(|i| {
            if labels[i] >= profiles.len() {
                return Err(Error::LabelOutOfRange {
                    label: labels[i],
                    bound: profiles.len(),
                });
            }
            let mut seq = build_sequence(windows, i, c, profiles)?;
            seq.label = Some(labels[i]);
            seq.meeting_id = meeting_id.to_string();
            Ok(seq)
        })
        .collect()
}

/// Fraction of sequences whose predicted label matches the reference.
pub fn evaluate(identifier: Identifier<'_>, seqs: &[IdentificationSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty set"));
    }
    let predictions: Vec<usize> = match identifier {
        Identifier::Model(model) => model
            .forward_sequences(seqs)?
            .iter()
            .zip(seqs)
            .map(|(p, seq)| crate::identification::restricted_argmax(p, seq.n_profiles))
            .collect(),
        Identifier::Cosine => seqs
            .iter()
            .map(|seq| identifier.predict(seq).map(|(label, _)| label))
            .collect::<Result<_>>()?,
    };
    let mut correct = 0usize;
    for (seq, pred) in seqs.iter().zip(predictions) {
        let label = seq
            .label
            .ok_or_else(|| Error::invalid("evaluation sequence without a label"))?;
        correct += usize::from(pred == label);
    }
    Ok(correct as f64 / seqs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Epoch 0 is the untrained model; later epochs report running means over
/// that epoch's mini-batches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// One `epoch loss accuracy` line per record.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(
                s,
                "epoch={} loss={:.6} accuracy={:.4}",
                r.epoch, r.loss, r.accuracy
            );
        }
        s
    }
}

/// Optimizer state that persists across steps.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: u64,
    m: Option<Parameters>,
    v: Option<Parameters>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, lr: f64) -> Self {
        OptimizerState {
            kind,
            lr,
            step: 0,
            m: None,
            v: None,
        }
    }

    pub fn apply(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd {} => {
                for (p, g) in params.tensors_mut().iter_mut().zip(grads.tensors()) {
                    p.scaled_add(-self.lr, g);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let m = self.m.get_or_insert_with(|| grads.zeros_like());
                let v = self.v.get_or_insert_with(|| grads.zeros_like());
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let lr = self.lr;
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                {
                    ndarray::Zip::from(p)
                        .and(g)
                        .and(m)
                        .and(v)
                        .for_each(|p, &g, m, v| {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let mhat = *m / c1;
                            let vhat = *v / c2;
                            *p -= lr * mhat / (vhat.sqrt() + eps);
                        });
                }
            }
        }
    }
}

fn labeled(seq: &IdentificationSequence) -> Result<usize> {
    seq.label
        .ok_or_else(|| Error::invalid("training sequence without a label"))
}

fn is_hit(probs: &[f64], n_profiles: usize, label: usize) -> bool {
    crate::identification::restricted_argmax(probs, n_profiles) == label
}

/// Mean loss and accuracy without updating anything.
pub fn measure(model: &RmcModel, examples: &[IdentificationSequence]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let posteriors = model.forward_sequences(examples)?;
    for (seq, probs) in examples.iter().zip(&posteriors) {
        let label = labeled(seq)?;
        let p = probs.get(label).copied().ok_or(Error::LabelOutOfRange {
            label,
            bound: probs.len(),
        })?;
        loss -= p.max(f64::MIN_POSITIVE).ln();
        correct += usize::from(is_hit(probs, seq.n_profiles, label));
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch training with seeded shuffling.
pub fn train(
    mut model: RmcModel,
    examples: &[IdentificationSequence],
    cfg: &TrainingConfig,
) -> Result<(RmcModel, TrainingLog)> {
    cfg.validate(model.config().n_max)?;
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    for seq in examples {
        let label = labeled(seq)?;
        if label >= seq.n_profiles {
            return Err(Error::LabelOutOfRange {
                label,
                bound: seq.n_profiles,
            });
        }
        if seq.n_profiles > model.config().n_max {
            return Err(Error::invalid("sequence has more profiles than n_max"));
        }
        for e in &seq.elements {
            Error::check_dim(model.config().input_dim, e.dim())?;
        }
    }

    let mut log = TrainingLog::default();
    let (loss0, acc0) = measure(&model, examples)?;
    log.records.push(EpochRecord {
        epoch: 0,
        loss: loss0,
        accuracy: acc0,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.params().zeros_like();
            let weight = 1.0 / batch.len() as f64;
            let seqs: Vec<&IdentificationSequence> = batch.iter().map(|&i| &examples[i]).collect();
            let refs: Vec<&[Embedding]> = seqs.iter().map(|s| s.elements.as_slice()).collect();
            let labels = seqs
                .iter()
                .map(|s| labeled(s))
                .collect::<Result<Vec<_>>>()?;
            let out = model
                .accumulate_batch(&refs, &labels, weight, &mut grads)
                .map_err(|e| match e {
                    Error::NonFinite(what) => {
                        Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}"))
                    }
                    other => other,
                })?;
            for ((loss, probs), (seq, &label)) in out.iter().zip(seqs.iter().zip(&labels)) {
                loss_sum += loss;
                correct += usize::from(is_hit(probs, seq.n_profiles, label));
            }
            opt.apply(model.params_mut(), &grads);
            if !model.params().is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after update at epoch {epoch}, batch {b}"
                )));
            }
        }
        let n = examples.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
        };
        log.records.push(record);
        if cfg.stop_at_accuracy.is_some_and(|t| record.accuracy >= t) {
            break;
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmc::RmcConfig;

    fn unit(v: &[f64]) -> Embedding {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Embedding::new(v.iter().map(|x| x / n).collect()).unwrap()
    }

    fn toy_pool(n_speakers: usize) -> ExamplePool {
        let dim = n_speakers.max(2);
        let mut utterances = Vec::new();
        let mut profiles = Vec::new();
        for s in 0..n_speakers {
            let mut v = vec![0.1; dim];
            v[s] = 1.0;
            let e = unit(&v);
            profiles.push(SpeakerProfile {
                speaker_id: format!("s{s}"),
                vector: e.clone(),
            });
            utterances.push(Utterance {
                speaker_id: format!("s{s}"),
                windows: vec![e; 3],
            });
        }
        ExamplePool::new(utterances, profiles).unwrap()
    }

    #[test]
    fn examples_contain_true_profile_and_distinct_ids() {
        let pool = toy_pool(8);
        let cfg = TrainingConfig {
            seq_len_min: 2,
            seq_len_max: 5,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seqs = make_training_examples(&pool, &cfg, 300, &mut rng).unwrap();
        for s in &seqs {
            assert!((2..=5).contains(&s.n_profiles));
            let label = s.label.unwrap();
            // In the toy pool, windows equal their speaker's profile.
            assert_eq!(&s.profiles()[label], s.center());
            for i in 0..s.n_profiles {
                for j in i + 1..s.n_profiles {
                    assert_ne!(s.profiles()[i], s.profiles()[j]);
                }
            }
        }
    }

    fn toy_conversation(pool: &ExamplePool) -> Conversation {
        let windows =
            [2, 2, 5, 5, 5, 7].map(|s| pool.profile(&format!("s{s}")).unwrap().vector.clone());
        Conversation {
            windows: windows.to_vec(),
            speakers: [2, 2, 5, 5, 5, 7].map(|s| format!("s{s}")).to_vec(),
        }
    }

    #[test]
    fn conversation_distractors_prefer_participants() {
        let base = toy_pool(9);
        let conv = toy_conversation(&base);
        let pool = ExamplePool::new(Vec::new(), base.profiles().cloned().collect())
            .unwrap()
            .with_conversations(vec![conv])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let id_of = |e: &Embedding| {
            pool.profiles()
                .find(|p| &p.vector == e)
                .unwrap()
                .speaker_id
                .clone()
        };
        for n in [2, 3, 5] {
            let cfg = TrainingConfig {
                seq_len_min: n,
                seq_len_max: n,
                context: 1,
                ..TrainingConfig::default()
            };
            for s in make_training_examples(&pool, &cfg, 200, &mut rng).unwrap() {
                let ids: Vec<String> = s.profiles().iter().map(id_of).collect();
                let inside = ids
                    .iter()
                    .filter(|i| ["s2", "s5", "s7"].contains(&i.as_str()))
                    .count();
                assert_eq!(inside, n.min(3));
                assert_eq!(ids[s.label.unwrap()], id_of(s.center()));
            }
        }
    }

    #[test]
    fn conversation_context_crosses_speaker_changes() {
        let base = toy_pool(9);
        let conv = toy_conversation(&base);
        let pool = ExamplePool::new(Vec::new(), base.profiles().cloned().collect())
            .unwrap()
            .with_conversations(vec![conv.clone()])
            .unwrap();
        assert_eq!(pool.window_count(), 6);
        let cfg = TrainingConfig {
            seq_len_min: 3,
            seq_len_max: 3,
            context: 1,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seqs = make_training_examples(&pool, &cfg, 300, &mut rng).unwrap();
        assert!(seqs.iter().any(|s| s.windows()[0] != s.windows()[1]));
        let mut bad = conv;
        bad.speakers[0] = "nobody".into();
        assert!(
            ExamplePool::new(Vec::new(), base.profiles().cloned().collect())
                .unwrap()
                .with_conversations(vec![bad])
                .is_err()
        );
    }

    #[test]
    fn augmented_labels_are_uniform() {
        let pool = toy_pool(6);
        let cfg = TrainingConfig {
            seq_len_min: 4,
            seq_len_max: 4,
            context: 0,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seqs = make_training_examples(&pool, &cfg, 10_000, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for s in &seqs {
            counts[s.label.unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn too_few_speakers_is_an_error() {
        let pool = toy_pool(3);
        let cfg = TrainingConfig {
            seq_len_max: 4,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(make_training_examples(&pool, &cfg, 1, &mut rng).is_err());
    }

    #[test]
    fn pool_rejects_windows_without_profile() {
        let e = unit(&[1.0, 0.0]);
        let u = Utterance {
            speaker_id: "ghost".into(),
            windows: vec![e],
        };
        assert!(ExamplePool::new(vec![u], vec![]).is_err());
    }

    fn labeled_seq(center: &[f64], profiles: &[&[f64]], label: usize) -> IdentificationSequence {
        let profiles: Vec<SpeakerProfile> = profiles
            .iter()
            .enumerate()
            .map(|(k, p)| SpeakerProfile {
                speaker_id: k.to_string(),
                vector: unit(p),
            })
            .collect();
        let mut s = build_sequence(&[unit(center)], 0, 0, &profiles).unwrap();
        s.label = Some(label);
        s
    }

    #[test]
    fn evaluate_counts_correct_predictions() {
        let a: &[f64] = &[1.0, 0.0];
        let b: &[f64] = &[0.0, 1.0];
        let seqs = vec![
            labeled_seq(a, &[a, b], 0),
            labeled_seq(b, &[a, b], 1),
            labeled_seq(a, &[b, a], 1),
            labeled_seq(a, &[a, b], 1),
        ];
        assert_eq!(evaluate(Identifier::Cosine, &seqs).unwrap(), 0.75);
        assert_eq!(evaluate(Identifier::Cosine, &seqs[..3]).unwrap(), 1.0);
        assert_eq!(evaluate(Identifier::Cosine, &seqs[3..]).unwrap(), 0.0);
        assert!(evaluate(Identifier::Cosine, &[]).is_err());
    }

    fn small_model() -> RmcModel {
        let mut cfg = RmcConfig::desk(4, 4);
        cfg.slot_width = 8;
        cfg.attention_mlp_width = 8;
        cfg.mlp_head_layers = 1;
        cfg.mlp_head_width = 16;
        RmcModel::new(cfg).unwrap()
    }

    fn small_set() -> Vec<IdentificationSequence> {
        let pool = toy_pool(4);
        let cfg = TrainingConfig {
            seq_len_min: 2,
            seq_len_max: 4,
            context: 0,
            ..TrainingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        make_training_examples(&pool, &cfg, 24, &mut rng).unwrap()
    }

    #[test]
    fn zero_gradient_step_changes_nothing() {
        let model = small_model();
        let zeros = model.params().zeros_like();
        for kind in [Optimizer::Sgd {}, Optimizer::default()] {
            let mut params = model.params().clone();
            let mut opt = OptimizerState::new(kind, 0.1);
            opt.apply(&mut params, &zeros);
            assert_eq!(&params, model.params());
        }
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let data = small_set();
        let cfg = TrainingConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 3e-3,
            seq_len_max: 4,
            ..TrainingConfig::default()
        };
        let (m1, log1) = train(small_model(), &data, &cfg).unwrap();
        let (m2, log2) = train(small_model(), &data, &cfg).unwrap();
        assert_eq!(log1, log2);
        assert_eq!(m1.params(), m2.params());
        assert_eq!(log1.records.len(), 6);
        let (before, _) = measure(&small_model(), &data).unwrap();
        let (after, _) = measure(&m1, &data).unwrap();
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let data = small_set();
        let model = small_model();
        let batch: Vec<_> = data.iter().map(|s| (s.clone(), s.label.unwrap())).collect();
        let (_, grads) = model.loss_and_gradients(&batch).unwrap();
        for kind in [Optimizer::Sgd {}, Optimizer::default()] {
            let mut params = model.params().clone();
            OptimizerState::new(kind, 0.0).apply(&mut params, &grads);
            assert_eq!(&params, model.params());
        }
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            ..TrainingConfig::default()
        };
        assert!(train(small_model(), &data, &cfg).is_err());
    }

    #[test]
    fn log_lines_are_line_oriented() {
        let log = TrainingLog {
            records: vec![EpochRecord {
                epoch: 0,
                loss: 1.5,
                accuracy: 0.25,
            }],
        };
        assert_eq!(log.to_text(), "epoch=0 loss=1.500000 accuracy=0.2500\n");
    }
}
