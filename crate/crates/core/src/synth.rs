//! Deterministic synthetic corpora.
//!
//! Speakers are directions on the unit sphere; a window embedding is the
//! speaker direction plus isotropic Gaussian noise, renormalized. Meetings
//! are scripted sequences of speaker turns cut into sliding windows. An
//! optional channel (fixed linear map plus additive noise) distorts window
//! embeddings but never enrollment draws, so profiles stay clean while test
//! segments are mismatched.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{estimate_profile, length_normalize, Embedding, SpeakerProfile};
use crate::error::{Error, Result};
use crate::identification::MeetingWindow;
use crate::timeline::{window_segments, Segment, Timeline};
use crate::trainer::{Conversation, ExamplePool, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerModel {
    pub speaker_id: String,
    pub mean: Vec<f64>,
    pub spread: f64,
}

impl SpeakerModel {
    pub fn new(speaker_id: impl Into<String>, mean: Vec<f64>, spread: f64) -> Result<Self> {
        if !(spread >= 0.0) {
            return Err(Error::invalid("speaker spread must be >= 0"));
        }
        let mean = length_normalize(&Embedding::new(mean)?)?.into_vec();
        Ok(SpeakerModel {
            speaker_id: speaker_id.into(),
            mean,
            spread,
        })
    }

    /// Random direction, uniform on the sphere.
    pub fn random<R: Rng + ?Sized>(
        speaker_id: impl Into<String>,
        dim: usize,
        spread: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mean = gaussian_vec(dim, rng);
        Self::new(speaker_id, mean, spread)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn gaussian_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// `normalize(mean + spread * g)` with `g ~ N(0, I)`.
pub fn sample_speaker_embedding<R: Rng + ?Sized>(
    spk: &SpeakerModel,
    rng: &mut R,
) -> Result<Embedding> {
    for _ in 0..2 {
        let v: Vec<f64> = spk
            .mean
            .iter()
            .map(|m| {
                let g: f64 = StandardNormal.sample(rng);
                m + spk.spread * g
            })
            .collect();
        if let Ok(e) = length_normalize(&Embedding::from_raw(v)) {
            return Ok(e);
        }
    }
    Err(Error::DegenerateEmbedding(format!(
        "two zero draws for speaker {}",
        spk.speaker_id
    )))
}

/// Linear distortion plus additive noise applied to test-condition windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub dim: usize,
    /// Row-major `dim × dim`.
    pub matrix: Vec<f64>,
    pub noise: f64,
}

impl ChannelModel {
    /// `A = R · D`: `R` is the Cayley transform of a random skew-symmetric
    /// matrix with strength `rotation`, `D` a diagonal with log-uniform
    /// entries whose ratio is at most `max_condition`. `R` is orthogonal,
    /// so `cond(A) = cond(D) <= max_condition`.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        rotation: f64,
        max_condition: f64,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || !(max_condition >= 1.0) || !(noise >= 0.0) || !(rotation >= 0.0) {
            return Err(Error::invalid("invalid channel parameters"));
        }
        let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
        let skew: DMatrix<f64> = (&g - g.transpose()) * (rotation / (2.0 * (dim as f64).sqrt()));
        let eye = DMatrix::<f64>::identity(dim, dim);
        let inv = (&eye - &skew)
            .try_inverse()
            .ok_or_else(|| Error::Singular("Cayley transform".into()))?;
        let rot = inv * (&eye + &skew);
        let half = 0.5 * max_condition.ln();
        let scales: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-half..=half).exp())
            .collect();
        let a = DMatrix::from_fn(dim, dim, |i, j| rot[(i, j)] * scales[j]);
        Ok(ChannelModel {
            dim,
            matrix: (0..dim)
                .flat_map(|i| (0..dim).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)])
                .collect(),
            noise,
        })
    }

    pub fn identity(dim: usize, noise: f64) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        ChannelModel { dim, matrix, noise }
    }

    pub fn condition_number(&self) -> f64 {
        let a = DMatrix::from_row_slice(self.dim, self.dim, &self.matrix);
        let sv = a.singular_values();
        let max = sv.iter().copied().fold(0.0, f64::max);
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }

    /// `normalize(A x + noise * g)`.
    pub fn apply<R: Rng + ?Sized>(&self, x: &Embedding, rng: &mut R) -> Result<Embedding> {
        Error::check_dim(self.dim, x.dim())?;
        let xs = x.as_slice();
        let v: Vec<f64> = (0..self.dim)
            .map(|i| {
                let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
                let clean: f64 = row.iter().zip(xs).map(|(a, b)| a * b).sum();
                let g: f64 = StandardNormal.sample(rng);
                clean + self.noise * g
            })
            .collect();
        length_normalize(&Embedding::from_raw(v))
    }
}

/// Turn-taking statistics for generated meetings (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptParams {
    pub turns: usize,
    pub min_turn: f64,
    pub max_turn: f64,
    pub max_silence: f64,
    /// Probability that a turn starts before the previous one ends.
    pub overlap_prob: f64,
}

impl Default for ScriptParams {
    fn default() -> Self {
        ScriptParams {
            turns: 40,
            min_turn: 1.5,
            max_turn: 12.0,
            max_silence: 1.5,
            overlap_prob: 0.0,
        }
    }
}

/// Offset that lets a log-uniform draw reach zero silence.
const SILENCE_OFFSET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker_id: String,
    pub start: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingScript {
    pub turns: Vec<Turn>,
    /// Gap before each turn (negative when the turn overlaps the previous).
    pub silences: Vec<f64>,
}

impl MeetingScript {
    pub fn total_speech(&self) -> f64 {
        self.turns.iter().map(|t| t.duration).sum()
    }
}

fn log_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// Draws a turn sequence; consecutive turns always change speaker.
pub fn generate_script<R: Rng + ?Sized>(
    roster: &[String],
    params: &ScriptParams,
    rng: &mut R,
) -> Result<MeetingScript> {
    if roster.len() < 2 {
        return Err(Error::invalid("a meeting needs at least two speakers"));
    }
    if !(params.min_turn > 0.0 && params.max_turn >= params.min_turn && params.max_silence >= 0.0)
        || !(0.0..=1.0).contains(&params.overlap_prob)
        || params.turns == 0
    {
        return Err(Error::invalid("invalid script parameters"));
    }
    let mut turns: Vec<Turn> = Vec::with_capacity(params.turns);
    let mut silences = Vec::with_capacity(params.turns);
    let mut previous: Option<usize> = None;
    // End of everything before the previous turn; an overlapping turn must
    // not reach back past it.
    let mut settled_end = 0.0_f64;
    let mut cursor = 0.0_f64;
    for _ in 0..params.turns {
        let speaker = match previous {
            None => rng.random_range(0..roster.len()),
            Some(p) => {
                let k = rng.random_range(0..roster.len() - 1);
                if k >= p {
                    k + 1
                } else {
                    k
                }
            }
        };
        let duration = log_uniform(params.min_turn, params.max_turn, rng);
        let gap = if turns.is_empty() {
            0.0
        } else if rng.random_bool(params.overlap_prob) {
            let prev = &turns[turns.len() - 1];
            let room = (cursor - settled_end).min(0.5 * prev.duration).min(1.0);
            -rng.random_range(0.0..=room.max(0.0))
        } else {
            log_uniform(SILENCE_OFFSET, params.max_silence + SILENCE_OFFSET, rng) - SILENCE_OFFSET
        };
        let start = (cursor + gap).max(0.0);
        if let Some(prev) = turns.last() {
            settled_end = settled_end.max(prev.start + prev.duration);
        }
        turns.push(Turn {
            speaker_id: roster[speaker].clone(),
            start,
            duration,
        });
        silences.push(gap);
        cursor = cursor.max(start + duration);
        previous = Some(speaker);
    }
    Ok(MeetingScript { turns, silences })
}

/// Windowing and enrollment settings for generated meetings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeetingParams {
    pub script: ScriptParams,
    pub win: f64,
    pub shift: f64,
    /// Clean draws averaged into each enrollment profile.
    pub enroll_draws: usize,
}

impl Default for MeetingParams {
    fn default() -> Self {
        MeetingParams {
            script: ScriptParams::default(),
            win: 1.5,
            shift: 0.75,
            enroll_draws: 20,
        }
    }
}

/// A generated meeting: reference turns, window embeddings with their true
/// speakers, and clean enrollment profiles in roster order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMeeting {
    pub reference: Timeline,
    pub windows: Vec<MeetingWindow>,
    pub window_speakers: Vec<String>,
    pub profiles: Vec<SpeakerProfile>,
}

impl SyntheticMeeting {
    pub fn speaker_ids(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.speaker_id.clone()).collect()
    }

    /// Index of each window's true speaker in the profile list.
    /// The meeting's windows as a training conversation.
    pub fn conversation(&self) -> Conversation {
        Conversation {
            windows: self.windows.iter().map(|w| w.embedding.clone()).collect(),
            speakers: self.window_speakers.clone(),
        }
    }

    pub fn window_labels(&self) -> Vec<usize> {
        let ids = self.speaker_ids();
        self.window_speakers
            .iter()
            .map(|s| {
                ids.iter()
                    .position(|i| i == s)
                    .expect("window speaker enrolled")
            })
            .collect()
    }
}

fn enroll<R: Rng + ?Sized>(
    spk: &SpeakerModel,
    draws: usize,
    rng: &mut R,
) -> Result<SpeakerProfile> {
    let samples = (0..draws.max(1))
        .map(|_| sample_speaker_embedding(spk, rng))
        .collect::<Result<Vec<_>>>()?;
    estimate_profile(&spk.speaker_id, &samples)
}

/// Generates one meeting for `roster`.
pub fn generate_meeting<R: Rng + ?Sized>(
    meeting_id: &str,
    roster: &[SpeakerModel],
    params: &MeetingParams,
    channel: Option<&ChannelModel>,
    rng: &mut R,
) -> Result<SyntheticMeeting> {
    let ids: Vec<String> = roster.iter().map(|s| s.speaker_id.clone()).collect();
    let script = generate_script(&ids, &params.script, rng)?;
    meeting_from_script(meeting_id, roster, &script, params, channel, rng)
}

/// Realizes a fixed script.
pub fn meeting_from_script<R: Rng + ?Sized>(
    meeting_id: &str,
    roster: &[SpeakerModel],
    script: &MeetingScript,
    params: &MeetingParams,
    channel: Option<&ChannelModel>,
    rng: &mut R,
) -> Result<SyntheticMeeting> {
    if roster.len() < 2 {
        return Err(Error::invalid("a meeting needs at least two speakers"));
    }
    let segments = script
        .turns
        .iter()
        .map(|t| Segment::new(t.start, t.start + t.duration, Some(&t.speaker_id)))
        .collect::<Result<Vec<_>>>()?;
    let reference = Timeline::new(meeting_id, segments);
    let spans = window_segments(&reference, params.win, params.shift)?;

    let profiles = roster
        .iter()
        .map(|s| enroll(s, params.enroll_draws, rng))
        .collect::<Result<Vec<_>>>()?;

    let mut windows = Vec::with_capacity(spans.len());
    let mut window_speakers = Vec::with_capacity(spans.len());
    for span in spans {
        let speaker = reference.segments[span.segment]
            .speaker
            .clone()
            .expect("scripted segments carry speakers");
        let model = roster
            .iter()
            .find(|s| s.speaker_id == speaker)
            .ok_or_else(|| Error::invalid(format!("speaker {speaker} not in roster")))?;
        let clean = sample_speaker_embedding(model, rng)?;
        let embedding = match channel {
            Some(ch) => ch.apply(&clean, rng)?,
            None => clean,
        };
        windows.push(MeetingWindow {
            start: span.start,
            end: span.end,
            embedding,
        });
        window_speakers.push(speaker);
    }
    Ok(SyntheticMeeting {
        reference,
        windows,
        window_speakers,
        profiles,
    })
}

/// Per-speaker sizes for training pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolParams {
    pub utterances_per_speaker: usize,
    pub windows_per_utterance: usize,
    pub enroll_draws: usize,
}

impl Default for PoolParams {
    fn default() -> Self {
        PoolParams {
            utterances_per_speaker: 4,
            windows_per_utterance: 6,
            enroll_draws: 20,
        }
    }
}

/// A fixed population of speakers sharing one (optional) channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub dim: usize,
    pub speakers: Vec<SpeakerModel>,
    pub channel: Option<ChannelModel>,
}

impl SyntheticWorld {
    pub fn new<R: Rng + ?Sized>(
        n_speakers: usize,
        dim: usize,
        spread: f64,
        channel: Option<ChannelModel>,
        rng: &mut R,
    ) -> Result<Self> {
        if n_speakers == 0 || dim == 0 {
            return Err(Error::invalid(
                "world needs speakers and a positive dimension",
            ));
        }
        if let Some(ch) = &channel {
            Error::check_dim(dim, ch.dim)?;
        }
        let speakers = (0..n_speakers)
            .map(|i| SpeakerModel::random(format!("spk{i:04}"), dim, spread, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticWorld {
            dim,
            speakers,
            channel,
        })
    }

    /// Training pool over `speakers[range]`: channel-distorted utterances
    /// and clean enrollment profiles.
    pub fn pool<R: Rng + ?Sized>(
        &self,
        range: std::ops::Range<usize>,
        params: &PoolParams,
        rng: &mut R,
    ) -> Result<ExamplePool> {
        let mut utterances = Vec::new();
        let mut profiles = Vec::new();
        for spk in &self.speakers[range] {
            profiles.push(enroll(spk, params.enroll_draws, rng)?);
            for _ in 0..params.utterances_per_speaker {
                let windows = (0..params.windows_per_utterance.max(1))
                    .map(|_| {
                        let clean = sample_speaker_embedding(spk, rng)?;
                        match &self.channel {
                            Some(ch) => ch.apply(&clean, rng),
                            None => Ok(clean),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                utterances.push(Utterance {
                    speaker_id: spk.speaker_id.clone(),
                    windows,
                });
            }
        }
        ExamplePool::new(utterances, profiles)
    }

    /// `count` meetings, each among `roster_size` speakers drawn from
    /// `range`, as training conversations.
    pub fn conversations<R: Rng + ?Sized>(
        &self,
        range: std::ops::Range<usize>,
        count: usize,
        roster_size: usize,
        params: &MeetingParams,
        rng: &mut R,
    ) -> Result<Vec<Conversation>> {
        if roster_size == 0 || roster_size > range.len() {
            return Err(Error::invalid(format!(
                "roster of {roster_size} from {} speakers",
                range.len()
            )));
        }
        (0..count)
            .map(|m| {
                let roster: Vec<usize> = rand::seq::index::sample(rng, range.len(), roster_size)
                    .into_iter()
                    .map(|i| range.start + i)
                    .collect();
                Ok(self
                    .meeting(&format!("train{m:04}"), &roster, params, rng)?
                    .conversation())
            })
            .collect()
    }

    /// Meeting among `speakers[i]` for `i` in `roster`.
    pub fn meeting<R: Rng + ?Sized>(
        &self,
        meeting_id: &str,
        roster: &[usize],
        params: &MeetingParams,
        rng: &mut R,
    ) -> Result<SyntheticMeeting> {
        let models: Vec<SpeakerModel> = roster.iter().map(|&i| self.speakers[i].clone()).collect();
        generate_meeting(meeting_id, &models, params, self.channel.as_ref(), rng)
    }
}

/// Pool of `n_speakers` fresh random speakers.
pub fn generate_pool<R: Rng + ?Sized>(
    n_speakers: usize,
    dim: usize,
    spread: f64,
    params: &PoolParams,
    channel: Option<&ChannelModel>,
    rng: &mut R,
) -> Result<ExamplePool> {
    let world = SyntheticWorld::new(n_speakers, dim, spread, channel.cloned(), rng)?;
    world.pool(0..n_speakers, params, rng)
}

/// Mixes a base seed with an index (SplitMix64 finalizer), for
/// independent per-meeting streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
