//! Window-level speaker identification.
//!
//! Every analysis window is turned into an identification sequence
//! `[x_{i-c}, ..., x_{i+c}, s_1, ..., s_N]` (context windows, then enrolled
//! profiles) and labeled with a profile index, either by the cosine
//! baseline or by a trained model. Label trajectories can then be smoothed
//! with a median (or majority) filter.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_distance, Embedding, SpeakerProfile};
use crate::error::{Error, Result};
use crate::rmc::RmcModel;

/// Model input for one window: context windows followed by profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationSequence {
    pub elements: Vec<Embedding>,
    pub n_profiles: usize,
    pub n_context: usize,
    /// Position of the true profile among the profiles, when known.
    pub label: Option<usize>,
    pub window_index: usize,
    pub meeting_id: String,
}

impl IdentificationSequence {
    pub fn context_len(&self) -> usize {
        2 * self.n_context + 1
    }

    pub fn windows(&self) -> &[Embedding] {
        &self.elements[..self.context_len()]
    }

    pub fn profiles(&self) -> &[Embedding] {
        &self.elements[self.context_len()..]
    }

    /// The window being identified.
    pub fn center(&self) -> &Embedding {
        &self.elements[self.n_context]
    }
}

/// One analysis window of a meeting.
#[derive(Debug, Clone, PartialEq)]
pub struct MeetingWindow {
    pub start: f64,
    pub end: f64,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub start: f64,
    pub end: f64,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<Vec<f64>>,
}

/// Predicted profile index per window, in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTrajectory {
    pub meeting_id: String,
    pub entries: Vec<TrajectoryEntry>,
}

impl LabelTrajectory {
    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds the sequence for window `i` with `c` context windows per side.
/// Context indices outside the meeting are clamped to the nearest window.
pub fn build_sequence(
    windows: &[Embedding],
    i: usize,
    c: usize,
    profiles: &[SpeakerProfile],
) -> Result<IdentificationSequence> {
    if profiles.is_empty() {
        return Err(Error::invalid("no profiles to identify against"));
    }
    if i >= windows.len() {
        return Err(Error::invalid(format!(
            "window index {i} out of range for {} windows",
            windows.len()
        )));
    }
    let last = windows.len() - 1;
    let mut elements = Vec::with_capacity(2 * c + 1 + profiles.len());
    for offset in 0..=2 * c {
        let j = (i + offset).saturating_sub(c).min(last);
        elements.push(windows[j].clone());
    }
    elements.extend(profiles.iter().map(|p| p.vector.clone()));
    Ok(IdentificationSequence {
        elements,
        n_profiles: profiles.len(),
        n_context: c,
        label: None,
        window_index: i,
        meeting_id: String::new(),
    })
}

/// Reorders the profiles so that new position `k` holds old profile
/// `order[k]`, and remaps the label.
pub fn permute_profiles_with(
    seq: &IdentificationSequence,
    order: &[usize],
) -> Result<IdentificationSequence> {
    let label = seq
        .label
        .ok_or_else(|| Error::invalid("cannot permute an unlabeled sequence"))?;
    let n = seq.n_profiles;
    let mut seen = vec![false; n];
    if order.len() != n
        || order
            .iter()
            .any(|&k| k >= n || std::mem::replace(&mut seen[k], true))
    {
        return Err(Error::invalid("not a permutation of the profile positions"));
    }
    let ctx = seq.context_len();
    let mut out = seq.clone();
    for (k, &old) in order.iter().enumerate() {
        out.elements[ctx + k] = seq.elements[ctx + old].clone();
    }
    out.label = order.iter().position(|&old| old == label);
    Ok(out)
}

/// Uniformly random profile permutation with label remapping.
pub fn permute_profiles<R: Rng + ?Sized>(
    seq: &IdentificationSequence,
    rng: &mut R,
) -> Result<IdentificationSequence> {
    let mut order: Vec<usize> = (0..seq.n_profiles).collect();
    order.shuffle(rng);
    permute_profiles_with(seq, &order)
}

/// Index of the profile closest in cosine distance (lowest index on ties),
/// plus all distances.
pub fn identify_cosine(x: &Embedding, profiles: &[SpeakerProfile]) -> Result<(usize, Vec<f64>)> {
    if profiles.is_empty() {
        return Err(Error::invalid("no profiles to identify against"));
    }
    let distances = profiles
        .iter()
        .map(|p| cosine_distance(x, &p.vector))
        .collect::<Result<Vec<_>>>()?;
    Ok((argmin(&distances), distances))
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Argmax over the first `n` entries, lowest index on ties.
pub fn restricted_argmax(posterior: &[f64], n: usize) -> usize {
    let mut best = 0;
    for (i, &x) in posterior.iter().enumerate().take(n).skip(1) {
        if x > posterior[best] {
            best = i;
        }
    }
    best
}

/// Model decision: argmax of the posterior over the sequence's own
/// profile positions.
pub fn identify_rmc(model: &RmcModel, seq: &IdentificationSequence) -> Result<(usize, Vec<f64>)> {
    let posterior = model.forward(seq)?;
    Ok((restricted_argmax(&posterior, seq.n_profiles), posterior))
}

/// How windows are labeled.
#[derive(Debug, Clone, Copy)]
pub enum Identifier<'a> {
    Cosine,
    Model(&'a RmcModel),
}

impl Identifier<'_> {
    /// Predicted label for a built sequence; the baseline only looks at
    /// the center window.
    pub fn predict(&self, seq: &IdentificationSequence) -> Result<(usize, Vec<f64>)> {
        match self {
            Identifier::Cosine => {
                let profiles: Vec<SpeakerProfile> = seq
                    .profiles()
                    .iter()
                    .enumerate()
                    .map(|(k, v)| SpeakerProfile {
                        speaker_id: k.to_string(),
                        vector: v.clone(),
                    })
                    .collect();
                identify_cosine(seq.center(), &profiles)
            }
            Identifier::Model(m) => identify_rmc(m, seq),
        }
    }
}

/// Labels every window of a meeting. The baseline ignores `c`.
pub fn identify_meeting(
    identifier: Identifier<'_>,
    meeting_id: &str,
    windows: &[MeetingWindow],
    profiles: &[SpeakerProfile],
    c: usize,
) -> Result<LabelTrajectory> {
    if windows.windows(2).any(|w| w[1].start < w[0].start) {
        return Err(Error::invalid("meeting windows are not time-ordered"));
    }
    let embeddings: Vec<Embedding> = windows.iter().map(|w| w.embedding.clone()).collect();
    let decisions: Vec<(usize, Option<Vec<f64>>)> = match identifier {
        Identifier::Cosine => windows
            .iter()
            .map(|w| identify_cosine(&w.embedding, profiles).map(|(label, _)| (label, None)))
            .collect::<Result<_>>()?,
        Identifier::Model(model) => {
            let seqs = (0..windows.len())
                .map(|i| build_sequence(&embeddings, i, c, profiles))
                .collect::<Result<Vec<_>>>()?;
            let posteriors = model.forward_sequences(&seqs)?;
            seqs.iter()
                .zip(posteriors)
                .map(|(seq, p)| (restricted_argmax(&p, seq.n_profiles), Some(p)))
                .collect()
        }
    };
    let entries = windows
        .iter()
        .zip(decisions)
        .map(|(w, (label, posterior))| TrajectoryEntry {
            start: w.start,
            end: w.end,
            label,
            posterior,
        })
        .collect();
    Ok(LabelTrajectory {
        meeting_id: meeting_id.to_string(),
        entries,
    })
}

/// Decision-level smoothing filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKind {
    /// Median of the integer label indices.
    #[default]
    Median,
    /// Most frequent label; ties keep the center label when it is among
    /// the most frequent, otherwise the lowest label.
    Mode,
}

/// Filters a label sequence with a centered window of `taps` (odd) and
/// edge replication.
pub fn smooth_labels(labels: &[usize], taps: usize, kind: SmoothingKind) -> Result<Vec<usize>> {
    if taps == 0 || taps % 2 == 0 {
        return Err(Error::invalid(format!(
            "taps must be odd and positive, got {taps}"
        )));
    }
    if labels.is_empty() || taps == 1 {
        return Ok(labels.to_vec());
    }
    let half = taps / 2;
    let last = labels.len() - 1;
    let mut window = Vec::with_capacity(taps);
    Ok((0..labels.len())
        .map(|t| {
            window.clear();
            window.extend((0..taps).map(|k| labels[(t + k).saturating_sub(half).min(last)]));
            match kind {
                SmoothingKind::Median => {
                    window.sort_unstable();
                    window[half]
                }
                SmoothingKind::Mode => {
                    let count = |l: usize| window.iter().filter(|&&x| x == l).count();
                    let center = labels[t];
                    let best = window.iter().copied().map(count).max().unwrap_or(0);
                    if count(center) == best {
                        center
                    } else {
                        window
                            .iter()
                            .copied()
                            .filter(|&l| count(l) == best)
                            .min()
                            .unwrap_or(center)
                    }
                }
            }
        })
        .collect())
}

/// Median filter over a trajectory's labels; timestamps are unchanged.
pub fn median_smooth(traj: &LabelTrajectory, taps: usize) -> Result<LabelTrajectory> {
    smooth_trajectory(traj, taps, SmoothingKind::Median)
}

pub fn smooth_trajectory(
    traj: &LabelTrajectory,
    taps: usize,
    kind: SmoothingKind,
) -> Result<LabelTrajectory> {
    let smoothed = smooth_labels(&traj.labels(), taps, kind)?;
    let mut out = traj.clone();
    for (e, l) in out.entries.iter_mut().zip(smoothed) {
        e.label = l;
    }
    Ok(out)
}
