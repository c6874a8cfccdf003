//! Speech timelines and scoring.
//!
//! Covers segment merging, sliding-window extraction, conversion of
//! window-level decisions back into speaker segments, Speaker Error Rate
//! with a boundary collar and optional overlap exclusion, and window-level
//! accuracy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identification::LabelTrajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub speaker: Option<String>,
}

impl Segment {
    pub fn new(start: f64, end: f64, speaker: Option<&str>) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end <= start {
            return Err(Error::invalid(format!("invalid segment [{start}, {end}]")));
        }
        Ok(Segment {
            start,
            end,
            speaker: speaker.map(str::to_string),
        })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Segments of one meeting, sorted by start time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timeline {
    pub meeting_id: String,
    pub segments: Vec<Segment>,
}

impl Timeline {
    pub fn new(meeting_id: impl Into<String>, mut segments: Vec<Segment>) -> Self {
        segments.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        Timeline {
            meeting_id: meeting_id.into(),
            segments,
        }
    }

    pub fn is_sorted(&self) -> bool {
        self.segments.windows(2).all(|w| w[0].start <= w[1].start)
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    /// Speakers active at time `t` (half-open segments).
    pub fn speakers_at(&self, t: f64) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter(|s| s.start <= t && t < s.end)
            .filter_map(|s| s.speaker.as_deref())
            .collect()
    }
}

/// Merges consecutive segments separated by strictly less than `gap`
/// seconds. Merged segments keep a speaker only if all parts agree.
pub fn merge_segments(timeline: &Timeline, gap: f64) -> Result<Timeline> {
    if !(gap >= 0.0) {
        return Err(Error::invalid(format!("merge gap must be >= 0, got {gap}")));
    }
    if !timeline.is_sorted() {
        return Err(Error::invalid("timeline is not sorted by start time"));
    }
    let mut out: Vec<Segment> = Vec::with_capacity(timeline.segments.len());
    for seg in &timeline.segments {
        match out.last_mut() {
            Some(cur) if seg.start - cur.end < gap => {
                cur.end = cur.end.max(seg.end);
                if cur.speaker != seg.speaker {
                    cur.speaker = None;
                }
            }
            _ => out.push(seg.clone()),
        }
    }
    Ok(Timeline {
        meeting_id: timeline.meeting_id.clone(),
        segments: out,
    })
}

/// One analysis window cut from segment `segment`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub start: f64,
    pub end: f64,
    pub segment: usize,
}

impl AnalysisWindow {
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Slides a `win`-second window with hop `shift` over every segment.
///
/// Segments no longer than `win` yield one window spanning the segment.
/// Longer segments get windows at multiples of `shift`; an uncovered tail
/// longer than `shift / 2` gets an extra window flush with the segment end,
/// a shorter one is absorbed by stretching the last window.
pub fn window_segments(timeline: &Timeline, win: f64, shift: f64) -> Result<Vec<AnalysisWindow>> {
    if !(win > 0.0 && shift > 0.0 && shift <= win) {
        return Err(Error::invalid(format!(
            "need 0 < shift <= win, got win {win}, shift {shift}"
        )));
    }
    const SLACK: f64 = 1e-9;
    let mut out = Vec::new();
    for (idx, seg) in timeline.segments.iter().enumerate() {
        let len = seg.duration();
        if len <= win + SLACK {
            out.push(AnalysisWindow {
                start: seg.start,
                end: seg.end,
                segment: idx,
            });
            continue;
        }
        let steps = ((len - win) / shift + SLACK).floor() as usize;
        let first = out.len();
        for k in 0..=steps {
            let start = seg.start + k as f64 * shift;
            out.push(AnalysisWindow {
                start,
                end: start + win,
                segment: idx,
            });
        }
        let covered = out[out.len() - 1].end;
        let tail = seg.end - covered;
        if tail > 0.5 * shift {
            out.push(AnalysisWindow {
                start: seg.end - win,
                end: seg.end,
                segment: idx,
            });
        } else if let Some(last) = out[first..].last_mut() {
            last.end = seg.end;
        }
    }
    Ok(out)
}

/// Converts window decisions into speaker segments.
///
/// Each instant covered by at least one window takes the label of the
/// covering window whose center is nearest (earlier window on ties);
/// equal-label pieces that touch are merged. With `resolution = Some(r)`
/// the decision is made per `r`-second frame at the frame center instead.
pub fn trajectory_to_segments<S: AsRef<str>>(
    traj: &LabelTrajectory,
    speaker_ids: &[S],
    resolution: Option<f64>,
) -> Result<Timeline> {
    let entries = &traj.entries;
    for e in entries {
        if e.label >= speaker_ids.len() {
            return Err(Error::LabelOutOfRange {
                label: e.label,
                bound: speaker_ids.len(),
            });
        }
    }
    if entries.is_empty() {
        return Ok(Timeline::new(traj.meeting_id.clone(), Vec::new()));
    }
    let max_len = entries.iter().map(|e| e.end - e.start).fold(0.0, f64::max);
    let center = |i: usize| 0.5 * (entries[i].start + entries[i].end);
    // Windows are time-ordered, so candidates for `t` start no earlier than
    // `t - max_len`.
    let label_at = |t: f64| -> Option<usize> {
        let lo = entries.partition_point(|e| e.start < t - max_len - 1e-12);
        let mut best: Option<(f64, usize)> = None;
        for (i, e) in entries.iter().enumerate().skip(lo) {
            if e.start > t {
                break;
            }
            if t < e.end {
                let d = (t - center(i)).abs();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        best.map(|(_, i)| entries[i].label)
    };

    let mut cuts: Vec<f64> = Vec::new();
    match resolution {
        None => {
            for (i, e) in entries.iter().enumerate() {
                cuts.push(e.start);
                cuts.push(e.end);
                for (j, f) in entries.iter().enumerate().skip(i + 1) {
                    if f.start >= e.end {
                        break;
                    }
                    cuts.push(0.5 * (center(i) + center(j)));
                }
            }
        }
        Some(r) => {
            if !(r > 0.0) {
                return Err(Error::invalid("frame resolution must be positive"));
            }
            let lo = entries
                .iter()
                .map(|e| e.start)
                .fold(f64::INFINITY, f64::min);
            let hi = entries.iter().map(|e| e.end).fold(0.0, f64::max);
            let first = (lo / r).floor() as i64;
            let last = (hi / r).ceil() as i64;
            cuts.extend((first..=last).map(|k| k as f64 * r));
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut segments: Vec<Segment> = Vec::new();
    let mut current: Option<(f64, f64, usize)> = None;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let label = label_at(0.5 * (a + b));
        match (label, current.as_mut()) {
            (Some(l), Some((_, end, cl))) if *cl == l && (*end - a).abs() < 1e-12 => *end = b,
            (Some(l), _) => {
                if let Some((s, e, cl)) = current.take() {
                    segments.push(Segment {
                        start: s,
                        end: e,
                        speaker: Some(speaker_ids[cl].as_ref().to_string()),
                    });
                }
                current = Some((a, b, l));
            }
            (None, _) => {
                if let Some((s, e, cl)) = current.take() {
                    segments.push(Segment {
                        start: s,
                        end: e,
                        speaker: Some(speaker_ids[cl].as_ref().to_string()),
                    });
                }
            }
        }
    }
    if let Some((s, e, cl)) = current {
        segments.push(Segment {
            start: s,
            end: e,
            speaker: Some(speaker_ids[cl].as_ref().to_string()),
        });
    }
    Ok(Timeline {
        meeting_id: traj.meeting_id.clone(),
        segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingScore {
    pub meeting_id: String,
    pub scored_time: f64,
    pub speaker_error_time: f64,
}

/// Aggregated Speaker Error Rate. Times are in seconds and summed over
/// meetings; `ser` is a fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scored_time: f64,
    pub speaker_error_time: f64,
    pub ser: f64,
    pub meetings: Vec<MeetingScore>,
}

impl ScoreReport {
    /// Sums times across meetings and recomputes the rate.
    pub fn combine(reports: &[ScoreReport]) -> Result<ScoreReport> {
        let meetings: Vec<MeetingScore> = reports.iter().flat_map(|r| r.meetings.clone()).collect();
        let scored: f64 = meetings.iter().map(|m| m.scored_time).sum();
        let error: f64 = meetings.iter().map(|m| m.speaker_error_time).sum();
        if !(scored > 0.0) {
            return Err(Error::invalid("no scored reference time"));
        }
        Ok(ScoreReport {
            scored_time: scored,
            speaker_error_time: error,
            ser: error / scored,
            meetings,
        })
    }

    pub fn ser_percent(&self) -> f64 {
        100.0 * self.ser
    }
}

/// Speaker Error Rate of `hypothesis` against `reference`.
///
/// The scored region is reference speech minus `±collar` around every
/// reference boundary and, with `exclude_overlap`, minus regions where two
/// or more reference speakers talk. Each reference speaker in a scored
/// region contributes its duration to the scored time; it is an error
/// whenever the hypothesis does not carry that speaker there, including
/// when the hypothesis is silent. Speaker names are matched literally.
pub fn compute_ser(
    reference: &Timeline,
    hypothesis: &Timeline,
    collar: f64,
    exclude_overlap: bool,
) -> Result<ScoreReport> {
    if !(collar >= 0.0) {
        return Err(Error::invalid(format!("collar must be >= 0, got {collar}")));
    }
    if reference.segments.iter().any(|s| s.speaker.is_none()) {
        return Err(Error::invalid("reference segment without a speaker"));
    }
    let mut boundaries: Vec<f64> = reference
        .segments
        .iter()
        .flat_map(|s| [s.start, s.end])
        .collect();
    boundaries.sort_by(f64::total_cmp);
    boundaries.dedup();

    let mut cuts = boundaries.clone();
    if collar > 0.0 {
        cuts.extend(boundaries.iter().flat_map(|&b| [b - collar, b + collar]));
    }
    cuts.extend(hypothesis.segments.iter().flat_map(|s| [s.start, s.end]));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let near_boundary = |t: f64| -> bool {
        if collar <= 0.0 {
            return false;
        }
        let i = boundaries.partition_point(|&b| b < t);
        let after = boundaries.get(i).map(|&b| b - t);
        let before = i.checked_sub(1).map(|j| t - boundaries[j]);
        after.is_some_and(|d| d < collar) || before.is_some_and(|d| d < collar)
    };

    let mut scored = 0.0;
    let mut error = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let refs = reference.speakers_at(mid);
        if refs.is_empty() || near_boundary(mid) || (exclude_overlap && refs.len() >= 2) {
            continue;
        }
        let hyps = hypothesis.speakers_at(mid);
        let dur = b - a;
        scored += dur * refs.len() as f64;
        error += dur * refs.iter().filter(|r| !hyps.contains(*r)).count() as f64;
    }
    if !(scored > 0.0) {
        return Err(Error::invalid(format!(
            "meeting {}: no scored reference time",
            reference.meeting_id
        )));
    }
    Ok(ScoreReport {
        scored_time: scored,
        speaker_error_time: error,
        ser: error / scored,
        meetings: vec![MeetingScore {
            meeting_id: reference.meeting_id.clone(),
            scored_time: scored,
            speaker_error_time: error,
        }],
    })
}

/// Fraction of windows whose label names the reference speaker active at
/// the window center. In overlapped speech any active speaker counts.
pub fn window_accuracy<S: AsRef<str>>(
    traj: &LabelTrajectory,
    reference: &Timeline,
    speaker_ids: &[S],
) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let mut correct = 0usize;
    for e in &traj.entries {
        let t = 0.5 * (e.start + e.end);
        let active = reference.speakers_at(t);
        if active.is_empty() {
            return Err(Error::invalid(format!(
                "window center {t:.3}s is outside reference speech"
            )));
        }
        let id = speaker_ids.get(e.label).ok_or(Error::LabelOutOfRange {
            label: e.label,
            bound: speaker_ids.len(),
        })?;
        if active.contains(id.as_ref()) {
            correct += 1;
        }
    }
    Ok(correct as f64 / traj.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identification::TrajectoryEntry;

    fn seg(s: f64, e: f64, spk: &str) -> Segment {
        Segment::new(s, e, Some(spk)).unwrap()
    }

    fn tl(segs: Vec<Segment>) -> Timeline {
        Timeline::new("m", segs)
    }

    fn traj(items: &[(f64, f64, usize)]) -> LabelTrajectory {
        LabelTrajectory {
            meeting_id: "m".into(),
            entries: items
                .iter()
                .map(|&(start, end, label)| TrajectoryEntry {
                    start,
                    end,
                    label,
                    posterior: None,
                })
                .collect(),
        }
    }

    #[test]
    fn merge_examples() {
        let m = merge_segments(&tl(vec![seg(0.0, 1.0, "a"), seg(1.4, 2.0, "a")]), 0.5).unwrap();
        assert_eq!(m.segments.len(), 1);
        assert_eq!((m.segments[0].start, m.segments[0].end), (0.0, 2.0));
        assert_eq!(m.segments[0].speaker.as_deref(), Some("a"));

        let m = merge_segments(&tl(vec![seg(0.0, 1.0, "a"), seg(1.5, 2.0, "b")]), 0.5).unwrap();
        assert_eq!(m.segments.len(), 2);

        let m = merge_segments(
            &tl(vec![
                seg(0.0, 1.0, "a"),
                seg(1.2, 2.0, "b"),
                seg(2.3, 3.0, "a"),
            ]),
            0.5,
        )
        .unwrap();
        assert_eq!(m.segments.len(), 1);
        assert_eq!((m.segments[0].start, m.segments[0].end), (0.0, 3.0));
        assert_eq!(m.segments[0].speaker, None);

        let unsorted = Timeline {
            meeting_id: "m".into(),
            segments: vec![seg(2.0, 3.0, "a"), seg(0.0, 1.0, "a")],
        };
        assert!(merge_segments(&unsorted, 0.5).is_err());
    }

    #[test]
    fn window_examples() {
        let w = window_segments(&tl(vec![seg(0.0, 3.0, "a")]), 1.5, 0.75).unwrap();
        let spans: Vec<_> = w.iter().map(|w| (w.start, w.end)).collect();
        assert_eq!(spans, vec![(0.0, 1.5), (0.75, 2.25), (1.5, 3.0)]);

        let w = window_segments(&tl(vec![seg(0.0, 1.0, "a")]), 1.5, 0.75).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start, w[0].end), (0.0, 1.0));

        assert!(window_segments(&tl(vec![seg(0.0, 1.0, "a")]), 1.5, 2.0).is_err());
        assert!(window_segments(&tl(vec![seg(0.0, 1.0, "a")]), 0.0, 0.0).is_err());
    }

    #[test]
    fn window_tail_policy() {
        // 3.3 s: windows end at 3.0, tail 0.3 <= 0.375 is absorbed.
        let w = window_segments(&tl(vec![seg(0.0, 3.3, "a")]), 1.5, 0.75).unwrap();
        assert_eq!(w.len(), 3);
        assert!((w[2].end - 3.3).abs() < 1e-12);
        // 3.5 s: tail 0.5 > 0.375 gets a flush-right window.
        let w = window_segments(&tl(vec![seg(0.0, 3.5, "a")]), 1.5, 0.75).unwrap();
        assert_eq!(w.len(), 4);
        assert!((w[3].start - 2.0).abs() < 1e-12 && (w[3].end - 3.5).abs() < 1e-12);
    }

    #[test]
    fn trajectory_segments_examples() {
        let ids = ["a", "b", "c"];
        let t = trajectory_to_segments(&traj(&[(0.0, 1.5, 2)]), &ids, None).unwrap();
        assert_eq!(t.segments, vec![seg(0.0, 1.5, "c")]);

        let t = trajectory_to_segments(&traj(&[(0.0, 1.5, 0), (1.5, 3.0, 0)]), &ids, None).unwrap();
        assert_eq!(t.segments, vec![seg(0.0, 3.0, "a")]);

        let t = trajectory_to_segments(&traj(&[(0.0, 1.5, 0), (4.0, 5.0, 0)]), &ids, None).unwrap();
        assert_eq!(t.segments.len(), 2);

        let t =
            trajectory_to_segments(&traj(&[(0.0, 1.5, 0), (0.75, 2.25, 1)]), &ids, None).unwrap();
        assert_eq!(
            t.segments,
            vec![seg(0.0, 1.125, "a"), seg(1.125, 2.25, "b")]
        );

        let t = trajectory_to_segments(&traj(&[]), &ids, None).unwrap();
        assert!(t.segments.is_empty());
        assert!(trajectory_to_segments(&traj(&[(0.0, 1.0, 5)]), &ids, None).is_err());
    }

    #[test]
    fn trajectory_segments_at_frame_resolution() {
        let ids = ["a", "b"];
        let t = trajectory_to_segments(&traj(&[(0.0, 1.5, 0), (0.75, 2.25, 1)]), &ids, Some(0.75))
            .unwrap();
        assert_eq!(t.segments, vec![seg(0.0, 1.5, "a"), seg(1.5, 2.25, "b")]);
    }

    #[test]
    fn ser_examples() {
        let reference = tl(vec![seg(0.0, 10.0, "A")]);
        let r = compute_ser(&reference, &reference, 0.25, true).unwrap();
        assert_eq!(r.ser, 0.0);

        let hyp = tl(vec![seg(0.0, 5.0, "A"), seg(5.0, 10.0, "B")]);
        let r = compute_ser(&reference, &hyp, 0.0, false).unwrap();
        assert!((r.ser_percent() - 50.0).abs() < 1e-9);

        let reference = tl(vec![seg(0.0, 10.0, "A"), seg(4.0, 6.0, "B")]);
        let hyp = tl(vec![seg(0.0, 10.0, "A")]);
        let r = compute_ser(&reference, &hyp, 0.0, true).unwrap();
        assert_eq!(r.ser, 0.0);
        assert!((r.scored_time - 8.0).abs() < 1e-9);

        let empty_hyp = tl(vec![]);
        let r = compute_ser(&tl(vec![seg(0.0, 4.0, "A")]), &empty_hyp, 0.0, true).unwrap();
        assert_eq!(r.ser, 1.0);
    }

    #[test]
    fn ser_collar_and_errors() {
        let reference = tl(vec![seg(0.0, 4.0, "A"), seg(4.0, 8.0, "B")]);
        let hyp = tl(vec![seg(0.0, 4.2, "A"), seg(4.2, 8.0, "B")]);
        let r = compute_ser(&reference, &hyp, 0.25, true).unwrap();
        assert_eq!(r.speaker_error_time, 0.0);
        // Boundaries 0, 4, 8 lose 0.25 + 0.5 + 0.25 seconds.
        assert!((r.scored_time - 7.0).abs() < 1e-9);
        let r = compute_ser(&reference, &hyp, 0.0, true).unwrap();
        assert!((r.speaker_error_time - 0.2).abs() < 1e-9);

        assert!(compute_ser(&reference, &hyp, -1.0, true).is_err());
        let tiny = tl(vec![seg(0.0, 0.4, "A")]);
        assert!(compute_ser(&tiny, &tiny, 0.25, true).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let reference = tl(vec![seg(0.0, 3.0, "a"), seg(3.0, 6.0, "b")]);
        let ids = ["a", "b"];
        let t = traj(&[(0.0, 1.5, 0), (1.5, 3.0, 0), (3.0, 4.5, 1), (4.5, 6.0, 0)]);
        assert_eq!(window_accuracy(&t, &reference, &ids).unwrap(), 0.75);
        assert!(window_accuracy(&traj(&[]), &reference, &ids).is_err());
        assert!(window_accuracy(&traj(&[(7.0, 8.0, 0)]), &reference, &ids).is_err());
    }
}
