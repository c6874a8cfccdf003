#![allow(dead_code)]

use rand::Rng;
use spkid::{Segment, Timeline};

pub const FRAME: f64 = 0.01;

/// Frame-discretized SER: every 10 ms frame is judged at its center.
/// Returns (scored seconds, error seconds, percent).
pub fn brute_force_ser(
    reference: &Timeline,
    hypothesis: &Timeline,
    collar: f64,
    exclude_overlap: bool,
) -> (f64, f64, f64) {
    let end = reference
        .segments
        .iter()
        .chain(&hypothesis.segments)
        .map(|s| s.end)
        .fold(0.0, f64::max);
    let frames = (end / FRAME).ceil() as usize + 1;
    let mut bounds = Vec::new();
    for s in &reference.segments {
        bounds.push(s.start);
        bounds.push(s.end);
    }
    let (mut scored, mut error) = (0.0, 0.0);
    for k in 0..frames {
        let t = (k as f64 + 0.5) * FRAME;
        let active = |tl: &Timeline| -> Vec<String> {
            let mut v: Vec<String> = tl
                .segments
                .iter()
                .filter(|s| s.start <= t && t < s.end)
                .filter_map(|s| s.speaker.clone())
                .collect();
            v.sort();
            v.dedup();
            v
        };
        let refs = active(reference);
        if refs.is_empty() {
            continue;
        }
        if collar > 0.0 && bounds.iter().any(|&b| (t - b).abs() < collar) {
            continue;
        }
        if exclude_overlap && refs.len() > 1 {
            continue;
        }
        let hyps = active(hypothesis);
        scored += FRAME * refs.len() as f64;
        error += FRAME * refs.iter().filter(|r| !hyps.contains(r)).count() as f64;
    }
    let pct = if scored > 0.0 {
        100.0 * error / scored
    } else {
        f64::NAN
    };
    (scored, error, pct)
}

fn grid<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> f64 {
    rng.random_range(lo..=hi) as f64 * FRAME
}

/// Random reference on a 10 ms grid; same-speaker segments never overlap,
/// different speakers may.
pub fn random_reference<R: Rng>(rng: &mut R, speakers: &[&str], overlap: bool) -> Timeline {
    let mut segs = Vec::new();
    let mut t = grid(rng, 0, 100);
    let n = rng.random_range(2..8);
    for i in 0..n {
        let spk = speakers[i % speakers.len()];
        let dur = grid(rng, 30, 400);
        segs.push(Segment::new(t, t + dur, Some(spk)).unwrap());
        let back = if overlap && rng.random_bool(0.4) {
            grid(rng, 0, (dur / FRAME) as usize / 2)
        } else {
            0.0
        };
        t += dur - back + grid(rng, 0, 120);
    }
    Timeline::new("m", segs)
}

/// Random hypothesis on the same grid, possibly with gaps and overlaps.
pub fn random_hypothesis<R: Rng>(rng: &mut R, speakers: &[&str], span: f64) -> Timeline {
    let mut segs = Vec::new();
    let mut t = grid(rng, 0, 60);
    while t < span {
        let dur = grid(rng, 10, 300);
        let spk = speakers[rng.random_range(0..speakers.len())];
        segs.push(Segment::new(t, t + dur, Some(spk)).unwrap());
        t += dur
            + if rng.random_bool(0.3) {
                grid(rng, 0, 80)
            } else {
                0.0
            };
    }
    Timeline::new("m", segs)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
