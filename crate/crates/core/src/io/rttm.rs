//! NIST RTTM `SPEAKER` records.
//!
//! `SPEAKER <file> <chan> <tbeg> <tdur> <NA> <NA> <speaker> <NA> <NA>`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::timeline::{Segment, Timeline};

const NA: &str = "<NA>";

/// Parses every meeting in an RTTM document, in order of first appearance.
/// Blank lines and `;;` comments are skipped; other record types with the
/// right field count are ignored.
pub fn parse_rttm(text: &str, path: &Path) -> Result<Vec<Timeline>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut meetings: Vec<(String, Vec<Segment>)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with(";;") {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(err(
                line_no,
                format!("expected 10 fields, found {}", fields.len()),
            ));
        }
        if fields[0] != "SPEAKER" {
            continue;
        }
        let number = |i: usize, what: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("bad {what} '{}'", fields[i])))
        };
        let tbeg = number(3, "onset")?;
        let tdur = number(4, "duration")?;
        if tbeg < 0.0 {
            return Err(err(line_no, format!("negative onset {tbeg}")));
        }
        if tdur <= 0.0 {
            return Err(err(line_no, format!("non-positive duration {tdur}")));
        }
        let speaker = (fields[7] != NA).then_some(fields[7]);
        let segment =
            Segment::new(tbeg, tbeg + tdur, speaker).map_err(|e| err(line_no, e.to_string()))?;
        match meetings.iter_mut().find(|(id, _)| id == fields[1]) {
            Some((_, segs)) => segs.push(segment),
            None => meetings.push((fields[1].to_string(), vec![segment])),
        }
    }
    Ok(meetings
        .into_iter()
        .map(|(id, segs)| Timeline::new(id, segs))
        .collect())
}

pub fn read_rttm_all(path: &Path) -> Result<Vec<Timeline>> {
    let text = fs::read_to_string(path).map_err(Error::file(path))?;
    parse_rttm(&text, path)
}

/// Reads a single-meeting RTTM file. An empty file yields an empty
/// timeline named after the file stem.
pub fn read_rttm(path: &Path) -> Result<Timeline> {
    let mut all = read_rttm_all(path)?;
    match all.len() {
        0 => Ok(Timeline::new(
            path.file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default(),
            Vec::new(),
        )),
        1 => Ok(all.remove(0)),
        n => Err(Error::Format(format!(
            "{} holds {n} meetings, expected one",
            path.display()
        ))),
    }
}

/// Millisecond-resolution rendering, one line per segment.
pub fn render_rttm(timeline: &Timeline) -> String {
    let mut s = String::new();
    for seg in &timeline.segments {
        let _ = writeln!(
            s,
            "SPEAKER {} 1 {:.3} {:.3} {NA} {NA} {} {NA} {NA}",
            timeline.meeting_id,
            seg.start,
            seg.end - seg.start,
            seg.speaker.as_deref().unwrap_or(NA)
        );
    }
    s
}

pub fn write_rttm(timeline: &Timeline, path: &Path) -> Result<()> {
    if timeline.meeting_id.is_empty() || timeline.meeting_id.contains(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "meeting id '{}' cannot be written to RTTM",
            timeline.meeting_id
        )));
    }
    if let Some(bad) = timeline
        .segments
        .iter()
        .filter_map(|s| s.speaker.as_deref())
        .find(|s| s.is_empty() || s.contains(char::is_whitespace))
    {
        return Err(Error::invalid(format!(
            "speaker id '{bad}' cannot be written to RTTM"
        )));
    }
    fs::write(path, render_rttm(timeline)).map_err(Error::file(path))?;
    Ok(())
}
