//! Speaker-error-rate evaluation on manual segments.
//!
//! A diarisation hypothesis is compared against reference speech segments
//! by excising a collar around every reference boundary, finding the
//! one-to-one cluster-to-speaker mapping that maximizes correctly
//! attributed time, and reporting the misattributed share of the scored
//! time. There is no missed or false-alarm speech under this protocol, so
//! the speaker error is the whole story.
//!
//! All interval arithmetic runs on integer milliseconds; the public
//! surface speaks seconds.

mod hungarian;
mod rttm;

pub use hungarian::{max_value_assignment, min_cost_assignment};
pub use rttm::{parse_rttm, read_rttm, rttm_string, write_rttm};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled stretch of speech in one recording. Times are stored as
/// integer milliseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    recording: String,
    start_ms: i64,
    end_ms: i64,
    speaker: String,
}

impl Segment {
    /// Build from times in seconds, rounded to the millisecond grid.
    pub fn new(recording: &str, start_s: f64, end_s: f64, speaker: &str) -> Result<Self> {
        if !start_s.is_finite() || !end_s.is_finite() || start_s < 0.0 || end_s < 0.0 {
            return Err(Error::Data(format!(
                "segment times must be finite and non-negative, got [{start_s}, {end_s})"
            )));
        }
        Self::from_ms(
            recording,
            (start_s * 1000.0).round() as i64,
            (end_s * 1000.0).round() as i64,
            speaker,
        )
    }

    /// Build from times already on the millisecond grid.
    pub fn from_ms(recording: &str, start_ms: i64, end_ms: i64, speaker: &str) -> Result<Self> {
        if start_ms < 0 || end_ms <= start_ms {
            return Err(Error::Data(format!(
                "segment must have positive length, got [{start_ms} ms, {end_ms} ms)"
            )));
        }
        for (field, value) in [("recording", recording), ("speaker", speaker)] {
            if value.is_empty() || value.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!(
                    "segment {field} must be non-empty without whitespace, got {value:?}"
                )));
            }
        }
        Ok(Segment {
            recording: recording.to_string(),
            start_ms,
            end_ms,
            speaker: speaker.to_string(),
        })
    }

    pub fn recording(&self) -> &str {
        &self.recording
    }

    pub fn speaker(&self) -> &str {
        &self.speaker
    }

    pub fn start_ms(&self) -> i64 {
        self.start_ms
    }

    pub fn end_ms(&self) -> i64 {
        self.end_ms
    }

    pub fn start_seconds(&self) -> f64 {
        self.start_ms as f64 / 1000.0
    }

    pub fn end_seconds(&self) -> f64 {
        self.end_ms as f64 / 1000.0
    }
}

/// Ordered collection of segments, possibly spanning several recordings.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SegmentList {
    segments: Vec<Segment>,
}

impl SegmentList {
    pub fn new(segments: Vec<Segment>) -> Self {
        SegmentList { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn push(&mut self, segment: Segment) {
        self.segments.push(segment);
    }

    pub fn extend(&mut self, other: SegmentList) {
        self.segments.extend(other.segments);
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Recording names present in the list, sorted and deduplicated.
    pub fn recordings(&self) -> Vec<String> {
        let mut names: Vec<String> = self.segments.iter().map(|s| s.recording.clone()).collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Turn per-window cluster decisions into a segment timeline. Where
/// windows overlap, each instant goes to the window whose center is
/// nearest, with ties resolved toward the later window; adjacent segments
/// with the same label merge. Instants covered by no window stay
/// unlabeled.
pub fn windows_to_segments<S: AsRef<str>>(
    recording: &str,
    windows: &[(f64, f64)],
    labels: &[S],
) -> Result<SegmentList> {
    if windows.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} windows with {} labels",
            windows.len(),
            labels.len()
        )));
    }
    if windows.is_empty() {
        return Ok(SegmentList::default());
    }

    // quarter-millisecond grid: window edges are 4·ms, so centers and
    // pairwise center midpoints stay integers
    let mut spans: Vec<(i64, i64)> = Vec::with_capacity(windows.len());
    for (i, &(start_s, end_s)) in windows.iter().enumerate() {
        if !start_s.is_finite() || !end_s.is_finite() || start_s < 0.0 {
            return Err(Error::Data(format!(
                "window {i} has invalid times [{start_s}, {end_s})"
            )));
        }
        let start = 4 * (start_s * 1000.0).round() as i64;
        let end = 4 * (end_s * 1000.0).round() as i64;
        if end <= start {
            return Err(Error::Data(format!(
                "window {i} is empty on the millisecond grid: [{start_s}, {end_s})"
            )));
        }
        if i > 0 && start < spans[i - 1].0 {
            return Err(Error::Data(format!(
                "windows must be sorted by start time, window {i} starts earlier than window {}",
                i - 1
            )));
        }
        spans.push((start, end));
    }
    let centers: Vec<i64> = spans.iter().map(|&(s, e)| (s + e) / 2).collect();

    let mut events: Vec<i64> = Vec::new();
    for &(s, e) in &spans {
        events.push(s);
        events.push(e);
    }
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            events.push((centers[i] + centers[j]) / 2);
        }
    }
    events.sort_unstable();
    events.dedup();

    let mut out = SegmentList::default();
    let mut run: Option<(i64, i64, usize)> = None;
    for pair in events.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let winner = spans
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| s <= a && a < e)
            .min_by_key(|&(i, _)| ((a - centers[i]).abs(), std::cmp::Reverse(centers[i]), std::cmp::Reverse(i)))
            .map(|(i, _)| i);
        match (winner, &mut run) {
            (Some(w), Some((_, end, idx)))
                if labels[*idx].as_ref() == labels[w].as_ref() && *end == a =>
            {
                *end = b
            }
            (Some(w), _) => {
                flush_run(recording, &run, labels, &mut out)?;
                run = Some((a, b, w));
            }
            (None, _) => {
                flush_run(recording, &run, labels, &mut out)?;
                run = None;
            }
        }
    }
    flush_run(recording, &run, labels, &mut out)?;
    Ok(out)
}

fn flush_run<S: AsRef<str>>(
    recording: &str,
    run: &Option<(i64, i64, usize)>,
    labels: &[S],
    out: &mut SegmentList,
) -> Result<()> {
    if let &Some((start_qm, end_qm, idx)) = run {
        let start_ms = (start_qm + 2) / 4;
        let end_ms = (end_qm + 2) / 4;
        if end_ms > start_ms {
            out.push(Segment::from_ms(
                recording,
                start_ms,
                end_ms,
                labels[idx].as_ref(),
            )?);
        }
    }
    Ok(())
}

/// How one hypothesis cluster was matched for scoring. `reference` is
/// empty when the hypothesis produced more clusters than the reference
/// has speakers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerMapping {
    pub recording: String,
    pub hypothesis: String,
    pub reference: Option<String>,
}

/// Scoring outcome over all recordings in the reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SerReport {
    pub scored_time_s: f64,
    pub speaker_error_time_s: f64,
    pub ser_percent: f64,
    pub mapping: Vec<SpeakerMapping>,
}

/// Score a hypothesis against reference segments. Scored time is the
/// reference speech minus `collar_s` on both sides of every reference
/// boundary; within it, the best one-to-one cluster-to-speaker mapping is
/// chosen per recording and everything not correctly attributed counts as
/// speaker error.
pub fn ser(reference: &SegmentList, hypothesis: &SegmentList, collar_s: f64) -> Result<SerReport> {
    if reference.is_empty() {
        return Err(Error::Data("reference segment list is empty".into()));
    }
    if !collar_s.is_finite() || collar_s < 0.0 {
        return Err(Error::Config(format!(
            "collar must be finite and non-negative, got {collar_s}"
        )));
    }
    let collar_ms = (collar_s * 1000.0).round() as i64;

    let ref_by_rec = group_by_recording(reference, "reference")?;
    let hyp_by_rec = group_by_recording(hypothesis, "hypothesis")?;

    let mut scored_total = 0i64;
    let mut error_total = 0i64;
    let mut mapping = Vec::new();

    for (recording, ref_segs) in &ref_by_rec {
        let empty = Vec::new();
        let hyp_segs = hyp_by_rec.get(recording).unwrap_or(&empty);

        let scored = scored_regions(ref_segs, collar_ms);
        let (scored_ms, overlap, hyp_labels, ref_labels) =
            attribute_time(ref_segs, hyp_segs, &scored);
        scored_total += scored_ms;

        if hyp_labels.is_empty() {
            error_total += scored_ms;
            continue;
        }

        let m = hyp_labels.len().max(ref_labels.len());
        let mut value = vec![vec![0.0; m]; m];
        for (h, hl) in hyp_labels.iter().enumerate() {
            for (r, rl) in ref_labels.iter().enumerate() {
                if let Some(&t) = overlap.get(&(hl.clone(), rl.clone())) {
                    value[h][r] = t as f64;
                }
            }
        }
        let assignment = max_value_assignment(&value)?;
        let mut correct = 0i64;
        for (h, hl) in hyp_labels.iter().enumerate() {
            let r = assignment[h];
            if r < ref_labels.len() {
                correct += overlap
                    .get(&(hl.clone(), ref_labels[r].clone()))
                    .copied()
                    .unwrap_or(0);
                mapping.push(SpeakerMapping {
                    recording: recording.clone(),
                    hypothesis: hl.clone(),
                    reference: Some(ref_labels[r].clone()),
                });
            } else {
                mapping.push(SpeakerMapping {
                    recording: recording.clone(),
                    hypothesis: hl.clone(),
                    reference: None,
                });
            }
        }
        error_total += scored_ms - correct;
    }

    if scored_total == 0 {
        return Err(Error::Data(
            "no scored time remains after applying the collar".into(),
        ));
    }
    Ok(SerReport {
        scored_time_s: scored_total as f64 / 1000.0,
        speaker_error_time_s: error_total as f64 / 1000.0,
        ser_percent: error_total as f64 / scored_total as f64 * 100.0,
        mapping,
    })
}

/// Reference speech minus the collar band around every reference segment
/// boundary, as disjoint sorted intervals in milliseconds.
fn scored_regions(ref_segs: &[Segment], collar_ms: i64) -> Vec<(i64, i64)> {
    let speech = interval_union(ref_segs.iter().map(|s| (s.start_ms, s.end_ms)).collect());
    let mut collars = Vec::with_capacity(ref_segs.len() * 2);
    for seg in ref_segs {
        for b in [seg.start_ms, seg.end_ms] {
            collars.push((b - collar_ms, b + collar_ms));
        }
    }
    interval_subtract(&speech, &interval_union(collars))
}

/// Sweep the scored regions, splitting at every segment boundary, and
/// accumulate overlap time per (hypothesis label, reference label) pair.
fn attribute_time(
    ref_segs: &[Segment],
    hyp_segs: &[Segment],
    scored: &[(i64, i64)],
) -> (
    i64,
    BTreeMap<(String, String), i64>,
    Vec<String>,
    Vec<String>,
) {
    let mut cuts: Vec<i64> = scored.iter().flat_map(|&(a, b)| [a, b]).collect();
    cuts.extend(ref_segs.iter().flat_map(|s| [s.start_ms, s.end_ms]));
    cuts.extend(hyp_segs.iter().flat_map(|s| [s.start_ms, s.end_ms]));
    cuts.sort_unstable();
    cuts.dedup();

    let mut scored_ms = 0i64;
    let mut overlap: BTreeMap<(String, String), i64> = BTreeMap::new();
    let mut si = 0;
    let mut ri = 0;
    let mut hi = 0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        while si < scored.len() && scored[si].1 <= a {
            si += 1;
        }
        if si == scored.len() || a < scored[si].0 {
            continue;
        }
        scored_ms += b - a;
        while ri < ref_segs.len() && ref_segs[ri].end_ms <= a {
            ri += 1;
        }
        while hi < hyp_segs.len() && hyp_segs[hi].end_ms <= a {
            hi += 1;
        }
        let ref_label = &ref_segs[ri].speaker;
        if hi < hyp_segs.len() && hyp_segs[hi].start_ms <= a {
            *overlap
                .entry((hyp_segs[hi].speaker.clone(), ref_label.clone()))
                .or_insert(0) += b - a;
        }
    }

    let mut hyp_labels: Vec<String> = hyp_segs.iter().map(|s| s.speaker.clone()).collect();
    hyp_labels.sort();
    hyp_labels.dedup();
    let mut ref_labels: Vec<String> = ref_segs.iter().map(|s| s.speaker.clone()).collect();
    ref_labels.sort();
    ref_labels.dedup();
    (scored_ms, overlap, hyp_labels, ref_labels)
}

/// Group segments by recording, sorted by start, rejecting overlaps
/// within a recording.
fn group_by_recording(list: &SegmentList, role: &str) -> Result<BTreeMap<String, Vec<Segment>>> {
    let mut by_rec: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for seg in list.segments() {
        by_rec.entry(seg.recording.clone()).or_default().push(seg.clone());
    }
    for (recording, segs) in by_rec.iter_mut() {
        segs.sort_by_key(|s| (s.start_ms, s.end_ms));
        for w in segs.windows(2) {
            if w[1].start_ms < w[0].end_ms {
                return Err(Error::Data(format!(
                    "{role} segments overlap in recording {recording} near {:.3} s",
                    w[1].start_seconds()
                )));
            }
        }
    }
    Ok(by_rec)
}

/// Union of possibly overlapping intervals as disjoint sorted intervals.
fn interval_union(mut intervals: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    intervals.retain(|&(a, b)| b > a);
    intervals.sort_unstable();
    let mut out: Vec<(i64, i64)> = Vec::with_capacity(intervals.len());
    for (a, b) in intervals {
        match out.last_mut() {
            Some((_, end)) if a <= *end => *end = (*end).max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Set difference of two disjoint sorted interval lists.
fn interval_subtract(base: &[(i64, i64)], cut: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let mut ci = 0;
    for &(a, b) in base {
        let mut lo = a;
        while ci < cut.len() && cut[ci].1 <= lo {
            ci += 1;
        }
        let mut k = ci;
        while k < cut.len() && cut[k].0 < b {
            if cut[k].0 > lo {
                out.push((lo, cut[k].0));
            }
            lo = lo.max(cut[k].1);
            if lo >= b {
                break;
            }
            k += 1;
        }
        if lo < b {
            out.push((lo, b));
        }
    }
    out
}
