//! RTTM segment file input and output.
//!
//! Only `SPEAKER` records are used, one per line:
//!
//! ```text
//! SPEAKER <recording> 1 <tbeg> <tdur> <NA> <NA> <label> <NA> <NA>
//! ```
//!
//! Times are seconds with millisecond precision, so a written file reads
//! back into exactly the same segment list.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Segment, SegmentList};

/// Render a segment list as RTTM text.
pub fn rttm_string(list: &SegmentList) -> String {
    let mut out = String::new();
    for seg in list.segments() {
        writeln!(
            out,
            "SPEAKER {} 1 {} {} <NA> <NA> {} <NA> <NA>",
            seg.recording(),
            format_seconds(seg.start_ms()),
            format_seconds(seg.end_ms() - seg.start_ms()),
            seg.speaker()
        )
        .expect("string writes cannot fail");
    }
    out
}

/// Parse RTTM text. `source` names the input in error messages. Blank
/// lines are skipped; anything else must be a well-formed `SPEAKER` line.
pub fn parse_rttm(text: &str, source: &str) -> Result<SegmentList> {
    let mut segments = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            return Err(parse_error(source, line, format!(
                "expected a SPEAKER record, found {:?}",
                fields[0]
            )));
        }
        if fields.len() != 10 {
            return Err(parse_error(source, line, format!(
                "expected 10 fields in a SPEAKER record, found {}",
                fields.len()
            )));
        }
        let tbeg: f64 = fields[3]
            .parse()
            .map_err(|_| parse_error(source, line, format!("invalid start time {:?}", fields[3])))?;
        let tdur: f64 = fields[4]
            .parse()
            .map_err(|_| parse_error(source, line, format!("invalid duration {:?}", fields[4])))?;
        let segment = Segment::new(fields[1], tbeg, tbeg + tdur, fields[7])
            .map_err(|e| parse_error(source, line, e.to_string()))?;
        segments.push(segment);
    }
    Ok(SegmentList::new(segments))
}

/// Write a segment list to an RTTM file.
pub fn write_rttm(list: &SegmentList, path: &Path) -> Result<()> {
    std::fs::write(path, rttm_string(list)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a segment list from an RTTM file.
pub fn read_rttm(path: &Path) -> Result<SegmentList> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_rttm(&text, &path.display().to_string())
}

fn parse_error(source: &str, line: usize, message: String) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message,
    }
}

fn format_seconds(ms: i64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn list(segments: Vec<Segment>) -> SegmentList {
        SegmentList::new(segments)
    }

    #[test]
    fn single_segment_renders_the_documented_line() {
        let l = list(vec![Segment::new("rec1", 0.0, 2.0, "A").unwrap()]);
        assert_eq!(
            rttm_string(&l),
            "SPEAKER rec1 1 0.000 2.000 <NA> <NA> A <NA> <NA>\n"
        );
    }

    #[test]
    fn duration_field_is_length_not_endpoint() {
        let l = list(vec![Segment::new("r", 1.5, 4.0, "B").unwrap()]);
        assert_eq!(
            rttm_string(&l),
            "SPEAKER r 1 1.500 2.500 <NA> <NA> B <NA> <NA>\n"
        );
    }

    #[test]
    fn random_lists_round_trip_exactly() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let count = r.random_range(1..20);
            let mut segments = Vec::new();
            for i in 0..count {
                let start = r.random_range(0.0..500.0);
                let dur = r.random_range(0.001..30.0);
                let rec = format!("rec{}", r.random_range(0..3));
                let spk = format!("spk{}", r.random_range(0..5));
                // construct via the same ms rounding the writer uses
                let seg = Segment::new(&rec, start, start + dur, &spk);
                match seg {
                    Ok(s) => segments.push(s),
                    Err(_) => {
                        // rounding collapsed the segment to zero length
                        let s = Segment::new(&rec, i as f64, i as f64 + 1.0, &spk).unwrap();
                        segments.push(s);
                    }
                }
            }
            let original = list(segments);
            let parsed = parse_rttm(&rttm_string(&original), "mem").unwrap();
            assert_eq!(parsed, original);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hyp.rttm");
        let l = list(vec![
            Segment::new("meeting1", 0.0, 12.345, "alice").unwrap(),
            Segment::new("meeting1", 12.345, 20.0, "bob").unwrap(),
            Segment::new("meeting2", 3.2, 8.8, "alice").unwrap(),
        ]);
        write_rttm(&l, &path).unwrap();
        assert_eq!(read_rttm(&path).unwrap(), l);
    }

    #[test]
    fn malformed_lines_report_their_line_number() {
        let text = "SPEAKER rec1 1 0.000 2.000 <NA> <NA> A <NA> <NA>\nSPEAKER rec1 1 oops 2.000 <NA> <NA> B <NA> <NA>\n";
        let err = parse_rttm(text, "bad.rttm").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.rttm:2"), "{msg}");
        assert!(msg.contains("start time"), "{msg}");

        let err = parse_rttm("SPKR-INFO rec1 1 <NA> <NA> <NA> unknown A <NA>\n", "x").unwrap_err();
        assert!(err.to_string().contains("x:1"), "{err}");

        let err = parse_rttm("SPEAKER rec1 1 0.0 1.0 <NA> A <NA>\n", "x").unwrap_err();
        assert!(err.to_string().contains("10 fields"), "{err}");
    }

    #[test]
    fn blank_lines_are_skipped() {
        let text = "\nSPEAKER rec1 1 0.000 2.000 <NA> <NA> A <NA> <NA>\n\n";
        let parsed = parse_rttm(text, "mem").unwrap();
        assert_eq!(parsed.len(), 1);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_rttm(Path::new("/nonexistent/x.rttm")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
