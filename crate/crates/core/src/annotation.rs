//! Word-level labels in the ICDAR line format:
//! `x1,y1,x2,y2,x3,y3,x4,y4,transcription`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::QuadBox;

/// Transcription marking a region that is neither rewarded nor penalised.
pub const IGNORE_TEXT: &str = "###";

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub quad: QuadBox,
    pub transcription: String,
    pub ignore: bool,
}

impl Annotation {
    pub fn new(quad: QuadBox, transcription: impl Into<String>) -> Result<Self> {
        let transcription = transcription.into();
        if transcription.is_empty() {
            return Err(Error::InvalidInput("empty transcription".into()));
        }
        Ok(Self {
            quad,
            ignore: transcription == IGNORE_TEXT,
            transcription,
        })
    }
}

/// Serialises annotations with coordinates rounded to whole pixels.
pub fn format_annotations(annos: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annos {
        for v in a.quad.to_coords() {
            let _ = write!(out, "{},", v.round() as i64);
        }
        out.push_str(&a.transcription);
        out.push('\n');
    }
    out
}

pub fn write_annotations(annos: &[Annotation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_annotations(annos)).map_err(|e| Error::io(path, e))
}

fn parse_coords(fields: &[&str], path: &Path, line: usize) -> Result<[f64; 8]> {
    let mut c = [0.0; 8];
    for (dst, f) in c.iter_mut().zip(fields) {
        *dst = f.trim().parse::<f64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected a number, got {f:?}"),
        })?;
    }
    Ok(c)
}

/// Parses annotation text; `path` is only used in error messages.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_start_matches('\u{feff}').trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(9, ',').collect();
        let malformed = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        if fields.len() < 9 {
            return Err(malformed(format!(
                "expected 8 coordinates and a transcription, got {} fields",
                fields.len()
            )));
        }
        let coords = parse_coords(&fields[..8], path, line_no)?;
        let quad = QuadBox::from_coords(coords).map_err(|e| malformed(e.to_string()))?;
        if !quad.is_convex() {
            log::warn!("{}:{line_no}: non-convex label", path.display());
        }
        let anno = Annotation::new(quad, fields[8]).map_err(|e| malformed(e.to_string()))?;
        out.push(anno);
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

/// A predicted box with its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredQuad {
    pub quad: QuadBox,
    pub score: f64,
}

/// Prediction files: `x1,y1,x2,y2,x3,y3,x4,y4,score` per line.
pub fn format_results(dets: &[ScoredQuad]) -> String {
    let mut out = String::new();
    for d in dets {
        for v in d.quad.to_coords() {
            let _ = write!(out, "{},", v.round() as i64);
        }
        let _ = writeln!(out, "{:.6}", d.score);
    }
    out
}

pub fn write_results(dets: &[ScoredQuad], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_results(dets)).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ScoredQuad>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let coords = parse_coords(&fields[..8], path, i + 1)?;
        let quad = QuadBox::from_coords(coords).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let score = fields[8].trim().parse::<f64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad score {:?}", fields[8]),
        })?;
        out.push(ScoredQuad { quad, score });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<Annotation>> {
        parse_annotations(text, Path::new("gt.txt"))
    }

    #[test]
    fn ignore_flag() {
        let a = parse("0,0,10,0,10,5,0,5,###\n").unwrap();
        assert_eq!(a.len(), 1);
        assert!(a[0].ignore);
        let b = parse("0,0,10,0,10,5,0,5,AB-12\n").unwrap();
        assert!(!b[0].ignore);
    }

    #[test]
    fn short_line_names_line_number() {
        match parse("0,0,10,0,10,5") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("0,0,10,0,10,5,0,5,OK\n0,0,a,0,10,5,0,5,X\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn transcription_may_contain_commas() {
        let a = parse("0,0,10,0,10,5,0,5,A,B\n").unwrap();
        assert_eq!(a[0].transcription, "A,B");
    }

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("res_1.txt");
        let dets = vec![ScoredQuad {
            quad: QuadBox::rect(1.0, 2.0, 30.0, 12.0).unwrap(),
            score: 0.75,
        }];
        write_results(&dets, &p).unwrap();
        assert_eq!(read_results(&p).unwrap(), dets);
        write_results(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");
    }

    fn arb_annotation() -> impl Strategy<Value = Annotation> {
        (
            prop::array::uniform8(-500i32..2000),
            prop_oneof![Just("###".to_string()), "[A-Z0-9-]{1,12}", "[a-zé€ 0-9,]{1,8}"],
        )
            .prop_map(|(c, t)| {
                let q = QuadBox::from_coords(c.map(f64::from)).unwrap();
                Annotation::new(q, t).unwrap()
            })
    }

    proptest! {
        #[test]
        fn annotations_round_trip(annos in prop::collection::vec(arb_annotation(), 0..50)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("gt_000000.txt");
            write_annotations(&annos, &p).unwrap();
            prop_assert_eq!(read_annotations(&p).unwrap(), annos);
        }
    }
}
