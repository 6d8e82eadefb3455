//! Per-anchor score files for plugging in real network outputs.
//!
//! Binary layout (little endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `SRNSCORE`                        |
//! | 8      | 8    | anchor count `n` (u64)                  |
//! | 16     | 40n  | per anchor: 10 x f32                    |
//!
//! The ten floats are the first-step score, first-step `dx dy dw dh`, the
//! second-step score and second-step `dx dy dw dh`.
//!
//! The text form starts with `srnkit-scores <n>` followed by one line of ten
//! whitespace-separated numbers per anchor.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::refine::{StepPrediction, StepScores};

pub const MAGIC: &[u8; 8] = b"SRNSCORE";
pub const TEXT_HEADER: &str = "srnkit-scores";
const FLOATS_PER_ANCHOR: usize = 10;

fn flatten(p: &StepPrediction) -> [f32; 5] {
    [p.score, p.dx, p.dy, p.dw, p.dh]
}

fn unflatten(v: &[f32]) -> StepPrediction {
    StepPrediction {
        score: v[0],
        dx: v[1],
        dy: v[2],
        dw: v[3],
        dh: v[4],
    }
}

pub fn write_scores_binary(scores: &StepScores, mut w: impl Write) -> std::io::Result<()> {
    let n = scores.len();
    assert_eq!(n, scores.second.len(), "step arrays differ in length");
    let mut buf = Vec::with_capacity(16 + n * FLOATS_PER_ANCHOR * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for (a, b) in scores.first.iter().zip(&scores.second) {
        for v in flatten(a).into_iter().chain(flatten(b)) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn read_scores_binary(bytes: &[u8]) -> Result<StepScores> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::parse(0, "missing score file magic"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    let expected = n
        .checked_mul(FLOATS_PER_ANCHOR * 4)
        .ok_or_else(|| Error::parse(0, "anchor count overflows"))?;
    if body.len() != expected {
        return Err(Error::parse(
            0,
            format!(
                "header declares {n} anchors ({expected} bytes), body has {} bytes",
                body.len()
            ),
        ));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for rec in floats.chunks_exact(FLOATS_PER_ANCHOR) {
        first.push(unflatten(&rec[..5]));
        second.push(unflatten(&rec[5..]));
    }
    Ok(StepScores { first, second })
}

pub fn write_scores_text(scores: &StepScores) -> String {
    let mut out = String::with_capacity(scores.len() * 80);
    let _ = writeln!(out, "{TEXT_HEADER} {}", scores.len());
    for (a, b) in scores.first.iter().zip(&scores.second) {
        let vals = flatten(a).into_iter().chain(flatten(b));
        for (k, v) in vals.enumerate() {
            if k > 0 {
                out.push(' ');
            }
            // shortest representation that parses back to the same f32
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn read_scores_text(text: &str) -> Result<StepScores> {
    let mut lines = text.strip_suffix('\n').unwrap_or(text).split('\n');
    let header = lines.next().unwrap_or_default();
    let n: usize = header
        .strip_prefix(TEXT_HEADER)
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| Error::parse(1, format!("expected \"{TEXT_HEADER} <count>\"")))?;
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for (k, line) in lines.enumerate() {
        let ln = k + 2;
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f32>()
                    .map_err(|_| Error::parse(ln, format!("cannot parse {t:?}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != FLOATS_PER_ANCHOR {
            return Err(Error::parse(
                ln,
                format!("expected 10 values, found {}", vals.len()),
            ));
        }
        first.push(unflatten(&vals[..5]));
        second.push(unflatten(&vals[5..]));
    }
    if first.len() != n {
        return Err(Error::parse(
            first.len() + 2,
            format!("header declares {n} anchors, found {}", first.len()),
        ));
    }
    Ok(StepScores { first, second })
}

/// Save by extension: `.txt` writes text, anything else binary.
pub fn save_scores(scores: &StepScores, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let res = if path.extension().is_some_and(|e| e == "txt") {
        fs::write(path, write_scores_text(scores))
    } else {
        fs::File::create(path).and_then(|f| write_scores_binary(scores, std::io::BufWriter::new(f)))
    };
    res.map_err(|e| Error::io(path, e))
}

/// Load either format, detected from the leading bytes.
pub fn load_scores(path: impl AsRef<Path>) -> Result<StepScores> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let parsed = if bytes.starts_with(MAGIC) {
        read_scores_binary(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(0, "not a score file"))?;
        read_scores_text(text)
    };
    parsed.map_err(|e| e.at_path(path))
}
