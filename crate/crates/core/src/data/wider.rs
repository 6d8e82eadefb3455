//! WIDER-style annotation and submission files.
//!
//! Ground truth is a sequence of blocks:
//!
//! ```text
//! 0--Parade/0_Parade_marchingband_1_849.jpg
//! 1
//! 449 330 122 149 0 0 0 0 0 0
//! ```
//!
//! i.e. an image path, a face count, then one `x y w h blur expression
//! illumination invalid occlusion pose` line per face. A count of zero is
//! followed by a placeholder face line in the official releases; both forms
//! are accepted and the placeholder form is written.
//!
//! Detections are one file per image: the image key, a count, then
//! `x y w h score` lines.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::BoxXYXY;
use crate::refine::Detection;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthFace {
    pub bbox: BoxXYXY,
    /// 0 clear, 1 normal, 2 heavy.
    pub blur: u8,
    /// 0 typical, 1 exaggerated.
    pub expression: u8,
    /// 0 normal, 1 extreme.
    pub illumination: u8,
    /// 1 marks an invalid face, always treated as ignore during evaluation.
    pub invalid: u8,
    /// 0 none, 1 partial, 2 heavy.
    pub occlusion: u8,
    /// 0 typical, 1 atypical.
    pub pose: u8,
}

impl GroundTruthFace {
    pub fn new(bbox: BoxXYXY) -> Self {
        GroundTruthFace {
            bbox,
            blur: 0,
            expression: 0,
            illumination: 0,
            invalid: 0,
            occlusion: 0,
            pose: 0,
        }
    }

    fn flags(&self) -> [u8; 6] {
        [
            self.blur,
            self.expression,
            self.illumination,
            self.invalid,
            self.occlusion,
            self.pose,
        ]
    }

    const FLAG_MAX: [u8; 6] = [2, 1, 1, 1, 2, 1];
    const FLAG_NAMES: [&'static str; 6] = [
        "blur",
        "expression",
        "illumination",
        "invalid",
        "occlusion",
        "pose",
    ];
}

/// One image's annotation block.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageAnnotation {
    pub path: String,
    pub faces: Vec<GroundTruthFace>,
}

/// Ordered contents of a ground-truth file.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroundTruthSet {
    pub images: Vec<ImageAnnotation>,
}

impl GroundTruthSet {
    pub fn get(&self, path: &str) -> Option<&ImageAnnotation> {
        self.images.iter().find(|a| a.path == path)
    }

    pub fn index(&self) -> HashMap<&str, &ImageAnnotation> {
        self.images.iter().map(|a| (a.path.as_str(), a)).collect()
    }

    pub fn num_faces(&self) -> usize {
        self.images.iter().map(|a| a.faces.len()).sum()
    }
}

/// Split into lines, requiring a single trailing newline or none at all.
fn split_lines(text: &str) -> Result<Vec<&str>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    let lines: Vec<&str> = body
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    if let Some(i) = lines.iter().position(|l| l.trim().is_empty()) {
        return Err(Error::parse(i + 1, "unexpected blank line"));
    }
    Ok(lines)
}

fn parse_num(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("{what}: cannot parse {tok:?} as a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{what}: {tok:?} is not finite")));
    }
    Ok(v)
}

fn parse_count(text: &str, line: usize) -> Result<usize> {
    text.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a face count, found {text:?}")))
}

fn parse_face_line(text: &str, line: usize) -> Result<GroundTruthFace> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != 10 {
        return Err(Error::parse(
            line,
            format!("expected 10 fields per face, found {}", toks.len()),
        ));
    }
    let x = parse_num(toks[0], line, "x")?;
    let y = parse_num(toks[1], line, "y")?;
    let w = parse_num(toks[2], line, "w")?;
    let h = parse_num(toks[3], line, "h")?;
    if w < 0.0 || h < 0.0 {
        return Err(Error::parse(line, "negative face width or height"));
    }
    let mut flags = [0u8; 6];
    for (k, tok) in toks[4..].iter().enumerate() {
        let name = GroundTruthFace::FLAG_NAMES[k];
        let v: u8 = tok.parse().map_err(|_| {
            Error::parse(
                line,
                format!("{name}: expected a small integer, found {tok:?}"),
            )
        })?;
        if v > GroundTruthFace::FLAG_MAX[k] {
            return Err(Error::parse(line, format!("{name} flag {v} out of range")));
        }
        flags[k] = v;
    }
    Ok(GroundTruthFace {
        bbox: BoxXYXY::from_xywh(x, y, w, h),
        blur: flags[0],
        expression: flags[1],
        illumination: flags[2],
        invalid: flags[3],
        occlusion: flags[4],
        pose: flags[5],
    })
}

fn is_placeholder(text: &str) -> bool {
    let toks: Vec<&str> = text.split_whitespace().collect();
    toks.len() == 10 && toks.iter().all(|t| t.parse::<f64>().is_ok())
}

pub fn parse_gt_str(text: &str) -> Result<GroundTruthSet> {
    let lines = split_lines(text)?;
    let mut images = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let path = lines[i].trim().to_string();
        let count_line = i + 2;
        let count = parse_count(
            lines
                .get(i + 1)
                .ok_or_else(|| Error::parse(count_line, "missing face count"))?,
            count_line,
        )?;
        i += 2;
        let mut faces = Vec::with_capacity(count);
        if count == 0 {
            if lines.get(i).is_some_and(|l| is_placeholder(l)) {
                i += 1;
            }
        } else {
            if i + count > lines.len() {
                return Err(Error::parse(
                    lines.len() + 1,
                    format!(
                        "{path}: expected {count} face lines, file ended after {}",
                        lines.len() - i
                    ),
                ));
            }
            for k in 0..count {
                faces.push(parse_face_line(lines[i + k], i + k + 1)?);
            }
            i += count;
        }
        images.push(ImageAnnotation { path, faces });
    }
    Ok(GroundTruthSet { images })
}

pub fn parse_gt(path: impl AsRef<Path>) -> Result<GroundTruthSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gt_str(&text).map_err(|e| e.at_path(path))
}

fn write_face_line(out: &mut String, f: &GroundTruthFace) {
    let b = f.bbox;
    let _ = write!(out, "{} {} {} {}", b.x1, b.y1, b.width(), b.height());
    for v in f.flags() {
        let _ = write!(out, " {v}");
    }
    out.push_str(" \n");
}

/// Canonical text form: placeholder line after zero counts, trailing space
/// after each face line, `\n` line endings.
pub fn write_gt_string(gt: &GroundTruthSet) -> String {
    let mut out = String::new();
    for img in &gt.images {
        let _ = writeln!(out, "{}", img.path);
        let _ = writeln!(out, "{}", img.faces.len());
        if img.faces.is_empty() {
            out.push_str("0 0 0 0 0 0 0 0 0 0 \n");
        }
        for f in &img.faces {
            write_face_line(&mut out, f);
        }
    }
    out
}

pub fn write_gt(gt: &GroundTruthSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, write_gt_string(gt)).map_err(|e| Error::io(path, e))
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Text of one detection file. Errors when the cap is exceeded.
pub fn detections_to_string(key: &str, dets: &[Detection], cap: Option<usize>) -> Result<String> {
    if let Some(cap) = cap.filter(|&c| dets.len() > c) {
        return Err(Error::OverCap {
            image: key.to_string(),
            count: dets.len(),
            cap,
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "{key}");
    let _ = writeln!(out, "{}", dets.len());
    for d in dets {
        // width/height from rounded corners so x + w lands on x2
        let x = round6(d.bbox.x1);
        let y = round6(d.bbox.y1);
        let w = round6(d.bbox.x2 - x);
        let h = round6(d.bbox.y2 - y);
        let _ = writeln!(out, "{x:.6} {y:.6} {w:.6} {h:.6} {:.6}", d.score);
    }
    Ok(out)
}

pub fn parse_detections_str(text: &str) -> Result<(String, Vec<Detection>)> {
    let lines = split_lines(text)?;
    let key = lines
        .first()
        .ok_or_else(|| Error::parse(1, "empty detection file"))?
        .trim()
        .to_string();
    let count = parse_count(
        lines
            .get(1)
            .ok_or_else(|| Error::parse(2, "missing detection count"))?,
        2,
    )?;
    if lines.len() != count + 2 {
        return Err(Error::parse(
            lines.len().min(count + 2) + 1,
            format!(
                "count says {count} detections, file has {}",
                lines.len() - 2
            ),
        ));
    }
    let mut dets = Vec::with_capacity(count);
    for (k, l) in lines[2..].iter().enumerate() {
        let ln = k + 3;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(Error::parse(
                ln,
                format!("expected 5 fields, found {}", toks.len()),
            ));
        }
        let v: Vec<f64> = toks
            .iter()
            .zip(["x", "y", "w", "h", "score"])
            .map(|(t, what)| parse_num(t, ln, what))
            .collect::<Result<_>>()?;
        if v[2] < 0.0 || v[3] < 0.0 {
            return Err(Error::parse(ln, "negative detection width or height"));
        }
        dets.push(Detection {
            bbox: BoxXYXY::from_xywh(v[0], v[1], v[2], v[3]),
            score: v[4],
        });
    }
    Ok((key, dets))
}

/// Relative file name for an image key: extension swapped for `.txt`.
pub fn detection_file_name(key: &str) -> PathBuf {
    let p = Path::new(key);
    let mut rel: PathBuf = p
        .components()
        .filter(|c| matches!(c, std::path::Component::Normal(_)))
        .collect();
    rel.set_extension("txt");
    rel
}

/// Write one file per image under `dir`. `cap` guards the per-image limit;
/// pass `None` to disable it.
pub fn write_detections(
    dets: &[(String, Vec<Detection>)],
    dir: impl AsRef<Path>,
    cap: Option<usize>,
) -> Result<()> {
    let dir = dir.as_ref();
    for (key, list) in dets {
        let text = detections_to_string(key, list, cap)?;
        let path = dir.join(detection_file_name(key));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn collect_txt(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_txt(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "txt") {
            out.push(p);
        }
    }
    Ok(())
}

/// Read every `.txt` detection file below `dir`, sorted by image key.
pub fn parse_detections(dir: impl AsRef<Path>) -> Result<Vec<(String, Vec<Detection>)>> {
    let mut files = Vec::new();
    collect_txt(dir.as_ref(), &mut files)?;
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        out.push(parse_detections_str(&text).map_err(|e| e.at_path(&f))?);
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
