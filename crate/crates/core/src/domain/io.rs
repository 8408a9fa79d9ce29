//! File formats: detections as JSON Lines, cases and fusion parameters as
//! single JSON documents.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::types::{
    ConfidenceState, DetectionSet, DistanceMode, FusionParams, SliceDetection, SpineCase,
};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        message: e.to_string(),
    }
}

/// Parses a JSON document into any deserializable type.
pub fn parse_json<D: DeserializeOwned>(text: &str) -> Result<D> {
    serde_json::from_str(text).map_err(json_err)
}

pub fn to_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string(value).expect("serializable value")
}

pub fn to_json_pretty<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

#[derive(Serialize, Deserialize)]
struct DetectionHeader {
    case_id: String,
    volume_shape: [usize; 3],
    k: usize,
}

pub fn parse_detections<T: Real>(text: &str) -> Result<DetectionSet<T>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    let header: DetectionHeader = serde_json::from_str(header).map_err(|e| Error::Parse {
        line: hline + 1,
        message: format!("header: {e}"),
    })?;
    let mut detections = Vec::new();
    for (n, line) in lines {
        let d: SliceDetection<T> = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        detections.push(d);
    }
    let set = DetectionSet {
        case_id: header.case_id,
        volume_shape: header.volume_shape,
        k: header.k,
        detections,
    };
    set.validate()?;
    Ok(set)
}

pub fn detections_to_string<T: Real>(set: &DetectionSet<T>) -> String {
    let header = DetectionHeader {
        case_id: set.case_id.clone(),
        volume_shape: set.volume_shape,
        k: set.k,
    };
    let mut out = to_json(&header);
    out.push('\n');
    for d in &set.detections {
        out.push_str(&to_json(d));
        out.push('\n');
    }
    out
}

pub fn load_detections<T: Real>(path: &Path) -> Result<DetectionSet<T>> {
    parse_detections(&read_text(path)?)
}

pub fn save_detections<T: Real>(set: &DetectionSet<T>, path: &Path) -> Result<()> {
    write_text(path, &detections_to_string(set))
}

/// Parses and validates a case. Sample rows are accepted at the ingest
/// tolerance and renormalized when needed.
pub fn parse_case<T: Real>(text: &str) -> Result<SpineCase<T>> {
    let mut case: SpineCase<T> = parse_json(text)?;
    for v in &mut case.vertebrae {
        for s in &mut v.mc.samples {
            *s = ConfidenceState::from_ingest(std::mem::take(&mut s.probs))?;
        }
        if let Some(u) = &mut v.uncertainty {
            u.mean_probs = ConfidenceState::from_ingest(std::mem::take(&mut u.mean_probs.probs))?;
        }
    }
    case.validate()?;
    Ok(case)
}

pub fn case_to_string<T: Real>(case: &SpineCase<T>) -> String {
    let mut s = to_json(case);
    s.push('\n');
    s
}

pub fn load_case<T: Real>(path: &Path) -> Result<SpineCase<T>> {
    parse_case(&read_text(path)?)
}

pub fn save_case<T: Real>(case: &SpineCase<T>, path: &Path) -> Result<()> {
    write_text(path, &case_to_string(case))
}

#[derive(Deserialize)]
struct ParamsFile<T> {
    theta: T,
    hops: usize,
    window: usize,
    distance_mode: DistanceMode,
    phi: Map<String, Value>,
}

fn offset_key(d: i32) -> String {
    format!("{d:+}")
}

fn parse_offset_key(key: &str) -> Result<i32> {
    let bad = || Error::Parse {
        line: 0,
        message: format!("phi key {key:?} is not a signed offset like \"+1\" or \"-2\""),
    };
    if !(key.starts_with('+') || key.starts_with('-')) {
        return Err(bad());
    }
    key.parse().map_err(|_| bad())
}

pub fn parse_params<T: Real>(text: &str) -> Result<FusionParams<T>> {
    let file: ParamsFile<T> = parse_json(text)?;
    let mut phi = std::collections::BTreeMap::new();
    for (key, value) in file.phi {
        let d = parse_offset_key(&key)?;
        let m: Vec<T> = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: 0,
            message: format!("phi[{key}]: {e}"),
        })?;
        phi.insert(d, m);
    }
    let p = FusionParams {
        theta: file.theta,
        hops: file.hops,
        window: file.window,
        distance_mode: file.distance_mode,
        phi,
    };
    p.validate()?;
    Ok(p)
}

pub fn params_to_string<T: Real>(p: &FusionParams<T>) -> String {
    let mut phi = Map::new();
    for (d, m) in &p.phi {
        phi.insert(offset_key(*d), serde_json::to_value(m).expect("numbers"));
    }
    let mut doc = Map::new();
    doc.insert("theta".into(), serde_json::to_value(p.theta).expect("number"));
    doc.insert("hops".into(), p.hops.into());
    doc.insert("window".into(), p.window.into());
    doc.insert(
        "distance_mode".into(),
        serde_json::to_value(p.distance_mode).expect("enum"),
    );
    doc.insert("phi".into(), Value::Object(phi));
    to_json_pretty(&Value::Object(doc))
}

pub fn load_params<T: Real>(path: &Path) -> Result<FusionParams<T>> {
    parse_params(&read_text(path)?)
}

pub fn save_params<T: Real>(p: &FusionParams<T>, path: &Path) -> Result<()> {
    write_text(path, &params_to_string(p))
}
