//! Text formats.
//!
//! Poses: header `#poses v1 J=<int> C=<int>`, then one record per line:
//! `<video_id>,<frame>,<actor_id>,<x1>,<y1>,...` with `J*C` coordinates.
//!
//! Labels: header `#labels v1`, then `<video_id>,<frame>,<0|1>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array3;

use super::{FrameLabel, LabelSet, PoseDataset, PoseTrack};
use crate::error::{Error, Result};

pub const POSES_FILE: &str = "poses.txt";
pub const LABELS_FILE: &str = "labels.txt";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_header_int(path: &Path, token: Option<&str>, key: &str) -> Result<usize> {
    token
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| parse_err(path, 1, format!("header must declare {key}=<positive int>")))
}

pub fn parse_poses(text: &str, path: &Path) -> Result<PoseDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing `#poses v1` header"))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("#poses") || tokens.next() != Some("v1") {
        return Err(parse_err(path, 1, "expected header `#poses v1 J=<int> C=<int>`"));
    }
    let joints = parse_header_int(path, tokens.next(), "J")?;
    let channels = parse_header_int(path, tokens.next(), "C")?;
    let width = joints * channels;

    let mut grouped: BTreeMap<(String, String), BTreeMap<i64, Vec<f64>>> = BTreeMap::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 + width {
            return Err(parse_err(
                path,
                line_no,
                format!(
                    "expected {} coordinates for J={joints} C={channels}, found {}",
                    width,
                    fields.len().saturating_sub(3)
                ),
            ));
        }
        let video = fields[0].to_string();
        let actor = fields[2].to_string();
        if video.is_empty() || actor.is_empty() {
            return Err(parse_err(path, line_no, "empty video or actor id"));
        }
        let frame: i64 = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad frame `{}`", fields[1])))?;
        let coords = fields[3..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line_no, format!("bad coordinate `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let track = grouped.entry((video.clone(), actor.clone())).or_default();
        if track.insert(frame, coords).is_some() {
            return Err(Error::Duplicate(format!(
                "{}:{line_no}: video `{video}` frame {frame} actor `{actor}`",
                path.display()
            )));
        }
    }

    let mut dataset = PoseDataset::new(joints, channels);
    for ((video_id, actor_id), frames) in grouped {
        let start = *frames.keys().next().unwrap();
        for (offset, &f) in frames.keys().enumerate() {
            if f != start + offset as i64 {
                return Err(Error::data(format!(
                    "track video `{video_id}` actor `{actor_id}` is missing frame {}",
                    start + offset as i64
                )));
            }
        }
        let n = frames.len();
        let flat: Vec<f64> = frames.into_values().flatten().collect();
        let coords = Array3::from_shape_vec((n, joints, channels), flat)
            .expect("record widths checked above");
        dataset.tracks.push(PoseTrack {
            video_id,
            actor_id,
            start_frame: start,
            coords,
        });
    }
    Ok(dataset)
}

pub fn read_poses(path: &Path) -> Result<PoseDataset> {
    parse_poses(&fs::read_to_string(path)?, path)
}

pub fn format_poses(dataset: &PoseDataset) -> String {
    let mut out = format!("#poses v1 J={} C={}\n", dataset.joints, dataset.channels);
    for t in &dataset.tracks {
        for (i, frame) in t.coords.outer_iter().enumerate() {
            write!(out, "{},{},{}", t.video_id, t.start_frame + i as i64, t.actor_id).unwrap();
            for v in frame.iter() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_poses(path: &Path, dataset: &PoseDataset) -> Result<()> {
    fs::write(path, format_poses(dataset))?;
    Ok(())
}

pub fn parse_labels(text: &str, path: &Path) -> Result<LabelSet> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "#labels v1" => {}
        _ => return Err(parse_err(path, 1, "expected header `#labels v1`")),
    }
    let mut labels = LabelSet::new();
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(path, i + 1, "expected `<video_id>,<frame>,<0|1>`"));
        }
        let frame: i64 = fields[1]
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad frame `{}`", fields[1])))?;
        let anomalous = match fields[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, i + 1, format!("bad label `{other}`"))),
        };
        let label = FrameLabel {
            video_id: fields[0].to_string(),
            frame,
            anomalous,
        };
        if !labels.insert(label) {
            return Err(Error::Duplicate(format!(
                "{}:{}: label for video `{}` frame {frame}",
                path.display(),
                i + 1,
                fields[0]
            )));
        }
    }
    Ok(labels)
}

pub fn read_labels(path: &Path) -> Result<LabelSet> {
    parse_labels(&fs::read_to_string(path)?, path)
}

pub fn write_labels(path: &Path, labels: &LabelSet) -> Result<()> {
    let mut out = String::from("#labels v1\n");
    for l in labels.iter() {
        writeln!(out, "{},{},{}", l.video_id, l.frame, l.anomalous as u8).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads `poses.txt` (and `labels.txt` when asked) from `dir`. A path to a
/// pose file is accepted as well; labels are then looked up next to it.
pub fn load_pose_dataset(path: &Path, with_labels: bool) -> Result<(PoseDataset, Option<LabelSet>)> {
    let (poses, labels) = if path.is_dir() {
        (path.join(POSES_FILE), path.join(LABELS_FILE))
    } else {
        let parent = path.parent().unwrap_or(Path::new("."));
        (path.to_path_buf(), parent.join(LABELS_FILE))
    };
    let dataset = read_poses(&poses)?;
    let labels = if with_labels {
        Some(read_labels(&labels)?)
    } else {
        None
    };
    Ok((dataset, labels))
}
