//! Frame-level scores, ROC analysis, parameter accounting and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real};
use crate::pipeline::WindowScore;
use crate::pose::LabelSet;

/// Scores for the consecutive frames of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoreSeries {
    pub video_id: String,
    pub first_frame: i64,
    pub scores: Vec<f64>,
    /// Windows contributing to each frame; empty when read from a file.
    pub coverage: Vec<usize>,
}

impl FrameScoreSeries {
    pub fn frames(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (self.first_frame + i as i64, s))
    }
}

/// Spreads each window score over its future frames `start + l .. start + L`,
/// averages overlapping contributions and lets uncovered frames copy the
/// nearest covered one. `spans` gives each video's `[first, last]` frames;
/// videos without any window are left out.
pub fn frame_scores(
    windows: &[WindowScore],
    spans: &BTreeMap<String, (i64, i64)>,
    window: usize,
    past: usize,
) -> Result<Vec<FrameScoreSeries>> {
    let mut acc: BTreeMap<&str, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for w in windows {
        let &(first, last) = spans.get(&w.video_id).ok_or_else(|| {
            Error::Data(format!("score refers to unknown video `{}`", w.video_id))
        })?;
        let len = (last - first + 1) as usize;
        let (sums, counts) = acc
            .entry(w.video_id.as_str())
            .or_insert_with(|| (vec![0.0; len], vec![0; len]));
        for f in w.start_frame + past as i64..w.start_frame + window as i64 {
            if f < first || f > last {
                return Err(Error::Data(format!(
                    "window at frame {} runs outside video `{}`",
                    w.start_frame, w.video_id
                )));
            }
            let i = (f - first) as usize;
            sums[i] += w.score;
            counts[i] += 1;
        }
    }
    let mut out = Vec::with_capacity(acc.len());
    for (video, (sums, counts)) in acc {
        let covered: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
        let mut scores = vec![0.0; counts.len()];
        for &i in &covered {
            scores[i] = sums[i] / counts[i] as f64;
        }
        // Gaps (leading, trailing or interior) take the closest covered
        // frame, preferring the earlier one on a tie.
        let mut next = 0;
        for i in 0..scores.len() {
            if counts[i] > 0 {
                continue;
            }
            while next + 1 < covered.len() && covered[next + 1] < i {
                next += 1;
            }
            let before = covered.get(next).filter(|&&c| c < i);
            let after = covered[next..].iter().find(|&&c| c > i);
            let src = match (before, after) {
                (Some(&b), Some(&a)) => {
                    if i - b <= a - i {
                        b
                    } else {
                        a
                    }
                }
                (Some(&b), None) => b,
                (None, Some(&a)) => a,
                (None, None) => unreachable!("a video in the map has a covered frame"),
            };
            scores[i] = scores[src];
        }
        out.push(FrameScoreSeries {
            video_id: video.to_string(),
            first_frame: spans[video].0,
            scores,
            coverage: counts,
        });
    }
    Ok(out)
}

/// Area under the ROC curve with the curve itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub auroc: f64,
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub curve: Vec<(f64, f64)>,
    pub positives: usize,
    pub negatives: usize,
}

/// Mann-Whitney AUROC of `scores` against `labels` (true = anomalous); ties
/// count one half.
pub fn auroc_scores(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 {
        return Err(Error::Evaluation("no anomalous frames; AUROC needs both classes".into()));
    }
    if negatives == 0 {
        return Err(Error::Evaluation("no normal frames; AUROC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (p, n) = (positives as f64, negatives as f64);
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Trapezoid over a tied block equals counting ties as one half.
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        curve.push((fp as f64 / n, tp as f64 / p));
    }
    Ok(RocResult {
        auroc: area / (p * n),
        curve,
        positives,
        negatives,
    })
}

/// AUROC over every frame that has both a score and a label.
pub fn auroc(series: &[FrameScoreSeries], labels: &LabelSet) -> Result<RocResult> {
    let (scores, flags) = joined(series, labels);
    auroc_scores(&scores, &flags)
}

fn joined(series: &[FrameScoreSeries], labels: &LabelSet) -> (Vec<f64>, Vec<bool>) {
    let mut scores = Vec::new();
    let mut flags = Vec::new();
    for s in series {
        for (frame, score) in s.frames() {
            if let Some(l) = labels.get(&s.video_id, frame) {
                scores.push(score);
                flags.push(l);
            }
        }
    }
    (scores, flags)
}

/// Trapezoidal area under a curve of `(fpr, tpr)` points.
pub fn curve_area(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Trainable scalar counts, in total and per module and tensor group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub total: usize,
    /// `(module, count)` in first-seen order.
    pub modules: Vec<(String, usize)>,
    /// `(group, count)` where a group is the first two name components.
    pub groups: Vec<(String, usize)>,
}

fn module_of(name: &str) -> &'static str {
    match name.split('.').next().unwrap_or("") {
        "graph" => "graph-learning",
        "forecast" => "forecaster",
        "puzzle" => "jigsaw",
        "denoiser" => "diffusion",
        _ => "other",
    }
}

fn bump(list: &mut Vec<(String, usize)>, key: &str, n: usize) {
    match list.iter_mut().find(|(k, _)| k == key) {
        Some(e) => e.1 += n,
        None => list.push((key.to_string(), n)),
    }
}

pub fn param_count<F: Real>(store: &ParamStore<F>) -> ParamReport {
    let mut modules = Vec::new();
    let mut groups = Vec::new();
    let mut total = 0;
    for (name, v) in store.iter() {
        total += v.len();
        bump(&mut modules, module_of(name), v.len());
        let group: Vec<&str> = name.split('.').take(2).collect();
        bump(&mut groups, &group.join("."), v.len());
    }
    ParamReport {
        total,
        modules,
        groups,
    }
}

impl std::fmt::Display for ParamReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "total {}", self.total)?;
        for (m, n) in &self.modules {
            writeln!(f, "module {m} {n}")?;
        }
        for (g, n) in &self.groups {
            writeln!(f, "group {g} {n}")?;
        }
        Ok(())
    }
}

pub const SCORE_HEADER: &str = "video_id,frame,score";

pub fn score_csv(series: &[FrameScoreSeries]) -> String {
    let mut out = format!("{SCORE_HEADER}\n");
    for s in series {
        for (frame, score) in s.frames() {
            writeln!(out, "{},{frame},{score}", s.video_id).unwrap();
        }
    }
    out
}

/// Parses a score CSV; each video's frames must be consecutive.
pub fn parse_score_csv(text: &str, path: &Path) -> Result<Vec<FrameScoreSeries>> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SCORE_HEADER => {}
        _ => return Err(perr(1, format!("expected header `{SCORE_HEADER}`"))),
    }
    let mut videos: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(perr(i + 1, "expected `video_id,frame,score`".into()));
        }
        let frame: i64 = parts[1].parse().map_err(|_| perr(i + 1, format!("bad frame `{}`", parts[1])))?;
        let score: f64 = parts[2].parse().map_err(|_| perr(i + 1, format!("bad score `{}`", parts[2])))?;
        if videos.entry(parts[0].to_string()).or_default().insert(frame, score).is_some() {
            return Err(Error::Duplicate(format!(
                "{}:{}: second score for video `{}` frame {frame}",
                path.display(),
                i + 1,
                parts[0]
            )));
        }
    }
    videos
        .into_iter()
        .map(|(video_id, frames)| {
            let first = *frames.keys().next().unwrap();
            if frames.keys().enumerate().any(|(i, &f)| f != first + i as i64) {
                return Err(Error::Data(format!("scores for video `{video_id}` skip frames")));
            }
            Ok(FrameScoreSeries {
                video_id,
                first_frame: first,
                scores: frames.into_values().collect(),
                coverage: Vec::new(),
            })
        })
        .collect()
}

pub fn read_score_csv(path: &Path) -> Result<Vec<FrameScoreSeries>> {
    parse_score_csv(&fs::read_to_string(path)?, path)
}

pub fn roc_csv(roc: &RocResult) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (x, y) in &roc.curve {
        writeln!(out, "{x},{y}").unwrap();
    }
    out
}

pub fn parse_roc_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (a, b) = l
                .split_once(',')
                .ok_or_else(|| Error::Evaluation(format!("bad ROC row `{l}`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Evaluation(format!("bad ROC value `{s}`")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

pub const HISTOGRAM_BINS: usize = 50;

/// Two-series score histogram as a standalone SVG. The anomalous series is
/// omitted when empty.
pub fn histogram_svg(normal: &[f64], anomalous: &[f64]) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let all = normal.iter().chain(anomalous);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let width = if hi > lo { hi - lo } else { 1.0 };
    let bin = |v: f64| (((v - lo) / width * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
    let density = |xs: &[f64]| {
        let mut c = vec![0.0; HISTOGRAM_BINS];
        for &x in xs {
            c[bin(x)] += 1.0;
        }
        let n = xs.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    };
    let mut series = vec![("normal", "#1f77b4", density(normal))];
    if !anomalous.is_empty() {
        series.push(("anomalous", "#d62728", density(anomalous)));
    }
    let top = series
        .iter()
        .flat_map(|s| s.2.iter().copied())
        .fold(0.0, f64::max)
        .max(1e-12);
    let bw = (w - 2.0 * pad) / HISTOGRAM_BINS as f64;
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(out, r##"<rect width="{w}" height="{h}" fill="#ffffff"/>"##).unwrap();
    for (name, color, counts) in &series {
        writeln!(out, r#"<g id="{name}" fill="{color}" fill-opacity="0.5">"#).unwrap();
        for (i, &c) in counts.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let bh = c / top * (h - 2.0 * pad);
            writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
                pad + i as f64 * bw,
                h - pad - bh,
                bw,
                bh
            )
            .unwrap();
        }
        writeln!(out, "</g>").unwrap();
    }
    writeln!(
        out,
        r##"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="#000000"/>"##,
        y = h - pad,
        x2 = w - pad
    )
    .unwrap();
    writeln!(out, r#"<text x="{pad}" y="{}" font-size="12">{lo:.4}</text>"#, h - pad / 3.0).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{hi:.4}</text>"#, w - pad, h - pad / 3.0).unwrap();
    for (i, (name, color, _)) in series.iter().enumerate() {
        let y = pad / 2.0 + 16.0 * i as f64;
        writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, w - 150.0, y - 9.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{y}" font-size="12">{name}</text>"#, w - 135.0).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `scores.csv`, `roc.csv`, `histogram.svg` and `summary.txt` into
/// `out_dir` (created if missing).
pub fn emit_report(series: &[FrameScoreSeries], labels: &LabelSet, roc: &RocResult, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("scores.csv"), score_csv(series))?;
    fs::write(out_dir.join("roc.csv"), roc_csv(roc))?;
    let (scores, flags) = joined(series, labels);
    let normal: Vec<f64> = scores.iter().zip(&flags).filter(|p| !*p.1).map(|p| *p.0).collect();
    let anomalous: Vec<f64> = scores.iter().zip(&flags).filter(|p| *p.1).map(|p| *p.0).collect();
    fs::write(out_dir.join("histogram.svg"), histogram_svg(&normal, &anomalous))?;
    fs::write(
        out_dir.join("summary.txt"),
        format!(
            "auroc = {}\npositives = {}\nnegatives = {}\n",
            roc.auroc, roc.positives, roc.negatives
        ),
    )?;
    Ok(())
}
