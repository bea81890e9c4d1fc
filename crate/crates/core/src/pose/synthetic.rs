//! Seeded sinusoidal pose generator with region-localized anomalies.
//!
//! Each actor oscillates around a rest skeleton. Per actor, the image
//! center, body scale, tempo, phase and drift are drawn at random; limbs on
//! opposite sides move in antiphase. Observation noise is drawn from its own
//! stream per track, independent of anomaly placement, so a generation with
//! anomalies differs from the clean one only inside the affected region and
//! span.

use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array3;

use super::{LabelSet, PoseDataset, PoseTrack, Region, Skeleton};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyKind {
    /// The region stops articulating; observation noise continues.
    Freeze,
    /// The region's observation noise is amplified by `jitter_gain`.
    Jitter,
    /// Every joint's tempo is multiplied by `speedup_gain`.
    Speedup,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [AnomalyKind::Freeze, AnomalyKind::Jitter, AnomalyKind::Speedup];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::Freeze => "freeze",
            AnomalyKind::Jitter => "jitter",
            AnomalyKind::Speedup => "speedup",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "freeze" | "region-freeze" => Ok(AnomalyKind::Freeze),
            "jitter" | "region-jitter" => Ok(AnomalyKind::Jitter),
            "speedup" | "global-speedup" => Ok(AnomalyKind::Speedup),
            other => Err(Error::config(format!("unknown anomaly kind `{other}`"))),
        }
    }
}

/// An anomalous interval on one actor, frames `start..=end`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySpan {
    pub video_id: String,
    pub actor_id: String,
    pub kind: AnomalyKind,
    /// Ignored for [`AnomalyKind::Speedup`].
    pub region: Region,
    pub start: i64,
    pub end: i64,
}

impl AnomalySpan {
    pub fn contains(&self, frame: i64) -> bool {
        (self.start..=self.end).contains(&frame)
    }
}

impl fmt::Display for AnomalySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}-{}",
            self.video_id, self.actor_id, self.kind, self.region, self.start, self.end
        )
    }
}

impl FromStr for AnomalySpan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::config(format!("anomaly `{s}` is not `video:actor:kind:region:start-end`"));
        if parts.len() != 5 {
            return Err(bad());
        }
        let (start, end) = parts[4].split_once('-').ok_or_else(bad)?;
        let start: i64 = start.trim().parse().map_err(|_| bad())?;
        let end: i64 = end.trim().parse().map_err(|_| bad())?;
        if end < start {
            return Err(bad());
        }
        Ok(AnomalySpan {
            video_id: parts[0].to_string(),
            actor_id: parts[1].to_string(),
            kind: parts[2].parse()?,
            region: Region::parse(parts[3])?,
            start,
            end,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub videos: usize,
    pub actors: usize,
    pub frames: usize,
    pub joints: usize,
    pub channels: usize,
    /// Observation noise std in image units.
    pub noise: f64,
    /// Limb swing in body units (one body is roughly 0.15 to 0.3 image units).
    pub amplitude: f64,
    /// Mean tempo in cycles per frame.
    pub frequency: f64,
    /// Std of the per-frame drift of each actor, image units.
    pub drift: f64,
    /// Target fraction of each video's frames covered by sampled spans.
    pub anomaly_rate: f64,
    /// Noise multiplier inside jitter spans.
    pub jitter_gain: f64,
    /// Tempo multiplier inside speed-up spans.
    pub speedup_gain: f64,
    pub span_min: usize,
    pub span_max: usize,
    /// Kinds and regions sampled for automatically placed spans.
    pub kinds: Vec<AnomalyKind>,
    pub regions: Vec<Region>,
    /// Explicitly placed spans, applied in addition to sampled ones.
    pub anomalies: Vec<AnomalySpan>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            videos: 4,
            actors: 2,
            frames: 200,
            joints: 17,
            channels: 2,
            noise: 0.002,
            amplitude: 0.2,
            frequency: 1.0 / 32.0,
            drift: 0.0005,
            anomaly_rate: 0.0,
            jitter_gain: 5.0,
            speedup_gain: 2.0,
            span_min: 12,
            span_max: 24,
            kinds: vec![AnomalyKind::Freeze, AnomalyKind::Jitter],
            regions: vec![
                Region::LeftArm,
                Region::RightArm,
                Region::LeftLeg,
                Region::RightLeg,
            ],
            anomalies: Vec::new(),
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split_list<T>(raw: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

impl SyntheticSpec {
    pub fn video_id(index: usize) -> String {
        format!("v{index:03}")
    }

    pub fn actor_id(index: usize) -> String {
        format!("a{index}")
    }

    /// Parses `key = value` text; missing keys keep their defaults.
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let mut s = SyntheticSpec::default();
        macro_rules! field {
            ($($name:ident),*) => {$(
                if let Some(v) = kv.take(stringify!($name))? { s.$name = v; }
            )*};
        }
        field!(
            seed, videos, actors, frames, joints, channels, noise, amplitude, frequency, drift,
            anomaly_rate, jitter_gain, speedup_gain, span_min, span_max
        );
        if let Some(raw) = kv.take::<String>("kinds")? {
            s.kinds = split_list(&raw, |k| k.parse())?;
        }
        if let Some(raw) = kv.take::<String>("regions")? {
            s.regions = split_list(&raw, Region::parse)?;
        }
        for (line, raw) in kv.take_all("anomaly") {
            let span = raw.parse().map_err(|e: Error| Error::Parse {
                path: kv.path().to_path_buf(),
                line,
                message: e.to_string(),
            })?;
            s.anomalies.push(span);
        }
        kv.finish()?;
        s.validate()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KvFile::read(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(KvFile::parse(text, Path::new("<spec>"))?)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($($name:ident),*) => {$(
                writeln!(out, "{} = {}", stringify!($name), self.$name).unwrap();
            )*};
        }
        emit!(
            seed, videos, actors, frames, joints, channels, noise, amplitude, frequency, drift,
            anomaly_rate, jitter_gain, speedup_gain, span_min, span_max
        );
        writeln!(out, "kinds = {}", join(&self.kinds)).unwrap();
        writeln!(out, "regions = {}", join(&self.regions)).unwrap();
        for a in &self.anomalies {
            writeln!(out, "anomaly = {a}").unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.videos == 0 || self.actors == 0 || self.frames == 0 {
            return fail("videos, actors and frames must be positive".into());
        }
        if self.joints < 2 || self.channels == 0 {
            return fail("need at least 2 joints and 1 channel".into());
        }
        if !(self.noise >= 0.0 && self.amplitude >= 0.0 && self.frequency > 0.0 && self.drift >= 0.0) {
            return fail("noise, amplitude and drift must be non-negative, frequency positive".into());
        }
        if !(self.jitter_gain >= 0.0 && self.speedup_gain > 0.0) {
            return fail("jitter_gain must be non-negative and speedup_gain positive".into());
        }
        if !(0.0..1.0).contains(&self.anomaly_rate) {
            return fail(format!("anomaly_rate {} outside [0, 1)", self.anomaly_rate));
        }
        if self.anomaly_rate > 0.0 {
            if self.span_min == 0 || self.span_min > self.span_max || self.span_max > self.frames {
                return fail("need 1 <= span_min <= span_max <= frames".into());
            }
            if self.kinds.is_empty() || self.regions.is_empty() {
                return fail("anomaly sampling needs at least one kind and one region".into());
            }
        }
        let skeleton = Skeleton::for_joints(self.joints);
        if self.anomaly_rate > 0.0 {
            for &r in &self.regions {
                skeleton.region_joints(r)?;
            }
        }
        for a in &self.anomalies {
            skeleton.region_joints(a.region)?;
            let known_video = (0..self.videos).any(|v| Self::video_id(v) == a.video_id);
            let known_actor = (0..self.actors).any(|v| Self::actor_id(v) == a.actor_id);
            if !known_video || !known_actor {
                return fail(format!("anomaly `{a}` names an unknown video or actor"));
            }
            if a.start < 0 || a.end >= self.frames as i64 {
                return fail(format!("anomaly `{a}` lies outside frames 0..{}", self.frames));
            }
        }
        Ok(())
    }
}

/// Generated tracks, per-frame labels for every video frame, and the spans
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: PoseDataset,
    pub labels: LabelSet,
    pub spans: Vec<AnomalySpan>,
}

const STREAM_MOTION: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_PLACEMENT: u64 = 1 << 32;

fn region_gain(region: Region) -> f64 {
    match region {
        Region::Head => 0.15,
        Region::Torso => 0.3,
        Region::LeftArm | Region::RightArm => 1.0,
        Region::LeftLeg | Region::RightLeg => 0.8,
    }
}

fn region_phase(region: Region) -> f64 {
    match region {
        Region::LeftArm | Region::RightLeg => 0.0,
        Region::RightArm | Region::LeftLeg => PI,
        Region::Head | Region::Torso => 0.5 * PI,
    }
}

fn sample_spans(spec: &SyntheticSpec, root: &RngStream) -> Vec<AnomalySpan> {
    let mut spans = Vec::new();
    if spec.anomaly_rate <= 0.0 {
        return spans;
    }
    let target = (spec.anomaly_rate * spec.frames as f64).round() as usize;
    for v in 0..spec.videos {
        let mut rng = root.split(STREAM_PLACEMENT + v as u64);
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut covered = 0;
        for _ in 0..1000 {
            if covered >= target {
                break;
            }
            let len = spec.span_min + rng.below(spec.span_max - spec.span_min + 1);
            let len = len.min(target - covered).max(spec.span_min);
            let start = rng.below(spec.frames - len + 1);
            let end = start + len - 1;
            if taken.iter().any(|&(s, e)| start <= e + 1 && s <= end + 1) {
                continue;
            }
            taken.push((start, end));
            covered += len;
            spans.push(AnomalySpan {
                video_id: SyntheticSpec::video_id(v),
                actor_id: SyntheticSpec::actor_id(rng.below(spec.actors)),
                kind: spec.kinds[rng.below(spec.kinds.len())],
                region: spec.regions[rng.below(spec.regions.len())],
                start: start as i64,
                end: end as i64,
            });
        }
    }
    spans
}

fn generate_track(
    spec: &SyntheticSpec,
    skeleton: &Skeleton,
    root: &RngStream,
    video: usize,
    actor: usize,
    spans: &[&AnomalySpan],
) -> Result<Array3<f64>> {
    let track_rng = root.split(video as u64).split(actor as u64);
    let mut motion = track_rng.split(STREAM_MOTION);
    let mut noise = track_rng.split(STREAM_NOISE);
    let (j_count, c_count, frames) = (spec.joints, spec.channels, spec.frames);

    let center: Vec<f64> = (0..c_count).map(|_| 0.3 + 0.4 * motion.uniform()).collect();
    let scale = 0.15 + 0.15 * motion.uniform();
    let tempo = spec.frequency * (0.8 + 0.45 * motion.uniform());
    let phase0 = 2.0 * PI * motion.uniform();
    let drift: Vec<f64> = (0..c_count).map(|_| spec.drift * motion.normal()).collect();
    // Per joint and channel: swing gain and phase offset. Distal joints of a
    // limb swing wider and lag slightly.
    let mut gain = vec![vec![0.0; c_count]; j_count];
    let mut offset = vec![vec![0.0; c_count]; j_count];
    for j in 0..j_count {
        let region = skeleton.regions[j];
        let rank = (0..j).filter(|&i| skeleton.regions[i] == region).count() as f64;
        for c in 0..c_count {
            let channel_gain = if c == 0 { 1.0 } else { 0.5 };
            gain[j][c] = spec.amplitude * region_gain(region) * channel_gain * (1.0 + 0.3 * rank)
                * (0.9 + 0.2 * motion.uniform());
            offset[j][c] = region_phase(region) + 0.3 * rank + 0.5 * PI * c as f64
                + 0.2 * motion.normal();
        }
    }

    let mut region_masks = Vec::with_capacity(spans.len());
    for s in spans {
        let mut mask = vec![false; j_count];
        if s.kind == AnomalyKind::Speedup {
            mask.fill(true);
        } else {
            for j in skeleton.region_joints(s.region)? {
                mask[j] = true;
            }
        }
        region_masks.push(mask);
    }

    // Accumulated phase per joint; speed-ups advance it faster, freezes
    // stop it, so every joint stays continuous across span boundaries.
    let mut phase = vec![phase0; j_count];
    let mut coords = Array3::zeros((frames, j_count, c_count));
    for f in 0..frames {
        let frame = f as i64;
        let mut rate = vec![tempo; j_count];
        let mut noise_gain = vec![1.0; j_count];
        for (s, mask) in spans.iter().zip(&region_masks) {
            if !s.contains(frame) {
                continue;
            }
            for j in (0..j_count).filter(|&j| mask[j]) {
                match s.kind {
                    AnomalyKind::Freeze => rate[j] = 0.0,
                    AnomalyKind::Jitter => noise_gain[j] = spec.jitter_gain,
                    AnomalyKind::Speedup => rate[j] *= spec.speedup_gain,
                }
            }
        }
        for j in 0..j_count {
            let rest = skeleton.rest.get(j).copied().unwrap_or([0.0, 0.0]);
            for c in 0..c_count {
                let swing = gain[j][c] * (2.0 * PI * phase[j] + offset[j][c]).sin();
                let body = rest.get(c).copied().unwrap_or(0.0) + swing;
                let eps = noise.normal() * spec.noise * noise_gain[j];
                coords[[f, j, c]] = center[c] + scale * body + drift[c] * f as f64 + eps;
            }
            phase[j] += rate[j];
        }
    }
    Ok(coords)
}

/// Generates every `(video, actor)` track over frames `0..frames` and labels
/// each video frame anomalous iff some span covers it.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let skeleton = Skeleton::for_joints(spec.joints);
    let root = RngStream::new(spec.seed);
    let mut spans = sample_spans(spec, &root);
    spans.extend(spec.anomalies.iter().cloned());

    let mut dataset = PoseDataset::new(spec.joints, spec.channels);
    let mut labels = LabelSet::new();
    for v in 0..spec.videos {
        let video_id = SyntheticSpec::video_id(v);
        for a in 0..spec.actors {
            let actor_id = SyntheticSpec::actor_id(a);
            let mine: Vec<&AnomalySpan> = spans
                .iter()
                .filter(|s| s.video_id == video_id && s.actor_id == actor_id)
                .collect();
            let coords = generate_track(spec, &skeleton, &root, v, a, &mine)?;
            dataset.tracks.push(PoseTrack {
                video_id: video_id.clone(),
                actor_id,
                start_frame: 0,
                coords,
            });
        }
        for f in 0..spec.frames as i64 {
            let hit = spans.iter().any(|s| s.video_id == video_id && s.contains(f));
            labels.mark(&video_id, f, hit);
        }
    }
    Ok(SyntheticData {
        dataset,
        labels,
        spans,
    })
}
