//! On-disk sequence format shared with external depth predictors.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/poses.txt          index tx ty tz qw qx qy qz   (camera-from-world)
//! <dir>/rgb/000000.png     8-bit RGB
//! <dir>/depth/000000.dpt   "DPTH", u32 width, u32 height, u32 reserved, f32 LE meters
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::{DepthMap, Frame, Image, RgbImage};
use crate::scene::{
    build_scene, generate_trajectory, randomize_appearance, render_frame, ColonScene, Difficulty,
    TrajectoryParams,
};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
pub const DEPTH_HEADER_LEN: usize = 16;
pub const POSE_CONVENTION: &str = "camera-from-world; quaternion w x y z";
/// Validation share used when none is configured.
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Val,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthUnit {
    #[default]
    Meters,
}

/// One rendered run: a scene, an appearance and a contiguous frame range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub scene_seed: u64,
    pub difficulty: Difficulty,
    /// `None` renders the scene's own appearance.
    pub appearance_seed: Option<u64>,
    pub start: usize,
    pub len: usize,
    /// Trajectory arclength step (m).
    pub advance_per_frame: f64,
    pub jitter_seed: Option<u64>,
}

impl SequenceInfo {
    pub fn new(
        scene_seed: u64,
        difficulty: Difficulty,
        len: usize,
        advance_per_frame: f64,
    ) -> Self {
        Self {
            scene_seed,
            difficulty,
            appearance_seed: None,
            start: 0,
            len,
            advance_per_frame,
            jitter_seed: None,
        }
    }

    /// The scene this sequence was rendered from.
    pub fn scene(&self) -> ColonScene {
        let scene = build_scene(self.scene_seed, self.difficulty);
        match self.appearance_seed {
            Some(seed) => randomize_appearance(&scene, seed),
            None => scene,
        }
    }

    pub fn trajectory_params(&self) -> TrajectoryParams {
        TrajectoryParams {
            n_frames: self.len,
            advance_per_frame: self.advance_per_frame,
            start: 0.0,
            jitter_seed: self.jitter_seed,
        }
    }

    /// Renders the sequence; frame indices start at `self.start`.
    pub fn render(&self, intr: &CameraIntrinsics) -> Result<(Vec<Frame>, Vec<Pose>)> {
        let scene = self.scene();
        let poses = generate_trajectory(&scene, &self.trajectory_params())?;
        let frames = poses
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut f = render_frame(&scene, p, intr);
                f.frame_index = self.start + i;
                f
            })
            .collect();
        Ok((frames, poses))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n_frames: usize,
    pub intrinsics: CameraIntrinsics,
    pub depth_unit: DepthUnit,
    /// Label of every frame, indexed by frame.
    pub split: Vec<SplitLabel>,
    /// Seed of the first scene.
    pub scene_seed: u64,
    pub appearance_seeds: Vec<u64>,
    pub sequences: Vec<SequenceInfo>,
    /// Smallest and largest valid depth in the dataset, for normalisation.
    pub depth_range: [f64; 2],
    pub pose_convention: String,
}

impl DatasetManifest {
    /// Manifest for a single scene whose frames are split by time.
    pub fn single_sequence(name: &str, intr: CameraIntrinsics, info: SequenceInfo) -> Self {
        let n = info.len;
        Self {
            name: name.to_string(),
            n_frames: n,
            intrinsics: intr,
            depth_unit: DepthUnit::Meters,
            split: temporal_split(n, DEFAULT_VAL_FRACTION),
            scene_seed: info.scene_seed,
            appearance_seeds: info.appearance_seed.into_iter().collect(),
            sequences: vec![info],
            depth_range: [0.0, 0.0],
            pose_convention: POSE_CONVENTION.to_string(),
        }
    }

    /// Scene seed of every frame.
    pub fn frame_scenes(&self) -> Vec<u64> {
        let mut seeds = vec![self.scene_seed; self.n_frames];
        for seq in &self.sequences {
            for s in seeds.iter_mut().skip(seq.start).take(seq.len) {
                *s = seq.scene_seed;
            }
        }
        seeds
    }

    pub fn val_fraction(&self) -> f64 {
        split_fraction(&self.split)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.split.len() != self.n_frames {
            return Err(Error::LengthMismatch(format!(
                "split labels {} frames, manifest has {}",
                self.split.len(),
                self.n_frames
            )));
        }
        let covered: usize = self.sequences.iter().map(|s| s.len).sum();
        if !self.sequences.is_empty() && covered != self.n_frames {
            return Err(Error::LengthMismatch(format!(
                "sequences cover {covered} frames, manifest has {}",
                self.n_frames
            )));
        }
        Ok(())
    }
}

/// Frame labels plus the resulting validation share.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub labels: Vec<SplitLabel>,
    pub val_fraction: f64,
}

fn split_fraction(labels: &[SplitLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| **l == SplitLabel::Val).count() as f64 / labels.len() as f64
}

/// Sends every frame of a held-out scene to validation and the rest to training.
pub fn make_split(frame_scene_seeds: &[u64], holdout_scene_seeds: &[u64]) -> Result<Split> {
    if holdout_scene_seeds.is_empty() {
        return Err(Error::EmptySplit);
    }
    let known: BTreeSet<u64> = frame_scene_seeds.iter().copied().collect();
    if let Some(s) = holdout_scene_seeds.iter().find(|s| !known.contains(s)) {
        return Err(Error::InvalidArgument(format!(
            "held-out scene seed {s} has no frames"
        )));
    }
    let holdout: BTreeSet<u64> = holdout_scene_seeds.iter().copied().collect();
    let labels: Vec<SplitLabel> = frame_scene_seeds
        .iter()
        .map(|s| {
            if holdout.contains(s) {
                SplitLabel::Val
            } else {
                SplitLabel::Train
            }
        })
        .collect();
    Ok(Split {
        val_fraction: split_fraction(&labels),
        labels,
    })
}

/// Picks `round(n_scenes * val_fraction)` scenes (at least one) to hold out,
/// spread evenly over the sorted unique seeds.
pub fn choose_holdout(frame_scene_seeds: &[u64], val_fraction: f64) -> Vec<u64> {
    let unique: Vec<u64> = frame_scene_seeds
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if unique.len() < 2 {
        return Vec::new();
    }
    let k = ((unique.len() as f64 * val_fraction).round() as usize).clamp(1, unique.len() - 1);
    (0..k)
        .map(|i| unique[(i * unique.len() + unique.len() / 2) / k])
        .collect()
}

/// Last `val_fraction` of the frames go to validation.
pub fn temporal_split(n_frames: usize, val_fraction: f64) -> Vec<SplitLabel> {
    let n_val = (n_frames as f64 * val_fraction).round() as usize;
    (0..n_frames)
        .map(|i| {
            if i + n_val >= n_frames {
                SplitLabel::Val
            } else {
                SplitLabel::Train
            }
        })
        .collect()
}

/// Layout of a multi-scene generation run, computed without rendering.
///
/// Every scene is rendered `variants` times along the same trajectory; with
/// more than one variant each gets a randomized appearance.
pub fn plan_sequences(
    scene_seeds: &[u64],
    variants: usize,
    template: &SequenceInfo,
) -> Vec<SequenceInfo> {
    let mut out: Vec<SequenceInfo> = Vec::with_capacity(scene_seeds.len() * variants);
    for &scene_seed in scene_seeds {
        for k in 0..variants {
            out.push(SequenceInfo {
                scene_seed,
                appearance_seed: (variants > 1).then(|| appearance_seed(scene_seed, k)),
                start: out.len() * template.len,
                ..template.clone()
            });
        }
    }
    out
}

/// Appearance seed of variant `k` of a scene.
pub fn appearance_seed(scene_seed: u64, k: usize) -> u64 {
    scene_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (k as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Manifest for a planned multi-scene dataset with a scene-disjoint split.
pub fn plan_manifest(
    name: &str,
    intr: CameraIntrinsics,
    sequences: Vec<SequenceInfo>,
    val_fraction: f64,
) -> Result<DatasetManifest> {
    let n_frames = sequences.iter().map(|s| s.len).sum();
    let mut manifest = DatasetManifest {
        name: name.to_string(),
        n_frames,
        intrinsics: intr,
        depth_unit: DepthUnit::Meters,
        split: Vec::new(),
        scene_seed: sequences.first().map_or(0, |s| s.scene_seed),
        appearance_seeds: sequences.iter().filter_map(|s| s.appearance_seed).collect(),
        sequences,
        depth_range: [0.0, 0.0],
        pose_convention: POSE_CONVENTION.to_string(),
    };
    let scenes = manifest.frame_scenes();
    let holdout = choose_holdout(&scenes, val_fraction);
    manifest.split = if holdout.is_empty() {
        temporal_split(n_frames, val_fraction)
    } else {
        make_split(&scenes, &holdout)?.labels
    };
    Ok(manifest)
}

pub fn rgb_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("rgb").join(format!("{index:06}.png"))
}

pub fn depth_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("depth").join(format!("{index:06}.dpt"))
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(DEPTH_HEADER_LEN + 4 * depth.len());
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for d in depth.as_slice() {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf
}

pub fn decode_depth(bytes: &[u8]) -> std::result::Result<DepthMap, String> {
    if bytes.len() < DEPTH_HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..4] != DEPTH_MAGIC {
        return Err("bad magic".to_string());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let expected = DEPTH_HEADER_LEN + 4 * w * h;
    if bytes.len() != expected {
        return Err(format!(
            "{w}x{h} needs {expected} bytes, found {}",
            bytes.len()
        ));
    }
    let data = bytes[DEPTH_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Image::from_vec(w, h, data))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_file(path, &encode_depth(depth))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth(&bytes).map_err(|r| Error::format(path, r))
}

pub fn write_rgb(path: &Path, rgb: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = rgb
        .as_slice()
        .iter()
        .flat_map(|c| c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let img = image::RgbImage::from_raw(rgb.width() as u32, rgb.height() as u32, bytes)
        .expect("buffer matches dimensions");
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| p.0.map(|c| c as f32 / 255.0))
        .collect();
    Ok(Image::from_vec(w, h, data))
}

/// One line per pose, floats in shortest round-trip form.
pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::new();
    for (i, p) in poses.iter().enumerate() {
        let t = p.translation;
        let q = p.quaternion();
        out.push_str(&format!(
            "{i} {} {} {} {} {} {} {}\n",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        ));
    }
    out
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::format(path, format!("line {}: {reason}", line_no + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| bad("bad frame index".into()))?;
        if index != poses.len() {
            return Err(bad(format!(
                "expected frame {}, found {index}",
                poses.len()
            )));
        }
        let mut v = [0.0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad(format!("bad number `{f}`")))?;
        }
        let q = [v[3], v[4], v[5], v[6]];
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(bad(format!("quaternion norm {norm}")));
        }
        poses.push(Pose::from_quaternion(
            q.map(|x| x / norm),
            Vector3::new(v[0], v[1], v[2]),
        ));
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    write_file(path, format_poses(poses).as_bytes())
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let json =
        serde_json::to_string_pretty(manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    write_file(&path, json.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    manifest
        .validate()
        .map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(manifest)
}

/// Writes one frame's RGB and depth files.
pub fn write_frame(dir: &Path, index: usize, frame: &Frame) -> Result<()> {
    write_rgb(&rgb_path(dir, index), &frame.rgb)?;
    write_depth(&depth_path(dir, index), &frame.depth)
}

pub fn write_sequence(
    dir: &Path,
    frames: &[Frame],
    poses: &[Pose],
    manifest: &DatasetManifest,
) -> Result<()> {
    if frames.len() != manifest.n_frames || poses.len() != manifest.n_frames {
        return Err(Error::LengthMismatch(format!(
            "{} frames and {} poses for a manifest of {}",
            frames.len(),
            poses.len(),
            manifest.n_frames
        )));
    }
    manifest.validate()?;
    for (i, f) in frames.iter().enumerate() {
        write_frame(dir, i, f)?;
    }
    write_poses(&dir.join("poses.txt"), poses)?;
    write_manifest(dir, manifest)
}

/// A dataset loaded from disk.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub poses: Vec<Pose>,
    pub manifest: DatasetManifest,
}

/// Reads frame `index`, checking it has the manifest's size.
pub fn read_frame(dir: &Path, index: usize, intr: &CameraIntrinsics) -> Result<Frame> {
    let (w, h) = (intr.width, intr.height);
    let depth = read_depth(&depth_path(dir, index)).map_err(|e| Error::Depth {
        frame_index: index,
        reason: e.to_string(),
    })?;
    let rgb = read_rgb(&rgb_path(dir, index))?;
    if depth.width() != w || depth.height() != h || !rgb.same_size(&depth) {
        return Err(Error::Depth {
            frame_index: index,
            reason: format!("frame is not {w}x{h}"),
        });
    }
    Ok(Frame::new(rgb, depth, index))
}

/// Smallest and largest valid depth over `frames`, `[0, 0]` if none is valid.
pub fn depth_range<'a>(frames: impl IntoIterator<Item = &'a Frame>) -> [f64; 2] {
    let mut range = [f64::INFINITY, 0.0f64];
    for f in frames {
        for &d in f.depth.as_slice() {
            if d > 0.0 {
                range[0] = range[0].min(d as f64);
                range[1] = range[1].max(d as f64);
            }
        }
    }
    if range[1] > 0.0 {
        range
    } else {
        [0.0, 0.0]
    }
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let manifest = read_manifest(dir)?;
    let poses_path = dir.join("poses.txt");
    let poses = read_poses(&poses_path)?;
    if poses.len() != manifest.n_frames {
        return Err(Error::format(
            &poses_path,
            format!(
                "{} poses, manifest lists {} frames",
                poses.len(),
                manifest.n_frames
            ),
        ));
    }
    let frames = (0..manifest.n_frames)
        .map(|i| read_frame(dir, i, &manifest.intrinsics))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        frames,
        poses,
        manifest,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
