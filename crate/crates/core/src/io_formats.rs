//! Readers and writers for calibration, lidar scans, pseudo-label detections
//! and generated target bundles.
//!
//! Target bundle layout (one directory per frame):
//!
//! | file            | contents                                                    |
//! |-----------------|-------------------------------------------------------------|
//! | `depth.png`     | 16-bit grayscale, `round(depth * 256)`, 0 = unsupervised     |
//! | `depth.bin`     | full-precision depth target, `DPTD` header                   |
//! | `corners.bin`   | 4-channel corner heatmaps, `DEPT` header + LE `f32`          |
//! | `centers.bin`   | per-class center heatmaps, `DEPT` header + LE `f32`          |
//! | `detection.json`| center size/offset targets                                   |
//! | `meta.json`     | [`BundleMetadata`]                                           |
//!
//! `DEPT` header: magic `b"DEPT"`, then `u32` channels, height, width (LE).
//! `DPTD` header: magic `b"DPTD"`, then `u32` stride, height, width (LE),
//! followed by planes of `f64` depth (NaN = none), `f64` weight, `u32` seed
//! (`u32::MAX` = none) and `u8` provenance (0 none, 1 original, 2 propagated).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::depth_targets::{Box2D, DepthLabel, Provenance, SemiDenseDepthTarget};
use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraModel, LidarPoint, RigidTransform};
use crate::keypoint_targets::{CenterTarget, DetectionTargets, HeatmapSet};

pub const HEATMAP_MAGIC: &[u8; 4] = b"DEPT";
pub const DEPTH_MAGIC: &[u8; 4] = b"DPTD";
pub const DEPTH_PNG_SCALE: f64 = 256.0;
const ROTATION_SNAP_TOLERANCE: f64 = 1e-3;

/// Parsed KITTI calibration for the left color camera.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiCalib {
    pub camera: CameraModel,
    /// Lidar → rectified camera 2, with `R0_rect` and the `P2` offset folded in.
    pub lidar_to_cam: RigidTransform,
    pub rect: Option<Matrix3<f64>>,
    pub p2: [f64; 12],
    pub tr_velo_to_cam: [f64; 12],
}

fn parse_floats<const N: usize>(values: &str, key: &str, line: usize) -> Result<[f64; N]> {
    let parsed: Vec<f64> = values
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("`{t}` is not a number in `{key}`"),
            })
        })
        .collect::<Result<_>>()?;
    parsed.try_into().map_err(|v: Vec<f64>| Error::Parse {
        line,
        message: format!("`{key}` needs {N} values, found {}", v.len()),
    })
}

/// Parses KITTI object calibration text. Image size is not part of the
/// format and must be supplied.
pub fn read_kitti_calib(text: &str, image_w: u32, image_h: u32) -> Result<KittiCalib> {
    let mut p2 = None;
    let mut tr = None;
    let mut rect = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, values)) = line.split_once(':') else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `key: values`, got `{line}`"),
            });
        };
        match key.trim() {
            "P2" => p2 = Some(parse_floats::<12>(values, "P2", line_no)?),
            "Tr_velo_to_cam" => tr = Some(parse_floats::<12>(values, "Tr_velo_to_cam", line_no)?),
            "R0_rect" => rect = Some(parse_floats::<9>(values, "R0_rect", line_no)?),
            _ => {}
        }
    }
    let p2 = p2.ok_or_else(|| Error::MissingKey("P2".into()))?;
    let tr = tr.ok_or_else(|| Error::MissingKey("Tr_velo_to_cam".into()))?;

    let camera = CameraModel::new(p2[0], p2[5], p2[2], p2[6], image_w, image_h)?;

    let tr_rot = Matrix3::new(
        tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10],
    );
    let tr_t = Vector3::new(tr[3], tr[7], tr[11]);
    let rect_m = rect.map(|r| Matrix3::from_row_slice(&r));
    let (rot, mut t) = match rect_m {
        Some(r) => (r * tr_rot, r * tr_t),
        None => (tr_rot, tr_t),
    };
    // P2 = K [I | k], so the fourth column contributes K^-1 p4 to the translation
    let tz = p2[11];
    let ty = (p2[7] - camera.cy * tz) / camera.fy;
    let tx = (p2[3] - p2[1] * ty - camera.cx * tz) / camera.fx;
    t += Vector3::new(tx, ty, tz);

    let lidar_to_cam = RigidTransform::from_approximate(rot, t, ROTATION_SNAP_TOLERANCE)?;
    Ok(KittiCalib {
        camera,
        lidar_to_cam,
        rect: rect_m,
        p2,
        tr_velo_to_cam: tr,
    })
}

/// Little-endian `(x, y, z, intensity)` `f32` quadruples.
pub fn read_velodyne_bin(bytes: &[u8]) -> Result<Vec<LidarPoint>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::TruncatedFile {
            len: bytes.len(),
            record: 16,
        });
    }
    bytes
        .chunks_exact(16)
        .enumerate()
        .map(|(i, rec)| {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            let p = LidarPoint::new(f(0), f(1), f(2), f(3));
            if p.is_finite() {
                Ok(p)
            } else {
                Err(Error::InvalidValue(format!(
                    "non-finite lidar point {i} at byte offset {}",
                    i * 16
                )))
            }
        })
        .collect()
}

pub fn write_velodyne_bin(points: &[LidarPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// One line of a detections NDJSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: String,
    pub class_id: usize,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    /// Kept boxes per frame, in file order.
    pub frames: BTreeMap<String, Vec<Box2D>>,
    pub dropped_low_score: usize,
    pub dropped_degenerate: usize,
}

impl DetectionSet {
    pub fn boxes(&self, frame_id: &str) -> &[Box2D] {
        self.frames.get(frame_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn class_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.frames.values().flatten().map(|b| b.class_id)
    }
}

/// Reads NDJSON detections, dropping boxes scoring below `score_threshold`
/// and boxes with non-positive extent.
pub fn read_detections(text: &str, score_threshold: f64) -> Result<DetectionSet> {
    let mut set = DetectionSet::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&rec.score) || !rec.bbox.iter().all(|v| v.is_finite()) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("score {} or bbox {:?} out of range", rec.score, rec.bbox),
            });
        }
        if rec.score < score_threshold {
            set.dropped_low_score += 1;
            continue;
        }
        let [x1, y1, x2, y2] = rec.bbox;
        match Box2D::new(rec.class_id, x1, y1, x2, y2, rec.score) {
            Ok(b) => set.frames.entry(rec.frame_id).or_default().push(b),
            Err(_) => set.dropped_degenerate += 1,
        }
    }
    Ok(set)
}

/// How a 2D box was derived from a KITTI label line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxSource {
    /// The annotated `bbox` columns.
    Annotated,
    /// Bounding rectangle of the projected 3D box corners.
    Projected3d,
    /// Boxes read from a detector's NDJSON output.
    Detector,
}

/// Eight corners of a KITTI 3D box (camera frame, bottom-center origin).
pub fn box3d_corners(h: f64, w: f64, l: f64, loc: Vector3<f64>, ry: f64) -> [Vector3<f64>; 8] {
    let (s, c) = ry.sin_cos();
    let xs = [l / 2.0, l / 2.0, -l / 2.0, -l / 2.0];
    let zs = [w / 2.0, -w / 2.0, -w / 2.0, w / 2.0];
    let mut out = [Vector3::zeros(); 8];
    for k in 0..8 {
        let (x, z) = (xs[k % 4], zs[k % 4]);
        let y = if k < 4 { 0.0 } else { -h };
        out[k] = Vector3::new(c * x + s * z, y, -s * x + c * z) + loc;
    }
    out
}

/// Reads KITTI `label_2` lines into boxes for classes listed in
/// `class_names` (index = class id). Other types, including `DontCare`, are
/// skipped.
pub fn read_kitti_labels(
    text: &str,
    class_names: &[&str],
    source: BoxSource,
    cam: &CameraModel,
) -> Result<Vec<Box2D>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 15 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected at least 15 fields, found {}", fields.len()),
            });
        }
        let Some(class_id) = class_names.iter().position(|n| *n == fields[0]) else {
            continue;
        };
        let nums: Vec<f64> = fields[1..15]
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("`{t}` is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        let score = match fields.get(15) {
            Some(t) => t.parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad score `{t}`"),
            })?,
            None => 1.0,
        };
        let (x1, y1, x2, y2) = match source {
            BoxSource::Projected3d => {
                let corners = box3d_corners(
                    nums[7],
                    nums[8],
                    nums[9],
                    Vector3::new(nums[10], nums[11], nums[12]),
                    nums[13],
                );
                let mut lo = (f64::INFINITY, f64::INFINITY);
                let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                let mut visible = true;
                for c in &corners {
                    match project_point(c, cam) {
                        Ok(p) => {
                            lo = (lo.0.min(p.u), lo.1.min(p.v));
                            hi = (hi.0.max(p.u), hi.1.max(p.v));
                        }
                        Err(_) => visible = false,
                    }
                }
                if !visible {
                    continue;
                }
                (lo.0, lo.1, hi.0, hi.1)
            }
            _ => (nums[3], nums[4], nums[5], nums[6]),
        };
        let Some(b) = Box2D::new(class_id, x1, y1, x2, y2, score.clamp(0.0, 1.0))
            .ok()
            .and_then(|b| b.clip(cam.image_w as f64, cam.image_h as f64))
        else {
            continue;
        };
        out.push(b);
    }
    Ok(out)
}

/// Exact per-class multiset counts.
pub fn count_classes(
    class_ids: impl IntoIterator<Item = usize>,
    n_classes: usize,
) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; n_classes];
    for c in class_ids {
        *counts.get_mut(c).ok_or(Error::UnknownClass { class: c })? += 1;
    }
    Ok(counts)
}

pub fn encode_heatmap(hm: &HeatmapSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * hm.values().len());
    out.extend_from_slice(HEATMAP_MAGIC);
    for d in [hm.channels(), hm.height(), hm.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in hm.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::CorruptHeader {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn header_dims(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<[usize; 3]> {
    if bytes.len() < 16 {
        return Err(corrupt(
            path,
            format!("{} bytes is shorter than the header", bytes.len()),
        ));
    }
    if &bytes[..4] != magic {
        return Err(corrupt(
            path,
            format!(
                "magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let u = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    Ok([u(0), u(1), u(2)])
}

/// Decodes a `DEPT` heatmap file. `path` is only used in diagnostics.
pub fn decode_heatmap(bytes: &[u8], path: &Path) -> Result<HeatmapSet> {
    let [c, h, w] = header_dims(bytes, HEATMAP_MAGIC, path)?;
    let expected = 16 + 4 * c * h * w;
    if bytes.len() != expected {
        return Err(corrupt(
            path,
            format!("{} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    HeatmapSet::from_values(c, w, h, values).map_err(|e| corrupt(path, e.to_string()))
}

pub fn encode_depth_raw(target: &SemiDenseDepthTarget) -> Vec<u8> {
    let n = target.cells().len();
    let mut out = Vec::with_capacity(16 + n * 21);
    out.extend_from_slice(DEPTH_MAGIC);
    for d in [target.stride() as usize, target.height(), target.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for c in target.cells() {
        out.extend_from_slice(&c.map_or(f64::NAN, |l| l.depth).to_le_bytes());
    }
    for c in target.cells() {
        out.extend_from_slice(&c.map_or(0.0, |l| l.weight).to_le_bytes());
    }
    for c in target.cells() {
        out.extend_from_slice(&c.map_or(u32::MAX, |l| l.seed as u32).to_le_bytes());
    }
    for c in target.cells() {
        out.push(match c.map(|l| l.provenance) {
            None => 0,
            Some(Provenance::Original) => 1,
            Some(Provenance::Propagated) => 2,
        });
    }
    out
}

pub fn decode_depth_raw(bytes: &[u8], path: &Path) -> Result<SemiDenseDepthTarget> {
    let [stride, h, w] = header_dims(bytes, DEPTH_MAGIC, path)?;
    let n = w * h;
    let expected = 16 + 21 * n;
    if bytes.len() != expected {
        return Err(corrupt(
            path,
            format!("{} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let (d0, w0, s0, p0) = (16, 16 + 8 * n, 16 + 16 * n, 16 + 20 * n);
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let provenance = match bytes[p0 + i] {
            0 => None,
            1 => Some(Provenance::Original),
            2 => Some(Provenance::Propagated),
            other => {
                return Err(corrupt(
                    path,
                    format!("provenance byte {other} at cell {i}"),
                ))
            }
        };
        cells.push(provenance.map(|provenance| DepthLabel {
            depth: f64_at(d0 + 8 * i),
            provenance,
            weight: f64_at(w0 + 8 * i),
            seed: u32_at(s0 + 4 * i) as usize,
        }));
    }
    SemiDenseDepthTarget::from_cells(w, h, stride as u32, cells)
        .map_err(|e| corrupt(path, e.to_string()))
}

/// PNG code for a depth: `round(depth * 256)`, clamped to `1..=65535`.
pub fn depth_to_png_value(depth: f64) -> u16 {
    (depth * DEPTH_PNG_SCALE)
        .round()
        .clamp(1.0, u16::MAX as f64) as u16
}

pub fn encode_depth_png(target: &SemiDenseDepthTarget) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, target.width() as u32, target.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidValue(format!("png header: {e}")))?;
        let data: Vec<u8> = target
            .cells()
            .iter()
            .flat_map(|c| c.map_or(0, |l| depth_to_png_value(l.depth)).to_be_bytes())
            .collect();
        writer
            .write_image_data(&data)
            .map_err(|e| Error::InvalidValue(format!("png data: {e}")))?;
    }
    Ok(buf)
}

/// Decodes a 16-bit depth PNG into `(width, height, depths)`, `None` where 0.
pub fn decode_depth_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<Option<f64>>)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| corrupt(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(corrupt(path, "expected 16-bit grayscale"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = vec![0u8; reader.output_buffer_size().unwrap_or(w * h * 2)];
    reader
        .next_frame(&mut data)
        .map_err(|e| corrupt(path, e.to_string()))?;
    let depths = data[..w * h * 2]
        .chunks_exact(2)
        .map(|b| {
            let v = u16::from_be_bytes([b[0], b[1]]);
            (v != 0).then(|| v as f64 / DEPTH_PNG_SCALE)
        })
        .collect();
    Ok((w, h, depths))
}

/// Counters recorded alongside each bundle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleCounts {
    pub lidar_points: usize,
    pub sparse_cells: usize,
    pub filtered_cells: usize,
    pub original_cells: usize,
    pub propagated_cells: usize,
    pub boxes: usize,
    pub class_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub frame_id: String,
    pub tool_version: String,
    pub image_w: u32,
    pub image_h: u32,
    pub stride: u32,
    pub width: usize,
    pub height: usize,
    pub n_classes: usize,
    pub max_depth: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub wide_patch: usize,
    pub narrow_patch: usize,
    pub propagated_weight: f64,
    pub min_iou: f64,
    /// Pseudo-label confidence cut; not a published constant.
    pub score_threshold: f64,
    pub box_source: BoxSource,
    pub sigma_source: String,
    pub counts: BundleCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetBundle {
    pub depth: SemiDenseDepthTarget,
    pub corners: HeatmapSet,
    pub detection: DetectionTargets,
    pub metadata: BundleMetadata,
}

impl TargetBundle {
    pub fn validate(&self) -> Result<()> {
        let dims = (self.depth.width(), self.depth.height());
        let m = &self.metadata;
        if (m.width, m.height) != dims || m.stride != self.depth.stride() {
            return Err(Error::mismatch(
                format!("{}x{} stride {}", m.width, m.height, m.stride),
                format!("{}x{} stride {}", dims.0, dims.1, self.depth.stride()),
            ));
        }
        for hm in [&self.corners, &self.detection.center_heatmaps] {
            if (hm.width(), hm.height()) != dims {
                return Err(Error::mismatch(
                    format!("{}x{}", dims.0, dims.1),
                    format!("{}x{}", hm.width(), hm.height()),
                ));
            }
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_target_bundle(bundle: &TargetBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("depth.png"), &encode_depth_png(&bundle.depth)?)?;
    write_file(&dir.join("depth.bin"), &encode_depth_raw(&bundle.depth))?;
    write_file(&dir.join("corners.bin"), &encode_heatmap(&bundle.corners))?;
    write_file(
        &dir.join("centers.bin"),
        &encode_heatmap(&bundle.detection.center_heatmaps),
    )?;
    let det =
        serde_json::to_vec_pretty(&bundle.detection.centers).expect("center targets serialize");
    write_file(&dir.join("detection.json"), &det)?;
    let meta = serde_json::to_vec_pretty(&bundle.metadata).expect("metadata serializes");
    write_file(&dir.join("meta.json"), &meta)
}

/// Reads a bundle back. Heatmaps come back at `f32` precision; the depth
/// target and regression targets are exact.
pub fn read_target_bundle(dir: &Path) -> Result<TargetBundle> {
    let meta_path = dir.join("meta.json");
    let metadata: BundleMetadata = serde_json::from_slice(&read_file(&meta_path)?)
        .map_err(|e| corrupt(&meta_path, e.to_string()))?;

    let depth_path = dir.join("depth.bin");
    let depth = decode_depth_raw(&read_file(&depth_path)?, &depth_path)?;
    if (depth.width(), depth.height(), depth.stride())
        != (metadata.width, metadata.height, metadata.stride)
    {
        return Err(corrupt(&depth_path, "dimensions disagree with meta.json"));
    }

    let png_path = dir.join("depth.png");
    let (pw, ph, _) = decode_depth_png(&read_file(&png_path)?, &png_path)?;
    if (pw, ph) != (metadata.width, metadata.height) {
        return Err(corrupt(&png_path, "dimensions disagree with meta.json"));
    }

    let read_hm = |name: &str, channels: usize| -> Result<HeatmapSet> {
        let p: PathBuf = dir.join(name);
        let hm = decode_heatmap(&read_file(&p)?, &p)?;
        if hm.shape() != (channels, metadata.height, metadata.width) {
            return Err(corrupt(
                &p,
                format!("shape {:?} disagrees with meta.json", hm.shape()),
            ));
        }
        Ok(hm)
    };
    let corners = read_hm("corners.bin", 4)?;
    let center_heatmaps = read_hm("centers.bin", metadata.n_classes)?;

    let det_path = dir.join("detection.json");
    let centers: Vec<CenterTarget> = serde_json::from_slice(&read_file(&det_path)?)
        .map_err(|e| corrupt(&det_path, e.to_string()))?;

    Ok(TargetBundle {
        depth,
        corners,
        detection: DetectionTargets {
            center_heatmaps,
            centers,
        },
        metadata,
    })
}

/// Input files of one frame in a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameFiles {
    pub frame_id: String,
    pub calib: PathBuf,
    pub velodyne: PathBuf,
}

/// Lists frames of a dataset laid out as `calib/<id>.txt`,
/// `velodyne/<id>.bin`, sorted by frame id. A frame is listed when its
/// calibration file exists; a missing scan surfaces when the frame is read.
pub fn list_frames(dataset_dir: &Path) -> Result<Vec<FrameFiles>> {
    let calib_dir = dataset_dir.join("calib");
    let entries = match fs::read_dir(&calib_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&calib_dir, e)),
    };
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&calib_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        frames.push(FrameFiles {
            frame_id: id.to_string(),
            calib: path.clone(),
            velodyne: dataset_dir.join("velodyne").join(format!("{id}.bin")),
        });
    }
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    Ok(frames)
}

/// Parses optional `image_sizes.txt` lines of `frame_id width height`.
pub fn read_image_sizes(text: &str) -> Result<BTreeMap<String, (u32, u32)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [id, w, h] => w
                .parse::<u32>()
                .ok()
                .zip(h.parse::<u32>().ok())
                .map(|wh| (id.to_string(), wh)),
            _ => None,
        };
        let Some((id, wh)) = parsed else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected `frame_id width height`, got `{line}`"),
            });
        };
        out.insert(id, wh);
    }
    Ok(out)
}
