//! Procedural training corpus with known locality structure, a rule-based
//! segmenter, and PNG ingestion for external images.
//!
//! Each scene is a solid background with one filled shape per quadrant, drawn
//! independently, so in-region content genuinely varies independently of
//! out-region content. Factor records make every scene reproducible.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::models::RESOLUTION;

pub const QUADRANT: usize = RESOLUTION / 2;
/// Quadrant origins in (top, left) order: TL, TR, BL, BR.
pub const QUADRANT_ORIGINS: [(usize, usize); 4] = [
    (0, 0),
    (0, QUADRANT),
    (QUADRANT, 0),
    (QUADRANT, QUADRANT),
];
pub const QUADRANT_LABELS: [&str; 4] = ["quadrant_tl", "quadrant_tr", "quadrant_bl", "quadrant_br"];

/// Color-distance threshold (L-inf) for the rule-based segmenter.
pub const SEGMENT_THRESHOLD: f64 = 0.25;
/// Minimum L-inf distance between object and background colors at sampling
/// time, so shapes always segment cleanly.
const MIN_COLOR_SEPARATION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image error at {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("no loadable images in {0}")]
    EmptyCorpus(PathBuf),
}

// ── factor records and rendering ─────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Geometry {
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Disc {
        cy: f64,
        cx: f64,
        radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrantFactors {
    pub color: [f64; 3],
    pub geometry: Geometry,
}

/// Everything needed to re-render a scene exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    pub background: [f64; 3],
    pub quadrants: [QuadrantFactors; 4],
}

/// A rendered scene: image plus ground-truth masks keyed by semantic label.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Tensor,
    pub region_masks: BTreeMap<String, Tensor>,
    pub factors: FactorRecord,
}

fn uniform_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [
        rng.gen::<f64>() * 2.0 - 1.0,
        rng.gen::<f64>() * 2.0 - 1.0,
        rng.gen::<f64>() * 2.0 - 1.0,
    ]
}

fn linf(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Draw the factors of one scene. Shapes keep a one-pixel margin inside
/// their quadrant so ground-truth masks never touch quadrant boundaries.
pub fn sample_record<R: Rng>(rng: &mut R) -> FactorRecord {
    let background = uniform_color(rng);
    let quadrants = QUADRANT_ORIGINS.map(|(qy, qx)| {
        let color = loop {
            let c = uniform_color(rng);
            if linf(&c, &background) >= MIN_COLOR_SEPARATION {
                break c;
            }
        };
        let geometry = if rng.gen_bool(0.5) {
            let height = rng.gen_range(2..=6);
            let width = rng.gen_range(2..=6);
            let top = qy + 1 + rng.gen_range(0..=(6 - height));
            let left = qx + 1 + rng.gen_range(0..=(6 - width));
            Geometry::Rect {
                top,
                left,
                height,
                width,
            }
        } else {
            let radius = 1.2 + rng.gen::<f64>() * 1.6;
            let span = 6.0 - 2.0 * radius;
            let cy = qy as f64 + 1.0 + radius + rng.gen::<f64>() * span;
            let cx = qx as f64 + 1.0 + radius + rng.gen::<f64>() * span;
            Geometry::Disc { cy, cx, radius }
        };
        QuadrantFactors { color, geometry }
    });
    FactorRecord {
        background,
        quadrants,
    }
}

/// Deterministically render a factor record into a scene.
pub fn render_record(record: &FactorRecord) -> Scene {
    let n = RESOLUTION;
    let mut img = vec![0.0; n * n * 3];
    for p in 0..n * n {
        img[p * 3..p * 3 + 3].copy_from_slice(&record.background);
    }
    let mut object = vec![0.0; n * n];
    for q in &record.quadrants {
        for y in 0..n {
            for x in 0..n {
                let inside = match &q.geometry {
                    Geometry::Rect {
                        top,
                        left,
                        height,
                        width,
                    } => y >= *top && y < top + height && x >= *left && x < left + width,
                    Geometry::Disc { cy, cx, radius } => {
                        let dy = y as f64 + 0.5 - cy;
                        let dx = x as f64 + 0.5 - cx;
                        dy * dy + dx * dx <= radius * radius
                    }
                };
                if inside {
                    let p = y * n + x;
                    img[p * 3..p * 3 + 3].copy_from_slice(&q.color);
                    object[p] = 1.0;
                }
            }
        }
    }
    let background: Vec<f64> = object.iter().map(|&v| 1.0 - v).collect();
    let mut region_masks = BTreeMap::new();
    region_masks.insert(
        "object".to_string(),
        Tensor::from_vec(vec![n, n], object).unwrap(),
    );
    region_masks.insert(
        "background".to_string(),
        Tensor::from_vec(vec![n, n], background).unwrap(),
    );
    for (label, (qy, qx)) in QUADRANT_LABELS.iter().zip(QUADRANT_ORIGINS) {
        let mut m = vec![0.0; n * n];
        for y in qy..qy + QUADRANT {
            for x in qx..qx + QUADRANT {
                m[y * n + x] = 1.0;
            }
        }
        region_masks.insert(label.to_string(), Tensor::from_vec(vec![n, n], m).unwrap());
    }
    Scene {
        image: Tensor::from_vec(vec![n, n, 3], img).unwrap(),
        region_masks,
        factors: record.clone(),
    }
}

pub fn sample_scene<R: Rng>(rng: &mut R) -> Scene {
    render_record(&sample_record(rng))
}

// ── rule-based segmentation ──────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct SegmentMasks {
    pub object: Tensor,
    pub background: Tensor,
}

impl SegmentMasks {
    pub fn label(&self, name: &str) -> Option<&Tensor> {
        match name {
            "object" => Some(&self.object),
            "background" => Some(&self.background),
            _ => None,
        }
    }
}

/// Label a pixel "object" iff its L-inf color distance to the dominant
/// border color exceeds the threshold. The dominant color is found by voting
/// over color bins of width 0.1 (exact solid backgrounds land in one bin;
/// generated images vote by proximity) and averaging the winning bin.
pub fn rule_segment_with(image: &Tensor, threshold: f64) -> SegmentMasks {
    let n = RESOLUTION;
    assert_eq!(image.shape(), &[n, n, 3], "segmenter expects a 16x16x3 image");
    let d = image.data();
    let mut bins: BTreeMap<[i32; 3], (usize, [f64; 3])> = BTreeMap::new();
    for y in 0..n {
        for x in 0..n {
            if y != 0 && y != n - 1 && x != 0 && x != n - 1 {
                continue;
            }
            let p = (y * n + x) * 3;
            let px = [d[p], d[p + 1], d[p + 2]];
            let key = [
                ((px[0] + 1.0) / 0.1).floor() as i32,
                ((px[1] + 1.0) / 0.1).floor() as i32,
                ((px[2] + 1.0) / 0.1).floor() as i32,
            ];
            let e = bins.entry(key).or_insert((0, [0.0; 3]));
            e.0 += 1;
            for c in 0..3 {
                e.1[c] += px[c];
            }
        }
    }
    let (count, sums) = bins
        .values()
        .max_by(|a, b| a.0.cmp(&b.0))
        .copied()
        .expect("border is non-empty");
    let dominant = [
        sums[0] / count as f64,
        sums[1] / count as f64,
        sums[2] / count as f64,
    ];
    let mut object = vec![0.0; n * n];
    for p in 0..n * n {
        let px = [d[p * 3], d[p * 3 + 1], d[p * 3 + 2]];
        if linf(&px, &dominant) > threshold {
            object[p] = 1.0;
        }
    }
    let background: Vec<f64> = object.iter().map(|&v| 1.0 - v).collect();
    SegmentMasks {
        object: Tensor::from_vec(vec![n, n], object).unwrap(),
        background: Tensor::from_vec(vec![n, n], background).unwrap(),
    }
}

pub fn rule_segment(image: &Tensor) -> SegmentMasks {
    rule_segment_with(image, SEGMENT_THRESHOLD)
}

// ── PNG input/output ─────────────────────────────────────────────────

pub fn save_png(image: &Tensor, path: &Path) -> Result<(), DataError> {
    let n = RESOLUTION;
    assert_eq!(image.shape(), &[n, n, 3]);
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (((v + 1.0) * 0.5 * 255.0).round()).clamp(0.0, 255.0) as u8)
        .collect();
    let img = image::RgbImage::from_raw(n as u32, n as u32, bytes).expect("raw buffer size");
    img.save(path).map_err(|e| DataError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Exact area-weighted box filter from an `s x s` RGB grid to `dst x dst`.
fn box_resize(src: &[f64], s: usize, dst: usize) -> Vec<f64> {
    let scale = s as f64 / dst as f64;
    let mut out = vec![0.0; dst * dst * 3];
    for oy in 0..dst {
        let y0 = oy as f64 * scale;
        let y1 = y0 + scale;
        for ox in 0..dst {
            let x0 = ox as f64 * scale;
            let x1 = x0 + scale;
            let mut acc = [0.0f64; 3];
            let mut area = 0.0;
            let sy0 = y0.floor() as usize;
            let sy1 = (y1.ceil() as usize).min(s);
            let sx0 = x0.floor() as usize;
            let sx1 = (x1.ceil() as usize).min(s);
            for sy in sy0..sy1 {
                let wy = (y1.min(sy as f64 + 1.0) - y0.max(sy as f64)).max(0.0);
                for sx in sx0..sx1 {
                    let wx = (x1.min(sx as f64 + 1.0) - x0.max(sx as f64)).max(0.0);
                    let w = wy * wx;
                    let p = (sy * s + sx) * 3;
                    for c in 0..3 {
                        acc[c] += w * src[p + c];
                    }
                    area += w;
                }
            }
            let p = (oy * dst + ox) * 3;
            for c in 0..3 {
                out[p + c] = acc[c] / area;
            }
        }
    }
    out
}

/// Decode one image file: center-crop to square, box-resize to 16x16, map
/// [0, 255] linearly to [-1, 1].
pub fn load_png(path: &Path) -> Result<Tensor, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let side = w.min(h);
    let off_x = (w - side) / 2;
    let off_y = (h - side) / 2;
    let mut square = vec![0.0; side * side * 3];
    for y in 0..side {
        for x in 0..side {
            let px = img.get_pixel((off_x + x) as u32, (off_y + y) as u32);
            let p = (y * side + x) * 3;
            for c in 0..3 {
                square[p + c] = px.0[c] as f64 / 255.0 * 2.0 - 1.0;
            }
        }
    }
    let resized = box_resize(&square, side, RESOLUTION);
    Ok(Tensor::from_vec(vec![RESOLUTION, RESOLUTION, 3], resized).unwrap())
}

pub struct LoadedCorpus {
    pub images: Vec<Tensor>,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Load every readable image in a directory, sorted by file name.
pub fn load_png_dir(dir: &Path) -> Result<LoadedCorpus, DataError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DataError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        match load_png(&p) {
            Ok(t) => images.push(t),
            Err(e) => skipped.push((p, e.to_string())),
        }
    }
    if images.is_empty() {
        return Err(DataError::EmptyCorpus(dir.to_path_buf()));
    }
    Ok(LoadedCorpus { images, skipped })
}

/// Manifest written next to a generated corpus; rendering the records
/// regenerates the corpus byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub count: usize,
    pub records: Vec<FactorRecord>,
}
