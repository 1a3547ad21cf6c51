//! KITTI label and calibration formats, camera projection and directory layout.
//!
//! Labels are written with two decimals for every real field and an integer
//! occlusion state. A line already in that form survives parse and
//! serialize byte for byte; `-0.00` is written as `0.00`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixup::Scene;

pub const DONT_CARE: &str = "DontCare";
const LABEL_FIELDS: usize = 15;

pub const IMAGE_DIR: &str = "image_2";
pub const LABEL_DIR: &str = "label_2";
pub const CALIB_DIR: &str = "calib";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Object3DLabel {
    pub class_name: String,
    pub truncation: f64,
    /// 0..=3, or -1 on `DontCare` records.
    pub occlusion: i32,
    pub alpha: f64,
    /// `(left, top, right, bottom)` in pixels.
    pub bbox2d: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dims: [f64; 3],
    /// `(x, y, z)` in meters, camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
}

impl Object3DLabel {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.is_dont_care() {
            return Ok(());
        }
        if !(0..=3).contains(&self.occlusion) {
            return Err(format!("occlusion {} not in 0..=3", self.occlusion));
        }
        let [left, top, right, bottom] = self.bbox2d;
        if right <= left || bottom <= top {
            return Err(format!("degenerate 2D box {:?}", self.bbox2d));
        }
        if self.dims.iter().any(|&d| d <= 0.0) {
            return Err(format!("non-positive dimensions {:?}", self.dims));
        }
        Ok(())
    }
}

fn parse_real(token: &str, name: &str, line: usize) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            message: format!("field `{name}`: cannot parse `{token}` as a real"),
        }),
    }
}

/// Parses one label line; `line` is the 1-based line number used in errors.
pub fn parse_label_line(text: &str, line: usize) -> Result<Object3DLabel> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != LABEL_FIELDS {
        return Err(Error::Parse {
            line,
            message: format!("expected {LABEL_FIELDS} fields, found {}", tokens.len()),
        });
    }
    let r = |i: usize, name: &str| parse_real(tokens[i], name, line);
    let occlusion = tokens[2].parse::<i32>().map_err(|_| Error::Parse {
        line,
        message: format!("field `occlusion`: cannot parse `{}` as an integer", tokens[2]),
    })?;
    let label = Object3DLabel {
        class_name: tokens[0].to_string(),
        truncation: r(1, "truncation")?,
        occlusion,
        alpha: r(3, "alpha")?,
        bbox2d: [r(4, "left")?, r(5, "top")?, r(6, "right")?, r(7, "bottom")?],
        dims: [r(8, "h")?, r(9, "w")?, r(10, "l")?],
        location: [r(11, "x")?, r(12, "y")?, r(13, "z")?],
        rotation_y: r(14, "rotation_y")?,
    };
    label.validate().map_err(|message| Error::Parse { line, message })?;
    Ok(label)
}

/// Parses a whole label file, skipping blank lines.
pub fn parse_label_file(text: &str) -> Result<Vec<Object3DLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, i + 1))
        .collect()
}

fn push_fixed(out: &mut String, v: f64) {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        out.push_str("0.00");
    } else {
        out.push_str(&s);
    }
}

pub fn serialize_label(label: &Object3DLabel) -> String {
    let mut out = String::with_capacity(96);
    out.push_str(&label.class_name);
    out.push(' ');
    push_fixed(&mut out, label.truncation);
    let _ = write!(out, " {}", label.occlusion);
    let reals = std::iter::once(label.alpha)
        .chain(label.bbox2d)
        .chain(label.dims)
        .chain(label.location)
        .chain(std::iter::once(label.rotation_y));
    for v in reals {
        out.push(' ');
        push_fixed(&mut out, v);
    }
    out
}

/// One label per line, each terminated by `\n`.
pub fn serialize_label_file(labels: &[Object3DLabel]) -> String {
    labels.iter().map(|l| serialize_label(l) + "\n").collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Row-major 3×4 projection matrix.
    pub p: [[f64; 4]; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Image resolution; zero until attached with [`CameraIntrinsics::with_resolution`].
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn from_projection(p: [[f64; 4]; 3]) -> Result<Self> {
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection matrix"));
        }
        if p[0][0] <= 0.0 || p[1][1] <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx = {}, fy = {}",
                p[0][0], p[1][1]
            )));
        }
        Ok(Self {
            p,
            fx: p[0][0],
            fy: p[1][1],
            cx: p[0][2],
            cy: p[1][2],
            width: 0,
            height: 0,
        })
    }

    /// Pinhole matrix with zero skew and zero translation column.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let p = [[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]];
        Ok(Self::from_projection(p)?.with_resolution(width, height))
    }

    pub fn with_resolution(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    /// Recomputes the derived entries from `p`.
    pub fn rederive(&self) -> Result<Self> {
        Ok(Self::from_projection(self.p)?.with_resolution(self.width, self.height))
    }
}

/// Reads the `P2:` row of a calibration file. Resolution is left at zero.
pub fn parse_calib(text: &str) -> Result<CameraIntrinsics> {
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.trim_start().strip_prefix("P2:") else {
            continue;
        };
        let values: Vec<f64> = rest
            .split_whitespace()
            .enumerate()
            .map(|(k, t)| parse_real(t, &format!("P2[{k}]"), i + 1))
            .collect::<Result<_>>()?;
        if values.len() != 12 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("P2 needs 12 values, found {}", values.len()),
            });
        }
        let mut p = [[0.0; 4]; 3];
        for (k, v) in values.into_iter().enumerate() {
            p[k / 4][k % 4] = v;
        }
        return CameraIntrinsics::from_projection(p);
    }
    Err(Error::MissingP2)
}

/// `%.12e` as printed by C: mantissa, sign and at least two exponent digits.
fn c_exponent(v: f64) -> String {
    let s = format!("{v:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Calibration file with P0..P3 set to `p` and identity rectification.
pub fn serialize_calib(k: &CameraIntrinsics) -> String {
    let row = |m: &[f64]| m.iter().map(|&v| c_exponent(v)).collect::<Vec<_>>().join(" ");
    let flat: Vec<f64> = k.p.iter().flatten().copied().collect();
    let mut out = String::new();
    for name in ["P0", "P1", "P2", "P3"] {
        let _ = writeln!(out, "{name}: {}", row(&flat));
    }
    let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let _ = writeln!(out, "R0_rect: {}", row(&identity));
    out
}

/// Projects a camera-frame point through the full 3×4 matrix.
pub fn project_to_image(point: [f64; 3], k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("point"));
    }
    if point[2] <= 0.0 {
        return Err(Error::BehindCamera(point[2]));
    }
    let h = [point[0], point[1], point[2], 1.0];
    let row = |r: usize| (0..4).map(|c| k.p[r][c] * h[c]).sum::<f64>();
    let w = row(2);
    if w <= 0.0 {
        return Err(Error::BehindCamera(w));
    }
    Ok((row(0) / w, row(1) / w))
}

/// Frame ids (file stems) present under `label_2/`, sorted.
pub fn list_frames(root: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root.join(LABEL_DIR))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn frame_paths(root: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        root.join(IMAGE_DIR).join(format!("{id}.png")),
        root.join(LABEL_DIR).join(format!("{id}.txt")),
        root.join(CALIB_DIR).join(format!("{id}.txt")),
    )
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

pub fn load_scene(root: &Path, id: &str) -> Result<Scene> {
    let (image_path, label_path, calib_path) = frame_paths(root, id);
    let image = image::open(&image_path)?.to_rgb8();
    let labels = parse_label_file(&fs::read_to_string(&label_path)?).map_err(|e| with_path(e, &label_path))?;
    let intrinsics = parse_calib(&fs::read_to_string(&calib_path)?)
        .map_err(|e| with_path(e, &calib_path))?
        .with_resolution(image.width(), image.height());
    Scene::new(id.to_string(), image, intrinsics, labels)
}

pub fn load_dataset(root: &Path) -> Result<Vec<Scene>> {
    list_frames(root)?.iter().map(|id| load_scene(root, id)).collect()
}

pub fn save_scene(root: &Path, scene: &Scene) -> Result<()> {
    for dir in [IMAGE_DIR, LABEL_DIR, CALIB_DIR] {
        fs::create_dir_all(root.join(dir))?;
    }
    let (image_path, label_path, calib_path) = frame_paths(root, &scene.id);
    scene.image.save_with_format(&image_path, image::ImageFormat::Png)?;
    fs::write(label_path, serialize_label_file(&scene.labels))?;
    fs::write(calib_path, serialize_calib(&scene.intrinsics))?;
    Ok(())
}
