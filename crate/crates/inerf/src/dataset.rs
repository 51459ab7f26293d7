//! On-disk dataset format.
//!
//! A dataset directory holds `manifest.json` plus two files per view: a
//! lossless little-endian float32 dump (`*.raw`, the file metrics are
//! computed from) and an 8-bit PNG preview. Poses are stored as 12 floats,
//! the row-major upper 3x4 of the camera-to-world matrix.

use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::Digest;

use crate::camera::{Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::metrics::ImageBuffer;
use crate::train::{Task, View};

const RAW_MAGIC: &[u8; 4] = b"NFIM";

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, e.to_string())
}

/// Lossless image dump: magic, width, height, then `w*h*3` f32 LE scalars.
pub fn write_raw_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + img.data.len() * 4);
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&img.width.to_le_bytes());
    buf.extend_from_slice(&img.height.to_le_bytes());
    for &x in &img.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn read_raw_image(path: &Path) -> Result<ImageBuffer> {
    let mut file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header).map_err(|e| io_err(path, e))?;
    if &header[..4] != RAW_MAGIC {
        return Err(Error::io(path, "not a raw image dump (bad magic)"));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let n = (width as usize) * (height as usize) * 3;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    if bytes.len() != n * 4 {
        return Err(Error::io(
            path,
            format!("raw dump holds {} bytes, expected {} for {width}x{height}", bytes.len(), n * 4),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(ImageBuffer { width, height, data })
}

/// 8-bit preview for eyeballing; never read back for metrics.
pub fn write_png_preview(img: &ImageBuffer, path: &Path) -> Result<()> {
    let clamped = img.clamped();
    let pixels: Vec<u8> =
        clamped.data.iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let rgb = image::RgbImage::from_raw(img.width, img.height, pixels)
        .ok_or_else(|| Error::io(path, "preview buffer size mismatch"))?;
    rgb.save(path).map_err(|e| io_err(path, e))
}

fn pose_to_floats(pose: &Pose) -> [f64; 12] {
    let r = &pose.rotation;
    [
        r[0][0], r[0][1], r[0][2], pose.origin[0],
        r[1][0], r[1][1], r[1][2], pose.origin[1],
        r[2][0], r[2][1], r[2][2], pose.origin[2],
    ]
}

fn pose_from_floats(m: &[f64; 12]) -> Result<Pose> {
    let pose = Pose {
        origin: [m[3], m[7], m[11]],
        rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
    };
    pose.validate()?;
    Ok(pose)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewEntry {
    /// Row-major upper 3x4 of the camera-to-world matrix.
    pose: Vec<f64>,
    raw: String,
    preview: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    index: usize,
    views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    intrinsics: Intrinsics,
    tasks: Vec<TaskEntry>,
}

pub fn save_dataset(tasks: &[Task], dir: &Path) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::Domain("save_dataset: no tasks".into()));
    }
    for task in tasks {
        task.validate()?;
        if task.intrinsics != tasks[0].intrinsics {
            return Err(Error::Config("all tasks in a dataset must share intrinsics".into()));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut manifest = Manifest { intrinsics: tasks[0].intrinsics, tasks: vec![] };
    for task in tasks {
        let mut entry = TaskEntry { index: task.index, views: vec![] };
        for (k, view) in task.views.iter().enumerate() {
            let stem = format!("task{:02}_view{:02}", task.index, k);
            let raw = format!("{stem}.raw");
            let preview = format!("{stem}.png");
            write_raw_image(&view.image, &dir.join(&raw))?;
            write_png_preview(&view.image, &dir.join(&preview))?;
            entry.views.push(ViewEntry {
                pose: pose_to_floats(&view.pose).to_vec(),
                raw,
                preview,
            });
        }
        manifest.tasks.push(entry);
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Task>> {
    let path = dir.join("manifest.json");
    let json = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&json).map_err(|e| io_err(&path, e))?;
    manifest.intrinsics.validate()?;
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for entry in &manifest.tasks {
        if entry.views.len() < 2 {
            return Err(Error::Config(format!(
                "task {} has {} view(s); tasks need more than one view",
                entry.index,
                entry.views.len()
            )));
        }
        let mut views = Vec::with_capacity(entry.views.len());
        for v in &entry.views {
            let pose: [f64; 12] = v.pose.clone().try_into().map_err(|_| {
                Error::io(&path, format!("task {}: pose must hold 12 floats", entry.index))
            })?;
            let image = read_raw_image(&dir.join(&v.raw))?;
            if image.width != manifest.intrinsics.width || image.height != manifest.intrinsics.height {
                return Err(Error::io(
                    dir.join(&v.raw),
                    format!(
                        "image is {}x{} but intrinsics say {}x{}",
                        image.width, image.height, manifest.intrinsics.width, manifest.intrinsics.height
                    ),
                ));
            }
            views.push(View { image, pose: pose_from_floats(&pose)? });
        }
        tasks.push(Task { index: entry.index, views, intrinsics: manifest.intrinsics });
    }
    Ok(tasks)
}

/// SHA-256 over the manifest and every raw dump, in name order; previews are
/// excluded (PNG encoders may differ across library versions).
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let manifest_path = dir.join("manifest.json");
    let mut names: Vec<PathBuf> = vec![manifest_path.clone()];
    let manifest: Manifest = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?,
    )
    .map_err(|e| io_err(&manifest_path, e))?;
    for task in &manifest.tasks {
        for v in &task.views {
            names.push(dir.join(&v.raw));
        }
    }
    names.sort();
    let mut hasher = sha2::Sha256::new();
    for name in &names {
        let bytes = std::fs::read(name).map_err(|e| io_err(name, e))?;
        hasher.update(name.file_name().unwrap().as_encoded_bytes());
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}
