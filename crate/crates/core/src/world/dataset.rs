//! Dataset directory layout:
//!
//! ```text
//! manifest.json        version, frame rate, resolutions, clip list
//! <clip>.rgb           24-byte header + raw RGB8 frames
//! <clip>.jsonl         one row per frame: {frame, speed_kmh, gaze, tags}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention_map::{AttentionMap, GRID_COLS, GRID_ROWS};
use crate::error::{Error, Result};
use crate::world::render::Frame;
use crate::world::VideoClip;

pub const DATASET_VERSION: u32 = 1;
pub const FRAME_MAGIC: &[u8; 8] = b"FDRGB8\0\0";
const HEADER_LEN: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub frames: usize,
    pub frames_file: String,
    pub rows_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub frame_rate: f64,
    pub frame_height: usize,
    pub frame_width: usize,
    pub gaze_rows: usize,
    pub gaze_cols: usize,
    pub clips: Vec<ClipEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub frame: usize,
    pub speed_kmh: f64,
    pub gaze: Vec<f64>,
    pub tags: Vec<String>,
}

pub fn write_dataset(clips: &[VideoClip], dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let (frame_height, frame_width) = clips.first().map_or((0, 0), |c| c.frame_size());
    let frame_rate = clips.first().map_or(10.0, |c| c.frame_rate);
    let mut entries = Vec::with_capacity(clips.len());
    for clip in clips {
        if clip.frame_size() != (frame_height, frame_width) {
            return Err(Error::Config("clips in one dataset must share a resolution".into()));
        }
        let frames_file = format!("{}.rgb", clip.id);
        let rows_file = format!("{}.jsonl", clip.id);

        let mut bytes = Vec::with_capacity(HEADER_LEN + clip.len() * frame_height * frame_width * 3);
        bytes.extend_from_slice(FRAME_MAGIC);
        bytes.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(frame_height as u32).to_le_bytes());
        bytes.extend_from_slice(&(frame_width as u32).to_le_bytes());
        bytes.extend_from_slice(&(clip.len() as u32).to_le_bytes());
        for f in &clip.frames {
            bytes.extend_from_slice(&f.pixels);
        }
        fs::write(dir.join(&frames_file), bytes)?;

        let mut rows = fs::File::create(dir.join(&rows_file))?;
        for t in 0..clip.len() {
            let row = FrameRow {
                frame: t,
                speed_kmh: clip.speed[t],
                gaze: clip.gaze[t].probs.clone(),
                tags: clip.tags[t].clone(),
            };
            serde_json::to_writer(&mut rows, &row)?;
            rows.write_all(b"\n")?;
        }
        entries.push(ClipEntry {
            id: clip.id.clone(),
            frames: clip.len(),
            frames_file,
            rows_file,
        });
    }
    let manifest = DatasetManifest {
        format_version: DATASET_VERSION,
        frame_rate,
        frame_height,
        frame_width,
        gaze_rows: GRID_ROWS,
        gaze_cols: GRID_COLS,
        clips: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let bytes = fs::read(&path)?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::CorruptIndex(format!("manifest: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptIndex("manifest has no format_version".into()))? as u32;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let manifest: DatasetManifest =
        serde_json::from_value(value).map_err(|e| Error::CorruptIndex(format!("manifest: {e}")))?;
    if (manifest.gaze_rows, manifest.gaze_cols) != (GRID_ROWS, GRID_COLS) {
        return Err(Error::CorruptIndex(format!(
            "gaze grid {}×{} unsupported",
            manifest.gaze_rows, manifest.gaze_cols
        )));
    }
    Ok(manifest)
}

fn read_frames(dir: &Path, manifest: &DatasetManifest, entry: &ClipEntry) -> Result<Vec<Frame>> {
    let path = dir.join(&entry.frames_file);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let bytes = fs::read(&path)?;
    let corrupt = |frame| Error::CorruptFrame {
        clip: entry.id.clone(),
        frame,
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != FRAME_MAGIC {
        return Err(corrupt(0));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let version = word(8) as u32;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let (h, w, n) = (word(12), word(16), word(20));
    if (h, w) != (manifest.frame_height, manifest.frame_width) || n != entry.frames {
        return Err(Error::CorruptIndex(format!(
            "{}: header {h}×{w}×{n} disagrees with manifest",
            entry.id
        )));
    }
    let size = h * w * 3;
    let body = &bytes[HEADER_LEN..];
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let chunk = body.get(t * size..(t + 1) * size).ok_or_else(|| corrupt(t))?;
        frames.push(Frame {
            height: h,
            width: w,
            timestamp: t as f64 / manifest.frame_rate,
            pixels: chunk.to_vec(),
        });
    }
    if body.len() != n * size {
        return Err(corrupt(n));
    }
    Ok(frames)
}

fn read_rows(dir: &Path, entry: &ClipEntry) -> Result<Vec<FrameRow>> {
    let path = dir.join(&entry.rows_file);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let reader = BufReader::new(fs::File::open(&path)?);
    let mut rows = Vec::with_capacity(entry.frames);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FrameRow = serde_json::from_str(&line)
            .map_err(|e| Error::CorruptIndex(format!("{} row {i}: {e}", entry.id)))?;
        if row.frame != rows.len() || row.gaze.len() != GRID_ROWS * GRID_COLS {
            return Err(Error::CorruptIndex(format!("{} row {i} malformed", entry.id)));
        }
        rows.push(row);
    }
    if rows.len() != entry.frames {
        return Err(Error::CorruptIndex(format!(
            "{}: {} rows for {} frames",
            entry.id,
            rows.len(),
            entry.frames
        )));
    }
    Ok(rows)
}

pub fn read_clip(dir: &Path, manifest: &DatasetManifest, entry: &ClipEntry) -> Result<VideoClip> {
    let frames = read_frames(dir, manifest, entry)?;
    let rows = read_rows(dir, entry)?;
    let mut speed = Vec::with_capacity(rows.len());
    let mut gaze = Vec::with_capacity(rows.len());
    let mut tags = Vec::with_capacity(rows.len());
    for row in rows {
        speed.push(row.speed_kmh);
        gaze.push(AttentionMap {
            frame: row.frame,
            probs: row.gaze,
        });
        tags.push(row.tags);
    }
    Ok(VideoClip {
        id: entry.id.clone(),
        frame_rate: manifest.frame_rate,
        frames,
        speed,
        gaze,
        tags,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<VideoClip>> {
    let manifest = read_manifest(dir)?;
    manifest
        .clips
        .iter()
        .map(|entry| read_clip(dir, &manifest, entry))
        .collect()
}

/// SHA-256 over the manifest and every clip file, in manifest order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let manifest = read_manifest(dir)?;
    let mut h = Sha256::new();
    h.update(fs::read(dir.join("manifest.json"))?);
    for e in &manifest.clips {
        h.update(fs::read(dir.join(&e.frames_file))?);
        h.update(fs::read(dir.join(&e.rows_file))?);
    }
    Ok(hex::encode(h.finalize()))
}
