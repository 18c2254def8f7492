//! On-disk datasets: one directory per video holding 8-bit binary PGM
//! frames, indexed by a JSON manifest.

use std::cell::Cell;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use optimux::encoder::Video;
use optimux::Label;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Video directory relative to the manifest root.
    pub dir: PathBuf,
    pub label: Label,
    pub frames: usize,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Directory the entries are relative to; relative roots resolve
    /// against the manifest file's directory.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.pgm")
}

pub fn write_pgm(path: &Path, frame: &Array2<f64>) -> Result<()> {
    let (rows, cols) = frame.dim();
    let mut buf = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    buf.extend(frame.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, buf).map_err(CliError::io(path))
}

fn pgm_error(path: &Path, why: &str) -> String {
    format!("{}: {why}", path.display())
}

/// Parses a binary 8-bit PGM into `[0, 1]` values.
pub fn read_pgm(path: &Path) -> std::result::Result<Array2<f64>, String> {
    let bytes = std::fs::read(path).map_err(|e| pgm_error(path, &e.to_string()))?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(pgm_error(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(pgm_error(path, "not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| pgm_error(path, "bad header number"));
    let (cols, rows, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(pgm_error(path, "only 8-bit PGM (maxval 255) is supported"));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != rows * cols {
        return Err(pgm_error(path, &format!("expected {} pixel bytes, found {}", rows * cols, data.len())));
    }
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| data[r * cols + c] as f64 / 255.0))
}

/// Writes every video under `dir` and returns the manifest (also written).
pub fn write_dataset(dir: &Path, videos: &[Video], config_hash: Option<&str>) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut entries = Vec::with_capacity(videos.len());
    for (i, v) in videos.iter().enumerate() {
        let rel = PathBuf::from(format!("video_{i:05}"));
        let vdir = dir.join(&rel);
        std::fs::create_dir_all(&vdir).map_err(CliError::io(&vdir))?;
        for (f, frame) in v.frames.iter().enumerate() {
            write_pgm(&vdir.join(frame_name(f)), frame)?;
        }
        entries.push(ManifestEntry {
            dir: rel,
            label: v.label,
            frames: v.frames.len(),
            source: v.source_id.clone(),
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        root: PathBuf::from("."),
        entries,
        config_hash: config_hash.map(str::to_string),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut f = std::fs::File::create(&path).map_err(CliError::io(&path))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(CliError::io(&path))?;
    Ok(manifest)
}

/// Handle on a manifest; frames are read when a video is first requested.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    frame_shape: Cell<Option<(usize, usize)>>,
}

pub fn ingest(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(CliError::io(manifest_path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Ingest(vec![format!("{}: {e}", manifest_path.display())]))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(CliError::Ingest(vec![format!(
            "{}: unsupported format version {}",
            manifest_path.display(),
            manifest.format_version
        )]));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let root = if manifest.root.is_absolute() { manifest.root.clone() } else { base.join(&manifest.root) };
    if manifest.entries.is_empty() {
        log::warn!("{}: manifest lists no videos", manifest_path.display());
    }
    Ok(Dataset {
        root,
        manifest,
        frame_shape: Cell::new(None),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    /// Loads and validates one video. All frames in the dataset must share
    /// the dimensions of the first frame read.
    pub fn video(&self, index: usize) -> Result<Video> {
        let entry = self
            .manifest
            .entries
            .get(index)
            .ok_or_else(|| CliError::Usage(format!("video {index} outside a dataset of {}", self.len())))?;
        let mut problems = Vec::new();
        let mut frames = Vec::with_capacity(entry.frames);
        if entry.frames == 0 {
            problems.push(format!("{}: no frames listed", entry.dir.display()));
        }
        for f in 0..entry.frames {
            let path = self.root.join(&entry.dir).join(frame_name(f));
            match read_pgm(&path) {
                Ok(frame) => {
                    let dim = frame.dim();
                    match self.frame_shape.get() {
                        None => self.frame_shape.set(Some(dim)),
                        Some(want) if want != dim => {
                            problems.push(format!(
                                "{}: frame is {}x{}, expected {}x{}",
                                path.display(),
                                dim.0,
                                dim.1,
                                want.0,
                                want.1
                            ));
                            continue;
                        }
                        _ => {}
                    }
                    frames.push(frame);
                }
                Err(e) => problems.push(e),
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Ingest(problems));
        }
        Ok(Video {
            frames,
            label: entry.label,
            source_id: entry.source.clone(),
        })
    }

    /// Every video, collecting all problems before failing.
    pub fn load_all(&self) -> Result<Vec<Video>> {
        let mut videos = Vec::with_capacity(self.len());
        let mut problems = Vec::new();
        for i in 0..self.len() {
            match self.video(i) {
                Ok(v) => videos.push(v),
                Err(CliError::Ingest(p)) => problems.extend(p),
                Err(e) => return Err(e),
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Ingest(problems));
        }
        Ok(videos)
    }
}
