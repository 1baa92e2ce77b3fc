use std::fs;
use std::path::{Path, PathBuf};

use super::features::read_features;
use super::frame::{read_frame, resize_bilinear};
use super::record::{ClipRecord, Condition};
use super::sequence::{normalize_length, CLIP_LEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub frames: usize,
    pub side: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { frames: CLIP_LEN, side: 64 }
    }
}

/// Loaded records plus everything that was skipped on the way.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<ClipRecord>,
    /// Unreadable frames and unrecognized entries; loading continued.
    pub warnings: Vec<String>,
    /// Sequences that produced no record.
    pub errors: Vec<String>,
}

impl LoadReport {
    fn finish(mut self) -> Self {
        self.records.sort_by_key(|r| r.sort_key());
        self
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `nm-01` → (NM, 1).
pub fn parse_condition_seq(name: &str) -> Result<(Condition, u32)> {
    let (c, s) = name
        .split_once('-')
        .ok_or_else(|| Error::Data(format!("'{name}' is not <cond>-<seq>")))?;
    let seq = s.parse().map_err(|_| Error::Data(format!("bad sequence index in '{name}'")))?;
    Ok((c.parse()?, seq))
}

fn is_frame_file(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .map(|e| matches!(e.to_ascii_lowercase().to_str(), Some("pgm" | "png")))
            .unwrap_or(false)
}

/// Orders frames by the trailing number in their stem, then by name.
fn frame_order_key(p: &Path) -> (u64, String) {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    let n = digits.chars().rev().collect::<String>().parse().unwrap_or(u64::MAX);
    (n, stem)
}

/// Reads one directory of frames into a normalized clip.
pub fn load_sequence(
    dir: &Path,
    subject: u32,
    condition: Condition,
    seq: u32,
    view: &str,
    opts: LoadOptions,
    warnings: &mut Vec<String>,
) -> Result<ClipRecord> {
    let mut files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_frame_file(p)).collect();
    files.sort_by_key(|p| frame_order_key(p));
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        match read_frame(f) {
            Ok(fr) => frames.push(resize_bilinear(&fr, opts.side, opts.side)),
            Err(e) => warnings.push(format!("skipped frame {}: {e}", f.display())),
        }
    }
    if frames.is_empty() {
        return Err(Error::Data(format!("{}: empty sequence", dir.display())));
    }
    let frames = normalize_length(&frames, opts.frames)?;
    let data: Vec<f32> = frames.iter().flat_map(|f| f.data.iter().map(|&v| v as f32)).collect();
    ClipRecord::frames(subject, condition, seq, view, opts.side, data)
}

/// Walks `root/<subject>/<cond>-<seq>/<view>/<frame>.{pgm,png}`.
pub fn load_silhouette_dir(root: &Path, opts: LoadOptions) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for subj_dir in sorted_entries(root)? {
        if !subj_dir.is_dir() {
            continue;
        }
        let Ok(subject) = file_name(&subj_dir).parse::<u32>() else {
            report.warnings.push(format!("ignored non-subject entry {}", subj_dir.display()));
            continue;
        };
        for seq_dir in sorted_entries(&subj_dir)?.into_iter().filter(|p| p.is_dir()) {
            let (condition, seq) = match parse_condition_seq(&file_name(&seq_dir)) {
                Ok(v) => v,
                Err(e) => {
                    report.warnings.push(format!("ignored {}: {e}", seq_dir.display()));
                    continue;
                }
            };
            for view_dir in sorted_entries(&seq_dir)?.into_iter().filter(|p| p.is_dir()) {
                let view = file_name(&view_dir);
                match load_sequence(&view_dir, subject, condition, seq, &view, opts, &mut report.warnings) {
                    Ok(r) => report.records.push(r),
                    Err(e) => report.errors.push(e.to_string()),
                }
            }
        }
    }
    Ok(report.finish())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub subject: u32,
    pub condition: Condition,
    pub seq: u32,
    pub view: String,
    /// A frame directory, or a feature file ending in `.tkft`.
    pub path: PathBuf,
}

pub const MANIFEST_HEADER: &str = "# subject,cond,seq,view,path";

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.splitn(5, ',').map(str::trim).collect();
        let bad = |what: &str| Error::Data(format!("manifest line {}: {what}", i + 1));
        if f.len() != 5 {
            return Err(bad("expected subject,cond,seq,view,path"));
        }
        out.push(ManifestEntry {
            subject: f[0].parse().map_err(|_| bad("bad subject id"))?,
            condition: f[1].parse().map_err(|_| bad("bad condition"))?,
            seq: f[2].parse().map_err(|_| bad("bad sequence index"))?,
            view: f[3].to_string(),
            path: PathBuf::from(f[4]),
        });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.subject,
            e.condition.tag(),
            e.seq,
            e.view,
            e.path.display()
        ));
    }
    s
}

/// Loads every manifest entry; relative paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path, opts: LoadOptions) -> Result<LoadReport> {
    let entries = parse_manifest(&fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut report = LoadReport::default();
    for e in entries {
        let p = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
        let is_features = p.extension().is_some_and(|x| x == "tkft");
        let loaded = if is_features {
            read_features(&p).and_then(|t| {
                let idx = super::sequence::length_indices(t.rows(), opts.frames)?;
                let rows: Vec<f64> = idx.iter().flat_map(|&r| t.row(r).to_vec()).collect();
                let t = crate::numerics::Tensor::from_vec(&[opts.frames, t.cols()], rows)?;
                ClipRecord::features(e.subject, e.condition, e.seq, &e.view, t)
            })
        } else {
            load_sequence(&p, e.subject, e.condition, e.seq, &e.view, opts, &mut report.warnings)
        };
        match loaded {
            Ok(r) => report.records.push(r),
            Err(err) => report.errors.push(format!("{}: {err}", p.display())),
        }
    }
    Ok(report.finish())
}
