//! On-disk dataset layout: a `manifest.json` plus one JSON-lines stream file
//! per sequence.
//!
//! ```text
//! {"t": 0.0, "src": "exo", "v": [position, current]}
//! {"t": 0.0, "src": "emg", "v": [c1, .., c8]}
//! {"t": 0.0, "src": "gt",  "v": [opening_rad]}
//! ```
//!
//! Records are written in timestamp order; equal timestamps are ordered
//! exo, emg, gt so output is byte-stable.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{
    Dataset, EmgSample, ExoSample, Modality, ModalitySegment, RawSequence, TrackerSample,
    EMG_CHANNELS, FEATURE_NAMES,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub generator_seed: Option<u64>,
    /// Column header per source; checked on load so reordered columns are
    /// caught instead of silently misread.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Columns>,
    pub sequences: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Columns {
    pub exo: Vec<String>,
    pub emg: Vec<String>,
    pub gt: Vec<String>,
}

impl Columns {
    pub fn standard() -> Self {
        Self {
            exo: FEATURE_NAMES[..2].iter().map(|s| s.to_string()).collect(),
            emg: FEATURE_NAMES[2..].iter().map(|s| s.to_string()).collect(),
            gt: vec!["opening_rad".to_string()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub user: String,
    pub session: String,
    pub modality: Modality,
    pub file: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<ModalitySegment>,
}

/// Source tag of one stream record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Exo,
    Emg,
    Gt,
}

impl Source {
    pub fn arity(self) -> usize {
        match self {
            Source::Exo => 2,
            Source::Emg => EMG_CHANNELS,
            Source::Gt => 1,
        }
    }
}

/// One line of a stream file. Also the live-input record format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StreamRecord<T: Scalar> {
    pub t: T,
    pub src: Source,
    pub v: Vec<T>,
}

/// Merges the three streams of a sequence into one time-ordered record list.
pub fn sequence_records<T: Scalar>(seq: &RawSequence<T>) -> Vec<StreamRecord<T>> {
    let mut out = Vec::with_capacity(seq.exo.len() + seq.emg.len() + seq.gt.len());
    out.extend(seq.exo.iter().map(|s| StreamRecord {
        t: s.t,
        src: Source::Exo,
        v: vec![s.position, s.current],
    }));
    out.extend(seq.emg.iter().map(|s| StreamRecord {
        t: s.t,
        src: Source::Emg,
        v: s.channels.to_vec(),
    }));
    out.extend(seq.gt.iter().map(|s| StreamRecord {
        t: s.t,
        src: Source::Gt,
        v: vec![s.opening],
    }));
    // Stable sort keeps within-stream order for equal keys.
    out.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.src.cmp(&b.src))
    });
    out
}

fn file_name_for(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{clean}.jsonl")
}

/// Writes `d` under `path`, creating the directory if needed.
pub fn save_dataset<T: Scalar>(d: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let dir = path.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut entries = Vec::with_capacity(d.sequences.len());
    let mut used = std::collections::HashSet::new();
    for seq in &d.sequences {
        let mut file = file_name_for(&seq.id);
        let mut n = 1;
        while !used.insert(file.clone()) {
            file = format!("{}-{n}.jsonl", file.trim_end_matches(".jsonl"));
            n += 1;
        }
        write_stream_file(seq, &dir.join(&file))?;
        entries.push(ManifestEntry {
            id: seq.id.clone(),
            user: seq.user.clone(),
            session: seq.session.clone(),
            modality: seq.modality,
            file,
            segments: seq.segments.clone(),
        });
    }

    let manifest = Manifest {
        version: FORMAT_VERSION,
        generator_seed: d.generator_seed,
        columns: Some(Columns::standard()),
        sequences: entries,
    };
    let mpath = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(&mpath, e.to_string()))?;
    text.push('\n');
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

fn write_stream_file<T: Scalar>(seq: &RawSequence<T>, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for rec in sequence_records(seq) {
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset directory and validates every sequence.
///
/// Sequences outside the protocol duration are kept; see
/// [`Dataset::nonconformant`].
pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let dir = path.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.is_file() {
        return Err(Error::format(&mpath, "missing manifest"));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            &mpath,
            format!("unsupported version {}", manifest.version),
        ));
    }
    if let Some(cols) = &manifest.columns {
        if *cols != Columns::standard() {
            return Err(Error::format(
                &mpath,
                format!("column header {cols:?} does not match the expected feature order"),
            ));
        }
    }

    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for entry in &manifest.sequences {
        let spath = dir.join(&entry.file);
        if !spath.is_file() {
            return Err(Error::format(
                &mpath,
                format!("sequence '{}' references missing file '{}'", entry.id, entry.file),
            ));
        }
        sequences.push(read_stream_file(entry, &spath)?);
    }
    Dataset::new(sequences, manifest.generator_seed)
}

fn read_stream_file<T: Scalar>(entry: &ManifestEntry, path: &Path) -> Result<RawSequence<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seq = RawSequence {
        id: entry.id.clone(),
        user: entry.user.clone(),
        session: entry.session.clone(),
        modality: entry.modality,
        segments: entry.segments.clone(),
        exo: Vec::new(),
        emg: Vec::new(),
        gt: Vec::new(),
    };
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StreamRecord<f64> = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        push_record(&mut seq, &rec).map_err(|msg| {
            Error::Validation(format!("sequence '{}', line {}: {msg}", entry.id, lineno + 1))
        })?;
    }
    seq.validate()?;
    Ok(seq)
}

/// Appends one record to the matching stream of `seq`.
pub fn push_record<T: Scalar>(
    seq: &mut RawSequence<T>,
    rec: &StreamRecord<f64>,
) -> std::result::Result<(), String> {
    if rec.v.len() != rec.src.arity() {
        return Err(format!(
            "{:?} record has {} values, expected {}",
            rec.src,
            rec.v.len(),
            rec.src.arity()
        ));
    }
    let t = T::of(rec.t);
    match rec.src {
        Source::Exo => seq.exo.push(ExoSample {
            t,
            position: T::of(rec.v[0]),
            current: T::of(rec.v[1]),
        }),
        Source::Emg => {
            let mut channels = [T::zero(); EMG_CHANNELS];
            for (c, v) in channels.iter_mut().zip(&rec.v) {
                *c = T::of(*v);
            }
            seq.emg.push(EmgSample { t, channels })
        }
        Source::Gt => seq.gt.push(TrackerSample {
            t,
            opening: T::of(rec.v[0]),
        }),
    }
    Ok(())
}
