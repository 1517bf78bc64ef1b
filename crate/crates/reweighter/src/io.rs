//! File formats: dataset JSON, influence CSV with a JSON sidecar, versioned
//! session files and the JSON-lines adjustment log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use reweighter_core::dataset::Dataset;
use reweighter_core::influence::BipartiteGraph;
use reweighter_core::matrix::Matrix;
use reweighter_core::session::{Event, Session};
use serde::{Deserialize, Serialize};

pub const SESSION_FORMAT: &str = "reweighter-session/1";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: malformed CSV: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("unsupported session format {found:?} (expected {SESSION_FORMAT:?})")]
    VersionMismatch { found: String },
    #[error("replaying the session log does not reproduce the saved state")]
    ReplayMismatch,
    #[error(transparent)]
    Core(#[from] reweighter_core::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> IoError + '_ {
    move |source| IoError::Json { path: path.to_path_buf(), source }
}

fn corrupt(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Corrupt { path: path.to_path_buf(), message: message.into() }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, value).map_err(json_err(path))?;
    w.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(json_err(path))
}

/// Formats a finite float with 17 significant digits (C's `%.17g`), which
/// always parses back to the same bits.
pub fn fmt_g17(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: String| if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    if (-5..17).contains(&exp) {
        strip(format!("{v:.*}", (16 - exp) as usize))
    } else {
        format!("{}e{exp}", strip(mantissa.to_string()))
    }
}

struct G17;

impl serde_json::ser::Formatter for G17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_g17(value).as_bytes())
    }
}

/// Writes a dataset as JSON with every float at 17 significant digits.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut ser = serde_json::Serializer::with_formatter(&mut w, G17);
    ds.serialize(&mut ser).map_err(json_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds: Dataset = read_json(path)?;
    ds.validate()?;
    Ok(ds)
}

/// Ids, weights and confidences accompanying an influence CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSidecar {
    pub val_ids: Vec<u64>,
    pub train_ids: Vec<u64>,
    pub val_weights: Vec<f64>,
    pub confidences: Vec<f64>,
}

/// Sidecar path used next to `csv`: `x.csv` → `x.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `m,n` followed by one row of `g` per line, and the sidecar.
pub fn export_influence(graph: &BipartiteGraph, csv_path: &Path) -> Result<()> {
    let csv_err = |source| IoError::Csv { path: csv_path.to_path_buf(), source };
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(csv_path).map_err(csv_err)?;
    w.write_record([graph.m().to_string(), graph.n().to_string()]).map_err(csv_err)?;
    for i in 0..graph.m() {
        w.write_record(graph.g.row(i).iter().map(|&v| fmt_g17(v))).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(csv_path))?;
    let sidecar = InfluenceSidecar {
        val_ids: graph.val_ids.clone(),
        train_ids: graph.train_ids.clone(),
        val_weights: graph.val_weights.clone(),
        confidences: graph.confidences.clone(),
    };
    write_json(&sidecar, &sidecar_path(csv_path))
}

/// Reads an influence CSV and its sidecar back into a validated graph.
pub fn import_influence(csv_path: &Path) -> Result<BipartiteGraph> {
    let csv_err = |source| IoError::Csv { path: csv_path.to_path_buf(), source };
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(csv_path).map_err(csv_err)?;
    let mut records = r.records();
    let header = records.next().ok_or_else(|| corrupt(csv_path, "missing m,n header"))?.map_err(csv_err)?;
    let dim = |k: usize| -> Result<usize> {
        header.get(k).and_then(|s| s.trim().parse().ok()).ok_or_else(|| corrupt(csv_path, "header must be two integers m,n"))
    };
    if header.len() != 2 {
        return Err(corrupt(csv_path, "header must be two integers m,n"));
    }
    let (m, n) = (dim(0)?, dim(1)?);
    let mut data = Vec::with_capacity(m * n);
    let mut rows = 0;
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != n {
            return Err(corrupt(csv_path, format!("row {} has {} values, expected {n}", rows + 1, rec.len())));
        }
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| corrupt(csv_path, format!("row {}: {e}", rows + 1)))?);
        }
        rows += 1;
    }
    if rows != m {
        return Err(corrupt(csv_path, format!("found {rows} rows, header says {m}")));
    }
    let g = Matrix::from_vec(m, n, data)?;
    let side: InfluenceSidecar = read_json(&sidecar_path(csv_path))?;
    Ok(BipartiteGraph::new(side.val_ids, side.train_ids, g, side.val_weights, side.confidences)?)
}

#[derive(Serialize)]
struct SessionFileRef<'a> {
    format: &'a str,
    #[serde(flatten)]
    session: &'a Session,
}

#[derive(Deserialize)]
struct FormatTag {
    format: Option<String>,
}

/// How a saved session is brought back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Take the serialized current state as is.
    Restore,
    /// Re-execute the log on the serialized origin state.
    Replay,
    /// Do both and fail unless they agree.
    Verify,
}

pub fn session_to_json(session: &Session) -> serde_json::Result<String> {
    serde_json::to_string(&SessionFileRef { format: SESSION_FORMAT, session })
}

/// Parses a session document, checking the format tag before anything else.
pub fn session_from_json(text: &str, mode: LoadMode) -> Result<Session> {
    let here = Path::new("<session>");
    let tag: FormatTag = serde_json::from_str(text).map_err(json_err(here))?;
    match tag.format.as_deref() {
        Some(SESSION_FORMAT) => {}
        other => return Err(IoError::VersionMismatch { found: other.unwrap_or("<missing>").to_string() }),
    }
    let restored: Session = serde_json::from_str(text).map_err(json_err(here))?;
    let replay = |s: &Session| Session::replay(s.config.clone(), s.origin.clone(), &s.log, s.pending.clone(), s.next_seq);
    match mode {
        LoadMode::Restore => Ok(restored),
        LoadMode::Replay => Ok(replay(&restored)?),
        LoadMode::Verify => {
            let replayed = replay(&restored)?;
            if replayed == restored {
                Ok(restored)
            } else {
                Err(IoError::ReplayMismatch)
            }
        }
    }
}

pub fn save_session(session: &Session, path: &Path) -> Result<()> {
    write_json(&SessionFileRef { format: SESSION_FORMAT, session }, path)
}

pub fn load_session(path: &Path, mode: LoadMode) -> Result<Session> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    session_from_json(&text, mode).map_err(|e| match e {
        IoError::Json { source, .. } => IoError::Json { path: path.to_path_buf(), source },
        other => other,
    })
}

/// One JSON object per line, in log order.
pub fn write_log_jsonl(log: &[Event], mut out: impl Write) -> std::io::Result<()> {
    for event in log {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_log_jsonl(input: impl BufRead) -> std::result::Result<Vec<Event>, serde_json::Error> {
    input
        .lines()
        .map(|l| l.map_err(serde_json::Error::io))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?))
        .collect()
}

pub fn save_log(log: &[Event], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_log_jsonl(log, BufWriter::new(file)).map_err(io_err(path))
}
