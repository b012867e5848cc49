//! Output files. Every file starts with the artifact version and config hash:
//! CSV files carry them in a leading `#` comment line, JSON files as keys.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use copula_vi::elbo::TraceRow;
use copula_vi::flow::{Checkpoint, FamilySpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub family: String,
    pub seed: u64,
}

impl Provenance {
    pub fn csv_comment(&self) -> String {
        format!(
            "# copula-vi {} config_hash={} family={} seed={}",
            self.version, self.config_hash, self.family, self.seed
        )
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

/// Writes a CSV file with the provenance comment, a header row and `rows`.
pub fn write_csv<R>(path: &Path, prov: &Provenance, header: &[String], rows: R) -> Result<(), CliError>
where
    R: IntoIterator<Item = Vec<String>>,
{
    let mut w = create(path)?;
    writeln!(w, "{}", prov.csv_comment()).map_err(|e| CliError::io(path, e))?;
    let mut csv = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    csv.write_record(header)?;
    for r in rows {
        csv.write_record(&r)?;
    }
    csv.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn write_trace(path: &Path, prov: &Provenance, trace: &[TraceRow]) -> Result<(), CliError> {
    let header: Vec<String> = TraceRow::CSV_HEADER.split(',').map(String::from).collect();
    let rows = trace.iter().map(|r| {
        vec![
            r.iteration.to_string(),
            r.elbo.to_string(),
            r.elbo_stderr.to_string(),
            r.grad_norm.to_string(),
            r.wall_ms.to_string(),
        ]
    });
    write_csv(path, prov, &header, rows)
}

/// Serializes `value` with the provenance keys merged in at the top level.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, value: &T) -> Result<(), CliError> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut v {
        let mut out = serde_json::Map::new();
        out.insert("version".into(), prov.version.clone().into());
        out.insert("config_hash".into(), prov.config_hash.clone().into());
        out.append(map);
        v = serde_json::Value::Object(out);
    }
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &v).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(w).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// On-disk checkpoint: the family plus the provenance of the run that wrote it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint: Checkpoint,
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.json")
}

pub fn write_checkpoint(dir: &Path, prov: &Provenance, spec: &FamilySpec) -> Result<(), CliError> {
    let file = CheckpointFile {
        version: prov.version.clone(),
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        checkpoint: Checkpoint::new(spec),
    };
    let path = checkpoint_path(dir);
    let text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

pub fn read_checkpoint(dir: &Path) -> Result<CheckpointFile, CliError> {
    let path = checkpoint_path(dir);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let inner = serde_json::to_string(&file.checkpoint).map_err(|e| CliError::Config(e.to_string()))?;
    Checkpoint::from_json(&inner)?;
    Ok(file)
}
