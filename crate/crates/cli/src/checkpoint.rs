//! Checkpoints on disk: a weight container next to a JSON sidecar.
//!
//! The container holds tensors only; the sidecar carries everything needed
//! to rebuild the object around them (architecture config, vocabulary in id
//! order, training provenance) plus a fingerprint of the weight bytes so a
//! mismatched pair fails loudly instead of decoding garbage.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tinslt::backbone::ModelConfig;
use tinslt::teacher::PretrainReport;
use tinslt::train::TrainLog;
use tinslt::vocab::Vocab;
use tinslt::{
    load_weights, save_weights, weights_fingerprint, InstructionConfig, Teacher, TeacherConfig,
    TranslationModel,
};

use crate::config::{CliError, CliResult};

/// Seconds since the Unix epoch, or `None` when reports must be
/// byte-reproducible.
pub fn timestamp(no_timestamp: bool) -> Option<u64> {
    if no_timestamp {
        None
    } else {
        Some(
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        )
    }
}

/// Map a checkpoint argument to its two files: `m`, `m.bin`, and `m.json`
/// all name the pair (`m.bin`, `m.json`).
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    (stem.with_extension("bin"), stem.with_extension("json"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub kind: String,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<InstructionConfig>,
    pub best_epoch: usize,
    pub best_dev_bleu4: f64,
    pub stopped_early: bool,
    pub fingerprint: String,
    pub vocab_tokens: Vec<String>,
    pub vocab_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherSidecar {
    pub kind: String,
    pub teacher: TeacherConfig,
    pub report: PretrainReport,
    pub fingerprint: String,
    pub vocab_tokens: Vec<String>,
    pub vocab_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

fn write_sidecar<S: Serialize>(path: &Path, sidecar: &S) -> CliResult<()> {
    let mut body = serde_json::to_string_pretty(sidecar)
        .map_err(|e| CliError::Runtime(format!("sidecar encode: {e}")))?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

fn read_sidecar<S: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<S> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("sidecar {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("sidecar {}: {e}", path.display())))
}

pub fn save_model(
    prefix: &Path,
    model: &TranslationModel<f32>,
    vocab: &Vocab,
    log: &TrainLog,
    ts: Option<u64>,
) -> CliResult<(PathBuf, PathBuf)> {
    let (bin, json) = checkpoint_paths(prefix);
    save_weights(&model.store, &bin)?;
    let sidecar = ModelSidecar {
        kind: "model".to_string(),
        model: model.cfg.clone(),
        instruction: model.icfg.clone(),
        best_epoch: log.best_epoch,
        best_dev_bleu4: log.best_dev_bleu4,
        stopped_early: log.stopped_early,
        fingerprint: weights_fingerprint(&model.store),
        vocab_tokens: vocab.tokens().to_vec(),
        vocab_counts: vocab.counts(),
        timestamp: ts,
    };
    write_sidecar(&json, &sidecar)?;
    Ok((bin, json))
}

pub fn load_model(path: &Path) -> CliResult<(TranslationModel<f32>, Vocab, ModelSidecar)> {
    let (bin, json) = checkpoint_paths(path);
    let sidecar: ModelSidecar = read_sidecar(&json)?;
    if sidecar.kind != "model" {
        return Err(CliError::Runtime(format!(
            "{} is a '{}' checkpoint, expected 'model'",
            json.display(),
            sidecar.kind
        )));
    }
    let store = load_weights::<f32>(&bin)?;
    if weights_fingerprint(&store) != sidecar.fingerprint {
        return Err(CliError::Runtime(format!(
            "{} does not match its sidecar fingerprint",
            bin.display()
        )));
    }
    let vocab = Vocab::from_parts(sidecar.vocab_tokens.clone(), sidecar.vocab_counts.clone())?;
    let model = TranslationModel::from_store(
        sidecar.model.clone(),
        sidecar.instruction.clone(),
        store,
    )?;
    Ok((model, vocab, sidecar))
}

pub fn save_teacher(
    prefix: &Path,
    teacher: &Teacher<f32>,
    vocab: &Vocab,
    report: &PretrainReport,
    ts: Option<u64>,
) -> CliResult<(PathBuf, PathBuf)> {
    let (bin, json) = checkpoint_paths(prefix);
    save_weights(&teacher.store, &bin)?;
    let sidecar = TeacherSidecar {
        kind: "teacher".to_string(),
        teacher: teacher.cfg.clone(),
        report: report.clone(),
        fingerprint: teacher.fingerprint(),
        vocab_tokens: vocab.tokens().to_vec(),
        vocab_counts: vocab.counts(),
        timestamp: ts,
    };
    write_sidecar(&json, &sidecar)?;
    Ok((bin, json))
}

pub fn load_teacher(path: &Path) -> CliResult<(Teacher<f32>, Vocab, TeacherSidecar)> {
    let (bin, json) = checkpoint_paths(path);
    let sidecar: TeacherSidecar = read_sidecar(&json)?;
    if sidecar.kind != "teacher" {
        return Err(CliError::Runtime(format!(
            "{} is a '{}' checkpoint, expected 'teacher'",
            json.display(),
            sidecar.kind
        )));
    }
    let store = load_weights::<f32>(&bin)?;
    if weights_fingerprint(&store) != sidecar.fingerprint {
        return Err(CliError::Runtime(format!(
            "{} does not match its sidecar fingerprint",
            bin.display()
        )));
    }
    let vocab = Vocab::from_parts(sidecar.vocab_tokens.clone(), sidecar.vocab_counts.clone())?;
    let teacher = Teacher::from_store(sidecar.teacher.clone(), store)?;
    Ok((teacher, vocab, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_paths_normalize_extensions() {
        for given in ["m", "m.bin", "m.json"] {
            let (bin, json) = checkpoint_paths(Path::new(given));
            assert_eq!(bin, Path::new("m.bin"));
            assert_eq!(json, Path::new("m.json"));
        }
    }

    #[test]
    fn timestamp_respects_suppression() {
        assert_eq!(timestamp(true), None);
        assert!(timestamp(false).is_some());
    }
}
