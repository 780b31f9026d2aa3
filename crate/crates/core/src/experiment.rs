//! Ablation grid and hyperparameter sweeps. Independent configurations run
//! on a worker pool capped by the `TINSLT_THREADS` environment variable;
//! results merge in configuration order, so output is identical at any
//! thread count.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentationParams};
use crate::corpus::{Pair, ParallelCorpus};
use crate::error::{Error, Result};
use crate::instruction::InstructionConfig;
use crate::metrics::{bleu, EvalResult};
use crate::scalar::Scalar;
use crate::teacher::{PretrainConfig, Teacher, TeacherConfig};
use crate::train::{decode_corpus, evaluate_model, split_corpus, train, TrainConfig};

fn thread_cap(env: Option<&str>, jobs: usize) -> usize {
    let cap = env
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    cap.min(jobs).max(1)
}

fn worker_count(jobs: usize) -> usize {
    thread_cap(std::env::var("TINSLT_THREADS").ok().as_deref(), jobs)
}

/// Run `f` over `jobs` on up to `TINSLT_THREADS` workers. Results come back
/// in job order; on multiple failures the lowest-index error wins.
fn parallel_map<J, R, F>(jobs: Vec<J>, f: F) -> Result<Vec<R>>
where
    J: Send,
    R: Send,
    F: Fn(J) -> Result<R> + Sync,
{
    let n = jobs.len();
    let workers = worker_count(n);
    if workers <= 1 {
        return jobs.into_iter().map(f).collect();
    }
    let queue: Mutex<VecDeque<(usize, J)>> = Mutex::new(jobs.into_iter().enumerate().collect());
    let results: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                let Some((i, j)) = job else { break };
                let r = f(j);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub metrics: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Fixed-schema CSV: `config,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor\n");
        for row in &self.rows {
            let m = &row.metrics;
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                row.config, m.bleu1, m.bleu2, m.bleu3, m.bleu4, m.rouge_l, m.meteor
            ));
        }
        out
    }
}

struct RowSpec {
    label: &'static str,
    augmented: bool,
    fuse_enc: bool,
    fuse_dec: bool,
}

const ABLATION_ROWS: [RowSpec; 5] = [
    RowSpec {
        label: "baseline",
        augmented: false,
        fuse_enc: false,
        fuse_dec: false,
    },
    RowSpec {
        label: "+data_aug",
        augmented: true,
        fuse_enc: false,
        fuse_dec: false,
    },
    RowSpec {
        label: "+encoder_fusion",
        augmented: true,
        fuse_enc: true,
        fuse_dec: false,
    },
    RowSpec {
        label: "+decoder_fusion",
        augmented: true,
        fuse_enc: false,
        fuse_dec: true,
    },
    RowSpec {
        label: "full",
        augmented: true,
        fuse_enc: true,
        fuse_dec: true,
    },
];

/// Five-row ablation over one corpus, all rows sharing `base.seed`:
/// a plain backbone without augmentation, augmentation alone, each fusion
/// site alone, and the full model. The corpus is split once; augmentation
/// and the teacher's pretraining happen inside, on the training split only.
/// Metrics are beam-decoded on the shared dev split.
pub fn ablate<T: Scalar + Send + Sync>(
    corpus: &ParallelCorpus,
    base: &TrainConfig,
    aug_params: &AugmentationParams,
    teacher_cfg: &TeacherConfig,
    pretrain_cfg: &PretrainConfig,
) -> Result<AblationReport> {
    base.validate()?;
    let (train_raw, dev) = split_corpus(corpus, base.dev_fraction, base.seed)?;
    let (augmented, _) = augment(&train_raw, aug_params, base.seed)?;

    // Injected pairs reuse existing tokens, so both corpora share one
    // vocabulary and a single teacher serves every fusion row.
    let vocab_len = train_raw.vocab().len();
    let mut tcfg = teacher_cfg.clone();
    if tcfg.vocab_size == 0 {
        tcfg.vocab_size = vocab_len;
    } else if tcfg.vocab_size != vocab_len {
        return Err(Error::Config {
            detail: format!(
                "teacher vocab_size {} does not match corpus vocabulary {}",
                tcfg.vocab_size, vocab_len
            ),
        });
    }
    let sentences: Vec<Vec<usize>> = augmented
        .pairs()
        .iter()
        .map(|p| augmented.vocab().encode(&p.text))
        .collect();
    let (teacher, _) = Teacher::<T>::pretrain(tcfg, &sentences, pretrain_cfg)?;
    let template = base
        .instruction
        .clone()
        .unwrap_or_else(InstructionConfig::default);

    let jobs: Vec<&RowSpec> = ABLATION_ROWS.iter().collect();
    let rows = parallel_map(jobs, |spec| {
        let cfg = TrainConfig {
            augmentation: spec.augmented,
            instruction: if spec.fuse_enc || spec.fuse_dec {
                Some(InstructionConfig {
                    fuse_encoder: spec.fuse_enc,
                    fuse_decoder: spec.fuse_dec,
                    ..template.clone()
                })
            } else {
                None
            },
            ..base.clone()
        };
        let row_corpus = if spec.augmented { &augmented } else { &train_raw };
        let row_teacher = if cfg.instruction.is_some() {
            Some(&teacher)
        } else {
            None
        };
        let (model, log) = train(row_corpus, &dev, row_teacher, &cfg)?;
        let metrics = evaluate_model(
            &model,
            row_teacher,
            &dev,
            row_corpus.vocab(),
            cfg.beam_size,
            log.best_epoch as f64,
        )?;
        Ok(AblationRow {
            config: spec.label.to_string(),
            metrics,
        })
    })?;
    Ok(AblationReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    BeamSize,
    NLayers,
    Lr,
    Dropout,
}

impl SweepParam {
    fn is_integral(self) -> bool {
        matches!(self, SweepParam::BeamSize | SweepParam::NLayers)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepParam::BeamSize => "beam_size",
            SweepParam::NLayers => "n_layers",
            SweepParam::Lr => "lr",
            SweepParam::Dropout => "dropout",
        };
        f.write_str(s)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beam_size" => Ok(SweepParam::BeamSize),
            "n_layers" => Ok(SweepParam::NLayers),
            "lr" => Ok(SweepParam::Lr),
            "dropout" => Ok(SweepParam::Dropout),
            other => Err(Error::Config {
                detail: format!(
                    "unknown sweep parameter '{other}' (expected beam_size, n_layers, lr, or dropout)"
                ),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub dev_bleu4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Fixed-schema CSV: `value,dev_bleu4`, rows in the input value order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,dev_bleu4\n");
        for p in &self.points {
            if self.param.is_integral() {
                out.push_str(&format!("{},{:.4}\n", p.value as u64, p.dev_bleu4));
            } else {
                out.push_str(&format!("{},{:.4}\n", p.value, p.dev_bleu4));
            }
        }
        out
    }
}

fn integral(param: SweepParam, v: f64) -> Result<usize> {
    if v.fract() != 0.0 || v < 1.0 {
        return Err(Error::Config {
            detail: format!("{param} sweep needs positive integers, got {v}"),
        });
    }
    Ok(v as usize)
}

fn beam_dev_bleu4<T: Scalar>(
    model: &crate::model::TranslationModel<T>,
    teacher: Option<&Teacher<T>>,
    dev: &[Pair],
    vocab: &crate::vocab::Vocab,
    beam_size: usize,
    t_t: f64,
) -> Result<f64> {
    let hyps = decode_corpus(model, teacher, dev, vocab, beam_size, t_t)?;
    let refs: Vec<Vec<String>> = dev.iter().map(|p| p.text.clone()).collect();
    Ok(bleu(&hyps, &refs, 4)?[3])
}

/// Sweep one hyperparameter over `values` (kept in input order). Beam-size
/// sweeps train a single model and re-decode; the other parameters retrain
/// per value and report the best dev BLEU-4 from each run's log.
pub fn sweep<T: Scalar + Send + Sync>(
    train_corpus: &ParallelCorpus,
    dev: &[Pair],
    teacher: Option<&Teacher<T>>,
    base: &TrainConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<SweepReport> {
    base.validate()?;
    if values.is_empty() {
        return Err(Error::Config {
            detail: "sweep needs at least one value".to_string(),
        });
    }
    if param.is_integral() {
        for &v in values {
            integral(param, v)?;
        }
    }

    let points = match param {
        SweepParam::BeamSize => {
            let (model, log) = train(train_corpus, dev, teacher, base)?;
            let t_t = log.best_epoch as f64;
            parallel_map(values.to_vec(), |v| {
                let beam = integral(param, v)?;
                let b4 = beam_dev_bleu4(
                    &model,
                    teacher,
                    dev,
                    train_corpus.vocab(),
                    beam,
                    t_t,
                )?;
                Ok(SweepPoint {
                    value: v,
                    dev_bleu4: b4,
                })
            })?
        }
        _ => parallel_map(values.to_vec(), |v| {
            let mut cfg = base.clone();
            match param {
                SweepParam::NLayers => {
                    let n = integral(param, v)?;
                    cfg.model.n_enc_layers = n;
                    cfg.model.n_dec_layers = n;
                }
                SweepParam::Lr => cfg.lr = v,
                SweepParam::Dropout => cfg.model.dropout_rate = v,
                SweepParam::BeamSize => unreachable!("handled above"),
            }
            let (_, log) = train(train_corpus, dev, teacher, &cfg)?;
            Ok(SweepPoint {
                value: v,
                dev_bleu4: log.best_dev_bleu4,
            })
        })?,
    };
    Ok(SweepReport { param, points })
}
