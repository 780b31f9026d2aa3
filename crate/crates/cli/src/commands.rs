//! One function per subcommand. All of them share the same conventions:
//! progress lines go to stderr, data and reports go to stdout or files,
//! and config-driven commands echo their effective configuration first.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use tinslt::augment::{augment, compute_factors, upsampling_ratio, AugmentationParams};
use tinslt::corpus::{load_parallel, write_parallel, Pair, ParallelCorpus};
use tinslt::experiment::{AblationReport, AblationRow};
use tinslt::instruction::{alpha_value, schedule_trajectory, AlphaStrategy};
use tinslt::metrics::evaluate as score;
use tinslt::synth::generate_synthetic;
use tinslt::train::{decode_ids, split_corpus};
use tinslt::vocab::{detokenize, tokenize, Vocab};
use tinslt::{SweepParam, Teacher, TranslationModel};

use crate::checkpoint::{load_model, load_teacher, save_model, save_teacher};
use crate::config::{CliError, CliResult, FileConfig};
use crate::{
    AblateArgs, AugmentArgs, EvaluateArgs, GenCorpusArgs, InspectAlphaArgs, PretrainArgs,
    StatsArgs, SweepArgs, TrainArgs, TranslateArgs,
};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// `--in PREFIX` names a pair of files `PREFIX.gloss` / `PREFIX.text`;
/// passing either full filename works too.
fn load_corpus(prefix: &Path) -> CliResult<ParallelCorpus> {
    let gloss = prefix.with_extension("gloss");
    let text = prefix.with_extension("text");
    Ok(load_parallel(&gloss, &text)?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(format!("report encode: {e}")))?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

fn stamped(mut value: serde_json::Value, ts: Option<u64>) -> serde_json::Value {
    if let (Some(obj), Some(ts)) = (value.as_object_mut(), ts) {
        obj.insert("timestamp".to_string(), ts.into());
    }
    value
}

fn theta_array(values: &[f64]) -> [f64; 4] {
    [values[0], values[1], values[2], values[3]]
}

/// Read one-sentence-per-line tokens; `require_nonempty` rejects blank
/// lines (decoding has no meaningful output for them).
fn read_lines(path: &Path, require_nonempty: bool) -> CliResult<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks = tokenize(line);
        if toks.is_empty() && require_nonempty {
            return Err(runtime(format!("{}: line {} is empty", path.display(), i + 1)));
        }
        out.push(toks);
    }
    if out.is_empty() {
        return Err(runtime(format!("{}: no lines", path.display())));
    }
    Ok(out)
}

pub fn gen_corpus(args: GenCorpusArgs, ts: Option<u64>) -> CliResult<()> {
    let corpus = generate_synthetic(
        args.pairs,
        args.gloss_vocab,
        args.text_vocab,
        args.drop_prob,
        args.seed,
    )?;
    fs::create_dir_all(&args.out)?;
    let gloss = args.out.join(format!("{}.gloss", args.name));
    let text = args.out.join(format!("{}.text", args.name));
    write_parallel(&corpus, &gloss, &text)?;
    let report = stamped(
        json!({
            "name": args.name,
            "n_pairs": corpus.len(),
            "gloss_vocab": args.gloss_vocab,
            "text_vocab": args.text_vocab,
            "drop_prob": args.drop_prob,
            "seed": args.seed,
            "gloss_types": corpus.gloss_types().len(),
            "text_types": corpus.text_types().len(),
            "vocab_size": corpus.vocab().len(),
        }),
        ts,
    );
    write_json(&args.out.join(format!("{}.json", args.name)), &report)?;
    eprintln!("wrote {} and {}", gloss.display(), text.display());
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

/// Merge `[augment]` defaults with flag overrides.
fn augment_params(
    config: Option<&Path>,
    tau_r: Option<usize>,
    tau_c: Option<f64>,
    theta: Option<&Vec<f64>>,
) -> CliResult<(FileConfig, AugmentationParams)> {
    let cfg = FileConfig::load(config)?;
    let mut params = cfg.augment;
    if let Some(v) = tau_r {
        params.tau_r = v;
    }
    if let Some(v) = tau_c {
        params.tau_c = v;
    }
    if let Some(v) = theta {
        params.theta = theta_array(v);
    }
    Ok((cfg, params))
}

#[derive(Serialize)]
struct AugmentSection<'a> {
    augment: &'a AugmentationParams,
}

pub fn augment_corpus(args: AugmentArgs, ts: Option<u64>) -> CliResult<()> {
    let (cfg, params) =
        augment_params(args.config.as_deref(), args.tau_r, args.tau_c, args.theta.as_ref())?;
    let seed = args.seed.unwrap_or(cfg.train.seed);
    println!("# effective configuration");
    print!(
        "{}",
        toml::to_string_pretty(&AugmentSection { augment: &params }).unwrap()
    );
    println!("seed = {seed}");
    println!("# end configuration");

    let corpus = load_corpus(&args.input)?;
    let (augmented, report) = augment(&corpus, &params, seed)?;

    let stem = args
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| usage(format!("cannot take a file stem from {}", args.input.display())))?;
    fs::create_dir_all(&args.out)?;
    let gloss = args.out.join(format!("{stem}.aug.gloss"));
    let text = args.out.join(format!("{stem}.aug.text"));
    write_parallel(&augmented, &gloss, &text)?;
    let report_json = stamped(report.to_json(), ts);
    write_json(&args.out.join(format!("{stem}.aug.json")), &report_json)?;
    eprintln!(
        "wrote {} pairs ({} injected) to {} and {}",
        augmented.len(),
        report.n_injected,
        gloss.display(),
        text.display()
    );
    println!("{}", serde_json::to_string_pretty(&report_json).unwrap());
    Ok(())
}

/// Split off the dev set, then augment the training split when the config
/// asks for it. Pretraining and training both run through here so the
/// teacher and the translator always see the same corpus and vocabulary.
fn prepare_corpus(
    corpus: &ParallelCorpus,
    cfg: &FileConfig,
) -> CliResult<(ParallelCorpus, Vec<Pair>)> {
    let (train_raw, dev) = split_corpus(corpus, cfg.train.dev_fraction, cfg.train.seed)?;
    let train_c = if cfg.train.augmentation {
        let (augmented, report) = augment(&train_raw, &cfg.augment, cfg.train.seed)?;
        eprintln!(
            "prepared {} train pairs ({} injected), {} dev pairs",
            augmented.len(),
            report.n_injected,
            dev.len()
        );
        augmented
    } else {
        eprintln!(
            "prepared {} train pairs (no augmentation), {} dev pairs",
            train_raw.len(),
            dev.len()
        );
        train_raw
    };
    Ok((train_c, dev))
}

pub fn pretrain(args: PretrainArgs, ts: Option<u64>) -> CliResult<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    if let Some(v) = args.epochs {
        cfg.pretrain.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.pretrain.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.pretrain.lr = v;
    }
    if let Some(v) = args.mask_prob {
        cfg.teacher.mask_prob = v;
    }
    if let Some(v) = args.seed {
        cfg.pretrain.seed = v;
    }
    cfg.echo();

    let corpus = load_corpus(&args.input)?;
    let (train_c, _dev) = prepare_corpus(&corpus, &cfg)?;
    let vocab = train_c.vocab().clone();
    let sentences: Vec<Vec<usize>> = train_c
        .pairs()
        .iter()
        .map(|p| vocab.encode(&p.text))
        .collect();
    let mut tcfg = cfg.teacher.clone();
    if tcfg.vocab_size == 0 {
        tcfg.vocab_size = vocab.len();
    }
    let (teacher, report) = Teacher::<f32>::pretrain(tcfg, &sentences, &cfg.pretrain)?;

    fs::create_dir_all(&args.out)?;
    let (bin, json) = save_teacher(&args.out.join(&args.name), &teacher, &vocab, &report, ts)?;
    eprintln!("wrote {} and {}", bin.display(), json.display());
    println!(
        "{}",
        serde_json::to_string_pretty(&stamped(
            json!({
                "masked_accuracy": report.masked_accuracy,
                "chance_accuracy": report.chance_accuracy,
                "masked_positions": report.masked_positions,
                "final_loss": report.final_loss,
                "epochs": report.epochs,
            }),
            ts,
        ))
        .unwrap()
    );
    Ok(())
}

fn apply_train_overrides(cfg: &mut FileConfig, args: &TrainArgs) {
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.warmup_steps {
        cfg.train.warmup_steps = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.beam_size {
        cfg.train.beam_size = v;
    }
    if let Some(v) = args.patience {
        cfg.train.early_stop_patience = v;
    }
    if let Some(v) = args.dev_fraction {
        cfg.train.dev_fraction = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if args.vanilla {
        cfg.train.instruction = None;
    }
    if args.no_augment {
        cfg.train.augmentation = false;
    }
}

/// A fused config needs its teacher, a vanilla config must not get one,
/// and the teacher must carry the same token-to-id table as the corpus.
fn resolve_teacher(
    fused: bool,
    path: Option<&Path>,
    vocab: &Vocab,
) -> CliResult<Option<Teacher<f32>>> {
    match (fused, path) {
        (true, Some(p)) => {
            let (teacher, tvocab, _) = load_teacher(p)?;
            if tvocab.tokens() != vocab.tokens() {
                return Err(runtime(
                    "teacher vocabulary does not match the training corpus; \
                     pretrain with the same corpus, seed, and augmentation settings",
                ));
            }
            Ok(Some(teacher))
        }
        (true, None) => Err(usage(
            "this configuration fuses teacher features; pass --teacher CHECKPOINT (or --vanilla)",
        )),
        (false, Some(_)) => Err(usage(
            "--teacher given but the configuration has no instruction module",
        )),
        (false, None) => Ok(None),
    }
}

pub fn train(args: TrainArgs, ts: Option<u64>) -> CliResult<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    apply_train_overrides(&mut cfg, &args);
    cfg.echo();

    let corpus = load_corpus(&args.input)?;
    let (train_c, dev) = prepare_corpus(&corpus, &cfg)?;
    let teacher = resolve_teacher(
        cfg.train.instruction.is_some(),
        args.teacher.as_deref(),
        train_c.vocab(),
    )?;

    let (model, log) = tinslt::train::train(&train_c, &dev, teacher.as_ref(), &cfg.train)?;

    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("train_log.csv");
    fs::write(&csv_path, log.to_csv())?;
    let (bin, json) = save_model(&args.out.join("model"), &model, train_c.vocab(), &log, ts)?;
    eprintln!(
        "wrote {}, {}, and {}",
        bin.display(),
        json.display(),
        csv_path.display()
    );
    println!(
        "best epoch {} dev BLEU-4 {:.4}{}",
        log.best_epoch,
        log.best_dev_bleu4,
        if log.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    Ok(())
}

pub fn translate(args: TranslateArgs) -> CliResult<()> {
    let (model, vocab, sidecar) = load_model(&args.model)?;
    let teacher = match (&model.icfg, args.teacher.as_deref()) {
        (Some(_), Some(p)) => {
            let (teacher, tvocab, _) = load_teacher(p)?;
            if tvocab.tokens() != vocab.tokens() {
                return Err(runtime(
                    "teacher vocabulary does not match the model checkpoint",
                ));
            }
            Some(teacher)
        }
        (Some(_), None) => {
            return Err(usage(
                "this model fuses teacher features; pass --teacher CHECKPOINT",
            ))
        }
        (None, Some(_)) => {
            return Err(usage("--teacher given but the model has no instruction module"))
        }
        (None, None) => None,
    };
    let t_t = args.alpha_epoch.unwrap_or(sidecar.best_epoch as f64);

    let lines = read_lines(&args.input, true)?;
    let mut out = String::new();
    for toks in &lines {
        let ids = vocab.encode(toks);
        let decoded = decode_ids(&model, teacher.as_ref(), &ids, args.beam_size, t_t)?;
        out.push_str(&detokenize(&vocab.decode(&decoded)));
        out.push('\n');
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &out)?;
            eprintln!("translated {} lines to {}", lines.len(), path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let hyps = read_lines(&args.hyp, false)?;
    let refs = read_lines(&args.reference, false)?;
    let result = score(&hyps, &refs)?;
    let body = serde_json::to_string_pretty(&result).unwrap();
    println!("{body}");
    if let Some(path) = &args.json_out {
        fs::write(path, format!("{body}\n"))?;
    }
    if let Some(path) = &args.csv_out {
        let table = AblationReport {
            rows: vec![AblationRow {
                config: args.label.clone(),
                metrics: result,
            }],
        };
        fs::write(path, table.to_csv())?;
    }
    Ok(())
}

pub fn ablate(args: AblateArgs, ts: Option<u64>) -> CliResult<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    cfg.echo();

    let corpus = load_corpus(&args.input)?;
    let report = tinslt::experiment::ablate::<f32>(
        &corpus,
        &cfg.train,
        &cfg.augment,
        &cfg.teacher,
        &cfg.pretrain,
    )?;

    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("ablation.csv");
    fs::write(&csv_path, report.to_csv())?;
    let report_json = stamped(serde_json::to_value(&report).unwrap(), ts);
    write_json(&args.out.join("ablation.json"), &report_json)?;
    eprintln!("wrote {}", csv_path.display());
    print!("{}", report.to_csv());
    Ok(())
}

pub fn sweep(args: SweepArgs, ts: Option<u64>) -> CliResult<()> {
    let param: SweepParam = args
        .param
        .replace('-', "_")
        .parse()
        .map_err(|e: tinslt::Error| usage(e.to_string()))?;
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if args.vanilla {
        cfg.train.instruction = None;
    }
    if args.no_augment {
        cfg.train.augmentation = false;
    }
    cfg.echo();

    let corpus = load_corpus(&args.input)?;
    let (train_c, dev) = prepare_corpus(&corpus, &cfg)?;
    let teacher = resolve_teacher(
        cfg.train.instruction.is_some(),
        args.teacher.as_deref(),
        train_c.vocab(),
    )?;

    let report = tinslt::experiment::sweep::<f32>(
        &train_c,
        &dev,
        teacher.as_ref(),
        &cfg.train,
        param,
        &args.values,
    )?;

    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join(format!("sweep_{param}.csv"));
    fs::write(&csv_path, report.to_csv())?;
    let report_json = stamped(serde_json::to_value(&report).unwrap(), ts);
    write_json(&args.out.join(format!("sweep_{param}.json")), &report_json)?;
    eprintln!("wrote {}", csv_path.display());
    print!("{}", report.to_csv());
    Ok(())
}

fn parse_strategy(name: &str) -> CliResult<AlphaStrategy> {
    let normalized = name.replace('-', "_");
    serde_json::from_value(json!(normalized)).map_err(|_| {
        usage(format!(
            "unknown strategy '{name}' (expected constant, cosine_annealing, cosine_decrement, \
             cosine_increment, monotone_increase, or learned)"
        ))
    })
}

fn strategy_name(strategy: AlphaStrategy) -> String {
    match serde_json::to_value(strategy).unwrap() {
        serde_json::Value::String(s) => s,
        _ => unreachable!("strategy serializes to a string"),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Alpha of one stack read straight from checkpoint parameters (learned)
/// or from the closed-form schedule at the checkpoint's best epoch.
fn stack_alpha(
    model: &TranslationModel<f32>,
    prefix: &str,
    n_layers: usize,
    fused: bool,
    t_t: f64,
) -> CliResult<serde_json::Value> {
    if !fused {
        return Ok(serde_json::Value::Null);
    }
    let ic = model.icfg.as_ref().expect("fused model has instruction config");
    if ic.alpha.strategy == AlphaStrategy::Learned {
        let names: Vec<String> = if ic.per_layer_alpha {
            (0..n_layers).map(|i| format!("alpha.{prefix}.l{i}.raw")).collect()
        } else {
            vec![format!("alpha.{prefix}.raw")]
        };
        let mut vals = Vec::new();
        for name in &names {
            let id = model
                .store
                .lookup(name)
                .ok_or_else(|| runtime(format!("checkpoint is missing parameter {name}")))?;
            vals.push(sigmoid(f64::from(model.store.get(id).data()[0])));
        }
        Ok(if ic.per_layer_alpha {
            json!(vals)
        } else {
            json!(vals[0])
        })
    } else {
        Ok(json!(alpha_value(&ic.alpha, t_t)?))
    }
}

pub fn inspect_alpha(args: InspectAlphaArgs) -> CliResult<()> {
    if let Some(model_path) = &args.model {
        let (model, _vocab, sidecar) = load_model(model_path)?;
        let Some(ic) = model.icfg.clone() else {
            return Err(runtime("checkpoint has no instruction module"));
        };
        let t_t = sidecar.best_epoch as f64;
        let report = json!({
            "strategy": strategy_name(ic.alpha.strategy),
            "per_layer_alpha": ic.per_layer_alpha,
            "best_epoch": sidecar.best_epoch,
            "alpha_enc": stack_alpha(&model, "enc", model.cfg.n_enc_layers, ic.fuse_encoder, t_t)?,
            "alpha_dec": stack_alpha(&model, "dec", model.cfg.n_dec_layers, ic.fuse_decoder, t_t)?,
        });
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
        return Ok(());
    }

    let cfg = FileConfig::load(args.config.as_deref())?;
    let mut alpha = cfg
        .train
        .instruction
        .map(|ic| ic.alpha)
        .unwrap_or_default();
    if let Some(s) = &args.strategy {
        alpha.strategy = parse_strategy(s)?;
    }
    if let Some(v) = args.value {
        alpha.value = v;
    }
    if let Some(v) = args.alpha_min {
        alpha.alpha_min = v;
    }
    if let Some(v) = args.alpha_max {
        alpha.alpha_max = v;
    }
    if let Some(v) = args.t_c {
        alpha.t_c = v;
    }
    if let Some(v) = args.gamma {
        alpha.gamma = v;
    }
    if alpha.strategy == AlphaStrategy::Learned {
        return Err(usage(
            "learned alpha has no closed-form trajectory; pass --model CHECKPOINT, or read the \
             alpha_enc/alpha_dec columns of train_log.csv",
        ));
    }
    let trajectory = schedule_trajectory(&alpha, args.epochs)?;
    let mut csv = String::from("epoch,alpha\n");
    for (epoch, a) in trajectory.iter().enumerate() {
        csv.push_str(&format!("{epoch},{a:.6}\n"));
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn stats(args: StatsArgs) -> CliResult<()> {
    let (_cfg, params) =
        augment_params(args.config.as_deref(), args.tau_r, args.tau_c, args.theta.as_ref())?;
    let corpus = load_corpus(&args.input)?;
    let factors = compute_factors(&corpus, &params);
    let phi = upsampling_ratio(
        &[factors.phi_v, factors.phi_r, factors.phi_s, factors.phi_d],
        &params.theta,
    );
    let report = json!({
        "phi_v": factors.phi_v,
        "phi_r": factors.phi_r,
        "phi_s": factors.phi_s,
        "phi_d": factors.phi_d,
        "Phi": phi,
        "n_pairs": corpus.len(),
        "n_candidates": factors.candidates.len(),
        "tau_r": params.tau_r,
        "tau_c": params.tau_c,
        "theta": params.theta,
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    if let Some(path) = &args.json_out {
        write_json(path, &report)?;
    }
    Ok(())
}
