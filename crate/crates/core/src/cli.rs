//! Command-line front end. Every command prints one JSON metrics object on
//! success and writes its artifacts under `--out-dir`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};

use crate::checkpoint::{self, Checkpoint, ModelKind};
use crate::data::{
    self, generate_with, load_annotations, load_nli, load_parallel, load_parallel_tsv,
    save_annotations, synthetic_nli, tokenize, write_nli, write_parallel_tsv, EvalHomographList,
    HomographAnnotation, MiniWordNet, SentencePair, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::eval::{export_token_vectors, similarity_heatmap};
use crate::nmt::{train_nmt, NmtModel, TrainOptions, HDR_PREFIX};
use crate::pipeline::{score_translations, source_vocab, target_vocab};
use crate::pretrain::{
    collapse_diagnostic, sr_train, wdr_train, HdrModel, SrOptions, WdrOptions, ENCODER_PREFIX,
};
use crate::transformer::{FusionScheme, GateMode, ModelConfig, SecondEncoderSource, Strategy};

#[derive(Debug, Parser)]
#[command(
    name = "hdr-nmt",
    version,
    about = "Homograph-aware NMT toolkit",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic homograph corpus, lexicon, evaluation list and NLI set.
    GenData(GenData),
    /// Sentence-level pre-training on NLI pairs.
    PretrainSr(PretrainSr),
    /// Word-level pre-training on synset-paired homographs.
    PretrainWdr(PretrainWdr),
    /// Train a translation model.
    Train(Train),
    /// Translate one sentence per line.
    Translate(Translate),
    /// BLEU and homograph accuracy on a test set.
    Evaluate(Evaluate),
    /// Checkpoint summary, homograph similarity matrix and token vectors.
    Inspect(Inspect),
}

#[derive(Debug, Args)]
struct Common {
    /// key=value file supplying any flag of this command.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct Arch {
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, visible_alias = "heads", default_value_t = 4)]
    n_heads: usize,
    #[arg(long, visible_alias = "enc-layers", default_value_t = 2)]
    n_enc_layers: usize,
    #[arg(long, visible_alias = "dec-layers", default_value_t = 2)]
    n_dec_layers: usize,
    #[arg(long, default_value_t = 256)]
    d_ff: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f32,
}

impl Arch {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dropout: self.dropout,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
struct GenData {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 5000)]
    pairs: usize,
    #[arg(long, default_value_t = 4)]
    homographs: usize,
    #[arg(long, default_value_t = 40)]
    fillers: usize,
    #[arg(long, default_value_t = 3)]
    examples_per_synset: usize,
    #[arg(long, default_value_t = 300)]
    nli_examples: usize,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
}

#[derive(Debug, Args)]
struct PretrainSr {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    arch: Arch,
    #[arg(long)]
    nli: PathBuf,
    /// Parallel TSV whose sources define the shared source vocabulary.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    wordnet: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// Append [h_A ; h_B] to the |h_A - h_B| feature.
    #[arg(long)]
    concat_features: bool,
}

#[derive(Debug, Args)]
struct PretrainWdr {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    arch: Arch,
    /// Encoder checkpoint to continue from (normally the sentence-level one).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Start from a random encoder; requires --corpus for the vocabulary.
    #[arg(long)]
    from_scratch: bool,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    wordnet: PathBuf,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
}

#[derive(Debug, Args)]
struct Train {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    arch: Arch,
    /// Parallel TSV (source TAB target).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
    /// Held-out TSV; defaults to a seeded 10% split of the training data.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long, visible_alias = "scheme", default_value = "baseline")]
    fusion_scheme: FusionScheme,
    #[arg(long, visible_alias = "gate", default_value = "fixed:0.5")]
    gate_mode: GateMode,
    #[arg(
        long,
        visible_alias = "second-encoder",
        default_value = "hdr_pretrained"
    )]
    second_encoder_source: SecondEncoderSource,
    /// Pre-trained encoder checkpoint for the hdr_pretrained source.
    #[arg(long, visible_alias = "hdr-checkpoint")]
    hdr: Option<PathBuf>,
    /// Translation checkpoint to warm-start from.
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    max_tokens: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 400)]
    warmup: usize,
    #[arg(long, default_value_t = 0.1)]
    label_smoothing: f32,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 200)]
    bleu_sentences: usize,
}

#[derive(Debug, Args)]
struct Translate {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// One source sentence per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "greedy")]
    strategy: Strategy,
}

#[derive(Debug, Args)]
struct Evaluate {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Parallel TSV test set.
    #[arg(long)]
    test: PathBuf,
    /// Annotations aligned line by line with the test set.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    eval_list: Option<PathBuf>,
    #[arg(long, default_value = "greedy")]
    strategy: Strategy,
}

#[derive(Debug, Args)]
struct Inspect {
    #[command(flatten)]
    common: Common,
    /// Pre-training or translation checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Annotations whose sentences contain the homograph.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Plain sentences, one per line, used when no annotations are given.
    #[arg(long)]
    sentences: Option<PathBuf>,
    #[arg(long)]
    lemma: Option<String>,
    /// Add a 2-D principal-component projection to the exported vectors.
    #[arg(long)]
    project: bool,
    /// Inspect the translation model's own encoder instead of its second one.
    #[arg(long)]
    nmt_encoder: bool,
}

/// Parse and run; returns the process exit code. Errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(args) {
        Ok(Some(v)) => {
            println!("{v}");
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parse and run; `Ok(None)` means help or version text was printed.
pub fn run<I, T>(args: I) -> Result<Option<Value>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = expand_config(args)?;
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return Ok(None);
            }
            return Err(Error::Config(e.to_string().trim().to_string()));
        }
    };
    let v = match cli.command {
        Command::GenData(c) => gen_data(c),
        Command::PretrainSr(c) => pretrain_sr(c),
        Command::PretrainWdr(c) => pretrain_wdr(c),
        Command::Train(c) => train(c),
        Command::Translate(c) => translate(c),
        Command::Evaluate(c) => evaluate(c),
        Command::Inspect(c) => inspect(c),
    }?;
    Ok(Some(v))
}

/// Splice `key=value` lines of a `--config` file in front of the explicit
/// flags so the latter take precedence. Unknown keys are rejected.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let pos = args.iter().position(|a| a == "--config");
    let path = match pos {
        Some(i) => PathBuf::from(
            args.get(i + 1)
                .ok_or_else(|| Error::Config("--config needs a path".into()))?,
        ),
        None => match args
            .iter()
            .find_map(|a| a.to_str()?.strip_prefix("--config=").map(PathBuf::from))
        {
            Some(p) => p,
            None => return Ok(args),
        },
    };
    let sub = args
        .get(1)
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config("missing command".into()))?
        .to_string();
    let cmd = Cli::command();
    let sc = cmd
        .find_subcommand(&sub)
        .ok_or_else(|| Error::Config(format!("unknown command {sub:?}")))?;
    let mut known = BTreeSet::new();
    let mut flags = BTreeSet::new();
    for a in sc.get_arguments() {
        let names = a
            .get_long()
            .into_iter()
            .chain(a.get_visible_aliases().unwrap_or_default());
        let is_flag = matches!(a.get_action(), clap::ArgAction::SetTrue);
        for n in names {
            known.insert(n.to_string());
            if is_flag {
                flags.insert(n.to_string());
            }
        }
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1))
        })?;
        let key = k.trim().replace('_', "-");
        let value = v.trim();
        if key == "config" || !known.contains(&key) {
            return Err(Error::Config(format!(
                "{}:{}: unknown key {:?} for {sub}",
                path.display(),
                i + 1,
                k.trim()
            )));
        }
        if flags.contains(&key) {
            match value {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(Error::Config(format!(
                        "{}:{}: {key} expects true or false, got {other:?}",
                        path.display(),
                        i + 1
                    )))
                }
            }
        } else {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        }
    }
    let mut out = args[..2].to_vec();
    out.extend(injected);
    out.extend(args[2..].iter().cloned());
    Ok(out)
}

fn out_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out_dir).map_err(|e| Error::io(&c.out_dir, e))?;
    Ok(&c.out_dir)
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ))
    }
}

fn gen_data(c: GenData) -> Result<Value> {
    if !(0.0..1.0).contains(&c.test_fraction) {
        return Err(Error::Config(format!(
            "test-fraction {} outside [0, 1)",
            c.test_fraction
        )));
    }
    let dir = out_dir(&c.common)?.to_path_buf();
    let seed = c.common.seed;
    let corpus = generate_with(&SyntheticConfig {
        n_pairs: c.pairs,
        n_homographs: c.homographs,
        n_fillers: c.fillers,
        examples_per_synset: c.examples_per_synset,
        seed,
    })?;
    let n_test = (c.pairs as f64 * c.test_fraction).round() as usize;
    let n_train = c.pairs - n_test;
    write_parallel_tsv(&dir.join("train.tsv"), &corpus.pairs[..n_train])?;
    write_parallel_tsv(&dir.join("test.tsv"), &corpus.pairs[n_train..])?;
    save_annotations(
        &dir.join("train_annotations.jsonl"),
        &corpus.annotations[..n_train],
    )?;
    save_annotations(
        &dir.join("test_annotations.jsonl"),
        &corpus.annotations[n_train..],
    )?;
    corpus.wordnet.save(&dir.join("wordnet.jsonl"))?;
    corpus.eval_list.save(&dir.join("eval_list.jsonl"))?;
    let nli = synthetic_nli(c.nli_examples, c.homographs, seed)?;
    write_nli(&dir.join("nli.tsv"), &nli)?;
    Ok(json!({
        "command": "gen-data",
        "train_pairs": n_train,
        "test_pairs": n_test,
        "homographs": corpus.eval_list.len(),
        "synsets": corpus.wordnet.len(),
        "nli_examples": nli.len(),
        "out_dir": dir,
    }))
}

fn pretrain_sr(c: PretrainSr) -> Result<Value> {
    for p in [&c.nli, &c.corpus].into_iter().chain(c.wordnet.as_ref()) {
        require(p)?;
    }
    let nli = load_nli(&c.nli)?;
    let corpus = load_parallel_tsv(&c.corpus)?;
    let wn = c.wordnet.as_deref().map(MiniWordNet::load).transpose()?;
    let vocab = source_vocab(&corpus, wn.as_ref(), &nli);
    let seed = c.common.seed;
    let mut model = HdrModel::new(c.arch.config(), vocab, c.concat_features, seed)?;
    let dir = out_dir(&c.common)?.to_path_buf();
    let mut log = MetricsLog::create(&dir.join("sr_metrics.jsonl"))?;
    let opts = SrOptions {
        epochs: c.epochs,
        batch_size: c.batch_size,
        lr: c.lr,
        patience: c.patience,
        seed,
        ..Default::default()
    };
    let report = sr_train(&mut model, &nli, &opts, |e| log.write(e))?;
    log.finish()?;
    let path = dir.join("sr.ckpt");
    checkpoint::save_hdr(&model, seed, &path)?;
    Ok(json!({
        "command": "pretrain-sr",
        "epochs": report.history.len(),
        "best_epoch": report.best_epoch,
        "heldout_accuracy": report.best_heldout_accuracy,
        "train_size": report.train_size,
        "heldout_size": report.heldout_size,
        "checkpoint": path,
    }))
}

fn pretrain_wdr(c: PretrainWdr) -> Result<Value> {
    require(&c.annotations)?;
    require(&c.wordnet)?;
    let seed = c.common.seed;
    let mut model = match (&c.init, c.from_scratch) {
        (Some(p), false) => {
            require(p)?;
            checkpoint::load_hdr(p)?
        }
        (None, true) => {
            let corpus = c.corpus.as_ref().ok_or_else(|| {
                Error::Config("--from-scratch needs --corpus for the vocabulary".into())
            })?;
            require(corpus)?;
            let pairs = load_parallel_tsv(corpus)?;
            let wn = MiniWordNet::load(&c.wordnet)?;
            HdrModel::new(
                c.arch.config(),
                source_vocab(&pairs, Some(&wn), &[]),
                false,
                seed,
            )?
        }
        (Some(_), true) => {
            return Err(Error::Config(
                "--init and --from-scratch are exclusive".into(),
            ))
        }
        (None, false) => {
            return Err(Error::Config(
                "give --init <checkpoint> or --from-scratch".into(),
            ))
        }
    };
    let annotations = load_annotations(&c.annotations)?;
    let wn = MiniWordNet::load(&c.wordnet)?;
    let set = data::prepare_disambiguation_set(&annotations, &wn)?;
    let opts = WdrOptions {
        steps: c.steps,
        batch_size: c.batch_size,
        lr: c.lr,
        seed,
        dropout: true,
    };
    let report = wdr_train(&mut model, &set.pairs, &opts)?;
    let sample: Vec<Vec<String>> = set
        .pairs
        .iter()
        .take(32)
        .map(|p| p.original.clone())
        .collect();
    let collapse = collapse_diagnostic(&model.encoder, &model.store, &model.vocab, &sample)?;
    let dir = out_dir(&c.common)?.to_path_buf();
    let path = dir.join("wdr.ckpt");
    checkpoint::save_hdr(&model, seed, &path)?;
    fs::write(
        dir.join("wdr_losses.json"),
        serde_json::to_string(&report.losses).map_err(|e| Error::Data(e.to_string()))?,
    )
    .map_err(|e| Error::io(dir.join("wdr_losses.json"), e))?;
    Ok(json!({
        "command": "pretrain-wdr",
        "pairs": set.pairs.len(),
        "skipped_pairs": set.skipped,
        "empty_synsets": set.empty_synsets,
        "steps": report.losses.len(),
        "initial_distance": report.initial_distance,
        "final_distance": report.final_distance,
        "collapse_similarity": collapse,
        "checkpoint": path,
    }))
}

fn load_training_pairs(c: &Train) -> Result<Vec<SentencePair>> {
    match (&c.train, &c.src, &c.tgt) {
        (Some(t), None, None) => {
            require(t)?;
            load_parallel_tsv(t)
        }
        (None, Some(s), Some(t)) => {
            require(s)?;
            require(t)?;
            load_parallel(s, t)
        }
        _ => Err(Error::Config(
            "give either --train <tsv> or both --src and --tgt".into(),
        )),
    }
}

fn train(c: Train) -> Result<Value> {
    let seed = c.common.seed;
    let uses_hdr = c.fusion_scheme.uses_second_encoder()
        && c.second_encoder_source == SecondEncoderSource::HdrPretrained;
    if uses_hdr && c.hdr.is_none() {
        return Err(Error::Config(format!(
            "scheme {} with second encoder hdr_pretrained needs --hdr <checkpoint>",
            c.fusion_scheme
        )));
    }
    for p in c.hdr.iter().chain(&c.init_from).chain(&c.heldout) {
        require(p)?;
    }
    let pairs = load_training_pairs(&c)?;
    let (train_pairs, heldout) = match &c.heldout {
        Some(h) => (pairs, load_parallel_tsv(h)?),
        None => {
            let (tr, he) = crate::pretrain::split_indices(pairs.len(), 0.1, seed);
            (
                tr.iter().map(|&i| pairs[i].clone()).collect(),
                he.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>(),
            )
        }
    };
    if heldout.is_empty() {
        return Err(Error::Data("held-out set is empty".into()));
    }
    let hdr = match (&c.hdr, uses_hdr) {
        (Some(p), true) => Some(checkpoint::load_hdr(p)?),
        _ => None,
    };
    let warm = c
        .init_from
        .as_deref()
        .map(checkpoint::load_nmt)
        .transpose()?;
    let src_vocab = match (&hdr, &warm) {
        (_, Some(w)) => w.src_vocab.clone(),
        (Some(h), None) => h.vocab.clone(),
        (None, None) => source_vocab(&train_pairs, None, &[]),
    };
    let tgt_vocab = match &warm {
        Some(w) => w.tgt_vocab.clone(),
        None => target_vocab(&train_pairs),
    };
    if let Some(h) = &hdr {
        if h.vocab != src_vocab {
            return Err(Error::Config(
                "pre-trained encoder and warm-start model use different source vocabularies".into(),
            ));
        }
    }
    let mut cfg = c.arch.config();
    cfg.fusion_scheme = c.fusion_scheme;
    cfg.gate_mode = c.gate_mode;
    cfg.second_encoder_source = c.second_encoder_source;
    let mut model = NmtModel::new(cfg, src_vocab, tgt_vocab, seed)?;
    if let Some(w) = &warm {
        let n = model.store.load_matching(&w.store, "", "")?;
        if n == 0 {
            return Err(Error::Checkpoint(
                "warm-start checkpoint shares no parameters with this model".into(),
            ));
        }
    }
    if let Some(h) = &hdr {
        model.attach_hdr(&h.store, ENCODER_PREFIX)?;
    }
    let dir = out_dir(&c.common)?.to_path_buf();
    let mut log = MetricsLog::create(&dir.join("metrics.jsonl"))?;
    let opts = TrainOptions {
        max_steps: c.steps,
        max_epochs: c.epochs,
        max_tokens: c.max_tokens,
        peak_lr: c.lr,
        warmup_steps: c.warmup,
        label_smoothing: c.label_smoothing,
        patience: c.patience,
        bleu_sentences: c.bleu_sentences,
        seed,
    };
    let report = train_nmt(&mut model, &train_pairs, &heldout, &opts, |m| log.write(m))?;
    log.finish()?;
    let path = dir.join("model.ckpt");
    checkpoint::save_nmt(&model, seed, &path)?;
    let last = report.epochs.last().expect("initial record");
    Ok(json!({
        "command": "train",
        "fusion_scheme": c.fusion_scheme.to_string(),
        "gate_mode": c.gate_mode.to_string(),
        "second_encoder_source": c.second_encoder_source.to_string(),
        "steps": report.steps,
        "epochs": report.epochs.len() - 1,
        "best_epoch": report.best_epoch,
        "best_heldout_loss": report.best_heldout_loss,
        "initial_heldout_loss": report.epochs[0].heldout_loss,
        "last_heldout_bleu": last.heldout_bleu,
        "early_stopped": report.early_stopped,
        "filtered_pairs": report.filtered,
        "parameters": model.param_count(),
        "trainable_parameters": model.trainable_param_count(),
        "hdr_frozen_intact": hdr.as_ref().map(|h| model.hdr_matches(&h.store, ENCODER_PREFIX)),
        "checkpoint": path,
    }))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    require(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn translate(c: Translate) -> Result<Value> {
    require(&c.model)?;
    let lines = read_lines(&c.input)?;
    let model = checkpoint::load_nmt(&c.model)?;
    let out = model.translate(&lines, c.strategy)?;
    let dir = out_dir(&c.common)?.to_path_buf();
    let path = dir.join("translations.txt");
    let mut text = out.join("\n");
    if !out.is_empty() {
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(json!({
        "command": "translate",
        "sentences": out.len(),
        "output": path,
    }))
}

fn evaluate(c: Evaluate) -> Result<Value> {
    for p in [&c.model, &c.test]
        .into_iter()
        .chain(&c.annotations)
        .chain(&c.eval_list)
    {
        require(p)?;
    }
    let model = checkpoint::load_nmt(&c.model)?;
    let test = load_parallel_tsv(&c.test)?;
    let annotations = c.annotations.as_deref().map(load_annotations).transpose()?;
    let eval_list = c
        .eval_list
        .as_deref()
        .map(EvalHomographList::load)
        .transpose()?;
    let scores = score_translations(
        &model,
        &test,
        annotations.as_deref(),
        eval_list.as_ref(),
        c.strategy,
    )?;
    let _ = out_dir(&c.common)?;
    Ok(json!({
        "command": "evaluate",
        "sentences": scores.sentences,
        "bleu": scores.bleu.score,
        "bleu_report": scores.bleu,
        "homographs": scores.homographs,
    }))
}

fn inspect(c: Inspect) -> Result<Value> {
    require(&c.model)?;
    let ck = Checkpoint::load(&c.model)?;
    let kind = ck.manifest.kind;
    let summary = json!({
        "kind": kind,
        "format_version": ck.manifest.format_version,
        "seed": ck.manifest.seed,
        "tensors": ck.manifest.tensors.len(),
        "parameters": ck.store.num_scalars(),
        "frozen_parameters": ck.store.num_scalars() - ck.store.trainable_scalars(),
        "fusion_scheme": ck.manifest.config.fusion_scheme.to_string(),
        "d_model": ck.manifest.config.d_model,
    });
    let Some(lemma) = c.lemma.as_deref().map(str::to_lowercase) else {
        return Ok(json!({ "command": "inspect", "checkpoint": summary }));
    };
    let (sentences, synsets): (Vec<Vec<String>>, Vec<Option<String>>) =
        match (&c.annotations, &c.sentences) {
            (Some(a), _) => {
                require(a)?;
                annotated_occurrences(&load_annotations(a)?, &lemma)
            }
            (None, Some(s)) => {
                let sents: Vec<Vec<String>> = read_lines(s)?.iter().map(|l| tokenize(l)).collect();
                let n = sents.len();
                (sents, vec![None; n])
            }
            (None, None) => {
                return Err(Error::Config(
                    "--lemma needs --annotations or --sentences".into(),
                ))
            }
        };
    let (encoder, store, vocab) = match kind {
        ModelKind::Hdr => {
            let m = ck.into_hdr()?;
            (m.encoder, m.store, m.vocab)
        }
        ModelKind::Nmt => {
            let m = ck.into_nmt()?;
            let enc = match (&m.second, c.nmt_encoder) {
                (Some(s), false) if s.prefix == HDR_PREFIX => s.clone(),
                _ => m.encoder.clone(),
            };
            (enc, m.store, m.src_vocab)
        }
    };
    let heatmap = similarity_heatmap(&encoder, &store, &vocab, &sentences, &lemma)?;
    let vectors = export_token_vectors(
        &encoder,
        &store,
        &vocab,
        &sentences,
        Some(&synsets),
        &lemma,
        c.project,
    )?;
    let dir = out_dir(&c.common)?.to_path_buf();
    heatmap.write_tsv(&dir.join("heatmap.tsv"))?;
    let mut lines = String::new();
    for (k, r) in vectors.records.iter().enumerate() {
        let mut v = serde_json::to_value(r).map_err(|e| Error::Data(e.to_string()))?;
        if let Some(p) = &vectors.projection {
            v["projection"] = json!(p[k]);
        }
        lines.push_str(&v.to_string());
        lines.push('\n');
    }
    fs::write(dir.join("vectors.jsonl"), lines)
        .map_err(|e| Error::io(dir.join("vectors.jsonl"), e))?;
    Ok(json!({
        "command": "inspect",
        "checkpoint": summary,
        "lemma": lemma,
        "occurrences": sentences.len(),
        "heatmap": dir.join("heatmap.tsv"),
        "vectors": dir.join("vectors.jsonl"),
    }))
}

/// Sentences with a mark on `lemma`, labelled with the mark's synset.
fn annotated_occurrences(
    annotations: &[HomographAnnotation],
    lemma: &str,
) -> (Vec<Vec<String>>, Vec<Option<String>>) {
    annotations
        .iter()
        .filter_map(|a| {
            let m = a
                .marks
                .iter()
                .find(|m| a.sentence[m.index].to_lowercase() == lemma)?;
            // Heatmap rows use the first occurrence of the lemma.
            (data::locate_homograph_index(&a.sentence, &[lemma]) == Some(m.index))
                .then(|| (a.sentence.clone(), Some(m.synset_id.clone())))
        })
        .unzip()
}

/// Append-only JSON-lines writer for per-epoch records.
struct MetricsLog {
    file: fs::File,
    path: PathBuf,
    error: Option<std::io::Error>,
}

impl MetricsLog {
    fn create(path: &Path) -> Result<Self> {
        Ok(MetricsLog {
            file: fs::File::create(path).map_err(|e| Error::io(path, e))?,
            path: path.to_path_buf(),
            error: None,
        })
    }

    fn write<T: serde::Serialize>(&mut self, record: &T) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(record).expect("serializable record");
        if let Err(e) = writeln!(self.file, "{line}") {
            self.error = Some(e);
        }
    }

    fn finish(self) -> Result<()> {
        match self.error {
            Some(e) => Err(Error::io(self.path, e)),
            None => Ok(()),
        }
    }
}
