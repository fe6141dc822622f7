//! Command-line front end. [`run`] parses arguments, merges them over the
//! optional config file and dispatches to one subcommand.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{bench_decode, BenchConfig};
use crate::config::RunConfig;
use crate::layout::{build_nxtp_mask, SegmentLayout};
use crate::metric::{curve_csv, pr_curve_threshold, pr_curve_topk, sample_matrices, evaluate, DEFAULT_THRESHOLDS};
use crate::model::io::EmbeddingSet;
use crate::model::Model;
use crate::preprocess::{build_dataset, NounLexicon};
use crate::records::{read_jsonl, write_atomic, write_jsonl, PredictionRecord, ReferenceLabelSet};
use crate::sampling::{predict_records, RankBy, Strategy};
use crate::tokenizer::{build_vocab, Vocab};
use crate::train::{gen_synthetic, tokenize_dataset, train};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "nextlabel", version, about = "Train, decode and evaluate an image label decoder")]
struct Cli {
    /// Seed for every random choice
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// File of `section.key=value` settings; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (1 keeps timing and decoding serial)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn captions into noun label sets
    Preprocess(PreprocessArgs),
    /// Write a synthetic train/held-out dataset
    Synth(SynthArgs),
    /// Train a decoder and its vocabulary
    Train(TrainArgs),
    /// Keep only the first blocks of a model
    Truncate(TruncateArgs),
    /// Generate ranked labels for every image
    Predict(PredictArgs),
    /// Score predictions against references
    Eval(EvalArgs),
    /// Write a precision/recall curve as CSV
    Curves(CurvesArgs),
    /// Time decoding configurations
    Bench(BenchArgs),
    /// Print an attention mask as rows of `0` and `-`
    Mask(MaskArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    captions: PathBuf,
    /// One noun per line; the bundled list when omitted
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Receives train.emb, train.labels.jsonl, heldout.emb, heldout.labels.jsonl
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_heldout: Option<usize>,
    #[arg(long)]
    d_image: Option<usize>,
    #[arg(long)]
    n_img: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Reference label sets keyed by image id
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Existing vocabulary; built from the references when omitted
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Where to save the vocabulary (default: the model path with `.vocab`)
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    /// Loss log as `step,lr,loss`
    #[arg(long)]
    log: Option<PathBuf>,
    /// Prompt templates, one per line
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    n_blocks: Option<usize>,
    #[arg(long)]
    max_merges: Option<usize>,
}

#[derive(Args, Debug)]
struct TruncateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    keep_blocks: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SamplerArgs {
    #[arg(long)]
    sampler: Option<Strategy>,
    /// Number of labels to keep per image
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    rank: Option<RankBy>,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    max_label_tokens: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Repetition penalty temperature
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args, Debug)]
struct MetricArgs {
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    embedder: Option<crate::metric::EmbedderKind>,
    #[arg(long)]
    topk: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    metric: MetricArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CurveKind {
    Threshold,
    Topk,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[command(flatten)]
    metric: MetricArgs,
    #[arg(long, value_enum, default_value = "threshold")]
    kind: CurveKind,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Blocks kept by the truncated configurations (default: a quarter)
    #[arg(long)]
    keep_blocks: Option<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Time only the first N images
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    prompt: Option<String>,
    /// CSV of `config,median_ms,ratio`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MaskArgs {
    /// `img=<n>:prompt=<p>:labels=<l1>,<l2>,...`
    #[arg(long)]
    layout: String,
}

/// Parse `argv` (program name first) and run it. Returns the exit code:
/// 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require_file(p)?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if cfg.threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    cfg.sampler.threads = cfg.threads;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Preprocess(a) => preprocess(a, cfg),
        Command::Synth(a) => synth(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Truncate(a) => truncate(a),
        Command::Predict(a) => predict(a, cfg),
        Command::Eval(a) => eval(a, cfg),
        Command::Curves(a) => curves(a, cfg),
        Command::Bench(a) => bench(a, cfg),
        Command::Mask(a) => mask(a),
    })
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
        ))
    }
}

fn require_out_dir(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => return Ok(()),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            parent,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory not found"),
        ))
    }
}

/// A zero-byte file reads as an empty set.
fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Ok(EmbeddingSet::new(0, 0));
    }
    EmbeddingSet::from_bytes(&bytes)
}

fn preprocess(a: PreprocessArgs, cfg: RunConfig) -> Result<()> {
    let lexicon_path = a.lexicon.or(cfg.lexicon);
    require_file(&a.captions)?;
    if let Some(p) = &lexicon_path {
        require_file(p)?;
    }
    require_out_dir(&a.out)?;
    let lexicon = match &lexicon_path {
        Some(p) => NounLexicon::load(p)?,
        None => NounLexicon::shipped(),
    };
    let summary = build_dataset(&a.captions, &lexicon, &a.out)?;
    println!("{summary}");
    Ok(())
}

fn synth(a: SynthArgs, mut cfg: RunConfig) -> Result<()> {
    if !a.out_dir.is_dir() {
        fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    }
    let s = &mut cfg.synth;
    s.n_train = a.n_train.unwrap_or(s.n_train);
    s.n_heldout = a.n_heldout.unwrap_or(s.n_heldout);
    s.d_image = a.d_image.unwrap_or(s.d_image);
    s.n_img = a.n_img.unwrap_or(s.n_img);
    s.sigma = a.sigma.unwrap_or(s.sigma);
    s.k_min = a.k_min.unwrap_or(s.k_min);
    s.k_max = a.k_max.unwrap_or(s.k_max);
    s.seed = cfg.seed;
    let data = gen_synthetic(s)?;
    for (name, split) in [("train", &data.train), ("heldout", &data.heldout)] {
        split.embeddings.save(&a.out_dir.join(format!("{name}.emb")))?;
        write_jsonl(&a.out_dir.join(format!("{name}.labels.jsonl")), &split.references)?;
        println!("{name}: {} images", split.references.len());
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, mut cfg: RunConfig) -> Result<()> {
    require_file(&a.embeddings)?;
    require_file(&a.refs)?;
    let prompts_path = a.prompts.or(cfg.prompts_file.clone());
    for p in a.vocab.iter().chain(&prompts_path) {
        require_file(p)?;
    }
    let vocab_out = a.vocab_out.unwrap_or_else(|| a.out.with_extension("vocab"));
    for p in [Some(&a.out), Some(&vocab_out), a.log.as_ref()].into_iter().flatten() {
        require_out_dir(p)?;
    }

    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.warmup_iters = a.warmup.unwrap_or(t.warmup_iters);
    t.seed = cfg.seed;
    if let Some(p) = &prompts_path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        t.prompts = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_lowercase).collect();
    }
    t.validate()?;
    let m = &mut cfg.model;
    m.d_model = a.d_model.unwrap_or(m.d_model);
    m.n_heads = a.n_heads.unwrap_or(m.n_heads);
    m.n_blocks = a.n_blocks.unwrap_or(m.n_blocks);
    let max_merges = a.max_merges.unwrap_or(cfg.max_merges);

    let embeddings = load_embeddings(&a.embeddings)?;
    let refs: Vec<ReferenceLabelSet> = read_jsonl(&a.refs)?;
    let vocab = match &a.vocab {
        Some(p) => Vocab::load(p)?,
        None => {
            let mut corpus: Vec<String> = refs.iter().map(|r| r.labels.join(",")).collect();
            for p in &cfg.train.prompts {
                corpus.extend(std::iter::repeat_n(p.clone(), 100));
            }
            build_vocab(&corpus, max_merges)?
        }
    };
    cfg.model.vocab_size = vocab.len();
    cfg.model.d_image = embeddings.d_image;
    cfg.model.validate()?;
    let mut model = Model::<f32>::init(&cfg.model, cfg.seed)?;
    let (samples, skipped) = tokenize_dataset(&embeddings, &refs, &vocab)?;
    println!(
        "{} samples ({skipped} skipped), vocab {} tokens, {} parameters",
        samples.len(),
        vocab.len(),
        model.param_count()
    );
    let report = train(&mut model, &samples, &vocab, &cfg.train, |e, loss| {
        println!("epoch {e} loss {loss:.5}");
    })?;
    model.save(&a.out)?;
    vocab.save(&vocab_out)?;
    if let Some(p) = &a.log {
        write_atomic(p, report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn truncate(a: TruncateArgs) -> Result<()> {
    require_file(&a.model)?;
    require_out_dir(&a.out)?;
    let model = Model::<f32>::load(&a.model)?;
    let small = model.truncate(a.keep_blocks)?;
    small.save(&a.out)?;
    println!("kept {} of {} blocks", a.keep_blocks, model.config.n_blocks);
    Ok(())
}

fn apply_sampler(a: &SamplerArgs, cfg: &mut RunConfig) {
    let s = &mut cfg.sampler;
    s.strategy = a.sampler.unwrap_or(s.strategy);
    s.k = a.topk.unwrap_or(s.k);
    if a.rank.is_some() {
        s.rank_by = a.rank;
    }
    s.max_tokens = a.max_tokens.unwrap_or(s.max_tokens);
    s.max_label_tokens = a.max_label_tokens.unwrap_or(s.max_label_tokens);
    s.beam_width = a.beam_width.unwrap_or(s.beam_width);
    s.penalty_tau = a.tau.unwrap_or(s.penalty_tau);
}

fn load_pair(model: &Path, vocab: &Path) -> Result<(Model<f32>, Vocab)> {
    let model = Model::<f32>::load(model)?;
    let vocab = Vocab::load(vocab)?;
    if model.config.vocab_size != vocab.len() {
        return Err(Error::ConfigMismatch(format!(
            "model expects {} tokens, vocabulary has {}",
            model.config.vocab_size,
            vocab.len()
        )));
    }
    Ok((model, vocab))
}

fn predict(a: PredictArgs, mut cfg: RunConfig) -> Result<()> {
    for p in [&a.model, &a.vocab, &a.embeddings] {
        require_file(p)?;
    }
    require_out_dir(&a.out)?;
    apply_sampler(&a.sampler, &mut cfg);
    cfg.sampler.validate()?;
    let embeddings = load_embeddings(&a.embeddings)?;
    if embeddings.is_empty() {
        write_jsonl::<PredictionRecord>(&a.out, &[])?;
        println!("0 images");
        return Ok(());
    }
    let (model, vocab) = load_pair(&a.model, &a.vocab)?;
    let prompt_text = a.sampler.prompt.as_deref().unwrap_or(crate::INFERENCE_PROMPT).to_lowercase();
    let prompt = vocab.encode_prompt(&prompt_text)?;
    let preds = predict_records(&model, &vocab, &embeddings, &prompt, &cfg.sampler)?;
    write_jsonl(&a.out, &preds)?;
    println!("{} images, sampler {}", preds.len(), cfg.sampler.strategy);
    Ok(())
}

fn load_metric_inputs(a: &MetricArgs, cfg: &mut RunConfig) -> Result<(Vec<ReferenceLabelSet>, Vec<PredictionRecord>)> {
    require_file(&a.refs)?;
    require_file(&a.preds)?;
    require_out_dir(&a.out)?;
    cfg.metric.embedder = a.embedder.unwrap_or(cfg.metric.embedder);
    cfg.metric.top_k = a.topk.unwrap_or(cfg.metric.top_k);
    if cfg.metric.top_k == 0 {
        return Err(Error::Config("topk must be at least 1".into()));
    }
    Ok((read_jsonl(&a.refs)?, read_jsonl(&a.preds)?))
}

fn eval(a: EvalArgs, mut cfg: RunConfig) -> Result<()> {
    let (refs, preds) = load_metric_inputs(&a.metric, &mut cfg)?;
    let embedder = cfg.metric.embedder.build();
    let report = evaluate(&refs, &preds, embedder.as_ref(), cfg.metric.top_k)?;
    write_atomic(&a.metric.out, report.to_json().as_bytes())?;
    println!("{report}");
    Ok(())
}

fn curves(a: CurvesArgs, mut cfg: RunConfig) -> Result<()> {
    let (refs, preds) = load_metric_inputs(&a.metric, &mut cfg)?;
    let embedder = cfg.metric.embedder.build();
    let (mats, _) = sample_matrices(&refs, &preds, embedder.as_ref())?;
    let mats: Vec<_> = mats.into_iter().map(|(_, s)| s).collect();
    let points = match a.kind {
        CurveKind::Threshold => pr_curve_threshold(&mats, &DEFAULT_THRESHOLDS, cfg.metric.top_k),
        CurveKind::Topk => pr_curve_topk(&mats, &(1..=cfg.metric.top_k).collect::<Vec<_>>()),
    };
    let csv = curve_csv(&points);
    write_atomic(&a.metric.out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn bench(a: BenchArgs, cfg: RunConfig) -> Result<()> {
    for p in [&a.model, &a.vocab, &a.embeddings] {
        require_file(p)?;
    }
    if let Some(p) = &a.out {
        require_out_dir(p)?;
    }
    let (full, vocab) = load_pair(&a.model, &a.vocab)?;
    let keep = a.keep_blocks.unwrap_or((full.config.n_blocks / 4).max(1));
    let small = full.truncate(keep)?;
    let mut embeddings = load_embeddings(&a.embeddings)?;
    if let Some(n) = a.images {
        embeddings.records.truncate(n);
    }
    let prompt_text = a.prompt.as_deref().unwrap_or(crate::INFERENCE_PROMPT).to_lowercase();
    let prompt = vocab.encode_prompt(&prompt_text)?;
    let serial = crate::sampling::SamplerConfig {
        k: a.topk.unwrap_or(cfg.sampler.k),
        threads: 1,
        ..cfg.sampler.clone()
    };
    let with = |strategy| crate::sampling::SamplerConfig {
        strategy,
        ..serial.clone()
    };
    let mut configs = vec![
        BenchConfig {
            name: "full-greedy".into(),
            model: &full,
            sampler: with(Strategy::Greedy),
        },
        BenchConfig {
            name: "full-one-shot".into(),
            model: &full,
            sampler: with(Strategy::OneShot),
        },
        BenchConfig {
            name: format!("trunc{keep}-greedy"),
            model: &small,
            sampler: with(Strategy::Greedy),
        },
        BenchConfig {
            name: format!("trunc{keep}-one-shot"),
            model: &small,
            sampler: with(Strategy::OneShot),
        },
    ];
    if cfg.threads > 1 {
        configs.push(BenchConfig {
            name: format!("trunc{keep}-one-shot-t{}", cfg.threads),
            model: &small,
            sampler: crate::sampling::SamplerConfig {
                threads: cfg.threads,
                ..with(Strategy::OneShot)
            },
        });
    }
    let report = bench_decode(&configs, &vocab, &embeddings, &prompt, a.repeats)?;
    print!("{report}");
    let trunc_only = report.speedup("full-greedy", &format!("trunc{keep}-greedy"));
    let composite = report.speedup("full-greedy", &format!("trunc{keep}-one-shot"));
    if let (Some(t), Some(c)) = (trunc_only, composite) {
        println!("truncation only: {t:.2}x, truncation + one-shot: {c:.2}x (large-model reference: 4.5x and 18.1x)");
    }
    if let Some(p) = &a.out {
        write_atomic(p, report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn mask(a: MaskArgs) -> Result<()> {
    let layout: SegmentLayout = a.layout.parse()?;
    print!("{}", build_nxtp_mask(&layout));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_for_every_subcommand() {
        for sub in ["preprocess", "synth", "train", "truncate", "predict", "eval", "curves", "bench", "mask"] {
            assert_eq!(run(["nextlabel", sub, "--help"]), 0, "{sub}");
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["nextlabel"]), 1);
        assert_eq!(run(["nextlabel", "predict", "--bogus"]), 1);
        assert_eq!(run(["nextlabel", "predict", "--sampler", "nucleus"]), 1);
    }

    #[test]
    fn missing_input_is_data_error() {
        let code = run(["nextlabel", "truncate", "--model", "/nonexistent/m.bin", "--keep-blocks", "1", "--out", "/tmp/x.bin"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn bad_config_key_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        fs::write(&p, "model.depth=3\n").unwrap();
        let code = run(["nextlabel", "--config", p.to_str().unwrap(), "mask", "--layout", "img=1:prompt=0:labels="]);
        assert_eq!(code, 1);
    }

    #[test]
    fn mask_layout_parses() {
        assert_eq!(run(["nextlabel", "mask", "--layout", "img=2:prompt=1:labels=2,1"]), 0);
        assert_eq!(run(["nextlabel", "mask", "--layout", "img=x"]), 2);
    }
}
