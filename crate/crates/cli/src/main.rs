//! `g2t` — command-line front end for the graph-to-text pipeline:
//! preprocessing, training, generation, evaluation, gradient checking,
//! reward inspection, and trigger-lexicon bootstrapping.
//!
//! Every artifact is fully built in memory and written in one shot after
//! all computation has succeeded, so a failing run leaves no partial
//! output files behind. Runs are reproducible byte for byte from the same
//! inputs, configuration, and seed (wall-clock fields excepted).

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use g2t_core::checkpoint;
use g2t_core::config::Config;
use g2t_core::decoder::greedy_decode;
use g2t_core::embeddings::{apply_word_vectors, parse_word_vectors};
use g2t_core::eval::evaluate_split;
use g2t_core::model::{prepare_example, ModelParams};
use g2t_core::reward::{bootstrap_lexicon, Extractor, ExternalExtractor, Lexicon};
use g2t_core::training::{hybrid_loss_gradcheck, strip_special, train};
use g2t_core::triple::{
    mask_entities, parse_dataset, parse_masked_dataset, tokenize, unmask_text,
    write_masked_dataset, Example, MaskedExample, Triple, TypeDict, Vocab,
};

#[derive(Parser)]
#[command(
    name = "g2t",
    version,
    about = "Graph-to-text pipeline: dual graph encoders, gated dual attention, hybrid RL training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration source flags shared by the subcommands.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Configuration file with `key = value` lines
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a single configuration key (repeatable), e.g. --set lr=0.01
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the file, then the overrides — later wins.
    fn load(&self) -> Result<Config> {
        let mut config = Config::default();
        if let Some(path) = &self.config {
            let file = fs::File::open(path)
                .with_context(|| format!("opening config file {}", path.display()))?;
            config
                .apply_file(BufReader::new(file))
                .with_context(|| format!("reading config file {}", path.display()))?;
        }
        config.apply_overrides(&self.set)?;
        config.validate()?;
        Ok(config)
    }
}

/// Extractor selection shared by `train` and `reward`: a trigger-lexicon
/// file, an external command, or (by default) a lexicon bootstrapped from
/// the dataset itself.
#[derive(Args, Clone, Default)]
struct ExtractorArgs {
    /// Trigger lexicon file (relation<TAB>so|os<TAB>trigger)
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// External extractor command line (one text per stdin line, one JSON
    /// triple array per stdout line)
    #[arg(long, value_name = "CMD", conflicts_with = "lexicon")]
    extractor: Option<String>,
}

impl ExtractorArgs {
    fn build(&self, examples: &[Example], bootstrap_k: usize) -> Result<Extractor> {
        if let Some(path) = &self.lexicon {
            let file = fs::File::open(path)
                .with_context(|| format!("opening lexicon {}", path.display()))?;
            return Ok(Extractor::Builtin(Lexicon::parse(BufReader::new(file))?));
        }
        if let Some(cmd) = &self.extractor {
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            return Ok(Extractor::External(ExternalExtractor::new(argv)?));
        }
        Ok(Extractor::Builtin(bootstrap_lexicon(examples, bootstrap_k)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Mask entities, build the vocabulary, and optionally dump the graphs
    Preprocess {
        /// Input dataset (JSON lines: triples + references)
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Entity-type dictionary (surface<TAB>type); optional
        #[arg(long, value_name = "FILE")]
        types: Option<PathBuf>,
        /// Output masked dataset
        #[arg(long, value_name = "FILE")]
        out_data: PathBuf,
        /// Output vocabulary file
        #[arg(long, value_name = "FILE")]
        out_vocab: PathBuf,
        /// Also write a plain-text dump of both graphs per example
        #[arg(long, value_name = "FILE")]
        dump_graphs: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the model and write a checkpoint plus a JSONL report
    Train {
        /// Preprocessed training set
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Optional preprocessed validation set (best-BLEU checkpointing)
        #[arg(long, value_name = "FILE")]
        valid: Option<PathBuf>,
        /// Vocabulary file from `preprocess`
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        /// Optional text-format word vectors to initialize embeddings
        #[arg(long, value_name = "FILE")]
        embeddings: Option<PathBuf>,
        /// Output checkpoint
        #[arg(long, value_name = "FILE")]
        out_checkpoint: PathBuf,
        /// Output training report (one JSON record per epoch)
        #[arg(long, value_name = "FILE")]
        out_report: PathBuf,
        #[command(flatten)]
        extractor: ExtractorArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Greedy-decode a dataset and write one text per line
    Generate {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        /// Preprocessed dataset to decode (entity maps are used to unmask)
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Output file, line-aligned with the input
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a generated file against a dataset (BLEU, TER, size buckets)
    Evaluate {
        /// Dataset with references (unmasked)
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Generated texts, one per line, aligned with the dataset
        #[arg(long, value_name = "FILE")]
        generated: PathBuf,
        /// Optional structured report output (JSON)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference check of every autodiff primitive and the
    /// composed hybrid loss
    Gradcheck,
    /// Extract triples from texts and report per-example rewards
    Reward {
        /// Dataset providing the gold triples (and default texts)
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Texts to score, one per line; defaults to each example's first
        /// reference
        #[arg(long, value_name = "FILE")]
        text: Option<PathBuf>,
        /// Optional JSONL report output
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        extractor: ExtractorArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Learn a trigger lexicon from a dataset's references
    LexiconBootstrap {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Output lexicon file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Like `println!`, but exits quietly when the downstream pipe has closed
/// (`g2t evaluate | head`) instead of panicking on the failed write. The
/// process-wide SIGPIPE disposition stays ignored so that a child process
/// closing its stdin (an external extractor that exits early) surfaces as
/// an I/O error rather than killing us.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("g2t: {err:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess { data, types, out_data, out_vocab, dump_graphs, cfg } => {
            preprocess(&data, types.as_deref(), &out_data, &out_vocab, dump_graphs.as_deref(), &cfg)
        }
        Command::Train {
            data,
            valid,
            vocab,
            embeddings,
            out_checkpoint,
            out_report,
            extractor,
            cfg,
        } => train_cmd(
            &data,
            valid.as_deref(),
            &vocab,
            embeddings.as_deref(),
            &out_checkpoint,
            &out_report,
            &extractor,
            &cfg,
        ),
        Command::Generate { checkpoint, vocab, data, out, cfg } => {
            generate(&checkpoint, &vocab, &data, &out, &cfg)
        }
        Command::Evaluate { data, generated, out, cfg } => {
            evaluate(&data, &generated, out.as_deref(), &cfg)
        }
        Command::Gradcheck => gradcheck(),
        Command::Reward { data, text, out, extractor, cfg } => {
            reward_cmd(&data, text.as_deref(), out.as_deref(), &extractor, &cfg)
        }
        Command::LexiconBootstrap { data, out, cfg } => lexicon_bootstrap(&data, &out, &cfg),
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(
        fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_examples(path: &Path) -> Result<Vec<Example>> {
    Ok(parse_dataset(open(path)?).with_context(|| format!("parsing {}", path.display()))?)
}

fn read_masked(path: &Path) -> Result<Vec<MaskedExample>> {
    Ok(parse_masked_dataset(open(path)?).with_context(|| format!("parsing {}", path.display()))?)
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    Ok(Vocab::load(open(path)?).with_context(|| format!("loading vocabulary {}", path.display()))?)
}

/// Writes every artifact only after all contents exist, one whole-buffer
/// write per file.
fn write_artifacts(artifacts: &[(&Path, Vec<u8>)]) -> Result<()> {
    for (path, content) in artifacts {
        fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
        out!("wrote {}", path.display());
    }
    Ok(())
}

fn preprocess(
    data: &Path,
    types: Option<&Path>,
    out_data: &Path,
    out_vocab: &Path,
    dump_graphs: Option<&Path>,
    cfg: &ConfigArgs,
) -> Result<()> {
    let config = cfg.load()?;
    out!("config: {}", config.echo());
    let examples = read_examples(data)?;
    let type_dict = match types {
        Some(path) => TypeDict::parse(open(path)?)
            .with_context(|| format!("parsing type dictionary {}", path.display()))?,
        None => TypeDict::default(),
    };

    let masked: Vec<MaskedExample> = if config.mask {
        examples.iter().map(|ex| mask_entities(ex, &type_dict)).collect()
    } else {
        examples
            .iter()
            .map(|ex| MaskedExample { example: ex.clone(), entity_map: BTreeMap::new() })
            .collect()
    };

    let working: Vec<Example> = masked.iter().map(|m| m.example.clone()).collect();
    let vocab = Vocab::build(&working, config.min_freq);

    let mut data_buf = Vec::new();
    write_masked_dataset(&mut data_buf, &masked)?;
    let mut vocab_buf = Vec::new();
    vocab.save(&mut vocab_buf)?;

    let mut artifacts: Vec<(&Path, Vec<u8>)> =
        vec![(out_data, data_buf), (out_vocab, vocab_buf)];

    let dump_buf;
    if let Some(dump_path) = dump_graphs {
        let mut dump = String::new();
        for (i, m) in masked.iter().enumerate() {
            let entity = g2t_core::graph::build_entity_graph(&m.example.triples)?;
            let paths = g2t_core::graph::compute_meta_paths(&entity);
            let levi = g2t_core::graph::build_levi_graph(&m.example.triples)?;
            dump.push_str(&format!("# example {i}\n"));
            dump.push_str("## entity graph\n");
            dump.push_str(&entity.dump());
            dump.push_str("## meta paths\n");
            for p in &paths.paths {
                dump.push_str(&p.join(" "));
                dump.push('\n');
            }
            dump.push_str("## levi graph\n");
            dump.push_str(&levi.dump());
        }
        dump_buf = dump.into_bytes();
        artifacts.push((dump_path, dump_buf));
    }

    write_artifacts(&artifacts)?;
    out!(
        "preprocessed {} examples, vocabulary size {} (masking {})",
        masked.len(),
        vocab.len(),
        if config.mask { "on" } else { "off" }
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    data: &Path,
    valid: Option<&Path>,
    vocab_path: &Path,
    embeddings: Option<&Path>,
    out_checkpoint: &Path,
    out_report: &Path,
    extractor_args: &ExtractorArgs,
    cfg: &ConfigArgs,
) -> Result<()> {
    let config = cfg.load()?;
    out!("config: {}", config.echo());
    let vocab = read_vocab(vocab_path)?;
    let train_masked = read_masked(data)?;
    let train_set: Vec<Example> = train_masked.into_iter().map(|m| m.example).collect();
    let valid_set: Vec<Example> = match valid {
        Some(path) => read_masked(path)?.into_iter().map(|m| m.example).collect(),
        None => Vec::new(),
    };
    let extractor = extractor_args.build(&train_set, config.bootstrap_k)?;

    let outcome = if let Some(vec_path) = embeddings {
        // Word vectors overwrite matching rows after seeding, so the run
        // is still driven entirely by config + inputs.
        let vectors = parse_word_vectors(open(vec_path)?, config.embed_dim)
            .with_context(|| format!("parsing word vectors {}", vec_path.display()))?;
        let mut warm = g2t_core::model::ModelParams::init(
            g2t_core::model::ModelDims::new(
                vocab.len(),
                config.embed_dim,
                config.hidden,
                config.gcn_layers,
            )?,
            &mut g2t_core::rng::Pcg32::seed(config.seed),
        );
        let replaced = apply_word_vectors(&mut warm, &vocab, &vectors)?;
        out!("initialized {replaced} embedding rows from {}", vec_path.display());
        train_with_initial(&config, &vocab, &train_set, &valid_set, &extractor, warm)?
    } else {
        train(&config, &vocab, &train_set, &valid_set, &extractor)?
    };

    let mut report_buf = String::new();
    report_buf.push_str(&format!(
        "{}\n",
        serde_json::json!({ "config": config.echo() })
    ));
    for r in &outcome.reports {
        report_buf.push_str(&serde_json::to_string(r)?);
        report_buf.push('\n');
    }

    let mut ckpt_buf = Vec::new();
    checkpoint::save(&mut ckpt_buf, &outcome.params, Some(&outcome.adam), &[config.echo()])?;

    write_artifacts(&[(out_checkpoint, ckpt_buf), (out_report, report_buf.into_bytes())])?;
    if let Some(v) = outcome.best_val_bleu {
        out!("best validation BLEU {v:.4}");
    }
    out!("trained {} epochs", outcome.reports.len());
    Ok(())
}

/// `train` with pre-built initial parameters (used for warm-started
/// embeddings). Mirrors `training::train`, which owns initialization.
fn train_with_initial(
    config: &Config,
    vocab: &Vocab,
    train_set: &[Example],
    valid_set: &[Example],
    extractor: &Extractor,
    initial: ModelParams,
) -> Result<g2t_core::training::TrainOutcome> {
    Ok(g2t_core::training::train_from(
        config, vocab, train_set, valid_set, extractor, initial,
    )?)
}

fn generate(
    checkpoint_path: &Path,
    vocab_path: &Path,
    data: &Path,
    out: &Path,
    cfg: &ConfigArgs,
) -> Result<()> {
    let config = cfg.load()?;
    out!("config: {}", config.echo());
    let vocab = read_vocab(vocab_path)?;
    let (params, _adam) = checkpoint::load(open(checkpoint_path)?)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    if params.dims.vocab != vocab.len() {
        bail!(
            "checkpoint vocabulary size {} does not match vocabulary file ({} entries)",
            params.dims.vocab,
            vocab.len()
        );
    }
    let masked = read_masked(data)?;

    let mut lines = String::new();
    for m in &masked {
        let prep = prepare_example(&m.example, &vocab)?;
        let decoded = greedy_decode(&params, &prep, config.max_len)?;
        let tokens = strip_special(&vocab, &decoded.tokens)?;
        let (unmasked, warnings) = unmask_text(&tokens, &m.entity_map);
        for w in warnings {
            eprintln!("g2t: warning: {w}");
        }
        lines.push_str(&unmasked.join(" "));
        lines.push('\n');
    }

    write_artifacts(&[(out, lines.into_bytes())])?;
    out!("generated {} texts", masked.len());
    Ok(())
}

fn evaluate(data: &Path, generated: &Path, out: Option<&Path>, cfg: &ConfigArgs) -> Result<()> {
    let config = cfg.load()?;
    let examples = read_examples(data)?;
    let text = fs::read_to_string(generated)
        .with_context(|| format!("reading {}", generated.display()))?;
    let candidates: Vec<Vec<String>> = text.lines().map(tokenize).collect();
    if candidates.len() != examples.len() {
        bail!(
            "{} generated lines but {} dataset examples",
            candidates.len(),
            examples.len()
        );
    }
    let mut report = evaluate_split(&examples, &candidates)?;
    report.config = Some(config.echo());
    let table = report.render_table();
    out!("{table}");
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report)?;
        write_artifacts(&[(path, json.into_bytes())])?;
    }
    Ok(())
}

fn gradcheck() -> Result<()> {
    let rows = g2t_core::autodiff::primitive_gradcheck(7)?;
    let mut all_passed = true;
    out!("{:<24} {:>14}  {}", "primitive", "max rel err", "status");
    for row in &rows {
        all_passed &= row.passed;
        out!(
            "{:<24} {:>14.3e}  {}",
            row.name,
            row.max_rel_err,
            if row.passed { "PASS" } else { "FAIL" }
        );
    }
    let composed = hybrid_loss_gradcheck()?;
    let composed_pass = composed < g2t_core::autodiff::GRAD_TOLERANCE;
    all_passed &= composed_pass;
    out!(
        "{:<24} {:>14.3e}  {}",
        "composed hybrid loss",
        composed,
        if composed_pass { "PASS" } else { "FAIL" }
    );
    if !all_passed {
        bail!("gradient check failed");
    }
    Ok(())
}

fn reward_cmd(
    data: &Path,
    text: Option<&Path>,
    out: Option<&Path>,
    extractor_args: &ExtractorArgs,
    cfg: &ConfigArgs,
) -> Result<()> {
    let config = cfg.load()?;
    let examples = read_examples(data)?;
    let extractor = extractor_args.build(&examples, config.bootstrap_k)?;

    let texts: Vec<Vec<String>> = match text {
        Some(path) => {
            let body = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let lines: Vec<Vec<String>> = body.lines().map(tokenize).collect();
            if lines.len() != examples.len() {
                bail!("{} text lines but {} dataset examples", lines.len(), examples.len());
            }
            lines
        }
        None => examples.iter().map(|ex| ex.references[0].clone()).collect(),
    };
    let gold: Vec<&[Triple]> = examples.iter().map(|ex| ex.triples.as_slice()).collect();
    let extracted = extractor.extractions(&texts, &gold)?;
    let rewards = extractor.rewards(&texts, &gold)?;

    let mut report = String::new();
    for (i, (ext, reward)) in extracted.iter().zip(&rewards).enumerate() {
        let triples: Vec<[String; 3]> = ext
            .iter()
            .map(|t| [t.subject.join(" "), t.relation.join(" "), t.object.join(" ")])
            .collect();
        let line = serde_json::json!({
            "index": i,
            "text": texts[i].join(" "),
            "extracted": triples,
            "reward": reward,
        });
        report.push_str(&line.to_string());
        report.push('\n');
        out!("example {i}: reward {reward}");
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
    out!("mean reward {mean} over {} examples", rewards.len());
    if let Some(path) = out {
        write_artifacts(&[(path, report.into_bytes())])?;
    }
    Ok(())
}

fn lexicon_bootstrap(data: &Path, out: &Path, cfg: &ConfigArgs) -> Result<()> {
    let config = cfg.load()?;
    let examples = read_examples(data)?;
    let lexicon = bootstrap_lexicon(&examples, config.bootstrap_k);
    let mut buf = Vec::new();
    lexicon.save(&mut buf)?;
    write_artifacts(&[(out, buf)])?;
    out!(
        "bootstrapped triggers for {} relations (top {} each)",
        lexicon.len(),
        config.bootstrap_k
    );
    Ok(())
}
