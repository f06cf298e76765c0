//! Command-line front end: corpus preparation, training, evaluation,
//! sweeps, attention export and the classifier.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use synfuse::annotate::{format_features, parse_annotated, AnnotatedSentence, PosTagSet};
use synfuse::harness::checkpoint::{load_classifier, load_translator, save_classifier, save_translator};
use synfuse::harness::heatmap::{export_attention, ImageFormat, Selection};
use synfuse::harness::synthetic::{homograph_corpus, toy_corpus};
use synfuse::harness::train::write_curve;
use synfuse::harness::{
    bleu_report, finetune_classifier, read_labeled, read_parallel, subsample, sweep, train_translator, write_parallel,
    LabeledPair, ParallelPair, RunConfig, Tokenizer,
};
use synfuse::manifest::Manifest;
use synfuse::model::AttentionKind;
use synfuse::tokenizer::MergeTable;
use synfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "synfuse", version, about = "Syntax-infused Transformer translator and classifier")]
struct Cli {
    /// Run configuration in key=value form.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn BPE merges from plain-text files.
    BpeLearn {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Number of merges.
        #[arg(long)]
        merges: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment sentences and write subword, POS, case and position columns.
    Annotate {
        /// Annotated TSV (`word<TAB>POS`, blank line between sentences) or
        /// plain text with one sentence per line.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a translator and write a checkpoint and a loss curve.
    Train {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long)]
        steps: Option<usize>,
        /// Train the baseline (no syntax features).
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Loss curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Greedy-decode source sentences.
    Translate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus BLEU of a checkpoint on a parallel corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Report with per-sentence n-gram statistics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline vs syntax-infused BLEU over data fractions.
    Sweep {
        #[command(flatten)]
        data: CorpusArgs,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write attention heatmaps for one decoded sentence.
    AttnExport {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        /// Sentence index within the input.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value_t = Kind::Cross)]
        kind: Kind,
        /// One map per layer and head instead of the last-layer mean.
        #[arg(long)]
        per_head: bool,
        #[arg(long, value_enum, default_value_t = Format::Svg)]
        format: Format,
        /// Output path stem.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the classifier on a labelled file.
    FinetuneCls {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Annotated TSV with one block per sentence, in file order.
        #[arg(long)]
        pos: Option<PathBuf>,
        #[arg(long)]
        merges: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Ignore POS tags.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Predict labels with a fine-tuned classifier.
    Classify {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pos: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic parallel corpus.
    GenToy {
        #[arg(long, value_enum, default_value_t = Toy::Reorder)]
        kind: Toy,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        /// Output prefix for `.src.tsv` and `.tgt.txt`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Parallel corpus prefix.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Held-out parallel corpus prefix.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    merges: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Cross,
    EncoderSelf,
    DecoderSelf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Svg,
    Pgm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toy {
    Reorder,
    Homograph,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_data_error() {
        2
    } else if matches!(e, Error::Numeric(_)) {
        3
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::BpeLearn { corpus, merges, out } => {
            let mut lines = Vec::new();
            for path in &corpus {
                let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                lines.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
            }
            let table = MergeTable::learn(&lines, merges.unwrap_or(cfg.num_merges))?;
            write_file(&out, table.to_text().as_bytes())?;
            eprintln!("{} merges from {} sentences -> {}", table.len(), lines.len(), out.display());
        }
        Command::Annotate { input, merges, out } => {
            let tagset = tagset(&cfg)?;
            let merges = MergeTable::load(&merges)?;
            let annotated: Vec<AnnotatedSentence> = read_sources(&input, &tagset)?
                .iter()
                .map(|s| synfuse::annotate::annotate(s, &merges))
                .collect();
            emit(out.as_deref(), &format_features(&annotated, &tagset))?;
        }
        Command::Train { data, steps, baseline, checkpoint, curve } => {
            cfg.steps = steps.unwrap_or(cfg.steps);
            apply_corpus(&mut cfg, &data);
            cfg.validate()?;
            let tagset = tagset(&cfg)?;
            let train = read_parallel(required(&cfg.corpus, "--corpus")?, &tagset)?;
            let train = subsample(&train, cfg.data_fraction, cfg.seed)?;
            let eval = cfg.eval_corpus.as_deref().map(|p| read_parallel(p, &tagset)).transpose()?;
            let tokenizer = translation_tokenizer(&cfg, &train, tagset)?;
            let model = if baseline { cfg.model.baseline() } else { cfg.model.clone() };
            let out = train_translator(&cfg, tokenizer, &train, eval.as_deref(), &model, |p| {
                let bleu = p.eval_bleu.map_or(String::new(), |b| format!(" eval_bleu={b:.4}"));
                eprintln!("step {} train_loss={:.4}{bleu}", p.step, p.train_loss);
            })?;
            let ckpt = checkpoint.or(cfg.checkpoint.clone()).unwrap_or_else(|| PathBuf::from("model.ckpt"));
            save_translator(&out.translator, &ckpt)?;
            let curve = curve.or_else(|| cfg.output.clone()).unwrap_or_else(|| ckpt.with_extension("curve.csv"));
            write_curve(&curve, &out.curve, cfg.seed)?;
            println!(
                "seed={} steps={} final_nll={:.4} checkpoint={} curve={}",
                cfg.seed,
                out.steps,
                out.final_nll,
                ckpt.display(),
                curve.display()
            );
        }
        Command::Translate { checkpoint, input, out } => {
            let translator = load_translator(&checkpoint_path(checkpoint, &cfg)?)?;
            let sources = read_sources(&input, &translator.tokenizer.tagset)?;
            let mut text = String::new();
            for t in translator.translate(&sources, cfg.max_decode_len, false)? {
                text.push_str(&t.text);
                text.push('\n');
            }
            emit(out.as_deref(), &text)?;
            eprintln!("seed={}", translator.seed);
        }
        Command::Evaluate { checkpoint, corpus, out } => {
            let translator = load_translator(&checkpoint_path(checkpoint, &cfg)?)?;
            let corpus = corpus.or(cfg.eval_corpus.clone()).or(cfg.corpus.clone());
            let pairs = read_parallel(required(&corpus, "--corpus")?, &translator.tokenizer.tagset)?;
            let sources: Vec<AnnotatedSentence> = pairs.iter().map(|p| p.source.clone()).collect();
            let hyps: Vec<String> = translator
                .translate(&sources, cfg.max_decode_len, false)?
                .into_iter()
                .map(|t| t.text)
                .collect();
            let refs: Vec<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
            let report = bleu_report(&hyps, &refs)?;
            let mut manifest = Manifest::default();
            translator.model.config.write_manifest(&mut manifest);
            let fingerprint = fnv1a(manifest.to_text().as_bytes());
            println!("bleu={:.6} bleu_x100={:.2} sentences={} seed={} config={fingerprint:016x}", report.bleu, 100.0 * report.bleu, pairs.len(), translator.seed);
            if let Some(out) = out {
                let mut text = format!("# seed={} config={fingerprint:016x}\n# bleu={:.6}\n", translator.seed, report.bleu);
                text.push_str("sentence\thyp_len\tref_len\tmatch1\ttotal1\tmatch2\ttotal2\tmatch3\ttotal3\tmatch4\ttotal4\thypothesis\n");
                for (i, (s, h)) in report.sentences.iter().zip(&hyps).enumerate() {
                    let _ = write!(text, "{i}\t{}\t{}", s.hyp_len, s.ref_len);
                    for n in 0..4 {
                        let _ = write!(text, "\t{}\t{}", s.matches[n], s.totals[n]);
                    }
                    let _ = writeln!(text, "\t{h}");
                }
                write_file(&out, text.as_bytes())?;
            }
        }
        Command::Sweep { data, fractions, steps, out } => {
            cfg.steps = steps.unwrap_or(cfg.steps);
            if let Some(f) = fractions {
                cfg.fractions = f;
            }
            apply_corpus(&mut cfg, &data);
            cfg.validate()?;
            let tagset = tagset(&cfg)?;
            let train = read_parallel(required(&cfg.corpus, "--corpus")?, &tagset)?;
            let eval = read_parallel(required(&cfg.eval_corpus, "--eval")?, &tagset)?;
            let tokenizer = translation_tokenizer(&cfg, &train, tagset)?;
            let table = sweep(&cfg, &tokenizer, &train, &eval, &cfg.model, |row| {
                eprintln!(
                    "fraction {} ({} pairs): baseline {:.4} syntax {:.4}",
                    row.fraction, row.pairs, row.baseline_bleu, row.syntax_bleu
                );
            })?;
            emit(out.as_deref().or(cfg.output.as_deref()), &table.to_tsv())?;
        }
        Command::AttnExport { checkpoint, input, index, kind, per_head, format, out } => {
            let translator = load_translator(&checkpoint_path(checkpoint, &cfg)?)?;
            let sources = read_sources(&input, &translator.tokenizer.tagset)?;
            let source = sources
                .get(index)
                .ok_or_else(|| Error::Invalid(format!("sentence {index} out of range ({} in input)", sources.len())))?;
            let t = translator.translate(std::slice::from_ref(source), cfg.max_decode_len, true)?.remove(0);
            let kind = match kind {
                Kind::Cross => AttentionKind::Cross,
                Kind::EncoderSelf => AttentionKind::EncoderSelf,
                Kind::DecoderSelf => AttentionKind::DecoderSelf,
            };
            let selection = if per_head { Selection::PerHead } else { Selection::LastLayerMean };
            let format = match format {
                Format::Svg => ImageFormat::Svg,
                Format::Pgm => ImageFormat::Pgm,
            };
            let (keys, queries) = match kind {
                AttentionKind::EncoderSelf => (&t.source_subwords, &t.source_subwords),
                AttentionKind::DecoderSelf => (&t.target_subwords, &t.target_subwords),
                AttentionKind::Cross => (&t.source_subwords, &t.target_subwords),
            };
            for path in export_attention(&t.records, keys, queries, kind, selection, format, &out)? {
                println!("{}", path.display());
            }
            eprintln!("translation: {} (seed={})", t.text, translator.seed);
        }
        Command::FinetuneCls { corpus, pos, merges, epochs, baseline, checkpoint } => {
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            if let Some(m) = merges {
                cfg.merges = Some(m);
            }
            cfg.validate()?;
            let tagset = tagset(&cfg)?;
            let corpus = corpus.or(cfg.corpus.clone());
            let pairs = read_labeled(required(&corpus, "--corpus")?, pos.as_deref(), &tagset)?;
            let sentences: Vec<String> = pairs
                .iter()
                .flat_map(|p| std::iter::once(p.a.text()).chain(p.b.as_ref().map(AnnotatedSentence::text)))
                .collect();
            let table = match &cfg.merges {
                Some(path) => MergeTable::load(path)?,
                None => MergeTable::learn(&sentences, cfg.num_merges)?,
            };
            let tokenizer = Tokenizer::with_merges(table, &sentences, tagset);
            let mut bert = cfg.bert.clone();
            bert.use_pos &= !baseline;
            let (classifier, losses) = finetune_classifier(&cfg, tokenizer, &pairs, &bert)?;
            for (i, l) in losses.iter().enumerate() {
                eprintln!("epoch {} loss={l:.4}", i + 1);
            }
            let ckpt = checkpoint.or(cfg.checkpoint.clone()).unwrap_or_else(|| PathBuf::from("classifier.ckpt"));
            save_classifier(&classifier, &ckpt)?;
            println!(
                "seed={} epochs={} train_accuracy={:.4} checkpoint={}",
                cfg.seed,
                losses.len(),
                classifier.accuracy(&pairs)?,
                ckpt.display()
            );
        }
        Command::Classify { checkpoint, input, pos, out } => {
            let classifier = load_classifier(&checkpoint_path(checkpoint, &cfg)?)?;
            let pairs: Vec<LabeledPair> = read_labeled(&input, pos.as_deref(), &classifier.tokenizer.tagset)?;
            let predictions = classifier.predict(&pairs)?;
            let mut text = format!("# seed={}\nlabel\t{}\n", classifier.seed, classifier.labels.join("\t"));
            let (mut known, mut correct) = (0, 0);
            for (p, pair) in predictions.iter().zip(&pairs) {
                let probs: Vec<String> = p.probabilities.iter().take(classifier.labels.len()).map(|x| format!("{x:.6}")).collect();
                let _ = writeln!(text, "{}\t{}", p.label, probs.join("\t"));
                if classifier.labels.contains(&pair.label) {
                    known += 1;
                    correct += usize::from(p.label == pair.label);
                }
            }
            emit(out.as_deref(), &text)?;
            if known > 0 {
                eprintln!("accuracy {:.4} on {known} labelled examples", correct as f64 / known as f64);
            }
        }
        Command::GenToy { kind, pairs, out } => {
            let corpus: Vec<ParallelPair> = match kind {
                Toy::Reorder => toy_corpus(pairs, cfg.seed),
                Toy::Homograph => homograph_corpus(pairs, cfg.seed).into_iter().map(|i| i.pair).collect(),
            };
            write_parallel(&out, &corpus, &PosTagSet::universal())?;
            eprintln!("{} pairs (seed={}) -> {}.src.tsv / .tgt.txt", corpus.len(), cfg.seed, out.display());
        }
    }
    Ok(())
}

fn apply_corpus(cfg: &mut RunConfig, data: &CorpusArgs) {
    if let Some(c) = &data.corpus {
        cfg.corpus = Some(c.clone());
    }
    if let Some(e) = &data.eval {
        cfg.eval_corpus = Some(e.clone());
    }
    if let Some(m) = &data.merges {
        cfg.merges = Some(m.clone());
    }
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{flag} is required (or set it in the config file)")))
}

fn checkpoint_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| Error::Config("--checkpoint is required (or set it in the config file)".into()))
}

fn tagset(cfg: &RunConfig) -> Result<PosTagSet> {
    match &cfg.tagset {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            PosTagSet::parse(&text)
        }
        None => Ok(PosTagSet::universal()),
    }
}

fn translation_tokenizer(cfg: &RunConfig, train: &[ParallelPair], tagset: PosTagSet) -> Result<Tokenizer> {
    match &cfg.merges {
        Some(path) => {
            let sentences: Vec<String> = train.iter().flat_map(|p| [p.source.text(), p.target.clone()]).collect();
            Ok(Tokenizer::with_merges(MergeTable::load(path)?, &sentences, tagset))
        }
        None => Tokenizer::fit(train, cfg.num_merges, tagset),
    }
}

/// Annotated TSV when any line has a tab, otherwise one sentence per line.
fn read_sources(path: &Path, tagset: &PosTagSet) -> Result<Vec<AnnotatedSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let sentences = if text.contains('\t') {
        parse_annotated(&text, tagset, path)?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| AnnotatedSentence::from_text(l, tagset))
            .collect()
    };
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus("input has no sentences"));
    }
    Ok(sentences)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}
