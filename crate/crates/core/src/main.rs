use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use gendep::corpus::{
    build_vocab, encode_treebank, read_conll_file, read_raw_text, write_conll, LmTransform, SentenceRecord,
    TokenRecord, VocabOptions, Vocabulary,
};
use gendep::decoder::{generate, marginal_log_prob, particle_parse, DecodeSettings, ReduceBranching};
use gendep::eval::{attachment_scores, perplexity_from, DEFAULT_PUNCT_TAGS};
use gendep::model::{ContextSpecs, Derivation, ModelConfig, ABLATION_ORDER};
use gendep::persist::ModelFile;
use gendep::trainer::{train_supervised, train_unsupervised, Diagnostics, OracleMode, TrainSettings, UnsupMode, UnsupSettings};
use gendep::{synth, Error, Result};

#[derive(Parser)]
#[command(name = "gendep", version, about = "Generative dependency parser and syntactic language model")]
struct Cli {
    /// Worker threads for parse and score (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Greedy,
    Sampled,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TagsArg {
    Joint,
    Given,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchingArg {
    BestOne,
    BestLeftRight,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    Conll,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefineMode {
    Sample,
    Semisup,
}

#[derive(clap::Args)]
struct DecodeArgs {
    /// Particles in the decoder beam.
    #[arg(long, default_value_t = 100)]
    particles: u64,
    /// Candidate tags per shifted word.
    #[arg(long, default_value_t = 3)]
    tag_candidates: usize,
    #[arg(long, value_enum, default_value_t = BranchingArg::BestOne)]
    branching: BranchingArg,
}

impl DecodeArgs {
    fn settings(&self, tags_provided: bool) -> DecodeSettings {
        DecodeSettings {
            particles: self.particles,
            max_tag_candidates: self.tag_candidates,
            tags_provided,
            reduce_branching: match self.branching {
                BranchingArg::BestOne => ReduceBranching::BestOne,
                BranchingArg::BestLeftRight => ReduceBranching::BestLeftAndRight,
            },
        }
    }
}

#[derive(clap::Args)]
struct LmArgs {
    /// Drop punctuation tokens.
    #[arg(long)]
    remove_punct: bool,
    /// Replace numbers by a single symbol.
    #[arg(long)]
    collapse_numbers: bool,
}

impl LmArgs {
    fn transform(&self) -> LmTransform {
        LmTransform {
            remove_punctuation: self.remove_punct,
            collapse_numbers: self.collapse_numbers,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CoNLL-X treebank.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, value_enum, default_value_t = OracleArg::Greedy)]
        oracle: OracleArg,
        /// Particles for sampled derivations.
        #[arg(long, default_value_t = 100)]
        particles: u64,
        #[arg(long)]
        unlexicalised: bool,
        #[arg(long)]
        no_labels: bool,
        /// Use only the first N context elements (2 to 8).
        #[arg(long)]
        context_elements: Option<usize>,
        /// Forms seen fewer times become unknown-word classes.
        #[arg(long, default_value_t = 2)]
        min_count: u32,
        #[arg(long)]
        max_vocab: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write per-iteration JSON records here.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[command(flatten)]
        lm: LmArgs,
    },
    /// Parse text or CoNLL input and write CoNLL.
    Parse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Conll)]
        format: InputFormat,
        #[arg(long, value_enum, default_value_t = TagsArg::Joint)]
        tags: TagsArg,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Score predicted CoNLL against gold.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Comma-separated gold tags excluded from attachment scores.
        #[arg(long)]
        punct_tags: Option<String>,
    },
    /// Per-sentence log probabilities and corpus perplexity of raw text.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InputFormat::Text)]
        format: InputFormat,
        #[command(flatten)]
        decode: DecodeArgs,
        #[command(flatten)]
        lm: LmArgs,
    },
    /// Sample sentences from a model.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_length: usize,
        /// Discard samples shorter than this.
        #[arg(long, default_value_t = 1)]
        min_length: usize,
    },
    /// Update a trained model on raw text.
    Refine {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = RefineMode::Semisup)]
        mode: RefineMode,
        #[arg(long, default_value_t = 100)]
        particles: u64,
        #[arg(long, default_value_t = 1)]
        sweeps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        lm: LmArgs,
    },
    /// Write the synthetic treebank split as CoNLL.
    Synth {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Settings(format!("cannot write {}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open_records(path: &Path) -> Result<Vec<SentenceRecord>> {
    read_conll_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Settings(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn read_sentences(path: &Path, format: InputFormat) -> Result<Vec<Vec<String>>> {
    match format {
        InputFormat::Conll => Ok(open_records(path)?
            .iter()
            .map(|r| r.tokens.iter().map(|t| t.form.clone()).collect())
            .collect()),
        InputFormat::Text => {
            let f = File::open(path).map_err(|e| Error::Settings(format!("cannot read {}: {e}", path.display())))?;
            read_raw_text(BufReader::new(f))
        }
    }
}

fn encode(vocab: &Vocabulary, sentences: &[Vec<String>], lm: LmTransform) -> Vec<Vec<u32>> {
    sentences
        .iter()
        .map(|s| lm.apply_tokens(s))
        .filter(|s| !s.is_empty())
        .map(|s| vocab.words(&s.iter().map(String::as_str).collect::<Vec<_>>()))
        .collect()
}

fn train(cmd: Command) -> Result<()> {
    let Command::Train {
        train,
        out,
        iterations,
        oracle,
        particles,
        unlexicalised,
        no_labels,
        context_elements,
        min_count,
        max_vocab,
        seed,
        diagnostics,
        lm,
    } = cmd
    else {
        unreachable!()
    };
    let transform = lm.transform();
    let records: Vec<SentenceRecord> = open_records(&train)?
        .iter()
        .map(|r| transform.apply_record(r, &DEFAULT_PUNCT_TAGS))
        .filter(|r| !r.is_empty())
        .collect();
    let vocab = build_vocab(
        &records,
        VocabOptions {
            min_count,
            max_size: max_vocab,
        },
    );
    let (corpus, skipped) = encode_treebank(&records, &vocab);
    log::info!("{} training sentences, {skipped} skipped", corpus.len());
    if skipped > 0 {
        eprintln!("skipped {skipped} non-projective or malformed sentences");
    }
    let mut config = ModelConfig::new(vocab.size(), vocab.tags.len() as u32, vocab.labels.len() as u32);
    config.lexicalised = !unlexicalised;
    config.predict_labels = !no_labels;
    if let Some(k) = context_elements {
        if !(2..=ABLATION_ORDER.len()).contains(&k) {
            return Err(Error::Settings(format!("--context-elements must be 2..={}", ABLATION_ORDER.len())));
        }
        config.specs = ContextSpecs::ablation(k);
    }
    let settings = TrainSettings {
        iterations,
        oracle: match oracle {
            OracleArg::Greedy => OracleMode::Deterministic,
            OracleArg::Sampled => OracleMode::Sampled,
        },
        derivation_particles: particles,
        seed,
        ..TrainSettings::default()
    };
    let mut sink = diagnostics.as_deref().map(create).transpose()?;
    let mut diag = match sink.as_mut() {
        Some(s) => Diagnostics::new(s),
        None => Diagnostics::none(),
    };
    let model = train_supervised(config, &corpus, &settings, &mut diag)?;
    if let Some(mut s) = sink {
        s.flush()?;
    }
    ModelFile::new(vocab, model).save(&out)
}

fn parse(cmd: Command) -> Result<()> {
    let Command::Parse {
        model,
        input,
        format,
        tags,
        output: out_path,
        decode,
    } = cmd
    else {
        unreachable!()
    };
    let file = ModelFile::load(&model)?;
    let records: Vec<SentenceRecord> = match format {
        InputFormat::Conll => open_records(&input)?,
        InputFormat::Text => read_sentences(&input, InputFormat::Text)?
            .into_iter()
            .enumerate()
            .map(|(i, forms)| SentenceRecord {
                tokens: forms
                    .into_iter()
                    .map(|form| TokenRecord {
                        form,
                        tag: "_".into(),
                        head: None,
                        label: "_".into(),
                    })
                    .collect(),
                source: input.display().to_string(),
                lines: (i + 1, i + 1),
            })
            .collect(),
    };
    let given = tags == TagsArg::Given;
    if given {
        if let Some(r) = records.iter().find(|r| !r.has_tags()) {
            return Err(Error::Settings(format!(
                "{}:{}: --tags given needs tagged input",
                input.display(),
                r.lines.0
            )));
        }
    }
    let settings = decode.settings(given);
    let vocab = &file.vocab;
    let start = Instant::now();
    let parsed: Vec<SentenceRecord> = records
        .par_iter()
        .map(|r| {
            let words = vocab.words(&r.forms());
            let tag_ids = if given { Some(vocab.tag_ids(r)?) } else { None };
            let out = particle_parse(&file.model, &words, tag_ids.as_deref(), &settings)?;
            Ok(to_record(r, &out.best, vocab, file.model.predicts_labels()))
        })
        .collect::<Result<_>>()?;
    log::info!(
        "{:.1} sentences/sec",
        records.len() as f64 / start.elapsed().as_secs_f64().max(1e-9)
    );
    let mut w = output(out_path.as_deref())?;
    write_conll(&parsed, &mut w)?;
    w.flush()?;
    Ok(())
}

fn to_record(r: &SentenceRecord, d: &Derivation, vocab: &Vocabulary, labelled: bool) -> SentenceRecord {
    let tree = d.tree().expect("decoder returns terminal derivations");
    SentenceRecord {
        tokens: r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| TokenRecord {
                form: t.form.clone(),
                tag: vocab.tags.name(d.tags[i]).to_string(),
                head: Some(tree.head(i + 1)),
                label: if labelled {
                    vocab.labels.name(tree.label(i + 1)).to_string()
                } else {
                    "dep".to_string()
                },
            })
            .collect(),
        ..r.clone()
    }
}

fn eval(pred: &Path, gold: &Path, punct_tags: Option<String>) -> Result<()> {
    let p = open_records(pred)?;
    let g = open_records(gold)?;
    let tags: Vec<String> = match punct_tags {
        Some(s) => s.split(',').map(str::to_string).collect(),
        None => DEFAULT_PUNCT_TAGS.iter().map(|s| s.to_string()).collect(),
    };
    let tags: Vec<&str> = tags.iter().map(String::as_str).collect();
    let report = attachment_scores(&p, &g, &tags)?;
    print!("{}", report.to_text());
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct ScoreRecord {
    sentence: usize,
    log_prob: f64,
    length: usize,
}

fn score(model: &Path, input: &Path, format: InputFormat, decode: &DecodeArgs, lm: &LmArgs) -> Result<()> {
    let file = ModelFile::load(model)?;
    let sentences = encode(&file.vocab, &read_sentences(input, format)?, lm.transform());
    let settings = decode.settings(false);
    let lps: Vec<f64> = sentences
        .par_iter()
        .map(|w| marginal_log_prob(&particle_parse(&file.model, w, None, &settings)?.beam))
        .collect::<Result<_>>()?;
    let mut out = BufWriter::new(io::stdout().lock());
    for (i, (lp, s)) in lps.iter().zip(&sentences).enumerate() {
        let rec = ScoreRecord {
            sentence: i + 1,
            log_prob: *lp,
            length: s.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    let ppl = perplexity_from(&lps, &sentences);
    writeln!(
        out,
        "{}",
        serde_json::json!({ "sentences": sentences.len(), "perplexity": ppl })
    )?;
    out.flush()?;
    Ok(())
}

fn generate_cmd(model: &Path, count: usize, seed: u64, max_length: usize, min_length: usize) -> Result<()> {
    let file = ModelFile::load(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BufWriter::new(io::stdout().lock());
    let mut produced = 0;
    let mut attempts = 0usize;
    while produced < count {
        attempts += 1;
        if attempts > count.saturating_mul(1000).max(1000) {
            return Err(Error::Settings(format!(
                "no samples of length >= {min_length} after {attempts} attempts"
            )));
        }
        let g = generate(&file.model, &mut rng, max_length)?;
        if g.derivation.len() < min_length {
            continue;
        }
        produced += 1;
        let words: Vec<&str> = g.derivation.words.iter().map(|&w| file.vocab.word_name(w)).collect();
        let tags: Vec<&str> = g.derivation.tags.iter().map(|&t| file.vocab.tags.name(t)).collect();
        writeln!(
            out,
            "{}",
            serde_json::json!({
                "text": words.join(" "),
                "tags": tags,
                "heads": g.tree.heads(),
                "log_prob": g.log_prob,
            })
        )?;
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Settings(format!("thread pool: {e}")))?;
    }
    match cli.command {
        cmd @ Command::Train { .. } => train(cmd),
        cmd @ Command::Parse { .. } => parse(cmd),
        Command::Eval { pred, gold, punct_tags } => eval(&pred, &gold, punct_tags),
        Command::Score {
            model,
            input,
            format,
            decode,
            lm,
        } => score(&model, &input, format, &decode, &lm),
        Command::Generate {
            model,
            count,
            seed,
            max_length,
            min_length,
        } => generate_cmd(&model, count, seed, max_length, min_length),
        Command::Refine {
            model,
            input,
            out,
            mode,
            particles,
            sweeps,
            seed,
            lm,
        } => {
            let file = ModelFile::load(&model)?;
            let sentences = encode(&file.vocab, &read_sentences(&input, InputFormat::Text)?, lm.transform());
            let mode = match mode {
                RefineMode::Sample => UnsupMode::LatentSample,
                RefineMode::Semisup => UnsupMode::ViterbiSemisup,
            };
            let settings = UnsupSettings {
                particles,
                sweeps,
                seed,
                ..UnsupSettings::new(mode)
            };
            let refined = train_unsupervised(file.model, &sentences, &settings, &mut Diagnostics::none())?;
            ModelFile::new(file.vocab, refined).save(&out)
        }
        Command::Synth { train, dev } => {
            let (tr, dv) = synth::synthetic_split();
            let mut w = create(&train)?;
            write_conll(&tr, &mut w)?;
            w.flush()?;
            let mut w = create(&dev)?;
            write_conll(&dv, &mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
