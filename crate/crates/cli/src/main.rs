mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kner::corpus::{self, parse_corpus, Corpus, TagScheme, DEFAULT_RATIOS};
use kner::model::{Checkpoint, Model};
use kner::text::{segment_sentences, CharMap, Normalizer};
use kner::tokenize::{Tokenizer, TokenizerKind, TokenizerSpec, UnigramParams};
use kner::trainer;

use config::RunConfig;
use manifest::{beside, RunManifest};

#[derive(Parser)]
#[command(name = "kner", version, about = "Central Kurdish named entity recognition toolkit")]
struct Cli {
    /// Seed for every random choice (splits, shuffles, initialization).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Where to write the run manifest (default: beside the main output, else stderr).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize Sorani text line by line.
    Normalize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines log of every substitution.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Replacement character table (TSV of hex codepoints).
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Split normalized text into one sentence per line.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Fine-tune adapters and head on an annotated corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional validation corpus, scored after every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on an annotated corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run the model/tokenizer comparison grid and write report tables.
    Benchmark {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic annotated corpus.
    Synth {
        #[arg(long, default_value_t = 100)]
        sentences: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TokenizerCommand {
    /// Train a tokenizer on text lines or on an annotated corpus file.
    Train {
        #[arg(long)]
        method: TokenizerKind,
        #[arg(long, default_value_t = TokenizerSpec::DEFAULT_VOCAB)]
        vocab: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one space-joined piece sequence per input line.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    Stats(InArg),
    Validate(InArg),
    /// Seeded 70/15/15 split into PREFIX.train.tsv, PREFIX.val.tsv, PREFIX.test.tsv.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
    },
}

#[derive(Args)]
struct InArg {
    #[arg(long = "in")]
    input: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).with_context(|| format!("{} is not valid UTF-8", path.display()))
}

fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    Tokenizer::from_json(&load_text(path)?).with_context(|| format!("loading tokenizer {}", path.display()))
}

/// Training sentences: the texts of an annotated corpus, or non-empty lines.
fn training_sentences(path: &Path) -> Result<Vec<String>> {
    let text = load_text(path)?;
    if text.starts_with(corpus::HEADER) {
        return Ok(load_corpus(path)?.texts());
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    let name = match &cli.command {
        Command::Normalize { .. } => "normalize",
        Command::Segment { .. } => "segment",
        Command::Tokenizer(TokenizerCommand::Train { .. }) => "tokenizer train",
        Command::Tokenizer(TokenizerCommand::Encode { .. }) => "tokenizer encode",
        Command::Corpus(CorpusCommand::Stats(_)) => "corpus stats",
        Command::Corpus(CorpusCommand::Validate(_)) => "corpus validate",
        Command::Corpus(CorpusCommand::Split { .. }) => "corpus split",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Benchmark { .. } => "benchmark",
        Command::Synth { .. } => "synth",
    };
    let mut m = RunManifest::start(name, seed, cli.threads);
    let dest = match &cli.command {
        Command::Normalize { input, out, audit, map } => {
            m.input(input)?;
            let table = match map {
                Some(p) => {
                    m.input(p)?;
                    CharMap::parse(&load_text(p)?).with_context(|| format!("parsing {}", p.display()))?
                }
                None => CharMap::sorani().clone(),
            };
            let normalizer = Normalizer::new(&table);
            let text = load_text(input)?;
            let (mut lines, mut log) = (String::new(), String::new());
            for (n, line) in text.lines().enumerate() {
                let (norm, subs) = normalizer.normalize_audited(line);
                lines += &norm;
                lines.push('\n');
                for s in subs {
                    let entry = serde_json::json!({ "line": n + 1, "stage": s.stage, "position": s.position, "from": s.from, "to": s.to });
                    log += &(entry.to_string() + "\n");
                }
            }
            write(out, &lines)?;
            m.output(out);
            if let Some(a) = audit {
                write(a, &log)?;
                m.output(a);
            }
            Some(beside(out))
        }
        Command::Segment { input, out } => {
            m.input(input)?;
            let list = segment_sentences(&load_text(input)?);
            let body: String = list.sentences.iter().map(|s| format!("{}\n", s.as_str())).collect();
            write(out, &body)?;
            m.output(out);
            Some(beside(out))
        }
        Command::Tokenizer(TokenizerCommand::Train { method, vocab, input, out }) => {
            m.input(input)?;
            let spec = TokenizerSpec { kind: *method, vocab_size: *vocab, unigram: UnigramParams::default() };
            m.config = serde_json::json!({ "method": method.display_name(), "vocab": vocab });
            let tok = spec.train(&training_sentences(input)?)?;
            write(out, &(tok.to_json() + "\n"))?;
            m.output(out);
            if !cli.json {
                println!("{} tokenizer with {} entries written to {}", method.display_name(), tok.vocab_size(), out.display());
            }
            Some(beside(out))
        }
        Command::Tokenizer(TokenizerCommand::Encode { model, input }) => {
            m.input(model)?;
            m.input(input)?;
            let tok = load_tokenizer(model)?;
            let text = load_text(input)?;
            if cli.json {
                let encs: Vec<_> = text.lines().map(|l| tok.encode(l)).collect();
                print_json(&encs)?;
            } else {
                for line in text.lines() {
                    println!("{}", tok.encode(line).pieces.join(" "));
                }
            }
            None
        }
        Command::Corpus(CorpusCommand::Stats(a)) => {
            m.input(&a.input)?;
            let c = load_corpus(&a.input)?;
            let st = corpus::stats(&c);
            if cli.json {
                print_json(&st)?;
            } else {
                println!("sentences\t{}\ntokens\t{}\nunique_tags\t{}", st.n_sentences, st.n_tokens, st.n_unique_tags);
                for (tag, n) in &st.tag_counts {
                    println!("{tag}\t{n}");
                }
            }
            None
        }
        Command::Corpus(CorpusCommand::Validate(a)) => {
            m.input(&a.input)?;
            let c = load_corpus(&a.input)?;
            let report = corpus::validate(&c);
            let undocumented: Vec<String> = c.scheme().undocumented().iter().map(|t| t.to_string()).collect();
            if cli.json {
                print_json(&serde_json::json!({ "violations": report.violations, "undocumented_tags": undocumented }))?;
            } else {
                for v in &report.violations {
                    println!("{}\t{}\t{}\t{}", v.sentence_id, v.position, v.tag, v.rule);
                }
                println!("{} violation(s)", report.violations.len());
                if !undocumented.is_empty() {
                    println!("tags outside the documented set: {}", undocumented.join(", "));
                }
            }
            None
        }
        Command::Corpus(CorpusCommand::Split { input, out_prefix }) => {
            m.input(input)?;
            let c = load_corpus(input)?;
            let (tr, va, te) = corpus::split(&c, DEFAULT_RATIOS, seed)?;
            for (part, suffix) in [(&tr, "train"), (&va, "val"), (&te, "test")] {
                let path = PathBuf::from(format!("{}.{suffix}.tsv", out_prefix.display()));
                write(&path, &corpus::write_corpus(part))?;
                m.output(&path);
            }
            if !cli.json {
                println!("train {}\tval {}\ttest {}", tr.len(), va.len(), te.len());
            }
            Some(PathBuf::from(format!("{}.manifest.json", out_prefix.display())))
        }
        Command::Train { corpus: cpath, tokenizer, config, val, out } => {
            m.input(cpath)?;
            m.input(tokenizer)?;
            if let Some(p) = config {
                m.input(p)?;
            }
            let rc = RunConfig::load(config.as_deref())?;
            let train_set = load_corpus(cpath)?;
            let scheme = train_set.scheme().clone();
            let val_set = match val {
                Some(p) => {
                    m.input(p)?;
                    Corpus::with_scheme(load_corpus(p)?.sentences().to_vec(), scheme.clone())
                        .context("validation corpus uses tags absent from the training corpus")?
                }
                None => Corpus::with_scheme(vec![], scheme.clone())?,
            };
            let tok = load_tokenizer(tokenizer)?;
            let model_cfg = rc.model(tok.vocab_size(), scheme.len(), seed);
            let train_cfg = rc.train(seed);
            m.config = serde_json::json!({ "model": model_cfg, "train": train_cfg });
            let model = Model::init(model_cfg)?;
            let json = cli.json;
            let (model, history) = trainer::train_with(model, &train_set, &val_set, &tok, &train_cfg, |r| {
                if !json {
                    match &r.validation {
                        Some(v) => eprintln!("epoch {}\tloss {:.4}\tval f1 {:.1}", r.epoch, r.train_loss, v.f1),
                        None => eprintln!("epoch {}\tloss {:.4}", r.epoch, r.train_loss),
                    }
                }
            })?;
            let mut ckpt = Checkpoint::from_model(&model);
            ckpt.tokenizer = Some(serde_json::from_str(&tok.to_json())?);
            ckpt.tags = Some(scheme.tags().iter().map(|t| t.to_string()).collect());
            write(out, &ckpt.to_json())?;
            m.output(out);
            if json {
                print_json(&history)?;
            }
            Some(beside(out))
        }
        Command::Eval { ckpt, corpus: cpath } => {
            m.input(ckpt)?;
            m.input(cpath)?;
            let ck = Checkpoint::from_json(&load_text(ckpt)?)?;
            let model = ck.to_model()?;
            let Some(tok) = &ck.tokenizer else { bail!("checkpoint carries no tokenizer") };
            let tok = Tokenizer::from_json(&tok.to_string())?;
            let Some(tags) = &ck.tags else { bail!("checkpoint carries no tag list") };
            let tags = tags.iter().map(|t| t.parse()).collect::<Result<Vec<corpus::Tag>, _>>()?;
            let scheme = TagScheme::from_tags(&tags);
            if scheme.tags() != tags.as_slice() {
                bail!("checkpoint tag list is not in scheme order");
            }
            let c = Corpus::with_scheme(load_corpus(cpath)?.sentences().to_vec(), scheme)
                .context("corpus uses tags the checkpoint does not know")?;
            let result = trainer::evaluate(&model, &c, &tok)?;
            if cli.json {
                print_json(&result)?;
            } else {
                println!(
                    "precision {:.1}\trecall {:.1}\tf1 {:.1}\taccuracy {:.1}",
                    result.precision, result.recall, result.f1, result.accuracy
                );
            }
            None
        }
        Command::Benchmark { corpus: cpath, config, out } => {
            m.input(cpath)?;
            if let Some(p) = config {
                m.input(p)?;
            }
            let cfg = RunConfig::load(config.as_deref())?.benchmark(seed);
            m.config = serde_json::to_value(&cfg)?;
            let c = load_corpus(cpath)?;
            let rows = trainer::benchmark(&c, &trainer::benchmark_grid(), &cfg)?;
            let gains = trainer::improvements(&rows)?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let files = [
                ("table6.tsv", trainer::table6_tsv(&rows)),
                ("table6.json", trainer::table6_json(&rows)),
                ("table7.tsv", trainer::table7_tsv(&gains)),
                ("table7.json", trainer::table7_json(&gains)),
            ];
            for (file, body) in &files {
                let path = out.join(file);
                write(&path, body)?;
                m.output(&path);
            }
            if cli.json {
                print_json(&rows)?;
            } else {
                print!("{}", files[0].1);
            }
            Some(out.join("manifest.json"))
        }
        Command::Synth { sentences, out } => {
            let c = kner::synthetic::corpus(*sentences, seed);
            write(out, &corpus::write_corpus(&c))?;
            m.output(out);
            Some(beside(out))
        }
    };
    m.finish(cli.manifest.clone().or(dest))
}
