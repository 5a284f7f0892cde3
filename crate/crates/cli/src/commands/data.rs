use std::path::{Path, PathBuf};

use clap::Args;
use ttaline::data::corpus::synth_corpus;
use ttaline::data::corrupt::SEVERITY_TABLE_VERSION;
use ttaline::data::{
    corrupt_page, gen_pages, mix_seed, write_page, Corruption, CorruptionKind, DataError, DatasetSpec, Page,
    Split, StyleRanges,
};

use super::Common;
use crate::config::{require_existing, require_path};
use crate::error::{CliError, Result};
use crate::layout::{test_set_dir, train_dir, write_json, DataIndex, CLEAN_SET, INDEX_FILE, LM_CORPUS_FILE};

#[derive(Debug, Clone, Args)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output text file, one line per transcript.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12000)]
    pub lines: usize,
    #[arg(long, default_value_t = 15)]
    pub min_chars: usize,
    #[arg(long, default_value_t = 30)]
    pub max_chars: usize,
}

pub fn cmd_gen_corpus(args: &GenCorpusArgs) -> Result<()> {
    let (_, seed) = args.common.resolve()?;
    if args.min_chars == 0 || args.max_chars < args.min_chars.max(12) {
        return Err(CliError::usage("need 0 < min-chars <= max-chars and max-chars >= 12"));
    }
    let lines = synth_corpus(args.lines, args.min_chars, args.max_chars, seed);
    if let Some(dir) = args.out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(&args.out, text)?;
    println!("wrote {} lines to {}", lines.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus text file; the first test-writers·pages·lines lines become the test split.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub train_writers: usize,
    #[arg(long, default_value_t = 25)]
    pub test_writers: usize,
    #[arg(long, default_value_t = 2)]
    pub pages_per_writer: usize,
    #[arg(long, default_value_t = 8)]
    pub lines_per_page: usize,
    /// Severity for corruptions listed without one.
    #[arg(long, default_value_t = 3)]
    pub severity: u8,
    /// Corruptions as `kind` or `kind:severity`; all eight when omitted.
    #[arg(long, value_delimiter = ',')]
    pub corruptions: Vec<String>,
}

fn parse_corruptions(list: &[String], severity: u8) -> Result<Vec<CorruptionKind>> {
    let bad = |e: DataError| CliError::usage(e.to_string());
    if list.is_empty() {
        return Corruption::ALL
            .iter()
            .map(|&k| CorruptionKind::new(k, severity).map_err(bad))
            .collect();
    }
    list.iter()
        .map(|s| {
            if s.contains(':') {
                CorruptionKind::parse(s).map_err(bad)
            } else {
                CorruptionKind::new(s.parse().map_err(bad)?, severity).map_err(bad)
            }
        })
        .collect()
}

fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read corpus {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn write_pages(pages: &[Page], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for p in pages {
        write_page(p, dir)?;
    }
    Ok(())
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let (cfg, seed) = args.common.resolve()?;
    let corpus_path = require_path(args.corpus.clone(), &cfg.corpus, "corpus")?;
    require_existing(&corpus_path, "corpus file")?;
    let out = require_path(args.out.clone(), &cfg.data_dir, "out")?;
    let listed = if args.corruptions.is_empty() { &cfg.corruptions } else { &args.corruptions };
    let kinds = parse_corruptions(listed, args.severity)?;
    if args.test_writers == 0 || args.pages_per_writer == 0 || args.lines_per_page == 0 {
        return Err(CliError::usage("writer, page and line counts must be positive"));
    }

    let corpus = read_corpus(&corpus_path)?;
    let per_writer = args.pages_per_writer * args.lines_per_page;
    let test_lines = args.test_writers * per_writer;
    let train_lines = args.train_writers * per_writer;
    if corpus.len() < test_lines + train_lines {
        return Err(DataError::InsufficientCorpus {
            needed: test_lines + train_lines,
            available: corpus.len(),
        }
        .into());
    }
    let spec = |n_writers, styles| DatasetSpec {
        n_writers,
        pages_per_writer: args.pages_per_writer,
        lines_per_page: args.lines_per_page,
        styles,
    };
    let test = gen_pages(&corpus[..test_lines], Split::Test, &spec(args.test_writers, StyleRanges::default()), seed)?;
    let train = if args.train_writers > 0 {
        gen_pages(
            &corpus[test_lines..test_lines + train_lines],
            Split::Train,
            &spec(args.train_writers, StyleRanges::source()),
            seed,
        )?
    } else {
        Vec::new()
    };

    for stale in ["train", "test"] {
        let p = out.join(stale);
        if p.exists() {
            std::fs::remove_dir_all(&p)?;
        }
    }
    write_pages(&train, &train_dir(&out))?;
    write_pages(&test, &test_set_dir(&out, CLEAN_SET))?;
    let mut test_sets = vec![CLEAN_SET.to_string()];
    let corrupt_seed = mix_seed(seed, 0xc0_44_u64);
    for kind in &kinds {
        let id = kind.id();
        log::info!("writing {id}");
        let pages: Vec<Page> = test.iter().map(|p| corrupt_page(p, *kind, corrupt_seed)).collect();
        write_pages(&pages, &test_set_dir(&out, &id))?;
        test_sets.push(id);
    }

    // the language models never see test transcripts
    let lm_lines = &corpus[test_lines..];
    let mut lm_text = lm_lines.join("\n");
    lm_text.push('\n');
    std::fs::write(out.join(LM_CORPUS_FILE), lm_text)?;

    let index = DataIndex {
        seed,
        corpus_lines: corpus.len(),
        test_lines,
        train_lines,
        lm_lines: lm_lines.len(),
        train_writers: args.train_writers,
        test_writers: args.test_writers,
        pages_per_writer: args.pages_per_writer,
        lines_per_page: args.lines_per_page,
        severity: args.severity,
        severity_table_version: SEVERITY_TABLE_VERSION,
        test_sets,
    };
    write_json(&out.join(INDEX_FILE), &index)?;
    println!("{}", serde_json::to_string_pretty(&index)?);
    Ok(())
}
