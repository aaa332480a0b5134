//! Command-line front end: each subcommand drives one pipeline stage and
//! drops its artifact under the work directory.

use clap::{Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};

use glyphnet::config::PipelineConfig;
use glyphnet::corpus::{
    load_domains, read_manifest, split_dataset, subsample, write_manifest, write_records_csv,
    DomainRecord, Split, LABEL_REAL,
};
use glyphnet::derive_seed;
use glyphnet::glyphs::{baseline_classify, generate_corpus, substitutable, GlyphPool};
use glyphnet::metrics::{baseline_score, comparison_table, evaluate_model, EvalReport};
use glyphnet::model::checkpoint::{load_checkpoint, save_checkpoint};
use glyphnet::model::data::ImageSet;
use glyphnet::model::trainer::Trainer;
use glyphnet::model::verify::gradcheck_suite;
use glyphnet::model::{build_model, predict_domain};
use glyphnet::render::render_manifest;
use glyphnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "glyphnet",
    version,
    about = "Homoglyph-domain dataset generation and attention-CNN detection"
)]
struct Cli {
    /// Flat key=value config file with section dots, e.g. render.width=150
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Global seed; every stage derives its own stream from it (default 0)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap worker threads for generate/render/eval (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Artifact directory (default glyphnet-work)
    #[arg(long, global = true, env = "GLYPHNET_WORKDIR")]
    workdir: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the 1:1 real/homoglyph corpus CSV from a domain list
    Generate {
        /// Real-domain list, one per line (default data/top_domains_10k.txt)
        #[arg(long)]
        domains: Option<PathBuf>,
        /// Glyph pool file (default: built-in pool)
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Keep only this many real domains (seeded subsample)
        #[arg(long)]
        limit: Option<usize>,
        /// Output CSV (default <workdir>/corpus.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shuffle the corpus into train/val/test splits
    Split {
        /// Corpus CSV (default <workdir>/corpus.csv)
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated train,val,test fractions (default 0.7,0.2,0.1)
        #[arg(long)]
        ratios: Option<String>,
        /// Output manifest CSV (default <workdir>/manifest.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the manifest into per-split PGM image directories
    Render {
        /// Manifest CSV (default <workdir>/manifest.csv)
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Image width (default 150)
        #[arg(long)]
        width: Option<usize>,
        /// Image height (default 150)
        #[arg(long)]
        height: Option<usize>,
        /// Font pixel size (default 28)
        #[arg(long)]
        font_px: Option<u32>,
        /// Output directory (default <workdir>/images)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the attention CNN on rendered train/val splits
    Train {
        /// Rendered image root holding train/ and val/ (default <workdir>/images)
        #[arg(long)]
        images: Option<PathBuf>,
        /// Batch size (default 256)
        #[arg(long)]
        batch_size: Option<usize>,
        /// Learning rate (default 0.001)
        #[arg(long)]
        lr: Option<f64>,
        /// Epoch cap (default 30)
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Early-stop patience on validation loss (default 3)
        #[arg(long)]
        patience: Option<usize>,
        /// Checkpoint output (default <workdir>/model.glyf)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// History CSV output (default <workdir>/history.csv)
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a rendered split and write the report
    Eval {
        /// Checkpoint path (default <workdir>/model.glyf)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Rendered image root (default <workdir>/images)
        #[arg(long)]
        images: Option<PathBuf>,
        /// Split to score: train, val, or test (default test)
        #[arg(long)]
        split: Option<String>,
        /// Manifest CSV for baseline domain strings (default <workdir>/manifest.csv)
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Whitelist file; adds an edit-distance baseline row when present
        #[arg(long)]
        whitelist: Option<PathBuf>,
        /// Baseline homoglyph distance cutoff (default 2)
        #[arg(long)]
        threshold: Option<usize>,
        /// Report basename; writes <report>.txt and <report>.csv
        /// (default <workdir>/report)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify one raw domain string with a trained checkpoint
    Predict {
        /// Domain to classify
        #[arg(long)]
        domain: String,
        /// Checkpoint path (default <workdir>/model.glyf)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score one domain against a whitelist by edit distance
    Baseline {
        /// Domain to classify
        #[arg(long)]
        domain: String,
        /// Whitelist file, one domain per line
        #[arg(long)]
        whitelist: PathBuf,
        /// Homoglyph distance cutoff (default 2)
        #[arg(long)]
        threshold: Option<usize>,
    },
    /// Run the 64-bit finite-difference gradient suite
    Gradcheck,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("workers: {e}")))?;
    }
    let mut pc = PipelineConfig::default();
    if let Some(path) = &cli.config {
        pc.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        pc.seed = seed;
    }
    if let Some(dir) = cli.workdir {
        pc.workdir = dir;
    }
    pc.validate()?;

    match cli.cmd {
        Cmd::Generate {
            domains,
            pool,
            limit,
            out,
        } => {
            let domains_path = domains.unwrap_or_else(|| pc.domains.clone());
            let out = out.unwrap_or_else(|| pc.workdir.join("corpus.csv"));
            let pool = match pool.or_else(|| pc.pool.clone()) {
                Some(path) => GlyphPool::load(&path)?,
                None => GlyphPool::default_pool(),
            };
            let (mut reals, bad_lines) = load_domains(&domains_path)?;
            // 1:1 balance: drop domains that cannot receive a homoglyph
            // twin before generation, so the two halves line up exactly.
            let before = reals.len();
            reals.retain(|r| substitutable(&r.text, &pool));
            let unsubstitutable = before - reals.len();
            if let Some(limit) = limit {
                reals = subsample(reals, limit, derive_seed(pc.seed, "subsample"));
            }
            let (fakes, skipped) = generate_corpus(
                &reals,
                &pool,
                &pc.generation,
                derive_seed(pc.seed, "generate"),
            )?;
            debug_assert_eq!(skipped, 0);
            let n_real = reals.len();
            let n_fake = fakes.len();
            ensure_parent(&out)?;
            write_records_csv(&out, reals.iter().chain(fakes.iter()).map(|r| (r, None)))?;
            println!(
                "corpus: {n_real} real + {n_fake} homoglyph -> {} \
                 ({bad_lines} bad lines, {unsubstitutable} unsubstitutable)",
                out.display()
            );
            Ok(())
        }

        Cmd::Split {
            corpus,
            ratios,
            out,
        } => {
            let corpus_path = corpus.unwrap_or_else(|| pc.workdir.join("corpus.csv"));
            let out = out.unwrap_or_else(|| pc.workdir.join("manifest.csv"));
            if let Some(raw) = ratios {
                let parts: Vec<&str> = raw.split(',').collect();
                if parts.len() != 3 {
                    return Err(Error::InvalidConfig(format!(
                        "ratios: expected three comma-separated fractions, got {raw:?}"
                    )));
                }
                for (slot, part) in ["split.train", "split.val", "split.test"].iter().zip(parts) {
                    pc.set(slot, part.trim())?;
                }
            }
            let records: Vec<DomainRecord> = glyphnet::corpus::read_records_csv(&corpus_path)?
                .into_iter()
                .map(|(rec, _)| rec)
                .collect();
            let manifest = split_dataset(records, pc.ratios, derive_seed(pc.seed, "split"))?;
            for warning in &manifest.warnings {
                eprintln!("warning: {warning}");
            }
            ensure_parent(&out)?;
            write_manifest(&out, &manifest)?;
            println!(
                "split: train {} val {} test {} -> {}",
                manifest.train.len(),
                manifest.val.len(),
                manifest.test.len(),
                out.display()
            );
            Ok(())
        }

        Cmd::Render {
            manifest,
            width,
            height,
            font_px,
            out,
        } => {
            let manifest_path = manifest.unwrap_or_else(|| pc.workdir.join("manifest.csv"));
            let out = out.unwrap_or_else(|| pc.workdir.join("images"));
            if let Some(w) = width {
                pc.render.width = w;
            }
            if let Some(h) = height {
                pc.render.height = h;
            }
            if let Some(px) = font_px {
                pc.render.font_px = px;
            }
            let manifest = read_manifest(&manifest_path)?;
            let stats = render_manifest(&manifest, &pc.render, &out)?;
            println!(
                "rendered: {} images ({} missing glyphs) -> {}",
                stats.rendered,
                stats.missing_glyphs,
                out.display()
            );
            Ok(())
        }

        Cmd::Train {
            images,
            batch_size,
            lr,
            max_epochs,
            patience,
            checkpoint,
            history,
        } => {
            let images = images.unwrap_or_else(|| pc.workdir.join("images"));
            let checkpoint = checkpoint.unwrap_or_else(|| pc.workdir.join("model.glyf"));
            let history = history.unwrap_or_else(|| pc.workdir.join("history.csv"));
            if let Some(b) = batch_size {
                pc.train.batch_size = b;
            }
            if let Some(lr) = lr {
                pc.train.lr = lr;
            }
            if let Some(cap) = max_epochs {
                pc.train.max_epochs = cap;
            }
            if let Some(p) = patience {
                pc.train.patience = p;
            }
            pc.train.seed = derive_seed(pc.seed, "train");
            pc.train.validate()?;
            let train = ImageSet::open(&images.join(Split::Train.as_str()))?;
            let val = ImageSet::open(&images.join(Split::Val.as_str()))?;
            // The rendered data fixes the input geometry, whatever the
            // config's render section currently says.
            (pc.model.input_h, pc.model.input_w) = train.image_dims()?;
            let model = build_model(&pc.model, derive_seed(pc.seed, "init"))?;
            println!(
                "training: {} train / {} val images, {} parameters",
                train.len(),
                val.len(),
                model.num_params()
            );
            let mut trainer = Trainer::new(model, train, val, pc.train.clone())?;
            while !trainer.should_stop() {
                let row = trainer.run_epoch()?;
                println!(
                    "epoch {}: train_loss {:.4} train_acc {:.4} val_loss {:.4} val_acc {:.4}",
                    row.epoch, row.train_loss, row.train_acc, row.val_loss, row.val_acc
                );
            }
            ensure_parent(&checkpoint)?;
            trainer.write_history(&history)?;
            let best = trainer.best_model();
            save_checkpoint(&best, &checkpoint)?;
            println!(
                "checkpoint: {} (best epoch {}) history: {}",
                checkpoint.display(),
                trainer.best_epoch(),
                history.display()
            );
            Ok(())
        }

        Cmd::Eval {
            checkpoint,
            images,
            split,
            manifest,
            whitelist,
            threshold,
            report,
        } => {
            let checkpoint = checkpoint.unwrap_or_else(|| pc.workdir.join("model.glyf"));
            let images = images.unwrap_or_else(|| pc.workdir.join("images"));
            let report = report.unwrap_or_else(|| pc.workdir.join("report"));
            let split = parse_split(split.as_deref().unwrap_or("test"))?;
            let model = load_checkpoint(&checkpoint)?;
            let set = ImageSet::open(&images.join(split.as_str()))?;
            let model_report = evaluate_model(&model, &set, pc.train.batch_size)?;
            let mut rows: Vec<(&str, &EvalReport)> = vec![("attention-cnn", &model_report)];

            let baseline_report = match whitelist {
                Some(list_path) => {
                    let manifest_path = manifest.unwrap_or_else(|| pc.workdir.join("manifest.csv"));
                    let manifest = read_manifest(&manifest_path)?;
                    let (whitelist, _) = load_domains(&list_path)?;
                    let whitelist: Vec<String> = whitelist.into_iter().map(|r| r.text).collect();
                    let cutoff = threshold.unwrap_or(2);
                    let scores = baseline_scores(&manifest, split, &whitelist, cutoff)?;
                    Some(EvalReport::from_scores(&scores, 0.5)?)
                }
                None => None,
            };
            if let Some(r) = &baseline_report {
                rows.push(("edit-distance", r));
            }

            let table = comparison_table(&rows);
            print!("{table}");
            ensure_parent(&report)?;
            let txt = report.with_extension("txt");
            fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
            let csv = report.with_extension("csv");
            fs::write(&csv, model_report.csv()).map_err(|e| Error::io(&csv, e))?;
            if let Some(r) = &baseline_report {
                let path = baseline_csv_path(&report);
                fs::write(&path, r.csv()).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        }

        Cmd::Predict { domain, checkpoint } => {
            let checkpoint = checkpoint.unwrap_or_else(|| pc.workdir.join("model.glyf"));
            let model = load_checkpoint(&checkpoint)?;
            // The checkpoint fixes the input geometry; font settings still
            // come from the config.
            pc.render.width = model.cfg.input_w;
            pc.render.height = model.cfg.input_h;
            pc.render.validate()?;
            let (p, label) = predict_domain(&model, &domain, &pc.render)?;
            println!("{} {p:.2}", label_word(label));
            Ok(())
        }

        Cmd::Baseline {
            domain,
            whitelist,
            threshold,
        } => {
            let (records, _) = load_domains(&whitelist)?;
            let texts: Vec<String> = records.into_iter().map(|r| r.text).collect();
            let (label, distance) = baseline_classify(&domain, &texts, threshold.unwrap_or(2))?;
            println!("{} distance={distance}", label_word(label));
            Ok(())
        }

        Cmd::Gradcheck => {
            let report = gradcheck_suite()?;
            for rec in &report.records {
                println!(
                    "{:<24} max_rel_err {:.3e} ({} coords) {}",
                    rec.name,
                    rec.max_rel_err,
                    rec.coords_checked,
                    if rec.pass() { "ok" } else { "FAIL" }
                );
            }
            let passed = report.records.iter().filter(|r| r.pass()).count();
            println!("gradcheck: {passed}/{} layers pass", report.records.len());
            if !report.pass() {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}

fn label_word(label: u8) -> &'static str {
    if label == LABEL_REAL {
        "real"
    } else {
        "homoglyph"
    }
}

fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Error::InvalidConfig(format!(
            "split must be train, val, or test, got {other:?}"
        ))),
    }
}

/// Baseline scores for one split's domain strings: 1/(1+distance) to the
/// nearest whitelisted domain, paired with the true label.
fn baseline_scores(
    manifest: &glyphnet::corpus::SplitManifest,
    split: Split,
    whitelist: &[String],
    cutoff: usize,
) -> Result<Vec<(f64, u8)>> {
    use rayon::prelude::*;
    let rows: Vec<&DomainRecord> = manifest
        .rows()
        .filter(|(_, s)| *s == split)
        .map(|(r, _)| r)
        .collect();
    rows.par_iter()
        .map(|rec| {
            let (_, distance) = baseline_classify(&rec.text, whitelist, cutoff)?;
            Ok((baseline_score(distance), rec.label))
        })
        .collect()
}

fn baseline_csv_path(report: &Path) -> PathBuf {
    let mut name = report
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    name.push_str("_baseline.csv");
    report.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}
