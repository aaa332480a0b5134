//! Domain-list ingestion, validation, and the seeded train/val/test split.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const LABEL_REAL: u8 = 1;
pub const LABEL_HOMOGLYPH: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DomainRecord {
    pub text: String,
    /// 1 = real, 0 = homoglyph.
    pub label: u8,
    /// Substitution sites; 0 for real records.
    pub noise_k: u8,
}

impl DomainRecord {
    pub fn real(text: impl Into<String>) -> Self {
        DomainRecord {
            text: text.into(),
            label: LABEL_REAL,
            noise_k: 0,
        }
    }

    pub fn homoglyph(text: impl Into<String>, noise_k: u8) -> Self {
        DomainRecord {
            text: text.into(),
            label: LABEL_HOMOGLYPH,
            noise_k,
        }
    }
}

/// ASCII is restricted to letters/digits/hyphen/dot; any non-ASCII codepoint
/// is allowed because generated homoglyph output re-enters this pipeline.
pub fn valid_domain(text: &str) -> bool {
    !text.is_empty()
        && text.chars().all(|c| {
            !c.is_whitespace()
                && !c.is_control()
                && (!c.is_ascii() || c.is_ascii_alphanumeric() || c == '-' || c == '.')
        })
}

/// One domain per line; '#' comments and blank lines are ignored. Lines are
/// trimmed and lowercased, duplicates keep their first occurrence, and every
/// line failing validation bumps the returned skip tally instead of aborting.
pub fn load_domains(path: &Path) -> Result<(Vec<DomainRecord>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut skipped = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let lowered = trimmed.to_lowercase();
        if !valid_domain(&lowered) {
            skipped += 1;
            continue;
        }
        if seen.insert(lowered.clone()) {
            records.push(DomainRecord::real(lowered));
        }
    }
    Ok((records, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitManifest {
    pub train: Vec<DomainRecord>,
    pub val: Vec<DomainRecord>,
    pub test: Vec<DomainRecord>,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub warnings: Vec<String>,
}

impl SplitManifest {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> impl Iterator<Item = (&DomainRecord, Split)> {
        self.train
            .iter()
            .map(|r| (r, Split::Train))
            .chain(self.val.iter().map(|r| (r, Split::Val)))
            .chain(self.test.iter().map(|r| (r, Split::Test)))
    }
}

/// Partition sizes: floor(n * r) for val and test, remainder to train.
///
/// The small epsilon absorbs binary representation error so that e.g.
/// 4,000,000 * 0.7 lands on 2,800,000 exactly as the real-valued floor would.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let floor_ratio = |r: f64| ((n as f64) * r + 1e-6).floor() as usize;
    let val = floor_ratio(ratios.1);
    let test = floor_ratio(ratios.2);
    (n - val - test, val, test)
}

pub fn split_dataset(
    mut records: Vec<DomainRecord>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitManifest> {
    if records.is_empty() {
        return Err(Error::EmptyInput("split_dataset"));
    }
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let n = records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    let (n_train, n_val, n_test) = split_sizes(n, ratios);

    let mut warnings = Vec::new();
    if n >= 10 {
        for (name, size, ratio) in [
            ("train", n_train, rt),
            ("val", n_val, rv),
            ("test", n_test, rs),
        ] {
            if size == 0 && ratio > 0.0 {
                warnings.push(format!(
                    "degenerate split: {name} ratio {ratio} yields 0 of {n} records"
                ));
            }
        }
    }

    let test = records.split_off(n_train + n_val);
    let val = records.split_off(n_train);
    Ok(SplitManifest {
        train: records,
        val,
        test,
        seed,
        ratios,
        warnings,
    })
}

/// Seeded uniform subsample without replacement, preserving input order.
pub fn subsample(records: Vec<DomainRecord>, keep: usize, seed: u64) -> Vec<DomainRecord> {
    if keep >= records.len() {
        return records;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, records.len(), keep).into_vec();
    picks.sort_unstable();
    let mut picks = picks.into_iter().peekable();
    records
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| {
            if picks.peek() == Some(&i) {
                picks.next();
                Some(r)
            } else {
                None
            }
        })
        .collect()
}

pub const MANIFEST_HEADER: &str = "text,label,noise_k,split";

/// Rows with `split = None` (an unsplit corpus) serialize with an empty
/// split column.
pub fn write_records_csv<'a>(
    path: &Path,
    rows: impl Iterator<Item = (&'a DomainRecord, Option<Split>)>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{MANIFEST_HEADER}").map_err(io_err)?;
    for (rec, split) in rows {
        writeln!(
            w,
            "{},{},{},{}",
            rec.text,
            rec.label,
            rec.noise_k,
            split.map_or("", Split::as_str)
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<(DomainRecord, Option<Split>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |line: usize, reason: String| Error::CsvFormat {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim_end() != MANIFEST_HEADER {
                return Err(csv_err(
                    lineno,
                    format!("expected header {MANIFEST_HEADER:?}"),
                ));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(csv_err(
                lineno,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let label: u8 = fields[1]
            .parse()
            .map_err(|_| csv_err(lineno, format!("bad label {:?}", fields[1])))?;
        let noise_k: u8 = fields[2]
            .parse()
            .map_err(|_| csv_err(lineno, format!("bad noise_k {:?}", fields[2])))?;
        match (label, noise_k) {
            (1, 0) | (0, 1) | (0, 2) => {}
            _ => {
                return Err(csv_err(
                    lineno,
                    format!("invalid label/noise_k pair {label}/{noise_k}"),
                ))
            }
        }
        if !valid_domain(fields[0]) {
            return Err(csv_err(lineno, format!("invalid domain {:?}", fields[0])));
        }
        let split = match fields[3] {
            "" => None,
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            other => return Err(csv_err(lineno, format!("unknown split {other:?}"))),
        };
        rows.push((
            DomainRecord {
                text: fields[0].to_string(),
                label,
                noise_k,
            },
            split,
        ));
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, manifest: &SplitManifest) -> Result<()> {
    write_records_csv(path, manifest.rows().map(|(r, s)| (r, Some(s))))
}

/// Rebuild the three partitions from a manifest CSV. Seed and ratios are not
/// stored in the file; the returned manifest records the observed proportions
/// and a zero seed.
pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
    let rows = read_records_csv(path)?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (rec, split)) in rows.into_iter().enumerate() {
        match split {
            Some(Split::Train) => train.push(rec),
            Some(Split::Val) => val.push(rec),
            Some(Split::Test) => test.push(rec),
            None => {
                return Err(Error::CsvFormat {
                    path: path.to_path_buf(),
                    line: i + 2,
                    reason: "record has no split assignment".into(),
                })
            }
        }
    }
    let n = (train.len() + val.len() + test.len()) as f64;
    let ratios = if n > 0.0 {
        (
            train.len() as f64 / n,
            val.len() as f64 / n,
            test.len() as f64 / n,
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok(SplitManifest {
        train,
        val,
        test,
        seed: 0,
        ratios,
        warnings: Vec::new(),
    })
}
