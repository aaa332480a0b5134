//! Confusable-glyph pool, Gaussian homoglyph generation, and the
//! edit-distance baseline detector.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::corpus::{DomainRecord, LABEL_REAL};
use crate::derive_seed;
use crate::error::{Error, Result};

/// Base character -> candidate glyph strings, ordered most-visually-similar
/// first. Candidates may span two codepoints ("cl" for "d").
#[derive(Debug, Clone)]
pub struct GlyphPool {
    entries: BTreeMap<char, Vec<String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationConfig {
    /// Requested substitution sites, 1 or 2.
    pub noise_k: u8,
    /// Gaussian width as a fraction of the candidate-list length.
    pub sigma_scale: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            noise_k: 1,
            sigma_scale: 1.0 / 3.0,
            seed: 0,
        }
    }
}

impl GlyphPool {
    pub fn from_entries(entries: impl IntoIterator<Item = (char, Vec<String>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (base, cands) in entries {
            if cands.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "glyph pool base {base:?} has no candidates"
                )));
            }
            if cands.iter().any(|c| c.chars().eq([base])) {
                return Err(Error::InvalidConfig(format!(
                    "glyph pool base {base:?} lists itself as a candidate"
                )));
            }
            map.insert(base, cands);
        }
        Ok(GlyphPool { entries: map })
    }

    /// The built-in pool: the showcase substitutions (o->0/θ, l->1, d->cl)
    /// plus Latin/Cyrillic/Greek lookalikes covering a-z.
    ///
    /// Candidate order is most-visually-similar first, measured as summed
    /// absolute pixel difference against the base glyph when rendered with
    /// the bundled font at the default size. Lookalikes whose outlines are
    /// bit-identical to the base in that font (e.g. Cyrillic а, е, о, р, с)
    /// are deliberately absent: a substitution must change at least one
    /// pixel or the rendered dataset would carry contradictory labels on
    /// identical images.
    pub fn default_pool() -> Self {
        let raw: &[(char, &[&str])] = &[
            ('a', &["\u{0105}", "\u{00E4}", "\u{0251}", "\u{03B1}"]), // ą ä ɑ α
            ('b', &["\u{0185}", "\u{1E05}", "\u{0253}", "\u{042C}"]), // ƅ ḅ ɓ Ь
            ('c', &["\u{010B}", "\u{00E7}", "\u{0188}", "\u{0255}"]), // ċ ç ƈ ɕ
            ('d', &["\u{1E0B}", "\u{0111}", "\u{0257}", "\u{0501}", "cl"]), // ḋ đ ɗ ԁ cl
            ('e', &["\u{0117}", "\u{00E8}", "\u{03B5}", "\u{04BD}"]), // ė è ε ҽ
            ('f', &["\u{1E1F}", "\u{017F}", "\u{0192}"]),             // ḟ ſ ƒ
            ('g', &["\u{0581}", "\u{0261}", "\u{0123}", "\u{01E5}"]), // ց ɡ ģ ǥ
            ('h', &["\u{1E25}", "\u{0266}", "\u{0127}"]),             // ḥ ɦ ħ
            ('i', &["\u{0131}", "\u{00EC}", "\u{00ED}", "\u{0269}"]), // ı ì í ɩ
            ('j', &["\u{0249}", "\u{0135}", "\u{029D}"]),             // ɉ ĵ ʝ
            ('k', &["\u{1E33}", "\u{0137}", "\u{043A}", "\u{03BA}"]), // ḳ ķ к κ
            ('l', &["\u{013A}", "\u{013C}", "\u{01C0}", "1"]),        // ĺ ļ ǀ 1
            ('m', &["\u{1E43}", "\u{1E3F}", "\u{0271}", "rn"]),       // ṃ ḿ ɱ rn
            ('n', &["\u{1E45}", "\u{0144}", "\u{00F1}", "\u{043F}"]), // ṅ ń ñ п
            ('o', &["\u{022F}", "\u{03C3}", "\u{00F6}", "0", "\u{03B8}"]), // ȯ σ ö 0 θ
            ('p', &["\u{1E57}", "\u{03C1}", "\u{00FE}"]),             // ṗ ρ þ
            ('q', &["\u{0566}", "\u{024B}", "\u{01EB}"]),             // զ ɋ ǫ
            ('r', &["\u{1E5B}", "\u{0157}", "\u{0433}", "\u{0155}"]), // ṛ ŗ г ŕ
            ('s', &["\u{1E63}", "\u{015B}", "\u{015F}", "\u{0282}"]), // ṣ ś ş ʂ
            (
                't',
                &["\u{1E6D}", "\u{0165}", "\u{01AD}", "\u{0163}", "\u{0442}"],
            ), // ṭ ť ƭ ţ т
            ('u', &["\u{00FA}", "\u{0173}", "\u{00FC}", "\u{03C5}"]), // ú ų ü υ
            ('v', &["\u{1E7F}", "\u{0475}", "\u{2C71}", "\u{03BD}"]), // ṿ ѵ ⱱ ν
            ('w', &["\u{1E81}", "\u{0175}", "\u{0461}", "vv"]),       // ẁ ŵ ѡ vv
            ('x', &["\u{1E8B}", "\u{1E8D}", "\u{04FD}", "\u{03C7}"]), // ẋ ẍ ӽ χ
            ('y', &["\u{1EF5}", "\u{00FD}", "\u{0177}", "\u{03B3}"]), // ỵ ý ŷ γ
            ('z', &["\u{017C}", "\u{017A}", "\u{01B6}", "\u{0290}"]), // ż ź ƶ ʐ
        ];
        GlyphPool::from_entries(
            raw.iter()
                .map(|&(b, cands)| (b, cands.iter().map(|s| s.to_string()).collect())),
        )
        .expect("built-in pool is valid")
    }

    /// Lines of `base<TAB>cand1<TAB>cand2...`; '#' comments and blank lines
    /// allowed. Malformed lines are hard errors carrying the line number.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let base_field = fields.next().unwrap_or("");
            let mut base_chars = base_field.chars();
            let base = match (base_chars.next(), base_chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(Error::PoolFormat {
                        line: lineno,
                        reason: format!("base {base_field:?} must be a single codepoint"),
                    })
                }
            };
            let cands: Vec<String> = fields
                .filter(|f| !f.is_empty())
                .map(str::to_string)
                .collect();
            if cands.is_empty() {
                return Err(Error::PoolFormat {
                    line: lineno,
                    reason: "no TAB-separated candidates".into(),
                });
            }
            if cands.iter().any(|c| c.chars().count() > 2) {
                return Err(Error::PoolFormat {
                    line: lineno,
                    reason: "candidates are limited to 1-2 codepoints".into(),
                });
            }
            entries.push((base, cands));
        }
        GlyphPool::from_entries(entries).map_err(|e| Error::PoolFormat {
            line: 0,
            reason: e.to_string(),
        })
    }

    pub fn candidates(&self, base: char) -> Option<&[String]> {
        self.entries.get(&base).map(Vec::as_slice)
    }

    pub fn contains(&self, base: char) -> bool {
        self.entries.contains_key(&base)
    }

    pub fn bases(&self) -> impl Iterator<Item = char> + '_ {
        self.entries.keys().copied()
    }

    pub fn all_candidates(&self) -> impl Iterator<Item = &str> {
        self.entries.values().flatten().map(String::as_str)
    }
}

/// Draw x ~ Normal(0, (sigma_scale * m)^2) and return the candidate at index
/// min(floor(|x|), m - 1): the fold at zero biases toward the front of the
/// list, i.e. the most similar glyphs.
pub fn sample_glyph<'p>(
    pool: &'p GlyphPool,
    base: char,
    sigma_scale: f64,
    rng: &mut impl Rng,
) -> Result<&'p str> {
    let cands = pool.candidates(base).ok_or(Error::MissingBase(base))?;
    let m = cands.len();
    let normal = Normal::new(0.0, sigma_scale * m as f64)
        .map_err(|e| Error::InvalidConfig(format!("bad sigma_scale: {e}")))?;
    let x: f64 = normal.sample(rng).abs();
    let idx = (x.floor() as usize).min(m - 1);
    Ok(&cands[idx])
}

/// Substitute glyphs at `min(noise_k, available)` distinct positions chosen
/// uniformly among pool-covered characters, never touching the TLD (anything
/// after the final dot).
/// Whether at least one character before the TLD has pool candidates, i.e.
/// `generate_homoglyph` can produce a twin for this domain.
pub fn substitutable(domain: &str, pool: &GlyphPool) -> bool {
    let chars: Vec<char> = domain.chars().collect();
    let label_end = chars.iter().rposition(|&c| c == '.').unwrap_or(chars.len());
    chars[..label_end].iter().any(|&c| pool.contains(c))
}

pub fn generate_homoglyph(
    domain: &str,
    cfg: &GenerationConfig,
    pool: &GlyphPool,
    rng: &mut impl Rng,
) -> Result<DomainRecord> {
    if cfg.noise_k == 0 {
        return Err(Error::InvalidConfig("noise_k must be >= 1".into()));
    }
    let chars: Vec<char> = domain.chars().collect();
    let label_end = chars.iter().rposition(|&c| c == '.').unwrap_or(chars.len());
    let eligible: Vec<usize> = (0..label_end)
        .filter(|&i| pool.contains(chars[i]))
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoSubstitutablePosition {
            domain: domain.to_string(),
        });
    }
    let k = (cfg.noise_k as usize).min(eligible.len());
    let mut sites: Vec<usize> = rand::seq::index::sample(rng, eligible.len(), k)
        .iter()
        .collect();
    sites.sort_unstable();

    let mut out = String::with_capacity(domain.len() + 2);
    let mut site_iter = sites.iter().map(|&s| eligible[s]).peekable();
    for (i, &c) in chars.iter().enumerate() {
        if site_iter.peek() == Some(&i) {
            site_iter.next();
            out.push_str(sample_glyph(pool, c, cfg.sigma_scale, rng)?);
        } else {
            out.push(c);
        }
    }
    debug_assert_ne!(out, domain);
    Ok(DomainRecord::homoglyph(out, k as u8))
}

/// One homoglyph per source domain: the list is shuffled by `seed`, the first
/// ceil(n/2) domains get noise_k = 1 and the rest noise_k = 2. Each domain
/// draws from its own rng substream hash(seed, text), so the result does not
/// depend on thread count. Unsubstitutable domains are skipped and tallied.
pub fn generate_corpus(
    domains: &[DomainRecord],
    pool: &GlyphPool,
    base_cfg: &GenerationConfig,
    seed: u64,
) -> Result<(Vec<DomainRecord>, usize)> {
    if let Some(bad) = domains.iter().find(|d| d.label != LABEL_REAL) {
        return Err(Error::InvalidConfig(format!(
            "generate_corpus input must be real domains, got label {} for {:?}",
            bad.label, bad.text
        )));
    }
    let mut order: Vec<&DomainRecord> = domains.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        "generate.order",
    )));
    let single = order.len().div_ceil(2);

    let results: Vec<Option<DomainRecord>> = order
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let cfg = GenerationConfig {
                noise_k: if i < single { 1 } else { 2 },
                ..*base_cfg
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &d.text));
            match generate_homoglyph(&d.text, &cfg, pool, &mut rng) {
                Ok(rec) => Some(rec),
                Err(Error::NoSubstitutablePosition { .. }) => None,
                Err(_) => None,
            }
        })
        .collect();

    let skipped = results.iter().filter(|r| r.is_none()).count();
    Ok((results.into_iter().flatten().collect(), skipped))
}

/// Optimal-string-alignment Damerau-Levenshtein distance: unit-cost insert,
/// delete, substitute, and adjacent transpose, no substring re-edit.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (la, lb) = (a.len(), b.len());
    if la == 0 {
        return lb;
    }
    if lb == 0 {
        return la;
    }
    // Three rolling rows: i-2 (for transposition), i-1, i.
    let mut prev2: Vec<usize> = vec![0; lb + 1];
    let mut prev: Vec<usize> = (0..=lb).collect();
    let mut curr: Vec<usize> = vec![0; lb + 1];
    for i in 1..=la {
        curr[0] = i;
        for j in 1..=lb {
            let sub_cost = usize::from(a[i - 1] != b[j - 1]);
            let mut best = (prev[j] + 1) // delete
                .min(curr[j - 1] + 1) // insert
                .min(prev[j - 1] + sub_cost); // substitute
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                best = best.min(prev2[j - 2] + 1); // transpose
            }
            curr[j] = best;
        }
        std::mem::swap(&mut prev2, &mut prev);
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[lb]
}

/// Min distance against the whitelist; homoglyph iff 1 <= distance <=
/// threshold. Exact matches and far-away strings both count as real.
pub fn baseline_classify(
    candidate: &str,
    whitelist: &[String],
    threshold: usize,
) -> Result<(u8, usize)> {
    if whitelist.is_empty() {
        return Err(Error::EmptyInput("baseline whitelist"));
    }
    let mut best = usize::MAX;
    for w in whitelist {
        best = best.min(edit_distance(candidate, w));
        if best == 0 {
            break;
        }
    }
    let label = if best >= 1 && best <= threshold { 0 } else { 1 };
    Ok((label, best))
}
