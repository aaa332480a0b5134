//! Deterministic rasterization of domain strings plus PGM file I/O.
//!
//! The font ships inside the binary (DejaVu Sans, checksum-pinned) so the
//! same text renders to the same bytes on every machine; system fonts are
//! never consulted.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use ab_glyph::{point, Font, FontRef, PxScale, ScaleFont};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corpus::{Split, SplitManifest};
use crate::error::{Error, Result};

pub static FONT_BYTES: &[u8] = include_bytes!("../assets/DejaVuSans.ttf");
pub const FONT_SHA256: &str = "690243adfefe0ce154b547db6205794bd30ac4277275179517a90994f4980648";

fn font() -> &'static FontRef<'static> {
    static FONT: OnceLock<FontRef<'static>> = OnceLock::new();
    FONT.get_or_init(|| {
        let digest = Sha256::digest(FONT_BYTES);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, FONT_SHA256, "embedded font asset is corrupted");
        FontRef::try_from_slice(FONT_BYTES).expect("embedded font must parse")
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub font_px: u32,
    /// Left edge of the text run ("middle left" anchor).
    pub left_margin: usize,
    pub foreground: u8,
    pub background: u8,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 150,
            height: 150,
            font_px: 28,
            left_margin: 4,
            foreground: 255,
            background: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "render size {}x{} must be positive",
                self.width, self.height
            )));
        }
        if self.font_px as usize >= self.height {
            return Err(Error::InvalidConfig(format!(
                "font_px {} must be smaller than image height {}",
                self.font_px, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, one byte per pixel.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Rasterize `text`; returns the image and the count of codepoints the font
/// has no glyph for (drawn as the font's .notdef fallback).
pub fn render_counted(text: &str, cfg: &RenderConfig) -> (GrayImage, usize) {
    let mut img = GrayImage::new(cfg.width, cfg.height, cfg.background);
    let font = font();
    let scaled = font.as_scaled(PxScale::from(cfg.font_px as f32));
    // The baseline sits at the vertical center; glyphs past any edge clip.
    let baseline = cfg.height as f32 / 2.0;
    let mut pen_x = cfg.left_margin as f32;
    let mut missing = 0usize;
    let mut prev = None;
    for c in text.chars() {
        let id = font.glyph_id(c);
        if id.0 == 0 {
            missing += 1;
        }
        if let Some(p) = prev {
            pen_x += scaled.kern(p, id);
        }
        let glyph = id.with_scale_and_position(scaled.scale(), point(pen_x, baseline));
        if let Some(outlined) = font.outline_glyph(glyph) {
            let bounds = outlined.px_bounds();
            let (w, h, fg) = (cfg.width as i32, cfg.height as i32, cfg.foreground);
            outlined.draw(|gx, gy, cov| {
                let px = bounds.min.x as i32 + gx as i32;
                let py = bounds.min.y as i32 + gy as i32;
                if px >= 0 && px < w && py >= 0 && py < h {
                    let v = (cov * fg as f32).round() as u8;
                    let cell = &mut img.pixels[py as usize * cfg.width + px as usize];
                    *cell = (*cell).max(v);
                }
            });
        }
        pen_x += scaled.h_advance(id);
        prev = Some(id);
    }
    (img, missing)
}

pub fn render(text: &str, cfg: &RenderConfig) -> GrayImage {
    render_counted(text, cfg).0
}

/// Binary PGM, exactly `P5\n<w> <h>\n255\n` + raw bytes.
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
        w.write_all(&img.pixels)?;
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
        .map_err(|reason| Error::MalformedImage(format!("{}: {reason}", path.display())))
}

pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(bytes)? != "P5" {
        return Err("bad magic, expected P5".into());
    }
    let width: usize = token(bytes)?.parse().map_err(|_| "bad width".to_string())?;
    let height: usize = token(bytes)?
        .parse()
        .map_err(|_| "bad height".to_string())?;
    let maxval: usize = token(bytes)?
        .parse()
        .map_err(|_| "bad maxval".to_string())?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = width * height;
    let payload = bytes.len().saturating_sub(pos);
    if payload != expected {
        return Err(format!("expected {expected} pixel bytes, found {payload}"));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: bytes[pos..].to_vec(),
    })
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct RenderStats {
    pub rendered: usize,
    pub missing_glyphs: usize,
}

pub const INDEX_FILE: &str = "index.csv";

/// Render every manifest record into `out_dir/<split>/NNNNNNN_<label>.pgm`
/// and write one `index.csv` (header `path,label`) per split directory.
pub fn render_manifest(
    manifest: &SplitManifest,
    cfg: &RenderConfig,
    out_dir: &Path,
) -> Result<RenderStats> {
    cfg.validate()?;
    let mut stats = RenderStats::default();
    for (split, records) in [
        (Split::Train, &manifest.train),
        (Split::Val, &manifest.val),
        (Split::Test, &manifest.test),
    ] {
        let dir = out_dir.join(split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let results: Vec<(String, u8, usize)> = records
            .par_iter()
            .enumerate()
            .map(|(i, rec)| {
                let (img, missing) = render_counted(&rec.text, cfg);
                let name = format!("{i:07}_{}.pgm", rec.label);
                write_pgm(&img, &dir.join(&name)).map(|_| (name, rec.label, missing))
            })
            .collect::<Result<_>>()?;
        let index_path = dir.join(INDEX_FILE);
        let file = File::create(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(&index_path, e);
        writeln!(w, "path,label").map_err(io_err)?;
        for (name, label, missing) in &results {
            writeln!(w, "{name},{label}").map_err(io_err)?;
            stats.rendered += 1;
            stats.missing_glyphs += missing;
        }
        w.flush().map_err(io_err)?;
    }
    Ok(stats)
}

/// Read one split's `index.csv`; rows come back as (image path, label).
pub fn read_index(dir: &Path) -> Result<Vec<(PathBuf, u8)>> {
    let index_path = dir.join(INDEX_FILE);
    let content = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            if line != "path,label" {
                return Err(Error::CsvFormat {
                    path: index_path,
                    line: 1,
                    reason: "expected header path,label".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (name, label) = line.rsplit_once(',').ok_or_else(|| Error::CsvFormat {
            path: index_path.clone(),
            line: i + 1,
            reason: "expected path,label".into(),
        })?;
        let label: u8 = label.parse().map_err(|_| Error::CsvFormat {
            path: index_path.clone(),
            line: i + 1,
            reason: format!("bad label {label:?}"),
        })?;
        rows.push((dir.join(name), label));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_dataset, DomainRecord};
    use crate::glyphs::GlyphPool;

    #[test]
    fn empty_text_renders_pure_background() {
        let (img, missing) = render_counted("", &RenderConfig::default());
        assert_eq!(img.pixels.len(), 150 * 150);
        assert!(img.pixels.iter().all(|&p| p == 0));
        assert_eq!(missing, 0);
    }

    #[test]
    fn google_render_has_ink_and_differs_from_homoglyph() {
        let cfg = RenderConfig::default();
        let a = render("google.com", &cfg);
        assert_eq!((a.width, a.height), (150, 150));
        assert!(a.pixels.iter().any(|&p| p == 255), "no saturated ink");
        let b = render("go0gle.com", &cfg);
        assert_ne!(a.pixels, b.pixels);
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = RenderConfig::default();
        assert_eq!(render("example.org", &cfg), render("example.org", &cfg));
    }

    #[test]
    fn ink_sits_around_the_vertical_center() {
        let cfg = RenderConfig::default();
        let img = render("x", &cfg);
        let ink_rows: Vec<usize> = (0..img.height)
            .filter(|&y| (0..img.width).any(|x| img.get(x, y) > 0))
            .collect();
        // "x" has no ascender/descender: it spans from roughly x-height above
        // the baseline (row 75) up to the baseline.
        assert!(!ink_rows.is_empty());
        assert!(*ink_rows.first().unwrap() >= 75 - cfg.font_px as usize);
        assert!(*ink_rows.last().unwrap() <= 76);
    }

    #[test]
    fn text_starts_at_the_left_margin() {
        let cfg = RenderConfig::default();
        let img = render("lll", &cfg);
        let first_ink_col = (0..img.width)
            .find(|&x| (0..img.height).any(|y| img.get(x, y) > 0))
            .unwrap();
        assert!(
            (cfg.left_margin..cfg.left_margin + 4).contains(&first_ink_col),
            "ink starts at column {first_ink_col}"
        );
    }

    #[test]
    fn background_majority_for_forty_char_domains() {
        let cfg = RenderConfig::default();
        let img = render("wwwwwwwwwwmmmmmmmmmm.wwwwwwwwwwmmmmm.com", &cfg);
        let ink = img.pixels.iter().filter(|&&p| p > 0).count();
        assert!(ink * 2 < img.pixels.len(), "ink pixels {ink} are majority");
    }

    #[test]
    fn overlong_text_clips_without_panicking() {
        let cfg = RenderConfig::default();
        let long: String = "m".repeat(200);
        let img = render(&long, &cfg);
        // The run is clipped at the right edge; the buffer never grows.
        assert_eq!(img.pixels.len(), 150 * 150);
    }

    #[test]
    fn unmapped_codepoint_bumps_the_tally() {
        // U+0378 is unassigned in Unicode, so no font maps it.
        let (_, missing) = render_counted("a\u{0378}b", &RenderConfig::default());
        assert_eq!(missing, 1);
    }

    #[test]
    fn font_covers_every_default_pool_candidate() {
        let pool = GlyphPool::default_pool();
        let cfg = RenderConfig::default();
        for cand in pool.all_candidates() {
            let (img, missing) = render_counted(cand, &cfg);
            assert_eq!(missing, 0, "font lacks a glyph in candidate {cand:?}");
            assert!(
                img.pixels.iter().any(|&p| p > 0),
                "candidate {cand:?} rendered blank"
            );
        }
        for base in pool.bases() {
            let (_, missing) = render_counted(&base.to_string(), &cfg);
            assert_eq!(missing, 0, "font lacks base glyph {base:?}");
        }
    }

    #[test]
    fn every_default_pool_candidate_renders_distinct_from_its_base() {
        // If a substitution leaves the rendering untouched, the generated
        // dataset would label identical images both real and homoglyph and
        // nothing could ever separate the classes.
        let pool = GlyphPool::default_pool();
        let cfg = RenderConfig::default();
        for base in pool.bases() {
            let base_img = render(&base.to_string(), &cfg);
            for cand in pool.candidates(base).unwrap() {
                let cand_img = render(cand, &cfg);
                let diff: u64 = base_img
                    .pixels
                    .iter()
                    .zip(&cand_img.pixels)
                    .map(|(&a, &b)| (a as i64 - b as i64).unsigned_abs())
                    .sum();
                assert!(
                    diff > 0,
                    "candidate {cand:?} for base {base:?} renders identically"
                );
            }
        }
    }

    #[test]
    fn pgm_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = GrayImage {
            width: 2,
            height: 2,
            pixels: vec![0, 255, 128, 7],
        };
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn random_images_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let dir = tempfile::tempdir().unwrap();
        for i in 0..50 {
            let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
            let img = GrayImage {
                width: w,
                height: h,
                pixels: (0..w * h).map(|_| rng.gen()).collect(),
            };
            let path = dir.path().join(format!("{i}.pgm"));
            write_pgm(&img, &path).unwrap();
            assert_eq!(read_pgm(&path).unwrap(), img);
        }
    }

    #[test]
    fn corrupt_magic_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P6\n2 2\n255\n0000").unwrap();
        assert!(matches!(
            read_pgm(&path).unwrap_err(),
            Error::MalformedImage(_)
        ));
        std::fs::write(&path, b"P5\n2 2\n255\n00").unwrap();
        assert!(matches!(
            read_pgm(&path).unwrap_err(),
            Error::MalformedImage(_)
        ));
    }

    #[test]
    fn default_size_file_is_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        write_pgm(&GrayImage::new(150, 150, 0), &path).unwrap();
        let header_len = "P5\n150 150\n255\n".len();
        assert_eq!(
            std::fs::metadata(&path).unwrap().len(),
            (header_len + 150 * 150) as u64
        );
    }

    fn small_manifest() -> crate::corpus::SplitManifest {
        let records: Vec<DomainRecord> = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    DomainRecord::real(format!("site{i}.com"))
                } else {
                    DomainRecord::homoglyph(format!("s\u{0456}te{i}.com"), 1)
                }
            })
            .collect();
        split_dataset(records, (0.6, 0.2, 0.2), 1).unwrap()
    }

    #[test]
    fn manifest_rendering_writes_files_and_indexes() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_manifest();
        let cfg = RenderConfig {
            width: 48,
            height: 48,
            font_px: 12,
            ..RenderConfig::default()
        };
        let stats = render_manifest(&manifest, &cfg, dir.path()).unwrap();
        assert_eq!(stats.rendered, 10);
        assert_eq!(stats.missing_glyphs, 0);
        let train_rows = read_index(&dir.path().join("train")).unwrap();
        assert_eq!(train_rows.len(), manifest.train.len());
        for (path, label) in &train_rows {
            let img = read_pgm(path).unwrap();
            assert_eq!((img.width, img.height), (48, 48));
            assert!(*label == 0 || *label == 1);
            assert!(path
                .file_name()
                .unwrap()
                .to_str()
                .unwrap()
                .contains(&format!("_{label}")));
        }
    }

    #[test]
    fn manifest_rendering_is_reproducible() {
        let manifest = small_manifest();
        let cfg = RenderConfig {
            width: 32,
            height: 32,
            font_px: 10,
            ..RenderConfig::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        render_manifest(&manifest, &cfg, a.path()).unwrap();
        render_manifest(&manifest, &cfg, b.path()).unwrap();
        for split in ["train", "val", "test"] {
            let (da, db) = (a.path().join(split), b.path().join(split));
            let mut names: Vec<String> = std::fs::read_dir(&da)
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            names.sort();
            for name in names {
                let fa = std::fs::read(da.join(&name)).unwrap();
                let fb = std::fs::read(db.join(&name)).unwrap();
                assert_eq!(fa, fb, "{split}/{name} differs between runs");
            }
        }
    }

    #[test]
    fn embedded_font_checksum_matches_pin() {
        let digest = Sha256::digest(FONT_BYTES);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, FONT_SHA256);
    }

    fn golden_path() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/google.com.pgm")
    }

    #[test]
    fn google_matches_committed_golden_bytes() {
        let img = render("google.com", &RenderConfig::default());
        let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
        bytes.extend_from_slice(&img.pixels);
        let golden = std::fs::read(golden_path())
            .expect("golden file missing; run `cargo test regenerate_golden -- --ignored`");
        assert_eq!(
            bytes, golden,
            "render of google.com drifted from the golden file"
        );
    }

    /// Refreshes the committed golden file; only run deliberately.
    #[test]
    #[ignore]
    fn regenerate_golden() {
        let path = golden_path();
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_pgm(&render("google.com", &RenderConfig::default()), &path).unwrap();
    }
}
