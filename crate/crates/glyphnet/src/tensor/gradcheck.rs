//! Central-difference gradient verification (64-bit only).

use rand_chacha::ChaCha8Rng;
use std::fmt;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_MAX_COORDS: usize = 512;

#[derive(Debug, Clone)]
pub struct GradCheckRecord {
    pub name: String,
    pub coords_checked: usize,
    pub coords_skipped: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckRecord {
    pub fn pass(&self) -> bool {
        self.coords_checked > 0 && self.max_rel_err < GRADCHECK_TOL
    }
}

impl fmt::Display for GradCheckRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} max_rel_err={:.3e} ({} coords, {} skipped) worst@{} analytic={:.6e} numeric={:.6e}",
            self.name,
            if self.pass() { "ok" } else { "FAIL" },
            self.max_rel_err,
            self.coords_checked,
            self.coords_skipped,
            self.worst_coord,
            self.worst_analytic,
            self.worst_numeric,
        )
    }
}

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub records: Vec<GradCheckRecord>,
}

impl GradCheckReport {
    pub fn push(&mut self, record: GradCheckRecord) {
        self.records.push(record);
    }

    pub fn pass(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.pass())
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        write!(
            f,
            "gradcheck: {}",
            if self.pass() { "all passed" } else { "FAILED" }
        )
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compare `analytic` against central differences of `eval` over `theta`.
///
/// At most [`GRADCHECK_MAX_COORDS`] coordinates are checked, chosen without
/// replacement from `rng`. `skip` excludes coordinates sitting on kinks
/// (relu inputs near zero, near-tied max-pool windows) where the two-sided
/// difference straddles a non-differentiable point.
pub fn central_diff_check<F, K>(
    name: &str,
    theta: &mut [f64],
    analytic: &[f64],
    rng: &mut ChaCha8Rng,
    skip: K,
    mut eval: F,
) -> GradCheckRecord
where
    F: FnMut(&[f64]) -> f64,
    K: Fn(usize) -> bool,
{
    assert_eq!(
        theta.len(),
        analytic.len(),
        "gradcheck {name}: analytic gradient length mismatch"
    );
    let coords: Vec<usize> = if theta.len() > GRADCHECK_MAX_COORDS {
        rand::seq::index::sample(rng, theta.len(), GRADCHECK_MAX_COORDS).into_vec()
    } else {
        (0..theta.len()).collect()
    };

    let mut record = GradCheckRecord {
        name: name.to_string(),
        coords_checked: 0,
        coords_skipped: 0,
        max_rel_err: 0.0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for i in coords {
        if skip(i) {
            record.coords_skipped += 1;
            continue;
        }
        let saved = theta[i];
        theta[i] = saved + GRADCHECK_STEP;
        let plus = eval(theta);
        theta[i] = saved - GRADCHECK_STEP;
        let minus = eval(theta);
        theta[i] = saved;
        let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
        let err = rel_err(analytic[i], numeric);
        record.coords_checked += 1;
        if err > record.max_rel_err {
            record.max_rel_err = err;
            record.worst_coord = i;
            record.worst_analytic = analytic[i];
            record.worst_numeric = numeric;
        }
    }
    record
}
