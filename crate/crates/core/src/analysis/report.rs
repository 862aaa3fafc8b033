use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{pearson, permutation_pvalue};
use super::sweep::{read_records, SweepRecord};
use crate::error::{NcaError, Result};
use crate::rng::{derive_seed, RngStream};

/// Motion emerges when the hidden layer is at least twice as wide as the
/// state. The boundary D = 2C counts as dynamic.
pub fn classify_dynamic(channels: usize, hidden: usize) -> bool {
    hidden >= 2 * channels
}

pub const DEFAULT_PERMUTATIONS: usize = 10_000;
pub const MIN_ROWS: usize = 3;

pub const ESTIMATOR_DISCLAIMER: &str = "Motion strength is measured with Horn-Schunck flow; \
absolute values depend on the estimator and only orderings and correlations are comparable \
across studies.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub r_diff: f64,
    pub p_diff: f64,
    pub r_ratio: f64,
    pub p_ratio: f64,
    pub n_perm: usize,
    pub perm_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub correlation: CorrelationReport,
    /// Valid rows sorted by D/C (stable).
    pub rows: Vec<SweepRecord>,
    pub skipped: usize,
}

/// Correlates motion strength with D - C and D / C over successful rows.
///
/// The two permutation tests use sub-streams 0 (diff) and 1 (ratio) of
/// `perm_seed`.
pub fn correlate(records: &[SweepRecord], n_perm: usize, perm_seed: u64) -> Result<SweepReport> {
    let mut rows: Vec<SweepRecord> = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        match r.psi {
            Some(psi) if r.is_ok() && psi.is_finite() => rows.push(r.clone()),
            _ => {
                log::warn!(
                    "skipping {} C={} D={}: status {}",
                    r.target,
                    r.channels,
                    r.hidden,
                    r.status
                );
                skipped += 1;
            }
        }
    }
    if rows.len() < MIN_ROWS {
        return Err(NcaError::InsufficientData {
            found: rows.len(),
            needed: MIN_ROWS,
        });
    }
    let psi: Vec<f64> = rows.iter().map(|r| r.psi.unwrap_or_default()).collect();
    let diff: Vec<f64> = rows.iter().map(|r| r.diff as f64).collect();
    let ratio: Vec<f64> = rows.iter().map(|r| r.ratio).collect();

    let r_diff = pearson(&diff, &psi)?;
    let p_diff = permutation_pvalue(
        &diff,
        &psi,
        n_perm,
        &mut RngStream::new(derive_seed(perm_seed, 0)),
    )?;
    let r_ratio = pearson(&ratio, &psi)?;
    let p_ratio = permutation_pvalue(
        &ratio,
        &psi,
        n_perm,
        &mut RngStream::new(derive_seed(perm_seed, 1)),
    )?;

    rows.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    Ok(SweepReport {
        correlation: CorrelationReport {
            n: psi.len(),
            r_diff,
            p_diff,
            r_ratio,
            p_ratio,
            n_perm,
            perm_seed,
        },
        rows,
        skipped,
    })
}

/// Reads a sweep CSV and correlates it. Malformed rows are skipped with a
/// warning.
pub fn report(csv: impl AsRef<Path>, n_perm: usize, perm_seed: u64) -> Result<SweepReport> {
    correlate(&read_records(csv.as_ref())?, n_perm, perm_seed)
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.correlation).expect("report serializes")
    }

    /// Human-readable table sorted by D/C with the classifier's verdict.
    pub fn summary(&self) -> String {
        let c = &self.correlation;
        let mut s = String::new();
        let _ = writeln!(s, "{ESTIMATOR_DISCLAIMER}");
        let _ = writeln!(
            s,
            "n = {} (skipped {}), permutations = {}, seed = {}",
            c.n, self.skipped, c.n_perm, c.perm_seed
        );
        let _ = writeln!(s, "psi vs D-C: r = {:.4}, p = {:.4}", c.r_diff, c.p_diff);
        let _ = writeln!(s, "psi vs D/C: r = {:.4}, p = {:.4}", c.r_ratio, c.p_ratio);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:>5} {:>6} {:>8} {:>12} {:>8}",
            "target", "C", "D", "D-C", "D/C", "psi", "dynamic"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:>5} {:>5} {:>6} {:>8.3} {:>12.6} {:>8}",
                r.target,
                r.channels,
                r.hidden,
                r.diff,
                r.ratio,
                r.psi.unwrap_or(f64::NAN),
                if classify_dynamic(r.channels, r.hidden) {
                    "yes"
                } else {
                    "no"
                }
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(c: usize, d: usize, psi: f64) -> SweepRecord {
        SweepRecord {
            target: "t".into(),
            channels: c,
            hidden: d,
            diff: d as i64 - c as i64,
            ratio: d as f64 / c as f64,
            psi: Some(psi),
            final_loss: Some(0.1),
            seed: 0,
            epochs: 1,
            wall_ms: 0,
            status: "ok".into(),
        }
    }

    #[test]
    fn classifier_examples() {
        assert!(classify_dynamic(24, 96));
        assert!(!classify_dynamic(96, 128));
        assert!(classify_dynamic(8, 16));
        assert!(!classify_dynamic(8, 15));
    }

    proptest! {
        #[test]
        fn classifier_depends_on_ratio_only(c in 1usize..200, d in 1usize..400, k in 1usize..20) {
            prop_assert_eq!(classify_dynamic(c, d), classify_dynamic(k * c, k * d));
            prop_assert_eq!(classify_dynamic(c, d), d as f64 / c as f64 >= 2.0);
        }
    }

    #[test]
    fn psi_equal_to_diff() {
        let rows: Vec<SweepRecord> = [(8, 16), (8, 64), (16, 32), (24, 96)]
            .iter()
            .map(|&(c, d)| row(c, d, (d - c) as f64))
            .collect();
        let rep = correlate(&rows, 100, 0).unwrap();
        assert_eq!(rep.correlation.r_diff, 1.0);
        assert_eq!(rep.correlation.n, 4);
        let ratios: Vec<f64> = rep.rows.iter().map(|r| r.ratio).collect();
        assert!(ratios.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn too_few_rows() {
        let mut rows = vec![row(8, 16, 1.0), row(8, 32, 2.0)];
        assert!(matches!(
            correlate(&rows, 100, 0),
            Err(NcaError::InsufficientData {
                found: 2,
                needed: 3
            })
        ));
        let mut failed = row(8, 64, 0.0);
        failed.psi = None;
        failed.status = "error: boom".into();
        rows.push(failed);
        assert!(correlate(&rows, 100, 0).is_err());
    }

    #[test]
    fn csv_with_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(
            &path,
            "target,C,D,diff,ratio,psi,final_loss,seed,epochs,wall_ms,status\n\
             t,8,16,8,2,0.5,0.1,1,10,0,ok\n\
             t,8,32,24,4,0.9,0.1,2,10,0,ok\n\
             t,8,oops,24,4,0.9,0.1,2,10,0,ok\n\
             t,16,16,0,1,,,3,10,0,error: diverged\n\
             t,16,64,48,4,1.1,0.1,4,10,0,ok\n",
        )
        .unwrap();
        let rep = report(&path, 200, 5).unwrap();
        assert_eq!(rep.correlation.n, 3);
        assert_eq!(rep.skipped, 1);
        let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        for key in [
            "n",
            "r_diff",
            "p_diff",
            "r_ratio",
            "p_ratio",
            "n_perm",
            "perm_seed",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let text = rep.summary();
        assert!(text.contains("estimator"));
        assert!(text.lines().last().unwrap().contains("yes"));
        let again = report(&path, 200, 5).unwrap();
        assert_eq!(rep.correlation, again.correlation);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            report(&path, 100, 0),
            Err(NcaError::Format { .. })
        ));
    }
}
