//! Convergence tables across population sizes.

use std::io::Write;

use cmj_core::stats::{median_iqr, quantile_sorted};
use serde::{Deserialize, Serialize};

use crate::config::check_convergence_inputs;
use crate::error::CliResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub ancestors: usize,
    pub replicates: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln median` against `ln N`.
    pub slope: f64,
}

impl ConvergenceTable {
    /// Medians strictly decrease as `N` grows.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].median < w[0].median)
    }

    /// Rows `ancestors,replicates,median,q25,q75,iqr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "ancestors,replicates,median,q25,q75,iqr")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.ancestors, r.replicates, r.median, r.q25, r.q75, r.iqr
            )?;
        }
        Ok(())
    }
}

/// Per-`N` medians and IQRs of the sup-distances, sorted by `N`, and the
/// fitted log-log slope.
pub fn convergence_report(results: &[(usize, Vec<f64>)]) -> CliResult<ConvergenceTable> {
    let ns: Vec<usize> = results.iter().map(|(n, _)| *n).collect();
    let fewest = results.iter().map(|(_, d)| d.len()).min().unwrap_or(0);
    check_convergence_inputs(&ns, fewest)?;
    let mut rows: Vec<ConvergenceRow> = results
        .iter()
        .map(|(n, d)| {
            let mut sorted = d.clone();
            sorted.sort_by(f64::total_cmp);
            let (median, iqr) = median_iqr(d);
            ConvergenceRow {
                ancestors: *n,
                replicates: d.len(),
                median,
                q25: quantile_sorted(&sorted, 0.25),
                q75: quantile_sorted(&sorted, 0.75),
                iqr,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.ancestors);
    let xs: Vec<f64> = rows.iter().map(|r| (r.ancestors as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(ConvergenceTable { rows, slope: sxy / sxx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CliError;

    fn synthetic(ns: &[usize], reps: usize) -> Vec<(usize, Vec<f64>)> {
        ns.iter()
            .map(|&n| {
                let scale = 1.0 / (n as f64).sqrt();
                (n, (0..reps).map(|r| scale * (0.5 + r as f64 / reps as f64)).collect())
            })
            .collect()
    }

    #[test]
    fn recovers_a_square_root_rate() {
        let t = convergence_report(&synthetic(&[4000, 250, 1000], 30)).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.ancestors).collect::<Vec<_>>(), vec![250, 1000, 4000]);
        assert!((t.slope + 0.5).abs() < 1e-12);
        assert!(t.strictly_decreasing());
        assert_eq!(t, convergence_report(&synthetic(&[250, 1000, 4000], 30)).unwrap());
    }

    #[test]
    fn rejects_thin_inputs() {
        assert!(matches!(
            convergence_report(&synthetic(&[1000], 30)),
            Err(CliError::Validation { .. })
        ));
        assert!(convergence_report(&synthetic(&[250, 1000, 4000], 29)).is_err());
        assert!(convergence_report(&synthetic(&[250, 250, 1000], 30)).is_err());
    }
}
