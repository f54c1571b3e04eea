//! Aggregate tables over collected metrics rows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use super::baseline::Algorithm;
use super::metrics::{CommRow, MetricsRow};
use crate::error::Result;
use crate::rng::{Purpose, RngStream};
use crate::stats::{bootstrap_ratio, linear_fit, median, quantile};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub algorithm: Algorithm,
    pub cluster_size: usize,
    pub agents: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessRow {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub correct: usize,
    pub rate: f64,
}

/// Median gap of `algorithm` over the `local_only` median on agents in
/// clusters of the same size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub algorithm: Algorithm,
    pub cluster_size: usize,
    pub ratio: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Communication rounds regressed on `ln T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommFitRow {
    pub algorithm: Algorithm,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub gaps: Vec<GapRow>,
    pub success: Vec<SuccessRow>,
    pub speedups: Vec<SpeedupRow>,
    pub comm_fits: Vec<CommFitRow>,
}

/// Cluster size of every row, counted within its own run.
fn cluster_sizes(rows: &[MetricsRow]) -> Vec<usize> {
    let mut counts: BTreeMap<(Algorithm, u64, usize), usize> = BTreeMap::new();
    for r in rows {
        *counts.entry((r.algorithm, r.seed, r.cluster)).or_default() += 1;
    }
    rows.iter().map(|r| counts[&(r.algorithm, r.seed, r.cluster)]).collect()
}

/// `seed` drives the bootstrap resampling only.
pub fn summarize(rows: &[MetricsRow], comm: &[CommRow], seed: u64) -> Summary {
    let sizes = cluster_sizes(rows);
    let mut by_group: BTreeMap<(Algorithm, usize), Vec<f64>> = BTreeMap::new();
    for (r, &s) in rows.iter().zip(&sizes) {
        by_group.entry((r.algorithm, s)).or_default().push(r.final_gap);
    }
    let gaps = by_group
        .iter()
        .map(|(&(algorithm, cluster_size), v)| GapRow {
            algorithm,
            cluster_size,
            agents: v.len(),
            median: median(v),
            q25: quantile(v, 0.25),
            q75: quantile(v, 0.75),
        })
        .collect();

    let mut runs: BTreeMap<(Algorithm, u64), bool> = BTreeMap::new();
    for r in rows {
        let ok = runs.entry((r.algorithm, r.seed)).or_insert(true);
        *ok &= r.clustering_correct;
    }
    let mut success_counts: BTreeMap<Algorithm, (usize, usize)> = BTreeMap::new();
    for (&(a, _), &ok) in &runs {
        let e = success_counts.entry(a).or_default();
        e.0 += 1;
        e.1 += usize::from(ok);
    }
    let success = success_counts
        .into_iter()
        .map(|(algorithm, (runs, correct))| SuccessRow {
            algorithm,
            runs,
            correct,
            rate: correct as f64 / runs as f64,
        })
        .collect();

    let mut rng = RngStream::new(seed, 0, 0, Purpose::Bootstrap).generator_at(0);
    let mut speedups = Vec::new();
    for (&(algorithm, size), v) in &by_group {
        if algorithm == Algorithm::LocalOnly {
            continue;
        }
        if let Some(base) = by_group.get(&(Algorithm::LocalOnly, size)) {
            let ci = bootstrap_ratio(v, base, median, BOOTSTRAP_RESAMPLES, BOOTSTRAP_LEVEL, &mut rng);
            speedups.push(SpeedupRow {
                algorithm,
                cluster_size: size,
                ratio: ci.estimate,
                lower: ci.lower,
                upper: ci.upper,
            });
        }
    }

    let mut comm_groups: BTreeMap<Algorithm, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for c in comm {
        let e = comm_groups.entry(c.algorithm).or_default();
        e.0.push((c.budget as f64).ln());
        e.1.push(c.comm_rounds as f64);
    }
    let comm_fits = comm_groups
        .into_iter()
        .filter(|(_, (xs, _))| {
            let first = xs[0];
            xs.iter().any(|x| *x != first)
        })
        .map(|(algorithm, (xs, ys))| {
            let fit = linear_fit(&xs, &ys);
            CommFitRow {
                algorithm,
                points: xs.len(),
                slope: fit.slope,
                intercept: fit.intercept,
                r_squared: fit.r_squared,
            }
        })
        .collect();

    Summary {
        gaps,
        success,
        speedups,
        comm_fits,
    }
}

impl Summary {
    /// Long-format CSV: `table,algorithm,cluster_size,metric,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["table", "algorithm", "cluster_size", "metric", "value"])?;
        let mut put = |table: &str, a: Algorithm, size: Option<usize>, metric: &str, value: f64| {
            w.write_record([
                table,
                a.name(),
                &size.map(|s| s.to_string()).unwrap_or_default(),
                metric,
                &value.to_string(),
            ])
        };
        for g in &self.gaps {
            let s = Some(g.cluster_size);
            put("gap", g.algorithm, s, "agents", g.agents as f64)?;
            put("gap", g.algorithm, s, "median", g.median)?;
            put("gap", g.algorithm, s, "q25", g.q25)?;
            put("gap", g.algorithm, s, "q75", g.q75)?;
        }
        for r in &self.success {
            put("clustering", r.algorithm, None, "runs", r.runs as f64)?;
            put("clustering", r.algorithm, None, "correct", r.correct as f64)?;
            put("clustering", r.algorithm, None, "rate", r.rate)?;
        }
        for r in &self.speedups {
            let s = Some(r.cluster_size);
            put("speedup", r.algorithm, s, "ratio", r.ratio)?;
            put("speedup", r.algorithm, s, "lower", r.lower)?;
            put("speedup", r.algorithm, s, "upper", r.upper)?;
        }
        for r in &self.comm_fits {
            put("comm_fit", r.algorithm, None, "points", r.points as f64)?;
            put("comm_fit", r.algorithm, None, "slope", r.slope)?;
            put("comm_fit", r.algorithm, None, "intercept", r.intercept)?;
            put("comm_fit", r.algorithm, None, "r_squared", r.r_squared)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "final gap by cluster size")?;
        writeln!(f, "{:<18} {:>5} {:>7} {:>12} {:>12} {:>12}", "algorithm", "size", "agents", "median", "q25", "q75")?;
        for g in &self.gaps {
            writeln!(
                f,
                "{:<18} {:>5} {:>7} {:>12.5e} {:>12.5e} {:>12.5e}",
                g.algorithm.name(),
                g.cluster_size,
                g.agents,
                g.median,
                g.q25,
                g.q75
            )?;
        }
        writeln!(f, "\nclustering success")?;
        writeln!(f, "{:<18} {:>6} {:>8} {:>7}", "algorithm", "runs", "correct", "rate")?;
        for r in &self.success {
            writeln!(f, "{:<18} {:>6} {:>8} {:>7.3}", r.algorithm.name(), r.runs, r.correct, r.rate)?;
        }
        if !self.speedups.is_empty() {
            writeln!(f, "\nmedian gap ratio against local_only ({}% bootstrap)", BOOTSTRAP_LEVEL * 100.0)?;
            writeln!(f, "{:<18} {:>5} {:>9} {:>9} {:>9}", "algorithm", "size", "ratio", "lower", "upper")?;
            for r in &self.speedups {
                writeln!(
                    f,
                    "{:<18} {:>5} {:>9.4} {:>9.4} {:>9.4}",
                    r.algorithm.name(),
                    r.cluster_size,
                    r.ratio,
                    r.lower,
                    r.upper
                )?;
            }
        }
        if !self.comm_fits.is_empty() {
            writeln!(f, "\ncommunication rounds against ln T")?;
            writeln!(f, "{:<18} {:>6} {:>9} {:>10} {:>6}", "algorithm", "points", "slope", "intercept", "R^2")?;
            for r in &self.comm_fits {
                writeln!(
                    f,
                    "{:<18} {:>6} {:>9.3} {:>10.3} {:>6.3}",
                    r.algorithm.name(),
                    r.points,
                    r.slope,
                    r.intercept,
                    r.r_squared
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(algorithm: Algorithm, seed: u64, agent: usize, cluster: usize, gap: f64, ok: bool) -> MetricsRow {
        MetricsRow {
            algorithm,
            seed,
            agent,
            cluster,
            final_gap: gap,
            clustering_correct: ok,
            first_correct_epoch: ok.then_some(1),
            rollouts_used: 100,
            comm_rounds: 5,
        }
    }

    #[test]
    fn single_row_median() {
        let s = summarize(&[row(Algorithm::Pcpo, 0, 0, 0, 0.7, true)], &[], 0);
        assert_eq!(s.gaps.len(), 1);
        assert_eq!(s.gaps[0].median, 0.7);
        assert_eq!(s.gaps[0].cluster_size, 1);
    }

    #[test]
    fn three_gaps_median_two() {
        let rows: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &g)| row(Algorithm::Pcpo, i as u64, 0, 0, g, true))
            .collect();
        assert_eq!(summarize(&rows, &[], 0).gaps[0].median, 2.0);
    }

    #[test]
    fn success_rate_and_speedup() {
        let mut rows = Vec::new();
        for seed in 0..4 {
            for agent in 0..4 {
                rows.push(row(Algorithm::Pcpo, seed, agent, 0, 0.5 + 0.01 * agent as f64, seed != 0));
                rows.push(row(Algorithm::LocalOnly, seed, agent, 0, 1.0 + 0.01 * agent as f64, false));
            }
        }
        let s = summarize(&rows, &[], 0);
        let pcpo = s.success.iter().find(|r| r.algorithm == Algorithm::Pcpo).unwrap();
        assert_eq!((pcpo.runs, pcpo.correct), (4, 3));
        assert_eq!(s.speedups.len(), 1);
        let sp = &s.speedups[0];
        assert_eq!(sp.cluster_size, 4);
        assert!(sp.lower <= sp.ratio && sp.ratio <= sp.upper && sp.upper < 1.0);
    }

    #[test]
    fn comm_fit_and_outputs() {
        let comm: Vec<CommRow> = (0..4)
            .map(|i| CommRow {
                algorithm: Algorithm::Pcpo,
                seed: 0,
                budget: 1000 << i,
                epochs: i + 1,
                comm_rounds: 6 * (i as u64 + 1),
            })
            .collect();
        let rows = vec![row(Algorithm::Pcpo, 0, 0, 0, 0.1, true)];
        let s = summarize(&rows, &comm, 0);
        assert_eq!(s.comm_fits.len(), 1);
        assert!((s.comm_fits[0].r_squared - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("table,algorithm,cluster_size,metric,value\n"));
        assert!(text.contains("comm_fit,pcpo,,r_squared,"));
        assert!(s.to_string().contains("clustering success"));
        assert_eq!(summarize(&rows, &comm, 0), s);
    }
}
