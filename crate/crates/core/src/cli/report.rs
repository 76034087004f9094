//! Merging run directories into a comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::Method;
use crate::train::TrainConfig;

/// Outcome of one training run, read back from its directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub method: Method,
    pub w_bits: u32,
    pub a_bits: u32,
    pub outer_bits: Option<u32>,
    pub seed: u64,
    pub epochs: usize,
    /// Test top-1 after the last recorded epoch.
    pub final_top1: f64,
    pub best_top1: f64,
}

/// Reads `config.txt` and `metrics.csv` from a run directory.
pub fn read_run(dir: &Path) -> Result<RunSummary> {
    let cfg = TrainConfig::from_file(&dir.join("config.txt"))?;
    let path = dir.join("metrics.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(ep), Some(split), Some(top1)) = (col("epoch"), col("split"), col("top1")) else {
        return Err(Error::format("metrics", format!("{}: missing epoch/split/top1 columns", path.display())));
    };
    let mut tests = Vec::new();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.get(split) != Some(&"test") {
            continue;
        }
        let parse = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format("metrics", format!("{}: bad row {l:?}", path.display())))
        };
        tests.push((parse(ep)? as usize, parse(top1)?));
    }
    let Some(&(epochs, final_top1)) = tests.last() else {
        return Err(Error::format("metrics", format!("{}: no test rows", path.display())));
    };
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        method: cfg.method,
        w_bits: cfg.w_bits,
        a_bits: cfg.a_bits,
        outer_bits: cfg.outer_bits,
        seed: cfg.seed,
        epochs,
        final_top1,
        best_top1: tests.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Runs sharing method, bit-widths and outer bit-width, summarized over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    /// `W/A`, or `32/32` for float runs.
    pub bits: String,
    pub outer: String,
    pub seeds: Vec<u64>,
    pub mean_final: f64,
    /// Sample standard deviation (0 for a single run).
    pub std_final: f64,
    pub mean_best: f64,
}

fn method_rank(m: Method) -> u8 {
    match m {
        Method::Float => 0,
        Method::Lcq => 1,
        Method::Uniform => 2,
        Method::LcqNoLwn => 3,
    }
}

pub fn merge_runs(runs: &[RunSummary]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(u8, String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        let (bits, outer) = if r.method == Method::Float {
            ("32/32".to_string(), "-".to_string())
        } else {
            (
                format!("{}/{}", r.w_bits, r.a_bits),
                r.outer_bits.map_or_else(|| "-".into(), |b| b.to_string()),
            )
        };
        groups.entry((method_rank(r.method), bits, outer)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((_, bits, outer), rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.final_top1).sum::<f64>() / n;
            let var = if rs.len() > 1 {
                rs.iter().map(|r| (r.final_top1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ReportRow {
                method: rs[0].method,
                bits,
                outer,
                seeds: rs.iter().map(|r| r.seed).collect(),
                mean_final: mean,
                std_final: var.sqrt(),
                mean_best: rs.iter().map(|r| r.best_top1).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn render(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>6} {:>6} {:>6} {:>10} {:>7} {:>10}",
        "method", "W/A", "outer", "runs", "top-1", "std", "best"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>6} {:>6} {:>10.2} {:>7.2} {:>10.2}",
            r.method.as_str(),
            r.bits,
            r.outer,
            r.seeds.len(),
            r.mean_final,
            r.std_final,
            r.mean_best
        );
    }
    s
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("method,bits,outer,runs,seeds,mean_top1,std_top1,mean_best_top1\n");
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.4},{:.4},{:.4}",
            r.method.as_str(),
            r.bits,
            r.outer,
            r.seeds.len(),
            seeds.join(" "),
            r.mean_final,
            r.std_final,
            r.mean_best
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(method: Method, seed: u64, top1: f64) -> RunSummary {
        RunSummary {
            dir: PathBuf::new(),
            method,
            w_bits: 2,
            a_bits: 2,
            outer_bits: Some(8),
            seed,
            epochs: 1,
            final_top1: top1,
            best_top1: top1 + 1.0,
        }
    }

    #[test]
    fn groups_by_method_and_averages_over_seeds() {
        let rows = merge_runs(&[
            run(Method::Uniform, 1, 90.0),
            run(Method::Lcq, 1, 91.0),
            run(Method::Lcq, 2, 93.0),
            run(Method::Float, 1, 99.0),
        ]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].method, Method::Float);
        assert_eq!(rows[0].bits, "32/32");
        assert_eq!(rows[1].method, Method::Lcq);
        assert_eq!(rows[1].mean_final, 92.0);
        assert!((rows[1].std_final - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rows[1].mean_best, 93.0);
        assert!(to_csv(&rows).lines().nth(2).unwrap().starts_with("lcq,2/2,8,2,1 2,92.0000"));
    }
}
