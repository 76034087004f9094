//! Companding curve samples for external plotting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::quant::{CompandingState, Role};
use crate::real::Real;

/// Samples the compressing function `n` times inside each of its `K`
/// intervals. Column pair `k` holds inputs `v` in `[d_{k-1}, d_k]` (as a
/// fraction of the clip value) and the compressed outputs `f(v)`, so the CSV
/// has `2K` columns.
pub fn companding_curves<T: Real>(state: &CompandingState<T>, n: usize) -> Result<String> {
    let map = state.map();
    let k = map.intervals();
    let n = n.max(2);
    let mut s = String::new();
    let header: Vec<String> = (1..=k).flat_map(|j| [format!("x{j}"), format!("f{j}")]).collect();
    let _ = writeln!(s, "{}", header.join(","));
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let mut row = Vec::with_capacity(2 * k);
        for j in 0..k {
            let lo = map.d()[j].to_f64_lossy();
            let hi = map.d()[j + 1].to_f64_lossy();
            let v = lo + t * (hi - lo);
            let f = map.compress_in(T::lit(v), j).to_f64_lossy();
            row.push(format!("{v:.9}"));
            row.push(format!("{f:.9}"));
        }
        let _ = writeln!(s, "{}", row.join(","));
    }
    Ok(s)
}

/// Writes `<layer>.<w|a>.csv` into `dir` for every companding quantizer of `net`.
pub fn write_curves<T: Real>(net: &Network<T>, dir: &Path, n: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for (layer, q) in net.quantizers() {
        let Some(state) = q.state()? else { continue };
        let role = match q.role {
            Role::Weight => "w",
            Role::Activation => "a",
        };
        let path = dir.join(format!("{layer}.{role}.csv"));
        std::fs::write(&path, companding_curves(&state, n)?).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_file_has_two_columns_per_interval() {
        let s = CompandingState::<f64>::derive(&[0.4, -0.2, 0.1, 0.0, 0.3], 2.0).unwrap();
        let csv = companding_curves(&s, 5).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines.iter().all(|l| l.split(',').count() == 10));
        let last: Vec<f64> = lines[5].split(',').map(|v| v.parse().unwrap()).collect();
        assert!((last[8] - 1.0).abs() < 1e-9 && (last[9] - 1.0).abs() < 1e-9);
    }
}
