//! Writes compressing-function samples for a few slope settings as CSV, two
//! columns per interval, ready for an external plotting tool.
//!
//! ```text
//! cargo run --example companding_curves -- /tmp/curves
//! ```

use std::path::PathBuf;

use lcq::cli::companding_curves;
use lcq::quant::CompandingState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "curves".into()));
    std::fs::create_dir_all(&dir)?;
    let k = 16;
    let settings: [(&str, Vec<f64>); 3] = [
        ("identity", vec![0.0; k]),
        ("dense-near-zero", (0..k).map(|i| 1.5 * (-(i as f64) / 4.0).exp()).collect()),
        ("dense-near-clip", (0..k).map(|i| 0.1 * i as f64).collect()),
    ];
    for (name, theta) in settings {
        let st = CompandingState::<f64>::derive(&theta, 1.0)?;
        let path = dir.join(format!("{name}.csv"));
        std::fs::write(&path, companding_curves(&st, 9)?)?;
        println!("{name:<16} f(0.25) = {:.4}  f(0.5) = {:.4}  -> {}", st.compress(0.25)?, st.compress(0.5)?, path.display());
    }
    Ok(())
}
