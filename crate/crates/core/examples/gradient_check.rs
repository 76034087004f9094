//! Runs the gradient verification suite: component partials of the
//! piecewise-linear maps, the null test under identity rounding, the
//! quantizer against its frozen surrogate, and the toy network end to end.
//!
//! ```text
//! cargo run --release --example gradient_check -- 7
//! ```

use lcq::verify::{checks_csv, gradcheck_suite};

fn main() -> lcq::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let rows = gradcheck_suite(seed)?;
    print!("{}", checks_csv(&rows));
    let failed = rows.iter().filter(|r| !r.pass()).count();
    println!("{} checks, {failed} failed", rows.len());
    if failed > 0 {
        std::process::exit(2);
    }
    Ok(())
}
