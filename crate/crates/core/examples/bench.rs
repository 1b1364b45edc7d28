//! Decomposition time against image size.
//!
//! cargo run --release --example bench -- [sizes e.g. 128,256,512]

use softseg::bench::bench_decompose;
use softseg::models::ModelWeights;

fn main() -> softseg::Result<()> {
    let sizes: Vec<usize> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "128,256,512".into())
        .split(',')
        .map(|s| s.trim().parse().expect("sizes must be integers"))
        .collect();
    let weights = ModelWeights::new(7, 0)?;
    let report = bench_decompose(&weights, &sizes, 3)?;
    print!("{}", report.table());
    Ok(())
}
