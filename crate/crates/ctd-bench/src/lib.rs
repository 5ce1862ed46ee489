//! Shared fixtures for the criterion benchmarks.

use ctd_core::{CorrelationSpec, SpreadParams};

/// A correlated spread universe of `n` components at desk-scale magnitudes.
pub fn spread_universe(n: usize) -> (Vec<SpreadParams>, CorrelationSpec) {
    let spreads: Vec<SpreadParams> = (0..n)
        .map(|i| {
            SpreadParams::with_constant_theta(
                0.006 + 0.0005 * (i % 5) as f64,
                0.0016 + 0.0002 * (i % 4) as f64,
                0.0008 + 0.0002 * (i % 3) as f64,
                0.0008 + 0.0002 * (i % 3) as f64,
            )
            .expect("valid parameters")
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.3 }).collect())
        .collect();
    (
        spreads,
        CorrelationSpec::new(rows).expect("valid correlation"),
    )
}
