//! Command implementations. Each command takes a resolved configuration and
//! returns the rendered output; the binary entry point handles delivery and
//! exit codes.

pub mod bench;
pub mod convert;
pub mod mc;
pub mod price;
pub mod sweep;
pub mod table_moments;

use ctd_core::estimators::Warning;

pub(crate) fn warning_pairs(warnings: &[Warning]) -> Vec<(String, String)> {
    warnings
        .iter()
        .map(|w| (w.code().to_string(), w.to_string()))
        .collect()
}

pub(crate) fn opt_num(v: Option<f64>) -> String {
    match v {
        Some(v) => crate::output::num(v),
        None => "na".to_string(),
    }
}
