//! Fixed-precision score serialization.
//!
//! Scores are quantized to six decimal places when they are produced, so the
//! value held in memory is exactly the value that round-trips through JSON.
//! Everything derived from scores (threshold tests, means, counts) therefore
//! agrees between a fresh run and one rebuilt from its checkpoint.

use serde::Serializer;
use serde_json::value::RawValue;

pub const SCORE_DECIMALS: usize = 6;

pub fn quantize(x: f64) -> f64 {
    // `+ 0.0` folds -0.0 into 0.0.
    (x * 1e6).round() / 1e6 + 0.0
}

fn raw(x: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{x:.SCORE_DECIMALS$}")).expect("formatted float is valid JSON")
}

pub fn six_dp<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_some(&raw(*x))
}

pub fn opt_six_dp<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&raw(*v)),
        None => s.serialize_none(),
    }
}
