//! Serialization helpers for report types.

use serde::Serializer;

/// Serialize an `f64`, writing non-finite values as the strings `"inf"`,
/// `"-inf"` or `"nan"` so that JSON output stays lossless.
pub fn ser_ext_f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn ser_ext_f64_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_ext_f64(v, s),
        None => s.serialize_none(),
    }
}
