//! Reproducible decimal formatting for output files.

/// Formats `x` rounded to 9 significant digits, without trailing zeros or
/// exponent notation. Identical inputs always produce identical text.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // Round-trip through scientific notation to round at the 9th digit; the
    // shortest representation of the rounded double is then at most 9 digits.
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}
