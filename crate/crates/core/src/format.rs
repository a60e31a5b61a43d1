//! printf-compatible number formatting for the CSV artifacts.
//!
//! Rust's `{:e}` omits the exponent sign and padding that C's `%e` emits, and
//! there is no `%g`. The CSV schemas are pinned to the C forms so that files
//! diff cleanly against tools written in other languages.

/// C `%.{prec}e`: mantissa with `prec` decimals, exponent signed and at least
/// two digits (`1.500000e+06`).
pub fn fmt_exp(v: f64, prec: usize) -> String {
    if !v.is_finite() {
        return fmt_nonfinite(v);
    }
    let s = format!("{:.*e}", prec, v);
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

/// C `%.{prec}g` (prec ≥ 1).
pub fn fmt_general(v: f64, prec: usize) -> String {
    if !v.is_finite() {
        return fmt_nonfinite(v);
    }
    let prec = prec.max(1);
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Exponent after rounding to `prec` significant digits.
    let sci = format!("{:.*e}", prec - 1, v);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= prec as i32 {
        let mant = strip_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (prec as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

/// `%.17g`, the round-trip form used for coefficients and matrices.
pub fn fmt_g17(v: f64) -> String {
    fmt_general(v, 17)
}

/// `%.2f` for dB columns.
pub fn fmt_db(v: f64) -> String {
    if !v.is_finite() {
        return fmt_nonfinite(v);
    }
    format!("{v:.2}")
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn fmt_nonfinite(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Parses a float written by any of the formatters above.
pub fn parse_f64(s: &str) -> crate::Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| crate::Error::Parse(format!("bad number {s:?}: {e}")))
}
