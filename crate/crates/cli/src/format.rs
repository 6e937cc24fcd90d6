//! Number formatting for CSV output.

/// Six significant digits, `%g` style; `inf` for infinities and `nan` for
/// NaN.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    // Round first so 999999.5 style carries move the exponent.
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

fn trim(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(-2.5e-7), "-2.5e-7");
        assert_eq!(sig6(999999.6), "1e6");
        assert_eq!(sig6(f64::INFINITY), "inf");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(67.9588), "67.9588");
    }

    #[test]
    fn parses_back_within_precision() {
        for &v in &[1.23456789, 1e-9 * 7.77777777, 42.0, 6.02214076e23] {
            let back: f64 = sig6(v).parse().unwrap();
            assert!((back - v).abs() <= 5e-6 * v.abs());
        }
    }
}
