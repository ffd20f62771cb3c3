//! Small formatting helpers shared by the TSV writers.

/// Formats `x` with 9 significant digits, `%g` style.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        return format!("{}e{}", trim_zeros(mantissa), exp);
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::format_sig9;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig9(0.5), "0.5");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456.789012), "123456.789");
        assert_eq!(format_sig9(9.9999999999), "10");
        assert_eq!(format_sig9(1.5e-7), "1.5e-7");
        assert_eq!(format_sig9(-2.0e12), "-2e12");
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(f64::INFINITY), "inf");
    }

    #[test]
    fn round_trip_within_nine_digits() {
        for x in [std::f64::consts::PI, 1e-300, 6.02214076e23, -0.000123456789123] {
            let y: f64 = format_sig9(x).parse().unwrap();
            assert!(((x - y) / x).abs() < 1e-8, "{x} -> {y}");
        }
    }
}
