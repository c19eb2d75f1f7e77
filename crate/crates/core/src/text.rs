//! Plain-text output helpers shared by the CSV writers.

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e16)`.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Quotes a CSV field when it contains a delimiter, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.0, -0.0, 1.0, 0.1, 1e-4, 9.99e-5, 7.754213937616328e-17, 1e16, 12345.678, -3.5e-300, f64::MAX] {
            assert_eq!(format_float(v).parse::<f64>().unwrap().to_bits(), v.to_bits(), "{v}");
        }
        assert_eq!(format_float(7.75e-17), "7.75e-17");
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(990908.8530714251), "990908.8530714251");
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
