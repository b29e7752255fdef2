//! Plain-text and binary serialization helpers shared by the exporters.

/// Formats a float with 17 significant digits, '.' decimal, no locale.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Joins a row of floats with commas.
pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

/// Header comment line carried by every exported artifact.
pub fn provenance_line(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}\n")
}

/// Strips leading `#` comment lines.
pub fn strip_comments(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }
}
