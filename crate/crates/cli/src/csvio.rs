//! CSV and `key=value` emission with one fixed numeric format.
//!
//! Every float is printed with [`float`], which carries 17 significant
//! digits, enough to round-trip an `f64` exactly, and the writers use `\n`
//! line endings unconditionally. Byte-identical reruns are part of the
//! output contract, so no locale, platform, or time-dependent formatting is
//! allowed anywhere in this module.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Scientific notation with 17 significant digits (`1.0000000000000000e0`).
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a comma-separated table with a header row.
///
/// Panics if a row's width disagrees with the header; that is a programmer
/// error, not an input error.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        assert_eq!(row.len(), header.len(), "row width mismatch in {}", path.display());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

/// Writes `key=value` lines in the given order.
pub fn write_key_values(path: &Path, pairs: &[(&str, String)]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (key, value) in pairs {
        writeln!(w, "{key}={value}")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trips_exactly() {
        for x in [0.05, 1.0 / 3.0, 140.0_f64.sqrt() - 1.0, 1e-300, -2.5e17] {
            let s = float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn csv_layout_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            &["a", "b"],
            vec![vec!["0".to_string(), float(0.5)], vec!["1".to_string(), float(1.5)]],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a,b\n0,5.0000000000000000e-1\n1,1.5000000000000000e0\n");
    }

    #[test]
    fn key_values_preserve_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        write_key_values(&path, &[("lambda", float(300.0)), ("budget", float(5.6))]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("lambda=3.0000000000000000e2\nbudget="), "{text}");
    }
}
