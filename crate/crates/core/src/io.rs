//! Small file helpers shared by the on-disk formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(tmp, e))?;
        f.sync_all().map_err(|e| Error::io(tmp, e))?;
    }
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn join_f64(values: &[f64], sep: &str) -> String {
    values
        .iter()
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(sep)
}

pub fn parse_f64_list(s: &str, sep: char) -> Option<Vec<f64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(sep).map(|v| v.trim().parse().ok()).collect()
}

/// Splits leading `key=value` lines from the body. The header ends at the
/// first line that is not of that form.
pub fn split_header(text: &str) -> (Vec<(String, String)>, Vec<&str>) {
    let mut header = Vec::new();
    let mut lines = text.lines();
    let mut rest = Vec::new();
    for line in lines.by_ref() {
        match line.split_once('=') {
            Some((k, v)) if !k.is_empty() && is_key(k) => {
                header.push((k.to_string(), v.to_string()));
            }
            _ => {
                rest.push(line);
                break;
            }
        }
    }
    rest.extend(lines);
    (header, rest)
}

fn is_key(k: &str) -> bool {
    k.chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 9.81] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn header_split() {
        let (h, rest) = split_header("a=1\nschema-version=2\nt,x\n0,1\n");
        assert_eq!(
            h,
            vec![
                ("a".into(), "1".into()),
                ("schema-version".into(), "2".into())
            ]
        );
        assert_eq!(rest, vec!["t,x", "0,1"]);
    }
}
