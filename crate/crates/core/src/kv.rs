//! Small helpers for the flat text formats (sidecars, model files, CSV).

use crate::error::{Error, Result};

/// Comma-joined decimal list. `{}` on f64 prints the shortest string that
/// round-trips, so write/read is lossless.
pub fn join_f64(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 12);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&v.to_string());
    }
    out
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number `{t}`: {e}")))
        })
        .collect()
}

/// Reads `key` from a parsed TOML table as u64, accepting either an integer
/// or a decimal string (seeds can exceed the TOML integer range).
pub fn table_u64(table: &toml::Table, key: &str) -> Result<u64> {
    match table.get(key) {
        Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
        Some(toml::Value::String(s)) => s
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Format(format!("`{key}`: {e}"))),
        Some(other) => Err(Error::Format(format!("`{key}`: unexpected value {other}"))),
        None => Err(Error::Format(format!("missing key `{key}`"))),
    }
}

pub fn table_f64(table: &toml::Table, key: &str) -> Result<f64> {
    match table.get(key) {
        Some(toml::Value::Float(f)) => Ok(*f),
        Some(toml::Value::Integer(i)) => Ok(*i as f64),
        Some(toml::Value::String(s)) => s
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("`{key}`: {e}"))),
        Some(other) => Err(Error::Format(format!("`{key}`: unexpected value {other}"))),
        None => Err(Error::Format(format!("missing key `{key}`"))),
    }
}

pub fn table_str<'a>(table: &'a toml::Table, key: &str) -> Result<&'a str> {
    match table.get(key) {
        Some(toml::Value::String(s)) => Ok(s.as_str()),
        Some(other) => Err(Error::Format(format!("`{key}`: expected string, got {other}"))),
        None => Err(Error::Format(format!("missing key `{key}`"))),
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_lists_round_trip() {
        let v = vec![0.1, -2.5e-17, 1.0 / 3.0, 0.0, 12345.678];
        assert_eq!(parse_f64_list(&join_f64(&v)).unwrap(), v);
        assert!(parse_f64_list("").unwrap().is_empty());
        assert!(parse_f64_list("1,x").is_err());
    }
}
