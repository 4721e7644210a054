//! Flat `key = value` text with optional `[section]` headers that prefix the
//! following keys as `section.key`. `#` starts a comment line.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(out)
}

pub fn render<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_value<V: std::str::FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {raw:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_prefix_keys() {
        let m = parse("a = 1\n# note\n[loss]\nemb = 0.5\n\n[optim.radam]\nbeta1=0.9\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["loss.emb"], "0.5");
        assert_eq!(m["optim.radam.beta1"], "0.9");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse("novalue\n").is_err());
        assert!(parse("a = 1\na = 2\n").is_err());
        assert!(parse(" = 2\n").is_err());
    }
}
