//! Flat `key=value` text used for config files and the checkpoint config
//! block. The canonical form has keys sorted and one `key=value` per line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped;
    /// duplicate keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", n + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("duplicate key {k:?}")));
            }
        }
        Ok(Self(map))
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::config(format!("key {key:?}: cannot parse {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get_parsed(key)?
            .ok_or_else(|| Error::config(format!("missing key {key:?}")))
    }

    /// Fails naming the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::config(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_canonical(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_is_sorted_and_reparses() {
        let mut kv = KeyValues::new();
        kv.set("zeta", 1);
        kv.set("alpha", 0.1);
        let text = kv.to_canonical();
        assert_eq!(text, "alpha=0.1\nzeta=1\n");
        assert_eq!(KeyValues::parse(&text).unwrap(), kv);
    }

    #[test]
    fn comments_duplicates_and_unknown_keys() {
        let kv = KeyValues::parse("# c\n\nepochs = 3\n").unwrap();
        assert_eq!(kv.require::<usize>("epochs").unwrap(), 3);
        assert!(KeyValues::parse("a=1\na=2").is_err());
        assert!(KeyValues::parse("novalue").is_err());
        let err = kv.reject_unknown(&["seed"]).unwrap_err();
        assert!(err.to_string().contains("epochs"));
    }
}
