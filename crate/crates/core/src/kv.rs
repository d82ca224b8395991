//! `key=value` config files. Blank lines and `#` comments are ignored.

use std::collections::HashSet;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct KvFile {
    entries: Vec<(usize, String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected key=value, got `{s}`"),
            })?;
            let k = k.trim().to_string();
            if !seen.insert(k.clone()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key `{k}`"),
                });
            }
            entries.push((line, k, v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &str, &str)> {
        self.entries
            .iter()
            .map(|(l, k, v)| (*l, k.as_str(), v.as_str()))
    }

    pub fn parse_value<T: FromStr>(line: usize, value: &str) -> Result<T> {
        value.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("cannot parse `{value}`"),
        })
    }

    pub fn parse_list<T: FromStr>(line: usize, value: &str) -> Result<Vec<T>> {
        value
            .split(',')
            .map(|v| Self::parse_value(line, v.trim()))
            .collect()
    }
}
