//! Versioned key-value run defaults.
//!
//! The shipped file is `config/defaults.conf`. Lines are `key = value`;
//! blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::catalog::FunctionCode;
use crate::trace::NoiseModel;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Contents of the shipped defaults file.
pub const SHIPPED: &str = include_str!("../config/defaults.conf");

#[derive(Debug, Clone, PartialEq)]
pub struct Defaults {
    pub p_miss: f64,
    pub spurious: BTreeMap<FunctionCode, f64>,
    pub decoy_rate: f64,
    pub per_arch_n: usize,
    pub folds: usize,
    pub runs: usize,
    pub unravel_k: usize,
    pub seed: u64,
}

impl Defaults {
    /// The shipped defaults.
    pub fn shipped() -> Self {
        Self::parse(SHIPPED).expect("shipped defaults.conf is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut d = Defaults {
            p_miss: 0.0,
            spurious: BTreeMap::new(),
            decoy_rate: 1.0,
            per_arch_n: 50,
            folds: 5,
            runs: 10,
            unravel_k: 3,
            seed: 0,
        };
        let mut version = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(line_no, format!("expected key = value, got `{line}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "version" {
                let v: u32 = value
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad version `{value}`")))?;
                if v != FORMAT_VERSION {
                    return Err(Error::parse(line_no, format!("unsupported version {v}")));
                }
                version = Some(v);
                continue;
            }
            d.set(key, value).map_err(|m| Error::parse(line_no, m))?;
        }
        if version.is_none() {
            return Err(Error::parse(0, "missing `version` key"));
        }
        d.noise().map_err(|e| Error::parse(0, e.to_string()))?;
        Ok(d)
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value `{value}` for `{key}`"))
        }
        match key {
            "p_miss" => self.p_miss = num(key, value)?,
            "decoy_rate" => self.decoy_rate = num(key, value)?,
            "per_arch_n" => self.per_arch_n = num(key, value)?,
            "folds" => self.folds = num(key, value)?,
            "runs" => self.runs = num(key, value)?,
            "unravel_k" => self.unravel_k = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => match key.strip_prefix("spurious.") {
                Some(code) => {
                    let code: FunctionCode = code.parse()?;
                    self.spurious.insert(code, num(key, value)?);
                }
                None => return Err(format!("unknown key `{key}`")),
            },
        }
        Ok(())
    }

    /// Channel model; zero rates are dropped.
    pub fn noise(&self) -> Result<NoiseModel> {
        let rates = self
            .spurious
            .iter()
            .filter(|(_, &r)| r != 0.0)
            .map(|(&c, &r)| (c, r))
            .collect();
        NoiseModel::new(self.p_miss, rates)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("version = {FORMAT_VERSION}\n");
        let _ = writeln!(s, "p_miss = {}", self.p_miss);
        for (c, r) in &self.spurious {
            let _ = writeln!(s, "spurious.{c} = {r}");
        }
        let _ = writeln!(s, "decoy_rate = {}", self.decoy_rate);
        let _ = writeln!(s, "per_arch_n = {}", self.per_arch_n);
        let _ = writeln!(s, "folds = {}", self.folds);
        let _ = writeln!(s, "runs = {}", self.runs);
        let _ = writeln!(s, "unravel_k = {}", self.unravel_k);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}
