use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use vanetsci::scenario::parse_key_values;

use crate::Common;

/// Parse `a,b,c`, `a..b` (step = a) or `a..b:step` into an ascending list.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, Some(step)),
            None => (rest, None),
        };
        let lo: f64 = lo.trim().parse().with_context(|| format!("range start in {text:?}"))?;
        let hi: f64 = hi.trim().parse().with_context(|| format!("range end in {text:?}"))?;
        let step: f64 = match step {
            Some(s) => s.trim().parse().with_context(|| format!("range step in {text:?}"))?,
            None if lo > 0.0 => lo,
            None => 1.0,
        };
        if !(step > 0.0) || hi < lo {
            bail!("empty or invalid range {text:?}");
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| lo + i as f64 * step).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("number {s:?}")))
        .collect()
}

pub fn parse_count(text: &str) -> Result<u64> {
    let v: f64 = text.trim().parse().with_context(|| format!("count {text:?}"))?;
    if !(v >= 0.0) || v.fract() != 0.0 {
        bail!("count {text:?} must be a non-negative integer");
    }
    Ok(v as u64)
}

/// Flag values backed by an optional key=value file.
pub struct Layered {
    file: BTreeMap<String, String>,
}

impl Layered {
    pub fn load(common: &Common) -> Result<Self> {
        let file = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                parse_key_values(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Layered { file })
    }

    pub fn text(&self, flag: &Option<String>, key: &str) -> Option<String> {
        flag.clone().or_else(|| self.file.get(key).cloned())
    }

    pub fn value<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| anyhow!("config key {key}: bad value {v:?}")),
            None => Ok(None),
        }
    }

    pub fn out_dir(&self, common: &Common) -> Result<PathBuf> {
        let dir = common
            .out
            .clone()
            .or_else(|| self.file.get("out").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    pub fn seed(&self, common: &Common) -> Result<u64> {
        Ok(self.value(common.seed, "seed")?.unwrap_or(1))
    }
}

pub fn create(dir: &Path, name: &str) -> Result<fs::File> {
    let path = dir.join(name);
    fs::File::create(&path).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Default)]
pub struct Checks {
    rows: Vec<(String, bool)>,
}

impl Checks {
    pub fn check(&mut self, what: impl Into<String>, pass: bool) {
        self.rows.push((what.into(), pass));
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|(_, ok)| *ok)
    }

    pub fn print(&self) {
        for (what, ok) in &self.rows {
            println!("{} {what}", if *ok { "PASS" } else { "FAIL" });
        }
    }
}
