//! Run configuration files.
//!
//! Either a JSON object with optional `model`, `train` and `allocator`
//! sections, or `section.field = value` lines:
//!
//! ```text
//! # comments and blank lines are ignored
//! train.iterations = 2
//! allocator.length_ranges = 1-10,10-20
//! model.d_model = 32
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::allocator::AllocatorConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub allocator: AllocatorConfig,
}

const SECTIONS: [&str; 3] = ["model", "train", "allocator"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let value: Value = serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e))?;
            return Self::from_value(value, path, 0);
        }
        let mut root = serde_json::to_value(RunConfig::default()).expect("config serializes");
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, n + 1, "expected section.field = value"))?;
            set_key(&mut root, key.trim(), value.trim()).map_err(|m| Error::parse(path, n + 1, m))?;
        }
        Self::from_value(root, path, 0)
    }

    fn from_value(value: Value, path: &Path, line: usize) -> Result<Self> {
        let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::parse(path, line, e))?;
        config.train.validate()?;
        config.allocator.validate()?;
        Ok(config)
    }

    /// Applies one `section.field=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("override `{assignment}` is not key=value")))?;
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        set_key(&mut root, key.trim(), value.trim()).map_err(Error::InvalidInput)?;
        *self = Self::from_value(root, Path::new("<override>"), 0)?;
        Ok(())
    }
}

fn set_key(root: &mut Value, key: &str, raw: &str) -> std::result::Result<(), String> {
    let (section, field) = key
        .split_once('.')
        .ok_or_else(|| format!("key `{key}` must look like section.field"))?;
    if !SECTIONS.contains(&section) {
        return Err(format!("unknown section `{section}`"));
    }
    let table: &mut Map<String, Value> = root
        .get_mut(section)
        .and_then(Value::as_object_mut)
        .expect("sections are objects");
    if !table.contains_key(field) {
        return Err(format!("unknown field `{key}`"));
    }
    let value = if field == "length_ranges" {
        parse_ranges(raw)?
    } else {
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
    };
    table.insert(field.to_string(), value);
    Ok(())
}

/// `1-10,10-20` as a list of pairs.
fn parse_ranges(raw: &str) -> std::result::Result<Value, String> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let (lo, hi) = part
            .trim()
            .split_once('-')
            .ok_or_else(|| format!("length range `{part}` is not lo-hi"))?;
        let lo: u64 = lo.trim().parse().map_err(|e| format!("{part}: {e}"))?;
        let hi: u64 = hi.trim().parse().map_err(|e| format!("{part}: {e}"))?;
        out.push(Value::from(vec![lo, hi]));
    }
    Ok(Value::Array(out))
}
