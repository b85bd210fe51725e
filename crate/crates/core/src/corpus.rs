//! Dataset ingestion: metadata flattening, k-core filtering, leave-one-out
//! splitting and multi-source fusion.
//!
//! Raw datasets live in a directory holding `items.jsonl` and
//! `interactions.jsonl`. Split datasets (the output of ingestion) hold
//! `items.jsonl`, `train.jsonl`, `valid.jsonl` and `test.jsonl`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemRecord {
    pub item_key: String,
    /// Field/value pairs in input order.
    pub metadata: Vec<(String, String)>,
}

/// Plain-text serialization of an item's metadata.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlattenedText(pub String);

impl FlattenedText {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLog {
    #[serde(rename = "user")]
    pub user_key: String,
    #[serde(rename = "items")]
    pub item_keys: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<i64>>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.item_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_keys.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub items: Vec<ItemRecord>,
    pub logs: Vec<InteractionLog>,
}

/// A history with one held-out next item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldOut {
    #[serde(rename = "user")]
    pub user_key: String,
    pub history: Vec<String>,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SplitDataset {
    pub train: Vec<InteractionLog>,
    pub valid: Vec<HeldOut>,
    pub test: Vec<HeldOut>,
}

/// Items plus their split interactions, as written by ingestion.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub name: String,
    pub items: Vec<ItemRecord>,
    pub split: SplitDataset,
}

#[derive(Clone, Debug)]
pub struct FusionSpec {
    pub sources: Vec<Dataset>,
    pub user_cap: usize,
    pub seed: u64,
}

pub fn flatten_metadata(item: &ItemRecord) -> FlattenedText {
    let parts: Vec<String> = item
        .metadata
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect();
    FlattenedText(parts.join("; "))
}

impl Dataset {
    /// Builds a dataset, checking key uniqueness and referential integrity and
    /// ordering each log chronologically.
    pub fn new(
        name: impl Into<String>,
        items: Vec<ItemRecord>,
        mut logs: Vec<InteractionLog>,
    ) -> Result<Self> {
        let mut keys = HashSet::with_capacity(items.len());
        for item in &items {
            if item.item_key.is_empty() {
                return Err(Error::InvalidInput("empty item key".into()));
            }
            if !keys.insert(item.item_key.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate item key {}",
                    item.item_key
                )));
            }
        }
        for log in &mut logs {
            if log.item_keys.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "user {} has an empty interaction log",
                    log.user_key
                )));
            }
            if let Some(missing) = log.item_keys.iter().find(|k| !keys.contains(k.as_str())) {
                return Err(Error::InvalidInput(format!(
                    "user {} references unknown item {missing}",
                    log.user_key
                )));
            }
            sort_chronologically(log)?;
        }
        Ok(Dataset {
            name: name.into(),
            items,
            logs,
        })
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_key.as_str(), i))
            .collect()
    }

    /// Reads `items.jsonl` and `interactions.jsonl` from `dir`.
    pub fn load_dir(dir: &Path, name: &str) -> Result<Self> {
        let items = read_items(&dir.join("items.jsonl"))?;
        let logs: Vec<InteractionLog> = read_jsonl(&dir.join("interactions.jsonl"))?;
        Dataset::new(name, items, logs)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_items(&dir.join("items.jsonl"), &self.items)?;
        write_jsonl(&dir.join("interactions.jsonl"), &self.logs)
    }
}

fn sort_chronologically(log: &mut InteractionLog) -> Result<()> {
    let Some(ts) = &log.timestamps else {
        return Ok(());
    };
    if ts.len() != log.item_keys.len() {
        return Err(Error::InvalidInput(format!(
            "user {}: {} timestamps for {} items",
            log.user_key,
            ts.len(),
            log.item_keys.len()
        )));
    }
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by_key(|&i| ts[i]);
    log.item_keys = order.iter().map(|&i| log.item_keys[i].clone()).collect();
    log.timestamps = Some(order.iter().map(|&i| ts[i]).collect());
    Ok(())
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// both thresholds hold at once.
pub fn filter_k_core(dataset: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut logs = dataset.logs.clone();
    loop {
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for log in &logs {
            for key in &log.item_keys {
                *item_counts.entry(key.as_str()).or_default() += 1;
            }
        }
        let weak_items: HashSet<String> = item_counts
            .iter()
            .filter(|(_, &c)| c < k)
            .map(|(key, _)| key.to_string())
            .collect();

        let mut changed = !weak_items.is_empty();
        if changed {
            for log in &mut logs {
                retain_items(log, |key| !weak_items.contains(key));
            }
        }
        let before = logs.len();
        logs.retain(|log| log.len() >= k);
        changed |= logs.len() != before;
        if !changed {
            break;
        }
    }
    if logs.is_empty() {
        return Err(Error::EmptyAfterFiltering { k });
    }
    let used: HashSet<&str> = logs
        .iter()
        .flat_map(|l| l.item_keys.iter().map(String::as_str))
        .collect();
    let items = dataset
        .items
        .iter()
        .filter(|it| used.contains(it.item_key.as_str()))
        .cloned()
        .collect();
    Ok(Dataset {
        name: dataset.name.clone(),
        items,
        logs,
    })
}

fn retain_items(log: &mut InteractionLog, keep: impl Fn(&str) -> bool) {
    let mask: Vec<bool> = log.item_keys.iter().map(|k| keep(k)).collect();
    let mut it = mask.iter();
    log.item_keys.retain(|_| *it.next().unwrap());
    if let Some(ts) = &mut log.timestamps {
        let mut it = mask.iter();
        ts.retain(|_| *it.next().unwrap());
    }
}

/// Holds out the last item of every log for test and the second-to-last
/// for validation.
pub fn leave_one_out_split(dataset: &Dataset) -> Result<SplitDataset> {
    let mut split = SplitDataset::default();
    for log in &dataset.logs {
        let n = log.len();
        if n < 3 {
            return Err(Error::HistoryTooShort {
                user: log.user_key.clone(),
                len: n,
            });
        }
        split.train.push(InteractionLog {
            user_key: log.user_key.clone(),
            item_keys: log.item_keys[..n - 2].to_vec(),
            timestamps: log.timestamps.as_ref().map(|ts| ts[..n - 2].to_vec()),
        });
        split.valid.push(HeldOut {
            user_key: log.user_key.clone(),
            history: log.item_keys[..n - 2].to_vec(),
            target: log.item_keys[n - 2].clone(),
        });
        split.test.push(HeldOut {
            user_key: log.user_key.clone(),
            history: log.item_keys[..n - 1].to_vec(),
            target: log.item_keys[n - 1].clone(),
        });
    }
    Ok(split)
}

/// Drops logs too short for leave-one-out splitting.
pub fn drop_short_logs(dataset: &Dataset) -> Dataset {
    Dataset {
        name: dataset.name.clone(),
        items: dataset.items.clone(),
        logs: dataset
            .logs
            .iter()
            .filter(|l| l.len() >= 3)
            .cloned()
            .collect(),
    }
}

/// Unions the sources into one corpus, downsampling any source with more
/// than `user_cap` users. Item and user keys are prefixed with
/// `"<dataset>/"`; metadata text is left untouched.
pub fn build_fusion(spec: &FusionSpec) -> Result<Dataset> {
    if spec.user_cap == 0 {
        return Err(Error::InvalidInput("user_cap must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut items = Vec::new();
    let mut logs = Vec::new();
    for source in &spec.sources {
        let chosen: Vec<usize> = if source.logs.len() > spec.user_cap {
            let mut idx =
                rand::seq::index::sample(&mut rng, source.logs.len(), spec.user_cap).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..source.logs.len()).collect()
        };
        let prefix = |key: &str| format!("{}/{}", source.name, key);
        let mut used = HashSet::new();
        for &u in &chosen {
            let log = &source.logs[u];
            used.extend(log.item_keys.iter().map(String::as_str));
            logs.push(InteractionLog {
                user_key: prefix(&log.user_key),
                item_keys: log.item_keys.iter().map(|k| prefix(k)).collect(),
                timestamps: log.timestamps.clone(),
            });
        }
        items.extend(
            source
                .items
                .iter()
                .filter(|it| used.contains(it.item_key.as_str()))
                .map(|it| ItemRecord {
                    item_key: prefix(&it.item_key),
                    metadata: it.metadata.clone(),
                }),
        );
    }
    Dataset::new("fusion", items, logs)
}

/// Fusion manifest as read from disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusionManifest {
    pub sources: Vec<ManifestSource>,
    #[serde(default = "default_user_cap")]
    pub user_cap: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestSource {
    pub path: String,
    #[serde(default)]
    pub name: Option<String>,
}

fn default_user_cap() -> usize {
    30_000
}

impl FusionManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e))
    }

    /// Loads every source directory. Relative paths resolve against `base`.
    pub fn load_sources(&self, base: &Path) -> Result<FusionSpec> {
        let mut sources = Vec::new();
        for src in &self.sources {
            let dir = base.join(&src.path);
            let name = match &src.name {
                Some(n) => n.clone(),
                None => dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| src.path.clone()),
            };
            sources.push(Dataset::load_dir(&dir, &name)?);
        }
        Ok(FusionSpec {
            sources,
            user_cap: self.user_cap,
            seed: self.seed,
        })
    }
}

impl PreparedData {
    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        Ok(PreparedData {
            name: dataset.name.clone(),
            items: dataset.items.clone(),
            split: leave_one_out_split(dataset)?,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_items(&dir.join("items.jsonl"), &self.items)?;
        write_jsonl(&dir.join("train.jsonl"), &self.split.train)?;
        write_jsonl(&dir.join("valid.jsonl"), &self.split.valid)?;
        write_jsonl(&dir.join("test.jsonl"), &self.split.test)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let items = read_items(&dir.join("items.jsonl"))?;
        let split = SplitDataset {
            train: read_jsonl(&dir.join("train.jsonl"))?,
            valid: read_jsonl(&dir.join("valid.jsonl"))?,
            test: read_jsonl(&dir.join("test.jsonl"))?,
        };
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let data = PreparedData { name, items, split };
        data.check_references()?;
        Ok(data)
    }

    fn check_references(&self) -> Result<()> {
        let keys: HashSet<&str> = self.items.iter().map(|i| i.item_key.as_str()).collect();
        let known = |k: &String| keys.contains(k.as_str());
        let split = &self.split;
        let refs = split
            .train
            .iter()
            .flat_map(|l| l.item_keys.iter())
            .chain(split.valid.iter().flat_map(|h| h.history.iter().chain([&h.target])))
            .chain(split.test.iter().flat_map(|h| h.history.iter().chain([&h.target])));
        for key in refs {
            if !known(key) {
                return Err(Error::InvalidInput(format!("unknown item {key} in split")));
            }
        }
        Ok(())
    }

    /// Reassembles the full interaction logs (train + valid + test targets).
    pub fn full_logs(&self) -> Vec<InteractionLog> {
        self.split
            .test
            .iter()
            .map(|t| {
                let mut items = t.history.clone();
                items.push(t.target.clone());
                InteractionLog {
                    user_key: t.user_key.clone(),
                    item_keys: items,
                    timestamps: None,
                }
            })
            .collect()
    }
}

#[derive(Deserialize)]
struct RawItem {
    item: String,
    metadata: serde_json::Map<String, Value>,
}

fn metadata_value(value: &Value) -> std::result::Result<String, String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Array(vals) => {
            let parts: std::result::Result<Vec<String>, String> = vals
                .iter()
                .map(|v| match v {
                    Value::Array(_) => Err("nested arrays are not supported".to_string()),
                    other => metadata_value(other),
                })
                .collect();
            Ok(parts?.join(", "))
        }
        other => Err(format!("unsupported metadata value {other}")),
    }
}

pub fn read_items(path: &Path) -> Result<Vec<ItemRecord>> {
    let mut items = Vec::new();
    for_each_line(path, |line_no, line| {
        let raw: RawItem = serde_json::from_str(line).map_err(|e| Error::parse(path, line_no, e))?;
        let mut metadata = Vec::with_capacity(raw.metadata.len());
        for (k, v) in &raw.metadata {
            let v = metadata_value(v).map_err(|m| Error::parse(path, line_no, m))?;
            metadata.push((k.clone(), v));
        }
        items.push(ItemRecord {
            item_key: raw.item,
            metadata,
        });
        Ok(())
    })?;
    Ok(items)
}

pub fn write_items(path: &Path, items: &[ItemRecord]) -> Result<()> {
    let rows: Vec<Value> = items
        .iter()
        .map(|it| {
            let meta: serde_json::Map<String, Value> = it
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            serde_json::json!({ "item": it.item_key, "metadata": meta })
        })
        .collect();
    write_jsonl(path, &rows)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        out.push(serde_json::from_str(line).map_err(|e| Error::parse(path, line_no, e))?);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).map_err(|e| Error::InvalidInput(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(key: &str) -> ItemRecord {
        ItemRecord {
            item_key: key.into(),
            metadata: vec![("title".into(), key.into())],
        }
    }

    fn log(user: &str, items: &[&str]) -> InteractionLog {
        InteractionLog {
            user_key: user.into(),
            item_keys: items.iter().map(|s| s.to_string()).collect(),
            timestamps: None,
        }
    }

    #[test]
    fn flatten_examples() {
        let it = ItemRecord {
            item_key: "x".into(),
            metadata: vec![
                ("name".into(), "zeppelin".into()),
                ("categories".into(), "cocktail bars, restaurants".into()),
                ("stars".into(), "4.0".into()),
            ],
        };
        assert_eq!(
            flatten_metadata(&it).0,
            "name: zeppelin; categories: cocktail bars, restaurants; stars: 4.0"
        );
        let empty = ItemRecord {
            item_key: "x".into(),
            metadata: vec![],
        };
        assert_eq!(flatten_metadata(&empty).0, "");
        let one = ItemRecord {
            item_key: "x".into(),
            metadata: vec![("title".into(), "Lego Set".into())],
        };
        assert_eq!(flatten_metadata(&one).0, "title: Lego Set");
    }

    #[test]
    fn metadata_values_are_normalized() {
        let v: Value = serde_json::json!(4.0);
        assert_eq!(metadata_value(&v).unwrap(), "4.0");
        let v: Value = serde_json::json!(5);
        assert_eq!(metadata_value(&v).unwrap(), "5");
        let v: Value = serde_json::json!(["cocktail bars", "restaurants"]);
        assert_eq!(metadata_value(&v).unwrap(), "cocktail bars, restaurants");
        assert!(metadata_value(&Value::Null).is_err());
    }

    #[test]
    fn timestamps_order_logs() {
        let ds = Dataset::new(
            "t",
            vec![item("a"), item("b"), item("c")],
            vec![InteractionLog {
                user_key: "u".into(),
                item_keys: vec!["a".into(), "b".into(), "c".into()],
                timestamps: Some(vec![30, 10, 20]),
            }],
        )
        .unwrap();
        assert_eq!(ds.logs[0].item_keys, vec!["b", "c", "a"]);
        assert_eq!(ds.logs[0].timestamps, Some(vec![10, 20, 30]));
    }

    #[test]
    fn dataset_rejects_unknown_items() {
        let err = Dataset::new("t", vec![item("a")], vec![log("u", &["a", "zz"])]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn k_core_single_short_user_is_empty() {
        let ds = Dataset::new(
            "t",
            vec![item("a"), item("b"), item("c")],
            vec![log("u", &["a", "b", "c"])],
        )
        .unwrap();
        assert!(matches!(
            filter_k_core(&ds, 5),
            Err(Error::EmptyAfterFiltering { k: 5 })
        ));
    }

    #[test]
    fn split_definitional() {
        let ds = Dataset::new(
            "t",
            ["a", "b", "c", "d"].iter().map(|k| item(k)).collect(),
            vec![log("u", &["a", "b", "c", "d"])],
        )
        .unwrap();
        let s = leave_one_out_split(&ds).unwrap();
        assert_eq!(s.train[0].item_keys, vec!["a", "b"]);
        assert_eq!(s.valid[0].history, vec!["a", "b"]);
        assert_eq!(s.valid[0].target, "c");
        assert_eq!(s.test[0].history, vec!["a", "b", "c"]);
        assert_eq!(s.test[0].target, "d");

        let short = Dataset::new("t", vec![item("a"), item("b")], vec![log("u", &["a", "b"])])
            .unwrap();
        assert!(matches!(
            leave_one_out_split(&short),
            Err(Error::HistoryTooShort { len: 2, .. })
        ));
    }

    #[test]
    fn fusion_under_cap_keeps_everyone() {
        let logs: Vec<_> = (0..10).map(|u| log(&format!("u{u}"), &["a", "b"])).collect();
        let src = Dataset::new("toys", vec![item("a"), item("b")], logs).unwrap();
        let fused = build_fusion(&FusionSpec {
            sources: vec![src],
            user_cap: 30_000,
            seed: 1,
        })
        .unwrap();
        assert_eq!(fused.logs.len(), 10);
        assert!(fused.items.iter().all(|i| i.item_key.starts_with("toys/")));
        assert_eq!(fused.items[0].metadata, vec![("title".into(), "a".into())]);
    }
}
