//! CSV/JSON writers, environment-hash sidecars, and the append-only
//! metrics log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance written next to environment-bound CSV artifacts as `<file>.meta.json`, so
/// the CSV itself stays a plain RFC-4180 table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub env_hash: String,
    pub kind: String,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_meta(path: &Path, env_hash: &str, kind: &str) -> Result<()> {
    let meta = ArtifactMeta {
        env_hash: env_hash.to_string(),
        kind: kind.to_string(),
    };
    std::fs::write(meta_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Reads the sidecar and fails unless it carries `env_hash`.
pub fn check_meta(path: &Path, env_hash: &str) -> Result<ArtifactMeta> {
    let meta: ArtifactMeta = serde_json::from_slice(&std::fs::read(meta_path(path))?)?;
    if meta.env_hash != env_hash {
        return Err(Error::HashMismatch {
            artifact: meta.env_hash,
            config: env_hash.to_string(),
        });
    }
    Ok(meta)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV plus its hash sidecar.
pub fn write_csv_tagged<T: Serialize>(path: &Path, rows: &[T], env_hash: &str, kind: &str) -> Result<()> {
    write_csv(path, rows)?;
    write_meta(path, env_hash, kind)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: String,
    pub seed: u64,
    pub episode: usize,
    pub metrics: BTreeMap<String, f64>,
}

/// JSON-lines log; episode indices never decrease within a (phase, seed).
pub struct MetricsLog {
    path: PathBuf,
    file: File,
    last: HashMap<(String, u64), usize>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let mut last = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: MetricsRecord = serde_json::from_str(&line)?;
                last.insert((r.phase, r.seed), r.episode);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last,
        })
    }

    /// Drops earlier records of `(phase, seed)` so a rerun of that phase
    /// starts its episode count afresh.
    pub fn restart(&mut self, phase: &str, seed: u64) -> Result<()> {
        let key = (phase.to_string(), seed);
        if self.last.remove(&key).is_none() {
            return Ok(());
        }
        let mut kept = Vec::new();
        for line in BufReader::new(File::open(&self.path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: MetricsRecord = serde_json::from_str(&line)?;
            if r.phase != phase || r.seed != seed {
                kept.extend_from_slice(line.as_bytes());
                kept.push(b'\n');
            }
        }
        let tmp = self.path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, &kept)?;
        std::fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }

    pub fn append(&mut self, r: &MetricsRecord) -> Result<()> {
        let key = (r.phase.clone(), r.seed);
        if let Some(&prev) = self.last.get(&key) {
            if r.episode < prev {
                return Err(Error::InvalidArgument(format!(
                    "metrics for {}/{} went back from episode {prev} to {}",
                    r.phase, r.seed, r.episode
                )));
            }
        }
        let mut line = serde_json::to_vec(r)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.last.insert(key, r.episode);
        Ok(())
    }
}

pub fn record(phase: &str, seed: u64, episode: usize, metrics: &[(&str, f64)]) -> MetricsRecord {
    MetricsRecord {
        phase: phase.to_string(),
        seed,
        episode,
        metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_log_is_monotone_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut log = MetricsLog::open(&p).unwrap();
        log.append(&record("pretrain", 0, 1, &[("ee", 1.0)])).unwrap();
        log.append(&record("pretrain", 0, 2, &[("ee", 2.0)])).unwrap();
        log.append(&record("pretrain", 1, 1, &[("ee", 2.0)])).unwrap();
        drop(log);
        let mut log = MetricsLog::open(&p).unwrap();
        assert!(log.append(&record("pretrain", 0, 1, &[])).is_err());
        log.append(&record("pretrain", 0, 3, &[])).unwrap();
        log.restart("pretrain", 0).unwrap();
        log.append(&record("pretrain", 0, 1, &[("ee", 5.0)])).unwrap();
        drop(log);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"seed\":1"));
    }

    #[test]
    fn sidecar_hash_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv_tagged(&p, &[(1, 2.0)], "abc", "test").unwrap();
        assert!(check_meta(&p, "abc").is_ok());
        assert!(matches!(check_meta(&p, "abd"), Err(Error::HashMismatch { .. })));
    }
}
