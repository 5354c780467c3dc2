//! Append-only file-backed key-value store. Each line is one JSON operation;
//! opening the file replays them.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct Op {
    k: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<String>,
}

#[derive(Debug, Default)]
pub struct KvStore {
    file: Option<File>,
    map: BTreeMap<String, String>,
}

impl KvStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        Self::from_file(file)
    }

    /// Uses an already-open file, e.g. one opened before a syscall filter
    /// forbids opening files.
    pub fn from_file(mut file: File) -> io::Result<Self> {
        file.seek(SeekFrom::Start(0))?;
        let mut map = BTreeMap::new();
        for line in BufReader::new(&file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let op: Op = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            match op.v {
                Some(v) => map.insert(op.k, v),
                None => map.remove(&op.k),
            };
        }
        Ok(KvStore { file: Some(file), map })
    }

    pub fn is_persistent(&self) -> bool {
        self.file.is_some()
    }

    fn write_op(&mut self, op: &Op) -> io::Result<()> {
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_string(op).map_err(io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        Ok(())
    }

    pub fn put(&mut self, key: &str, value: String) -> io::Result<()> {
        self.write_op(&Op { k: key.to_string(), v: Some(value.clone()) })?;
        self.map.insert(key.to_string(), value);
        Ok(())
    }

    pub fn delete(&mut self, key: &str) -> io::Result<bool> {
        if !self.map.contains_key(key) {
            return Ok(false);
        }
        self.write_op(&Op { k: key.to_string(), v: None })?;
        self.map.remove(key);
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn scan<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.map
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
