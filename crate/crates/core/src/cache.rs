//! Persistent score cache.
//!
//! Layout of a store directory:
//!
//! - `scores.log`: the append-only record log, source of truth.
//! - `meta.json`: `{"format_version": 1}`.
//!
//! ```text
//! LOG     := HEADER RECORD*
//! HEADER  := "ZSLSCORE" u32le(version)
//! RECORD  := u32le(len(PAYLOAD)) u32le(crc32(PAYLOAD)) PAYLOAD
//! PAYLOAD := key[32] f64le(entailment) f64le(neutral) f64le(contradiction)
//!            u8(mode) i64le(created_at_ms) u16le(len(model)) model
//! ```
//!
//! The in-memory index (key -> record offset) is rebuilt on open, with later
//! records for the same key winning. An incomplete or checksum-failing
//! record at open time is treated as a torn tail: the log is truncated there.
//! Lookups re-read and re-check the stored record.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nli::{score_pairs, BatchOptions, NliBackend, ScoreRequest, ScoreTriple, ScoringMode};
use crate::text;

pub const LOG_FILE: &str = "scores.log";
pub const META_FILE: &str = "meta.json";
pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 8] = b"ZSLSCORE";
const HEADER_LEN: u64 = 12;
const RECORD_PREFIX: usize = 8;
const FIXED_PAYLOAD: usize = 32 + 24 + 1 + 8 + 2;
const MAX_PAYLOAD: usize = FIXED_PAYLOAD + u16::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    /// SHA-256 of `model 0x1F mode 0x1F nfc(premise) 0x1F nfc(hypothesis)`.
    pub fn new(model_id: &str, mode: ScoringMode, premise: &str, hypothesis: &str) -> Self {
        let mut h = Sha256::new();
        h.update(model_id.as_bytes());
        h.update([0x1F]);
        h.update(mode.as_str().as_bytes());
        h.update([0x1F]);
        h.update(text::nfc(premise).as_bytes());
        h.update([0x1F]);
        h.update(text::nfc(hypothesis).as_bytes());
        Self(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub key: CacheKey,
    pub triple: ScoreTriple,
    pub model_id: String,
    pub mode: ScoringMode,
    pub created_at_ms: i64,
}

impl CacheRecord {
    fn encode(&self) -> Vec<u8> {
        let model = self.model_id.as_bytes();
        let mut payload = Vec::with_capacity(FIXED_PAYLOAD + model.len());
        payload.extend_from_slice(&self.key.0);
        payload.extend_from_slice(&self.triple.entailment.to_le_bytes());
        payload.extend_from_slice(&self.triple.neutral.to_le_bytes());
        payload.extend_from_slice(&self.triple.contradiction.to_le_bytes());
        payload.push(mode_byte(self.mode));
        payload.extend_from_slice(&self.created_at_ms.to_le_bytes());
        payload.extend_from_slice(&(model.len() as u16).to_le_bytes());
        payload.extend_from_slice(model);

        let mut out = Vec::with_capacity(RECORD_PREFIX + payload.len());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    fn decode(payload: &[u8]) -> std::result::Result<Self, String> {
        if payload.len() < FIXED_PAYLOAD {
            return Err(format!("payload of {} bytes is too short", payload.len()));
        }
        let f64_at = |i: usize| f64::from_le_bytes(payload[i..i + 8].try_into().expect("8 bytes"));
        let key = CacheKey(payload[..32].try_into().expect("32 bytes"));
        let triple = ScoreTriple {
            entailment: f64_at(32),
            neutral: f64_at(40),
            contradiction: f64_at(48),
        };
        let mode = match payload[56] {
            0 => ScoringMode::ThreeWay,
            1 => ScoringMode::Binary,
            b => return Err(format!("unknown mode byte {b}")),
        };
        let created_at_ms = i64::from_le_bytes(payload[57..65].try_into().expect("8 bytes"));
        let model_len = u16::from_le_bytes(payload[65..67].try_into().expect("2 bytes")) as usize;
        if payload.len() != FIXED_PAYLOAD + model_len {
            return Err("model length does not match payload".into());
        }
        let model_id = String::from_utf8(payload[FIXED_PAYLOAD..].to_vec())
            .map_err(|_| "model id is not UTF-8".to_string())?;
        triple.validate().map_err(|e| e.to_string())?;
        Ok(Self {
            key,
            triple,
            model_id,
            mode,
            created_at_ms,
        })
    }
}

fn mode_byte(mode: ScoringMode) -> u8 {
    match mode {
        ScoringMode::ThreeWay => 0,
        ScoringMode::Binary => 1,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub records: u64,
    pub hits: u64,
    pub misses: u64,
    pub bytes: u64,
}

/// Outcome of scanning one record slot in the log.
enum Slot {
    Record { record: CacheRecord, next: u64 },
    Corrupt { reason: String, next: u64 },
    Incomplete,
}

fn scan_slot(buf: &[u8], offset: u64) -> Slot {
    let start = offset as usize;
    if buf.len() < start + RECORD_PREFIX {
        return Slot::Incomplete;
    }
    let len = u32::from_le_bytes(buf[start..start + 4].try_into().expect("4 bytes")) as usize;
    let crc = u32::from_le_bytes(buf[start + 4..start + 8].try_into().expect("4 bytes"));
    if len > MAX_PAYLOAD || buf.len() < start + RECORD_PREFIX + len {
        return Slot::Incomplete;
    }
    let payload = &buf[start + RECORD_PREFIX..start + RECORD_PREFIX + len];
    let next = (start + RECORD_PREFIX + len) as u64;
    if crc32fast::hash(payload) != crc {
        return Slot::Corrupt {
            reason: "checksum mismatch".into(),
            next,
        };
    }
    match CacheRecord::decode(payload) {
        Ok(record) => Slot::Record { record, next },
        Err(reason) => Slot::Corrupt { reason, next },
    }
}

fn check_header(buf: &[u8]) -> Result<()> {
    if buf.len() < HEADER_LEN as usize || &buf[..8] != MAGIC {
        return Err(Error::StoreCorrupt {
            offset: 0,
            reason: "bad log header".into(),
        });
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::StoreCorrupt {
            offset: 8,
            reason: format!("unsupported format version {version}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct VerifyReport {
    pub records: u64,
    pub corrupt: Vec<(u64, String)>,
    /// Offset of an incomplete trailing record, if any.
    pub torn_tail: Option<u64>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.corrupt.is_empty() && self.torn_tail.is_none()
    }
}

/// Re-checks every record of the store in `dir` without modifying it.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let path = dir.join(LOG_FILE);
    let buf =
        std::fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    check_header(&buf)?;
    let mut report = VerifyReport::default();
    let mut offset = HEADER_LEN;
    while (offset as usize) < buf.len() {
        match scan_slot(&buf, offset) {
            Slot::Record { next, .. } => {
                report.records += 1;
                offset = next;
            }
            Slot::Corrupt { reason, next } => {
                report.corrupt.push((offset, reason));
                offset = next;
            }
            Slot::Incomplete => {
                report.torn_tail = Some(offset);
                break;
            }
        }
    }
    Ok(report)
}

/// Single-writer, multi-reader score store.
#[derive(Debug)]
pub struct ScoreStore {
    dir: PathBuf,
    writer: Mutex<File>,
    reader: File,
    index: RwLock<HashMap<CacheKey, u64>>,
    len: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreStore {
    /// Opens or creates the store in `dir`, truncating a torn tail.
    pub fn open(dir: &Path) -> Result<Self> {
        let io = |what: &str, e| Error::io(format!("{what} {}", dir.display()), e);
        std::fs::create_dir_all(dir).map_err(|e| io("creating", e))?;

        let meta_path = dir.join(META_FILE);
        if meta_path.exists() {
            let raw = std::fs::read_to_string(&meta_path).map_err(|e| io("reading meta in", e))?;
            let meta: Meta = serde_json::from_str(&raw).map_err(|e| Error::StoreCorrupt {
                offset: 0,
                reason: format!("bad {META_FILE}: {e}"),
            })?;
            if meta.format_version != FORMAT_VERSION {
                return Err(Error::StoreCorrupt {
                    offset: 0,
                    reason: format!("unsupported format version {}", meta.format_version),
                });
            }
        } else {
            let meta = serde_json::to_string(&Meta {
                format_version: FORMAT_VERSION,
            })
            .expect("meta serializes");
            std::fs::write(&meta_path, meta + "\n").map_err(|e| io("writing meta in", e))?;
        }

        let log_path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|e| io("opening log in", e))?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)
            .map_err(|e| io("reading log in", e))?;
        if buf.is_empty() {
            let mut header = MAGIC.to_vec();
            header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
            file.write_all(&header)
                .map_err(|e| io("writing log header in", e))?;
            buf = header;
        }
        check_header(&buf)?;

        let mut index = HashMap::new();
        let mut offset = HEADER_LEN;
        while (offset as usize) < buf.len() {
            match scan_slot(&buf, offset) {
                Slot::Record { record, next } => {
                    index.insert(record.key, offset);
                    offset = next;
                }
                Slot::Corrupt { .. } | Slot::Incomplete => {
                    log::warn!(
                        "{}: truncating {} bytes of corrupt tail at offset {offset}",
                        log_path.display(),
                        buf.len() as u64 - offset
                    );
                    file.set_len(offset)
                        .map_err(|e| io("truncating log in", e))?;
                    break;
                }
            }
        }
        let len = offset;
        file.seek(SeekFrom::End(0))
            .map_err(|e| io("seeking log in", e))?;
        let reader = file
            .try_clone()
            .map_err(|e| io("cloning log handle in", e))?;

        Ok(Self {
            dir: dir.to_path_buf(),
            writer: Mutex::new(file),
            reader,
            index: RwLock::new(index),
            len: AtomicU64::new(len),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read_record(&self, offset: u64) -> Result<CacheRecord> {
        let corrupt = |reason: String| Error::StoreCorrupt { offset, reason };
        let mut prefix = [0u8; RECORD_PREFIX];
        self.reader
            .read_exact_at(&mut prefix, offset)
            .map_err(|e| corrupt(format!("unreadable record: {e}")))?;
        let len = u32::from_le_bytes(prefix[..4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(prefix[4..].try_into().expect("4 bytes"));
        if len > MAX_PAYLOAD {
            return Err(corrupt(format!("record length {len} out of range")));
        }
        let mut payload = vec![0u8; len];
        self.reader
            .read_exact_at(&mut payload, offset + RECORD_PREFIX as u64)
            .map_err(|e| corrupt(format!("unreadable record: {e}")))?;
        if crc32fast::hash(&payload) != crc {
            return Err(corrupt("checksum mismatch".into()));
        }
        CacheRecord::decode(&payload).map_err(corrupt)
    }

    /// The triple last stored under `key`, or `None`.
    pub fn lookup(&self, key: &CacheKey) -> Result<Option<ScoreTriple>> {
        let offset = self
            .index
            .read()
            .expect("index lock poisoned")
            .get(key)
            .copied();
        match offset {
            Some(offset) => {
                let record = self.read_record(offset)?;
                if record.key != *key {
                    return Err(Error::StoreCorrupt {
                        offset,
                        reason: "record key does not match index".into(),
                    });
                }
                self.hits.fetch_add(1, Ordering::Relaxed);
                Ok(Some(record.triple))
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    /// Appends `triple` under `key`. Re-storing an identical value is a no-op.
    pub fn store(
        &self,
        key: CacheKey,
        model_id: &str,
        mode: ScoringMode,
        triple: ScoreTriple,
    ) -> Result<()> {
        triple.validate()?;
        if model_id.len() > u16::MAX as usize {
            return Err(Error::Config("model id too long for cache record".into()));
        }
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        let existing = self
            .index
            .read()
            .expect("index lock poisoned")
            .get(&key)
            .copied();
        if let Some(offset) = existing {
            if self
                .read_record(offset)
                .map(|r| r.triple == triple)
                .unwrap_or(false)
            {
                return Ok(());
            }
        }
        let created_at_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        let bytes = CacheRecord {
            key,
            triple,
            model_id: model_id.to_string(),
            mode,
            created_at_ms,
        }
        .encode();
        let offset = self.len.load(Ordering::SeqCst);
        writer
            .write_all(&bytes)
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(format!("appending to {}", self.dir.display()), e))?;
        self.len
            .store(offset + bytes.len() as u64, Ordering::SeqCst);
        self.index
            .write()
            .expect("index lock poisoned")
            .insert(key, offset);
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            records: self.index.read().expect("index lock poisoned").len() as u64,
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            bytes: self.len.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedScores {
    pub triples: Vec<ScoreTriple>,
    /// Pairs sent to the backend (unique cache misses).
    pub backend_requests: usize,
    pub hits: usize,
    pub misses: usize,
}

/// [`score_pairs`] behind the store: only missing pairs reach the backend,
/// each unique pair once, and every fresh score is persisted before return.
pub fn cached_score_pairs(
    store: &ScoreStore,
    backend: &dyn NliBackend,
    mode: ScoringMode,
    requests: &[ScoreRequest],
    options: BatchOptions,
) -> Result<CachedScores> {
    if requests.is_empty() {
        return Err(Error::InvalidRequest("no requests to score".into()));
    }
    let model = backend.model_id();
    let keys: Vec<CacheKey> = requests
        .iter()
        .map(|r| CacheKey::new(model, mode, &r.premise, &r.hypothesis))
        .collect();

    let mut triples: Vec<Option<ScoreTriple>> = Vec::with_capacity(requests.len());
    let mut missing: IndexMap<CacheKey, usize> = IndexMap::new();
    let (mut hits, mut misses) = (0, 0);
    for (i, key) in keys.iter().enumerate() {
        let found = store.lookup(key)?;
        if found.is_some() {
            hits += 1;
        } else {
            misses += 1;
            missing.entry(*key).or_insert(i);
        }
        triples.push(found);
    }

    let mut fresh: HashMap<CacheKey, ScoreTriple> = HashMap::with_capacity(missing.len());
    if !missing.is_empty() {
        let to_score: Vec<ScoreRequest> = missing.values().map(|&i| requests[i].clone()).collect();
        let scored = score_pairs(backend, &to_score, options)?;
        for ((key, _), triple) in missing.iter().zip(scored) {
            store.store(*key, model, mode, triple)?;
            fresh.insert(*key, triple);
        }
    }

    let triples = triples
        .into_iter()
        .zip(&keys)
        .map(|(t, k)| t.unwrap_or_else(|| fresh[k]))
        .collect();
    Ok(CachedScores {
        triples,
        backend_requests: missing.len(),
        hits,
        misses,
    })
}
