//! Pluggable coder backends.
//!
//! A backend sees only flat arrays: symbols, per-symbol table indexes, and the
//! concatenated cumulative tables. An accelerated backend is selectable only after
//! it reproduces the golden vectors shipped with this crate byte for byte; otherwise
//! the reference coder is used and results are unchanged.

use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdf::{CdfTable, CdfView, MAX_PRECISION, MIN_PRECISION};
use crate::coder;
use crate::error::{EntropyError, Result};

pub const BACKEND_ENV: &str = "ILLM_BACKEND";

static GOLDEN_JSON: &str = include_str!("../golden/range_coder.json");
static FAST_BACKEND: OnceLock<Arc<dyn CoderBackend>> = OnceLock::new();

/// Tables flattened for a backend boundary. Table `i` owns
/// `cdf[starts[i]..starts[i + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatTables {
    pub precision: u32,
    pub cdf: Vec<u32>,
    pub starts: Vec<u32>,
    pub offsets: Vec<i32>,
    pub escape: Vec<u8>,
}

impl FlatTables {
    pub fn from_tables(tables: &[CdfTable]) -> Result<Self> {
        let precision = tables.first().map_or(16, CdfTable::precision);
        let mut flat = Self {
            precision,
            cdf: Vec::new(),
            starts: vec![0],
            offsets: Vec::with_capacity(tables.len()),
            escape: Vec::with_capacity(tables.len()),
        };
        for t in tables {
            if t.precision() != precision {
                return Err(EntropyError::InvalidTable(
                    "all tables of a stream share one precision".into(),
                ));
            }
            flat.cdf.extend_from_slice(t.cdf());
            flat.starts.push(flat.cdf.len() as u32);
            flat.offsets.push(t.offset());
            flat.escape.push(u8::from(t.has_escape()));
        }
        Ok(flat)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Validated views over every table.
    pub fn views(&self) -> Result<Vec<CdfView<'_>>> {
        let n = self.offsets.len();
        if self.starts.len() != n + 1 || self.escape.len() != n {
            return Err(EntropyError::InvalidTable("inconsistent flat table arrays".into()));
        }
        (0..n)
            .map(|i| {
                let (a, b) = (self.starts[i] as usize, self.starts[i + 1] as usize);
                let cdf = self
                    .cdf
                    .get(a..b)
                    .ok_or_else(|| EntropyError::InvalidTable("table bounds".into()))?;
                let view = CdfView {
                    precision: self.precision,
                    offset: self.offsets[i],
                    escape: self.escape[i] != 0,
                    cdf,
                };
                view.validate()?;
                Ok(view)
            })
            .collect()
    }
}

pub trait CoderBackend: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> String;
    fn encode(&self, symbols: &[i32], indexes: &[u32], tables: &FlatTables) -> Result<Vec<u8>>;
    fn decode(&self, data: &[u8], indexes: &[u32], tables: &FlatTables) -> Result<Vec<i32>>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ReferenceBackend;

impl CoderBackend for ReferenceBackend {
    fn name(&self) -> &str {
        "reference"
    }

    fn version(&self) -> String {
        concat!("reference-", env!("CARGO_PKG_VERSION")).to_string()
    }

    fn encode(&self, symbols: &[i32], indexes: &[u32], tables: &FlatTables) -> Result<Vec<u8>> {
        coder::encode_with_views(symbols, indexes, &tables.views()?)
    }

    fn decode(&self, data: &[u8], indexes: &[u32], tables: &FlatTables) -> Result<Vec<i32>> {
        coder::decode_with_views(data, indexes, &tables.views()?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenTable {
    pub offset: i32,
    pub escape: bool,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    pub precision: u32,
    pub tables: Vec<GoldenTable>,
    pub symbols: Vec<i32>,
    pub indexes: Vec<u32>,
    pub expected: String,
}

impl GoldenCase {
    pub fn flat_tables(&self) -> Result<FlatTables> {
        let tables = self
            .tables
            .iter()
            .map(|t| CdfTable::from_counts(&t.counts, t.offset, self.precision, t.escape))
            .collect::<Result<Vec<_>>>()?;
        FlatTables::from_tables(&tables)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenVectors {
    pub format: u32,
    pub cases: Vec<GoldenCase>,
    pub conformance_hash: String,
}

impl GoldenVectors {
    pub fn builtin() -> Self {
        serde_json::from_str(GOLDEN_JSON).expect("shipped golden vectors parse")
    }

    /// Hash over every expected stream, length-prefixed, in case order.
    pub fn expected_hash(&self) -> String {
        hash_streams(self.cases.iter().map(|c| hex::decode(&c.expected).unwrap_or_default()))
    }
}

pub fn hash_streams<I: IntoIterator<Item = Vec<u8>>>(streams: I) -> String {
    let mut h = Sha256::new();
    for s in streams {
        h.update((s.len() as u64).to_le_bytes());
        h.update(&s);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackendCapabilities {
    pub name: String,
    pub version: String,
    pub min_precision: u32,
    pub max_precision: u32,
    pub conformance_hash: String,
    pub self_test_passed: bool,
}

pub fn probe(backend: &dyn CoderBackend) -> BackendCapabilities {
    probe_with(backend, &GoldenVectors::builtin())
}

/// Runs the golden vectors through `backend`: every stream must match byte for byte
/// and decode back to its symbols, and the hash of the produced streams must equal
/// the recorded conformance hash.
pub fn probe_with(backend: &dyn CoderBackend, vectors: &GoldenVectors) -> BackendCapabilities {
    let mut passed = !vectors.cases.is_empty();
    let mut produced = Vec::with_capacity(vectors.cases.len());
    for case in &vectors.cases {
        let outcome = case.flat_tables().and_then(|flat| {
            let bytes = backend.encode(&case.symbols, &case.indexes, &flat)?;
            let decoded = backend.decode(&bytes, &case.indexes, &flat)?;
            Ok((bytes, decoded))
        });
        match outcome {
            Ok((bytes, decoded)) => {
                if hex::encode(&bytes) != case.expected || decoded != case.symbols {
                    passed = false;
                }
                produced.push(bytes);
            }
            Err(_) => {
                passed = false;
                produced.push(Vec::new());
            }
        }
    }
    let conformance_hash = hash_streams(produced);
    passed &= conformance_hash == vectors.conformance_hash;
    BackendCapabilities {
        name: backend.name().to_string(),
        version: backend.version(),
        min_precision: MIN_PRECISION,
        max_precision: MAX_PRECISION,
        conformance_hash,
        self_test_passed: passed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Reference,
    Fast,
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "reference" | "" => Ok(Self::Reference),
            "fast" => Ok(Self::Fast),
            other => Err(format!("{BACKEND_ENV} must be `reference` or `fast`, got `{other}`")),
        }
    }
}

pub fn choice_from_env() -> std::result::Result<BackendChoice, String> {
    match std::env::var(BACKEND_ENV) {
        Ok(v) => v.parse(),
        Err(_) => Ok(BackendChoice::Reference),
    }
}

/// Makes an accelerated backend available to [`select_backend`]. Only the first
/// registration wins.
pub fn register_fast_backend(backend: Arc<dyn CoderBackend>) -> bool {
    FAST_BACKEND.set(backend).is_ok()
}

pub fn registered_fast_backend() -> Option<Arc<dyn CoderBackend>> {
    FAST_BACKEND.get().cloned()
}

/// Picks the backend for `choice`, falling back to the reference coder when the
/// fast one is missing or fails its self-test.
pub fn select_backend(
    choice: BackendChoice,
    fast: Option<Arc<dyn CoderBackend>>,
) -> Arc<dyn CoderBackend> {
    if choice == BackendChoice::Fast {
        match fast {
            Some(b) => {
                let caps = probe(b.as_ref());
                if caps.self_test_passed {
                    return b;
                }
                log::warn!(
                    "backend `{}` failed its golden-vector self-test; using the reference coder",
                    caps.name
                );
            }
            None => log::warn!("no fast entropy backend is built; using the reference coder"),
        }
    }
    Arc::new(ReferenceBackend)
}

/// Backend chosen by `ILLM_BACKEND`, considering any registered fast backend.
pub fn backend_from_env() -> std::result::Result<Arc<dyn CoderBackend>, String> {
    Ok(select_backend(choice_from_env()?, registered_fast_backend()))
}
