//! Binary snapshots of stores and ensembles.
//!
//! Store layout (little-endian):
//!
//! ```text
//! "FMEM" | u32 version | u32 header_len | JSON header
//! records | field cells (u32 row, u32 col, f64) | mask cells (same)
//! u64 CRC-64/XZ over every preceding byte
//! ```
//!
//! Ensembles use magic "FMEN" and embed one length-prefixed store snapshot
//! per agent. Writes go to a temporary file in the target directory which is
//! then renamed over the destination.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Embedding, FieldPosition, LocalEmbedder, ProviderKind};
use crate::error::{Error, Result};
use crate::field::Cell;
use crate::multi_agent::{AgentEnsemble, CouplingMatrix};
use crate::sparse::{SparseField, SparseMask};
use crate::store::{MemoryRecord, MemoryStore, StoreConfig, StoreParts};

pub const FORMAT_VERSION: u32 = 1;
const STORE_MAGIC: &[u8; 4] = b"FMEM";
const ENSEMBLE_MAGIC: &[u8; 4] = b"FMEN";
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const CHECKSUM_NAME: &str = "crc64-xz";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreHeader {
    version: u32,
    checksum: String,
    config: StoreConfig,
    clock: f64,
    origin: f64,
    evolved_steps: u64,
    field_time: f64,
    provider: ProviderKind,
    dimension: usize,
    records: usize,
    field_cells: usize,
    mask_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleHeader {
    version: u32,
    checksum: String,
    coupling: CouplingMatrix,
    agents: usize,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn cell(&mut self, c: Cell) {
        self.u32(c.row as u32);
        self.u32(c.col as u32);
    }
    fn finish(mut self) -> Vec<u8> {
        let sum = CHECKSUM.checksum(&self.0);
        self.u64(sum);
        self.0
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn truncated() -> Error {
    Error::CorruptSnapshot("unexpected end of data".into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or_else(truncated)?;
        self.pos = end;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::CorruptSnapshot("text is not UTF-8".into()))
    }
    fn cell(&mut self, n: usize) -> Result<Cell> {
        let row = self.u32()? as usize;
        let col = self.u32()? as usize;
        if row >= n || col >= n {
            return Err(Error::CorruptSnapshot(format!(
                "cell ({row}, {col}) outside a {n}x{n} grid"
            )));
        }
        Ok(Cell::new(row, col))
    }
    fn exhausted(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Check magic, version and checksum, returning the body between the
/// version word and the checksum.
fn open_envelope<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<&'a [u8]> {
    if bytes.len() < 8 {
        return Err(Error::CorruptSnapshot("file too short".into()));
    }
    if &bytes[..4] != magic {
        return Err(Error::CorruptSnapshot(
            "bad magic; not a snapshot of this kind".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < 16 {
        return Err(Error::CorruptSnapshot("file too short".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if CHECKSUM.checksum(payload) != stored {
        return Err(Error::CorruptSnapshot("checksum mismatch".into()));
    }
    Ok(&payload[8..])
}

fn read_header<T: serde::de::DeserializeOwned>(r: &mut Reader) -> Result<T> {
    let len = r.u32()? as usize;
    serde_json::from_slice(r.take(len)?).map_err(|e| Error::CorruptSnapshot(format!("header: {e}")))
}

fn write_header(w: &mut Writer, header: &impl Serialize) {
    let json = serde_json::to_vec(header).expect("header serializes");
    w.u32(json.len() as u32);
    w.0.extend_from_slice(&json);
}

pub fn encode_store(store: &MemoryStore) -> Vec<u8> {
    let (records, field, mask, evolved_steps) = store.parts();
    let header = StoreHeader {
        version: FORMAT_VERSION,
        checksum: CHECKSUM_NAME.into(),
        config: store.config().clone(),
        clock: store.clock(),
        origin: store.origin(),
        evolved_steps,
        field_time: field.time,
        provider: store.embedder().kind(),
        dimension: store.embedder().dimension(),
        records: records.len(),
        field_cells: field.active_count(),
        mask_cells: mask.len(),
    };
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(STORE_MAGIC);
    w.u32(FORMAT_VERSION);
    write_header(&mut w, &header);
    for r in records {
        w.u64(r.id);
        w.f64(r.created_at);
        w.f64(r.last_access);
        w.u64(r.access_count);
        w.f64(r.importance);
        w.f64(r.position.x);
        w.f64(r.position.y);
        w.cell(r.position.cell);
        w.str(&r.text);
        match &r.session_id {
            Some(s) => {
                w.u8(1);
                w.str(s);
            }
            None => w.u8(0),
        }
        w.u32(r.embedding.dimension() as u32);
        for &v in r.embedding.as_slice() {
            w.f64(v);
        }
    }
    for (cell, v) in field.iter() {
        w.cell(cell);
        w.f64(v);
    }
    for (cell, v) in mask.iter() {
        w.cell(cell);
        w.f64(v);
    }
    w.finish()
}

/// Picks an embedder for a snapshot given its recorded provider kind and
/// dimension.
pub type EmbedderResolver<'a> = dyn Fn(ProviderKind, usize) -> Result<Arc<dyn Embedder>> + 'a;

/// Local snapshots get a fresh local embedder; other providers must be
/// supplied through [`load_with`].
pub fn default_resolver(kind: ProviderKind, dimension: usize) -> Result<Arc<dyn Embedder>> {
    match kind {
        ProviderKind::DeterministicLocal => Ok(Arc::new(LocalEmbedder::new(dimension))),
        other => Err(Error::ProviderUnavailable(format!(
            "snapshot was built with a {other:?} provider; supply a matching embedder"
        ))),
    }
}

pub fn decode_store(bytes: &[u8], resolve: &EmbedderResolver) -> Result<MemoryStore> {
    let body = open_envelope(bytes, STORE_MAGIC)?;
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    let header: StoreHeader = read_header(&mut r)?;
    let n = header.config.params.grid_size;
    let embedder = resolve(header.provider, header.dimension)?;
    if embedder.dimension() != header.dimension {
        return Err(Error::DimensionMismatch {
            expected: header.dimension,
            actual: embedder.dimension(),
        });
    }

    let mut records = Vec::with_capacity(header.records.min(1 << 20));
    for expected_id in 0..header.records as u64 {
        let id = r.u64()?;
        if id != expected_id {
            return Err(Error::CorruptSnapshot(format!(
                "record id {id} out of sequence"
            )));
        }
        let created_at = r.f64()?;
        let last_access = r.f64()?;
        let access_count = r.u64()?;
        let importance = r.f64()?;
        let x = r.f64()?;
        let y = r.f64()?;
        let cell = r.cell(n)?;
        let text = r.str()?;
        let session_id = match r.u8()? {
            0 => None,
            1 => Some(r.str()?),
            f => return Err(Error::CorruptSnapshot(format!("bad session flag {f}"))),
        };
        let dim = r.u32()? as usize;
        if dim != header.dimension {
            return Err(Error::DimensionMismatch {
                expected: header.dimension,
                actual: dim,
            });
        }
        let embedding = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        records.push(MemoryRecord {
            id,
            text,
            embedding: Embedding::from_raw(embedding),
            position: FieldPosition { x, y, cell },
            importance,
            created_at,
            last_access,
            access_count,
            session_id,
        });
    }

    let mut field = SparseField::new(n);
    for _ in 0..header.field_cells {
        let cell = r.cell(n)?;
        field.set(cell, r.f64()?)?;
    }
    field.time = header.field_time;
    let mut mask = SparseMask::new(header.config.params.importance_floor);
    for _ in 0..header.mask_cells {
        let cell = r.cell(n)?;
        mask.set(cell, r.f64()?);
    }
    if !r.exhausted() {
        return Err(Error::CorruptSnapshot(
            "trailing bytes after mask section".into(),
        ));
    }

    MemoryStore::from_parts(
        StoreParts {
            config: header.config,
            records,
            field,
            mask,
            clock: header.clock,
            origin: header.origin,
            evolved_steps: header.evolved_steps,
        },
        embedder,
    )
}

pub fn encode_ensemble(ensemble: &AgentEnsemble) -> Vec<u8> {
    let header = EnsembleHeader {
        version: FORMAT_VERSION,
        checksum: CHECKSUM_NAME.into(),
        coupling: ensemble.coupling().clone(),
        agents: ensemble.len(),
    };
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(ENSEMBLE_MAGIC);
    w.u32(FORMAT_VERSION);
    write_header(&mut w, &header);
    for agent in ensemble.agents() {
        let bytes = encode_store(agent);
        w.u64(bytes.len() as u64);
        w.0.extend_from_slice(&bytes);
    }
    w.finish()
}

pub fn decode_ensemble(bytes: &[u8], resolve: &EmbedderResolver) -> Result<AgentEnsemble> {
    let body = open_envelope(bytes, ENSEMBLE_MAGIC)?;
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    let header: EnsembleHeader = read_header(&mut r)?;
    let mut agents = Vec::with_capacity(header.agents.min(1024));
    for _ in 0..header.agents {
        let len = usize::try_from(r.u64()?).map_err(|_| truncated())?;
        agents.push(decode_store(r.take(len)?, resolve)?);
    }
    if !r.exhausted() {
        return Err(Error::CorruptSnapshot(
            "trailing bytes after last agent".into(),
        ));
    }
    AgentEnsemble::new(agents, header.coupling)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<u64> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(bytes.len() as u64)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Atomically write `store` to `path`. Returns bytes written.
pub fn save(store: &MemoryStore, path: impl AsRef<Path>) -> Result<u64> {
    write_atomic(path.as_ref(), &encode_store(store))
}

/// Load a snapshot built with the local embedder.
pub fn load(path: impl AsRef<Path>) -> Result<MemoryStore> {
    decode_store(&read_file(path.as_ref())?, &default_resolver)
}

/// Load a snapshot with an explicit embedder, which must match the recorded
/// provider kind and dimension.
pub fn load_with(path: impl AsRef<Path>, embedder: Arc<dyn Embedder>) -> Result<MemoryStore> {
    decode_store(&read_file(path.as_ref())?, &matching(embedder))
}

fn matching(
    embedder: Arc<dyn Embedder>,
) -> impl Fn(ProviderKind, usize) -> Result<Arc<dyn Embedder>> {
    move |kind, _| {
        if embedder.kind() != kind {
            return Err(Error::ProviderUnavailable(format!(
                "snapshot needs a {kind:?} provider, got {:?}",
                embedder.kind()
            )));
        }
        Ok(embedder.clone())
    }
}

pub fn save_ensemble(ensemble: &AgentEnsemble, path: impl AsRef<Path>) -> Result<u64> {
    write_atomic(path.as_ref(), &encode_ensemble(ensemble))
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<AgentEnsemble> {
    decode_ensemble(&read_file(path.as_ref())?, &default_resolver)
}

pub fn load_ensemble_with(
    path: impl AsRef<Path>,
    embedder: Arc<dyn Embedder>,
) -> Result<AgentEnsemble> {
    decode_ensemble(&read_file(path.as_ref())?, &matching(embedder))
}
