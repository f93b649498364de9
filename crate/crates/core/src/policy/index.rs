//! Per-tenant vector index with binary persistence and atomic re-indexing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use super::embed::{cosine, embed, fnv1a, DIM};
use crate::error::ModelError;
use crate::model::{PolicyChunkDoc, PolicyCorpusDoc, TenantId};

pub const DEFAULT_FLOOR: f64 = 0.35;
const MAGIC: &[u8; 4] = b"CLPI";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub chunk_id: String,
    pub similarity: f32,
}

/// Embedded chunks for one tenant.
#[derive(Debug, Clone)]
pub struct TenantIndex {
    pub tenant: TenantId,
    pub facility: String,
    pub floor: f64,
    pub chunks: Vec<PolicyChunkDoc>,
    vectors: Vec<Vec<f32>>,
}

#[derive(PartialEq)]
struct Ranked(f32, usize, String);

impl Eq for Ranked {}

impl Ord for Ranked {
    /// Greater means better: higher similarity, then smaller chunk id.
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then_with(|| o.2.cmp(&self.2))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Fingerprint of the chunk ids and texts a vector file was built from.
pub fn corpus_fingerprint(chunks: &[PolicyChunkDoc]) -> u64 {
    let mut bytes = Vec::new();
    for c in chunks {
        bytes.extend_from_slice(c.chunk_id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(c.text.as_bytes());
        bytes.push(0);
    }
    fnv1a(&bytes)
}

impl TenantIndex {
    pub fn build(doc: &PolicyCorpusDoc) -> Self {
        Self {
            tenant: doc.tenant.clone(),
            facility: doc.facility.clone(),
            floor: doc.similarity_floor.unwrap_or(DEFAULT_FLOOR),
            chunks: doc.chunks.clone(),
            vectors: doc.chunks.iter().map(|c| embed(&c.text)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, id: &str) -> Option<&PolicyChunkDoc> {
        self.chunks.iter().find(|c| c.chunk_id == id)
    }

    pub fn similarity(&self, query: &[f32], i: usize) -> f32 {
        cosine(query, &self.vectors[i])
    }

    /// Top `k` chunks at or above the floor, by similarity then chunk id.
    pub fn search(&self, query: &str, k: usize) -> Vec<Hit> {
        self.search_vector(&embed(query), k)
    }

    pub fn search_vector(&self, q: &[f32], k: usize) -> Vec<Hit> {
        if k == 0 {
            return Vec::new();
        }
        // Min-heap of the best k seen so far.
        let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
        for (i, c) in self.chunks.iter().enumerate() {
            let s = self.similarity(q, i);
            if f64::from(s) < self.floor {
                continue;
            }
            heap.push(std::cmp::Reverse(Ranked(s, i, c.chunk_id.clone())));
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut out: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out.into_iter()
            .map(|r| Hit {
                chunk_id: r.2,
                similarity: r.0,
            })
            .collect()
    }

    /// Writes the vectors: magic, version, dim, count, ids, f32 LE values,
    /// corpus fingerprint.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(DIM as u32).to_le_bytes())?;
        w.write_all(&(self.chunks.len() as u32).to_le_bytes())?;
        for c in &self.chunks {
            let id = c.chunk_id.as_bytes();
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id)?;
        }
        for v in &self.vectors {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.write_all(&corpus_fingerprint(&self.chunks).to_le_bytes())
    }

    /// Reads vectors written by [`write_to`](Self::write_to) for `doc`;
    /// rejects files built from a different corpus.
    pub fn read_from(doc: &PolicyCorpusDoc, r: &mut impl Read) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::invalid("policy_index", m.to_string());
        let mut buf4 = [0u8; 4];
        let mut read4 = |r: &mut dyn Read| -> Result<[u8; 4], ModelError> {
            r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
            Ok(buf4)
        };
        if &read4(r)? != MAGIC {
            return Err(bad("bad magic"));
        }
        if u32::from_le_bytes(read4(r)?) != FORMAT_VERSION {
            return Err(bad("unsupported format version"));
        }
        if u32::from_le_bytes(read4(r)?) as usize != DIM {
            return Err(bad("dimension mismatch"));
        }
        let n = u32::from_le_bytes(read4(r)?) as usize;
        if n != doc.chunks.len() {
            return Err(bad("chunk count differs from corpus"));
        }
        for c in &doc.chunks {
            let len = u32::from_le_bytes(read4(r)?) as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id).map_err(|e| bad(&e.to_string()))?;
            if id != c.chunk_id.as_bytes() {
                return Err(bad("chunk ids differ from corpus"));
            }
        }
        let mut vectors = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = Vec::with_capacity(DIM);
            for _ in 0..DIM {
                v.push(f32::from_le_bytes(read4(r)?));
            }
            vectors.push(v);
        }
        let mut fp = [0u8; 8];
        r.read_exact(&mut fp).map_err(|e| bad(&e.to_string()))?;
        if u64::from_le_bytes(fp) != corpus_fingerprint(&doc.chunks) {
            return Err(bad("fingerprint mismatch; re-index required"));
        }
        Ok(Self {
            tenant: doc.tenant.clone(),
            facility: doc.facility.clone(),
            floor: doc.similarity_floor.unwrap_or(DEFAULT_FLOOR),
            chunks: doc.chunks.clone(),
            vectors,
        })
    }
}

/// All tenant indexes. Searches hold an `Arc` snapshot, so a re-index
/// swaps the tenant entry without disturbing in-flight queries.
#[derive(Debug, Default)]
pub struct PolicyIndex {
    tenants: RwLock<BTreeMap<TenantId, Arc<TenantIndex>>>,
}

impl PolicyIndex {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a PolicyCorpusDoc>) -> Self {
        let idx = Self::default();
        for d in docs {
            idx.reindex(d);
        }
        idx
    }

    pub fn tenant(&self, t: &TenantId) -> Option<Arc<TenantIndex>> {
        self.tenants.read().unwrap().get(t).cloned()
    }

    pub fn tenants(&self) -> Vec<TenantId> {
        self.tenants.read().unwrap().keys().cloned().collect()
    }

    /// Rebuilds one tenant and swaps it in.
    pub fn reindex(&self, doc: &PolicyCorpusDoc) {
        let fresh = Arc::new(TenantIndex::build(doc));
        self.tenants.write().unwrap().insert(doc.tenant.clone(), fresh);
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |path: &Path, source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (t, idx) in self.tenants.read().unwrap().iter() {
            let path = dir.join(format!("{t}.clpi"));
            let tmp = dir.join(format!("{t}.clpi.tmp"));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(|e| io(&tmp, e))?);
            idx.write_to(&mut f).map_err(|e| io(&tmp, e))?;
            f.flush().map_err(|e| io(&tmp, e))?;
            drop(f);
            std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))?;
        }
        Ok(())
    }

    /// Loads saved vectors for each corpus, rebuilding any tenant whose
    /// file is missing or stale. Returns the tenants that were rebuilt.
    pub fn load_dir<'a>(dir: &Path, docs: impl IntoIterator<Item = &'a PolicyCorpusDoc>) -> (Self, Vec<TenantId>) {
        let idx = Self::default();
        let mut rebuilt = Vec::new();
        for d in docs {
            let path = dir.join(format!("{}.clpi", d.tenant));
            let loaded = std::fs::File::open(&path)
                .ok()
                .and_then(|f| TenantIndex::read_from(d, &mut std::io::BufReader::new(f)).ok());
            match loaded {
                Some(t) => {
                    idx.tenants.write().unwrap().insert(d.tenant.clone(), Arc::new(t));
                }
                None => {
                    idx.reindex(d);
                    rebuilt.push(d.tenant.clone());
                }
            }
        }
        (idx, rebuilt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PolicyCategory;

    fn doc(tenant: &str, texts: &[&str]) -> PolicyCorpusDoc {
        PolicyCorpusDoc {
            schema_version: 1,
            tenant: TenantId::new(tenant),
            facility: format!("{tenant} clinic"),
            similarity_floor: None,
            chunks: texts
                .iter()
                .enumerate()
                .map(|(i, t)| PolicyChunkDoc {
                    chunk_id: format!("{tenant}-{i}"),
                    category: PolicyCategory::ServicesAmenities,
                    text: t.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn vectors_round_trip_and_stale_files_rebuild() {
        let a = doc("a", &["free parking in the north garage", "visiting hours end at eight"]);
        let idx = PolicyIndex::build([&a]);
        let dir = tempfile::tempdir().unwrap();
        idx.save_dir(dir.path()).unwrap();
        let (loaded, rebuilt) = PolicyIndex::load_dir(dir.path(), [&a]);
        assert!(rebuilt.is_empty());
        let q = "parking garage";
        assert_eq!(loaded.tenant(&a.tenant).unwrap().search(q, 3), idx.tenant(&a.tenant).unwrap().search(q, 3));

        let mut changed = a.clone();
        changed.chunks[1].text = "visiting hours end at nine".into();
        let (_, rebuilt) = PolicyIndex::load_dir(dir.path(), [&changed]);
        assert_eq!(rebuilt, vec![changed.tenant.clone()]);
        let mut bytes = Vec::new();
        idx.tenant(&a.tenant).unwrap().write_to(&mut bytes).unwrap();
        assert!(TenantIndex::read_from(&changed, &mut bytes.as_slice()).is_err());
    }

    #[test]
    fn reindex_leaves_held_snapshots_intact() {
        let a = doc("a", &["free parking in the north garage"]);
        let idx = PolicyIndex::build([&a]);
        let held = idx.tenant(&a.tenant).unwrap();
        idx.reindex(&doc("a", &["cafeteria opens at seven", "gift shop hours"]));
        assert_eq!(held.len(), 1);
        assert_eq!(idx.tenant(&a.tenant).unwrap().len(), 2);
    }

    #[test]
    fn floor_and_k_bound_results() {
        let a = doc("a", &["parking garage", "parking lot", "parking meter", "cafeteria menu"]);
        let t = TenantIndex::build(&a);
        let hits = t.search("parking", 2);
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| f64::from(h.similarity) >= t.floor));
        assert!(t.search("parking", 0).is_empty());
        assert!(t.search("zebra", 3).is_empty());
    }
}
