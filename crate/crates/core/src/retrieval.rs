//! Late-interaction relevance scoring and Top-N retrieval.
//!
//! Relevance between two hybrid embeddings is the sum over query tokens of
//! the maximum dot product against any document token. Scores are exact IEEE
//! summation in row order, so results are bit-reproducible.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::embedding::{EmbeddingProvider, HybridEmbedding, TokenEmbeddings};
use crate::error::{Error, Result};
use crate::kb::KbStore;
use crate::scalar::Scalar;

/// Similarity floor applied after min-max normalization, keeping every
/// retrieved action reachable under weighted sampling.
pub const NORM_FLOOR: f64 = 1e-3;

/// One retrieved entry with raw and normalized relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit<S: Scalar> {
    pub entry_id: String,
    pub raw_score: S,
    pub norm_score: S,
    /// 1-based position in the result list.
    pub rank: usize,
}

/// Immutable map from entry id to its hybrid embedding, all sharing one dim.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex<S: Scalar> {
    dim: usize,
    records: BTreeMap<String, HybridEmbedding<S>>,
}

impl<S: Scalar> EmbeddingIndex<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, entry_id: impl Into<String>, embedding: HybridEmbedding<S>) -> Result<()> {
        let entry_id = entry_id.into();
        if embedding.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: embedding.dim(),
            });
        }
        if self.records.contains_key(&entry_id) {
            return Err(Error::DuplicateId { id: entry_id });
        }
        self.records.insert(entry_id, embedding);
        Ok(())
    }

    pub fn get(&self, entry_id: &str) -> Option<&HybridEmbedding<S>> {
        self.records.get(entry_id)
    }

    /// Records in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &HybridEmbedding<S>)> {
        self.records.iter()
    }
}

/// Build an index over a store with the given provider. Embeds the question
/// text (with its options block) and the image when present; answers and
/// reasoning stay out of the indexed text.
pub fn build_index<S: Scalar>(
    store: &KbStore,
    provider: &dyn EmbeddingProvider<S>,
) -> Result<EmbeddingIndex<S>> {
    let mut index = EmbeddingIndex::new(provider.dim());
    for entry in store.iter() {
        let embedding = crate::embedding::embed(
            provider,
            &entry.question_text(),
            entry.image_ref.as_deref(),
        )?;
        index.insert(entry.id.clone(), embedding)?;
    }
    Ok(index)
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b.iter())
        .fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Relevance of `doc` to `query`: for each query token take the maximum dot
/// product against the doc tokens, then sum over query tokens in row order.
pub fn maxsim_relevance<S: Scalar>(
    query: &HybridEmbedding<S>,
    doc: &HybridEmbedding<S>,
) -> Result<S> {
    if query.dim() != doc.dim() {
        return Err(Error::DimMismatch {
            expected: query.dim(),
            found: doc.dim(),
        });
    }
    let mut total = S::zero();
    for q in query.iter_tokens() {
        let mut best = S::neg_infinity();
        for d in doc.iter_tokens() {
            let s = dot(q, d);
            if s > best {
                best = s;
            }
        }
        total = total + best;
    }
    Ok(total)
}

/// Fill `norm_score` in place: min-max over the list with a floor of
/// [`NORM_FLOOR`]; if every raw score is equal, every norm score is 1.
pub fn normalize_similarities<S: Scalar>(hits: &mut [RetrievalHit<S>]) {
    if hits.is_empty() {
        return;
    }
    let mut min = hits[0].raw_score;
    let mut max = hits[0].raw_score;
    for h in hits.iter() {
        if h.raw_score < min {
            min = h.raw_score;
        }
        if h.raw_score > max {
            max = h.raw_score;
        }
    }
    let floor = S::from_f64_lossy(NORM_FLOOR);
    if max > min {
        let span = max - min;
        for h in hits.iter_mut() {
            let s = (h.raw_score - min) / span;
            h.norm_score = if s < floor { floor } else { s };
        }
    } else {
        for h in hits.iter_mut() {
            h.norm_score = S::one();
        }
    }
}

/// Score the whole index against `query` and return the Top-N hits sorted by
/// raw score descending, ties broken by ascending entry id. `exclude_id`
/// drops the query's own source entry when it exists in the index.
pub fn retrieve_top_n<S: Scalar>(
    query: &HybridEmbedding<S>,
    index: &EmbeddingIndex<S>,
    n: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<RetrievalHit<S>>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let mut scored: Vec<(S, &String)> = Vec::with_capacity(index.len());
    for (id, emb) in index.iter() {
        if exclude_id == Some(id.as_str()) {
            continue;
        }
        scored.push((maxsim_relevance(query, emb)?, id));
    }
    if n == 0 || n > scored.len() {
        return Err(Error::TopNTooLarge {
            n,
            available: scored.len(),
        });
    }
    scored.sort_by(|(sa, ia), (sb, ib)| {
        sb.partial_cmp(sa)
            .expect("finite relevance scores")
            .then_with(|| ia.cmp(ib))
    });
    let mut hits: Vec<RetrievalHit<S>> = scored
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (raw, id))| RetrievalHit {
            entry_id: id.clone(),
            raw_score: raw,
            norm_score: S::zero(),
            rank: i + 1,
        })
        .collect();
    normalize_similarities(&mut hits);
    Ok(hits)
}

// --- binary sidecar format ---
//
// Little-endian layout: magic "RCTE", u32 version (1), u32 entry count, then
// per entry: u16 id length + UTF-8 id, a text record and an image record.
// Each record is u8 flag (0 = text, 1 = image), u32 rows, u32 dim, then
// rows*dim f32 values row-major. An absent image block is written as an
// image record with rows = 0.

const SIDECAR_MAGIC: &[u8; 4] = b"RCTE";
const SIDECAR_VERSION: u32 = 1;

fn write_record<S: Scalar, W: Write>(
    w: &mut W,
    flag: u8,
    block: Option<&TokenEmbeddings<S>>,
    dim: usize,
) -> Result<()> {
    w.write_all(&[flag])?;
    match block {
        Some(m) => {
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            w.write_all(&(m.dim() as u32).to_le_bytes())?;
            for v in m.values() {
                let x = v.to_f32().expect("finite embedding value");
                w.write_all(&x.to_le_bytes())?;
            }
        }
        None => {
            w.write_all(&0u32.to_le_bytes())?;
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Serialize an index to the binary sidecar format. Entries are written in
/// ascending id order, so output bytes are deterministic.
pub fn write_index<S: Scalar, W: Write>(index: &EmbeddingIndex<S>, mut w: W) -> Result<()> {
    w.write_all(SIDECAR_MAGIC)?;
    w.write_all(&SIDECAR_VERSION.to_le_bytes())?;
    w.write_all(&(index.len() as u32).to_le_bytes())?;
    for (id, emb) in index.iter() {
        let id_bytes = id.as_bytes();
        if id_bytes.len() > u16::MAX as usize {
            return Err(Error::Sidecar(format!("entry id too long: {} bytes", id_bytes.len())));
        }
        w.write_all(&(id_bytes.len() as u16).to_le_bytes())?;
        w.write_all(id_bytes)?;
        write_record(&mut w, 0, Some(&emb.text), index.dim())?;
        write_record(&mut w, 1, emb.image.as_ref(), index.dim())?;
    }
    Ok(())
}

struct SidecarReader<R: Read> {
    inner: R,
}

impl<R: Read> SidecarReader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Sidecar(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn record<S: Scalar>(&mut self, expect_flag: u8) -> Result<Option<TokenEmbeddings<S>>> {
        let flag = self.u8()?;
        if flag != expect_flag {
            return Err(Error::Sidecar(format!(
                "expected record flag {expect_flag}, found {flag}"
            )));
        }
        let rows = self.u32()? as usize;
        let dim = self.u32()? as usize;
        if rows == 0 {
            return Ok(None);
        }
        let raw = self.bytes(rows * dim * 4)?;
        let values: Vec<S> = raw
            .chunks_exact(4)
            .map(|c| S::from_f32(f32::from_le_bytes(c.try_into().unwrap())).expect("finite f32"))
            .collect();
        Ok(Some(TokenEmbeddings::new(rows, dim, values).map_err(|e| {
            Error::Sidecar(format!("bad record: {e}"))
        })?))
    }
}

/// Deserialize an index from the binary sidecar format.
pub fn read_index<S: Scalar, R: Read>(r: R) -> Result<EmbeddingIndex<S>> {
    let mut reader = SidecarReader { inner: r };
    let magic = reader.bytes(4)?;
    if magic != SIDECAR_MAGIC {
        return Err(Error::Sidecar("bad magic".into()));
    }
    let version = reader.u32()?;
    if version != SIDECAR_VERSION {
        return Err(Error::Sidecar(format!("unsupported version {version}")));
    }
    let count = reader.u32()? as usize;
    let mut index: Option<EmbeddingIndex<S>> = None;
    for _ in 0..count {
        let id_len = reader.u16()? as usize;
        let id = String::from_utf8(reader.bytes(id_len)?)
            .map_err(|e| Error::Sidecar(format!("bad id: {e}")))?;
        let text = reader
            .record::<S>(0)?
            .ok_or_else(|| Error::Sidecar(format!("entry {id:?} has an empty text block")))?;
        let image = reader.record::<S>(1)?;
        let emb = HybridEmbedding::new(text, image)
            .map_err(|e| Error::Sidecar(format!("entry {id:?}: {e}")))?;
        let index = index.get_or_insert_with(|| EmbeddingIndex::new(emb.dim()));
        index.insert(id, emb)?;
    }
    index.ok_or_else(|| Error::Sidecar("file holds no entries".into()))
}
