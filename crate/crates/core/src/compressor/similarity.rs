use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::client::scorer::ScorerClient;
use crate::client::{ClientError, LlmClient};
use crate::corpus::Utterance;

use super::CompressError;

pub const HASH_EMBEDDING_DIM: usize = 64;

/// A text-to-vector provider.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ClientError>;
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic bag-of-words embedding: every lowercased alphanumeric
/// token contributes a pseudo-random vector seeded by its FNV-1a hash; the
/// sum is unit-normalized. Text without tokens maps to the zero vector.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut acc = vec![0f64; dim];
    let lowered = text.to_lowercase();
    for token in lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let mut state = fnv1a64(token.as_bytes());
        for slot in acc.iter_mut() {
            let bits = splitmix64(&mut state) >> 11;
            *slot += (bits as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}

/// Offline embedder backed by [`hash_embedding`]. Different salts give
/// different (but still deterministic) embedding spaces.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dim: usize,
    salt: String,
}

impl HashEmbedder {
    pub fn new(id: impl Into<String>) -> Self {
        HashEmbedder {
            id: id.into(),
            dim: HASH_EMBEDDING_DIM,
            salt: String::new(),
        }
    }

    pub fn salted(id: impl Into<String>, salt: impl Into<String>) -> Self {
        HashEmbedder {
            salt: salt.into(),
            ..HashEmbedder::new(id)
        }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ClientError> {
        Ok(texts
            .iter()
            .map(|t| {
                if self.salt.is_empty() || t.trim().is_empty() {
                    hash_embedding(t, self.dim)
                } else {
                    hash_embedding(&format!("{} {t}", self.salt), self.dim)
                }
            })
            .collect())
    }
}

/// Embeddings from an OpenAI-compatible `/v1/embeddings` endpoint.
pub struct ApiEmbedder {
    id: String,
    client: Arc<LlmClient>,
}

impl ApiEmbedder {
    pub fn new(client: Arc<LlmClient>) -> Self {
        ApiEmbedder {
            id: client.config().model_id.clone(),
            client,
        }
    }
}

impl Embedder for ApiEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ClientError> {
        self.client.embed(texts)
    }
}

/// Embeddings from the scorer service's `/embed` route.
pub struct ServiceEmbedder {
    model: String,
    client: ScorerClient,
}

impl ServiceEmbedder {
    pub fn new(client: ScorerClient, model: impl Into<String>) -> Self {
        ServiceEmbedder {
            model: model.into(),
            client,
        }
    }
}

impl Embedder for ServiceEmbedder {
    fn id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ClientError> {
        Ok(self.client.embed(&self.model, texts)?.vectors)
    }
}

/// Caches vectors by exact text and sends only misses, in batches.
pub struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    batch_size: usize,
    cache: RwLock<HashMap<String, Vec<f32>>>,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn Embedder>, batch_size: usize) -> Self {
        CachedEmbedder {
            inner,
            batch_size: batch_size.max(1),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }
}

impl Embedder for CachedEmbedder {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ClientError> {
        let mut missing: Vec<String> = {
            let cache = self.cache.read().unwrap();
            texts.iter().filter(|t| !cache.contains_key(*t)).cloned().collect()
        };
        missing.sort();
        missing.dedup();
        for chunk in missing.chunks(self.batch_size) {
            let vectors = self.inner.embed(chunk)?;
            if vectors.len() != chunk.len() {
                return Err(ClientError::Decode(format!(
                    "{}: expected {} vectors, got {}",
                    self.inner.id(),
                    chunk.len(),
                    vectors.len()
                )));
            }
            let mut cache = self.cache.write().unwrap();
            for (t, v) in chunk.iter().zip(vectors) {
                cache.insert(t.clone(), v);
            }
        }
        let cache = self.cache.read().unwrap();
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }
}

/// Per-embedder cosine similarities and their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScore {
    pub per_embedder: Vec<f64>,
    pub mean: f64,
}

impl SimilarityScore {
    fn from_parts(per_embedder: Vec<f64>) -> Self {
        let mean = per_embedder.iter().sum::<f64>() / per_embedder.len() as f64;
        SimilarityScore { per_embedder, mean }
    }
}

pub fn cosine(v: &[f32], w: &[f32]) -> Option<f64> {
    let dot: f64 = v.iter().zip(w).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
    let nv = v.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
    let nw = w.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
    if nv == 0.0 || nw == 0.0 {
        return None;
    }
    Some((dot / (nv * nw)).clamp(-1.0, 1.0))
}

fn embed_checked(e: &dyn Embedder, texts: &[String]) -> Result<Vec<Vec<f32>>, CompressError> {
    let vectors = e.embed(texts).map_err(CompressError::Provider)?;
    if vectors.len() != texts.len() {
        return Err(CompressError::Provider(ClientError::Decode(format!(
            "{} returned {} vectors for {} texts",
            e.id(),
            vectors.len(),
            texts.len()
        ))));
    }
    Ok(vectors)
}

pub fn average_similarity(
    a: &str,
    b: &str,
    embedders: &[Arc<dyn Embedder>],
) -> Result<SimilarityScore, CompressError> {
    if embedders.is_empty() {
        return Err(CompressError::NoEmbedders);
    }
    let texts = [a.to_string(), b.to_string()];
    let mut parts = Vec::with_capacity(embedders.len());
    for e in embedders {
        let v = embed_checked(e.as_ref(), &texts)?;
        let sim = cosine(&v[0], &v[1]).ok_or_else(|| CompressError::ZeroVector(e.id().to_string()))?;
        parts.push(sim);
    }
    Ok(SimilarityScore::from_parts(parts))
}

/// Similarity of every history utterance to `current`, one embedding
/// request per embedder.
pub fn score_history(
    history: &[Utterance],
    current: &Utterance,
    embedders: &[Arc<dyn Embedder>],
) -> Result<Vec<SimilarityScore>, CompressError> {
    if embedders.is_empty() {
        return Err(CompressError::NoEmbedders);
    }
    let mut texts: Vec<String> = history.iter().map(|u| u.text.clone()).collect();
    texts.push(current.text.clone());
    let mut per_utt: Vec<Vec<f64>> = vec![Vec::with_capacity(embedders.len()); history.len()];
    for e in embedders {
        let vectors = embed_checked(e.as_ref(), &texts)?;
        let (query, rest) = vectors.split_last().expect("at least the current utterance");
        for (slot, v) in per_utt.iter_mut().zip(rest) {
            slot.push(cosine(v, query).ok_or_else(|| CompressError::ZeroVector(e.id().to_string()))?);
        }
    }
    Ok(per_utt.into_iter().map(SimilarityScore::from_parts).collect())
}

/// The `k` history utterances most similar to `current`, in chronological
/// order. Equal scores go to the earlier utterance.
pub fn semantic_k(
    history: &[Utterance],
    current: &Utterance,
    k: usize,
    embedders: &[Arc<dyn Embedder>],
) -> Result<Vec<Utterance>, CompressError> {
    if k == 0 {
        return Err(CompressError::InvalidK);
    }
    if k >= history.len() {
        return Ok(history.to_vec());
    }
    let scores = score_history(history, current, embedders)?;
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&i, &j| scores[j].mean.total_cmp(&scores[i].mean).then(i.cmp(&j)));
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| history[i].clone()).collect())
}
