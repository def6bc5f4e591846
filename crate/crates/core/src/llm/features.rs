//! Node feature vectors. Hosted chat models expose no hidden states, so a
//! node's feature comes either from an embeddings endpoint (projected down
//! to `d`) or from a deterministic hash of its text.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::http::HttpClient;
use super::LlmError;

pub const DEFAULT_DIM: usize = 64;

pub trait FeatureProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn featurize(&self, text: &str) -> Result<Vec<f64>, LlmError>;
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Half bag-of-tokens (hashed buckets, squashed by tanh), half text-seeded
/// uniform noise so distinct texts almost surely get distinct vectors.
/// Every entry lies in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct HashFeaturizer {
    dim: usize,
}

impl HashFeaturizer {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self { dim }
    }
}

impl Default for HashFeaturizer {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl FeatureProvider for HashFeaturizer {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn featurize(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let mut bag = vec![0.0f64; self.dim];
        for tok in text.split_whitespace() {
            let h = digest(&[b"tok", tok.as_bytes()]);
            let bucket = (u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dim as u64) as usize;
            bag[bucket] += if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        let mut rng = ChaCha8Rng::from_seed(digest(&[b"txt", text.as_bytes()]));
        Ok(bag
            .into_iter()
            .map(|b| 0.5 * b.tanh() + 0.5 * rng.random_range(-1.0..=1.0))
            .collect())
    }
}

/// Embeddings endpoint followed by a fixed Gaussian random projection to
/// `dim`, built from `seed` once the native width is known.
pub struct EmbeddingFeaturizer {
    client: HttpClient,
    dim: usize,
    seed: u64,
    projection: Mutex<Option<(usize, Vec<f64>)>>,
}

impl EmbeddingFeaturizer {
    pub fn new(client: HttpClient, dim: usize, seed: u64) -> Self {
        Self {
            client,
            dim,
            seed,
            projection: Mutex::new(None),
        }
    }

    fn project(&self, native: &[f64]) -> Vec<f64> {
        let mut guard = self.projection.lock().expect("projection lock");
        let rebuild = guard.as_ref().is_none_or(|(n, _)| *n != native.len());
        if rebuild {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let scale = 1.0 / (native.len() as f64).sqrt();
            let m = (0..self.dim * native.len())
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>();
            *guard = Some((native.len(), m));
        }
        let (n, m) = guard.as_ref().expect("projection built");
        (0..self.dim)
            .map(|i| m[i * n..(i + 1) * n].iter().zip(native).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl FeatureProvider for EmbeddingFeaturizer {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn featurize(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let body = json!({"model": self.client.config().embedding_model, "input": text});
        let v = self.client.post_json("embeddings", &body)?;
        let native: Vec<f64> = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::MalformedProviderReply("no data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().filter(|f| f.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| LlmError::MalformedProviderReply("non-numeric embedding".into()))?;
        if native.is_empty() {
            return Err(LlmError::MalformedProviderReply("empty embedding".into()));
        }
        Ok(self.project(&native))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::http::{tests::serve, HttpConfig};
    use std::collections::HashSet;

    #[test]
    fn hash_features_are_deterministic_and_bounded() {
        let f = HashFeaturizer::default();
        let a = f.featurize("Input:[10,9,2,3] Plan:10 + 2 = 12 Output:[9,3,12]").unwrap();
        let b = f.featurize("Input:[10,9,2,3] Plan:10 + 2 = 12 Output:[9,3,12]").unwrap();
        assert_eq!(a.len(), DEFAULT_DIM);
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(a.iter().all(|x| x.is_finite() && x.abs() <= 1.0));
    }

    #[test]
    fn no_collisions_over_random_strings() {
        let f = HashFeaturizer::new(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = HashSet::new();
        let mut texts = HashSet::new();
        while texts.len() < 10_000 {
            let len = rng.random_range(1..12);
            let s: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
            if texts.insert(s.clone()) {
                let v = f.featurize(&s).unwrap();
                assert!(seen.insert(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()), "collision on {s}");
            }
        }
    }

    #[test]
    fn embedding_projection() {
        let body = r#"{"data":[{"embedding":[0.5,-1.0,2.0]}]}"#.to_string();
        let (url, _) = serve(vec![(200, body.clone()), (200, body)]);
        let cfg = HttpConfig {
            base_url: url,
            ..HttpConfig::default()
        };
        let f = EmbeddingFeaturizer::new(HttpClient::new(cfg, "k".into()), 8, 1);
        let a = f.featurize("x").unwrap();
        let b = f.featurize("x").unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.is_finite()));
    }
}
