//! Token-level embeddings and embedding providers.
//!
//! Text and image encoders are abstracted behind [`EmbeddingProvider`]; the
//! built-in [`HashEmbedder`] makes the whole pipeline runnable with zero model
//! weights by hashing whitespace tokens to seeded pseudo-random unit vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::stable_hash64;

/// Row-major matrix of token embeddings: `rows` tokens of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings<S: Scalar> {
    rows: usize,
    dim: usize,
    values: Vec<S>,
}

impl<S: Scalar> TokenEmbeddings<S> {
    pub fn new(rows: usize, dim: usize, values: Vec<S>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Config("token matrix must have rows >= 1 and dim >= 1".into()));
        }
        if values.len() != rows * dim {
            return Err(Error::Config(format!(
                "token matrix expects {} values, got {}",
                rows * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("token matrix contains non-finite values".into()));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Config("ragged token matrix".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[S]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }
}

/// Text token embeddings plus an optional image block of the same dimension.
/// The combined token count is `text.rows() + image rows` (zero when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct HybridEmbedding<S: Scalar> {
    pub text: TokenEmbeddings<S>,
    pub image: Option<TokenEmbeddings<S>>,
}

impl<S: Scalar> HybridEmbedding<S> {
    pub fn new(text: TokenEmbeddings<S>, image: Option<TokenEmbeddings<S>>) -> Result<Self> {
        if let Some(img) = &image {
            if img.dim() != text.dim() {
                return Err(Error::DimMismatch {
                    expected: text.dim(),
                    found: img.dim(),
                });
            }
        }
        Ok(Self { text, image })
    }

    pub fn text_only(text: TokenEmbeddings<S>) -> Self {
        Self { text, image: None }
    }

    pub fn dim(&self) -> usize {
        self.text.dim()
    }

    /// Combined token count over the text block and the image block.
    pub fn len(&self) -> usize {
        self.text.rows() + self.image.as_ref().map_or(0, |i| i.rows())
    }

    pub fn is_empty(&self) -> bool {
        false // text block always holds at least one token
    }

    /// All token rows, text first, then image.
    pub fn iter_tokens(&self) -> impl Iterator<Item = &[S]> {
        self.text
            .iter_rows()
            .chain(self.image.iter().flat_map(|i| i.iter_rows()))
    }
}

/// Source of token embeddings with a fixed dimension.
pub trait EmbeddingProvider<S: Scalar> {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<TokenEmbeddings<S>>;
    fn embed_image(&self, image_ref: &str) -> Result<TokenEmbeddings<S>>;
}

/// Embed a question and optional image reference into one hybrid embedding.
/// Deterministic for identical inputs when the provider is deterministic.
pub fn embed<S: Scalar>(
    provider: &dyn EmbeddingProvider<S>,
    question: &str,
    image_ref: Option<&str>,
) -> Result<HybridEmbedding<S>> {
    let text = provider.embed_text(question)?;
    if text.dim() != provider.dim() {
        return Err(Error::DimMismatch {
            expected: provider.dim(),
            found: text.dim(),
        });
    }
    let image = match image_ref {
        None => None,
        Some(r) => {
            let img = provider.embed_image(r)?;
            if img.dim() != provider.dim() {
                return Err(Error::DimMismatch {
                    expected: provider.dim(),
                    found: img.dim(),
                });
            }
            Some(img)
        }
    };
    HybridEmbedding::new(text, image)
}

/// Deterministic development/test embedder.
///
/// Splits text on whitespace and maps each token to a unit vector drawn from
/// a ChaCha stream seeded by the token hash; image refs map to a fixed
/// 4-row block keyed on the ref. No model weights involved.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 64;
    pub const IMAGE_ROWS: usize = 4;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dim must be >= 1");
        Self { dim, seed }
    }

    fn unit_vector<S: Scalar>(&self, key: &str, salt: u64) -> Vec<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(key) ^ self.seed ^ salt);
        let mut v: Vec<f32> = (0..self.dim).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        } else {
            v[0] = 1.0;
        }
        v.into_iter()
            .map(|x| S::from_f32(x).expect("finite f32"))
            .collect()
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, 0x7c75)
    }
}

impl<S: Scalar> EmbeddingProvider<S> for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<TokenEmbeddings<S>> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        let rows: Vec<Vec<S>> = tokens
            .iter()
            .map(|t| self.unit_vector::<S>(t, 0))
            .collect();
        TokenEmbeddings::from_rows(&rows)
    }

    fn embed_image(&self, image_ref: &str) -> Result<TokenEmbeddings<S>> {
        if image_ref.trim().is_empty() {
            return Err(Error::BadImageRef {
                image_ref: image_ref.to_string(),
            });
        }
        let rows: Vec<Vec<S>> = (0..Self::IMAGE_ROWS)
            .map(|i| self.unit_vector::<S>(image_ref, 0x1a6e + i as u64))
            .collect();
        TokenEmbeddings::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_only_embedding_has_no_image_block() {
        let provider = HashEmbedder::new(8, 1);
        let hybrid: HybridEmbedding<f32> = embed(&provider, "one two three", None).unwrap();
        assert!(hybrid.image.is_none());
        assert_eq!(hybrid.len(), hybrid.text.rows());
        assert_eq!(hybrid.len(), 3);
    }

    #[test]
    fn hash_embedder_is_deterministic() {
        let provider = HashEmbedder::new(16, 42);
        let a: HybridEmbedding<f32> = embed(&provider, "the same input", Some("img.png")).unwrap();
        let b: HybridEmbedding<f32> = embed(&provider, "the same input", Some("img.png")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn whitespace_tokenizer_sets_row_count_and_dim() {
        let provider = HashEmbedder::new(8, 0);
        let hybrid: HybridEmbedding<f32> = embed(&provider, "a b  c\td", None).unwrap();
        assert_eq!(hybrid.text.rows(), 4);
        assert_eq!(hybrid.dim(), 8);
    }

    #[test]
    fn image_block_has_four_rows() {
        let provider = HashEmbedder::new(8, 0);
        let hybrid: HybridEmbedding<f32> = embed(&provider, "q", Some("photo.jpg")).unwrap();
        assert_eq!(hybrid.image.as_ref().unwrap().rows(), HashEmbedder::IMAGE_ROWS);
        assert_eq!(hybrid.len(), 1 + HashEmbedder::IMAGE_ROWS);
    }

    #[test]
    fn empty_text_is_rejected() {
        let provider = HashEmbedder::new(8, 0);
        let err = embed::<f32>(&provider, "   ", None).unwrap_err();
        assert!(matches!(err, Error::EmptyText));
    }

    #[test]
    fn token_rows_are_unit_norm() {
        let provider = HashEmbedder::new(32, 7);
        let emb: TokenEmbeddings<f64> = provider.embed_text("normcheck").unwrap();
        let norm: f64 = emb.row(0).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dim_mismatch_is_detected() {
        let text = TokenEmbeddings::from_rows(&[vec![1.0f32, 0.0]]).unwrap();
        let image = TokenEmbeddings::from_rows(&[vec![1.0f32, 0.0, 0.0]]).unwrap();
        let err = HybridEmbedding::new(text, Some(image)).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { expected: 2, found: 3 }));
    }
}
