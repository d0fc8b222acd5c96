use std::collections::HashMap;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Capabilities, EmbeddingEncoder, EmbeddingVector, PatchRef, SaliencyEncoder, TokenSaliency};
use crate::grid::Grid;

/// Deterministic unit vector derived from a byte string.
pub fn hash_unit_vector(bytes: &[u8], dim: usize) -> EmbeddingVector {
    let digest: [u8; 32] = Sha256::digest(bytes).into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    EmbeddingVector(v.into_iter().map(|x| x as f32).collect())
}

fn patch_key(patch: &RgbImage) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(patch.width().to_le_bytes());
    h.update(patch.height().to_le_bytes());
    h.update(patch.as_raw());
    h.finalize().into()
}

/// Exact lookup tables for patches and prompt strings, with a hash fallback.
#[derive(Debug, Clone)]
pub struct MockEmbeddingEncoder {
    dim: usize,
    images: HashMap<[u8; 32], EmbeddingVector>,
    texts: HashMap<String, EmbeddingVector>,
}

impl MockEmbeddingEncoder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            images: HashMap::new(),
            texts: HashMap::new(),
        }
    }

    pub fn with_image(mut self, patch: &RgbImage, v: impl Into<EmbeddingVector>) -> Self {
        self.insert_image(patch, v);
        self
    }

    pub fn with_text(mut self, text: &str, v: impl Into<EmbeddingVector>) -> Self {
        self.insert_text(text, v);
        self
    }

    pub fn insert_image(&mut self, patch: &RgbImage, v: impl Into<EmbeddingVector>) {
        self.images.insert(patch_key(patch), v.into());
    }

    pub fn insert_text(&mut self, text: &str, v: impl Into<EmbeddingVector>) {
        self.texts.insert(text.to_string(), v.into());
    }
}

impl EmbeddingEncoder for MockEmbeddingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { concurrent: true }
    }

    fn embed_patch(&self, p: &PatchRef<'_>) -> Result<EmbeddingVector, String> {
        let key = patch_key(p.patch);
        Ok(self
            .images
            .get(&key)
            .cloned()
            .unwrap_or_else(|| hash_unit_vector(&key, self.dim)))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, String> {
        Ok(self
            .texts
            .get(text)
            .cloned()
            .unwrap_or_else(|| hash_unit_vector(text.as_bytes(), self.dim)))
    }
}

/// Injected attention/gradient maps per token, optionally per image.
#[derive(Debug, Clone, Default)]
pub struct MockSaliencyEncoder {
    maps: HashMap<(Option<String>, String), (Grid, Grid)>,
    itm_score: f64,
    concurrent: bool,
}

impl MockSaliencyEncoder {
    pub fn new() -> Self {
        Self {
            concurrent: true,
            ..Self::default()
        }
    }

    /// Maps used for `token` on any image without a more specific entry.
    pub fn with_token(mut self, token: &str, attention: Grid, gradient: Grid) -> Self {
        self.maps.insert((None, token.to_lowercase()), (attention, gradient));
        self
    }

    pub fn with_image_token(mut self, image_id: &str, token: &str, attention: Grid, gradient: Grid) -> Self {
        self.maps.insert(
            (Some(image_id.to_string()), token.to_lowercase()),
            (attention, gradient),
        );
        self
    }

    pub fn serial(mut self) -> Self {
        self.concurrent = false;
        self
    }
}

impl SaliencyEncoder for MockSaliencyEncoder {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent: self.concurrent,
        }
    }

    fn token_maps(&self, image_id: &str, _image: &RgbImage, tokens: &[String]) -> Result<TokenSaliency, String> {
        let mut attention = Vec::with_capacity(tokens.len());
        let mut gradient = Vec::with_capacity(tokens.len());
        for t in tokens {
            let lower = t.to_lowercase();
            let (a, g) = self
                .maps
                .get(&(Some(image_id.to_string()), lower.clone()))
                .or_else(|| self.maps.get(&(None, lower)))
                .ok_or_else(|| format!("no mock maps for token {t:?}"))?;
            attention.push(a.clone());
            gradient.push(g.clone());
        }
        Ok(TokenSaliency {
            tokens: tokens.to_vec(),
            attention,
            gradient,
            itm_score: self.itm_score,
        })
    }
}
