//! Vision-language backend contracts.
//!
//! Two contracts cover everything the pipeline needs from a model:
//! [`EmbeddingEncoder`] maps patches and prompt strings into a shared space,
//! and [`SaliencyEncoder`] returns per-token cross-attention maps together with
//! the gradients of the image-text matching score. Model loading lives inside
//! adapters; the crate ships deterministic mocks and an offline adapter that
//! reads precomputed tensors from disk.

mod mock;
mod tensor_file;

use std::sync::Mutex;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mask::MaskId;
use crate::prompt::PromptEntry;

pub use mock::{hash_unit_vector, MockEmbeddingEncoder, MockSaliencyEncoder};
pub use tensor_file::{write_container, ContainerArray, TensorDirAdapter, TEXT_CONTAINER};

/// Feature vector of one patch or prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// L2-normalised copy in `f64`, `None` for a zero vector.
    pub fn unit(&self) -> Option<Vec<f64>> {
        let norm = self.0.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        (norm > 0.0).then(|| self.0.iter().map(|&v| f64::from(v) / norm).collect())
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

/// Declared by each adapter; non-concurrent adapters are called one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub concurrent: bool,
}

/// One patch together with the context an offline adapter needs to find it.
#[derive(Debug, Clone, Copy)]
pub struct PatchRef<'a> {
    pub image_id: &'a str,
    /// Position of the proposal within its mask set.
    pub index: usize,
    pub mask_id: MaskId,
    pub patch: &'a RgbImage,
}

pub trait EmbeddingEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn capabilities(&self) -> Capabilities;
    fn embed_patch(&self, patch: &PatchRef<'_>) -> std::result::Result<EmbeddingVector, String>;
    fn embed_text(&self, text: &str) -> std::result::Result<EmbeddingVector, String>;
}

/// Raw backend output for one image and token list.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSaliency {
    pub tokens: Vec<String>,
    /// Non-negative attention map per token.
    pub attention: Vec<Grid>,
    /// Gradient of the matching score w.r.t. each attention map, before clamping.
    pub gradient: Vec<Grid>,
    pub itm_score: f64,
}

impl TokenSaliency {
    pub fn validate(&self) -> Result<()> {
        if self.attention.len() != self.tokens.len() || self.gradient.len() != self.tokens.len() {
            return Err(Error::Backend {
                index: 0,
                message: format!(
                    "{} tokens but {} attention and {} gradient maps",
                    self.tokens.len(),
                    self.attention.len(),
                    self.gradient.len()
                ),
            });
        }
        let Some(first) = self.attention.first() else {
            return Ok(());
        };
        for (i, (a, g)) in self.attention.iter().zip(&self.gradient).enumerate() {
            first.ensure_same_shape(a)?;
            first.ensure_same_shape(g)?;
            if a.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Backend {
                    index: i,
                    message: format!(
                        "attention map for {:?} has negative or non-finite entries",
                        self.tokens[i]
                    ),
                });
            }
        }
        Ok(())
    }
}

pub trait SaliencyEncoder: Send + Sync {
    fn capabilities(&self) -> Capabilities;
    fn token_maps(
        &self,
        image_id: &str,
        image: &RgbImage,
        tokens: &[String],
    ) -> std::result::Result<TokenSaliency, String>;
}

/// Serialises calls into an adapter that cannot run concurrently.
#[derive(Debug, Default)]
pub struct AdapterGate {
    lock: Option<Mutex<()>>,
}

impl AdapterGate {
    pub fn for_capabilities(caps: Capabilities) -> Self {
        Self {
            lock: (!caps.concurrent).then(|| Mutex::new(())),
        }
    }

    pub fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        match &self.lock {
            Some(m) => {
                let _guard = m.lock().unwrap_or_else(|p| p.into_inner());
                f()
            }
            None => f(),
        }
    }
}

fn check_vector(v: EmbeddingVector, dim: usize, index: usize) -> Result<EmbeddingVector> {
    if v.dim() != dim {
        return Err(Error::Backend {
            index,
            message: format!("returned dimension {} but encoder declares {dim}", v.dim()),
        });
    }
    if !v.is_finite() {
        return Err(Error::Backend {
            index,
            message: "non-finite feature".into(),
        });
    }
    Ok(v)
}

/// One feature per patch, in input order.
pub fn embed_images(patches: &[PatchRef<'_>], encoder: &dyn EmbeddingEncoder) -> Result<Vec<EmbeddingVector>> {
    if patches.is_empty() {
        return Err(Error::EmptyInput("patches"));
    }
    let gate = AdapterGate::for_capabilities(encoder.capabilities());
    patches
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let v = gate
                .run(|| encoder.embed_patch(p))
                .map_err(|message| Error::Backend { index, message })?;
            check_vector(v, encoder.dim(), index)
        })
        .collect()
}

/// One feature per rendered prompt, in input order.
pub fn embed_texts(prompts: &[PromptEntry], encoder: &dyn EmbeddingEncoder) -> Result<Vec<EmbeddingVector>> {
    if prompts.is_empty() {
        return Err(Error::EmptyInput("prompts"));
    }
    prompts
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let v = encoder
                .embed_text(&p.text)
                .map_err(|message| Error::Backend { index, message })?;
            check_vector(v, encoder.dim(), index)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    pub rows: Vec<Vec<f64>>,
    pub tau: f64,
}

impl ProbabilityMatrix {
    /// Row-wise argmax, lowest column on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows.iter().map(|r| argmax(r)).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn unit_rows(feats: &[EmbeddingVector], what: &'static str) -> Result<Vec<Vec<f64>>> {
    let dim = feats.first().map_or(0, EmbeddingVector::dim);
    feats
        .iter()
        .enumerate()
        .map(|(row, f)| {
            if f.dim() != dim {
                return Err(Error::VectorDim {
                    expected: dim,
                    got: f.dim(),
                });
            }
            f.unit().ok_or(Error::ZeroNorm { what, row })
        })
        .collect()
}

/// Cosine similarity of every image feature against every text feature.
pub fn cosine_matrix(image_feats: &[EmbeddingVector], text_feats: &[EmbeddingVector]) -> Result<Vec<Vec<f64>>> {
    let img = unit_rows(image_feats, "image feature")?;
    let txt = unit_rows(text_feats, "text feature")?;
    if let (Some(a), Some(b)) = (img.first(), txt.first()) {
        if a.len() != b.len() {
            return Err(Error::VectorDim {
                expected: b.len(),
                got: a.len(),
            });
        }
    }
    Ok(img
        .iter()
        .map(|f| txt.iter().map(|g| f.iter().zip(g).map(|(a, b)| a * b).sum()).collect())
        .collect())
}

/// Numerically stable softmax of `logits / tau`.
pub fn softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau))
    }
}

/// Temperature-scaled softmax over cosine similarities, plus argmax labels.
pub fn classify(
    image_feats: &[EmbeddingVector],
    text_feats: &[EmbeddingVector],
    tau: f64,
) -> Result<(ProbabilityMatrix, Vec<usize>)> {
    check_tau(tau)?;
    if text_feats.is_empty() {
        return Err(Error::EmptyInput("text features"));
    }
    let sims = cosine_matrix(image_feats, text_feats)?;
    let pm = ProbabilityMatrix {
        rows: sims.iter().map(|r| softmax(r, tau)).collect(),
        tau,
    };
    let labels = pm.argmax();
    Ok((pm, labels))
}

/// Per-token maps at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSaliency {
    pub tokens: Vec<String>,
    pub attention: Vec<Grid>,
    /// Gradients after zeroing negative entries.
    pub gradient: Vec<Grid>,
    /// Attention times clamped gradient.
    pub gradcam: Vec<Grid>,
    pub itm_score: f64,
}

impl ResolvedSaliency {
    pub fn position(&self, token: &str) -> Option<usize> {
        self.tokens
            .iter()
            .position(|t| t == token)
            .or_else(|| self.tokens.iter().position(|t| t.eq_ignore_ascii_case(token)))
    }
}

/// Queries the backend, resizes attention and gradients to `height × width`
/// and forms the per-token clamped Grad-CAM maps.
pub fn resolve_saliency(raw: TokenSaliency, height: usize, width: usize) -> Result<ResolvedSaliency> {
    raw.validate()?;
    let attention: Vec<Grid> = raw.attention.iter().map(|a| a.resize_bilinear(height, width)).collect();
    let gradient: Vec<Grid> = raw
        .gradient
        .iter()
        .map(|g| g.resize_bilinear(height, width).map(|v| v.max(0.0)))
        .collect();
    let gradcam = attention
        .iter()
        .zip(&gradient)
        .map(|(a, g)| a.hadamard(g))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolvedSaliency {
        tokens: raw.tokens,
        attention,
        gradient,
        gradcam,
        itm_score: raw.itm_score,
    })
}

pub fn token_saliency(
    image_id: &str,
    image: &RgbImage,
    tokens: &[String],
    encoder: &dyn SaliencyEncoder,
) -> Result<ResolvedSaliency> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("tokens"));
    }
    let raw = AdapterGate::for_capabilities(encoder.capabilities())
        .run(|| encoder.token_maps(image_id, image, tokens))
        .map_err(|message| Error::Backend { index: 0, message })?;
    resolve_saliency(raw, image.height() as usize, image.width() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector(v.to_vec())
    }

    #[test]
    fn single_class_is_certain() {
        let (p, labels) = classify(&[ev(&[0.3, -2.0]), ev(&[1.0, 1.0])], &[ev(&[0.0, 1.0])], 0.01).unwrap();
        assert!(p.rows.iter().all(|r| r == &vec![1.0]));
        assert_eq!(labels, vec![0, 0]);
    }

    #[test]
    fn two_class_hand_value() {
        let (p, labels) = classify(&[ev(&[1.0, 0.0])], &[ev(&[1.0, 0.0]), ev(&[0.0, 1.0])], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.rows[0][0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p.rows[0][0] - 0.7311).abs() < 1e-4);
        assert!((p.rows[0][1] - 0.2689).abs() < 1e-4);
        assert_eq!(labels, vec![0]);
    }

    #[test]
    fn small_tau_tends_to_one_hot() {
        let texts = [ev(&[1.0, 0.0, 0.0]), ev(&[0.0, 1.0, 0.0]), ev(&[0.0, 0.0, 1.0])];
        let (p, labels) = classify(&[ev(&[0.0, 2.0, 0.0])], &texts, 1e-3).unwrap();
        assert_eq!(labels, vec![1]);
        assert!(p.rows[0][1] > 1.0 - 1e-12);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let (_, labels) = classify(&[ev(&[1.0, 1.0])], &[ev(&[1.0, 0.0]), ev(&[0.0, 1.0])], 0.5).unwrap();
        assert_eq!(labels, vec![0]);
    }

    #[test]
    fn zero_norm_rows_are_named() {
        let err = classify(&[ev(&[1.0, 0.0]), ev(&[0.0, 0.0])], &[ev(&[1.0, 0.0])], 1.0).unwrap_err();
        assert!(matches!(
            err,
            Error::ZeroNorm {
                what: "image feature",
                row: 1
            }
        ));
        let err = classify(&[ev(&[1.0, 0.0])], &[ev(&[0.0, 0.0])], 1.0).unwrap_err();
        assert!(matches!(
            err,
            Error::ZeroNorm {
                what: "text feature",
                row: 0
            }
        ));
        assert!(matches!(
            classify(&[ev(&[1.0])], &[ev(&[1.0])], 0.0),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn clamped_gradcam_fixture() {
        let raw = TokenSaliency {
            tokens: vec!["ship".into()],
            attention: vec![Grid::from_rows(&[[1.0, 2.0], [0.0, 1.0]])],
            gradient: vec![Grid::from_rows(&[[-1.0, 3.0], [5.0, 2.0]])],
            itm_score: 0.0,
        };
        let r = resolve_saliency(raw, 2, 2).unwrap();
        assert_eq!(r.gradcam[0], Grid::from_rows(&[[0.0, 6.0], [0.0, 2.0]]));
    }

    #[test]
    fn negative_gradients_annihilate() {
        let raw = TokenSaliency {
            tokens: vec!["a".into(), "b".into()],
            attention: vec![Grid::filled(3, 3, 2.0), Grid::filled(3, 3, 1.0)],
            gradient: vec![Grid::filled(3, 3, -0.5), Grid::filled(3, 3, 1.0)],
            itm_score: 0.0,
        };
        let r = resolve_saliency(raw, 6, 6).unwrap();
        assert_eq!(r.gradcam[0], Grid::zeros(6, 6));
        assert_eq!(r.gradcam[1], Grid::filled(6, 6, 1.0));
    }

    #[test]
    fn empty_token_list_rejected() {
        let enc = MockSaliencyEncoder::new();
        let img = RgbImage::new(4, 4);
        assert!(matches!(
            token_saliency("x", &img, &[], &enc),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn mismatched_backend_output_rejected() {
        let raw = TokenSaliency {
            tokens: vec!["a".into()],
            attention: vec![],
            gradient: vec![],
            itm_score: 0.0,
        };
        assert!(resolve_saliency(raw, 2, 2).is_err());
    }
}
