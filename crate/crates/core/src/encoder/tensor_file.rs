//! Offline adapter over precomputed tensors.
//!
//! A directory holds one safetensors container per image,
//! `<image_id>.safetensors`, with little-endian `f32` arrays:
//!
//! * `patch_features` : `[N, d]`, one row per proposal in mask-set order
//! * `attn/<token>`, `grad/<token>` : `[h, w]` per token
//! * `itm_score` : `[1]`
//!
//! Prompt features live in `texts.safetensors` as `text_features` `[T, d]`
//! with the prompt strings stored as a JSON list under the `prompts`
//! metadata key. When that file is absent, any per-image container carrying
//! `text_features` + `prompts` contributes instead.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::{Capabilities, EmbeddingEncoder, EmbeddingVector, PatchRef, SaliencyEncoder, TokenSaliency};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const TEXT_CONTAINER: &str = "texts.safetensors";
const PROMPTS_KEY: &str = "prompts";

/// Named `f32` array for [`write_container`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ContainerArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn from_grid(name: impl Into<String>, grid: &Grid) -> Self {
        Self::new(
            name,
            vec![grid.height(), grid.width()],
            grid.data().iter().map(|&v| v as f32).collect(),
        )
    }
}

fn tensor_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Tensor {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Writes arrays (and optional prompt list) as a safetensors container.
pub fn write_container(path: &Path, arrays: &[ContainerArray], prompts: Option<&[String]>) -> Result<()> {
    let bytes: Vec<Vec<u8>> = arrays
        .iter()
        .map(|a| a.data.iter().flat_map(|v| v.to_le_bytes()).collect())
        .collect();
    let mut views = Vec::with_capacity(arrays.len());
    for (a, b) in arrays.iter().zip(&bytes) {
        let view = TensorView::new(Dtype::F32, a.shape.clone(), b)
            .map_err(|e| tensor_err(path, format!("{}: {e:?}", a.name)))?;
        views.push((a.name.clone(), view));
    }
    let meta = prompts.map(|p| {
        HashMap::from([(
            PROMPTS_KEY.to_string(),
            serde_json::to_string(p).expect("string list serialises"),
        )])
    });
    safetensors::tensor::serialize_to_file(views, &meta, path).map_err(|e| tensor_err(path, format!("{e:?}")))
}

struct Container {
    path: PathBuf,
    arrays: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    prompts: Option<Vec<String>>,
}

impl Container {
    fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, meta) = SafeTensors::read_metadata(&buf).map_err(|e| tensor_err(path, format!("{e:?}")))?;
        let prompts = match meta.metadata().as_ref().and_then(|m| m.get(PROMPTS_KEY)) {
            Some(raw) => Some(serde_json::from_str::<Vec<String>>(raw).map_err(|e| tensor_err(path, e))?),
            None => None,
        };
        let st = SafeTensors::deserialize(&buf).map_err(|e| tensor_err(path, format!("{e:?}")))?;
        let mut arrays = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(tensor_err(
                    path,
                    format!("{name}: expected F32, found {:?}", view.dtype()),
                ));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.insert(name, (view.shape().to_vec(), data));
        }
        Ok(Self {
            path: path.to_path_buf(),
            arrays,
            prompts,
        })
    }

    fn matrix(&self, name: &str) -> Result<(usize, usize, &[f32])> {
        let (shape, data) = self
            .arrays
            .get(name)
            .ok_or_else(|| tensor_err(&self.path, format!("missing array `{name}`")))?;
        match shape.as_slice() {
            [r, c] => Ok((*r, *c, data)),
            _ => Err(tensor_err(&self.path, format!("`{name}` must be 2-D, found {shape:?}"))),
        }
    }

    fn grid(&self, name: &str) -> Result<Grid> {
        let (h, w, data) = self.matrix(name)?;
        Grid::from_vec(h, w, data.iter().map(|&v| f64::from(v)).collect())
    }

    fn text_table(&self) -> Result<Option<HashMap<String, Vec<f32>>>> {
        let Some(prompts) = &self.prompts else {
            return Ok(None);
        };
        if !self.arrays.contains_key("text_features") {
            return Ok(None);
        }
        let (rows, d, data) = self.matrix("text_features")?;
        if rows != prompts.len() {
            return Err(tensor_err(
                &self.path,
                format!("{} prompts but {rows} text feature rows", prompts.len()),
            ));
        }
        Ok(Some(
            prompts
                .iter()
                .enumerate()
                .map(|(i, p)| (p.clone(), data[i * d..(i + 1) * d].to_vec()))
                .collect(),
        ))
    }
}

/// Embedding and saliency encoder reading a directory of containers.
pub struct TensorDirAdapter {
    dir: PathBuf,
    dim: usize,
    texts: HashMap<String, Vec<f32>>,
    cache: Mutex<HashMap<String, Arc<Container>>>,
}

impl std::fmt::Debug for TensorDirAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TensorDirAdapter")
            .field("dir", &self.dir)
            .field("dim", &self.dim)
            .field("texts", &self.texts.len())
            .finish()
    }
}

impl TensorDirAdapter {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(tensor_err(dir, "not a directory"));
        }
        let shared = dir.join(TEXT_CONTAINER);
        let mut texts = HashMap::new();
        let sources: Vec<PathBuf> = if shared.is_file() {
            vec![shared]
        } else {
            let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "safetensors"))
                .collect();
            v.sort();
            v
        };
        for path in sources {
            let c = Container::read(&path)?;
            if let Some(table) = c.text_table()? {
                for (k, v) in table {
                    if let Some(prev) = texts.get(&k) {
                        if prev != &v {
                            return Err(tensor_err(&path, format!("conflicting features for prompt {k:?}")));
                        }
                    }
                    texts.insert(k, v);
                }
            }
        }
        let dim = texts.values().next().map_or(0, Vec::len);
        Ok(Self {
            dir: dir.to_path_buf(),
            dim,
            texts,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn container(&self, image_id: &str) -> Result<Arc<Container>> {
        let mut cache = self.cache.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(c) = cache.get(image_id) {
            return Ok(c.clone());
        }
        let c = Arc::new(Container::read(&self.dir.join(format!("{image_id}.safetensors")))?);
        cache.insert(image_id.to_string(), c.clone());
        Ok(c)
    }

    fn token_grid(c: &Container, prefix: &str, token: &str) -> Result<Grid> {
        let exact = format!("{prefix}/{token}");
        if c.arrays.contains_key(&exact) {
            return c.grid(&exact);
        }
        c.grid(&format!("{prefix}/{}", token.to_lowercase()))
    }
}

impl EmbeddingEncoder for TensorDirAdapter {
    fn dim(&self) -> usize {
        self.dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { concurrent: true }
    }

    fn embed_patch(&self, p: &PatchRef<'_>) -> std::result::Result<EmbeddingVector, String> {
        let c = self.container(p.image_id).map_err(|e| e.to_string())?;
        let (rows, d, data) = c.matrix("patch_features").map_err(|e| e.to_string())?;
        if p.index >= rows {
            return Err(format!(
                "{}: patch_features has {rows} rows, proposal index {} requested",
                c.path.display(),
                p.index
            ));
        }
        Ok(EmbeddingVector(data[p.index * d..(p.index + 1) * d].to_vec()))
    }

    fn embed_text(&self, text: &str) -> std::result::Result<EmbeddingVector, String> {
        self.texts
            .get(text)
            .cloned()
            .map(EmbeddingVector)
            .ok_or_else(|| format!("no precomputed features for prompt {text:?}"))
    }
}

impl SaliencyEncoder for TensorDirAdapter {
    fn capabilities(&self) -> Capabilities {
        Capabilities { concurrent: true }
    }

    fn token_maps(
        &self,
        image_id: &str,
        _image: &RgbImage,
        tokens: &[String],
    ) -> std::result::Result<TokenSaliency, String> {
        let c = self.container(image_id).map_err(|e| e.to_string())?;
        let mut attention = Vec::with_capacity(tokens.len());
        let mut gradient = Vec::with_capacity(tokens.len());
        for t in tokens {
            attention.push(Self::token_grid(&c, "attn", t).map_err(|e| e.to_string())?);
            gradient.push(Self::token_grid(&c, "grad", t).map_err(|e| e.to_string())?);
        }
        let itm_score = c
            .arrays
            .get("itm_score")
            .and_then(|(_, d)| d.first())
            .map_or(0.0, |&v| f64::from(v));
        Ok(TokenSaliency {
            tokens: tokens.to_vec(),
            attention,
            gradient,
            itm_score,
        })
    }
}
