//! Binary model and image-embedding files.
//!
//! Model file: `NXTPMDL1`, u32 LE config length, config text, then one record
//! per tensor in canonical order: u16 name length, name, u8 rank, u32 dims,
//! little-endian f32 data.
//!
//! Embeddings file: `NXTPEMB1`, u32 record count, u32 n_img, u32 d_image,
//! then per record a zero-padded 16-byte image id and `n_img·d_image` f32.

use std::fs;
use std::path::Path;

use crate::records::write_atomic;
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::{Model, ModelConfig};

pub const MODEL_MAGIC: &[u8; 8] = b"NXTPMDL1";
pub const EMBED_MAGIC: &[u8; 8] = b"NXTPEMB1";
pub const IMAGE_ID_BYTES: usize = 16;

/// Token grid and width of CLIP ViT-L/14 patch embeddings with `[CLS]`
/// dropped; the dimensions assumed for an empty embedding set.
pub const CLIP_TOKENS: usize = 256;
pub const CLIP_DIM: usize = 1024;

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn done(&self) -> bool {
        self.at == self.buf.len()
    }
}

fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Model<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        let blob = self.config.to_text();
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        for (name, t) in self.tensors() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            push_f32s(&mut out, t.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, at: 0 };
        if r.take(8, "magic")? != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: "NXTPMDL1",
            });
        }
        let blob_len = r.u32("config length")? as usize;
        let blob = r.take(blob_len, "config")?;
        let blob = std::str::from_utf8(blob)
            .map_err(|_| Error::ConfigMismatch("config is not UTF-8".into()))?;
        let config = ModelConfig::from_text(blob)?;
        let mut model = Model::<f32>::init(&config, 0)?;
        for (expected_name, t) in model.tensors_mut() {
            let name_len = r.u16("tensor name length")? as usize;
            let name = r.take(name_len, "tensor name")?;
            if name != expected_name.as_bytes() {
                return Err(Error::ConfigMismatch(format!(
                    "expected tensor {expected_name}, found {}",
                    String::from_utf8_lossy(name)
                )));
            }
            let rank = r.u8("tensor rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("tensor dims")? as usize);
            }
            if dims != t.dims() {
                return Err(Error::ConfigMismatch(format!(
                    "{expected_name}: dims {dims:?}, config implies {:?}",
                    t.dims()
                )));
            }
            let data = r.f32s(t.len(), "tensor data")?;
            *t = Tensor::from_vec(&dims, data);
        }
        if !r.done() {
            return Err(Error::ConfigMismatch(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.at
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One image's token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    /// `n_img × d_image`, row-major.
    pub embeds: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub n_img: usize,
    pub d_image: usize,
    pub records: Vec<ImageRecord>,
}

impl EmbeddingSet {
    pub fn new(n_img: usize, d_image: usize) -> Self {
        EmbeddingSet {
            n_img,
            d_image,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, image_id: impl Into<String>, embeds: Vec<f32>) -> Result<()> {
        let image_id = image_id.into();
        if image_id.is_empty() || image_id.len() > IMAGE_ID_BYTES || image_id.contains('\0') {
            return Err(Error::Parse(format!(
                "image id {image_id:?} must be 1..=16 bytes without NUL"
            )));
        }
        if embeds.len() != self.n_img * self.d_image {
            return Err(Error::Shape(format!(
                "{image_id}: {} floats, expected {}×{}",
                embeds.len(),
                self.n_img,
                self.d_image
            )));
        }
        self.records.push(ImageRecord { image_id, embeds });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.records.len() * (16 + 4 * self.n_img * self.d_image));
        out.extend_from_slice(EMBED_MAGIC);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_img as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_image as u32).to_le_bytes());
        for rec in &self.records {
            let mut id = [0u8; IMAGE_ID_BYTES];
            id[..rec.image_id.len()].copy_from_slice(rec.image_id.as_bytes());
            out.extend_from_slice(&id);
            push_f32s(&mut out, &rec.embeds);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, at: 0 };
        if r.take(8, "magic")? != EMBED_MAGIC {
            return Err(Error::BadMagic {
                expected: "NXTPEMB1",
            });
        }
        let count = r.u32("record count")? as usize;
        let n_img = r.u32("n_img")? as usize;
        let d_image = r.u32("d_image")? as usize;
        let mut set = EmbeddingSet::new(n_img, d_image);
        for _ in 0..count {
            let id = r.take(IMAGE_ID_BYTES, "image id")?;
            let end = id.iter().position(|&b| b == 0).unwrap_or(IMAGE_ID_BYTES);
            let image_id = std::str::from_utf8(&id[..end])
                .map_err(|_| Error::Parse("image id is not UTF-8".into()))?
                .to_string();
            let embeds = r.f32s(n_img * d_image, "embedding data")?;
            set.push(image_id, embeds)?;
        }
        if !r.done() {
            return Err(Error::Parse("trailing bytes in embeddings file".into()));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Default for EmbeddingSet {
    fn default() -> Self {
        EmbeddingSet::new(CLIP_TOKENS, CLIP_DIM)
    }
}
