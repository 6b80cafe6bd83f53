use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ParamGroup};
use crate::error::{Error, Result};
use crate::rng::{seeded, stream};
use crate::tensor::Tensor;

/// How a tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Gaussian with the configured standard deviation.
    Weight,
    Bias,
    /// Layer-norm gain, ones.
    Gain,
    /// Square identity matrix.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub group: ParamGroup,
    pub kind: ParamKind,
    pub shape: (usize, usize),
}

#[derive(Clone, Debug)]
pub(crate) struct BlockIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderIdx {
    pub blocks: Vec<BlockIdx>,
    pub ln_g: usize,
    pub ln_b: usize,
}

/// Dense-layer, activation, layer-norm transform ahead of a decoder.
#[derive(Clone, Debug)]
pub(crate) struct TransformIdx {
    pub w: usize,
    pub b: usize,
    pub ln_g: usize,
    pub ln_b: usize,
}

/// Positions of every named tensor in [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub text_pos: usize,
    pub text: EncoderIdx,
    pub patch_w: usize,
    pub patch_b: usize,
    pub image_cls: usize,
    pub image_mask: usize,
    pub image_pos: usize,
    pub vision: EncoderIdx,
    pub fuse_text_w: usize,
    pub fuse_text_b: usize,
    pub fuse_image_w: usize,
    pub fuse_image_b: usize,
    pub mm_cls: usize,
    pub fusion: EncoderIdx,
    pub mlm: TransformIdx,
    pub mmm_text: TransformIdx,
    pub vocab_w: usize,
    pub vocab_b: usize,
    pub mim: TransformIdx,
    pub mmm_vision: TransformIdx,
    pub codebook_w: usize,
    pub codebook_b: usize,
    pub itm_w: usize,
    pub itm_b: usize,
    pub text_proj: usize,
    pub image_proj: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: &str, group: ParamGroup, kind: ParamKind, rows: usize, cols: usize) -> usize {
        self.specs.push(ParamSpec { name: name.to_owned(), group, kind, shape: (rows, cols) });
        self.specs.len() - 1
    }

    fn layer_norm(&mut self, prefix: &str, group: ParamGroup, d: usize) -> (usize, usize) {
        (
            self.add(&format!("{prefix}.gain"), group, ParamKind::Gain, 1, d),
            self.add(&format!("{prefix}.bias"), group, ParamKind::Bias, 1, d),
        )
    }

    fn linear(&mut self, prefix: &str, group: ParamGroup, rows: usize, cols: usize) -> (usize, usize) {
        (
            self.add(&format!("{prefix}.weight"), group, ParamKind::Weight, rows, cols),
            self.add(&format!("{prefix}.bias"), group, ParamKind::Bias, 1, cols),
        )
    }

    fn encoder(&mut self, prefix: &str, group: ParamGroup, c: &ModelConfig) -> EncoderIdx {
        let d = c.hidden_dim;
        let blocks = (0..c.num_layers)
            .map(|l| {
                let p = format!("{prefix}.block{l}");
                let (ln1_g, ln1_b) = self.layer_norm(&format!("{p}.ln1"), group, d);
                let (qkv_w, qkv_b) = self.linear(&format!("{p}.qkv"), group, d, 3 * d);
                let (out_w, out_b) = self.linear(&format!("{p}.attn_out"), group, d, d);
                let (ln2_g, ln2_b) = self.layer_norm(&format!("{p}.ln2"), group, d);
                let (ff1_w, ff1_b) = self.linear(&format!("{p}.ffn_in"), group, d, c.ffn_dim);
                let (ff2_w, ff2_b) = self.linear(&format!("{p}.ffn_out"), group, c.ffn_dim, d);
                BlockIdx { ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b }
            })
            .collect();
        let (ln_g, ln_b) = self.layer_norm(&format!("{prefix}.final_ln"), group, d);
        EncoderIdx { blocks, ln_g, ln_b }
    }

    fn transform(&mut self, prefix: &str, d: usize) -> TransformIdx {
        let (w, b) = self.linear(&format!("{prefix}.dense"), ParamGroup::FusionAndHeads, d, d);
        let (ln_g, ln_b) = self.layer_norm(&format!("{prefix}.ln"), ParamGroup::FusionAndHeads, d);
        TransformIdx { w, b, ln_g, ln_b }
    }
}

fn build_layout(c: &ModelConfig) -> (Vec<ParamSpec>, Layout) {
    use ParamGroup::*;
    use ParamKind::*;
    let d = c.hidden_dim;
    let mut b = Builder { specs: Vec::new() };
    let tok_emb = b.add("text.token_embedding", TextEncoder, Weight, c.vocab_size, d);
    let text_pos = b.add("text.position_embedding", TextEncoder, Weight, c.max_text_len, d);
    let text = b.encoder("text", TextEncoder, c);
    let (patch_w, patch_b) = b.linear("vision.patch_projection", VisionEncoder, c.patch_dim(), d);
    let image_cls = b.add("vision.cls", VisionEncoder, Weight, 1, d);
    let image_mask = b.add("vision.mask_embedding", VisionEncoder, Weight, 1, d);
    let image_pos = b.add("vision.position_embedding", VisionEncoder, Weight, c.num_patches() + 1, d);
    let vision = b.encoder("vision", VisionEncoder, c);
    let fuse_text_w = b.add("fusion.text_projection.weight", FusionAndHeads, Identity, d, d);
    let fuse_text_b = b.add("fusion.text_projection.bias", FusionAndHeads, Bias, 1, d);
    let fuse_image_w = b.add("fusion.image_projection.weight", FusionAndHeads, Identity, d, d);
    let fuse_image_b = b.add("fusion.image_projection.bias", FusionAndHeads, Bias, 1, d);
    let mm_cls = b.add("fusion.cls", FusionAndHeads, Weight, 1, d);
    let fusion = b.encoder("fusion", FusionAndHeads, c);
    let mlm = b.transform("heads.mlm", d);
    let mmm_text = b.transform("heads.mmm_text", d);
    let (vocab_w, vocab_b) = b.linear("heads.vocab_decoder", FusionAndHeads, d, c.vocab_size);
    let mim = b.transform("heads.mim", d);
    let mmm_vision = b.transform("heads.mmm_vision", d);
    let (codebook_w, codebook_b) = b.linear("heads.codebook_decoder", FusionAndHeads, d, c.codebook_size);
    let (itm_w, itm_b) = b.linear("heads.itm", FusionAndHeads, d, 1);
    let text_proj = b.add("heads.contrastive_text.weight", FusionAndHeads, Weight, d, c.projection_dim);
    let image_proj = b.add("heads.contrastive_image.weight", FusionAndHeads, Weight, d, c.projection_dim);
    let layout = Layout {
        tok_emb,
        text_pos,
        text,
        patch_w,
        patch_b,
        image_cls,
        image_mask,
        image_pos,
        vision,
        fuse_text_w,
        fuse_text_b,
        fuse_image_w,
        fuse_image_b,
        mm_cls,
        fusion,
        mlm,
        mmm_text,
        vocab_w,
        vocab_b,
        mim,
        mmm_vision,
        codebook_w,
        codebook_b,
        itm_w,
        itm_b,
        text_proj,
        image_proj,
    };
    (b.specs, layout)
}

/// All model tensors plus their names, groups and layout.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub specs: Vec<ParamSpec>,
    pub tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

const MAGIC: &[u8; 8] = b"GLMPARAM";

impl ModelParams {
    /// Deterministic initialization from `config` and `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = build_layout(config);
        let mut rng = seeded(seed, stream::INIT);
        let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Config(e.to_string()))?;
        let tensors = specs
            .iter()
            .map(|s| {
                let (r, c) = s.shape;
                match s.kind {
                    ParamKind::Weight => Tensor::from_vec(r, c, (0..r * c).map(|_| normal.sample(&mut rng)).collect()),
                    ParamKind::Bias => Tensor::zeros(r, c),
                    ParamKind::Gain => Tensor::full(r, c, 1.0),
                    ParamKind::Identity => Tensor::identity(r),
                }
            })
            .collect();
        Ok(Self { config: config.clone(), specs, tensors, layout })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        self.specs[index].group
    }

    pub fn indices_in(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.len()).filter(|i| self.specs[*i].group == group).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_tagged(path, "")
    }

    /// Little-endian blob: magic, a free-form tag (e.g. a config hash), the
    /// tensor count, then per tensor the name, shape and values.
    pub fn save_tagged(&self, path: &Path, tag: &str) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + self.num_scalars() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(tag.len() as u64).to_le_bytes());
        buf.extend_from_slice(tag.as_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (s, t) in self.specs.iter().zip(&self.tensors) {
            buf.extend_from_slice(&(s.name.len() as u64).to_le_bytes());
            buf.extend_from_slice(s.name.as_bytes());
            buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Loads a blob written by [`ModelParams::save`] for the same config.
    pub fn load(config: &ModelConfig, path: &Path) -> Result<Self> {
        Ok(Self::load_tagged(config, path)?.0)
    }

    /// Loads a blob and returns it with its tag.
    pub fn load_tagged(config: &ModelConfig, path: &Path) -> Result<(Self, String)> {
        config.validate()?;
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Validation(format!("{}: {m}", path.display()));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated parameter file"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(bad("not a parameter file"));
        }
        let read_u64 = |s: &[u8]| u64::from_le_bytes(s.try_into().expect("8 bytes")) as usize;
        let tag_len = read_u64(take(8)?);
        let tag = String::from_utf8(take(tag_len)?.to_vec()).map_err(|_| bad("tag is not UTF-8"))?;
        let count = read_u64(take(8)?);
        let (specs, layout) = build_layout(config);
        if count != specs.len() {
            return Err(bad("tensor count does not match the model config"));
        }
        let by_name: HashMap<&str, usize> = specs.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
        let mut tensors: Vec<Option<Tensor>> = vec![None; specs.len()];
        for _ in 0..count {
            let n = read_u64(take(8)?);
            let name = String::from_utf8(take(n)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rows = read_u64(take(8)?);
            let cols = read_u64(take(8)?);
            let i = *by_name.get(name.as_str()).ok_or_else(|| bad(&format!("unexpected tensor {name}")))?;
            if specs[i].shape != (rows, cols) {
                return Err(bad(&format!("tensor {name} has shape {rows}x{cols}, expected {:?}", specs[i].shape)));
            }
            let raw = take(rows * cols * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors[i] = Some(Tensor::from_vec(rows, cols, data));
        }
        let tensors = tensors.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| bad("missing tensors"))?;
        Ok((Self { config: config.clone(), specs, tensors, layout }, tag))
    }
}
