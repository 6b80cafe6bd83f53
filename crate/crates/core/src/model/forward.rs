use super::params::{BlockIdx, EncoderIdx, TransformIdx};
use super::ModelParams;
use crate::corpus::Image;
use crate::error::{Error, Result};
use crate::pipeline::Vocab;
use crate::tape::{AttnLayout, RowRef, Tape, Var};
use crate::tensor::Tensor;

/// Text encoder output for a padded batch.
#[derive(Clone, Debug)]
pub struct EncodedText {
    /// `[batch * seq_len, hidden]`, sequence-major.
    pub states: Var,
    pub batch: usize,
    pub seq_len: usize,
    /// Unpadded length of each sequence, cls included.
    pub lengths: Vec<usize>,
    /// `[batch, hidden]` cls outputs.
    pub cls: Var,
}

#[derive(Clone, Debug)]
pub struct EncodedImage {
    /// `[batch * (patches + 1), hidden]`; row 0 of each image is its cls.
    pub states: Var,
    pub batch: usize,
    pub seq_len: usize,
    pub cls: Var,
}

#[derive(Clone, Debug)]
pub struct EncodedFusion {
    /// `[batch * seq_len, hidden]` laid out as fusion cls, text states, image states.
    pub states: Var,
    pub batch: usize,
    pub seq_len: usize,
    pub text_len: usize,
    pub cls: Var,
}

impl EncodedFusion {
    /// Row of text position `pos` of sequence `b`.
    pub fn text_row(&self, b: usize, pos: usize) -> usize {
        b * self.seq_len + 1 + pos
    }

    /// Row of patch `p` (0-based, cls excluded) of sequence `b`.
    pub fn patch_row(&self, b: usize, p: usize) -> usize {
        b * self.seq_len + 1 + self.text_len + 1 + p
    }
}

fn block(tape: &mut Tape, b: &BlockIdx, x: Var, layout: &AttnLayout) -> Var {
    let (g, bi) = (tape.param(b.ln1_g), tape.param(b.ln1_b));
    let h = tape.layer_norm(x, g, bi);
    let (w, bi) = (tape.param(b.qkv_w), tape.param(b.qkv_b));
    let qkv = tape.linear(h, w, bi);
    let a = tape.attention(qkv, layout.clone());
    let (w, bi) = (tape.param(b.out_w), tape.param(b.out_b));
    let a = tape.linear(a, w, bi);
    let x = tape.add(x, a);
    let (g, bi) = (tape.param(b.ln2_g), tape.param(b.ln2_b));
    let h = tape.layer_norm(x, g, bi);
    let (w, bi) = (tape.param(b.ff1_w), tape.param(b.ff1_b));
    let h = tape.linear(h, w, bi);
    let h = tape.gelu(h);
    let (w, bi) = (tape.param(b.ff2_w), tape.param(b.ff2_b));
    let h = tape.linear(h, w, bi);
    tape.add(x, h)
}

fn encoder(tape: &mut Tape, enc: &EncoderIdx, mut x: Var, layout: &AttnLayout) -> Var {
    for b in &enc.blocks {
        x = block(tape, b, x, layout);
    }
    let (g, b) = (tape.param(enc.ln_g), tape.param(enc.ln_b));
    tape.layer_norm(x, g, b)
}

fn cls_rows(tape: &mut Tape, states: Var, batch: usize, seq_len: usize) -> Var {
    let rows: Vec<usize> = (0..batch).map(|b| b * seq_len).collect();
    tape.select_rows(states, &rows)
}

/// Encodes a batch of id sequences, each starting with the text cls id.
/// Shorter sequences are padded and their padding is hidden from attention.
pub fn encode_text(tape: &mut Tape, params: &ModelParams, seqs: &[Vec<usize>]) -> Result<EncodedText> {
    let c = &params.config;
    if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
        return Err(Error::Shape("text batch contains an empty sequence".into()));
    }
    let seq_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    if seq_len > c.max_text_len {
        return Err(Error::Length { len: seq_len, max: c.max_text_len });
    }
    let batch = seqs.len();
    let mut ids = Vec::with_capacity(batch * seq_len);
    let mut positions = Vec::with_capacity(batch * seq_len);
    let mut key_valid = Vec::with_capacity(batch * seq_len);
    for s in seqs {
        for t in 0..seq_len {
            let id = s.get(t).copied().unwrap_or(Vocab::PAD_ID);
            if id >= c.vocab_size {
                return Err(Error::Shape(format!("token id {id} outside vocabulary of {}", c.vocab_size)));
            }
            ids.push(id);
            positions.push(t);
            key_valid.push(t < s.len());
        }
    }
    let l = &params.layout;
    let emb = tape.param(l.tok_emb);
    let x = tape.gather(emb, &ids);
    let pos = tape.param(l.text_pos);
    let p = tape.gather(pos, &positions);
    let x = tape.add(x, p);
    let layout = AttnLayout { batch, seq_len, heads: c.num_heads, key_valid };
    let states = encoder(tape, &l.text, x, &layout);
    let cls = cls_rows(tape, states, batch, seq_len);
    Ok(EncodedText { states, batch, seq_len, lengths: seqs.iter().map(Vec::len).collect(), cls })
}

/// Encodes images as patch sequences behind an image cls. Patches flagged in
/// `masks` are replaced by the learned mask embedding.
pub fn encode_image(
    tape: &mut Tape,
    params: &ModelParams,
    images: &[&Image],
    masks: Option<&[Vec<bool>]>,
) -> Result<EncodedImage> {
    let c = &params.config;
    if images.is_empty() {
        return Err(Error::Shape("empty image batch".into()));
    }
    let n = c.num_patches();
    let mut data = Vec::with_capacity(images.len() * n * c.patch_dim());
    for img in images {
        if img.side != c.image_side {
            return Err(Error::Shape(format!("image side {} but model expects {}", img.side, c.image_side)));
        }
        img.validate()?;
        for p in img.patches(c.patch_side) {
            data.extend(p);
        }
    }
    let batch = images.len();
    let l = &params.layout;
    let raw = tape.constant(Tensor::from_vec(batch * n, c.patch_dim(), data));
    let (w, b) = (tape.param(l.patch_w), tape.param(l.patch_b));
    let mut emb = tape.linear(raw, w, b);
    if let Some(masks) = masks {
        if masks.len() != batch || masks.iter().any(|m| m.len() != n) {
            return Err(Error::Shape(format!("patch masks must be {batch} x {n}")));
        }
        let flat: Vec<bool> = masks.concat();
        let fill = tape.param(l.image_mask);
        emb = tape.mask_rows(emb, fill, &flat);
    }
    let seq_len = n + 1;
    let cls = tape.param(l.image_cls);
    let mut index = Vec::with_capacity(batch * seq_len);
    for b in 0..batch {
        index.push(RowRef { source: 0, row: 0 });
        index.extend((0..n).map(|p| RowRef { source: 1, row: b * n + p }));
    }
    let x = tape.rows(&[cls, emb], &index);
    let pos = tape.param(l.image_pos);
    let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq_len).collect();
    let p = tape.gather(pos, &positions);
    let x = tape.add(x, p);
    let layout = AttnLayout { batch, seq_len, heads: c.num_heads, key_valid: vec![true; batch * seq_len] };
    let states = encoder(tape, &l.vision, x, &layout);
    let cls = cls_rows(tape, states, batch, seq_len);
    Ok(EncodedImage { states, batch, seq_len, cls })
}

/// Fuses projected text and image states behind a fusion cls.
pub fn encode_multimodal(
    tape: &mut Tape,
    params: &ModelParams,
    text: &EncodedText,
    image: &EncodedImage,
) -> Result<EncodedFusion> {
    let c = &params.config;
    if text.batch != image.batch {
        return Err(Error::Shape(format!("text batch {} vs image batch {}", text.batch, image.batch)));
    }
    for (what, v) in [("text", text.states), ("image", image.states)] {
        let cols = tape.value(v).cols();
        if cols != c.hidden_dim {
            return Err(Error::Shape(format!("{what} states have width {cols}, expected {}", c.hidden_dim)));
        }
    }
    let l = &params.layout;
    let (w, b) = (tape.param(l.fuse_text_w), tape.param(l.fuse_text_b));
    let pt = tape.linear(text.states, w, b);
    let (w, b) = (tape.param(l.fuse_image_w), tape.param(l.fuse_image_b));
    let pi = tape.linear(image.states, w, b);
    let cls = tape.param(l.mm_cls);
    let batch = text.batch;
    let seq_len = 1 + text.seq_len + image.seq_len;
    let mut index = Vec::with_capacity(batch * seq_len);
    let mut key_valid = Vec::with_capacity(batch * seq_len);
    for b in 0..batch {
        index.push(RowRef { source: 0, row: 0 });
        key_valid.push(true);
        for t in 0..text.seq_len {
            index.push(RowRef { source: 1, row: b * text.seq_len + t });
            key_valid.push(t < text.lengths[b]);
        }
        for p in 0..image.seq_len {
            index.push(RowRef { source: 2, row: b * image.seq_len + p });
            key_valid.push(true);
        }
    }
    let x = tape.rows(&[cls, pt, pi], &index);
    let layout = AttnLayout { batch, seq_len, heads: c.num_heads, key_valid };
    let states = encoder(tape, &l.fusion, x, &layout);
    let cls = cls_rows(tape, states, batch, seq_len);
    Ok(EncodedFusion { states, batch, seq_len, text_len: text.seq_len, cls })
}

fn transform(tape: &mut Tape, t: &TransformIdx, x: Var) -> Var {
    let (w, b) = (tape.param(t.w), tape.param(t.b));
    let h = tape.linear(x, w, b);
    let h = tape.gelu(h);
    let (g, b) = (tape.param(t.ln_g), tape.param(t.ln_b));
    tape.layer_norm(h, g, b)
}

fn decode(tape: &mut Tape, x: Var, head: &TransformIdx, w: usize, b: usize) -> Var {
    let h = transform(tape, head, x);
    let (w, b) = (tape.param(w), tape.param(b));
    tape.linear(h, w, b)
}

/// Vocabulary logits from text-encoder states at `(sequence, position)` pairs.
pub fn mlm_logits(tape: &mut Tape, params: &ModelParams, text: &EncodedText, at: &[(usize, usize)]) -> Var {
    let rows: Vec<usize> = at.iter().map(|&(b, t)| b * text.seq_len + t).collect();
    let x = tape.select_rows(text.states, &rows);
    let l = &params.layout;
    decode(tape, x, &l.mlm, l.vocab_w, l.vocab_b)
}

/// Vocabulary logits from fusion states at text `(sequence, position)` pairs.
pub fn mmm_text_logits(tape: &mut Tape, params: &ModelParams, fusion: &EncodedFusion, at: &[(usize, usize)]) -> Var {
    let rows: Vec<usize> = at.iter().map(|&(b, t)| fusion.text_row(b, t)).collect();
    let x = tape.select_rows(fusion.states, &rows);
    let l = &params.layout;
    decode(tape, x, &l.mmm_text, l.vocab_w, l.vocab_b)
}

/// Codebook logits from vision states at `(image, patch)` pairs.
pub fn mim_logits(tape: &mut Tape, params: &ModelParams, image: &EncodedImage, at: &[(usize, usize)]) -> Var {
    let rows: Vec<usize> = at.iter().map(|&(b, p)| b * image.seq_len + 1 + p).collect();
    let x = tape.select_rows(image.states, &rows);
    let l = &params.layout;
    decode(tape, x, &l.mim, l.codebook_w, l.codebook_b)
}

/// Codebook logits from fusion states at `(sequence, patch)` pairs.
pub fn mmm_vision_logits(
    tape: &mut Tape,
    params: &ModelParams,
    fusion: &EncodedFusion,
    at: &[(usize, usize)],
) -> Var {
    let rows: Vec<usize> = at.iter().map(|&(b, p)| fusion.patch_row(b, p)).collect();
    let x = tape.select_rows(fusion.states, &rows);
    let l = &params.layout;
    decode(tape, x, &l.mmm_vision, l.codebook_w, l.codebook_b)
}

/// `[batch, 1]` match logits from the fusion cls.
pub fn itm_logits(tape: &mut Tape, params: &ModelParams, fusion: &EncodedFusion) -> Var {
    let (w, b) = (tape.param(params.layout.itm_w), tape.param(params.layout.itm_b));
    tape.linear(fusion.cls, w, b)
}

/// Unit-norm contrastive embedding of each text cls.
pub fn project_text(tape: &mut Tape, params: &ModelParams, text: &EncodedText) -> Var {
    let w = tape.param(params.layout.text_proj);
    let z = tape.matmul(text.cls, w, false);
    tape.l2_normalize_rows(z)
}

/// Unit-norm contrastive embedding of each image cls.
pub fn project_image(tape: &mut Tape, params: &ModelParams, image: &EncodedImage) -> Var {
    let w = tape.param(params.layout.image_proj);
    let z = tape.matmul(image.cls, w, false);
    tape.l2_normalize_rows(z)
}

/// Encoder passes available to [`heads`].
#[derive(Clone, Debug, Default)]
pub struct EncodedBatch {
    pub text: Option<EncodedText>,
    pub image: Option<EncodedImage>,
    pub fusion: Option<EncodedFusion>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Mlm,
    MmmText,
    Mim,
    MmmVision,
    Itm,
    ContrastiveText,
    ContrastiveImage,
}

/// Head outputs over every position of the relevant pass.
#[derive(Clone, Debug, Default)]
pub struct HeadOutputs {
    pub mlm: Option<Var>,
    pub mmm_text: Option<Var>,
    pub mim: Option<Var>,
    pub mmm_vision: Option<Var>,
    pub itm: Option<Var>,
    pub z_text: Option<Var>,
    pub z_image: Option<Var>,
}

/// Runs the requested heads on all positions of an encoded batch.
pub fn heads(tape: &mut Tape, params: &ModelParams, batch: &EncodedBatch, which: &[Head]) -> Result<HeadOutputs> {
    let missing = |head: Head, pass: &str| Error::Usage(format!("{head:?} head needs the {pass} pass"));
    let mut out = HeadOutputs::default();
    for &h in which {
        match h {
            Head::Mlm | Head::ContrastiveText => {
                let t = batch.text.as_ref().ok_or_else(|| missing(h, "text"))?;
                if h == Head::Mlm {
                    let at: Vec<_> = (0..t.batch).flat_map(|b| (0..t.seq_len).map(move |p| (b, p))).collect();
                    out.mlm = Some(mlm_logits(tape, params, t, &at));
                } else {
                    out.z_text = Some(project_text(tape, params, t));
                }
            }
            Head::Mim | Head::ContrastiveImage => {
                let i = batch.image.as_ref().ok_or_else(|| missing(h, "image"))?;
                if h == Head::Mim {
                    let at: Vec<_> = (0..i.batch).flat_map(|b| (0..i.seq_len - 1).map(move |p| (b, p))).collect();
                    out.mim = Some(mim_logits(tape, params, i, &at));
                } else {
                    out.z_image = Some(project_image(tape, params, i));
                }
            }
            Head::MmmText | Head::MmmVision | Head::Itm => {
                let f = batch.fusion.as_ref().ok_or_else(|| missing(h, "fusion"))?;
                match h {
                    Head::MmmText => {
                        let at: Vec<_> =
                            (0..f.batch).flat_map(|b| (0..f.text_len).map(move |p| (b, p))).collect();
                        out.mmm_text = Some(mmm_text_logits(tape, params, f, &at));
                    }
                    Head::MmmVision => {
                        let patches = f.seq_len - 2 - f.text_len;
                        let at: Vec<_> = (0..f.batch).flat_map(|b| (0..patches).map(move |p| (b, p))).collect();
                        out.mmm_vision = Some(mmm_vision_logits(tape, params, f, &at));
                    }
                    _ => out.itm = Some(itm_logits(tape, params, f)),
                }
            }
        }
    }
    Ok(out)
}
