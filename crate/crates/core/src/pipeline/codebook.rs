use std::fs;
use std::path::Path;

use rand::Rng;

use crate::corpus::Image;
use crate::error::{Error, Result};
use crate::rng::{seeded, stream};

pub const DEFAULT_CODEBOOK_SIZE: usize = 64;

/// Patch quantizer: K centroids in raw patch space (channel values in [0,1]).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchCodebook {
    pub centroids: Vec<Vec<f64>>,
    /// Total squared quantization error after seeding and after each Lloyd
    /// iteration.
    pub error_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], patch: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, patch);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

impl PatchCodebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn patch_dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn assign(&self, patch: &[f64]) -> usize {
        nearest(&self.centroids, patch).0
    }

    /// Token id per patch in raster order.
    pub fn tokenize(&self, image: &Image, patch_side: usize) -> Vec<usize> {
        image.patches(patch_side).iter().map(|p| self.assign(p)).collect()
    }

    pub fn quantization_error(&self, patches: &[Vec<f64>]) -> f64 {
        patches.iter().map(|p| nearest(&self.centroids, p).1).sum()
    }

    /// Header `K patch_dim`, then one whitespace-separated row per centroid.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_tagged(path, "")
    }

    /// [`PatchCodebook::save`] behind a `# config_hash <tag>` line when `tag` is nonempty.
    pub fn save_tagged(&self, path: &Path, tag: &str) -> Result<()> {
        let mut s = if tag.is_empty() { String::new() } else { format!("{}{tag}\n", super::TAG_PREFIX) };
        s.push_str(&format!("{} {}\n", self.k(), self.patch_dim()));
        for c in &self.centroids {
            let row: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_tagged(path)?.0)
    }

    /// Loads a codebook and the tag it was saved with, if any.
    pub fn load_tagged(path: &Path) -> Result<(Self, Option<String>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (tag, body, skipped) = match text.split_once('\n') {
            Some((first, rest)) if first.starts_with(super::TAG_PREFIX) => {
                (Some(first[super::TAG_PREFIX.len()..].to_string()), rest, 1)
            }
            _ => (None, text.as_str(), 0),
        };
        let parse = |line: usize, message: String| Error::Parse { path: path.to_owned(), line: line + skipped, message };
        let mut lines = body.lines();
        let header = lines.next().ok_or_else(|| parse(1, "missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse(1, format!("bad header field `{t}`"))))
            .collect::<Result<_>>()?;
        let [k, dim] = dims[..] else {
            return Err(parse(1, "header must be `K patch_dim`".into()));
        };
        let mut centroids = Vec::with_capacity(k);
        for (i, line) in lines.enumerate().take(k) {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| parse(i + 2, format!("bad value `{t}`"))))
                .collect::<Result<_>>()?;
            if row.len() != dim || row.iter().any(|v| !v.is_finite()) {
                return Err(parse(i + 2, format!("expected {dim} finite values")));
            }
            centroids.push(row);
        }
        if centroids.len() != k || k == 0 {
            return Err(parse(centroids.len() + 2, format!("expected {k} centroid rows")));
        }
        Ok((Self { centroids, error_history: Vec::new() }, tag))
    }
}

/// k-means over all patches of `images`, seeded k-means++ style then `iters`
/// Lloyd iterations. Empty clusters keep their previous centroid.
pub fn build_codebook(images: &[&Image], k: usize, patch_side: usize, iters: usize, seed: u64) -> Result<PatchCodebook> {
    if k == 0 || patch_side == 0 {
        return Err(Error::Config("codebook size and patch side must be positive".into()));
    }
    let mut patches = Vec::new();
    for img in images {
        img.validate_patches(patch_side)?;
        patches.extend(img.patches(patch_side));
    }
    let mut distinct = patches.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite patches"));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::DegenerateCodebook { distinct: distinct.len(), k });
    }

    // seeding runs over distinct patches so duplicates cannot be chosen twice
    let mut rng = seeded(seed, stream::CODEBOOK);
    let mut centroids = vec![distinct[rng.random_range(0..distinct.len())].clone()];
    let mut dist: Vec<f64> = distinct.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = dist.iter().rposition(|d| *d > 0.0).expect("distinct patches remain");
        for (i, d) in dist.iter().enumerate() {
            if *d > 0.0 && u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        let c = distinct[pick].clone();
        for (d, p) in dist.iter_mut().zip(&distinct) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut book = PatchCodebook { centroids, error_history: Vec::new() };
    book.error_history.push(book.quantization_error(&patches));
    let dim = book.patch_dim();
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in &patches {
            let j = book.assign(p);
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                book.centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        book.error_history.push(book.quantization_error(&patches));
    }
    Ok(book)
}
