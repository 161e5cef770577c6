//! Patch codebook: k-means over flattened RGB patches, nearest-embedding
//! quantization, and centroid-fill reconstruction.
//!
//! The learned convolutional encoder/decoder of a full VQ tokenizer is
//! replaced by patch flatten/unflatten around the codebook; the
//! nearest-neighbor quantization itself is unchanged.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    patch_size: usize,
    dim: usize,
    /// K x dim centroids, row-major, components in [0, 1].
    entries: Vec<f64>,
}

impl Codebook {
    pub fn new(patch_size: usize, entries: Vec<f64>) -> Result<Self> {
        let dim = 3 * patch_size * patch_size;
        if entries.is_empty() || entries.len() % dim != 0 {
            return Err(Error::Quantize(format!(
                "entry payload length {} is not a positive multiple of dim {dim}",
                entries.len()
            )));
        }
        let k = entries.len() / dim;
        if k < 2 {
            return Err(Error::Quantize("codebook needs at least 2 entries".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Quantize("non-finite codebook entry".into()));
        }
        for i in 0..k {
            for j in i + 1..k {
                if entries[i * dim..(i + 1) * dim] == entries[j * dim..(j + 1) * dim] {
                    return Err(Error::Quantize(format!("entries {i} and {j} identical")));
                }
            }
        }
        Ok(Self {
            patch_size,
            dim,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, code: usize) -> &[f64] {
        &self.entries[code * self.dim..(code + 1) * self.dim]
    }

    /// Index of the L2-nearest entry; ties break to the lowest index.
    pub fn nearest(&self, patch: &[f64]) -> usize {
        debug_assert_eq!(patch.len(), self.dim);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for code in 0..self.len() {
            let d = sq_dist(patch, self.entry(code));
            if d < best_d {
                best_d = d;
                best = code;
            }
        }
        best
    }

    /// Plain-text file: header line `K D P`, then one entry per line with
    /// full-precision components. Round-trips byte-exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.len(), self.dim, self.patch_size);
        for code in 0..self.len() {
            let row: Vec<String> = self.entry(code).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Quantize("empty codebook file".into()))?;
        let fields: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Quantize(format!("bad codebook header: {e}")))?;
        let [k, dim, patch_size] = fields[..] else {
            return Err(Error::Quantize("codebook header needs K D P".into()));
        };
        if dim != 3 * patch_size * patch_size {
            return Err(Error::Quantize(format!(
                "dim {dim} inconsistent with patch size {patch_size}"
            )));
        }
        let mut entries = Vec::with_capacity(k * dim);
        for (i, line) in lines.enumerate() {
            for v in line.split_whitespace() {
                let x: f64 = v
                    .parse()
                    .map_err(|e| Error::Quantize(format!("entry line {i}: {e}")))?;
                entries.push(x);
            }
        }
        if entries.len() != k * dim {
            return Err(Error::Quantize(format!(
                "expected {} values, found {}",
                k * dim,
                entries.len()
            )));
        }
        Self::new(patch_size, entries)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Flattens the patch with top-left corner (px, py) into interleaved RGB
/// components scaled to [0, 1].
pub fn patch_vector(img: &Image, px: usize, py: usize, p: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * p * p);
    for dy in 0..p {
        for dx in 0..p {
            let [r, g, b] = img.get(px + dx, py + dy);
            v.push(r as f64 / 255.0);
            v.push(g as f64 / 255.0);
            v.push(b as f64 / 255.0);
        }
    }
    v
}

/// All patches of an image in row-major patch order, flattened back to back.
pub fn image_patches(img: &Image, p: usize) -> Result<Vec<f64>> {
    if img.width() % p != 0 || img.height() % p != 0 {
        return Err(Error::Quantize(format!(
            "image {}x{} not divisible by patch size {p}",
            img.width(),
            img.height()
        )));
    }
    let mut out = Vec::with_capacity(img.width() * img.height() * 3);
    for py in (0..img.height()).step_by(p) {
        for px in (0..img.width()).step_by(p) {
            out.extend(patch_vector(img, px, py, p));
        }
    }
    Ok(out)
}

/// Lloyd's k-means with k-means++ seeding. Stops early once assignments
/// stabilize; empty clusters are reseeded with the point farthest from its
/// centroid.
pub fn train_codebook(
    patches: &[f64],
    patch_size: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<Codebook> {
    let dim = 3 * patch_size * patch_size;
    if patches.is_empty() || patches.len() % dim != 0 {
        return Err(Error::Quantize("patch payload not a multiple of dim".into()));
    }
    if iters == 0 {
        return Err(Error::Quantize("iters must be >= 1".into()));
    }
    if k < 2 {
        return Err(Error::Quantize("k must be >= 2".into()));
    }
    let n = patches.len() / dim;
    let at = |i: usize| &patches[i * dim..(i + 1) * dim];

    let distinct = count_distinct(patches, n, dim);
    if distinct < k {
        return Err(Error::Quantize(format!(
            "{distinct} distinct patches < k = {k}"
        )));
    }

    let mut rng = Rng::new(seed);
    let mut centroids = vec![0.0f64; k * dim];

    // k-means++ seeding; duplicate points get zero weight automatically.
    let first = rng.below(n);
    centroids[..dim].copy_from_slice(at(first));
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(at(i), &centroids[..dim])).collect();
    for c in 1..k {
        let pick = rng.categorical(&min_d);
        centroids[c * dim..(c + 1) * dim].copy_from_slice(at(pick));
        for i in 0..n {
            let d = sq_dist(at(i), &centroids[c * dim..(c + 1) * dim]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(at(i), &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            let row = &mut sums[assign[i] * dim..(assign[i] + 1) * dim];
            for (s, &x) in row.iter_mut().zip(at(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed from the point farthest from its own centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(at(a), &centroids[assign[a] * dim..(assign[a] + 1) * dim]);
                        let db = sq_dist(at(b), &centroids[assign[b] * dim..(assign[b] + 1) * dim]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(at(far));
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s * inv;
                }
            }
        }
    }

    Codebook::new(patch_size, centroids)
}

fn count_distinct(patches: &[f64], n: usize, dim: usize) -> usize {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        patches[a * dim..(a + 1) * dim]
            .partial_cmp(&patches[b * dim..(b + 1) * dim])
            .unwrap()
    });
    let mut distinct = if n > 0 { 1 } else { 0 };
    for w in idx.windows(2) {
        if patches[w[0] * dim..(w[0] + 1) * dim] != patches[w[1] * dim..(w[1] + 1) * dim] {
            distinct += 1;
        }
    }
    distinct
}

/// Quantizes an image to image-segment token ids in row-major patch order.
pub fn quantize_image(img: &Image, cb: &Codebook, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    if cb.len() != vocab.image_code_count() {
        return Err(Error::Quantize(format!(
            "codebook size {} does not match vocabulary image segment {}",
            cb.len(),
            vocab.image_code_count()
        )));
    }
    let p = cb.patch_size();
    let flat = image_patches(img, p)?;
    let count = flat.len() / cb.dim();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let code = cb.nearest(&flat[i * cb.dim()..(i + 1) * cb.dim()]);
        out.push(vocab.image_id(code));
    }
    Ok(out)
}

/// Fills each patch region with its centroid, rounded to 8-bit channels.
pub fn dequantize_image(
    tokens: &[TokenId],
    cb: &Codebook,
    vocab: &Vocabulary,
    height: usize,
    width: usize,
) -> Result<Image> {
    let p = cb.patch_size();
    if height % p != 0 || width % p != 0 {
        return Err(Error::Quantize(format!(
            "target {width}x{height} not divisible by patch size {p}"
        )));
    }
    let (cols, rows) = (width / p, height / p);
    if tokens.len() != cols * rows {
        return Err(Error::Quantize(format!(
            "expected {} tokens for {width}x{height}, got {}",
            cols * rows,
            tokens.len()
        )));
    }
    let mut img = Image::filled(width, height, [0, 0, 0]);
    for (i, &tok) in tokens.iter().enumerate() {
        if !vocab.is_image(tok) {
            return Err(Error::Quantize(format!(
                "token {tok} at position {i} is not in the image segment"
            )));
        }
        let (_, code) = vocab.resolve(tok)?;
        let entry = cb.entry(code);
        let (px, py) = ((i % cols) * p, (i / cols) * p);
        for dy in 0..p {
            for dx in 0..p {
                let base = 3 * (dy * p + dx);
                let rgb = [
                    (entry[base] * 255.0).round().clamp(0.0, 255.0) as u8,
                    (entry[base + 1] * 255.0).round().clamp(0.0, 255.0) as u8,
                    (entry[base + 2] * 255.0).round().clamp(0.0, 255.0) as u8,
                ];
                img.set(px + dx, py + dy, rgb);
            }
        }
    }
    Ok(img)
}
