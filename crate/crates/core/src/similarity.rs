//! Frame similarity used for distractor pruning.
//!
//! The built-in metric is the cosine of mean-subtracted 32x32 luminance
//! thumbnails. Externally computed embeddings (one unit vector per frame id)
//! can be plugged in instead.

use std::collections::HashMap;
use std::io::BufRead;

use image::RgbImage;
use thiserror::Error;

pub const THUMB_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(u32, u32, u32, u32),
    #[error("no embedding for frame `{0}`")]
    MissingEmbedding(String),
    #[error("embedding table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn luminance(p: &image::Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// `[start, end)` of source cells averaged into target cell `t`.
fn cell_range(t: usize, src: usize) -> (usize, usize) {
    let start = t * src / THUMB_SIZE;
    let end = ((t + 1) * src / THUMB_SIZE).max(start + 1).min(src);
    (start.min(src - 1), end)
}

/// Box-filtered 32x32 grayscale thumbnail, row-major.
pub fn luminance_thumbnail(img: &RgbImage) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Vec::with_capacity(THUMB_SIZE * THUMB_SIZE);
    for ty in 0..THUMB_SIZE {
        let (y0, y1) = cell_range(ty, h);
        for tx in 0..THUMB_SIZE {
            let (x0, x1) = cell_range(tx, w);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += luminance(img.get_pixel(x as u32, y as u32));
                }
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Mean-subtracted thumbnail, or `None` for a constant image.
pub fn frame_features(img: &RgbImage) -> Option<Vec<f64>> {
    let t = luminance_thumbnail(img);
    let (lo, hi) = t
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if lo == hi {
        return None;
    }
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    Some(t.into_iter().map(|x| x - mean).collect())
}

/// Cosine similarity clamped to `[-1, 1]`; zero if either vector is zero.
///
/// Written as `dot / sqrt(|a|^2 |b|^2)` so that identical inputs give exactly
/// `1.0` and negated inputs exactly `-1.0`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na * nb).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (dot / denom).clamp(-1.0, 1.0)
    }
}

pub fn features_similarity(a: Option<&[f64]>, b: Option<&[f64]>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => cosine(a, b),
        _ => 0.0,
    }
}

/// Built-in luminance cosine between two frames of equal resolution.
pub fn builtin_similarity(a: &RgbImage, b: &RgbImage) -> Result<f64, SimilarityError> {
    if a.dimensions() != b.dimensions() {
        return Err(SimilarityError::ResolutionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let fa = frame_features(a);
    let fb = frame_features(b);
    Ok(features_similarity(fa.as_deref(), fb.as_deref()))
}

/// Frame id to embedding vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) {
        self.vectors.insert(id.into(), v);
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Parse `frame-id v1 ... vk` rows. Blank lines and `#` comments are
    /// skipped; every row must have the same dimension.
    pub fn parse<R: BufRead>(r: R) -> Result<Self, SimilarityError> {
        let mut table = Self::new();
        let mut dim = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SimilarityError::Table { line: i + 1, msg };
            let mut toks = line.split_whitespace();
            let id = toks.next().expect("non-empty line");
            let v = toks
                .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad value `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if v.is_empty() {
                return Err(err("row has no values".into()));
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(err(format!("dimension {} differs from {d}", v.len())))
                }
                _ => {}
            }
            if table.vectors.insert(id.to_string(), v).is_some() {
                return Err(err(format!("duplicate frame id `{id}`")));
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Default)]
pub enum SimilarityMetric {
    #[default]
    BuiltinLuminanceCosine,
    ExternalEmbeddingTable(EmbeddingTable),
}

impl SimilarityMetric {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BuiltinLuminanceCosine => "builtin_luminance_cosine",
            Self::ExternalEmbeddingTable(_) => "external_embedding_table",
        }
    }

    /// Precompute one feature vector per frame. `None` entries compare as 0.
    pub fn features<'a, I>(&self, frames: I) -> Result<Vec<Option<Vec<f64>>>, SimilarityError>
    where
        I: IntoIterator<Item = (&'a str, &'a RgbImage)>,
    {
        frames
            .into_iter()
            .map(|(id, img)| match self {
                Self::BuiltinLuminanceCosine => Ok(frame_features(img)),
                Self::ExternalEmbeddingTable(t) => t
                    .get(id)
                    .map(|v| Some(v.to_vec()))
                    .ok_or_else(|| SimilarityError::MissingEmbedding(id.to_string())),
            })
            .collect()
    }
}
