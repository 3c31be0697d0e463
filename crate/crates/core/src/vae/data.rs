use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vae::model::Dataset;
use crate::{Result, VisError};

pub const PATTERN_SIDE: usize = 8;

/// Prototype image of class `c` on an 8×8 grid: class 0 is the left half,
/// class 1 the right half (disjoint), further classes diagonal bands.
pub fn pattern_prototype(c: usize) -> Vec<f64> {
    let s = PATTERN_SIDE;
    (0..s * s)
        .map(|p| {
            let (r, col) = (p / s, p % s);
            let on = match c {
                0 => col < s / 2,
                1 => col >= s / 2,
                k => (r + col + k) % (k + 1) == 0,
            };
            if on { 1.0 } else { 0.0 }
        })
        .collect()
}

/// `n` labeled 8×8 binary images with balanced classes; each pixel of the
/// class prototype is flipped independently with probability `flip`.
pub fn pattern_dataset(n: usize, classes: usize, flip: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(VisError::arg("pattern data needs at least two classes"));
    }
    if !(0.0..=1.0).contains(&flip) {
        return Err(VisError::arg(format!("flip probability {flip} outside [0, 1]")));
    }
    let protos: Vec<Vec<f64>> = (0..classes).map(pattern_prototype).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * PATTERN_SIDE * PATTERN_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        labels.push(y);
        for &v in &protos[y] {
            x.push(if rng.gen::<f64>() < flip { 1.0 - v } else { v });
        }
    }
    Ok(Dataset { dim: PATTERN_SIDE * PATTERN_SIDE, x, labels: Some(labels), classes })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| VisError::Io { path: path.display().to_string(), source })?;
    Ok(buf)
}

fn idx_error(path: &Path, message: impl Into<String>) -> VisError {
    VisError::Parse { path: path.display().to_string(), line: 0, message: message.into() }
}

/// Reads an IDX file of unsigned bytes: returns the dimensions and data.
pub fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_all(path)?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_error(path, "not an IDX file"));
    }
    if bytes[2] != 0x08 {
        return Err(idx_error(path, format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(idx_error(path, "truncated IDX header"));
    }
    let dims: Vec<usize> = (0..rank).map(|i| be_u32(&bytes, 4 + 4 * i) as usize).collect();
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(idx_error(path, format!("expected {len} data bytes, found {}", bytes.len() - header)));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Loads IDX images and labels and binarizes pixels at `threshold` after
/// scaling to `[0, 1]`.
pub fn load_idx_dataset(images: &Path, labels: &Path, threshold: f64) -> Result<Dataset> {
    let (dims, pixels) = read_idx(images)?;
    if dims.len() != 3 {
        return Err(idx_error(images, format!("expected rank-3 image data, found rank {}", dims.len())));
    }
    let (ldims, lab) = read_idx(labels)?;
    if ldims.len() != 1 || ldims[0] != dims[0] {
        return Err(idx_error(labels, "label count does not match image count"));
    }
    let x = pixels.iter().map(|&p| if p as f64 / 255.0 > threshold { 1.0 } else { 0.0 }).collect();
    let labels: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Ok(Dataset { dim: dims[1] * dims[2], x, labels: Some(labels), classes })
}
