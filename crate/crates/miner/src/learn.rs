//! Training utilities shared by the native Stage 1 and Stage 2 models:
//! feature hashing, AdamW with linear decay, and weight (de)serialization.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{MinerError, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Combine two feature hashes into a conjunction feature.
pub fn conjoin(a: u64, b: u64) -> u64 {
    let mut h = a ^ b.rotate_left(31).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^= h >> 29;
    h.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Maps hashed feature names into `2^bits` buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHasher {
    bits: u32,
}

impl FeatureHasher {
    pub fn new(bits: u32) -> Self {
        assert!((4..=26).contains(&bits), "hash bits {bits} out of range");
        FeatureHasher { bits }
    }

    pub fn dim(&self) -> usize {
        1 << self.bits
    }

    pub fn bucket(&self, hash: u64) -> usize {
        // fold high bits in so short keys spread
        ((hash ^ (hash >> 32)) as usize) & (self.dim() - 1)
    }

    pub fn hash_str(name: &str) -> u64 {
        fnv1a(name.as_bytes())
    }
}

/// AdamW with decoupled weight decay and linear learning-rate decay to zero
/// over `total_steps`.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f32,
    weight_decay: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
    total_steps: u64,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f32, weight_decay: f32, total_steps: u64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            total_steps: total_steps.max(1),
        }
    }

    pub fn current_lr(&self) -> f32 {
        let frac = 1.0 - (self.step as f32 / self.total_steps as f32);
        self.lr * frac.max(0.0)
    }

    /// One update; `grads` is consumed (zeroed) so it can be reused as the
    /// next accumulation buffer.
    pub fn step(&mut self, params: &mut [f32], grads: &mut [f32]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter_mut())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let gi = *g;
            *g = 0.0;
            if gi == 0.0 && *m == 0.0 && *v == 0.0 && *p == 0.0 {
                continue;
            }
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
        }
    }
}

/// Numerically stable in-place softmax; returns log-sum-exp.
pub fn softmax_in_place(xs: &mut [f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let n = xs.len() as f64;
        xs.iter_mut().for_each(|x| *x = 1.0 / n);
        return max;
    }
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.iter_mut().for_each(|x| *x /= sum);
    max + sum.ln()
}

pub fn write_weights(path: &Path, weights: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(weights.len() * 4);
    for w in weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| MinerError::io(path, e))?;
    f.write_all(&buf).map_err(|e| MinerError::io(path, e))
}

pub fn read_weights(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let mut f = std::fs::File::open(path).map_err(|e| MinerError::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| MinerError::io(path, e))?;
    if buf.len() != expected * 4 {
        return Err(MinerError::Backend(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            buf.len(),
            expected * 4
        )));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Write `dir` by building it under a sibling temp name and renaming, so a
/// crash never leaves a half-written checkpoint at `dir`.
pub fn write_dir_atomically(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| MinerError::io(parent, e))?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| MinerError::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| MinerError::io(&tmp, e))?;
    fill(&tmp)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| MinerError::io(dir, e))?;
    }
    std::fs::rename(&tmp, dir).map_err(|e| MinerError::io(dir, e))
}

/// Lowercased word "shape": letters → `x`/`X`, digits → `d`, runs collapsed.
pub fn word_shape(word: &str) -> String {
    let mut out = String::new();
    let mut last = None;
    for c in word.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_alphabetic() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            c
        };
        if last != Some(s) {
            out.push(s);
            last = Some(s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut p = vec![5.0f32, -3.0];
        let mut opt = AdamW::new(2, 0.1, 0.0, 10_000);
        for _ in 0..2000 {
            let mut g: Vec<f32> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &mut g);
            assert!(g.iter().all(|x| *x == 0.0));
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn learning_rate_decays_linearly() {
        let mut opt = AdamW::new(1, 1.0, 0.0, 4);
        let mut p = vec![0.0];
        assert_eq!(opt.current_lr(), 1.0);
        opt.step(&mut p, &mut [1.0]);
        opt.step(&mut p, &mut [1.0]);
        assert_eq!(opt.current_lr(), 0.5);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut xs = vec![1.0, 2.0, 3.0];
        let lse = softmax_in_place(&mut xs);
        assert!((xs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((lse - (1f64.exp() + 2f64.exp() + 3f64.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn shapes() {
        assert_eq!(word_shape("Covilhã"), "Xx");
        assert_eq!(word_shape("10h00"), "dxd");
        assert_eq!(word_shape("12/03/2020"), "d/d/d");
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        write_weights(&path, &[1.5, -2.25, 0.0]).unwrap();
        assert_eq!(read_weights(&path, 3).unwrap(), vec![1.5, -2.25, 0.0]);
        assert!(read_weights(&path, 4).is_err());
    }
}
