//! Brownian paths on a dyadic grid.
//!
//! A [`BrownianTree`] stores the increments of an `m`-dimensional Brownian
//! motion on the finest grid `h_L = T·2^{−L}` and serves coarser levels by
//! pairwise summation, so Euler runs at different resolutions see the same
//! driving path. At every level, each cell increment is bitwise the sum of
//! its two children at the next finer level.
//!
//! Normals come from ChaCha8 keyed by `seed`, with `stream_id` as the cipher
//! stream and the increment index as the block position, so any increment
//! can be regenerated without replaying the stream.

use std::f64::consts::TAU;
use std::io::{self, Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SdeError};

/// Largest finest level accepted by [`BrownianTree::sample`].
pub const MAX_LEVEL: u32 = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianTree {
    m: usize,
    horizon: f64,
    finest_level: u32,
    seed: u64,
    stream_id: u64,
    /// Step-major: increment `k`, coordinate `c` at `k·m + c`.
    increments: Vec<f64>,
}

#[inline]
fn unit_open(w: u64) -> f64 {
    // (0, 1]
    ((w >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_closed_open(w: u64) -> f64 {
    (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn box_muller(w1: u64, w2: u64) -> (f64, f64) {
    let r = (-2.0 * unit_open(w1).ln()).sqrt();
    let (s, c) = (TAU * unit_closed_open(w2)).sin_cos();
    (r * c, r * s)
}

/// Positionable source of standard normals for one `(seed, stream_id)`.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        NormalStream { rng, spare: None }
    }

    /// Positions the stream so the next draw is normal number `index`.
    pub fn seek(&mut self, index: u64) {
        // each pair of normals consumes two u64 = four u32 words
        self.rng.set_word_pos(u128::from(index / 2) * 4);
        self.spare = None;
        if index % 2 == 1 {
            self.next_normal();
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let w1 = self.rng.next_u64();
        let w2 = self.rng.next_u64();
        let (z0, z1) = box_muller(w1, w2);
        self.spare = Some(z1);
        z0
    }
}

impl BrownianTree {
    /// Samples a path with `2^L` finest increments, each `N(0, h_L·I_m)`.
    pub fn sample(m: usize, horizon: f64, finest_level: u32, seed: u64, stream_id: u64) -> Result<Self> {
        if m == 0 {
            return Err(SdeError::usage("noise dimension must be ≥ 1"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SdeError::usage(format!(
                "horizon must be finite and > 0, got {horizon}"
            )));
        }
        if finest_level > MAX_LEVEL {
            return Err(SdeError::Resource(format!(
                "finest level {finest_level} exceeds the guard L ≤ {MAX_LEVEL}"
            )));
        }
        let cells = 1usize << finest_level;
        let scale = (horizon / cells as f64).sqrt();
        let mut stream = NormalStream::new(seed, stream_id);
        let increments = (0..cells * m).map(|_| scale * stream.next_normal()).collect();
        Ok(BrownianTree {
            m,
            horizon,
            finest_level,
            seed,
            stream_id,
            increments,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn finest_level(&self) -> u32 {
        self.finest_level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn finest_cells(&self) -> usize {
        1 << self.finest_level
    }

    pub fn finest_step(&self) -> f64 {
        self.horizon / self.finest_cells() as f64
    }

    pub fn finest_increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.m..(k + 1) * self.m]
    }

    pub fn finest_increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increments at level `ℓ`: `2^ℓ` vectors, step-major.
    pub fn increments_at_level(&self, level: u32) -> Result<Vec<f64>> {
        if level > self.finest_level {
            return Err(SdeError::usage(format!(
                "level {level} is finer than the stored level {}",
                self.finest_level
            )));
        }
        let mut cur = self.increments.clone();
        let m = self.m;
        for _ in level..self.finest_level {
            let half = cur.len() / (2 * m);
            let mut next = vec![0.0; half * m];
            for k in 0..half {
                for c in 0..m {
                    next[k * m + c] = cur[2 * k * m + c] + cur[(2 * k + 1) * m + c];
                }
            }
            cur = next;
        }
        Ok(cur)
    }

    /// `B_T`, the level-0 increment.
    pub fn endpoint(&self) -> Vec<f64> {
        self.increments_at_level(0).expect("level 0 always exists")
    }

    /// Binary dump: header `m, T, L, seed, stream_id` as little-endian 64-bit
    /// fields (T as IEEE bits), then increments as little-endian `f64`,
    /// coordinate-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&u64::from(self.finest_level).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.stream_id.to_le_bytes())?;
        for c in 0..self.m {
            for k in 0..self.finest_cells() {
                w.write_all(&self.increments[k * self.m + c].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io_err = |e: io::Error| SdeError::usage(format!("bad tree dump: {e}"));
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word).map_err(io_err)?;
            Ok(word)
        };
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let horizon = f64::from_le_bytes(next(&mut r)?);
        let level = u64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let stream_id = u64::from_le_bytes(next(&mut r)?);
        if level > u64::from(MAX_LEVEL) {
            return Err(SdeError::Resource(format!("dump level {level} exceeds guard")));
        }
        if m == 0 || m > 1 << 16 || !(horizon > 0.0) {
            return Err(SdeError::usage("bad tree dump header"));
        }
        let finest_level = level as u32;
        let cells = 1usize << finest_level;
        let mut increments = vec![0.0; cells * m];
        for c in 0..m {
            for k in 0..cells {
                increments[k * m + c] = f64::from_le_bytes(next(&mut r)?);
            }
        }
        Ok(BrownianTree {
            m,
            horizon,
            finest_level,
            seed,
            stream_id,
            increments,
        })
    }
}
