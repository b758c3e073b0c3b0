//! Toy 3x3 videos of varying length, a small fixed catalog for oracle
//! tests, and the binary dataset container.
//!
//! ```text
//! "FCDS" | version u32 | count u32
//! per video: len u16 | H u8 | W u8 | C u8 | f32 LE data, frame-major
//! ```

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::seq::{Frame, FrameSeq, FrameShape};

pub const TOY_SHAPE: FrameShape = FrameShape::new(3, 3, 3);
pub const TOY_LENGTHS: [usize; 4] = [15, 20, 25, 30];

const MAGIC: [u8; 4] = *b"FCDS";
const VERSION: u32 = 1;

/// Boundary pixels in clockwise order, as (row, col).
const RING: [(usize, usize); 8] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (2, 1),
    (2, 0),
    (1, 0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub lengths: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            lengths: TOY_LENGTHS.to_vec(),
            weights: vec![1.0; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyVideo {
    pub frames: FrameSeq,
    /// Full hue turns over the video.
    pub rotations: u32,
    pub hue_offset: f64,
    /// First frame showing the second middle colour.
    pub jump_at: usize,
}

impl ToyVideo {
    /// Hue phase of the ring at frame `f`.
    pub fn phase(&self, f: usize) -> f64 {
        ring_phase(self.rotations, f, self.frames.len())
    }
}

fn ring_phase(rotations: u32, f: usize, len: usize) -> f64 {
    TAU * rotations as f64 * f as f64 / (len - 1) as f64
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

pub fn gen_toy_video<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<ToyVideo> {
    if len < 3 {
        return Err(Error::invalid("toy videos need at least three frames"));
    }
    let rotations = rng.random_range(1..=2u32);
    let hue_offset: f64 = rng.random();
    let sat = rng.random_range(0.6..1.0);
    let val = rng.random_range(0.7..1.0);
    let a = random_color(rng);
    let mut b = random_color(rng);
    while (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max) < 0.25 {
        b = random_color(rng);
    }
    let jump_at = rng.random_range(1..len);

    let mut video = ToyVideo {
        frames: FrameSeq::empty(TOY_SHAPE),
        rotations,
        hue_offset,
        jump_at,
    };
    for f in 0..len {
        let mut px = vec![0f32; TOY_SHAPE.numel()];
        let phase = ring_phase(rotations, f, len);
        for (k, &(r, c)) in RING.iter().enumerate() {
            let hue = hue_offset + (TAU * k as f64 / RING.len() as f64 + phase) / TAU;
            let rgb = hsv_to_rgb(hue, sat, val);
            for ch in 0..3 {
                px[(r * 3 + c) * 3 + ch] = (2.0 * rgb[ch] - 1.0) as f32;
            }
        }
        let mid = if f < jump_at { a } else { b };
        for ch in 0..3 {
            px[(3 + 1) * 3 + ch] = (2.0 * mid[ch] - 1.0) as f32;
        }
        video.frames.push(Frame::new(TOY_SHAPE, px)?)?;
    }
    Ok(video)
}

/// `count` toy videos with lengths drawn from `cfg`.
pub fn gen_toy_with<R: Rng + ?Sized>(count: usize, cfg: &ToyConfig, rng: &mut R) -> Result<Vec<ToyVideo>> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    if cfg.lengths.is_empty() || cfg.lengths.len() != cfg.weights.len() {
        return Err(Error::invalid("toy lengths and weights must be non-empty and match"));
    }
    let dist = rand_distr::weighted::WeightedIndex::new(&cfg.weights)
        .map_err(|e| Error::invalid(format!("length weights: {e}")))?;
    (0..count)
        .map(|_| {
            let len = cfg.lengths[rng.sample(&dist)];
            gen_toy_video(len, rng)
        })
        .collect()
}

pub fn gen_toy<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<Vec<ToyVideo>> {
    gen_toy_with(count, &ToyConfig::default(), rng)
}

/// Four scalar-frame videos of lengths 2 to 5.
pub fn mixture_catalog() -> Vec<FrameSeq> {
    let shape = FrameShape::new(1, 1, 1);
    (2..=5usize)
        .map(|n| {
            let frames = (0..n)
                .map(|i| Frame::filled(shape, ((n * 7 + i * 3) % 11) as f32 / 5.5 - 1.0))
                .collect();
            FrameSeq::new(shape, frames).expect("catalog frames share a shape")
        })
        .collect()
}

pub fn gen_mixture<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<Vec<FrameSeq>> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let catalog = mixture_catalog();
    Ok((0..count)
        .map(|_| catalog[rng.random_range(0..catalog.len())].clone())
        .collect())
}

pub fn encode_dataset(videos: &[FrameSeq]) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u32(u32::try_from(videos.len()).map_err(|_| Error::invalid("too many videos"))?);
    for v in videos {
        let s = v.shape();
        let len = u16::try_from(v.len()).map_err(|_| Error::invalid("video longer than 65535 frames"))?;
        let dims = [s.h, s.w, s.c].map(u8::try_from);
        let [Ok(h), Ok(wd), Ok(c)] = dims else {
            return Err(Error::invalid(format!("frame shape {s} exceeds 255")));
        };
        w.u16(len);
        w.u8(h);
        w.u8(wd);
        w.u8(c);
        for f in v.frames() {
            w.f32s(f.values());
        }
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<FrameSeq>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let count = r.u32()? as usize;
    let mut videos = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let shape = FrameShape::new(r.u8()? as usize, r.u8()? as usize, r.u8()? as usize);
        let mut frames = Vec::with_capacity(len);
        for _ in 0..len {
            let at = r.pos();
            let vals = r.f32s(shape.numel())?;
            frames.push(Frame::new(shape, vals).map_err(|e| Error::Corrupt(format!("frame at byte {at}: {e}")))?);
        }
        videos.push(FrameSeq::new(shape, frames)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(videos)
}

pub fn write_dataset(path: &Path, videos: &[FrameSeq]) -> Result<()> {
    write_file(path, &encode_dataset(videos)?)
}

pub fn read_dataset(path: &Path) -> Result<Vec<FrameSeq>> {
    decode_dataset(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn toy_invariants() {
        let mut r = rng::stream(3, rng::streams::DATA);
        for v in gen_toy(200, &mut r).unwrap() {
            let n = v.frames.len();
            assert!(TOY_LENGTHS.contains(&n));
            assert_eq!(v.frames.shape(), TOY_SHAPE);
            let last = v.phase(n - 1);
            assert!((last / TAU - (last / TAU).round()).abs() < 1e-9);
            let (first, end) = (&v.frames.frames()[0], &v.frames.frames()[n - 1]);
            for &(row, col) in &RING {
                for ch in 0..3 {
                    assert!((first.get(row, col, ch) - end.get(row, col, ch)).abs() < 1e-6);
                }
            }
            let mut mids: Vec<[u32; 3]> = v
                .frames
                .frames()
                .iter()
                .map(|f| [0, 1, 2].map(|ch| f.get(1, 1, ch).to_bits()))
                .collect();
            mids.dedup();
            assert_eq!(mids.len(), 2);
        }
    }

    #[test]
    fn catalog_lengths() {
        let lens: Vec<usize> = mixture_catalog().iter().map(|v| v.len()).collect();
        assert_eq!(lens, vec![2, 3, 4, 5]);
        assert_eq!(mixture_catalog(), mixture_catalog());
    }

    #[test]
    fn dataset_errors_are_distinct() {
        let vids = mixture_catalog();
        let bytes = encode_dataset(&vids).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), vids);
        let mut bad = bytes.clone();
        bad[1] = b'?';
        assert!(matches!(decode_dataset(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_dataset(&bad), Err(Error::VersionMismatch { .. })));
        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }
}
