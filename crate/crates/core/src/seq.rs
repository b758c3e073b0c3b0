//! Variable-length frame sequences, the insertion and strip primitives, and
//! extended-time bookkeeping.
//!
//! Slot convention: inserting at slot `i` places the new frame directly after
//! the `i`-th frame (1-based), i.e. "to the right" of it. Slot `0` exists only
//! to seed an empty sequence.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl FrameShape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub const fn numel(&self) -> usize {
        self.h * self.w * self.c
    }
}

impl fmt::Display for FrameShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

/// A single frame, stored row-major as `(H, W, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    shape: FrameShape,
    values: Vec<f32>,
}

impl Frame {
    pub fn new(shape: FrameShape, values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({shape})", shape.numel()),
                got: format!("{} values", values.len()),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("frame value {v}")));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: FrameShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: FrameShape, value: f32) -> Self {
        Self {
            shape,
            values: vec![value; shape.numel()],
        }
    }

    /// A standard-normal noise frame.
    pub fn noise<R: Rng + ?Sized>(shape: FrameShape, rng: &mut R) -> Self {
        let values = (0..shape.numel())
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        Self { shape, values }
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.values[(y * self.shape.w + x) * self.shape.c + ch]
    }

    pub fn max_abs_diff(&self, other: &Frame) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Squared L2 distance, accumulated in 64-bit.
    pub fn sq_dist(&self, other: &Frame) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = *a as f64 - *b as f64;
                d * d
            })
            .sum()
    }
}

/// An ordered, possibly empty, list of equally shaped frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeq {
    shape: FrameShape,
    frames: Vec<Frame>,
}

impl FrameSeq {
    pub fn empty(shape: FrameShape) -> Self {
        Self {
            shape,
            frames: Vec::new(),
        }
    }

    pub fn new(shape: FrameShape, frames: Vec<Frame>) -> Result<Self> {
        for f in &frames {
            check_shape(shape, f)?;
        }
        Ok(Self { shape, frames })
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn push(&mut self, frame: Frame) -> Result<()> {
        check_shape(self.shape, &frame)?;
        self.frames.push(frame);
        Ok(())
    }

    /// Returns a new sequence with `frame` placed directly after the `slot`-th
    /// frame. `slot == 0` is accepted only for an empty sequence.
    pub fn ins(&self, slot: usize, frame: Frame) -> Result<FrameSeq> {
        let mut out = self.clone();
        out.insert_mut(slot, frame)?;
        Ok(out)
    }

    pub(crate) fn insert_mut(&mut self, slot: usize, frame: Frame) -> Result<()> {
        check_shape(self.shape, &frame)?;
        insert_after(&mut self.frames, slot, frame)
    }

    /// Removes the frame at 0-based position `pos`.
    pub fn remove(&self, pos: usize) -> Result<(FrameSeq, Frame)> {
        if pos >= self.frames.len() {
            return Err(Error::IndexOutOfRange {
                index: pos,
                len: self.frames.len(),
            });
        }
        let mut out = self.clone();
        let f = out.frames.remove(pos);
        Ok((out, f))
    }
}

fn check_shape(shape: FrameShape, frame: &Frame) -> Result<()> {
    if frame.shape != shape {
        return Err(Error::ShapeMismatch {
            expected: shape.to_string(),
            got: frame.shape.to_string(),
        });
    }
    Ok(())
}

/// Inserts `item` directly after the `slot`-th element (1-based).
///
/// Shared by frames and their time values so both stay aligned.
pub fn insert_after<T>(items: &mut Vec<T>, slot: usize, item: T) -> Result<()> {
    let n = items.len();
    let valid = if n == 0 { slot == 0 } else { (1..=n).contains(&slot) };
    if !valid {
        return Err(Error::IndexOutOfRange {
            index: slot,
            len: n,
        });
    }
    items.insert(slot, item);
    Ok(())
}

/// A fixed-length sequence of frames and blank tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSeq {
    shape: FrameShape,
    slots: Vec<Option<Frame>>,
}

impl AugmentedSeq {
    pub fn new(shape: FrameShape, slots: Vec<Option<Frame>>) -> Result<Self> {
        for f in slots.iter().flatten() {
            check_shape(shape, f)?;
        }
        Ok(Self { shape, slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Option<Frame>] {
        &self.slots
    }

    /// Drops all blanks. The alignment maps each visible position to the
    /// (0-based) slot it came from.
    pub fn strip(&self) -> (FrameSeq, Vec<usize>) {
        let mut frames = Vec::new();
        let mut alignment = Vec::new();
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some(f) = slot {
                frames.push(f.clone());
                alignment.push(i);
            }
        }
        (
            FrameSeq {
                shape: self.shape,
                frames,
            },
            alignment,
        )
    }
}

/// Keeps the entries of `items` whose mask bit is set.
pub fn strip_by_mask<T: Clone>(items: &[T], mask: &[bool]) -> Vec<T> {
    items
        .iter()
        .zip(mask)
        .filter(|(_, keep)| **keep)
        .map(|(x, _)| x.clone())
        .collect()
}

/// Clamps an extended time to `[0, 1]`.
pub fn clip(tau: f64) -> Result<f64> {
    if tau.is_nan() {
        return Err(Error::NotANumber("clip"));
    }
    Ok(tau.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameState {
    /// Not yet inserted (`tau < 0`).
    Deleted,
    /// Visible and being denoised (`0 <= tau < 1`).
    Flowing,
    /// Clean and frozen (`tau >= 1`).
    Terminal,
}

pub fn frame_state(tau: f64) -> Result<FrameState> {
    if tau.is_nan() {
        return Err(Error::NotANumber("frame_state"));
    }
    Ok(if tau < 0.0 {
        FrameState::Deleted
    } else if tau < 1.0 {
        FrameState::Flowing
    } else {
        FrameState::Terminal
    })
}

/// Per-frame time bookkeeping for one target sequence at one global time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeState {
    pub tau_g: f64,
    pub tau: Vec<f64>,
    pub t: Vec<f64>,
    pub states: Vec<FrameState>,
}

impl TimeState {
    pub fn from_extended(tau_g: f64, tau: Vec<f64>) -> Result<Self> {
        let t = tau.iter().map(|&x| clip(x)).collect::<Result<Vec<_>>>()?;
        let states = tau
            .iter()
            .map(|&x| frame_state(x))
            .collect::<Result<Vec<_>>>()?;
        clip(tau_g)?;
        Ok(Self {
            tau_g,
            tau,
            t,
            states,
        })
    }

    pub fn t_g(&self) -> f64 {
        self.tau_g.clamp(0.0, 1.0)
    }

    pub fn visible_mask(&self) -> Vec<bool> {
        self.states
            .iter()
            .map(|s| *s != FrameState::Deleted)
            .collect()
    }

    pub fn count(&self, state: FrameState) -> usize {
        self.states.iter().filter(|s| **s == state).count()
    }
}
