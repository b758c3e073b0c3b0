//! The field contract `(X, t) -> (velocities, rates)` and its implementations.

mod checkpoint;
mod oracle;
mod reference;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint};
pub use oracle::{oracle_rate_scaled, ConditionalOracle};
pub use reference::{Architecture, BatchGrad, ParamEntry, ReferenceNet};

use crate::error::{Error, Result};
use crate::seq::{Frame, FrameSeq};

/// Per-frame velocities and non-negative insertion rates.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOutput {
    pub v: Vec<Frame>,
    /// `lambda[j]` is the rate for the slot directly right of frame `j`.
    pub lambda: Vec<f64>,
}

impl FieldOutput {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.v.len() != expected_len || self.lambda.len() != expected_len {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected_len} outputs"),
                got: format!("{} velocities, {} rates", self.v.len(), self.lambda.len()),
            });
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::NonFinite(format!("insertion rate {l}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextRole {
    /// May induce insertions in its right slot.
    Active,
    /// Never induces insertions.
    Passive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextFrame {
    pub position: usize,
    pub frame: Frame,
    pub role: ContextRole,
}

/// Conditioning frames placed at relative positions of a sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextSpec {
    frames: Vec<ContextFrame>,
}

impl ContextSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(frames: Vec<ContextFrame>) -> Result<Self> {
        if frames.windows(2).any(|w| w[0].position >= w[1].position) {
            return Err(Error::invalid("context positions must be strictly increasing"));
        }
        Ok(Self { frames })
    }

    /// Image-to-video: one active context frame in front.
    pub fn i2v(first: Frame) -> Self {
        Self {
            frames: vec![ContextFrame {
                position: 0,
                frame: first,
                role: ContextRole::Active,
            }],
        }
    }

    /// Interpolation: `frames` spread around `n_start` generated frames
    /// placed after the first context frame; all context frames are active
    /// except the last, which is passive.
    pub fn interpolation(frames: Vec<Frame>, n_start: usize) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid("interpolation needs at least two context frames"));
        }
        let last = frames.len() - 1;
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, frame)| ContextFrame {
                position: if i == 0 { 0 } else { i + n_start },
                frame,
                role: if i == last {
                    ContextRole::Passive
                } else {
                    ContextRole::Active
                },
            })
            .collect();
        Self::new(frames)
    }

    pub fn frames(&self) -> &[ContextFrame] {
        &self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Context frame occupying `position`, if any.
    pub fn at(&self, position: usize) -> Option<&ContextFrame> {
        self.frames
            .binary_search_by_key(&position, |c| c.position)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn check_fits(&self, len: usize) -> Result<()> {
        match self.frames.last() {
            Some(c) if c.position >= len => Err(Error::IndexOutOfRange {
                index: c.position,
                len,
            }),
            _ => Ok(()),
        }
    }
}

/// Anything that maps a noisy sequence and its per-frame times to a field.
pub trait FieldModel {
    fn eval(
        &self,
        x: &FrameSeq,
        t: &[f64],
        ctx: &ContextSpec,
        cond_dropped: bool,
    ) -> Result<FieldOutput>;
}

impl<M: FieldModel + ?Sized> FieldModel for &M {
    fn eval(
        &self,
        x: &FrameSeq,
        t: &[f64],
        ctx: &ContextSpec,
        cond_dropped: bool,
    ) -> Result<FieldOutput> {
        (**self).eval(x, t, ctx, cond_dropped)
    }
}

/// Wraps a model and forces every insertion rate to zero.
#[derive(Debug, Clone)]
pub struct ZeroRate<M>(pub M);

impl<M: FieldModel> FieldModel for ZeroRate<M> {
    fn eval(
        &self,
        x: &FrameSeq,
        t: &[f64],
        ctx: &ContextSpec,
        cond_dropped: bool,
    ) -> Result<FieldOutput> {
        let mut out = self.0.eval(x, t, ctx, cond_dropped)?;
        out.lambda.iter_mut().for_each(|l| *l = 0.0);
        Ok(out)
    }
}

pub(crate) fn check_inputs(x: &FrameSeq, t: &[f64], ctx: &ContextSpec) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("model input must contain at least one frame"));
    }
    if t.len() != x.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} times", x.len()),
            got: format!("{} times", t.len()),
        });
    }
    if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(format!("frame time {bad} outside [0, 1]")));
    }
    ctx.check_fits(x.len())?;
    for c in ctx.frames() {
        if c.frame.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                expected: x.shape().to_string(),
                got: c.frame.shape().to_string(),
            });
        }
    }
    Ok(())
}
