//! Small trainable field network with per-frame time modulation, channel
//! inflated context input, frame-level attention, and an exponential rate
//! head. Forward and backward passes are written out by hand in 64-bit.
//!
//! Parameters are held in one flat buffer. Values are always representable in
//! 32-bit so that checkpoints round-trip exactly.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_inputs, ContextSpec, FieldModel, FieldOutput};
use crate::error::{Error, Result};
use crate::loss::{LossReport, LossWeights};
use crate::rng;
use crate::schedule::Scheduler;
use crate::seq::{Frame, FrameSeq, FrameShape};
use crate::trainer::TrainingSnapshot;

/// Sequence-level features appended to each frame's input:
/// relative position, inverse length, and the largest generated-frame time.
pub const SEQ_FEATURES: usize = 3;

const LN_EPS: f64 = 1e-5;
/// Log-rates are clamped here; the gradient is zero above it.
const LOG_RATE_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub frame: FrameShape,
    pub width: usize,
    pub blocks: usize,
    pub time_dim: usize,
    pub time_hidden: usize,
    pub mlp_hidden: usize,
    pub token_dim: usize,
    pub rate_hidden: usize,
}

impl Architecture {
    /// Four blocks of width 64 over 3x3x3 frames.
    pub fn toy() -> Self {
        Self {
            frame: FrameShape::new(3, 3, 3),
            width: 64,
            blocks: 4,
            time_dim: 32,
            time_hidden: 64,
            mlp_hidden: 128,
            token_dim: 16,
            rate_hidden: 64,
        }
    }

    pub fn with_frame(mut self, frame: FrameShape) -> Self {
        self.frame = frame;
        self
    }

    pub fn frame_dim(&self) -> usize {
        self.frame.numel()
    }

    pub fn input_dim(&self) -> usize {
        2 * self.frame_dim() + SEQ_FEATURES
    }

    fn mod_dim(&self) -> usize {
        4 * self.blocks * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.frame.h,
            self.frame.w,
            self.frame.c,
            self.width,
            self.blocks,
            self.time_dim,
            self.time_hidden,
            self.mlp_hidden,
            self.token_dim,
            self.rate_hidden,
        ];
        if dims.contains(&0) || !self.time_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    /// Named parameter tensors in storage order.
    pub fn layout(&self) -> Vec<ParamEntry> {
        let mut b = LayoutBuilder::default();
        self.offsets_with(&mut b);
        b.entries
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(|e| e.numel()).sum()
    }

    fn offsets(&self) -> Offsets {
        self.offsets_with(&mut LayoutBuilder::default())
    }

    fn offsets_with(&self, b: &mut LayoutBuilder) -> Offsets {
        let (w, d) = (self.width, self.frame_dim());
        let in_w = b.add("input.weight", self.input_dim(), w);
        let in_b = b.add("input.bias", 1, w);
        let t_w1 = b.add("time.fc1.weight", self.time_dim, self.time_hidden);
        let t_b1 = b.add("time.fc1.bias", 1, self.time_hidden);
        let t_w2 = b.add("time.fc2.weight", self.time_hidden, self.mod_dim());
        let t_b2 = b.add("time.fc2.bias", 1, self.mod_dim());
        let blocks = (0..self.blocks)
            .map(|i| BlockOffsets {
                wq: b.add(&format!("blocks.{i}.attn.q"), w, w),
                wk: b.add(&format!("blocks.{i}.attn.k"), w, w),
                wv: b.add(&format!("blocks.{i}.attn.v"), w, w),
                wo: b.add(&format!("blocks.{i}.attn.out"), w, w),
                w1: b.add(&format!("blocks.{i}.mlp.fc1.weight"), w, self.mlp_hidden),
                b1: b.add(&format!("blocks.{i}.mlp.fc1.bias"), 1, self.mlp_hidden),
                w2: b.add(&format!("blocks.{i}.mlp.fc2.weight"), self.mlp_hidden, w),
                b2: b.add(&format!("blocks.{i}.mlp.fc2.bias"), 1, w),
            })
            .collect();
        let vel_w = b.add("velocity.weight", w, d);
        let vel_b = b.add("velocity.bias", 1, d);
        let token = b.add("rate.token", 1, self.token_dim);
        let r_w1 = b.add("rate.fc1.weight", w + self.token_dim, self.rate_hidden);
        let r_b1 = b.add("rate.fc1.bias", 1, self.rate_hidden);
        let r_w2 = b.add("rate.fc2.weight", self.rate_hidden, 1);
        let r_b2 = b.add("rate.fc2.bias", 1, 1);
        Offsets {
            in_w,
            in_b,
            t_w1,
            t_b1,
            t_w2,
            t_b2,
            blocks,
            vel_w,
            vel_b,
            token,
            r_w1,
            r_b1,
            r_w2,
            r_b2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Default)]
struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    next: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: &str, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            off: self.next,
            rows,
            cols,
        };
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: vec![rows, cols],
            offset: self.next,
        });
        self.next += rows * cols;
        slot
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    off: usize,
    rows: usize,
    cols: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn mat<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.off..self.off + self.len()])
            .expect("slot fits layout")
    }

    fn mat_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut p[self.off..self.off + self.len()])
            .expect("slot fits layout")
    }

    fn row<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.off..self.off + self.len()])
    }

    fn add_row(&self, g: &mut [f64], dy: &Array2<f64>) {
        for (gi, s) in g[self.off..self.off + self.len()]
            .iter_mut()
            .zip(dy.sum_axis(Axis(0)).iter())
        {
            *gi += s;
        }
    }
}

#[derive(Debug, Clone)]
struct BlockOffsets {
    wq: Slot,
    wk: Slot,
    wv: Slot,
    wo: Slot,
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
}

#[derive(Debug, Clone)]
struct Offsets {
    in_w: Slot,
    in_b: Slot,
    t_w1: Slot,
    t_b1: Slot,
    t_w2: Slot,
    t_b2: Slot,
    blocks: Vec<BlockOffsets>,
    vel_w: Slot,
    vel_b: Slot,
    token: Slot,
    r_w1: Slot,
    r_b1: Slot,
    r_w2: Slot,
    r_b2: Slot,
}

/// Network input for one sequence.
struct NetInput {
    features: Array2<f64>,
    t: Vec<f64>,
}

impl NetInput {
    fn build(
        arch: &Architecture,
        x: &FrameSeq,
        t: &[f64],
        ctx: &ContextSpec,
        cond_dropped: bool,
    ) -> Self {
        let m = x.len();
        let d = arch.frame_dim();
        let gen_max = (0..m)
            .filter(|&i| ctx.at(i).is_none())
            .map(|i| t[i])
            .fold(0.0, f64::max);
        let mut features = Array2::<f64>::zeros((m, arch.input_dim()));
        for (i, frame) in x.frames().iter().enumerate() {
            let mut row = features.row_mut(i);
            for (k, v) in frame.values().iter().enumerate() {
                row[k] = *v as f64;
            }
            if !cond_dropped {
                if let Some(c) = ctx.at(i) {
                    for (k, v) in c.frame.values().iter().enumerate() {
                        row[d + k] = *v as f64;
                    }
                }
            }
            row[2 * d] = (i as f64 + 0.5) / m as f64;
            row[2 * d + 1] = 1.0 / m as f64;
            row[2 * d + 2] = gen_max;
        }
        Self {
            features,
            t: t.to_vec(),
        }
    }
}

struct BlockCache {
    n1: Array2<f64>,
    inv1: Array1<f64>,
    g1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    o: Array2<f64>,
    n2: Array2<f64>,
    inv2: Array1<f64>,
    g2: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
}

struct Cache {
    features: Array2<f64>,
    temb: Array2<f64>,
    t_pre: Array2<f64>,
    t_act: Array2<f64>,
    modu: Array2<f64>,
    blocks: Vec<BlockCache>,
    nf: Array2<f64>,
    invf: Array1<f64>,
    r_in: Array2<f64>,
    r_pre: Array2<f64>,
    r_act: Array2<f64>,
    velocity: Array2<f64>,
    log_rate: Array1<f64>,
    clamped: Vec<bool>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

fn silu_back(dy: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    out.zip_mut_with(x, |g, &v| {
        let s = sigmoid(v);
        *g *= s + v * s * (1.0 - s);
    });
    out
}

fn layer_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let n = x.ncols() as f64;
    let mut y = x.clone();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, iv) in y.rows_mut().into_iter().zip(inv.iter_mut()) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        *iv = 1.0 / (var + LN_EPS).sqrt();
        let scale = *iv;
        row.mapv_inplace(|v| (v - mean) * scale);
    }
    (y, inv)
}

fn layer_norm_back(dy: &Array2<f64>, y: &Array2<f64>, inv: &Array1<f64>) -> Array2<f64> {
    let n = y.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..y.nrows() {
        let (dyr, yr) = (dy.row(i), y.row(i));
        let mean_dy = dyr.sum() / n;
        let mean_dyy = dyr.dot(&yr) / n;
        let mut out = dx.row_mut(i);
        for k in 0..y.ncols() {
            out[k] = inv[i] * (dyr[k] - mean_dy - yr[k] * mean_dyy);
        }
    }
    dx
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn time_embedding(t: &[f64], dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::zeros((t.len(), dim));
    for (i, &ti) in t.iter().enumerate() {
        for k in 0..half {
            let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
            let angle = 1000.0 * ti * freq;
            out[[i, k]] = angle.sin();
            out[[i, half + k]] = angle.cos();
        }
    }
    out
}

fn affine(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    x.dot(&w) + b
}

/// `g += a^T b`
fn acc_at_b(g: &mut [f64], slot: Slot, a: &Array2<f64>, b: &Array2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, &mut slot.mat_mut(g));
}

fn modulate(n: &Array2<f64>, scale: ArrayView2<f64>, shift: ArrayView2<f64>) -> Array2<f64> {
    let mut g = n * &scale.mapv(|s| 1.0 + s);
    g += &shift;
    g
}

fn forward(arch: &Architecture, o: &Offsets, p: &[f64], input: &NetInput) -> Cache {
    let w = arch.width;
    let m = input.features.nrows();
    let mut h = affine(&input.features, o.in_w.mat(p), o.in_b.row(p));

    let temb = time_embedding(&input.t, arch.time_dim);
    let t_pre = affine(&temb, o.t_w1.mat(p), o.t_b1.row(p));
    let t_act = silu(&t_pre);
    let modu = affine(&t_act, o.t_w2.mat(p), o.t_b2.row(p));

    let scale = 1.0 / (w as f64).sqrt();
    let mut blocks = Vec::with_capacity(arch.blocks);
    for (bi, bo) in o.blocks.iter().enumerate() {
        let base = 4 * bi * w;
        let sa = modu.slice(s![.., base..base + w]);
        let ha = modu.slice(s![.., base + w..base + 2 * w]);
        let sm = modu.slice(s![.., base + 2 * w..base + 3 * w]);
        let hm = modu.slice(s![.., base + 3 * w..base + 4 * w]);

        let (n1, inv1) = layer_norm(&h);
        let g1 = modulate(&n1, sa, ha);
        let q = g1.dot(&bo.wq.mat(p));
        let k = g1.dot(&bo.wk.mat(p));
        let v = g1.dot(&bo.wv.mat(p));
        let mut attn = q.dot(&k.t()) * scale;
        softmax_rows(&mut attn);
        let att_out = attn.dot(&v);
        let h_mid = &h + &att_out.dot(&bo.wo.mat(p));

        let (n2, inv2) = layer_norm(&h_mid);
        let g2 = modulate(&n2, sm, hm);
        let u = affine(&g2, bo.w1.mat(p), bo.b1.row(p));
        let act = silu(&u);
        let h_out = &h_mid + &affine(&act, bo.w2.mat(p), bo.b2.row(p));

        blocks.push(BlockCache {
            n1,
            inv1,
            g1,
            q,
            k,
            v,
            attn,
            o: att_out,
            n2,
            inv2,
            g2,
            u,
            act,
        });
        h = h_out;
    }

    let (nf, invf) = layer_norm(&h);
    let velocity = affine(&nf, o.vel_w.mat(p), o.vel_b.row(p));

    let mut r_in = Array2::zeros((m, w + arch.token_dim));
    r_in.slice_mut(s![.., ..w]).assign(&nf);
    r_in.slice_mut(s![.., w..]).assign(&o.token.row(p));
    let r_pre = affine(&r_in, o.r_w1.mat(p), o.r_b1.row(p));
    let r_act = silu(&r_pre);
    let raw = affine(&r_act, o.r_w2.mat(p), o.r_b2.row(p)).column(0).to_owned();
    let clamped: Vec<bool> = raw.iter().map(|z| *z > LOG_RATE_MAX).collect();
    let log_rate = raw.mapv(|z| z.min(LOG_RATE_MAX));

    Cache {
        features: input.features.clone(),
        temb,
        t_pre,
        t_act,
        modu,
        blocks,
        nf,
        invf,
        r_in,
        r_pre,
        r_act,
        velocity,
        log_rate,
        clamped,
    }
}

/// Accumulates parameter gradients given upstream gradients on the velocity
/// output (`m x D`) and the log-rates (`m`).
fn backward(
    arch: &Architecture,
    o: &Offsets,
    p: &[f64],
    c: &Cache,
    d_vel: &Array2<f64>,
    d_log_rate: &Array1<f64>,
    g: &mut [f64],
) {
    let w = arch.width;
    let m = c.nf.nrows();

    // velocity head
    acc_at_b(g, o.vel_w, &c.nf, d_vel);
    o.vel_b.add_row(g, d_vel);
    let mut d_nf = d_vel.dot(&o.vel_w.mat(p).t());

    // rate head
    let dz: Array2<f64> = Array2::from_shape_fn((m, 1), |(i, _)| {
        if c.clamped[i] {
            0.0
        } else {
            d_log_rate[i]
        }
    });
    acc_at_b(g, o.r_w2, &c.r_act, &dz);
    o.r_b2.add_row(g, &dz);
    let d_ract = dz.dot(&o.r_w2.mat(p).t());
    let d_rpre = silu_back(&d_ract, &c.r_pre);
    acc_at_b(g, o.r_w1, &c.r_in, &d_rpre);
    o.r_b1.add_row(g, &d_rpre);
    let d_rin = d_rpre.dot(&o.r_w1.mat(p).t());
    d_nf += &d_rin.slice(s![.., ..w]);
    let d_tok = d_rin.slice(s![.., w..]).sum_axis(Axis(0));
    for (gi, v) in g[o.token.off..o.token.off + o.token.len()]
        .iter_mut()
        .zip(d_tok.iter())
    {
        *gi += v;
    }

    let mut dh = layer_norm_back(&d_nf, &c.nf, &c.invf);
    let mut d_mod = Array2::<f64>::zeros(c.modu.raw_dim());
    let scale = 1.0 / (w as f64).sqrt();

    for (bi, (bo, bc)) in o.blocks.iter().zip(&c.blocks).enumerate().rev() {
        let base = 4 * bi * w;
        let sa = c.modu.slice(s![.., base..base + w]);
        let sm = c.modu.slice(s![.., base + 2 * w..base + 3 * w]);

        // MLP sublayer
        acc_at_b(g, bo.w2, &bc.act, &dh);
        bo.b2.add_row(g, &dh);
        let d_act = dh.dot(&bo.w2.mat(p).t());
        let d_u = silu_back(&d_act, &bc.u);
        acc_at_b(g, bo.w1, &bc.g2, &d_u);
        bo.b1.add_row(g, &d_u);
        let d_g2 = d_u.dot(&bo.w1.mat(p).t());
        let d_n2 = &d_g2 * &sm.mapv(|s| 1.0 + s);
        d_mod
            .slice_mut(s![.., base + 2 * w..base + 3 * w])
            .assign(&(&d_g2 * &bc.n2));
        d_mod.slice_mut(s![.., base + 3 * w..base + 4 * w]).assign(&d_g2);
        let dh_mid = &dh + &layer_norm_back(&d_n2, &bc.n2, &bc.inv2);

        // attention sublayer
        acc_at_b(g, bo.wo, &bc.o, &dh_mid);
        let d_o = dh_mid.dot(&bo.wo.mat(p).t());
        let d_attn = d_o.dot(&bc.v.t());
        let d_v = bc.attn.t().dot(&d_o);
        let mut d_s = &bc.attn * &d_attn;
        for (mut row, arow) in d_s.rows_mut().into_iter().zip(bc.attn.rows()) {
            let total = row.sum();
            row.zip_mut_with(&arow, |ds, &a| *ds -= a * total);
        }
        d_s *= scale;
        let d_q = d_s.dot(&bc.k);
        let d_k = d_s.t().dot(&bc.q);
        acc_at_b(g, bo.wq, &bc.g1, &d_q);
        acc_at_b(g, bo.wk, &bc.g1, &d_k);
        acc_at_b(g, bo.wv, &bc.g1, &d_v);
        let d_g1 = d_q.dot(&bo.wq.mat(p).t()) + d_k.dot(&bo.wk.mat(p).t()) + d_v.dot(&bo.wv.mat(p).t());
        let d_n1 = &d_g1 * &sa.mapv(|s| 1.0 + s);
        d_mod.slice_mut(s![.., base..base + w]).assign(&(&d_g1 * &bc.n1));
        d_mod.slice_mut(s![.., base + w..base + 2 * w]).assign(&d_g1);
        dh = &dh_mid + &layer_norm_back(&d_n1, &bc.n1, &bc.inv1);
    }

    // time modulation network
    acc_at_b(g, o.t_w2, &c.t_act, &d_mod);
    o.t_b2.add_row(g, &d_mod);
    let d_tact = d_mod.dot(&o.t_w2.mat(p).t());
    let d_tpre = silu_back(&d_tact, &c.t_pre);
    acc_at_b(g, o.t_w1, &c.temb, &d_tpre);
    o.t_b1.add_row(g, &d_tpre);

    // input projection
    acc_at_b(g, o.in_w, &c.features, &dh);
    o.in_b.add_row(g, &dh);
}

/// Loss report and flat gradient for one batch.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub report: LossReport,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReferenceNet {
    arch: Architecture,
    offsets: Offsets,
    params: Vec<f64>,
}

impl ReferenceNet {
    /// Deterministic initialisation from `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let offsets = arch.offsets();
        let mut params = vec![0.0; arch.num_params()];
        let mut rng = rng::stream(seed, rng::streams::INIT);
        let mut fill = |slot: Slot, std: f64, params: &mut Vec<f64>| {
            for v in &mut params[slot.off..slot.off + slot.len()] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        let w = arch.width as f64;
        fill(offsets.in_w, 1.0 / (arch.input_dim() as f64).sqrt(), &mut params);
        fill(offsets.t_w1, 1.0 / (arch.time_dim as f64).sqrt(), &mut params);
        fill(offsets.t_w2, 0.02, &mut params);
        for bo in &offsets.blocks {
            fill(bo.wq, 1.0 / w.sqrt(), &mut params);
            fill(bo.wk, 1.0 / w.sqrt(), &mut params);
            fill(bo.wv, 1.0 / w.sqrt(), &mut params);
            fill(bo.wo, 0.5 / w.sqrt(), &mut params);
            fill(bo.w1, 1.0 / w.sqrt(), &mut params);
            fill(bo.w2, 0.5 / (arch.mlp_hidden as f64).sqrt(), &mut params);
        }
        fill(offsets.vel_w, 1.0 / w.sqrt(), &mut params);
        fill(offsets.token, 1.0, &mut params);
        fill(
            offsets.r_w1,
            1.0 / ((arch.width + arch.token_dim) as f64).sqrt(),
            &mut params,
        );
        fill(offsets.r_w2, 0.1 / (arch.rate_hidden as f64).sqrt(), &mut params);
        round_to_f32(&mut params);
        Ok(Self {
            arch,
            offsets,
            params,
        })
    }

    pub fn from_f32(arch: Architecture, values: &[f32]) -> Result<Self> {
        arch.validate()?;
        let n = arch.num_params();
        if values.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} parameters"),
                got: format!("{} parameters", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameter".into()));
        }
        Ok(Self {
            arch,
            offsets: arch.offsets(),
            params: values.iter().map(|&v| v as f64).collect(),
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_f32(&self) -> Vec<f32> {
        self.params.iter().map(|&v| v as f32).collect()
    }

    /// Replaces the parameters, rounding each to the nearest 32-bit value.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.params.len()),
                got: format!("{} parameters", params.len()),
            });
        }
        self.params.copy_from_slice(params);
        round_to_f32(&mut self.params);
        Ok(())
    }

    fn raw_eval(&self, params: &[f64], x: &FrameSeq, t: &[f64], ctx: &ContextSpec, cond_dropped: bool) -> Result<Cache> {
        check_inputs(x, t, ctx)?;
        if x.shape() != self.arch.frame {
            return Err(Error::ShapeMismatch {
                expected: self.arch.frame.to_string(),
                got: x.shape().to_string(),
            });
        }
        let input = NetInput::build(&self.arch, x, t, ctx, cond_dropped);
        Ok(forward(&self.arch, &self.offsets, params, &input))
    }

    /// Batch loss (and optionally its gradient) at arbitrary 64-bit
    /// parameters. The insertion NLL is summed over slots and averaged over
    /// sequences; the velocity error is averaged over every flowing frame in
    /// the batch.
    pub fn batch_loss(
        &self,
        params: &[f64],
        batch: &[TrainingSnapshot],
        scheduler: &Scheduler,
        weights: &LossWeights,
        with_grad: bool,
    ) -> Result<BatchGrad> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.params.len()),
                got: format!("{} parameters", params.len()),
            });
        }
        let n_active: usize = batch
            .iter()
            .map(|s| s.active.iter().filter(|a| **a).count())
            .sum();
        if n_active == 0 {
            return Err(Error::NoActiveFrames);
        }
        let inv_batch = 1.0 / batch.len() as f64;
        let inv_active = 1.0 / n_active as f64;
        let d = self.arch.frame_dim();

        let mut grad = if with_grad { vec![0.0; params.len()] } else { Vec::new() };
        let mut ins_raw = 0.0f64;
        let mut ins_weighted = 0.0f64;
        let mut vel = 0.0f64;
        for snap in batch {
            let cache = self.raw_eval(params, &snap.x, &snap.t, &snap.ctx, snap.cond_dropped)?;
            let m = snap.x.len();
            if snap.counts.len() != m || snap.active.len() != m || snap.velocity_target.len() != m {
                return Err(Error::ShapeMismatch {
                    expected: format!("{m} per-frame targets"),
                    got: format!(
                        "{} counts, {} mask, {} targets",
                        snap.counts.len(),
                        snap.active.len(),
                        snap.velocity_target.len()
                    ),
                });
            }
            let w_ins = weights.insertion_scale(scheduler, snap.t_g);
            let mut d_lr = Array1::zeros(m);
            for j in 0..m {
                let z = cache.log_rate[j];
                let k = snap.counts.as_slice()[j] as f64;
                let nll = z.exp() - k * z;
                ins_raw += nll * inv_batch;
                ins_weighted += w_ins * nll * inv_batch;
                d_lr[j] = w_ins * inv_batch * (z.exp() - k);
            }
            let mut d_vel = Array2::zeros((m, d));
            for i in (0..m).filter(|&i| snap.active[i]) {
                let target = snap.velocity_target[i].values();
                for k in 0..d {
                    let r = cache.velocity[[i, k]] - target[k] as f64;
                    vel += r * r * inv_active;
                    d_vel[[i, k]] = 2.0 * r * inv_active;
                }
            }
            if with_grad {
                backward(&self.arch, &self.offsets, params, &cache, &d_vel, &d_lr, &mut grad);
            }
        }
        let total = ins_weighted + vel;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("batch loss {total}")));
        }
        Ok(BatchGrad {
            report: LossReport {
                insertion_nll: ins_raw,
                velocity_mse: vel,
                active_frame_count: n_active,
                total,
            },
            grad,
        })
    }
}

fn round_to_f32(params: &mut [f64]) {
    for v in params {
        *v = *v as f32 as f64;
    }
}

impl FieldModel for ReferenceNet {
    fn eval(
        &self,
        x: &FrameSeq,
        t: &[f64],
        ctx: &ContextSpec,
        cond_dropped: bool,
    ) -> Result<FieldOutput> {
        let cache = self.raw_eval(&self.params, x, t, ctx, cond_dropped)?;
        let shape = self.arch.frame;
        let v = cache
            .velocity
            .rows()
            .into_iter()
            .map(|row| Frame::new(shape, row.iter().map(|&v| v as f32).collect()))
            .collect::<Result<Vec<_>>>()?;
        let lambda = cache.log_rate.iter().map(|z| z.exp()).collect();
        let out = FieldOutput { v, lambda };
        out.validate(x.len())?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let arch = Architecture::toy();
        let layout = arch.layout();
        let mut next = 0;
        for e in &layout {
            assert_eq!(e.offset, next);
            next += e.numel();
        }
        assert_eq!(next, arch.num_params());
        assert_eq!(layout.len(), 6 + 8 * arch.blocks + 7);
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let x = Array2::from_shape_fn((2, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let dy = Array2::from_shape_fn((2, 5), |(i, j)| ((i + 2 * j) as f64 * 0.91).cos());
        let (y, inv) = layer_norm(&x);
        let dx = layer_norm_back(&dy, &y, &inv);
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[[i, j]] += eps;
                let mut xm = x.clone();
                xm[[i, j]] -= eps;
                let fp = (&layer_norm(&xp).0 * &dy).sum();
                let fm = (&layer_norm(&xm).0 * &dy).sum();
                let fd = (fp - fm) / (2.0 * eps);
                assert!((fd - dx[[i, j]]).abs() < 1e-7, "{fd} vs {}", dx[[i, j]]);
            }
        }
    }

    #[test]
    fn params_are_f32_representable() {
        let net = ReferenceNet::new(Architecture::toy(), 3).unwrap();
        assert!(net.params().iter().all(|&v| v == v as f32 as f64));
    }
}
