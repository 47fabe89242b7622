use num_bigint::BigUint;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GoalDistribution, PolicyConfig};
use crate::perception::CHANNELS;

/// A named block of the flat parameter vector, row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter layout:
///
/// | block | shape | role |
/// |---|---|---|
/// | `extractor.w` | C × 7 | shared per-cell extractor |
/// | `extractor.b` | C | |
/// | `decoder.w1` | H × 2CK | hidden layer over the fused grid |
/// | `decoder.b1` | H | |
/// | `decoder.w2` | K × H | goal logits |
/// | `decoder.b2` | K | |
/// | `decoder.skip` | 2C | per-cell skip from fused features to logits |
/// | `critic.w` | C × 7 | critic extractor |
/// | `critic.b` | C | |
/// | `critic.v` | 2CK | value head |
/// | `critic.c` | 1 | |
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub cells: usize,
    pub channels_out: usize,
    pub hidden: usize,
    pub slices: Vec<ParamSlice>,
}

const EXTRACTOR_W: usize = 0;
const EXTRACTOR_B: usize = 1;
const DECODER_W1: usize = 2;
const DECODER_B1: usize = 3;
const DECODER_W2: usize = 4;
const DECODER_B2: usize = 5;
const DECODER_SKIP: usize = 6;
const CRITIC_W: usize = 7;
const CRITIC_B: usize = 8;
const CRITIC_V: usize = 9;
const CRITIC_C: usize = 10;

impl ParamLayout {
    pub fn new(cfg: &PolicyConfig) -> Self {
        let k = cfg.cells();
        let c = cfg.channels_out;
        let h = cfg.hidden;
        let shapes = [
            ("extractor.w", c, CHANNELS),
            ("extractor.b", c, 1),
            ("decoder.w1", h, 2 * c * k),
            ("decoder.b1", h, 1),
            ("decoder.w2", k, h),
            ("decoder.b2", k, 1),
            ("decoder.skip", 2 * c, 1),
            ("critic.w", c, CHANNELS),
            ("critic.b", c, 1),
            ("critic.v", 1, 2 * c * k),
            ("critic.c", 1, 1),
        ];
        let mut offset = 0;
        let slices = shapes
            .iter()
            .map(|(name, rows, cols)| {
                let s = ParamSlice {
                    name: name.to_string(),
                    offset,
                    rows: *rows,
                    cols: *cols,
                };
                offset += rows * cols;
                s
            })
            .collect();
        ParamLayout {
            cells: k,
            channels_out: c,
            hidden: h,
            slices,
        }
    }

    pub fn len(&self) -> usize {
        self.slices.last().map(|s| s.offset + s.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a>(&self, params: &'a [f64], block: usize) -> &'a [f64] {
        &params[self.slices[block].range()]
    }

    pub fn slice_mut<'a>(&self, params: &'a mut [f64], block: usize) -> &'a mut [f64] {
        &mut params[self.slices[block].range()]
    }

    pub fn find(&self, name: &str) -> Option<&ParamSlice> {
        self.slices.iter().find(|s| s.name == name)
    }

    /// Orthogonal weights (gain √2 for hidden maps, 0.01 for the logits,
    /// 1 for the value head), zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.len()];
        let gains = [
            (EXTRACTOR_W, 2f64.sqrt()),
            (DECODER_W1, 2f64.sqrt()),
            (DECODER_W2, 0.01),
            (DECODER_SKIP, 0.01),
            (CRITIC_W, 2f64.sqrt()),
            (CRITIC_V, 1.0),
        ];
        for (block, gain) in gains {
            let s = &self.slices[block];
            let m = orthogonal(s.rows, s.cols, gain, rng);
            p[s.range()].copy_from_slice(&m);
        }
        p
    }
}

/// Row-major `rows × cols` matrix with orthonormal rows or columns
/// (whichever is fewer), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (n, m) = (rows.max(cols), rows.min(cols));
    // m orthonormal vectors of length n by modified Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    while basis.len() < m {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows >= cols { basis[c][r] } else { basis[r][c] };
        }
    }
    out
}

/// `tanh(W x_k + b)` per goal cell; `x` is `[cell][7]`, output `[cell][C]`.
pub fn extract_features(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let c_out = b.len();
    let k = x.len() / CHANNELS;
    let mut out = vec![0.0; k * c_out];
    for cell in 0..k {
        let xin = &x[cell * CHANNELS..(cell + 1) * CHANNELS];
        for c in 0..c_out {
            let row = &w[c * CHANNELS..(c + 1) * CHANNELS];
            let a: f64 = b[c] + row.iter().zip(xin).map(|(p, q)| p * q).sum::<f64>();
            out[cell * c_out + c] = a.tanh();
        }
    }
    out
}

/// `[own ‖ mean(peers)]` per cell, zeros for the peer half when there are
/// no peers. Output `[cell][2C]`. The mean is correctly rounded, so the
/// result depends only on the multiset of peers.
pub fn aggregate_relations(own: &[f64], peers: &[Vec<f64>], channels_out: usize) -> Vec<f64> {
    let k = own.len() / channels_out;
    let mut out = vec![0.0; k * 2 * channels_out];
    let mut column = Vec::with_capacity(peers.len());
    for cell in 0..k {
        for c in 0..channels_out {
            let i = cell * channels_out + c;
            out[cell * 2 * channels_out + c] = own[i];
            column.clear();
            column.extend(peers.iter().map(|p| p[i]));
            out[cell * 2 * channels_out + channels_out + c] = exact_mean(&column);
        }
    }
    out
}

/// The arithmetic mean rounded once to nearest-even; 0 for no values.
pub fn exact_mean(values: &[f64]) -> f64 {
    match values {
        [] => 0.0,
        [a] => *a,
        [a, b] => {
            let m = (a + b) * 0.5;
            if m.abs() >= 4.0 * f64::MIN_POSITIVE || m == 0.0 && *a == -*b {
                m
            } else {
                exact_mean_slow(values)
            }
        }
        _ => exact_mean_slow(values),
    }
}

/// `|v| · 2^1074` as an integer.
fn scaled(v: f64) -> BigUint {
    let bits = v.to_bits();
    let exp = (bits >> 52) & 0x7ff;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        BigUint::from(frac)
    } else {
        BigUint::from(frac | (1u64 << 52)) << (exp - 1)
    }
}

fn pow2(e: i64) -> f64 {
    f64::from_bits(((e + 1023) as u64) << 52)
}

fn exact_mean_slow(values: &[f64]) -> f64 {
    if values.iter().any(|v| !v.is_finite()) {
        return values.iter().sum::<f64>() / values.len() as f64;
    }
    let (mut pos, mut neg) = (BigUint::ZERO, BigUint::ZERO);
    for v in values {
        if v.is_sign_negative() {
            neg += scaled(*v);
        } else {
            pos += scaled(*v);
        }
    }
    let negative = neg > pos;
    let a = if negative { neg - pos } else { pos - neg };
    if a == BigUint::ZERO {
        return 0.0;
    }
    let n = BigUint::from(values.len());
    // a/n · 2^-1074 = q · 2^(-p-1074) + r/n · 2^(-p-1074), q holding >= 55 bits.
    let p = (n.bits() + 55).saturating_sub(a.bits());
    let num = a << p;
    let q = &num / &n;
    let r = &num % &n;
    let shift = q.bits().saturating_sub(53).max(p);
    let mut mant = &q >> shift;
    let rem = &q - (&mant << shift);
    let twice = ((rem * &n) + r) << 1u32;
    let unit = &n << shift;
    let odd = mant.bit(0);
    if twice > unit || (twice == unit && odd) {
        mant += 1u32;
    }
    let m = mant.iter_u64_digits().next().unwrap_or(0) as f64;
    let e = shift as i64 - p as i64 - 1074;
    let e1 = e.clamp(-1022, 1023);
    let out = m * pow2(e1) * pow2(e - e1);
    if negative {
        -out
    } else {
        out
    }
}

fn decoder_logits(layout: &ParamLayout, params: &[f64], fused: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (k, h_dim, c2) = (layout.cells, layout.hidden, 2 * layout.channels_out);
    let d = fused.len();
    let w1 = layout.slice(params, DECODER_W1);
    let b1 = layout.slice(params, DECODER_B1);
    let w2 = layout.slice(params, DECODER_W2);
    let b2 = layout.slice(params, DECODER_B2);
    let skip = layout.slice(params, DECODER_SKIP);
    let h: Vec<f64> = (0..h_dim)
        .map(|j| {
            let row = &w1[j * d..(j + 1) * d];
            (b1[j] + row.iter().zip(fused).map(|(a, b)| a * b).sum::<f64>()).tanh()
        })
        .collect();
    let logits = (0..k)
        .map(|cell| {
            let row = &w2[cell * h_dim..(cell + 1) * h_dim];
            let f = &fused[cell * c2..(cell + 1) * c2];
            b2[cell]
                + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
                + skip.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    (logits, h)
}

pub fn decode_action(layout: &ParamLayout, params: &[f64], fused: &[f64]) -> GoalDistribution {
    GoalDistribution::from_logits(&decoder_logits(layout, params, fused).0)
}

pub fn value_estimate(layout: &ParamLayout, params: &[f64], critic_fused: &[f64]) -> f64 {
    let v = layout.slice(params, CRITIC_V);
    layout.slice(params, CRITIC_C)[0] + v.iter().zip(critic_fused).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct ActorCache {
    pub own_x: Vec<f64>,
    pub peer_x: Vec<Vec<f64>>,
    pub own_e: Vec<f64>,
    pub peer_e: Vec<Vec<f64>>,
    pub fused: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    /// Merged and own inputs.
    pub xs: [Vec<f64>; 2],
    pub es: [Vec<f64>; 2],
    pub fused: Vec<f64>,
    pub value: f64,
}

pub(crate) fn actor_forward(layout: &ParamLayout, params: &[f64], own: &[f64], peers: &[Vec<f64>]) -> ActorCache {
    let w = layout.slice(params, EXTRACTOR_W);
    let b = layout.slice(params, EXTRACTOR_B);
    let own_e = extract_features(own, w, b);
    let peer_e: Vec<Vec<f64>> = peers.iter().map(|p| extract_features(p, w, b)).collect();
    let fused = aggregate_relations(&own_e, &peer_e, layout.channels_out);
    let (logits, hidden) = decoder_logits(layout, params, &fused);
    ActorCache {
        own_x: own.to_vec(),
        peer_x: peers.to_vec(),
        own_e,
        peer_e,
        fused,
        hidden,
        logits,
    }
}

pub(crate) fn critic_forward(layout: &ParamLayout, params: &[f64], merged: &[f64], own: &[f64]) -> CriticCache {
    let w = layout.slice(params, CRITIC_W);
    let b = layout.slice(params, CRITIC_B);
    let em = extract_features(merged, w, b);
    let eo = extract_features(own, w, b);
    let fused = aggregate_relations(&em, std::slice::from_ref(&eo), layout.channels_out);
    let value = value_estimate(layout, params, &fused);
    CriticCache {
        xs: [merged.to_vec(), own.to_vec()],
        es: [em, eo],
        fused,
        value,
    }
}

/// Accumulates extractor gradients for one application given dL/de.
fn extractor_backward(x: &[f64], e: &[f64], de: &[f64], c_out: usize, gw: &mut [f64], gb: &mut [f64]) {
    let k = x.len() / CHANNELS;
    for cell in 0..k {
        let xin = &x[cell * CHANNELS..(cell + 1) * CHANNELS];
        for c in 0..c_out {
            let i = cell * c_out + c;
            let da = de[i] * (1.0 - e[i] * e[i]);
            if da == 0.0 {
                continue;
            }
            gb[c] += da;
            for (g, xv) in gw[c * CHANNELS..(c + 1) * CHANNELS].iter_mut().zip(xin) {
                *g += da * xv;
            }
        }
    }
}

fn split_grad<'a>(layout: &ParamLayout, grad: &'a mut [f64], a: usize, b: usize) -> (&'a mut [f64], &'a mut [f64]) {
    let ra = layout.slices[a].range();
    let rb = layout.slices[b].range();
    assert!(ra.end <= rb.start);
    let (lo, hi) = grad.split_at_mut(rb.start);
    (&mut lo[ra], &mut hi[..rb.len()])
}

pub(crate) fn actor_backward(
    layout: &ParamLayout,
    params: &[f64],
    cache: &ActorCache,
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let (k, h_dim, c) = (layout.cells, layout.hidden, layout.channels_out);
    let c2 = 2 * c;
    let d = cache.fused.len();
    let w1 = layout.slice(params, DECODER_W1);
    let w2 = layout.slice(params, DECODER_W2);
    let skip = layout.slice(params, DECODER_SKIP);

    let mut dh = vec![0.0; h_dim];
    let mut dfused = vec![0.0; d];
    {
        let gw2 = layout.slices[DECODER_W2].range();
        for cell in 0..k {
            let dl = dlogits[cell];
            if dl == 0.0 {
                continue;
            }
            grad[layout.slices[DECODER_B2].offset + cell] += dl;
            for j in 0..h_dim {
                grad[gw2.start + cell * h_dim + j] += dl * cache.hidden[j];
                dh[j] += dl * w2[cell * h_dim + j];
            }
            let so = layout.slices[DECODER_SKIP].offset;
            for q in 0..c2 {
                grad[so + q] += dl * cache.fused[cell * c2 + q];
                dfused[cell * c2 + q] += dl * skip[q];
            }
        }
    }
    let gw1 = layout.slices[DECODER_W1].offset;
    let gb1 = layout.slices[DECODER_B1].offset;
    for j in 0..h_dim {
        let dz = dh[j] * (1.0 - cache.hidden[j] * cache.hidden[j]);
        if dz == 0.0 {
            continue;
        }
        grad[gb1 + j] += dz;
        let row = &w1[j * d..(j + 1) * d];
        let grow = &mut grad[gw1 + j * d..gw1 + (j + 1) * d];
        for i in 0..d {
            grow[i] += dz * cache.fused[i];
            dfused[i] += dz * row[i];
        }
    }
    let mut de_own = vec![0.0; k * c];
    let mut de_peer = vec![0.0; k * c];
    let inv = if cache.peer_e.is_empty() {
        0.0
    } else {
        1.0 / cache.peer_e.len() as f64
    };
    for cell in 0..k {
        for q in 0..c {
            de_own[cell * c + q] = dfused[cell * c2 + q];
            de_peer[cell * c + q] = dfused[cell * c2 + c + q] * inv;
        }
    }
    let (gw, gb) = split_grad(layout, grad, EXTRACTOR_W, EXTRACTOR_B);
    extractor_backward(&cache.own_x, &cache.own_e, &de_own, c, gw, gb);
    for (x, e) in cache.peer_x.iter().zip(&cache.peer_e) {
        extractor_backward(x, e, &de_peer, c, gw, gb);
    }
}

pub(crate) fn critic_backward(
    layout: &ParamLayout,
    params: &[f64],
    cache: &CriticCache,
    dvalue: f64,
    grad: &mut [f64],
) {
    if dvalue == 0.0 {
        return;
    }
    let (k, c) = (layout.cells, layout.channels_out);
    let c2 = 2 * c;
    let v = layout.slice(params, CRITIC_V);
    grad[layout.slices[CRITIC_C].offset] += dvalue;
    let vo = layout.slices[CRITIC_V].offset;
    for (i, f) in cache.fused.iter().enumerate() {
        grad[vo + i] += dvalue * f;
    }
    let mut de = [vec![0.0; k * c], vec![0.0; k * c]];
    for cell in 0..k {
        for q in 0..c {
            de[0][cell * c + q] = dvalue * v[cell * c2 + q];
            de[1][cell * c + q] = dvalue * v[cell * c2 + c + q];
        }
    }
    let (gw, gb) = split_grad(layout, grad, CRITIC_W, CRITIC_B);
    for s in 0..2 {
        extractor_backward(&cache.xs[s], &cache.es[s], &de[s], c, gw, gb);
    }
}
