//! Recurrent cells as pure step functions over parameter bundles.
//!
//! Kernels are written once against [`Backend`] and operate on `H x B`
//! state matrices (one column per sequence) with `H x 1` bias columns. The
//! tensor-level entry points below take plain vectors.

mod params;

pub use params::{BruParams, GruParams, LstmParams, SingleGateParams, Slot, SmootherParams};

use crate::backend::{Backend, Eager};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// One BRU step's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BruGates<V> {
    pub h: V,
    pub z: V,
    pub r: V,
    pub n: V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    /// `z = g`, `r = 1 - g`.
    Mgu,
    /// Reset pinned open.
    LiGru,
}

/// `z_prev = None` stands for the all-zero gate of the first step.
pub fn bru_cell<B: Backend>(
    b: &mut B,
    p: &BruParams<B::Value>,
    x: &B::Value,
    h_prev: &B::Value,
    z_prev: Option<&B::Value>,
) -> Result<BruGates<B::Value>> {
    let zp = b.gate_pre(&p.W_iz, x, &p.W_hz, h_prev, &p.b_z)?;
    let z = b.sigmoid(&zp)?;
    let rp = b.gate_pre(&p.W_ir, x, &p.W_hr, h_prev, &p.b_r)?;
    let r = b.sigmoid(&rp)?;
    let mut np = b.affine(&p.W_ih, x, &p.b_ih)?;
    if let Some(zprev) = z_prev {
        let rec = b.affine(&p.W_hh, h_prev, &p.b_hh)?;
        let rec = b.mul(zprev, &rec)?;
        np = b.add(&np, &rec)?;
    }
    let n = b.sigmoid(&np)?;
    let h = b.blend(&r, h_prev, &n)?;
    Ok(BruGates { h, z, r, n })
}

/// Prior state `sigmoid(p_logits)` repeated over `cols`, or 0.5 when frozen.
pub fn bru_initial_state<B: Backend>(
    b: &mut B,
    p_logits: Option<&B::Value>,
    hidden: usize,
    cols: usize,
) -> Result<B::Value> {
    match p_logits {
        Some(logits) => {
            let p = b.sigmoid(logits)?;
            b.broadcast_cols(&p, cols)
        }
        None => Ok(b.constant(Tensor::full([hidden, cols], 0.5)?)),
    }
}

pub fn gru_cell<B: Backend>(b: &mut B, p: &GruParams<B::Value>, x: &B::Value, h_prev: &B::Value) -> Result<B::Value> {
    let zp = b.gate_pre(&p.W_iz, x, &p.W_hz, h_prev, &p.b_z)?;
    let z = b.sigmoid(&zp)?;
    let rp = b.gate_pre(&p.W_ir, x, &p.W_hr, h_prev, &p.b_r)?;
    let r = b.sigmoid(&rp)?;
    let rec = b.affine(&p.W_hn, h_prev, &p.b_hn)?;
    let rec = b.mul(&r, &rec)?;
    let np = b.affine(&p.W_in, x, &p.b_in)?;
    let np = b.add(&np, &rec)?;
    let n = b.tanh(&np)?;
    b.blend(&z, h_prev, &n)
}

/// Returns `(h, c)`.
pub fn lstm_cell<B: Backend>(
    b: &mut B,
    p: &LstmParams<B::Value>,
    x: &B::Value,
    h_prev: &B::Value,
    c_prev: &B::Value,
) -> Result<(B::Value, B::Value)> {
    let ip = b.gate_pre(&p.W_ii, x, &p.W_hi, h_prev, &p.b_i)?;
    let i = b.sigmoid(&ip)?;
    let fp = b.gate_pre(&p.W_if, x, &p.W_hf, h_prev, &p.b_f)?;
    let f = b.sigmoid(&fp)?;
    let gp = b.gate_pre(&p.W_ig, x, &p.W_hg, h_prev, &p.b_g)?;
    let g = b.tanh(&gp)?;
    let op = b.gate_pre(&p.W_io, x, &p.W_ho, h_prev, &p.b_o)?;
    let o = b.sigmoid(&op)?;
    let carry = b.mul(&f, c_prev)?;
    let write = b.mul(&i, &g)?;
    let c = b.add(&carry, &write)?;
    let tc = b.tanh(&c)?;
    let h = b.mul(&o, &tc)?;
    Ok((h, c))
}

pub fn variant_cell<B: Backend>(
    b: &mut B,
    kind: VariantKind,
    p: &SingleGateParams<B::Value>,
    x: &B::Value,
    h_prev: &B::Value,
) -> Result<B::Value> {
    let gp = b.gate_pre(&p.W_iz, x, &p.W_hz, h_prev, &p.b_z)?;
    let g = b.sigmoid(&gp)?;
    let mut rec = b.affine(&p.W_hn, h_prev, &p.b_hn)?;
    if kind == VariantKind::Mgu {
        let reset = b.one_minus(&g)?;
        rec = b.mul(&reset, &rec)?;
    }
    let np = b.affine(&p.W_in, x, &p.b_in)?;
    let np = b.add(&np, &rec)?;
    let n = b.tanh(&np)?;
    b.blend(&g, h_prev, &n)
}

/// Unit-wise smoothing: `hp[T-1] = h[T-1]`,
/// `hp[k] = hp[k+1] * g[k+1] + h[k] * (1 - g[k+1])` with `g = z`, or
/// `g = z * masks[k+1]` when masks are given. `zs[0]` is never read.
pub fn ubru_smooth_with<B: Backend>(
    b: &mut B,
    hs: &[B::Value],
    zs: &[B::Value],
    masks: Option<&[B::Value]>,
) -> Result<Vec<B::Value>> {
    check_lengths(hs.len(), zs.len(), masks.map(<[_]>::len))?;
    let Some(last) = hs.last() else { return Ok(Vec::new()) };
    let mut out = vec![last.clone(); hs.len()];
    for k in (0..hs.len() - 1).rev() {
        let g = gate_at(b, &zs[k + 1], masks, k + 1)?;
        out[k] = b.blend(&g, &out[k + 1], &hs[k])?;
    }
    Ok(out)
}

/// Layer-wise smoothing with gate `s[k+1] = sigmoid(W_is x[k+1] + b_is + W_hs h[k] + b_hs)`
/// and `hp[k] = (W_hhb hp[k+1] + b_hhb) * s[k+1] + h[k] * (1 - s[k+1])`.
pub fn lbru_smooth_with<B: Backend>(
    b: &mut B,
    p: &SmootherParams<B::Value>,
    hs: &[B::Value],
    xs: &[B::Value],
    masks: Option<&[B::Value]>,
) -> Result<Vec<B::Value>> {
    check_lengths(hs.len(), xs.len(), masks.map(<[_]>::len))?;
    let Some(last) = hs.last() else { return Ok(Vec::new()) };
    let mut out = vec![last.clone(); hs.len()];
    for k in (0..hs.len() - 1).rev() {
        let inp = b.affine(&p.W_is, &xs[k + 1], &p.b_is)?;
        let rec = b.affine(&p.W_hs, &hs[k], &p.b_hs)?;
        let sp = b.add(&inp, &rec)?;
        let s = b.sigmoid(&sp)?;
        let s = gate_at(b, &s, masks, k + 1)?;
        let back = b.affine(&p.W_hhb, &out[k + 1], &p.b_hhb)?;
        out[k] = b.blend(&s, &back, &hs[k])?;
    }
    Ok(out)
}

fn check_lengths(h: usize, other: usize, masks: Option<usize>) -> Result<()> {
    if h != other || masks.is_some_and(|m| m != h) {
        return dim_err(format!("sequence lengths differ: {h} states, {other} companions, masks {masks:?}"));
    }
    Ok(())
}

fn gate_at<B: Backend>(b: &mut B, g: &B::Value, masks: Option<&[B::Value]>, k: usize) -> Result<B::Value> {
    match masks {
        Some(m) => b.mul(g, &m[k]),
        None => Ok(g.clone()),
    }
}

/// Accepts a length-`n` vector or an `n x 1` column.
fn column(t: &Tensor, n: usize, what: &str) -> Result<Tensor> {
    if t.len() != n || (t.rank() == 2 && t.cols() != 1) || t.rank() > 2 {
        return dim_err(format!("{what}: expected {n} entries, got shape {:?}", t.shape()));
    }
    t.reshape([n, 1])
}

fn flat(t: Tensor) -> Result<Tensor> {
    let n = t.len();
    t.reshape([n])
}

fn dims(w_input: &Tensor) -> Result<(usize, usize)> {
    if w_input.rank() != 2 {
        return dim_err(format!("input weights must be a matrix, got {:?}", w_input.shape()));
    }
    Ok((w_input.cols(), w_input.rows()))
}

/// One forward BRU step on vectors. Pass `z_prev = 0` at the first step.
pub fn bru_step(params: &BruParams, x: &Tensor, h_prev: &Tensor, z_prev: &Tensor) -> Result<BruGates<Tensor>> {
    let (i, h) = dims(&params.W_iz)?;
    params.validate(i, h)?;
    let p = params.as_columns()?;
    let (x, hp, zp) = (column(x, i, "x")?, column(h_prev, h, "h_prev")?, column(z_prev, h, "z_prev")?);
    let g = bru_cell(&mut Eager, &p, &x, &hp, Some(&zp))?;
    Ok(BruGates {
        h: flat(g.h)?,
        z: flat(g.z)?,
        r: flat(g.r)?,
        n: flat(g.n)?,
    })
}

pub fn gru_step(params: &GruParams, x: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
    let (i, h) = dims(&params.W_iz)?;
    params.validate(i, h)?;
    let p = params.as_columns()?;
    flat(gru_cell(&mut Eager, &p, &column(x, i, "x")?, &column(h_prev, h, "h_prev")?)?)
}

/// Returns `(h, c)`.
pub fn lstm_step(params: &LstmParams, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor)> {
    let (i, h) = dims(&params.W_ii)?;
    params.validate(i, h)?;
    let p = params.as_columns()?;
    let (hn, cn) = lstm_cell(
        &mut Eager,
        &p,
        &column(x, i, "x")?,
        &column(h_prev, h, "h_prev")?,
        &column(c_prev, h, "c_prev")?,
    )?;
    Ok((flat(hn)?, flat(cn)?))
}

pub fn variant_step(kind: VariantKind, params: &SingleGateParams, x: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
    let (i, h) = dims(&params.W_iz)?;
    params.validate(i, h)?;
    let p = params.as_columns()?;
    flat(variant_cell(&mut Eager, kind, &p, &column(x, i, "x")?, &column(h_prev, h, "h_prev")?)?)
}

/// Splits a `T x D` matrix into `D x 1` columns, one per row.
fn rows_as_columns(m: &Tensor, what: &str) -> Result<Vec<Tensor>> {
    if m.rank() != 2 {
        return dim_err(format!("{what} must be T x D, got {:?}", m.shape()));
    }
    (0..m.rows()).map(|t| m.slice(0, t, 1)?.transpose()).collect()
}

fn stack_rows(cols: Vec<Tensor>) -> Result<Tensor> {
    let rows: Vec<Tensor> = cols.iter().map(Tensor::transpose).collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = rows.iter().collect();
    Tensor::concat(&refs, 0)
}

/// Unit-wise smoothing of a `T x H` forward pass; adds no parameters.
pub fn ubru_smooth(h_seq: &Tensor, z_seq: &Tensor) -> Result<Tensor> {
    if h_seq.shape() != z_seq.shape() {
        return dim_err(format!("h {:?} vs z {:?}", h_seq.shape(), z_seq.shape()));
    }
    let hs = rows_as_columns(h_seq, "h_seq")?;
    let zs = rows_as_columns(z_seq, "z_seq")?;
    stack_rows(ubru_smooth_with(&mut Eager, &hs, &zs, None)?)
}

/// Layer-wise smoothing of a `T x H` forward pass driven by `T x I` inputs.
pub fn lbru_smooth(params: &SmootherParams, h_seq: &Tensor, x_seq: &Tensor) -> Result<Tensor> {
    let (i, h) = dims(&params.W_is)?;
    params.validate(i, h)?;
    if h_seq.rank() != 2 || x_seq.rank() != 2 || h_seq.cols() != h || x_seq.cols() != i || h_seq.rows() != x_seq.rows() {
        return dim_err(format!(
            "h_seq {:?} and x_seq {:?} do not fit H={h}, I={i}",
            h_seq.shape(),
            x_seq.shape()
        ));
    }
    let p = params.as_columns()?;
    let hs = rows_as_columns(h_seq, "h_seq")?;
    let xs = rows_as_columns(x_seq, "x_seq")?;
    stack_rows(lbru_smooth_with(&mut Eager, &p, &hs, &xs, None)?)
}
