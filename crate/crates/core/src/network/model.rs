use crate::autodiff::{grad_check, GradReport, Tape};
use crate::backend::{Backend, Eager};
use crate::cells::{
    bru_cell, bru_initial_state, gru_cell, lbru_smooth_with, lstm_cell, ubru_smooth_with, variant_cell, BruParams,
    GruParams, LstmParams, SingleGateParams, Slot, SmootherParams, VariantKind,
};
use crate::error::{dim_err, Error, Result};
use crate::network::config::{CellKind, NetworkConfig};
use crate::tasks::SequenceBatch;
use crate::tensor::{InitScheme, Rng, Tensor};

type MapFn<'a, T, U, E> = &'a mut dyn FnMut(&str, &T) -> std::result::Result<U, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams<T = Tensor> {
    Bru(BruParams<T>),
    Gru(GruParams<T>),
    Lstm(LstmParams<T>),
    SingleGate(SingleGateParams<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionParams<T = Tensor> {
    pub cell: CellParams<T>,
    pub smoother: Option<SmootherParams<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = Tensor> {
    pub forward: DirectionParams<T>,
    /// Present for bidirectional layers; runs on per-sequence reversed input.
    pub backward: Option<DirectionParams<T>>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct Readout<T = Tensor> {
    /// C x D
    pub W_out: T,
    /// C
    pub b_out: T,
}

/// Every trainable tensor of a network, addressable by dotted name such as
/// `layers.0.backward.W_hz` or `readout.b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T = Tensor> {
    pub layers: Vec<LayerParams<T>>,
    pub readout: Readout<T>,
}

impl<T> CellParams<T> {
    fn try_map_dyn<U, E>(&self, prefix: &str, f: MapFn<'_, T, U, E>) -> std::result::Result<CellParams<U>, E> {
        let mut g = |n: &'static str, v: &T| f(&format!("{prefix}{n}"), v);
        Ok(match self {
            CellParams::Bru(p) => CellParams::Bru(p.try_map(&mut g)?),
            CellParams::Gru(p) => CellParams::Gru(p.try_map(&mut g)?),
            CellParams::Lstm(p) => CellParams::Lstm(p.try_map(&mut g)?),
            CellParams::SingleGate(p) => CellParams::SingleGate(p.try_map(&mut g)?),
        })
    }
}

impl<T> DirectionParams<T> {
    fn try_map_dyn<U, E>(&self, prefix: &str, f: MapFn<'_, T, U, E>) -> std::result::Result<DirectionParams<U>, E> {
        let cell = self.cell.try_map_dyn(prefix, f)?;
        let smoother = match &self.smoother {
            Some(s) => Some(s.try_map(|n, v| f(&format!("{prefix}{n}"), v))?),
            None => None,
        };
        Ok(DirectionParams { cell, smoother })
    }
}

impl<T> NetParams<T> {
    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<NetParams<U>, E> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let forward = layer.forward.try_map_dyn(&format!("layers.{l}.forward."), &mut f)?;
            let backward = match &layer.backward {
                Some(d) => Some(d.try_map_dyn(&format!("layers.{l}.backward."), &mut f)?),
                None => None,
            };
            layers.push(LayerParams { forward, backward });
        }
        let readout = Readout {
            W_out: f("readout.W_out", &self.readout.W_out)?,
            b_out: f("readout.b_out", &self.readout.b_out)?,
        };
        Ok(NetParams { layers, readout })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> NetParams<U> {
        match self.try_map(|n, v| Ok::<U, std::convert::Infallible>(f(n, v))) {
            Ok(m) => m,
            Err(never) => match never {},
        }
    }

    /// Visits every tensor in a fixed order.
    pub fn for_each<'s>(&'s self, mut f: impl FnMut(String, &'s T)) {
        for (l, layer) in self.layers.iter().enumerate() {
            let dirs = [("forward", Some(&layer.forward)), ("backward", layer.backward.as_ref())];
            for (tag, dir) in dirs {
                let Some(dir) = dir else { continue };
                let prefix = format!("layers.{l}.{tag}.");
                let mut g = |n: &'static str, v: &'s T| f(format!("{prefix}{n}"), v);
                match &dir.cell {
                    CellParams::Bru(p) => p.for_each(&mut g),
                    CellParams::Gru(p) => p.for_each(&mut g),
                    CellParams::Lstm(p) => p.for_each(&mut g),
                    CellParams::SingleGate(p) => p.for_each(&mut g),
                }
                if let Some(s) = &dir.smoother {
                    s.for_each(&mut g);
                }
            }
        }
        f("readout.W_out".to_string(), &self.readout.W_out);
        f("readout.b_out".to_string(), &self.readout.b_out);
    }

    /// `(name, value)` pairs in visiting order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.for_each(|n, v| out.push((n, v)));
        out
    }
}

impl NetParams<Tensor> {
    pub fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, t| n += t.len());
        n
    }

    /// Applies `f(value, other)` pairwise; both sides must have the same layout.
    pub fn zip_apply(&mut self, other: &NetParams<Tensor>, mut f: impl FnMut(&str, &mut Tensor, &Tensor)) -> Result<()> {
        let others = other.named();
        let mut i = 0;
        let mut mismatch = None;
        let updated = self.try_map(|name, t| {
            let mut t = t.clone();
            match others.get(i) {
                Some((n, o)) if n == name && o.shape() == t.shape() => f(name, &mut t, o),
                _ => mismatch = Some(name.to_string()),
            }
            i += 1;
            Ok::<Tensor, Error>(t)
        })?;
        if let Some(name) = mismatch.or_else(|| (i != others.len()).then(|| "length".to_string())) {
            return dim_err(format!("parameter layouts differ at {name}"));
        }
        *self = updated;
        Ok(())
    }

    pub fn norm_summary(&self) -> String {
        let mut parts = Vec::new();
        self.for_each(|n, t| parts.push(format!("{n}={:.4e}", t.norm())));
        parts.join(", ")
    }

    fn as_columns(&self) -> Result<NetParams<Tensor>> {
        self.try_map(|_, t| if t.rank() == 1 { t.reshape([t.len(), 1]) } else { Ok(t.clone()) })
    }
}

/// Turns a gradient computed in column layout back into the stored shape.
fn conform(name: &str, t: Tensor) -> Result<Tensor> {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if Slot::of(leaf) == Slot::Bias && t.rank() == 2 {
        let n = t.len();
        t.reshape([n])
    } else {
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: NetParams,
}

/// Loss, per-step logits (`T x B x C`) and gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: NetParams,
}

fn init_direction(cfg: &NetworkConfig, rng: &mut Rng, input: usize) -> Result<DirectionParams> {
    let h = cfg.hidden;
    let cell = match cfg.cell {
        CellKind::Bru | CellKind::Ubru | CellKind::Lbru => {
            let mut p = BruParams::random(rng, input, h)?;
            p.p_logits = (!cfg.freeze_prior).then(|| Tensor::zeros([h])).transpose()?;
            CellParams::Bru(p)
        }
        CellKind::Gru => CellParams::Gru(GruParams::random(rng, input, h)?),
        CellKind::Lstm => CellParams::Lstm(LstmParams::random(rng, input, h)?),
        CellKind::Mgu | CellKind::LiGru => CellParams::SingleGate(SingleGateParams::random(rng, input, h)?),
    };
    let smoother = match cfg.cell {
        CellKind::Lbru => Some(SmootherParams::random(rng, input, h)?),
        _ => None,
    };
    Ok(DirectionParams { cell, smoother })
}

/// Column-major view of a right-padded batch.
struct Layout {
    steps: usize,
    batch: usize,
    lengths: Vec<usize>,
}

impl Layout {
    fn of(batch: &SequenceBatch) -> Result<Layout> {
        let (steps, b) = (batch.steps(), batch.batch_size());
        let mut lengths = vec![0; b];
        for (j, len) in lengths.iter_mut().enumerate() {
            *len = (0..steps).take_while(|&t| batch.mask[t * b + j]).count();
            if (*len..steps).any(|t| batch.mask[t * b + j]) {
                return Err(Error::Data(format!("sequence {j} is not right-padded")));
            }
        }
        Ok(Layout {
            steps,
            batch: b,
            lengths,
        })
    }

    fn full(&self) -> bool {
        self.lengths.iter().all(|&l| l == self.steps)
    }

    /// `rows x B` indicator of sequences still running at step `t`.
    fn step_mask(&self, rows: usize, t: usize) -> Result<Tensor> {
        let row: Vec<f64> = self.lengths.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect();
        Tensor::new([rows, self.batch], row.repeat(rows))
    }
}

fn reverse_steps<B: Backend>(b: &mut B, xs: &[B::Value], layout: &Layout) -> Result<Vec<B::Value>> {
    if layout.full() {
        return Ok(xs.iter().rev().cloned().collect());
    }
    let rows = b.value(&xs[0]).rows();
    let mut distinct: Vec<usize> = layout.lengths.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let zeros = b.constant(Tensor::zeros([rows, layout.batch])?);
    let mut out = Vec::with_capacity(xs.len());
    for t in 0..layout.steps {
        let mut acc: Option<B::Value> = None;
        for &len in distinct.iter().filter(|&&l| t < l) {
            let sel: Vec<f64> = layout.lengths.iter().map(|&l| if l == len { 1.0 } else { 0.0 }).collect();
            let sel = b.constant(Tensor::new([rows, layout.batch], sel.repeat(rows))?);
            let part = b.mul(&xs[len - 1 - t], &sel)?;
            acc = Some(match acc {
                Some(a) => b.add(&a, &part)?,
                None => part,
            });
        }
        out.push(acc.unwrap_or_else(|| zeros.clone()));
    }
    Ok(out)
}

fn run_direction<B: Backend>(
    b: &mut B,
    cfg: &NetworkConfig,
    dir: &DirectionParams<B::Value>,
    xs: &[B::Value],
    layout: &Layout,
) -> Result<Vec<B::Value>> {
    let (h, cols) = (cfg.hidden, layout.batch);
    let mut hs = Vec::with_capacity(xs.len());
    let mut zs = Vec::new();
    match &dir.cell {
        CellParams::Bru(p) => {
            let mut state = bru_initial_state(b, p.p_logits.as_ref(), h, cols)?;
            let mut z_prev: Option<B::Value> = None;
            for x in xs {
                let g = bru_cell(b, p, x, &state, z_prev.as_ref())?;
                hs.push(g.h.clone());
                zs.push(g.z.clone());
                state = g.h;
                z_prev = Some(g.z);
            }
        }
        CellParams::Gru(p) => {
            let mut state = b.constant(Tensor::zeros([h, cols])?);
            for x in xs {
                state = gru_cell(b, p, x, &state)?;
                hs.push(state.clone());
            }
        }
        CellParams::Lstm(p) => {
            let mut state = b.constant(Tensor::zeros([h, cols])?);
            let mut cell = state.clone();
            for x in xs {
                (state, cell) = lstm_cell(b, p, x, &state, &cell)?;
                hs.push(state.clone());
            }
        }
        CellParams::SingleGate(p) => {
            let kind = if cfg.cell == CellKind::Mgu { VariantKind::Mgu } else { VariantKind::LiGru };
            let mut state = b.constant(Tensor::zeros([h, cols])?);
            for x in xs {
                state = variant_cell(b, kind, p, x, &state)?;
                hs.push(state.clone());
            }
        }
    }
    let smoothing = dir.smoother.is_some() || cfg.cell == CellKind::Ubru;
    let masks = if layout.full() || !smoothing {
        None
    } else {
        Some((0..layout.steps).map(|t| Ok(b.constant(layout.step_mask(h, t)?))).collect::<Result<Vec<_>>>()?)
    };
    match (&dir.smoother, cfg.cell) {
        (Some(s), _) => lbru_smooth_with(b, s, &hs, xs, masks.as_deref()),
        (None, CellKind::Ubru) => ubru_smooth_with(b, &hs, &zs, masks.as_deref()),
        _ => Ok(hs),
    }
}

fn inputs_per_step(batch: &SequenceBatch) -> Result<Vec<Tensor>> {
    let (t_len, b_len, i_len) = (batch.steps(), batch.batch_size(), batch.input_dim());
    let d = batch.inputs.data();
    (0..t_len)
        .map(|t| {
            let mut col = vec![0.0; i_len * b_len];
            for j in 0..b_len {
                for i in 0..i_len {
                    col[i * b_len + j] = d[(t * b_len + j) * i_len + i];
                }
            }
            Tensor::new([i_len, b_len], col)
        })
        .collect()
}

fn dropout_mask(rate: f64, rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor> {
    let keep = 1.0 - rate;
    let data = (0..rows * cols).map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 }).collect();
    Tensor::new([rows, cols], data)
}

/// Per-step `C x B` logits. `params` must be in column layout.
fn forward_with<B: Backend>(
    b: &mut B,
    cfg: &NetworkConfig,
    params: &NetParams<B::Value>,
    batch: &SequenceBatch,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Vec<B::Value>> {
    let layout = Layout::of(batch)?;
    let mut xs: Vec<B::Value> = inputs_per_step(batch)?.into_iter().map(|t| b.constant(t)).collect();
    for (l, layer) in params.layers.iter().enumerate() {
        if l > 0 && mode == Mode::Train && cfg.dropout > 0.0 {
            let rows = cfg.layer_input(l);
            xs = xs
                .iter()
                .map(|x| {
                    let m = b.constant(dropout_mask(cfg.dropout, rows, layout.batch, rng)?);
                    b.mul(x, &m)
                })
                .collect::<Result<_>>()?;
        }
        let fwd = run_direction(b, cfg, &layer.forward, &xs, &layout)?;
        xs = match &layer.backward {
            None => fwd,
            Some(dir) => {
                let rev_in = reverse_steps(b, &xs, &layout)?;
                let rev_out = run_direction(b, cfg, dir, &rev_in, &layout)?;
                let bwd = reverse_steps(b, &rev_out, &layout)?;
                fwd.iter()
                    .zip(&bwd)
                    .map(|(f, r)| b.concat(&[f.clone(), r.clone()], 0))
                    .collect::<Result<_>>()?
            }
        };
    }
    xs.iter()
        .map(|o| b.affine(&params.readout.W_out, o, &params.readout.b_out))
        .collect()
}

/// Stacks per-step `C x B` logits into `T x B x C`.
fn stack_logits(steps: &[&Tensor]) -> Result<Tensor> {
    let (c, bsz) = (steps[0].rows(), steps[0].cols());
    let mut data = Vec::with_capacity(steps.len() * bsz * c);
    for s in steps {
        for j in 0..bsz {
            for k in 0..c {
                data.push(s.at(k, j));
            }
        }
    }
    Tensor::new([steps.len(), bsz, c], data)
}

impl Network {
    pub fn init(config: NetworkConfig, rng: &mut Rng) -> Result<Network> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = config.layer_input(l);
            let forward = init_direction(&config, rng, input)?;
            let backward = config
                .bidirectional
                .then(|| init_direction(&config, rng, input))
                .transpose()?;
            layers.push(LayerParams { forward, backward });
        }
        let d = config.output_dim();
        let readout = Readout {
            W_out: Tensor::rand_init(rng, [config.num_classes, d], InitScheme::ScaledUniform { fan_in: d })?,
            b_out: Tensor::zeros([config.num_classes])?,
        };
        Ok(Network {
            config,
            params: NetParams { layers, readout },
        })
    }

    /// Rebuilds a network from named tensors, checking every shape.
    pub fn from_params(config: NetworkConfig, params: NetParams) -> Result<Network> {
        let template = Network::init(config.clone(), &mut Rng::new(0))?;
        let want = template.params.named();
        let got = params.named();
        if want.len() != got.len() {
            return dim_err(format!("expected {} parameter tensors, got {}", want.len(), got.len()));
        }
        for ((wn, wt), (gn, gt)) in want.iter().zip(&got) {
            if wn != gn || wt.shape() != gt.shape() {
                return dim_err(format!("{gn} {:?} does not match {wn} {:?}", gt.shape(), wt.shape()));
            }
        }
        Ok(Network { config, params })
    }

    fn check_batch(&self, batch: &SequenceBatch) -> Result<()> {
        if batch.input_dim() != self.config.input_dim {
            return dim_err(format!(
                "batch has {} input features, network expects {}",
                batch.input_dim(),
                self.config.input_dim
            ));
        }
        Ok(())
    }

    /// Per-step logits, `T x B x C`. `rng` feeds dropout in train mode.
    pub fn forward(&self, batch: &SequenceBatch, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        self.check_batch(batch)?;
        let cols = self.params.as_columns()?;
        let steps = forward_with(&mut Eager, &self.config, &cols, batch, mode, rng)?;
        stack_logits(&steps.iter().collect::<Vec<_>>())
    }

    /// Masked mean cross-entropy of the batch under the current parameters.
    pub fn loss(&self, batch: &SequenceBatch, mode: Mode, rng: &mut Rng) -> Result<f64> {
        let logits = self.forward(batch, mode, rng)?;
        loss(&logits, &batch.targets, &batch.mask)
    }

    pub fn loss_and_grads(&self, batch: &SequenceBatch, mode: Mode, rng: &mut Rng) -> Result<BatchGradients> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let cols = self.params.as_columns()?;
        let bound = cols.map(|_, t| tape.leaf(t.clone()));
        let steps = forward_with(&mut tape, &self.config, &bound, batch, mode, rng)?;
        let all = tape.concat(&steps, 1)?;
        let targets = masked_targets(&batch.targets, &batch.mask)?;
        let loss_var = tape.softmax_cross_entropy(all, targets)?;
        let grads = tape.backward(loss_var)?;
        let grads = bound.try_map(|name, &v| conform(name, grads.get_or_zeros(&tape, v)))?;
        let logits = stack_logits(&steps.iter().map(|&v| tape.value(v)).collect::<Vec<_>>())?;
        Ok(BatchGradients {
            loss: tape.value(loss_var).item()?,
            logits,
            grads,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Taped gradients against central differences over every parameter.
    /// Each loss evaluation draws dropout from a fresh `Rng::new(seed)`.
    pub fn grad_check(&self, batch: &SequenceBatch, mode: Mode, seed: u64, eps: f64) -> Result<GradReport> {
        let analytic = self.loss_and_grads(batch, mode, &mut Rng::new(seed))?.grads;
        let named: Vec<(String, Tensor)> = self.params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let grads: Vec<Tensor> = analytic.named().into_iter().map(|(_, t)| t.clone()).collect();
        grad_check(&named, &grads, eps, |values| {
            let mut i = 0;
            let params = self.params.map(|_, _| {
                i += 1;
                values[i - 1].clone()
            });
            let net = Network {
                config: self.config.clone(),
                params,
            };
            net.loss(batch, mode, &mut Rng::new(seed))
        })
    }
}

/// Flattened `T*B` targets with masked positions dropped to `None`.
fn masked_targets(targets: &[Option<usize>], mask: &[bool]) -> Result<Vec<Option<usize>>> {
    if targets.len() != mask.len() {
        return dim_err(format!("{} targets for {} mask entries", targets.len(), mask.len()));
    }
    Ok(targets
        .iter()
        .zip(mask)
        .map(|(t, &m)| if m { *t } else { None })
        .collect())
}

/// Masked mean cross-entropy of `T x B x C` logits against t-major targets.
pub fn loss(logits: &Tensor, targets: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    if logits.rank() != 3 {
        return dim_err(format!("logits must be T x B x C, got {:?}", logits.shape()));
    }
    let c = logits.shape()[2];
    let n = logits.len() / c;
    let targets = masked_targets(targets, mask)?;
    if targets.len() != n {
        return dim_err(format!("{} targets for {n} logit columns", targets.len()));
    }
    let cols = Tensor::new([n, c], logits.data().to_vec())?.transpose()?;
    crate::autodiff::cross_entropy(&cols, &targets)
}

/// Per-position argmax of `T x B x C` logits.
pub fn predictions(logits: &Tensor) -> Result<Vec<usize>> {
    if logits.rank() != 3 {
        return dim_err(format!("logits must be T x B x C, got {:?}", logits.shape()));
    }
    let c = logits.shape()[2];
    Ok(logits
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect())
}
