use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::{ClassifierHead, EncoderWeights, LayerNormWeights, LayerWeights, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{acc_at_b, acc_rows, affine, dot, log_sum_exp, matmul_bt, softmax_in_place, Real, Tensor};
use crate::tokenize::TokenSequence;

/// MLM label at positions that do not contribute to the loss.
pub const IGNORE_INDEX: i64 = -100;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Token ids and attention masks, one row per sequence. Rows may differ in
/// length; a row's attention mask marks which positions may be attended to.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<Vec<u32>>,
    pub attention: Vec<Vec<u8>>,
}

impl Batch {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a TokenSequence>) -> Self {
        let mut b = Batch::default();
        for s in seqs {
            b.ids.push(s.ids.clone());
            b.attention.push(s.attention_mask.clone());
        }
        b
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Drops trailing columns that are padding in every row. Outputs at
    /// unpadded positions are unchanged because padded keys never contribute.
    pub fn trim_padding(&mut self) {
        let keep = self
            .attention
            .iter()
            .map(|m| m.iter().rposition(|&x| x == 1).map_or(0, |p| p + 1))
            .max()
            .unwrap_or(0);
        for (ids, m) in self.ids.iter_mut().zip(self.attention.iter_mut()) {
            ids.truncate(keep);
            m.truncate(keep);
        }
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        if self.ids.len() != self.attention.len() {
            return Err(Error::InvalidArgument("ids and attention masks differ in row count".into()));
        }
        for (r, (ids, m)) in self.ids.iter().zip(&self.attention).enumerate() {
            if ids.len() != m.len() {
                return Err(Error::InvalidArgument(format!("row {r}: ids and mask lengths differ")));
            }
            if ids.len() > config.max_positions {
                return Err(Error::InvalidArgument(format!(
                    "row {r}: length {} exceeds max_positions {}",
                    ids.len(),
                    config.max_positions
                )));
            }
            if !m.contains(&1) {
                return Err(Error::InvalidArgument(format!("row {r}: no attended positions")));
            }
            if let Some(&id) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: config.vocab_size,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub loss: T,
    /// MLM: one vocabulary-sized row per masked position, rows in batch
    /// order then position order. Classification: one row per example.
    pub logits: Vec<Vec<T>>,
}

/// Gradients of the loss, shape-congruent with the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub encoder: EncoderWeights<T>,
    pub head: Option<ClassifierHead<T>>,
}

impl<T: Real> Gradients<T> {
    fn zeros(config: &ModelConfig, head: Option<&ClassifierHead<T>>) -> Self {
        Gradients {
            encoder: EncoderWeights::zeros(config),
            head: head.map(|h| ClassifierHead::zeros(h.weight.shape[0], h.n_labels())),
        }
    }

    fn add_assign(&mut self, other: &Gradients<T>) {
        for ((_, dst, _), (_, src, _)) in self.encoder.named_mut().into_iter().zip(other.encoder.named()) {
            for (d, &s) in dst.data.iter_mut().zip(&src.data) {
                *d += s;
            }
        }
        if let (Some(dst), Some(src)) = (self.head.as_mut(), other.head.as_ref()) {
            for ((_, d, _), (_, s, _)) in dst.named_mut().into_iter().zip(src.named()) {
                for (a, &b) in d.data.iter_mut().zip(&s.data) {
                    *a += b;
                }
            }
        }
    }

    /// All gradient tensors in parameter order (encoder, then head).
    pub fn named(&self) -> Vec<(String, &Tensor<T>, bool)> {
        let mut out = self.encoder.named();
        if let Some(h) = &self.head {
            out.extend(h.named());
        }
        out
    }
}

/// Options for a gradient pass.
#[derive(Clone, Copy, Debug)]
pub struct PassOptions<T> {
    /// The pass differentiates `loss_scale · loss`.
    pub loss_scale: T,
    /// Enables dropout (at the config's rate) with masks drawn from this seed.
    pub dropout_seed: Option<u64>,
}

impl<T: Real> Default for PassOptions<T> {
    fn default() -> Self {
        PassOptions {
            loss_scale: T::one(),
            dropout_seed: None,
        }
    }
}

#[derive(Clone, Copy)]
enum RowTarget<'a> {
    Mlm(&'a [i64]),
    Class(usize),
    Predict,
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    x_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[head][query][key]`, zero at masked keys
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_drop: Option<Vec<T>>,
    ln1: LnCache<T>,
    y: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    ffn_drop: Option<Vec<T>>,
    ln2: LnCache<T>,
}

struct SeqCache<T> {
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    final_ln: LnCache<T>,
    hidden: Vec<T>,
}

struct RowResult<T> {
    loss_sum: T,
    logits: Vec<Vec<T>>,
    grads: Option<Gradients<T>>,
}

fn dropout_mask<T: Real>(rng: &mut StreamRng, n: usize, rate: f64) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

fn apply_mask<T: Real>(xs: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (x, &k) in xs.iter_mut().zip(m) {
            *x *= k;
        }
    }
}

fn layer_norm<T: Real>(x: &[T], w: &LayerNormWeights<T>, d: usize, eps: T) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let dn = T::of(d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mut mean = T::zero();
        for &v in xr {
            mean += v;
        }
        mean /= dn;
        let mut var = T::zero();
        for &v in xr {
            var += (v - mean) * (v - mean);
        }
        var /= dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * w.gain.data[j] + w.bias.data[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &LnCache<T>,
    w: &LayerNormWeights<T>,
    gw: &mut LayerNormWeights<T>,
    d: usize,
) -> Vec<T> {
    let rows = dy.len() / d;
    let dn = T::of(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..d {
            gw.gain.data[j] += dyr[j] * xh[j];
            gw.bias.data[j] += dyr[j];
            dxhat[j] = dyr[j] * w.gain.data[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d /= dn;
        mean_dx /= dn;
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

fn forward_seq<T: Real>(
    w: &EncoderWeights<T>,
    ids: &[u32],
    att: &[u8],
    mut dropout: Option<(StreamRng, f64)>,
) -> SeqCache<T> {
    let cfg = &w.config;
    let (l, d, nh, dh, f) = (ids.len(), cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
    let eps = T::of(cfg.layer_norm_epsilon);
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut draw = |n: usize| dropout.as_mut().map(|(r, p)| dropout_mask::<T>(r, n, *p));

    let mut x = vec![T::zero(); l * d];
    for (i, &id) in ids.iter().enumerate() {
        let te = w.tok_emb.row(id as usize);
        let pe = w.pos_emb.row(i);
        for j in 0..d {
            x[i * d + j] = te[j] + pe[j];
        }
    }
    let emb_drop = draw(l * d);
    apply_mask(&mut x, &emb_drop);

    let valid: Vec<usize> = (0..l).filter(|&j| att[j] == 1).collect();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lw in &w.layers {
        let x_in = x;
        let q = affine(&x_in, &lw.wq.data, &lw.bq.data, l, d, d);
        let k = affine(&x_in, &lw.wk.data, &lw.bk.data, l, d, d);
        let v = affine(&x_in, &lw.wv.data, &lw.bv.data, l, d, d);
        let mut probs = vec![T::zero(); nh * l * l];
        let mut ctx = vec![T::zero(); l * d];
        let mut scores = vec![T::zero(); valid.len()];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..l {
                let qi = &q[i * d + off..i * d + off + dh];
                for (s, &j) in scores.iter_mut().zip(&valid) {
                    *s = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
                }
                softmax_in_place(&mut scores);
                let prow = &mut probs[(h * l + i) * l..(h * l + i + 1) * l];
                let ci = &mut ctx[i * d + off..i * d + off + dh];
                for (&p, &j) in scores.iter().zip(&valid) {
                    prow[j] = p;
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (c, &vv) in ci.iter_mut().zip(vj) {
                        *c += p * vv;
                    }
                }
            }
        }
        let mut a = affine(&ctx, &lw.wo.data, &lw.bo.data, l, d, d);
        let attn_drop = draw(l * d);
        apply_mask(&mut a, &attn_drop);
        let r1: Vec<T> = x_in.iter().zip(&a).map(|(&p, &q)| p + q).collect();
        let (y, ln1) = layer_norm(&r1, &lw.ln1, d, eps);

        let u = affine(&y, &lw.w1.data, &lw.b1.data, l, d, f);
        let g: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
        let mut fo = affine(&g, &lw.w2.data, &lw.b2.data, l, f, d);
        let ffn_drop = draw(l * d);
        apply_mask(&mut fo, &ffn_drop);
        let r2: Vec<T> = y.iter().zip(&fo).map(|(&p, &q)| p + q).collect();
        let (out, ln2) = layer_norm(&r2, &lw.ln2, d, eps);
        x = out;
        layers.push(LayerCache {
            x_in,
            q,
            k,
            v,
            probs,
            ctx,
            attn_drop,
            ln1,
            y,
            u,
            g,
            ffn_drop,
            ln2,
        });
    }
    let (hidden, final_ln) = layer_norm(&x, &w.final_ln, d, eps);
    SeqCache {
        emb_drop,
        layers,
        final_ln,
        hidden,
    }
}

fn backward_seq<T: Real>(
    w: &EncoderWeights<T>,
    ids: &[u32],
    att: &[u8],
    cache: &SeqCache<T>,
    dhidden: Vec<T>,
    g: &mut EncoderWeights<T>,
) {
    let cfg = &w.config;
    let (l, d, nh, dh, f) = (ids.len(), cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
    let scale = T::one() / T::of(dh as f64).sqrt();
    let valid: Vec<usize> = (0..l).filter(|&j| att[j] == 1).collect();

    let mut dx = layer_norm_backward(&dhidden, &cache.final_ln, &w.final_ln, &mut g.final_ln, d);
    for (li, lw) in w.layers.iter().enumerate().rev() {
        let c = &cache.layers[li];
        let gl: &mut LayerWeights<T> = &mut g.layers[li];

        let dr2 = layer_norm_backward(&dx, &c.ln2, &lw.ln2, &mut gl.ln2, d);
        let mut dy = dr2.clone();
        let mut dfo = dr2;
        apply_mask(&mut dfo, &c.ffn_drop);
        acc_at_b(&mut gl.w2.data, &c.g, &dfo, l, f, d);
        acc_rows(&mut gl.b2.data, &dfo, d);
        let mut du = matmul_bt(&dfo, &lw.w2.data, l, f, d);
        for (dv, &z) in du.iter_mut().zip(&c.u) {
            *dv *= gelu_grad(z);
        }
        acc_at_b(&mut gl.w1.data, &c.y, &du, l, d, f);
        acc_rows(&mut gl.b1.data, &du, f);
        let dy_ffn = matmul_bt(&du, &lw.w1.data, l, d, f);
        for (a, &b) in dy.iter_mut().zip(&dy_ffn) {
            *a += b;
        }

        let dr1 = layer_norm_backward(&dy, &c.ln1, &lw.ln1, &mut gl.ln1, d);
        let mut dx_in = dr1.clone();
        let mut da = dr1;
        apply_mask(&mut da, &c.attn_drop);
        acc_at_b(&mut gl.wo.data, &c.ctx, &da, l, d, d);
        acc_rows(&mut gl.bo.data, &da, d);
        let dctx = matmul_bt(&da, &lw.wo.data, l, d, d);

        let mut dq = vec![T::zero(); l * d];
        let mut dk = vec![T::zero(); l * d];
        let mut dv = vec![T::zero(); l * d];
        let mut dp = vec![T::zero(); valid.len()];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..l {
                let prow = &c.probs[(h * l + i) * l..(h * l + i + 1) * l];
                let dci = &dctx[i * d + off..i * d + off + dh];
                let mut weighted = T::zero();
                for (dpj, &j) in dp.iter_mut().zip(&valid) {
                    *dpj = dot(dci, &c.v[j * d + off..j * d + off + dh]);
                    weighted += prow[j] * *dpj;
                }
                for (&dpj, &j) in dp.iter().zip(&valid) {
                    let p = prow[j];
                    let ds = p * (dpj - weighted) * scale;
                    for t in 0..dh {
                        dq[i * d + off + t] += ds * c.k[j * d + off + t];
                        dk[j * d + off + t] += ds * c.q[i * d + off + t];
                        dv[j * d + off + t] += p * dci[t];
                    }
                }
            }
        }
        for (dproj, wt, gw, gb) in [
            (&dq, &lw.wq, &mut gl.wq, &mut gl.bq),
            (&dk, &lw.wk, &mut gl.wk, &mut gl.bk),
            (&dv, &lw.wv, &mut gl.wv, &mut gl.bv),
        ] {
            acc_at_b(&mut gw.data, &c.x_in, dproj, l, d, d);
            acc_rows(&mut gb.data, dproj, d);
            let back = matmul_bt(dproj, &wt.data, l, d, d);
            for (a, &b) in dx_in.iter_mut().zip(&back) {
                *a += b;
            }
        }
        dx = dx_in;
    }
    apply_mask(&mut dx, &cache.emb_drop);
    for (i, &id) in ids.iter().enumerate() {
        let src = &dx[i * d..(i + 1) * d];
        for (a, &b) in g.tok_emb.row_mut(id as usize).iter_mut().zip(src) {
            *a += b;
        }
        for (a, &b) in g.pos_emb.row_mut(i).iter_mut().zip(src) {
            *a += b;
        }
    }
}

/// One sequence: forward, head, loss and (optionally) gradients. `dscale`
/// is the derivative of the batch loss with respect to this row's loss terms.
#[allow(clippy::too_many_arguments)]
fn row_pass<T: Real>(
    w: &EncoderWeights<T>,
    head: Option<&ClassifierHead<T>>,
    ids: &[u32],
    att: &[u8],
    target: RowTarget<'_>,
    dscale: T,
    dropout: Option<(StreamRng, f64)>,
    want_grads: bool,
    keep_logits: bool,
) -> RowResult<T> {
    let cfg = &w.config;
    let d = cfg.d_model;
    let cache = forward_seq(w, ids, att, dropout);
    let mut grads = want_grads.then(|| Gradients::zeros(cfg, head));
    let mut dhidden = vec![T::zero(); cache.hidden.len()];
    let mut loss_sum = T::zero();
    let mut logits_out = Vec::new();

    match target {
        RowTarget::Mlm(labels) => {
            let v = cfg.vocab_size;
            for (p, &label) in labels.iter().enumerate() {
                if label == IGNORE_INDEX {
                    continue;
                }
                let hp = &cache.hidden[p * d..(p + 1) * d];
                let mut logits: Vec<T> = (0..v)
                    .map(|t| dot(hp, w.tok_emb.row(t)) + w.mlm_bias.data[t])
                    .collect();
                let lse = log_sum_exp(&logits);
                loss_sum += lse - logits[label as usize];
                if let Some(g) = grads.as_mut() {
                    let mut dl: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
                    dl[label as usize] -= T::one();
                    let dh = &mut dhidden[p * d..(p + 1) * d];
                    for (t, &dlt) in dl.iter().enumerate() {
                        let dlt = dlt * dscale;
                        g.encoder.mlm_bias.data[t] += dlt;
                        let er = w.tok_emb.row(t);
                        let ge = g.encoder.tok_emb.row_mut(t);
                        for j in 0..d {
                            ge[j] += dlt * hp[j];
                            dh[j] += dlt * er[j];
                        }
                    }
                }
                if keep_logits {
                    logits_out.push(std::mem::take(&mut logits));
                }
            }
        }
        RowTarget::Class(_) | RowTarget::Predict => {
            let head = head.expect("classification needs a head");
            let n = head.n_labels();
            let pooled = &cache.hidden[0..d];
            let logits = affine(pooled, &head.weight.data, &head.bias.data, 1, d, n);
            if let RowTarget::Class(label) = target {
                let lse = log_sum_exp(&logits);
                loss_sum = lse - logits[label];
                if let Some(g) = grads.as_mut() {
                    let mut dl: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
                    dl[label] -= T::one();
                    for x in dl.iter_mut() {
                        *x *= dscale;
                    }
                    let gh = g.head.as_mut().expect("head gradients");
                    acc_at_b(&mut gh.weight.data, pooled, &dl, 1, d, n);
                    acc_rows(&mut gh.bias.data, &dl, n);
                    let dp = matmul_bt(&dl, &head.weight.data, 1, d, n);
                    dhidden[0..d].copy_from_slice(&dp);
                }
            }
            if keep_logits {
                logits_out.push(logits);
            }
        }
    }
    if let Some(g) = grads.as_mut() {
        backward_seq(w, ids, att, &cache, dhidden, &mut g.encoder);
    }
    RowResult {
        loss_sum,
        logits: logits_out,
        grads,
    }
}

struct BatchResult<T> {
    loss: T,
    logits: Vec<Vec<T>>,
    grads: Option<Gradients<T>>,
}

#[allow(clippy::too_many_arguments)]
fn run_batch<T: Real>(
    w: &EncoderWeights<T>,
    head: Option<&ClassifierHead<T>>,
    batch: &Batch,
    targets: Vec<RowTarget<'_>>,
    n_terms: usize,
    opts: PassOptions<T>,
    want_grads: bool,
    keep_logits: bool,
) -> BatchResult<T> {
    let denom = T::of(n_terms.max(1) as f64);
    let dscale = opts.loss_scale / denom;
    // one dropout seed per row, drawn sequentially so results do not depend on scheduling
    let row_seeds: Option<Vec<u64>> = opts.dropout_seed.filter(|_| w.config.dropout_rate > 0.0).map(|s| {
        let mut r = StreamRng::seed_from_u64(s);
        (0..batch.len()).map(|_| r.random()).collect()
    });
    let rate = w.config.dropout_rate;
    let rows: Vec<RowResult<T>> = (0..batch.len())
        .into_par_iter()
        .map(|r| {
            let dropout = row_seeds.as_ref().map(|s| (StreamRng::seed_from_u64(s[r]), rate));
            row_pass(
                w,
                head,
                &batch.ids[r],
                &batch.attention[r],
                targets[r],
                dscale,
                dropout,
                want_grads,
                keep_logits,
            )
        })
        .collect();
    let mut total = T::zero();
    let mut logits = Vec::new();
    let mut grads: Option<Gradients<T>> = None;
    for row in rows {
        total += row.loss_sum;
        logits.extend(row.logits);
        if let Some(g) = row.grads {
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.add_assign(&g),
            }
        }
    }
    BatchResult {
        loss: total / denom,
        logits,
        grads,
    }
}

fn mlm_targets<'a>(w_cfg: &ModelConfig, batch: &Batch, labels: &'a [Vec<i64>]) -> Result<(Vec<RowTarget<'a>>, usize)> {
    if labels.len() != batch.len() {
        return Err(Error::InvalidArgument("MLM label rows do not match batch rows".into()));
    }
    let mut n = 0;
    for (r, (lab, ids)) in labels.iter().zip(&batch.ids).enumerate() {
        if lab.len() != ids.len() {
            return Err(Error::InvalidArgument(format!("row {r}: MLM labels length differs from ids")));
        }
        for (p, &t) in lab.iter().enumerate() {
            if t == IGNORE_INDEX {
                continue;
            }
            if t < 0 || t as usize >= w_cfg.vocab_size {
                return Err(Error::InvalidArgument(format!("row {r} position {p}: MLM label {t} out of range")));
            }
            if batch.attention[r][p] == 0 {
                return Err(Error::InvalidArgument(format!("row {r} position {p}: MLM label on a padded position")));
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoMaskedPositions);
    }
    Ok((labels.iter().map(|l| RowTarget::Mlm(l)).collect(), n))
}

fn class_targets(batch: &Batch, head_labels: usize, labels: &[usize]) -> Result<Vec<RowTarget<'static>>> {
    if labels.len() != batch.len() {
        return Err(Error::InvalidArgument("label count does not match batch rows".into()));
    }
    labels
        .iter()
        .map(|&y| {
            if y >= head_labels {
                Err(Error::LabelOutOfRange {
                    label: y,
                    n_labels: head_labels,
                })
            } else {
                Ok(RowTarget::Class(y))
            }
        })
        .collect()
}

fn check_head<T: Real>(w: &EncoderWeights<T>, head: &ClassifierHead<T>) -> Result<()> {
    if head.weight.shape != [w.config.d_model, head.n_labels()] {
        return Err(Error::ShapeMismatch {
            tensor: "head.weight".into(),
            expected: vec![w.config.d_model, head.n_labels()],
            found: head.weight.shape.clone(),
        });
    }
    Ok(())
}

/// Mean cross-entropy over the masked positions (labels ≠ [`IGNORE_INDEX`]).
/// Evaluation mode: no dropout.
pub fn forward_mlm<T: Real>(w: &EncoderWeights<T>, batch: &Batch, labels: &[Vec<i64>]) -> Result<ForwardOutput<T>> {
    batch.validate(&w.config)?;
    let (targets, n) = mlm_targets(&w.config, batch, labels)?;
    let r = run_batch(w, None, batch, targets, n, PassOptions::default(), false, true);
    Ok(ForwardOutput {
        loss: r.loss,
        logits: r.logits,
    })
}

pub fn backward_mlm<T: Real>(
    w: &EncoderWeights<T>,
    batch: &Batch,
    labels: &[Vec<i64>],
    opts: PassOptions<T>,
) -> Result<(T, Gradients<T>)> {
    batch.validate(&w.config)?;
    let (targets, n) = mlm_targets(&w.config, batch, labels)?;
    let r = run_batch(w, None, batch, targets, n, opts, true, false);
    Ok((r.loss, r.grads.expect("gradients requested")))
}

/// Mean cross-entropy of first-token classification over the batch.
pub fn forward_classify<T: Real>(
    w: &EncoderWeights<T>,
    head: &ClassifierHead<T>,
    batch: &Batch,
    labels: &[usize],
) -> Result<ForwardOutput<T>> {
    batch.validate(&w.config)?;
    check_head(w, head)?;
    let targets = class_targets(batch, head.n_labels(), labels)?;
    let n = batch.len();
    let r = run_batch(w, Some(head), batch, targets, n, PassOptions::default(), false, true);
    Ok(ForwardOutput {
        loss: r.loss,
        logits: r.logits,
    })
}

pub fn backward_classify<T: Real>(
    w: &EncoderWeights<T>,
    head: &ClassifierHead<T>,
    batch: &Batch,
    labels: &[usize],
    opts: PassOptions<T>,
) -> Result<(T, Gradients<T>)> {
    batch.validate(&w.config)?;
    check_head(w, head)?;
    let targets = class_targets(batch, head.n_labels(), labels)?;
    let n = batch.len();
    let r = run_batch(w, Some(head), batch, targets, n, opts, true, false);
    Ok((r.loss, r.grads.expect("gradients requested")))
}

/// Class logits without labels (evaluation mode).
pub fn classify_logits<T: Real>(w: &EncoderWeights<T>, head: &ClassifierHead<T>, batch: &Batch) -> Result<Vec<Vec<T>>> {
    batch.validate(&w.config)?;
    check_head(w, head)?;
    let targets = vec![RowTarget::Predict; batch.len()];
    Ok(run_batch(w, Some(head), batch, targets, batch.len(), PassOptions::default(), false, true).logits)
}

#[cfg(test)]
mod tests {
    use super::super::init_weights;
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_positions: 10,
            dropout_rate: 0.1,
            layer_norm_epsilon: 1e-5,
        }
    }

    fn batch() -> (Batch, Vec<Vec<i64>>) {
        let b = Batch {
            ids: vec![vec![2, 7, 9, 3, 0, 0], vec![2, 11, 3, 0, 0, 0]],
            attention: vec![vec![1, 1, 1, 1, 0, 0], vec![1, 1, 1, 0, 0, 0]],
        };
        let labels = vec![
            vec![IGNORE_INDEX, 7, IGNORE_INDEX, IGNORE_INDEX, IGNORE_INDEX, IGNORE_INDEX],
            vec![IGNORE_INDEX, 11, IGNORE_INDEX, IGNORE_INDEX, IGNORE_INDEX, IGNORE_INDEX],
        ];
        (b, labels)
    }

    #[test]
    fn all_ignored_is_error() {
        let w = init_weights::<f64>(&cfg(), 0).unwrap();
        let (b, _) = batch();
        let labels = vec![vec![IGNORE_INDEX; 6]; 2];
        assert!(matches!(forward_mlm(&w, &b, &labels), Err(Error::NoMaskedPositions)));
    }

    #[test]
    fn mlm_softmax_rows_normalize() {
        let w = init_weights::<f32>(&cfg(), 0).unwrap();
        let (b, l) = batch();
        let out = forward_mlm(&w, &b, &l).unwrap();
        assert_eq!(out.logits.len(), 2);
        for row in &out.logits {
            let lse = log_sum_exp(row);
            let s: f32 = row.iter().map(|&z| (z - lse).exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_rows_normalize_over_unpadded_keys() {
        let w = init_weights::<f64>(&cfg(), 5).unwrap();
        let ids = [2u32, 9, 3, 0];
        let att = [1u8, 1, 1, 0];
        let cache = forward_seq(&w, &ids, &att, None);
        let l = ids.len();
        for lc in &cache.layers {
            for row in lc.probs.chunks(l) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(row[3], 0.0);
            }
        }
    }

    #[test]
    fn padding_ids_do_not_leak() {
        let w = init_weights::<f32>(&cfg(), 2).unwrap();
        let (b, l) = batch();
        let base = forward_mlm(&w, &b, &l).unwrap();
        let mut b2 = b.clone();
        b2.ids[0][4] = 15;
        b2.ids[1][5] = 4;
        let other = forward_mlm(&w, &b2, &l).unwrap();
        assert_eq!(base.loss.to_bits(), other.loss.to_bits());
        assert_eq!(base.logits, other.logits);
        let mut b3 = b.clone();
        b3.trim_padding();
        assert_eq!(b3.ids[0].len(), 4);
        let trimmed = forward_mlm(&w, &b3, &l.iter().map(|r| r[..4].to_vec()).collect::<Vec<_>>()).unwrap();
        assert_eq!(base.loss.to_bits(), trimmed.loss.to_bits());
    }

    #[test]
    fn zero_head_gives_uniform() {
        let w = init_weights::<f64>(&cfg(), 0).unwrap();
        let head = ClassifierHead::<f64>::zeros(8, 4);
        let (b, _) = batch();
        let out = forward_classify(&w, &head, &b, &[0, 3]).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-15);
        for row in out.logits {
            assert!(row.iter().all(|&z| z == 0.0));
        }
        assert!(matches!(
            forward_classify(&w, &head, &b, &[0, 4]),
            Err(Error::LabelOutOfRange { label: 4, n_labels: 4 })
        ));
    }

    #[test]
    fn backward_loss_matches_forward_bits() {
        let w = init_weights::<f32>(&cfg(), 9).unwrap();
        let (b, l) = batch();
        let f = forward_mlm(&w, &b, &l).unwrap().loss;
        let (g, _) = backward_mlm(&w, &b, &l, PassOptions::default()).unwrap();
        assert_eq!(f.to_bits(), g.to_bits());
    }

    #[test]
    fn dropout_changes_loss_only_when_enabled() {
        let w = init_weights::<f32>(&cfg(), 9).unwrap();
        let (b, l) = batch();
        let opts = PassOptions {
            loss_scale: 1.0,
            dropout_seed: Some(4),
        };
        let (a, _) = backward_mlm(&w, &b, &l, opts).unwrap();
        let (a2, _) = backward_mlm(&w, &b, &l, opts).unwrap();
        let (plain, _) = backward_mlm(&w, &b, &l, PassOptions::default()).unwrap();
        assert_eq!(a.to_bits(), a2.to_bits());
        assert_ne!(a.to_bits(), plain.to_bits());
    }
}
