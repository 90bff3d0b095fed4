#![allow(dead_code)]

use hopespeech::encoder::{
    backward_classify, backward_mlm, forward_classify, forward_mlm, init_weights, Batch, ClassifierHead,
    EncoderWeights, ModelConfig, PassOptions, IGNORE_INDEX,
};
use hopespeech::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn tiny_config(vocab: usize, d: usize, layers: usize, heads: usize, ff: usize, positions: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: d,
        n_layers: layers,
        n_heads: heads,
        d_ff: ff,
        max_positions: positions,
        dropout_rate: 0.1,
        layer_norm_epsilon: 1e-5,
    }
}

/// Weights far from the small-init regime so every path carries signal:
/// matrices and embeddings ~ N(0, 0.5²), biases ~ N(0, 0.1²), layer-norm
/// gains ~ 1 + N(0, 0.2²).
pub fn random_model(cfg: &ModelConfig, n_labels: usize, seed: u64) -> (EncoderWeights<f64>, ClassifierHead<f64>) {
    let mut w = init_weights::<f64>(cfg, seed).unwrap();
    let mut head = ClassifierHead::<f64>::zeros(cfg.d_model, n_labels);
    let mut r = rng::stream(seed, "test-randomize");
    let big = Normal::new(0.0, 0.5).unwrap();
    let small = Normal::new(0.0, 0.1).unwrap();
    let gain = Normal::new(1.0, 0.2).unwrap();
    let mut fill = |name: &str, data: &mut [f64], decay: bool| {
        let dist = if decay {
            big
        } else if name.ends_with("gain") {
            gain
        } else {
            small
        };
        for x in data {
            *x = dist.sample(&mut r);
        }
    };
    for (name, t, decay) in w.named_mut() {
        fill(&name, &mut t.data, decay);
    }
    for (name, t, decay) in head.named_mut() {
        fill(&name, &mut t.data, decay);
    }
    (w, head)
}

/// Three rows of length 7; the last row ends in two padding positions.
pub fn sample_batch(vocab: usize, seed: u64) -> (Batch, Vec<Vec<i64>>, Vec<usize>) {
    let mut r = rng::stream(seed, "test-batch");
    let mut ids = Vec::new();
    let mut attention = Vec::new();
    let mut mlm = Vec::new();
    for row in 0..3 {
        let valid = if row == 2 { 5 } else { 7 };
        let mut ri = vec![2u32];
        for _ in 1..valid - 1 {
            ri.push(r.random_range(5..vocab as u32));
        }
        ri.push(3);
        let mut att = vec![1u8; valid];
        ri.resize(7, 0);
        att.resize(7, 0);
        let mut lab = vec![IGNORE_INDEX; 7];
        lab[1] = r.random_range(5..vocab as i64);
        lab[valid - 2] = r.random_range(5..vocab as i64);
        ids.push(ri);
        attention.push(att);
        mlm.push(lab);
    }
    (Batch { ids, attention }, mlm, vec![0, 2, 1])
}

#[derive(Clone, Copy, Debug)]
pub enum Objective {
    Mlm,
    Classify,
}

fn loss(obj: Objective, w: &EncoderWeights<f64>, head: &ClassifierHead<f64>, batch: &Batch, mlm: &[Vec<i64>], y: &[usize]) -> f64 {
    match obj {
        Objective::Mlm => forward_mlm(w, batch, mlm).unwrap().loss,
        Objective::Classify => forward_classify(w, head, batch, y).unwrap().loss,
    }
}

pub struct GradCheck {
    pub coords: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is (numerically) zero compare on absolute scale.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences over `per_tensor` coordinates of every tensor
/// (encoder tensors for MLM, encoder plus head for classification).
pub fn grad_check(obj: Objective, cfg: &ModelConfig, per_tensor: usize, h: f64, seed: u64) -> GradCheck {
    let (mut w, mut head) = random_model(cfg, 4, seed);
    let (batch, mlm, y) = sample_batch(cfg.vocab_size, seed);
    let opts = PassOptions::default();
    let (_, grads) = match obj {
        Objective::Mlm => backward_mlm(&w, &batch, &mlm, opts).unwrap(),
        Objective::Classify => backward_classify(&w, &head, &batch, &y, opts).unwrap(),
    };
    let analytic: Vec<(String, Vec<f64>)> = grads.named().into_iter().map(|(n, t, _)| (n, t.data.clone())).collect();

    let mut r = rng::stream(seed, "test-coords");
    let mut coords = Vec::new();
    for (ti, (_, g)) in analytic.iter().enumerate() {
        for _ in 0..per_tensor {
            coords.push((ti, r.random_range(0..g.len())));
        }
    }

    let mut out = GradCheck {
        coords: coords.len(),
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for (ti, k) in coords {
        let n_enc = w.named().len();
        let eval = |w: &EncoderWeights<f64>, head: &ClassifierHead<f64>| loss(obj, w, head, &batch, &mlm, &y);
        let probe = |w: &mut EncoderWeights<f64>, head: &mut ClassifierHead<f64>, delta: f64| {
            if ti < n_enc {
                w.named_mut()[ti].1.data[k] += delta;
            } else {
                head.named_mut()[ti - n_enc].1.data[k] += delta;
            }
        };
        let orig = if ti < n_enc {
            w.named()[ti].1.data[k]
        } else {
            head.named()[ti - n_enc].1.data[k]
        };
        probe(&mut w, &mut head, h);
        let plus = eval(&w, &head);
        probe(&mut w, &mut head, -2.0 * h);
        let minus = eval(&w, &head);
        if ti < n_enc {
            w.named_mut()[ti].1.data[k] = orig;
        } else {
            head.named_mut()[ti - n_enc].1.data[k] = orig;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[ti].1[k];
        let e = rel_error(a, numeric);
        if e > out.max_rel_error {
            out.max_rel_error = e;
            out.worst = format!("{}[{k}]: analytic {a:e}, numeric {numeric:e}", analytic[ti].0);
        }
    }
    out
}

/// Straight-line reference forward pass written without the library's
/// tensor helpers. Returns per-row final hidden states.
pub mod oracle {
    use hopespeech::encoder::{EncoderWeights, LayerNormWeights};

    type M = Vec<Vec<f64>>;

    fn mat(data: &[f64], rows: usize, cols: usize) -> M {
        (0..rows).map(|r| data[r * cols..(r + 1) * cols].to_vec()).collect()
    }

    fn linear(x: &M, w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> M {
        let w = mat(w, n_in, n_out);
        x.iter()
            .map(|row| {
                (0..n_out)
                    .map(|o| b[o] + (0..n_in).map(|i| row[i] * w[i][o]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn ln(x: &M, p: &LayerNormWeights<f64>, eps: f64) -> M {
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mu = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                row.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mu) / (var + eps).sqrt() * p.gain.data[j] + p.bias.data[j])
                    .collect()
            })
            .collect()
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    fn add(a: &M, b: &M) -> M {
        a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
    }

    pub fn hidden(w: &EncoderWeights<f64>, ids: &[u32], att: &[u8]) -> M {
        let c = &w.config;
        let d = c.d_model;
        let dh = d / c.n_heads;
        let mut x: M = ids
            .iter()
            .enumerate()
            .map(|(i, &t)| (0..d).map(|j| w.tok_emb.data[t as usize * d + j] + w.pos_emb.data[i * d + j]).collect())
            .collect();
        for l in &w.layers {
            let q = linear(&x, &l.wq.data, &l.bq.data, d, d);
            let k = linear(&x, &l.wk.data, &l.bk.data, d, d);
            let v = linear(&x, &l.wv.data, &l.bv.data, d, d);
            let mut ctx = vec![vec![0.0; d]; ids.len()];
            for h in 0..c.n_heads {
                for i in 0..ids.len() {
                    let s: Vec<f64> = (0..ids.len())
                        .map(|j| {
                            if att[j] == 0 {
                                f64::NEG_INFINITY
                            } else {
                                (0..dh).map(|t| q[i][h * dh + t] * k[j][h * dh + t]).sum::<f64>() / (dh as f64).sqrt()
                            }
                        })
                        .collect();
                    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = s.iter().map(|z| (z - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for j in 0..ids.len() {
                        for t in 0..dh {
                            ctx[i][h * dh + t] += e[j] / z * v[j][h * dh + t];
                        }
                    }
                }
            }
            let a = linear(&ctx, &l.wo.data, &l.bo.data, d, d);
            let y = ln(&add(&x, &a), &l.ln1, c.layer_norm_epsilon);
            let u: M = linear(&y, &l.w1.data, &l.b1.data, d, c.d_ff)
                .into_iter()
                .map(|r| r.into_iter().map(gelu).collect())
                .collect();
            let f = linear(&u, &l.w2.data, &l.b2.data, c.d_ff, d);
            x = ln(&add(&y, &f), &l.ln2, c.layer_norm_epsilon);
        }
        ln(&x, &w.final_ln, c.layer_norm_epsilon)
    }

    fn xent(logits: &[f64], target: usize) -> f64 {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        lse - logits[target]
    }

    pub fn mlm_loss(w: &EncoderWeights<f64>, ids: &[Vec<u32>], att: &[Vec<u8>], labels: &[Vec<i64>]) -> f64 {
        let d = w.config.d_model;
        let (mut total, mut n) = (0.0, 0usize);
        for r in 0..ids.len() {
            let hs = hidden(w, &ids[r], &att[r]);
            for (p, &lab) in labels[r].iter().enumerate() {
                if lab < 0 {
                    continue;
                }
                let logits: Vec<f64> = (0..w.config.vocab_size)
                    .map(|t| w.mlm_bias.data[t] + (0..d).map(|j| hs[p][j] * w.tok_emb.data[t * d + j]).sum::<f64>())
                    .collect();
                total += xent(&logits, lab as usize);
                n += 1;
            }
        }
        total / n as f64
    }

    pub fn classify_loss(
        w: &EncoderWeights<f64>,
        head: &hopespeech::encoder::ClassifierHead<f64>,
        ids: &[Vec<u32>],
        att: &[Vec<u8>],
        y: &[usize],
    ) -> f64 {
        let d = w.config.d_model;
        let n = head.bias.data.len();
        let mut total = 0.0;
        for r in 0..ids.len() {
            let hs = hidden(w, &ids[r], &att[r]);
            let logits: Vec<f64> = (0..n)
                .map(|o| head.bias.data[o] + (0..d).map(|j| hs[0][j] * head.weight.data[j * n + o]).sum::<f64>())
                .collect();
            total += xent(&logits, y[r]);
        }
        total / ids.len() as f64
    }
}
