//! Straight-line reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn squash(s: &[f64]) -> Vec<f64> {
    let n = norm(s);
    if n == 0.0 {
        return vec![0.0; s.len()];
    }
    let scale = n * n / (1.0 + n * n) / n;
    s.iter().map(|x| x * scale).collect()
}

/// Routing by agreement written out loop by loop. `u[i][j]` is the
/// prediction of lower capsule `i` for upper capsule `j`. Returns the
/// outputs `v[j]` and the couplings of the last iteration.
pub fn route(u: &[Vec<Vec<f64>>], r: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = u.len();
    let m = u[0].len();
    let p = u[0][0].len();
    let mut b = vec![vec![0.0; m]; n];
    let mut v = vec![vec![0.0; p]; m];
    let mut c = vec![vec![0.0; m]; n];
    for _ in 0..r {
        for i in 0..n {
            c[i] = softmax(&b[i]);
        }
        for j in 0..m {
            let mut s = vec![0.0; p];
            for i in 0..n {
                for k in 0..p {
                    s[k] += c[i][j] * u[i][j][k];
                }
            }
            v[j] = squash(&s);
        }
        for i in 0..n {
            for j in 0..m {
                b[i][j] += dot(&u[i][j], &v[j]);
            }
        }
    }
    (v, c)
}

/// One LSTM over `xs` with gate rows ordered input, forget, output,
/// candidate; `w` is `4h x (d + h)` acting on `[x; h]`.
pub fn lstm(xs: &[Vec<f64>], w: &[Vec<f64>], b: &[f64], h_dim: usize) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut out = Vec::new();
    for x in xs {
        let z: Vec<f64> = x.iter().chain(&h).cloned().collect();
        let pre: Vec<f64> = (0..4 * h_dim).map(|r| dot(&w[r], &z) + b[r]).collect();
        for k in 0..h_dim {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[h_dim + k]);
            let o = sigmoid(pre[2 * h_dim + k]);
            let g = pre[3 * h_dim + k].tanh();
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        out.push(h.clone());
    }
    out
}

/// Attention pooling: scalar scores `tanh(w . t_i + b)`, softmax weights,
/// weighted sum. Returns (weights, context).
pub fn attention(ts: &[Vec<f64>], w: &[f64], b: f64) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = ts.iter().map(|t| (dot(w, t) + b).tanh()).collect();
    let alpha = softmax(&scores);
    let mut ctx = vec![0.0; ts[0].len()];
    for (a, t) in alpha.iter().zip(ts) {
        for (c, x) in ctx.iter_mut().zip(t) {
            *c += a * x;
        }
    }
    (alpha, ctx)
}

/// Per-class precision, recall and F1 recounted from scratch, plus
/// accuracy and the macro averages as exact fractions.
pub struct Recount {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Exact rational `(num, den)`, kept reduced.
#[derive(Clone, Copy)]
struct Frac(i128, i128);

impl Frac {
    fn new(n: i128, d: i128) -> Frac {
        if n == 0 || d == 0 {
            return Frac(0, 1);
        }
        let g = gcd(n, d);
        Frac(n / g, d / g)
    }

    fn add(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }

    fn value(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

pub fn recount(pred: &[usize], gold: &[usize], k: usize) -> Recount {
    let mut fr = [Vec::new(), Vec::new(), Vec::new()];
    for c in 0..k {
        let tp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g == c).count() as i128;
        let fp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g != c).count() as i128;
        let fn_ = pred.iter().zip(gold).filter(|(p, g)| **p != c && **g == c).count() as i128;
        let p = Frac::new(tp, tp + fp);
        let r = Frac::new(tp, tp + fn_);
        // Harmonic mean of p and r, as a fraction.
        let f = if p.0 == 0 || r.0 == 0 {
            Frac(0, 1)
        } else {
            Frac::new(2 * p.0 * r.0, p.0 * r.1 + r.0 * p.1)
        };
        fr[0].push(p);
        fr[1].push(r);
        fr[2].push(f);
    }
    let mean = |v: &Vec<Frac>| {
        let s = v.iter().fold(Frac(0, 1), |a, &b| a.add(b));
        Frac::new(s.0, s.1 * k as i128).value()
    };
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Recount {
        accuracy: if gold.is_empty() { 0.0 } else { correct as f64 / gold.len() as f64 },
        precision: fr[0].iter().map(|f| f.value()).collect(),
        recall: fr[1].iter().map(|f| f.value()).collect(),
        f1: fr[2].iter().map(|f| f.value()).collect(),
        macro_precision: mean(&fr[0]),
        macro_recall: mean(&fr[1]),
        macro_f1: mean(&fr[2]),
    }
}

/// Adam written for a flat parameter vector, one step per gradient.
pub fn adam_trace(x0: &[f64], grads: &[Vec<f64>], lr: f64, b1: f64, b2: f64, eps: f64) -> Vec<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut out = Vec::new();
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for k in 0..x.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m[k] / (1.0 - b1.powi(t));
            let vh = v[k] / (1.0 - b2.powi(t));
            x[k] -= lr * mh / (vh.sqrt() + eps);
        }
        out.push(x.clone());
    }
    out
}

/// Class sizes for a Zipf-shaped training split: class `c` weighs
/// `1 / (c + 1)^(2 s)`, each class gets one example up front, and the rest
/// is shared out by largest remainder (lower index first on ties).
pub fn allocation(k: usize, n: usize, s: f64) -> Vec<usize> {
    let w: Vec<f64> = (1..=k).map(|r| 1.0 / (r as f64 * r as f64).powf(s)).collect();
    let total: f64 = w.iter().sum();
    let share: Vec<f64> = w.iter().map(|x| x / total * (n - k) as f64).collect();
    let mut counts: Vec<usize> = share.iter().map(|q| q.floor() as usize + 1).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut fracs: Vec<(f64, usize)> = share.iter().enumerate().map(|(c, q)| (q.fract(), c)).collect();
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for (_, c) in fracs {
        if left == 0 {
            break;
        }
        counts[c] += 1;
        left -= 1;
    }
    counts
}

/// 200 four-class documents of 3 to 5 tokens, each holding at least one
/// token owned by its class, encoded for the tiny configuration.
pub fn separable_splits() -> (secaps::train::EncodedSplit, secaps::train::EncodedSplit, secaps::model::ModelConfig) {
    use secaps::data::{gen_synthetic, SyntheticSpec, Vocabulary};
    use secaps::train::EncodedSplit;
    let spec = SyntheticSpec {
        num_classes: 4,
        vocab_size: 18,
        zipf_exponent: 0.0,
        train_size: 400,
        eval_per_class: 5,
        seed: 3,
        length_range: (3, 5),
        signature_tokens: 3,
        signal: 0.5,
    };
    let ds = gen_synthetic(&spec).unwrap();
    let owned = |e: &secaps::data::LabeledExample| {
        let class = ds.label_index(&e.charge).unwrap();
        e.fact.iter().any(|t| (class * 3..class * 3 + 3).any(|id| *t == secaps::data::token_name(id)))
    };
    let train: Vec<_> = ds.train.iter().filter(|e| owned(e)).take(200).cloned().collect();
    assert_eq!(train.len(), 200);
    let vocab = Vocabulary::build(&train, 1);
    let config = secaps::gradcheck::tiny_model_config(secaps::model::ResidualMode::Attention);
    assert!(vocab.len() <= config.vocab_size);
    (
        EncodedSplit::encode(&train, &vocab, ds.labels(), config.max_len).unwrap(),
        EncodedSplit::encode(&ds.valid, &vocab, ds.labels(), config.max_len).unwrap(),
        config,
    )
}

/// Least-squares slope of `ys` against their index.
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = ys.iter().enumerate().map(|(i, y)| (i as f64 - mx) * (y - my)).sum();
    let den: f64 = (0..ys.len()).map(|i| (i as f64 - mx).powi(2)).sum();
    num / den
}
