//! Two-layer logistic classifier used to certify that two sources differ.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;

const HIST_BINS: usize = 8;
const HIDDEN: usize = 8;

/// Gradient-magnitude histogram plus per-channel mean and spread.
pub fn features(im: &Image) -> Vec<f64> {
    let mut hist = [0.0f64; HIST_BINS];
    let mut n = 0.0;
    for c in 0..3 {
        for y in 0..im.height() {
            for x in 0..im.width() - 1 {
                let d = (im.get(c, y, x + 1) - im.get(c, y, x)).abs() as f64;
                let bin = ((d * 40.0).sqrt() * HIST_BINS as f64 / 2.0).min(HIST_BINS as f64 - 1.0) as usize;
                hist[bin] += 1.0;
                n += 1.0;
            }
        }
    }
    let mut f: Vec<f64> = hist.iter().map(|h| h / n).collect();
    for c in 0..3 {
        let p = im.plane(c);
        let m = p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64;
        let v = p.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / p.len() as f64;
        f.push(m);
        f.push(v.sqrt());
    }
    f
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Mlp {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl Mlp {
    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let h: Vec<f64> = self.w1.iter().zip(&self.b1).map(|(w, b)| (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b).tanh()).collect();
        let o = sigmoid(h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>() + self.b2);
        (h, o)
    }
}

/// Held-out accuracy of a tanh-hidden logistic classifier trained to tell
/// `a` (label 0) from `b` (label 1); half of each set is held out.
pub fn separability(a: &[Image], b: &[Image], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<(Vec<f64>, f64)> = a.iter().map(|im| (features(im), 0.0)).chain(b.iter().map(|im| (features(im), 1.0))).collect();
    rows.shuffle(&mut rng);
    let split = rows.len() / 2;
    let (train, test) = rows.split_at(split);
    let dim = train[0].0.len();
    // Standardize with training statistics.
    let mean: Vec<f64> = (0..dim).map(|j| train.iter().map(|r| r.0[j]).sum::<f64>() / train.len() as f64).collect();
    let std: Vec<f64> = (0..dim)
        .map(|j| (train.iter().map(|r| (r.0[j] - mean[j]).powi(2)).sum::<f64>() / train.len() as f64).sqrt().max(1e-9))
        .collect();
    let norm = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]).collect() };
    let train: Vec<(Vec<f64>, f64)> = train.iter().map(|(x, y)| (norm(x), *y)).collect();

    let mut m = Mlp {
        w1: (0..HIDDEN).map(|_| (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect(),
        b1: vec![0.0; HIDDEN],
        w2: (0..HIDDEN).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        b2: 0.0,
    };
    let lr = 0.5;
    for _ in 0..300 {
        let mut gw1 = vec![vec![0.0; dim]; HIDDEN];
        let mut gb1 = vec![0.0; HIDDEN];
        let mut gw2 = vec![0.0; HIDDEN];
        let mut gb2 = 0.0;
        for (x, y) in &train {
            let (h, o) = m.forward(x);
            let d = o - y;
            gb2 += d;
            for k in 0..HIDDEN {
                gw2[k] += d * h[k];
                let dh = d * m.w2[k] * (1.0 - h[k] * h[k]);
                gb1[k] += dh;
                for j in 0..dim {
                    gw1[k][j] += dh * x[j];
                }
            }
        }
        let s = lr / train.len() as f64;
        m.b2 -= s * gb2;
        for k in 0..HIDDEN {
            m.w2[k] -= s * gw2[k];
            m.b1[k] -= s * gb1[k];
            for j in 0..dim {
                m.w1[k][j] -= s * gw1[k][j];
            }
        }
    }
    let correct = test.iter().filter(|(x, y)| (m.forward(&norm(x)).1 > 0.5) == (*y > 0.5)).count();
    correct as f64 / test.len() as f64
}
