use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;

pub const CANVAS: usize = 48;

/// Generator for canvas `index` of a source, independent of every other
/// canvas and of any training stream.
pub(crate) fn canvas_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(index as u128 * (1 << 32));
    rng
}

const BINOMIAL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Separable 5-tap binomial blur with wrap-around borders.
fn blur_wrap(plane: &[f32], n: usize) -> Vec<f32> {
    let mut tmp = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = (0..5).map(|k| BINOMIAL[k] * plane[y * n + (x + n + k - 2) % n]).sum();
        }
    }
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = (0..5).map(|k| BINOMIAL[k] * tmp[((y + n + k - 2) % n) * n + x]).sum();
        }
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

/// Band-limited Gaussian random field: white noise with a shared
/// luminance component, blurred twice, min-max normalized per channel.
pub fn source_a_canvas(seed: u64, index: u64) -> Image {
    let mut rng = canvas_rng(seed, 1, index);
    let n = CANVAS;
    let luma: Vec<f32> = (0..n * n).map(|_| normal(&mut rng)).collect();
    let mut data = Vec::with_capacity(3 * n * n);
    for _ in 0..3 {
        let noise: Vec<f32> = luma.iter().map(|&l| 0.7 * l + 0.3 * normal(&mut rng)).collect();
        let plane = blur_wrap(&blur_wrap(&noise, n), n);
        let (lo, hi) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (hi - lo).max(f32::EPSILON);
        data.extend(plane.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)));
    }
    Image::new(n, n, data).expect("canvas size")
}

pub const VORONOI_SEEDS: usize = 8;

/// Piecewise-constant Voronoi mosaic with 3x3-averaged cell borders.
pub fn source_b_canvas(seed: u64, index: u64) -> Image {
    let mut rng = canvas_rng(seed, 2, index);
    let n = CANVAS;
    let sites: Vec<(f32, f32, [f32; 3])> = (0..VORONOI_SEEDS)
        .map(|_| (rng.gen_range(0.0..n as f32), rng.gen_range(0.0..n as f32), [rng.gen(), rng.gen(), rng.gen()]))
        .collect();
    let owner: Vec<usize> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f32 + 0.5, (i % n) as f32 + 0.5);
            let d = |s: &(f32, f32, [f32; 3])| (s.0 - y).powi(2) + (s.1 - x).powi(2);
            (0..sites.len()).min_by(|&a, &b| d(&sites[a]).total_cmp(&d(&sites[b]))).expect("sites exist")
        })
        .collect();
    let mut data = vec![0.0f32; 3 * n * n];
    for c in 0..3 {
        let hard: Vec<f32> = owner.iter().map(|&o| sites[o].2[c]).collect();
        for y in 0..n {
            for x in 0..n {
                let o = owner[y * n + x];
                let border = [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dy, dx)| {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    (0..n as i64).contains(&yy) && (0..n as i64).contains(&xx) && owner[yy as usize * n + xx as usize] != o
                });
                data[c * n * n + y * n + x] = if border {
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    for yy in y.saturating_sub(1)..(y + 2).min(n) {
                        for xx in x.saturating_sub(1)..(x + 2).min(n) {
                            acc += hard[yy * n + xx];
                            cnt += 1.0;
                        }
                    }
                    acc / cnt
                } else {
                    hard[y * n + x]
                };
            }
        }
    }
    Image::new(n, n, data).expect("canvas size")
}

/// Mean correlation between horizontally adjacent samples.
pub fn horizontal_correlation(images: &[Image]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for im in images {
        for c in 0..3 {
            let p = im.plane(c);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for y in 0..im.height() {
                for x in 0..im.width() - 1 {
                    a.push(p[y * im.width() + x] as f64);
                    b.push(p[y * im.width() + x + 1] as f64);
                }
            }
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            if va > 0.0 && vb > 0.0 {
                total += cov / (va * vb).sqrt();
                count += 1;
            }
        }
    }
    total / count.max(1) as f64
}
