//! Straight-line reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Spatial attention over `x (n,h,w,c)` with kernel `k[ky][kx][{avg,max}]`.
pub fn spatial_attention_ref(
    x: &[f64],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: &[f64],
    b: f64,
) -> Vec<f64> {
    let at = |b: usize, y: usize, x0: usize, ch: usize| x[((b * h + y) * w + x0) * c + ch];
    let mut avg = vec![0.0; n * h * w];
    let mut max = vec![0.0; n * h * w];
    for bi in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let mut s = 0.0;
                let mut m = f64::NEG_INFINITY;
                for ch in 0..c {
                    let v = at(bi, y, xx, ch);
                    s += v;
                    if v > m {
                        m = v;
                    }
                }
                avg[(bi * h + y) * w + xx] = s / c as f64;
                max[(bi * h + y) * w + xx] = m;
            }
        }
    }
    let mut out = vec![0.0; x.len()];
    for bi in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let mut z = b;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        let sx = xx as isize + kx as isize - 1;
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        let p = (bi * h + sy as usize) * w + sx as usize;
                        z += k[(ky * 3 + kx) * 2] * avg[p] + k[(ky * 3 + kx) * 2 + 1] * max[p];
                    }
                }
                let g = sigmoid(z);
                for ch in 0..c {
                    let i = ((bi * h + y) * w + xx) * c + ch;
                    out[i] = x[i] * g;
                }
            }
        }
    }
    out
}

/// Channel attention over `x (n,h,w,c)`; `w1 (2c,hid)`, `w2 (hid,c)` row-major.
#[allow(clippy::too_many_arguments)]
pub fn channel_attention_ref(
    x: &[f64],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
) -> Vec<f64> {
    let hid = b1.len();
    let mut out = vec![0.0; x.len()];
    for bi in 0..n {
        let mut pooled = vec![0.0; 2 * c];
        for ch in 0..c {
            let mut s = 0.0;
            let mut m = f64::NEG_INFINITY;
            for p in 0..h * w {
                let v = x[(bi * h * w + p) * c + ch];
                s += v;
                if v > m {
                    m = v;
                }
            }
            pooled[ch] = s / (h * w) as f64;
            pooled[c + ch] = m;
        }
        let mut hidden = vec![0.0; hid];
        for j in 0..hid {
            let mut z = b1[j];
            for i in 0..2 * c {
                z += pooled[i] * w1[i * hid + j];
            }
            hidden[j] = z.max(0.0);
        }
        for ch in 0..c {
            let mut z = b2[ch];
            for j in 0..hid {
                z += hidden[j] * w2[j * c + ch];
            }
            let g = sigmoid(z);
            for p in 0..h * w {
                let i = (bi * h * w + p) * c + ch;
                out[i] = x[i] * g;
            }
        }
    }
    out
}

/// `1 - 6 ΣD² / (n(n² - 1))`; valid only without ties.
pub fn srocc_formula(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| 1.0 + v.iter().filter(|y| *y < x).count() as f64)
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Kendall tau-a by visiting every pair.
pub fn krocc_pairs(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut p = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            // f64::signum maps 0.0 to 1.0, so compare explicitly
            let sign = |d: f64| (d > 0.0) as i64 - (d < 0.0) as i64;
            p += sign(a[i] - a[j]) * sign(b[i] - b[j]);
        }
    }
    p as f64 / (n * (n - 1) / 2) as f64
}

/// Distinct values in random order.
pub fn tie_free<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[0] != w[1]) {
            return v;
        }
    }
}

pub fn uniform<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
