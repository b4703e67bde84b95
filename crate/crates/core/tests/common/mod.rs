//! Independent reference implementations used as test oracles. Everything
//! here is written from the definitions, deliberately slow and simple.

#![allow(dead_code)]

use coldbias_core::data::FeatureMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> FeatureMatrix {
    let v = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    FeatureMatrix::from_vec(rows, cols, v).unwrap()
}

/// Matrix whose entries come from a small integer grid, so that score ties
/// are common.
pub fn tie_heavy_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FeatureMatrix {
    let v = (0..rows * cols)
        .map(|_| rng.random_range(-2i32..=2) as f64)
        .collect();
    FeatureMatrix::from_vec(rows, cols, v).unwrap()
}

fn log2_discount(position0: usize) -> f64 {
    // position0 is 0-based: gain 1 / log2(position + 2)
    std::f64::consts::LN_2 / ((position0 + 2) as f64).ln()
}

pub fn ndcg_oracle(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (p, item) in ranked.iter().enumerate() {
        if p >= k {
            break;
        }
        if relevant.iter().any(|r| r == item) {
            dcg += log2_discount(p);
        }
    }
    let mut idcg = 0.0;
    let mut p = 0;
    while p < k && p < relevant.len() {
        idcg += log2_discount(p);
        p += 1;
    }
    dcg / idcg
}

pub fn recall_oracle(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for r in relevant {
        if ranked.iter().take(k).any(|x| x == r) {
            hits += 1;
        }
    }
    hits as f64 / relevant.len() as f64
}

/// MDG of one item from its target users' 1-based ranks.
pub fn mdg_oracle(ranks: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for &r in ranks {
        if r <= k {
            total += log2_discount(r - 1);
        }
    }
    total / ranks.len() as f64
}

/// (Min80, Max5, All) of a set of per-item MDG values.
pub fn mdg_aggregates_oracle(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    // smallest m with m / n >= 0.8, and smallest t with t / n >= 0.05
    let mut m = 0;
    while 10 * m < 8 * n {
        m += 1;
    }
    let mut t = 0;
    while 20 * t < n {
        t += 1;
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&v[..m]), mean(&v[n - t..]), mean(&v))
}

/// One minus the Gini coefficient through the mean absolute difference.
pub fn gini_diversity_oracle(counts: &[u64]) -> f64 {
    let n = counts.len() as f64;
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let mut abs_diff = 0.0;
    for &a in counts {
        for &b in counts {
            abs_diff += (a as f64 - b as f64).abs();
        }
    }
    1.0 - abs_diff / (2.0 * n * total)
}

/// Full sort of the pool by descending score, ascending index.
pub fn full_sort(user: &[f64], items: &FeatureMatrix, pool: &[usize], excluded: &[usize]) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = pool
        .iter()
        .filter(|i| !excluded.contains(i))
        .map(|&i| {
            let mut s = 0.0;
            for (a, b) in user.iter().zip(items.row(i)) {
                s += a * b;
            }
            (i, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

/// Gaussian elimination with partial pivoting; solves `a x = b` for every
/// column of `b`. Row-major dense input.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            for c in 0..b[r].len() {
                b[r][c] -= f * b[col][c];
            }
        }
    }
    let m = b[0].len();
    let mut x = vec![vec![0.0; m]; n];
    for r in (0..n).rev() {
        for c in 0..m {
            let mut s = b[r][c];
            for j in r + 1..n {
                s -= a[r][j] * x[j][c];
            }
            x[r][c] = s / a[r][r];
        }
    }
    x
}

/// Ridge weights via the normal equations and Gaussian elimination.
pub fn ridge_oracle(f: &FeatureMatrix, e: &FeatureMatrix, lambda: f64) -> Vec<Vec<f64>> {
    let p = f.cols();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![vec![0.0; e.cols()]; p];
    for r in 0..f.rows() {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += f.row(r)[i] * f.row(r)[j];
            }
            for c in 0..e.cols() {
                b[i][c] += f.row(r)[i] * e.row(r)[c];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    gauss_solve(a, b)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Two-sided Student-t tail probability by quadrature. With
/// `x = sqrt(df) tan(theta)` the t density becomes proportional to
/// `cos(theta)^(df - 1)` on `(-pi/2, pi/2)`, which needs no gamma function.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let g = |th: f64| th.cos().max(0.0).powf(df - 1.0);
    let half = std::f64::consts::FRAC_PI_2;
    let total = 2.0 * simpson(g, 0.0, half, 200_000);
    let tail = simpson(g, (t.abs() / df.sqrt()).atan(), half, 200_000);
    2.0 * tail / total
}

/// Welch t statistic, degrees of freedom and two-sided p-value.
pub fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    (t, df, t_two_sided_p(t, df))
}

/// Spearman correlation from midranks computed by counting.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let below = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Norm-wise relative error between an analytic and a numeric gradient.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|b| b * b).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
