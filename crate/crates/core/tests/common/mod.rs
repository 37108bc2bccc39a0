//! Test-side oracles. Nothing here calls the library's own minimizers.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

pub fn gauss<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Row-major `G^T G / n + 0.1 I`.
pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let g = gauss(n * n, rng);
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..n).map(|k| g[k * n + i] * g[k * n + j]).sum();
            b[i * n + j] = s / n as f64 + if i == j { 0.1 } else { 0.0 };
        }
    }
    b
}

pub fn matvec(b: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|j| b[i * n + j] * v[j]).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(b: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = b[i * n..(i + 1) * n].to_vec();
            row.push(v[i]);
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut z = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * z[k]).sum();
        z[r] = (m[r][n] - s) / m[r][r];
    }
    z
}

pub fn b_norm(b: &[f64], t: &[f64]) -> f64 {
    dot(t, &matvec(b, t)).max(0.0).sqrt()
}

pub fn dual_norm(b: &[f64], v: &[f64]) -> f64 {
    dot(v, &solve(b, v)).max(0.0).sqrt()
}

pub fn shrink(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// `<g, y - x> + 1/2 ||y - x||_B^2 + lambda ||y||_1`
pub fn prox_phi(b: &[f64], x: &[f64], g: &[f64], lambda: f64, y: &[f64]) -> f64 {
    let d: Vec<f64> = y.iter().zip(x).map(|(a, c)| a - c).collect();
    dot(g, &d) + 0.5 * dot(&d, &matvec(b, &d)) + lambda * l1(y)
}

/// Cyclic coordinate descent with exact one-dimensional steps on the prox
/// objective, run until a sweep moves no coordinate by more than 1e-15.
pub fn prox_min(b: &[f64], x: &[f64], g: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let mut y = x.to_vec();
    // bd = B (y - x), kept up to date.
    let mut bd = vec![0.0; n];
    for _ in 0..100_000 {
        let mut moved = 0.0f64;
        for j in 0..n {
            let bjj = b[j * n + j];
            let c = g[j] + bd[j] - bjj * (y[j] - x[j]);
            let new = shrink(x[j] - c / bjj, lambda / bjj);
            let step = new - y[j];
            if step != 0.0 {
                for i in 0..n {
                    bd[i] += b[i * n + j] * step;
                }
                y[j] = new;
                moved = moved.max(step.abs());
            }
        }
        if moved <= 1e-15 {
            break;
        }
    }
    let v = prox_phi(b, x, g, lambda, &y);
    (y, v)
}

/// A point on a random ray out of `center` with prox value `phi_min + level`.
pub fn point_at_level<R: Rng>(
    phi: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    phi_min: f64,
    level: f64,
    rng: &mut R,
) -> Vec<f64> {
    let n = center.len();
    let mut d = gauss(n, rng);
    if rng.random_bool(0.5) {
        for j in 0..n {
            if center[j] == 0.0 {
                d[j] = 0.0;
            }
        }
        if d.iter().all(|&v| v == 0.0) {
            d = gauss(n, rng);
        }
    }
    if level <= 0.0 {
        return center.to_vec();
    }
    let at = |t: f64| -> Vec<f64> { center.iter().zip(&d).map(|(c, e)| c + t * e).collect() };
    let mut hi = 1e-3;
    while phi(&at(hi)) - phi_min < level && hi < 1e8 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if phi(&at(mid)) - phi_min <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

/// Plain ISTA on `1/2 ||Ax - b||^2 + lambda ||x||_1` with step `1/l`, dense `a`.
pub fn ista_trajectory(a: &[Vec<f64>], b: &[f64], lambda: f64, l: f64, cycles: usize) -> Vec<f64> {
    let m = a.len();
    let n = a[0].len();
    let obj = |x: &[f64]| {
        let r: f64 = (0..m)
            .map(|i| {
                let ri = dot(&a[i], x) - b[i];
                ri * ri
            })
            .sum();
        0.5 * r + lambda * l1(x)
    };
    let mut x = vec![0.0; n];
    let mut out = vec![obj(&x)];
    for _ in 0..cycles {
        let r: Vec<f64> = (0..m).map(|i| dot(&a[i], &x) - b[i]).collect();
        let grad: Vec<f64> = (0..n).map(|j| (0..m).map(|i| a[i][j] * r[i]).sum()).collect();
        x = (0..n).map(|j| shrink(x[j] - grad[j] / l, lambda / l)).collect();
        out.push(obj(&x));
    }
    out
}

/// Dense largest eigenvalue of `A^T A` by many power steps.
pub fn dense_spectral_sq(a: &[Vec<f64>]) -> f64 {
    let m = a.len();
    let n = a[0].len();
    let mut v = vec![1.0; n];
    let mut est = 0.0;
    for _ in 0..5000 {
        let av: Vec<f64> = (0..m).map(|i| dot(&a[i], &v)).collect();
        let w: Vec<f64> = (0..n).map(|j| (0..m).map(|i| a[i][j] * av[i]).sum()).collect();
        let nw = dot(&w, &w).sqrt();
        est = nw / dot(&v, &v).sqrt();
        v = w.iter().map(|x| x / nw).collect();
    }
    est
}

/// Minimizes `1/2 ||A y - b||^2 + lambda ||y||_1` for tiny `n` by enumerating
/// sign patterns and solving the reduced normal equations on each support.
pub fn lasso_by_enumeration(a: &[Vec<f64>], b: &[f64], lambda: f64) -> f64 {
    let m = a.len();
    let n = a[0].len();
    let obj = |y: &[f64]| {
        let r: f64 = (0..m)
            .map(|i| {
                let ri = dot(&a[i], y) - b[i];
                ri * ri
            })
            .sum();
        0.5 * r + lambda * l1(y)
    };
    let mut best = obj(&vec![0.0; n]);
    let patterns = 3usize.pow(n as u32);
    for code in 1..patterns {
        let mut signs = vec![0.0; n];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = [0.0, 1.0, -1.0][c % 3];
            c /= 3;
        }
        let support: Vec<usize> = (0..n).filter(|&j| signs[j] != 0.0).collect();
        let k = support.len();
        let mut gram = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (p, &jp) in support.iter().enumerate() {
            for (q, &jq) in support.iter().enumerate() {
                gram[p * k + q] = (0..m).map(|i| a[i][jp] * a[i][jq]).sum();
            }
            rhs[p] = (0..m).map(|i| a[i][jp] * b[i]).sum::<f64>() - lambda * signs[jp];
        }
        let sol = solve(&gram, &rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mut y = vec![0.0; n];
        let mut consistent = true;
        for (p, &j) in support.iter().enumerate() {
            if sol[p] * signs[j] < 0.0 {
                consistent = false;
            }
            y[j] = sol[p];
        }
        if consistent {
            best = best.min(obj(&y));
        }
    }
    best
}
