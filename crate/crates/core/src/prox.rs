//! Inexact pre-conditioned proximal maps for the l1 regularizer.
//!
//! For a query `(x, g, delta, B, lambda)` the prox objective is
//! `phi(z) = <g, z> + 1/2 ||z - x||_B^2 + lambda ||z||_1` and the inexact prox
//! set is `{u : phi(u) <= min phi + delta}`. Membership can be decided two
//! ways, which the tests play against each other:
//!
//! * by value: [`prox_value_gap`] against a high-accuracy primal minimum
//!   ([`reference_minimum`], coordinate descent);
//! * by certificate: a witness `(delta', v)` with
//!   `||v||_B^* <= sqrt(2 (delta - delta'))` and
//!   `v - g - B(u - x)` a `delta'`-subgradient of the regularizer at `u`
//!   ([`certify_second_prox`], [`certify_optimal`]).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm1, norm2, norm2_sq, norm_inf};
use crate::metric::Metric;

const CD_MAX_SWEEPS: usize = 200_000;

/// Absolute membership slack, scaled by `1 + |reference minimum|`.
pub const MEMBERSHIP_SLACK: f64 = 1e-9;

/// Slack on the certificate norm bound.
pub const CERT_NORM_SLACK: f64 = 1e-12;

/// Soft-thresholding `S_t(v) = sign(v) max(|v| - t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Exact prox for `B = c I`: `argmin <g,y> + c/2 ||y - x||^2 + lambda ||y||_1`
/// `= S_{lambda/c}(x - g/c)`.
pub fn exact_prox_l1(x: &[f64], g: &[f64], lambda: f64, c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("metric scale c = {c} must be > 0")));
    }
    if x.len() != g.len() {
        return Err(Error::Dimension(format!("x has length {}, g has {}", x.len(), g.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be >= 0")));
    }
    Ok(x.iter()
        .zip(g)
        .map(|(xi, gi)| soft_threshold(xi - gi / c, lambda / c))
        .collect())
}

#[derive(Debug, Clone)]
pub struct ProxQuery {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub delta: f64,
    pub metric: Metric,
    pub lambda: f64,
}

impl ProxQuery {
    pub fn new(x: Vec<f64>, g: Vec<f64>, delta: f64, metric: Metric, lambda: f64) -> Result<Self> {
        if x.len() != g.len() || x.len() != metric.dim() {
            return Err(Error::Dimension(format!(
                "x: {}, g: {}, metric: {}",
                x.len(),
                g.len(),
                metric.dim()
            )));
        }
        if !(delta >= 0.0) {
            return Err(Error::InvalidArgument(format!("delta = {delta} must be >= 0")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda = {lambda} must be >= 0")));
        }
        Ok(Self {
            x,
            g,
            delta,
            metric,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self {
            delta,
            ..self.clone()
        }
    }

    pub fn psi(&self, z: &[f64]) -> f64 {
        self.lambda * norm1(z)
    }

    /// `<g,z> + 1/2 ||z - x||_B^2 + lambda ||z||_1`
    pub fn objective(&self, z: &[f64]) -> f64 {
        let d: Vec<f64> = z.iter().zip(&self.x).map(|(a, b)| a - b).collect();
        dot(&self.g, z) + 0.5 * self.metric.norm_sq(&d) + self.psi(z)
    }

    /// `w = g + B(u - x)`, the smooth part of the prox residual at `u`.
    pub fn smooth_residual(&self, u: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = u.iter().zip(&self.x).map(|(a, b)| a - b).collect();
        let bd = self.metric.apply(&d);
        self.g.iter().zip(&bd).map(|(a, b)| a + b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceMinimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub sweeps: usize,
}

/// High-accuracy minimizer of the prox objective by cyclic coordinate descent
/// on the dense metric; closed form for scaled-identity metrics.
pub fn reference_minimum(query: &ProxQuery) -> ReferenceMinimum {
    if let Some(c) = query.metric.is_scaled_identity() {
        let point = exact_prox_l1(&query.x, &query.g, query.lambda, c)
            .expect("scaled identity metrics have c > 0");
        let value = query.objective(&point);
        return ReferenceMinimum {
            point,
            value,
            sweeps: 0,
        };
    }
    let n = query.dim();
    let b = query.metric.to_dense();
    // phi(z) = 1/2 z^T B z + (g - B x)^T z + lambda ||z||_1 + const
    let bx = query.metric.apply(&query.x);
    let lin: Vec<f64> = query.g.iter().zip(&bx).map(|(g, v)| g - v).collect();
    let mut z = query.x.clone();
    // grad = B z + lin
    let mut grad: Vec<f64> = query
        .metric
        .apply(&z)
        .iter()
        .zip(&lin)
        .map(|(a, l)| a + l)
        .collect();
    let mut sweeps = 0;
    while sweeps < CD_MAX_SWEEPS {
        sweeps += 1;
        let mut max_step = 0.0f64;
        for j in 0..n {
            let bjj = b[j * n + j];
            let old = z[j];
            // 1-D problem in z_j: 1/2 bjj t^2 + (grad_j - bjj old) t + lambda |t|
            let new = soft_threshold(old - grad[j] / bjj, query.lambda / bjj);
            let step = new - old;
            if step != 0.0 {
                z[j] = new;
                for k in 0..n {
                    grad[k] += step * b[k * n + j];
                }
                max_step = max_step.max(step.abs());
            }
        }
        if max_step <= 1e-16 * (1.0 + norm_inf(&z)) {
            break;
        }
    }
    let value = query.objective(&z);
    ReferenceMinimum {
        point: z,
        value,
        sweeps,
    }
}

/// `phi(u) - reference_min`; `u` is in the inexact prox set iff this is `<= delta`.
pub fn prox_value_gap(query: &ProxQuery, u: &[f64], reference_min: f64) -> f64 {
    query.objective(u) - reference_min
}

/// Value-based membership with the standard slack.
pub fn is_member_by_value(query: &ProxQuery, u: &[f64], reference_min: f64) -> bool {
    prox_value_gap(query, u, reference_min)
        <= query.delta + MEMBERSHIP_SLACK * (1.0 + reference_min.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxCertificate {
    pub u: Vec<f64>,
    pub delta: f64,
    pub delta_prime: f64,
    pub v: Vec<f64>,
    /// `v - g - B(u - x)`, claimed to lie in the `delta'`-subdifferential at `u`.
    pub subgrad_residual: Vec<f64>,
    pub v_dual_norm: f64,
}

impl ProxCertificate {
    /// `sqrt(2 (delta - delta'))`
    pub fn norm_budget(&self) -> f64 {
        (2.0 * (self.delta - self.delta_prime)).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certification {
    Certified(ProxCertificate),
    /// The constructor's best witness exceeds the budget.
    NotCertifiable {
        delta_prime: f64,
        v_dual_norm: f64,
    },
}

impl Certification {
    pub fn is_certified(&self) -> bool {
        matches!(self, Certification::Certified(_))
    }

    pub fn certificate(&self) -> Option<&ProxCertificate> {
        match self {
            Certification::Certified(c) => Some(c),
            Certification::NotCertifiable { .. } => None,
        }
    }
}

fn check_u(query: &ProxQuery, u: &[f64]) -> Result<()> {
    if u.len() != query.dim() {
        return Err(Error::Dimension(format!(
            "candidate has length {}, query has dim {}",
            u.len(),
            query.dim()
        )));
    }
    Ok(())
}

/// Witness with `delta' = 0`: the subgradient `r` is the projection of
/// `-(g + B(u - x))` onto the exact subdifferential of `lambda ||.||_1` at `u`.
pub fn certify_second_prox(query: &ProxQuery, u: &[f64]) -> Result<Certification> {
    check_u(query, u)?;
    let w = query.smooth_residual(u);
    let r: Vec<f64> = u
        .iter()
        .zip(&w)
        .map(|(&uj, &wj)| {
            if uj > 0.0 {
                query.lambda
            } else if uj < 0.0 {
                -query.lambda
            } else {
                (-wj).clamp(-query.lambda, query.lambda)
            }
        })
        .collect();
    let v: Vec<f64> = r.iter().zip(&w).map(|(a, b)| a + b).collect();
    let v_dual_norm = query.metric.dual_norm(&v)?;
    let budget = (2.0 * query.delta).sqrt();
    if v_dual_norm > budget {
        return Ok(Certification::NotCertifiable {
            delta_prime: 0.0,
            v_dual_norm,
        });
    }
    Ok(Certification::Certified(ProxCertificate {
        u: u.to_vec(),
        delta: query.delta,
        delta_prime: 0.0,
        v,
        subgrad_residual: r,
        v_dual_norm,
    }))
}

/// Witness with the best `delta'`: minimizes
/// `delta'(s) + 1/2 (||s + w||_B^*)^2` over `||s||_inf <= lambda`, where
/// `delta'(s) = lambda ||u||_1 - <s, u>` is the smallest `delta'` making `s`
/// a `delta'`-subgradient at `u`. The minimum equals the prox value gap of
/// `u`, so this certifies exactly the members of the inexact prox set.
pub fn certify_optimal(query: &ProxQuery, u: &[f64]) -> Result<Certification> {
    check_u(query, u)?;
    let n = query.dim();
    let lambda = query.lambda;
    let w = query.smooth_residual(u);
    // M = B^{-1}, dense.
    let mut m = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = query.metric.solve(&e)?;
        e[j] = 0.0;
        for i in 0..n {
            m[i * n + j] = col[i];
        }
    }
    // Start from the delta' = 0 projection.
    let mut s: Vec<f64> = u
        .iter()
        .zip(&w)
        .map(|(&uj, &wj)| {
            if uj > 0.0 {
                lambda
            } else if uj < 0.0 {
                -lambda
            } else {
                (-wj).clamp(-lambda, lambda)
            }
        })
        .collect();
    // q = M (s + w); gradient of the objective in s is q - u.
    let sw: Vec<f64> = s.iter().zip(&w).map(|(a, b)| a + b).collect();
    let mut q: Vec<f64> = (0..n).map(|i| dot(&m[i * n..(i + 1) * n], &sw)).collect();
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_step = 0.0f64;
        for j in 0..n {
            let mjj = m[j * n + j];
            let grad = q[j] - u[j];
            let new = (s[j] - grad / mjj).clamp(-lambda, lambda);
            let step = new - s[j];
            if step != 0.0 {
                s[j] = new;
                for i in 0..n {
                    q[i] += step * m[i * n + j];
                }
                max_step = max_step.max(step.abs());
            }
        }
        if max_step <= 1e-16 * (1.0 + lambda) {
            break;
        }
    }
    let delta_prime = (lambda * norm1(u) - dot(&s, u)).max(0.0);
    let v: Vec<f64> = s.iter().zip(&w).map(|(a, b)| a + b).collect();
    let v_dual_norm = query.metric.dual_norm(&v)?;
    if delta_prime + 0.5 * v_dual_norm * v_dual_norm > query.delta || delta_prime > query.delta {
        return Ok(Certification::NotCertifiable {
            delta_prime,
            v_dual_norm,
        });
    }
    Ok(Certification::Certified(ProxCertificate {
        u: u.to_vec(),
        delta: query.delta,
        delta_prime,
        v,
        subgrad_residual: s,
        v_dual_norm,
    }))
}

/// Tries the `delta' = 0` projection first and falls back to the optimal witness.
pub fn certify(query: &ProxQuery, u: &[f64]) -> Result<Certification> {
    match certify_second_prox(query, u)? {
        c @ Certification::Certified(_) => Ok(c),
        Certification::NotCertifiable { .. } => certify_optimal(query, u),
    }
}

/// `s` is a `delta`-subgradient of `lambda ||.||_1` at `u` iff
/// `||s||_inf <= lambda` and `lambda ||u||_1 - <s, u> <= delta`.
pub fn is_l1_delta_subgradient(lambda: f64, u: &[f64], s: &[f64], delta: f64) -> bool {
    let scale = 1.0 + lambda * norm1(u);
    norm_inf(s) <= lambda * (1.0 + 1e-12)
        && lambda * norm1(u) - dot(s, u) <= delta + 1e-12 * scale
}

/// Checks the certificate norm bound and the inequality
/// `<v - g - B(u - x), y - u> <= Psi(y) - Psi(u) + delta'` on every sample.
pub fn check_certificate(query: &ProxQuery, cert: &ProxCertificate, y_samples: &[Vec<f64>]) -> bool {
    if !(cert.delta_prime >= 0.0 && cert.delta_prime <= query.delta) {
        return false;
    }
    let Ok(vn) = query.metric.dual_norm(&cert.v) else {
        return false;
    };
    if vn > (2.0 * (query.delta - cert.delta_prime)).max(0.0).sqrt() + CERT_NORM_SLACK {
        return false;
    }
    let w = query.smooth_residual(&cert.u);
    let s: Vec<f64> = cert.v.iter().zip(&w).map(|(a, b)| a - b).collect();
    let psi_u = query.psi(&cert.u);
    y_samples.iter().all(|y| {
        let diff: Vec<f64> = y.iter().zip(&cert.u).map(|(a, b)| a - b).collect();
        let lhs = dot(&s, &diff);
        let psi_y = query.psi(y);
        let tol = 1e-12 * (1.0 + lhs.abs() + psi_y + psi_u);
        lhs <= psi_y - psi_u + cert.delta_prime + tol
    })
}

/// Default sample set: `count` Gaussian draws around `u` with scale
/// `||u - x||_B + 1`, plus axis points around the exact minimizer.
pub fn default_y_samples<R: Rng>(
    query: &ProxQuery,
    u: &[f64],
    minimizer: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = query.dim();
    let d: Vec<f64> = u.iter().zip(&query.x).map(|(a, b)| a - b).collect();
    let scale = query.metric.norm(&d) + 1.0;
    let mut out = Vec::with_capacity(count + 3 * n);
    for _ in 0..count {
        out.push(
            u.iter()
                .map(|ui| ui + scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
    }
    for j in 0..n {
        for t in [0.0, scale, -scale] {
            let mut y = minimizer.to_vec();
            if t == 0.0 {
                y[j] = 0.0;
            } else {
                y[j] += t;
            }
            out.push(y);
        }
    }
    out
}

/// `Psi(x) - min Psi <= delta`, i.e. `0` is a `delta`-subgradient at `x`.
pub fn delta_optimality_check(psi_value_at_x: f64, psi_min: f64, delta: f64) -> bool {
    psi_value_at_x - psi_min <= delta
}

/// Approximate prox evaluation for `B = I`, `g = 0`: is there `r` in the
/// subdifferential of `lambda ||.||_1` at `u` with `||u + r - x|| <= sqrt(2 delta)`?
/// The componentwise choice of `r` minimizes the norm.
pub fn rockafellar_membership(x: &[f64], delta: f64, u: &[f64], lambda: f64) -> Result<bool> {
    Ok(rockafellar_residual(x, u, lambda)?.powi(2) <= 2.0 * delta)
}

/// `min_r ||u + r - x||` over the subdifferential at `u`.
pub fn rockafellar_residual(x: &[f64], u: &[f64], lambda: f64) -> Result<f64> {
    if x.len() != u.len() {
        return Err(Error::Dimension(format!("x: {}, u: {}", x.len(), u.len())));
    }
    let res: Vec<f64> = x
        .iter()
        .zip(u)
        .map(|(&xj, &uj)| {
            let r = if uj > 0.0 {
                lambda
            } else if uj < 0.0 {
                -lambda
            } else {
                (xj - uj).clamp(-lambda, lambda)
            };
            uj + r - xj
        })
        .collect();
    Ok(norm2(&res))
}

/// Tolerance that absorbs a gradient error `e`:
/// `delta + sqrt(2 delta) ||e||_B^* + 1/2 (||e||_B^*)^2`.
pub fn gradient_error_embedding(delta: f64, e_dual_norm: f64) -> Result<f64> {
    if !(delta >= 0.0) || !(e_dual_norm >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta = {delta}, ||e|| = {e_dual_norm} must both be >= 0"
        )));
    }
    Ok(delta + (2.0 * delta).sqrt() * e_dual_norm + 0.5 * e_dual_norm * e_dual_norm)
}

/// Right-hand side of the error-dependent Lipschitz bound
/// `||g - h||_B^* + ||y - x||_B + (1 + sqrt(2)/2)(sqrt(delta) + sqrt(eps))`.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_bound_rhs(
    metric: &Metric,
    x: &[f64],
    y: &[f64],
    g: &[f64],
    h: &[f64],
    delta: f64,
    epsilon: f64,
) -> Result<f64> {
    let n = metric.dim();
    if [x.len(), y.len(), g.len(), h.len()].iter().any(|&l| l != n) {
        return Err(Error::Dimension("all vectors must match the metric".into()));
    }
    if !(delta >= 0.0) || !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument("tolerances must be >= 0".into()));
    }
    let gh: Vec<f64> = g.iter().zip(h).map(|(a, b)| a - b).collect();
    let yx: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    Ok(metric.dual_norm(&gh)?
        + metric.norm(&yx)
        + (1.0 + std::f64::consts::SQRT_2 / 2.0) * (delta.sqrt() + epsilon.sqrt()))
}

/// Sum of squares helper used by verification code.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    norm2_sq(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> Metric {
        Metric::dense(3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(exact_prox_l1(&[0.0], &[0.0], 5.0, 1.0).unwrap(), vec![0.0]);
        assert_eq!(exact_prox_l1(&[3.0], &[0.0], 1.0, 1.0).unwrap(), vec![2.0]);
        assert_eq!(exact_prox_l1(&[3.0], &[1.0], 1.0, 1.0).unwrap(), vec![1.0]);
        assert_eq!(exact_prox_l1(&[-3.0], &[0.0], 1.0, 2.0).unwrap(), vec![-2.5]);
        assert!(exact_prox_l1(&[1.0], &[0.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn closed_form_gap_is_zero() {
        let q = ProxQuery::new(vec![2.0, -0.3], vec![0.5, 0.1], 0.0, Metric::identity(2), 0.4)
            .unwrap();
        let u = exact_prox_l1(&q.x, &q.g, q.lambda, 1.0).unwrap();
        let r = reference_minimum(&q);
        assert!(prox_value_gap(&q, &u, r.value).abs() <= 1e-12);
    }

    #[test]
    fn exact_minimizer_certifies_at_zero_delta() {
        let q = ProxQuery::new(vec![1.0, -2.0, 0.1], vec![0.3, 0.2, -0.1], 0.0, spd3(), 0.5)
            .unwrap();
        let r = reference_minimum(&q);
        let c = certify_second_prox(&q, &r.point).unwrap();
        // A floating-point minimizer leaves a residual of rounding size.
        let q_tiny = q.with_delta(1e-20);
        let c_tiny = certify_second_prox(&q_tiny, &r.point).unwrap();
        let cert = c_tiny.certificate().expect("minimizer must certify");
        assert_eq!(cert.delta_prime, 0.0);
        assert!(cert.v_dual_norm < 1e-10);
        if let Certification::NotCertifiable { v_dual_norm, .. } = c {
            assert!(v_dual_norm < 1e-10);
        }
    }

    #[test]
    fn far_point_is_not_certified() {
        let q = ProxQuery::new(vec![1.0, -2.0, 0.1], vec![0.3, 0.2, -0.1], 1e-3, spd3(), 0.5)
            .unwrap();
        let u = vec![5.0, 5.0, 5.0];
        assert!(!certify(&q, &u).unwrap().is_certified());
        let r = reference_minimum(&q);
        assert!(prox_value_gap(&q, &u, r.value) > q.delta);
    }

    #[test]
    fn optimal_witness_reaches_the_value_gap() {
        let q = ProxQuery::new(vec![1.0, -2.0, 0.1], vec![0.3, 0.2, -0.1], 10.0, spd3(), 0.5)
            .unwrap();
        let r = reference_minimum(&q);
        let u = vec![r.point[0] + 0.2, 0.0, r.point[2] - 0.1];
        let gap = prox_value_gap(&q, &u, r.value);
        let cert = certify_optimal(&q, &u).unwrap();
        let cert = cert.certificate().unwrap();
        let certified = cert.delta_prime + 0.5 * cert.v_dual_norm.powi(2);
        assert!((certified - gap).abs() < 1e-10, "{certified} vs {gap}");
    }

    #[test]
    fn inflated_v_fails_the_check() {
        let q = ProxQuery::new(vec![1.0, -2.0, 0.1], vec![0.3, 0.2, -0.1], 0.01, spd3(), 0.5)
            .unwrap();
        let r = reference_minimum(&q);
        let cert = certify(&q, &r.point).unwrap().certificate().unwrap().clone();
        assert!(check_certificate(&q, &cert, &[r.point.clone()]));
        let mut bad = cert.clone();
        bad.v = bad.v.iter().map(|x| x + 10.0).collect();
        assert!(!check_certificate(&q, &bad, &[r.point.clone()]));
    }

    #[test]
    fn optimality_condition_examples() {
        assert!(delta_optimality_check(0.5, 0.0, 0.5));
        assert!(!delta_optimality_check(0.5, 0.0, 0.49));
    }

    #[test]
    fn rockafellar_examples() {
        let x = [2.0, -0.3, 0.7];
        let u = exact_prox_l1(&x, &[0.0; 3], 0.5, 1.0).unwrap();
        assert!(rockafellar_membership(&x, 0.0, &u, 0.5).unwrap());
        // u = x outside the dead zone: residual is lambda per coordinate.
        let x = [2.0, -3.0];
        assert!(!rockafellar_membership(&x, 0.0, &x, 0.5).unwrap());
    }

    #[test]
    fn embedding_examples() {
        assert_eq!(gradient_error_embedding(0.0, 0.0).unwrap(), 0.0);
        assert!((gradient_error_embedding(0.02, 0.1).unwrap() - 0.045).abs() < 1e-15);
        assert!(gradient_error_embedding(-1.0, 0.0).is_err());
    }

    #[test]
    fn lipschitz_rhs_examples() {
        let m = Metric::identity(2);
        let z = [0.0, 0.0];
        assert_eq!(lipschitz_bound_rhs(&m, &z, &z, &z, &z, 0.0, 0.0).unwrap(), 0.0);
        let v = lipschitz_bound_rhs(&m, &z, &z, &z, &z, 2.0, 0.0).unwrap();
        assert!((v - 2.414213562373095).abs() < 1e-12);
        let v = lipschitz_bound_rhs(&m, &z, &[3.0, 4.0], &[1.0, 0.0], &z, 0.0, 0.0).unwrap();
        assert!((v - 6.0).abs() < 1e-12);
    }
}
