//! Derivative-free local minimization.
//!
//! The default method is a model-based trust region in the style of Powell's
//! NEWUOA: `2n+1` interpolation points, a quadratic model whose Hessian changes
//! by the least Frobenius norm at each rebuild, and a two-radius scheme (`rho`
//! bounds the resolution, `delta` the step). Nelder-Mead is kept as a fallback.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TrustRegion,
    NelderMead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalOptions {
    /// Initial trust-region radius (or simplex edge).
    pub initial_step: f64,
    /// Relative tolerance on both parameter and objective changes.
    pub rel_tol: f64,
    /// Evaluation cap; `None` means `10000 * dim`.
    pub max_evals: Option<usize>,
    pub method: Method,
}

impl LocalOptions {
    pub fn for_size(n: usize) -> Self {
        Self { initial_step: 0.01 / n as f64, rel_tol: 1e-8, max_evals: None, method: Method::TrustRegion }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    /// The evaluation cap stopped the search; `x` is the best point seen.
    pub hit_eval_cap: bool,
    pub method: Method,
}

enum Stop {
    Cap,
    Fail(LabsError),
}

impl From<LabsError> for Stop {
    fn from(e: LabsError) -> Self {
        Stop::Fail(e)
    }
}

struct Counted<F> {
    f: F,
    evals: usize,
    cap: usize,
    best_x: Vec<f64>,
    best_f: f64,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> std::result::Result<f64, Stop> {
        if self.evals >= self.cap {
            return Err(Stop::Cap);
        }
        self.evals += 1;
        let v = (self.f)(x)?;
        if !v.is_finite() {
            return Err(Stop::Fail(LabsError::Objective(format!("non-finite objective value {v} at {x:?}"))));
        }
        if v < self.best_f {
            self.best_f = v;
            self.best_x = x.to_vec();
        }
        Ok(v)
    }
}

/// Minimizes `f` from `x0`. Deterministic for a deterministic objective.
pub fn minimize<F>(f: F, x0: &[f64], opts: &LocalOptions) -> Result<LocalResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if x0.is_empty() {
        return invalid("cannot optimize over zero parameters");
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite starting point");
    }
    if !(opts.initial_step > 0.0 && opts.initial_step.is_finite()) {
        return invalid(format!("initial step must be positive, got {}", opts.initial_step));
    }
    if !(opts.rel_tol > 0.0) {
        return invalid(format!("relative tolerance must be positive, got {}", opts.rel_tol));
    }
    let cap = opts.max_evals.unwrap_or(10_000 * x0.len()).max(1);
    let mut counted = Counted { f, evals: 0, cap, best_x: x0.to_vec(), best_f: f64::INFINITY };
    let mut method = opts.method;
    let outcome = match method {
        Method::TrustRegion => match trust_region(&mut counted, x0, opts) {
            Err(Stop::Fail(LabsError::Internal(msg))) => {
                debug!("trust region gave up ({msg}); continuing with Nelder-Mead");
                method = Method::NelderMead;
                let start = if counted.best_f.is_finite() { counted.best_x.clone() } else { x0.to_vec() };
                nelder_mead(&mut counted, &start, opts)
            }
            other => other,
        },
        Method::NelderMead => nelder_mead(&mut counted, x0, opts),
    };
    let hit_eval_cap = match outcome {
        Ok(()) => false,
        Err(Stop::Cap) => {
            warn!("evaluation cap of {cap} reached; returning the best point found");
            true
        }
        Err(Stop::Fail(e)) => return Err(e),
    };
    debug!("local optimization: {} evaluations, f = {}", counted.evals, counted.best_f);
    Ok(LocalResult { x: counted.best_x, f: counted.best_f, evaluations: counted.evals, hit_eval_cap, method })
}

/// Quadratic model around `center` plus the inverse KKT matrix, which holds
/// the Lagrange functions of the interpolation set in scaled coordinates.
struct Model {
    center: DVector<f64>,
    scale: f64,
    g: DVector<f64>,
    h: DMatrix<f64>,
    scaled_points: Vec<DVector<f64>>,
    kkt_inv: DMatrix<f64>,
}

impl Model {
    fn build(points: &[DVector<f64>], fvals: &[f64], kopt: usize, h_old: &DMatrix<f64>) -> std::result::Result<Self, Stop> {
        let m = points.len();
        let n = points[0].len();
        let center = points[kopt].clone();
        let scale = points.iter().map(|y| (y - &center).norm()).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Err(Stop::Fail(LabsError::Internal("interpolation points collapsed".into())));
        }
        let scaled_points: Vec<DVector<f64>> = points.iter().map(|y| (y - &center) / scale).collect();
        let h_old_scaled = h_old * (scale * scale);
        let dim = m + n + 1;
        let mut w = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..m {
            for j in 0..m {
                let d = scaled_points[i].dot(&scaled_points[j]);
                w[(i, j)] = 0.5 * d * d;
            }
            w[(i, m)] = 1.0;
            w[(m, i)] = 1.0;
            for k in 0..n {
                w[(i, m + 1 + k)] = scaled_points[i][k];
                w[(m + 1 + k, i)] = scaled_points[i][k];
            }
        }
        let kkt_inv = match w.clone().try_inverse() {
            Some(inv) if inv.iter().all(|v| v.is_finite()) => inv,
            _ => w
                .pseudo_inverse(1e-13)
                .map_err(|e| Stop::Fail(LabsError::Internal(format!("singular interpolation system: {e}"))))?,
        };
        let fopt = fvals[kopt];
        let mut rhs = DVector::<f64>::zeros(dim);
        for i in 0..m {
            let s = &scaled_points[i];
            rhs[i] = fvals[i] - fopt - 0.5 * s.dot(&(&h_old_scaled * s));
        }
        let sol = &kkt_inv * rhs;
        let mut h_scaled = h_old_scaled;
        for i in 0..m {
            let s = &scaled_points[i];
            h_scaled += sol[i] * s * s.transpose();
        }
        let g_scaled = sol.rows(m + 1, n).into_owned();
        if h_scaled.iter().chain(g_scaled.iter()).any(|v| !v.is_finite()) {
            return Err(Stop::Fail(LabsError::Internal("non-finite quadratic model".into())));
        }
        Ok(Self {
            g: g_scaled / scale,
            h: h_scaled / (scale * scale),
            center,
            scale,
            scaled_points,
            kkt_inv,
        })
    }

    /// Value of the `t`-th Lagrange function at `x`.
    fn lagrange(&self, t: usize, x: &DVector<f64>) -> f64 {
        let m = self.scaled_points.len();
        let n = x.len();
        let s = (x - &self.center) / self.scale;
        let col = self.kkt_inv.column(t);
        let mut v = col[m];
        for k in 0..n {
            v += col[m + 1 + k] * s[k];
        }
        for (i, y) in self.scaled_points.iter().enumerate() {
            let d = y.dot(&s);
            v += 0.5 * col[i] * d * d;
        }
        v
    }

    /// Gradient of the `t`-th Lagrange function at the model center, in
    /// unscaled coordinates.
    fn lagrange_gradient_at_center(&self, t: usize) -> DVector<f64> {
        let m = self.scaled_points.len();
        let n = self.center.len();
        DVector::from_iterator(n, (0..n).map(|k| self.kkt_inv[(m + 1 + k, t)])) / self.scale
    }

    fn predicted_decrease(&self, s: &DVector<f64>) -> f64 {
        -(self.g.dot(s) + 0.5 * s.dot(&(&self.h * s)))
    }
}

/// Minimizes `g.s + s.H.s/2` over `|s| <= radius`.
fn trust_region_step(g: &DVector<f64>, h: &DMatrix<f64>, radius: f64) -> DVector<f64> {
    let n = g.len();
    let eig = SymmetricEigen::new(h.clone());
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let gt = q.transpose() * g;
    let lmin = lam.iter().cloned().fold(f64::INFINITY, f64::min);
    let step_norm = |sigma: f64| -> f64 {
        (0..n).map(|i| {
            let d = lam[i] + sigma;
            if d > 0.0 { (gt[i] / d).powi(2) } else if gt[i] == 0.0 { 0.0 } else { f64::INFINITY }
        }).sum::<f64>().sqrt()
    };
    let step_at = |sigma: f64| -> DVector<f64> {
        let coeffs = DVector::from_iterator(n, (0..n).map(|i| {
            let d = lam[i] + sigma;
            if d > 0.0 { -gt[i] / d } else { 0.0 }
        }));
        q * coeffs
    };
    let scale_tol = 1e-12 * (lam.amax() + 1.0);
    if lmin > scale_tol && step_norm(0.0) <= radius {
        return step_at(0.0);
    }
    let lo0 = (-lmin).max(0.0);
    // hard case: the gradient has no weight on the lowest eigenspace
    let lo_norm = step_norm(lo0 + 1e-15 * (1.0 + lo0));
    if lo_norm < radius {
        let mut s = step_at(lo0 + 1e-15 * (1.0 + lo0));
        let imin = (0..n).min_by(|&a, &b| lam[a].total_cmp(&lam[b])).unwrap_or(0);
        let v = q.column(imin).into_owned();
        let sv = s.dot(&v);
        let ss = s.norm_squared();
        // solve |s + tau v| = radius for the root with larger |tau|
        let disc = (sv * sv + radius * radius - ss).max(0.0);
        let tau = -sv + disc.sqrt();
        s += v * tau;
        return s;
    }
    let mut lo = lo0;
    let mut hi = lo0 + g.norm() / radius + lam.amax() + 1e-300;
    while step_norm(hi) > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if step_norm(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    step_at(hi)
}

fn trust_region<F: FnMut(&[f64]) -> Result<f64>>(
    fc: &mut Counted<F>,
    x0: &[f64],
    opts: &LocalOptions,
) -> std::result::Result<(), Stop> {
    let n = x0.len();
    let rhobeg = opts.initial_step;
    let x0v = DVector::from_column_slice(x0);
    let rhoend = opts.rel_tol * x0v.norm().max(rhobeg);
    let mut points = vec![x0v.clone()];
    let mut fvals = vec![fc.eval(x0)?];
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let mut y = x0v.clone();
            y[k] += sign * rhobeg;
            fvals.push(fc.eval(y.as_slice())?);
            points.push(y);
        }
    }
    let mut h_old = DMatrix::<f64>::zeros(n, n);
    let mut rho = rhobeg;
    let mut delta = rhobeg;
    let mut small_gains = 0usize;

    let argmin = |fv: &[f64]| (0..fv.len()).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap();

    loop {
        let kopt = argmin(&fvals);
        let model = Model::build(&points, &fvals, kopt, &h_old)?;
        h_old = model.h.clone();
        let fopt = fvals[kopt];
        let xopt = points[kopt].clone();

        let s = trust_region_step(&model.g, &model.h, delta);
        let snorm = s.norm();

        if snorm < 0.5 * rho {
            // the model is confident at this resolution: fix geometry or refine
            if let Some(t) = far_point(&points, &xopt, 2.0 * rho.max(delta)) {
                geometry_step(fc, &model, &mut points, &mut fvals, t, rho)?;
                continue;
            }
            if rho <= rhoend {
                return Ok(());
            }
            let next = reduce_rho(rho, rhoend);
            delta = (0.5 * rho).max(next);
            rho = next;
            continue;
        }

        let xnew = &xopt + &s;
        let fnew = fc.eval(xnew.as_slice())?;
        let pred = model.predicted_decrease(&s);
        let ratio = if pred > 0.0 { (fopt - fnew) / pred } else { -1.0 };
        delta = if ratio <= 0.1 {
            (0.5 * delta).min(snorm)
        } else if ratio <= 0.7 {
            (0.5 * delta).max(snorm)
        } else {
            (0.5 * delta).max(2.0 * snorm)
        };
        if delta <= 1.5 * rho {
            delta = rho;
        }

        // replace the point whose Lagrange function is largest at xnew,
        // weighted towards distant points
        let improved = fnew < fopt;
        let mut best_t = None;
        let mut best_w = 0.0;
        for t in 0..points.len() {
            if !improved && t == kopt {
                continue;
            }
            let dist = (&points[t] - &xnew).norm();
            let w = model.lagrange(t, &xnew).abs() * (dist / delta).powi(2).max(1.0);
            if w > best_w {
                best_w = w;
                best_t = Some(t);
            }
        }
        if let Some(t) = best_t {
            points[t] = xnew.clone();
            fvals[t] = fnew;
        }

        if improved {
            let gain = fopt - fnew;
            if gain <= opts.rel_tol * fopt.abs() {
                small_gains += 1;
                if small_gains >= 3 {
                    return Ok(());
                }
            } else {
                small_gains = 0;
            }
            if snorm <= opts.rel_tol * xnew.norm() {
                return Ok(());
            }
        }

        if ratio < 0.1 {
            let kopt = argmin(&fvals);
            let xopt = points[kopt].clone();
            if let Some(t) = far_point(&points, &xopt, 2.0 * delta) {
                let model = Model::build(&points, &fvals, kopt, &h_old)?;
                let radius = (0.1 * (&points[t] - &xopt).norm()).min(delta).max(rho);
                geometry_step(fc, &model, &mut points, &mut fvals, t, radius)?;
            } else if delta <= rho {
                if rho <= rhoend {
                    return Ok(());
                }
                let next = reduce_rho(rho, rhoend);
                delta = (0.5 * rho).max(next);
                rho = next;
            }
        }
    }
}

fn reduce_rho(rho: f64, rhoend: f64) -> f64 {
    let ratio = rho / rhoend;
    if ratio <= 16.0 {
        rhoend
    } else if ratio <= 250.0 {
        ratio.sqrt() * rhoend
    } else {
        0.1 * rho
    }
}

fn far_point(points: &[DVector<f64>], xopt: &DVector<f64>, limit: f64) -> Option<usize> {
    let (t, dist) = points
        .iter()
        .enumerate()
        .map(|(t, y)| (t, (y - xopt).norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    (dist > limit).then_some(t)
}

/// Moves point `t` to where its Lagrange function is largest among a few
/// candidates on the sphere of `radius` around the model center.
fn geometry_step<F: FnMut(&[f64]) -> Result<f64>>(
    fc: &mut Counted<F>,
    model: &Model,
    points: &mut [DVector<f64>],
    fvals: &mut [f64],
    t: usize,
    radius: f64,
) -> std::result::Result<(), Stop> {
    let center = &model.center;
    let mut dirs = Vec::new();
    let towards = &points[t] - center;
    if towards.norm() > 0.0 {
        dirs.push(towards.normalize());
    }
    let grad = model.lagrange_gradient_at_center(t);
    if grad.norm() > 0.0 {
        dirs.push(grad.normalize());
    }
    if dirs.is_empty() {
        let mut e = DVector::zeros(center.len());
        e[0] = 1.0;
        dirs.push(e);
    }
    let mut best = None;
    let mut best_val = -1.0;
    for d in dirs {
        for sign in [1.0, -1.0] {
            let cand = center + &d * (sign * radius);
            let v = model.lagrange(t, &cand).abs();
            if v > best_val {
                best_val = v;
                best = Some(cand);
            }
        }
    }
    let cand = best.expect("at least one candidate direction");
    fvals[t] = fc.eval(cand.as_slice())?;
    points[t] = cand;
    Ok(())
}

fn nelder_mead<F: FnMut(&[f64]) -> Result<f64>>(
    fc: &mut Counted<F>,
    x0: &[f64],
    opts: &LocalOptions,
) -> std::result::Result<(), Stop> {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut y = x0.to_vec();
        y[k] += opts.initial_step;
        simplex.push(y);
    }
    let mut fv = Vec::with_capacity(n + 1);
    for y in &simplex {
        fv.push(fc.eval(y)?);
    }
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();

        let f_spread = fv[n] - fv[0];
        let x_spread = simplex[1..]
            .iter()
            .map(|y| y.iter().zip(&simplex[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let xnorm = simplex[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        if x_spread <= opts.rel_tol * xnorm.max(opts.initial_step) || f_spread <= opts.rel_tol * fv[0].abs() {
            return Ok(());
        }

        let mut centroid = vec![0.0; n];
        for y in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(y) {
                *c += v / n as f64;
            }
        }
        let reflected = combine(&centroid, &simplex[n], -1.0);
        let fr = fc.eval(&reflected)?;
        if fr < fv[0] {
            let expanded = combine(&centroid, &simplex[n], -2.0);
            let fe = fc.eval(&expanded)?;
            if fe < fr {
                simplex[n] = expanded;
                fv[n] = fe;
            } else {
                simplex[n] = reflected;
                fv[n] = fr;
            }
        } else if fr < fv[n - 1] {
            simplex[n] = reflected;
            fv[n] = fr;
        } else {
            let (contracted, fc_val) = if fr < fv[n] {
                let c = combine(&centroid, &simplex[n], -0.5);
                let v = fc.eval(&c)?;
                (c, v)
            } else {
                let c = combine(&centroid, &simplex[n], 0.5);
                let v = fc.eval(&c)?;
                (c, v)
            };
            if fc_val < fv[n].min(fr) {
                simplex[n] = contracted;
                fv[n] = fc_val;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = combine(&best, &simplex[i], 0.5);
                    fv[i] = fc.eval(&simplex[i])?;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(c: &[f64]) -> impl FnMut(&[f64]) -> Result<f64> + '_ {
        move |x: &[f64]| Ok(x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum())
    }

    fn opts(method: Method) -> LocalOptions {
        LocalOptions { initial_step: 0.01, rel_tol: 1e-8, max_evals: None, method }
    }

    #[test]
    fn quadratic_bowl_both_methods() {
        let c = [0.3, -0.2, 0.15, 0.05];
        for method in [Method::TrustRegion, Method::NelderMead] {
            let r = minimize(bowl(&c), &[0.25, -0.1, 0.2, 0.0], &opts(method)).unwrap();
            let err: f64 = r.x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-6, "{method:?}: {err}");
            assert!(!r.hit_eval_cap);
        }
    }

    #[test]
    fn rosenbrock_trust_region() {
        let rosen = |x: &[f64]| Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let r = minimize(rosen, &[-1.2, 1.0], &LocalOptions { initial_step: 0.1, ..opts(Method::TrustRegion) }).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn trust_region_is_frugal_on_quadratics() {
        let c = [1.0, 2.0];
        let r = minimize(bowl(&c), &[0.0, 0.0], &LocalOptions { initial_step: 0.5, ..opts(Method::TrustRegion) }).unwrap();
        assert!(r.evaluations < 200, "{}", r.evaluations);
    }

    #[test]
    fn deterministic() {
        let c = [0.1, 0.7, -0.3];
        let a = minimize(bowl(&c), &[0.0; 3], &opts(Method::TrustRegion)).unwrap();
        let b = minimize(bowl(&c), &[0.0; 3], &opts(Method::TrustRegion)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_cap_returns_best_so_far() {
        let c = [5.0, 5.0];
        let r = minimize(bowl(&c), &[0.0, 0.0], &LocalOptions { max_evals: Some(10), ..opts(Method::TrustRegion) }).unwrap();
        assert!(r.hit_eval_cap);
        assert_eq!(r.evaluations, 10);
        assert!(r.f < 50.0);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |x: &[f64]| Ok(if x[0] > 0.005 { f64::NAN } else { -x[0] });
        let err = minimize(f, &[0.0], &opts(Method::TrustRegion)).unwrap_err();
        assert!(matches!(err, LabsError::Objective(_)));
    }

    #[test]
    fn trust_region_subproblem_cases() {
        // convex, interior Newton step
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let s = trust_region_step(&g, &h, 10.0);
        assert!((s[0] + 0.5).abs() < 1e-12);
        // boundary
        let s = trust_region_step(&g, &h, 0.1);
        assert!((s.norm() - 0.1).abs() < 1e-10 && s[0] < 0.0);
        // indefinite hard case: zero gradient, negative curvature along y
        let g0 = DVector::from_vec(vec![0.0, 0.0]);
        let hi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let s = trust_region_step(&g0, &hi, 0.3);
        assert!((s.norm() - 0.3).abs() < 1e-10 && s[1].abs() > 0.29);
    }
}
