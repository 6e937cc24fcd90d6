use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, RowVector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fim::Dims;
use crate::geometry::{unit_jacobian, Vec3, SPEED_OF_LIGHT};
use crate::scene::RisSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when `max |J^T r|` falls below this fraction of its starting value.
    pub gradient_tol: f64,
    /// Stop when a proposed step is shorter than `step_tol * (|x| + step_tol)`.
    pub step_tol: f64,
    /// Initial Levenberg damping, relative to the largest diagonal entry of
    /// `J^T J`.
    pub damping_init: f64,
    pub multistart: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-12,
            step_tol: 1e-9,
            damping_init: 1e-12,
            multistart: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: DVector<f64>,
    /// `(J^T J)^-1` at the optimum (pseudo-inverse when singular).
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub residual_norm: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub id: String,
    pub position: Vec3,
    /// Covariance proxy; absent for closed-form solvers.
    pub covariance: Option<Matrix3<f64>>,
    pub converged: bool,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl Estimate {
    fn closed_form(id: &str, position: Vec3) -> Self {
        Self {
            id: id.to_string(),
            position,
            covariance: None,
            converged: true,
            residual_norm: 0.0,
            iterations: 0,
        }
    }
}

fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = m.clone().cholesky() {
        return c.inverse();
    }
    let e = m.clone().symmetric_eigen();
    let max = e.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &v) in e.eigenvalues.iter().enumerate() {
        if v > 1e-12 * max {
            let c = e.eigenvectors.column(k);
            out += c * c.transpose() / v;
        }
    }
    out
}

/// Levenberg-damped Gauss-Newton.
pub fn gauss_newton<R, J>(
    residual: R,
    jacobian: J,
    x0: &DVector<f64>,
    options: &SolverOptions,
) -> Result<Solution>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut x = x0.clone();
    let mut r = residual(&x);
    if r.len() < x.len() {
        return Err(Error::Underdetermined(format!(
            "{} residuals for {} unknowns",
            r.len(),
            x.len()
        )));
    }
    let mut cost = r.norm_squared();
    let mut lambda = options.damping_init;
    let mut accepted = 0;
    let finish =
        |x: DVector<f64>, jac: &DMatrix<f64>, r: &DVector<f64>, it: usize, acc: usize| Solution {
            covariance: pinv_sym(&(jac.transpose() * jac)),
            residual_norm: r.norm(),
            x,
            converged: true,
            iterations: it,
            accepted_steps: acc,
        };
    let mut jac = jacobian(&x);
    // Relative to the starting gradient so the test ignores residual scaling.
    let mut g_ref = None;
    for it in 0..options.max_iterations {
        let g = jac.transpose() * &r;
        let g0 = *g_ref.get_or_insert(g.amax());
        if g.amax() <= options.gradient_tol * g0 {
            return Ok(finish(x, &jac, &r, it, accepted));
        }
        let jtj = jac.transpose() * &jac;
        let scale = (0..jtj.nrows())
            .map(|i| jtj[(i, i)])
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let a = &jtj + DMatrix::identity(x.len(), x.len()) * (lambda * scale);
        let step = match a.clone().cholesky() {
            Some(c) => -c.solve(&g),
            None => -pinv_sym(&a) * &g,
        };
        if step.norm() < options.step_tol * (x.norm() + options.step_tol) {
            return Ok(finish(x, &jac, &r, it, accepted));
        }
        let cand = &x + &step;
        let rc = residual(&cand);
        let cc = rc.norm_squared();
        if cc.is_finite() && cc <= cost {
            x = cand;
            r = rc;
            cost = cc;
            jac = jacobian(&x);
            lambda = (lambda / 10.0).max(1e-300);
            accepted += 1;
        } else {
            lambda *= 10.0;
            if lambda > 1e300 {
                break;
            }
        }
    }
    Err(Error::NoConvergence(options.max_iterations))
}

/// Hyperbola/ray intersection: the UE lies on `ris + s * aod`, `s > 0`, and
/// the RIS path is `c * tdoa` longer than the direct path from the beacon.
pub fn locate_a1(tdoa: f64, aod: &Vec3, beacon: &Vec3, ris: &Vec3) -> Result<Estimate> {
    let u = aod.normalize();
    let d_br = (ris - beacon).norm();
    let excess = SPEED_OF_LIGHT * tdoa;
    let f = |s: f64| d_br + s - (ris + u * s - beacon).norm() - excess;
    let f0 = f(0.0);
    if f0.abs() <= 1e-12 * d_br.max(1.0) {
        return Ok(Estimate::closed_form("", *ris));
    }
    if f0 > 0.0 {
        return Err(Error::NoIntersection);
    }
    let mut hi = d_br.max(1.0);
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e7 {
            return Err(Error::NoIntersection);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..20 {
        let p = ris + u * s;
        let df = 1.0 - u.dot(&(p - beacon).normalize());
        if df <= 0.0 {
            break;
        }
        let next = (s - f(s) / df).clamp(lo, hi);
        let done = (next - s).abs() < 1e-15 * s.max(1.0);
        s = next;
        if done {
            break;
        }
    }
    Ok(Estimate::closed_form("", ris + u * s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

/// Least-squares intersection of AOD rays. In planar mode only `x, y` are
/// solved and the height is the mean origin height.
pub fn locate_a2(rays: &[Ray], dims: Dims) -> Result<Estimate> {
    if rays.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "{} AOD line(s), need 2",
            rays.len()
        )));
    }
    let d = dims.count();
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for ray in rays {
        let mut u = ray.direction;
        if d == 2 {
            u.z = 0.0;
        }
        let u = u.normalize();
        let p = Matrix3::identity() - u * u.transpose();
        let p = p.view((0, 0), (d, d)).into_owned();
        let o = ray.origin.rows(0, d).into_owned();
        a += &p;
        b += &p * o;
    }
    let ev = a.clone().symmetric_eigen().eigenvalues;
    if ev.min() <= 1e-9 * ev.max() {
        return Err(Error::DegenerateGeometry("AOD lines are parallel".into()));
    }
    let x = a.clone().cholesky().expect("positive definite").solve(&b);
    let mut pos = Vec3::zeros();
    for k in 0..d {
        pos[k] = x[k];
    }
    if d == 2 {
        pos.z = rays.iter().map(|r| r.origin.z).sum::<f64>() / rays.len() as f64;
    }
    let residual: f64 = rays
        .iter()
        .map(|r| {
            let u = r.direction.normalize();
            let v = pos - r.origin;
            (v - u * u.dot(&v)).norm_squared()
        })
        .sum::<f64>()
        .sqrt();
    let inv = a.try_inverse().expect("checked above");
    let mut cov = Matrix3::zeros();
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] = inv[(i, j)];
        }
    }
    Ok(Estimate {
        id: String::new(),
        position: pos,
        covariance: Some(cov),
        converged: true,
        residual_norm: residual,
        iterations: 0,
    })
}

/// Measurements of one cooperative pair through the RIS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeasurement {
    pub tx: String,
    pub rx: String,
    /// RIS-path delay minus direct-path delay, seconds.
    pub delay_diff: f64,
    pub delay_diff_var: f64,
    pub nu: [f64; 2],
    pub nu_cov: Matrix2<f64>,
}

fn ue_order(meas: &[PairMeasurement]) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    for m in meas {
        for id in [&m.tx, &m.rx] {
            if !ids.contains(id) {
                ids.push(id.clone());
            }
        }
    }
    ids
}

/// Whitening for a pair: `delay scale`, `L^T` with `cov^-1 = L L^T`.
fn whiteners(m: &PairMeasurement) -> (f64, Matrix2<f64>) {
    let wd = 1.0 / m.delay_diff_var.sqrt();
    let wn = m
        .nu_cov
        .try_inverse()
        .and_then(|i| i.cholesky())
        .map(|c| c.l().transpose())
        .unwrap_or_else(Matrix2::identity);
    (wd, wn)
}

/// Whitened residuals and Jacobian of the cooperative model at stacked
/// positions `x` (3 per UE, in `ids` order).
pub fn b1_residuals(
    meas: &[PairMeasurement],
    ids: &[String],
    ris: &RisSpec,
    wavelength: f64,
    x: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let c = ris.pose.position;
    let s = ris.spacing / wavelength;
    let ay = ris.pose.orientation.axis_y().transpose();
    let az = ris.pose.orientation.axis_z().transpose();
    let mut r = DVector::zeros(3 * meas.len());
    let mut jac = DMatrix::zeros(3 * meas.len(), x.len());
    let pos = |k: usize| Vec3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
    for (row, m) in meas.iter().enumerate() {
        let i = ids.iter().position(|e| *e == m.tx).expect("known id");
        let j = ids.iter().position(|e| *e == m.rx).expect("known id");
        let (pi, pj) = (pos(i), pos(j));
        let (wd, wn) = whiteners(m);
        let di = pi - c;
        let dj = pj - c;
        let dij = pj - pi;
        let pred = (di.norm() + dj.norm() - dij.norm()) / SPEED_OF_LIGHT;
        let r0 = 3 * row;
        r[r0] = wd * (m.delay_diff - pred);
        let gi: RowVector3<f64> = (di.normalize() + dij.normalize()).transpose() / SPEED_OF_LIGHT;
        let gj: RowVector3<f64> = (dj.normalize() - dij.normalize()).transpose() / SPEED_OF_LIGHT;
        for k in 0..3 {
            jac[(r0, 3 * i + k)] -= wd * gi[k];
            jac[(r0, 3 * j + k)] -= wd * gj[k];
        }
        let sum = di.normalize() + dj.normalize();
        let nu = nalgebra::Vector2::new(s * ay.dot(&sum.transpose()), s * az.dot(&sum.transpose()));
        let e = nalgebra::Vector2::new(m.nu[0], m.nu[1]) - nu;
        let rw = wn * e;
        r[r0 + 1] = rw[0];
        r[r0 + 2] = rw[1];
        let (ji, jj) = (unit_jacobian(&pi, &c), unit_jacobian(&pj, &c));
        for (u_jac, col) in [(ji, i), (jj, j)] {
            let dy = s * ay * u_jac;
            let dz = s * az * u_jac;
            for q in 0..3 {
                let dnu = nalgebra::Vector2::new(dy[q], dz[q]);
                let dw = -(wn * dnu);
                jac[(r0 + 1, 3 * col + q)] += dw[0];
                jac[(r0 + 2, 3 * col + q)] += dw[1];
            }
        }
    }
    (r, jac)
}

/// Joint cooperative solve for every UE appearing in `meas`. Starts are
/// `init` (if given) followed by `options.multistart` random placements in
/// the part of `bounds` in front of the RIS. Solutions behind the RIS are
/// mirrored through its plane, which leaves every measurement unchanged.
pub fn locate_b1(
    meas: &[PairMeasurement],
    ris: &RisSpec,
    wavelength: f64,
    bounds: (Vec3, Vec3),
    init: Option<&[Vec3]>,
    options: &SolverOptions,
) -> Result<Vec<Estimate>> {
    let ids = ue_order(meas);
    if ids.len() < 3 {
        return Err(Error::Underdetermined(format!(
            "cooperative localization with one RIS needs at least three UEs, got {}",
            ids.len()
        )));
    }
    let n = ids.len();
    let mut starts: Vec<DVector<f64>> = Vec::new();
    if let Some(p) = init {
        if p.len() != n {
            return Err(Error::ShapeError(format!(
                "{} initial positions for {n} UEs",
                p.len()
            )));
        }
        starts.push(DVector::from_iterator(
            3 * n,
            p.iter().flat_map(|v| [v.x, v.y, v.z]),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (lo, hi) = bounds;
    let mut guard = 0;
    while starts.len() < options.multistart + init.is_some() as usize && guard < 10_000 {
        guard += 1;
        let mut v = Vec::with_capacity(3 * n);
        let mut ok = true;
        for _ in 0..n {
            let p = Vec3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            );
            ok &= ris.faces(&p) && (p - ris.pose.position).norm() > 1e-3;
            v.extend([p.x, p.y, p.z]);
        }
        if ok {
            starts.push(DVector::from_vec(v));
        }
    }
    let res = |x: &DVector<f64>| b1_residuals(meas, &ids, ris, wavelength, x).0;
    let jac = |x: &DVector<f64>| b1_residuals(meas, &ids, ris, wavelength, x).1;
    let mut best: Option<Solution> = None;
    for x0 in &starts {
        if let Ok(sol) = gauss_newton(res, jac, x0, options) {
            if best
                .as_ref()
                .is_none_or(|b| sol.residual_norm < b.residual_norm)
            {
                best = Some(sol);
            }
        }
    }
    let sol = best.ok_or(Error::NoConvergence(options.max_iterations))?;
    let normal = ris.boresight();
    let c = ris.pose.position;
    let behind = (0..n)
        .filter(|&k| {
            normal.dot(&(Vec3::new(sol.x[3 * k], sol.x[3 * k + 1], sol.x[3 * k + 2]) - c)) < 0.0
        })
        .count();
    let mirror = 2 * behind > n;
    Ok((0..n)
        .map(|k| {
            let mut p = Vec3::new(sol.x[3 * k], sol.x[3 * k + 1], sol.x[3 * k + 2]);
            if mirror {
                p -= 2.0 * normal * normal.dot(&(p - c));
            }
            let cov = sol.covariance.view((3 * k, 3 * k), (3, 3)).into_owned();
            Estimate {
                id: ids[k].clone(),
                position: p,
                covariance: Some(Matrix3::from_iterator(cov.iter().copied())),
                converged: sol.converged,
                residual_norm: sol.residual_norm,
                iterations: sol.iterations,
            }
        })
        .collect())
}

/// Monostatic RIS sensing: the back-scattered spatial frequency is
/// `2 (spacing / lambda) [u.y, u.z]` for the RIS-local direction `u` of the
/// UE, and the range is half the round-trip path.
pub fn locate_c1(
    round_trip_delay: f64,
    nu: [f64; 2],
    ris: &RisSpec,
    wavelength: f64,
) -> Result<Estimate> {
    let k = 2.0 * ris.spacing / wavelength;
    let (y, z) = (nu[0] / k, nu[1] / k);
    let r2 = y * y + z * z;
    if r2 > 1.0 {
        return Err(Error::InfeasibleFrequency(nu[0], nu[1]));
    }
    let u = ris
        .pose
        .orientation
        .apply(&Vec3::new((1.0 - r2).sqrt(), y, z));
    let range = SPEED_OF_LIGHT * round_trip_delay / 2.0;
    Ok(Estimate::closed_form("", ris.pose.position + u * range))
}
