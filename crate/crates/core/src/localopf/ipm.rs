//! Dense primal-dual interior-point method for smooth problems
//! `min f(x)  s.t.  g(x) = 0,  h(x) <= 0`, with slacks on the inequalities.

use nalgebra::{DMatrix, DVector};

/// Values and first derivatives at a point. Jacobians are row-per-constraint.
pub struct Eval {
    pub f: f64,
    pub df: DVector<f64>,
    pub g: DVector<f64>,
    pub dg: DMatrix<f64>,
    pub h: DVector<f64>,
    pub dh: DMatrix<f64>,
}

pub trait Nlp {
    fn n_vars(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Eval;
    /// Hessian of `f + lamᵀg + muᵀh`.
    fn hessian(&self, x: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: DVector<f64>,
    pub lam: DVector<f64>,
    pub mu: DVector<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Largest of the feasibility, stationarity and complementarity measures.
    pub residual: f64,
    pub converged: bool,
}

const XI: f64 = 0.99995;
const SIGMA: f64 = 0.1;
const Z0: f64 = 1.0;

pub fn solve(nlp: &impl Nlp, x0: DVector<f64>, tol: f64, max_iter: usize) -> Option<IpmResult> {
    let mut x = x0;
    let mut ev = nlp.eval(&x);
    let (neq, niq) = (ev.g.len(), ev.h.len());
    let nx = nlp.n_vars();
    let mut gamma = 1.0;
    let mut z = DVector::from_element(niq, Z0);
    let mut mu = DVector::from_element(niq, Z0);
    for i in 0..niq {
        if ev.h[i] < -Z0 {
            z[i] = -ev.h[i];
        }
        if gamma / z[i] > Z0 {
            mu[i] = gamma / z[i];
        }
    }
    let mut lam = DVector::zeros(neq);
    let mut f_prev = ev.f;

    let measures = |ev: &Eval, x: &DVector<f64>, z: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>, f_prev: f64| {
        let lx = &ev.df + ev.dg.transpose() * lam + ev.dh.transpose() * mu;
        let maxh = ev.h.iter().copied().fold(0.0f64, f64::max);
        let feas = ev.g.amax().max(maxh) / (1.0 + x.amax().max(z.amax()));
        let grad = lx.amax() / (1.0 + lam.amax().max(mu.amax()));
        let comp = z.dot(mu) / (1.0 + x.amax());
        let cost = (ev.f - f_prev).abs() / (1.0 + f_prev.abs());
        (feas, grad, comp, cost, lx)
    };

    for it in 0..=max_iter {
        let (feas, grad, comp, cost, lx) = measures(&ev, &x, &z, &lam, &mu, f_prev);
        let residual = feas.max(grad).max(comp);
        if !residual.is_finite() {
            return None;
        }
        if feas < tol && grad < tol && comp < tol && (it > 0 && cost < tol || residual < 1e-3 * tol) {
            return Some(IpmResult { x, lam, mu, f: ev.f, iterations: it, residual, converged: true });
        }
        if it == max_iter {
            return Some(IpmResult { x, lam, mu, f: ev.f, iterations: it, residual, converged: false });
        }

        let lxx = nlp.hessian(&x, &lam, &mu);
        // M = Lxx + dhᵀ diag(mu/z) dh,  N = Lx + dhᵀ (mu∘h + γ)/z
        let w = mu.component_div(&z);
        let mut scaled = ev.dh.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let m = &lxx + ev.dh.transpose() * &scaled;
        let t = DVector::from_fn(niq, |i, _| (mu[i] * ev.h[i] + gamma) / z[i]);
        let nvec = &lx + ev.dh.transpose() * t;

        let dim = nx + neq;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (nx, nx)).copy_from(&m);
        kkt.view_mut((0, nx), (nx, neq)).copy_from(&ev.dg.transpose());
        kkt.view_mut((nx, 0), (neq, nx)).copy_from(&ev.dg);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, nx).copy_from(&(-&nvec));
        rhs.rows_mut(nx, neq).copy_from(&(-&ev.g));
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dx = sol.rows(0, nx).into_owned();
        let dlam = sol.rows(nx, neq).into_owned();
        let dz = -&ev.h - &z - &ev.dh * &dx;
        let dmu = DVector::from_fn(niq, |i, _| -mu[i] + (gamma - mu[i] * dz[i]) / z[i]);

        let ratio = |v: &DVector<f64>, d: &DVector<f64>| {
            v.iter()
                .zip(d.iter())
                .filter(|(_, &di)| di < 0.0)
                .map(|(&vi, &di)| vi / -di)
                .fold(f64::INFINITY, f64::min)
        };
        let ap = (XI * ratio(&z, &dz)).min(1.0);
        let ad = (XI * ratio(&mu, &dmu)).min(1.0);
        x += ap * dx;
        z += ap * dz;
        lam += ad * dlam;
        mu += ad * dmu;
        if niq > 0 {
            gamma = SIGMA * z.dot(&mu) / niq as f64;
        }
        f_prev = ev.f;
        ev = nlp.eval(&x);
    }
    unreachable!()
}
