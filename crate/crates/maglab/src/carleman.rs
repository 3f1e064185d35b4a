//! Carleman weights β = β̃ + K, φ = e^{λβ}/((T+t)(T−t)),
//! η = (e^{2λK} − e^{λβ})/((T+t)(T−t)), the conjugated operators M₁, M₂, the
//! weighted functional I(q) and the ratio sweeps that probe the Carleman and
//! Klibanov inequalities.
//!
//! Weighted integrals are evaluated with the factor e^{−2sη} rescaled by
//! e^{2s·min η(0,·)}, so nothing underflows for large s. Ratios are
//! unaffected; absolute values are recovered from `log_scale`.

use crate::error::{Error, Result};
use crate::grid::{axis_derivative, laplacian, normal_derivative_at, BoundarySubset, Grid, VectorField, C64};
use crate::hamiltonian::{fmt, Interval, Trajectory};
use crate::rng::{sym, SineSeries, Stream};
use std::f64::consts::PI;
use std::io::Write;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Base weight β̃ with closed-form gradient and Hessian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseWeight {
    /// |x − x₀|².
    Quadratic { x0: [f64; 2] },
    /// A constant; fails the gradient floor, kept as a negative control.
    Constant { c: f64 },
}

impl BaseWeight {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        match *self {
            BaseWeight::Quadratic { x0 } => (x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2),
            BaseWeight::Constant { c } => c,
        }
    }

    pub fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            BaseWeight::Quadratic { x0 } => [2.0 * (x[0] - x0[0]), 2.0 * (x[1] - x0[1])],
            BaseWeight::Constant { .. } => [0.0, 0.0],
        }
    }

    pub fn hessian(&self, dim: usize) -> [[f64; 2]; 2] {
        match *self {
            BaseWeight::Quadratic { .. } if dim == 2 => [[2.0, 0.0], [0.0, 2.0]],
            BaseWeight::Quadratic { .. } => [[2.0, 0.0], [0.0, 0.0]],
            BaseWeight::Constant { .. } => [[0.0; 2]; 2],
        }
    }

    pub fn laplacian(&self, dim: usize) -> f64 {
        let h = self.hessian(dim);
        h[0][0] + h[1][1]
    }
}

/// β̃ on a grid together with m, K = m‖β̃‖_∞ and the gradient floor.
#[derive(Clone, Debug)]
pub struct WeightBase {
    pub grid: Grid,
    pub kind: BaseWeight,
    pub m: f64,
    pub sup: f64,
    pub k: f64,
    /// min over nodes of |∇β̃|.
    pub c0: f64,
}

impl WeightBase {
    fn new(g: &Grid, kind: BaseWeight, m: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::config(format!("weight exponent m = {m} must exceed 1")));
        }
        let mut sup: f64 = 0.0;
        let mut c0 = f64::INFINITY;
        for p in 0..g.nodes() {
            let x = g.point(p);
            sup = sup.max(kind.value(x).abs());
            let d = kind.grad(x);
            c0 = c0.min((d[0] * d[0] + d[1] * d[1]).sqrt());
        }
        Ok(WeightBase { grid: g.clone(), kind, m, sup, k: m * sup, c0 })
    }

    pub fn beta(&self, p: usize) -> f64 {
        self.kind.value(self.grid.point(p)) + self.k
    }

    pub fn grad(&self, p: usize) -> [f64; 2] {
        self.kind.grad(self.grid.point(p))
    }

    /// ∂νβ = ∂νβ̃ at a boundary node.
    pub fn normal_derivative(&self, p: usize) -> f64 {
        let d = self.grad(p);
        let n = self.grid.normal(p);
        d[0] * n[0] + d[1] * n[1]
    }

    pub fn with_params(&self, lambda: f64, s: f64, t_final: f64) -> Result<CarlemanWeights> {
        if !(lambda > 0.0 && s >= 0.0 && t_final > 0.0) {
            return Err(Error::config("Carleman parameters need λ > 0, s ≥ 0, T > 0"));
        }
        Ok(CarlemanWeights { base: self.clone(), lambda, s, t_final })
    }
}

/// Quadratic base weight β̃ = |x − x₀|² with x₀ outside the closed domain.
pub fn build_beta(g: &Grid, x0: &[f64], m: f64) -> Result<WeightBase> {
    if x0.len() != g.dim() {
        return Err(Error::config("weight centre has the wrong dimension"));
    }
    let mut c = [0.0; 2];
    c[..g.dim()].copy_from_slice(x0);
    let inside = (0..g.dim()).all(|a| c[a] >= 0.0 && c[a] <= g.len(a));
    if inside {
        return Err(Error::config("weight centre x0 lies in the closed domain; the gradient floor would vanish"));
    }
    WeightBase::new(g, BaseWeight::Quadratic { x0: c }, m)
}

/// Constant base weight (negative control for the gradient floor).
pub fn constant_beta(g: &Grid, c: f64, m: f64) -> Result<WeightBase> {
    WeightBase::new(g, BaseWeight::Constant { c }, m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionCertificate {
    pub c0: f64,
    pub gamma_plus: Vec<usize>,
    pub gamma_minus: Vec<usize>,
    /// max of ∂νβ̃ over Γ⁻ (must be ≤ 0).
    pub max_dnu_minus: f64,
    pub lambda: f64,
    pub eps: f64,
    pub zeta_samples: usize,
    /// Whether ε came from the closed-form Hessian rather than sampling.
    pub exact_hessian: bool,
    /// Corner nodes whose two adjacent faces disagree on the sign of ∂νβ̃.
    pub ambiguous_corners: Vec<usize>,
    pub pass_a: bool,
    pub pass_b: bool,
    pub pass_c: bool,
}

impl AssumptionCertificate {
    pub fn pass(&self) -> bool {
        self.pass_a && self.pass_b && self.pass_c
    }
}

pub const ZETA_SAMPLES: usize = 64;

/// Gradient floor, boundary sign and pseudo-convexity checks for β̃ at the
/// given λ. Never fails; failing sub-conditions are recorded.
pub fn verify_assumption(base: &WeightBase, lambda: f64) -> AssumptionCertificate {
    let g = &base.grid;
    let (plus, minus) = split_boundary(base);
    let max_dnu_minus = minus.iter().map(|&p| base.normal_derivative(p)).fold(f64::NEG_INFINITY, f64::max);
    let hess = base.kind.hessian(g.dim());
    let mut sampled = f64::INFINITY;
    for p in 0..g.nodes() {
        let d = base.grad(p);
        for k in 0..ZETA_SAMPLES {
            let th = std::f64::consts::PI * k as f64 / ZETA_SAMPLES as f64;
            let z = if g.dim() == 1 { [1.0, 0.0] } else { [th.cos(), th.sin()] };
            let dz = d[0] * z[0] + d[1] * z[1];
            let q = hess[0][0] * z[0] * z[0] + 2.0 * hess[0][1] * z[0] * z[1] + hess[1][1] * z[1] * z[1];
            sampled = sampled.min(lambda * dz * dz + q);
        }
    }
    let (eps, exact) = match base.kind {
        BaseWeight::Quadratic { .. } => (2.0, true),
        BaseWeight::Constant { .. } => (sampled, false),
    };
    let mut corners = Vec::new();
    if g.dim() == 2 {
        for p in g.boundary() {
            let [i, j] = g.coords(p);
            let xe = i == 0 || i == g.n(0) - 1;
            let ye = j == 0 || j == g.n(1) - 1;
            if xe && ye {
                let d = base.grad(p);
                let nx = if i == 0 { -1.0 } else { 1.0 };
                let ny = if j == 0 { -1.0 } else { 1.0 };
                if (d[0] * nx > 0.0) != (d[1] * ny > 0.0) {
                    corners.push(p);
                }
            }
        }
    }
    AssumptionCertificate {
        c0: base.c0,
        gamma_plus: plus,
        gamma_minus: minus.clone(),
        max_dnu_minus,
        lambda,
        eps,
        zeta_samples: ZETA_SAMPLES,
        exact_hessian: exact,
        ambiguous_corners: corners,
        pass_a: base.c0 > 0.0,
        pass_b: minus.is_empty() || max_dnu_minus <= 0.0,
        pass_c: eps > 0.0 && sampled >= eps * (1.0 - 1e-12),
    }
}

fn split_boundary(base: &WeightBase) -> (Vec<usize>, Vec<usize>) {
    base.grid.boundary().into_iter().partition(|&p| base.normal_derivative(p) > 0.0)
}

/// Γ⁺ = {σ : ∂νβ̃(σ) > 0} and its complement Γ⁻.
pub fn compute_gamma_plus(base: &WeightBase) -> Result<(BoundarySubset, BoundarySubset)> {
    let (plus, minus) = split_boundary(base);
    if plus.is_empty() {
        return Err(Error::config("observed boundary is empty: no node has a positive normal derivative of the weight"));
    }
    let g = &base.grid;
    Ok((BoundarySubset::new(g, plus), BoundarySubset::new(g, minus)))
}

/// Closed-form weight values at one space-time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightValues {
    pub log_phi: f64,
    pub phi: f64,
    pub log_alpha: f64,
    pub eta: f64,
    pub dt_eta: f64,
    pub grad_eta: [f64; 2],
    pub grad_eta_sq: f64,
    pub lap_eta: f64,
}

/// Weights with parameters λ, s on the horizon (−T, T).
#[derive(Clone, Debug)]
pub struct CarlemanWeights {
    pub base: WeightBase,
    pub lambda: f64,
    pub s: f64,
    pub t_final: f64,
}

impl CarlemanWeights {
    /// log α = log(e^{2λK} − e^{λβ}).
    pub fn log_alpha(&self, p: usize) -> f64 {
        let l = self.lambda;
        2.0 * l * self.base.k + (-(l * (self.base.beta(p) - 2.0 * self.base.k)).exp()).ln_1p()
    }

    /// Lower bound α₀ = e^{2λK} − e^{λK(m+1)/m}, valid because β ≤ K(m+1)/m.
    pub fn alpha_floor(&self) -> f64 {
        let (l, k, m) = (self.lambda, self.base.k, self.base.m);
        (2.0 * l * k).exp() - (l * k * (m + 1.0) / m).exp()
    }

    pub fn eval(&self, t: f64, p: usize) -> Result<WeightValues> {
        let tt = self.t_final;
        if !(t.abs() < tt) {
            return Err(Error::Domain(format!("weights evaluated at |t| = {} ≥ T", t.abs())));
        }
        let l = self.lambda;
        let d = (tt + t) * (tt - t);
        let ld = d.ln();
        let lb = l * self.base.beta(p);
        let log_phi = lb - ld;
        let log_alpha = self.log_alpha(p);
        let eta = (log_alpha - ld).exp();
        let dt_eta = 2.0 * t * (log_alpha - 2.0 * ld).exp();
        let gb = self.base.grad(p);
        let c = -l * (lb - ld).exp();
        let grad_eta = [c * gb[0], c * gb[1]];
        let gb2 = gb[0] * gb[0] + gb[1] * gb[1];
        let lap_eta = c * (l * gb2 + self.base.kind.laplacian(self.base.grid.dim()));
        Ok(WeightValues { log_phi, phi: log_phi.exp(), log_alpha, eta, dt_eta, grad_eta, grad_eta_sq: c * c * gb2, lap_eta })
    }

    /// min over nodes of η(0, ·).
    pub fn eta_min(&self) -> f64 {
        let tt2 = self.t_final * self.t_final;
        (0..self.base.grid.nodes()).map(|p| self.log_alpha(p).exp() / tt2).fold(f64::INFINITY, f64::min)
    }

    /// log of the factor dropped from every weighted square: −2s·min η(0,·).
    pub fn log_scale(&self) -> f64 {
        -2.0 * self.s * self.eta_min()
    }
}

/// Space-time sampling on [−T, T] with 2N_t + 1 levels.
pub fn space_time(g: &Grid, t_final: f64, nt: usize, f: impl Fn(f64, [f64; 2]) -> C64) -> Trajectory {
    let tau = t_final / nt as f64;
    let snaps = (0..=2 * nt).map(|k| g.sample(|x| f((k as f64 - nt as f64) * tau, x))).collect();
    Trajectory { tau, interval: Interval::Symmetric, snaps }
}

fn check_symmetric(q: &Trajectory, g: &Grid) -> Result<()> {
    if q.interval != Interval::Symmetric {
        return Err(Error::Data("space-time field must cover [-T, T]".into()));
    }
    if q.snaps.iter().any(|s| s.len() != g.nodes()) {
        return Err(Error::config("space-time field does not match the grid"));
    }
    Ok(())
}

/// Time levels inside the cutoff |t| ≤ T − 2τ, with trapezoid weights.
fn time_quadrature(q: &Trajectory) -> Vec<(usize, f64)> {
    let last = q.snaps.len() - 1;
    if last < 6 {
        return Vec::new();
    }
    (2..=last - 2).map(|k| (k, if k == 2 || k == last - 2 { 0.5 * q.tau } else { q.tau })).collect()
}

/// Per-level scaled weight tables e^{−s(η − η_min)}, φ, and the derivatives.
struct Tables {
    damp: Vec<Vec<f64>>,
    vals: Vec<Vec<WeightValues>>,
}

fn tables(w: &CarlemanWeights, q: &Trajectory) -> Result<Tables> {
    let g = &w.base.grid;
    let em = w.eta_min();
    let mut damp = vec![Vec::new(); q.snaps.len()];
    let mut vals = vec![Vec::new(); q.snaps.len()];
    let last = q.snaps.len() - 1;
    for k in 1..last {
        let t = q.time(k);
        let v: Vec<WeightValues> = (0..g.nodes()).map(|p| w.eval(t, p)).collect::<Result<_>>()?;
        damp[k] = v.iter().map(|x| (-w.s * (x.eta - em)).exp()).collect();
        vals[k] = v;
    }
    Ok(Tables { damp, vals })
}

fn zero_field(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

/// Random smooth field on [−T, T] vanishing on Γ: three sine series
/// modulated by e^{i(νt+φ)}.
pub fn random_space_time(g: &Grid, rng: &mut Stream, t_final: f64, nt: usize) -> Trajectory {
    let terms: Vec<(SineSeries, SineSeries, f64, f64)> = (0..3)
        .map(|_| (SineSeries::random(g, rng, 3, 2.0), SineSeries::random(g, rng, 3, 2.0), 3.0 * sym(rng), PI * sym(rng)))
        .collect();
    space_time(g, t_final, nt, |t, x| terms.iter().map(|(a, b, nu, ph)| C64::new(a.eval(x), b.eval(x)) * C64::from_polar(1.0, nu * t + ph)).sum())
}

/// L q = i∂t q + Δq with centered time differences; zero on the first and
/// last level and on Γ.
pub fn apply_l(g: &Grid, q: &Trajectory) -> Result<Trajectory> {
    check_symmetric(q, g)?;
    let mut out = q.zeros_like();
    let last = q.snaps.len() - 1;
    for k in 1..last {
        let lap = laplacian(&q.snaps[k], g)?;
        out.snaps[k] = (0..g.nodes())
            .map(|p| if g.is_boundary(p) { C64::new(0.0, 0.0) } else { I * (q.snaps[k + 1][p] - q.snaps[k - 1][p]) / (2.0 * q.tau) + lap[p] })
            .collect();
    }
    Ok(out)
}

fn apply_m_with(w: &CarlemanWeights, tb: &Tables, z: &Trajectory, which: usize) -> Result<Trajectory> {
    let g = &w.base.grid;
    let s = w.s;
    let mut out = z.zeros_like();
    let last = z.snaps.len() - 1;
    for k in 1..last {
        let zk = &z.snaps[k];
        let v = &tb.vals[k];
        let mut o = zero_field(g.nodes());
        if which == 1 {
            let lap = laplacian(zk, g)?;
            for p in g.interior() {
                let p = *p;
                o[p] = I * (z.snaps[k + 1][p] - z.snaps[k - 1][p]) / (2.0 * z.tau) + lap[p] + zk[p] * (s * s * v[p].grad_eta_sq);
            }
        } else {
            let grads: Vec<Vec<C64>> = (0..g.dim()).map(|a| axis_derivative(zk, g, a)).collect();
            for p in g.interior() {
                let p = *p;
                let mut adv = C64::new(0.0, 0.0);
                for (a, gr) in grads.iter().enumerate() {
                    adv += gr[p] * v[p].grad_eta[a];
                }
                o[p] = I * zk[p] * (s * v[p].dt_eta) + adv * (2.0 * s) + zk[p] * (s * v[p].lap_eta);
            }
        }
        out.snaps[k] = o;
    }
    Ok(out)
}

/// M₁z = i∂t z + Δz + s²|∇η|²z.
pub fn apply_m1(w: &CarlemanWeights, z: &Trajectory) -> Result<Trajectory> {
    check_symmetric(z, &w.base.grid)?;
    apply_m_with(w, &tables(w, z)?, z, 1)
}

/// M₂z = is∂tη z + 2s∇η·∇z + sΔη z.
pub fn apply_m2(w: &CarlemanWeights, z: &Trajectory) -> Result<Trajectory> {
    check_symmetric(z, &w.base.grid)?;
    apply_m_with(w, &tables(w, z)?, z, 2)
}

/// e^{−s(η − η_min)} q, zero on the first and last level.
fn damped(tb: &Tables, q: &Trajectory) -> Trajectory {
    let mut out = q.zeros_like();
    for k in 1..q.snaps.len() - 1 {
        out.snaps[k] = q.snaps[k].iter().zip(&tb.damp[k]).map(|(v, d)| v * *d).collect();
    }
    out
}

/// e^{−sη}q with the rescaling factor e^{sη_min} applied.
pub fn conjugate(w: &CarlemanWeights, q: &Trajectory) -> Result<Trajectory> {
    check_symmetric(q, &w.base.grid)?;
    Ok(damped(&tables(w, q)?, q))
}

fn st_norm2(g: &Grid, f: &Trajectory, quad: &[(usize, f64)], interior_only: bool) -> f64 {
    let wts = g.weights();
    let mut s = 0.0;
    for &(k, wt) in quad {
        let mut acc = 0.0;
        for (p, v) in f.snaps[k].iter().enumerate() {
            if interior_only && g.is_boundary(p) {
                continue;
            }
            acc += wts[p] * v.norm_sqr();
        }
        s += wt * acc;
    }
    s
}

/// Relative conjugation residual ‖(M₁+M₂)(e^{−sη}q) − e^{−sη}Lq‖ / ‖e^{−sη}Lq‖
/// over interior nodes and the cutoff time window.
pub fn conjugation_residual(w: &CarlemanWeights, q: &Trajectory) -> Result<f64> {
    let g = &w.base.grid;
    check_symmetric(q, g)?;
    let tb = tables(w, q)?;
    let z = damped(&tb, q);
    let m1 = apply_m_with(w, &tb, &z, 1)?;
    let m2 = apply_m_with(w, &tb, &z, 2)?;
    let lq = damped(&tb, &apply_l(g, q)?);
    let mut diff = lq.zeros_like();
    for k in 0..diff.snaps.len() {
        diff.snaps[k] = (0..g.nodes()).map(|p| m1.snaps[k][p] + m2.snaps[k][p] - lq.snaps[k][p]).collect();
    }
    let quad = time_quadrature(q);
    let den = st_norm2(g, &lq, &quad, true);
    Ok(if den == 0.0 { 0.0 } else { (st_norm2(g, &diff, &quad, true) / den).sqrt() })
}

/// The four terms of I(q), each multiplied by e^{2sη_min}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IValue {
    pub zeroth: f64,
    pub gradient: f64,
    pub m1: f64,
    pub m2: f64,
    pub log_scale: f64,
}

impl IValue {
    pub fn total(&self) -> f64 {
        self.zeroth + self.gradient + self.m1 + self.m2
    }
}

/// I(q) = s³λ⁴‖e^{−sη}φ^{3/2}q‖² + sλ‖e^{−sη}φ^{1/2}|∇q|‖² + Σ_j‖M_j e^{−sη}q‖².
pub fn compute_i(w: &CarlemanWeights, q: &Trajectory) -> Result<IValue> {
    let g = &w.base.grid;
    check_symmetric(q, g)?;
    let tb = tables(w, q)?;
    compute_i_with(w, &tb, q)
}

fn compute_i_with(w: &CarlemanWeights, tb: &Tables, q: &Trajectory) -> Result<IValue> {
    let g = &w.base.grid;
    let (s, l) = (w.s, w.lambda);
    let quad = time_quadrature(q);
    let wts = g.weights();
    let (mut t0, mut t1) = (0.0, 0.0);
    for &(k, wt) in &quad {
        let grads: Vec<Vec<C64>> = (0..g.dim()).map(|a| axis_derivative(&q.snaps[k], g, a)).collect();
        for p in 0..g.nodes() {
            let d2 = tb.damp[k][p] * tb.damp[k][p];
            let phi = tb.vals[k][p].phi;
            let gq: f64 = grads.iter().map(|c| c[p].norm_sqr()).sum();
            t0 += wt * wts[p] * d2 * phi.powi(3) * q.snaps[k][p].norm_sqr();
            t1 += wt * wts[p] * d2 * phi * gq;
        }
    }
    let z = damped(tb, q);
    let m1 = st_norm2(g, &apply_m_with(w, tb, &z, 1)?, &quad, true);
    let m2 = st_norm2(g, &apply_m_with(w, tb, &z, 2)?, &quad, true);
    Ok(IValue { zeroth: s.powi(3) * l.powi(4) * t0, gradient: s * l * t1, m1, m2, log_scale: w.log_scale() })
}

/// sλ ∫∫_{Γ⁺} e^{−2sη}φ ∂νβ |∂νq|², rescaled like I.
fn boundary_term(w: &CarlemanWeights, tb: &Tables, q: &Trajectory, gamma: &BoundarySubset) -> f64 {
    let g = &w.base.grid;
    let quad = time_quadrature(q);
    let mut acc = 0.0;
    for &(k, wt) in &quad {
        for (&p, &bw) in gamma.nodes.iter().zip(&gamma.weights) {
            let dq = normal_derivative_at(&q.snaps[k], g, p);
            let d2 = tb.damp[k][p] * tb.damp[k][p];
            acc += wt * bw * d2 * tb.vals[k][p].phi * w.base.normal_derivative(p) * dq.norm_sqr();
        }
    }
    w.s * w.lambda * acc
}

/// ∫∫_{Γ⁺} e^{−2sη}φ ∂νβ |∂νq|² over the cutoff window, rescaled like I.
pub fn boundary_integral(w: &CarlemanWeights, q: &Trajectory, gamma: &BoundarySubset) -> Result<f64> {
    check_symmetric(q, &w.base.grid)?;
    let tb = tables(w, q)?;
    Ok(boundary_term(w, &tb, q, gamma) / (w.s * w.lambda))
}

/// e^{−s(η(0,x) − min η(0,·))} at every node.
pub fn initial_damping(w: &CarlemanWeights) -> Vec<f64> {
    let tt2 = w.t_final * w.t_final;
    let em = w.eta_min();
    (0..w.base.grid.nodes()).map(|p| (-w.s * (w.log_alpha(p).exp() / tt2 - em)).exp()).collect()
}

/// One point of an (s, λ) sweep. All weighted terms share the factor
/// e^{log_scale}.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub s: f64,
    pub lambda: f64,
    pub i: f64,
    pub boundary: f64,
    pub source: f64,
    pub ratio: f64,
    pub log_scale: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violation).count()
    }

    /// Rows of one λ, ordered by s.
    pub fn series(&self, lambda: f64) -> Vec<&SweepRow> {
        let mut v: Vec<&SweepRow> = self.rows.iter().filter(|r| r.lambda == lambda).collect();
        v.sort_by(|a, b| a.s.total_cmp(&b.s));
        v
    }

    /// Index (into `series(λ)`) of the largest ratio.
    pub fn knee(&self, lambda: f64) -> usize {
        let s = self.series(lambda);
        let mut best = 0;
        for (i, r) in s.iter().enumerate() {
            if r.ratio > s[best].ratio {
                best = i;
            }
        }
        best
    }

    /// Whether the ratio never increases after the knee, for every λ.
    pub fn non_increasing_past_knee(&self) -> bool {
        let mut lambdas: Vec<f64> = self.rows.iter().map(|r| r.lambda).collect();
        lambdas.dedup();
        lambdas.iter().all(|&l| {
            let s = self.series(l);
            let k = self.knee(l);
            s[k..].windows(2).all(|w| w[1].ratio <= w[0].ratio * (1.0 + 1e-12))
        })
    }
}

fn sweep(
    base: &WeightBase,
    t_final: f64,
    s_list: &[f64],
    lambdas: &[f64],
    row: impl Fn(&CarlemanWeights) -> Result<(f64, f64, f64)> + Sync,
) -> Result<SweepReport> {
    use rayon::prelude::*;
    let pts: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| s_list.iter().map(move |&s| (s, l))).collect();
    let rows = pts
        .par_iter()
        .map(|&(s, l)| {
            let w = base.with_params(l, s, t_final)?;
            let (i, b, src) = row(&w)?;
            let bracket = b + src;
            let violation = bracket <= 0.0 && i > 0.0;
            let ratio = if i == 0.0 { 0.0 } else { i / bracket };
            Ok(SweepRow { s, lambda: l, i, boundary: b, source: src, ratio, log_scale: w.log_scale(), violation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { rows })
}

/// Ratio I(q) / (boundary term + ‖e^{−sη}Lq‖²) over an (s, λ) sweep.
pub fn check_carleman(base: &WeightBase, q: &Trajectory, gamma: &BoundarySubset, s_list: &[f64], lambdas: &[f64]) -> Result<SweepReport> {
    let g = &base.grid;
    check_symmetric(q, g)?;
    let t_final = q.tau * q.steps() as f64;
    let lq = apply_l(g, q)?;
    sweep(base, t_final, s_list, lambdas, |w| {
        let tb = tables(w, q)?;
        let i = compute_i_with(w, &tb, q)?.total();
        let b = boundary_term(w, &tb, q, gamma);
        let src = st_norm2(g, &damped(&tb, &lq), &time_quadrature(q), true);
        Ok((i, b, src))
    })
}

/// ∫∫ e^{−2sη}|d|² over the cutoff window, rescaled.
fn weighted_field_norm2(w: &CarlemanWeights, tb: &Tables, q: &Trajectory, d: &VectorField) -> f64 {
    let g = &w.base.grid;
    let wts = g.weights();
    let mut acc = 0.0;
    for (k, wt) in time_quadrature(q) {
        for p in 0..g.nodes() {
            acc += wt * wts[p] * tb.damp[k][p].powi(2) * d.abs2_at(p);
        }
    }
    acc
}

/// Ratio I(y) / (sλ Σ_{ρ=y,w} boundary terms + ‖e^{−sη}(ã − a)‖²).
pub fn check_carleman_y(
    base: &WeightBase,
    w_field: &Trajectory,
    y: &Trajectory,
    diff: &VectorField,
    gamma: &BoundarySubset,
    s_list: &[f64],
    lambdas: &[f64],
) -> Result<SweepReport> {
    let g = &base.grid;
    check_symmetric(y, g)?;
    check_symmetric(w_field, g)?;
    let t_final = y.tau * y.steps() as f64;
    sweep(base, t_final, s_list, lambdas, |w| {
        let tb = tables(w, y)?;
        let i = compute_i_with(w, &tb, y)?.total();
        let b = boundary_term(w, &tb, y, gamma) + boundary_term(w, &tb, w_field, gamma);
        let src = weighted_field_norm2(w, &tb, y, diff);
        Ok((i, b, src))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlibanovRow {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// s·LHS/RHS.
    pub scaled: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlibanovReport {
    pub lambda: f64,
    pub rows: Vec<KlibanovRow>,
    pub alpha_min: f64,
    pub alpha_floor: f64,
    pub alpha_ok: bool,
}

impl KlibanovReport {
    /// Empirical κ: the largest s·LHS/RHS.
    pub fn kappa(&self) -> f64 {
        self.rows.iter().map(|r| r.scaled).fold(0.0, f64::max)
    }

    pub fn scaled_at(&self, s: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.s == s).map(|r| r.scaled)
    }
}

/// ∫₀ᵗ p by the cumulative trapezoid rule from the t = 0 level.
pub fn integrate_from_origin(p: &Trajectory) -> Trajectory {
    let mut out = p.zeros_like();
    let o = p.origin();
    let n = p.snaps[0].len();
    let h = 0.5 * p.tau;
    for k in o + 1..p.snaps.len() {
        out.snaps[k] = (0..n).map(|i| out.snaps[k - 1][i] + (p.snaps[k][i] + p.snaps[k - 1][i]) * h).collect();
    }
    for k in (0..o).rev() {
        out.snaps[k] = (0..n).map(|i| out.snaps[k + 1][i] - (p.snaps[k][i] + p.snaps[k + 1][i]) * h).collect();
    }
    out
}

/// s·∫∫e^{−2sη}|∫₀ᵗp|² / ‖e^{−sη}p‖² over an s-sweep at fixed λ, plus the
/// check α(x) ≥ α₀ > 0.
pub fn check_klibanov(base: &WeightBase, lambda: f64, p: &Trajectory, s_list: &[f64]) -> Result<KlibanovReport> {
    let g = &base.grid;
    check_symmetric(p, g)?;
    let t_final = p.tau * p.steps() as f64;
    let ip = integrate_from_origin(p);
    let quad = time_quadrature(p);
    let mut rows = Vec::new();
    for &s in s_list {
        let w = base.with_params(lambda, s, t_final)?;
        let tb = tables(&w, p)?;
        let lhs = st_norm2(g, &damped(&tb, &ip), &quad, false);
        let rhs = st_norm2(g, &damped(&tb, p), &quad, false);
        let scaled = if lhs == 0.0 { 0.0 } else { s * lhs / rhs };
        rows.push(KlibanovRow { s, lhs, rhs, scaled });
    }
    let w = base.with_params(lambda, 1.0, t_final)?;
    let alpha_min = (0..g.nodes()).map(|q| w.log_alpha(q).exp()).fold(f64::INFINITY, f64::min);
    let alpha_floor = w.alpha_floor();
    Ok(KlibanovReport { lambda, rows, alpha_min, alpha_floor, alpha_ok: alpha_floor > 0.0 && alpha_min >= alpha_floor * (1.0 - 1e-12) })
}

/// Sweep table: s, λ, I, boundary term, source term, ratio, log scale.
pub fn write_sweep_csv(w: impl Write, runs: &[(String, SweepReport)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record([
        "run",
        "s [1]",
        "lambda [1]",
        "I weighted functional [scaled]",
        "boundary term on observed boundary [scaled]",
        "source term weighted L2 [scaled]",
        "ratio I/(boundary+source) [1]",
        "log scale factor [1]",
        "violation",
    ])
    .map_err(io)?;
    for (run, r) in runs.iter().flat_map(|(run, rep)| rep.rows.iter().map(move |r| (run, r))) {
        wr.write_record([
            run.clone(),
            fmt(r.s),
            fmt(r.lambda),
            fmt(r.i),
            fmt(r.boundary),
            fmt(r.source),
            fmt(r.ratio),
            fmt(r.log_scale),
            r.violation.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Klibanov table: s, LHS, RHS, s·LHS/RHS.
pub fn write_klibanov_csv(w: impl Write, runs: &[(String, KlibanovReport)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record(["run", "lambda [1]", "s [1]", "weighted time-integral norm [scaled]", "weighted norm of p [scaled]", "s*lhs/rhs [1]"]).map_err(io)?;
    for (run, rep) in runs {
        for r in &rep.rows {
            wr.write_record([run.clone(), fmt(rep.lambda), fmt(r.s), fmt(r.lhs), fmt(r.rhs), fmt(r.scaled)]).map_err(io)?;
        }
    }
    wr.flush()?;
    Ok(())
}
