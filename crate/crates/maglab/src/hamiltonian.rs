//! The time-dependent magnetic Hamiltonian H(t) = −Δ + 2iχ(t) a·∇ + χ(t)²|a|²,
//! its time derivatives, the Crank–Nicolson propagator and the differentiated
//! systems for u′ and u″.
//!
//! The first-order term is discretized as
//! `C_a u = ½[a·∇u + ∇·(a u)] − ½(∇·a) u` with central differences. The
//! antisymmetric part makes `2iχ C_a` Hermitian; the diagonal correction
//! vanishes whenever the discrete divergence of `a` does, and keeps the
//! operator consistent with `a·∇` when it does not.

use crate::error::{Error, Result};
use crate::grid::{self, divergence, l2_norm, Grid, VectorField, C64};
use crate::linalg::{Banded, BandedLu};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Closed-form time profile χ with χ(0) = 0 and χ′(0) ≠ 0, odd in t.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeProfile {
    /// χ(t) = sin(ωt).
    Sine { omega: f64 },
}

impl TimeProfile {
    /// sin(ωt) with ω = π/(2T), so that χ rises from 0 to 1 on [0, T].
    pub fn default_for(t_final: f64) -> Self {
        TimeProfile::Sine { omega: std::f64::consts::PI / (2.0 * t_final) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.deriv(0, 0.0) != 0.0 {
            return Err(Error::config("time profile must vanish at t = 0"));
        }
        let d = self.deriv(1, 0.0);
        if d == 0.0 || !d.is_finite() {
            return Err(Error::config("time profile must have a nonzero derivative at t = 0"));
        }
        Ok(())
    }

    /// j-th derivative χ^(j)(t), j = 0..=3.
    pub fn deriv(&self, j: usize, t: f64) -> f64 {
        match *self {
            TimeProfile::Sine { omega } => {
                let w = omega.powi(j as i32);
                match j % 4 {
                    0 => w * (omega * t).sin(),
                    1 => w * (omega * t).cos(),
                    2 => -w * (omega * t).sin(),
                    _ => -w * (omega * t).cos(),
                }
            }
        }
    }

    pub fn chi(&self, t: f64) -> f64 {
        self.deriv(0, t)
    }

    /// sup over [0, T] of |χ^(j)|.
    pub fn sup_abs(&self, j: usize, t_final: f64) -> f64 {
        match *self {
            TimeProfile::Sine { omega } => {
                let w = omega.abs().powi(j as i32);
                let th = (omega * t_final).abs();
                if j % 2 == 1 || th >= std::f64::consts::FRAC_PI_2 {
                    w
                } else {
                    w * th.sin()
                }
            }
        }
    }
}

/// Whether the potential is held to the discrete Coulomb gauge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gauge {
    /// Discrete divergence must vanish (relative 1e−8); H(t) is Hermitian.
    Coulomb,
    /// No divergence constraint. Used on 1D grids, where the gauge forces a
    /// constant potential.
    Relaxed,
}

/// Sup-norm constants 𝒜_j = sup_t ‖χ^(j) a‖_∞ and C_T = (1 + n𝒜₀²)^{1/2}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub a: [f64; 4],
    pub c_t: f64,
}

impl Constants {
    /// Operator-norm constants ℓ_j for ‖H^(j)u‖₀ ≤ ℓ_j‖u‖₁.
    pub fn ell(&self, j: usize) -> f64 {
        let a = &self.a;
        match j {
            1 => 2.0 * a[1] * self.c_t,
            2 => 2.0 * (a[2] * self.c_t + a[1] * a[1]),
            3 => 2.0 * (a[3] * self.c_t + 3.0 * a[1] * a[2]),
            _ => panic!("ell_j defined for j = 1..3"),
        }
    }
}

/// Maps grid nodes to interior unknowns.
#[derive(Clone, Debug)]
pub struct InteriorMap {
    pos: Vec<Option<usize>>,
    nodes: Vec<usize>,
    bw: usize,
}

impl InteriorMap {
    pub fn new(g: &Grid) -> Self {
        let mut pos = vec![None; g.nodes()];
        for (k, &p) in g.interior().iter().enumerate() {
            pos[p] = Some(k);
        }
        let bw = if g.dim() == 1 { 1 } else { g.n(0) - 2 };
        InteriorMap { pos, nodes: g.interior().to_vec(), bw }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn restrict(&self, f: &[C64]) -> Vec<C64> {
        self.nodes.iter().map(|&p| f[p]).collect()
    }

    pub fn embed(&self, x: &[C64], total: usize) -> Vec<C64> {
        let mut f = vec![C64::new(0.0, 0.0); total];
        for (&p, &v) in self.nodes.iter().zip(x) {
            f[p] = v;
        }
        f
    }

    pub fn node(&self, k: usize) -> usize {
        self.nodes[k]
    }

    pub fn index(&self, p: usize) -> Option<usize> {
        self.pos[p]
    }
}

/// A static vector potential with its time profile and the interior matrices
/// of the Hamiltonian pieces.
#[derive(Clone, Debug)]
pub struct MagneticPotential {
    grid: Grid,
    a: VectorField,
    bound: f64,
    a0: Vec<f64>,
    chi: TimeProfile,
    t_final: f64,
    gauge: Gauge,
    collar: f64,
    consts: Constants,
    map: InteriorMap,
    lap: Banded,
    cross: Banded,
    amag: Vec<f64>,
}

impl MagneticPotential {
    /// Validates bound, collar and (for the Coulomb gauge) the divergence.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        g: &Grid,
        a: VectorField,
        bound: f64,
        a0: &[f64],
        chi: TimeProfile,
        t_final: f64,
        gauge: Gauge,
        collar: f64,
    ) -> Result<Self> {
        chi.validate()?;
        if a.dim() != g.dim() || a.nodes() != g.nodes() || a0.len() < g.dim() {
            return Err(Error::config("potential shape does not match the grid"));
        }
        if !(t_final > 0.0) {
            return Err(Error::config("final time must be positive"));
        }
        let sup = a.sup_norm();
        if !sup.is_finite() {
            return Err(Error::config("potential has non-finite entries"));
        }
        if sup > bound * (1.0 + 1e-12) {
            return Err(Error::config(format!("sup-norm {sup:.6} exceeds bound M = {bound}")));
        }
        if collar < 2.0 * g.h() * (1.0 - 1e-12) {
            return Err(Error::config("collar narrower than two grid spacings"));
        }
        let mask = g.collar_mask(collar);
        for (p, &m) in mask.iter().enumerate() {
            if m {
                for d in 0..g.dim() {
                    if (a.comps[d][p] - a0[d]).abs() > 1e-12 * (1.0 + a0[d].abs()) {
                        return Err(Error::config(format!("potential differs from a0 on the collar at node {p}")));
                    }
                }
            }
        }
        if gauge == Gauge::Coulomb {
            let div = divergence(&a, g)?;
            let rel = l2_norm(&div, g) / a.l2(g).max(f64::MIN_POSITIVE);
            if rel > 1e-8 {
                return Err(Error::config(format!("gauge violation: relative divergence {rel:.3e}")));
            }
        }
        let mut ca = [0.0; 4];
        for (j, c) in ca.iter_mut().enumerate() {
            *c = chi.sup_abs(j, t_final) * sup;
        }
        let consts = Constants { a: ca, c_t: (1.0 + g.dim() as f64 * ca[0] * ca[0]).sqrt() };
        let map = InteriorMap::new(g);
        let (lap, cross, amag) = assemble(g, &map, &a);
        Ok(MagneticPotential {
            grid: g.clone(),
            a,
            bound,
            a0: a0[..g.dim()].to_vec(),
            chi,
            t_final,
            gauge,
            collar,
            consts,
            map,
            lap,
            cross,
            amag,
        })
    }

    /// Constant potential a ≡ c (the 1D Coulomb class), with M = |c| and a₀ = c.
    pub fn constant(g: &Grid, c: &[f64], chi: TimeProfile, t_final: f64) -> Result<Self> {
        let a = VectorField::constant(g, c);
        let m = a.sup_norm().max(1e-300);
        MagneticPotential::new(g, a, m, c, chi, t_final, Gauge::Coulomb, g.collar_width())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn field(&self) -> &VectorField {
        &self.a
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn a0(&self) -> &[f64] {
        &self.a0
    }

    pub fn chi(&self) -> TimeProfile {
        self.chi
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn collar(&self) -> f64 {
        self.collar
    }

    pub fn constants(&self) -> Constants {
        self.consts
    }

    pub fn map(&self) -> &InteriorMap {
        &self.map
    }

    /// Same grid, profile and class data with a different field.
    pub fn with_field(&self, a: VectorField) -> Result<Self> {
        MagneticPotential::new(&self.grid, a, self.bound, &self.a0, self.chi, self.t_final, self.gauge, self.collar)
    }

    /// Coefficients (c_lap, c_cross, c_mag) of an operator
    /// c_lap·(−Δ) + i c_cross·C_a + c_mag·|a|².
    pub fn coeffs(&self, op: Op, t: f64) -> (f64, f64, f64) {
        let x = |j| self.chi.deriv(j, t);
        match op {
            Op::H => (1.0, 2.0 * x(0), x(0) * x(0)),
            Op::Deriv(1) => (0.0, 2.0 * x(1), 2.0 * x(0) * x(1)),
            Op::Deriv(2) => (0.0, 2.0 * x(2), 2.0 * (x(1) * x(1) + x(0) * x(2))),
            Op::Deriv(3) => (0.0, 2.0 * x(3), 2.0 * (3.0 * x(1) * x(2) + x(0) * x(3))),
            Op::B(j) if (1..=3).contains(&j) => (0.0, x(j), x(j) * x(0)),
            _ => panic!("derivative order outside 1..3"),
        }
    }

    /// Applies an operator to interior unknowns.
    pub fn apply_interior(&self, op: Op, t: f64, x: &[C64]) -> Vec<C64> {
        let (cl, cc, cm) = self.coeffs(op, t);
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        if cl != 0.0 {
            for (yi, v) in y.iter_mut().zip(self.lap.mul(x)) {
                *yi += v * cl;
            }
        }
        if cc != 0.0 {
            for (yi, v) in y.iter_mut().zip(self.cross.mul(x)) {
                *yi += I * v * cc;
            }
        }
        if cm != 0.0 {
            for ((yi, xi), m) in y.iter_mut().zip(x).zip(&self.amag) {
                *yi += xi * (cm * m);
            }
        }
        y
    }

    /// The operator as a banded matrix on interior unknowns.
    pub fn matrix(&self, op: Op, t: f64) -> Banded {
        let (cl, cc, cm) = self.coeffs(op, t);
        let mut m = self.lap.scale(C64::new(cl, 0.0)).axpy(I * cc, &self.cross);
        for (k, v) in self.amag.iter().enumerate() {
            m.add(k, k, C64::new(cm * v, 0.0));
        }
        m
    }

    fn full(&self, op: Op, t: f64, u: &[C64]) -> Vec<C64> {
        let x = self.map.restrict(u);
        self.map.embed(&self.apply_interior(op, t, &x), self.grid.nodes())
    }

    pub fn apply_h(&self, t: f64, u: &[C64]) -> Vec<C64> {
        self.full(Op::H, t, u)
    }

    pub fn apply_b(&self, j: usize, t: f64, u: &[C64]) -> Result<Vec<C64>> {
        check_order(j)?;
        Ok(self.full(Op::B(j), t, u))
    }

    pub fn apply_h_deriv(&self, j: usize, t: f64, u: &[C64]) -> Result<Vec<C64>> {
        check_order(j)?;
        Ok(self.full(Op::Deriv(j), t, u))
    }

    /// The interior matrix of the first-order term C_a (real entries).
    pub fn cross_matrix(&self) -> &Banded {
        &self.cross
    }
}

fn check_order(j: usize) -> Result<()> {
    if (1..=3).contains(&j) {
        Ok(())
    } else {
        Err(Error::Domain(format!("derivative order {j} outside 1..3")))
    }
}

/// Which Hamiltonian-family operator to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    H,
    /// H^(j), j = 1..3.
    Deriv(usize),
    /// B_j = χ^(j) a·(i∇ + χ a), j = 1..3.
    B(usize),
}

fn assemble(g: &Grid, map: &InteriorMap, a: &VectorField) -> (Banded, Banded, Vec<f64>) {
    let n = map.len();
    let mut lap = Banded::zeros(n, map.bw);
    let mut cross = Banded::zeros(n, map.bw);
    let mut amag = vec![0.0; n];
    let h = g.h();
    let ih2 = 1.0 / (h * h);
    let q = 1.0 / (4.0 * h);
    for k in 0..n {
        let p = map.node(k);
        amag[k] = a.abs2_at(p);
        lap.add(k, k, C64::new(2.0 * g.dim() as f64 * ih2, 0.0));
        for d in 0..g.dim() {
            let s = g.stride(d);
            let ad = &a.comps[d];
            let (pp, pm) = (p + s, p - s);
            if let Some(kk) = map.index(pp) {
                lap.add(k, kk, C64::new(-ih2, 0.0));
                cross.add(k, kk, C64::new((ad[p] + ad[pp]) * q, 0.0));
            }
            if let Some(kk) = map.index(pm) {
                lap.add(k, kk, C64::new(-ih2, 0.0));
                cross.add(k, kk, C64::new(-(ad[p] + ad[pm]) * q, 0.0));
            }
            cross.add(k, k, C64::new(-(ad[pp] - ad[pm]) * q, 0.0));
        }
    }
    (lap, cross, amag)
}

/// Time interval covered by a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interval {
    /// [0, T] with N_t + 1 snapshots.
    Forward,
    /// [−T, T] with 2N_t + 1 snapshots.
    Symmetric,
}

/// Time-sampled complex field on the full grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub interval: Interval,
    pub snaps: Vec<Vec<C64>>,
}

impl Trajectory {
    /// Number of time steps on the forward half (N_t).
    pub fn steps(&self) -> usize {
        match self.interval {
            Interval::Forward => self.snaps.len() - 1,
            Interval::Symmetric => (self.snaps.len() - 1) / 2,
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        match self.interval {
            Interval::Forward => k as f64 * self.tau,
            Interval::Symmetric => (k as f64 - self.steps() as f64) * self.tau,
        }
    }

    /// Snapshot index of t = 0.
    pub fn origin(&self) -> usize {
        match self.interval {
            Interval::Forward => 0,
            Interval::Symmetric => self.steps(),
        }
    }

    pub fn zeros_like(&self) -> Trajectory {
        let z = vec![C64::new(0.0, 0.0); self.snaps[0].len()];
        Trajectory { tau: self.tau, interval: self.interval, snaps: vec![z; self.snaps.len()] }
    }

    pub fn sub(&self, o: &Trajectory) -> Trajectory {
        let snaps = self.snaps.iter().zip(&o.snaps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        Trajectory { tau: self.tau, interval: self.interval, snaps }
    }

    /// Trapezoidal L²(time; L²(Ω)) norm.
    pub fn l2_time(&self, g: &Grid) -> f64 {
        let m = self.snaps.len();
        let mut s = 0.0;
        for (k, u) in self.snaps.iter().enumerate() {
            let w = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
            s += w * self.tau * l2_norm(u, g).powi(2);
        }
        s.sqrt()
    }

    pub fn max_l2(&self, g: &Grid) -> f64 {
        self.snaps.iter().map(|u| l2_norm(u, g)).fold(0.0, f64::max)
    }

    /// Relative charge drift max_k |‖u_k‖ − ‖u_0‖| / ‖u_0‖.
    pub fn charge_drift(&self, g: &Grid) -> f64 {
        let n0 = l2_norm(&self.snaps[0], g);
        if n0 == 0.0 {
            return 0.0;
        }
        self.snaps.iter().map(|u| (l2_norm(u, g) - n0).abs()).fold(0.0, f64::max) / n0
    }
}

/// Sources of the chained systems −iψ′ + Hψ = f at the step midpoints, plus
/// f(0) and f′(0) for the initial data of the differentiated systems. All
/// vectors live on interior unknowns.
pub trait ChainSource {
    /// [f, f′, f″] at t_{k+1/2}; entries beyond the requested order may be empty.
    fn midpoint(&self, k: usize, order: usize) -> [Vec<C64>; 3];
    /// [f(0), f′(0)].
    fn initial(&self) -> [Vec<C64>; 2];
}

/// Midpoint samples of a single source (no derivatives).
pub struct SampledSource<'a> {
    pub map: &'a InteriorMap,
    pub mid: &'a [Vec<C64>],
    pub at_zero: Option<&'a [C64]>,
}

impl ChainSource for SampledSource<'_> {
    fn midpoint(&self, k: usize, _order: usize) -> [Vec<C64>; 3] {
        [self.map.restrict(&self.mid[k]), Vec::new(), Vec::new()]
    }

    fn initial(&self) -> [Vec<C64>; 2] {
        let z = match self.at_zero {
            Some(f) => self.map.restrict(f),
            None => vec![C64::new(0.0, 0.0); self.map.len()],
        };
        [z, Vec::new()]
    }
}

fn add_scaled(acc: &mut [C64], s: C64, x: &[C64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += s * v;
    }
}

fn avg(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| (x + y) * 0.5).collect()
}

/// One Crank–Nicolson step matrix pair at a midpoint time.
pub struct CnStep {
    pub a: Banded,
    pub lu: BandedLu,
    pub t_mid: f64,
    pub tau: f64,
}

impl CnStep {
    pub fn new(p: &MagneticPotential, t_mid: f64, tau: f64) -> Result<Self> {
        let mut a = p.matrix(Op::H, t_mid).scale(I * (0.5 * tau));
        a.add_identity(C64::new(1.0, 0.0));
        let lu = a.factor()?;
        Ok(CnStep { a, lu, t_mid, tau })
    }

    /// (I − iτ/2 H) x.
    pub fn explicit(&self, p: &MagneticPotential, x: &[C64]) -> Vec<C64> {
        let hx = p.apply_interior(Op::H, self.t_mid, x);
        x.iter().zip(hx).map(|(xi, hi)| xi - I * (0.5 * self.tau) * hi).collect()
    }

    pub fn solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        self.lu.solve_refined(&self.a, rhs, 1e-12, false)
    }

    pub fn solve_adjoint(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        self.lu.solve_refined(&self.a, rhs, 1e-12, true)
    }
}

/// One step (I + iτ/2 H_{k+1/2}) u_{k+1} = (I − iτ/2 H_{k+1/2}) u_k + iτ f_{k+1/2}
/// on the full grid.
pub fn cn_step(p: &MagneticPotential, t_k: f64, tau: f64, u_k: &[C64], f_mid: Option<&[C64]>) -> Result<Vec<C64>> {
    let m = p.map();
    let step = CnStep::new(p, t_k + 0.5 * tau, tau)?;
    let mut rhs = step.explicit(p, &m.restrict(u_k));
    if let Some(f) = f_mid {
        add_scaled(&mut rhs, I * tau, &m.restrict(f));
    }
    Ok(m.embed(&step.solve(&rhs)?, p.grid().nodes()))
}

/// Marches the chain ψ, ψ′, …, ψ^(order) from t = 0 to T in N_t steps.
/// Level l solves −iψ_l′ + Hψ_l = S_l with S_0 = f, S_1 = f′ − H′ψ̄_0,
/// S_2 = f″ − H″ψ̄_0 − 2H′ψ̄_1, bars denoting step averages.
pub fn solve_chain(
    p: &MagneticPotential,
    u0: &[C64],
    t_final: f64,
    nt: usize,
    order: usize,
    src: Option<&dyn ChainSource>,
) -> Result<Vec<Trajectory>> {
    assert!(order <= 2);
    if nt == 0 {
        return Err(Error::config("need at least one time step"));
    }
    let g = p.grid();
    g.check_len(u0.len(), "initial state")?;
    let m = p.map();
    let tau = t_final / nt as f64;
    let mut x = vec![m.restrict(u0)];
    if order >= 1 {
        let init = src.map(|s| s.initial());
        let h0 = p.apply_interior(Op::H, 0.0, &x[0]);
        let mut x1: Vec<C64> = h0.iter().map(|v| -I * v).collect();
        if let Some(f) = &init {
            add_scaled(&mut x1, I, &f[0]);
        }
        x.push(x1);
        if order >= 2 {
            let d0 = p.apply_interior(Op::Deriv(1), 0.0, &x[0]);
            let h1 = p.apply_interior(Op::H, 0.0, &x[1]);
            let mut x2: Vec<C64> = d0.iter().zip(&h1).map(|(a, b)| -I * (a + b)).collect();
            if let Some(f) = &init {
                add_scaled(&mut x2, I, &f[1]);
            }
            x.push(x2);
        }
    }
    let mut out: Vec<Vec<Vec<C64>>> = x.iter().map(|xi| vec![m.embed(xi, g.nodes())]).collect();
    for k in 0..nt {
        let tm = (k as f64 + 0.5) * tau;
        let step = CnStep::new(p, tm, tau)?;
        let fs = src.map(|s| s.midpoint(k, order));
        let mut new: Vec<Vec<C64>> = Vec::with_capacity(order + 1);
        for l in 0..=order {
            let mut rhs = step.explicit(p, &x[l]);
            let mut s: Vec<C64> = match &fs {
                Some(f) if !f[l].is_empty() => f[l].clone(),
                _ => vec![C64::new(0.0, 0.0); m.len()],
            };
            if l >= 1 {
                let b0 = avg(&x[0], &new[0]);
                let d = p.apply_interior(Op::Deriv(l), tm, &b0);
                add_scaled(&mut s, C64::new(-1.0, 0.0), &d);
            }
            if l == 2 {
                let b1 = avg(&x[1], &new[1]);
                let d = p.apply_interior(Op::Deriv(1), tm, &b1);
                add_scaled(&mut s, C64::new(-2.0, 0.0), &d);
            }
            add_scaled(&mut rhs, I * tau, &s);
            new.push(step.solve(&rhs)?);
        }
        for (l, v) in new.into_iter().enumerate() {
            out[l].push(m.embed(&v, g.nodes()));
            x[l] = v;
        }
    }
    Ok(out.into_iter().map(|snaps| Trajectory { tau, interval: Interval::Forward, snaps }).collect())
}

/// Forward solve of −iu′ + H u = f with sources sampled at step midpoints.
pub fn solve_ibvp(p: &MagneticPotential, u0: &[C64], f_mid: Option<&[Vec<C64>]>, t_final: f64, nt: usize) -> Result<Trajectory> {
    if let Some(f) = f_mid {
        if f.len() != nt {
            return Err(Error::config(format!("source has {} midpoint samples, expected {nt}", f.len())));
        }
    }
    let src = f_mid.map(|mid| SampledSource { map: p.map(), mid, at_zero: None });
    let chain = solve_chain(p, u0, t_final, nt, 0, src.as_ref().map(|s| s as &dyn ChainSource))?;
    Ok(chain.into_iter().next().expect("one level"))
}

/// u, u′, u″ from the differentiated systems, with the centered-difference
/// cross-check of u′ against u.
pub struct DerivativeSolution {
    pub u: Trajectory,
    pub du: Trajectory,
    pub d2u: Trajectory,
    /// max_k ‖(u_{k+1} − u_{k−1})/2τ − u′_k‖₀ / max_k ‖u′_k‖₀
    pub crosscheck: f64,
    /// 5(τ² + h²)·(1 + ‖Δ²u₀‖₀/‖u₀‖₀), the tolerance for `crosscheck`.
    pub crosscheck_bound: f64,
}

impl DerivativeSolution {
    pub fn crosscheck_ok(&self) -> bool {
        self.crosscheck <= self.crosscheck_bound
    }
}

pub fn solve_derivative_systems(p: &MagneticPotential, u0: &[C64], t_final: f64, nt: usize) -> Result<DerivativeSolution> {
    let mut c = solve_chain(p, u0, t_final, nt, 2, None)?.into_iter();
    let (u, du, d2u) = (c.next().unwrap(), c.next().unwrap(), c.next().unwrap());
    let g = p.grid();
    let crosscheck = centered_discrepancy(&u, &du, g);
    let lap2 = grid::laplacian(&grid::laplacian(u0, g)?, g)?;
    let n0 = l2_norm(u0, g);
    let scale = if n0 > 0.0 { 1.0 + l2_norm(&lap2, g) / n0 } else { 1.0 };
    let crosscheck_bound = 5.0 * (u.tau * u.tau + g.h() * g.h()) * scale;
    Ok(DerivativeSolution { u, du, d2u, crosscheck, crosscheck_bound })
}

/// Relative discrepancy between the centered time difference of `u` and `du`.
pub fn centered_discrepancy(u: &Trajectory, du: &Trajectory, g: &Grid) -> f64 {
    let tau = u.tau;
    let mut num: f64 = 0.0;
    for k in 1..u.snaps.len() - 1 {
        let d: Vec<C64> = u.snaps[k + 1].iter().zip(&u.snaps[k - 1]).zip(&du.snaps[k]).map(|((a, b), c)| (a - b) / (2.0 * tau) - c).collect();
        num = num.max(l2_norm(&d, g));
    }
    num / du.max_l2(g).max(f64::MIN_POSITIVE)
}

/// Parity of the conjugate extension to negative times.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    /// u(−t) = conj(u(t)); needs a real t = 0 snapshot.
    Even,
    /// u(−t) = −conj(u(t)); needs a purely imaginary t = 0 snapshot.
    Odd,
}

pub fn extend_time_symmetric(traj: &Trajectory, parity: Parity) -> Result<Trajectory> {
    if traj.interval != Interval::Forward {
        return Err(Error::Data("trajectory already covers [-T, T]".into()));
    }
    let u0 = &traj.snaps[0];
    let scale = u0.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let bad = u0
        .iter()
        .map(|v| match parity {
            Parity::Even => v.im.abs(),
            Parity::Odd => v.re.abs(),
        })
        .fold(0.0, f64::max);
    if bad > 1e-10 * scale {
        return Err(Error::Data(format!("t = 0 snapshot incompatible with {parity:?} extension (defect {bad:.3e})")));
    }
    let sign = match parity {
        Parity::Even => 1.0,
        Parity::Odd => -1.0,
    };
    let mut snaps = Vec::with_capacity(2 * traj.snaps.len() - 1);
    for u in traj.snaps.iter().skip(1).rev() {
        snaps.push(u.iter().map(|v| v.conj() * sign).collect());
    }
    snaps.extend(traj.snaps.iter().cloned());
    Ok(Trajectory { tau: traj.tau, interval: Interval::Symmetric, snaps })
}

/// Writes a trajectory in the `MSLB1` binary layout: magic, little-endian
/// u64 dim, N₁[, N₂], N_t, then (re, im) f64 pairs node-major, time-minor.
pub fn write_binary(w: &mut impl Write, g: &Grid, traj: &Trajectory) -> Result<()> {
    w.write_all(b"MSLB1")?;
    w.write_all(&(g.dim() as u64).to_le_bytes())?;
    for a in 0..g.dim() {
        w.write_all(&(g.n(a) as u64).to_le_bytes())?;
    }
    w.write_all(&((traj.snaps.len() - 1) as u64).to_le_bytes())?;
    for p in 0..g.nodes() {
        for s in &traj.snaps {
            w.write_all(&s[p].re.to_le_bytes())?;
            w.write_all(&s[p].im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the `MSLB1` layout back as (node counts, snapshots).
pub fn read_binary(r: &mut impl Read) -> Result<(Vec<usize>, Vec<Vec<C64>>)> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != b"MSLB1" {
        return Err(Error::Data("bad magic".into()));
    }
    let mut u = || -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let dim = u()? as usize;
    if !(1..=2).contains(&dim) {
        return Err(Error::Data(format!("bad dimension {dim}")));
    }
    let n: Vec<usize> = (0..dim).map(|_| u().map(|v| v as usize)).collect::<Result<_>>()?;
    let nt = u()? as usize;
    let nodes: usize = n.iter().product();
    let mut snaps = vec![vec![C64::new(0.0, 0.0); nodes]; nt + 1];
    let mut b = [0u8; 8];
    for p in 0..nodes {
        for s in snaps.iter_mut() {
            r.read_exact(&mut b)?;
            let re = f64::from_le_bytes(b);
            r.read_exact(&mut b)?;
            s[p] = C64::new(re, f64::from_le_bytes(b));
        }
    }
    Ok((n, snaps))
}

/// CSV of norms per snapshot: k, t, ‖u‖₀, ‖u‖₁.
pub fn write_norms_csv(w: impl Write, g: &Grid, traj: &Trajectory) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record(["k", "t [time]", "charge L2 [amplitude]", "energy H1 [amplitude/length]"]).map_err(io)?;
    for (k, u) in traj.snaps.iter().enumerate() {
        let n = grid::norms(u, g);
        wr.write_record([k.to_string(), fmt(traj.time(k)), fmt(n.l2), fmt(n.h1)]).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Shortest round-trip float formatting used in every CSV.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}
