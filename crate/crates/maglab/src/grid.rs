//! Uniform Cartesian grids on an interval or rectangle, finite-difference
//! calculus, boundary traces, quadrature and the divergence-free projector.
//!
//! Nodes are numbered with the x index running fastest. Interior operators use
//! second-order central differences; boundary nodes use second-order one-sided
//! 3-point stencils.

use crate::error::{Error, Result};
use crate::linalg::{Banded, BandedLu};
use num_complex::Complex64;
use std::ops::{Add, Mul, Sub};

pub type C64 = Complex64;
pub type ComplexField = Vec<C64>;

/// Values a finite-difference operator can act on (real or complex).
pub trait Scalar:
    Copy + Default + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn abs2(self) -> f64;
}

impl Scalar for f64 {
    fn abs2(self) -> f64 {
        self * self
    }
}

impl Scalar for C64 {
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
}

/// Boundary face of the rectangle. At corners the x faces win.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    XLow,
    XHigh,
    YLow,
    YHigh,
}

impl Face {
    pub fn normal(self) -> [f64; 2] {
        match self {
            Face::XLow => [-1.0, 0.0],
            Face::XHigh => [1.0, 0.0],
            Face::YLow => [0.0, -1.0],
            Face::YHigh => [0.0, 1.0],
        }
    }

    pub fn axis(self) -> usize {
        match self {
            Face::XLow | Face::XHigh => 0,
            Face::YLow | Face::YHigh => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    dim: usize,
    n: [usize; 2],
    len: [f64; 2],
    h: f64,
    face: Vec<Option<Face>>,
    interior: Vec<usize>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new_1d(n: usize, l: f64) -> Result<Grid> {
        Grid::new(&[n], &[l])
    }

    pub fn new_2d(n1: usize, n2: usize, l1: f64, l2: f64) -> Result<Grid> {
        Grid::new(&[n1, n2], &[l1, l2])
    }

    /// Builds a grid from per-axis node counts and extents.
    pub fn new(n: &[usize], l: &[f64]) -> Result<Grid> {
        let dim = n.len();
        if !(1..=2).contains(&dim) || l.len() != dim {
            return Err(Error::config(format!("grid dimension must be 1 or 2, got {} counts and {} lengths", n.len(), l.len())));
        }
        for a in 0..dim {
            if n[a] < 8 {
                return Err(Error::config(format!("axis {a}: need at least 8 nodes, got {}", n[a])));
            }
            if !(l[a] > 0.0 && l[a].is_finite()) {
                return Err(Error::config(format!("axis {a}: extent must be positive, got {}", l[a])));
            }
        }
        let h = l[0] / (n[0] - 1) as f64;
        if dim == 2 {
            let h2 = l[1] / (n[1] - 1) as f64;
            if (h2 - h).abs() > 1e-12 * h {
                return Err(Error::config(format!("spacing differs between axes: {h} vs {h2}")));
            }
        }
        let nn = [n[0], if dim == 2 { n[1] } else { 1 }];
        let ll = [l[0], if dim == 2 { l[1] } else { 0.0 }];
        let total = nn[0] * nn[1];
        let mut face = vec![None; total];
        let mut interior = Vec::new();
        let mut weights = vec![0.0; total];
        for j in 0..nn[1] {
            for i in 0..nn[0] {
                let p = i + nn[0] * j;
                let f = if i == 0 {
                    Some(Face::XLow)
                } else if i == nn[0] - 1 {
                    Some(Face::XHigh)
                } else if dim == 2 && j == 0 {
                    Some(Face::YLow)
                } else if dim == 2 && j == nn[1] - 1 {
                    Some(Face::YHigh)
                } else {
                    None
                };
                if f.is_none() {
                    interior.push(p);
                }
                face[p] = f;
                let wx = if i == 0 || i == nn[0] - 1 { 0.5 * h } else { h };
                let wy = if dim == 1 {
                    1.0
                } else if j == 0 || j == nn[1] - 1 {
                    0.5 * h
                } else {
                    h
                };
                weights[p] = wx * wy;
            }
        }
        Ok(Grid { dim, n: nn, len: ll, h, face, interior, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Node count along `axis` (1 for the unused axis of a 1D grid).
    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn len(&self, axis: usize) -> f64 {
        self.len[axis]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.n[0]
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    pub fn coords(&self, p: usize) -> [usize; 2] {
        [p % self.n[0], p / self.n[0]]
    }

    pub fn point(&self, p: usize) -> [f64; 2] {
        let [i, j] = self.coords(p);
        [i as f64 * self.h, j as f64 * self.h]
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        self.face[p].is_some()
    }

    pub fn face(&self, p: usize) -> Option<Face> {
        self.face[p]
    }

    /// Outward unit normal at a boundary node, zero in the interior.
    pub fn normal(&self, p: usize) -> [f64; 2] {
        self.face[p].map_or([0.0, 0.0], Face::normal)
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> Vec<usize> {
        (0..self.nodes()).filter(|&p| self.is_boundary(p)).collect()
    }

    /// Trapezoidal quadrature weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Surface measure attached to one boundary node.
    pub fn boundary_weight(&self) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            self.h
        }
    }

    pub fn dist_to_boundary(&self, p: usize) -> f64 {
        let x = self.point(p);
        (0..self.dim)
            .map(|a| x[a].min(self.len[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Default collar width max(2h, 0.05 L) with L the shortest extent.
    pub fn collar_width(&self) -> f64 {
        let l = (0..self.dim).map(|a| self.len[a]).fold(f64::INFINITY, f64::min);
        (2.0 * self.h).max(0.05 * l)
    }

    /// Nodes within `width` of the boundary (boundary nodes included).
    pub fn collar_mask(&self, width: f64) -> Vec<bool> {
        (0..self.nodes())
            .map(|p| self.dist_to_boundary(p) <= width + 1e-12 * self.h)
            .collect()
    }

    pub fn sample<T>(&self, f: impl Fn([f64; 2]) -> T) -> Vec<T> {
        (0..self.nodes()).map(|p| f(self.point(p))).collect()
    }

    pub(crate) fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.nodes() {
            return Err(Error::config(format!("{what}: field has {len} values, grid has {} nodes", self.nodes())));
        }
        Ok(())
    }
}

/// A static real vector field, one component vector per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(g: &Grid) -> Self {
        VectorField { comps: vec![vec![0.0; g.nodes()]; g.dim()] }
    }

    pub fn constant(g: &Grid, c: &[f64]) -> Self {
        VectorField { comps: (0..g.dim()).map(|a| vec![c[a]; g.nodes()]).collect() }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn nodes(&self) -> usize {
        self.comps.first().map_or(0, Vec::len)
    }

    pub fn at(&self, p: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (a, c) in self.comps.iter().enumerate() {
            v[a] = c[p];
        }
        v
    }

    pub fn abs2_at(&self, p: usize) -> f64 {
        self.comps.iter().map(|c| c[p] * c[p]).sum()
    }

    /// Largest pointwise Euclidean length.
    pub fn sup_norm(&self) -> f64 {
        (0..self.nodes()).map(|p| self.abs2_at(p).sqrt()).fold(0.0, f64::max)
    }

    pub fn l2(&self, g: &Grid) -> f64 {
        self.comps.iter().map(|c| l2_norm(c, g).powi(2)).sum::<f64>().sqrt()
    }

    pub fn add(&self, o: &VectorField) -> VectorField {
        self.zip(o, |x, y| x + y)
    }

    pub fn sub(&self, o: &VectorField) -> VectorField {
        self.zip(o, |x, y| x - y)
    }

    pub fn scale(&self, s: f64) -> VectorField {
        VectorField { comps: self.comps.iter().map(|c| c.iter().map(|x| x * s).collect()).collect() }
    }

    pub fn axpy(&self, s: f64, o: &VectorField) -> VectorField {
        self.zip(o, |x, y| x + s * y)
    }

    pub fn dot(&self, o: &VectorField) -> f64 {
        self.comps.iter().zip(&o.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).sum()
    }

    /// Sets the masked nodes to `value`.
    pub fn set_masked(&mut self, mask: &[bool], value: &[f64]) {
        for (a, c) in self.comps.iter_mut().enumerate() {
            for (x, &m) in c.iter_mut().zip(mask) {
                if m {
                    *x = value[a];
                }
            }
        }
    }

    fn zip(&self, o: &VectorField, f: impl Fn(f64, f64) -> f64) -> VectorField {
        VectorField {
            comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()).collect(),
        }
    }
}

/// A subset of boundary nodes with its surface quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySubset {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
}

impl BoundarySubset {
    pub fn new(g: &Grid, nodes: Vec<usize>) -> Self {
        let w = g.boundary_weight();
        let weights = vec![w; nodes.len()];
        BoundarySubset { nodes, weights }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// The remaining boundary nodes.
    pub fn complement(&self, g: &Grid) -> BoundarySubset {
        let rest = g.boundary().into_iter().filter(|p| !self.nodes.contains(p)).collect();
        BoundarySubset::new(g, rest)
    }
}

/// Derivative along one axis: central inside, one-sided 3-point at the ends.
pub fn axis_derivative<T: Scalar>(f: &[T], g: &Grid, axis: usize) -> Vec<T> {
    let s = g.stride(axis);
    let n = g.n(axis);
    let c = 0.5 / g.h();
    let mut out = vec![T::default(); f.len()];
    for (p, o) in out.iter_mut().enumerate() {
        let i = g.coords(p)[axis];
        *o = if i == 0 {
            (f[p + s] * 4.0 - f[p] * 3.0 - f[p + 2 * s]) * c
        } else if i == n - 1 {
            (f[p] * 3.0 - f[p - s] * 4.0 + f[p - 2 * s]) * c
        } else {
            (f[p + s] - f[p - s]) * c
        };
    }
    out
}

/// Transpose of [`axis_derivative`] in the plain Euclidean pairing.
pub fn axis_derivative_transpose<T: Scalar>(r: &[T], g: &Grid, axis: usize) -> Vec<T> {
    let s = g.stride(axis);
    let n = g.n(axis);
    let c = 0.5 / g.h();
    let mut out = vec![T::default(); r.len()];
    for p in 0..r.len() {
        let i = g.coords(p)[axis];
        let rp = r[p] * c;
        if i == 0 {
            out[p + s] = out[p + s] + rp * 4.0;
            out[p] = out[p] - rp * 3.0;
            out[p + 2 * s] = out[p + 2 * s] - rp;
        } else if i == n - 1 {
            out[p] = out[p] + rp * 3.0;
            out[p - s] = out[p - s] - rp * 4.0;
            out[p - 2 * s] = out[p - 2 * s] + rp;
        } else {
            out[p + s] = out[p + s] + rp;
            out[p - s] = out[p - s] - rp;
        }
    }
    out
}

pub fn gradient<T: Scalar>(f: &[T], g: &Grid) -> Result<Vec<Vec<T>>> {
    g.check_len(f.len(), "gradient")?;
    Ok((0..g.dim()).map(|a| axis_derivative(f, g, a)).collect())
}

/// 3-point / 5-point Laplacian at interior nodes, zero on the boundary.
pub fn laplacian<T: Scalar>(f: &[T], g: &Grid) -> Result<Vec<T>> {
    g.check_len(f.len(), "laplacian")?;
    Ok(laplacian_unchecked(f, g))
}

pub(crate) fn laplacian_unchecked<T: Scalar>(f: &[T], g: &Grid) -> Vec<T> {
    let ih2 = 1.0 / (g.h() * g.h());
    let mut out = vec![T::default(); f.len()];
    for &p in g.interior() {
        let mut acc = f[p] * (-2.0 * g.dim() as f64);
        for a in 0..g.dim() {
            let s = g.stride(a);
            acc = acc + f[p + s] + f[p - s];
        }
        out[p] = acc * ih2;
    }
    out
}

pub fn divergence(v: &VectorField, g: &Grid) -> Result<Vec<f64>> {
    if v.dim() != g.dim() {
        return Err(Error::config(format!("divergence: field has {} components on a {}D grid", v.dim(), g.dim())));
    }
    for c in &v.comps {
        g.check_len(c.len(), "divergence")?;
    }
    Ok(divergence_unchecked(v, g))
}

pub(crate) fn divergence_unchecked(v: &VectorField, g: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; g.nodes()];
    for (a, c) in v.comps.iter().enumerate() {
        for (o, d) in out.iter_mut().zip(axis_derivative(c, g, a)) {
            *o += d;
        }
    }
    out
}

/// Transpose of the divergence operator.
pub fn divergence_transpose(phi: &[f64], g: &Grid) -> VectorField {
    VectorField { comps: (0..g.dim()).map(|a| axis_derivative_transpose(phi, g, a)).collect() }
}

/// One-sided second-order normal derivative at one boundary node.
pub fn normal_derivative_at<T: Scalar>(f: &[T], g: &Grid, p: usize) -> T {
    let face = g.face(p).expect("normal derivative requested at an interior node");
    let s = g.stride(face.axis());
    let c = 0.5 / g.h();
    match face {
        Face::XHigh | Face::YHigh => (f[p] * 3.0 - f[p - s] * 4.0 + f[p - 2 * s]) * c,
        Face::XLow | Face::YLow => (f[p] * 3.0 - f[p + s] * 4.0 + f[p + 2 * s]) * c,
    }
}

/// Normal derivative ∂νf sampled on a boundary subset.
pub fn neumann_trace<T: Scalar>(f: &[T], g: &Grid, gamma: &BoundarySubset) -> Result<Vec<T>> {
    g.check_len(f.len(), "neumann_trace")?;
    if gamma.is_empty() {
        return Err(Error::config("neumann_trace: empty boundary subset"));
    }
    Ok(gamma.nodes.iter().map(|&p| normal_derivative_at(f, g, p)).collect())
}

pub fn l2_norm<T: Scalar>(f: &[T], g: &Grid) -> f64 {
    f.iter().zip(g.weights()).map(|(x, w)| w * x.abs2()).sum::<f64>().sqrt()
}

/// H¹ norm: (‖f‖₀² + ‖∇f‖₀²)^{1/2}.
pub fn h1_norm<T: Scalar>(f: &[T], g: &Grid) -> f64 {
    let mut s = l2_norm(f, g).powi(2);
    for a in 0..g.dim() {
        s += l2_norm(&axis_derivative(f, g, a), g).powi(2);
    }
    s.sqrt()
}

/// Both norms at once.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
}

pub fn norms<T: Scalar>(f: &[T], g: &Grid) -> Norms {
    Norms { l2: l2_norm(f, g), h1: h1_norm(f, g) }
}

/// Discrete L² product ⟨f, g⟩₀ = Σ w conj(f) g.
pub fn inner(f: &[C64], h: &[C64], g: &Grid) -> C64 {
    f.iter().zip(h).zip(g.weights()).map(|((a, b), w)| a.conj() * b * *w).sum()
}

/// Orthogonal projector onto the kernel of the discrete divergence, with the
/// nodes marked in `fixed` additionally constrained to zero.
///
/// The removed part lies in the range of the transposed divergence, which
/// approximates gradients of potentials vanishing on the boundary. The normal
/// matrix D M Dᵀ is singular and badly conditioned, so it is factored once
/// with a tiny diagonal shift and the shift is removed by iterated
/// refinement.
pub struct DivFreeProjector {
    grid: Grid,
    fixed: Option<Vec<bool>>,
    normal: Banded,
    lu: BandedLu,
}

impl DivFreeProjector {
    pub fn new(g: &Grid, fixed: Option<&[bool]>) -> Result<Self> {
        if let Some(m) = fixed {
            g.check_len(m.len(), "div-free projector mask")?;
        }
        let fixed = fixed.map(|m| m.to_vec());
        let n = g.nodes();
        let mut cols = Vec::with_capacity(n);
        let mut bw = 0;
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = Self::apply_normal(g, fixed.as_deref(), &e);
            e[j] = 0.0;
            let nz: Vec<(usize, f64)> = col.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
            for &(i, _) in &nz {
                bw = bw.max(i.abs_diff(j));
            }
            cols.push(nz);
        }
        let mut normal = Banded::zeros(n, bw);
        let mut diag_max: f64 = 0.0;
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col {
                normal.add(i, j, C64::new(v, 0.0));
                if i == j {
                    diag_max = diag_max.max(v);
                }
            }
        }
        let mut shifted = normal.clone();
        shifted.add_identity(C64::new(1e-10 * diag_max.max(1.0), 0.0));
        let lu = shifted.factor()?;
        Ok(DivFreeProjector { grid: g.clone(), fixed, normal, lu })
    }

    fn mask(fixed: Option<&[bool]>, f: &mut VectorField) {
        if let Some(m) = fixed {
            f.set_masked(m, &[0.0, 0.0]);
        }
    }

    fn apply_normal(g: &Grid, fixed: Option<&[bool]>, phi: &[f64]) -> Vec<f64> {
        let mut t = divergence_transpose(phi, g);
        Self::mask(fixed, &mut t);
        divergence_unchecked(&t, g)
    }

    /// Projects `v`; fails if the output divergence exceeds 1e−8·‖v‖₀.
    pub fn apply(&self, v: &VectorField) -> Result<VectorField> {
        let g = &self.grid;
        if v.dim() != g.dim() {
            return Err(Error::config("div-free projection: component count differs from grid dimension"));
        }
        for c in &v.comps {
            g.check_len(c.len(), "div-free projection")?;
        }
        let mut out = v.clone();
        Self::mask(self.fixed.as_deref(), &mut out);
        let scale = v.l2(g).max(f64::MIN_POSITIVE);
        let mut div_norm = f64::INFINITY;
        for _ in 0..40 {
            let div = divergence_unchecked(&out, g);
            let prev = div_norm;
            div_norm = l2_norm(&div, g);
            if div_norm <= 1e-13 * scale || div_norm > 0.5 * prev {
                break;
            }
            let rhs: Vec<C64> = div.iter().map(|d| C64::new(*d, 0.0)).collect();
            let psi: Vec<f64> = self.lu.solve(&rhs).iter().map(|z| z.re).collect();
            let mut corr = divergence_transpose(&psi, g);
            Self::mask(self.fixed.as_deref(), &mut corr);
            out = out.sub(&corr);
        }
        if div_norm > 1e-8 * scale {
            return Err(Error::numerical("divergence-free projection did not converge", div_norm / scale));
        }
        Ok(out)
    }

    /// The unshifted normal matrix D M Dᵀ.
    pub fn normal_matrix(&self) -> &Banded {
        &self.normal
    }
}

/// One-off projection; build a [`DivFreeProjector`] to reuse the
/// factorization.
pub fn project_div_free(v: &VectorField, g: &Grid, fixed: Option<&[bool]>) -> Result<VectorField> {
    DivFreeProjector::new(g, fixed)?.apply(v)
}

/// Leray-type projector: removes the component in the range of the
/// transposed divergence, leaving a field whose discrete divergence vanishes
/// up to the linear-solver tolerance.
pub fn leray_project(v: &VectorField, g: &Grid) -> Result<VectorField> {
    if v.dim() != g.dim() {
        return Err(Error::config("leray_project: component count differs from grid dimension"));
    }
    project_div_free(v, g, None)
}
