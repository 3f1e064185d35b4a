//! Named random substreams derived from one global seed, and smooth random
//! fields built from low-order sine series.

use crate::grid::{Grid, VectorField, C64};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, purpose)`.
pub fn substream(seed: u64, purpose: &str) -> Stream {
    let mut h = splitmix(seed);
    for b in purpose.bytes() {
        h = splitmix(h ^ b as u64);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Uniform sample in [-1, 1).
pub fn sym(rng: &mut Stream) -> f64 {
    rng.random_range(-1.0..1.0)
}

/// Random coefficients of a sine series with `modes` terms per axis and
/// algebraic decay, as a closure over physical coordinates.
pub struct SineSeries {
    dim: usize,
    len: [f64; 2],
    coef: Vec<(usize, usize, f64)>,
}

impl SineSeries {
    pub fn random(g: &Grid, rng: &mut Stream, modes: usize, decay: f64) -> Self {
        let my = if g.dim() == 2 { modes } else { 1 };
        let mut coef = Vec::new();
        for ky in 1..=my {
            for kx in 1..=modes {
                let c = sym(rng) / ((kx * kx + ky * ky) as f64).powf(0.5 * decay);
                coef.push((kx, ky, c));
            }
        }
        SineSeries { dim: g.dim(), len: [g.len(0), g.len(1)], coef }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        self.coef
            .iter()
            .map(|&(kx, ky, c)| {
                let sx = (kx as f64 * PI * x[0] / self.len[0]).sin();
                let sy = if self.dim == 2 { (ky as f64 * PI * x[1] / self.len[1]).sin() } else { 1.0 };
                c * sx * sy
            })
            .sum()
    }

    /// Second derivative sum (exact Laplacian of the series).
    pub fn laplacian(&self, x: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        self.coef
            .iter()
            .map(|&(kx, ky, c)| {
                let wx = kx as f64 * PI / self.len[0];
                let wy = ky as f64 * PI / self.len[1].max(f64::MIN_POSITIVE);
                let sx = (wx * x[0]).sin();
                let (sy, k2) = if self.dim == 2 { ((wy * x[1]).sin(), wx * wx + wy * wy) } else { (1.0, wx * wx) };
                -k2 * c * sx * sy
            })
            .sum()
    }
}

/// Smooth complex field vanishing on the boundary.
pub fn smooth_complex(g: &Grid, rng: &mut Stream, modes: usize) -> Vec<C64> {
    let re = SineSeries::random(g, rng, modes, 2.0);
    let im = SineSeries::random(g, rng, modes, 2.0);
    g.sample(|x| C64::new(re.eval(x), im.eval(x)))
}

/// Smooth real vector field with components in a generic position (not
/// vanishing on the boundary).
pub fn smooth_vector(g: &Grid, rng: &mut Stream, modes: usize) -> VectorField {
    use std::f64::consts::PI;
    let mut comps = Vec::new();
    for _ in 0..g.dim() {
        let mut terms = Vec::new();
        for _ in 0..modes {
            terms.push((sym(rng), rng.random_range(0.5..(modes as f64 + 0.5)), rng.random_range(0.5..(modes as f64 + 0.5)), sym(rng) * PI));
        }
        let c = g.sample(|x| {
            terms
                .iter()
                .map(|&(a, kx, ky, ph)| a * (kx * PI * x[0] / g.len(0) + ky * PI * x[1] / g.len(1).max(1e-300) + ph).cos())
                .sum::<f64>()
                / modes as f64
        });
        comps.push(c);
    }
    VectorField { comps }
}

/// Discrete white-noise complex field, zero on the boundary.
pub fn rough_complex(g: &Grid, rng: &mut Stream) -> Vec<C64> {
    (0..g.nodes())
        .map(|p| if g.is_boundary(p) { C64::new(0.0, 0.0) } else { C64::new(sym(rng), sym(rng)) })
        .collect()
}
