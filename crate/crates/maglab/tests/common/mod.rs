#![allow(dead_code)]

use maglab::grid::{project_div_free, Grid};
use maglab::hamiltonian::{Gauge, MagneticPotential, TimeProfile};
use maglab::rng::{smooth_vector, substream};
use maglab::{VectorField, C64};

/// Divergence-free potential equal to `a0` on the collar, scaled to sup-norm `amp`.
pub fn random_potential(g: &Grid, seed: u64, amp: f64, a0: &[f64], t_final: f64) -> MagneticPotential {
    let collar = g.collar_width();
    let mask = g.collar_mask(collar);
    let raw = smooth_vector(g, &mut substream(seed, "test-potential"), 4);
    let v = project_div_free(&raw, g, Some(&mask)).unwrap();
    let v = v.scale(amp / v.sup_norm());
    let a = v.add(&VectorField::constant(g, a0));
    let bound = a.sup_norm() * 1.01;
    MagneticPotential::new(g, a, bound, a0, TimeProfile::default_for(t_final), t_final, Gauge::Coulomb, collar).unwrap()
}

pub fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}
