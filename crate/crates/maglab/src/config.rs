//! Run configuration: a JSON document with every block optional. Unknown keys
//! are rejected, and every error names the key path and the line it sits on.
//!
//! | key | default |
//! |---|---|
//! | `command` | none (taken from the command line) |
//! | `seed` | 0 |
//! | `output` | `"out"` |
//! | `grid.dim`, `grid.n`, `grid.length` | 1, [65], [1.0] (one entry is broadcast to every axis) |
//! | `time.t_final`, `time.nt` | 1.0, 128 |
//! | `potential.seed` | global seed |
//! | `potential.delta`, `potential.bound`, `potential.modes` | 0.1, 3.0, 3 |
//! | `potential.a0` | 0.5 per axis |
//! | `potential.collar` | max(2h, 0.05·L) |
//! | `weights.x0` | −0.5 per axis |
//! | `weights.m`, `weights.lambdas`, `weights.s_list` | 2, [0.1], [1, 2, 4, 8] |
//! | `family.n`, `family.preset` | dim + 1, `"spanning"` |
//! | `noise` | 0 |
//! | `forward.potential`, `forward.initial`, `forward.mode` | `"random"`, `"eigenmode"`, 1 |
//! | `bounds.samples` | 20 |
//! | `carleman.samples`, `klibanov.samples` | 10, 10 |
//! | `sweep.pairs`, `sweep.deltas` | 30, [0.1] |
//! | `reconstruct.iterations`, `reconstruct.alpha_reg` | 200, 1e−6·‖data‖² |

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::inverse::FamilyPreset;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Forward,
    Bounds,
    Carleman,
    Klibanov,
    StabilitySweep,
    Reconstruct,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Forward, Command::Bounds, Command::Carleman, Command::Klibanov, Command::StabilitySweep, Command::Reconstruct];

    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Bounds => "bounds",
            Command::Carleman => "carleman",
            Command::Klibanov => "klibanov",
            Command::StabilitySweep => "stability-sweep",
            Command::Reconstruct => "reconstruct",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
            format!("unknown command {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    pub n: Vec<usize>,
    pub length: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 1, n: vec![65], length: vec![1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t_final: f64,
    pub nt: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { t_final: 1.0, nt: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialConfig {
    pub seed: Option<u64>,
    pub delta: f64,
    pub bound: f64,
    pub a0: Option<Vec<f64>>,
    pub collar: Option<f64>,
    pub modes: usize,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig { seed: None, delta: 0.1, bound: 3.0, a0: None, collar: None, modes: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub x0: Option<Vec<f64>>,
    pub m: f64,
    pub lambdas: Vec<f64>,
    pub s_list: Vec<f64>,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig { x0: None, m: 2.0, lambdas: vec![0.1], s_list: vec![1.0, 2.0, 4.0, 8.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    pub n: Option<usize>,
    pub preset: FamilyPreset,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig { n: None, preset: FamilyPreset::Spanning }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardPotential {
    /// a ≡ a₀.
    Constant,
    /// The reference potential of the configured pair.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardInitial {
    /// Dirichlet eigenmode with wavenumber `mode` along every axis.
    Eigenmode,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    pub potential: ForwardPotential,
    pub initial: ForwardInitial,
    pub mode: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig { potential: ForwardPotential::Random, initial: ForwardInitial::Eigenmode, mode: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplesConfig {
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub pairs: usize,
    pub deltas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { pairs: 30, deltas: vec![0.1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub iterations: usize,
    pub alpha_reg: Option<f64>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig { iterations: 200, alpha_reg: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub seed: u64,
    pub output: String,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub potential: PotentialConfig,
    pub weights: WeightsConfig,
    pub family: FamilyConfig,
    pub noise: f64,
    pub forward: ForwardConfig,
    pub bounds: SamplesConfig,
    pub carleman: SamplesConfig,
    pub klibanov: SamplesConfig,
    pub sweep: SweepConfig,
    pub reconstruct: ReconstructConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            seed: 0,
            output: "out".into(),
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            potential: PotentialConfig::default(),
            weights: WeightsConfig::default(),
            family: FamilyConfig::default(),
            noise: 0.0,
            forward: ForwardConfig::default(),
            bounds: SamplesConfig { samples: 20 },
            carleman: SamplesConfig { samples: 10 },
            klibanov: SamplesConfig { samples: 10 },
            sweep: SweepConfig::default(),
            reconstruct: ReconstructConfig::default(),
        }
    }
}

impl Default for SamplesConfig {
    fn default() -> Self {
        SamplesConfig { samples: 10 }
    }
}

/// Line of the value at a dotted key path, found by walking the keys in
/// document order.
fn line_of(text: &str, path: &str) -> Option<usize> {
    let mut pos = 0;
    for key in path.split('.') {
        let pat = format!("\"{key}\"");
        pos += text[pos..].find(&pat)? + pat.len();
    }
    Some(text[..pos].matches('\n').count() + 1)
}

fn invalid(text: &str, path: &str, msg: impl fmt::Display) -> Error {
    match line_of(text, path) {
        Some(l) => Error::config(format!("{path} (line {l}): {msg}")),
        None => Error::config(format!("{path} (default): {msg}")),
    }
}

/// Parses and validates a configuration document. Blank text gives the
/// defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let src = if text.trim().is_empty() { "{}" } else { text };
    let de = &mut serde_json::Deserializer::from_str(src);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::config(format!("{path} (line {}, column {}): {inner}", inner.line(), inner.column()))
    })?;
    cfg.validate(src)?;
    Ok(cfg)
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn per_axis<T: Clone>(&self, v: &[T]) -> Vec<T> {
        if v.len() == 1 {
            vec![v[0].clone(); self.grid.dim]
        } else {
            v.to_vec()
        }
    }

    pub fn build_grid(&self) -> Result<Grid> {
        let (n, l) = (self.per_axis(&self.grid.n), self.per_axis(&self.grid.length));
        if self.grid.dim == 1 {
            Grid::new_1d(n[0], l[0])
        } else {
            Grid::new_2d(n[0], n[1], l[0], l[1])
        }
    }

    pub fn a0(&self) -> Vec<f64> {
        self.potential.a0.clone().unwrap_or_else(|| vec![0.5; self.grid.dim])
    }

    pub fn x0(&self) -> Vec<f64> {
        self.weights.x0.clone().unwrap_or_else(|| vec![-0.5; self.grid.dim])
    }

    pub fn collar(&self, g: &Grid) -> f64 {
        self.potential.collar.unwrap_or_else(|| g.collar_width())
    }

    pub fn family_size(&self) -> usize {
        self.family.n.unwrap_or(self.grid.dim + 1)
    }

    pub fn potential_seed(&self) -> u64 {
        self.potential.seed.unwrap_or(self.seed)
    }

    fn validate(&self, text: &str) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(invalid(text, path, msg));
        let dim = self.grid.dim;
        if !(1..=2).contains(&dim) {
            return bad("grid.dim", "must be 1 or 2");
        }
        if self.grid.n.len() != 1 && self.grid.n.len() != dim {
            return bad("grid.n", "needs one entry or one per axis");
        }
        if self.grid.length.len() != 1 && self.grid.length.len() != dim {
            return bad("grid.length", "needs one entry or one per axis");
        }
        if let Err(e) = self.build_grid() {
            return Err(invalid(text, "grid", e));
        }
        let g = self.build_grid()?;
        if !(self.time.t_final > 0.0 && self.time.t_final.is_finite()) {
            return bad("time.t_final", "must be positive and finite");
        }
        if self.time.nt == 0 {
            return bad("time.nt", "must be at least 1");
        }
        let p = &self.potential;
        if !(p.delta >= 0.0 && p.delta.is_finite()) {
            return bad("potential.delta", "perturbation scale must be nonnegative and finite");
        }
        let a0 = self.a0();
        if a0.len() != dim || a0.iter().any(|v| !v.is_finite()) {
            return bad("potential.a0", "needs one finite entry per axis");
        }
        let a0n = a0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(p.bound > a0n && p.bound.is_finite()) {
            return bad("potential.bound", "must exceed |a0|");
        }
        if let Some(c) = p.collar {
            if !(c >= 2.0 * g.h() && c < 0.25 * (0..dim).map(|a| g.len(a)).fold(f64::INFINITY, f64::min)) {
                return bad("potential.collar", "must be at least 2h and below a quarter of the shortest side");
            }
        }
        if p.modes == 0 {
            return bad("potential.modes", "must be at least 1");
        }
        let w = &self.weights;
        let x0 = self.x0();
        if x0.len() != dim || x0.iter().any(|v| !v.is_finite()) {
            return bad("weights.x0", "needs one finite entry per axis");
        }
        if (0..dim).all(|a| x0[a] >= 0.0 && x0[a] <= g.len(a)) {
            return bad("weights.x0", "must lie outside the closed domain");
        }
        if !(w.m > 1.0 && w.m.is_finite()) {
            return bad("weights.m", "must exceed 1");
        }
        if w.lambdas.is_empty() || w.lambdas.iter().any(|&l| !(l > 0.0 && l < 35.0)) {
            return bad("weights.lambdas", "needs at least one value in (0, 35)");
        }
        if w.s_list.is_empty() || w.s_list.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("weights.s_list", "needs at least one positive value");
        }
        if self.family_size() == 0 {
            return bad("family.n", "must be at least 1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise", "must be nonnegative");
        }
        if self.forward.mode == 0 {
            return bad("forward.mode", "wavenumbers start at 1");
        }
        if self.sweep.deltas.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return bad("sweep.deltas", "perturbation scales must be nonnegative");
        }
        if let Some(a) = self.reconstruct.alpha_reg {
            if !(a >= 0.0 && a.is_finite()) {
                return bad("reconstruct.alpha_reg", "must be nonnegative");
            }
        }
        if self.output.is_empty() {
            return bad("output", "must name a directory");
        }
        Ok(())
    }
}
