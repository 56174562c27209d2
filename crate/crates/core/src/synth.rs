//! Seeded synthetic phantoms and simulated model outputs.
//!
//! Ground truth labels every voxel whose centre lies strictly inside an
//! organ's ellipsoid. A simulated model `j` scores organ channel `l` at a
//! voxel as `sharpness * (bias_j + noise_j(x) - sd_l(x))`, background scores
//! 0, where `sd_l` is the radial signed distance to the ellipsoid surface
//! (negative inside) and `noise_j` is a smooth random field.
//!
//! # Random stream contract
//!
//! Noise for case `k` and rater `j` comes from ChaCha8 (RFC 7539 block
//! function with 8 rounds) keyed by the little-endian bytes of
//! `seed.wrapping_add(k)` followed by 24 zero bytes, stream id `j`, counter
//! starting at 0. Each 64-bit output `u` maps to `(u >> 11) * 2^-53` in
//! `[0, 1)`, then to `amplitude * (2x - 1)`. Values fill a lattice with
//! `noise_lattice_mm` node spacing and `ceil(extent / spacing) + 1` nodes
//! per axis, x fastest, then y, then z, and the field at a voxel centre is
//! the trilinear interpolation of its cell's corners.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridGeometry, LabelVolume, ScoreVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganSpec {
    pub label: u8,
    pub name: String,
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub organs: Vec<OrganSpec>,
    pub raters: usize,
    /// Signed boundary offset per rater in mm, positive dilates. Empty means
    /// all zero.
    pub rater_bias_mm: Vec<f64>,
    pub noise_amplitude_mm: f64,
    pub noise_lattice_mm: f64,
    /// Slope mapping signed distance in mm to channel scores.
    pub sharpness: f64,
    /// Number of cases to generate; case `k` uses `seed + k`.
    pub cases: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2023,
            dims: [64, 64, 64],
            spacing: [1.0, 1.0, 1.0],
            organs: vec![
                OrganSpec {
                    label: 1,
                    name: "organ_a".into(),
                    center_mm: [21.0, 32.0, 32.0],
                    radii_mm: [9.0, 12.0, 10.0],
                },
                OrganSpec {
                    label: 2,
                    name: "organ_b".into(),
                    center_mm: [43.0, 31.0, 30.0],
                    radii_mm: [7.0, 8.0, 16.0],
                },
            ],
            raters: 5,
            rater_bias_mm: Vec::new(),
            noise_amplitude_mm: 2.0,
            noise_lattice_mm: 8.0,
            sharpness: 1.0,
            cases: 1,
        }
    }
}

/// Score assigned to channels that have no organ.
const ABSENT_SCORE: f32 = -1.0e6;

impl SynthConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.into(), reason: e.to_string() })
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.dims, self.spacing)
    }

    pub fn num_labels(&self) -> usize {
        self.organs.iter().map(|o| o.label as usize + 1).max().unwrap_or(2).max(2)
    }

    pub fn bias(&self, rater: usize) -> f64 {
        self.rater_bias_mm.get(rater).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        if self.raters == 0 {
            return Err(Error::Validation("synthetic config needs at least one rater".into()));
        }
        if !self.rater_bias_mm.is_empty() && self.rater_bias_mm.len() != self.raters {
            return Err(Error::Validation(format!(
                "rater_bias_mm lists {} values for {} raters",
                self.rater_bias_mm.len(),
                self.raters
            )));
        }
        if !(self.noise_amplitude_mm >= 0.0 && self.noise_amplitude_mm.is_finite()) {
            return Err(Error::Validation("noise_amplitude_mm must be finite and non-negative".into()));
        }
        if !(self.noise_lattice_mm > 0.0 && self.noise_lattice_mm.is_finite()) {
            return Err(Error::Validation("noise_lattice_mm must be positive".into()));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::Validation("sharpness must be positive".into()));
        }
        if self.rater_bias_mm.iter().any(|b| !b.is_finite()) {
            return Err(Error::Validation("rater biases must be finite".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for o in &self.organs {
            if o.label == 0 || !seen.insert(o.label) {
                return Err(Error::Validation(format!(
                    "organ `{}` has label {}; labels must be unique and non-zero",
                    o.name, o.label
                )));
            }
            if o.radii_mm.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
                return Err(Error::Validation(format!("organ `{}` needs positive radii", o.name)));
            }
        }
        Ok(())
    }
}

impl OrganSpec {
    /// Radial signed distance in mm from `p` to the surface along the ray
    /// from the centre; negative inside.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let d = [p[0] - self.center_mm[0], p[1] - self.center_mm[1], p[2] - self.center_mm[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let k = ((d[0] / self.radii_mm[0]).powi(2)
            + (d[1] / self.radii_mm[1]).powi(2)
            + (d[2] / self.radii_mm[2]).powi(2))
        .sqrt();
        if r == 0.0 {
            return -self.radii_mm.iter().copied().fold(f64::INFINITY, f64::min);
        }
        r * (1.0 - 1.0 / k)
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        let k2: f64 = (0..3).map(|a| ((p[a] - self.center_mm[a]) / self.radii_mm[a]).powi(2)).sum();
        k2 < 1.0
    }
}

/// Rasterised organs; fails if two organs claim the same voxel.
pub fn generate_ground_truth(config: &SynthConfig) -> Result<LabelVolume> {
    config.validate()?;
    let g = config.geometry()?;
    let mut data = vec![0u8; g.voxel_count()];
    for (i, slot) in data.iter_mut().enumerate() {
        let p = g.position_mm(g.coords(i));
        for o in &config.organs {
            if o.contains(p) {
                if *slot != 0 {
                    let other = config.organs.iter().find(|x| x.label == *slot).expect("placed organ");
                    return Err(Error::Validation(format!(
                        "organs `{}` and `{}` overlap at voxel {:?}",
                        other.name,
                        o.name,
                        g.coords(i)
                    )));
                }
                *slot = o.label;
            }
        }
    }
    LabelVolume::new(g, config.num_labels(), data)
}

/// Smooth noise field of one rater for one case, sampled at voxel centres.
pub fn noise_field(config: &SynthConfig, case: usize, rater: usize) -> Result<Vec<f64>> {
    let g = config.geometry()?;
    let dims = g.dims();
    let spacing = g.spacing();
    let step = config.noise_lattice_mm;
    let nodes: [usize; 3] =
        std::array::from_fn(|a| (((dims[a] - 1) as f64 * spacing[a]) / step).ceil() as usize + 1);
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&config.seed.wrapping_add(case as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(rater as u64);
    let amp = config.noise_amplitude_mm;
    let lattice: Vec<f64> = (0..nodes.iter().product::<usize>())
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            amp * (2.0 * u - 1.0)
        })
        .collect();
    let node = |i: [usize; 3]| lattice[(i[2] * nodes[1] + i[1]) * nodes[0] + i[0]];
    Ok((0..g.voxel_count())
        .map(|v| {
            let p = g.position_mm(g.coords(v));
            let mut base = [0usize; 3];
            let mut frac = [0f64; 3];
            for a in 0..3 {
                let t = p[a] / step;
                base[a] = (t.floor() as usize).min(nodes[a].saturating_sub(2));
                frac[a] = if nodes[a] > 1 { t - base[a] as f64 } else { 0.0 };
            }
            let mut acc = 0.0;
            for corner in 0..8 {
                let mut idx = base;
                let mut w = 1.0;
                for a in 0..3 {
                    let hi = corner >> a & 1 == 1;
                    if hi && nodes[a] > 1 {
                        idx[a] += 1;
                    }
                    w *= if hi { frac[a] } else { 1.0 - frac[a] };
                }
                acc += w * node(idx);
            }
            acc
        })
        .collect())
}

/// One simulated score volume per rater.
pub fn generate_model_outputs(config: &SynthConfig, case: usize, truth: &LabelVolume) -> Result<Vec<ScoreVolume<f32>>> {
    config.validate()?;
    let g = config.geometry()?;
    if *truth.geometry() != g {
        return Err(Error::GeometryMismatch("ground truth does not match the config grid".into()));
    }
    let c = config.num_labels();
    let n = g.voxel_count();
    (0..config.raters)
        .into_par_iter()
        .map(|j| {
            let noise = noise_field(config, case, j)?;
            let bias = config.bias(j);
            let mut data = vec![0f32; c * n];
            for ch in 1..c {
                let organ = config.organs.iter().find(|o| o.label as usize == ch);
                let slice = &mut data[ch * n..(ch + 1) * n];
                match organ {
                    None => slice.iter_mut().for_each(|s| *s = ABSENT_SCORE),
                    Some(o) => {
                        for (v, s) in slice.iter_mut().enumerate() {
                            let sd = o.signed_distance(g.position_mm(g.coords(v)));
                            *s = (config.sharpness * (bias + noise[v] - sd)) as f32;
                        }
                    }
                }
            }
            ScoreVolume::new(g, c, data)
        })
        .collect()
}
