//! Surface-distance and volume metrics.
//!
//! Surfaces are the structure voxels with at least one 6-neighbour outside
//! the structure (the grid edge counts as outside). Distances are measured
//! between voxel centres in millimetres with an exact separable squared
//! Euclidean distance transform (lower envelope of parabolas, one pass per
//! axis, spacing applied per axis).
//!
//! * mDTA is the average of the two directed mean surface distances.
//! * HD95 is the larger of the two directed nearest-rank 95th percentiles,
//!   the `ceil(0.95 n)`-th smallest of `n` sorted distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::volume::{check_same_geometry, BoundingBox, GridGeometry, LabelVolume};

/// Boundary voxels of one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    geometry: GridGeometry,
    voxels: Vec<[usize; 3]>,
}

impl SurfaceSet {
    /// Wraps explicit voxel coordinates, e.g. EDT targets that are not a
    /// structure boundary.
    pub fn from_voxels(geometry: GridGeometry, voxels: Vec<[usize; 3]>) -> Result<Self> {
        let dims = geometry.dims();
        if let Some(v) = voxels.iter().find(|v| (0..3).any(|a| v[a] >= dims[a])) {
            return Err(Error::InvalidArgument(format!(
                "voxel {v:?} lies outside grid {dims:?}"
            )));
        }
        Ok(Self { geometry, voxels })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn voxels(&self) -> &[[usize; 3]] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (first, rest) = self.voxels.split_first()?;
        let mut b = BoundingBox::new(*first, *first);
        rest.iter().for_each(|&v| b.include(v));
        Some(b)
    }
}

/// Boundary voxels of `label`, in grid (x-fastest) order.
pub fn extract_surface(mask: &LabelVolume, label: usize) -> Result<SurfaceSet> {
    let Some(bbox) = mask.bounding_box(label)? else {
        return Ok(SurfaceSet { geometry: *mask.geometry(), voxels: Vec::new() });
    };
    let g = *mask.geometry();
    let [nx, ny, nz] = g.dims();
    let label = label as u8;
    let data = mask.data();
    let mut voxels = Vec::new();
    for z in bbox.min[2]..=bbox.max[2] {
        for y in bbox.min[1]..=bbox.max[1] {
            for x in bbox.min[0]..=bbox.max[0] {
                let i = g.index(x, y, z);
                if data[i] != label {
                    continue;
                }
                let boundary = x == 0
                    || x + 1 == nx
                    || y == 0
                    || y + 1 == ny
                    || z == 0
                    || z + 1 == nz
                    || data[i - 1] != label
                    || data[i + 1] != label
                    || data[i - nx] != label
                    || data[i + nx] != label
                    || data[i - nx * ny] != label
                    || data[i + nx * ny] != label;
                if boundary {
                    voxels.push([x, y, z]);
                }
            }
        }
    }
    Ok(SurfaceSet { geometry: g, voxels })
}

/// Exact 1-D squared distance transform of `f` sampled every `step` mm,
/// written into `out`. `f` entries are squared distances or infinity.
fn squared_edt_1d<T: Real>(f: &[T], step: T, out: &mut [T], hull: &mut Vec<usize>, breaks: &mut Vec<T>) {
    let n = f.len();
    hull.clear();
    breaks.clear();
    let pos = |i: usize| T::of(i as f64) * step;
    // Intersection abscissa of the parabolas rooted at u and v (u < v).
    let meet = |u: usize, v: usize| -> T {
        let (pu, pv) = (pos(u), pos(v));
        ((f[v] + pv * pv) - (f[u] + pu * pu)) / ((pv - pu) + (pv - pu))
    };
    for q in 0..n {
        if f[q] == T::infinity() {
            continue;
        }
        while let Some(&top) = hull.last() {
            let s = meet(top, q);
            if hull.len() > 1 && s <= *breaks.last().unwrap() {
                hull.pop();
                breaks.pop();
            } else {
                breaks.push(s);
                break;
            }
        }
        hull.push(q);
    }
    if hull.is_empty() {
        out.iter_mut().for_each(|o| *o = T::infinity());
        return;
    }
    // breaks[k] separates hull[k] from hull[k + 1].
    let mut k = 0;
    for (x, o) in out.iter_mut().enumerate() {
        let px = pos(x);
        while k < breaks.len() && breaks[k] < px {
            k += 1;
        }
        let root = hull[k];
        let d = px - pos(root);
        *o = d * d + f[root];
    }
}

/// Squared distances in mm² from every voxel of `region` to the nearest target.
/// Targets outside `region` are ignored.
fn squared_edt_in_box<T: Real>(targets: &[[usize; 3]], geometry: &GridGeometry, region: &BoundingBox) -> Vec<T> {
    let [ex, ey, ez] = region.extent();
    let spacing = geometry.spacing();
    let mut field = vec![T::infinity(); ex * ey * ez];
    for t in targets.iter().filter(|t| region.contains(**t)) {
        let (x, y, z) = (t[0] - region.min[0], t[1] - region.min[1], t[2] - region.min[2]);
        field[(z * ey + y) * ex + x] = T::zero();
    }
    let scratch = || (Vec::new(), Vec::new(), Vec::new(), Vec::new());

    // x: contiguous rows
    field.par_chunks_mut(ex).for_each_init(scratch, |(line, _, hull, breaks), row| {
        line.clear();
        line.extend_from_slice(row);
        squared_edt_1d(line, T::of(spacing[0]), row, hull, breaks);
    });

    // y: columns within each z slab
    field.par_chunks_mut(ex * ey).for_each_init(scratch, |(line, out, hull, breaks), slab| {
        out.resize(ey, T::zero());
        for x in 0..ex {
            line.clear();
            line.extend((0..ey).map(|y| slab[y * ex + x]));
            squared_edt_1d(line, T::of(spacing[1]), out, hull, breaks);
            for y in 0..ey {
                slab[y * ex + x] = out[y];
            }
        }
    });

    // z: strided lines, computed per (x, y) and scattered back
    let plane = ex * ey;
    let columns: Vec<Vec<T>> = (0..plane)
        .into_par_iter()
        .map_init(scratch, |(line, _, hull, breaks), xy| {
            line.clear();
            line.extend((0..ez).map(|z| field[z * plane + xy]));
            let mut out = vec![T::zero(); ez];
            squared_edt_1d(line, T::of(spacing[2]), &mut out, hull, breaks);
            out
        })
        .collect();
    for (xy, col) in columns.into_iter().enumerate() {
        for (z, v) in col.into_iter().enumerate() {
            field[z * plane + xy] = v;
        }
    }
    field
}

/// Distance in mm from every voxel centre of the grid to the nearest target.
pub fn distance_field<T: Real>(targets: &SurfaceSet) -> Result<Vec<T>> {
    if targets.is_empty() {
        return Err(Error::EmptyStructure("distance field needs at least one target".into()));
    }
    let g = targets.geometry();
    let mut field = squared_edt_in_box::<T>(targets.voxels(), g, &g.bounds());
    field.iter_mut().for_each(|v| *v = v.sqrt());
    Ok(field)
}

/// Directed surface distances in both directions between two surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDistances<T> {
    /// From each `a` voxel to the nearest `b` voxel.
    pub a_to_b: Vec<T>,
    /// From each `b` voxel to the nearest `a` voxel.
    pub b_to_a: Vec<T>,
}

impl<T: Real> SurfaceDistances<T> {
    pub fn between(a: &SurfaceSet, b: &SurfaceSet) -> Result<Self> {
        let g = check_same_geometry([a.geometry(), b.geometry()].into_iter())?;
        let (Some(ba), Some(bb)) = (a.bounding_box(), b.bounding_box()) else {
            return Err(Error::EmptyStructure("surface distance needs two non-empty surfaces".into()));
        };
        // Every query and every target lies inside the union box, so the
        // transform restricted to it is exact.
        let region = ba.union(&bb);
        let [ex, ey, _] = region.extent();
        let local = |v: &[usize; 3]| {
            ((v[2] - region.min[2]) * ey + (v[1] - region.min[1])) * ex + (v[0] - region.min[0])
        };
        let directed = |from: &SurfaceSet, to: &SurfaceSet| -> Vec<T> {
            let field = squared_edt_in_box::<T>(to.voxels(), &g, &region);
            from.voxels().iter().map(|v| field[local(v)].sqrt()).collect()
        };
        Ok(Self { a_to_b: directed(a, b), b_to_a: directed(b, a) })
    }

    pub fn mdta(&self) -> T {
        let mean = |d: &[T]| d.iter().fold(T::zero(), |acc, &v| acc + v) / T::of(d.len() as f64);
        (mean(&self.a_to_b) + mean(&self.b_to_a)) / T::of(2.0)
    }

    pub fn hd95(&self) -> T {
        directed_percentile(&self.a_to_b, 95).max(directed_percentile(&self.b_to_a, 95))
    }
}

/// Nearest-rank percentile: the `ceil(pct * n / 100)`-th smallest value.
pub fn directed_percentile<T: Real>(distances: &[T], pct: usize) -> T {
    assert!(!distances.is_empty() && (1..=100).contains(&pct));
    let mut sorted = distances.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = sorted.len();
    let rank = (pct * n).div_ceil(100);
    sorted[rank.max(1) - 1]
}

/// Bidirectional mean distance-to-agreement in mm.
pub fn mdta<T: Real>(pred: &SurfaceSet, reference: &SurfaceSet) -> Result<T> {
    SurfaceDistances::between(pred, reference).map(|d| d.mdta())
}

/// 95th-percentile Hausdorff distance in mm.
pub fn hd95<T: Real>(pred: &SurfaceSet, reference: &SurfaceSet) -> Result<T> {
    SurfaceDistances::between(pred, reference).map(|d| d.hd95())
}

/// Signed volume difference `pred - reference` in cm³.
pub fn volume_difference(pred: &LabelVolume, reference: &LabelVolume, label: usize) -> Result<f64> {
    check_same_geometry([pred.geometry(), reference.geometry()].into_iter())?;
    Ok(pred.structure_volume_cm3(label)? - reference.structure_volume_cm3(label)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricFlag {
    EmptyPrediction,
    EmptyReference,
}

impl MetricFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricFlag::EmptyPrediction => "empty-prediction",
            MetricFlag::EmptyReference => "empty-reference",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "empty-prediction" => Some(MetricFlag::EmptyPrediction),
            "empty-reference" => Some(MetricFlag::EmptyReference),
            _ => None,
        }
    }
}

/// Metrics of one structure. Distance metrics are `None` when either
/// structure is empty; `flags` says which.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganMetrics {
    pub label: u8,
    pub organ: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mdta_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hd95_mm: Option<f64>,
    pub volume_diff_cm3: f64,
    pub flags: Vec<MetricFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case_id: String,
    pub method: String,
    pub organs: Vec<OrganMetrics>,
}

/// Score `pred` against `reference` for every `(label, organ name)` pair.
pub fn evaluate_case(
    case_id: &str,
    method: &str,
    pred: &LabelVolume,
    reference: &LabelVolume,
    labels: &[(u8, String)],
) -> Result<MetricReport> {
    check_same_geometry([pred.geometry(), reference.geometry()].into_iter())?;
    let organs = labels
        .par_iter()
        .map(|(label, organ)| {
            let l = *label as usize;
            let ps = extract_surface(pred, l)?;
            let rs = extract_surface(reference, l)?;
            let mut flags = Vec::new();
            if ps.is_empty() {
                flags.push(MetricFlag::EmptyPrediction);
            }
            if rs.is_empty() {
                flags.push(MetricFlag::EmptyReference);
            }
            let (mdta_mm, hd95_mm) = if flags.is_empty() {
                let d = SurfaceDistances::<f64>::between(&ps, &rs)?;
                (Some(d.mdta()), Some(d.hd95()))
            } else {
                (None, None)
            };
            Ok(OrganMetrics {
                label: *label,
                organ: organ.clone(),
                mdta_mm,
                hd95_mm,
                volume_diff_cm3: volume_difference(pred, reference, l)?,
                flags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { case_id: case_id.to_string(), method: method.to_string(), organs })
}
