//! Voxel grid value types.
//!
//! All volumes are stored x-fastest, then y, then z; score volumes add the
//! channel as the slowest axis. Voxel `(x, y, z)` has its centre at
//! `(x * sx, y * sy, z * sz)` millimetres.

use crate::error::{Error, Result};
use crate::real::Real;

/// Grid extent in voxels and physical spacing in millimetres per voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "voxel spacing must be finite and positive, got {spacing:?}"
            )));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= isize::MAX as usize)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("grid {dims:?} exceeds addressable size"))
            })?;
        Ok(Self { dims, spacing })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical position of a voxel centre in mm.
    pub fn position_mm(&self, voxel: [usize; 3]) -> [f64; 3] {
        [
            voxel[0] as f64 * self.spacing[0],
            voxel[1] as f64 * self.spacing[1],
            voxel[2] as f64 * self.spacing[2],
        ]
    }

    /// Same spacing, different extent.
    pub fn with_dims(&self, dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, self.spacing)
    }

    pub fn bounds(&self) -> BoundingBox {
        BoundingBox {
            min: [0; 3],
            max: [self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1],
        }
    }
}

/// Per-model channel scores. Channel 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVolume<T> {
    geometry: GridGeometry,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> ScoreVolume<T> {
    pub fn new(geometry: GridGeometry, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels < 2 {
            return Err(Error::InvalidArgument(format!(
                "score volumes need at least 2 channels, got {channels}"
            )));
        }
        let expected = geometry
            .voxel_count()
            .checked_mul(channels)
            .ok_or_else(|| Error::InvalidArgument("score volume too large".into()))?;
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "score data holds {} values, expected {channels} x {}",
                data.len(),
                geometry.voxel_count()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite score at flat index {i}"
            )));
        }
        Ok(Self {
            geometry,
            channels,
            data,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Scores of one channel over the whole grid.
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.geometry.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn score(&self, channel: usize, voxel: usize) -> T {
        self.data[channel * self.geometry.voxel_count() + voxel]
    }
}

/// One 8-bit label per voxel; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: GridGeometry,
    num_labels: usize,
    data: Vec<u8>,
}

pub const MAX_LABELS: usize = 256;

impl LabelVolume {
    pub fn new(geometry: GridGeometry, num_labels: usize, data: Vec<u8>) -> Result<Self> {
        if !(2..=MAX_LABELS).contains(&num_labels) {
            return Err(Error::InvalidArgument(format!(
                "label count must be in 2..=256, got {num_labels}"
            )));
        }
        if data.len() != geometry.voxel_count() {
            return Err(Error::Validation(format!(
                "label data holds {} values, expected {}",
                data.len(),
                geometry.voxel_count()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v as usize >= num_labels) {
            return Err(Error::Validation(format!(
                "label {} at flat index {i} exceeds label count {num_labels}",
                data[i]
            )));
        }
        Ok(Self {
            geometry,
            num_labels,
            data,
        })
    }

    /// Label volume whose label count is inferred as `max(2, max label + 1)`.
    pub fn from_labels(geometry: GridGeometry, data: Vec<u8>) -> Result<Self> {
        let max = data.iter().copied().max().unwrap_or(0) as usize;
        Self::new(geometry, (max + 1).max(2), data)
    }

    pub fn zeros(geometry: GridGeometry, num_labels: usize) -> Result<Self> {
        Self::new(geometry, num_labels, vec![0; geometry.voxel_count()])
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Re-declare the label count, e.g. to align masks that happen to miss
    /// the highest organ.
    pub fn with_num_labels(self, num_labels: usize) -> Result<Self> {
        Self::new(self.geometry, num_labels, self.data)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.geometry.index(x, y, z)]
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_labels {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} labels",
                self.num_labels
            )));
        }
        Ok(())
    }

    pub fn count(&self, label: usize) -> Result<usize> {
        self.check_label(label)?;
        Ok(self.data.iter().filter(|&&v| v as usize == label).count())
    }

    /// Tightest box holding every voxel of `label`, `None` when absent.
    pub fn bounding_box(&self, label: usize) -> Result<Option<BoundingBox>> {
        self.check_label(label)?;
        let [nx, ny, nz] = self.geometry.dims;
        let mut bbox: Option<BoundingBox> = None;
        let mut idx = 0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if self.data[idx] as usize == label {
                        let p = [x, y, z];
                        match bbox.as_mut() {
                            Some(b) => b.include(p),
                            None => bbox = Some(BoundingBox { min: p, max: p }),
                        }
                    }
                    idx += 1;
                }
            }
        }
        Ok(bbox)
    }

    /// Volume of one structure in cm³.
    pub fn structure_volume_cm3(&self, label: usize) -> Result<f64> {
        let n = self.count(label)?;
        Ok(n as f64 * self.geometry.voxel_volume_mm3() / 1000.0)
    }

    /// Binary indicator of `label` restricted to `region`, x-fastest.
    pub fn indicator_in(&self, label: u8, region: &BoundingBox) -> Vec<bool> {
        let mut out = Vec::with_capacity(region.voxel_count());
        for z in region.min[2]..=region.max[2] {
            for y in region.min[1]..=region.max[1] {
                let row = self.geometry.index(region.min[0], y, z);
                let len = region.max[0] - region.min[0] + 1;
                out.extend(self.data[row..row + len].iter().map(|&v| v == label));
            }
        }
        out
    }
}

/// Inclusive voxel index ranges per axis, `(x, y, z)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Self {
        assert!((0..3).all(|a| min[a] <= max[a]), "inverted box");
        Self { min, max }
    }

    pub fn include(&mut self, p: [usize; 3]) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        let mut out = *self;
        out.include(other.min);
        out.include(other.max);
        out
    }

    /// Grow every face by `margin` voxels and clamp to the grid.
    pub fn dilate(&self, margin: usize, geometry: &GridGeometry) -> BoundingBox {
        let dims = geometry.dims();
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].saturating_sub(margin);
            out.max[a] = self.max[a].saturating_add(margin).min(dims[a] - 1);
        }
        out
    }

    pub fn extent(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }

    pub fn voxel_count(&self) -> usize {
        self.extent().iter().product()
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    /// Grid flat indices of every voxel in the box, x-fastest.
    pub fn grid_indices<'a>(&'a self, geometry: &'a GridGeometry) -> impl Iterator<Item = usize> + 'a {
        (self.min[2]..=self.max[2]).flat_map(move |z| {
            (self.min[1]..=self.max[1]).flat_map(move |y| {
                let row = geometry.index(0, y, z);
                (self.min[0]..=self.max[0]).map(move |x| row + x)
            })
        })
    }
}

pub(crate) fn check_same_geometry<'a>(
    mut geometries: impl Iterator<Item = &'a GridGeometry>,
) -> Result<GridGeometry> {
    let first = *geometries
        .next()
        .ok_or_else(|| Error::InvalidArgument("at least one volume is required".into()))?;
    for (i, g) in geometries.enumerate() {
        if *g != first {
            return Err(Error::GeometryMismatch(format!(
                "volume {} has dims {:?} spacing {:?}, volume 0 has dims {:?} spacing {:?}",
                i + 1,
                g.dims(),
                g.spacing(),
                first.dims(),
                first.spacing()
            )));
        }
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube_geometry(n: usize) -> GridGeometry {
        GridGeometry::new([n, n, n], [1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn geometry_rejects_bad_input() {
        assert!(GridGeometry::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(GridGeometry::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        assert!(GridGeometry::new([1, 1, 1], [1.0, f64::NAN, 1.0]).is_err());
        assert!(GridGeometry::new([usize::MAX, 2, 2], [1.0; 3]).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = GridGeometry::new([3, 4, 5], [1.0; 3]).unwrap();
        for i in 0..g.voxel_count() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
    }

    #[test]
    fn volume_invariants_enforced() {
        let g = cube_geometry(2);
        assert!(LabelVolume::new(g, 2, vec![0; 7]).is_err());
        assert!(LabelVolume::new(g, 2, vec![2; 8]).is_err());
        assert!(LabelVolume::new(g, 1, vec![0; 8]).is_err());
        assert!(ScoreVolume::new(g, 2, vec![0.0f32; 15]).is_err());
        let mut bad = vec![0.0f32; 16];
        bad[3] = f32::INFINITY;
        assert!(ScoreVolume::new(g, 2, bad).is_err());
        assert!(ScoreVolume::new(g, 1, vec![0.0f32; 8]).is_err());
    }

    #[test]
    fn bounding_box_single_voxel() {
        let g = cube_geometry(8);
        let mut data = vec![0u8; g.voxel_count()];
        data[g.index(3, 4, 5)] = 1;
        let m = LabelVolume::new(g, 3, data).unwrap();
        let b = m.bounding_box(1).unwrap().unwrap();
        assert_eq!(b, BoundingBox::new([3, 4, 5], [3, 4, 5]));
        assert_eq!(m.bounding_box(2).unwrap(), None);
        assert!(matches!(
            m.bounding_box(3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dilate_examples() {
        let b = BoundingBox::new([3, 4, 5], [3, 4, 5]);
        assert_eq!(b.dilate(0, &cube_geometry(16)), b);
        assert_eq!(
            b.dilate(2, &cube_geometry(16)),
            BoundingBox::new([1, 2, 3], [5, 6, 7])
        );
        let small = BoundingBox::new([0, 0, 0], [1, 1, 1]);
        assert_eq!(
            small.dilate(5, &cube_geometry(4)),
            BoundingBox::new([0, 0, 0], [3, 3, 3])
        );
    }

    #[test]
    fn structure_volume_examples() {
        let g = cube_geometry(12);
        let mut data = vec![0u8; g.voxel_count()];
        for z in 1..11 {
            for y in 1..11 {
                for x in 1..11 {
                    data[g.index(x, y, z)] = 1;
                }
            }
        }
        let m = LabelVolume::new(g, 3, data).unwrap();
        assert!((m.structure_volume_cm3(1).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.structure_volume_cm3(2).unwrap(), 0.0);
        assert!(m.structure_volume_cm3(3).is_err());

        let g = GridGeometry::new([10, 10, 10], [0.9766, 0.9766, 2.0]).unwrap();
        let data: Vec<u8> = (0..1000).map(|i| (i < 500) as u8).collect();
        let m = LabelVolume::new(g, 2, data).unwrap();
        // counting oracle: sum the per-voxel volume one voxel at a time
        let oracle: f64 = m
            .data()
            .iter()
            .filter(|&&v| v == 1)
            .map(|_| 0.9766 * 0.9766 * 2.0)
            .sum::<f64>()
            / 1000.0;
        let direct = 500.0 * 0.9766 * 0.9766 * 2.0 / 1000.0;
        let got = m.structure_volume_cm3(1).unwrap();
        assert!((got - direct).abs() <= 1e-12 * direct);
        assert!((got - oracle).abs() <= 1e-12 * direct);
    }

    #[test]
    fn indicator_in_box() {
        let g = GridGeometry::new([4, 3, 2], [1.0; 3]).unwrap();
        let data: Vec<u8> = (0..24).map(|i| (i % 2) as u8).collect();
        let m = LabelVolume::new(g, 2, data).unwrap();
        let b = BoundingBox::new([1, 1, 0], [2, 2, 1]);
        let ind = m.indicator_in(1, &b);
        let expected: Vec<bool> = b.grid_indices(&g).map(|i| m.data()[i] == 1).collect();
        assert_eq!(ind, expected);
        assert_eq!(ind.len(), 8);
    }

    fn label_volume_strategy() -> impl Strategy<Value = LabelVolume> {
        (1usize..7, 1usize..7, 1usize..7, 2usize..5, 0.1f64..3.0, 0.1f64..3.0, 0.1f64..3.0)
            .prop_flat_map(|(nx, ny, nz, l, sx, sy, sz)| {
                let n = nx * ny * nz;
                proptest::collection::vec(0u8..l as u8, n).prop_map(move |data| {
                    let g = GridGeometry::new([nx, ny, nz], [sx, sy, sz]).unwrap();
                    LabelVolume::new(g, l, data).unwrap()
                })
            })
    }

    proptest! {
        #[test]
        fn volumes_sum_to_grid_volume(m in label_volume_strategy()) {
            let g = m.geometry();
            let total = g.voxel_count() as f64 * g.voxel_volume_mm3() / 1000.0;
            let sum: f64 = (0..m.num_labels()).map(|l| m.structure_volume_cm3(l).unwrap()).sum();
            prop_assert!((sum - total).abs() <= 1e-9 * total);
        }

        #[test]
        fn bounding_box_matches_scan(m in label_volume_strategy(), label in 0usize..2) {
            let g = *m.geometry();
            let mut lo = [usize::MAX; 3];
            let mut hi = [0usize; 3];
            let mut any = false;
            for i in 0..g.voxel_count() {
                if m.data()[i] as usize == label {
                    any = true;
                    let c = g.coords(i);
                    for a in 0..3 {
                        lo[a] = lo[a].min(c[a]);
                        hi[a] = hi[a].max(c[a]);
                    }
                }
            }
            let got = m.bounding_box(label).unwrap();
            if any {
                let b = got.unwrap();
                prop_assert_eq!(b, BoundingBox::new(lo, hi));
                prop_assert_eq!(b.dilate(0, &g), b);
            } else {
                prop_assert!(got.is_none());
            }
        }
    }
}
