//! Ensemble strategies over per-model score volumes or masks.
//!
//! Score files hold raw pre-softmax channel scores. Per-voxel channel sums
//! are accumulated in `f64` over the model values sorted ascending, so the
//! fused labels do not depend on the order the models were listed in.
//! Ties in argmax and in vote counts go to the lowest label index.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::staple::{self, StapleParams};
use crate::volume::{check_same_geometry, GridGeometry, LabelVolume, ScoreVolume, MAX_LABELS};

/// Voxels handed to one rayon task.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum FusionMethod {
    LogitSum,
    SoftmaxSum,
    MajorityVote,
    Staple(StapleParams),
}

impl FusionMethod {
    pub const NAMES: [&'static str; 4] = ["logit-sum", "softmax-sum", "majority-vote", "staple"];

    pub fn name(&self) -> &'static str {
        match self {
            FusionMethod::LogitSum => "logit-sum",
            FusionMethod::SoftmaxSum => "softmax-sum",
            FusionMethod::MajorityVote => "majority-vote",
            FusionMethod::Staple(_) => "staple",
        }
    }

    /// Whether the method needs per-channel scores rather than masks.
    pub fn needs_scores(&self) -> bool {
        matches!(self, FusionMethod::LogitSum | FusionMethod::SoftmaxSum)
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit-sum" => Ok(FusionMethod::LogitSum),
            "softmax-sum" => Ok(FusionMethod::SoftmaxSum),
            "majority-vote" => Ok(FusionMethod::MajorityVote),
            "staple" => Ok(FusionMethod::Staple(StapleParams::default())),
            other => Err(Error::InvalidArgument(format!(
                "unknown fusion method `{other}`, expected one of {}",
                FusionMethod::NAMES.join(", ")
            ))),
        }
    }
}

/// Model outputs handed to [`fuse`]: either all score volumes or all masks.
#[derive(Debug, Clone)]
pub enum FusionInputs<T> {
    Scores(Vec<ScoreVolume<T>>),
    Masks(Vec<LabelVolume>),
}

/// Run one ensemble strategy. Mask-only strategies accept scores by taking
/// each model's argmax first.
pub fn fuse<T: Real>(method: &FusionMethod, inputs: &FusionInputs<T>) -> Result<LabelVolume> {
    match (method, inputs) {
        (FusionMethod::LogitSum, FusionInputs::Scores(s)) => fuse_logit_sum(s),
        (FusionMethod::SoftmaxSum, FusionInputs::Scores(s)) => fuse_softmax_sum(s),
        (FusionMethod::LogitSum | FusionMethod::SoftmaxSum, FusionInputs::Masks(_)) => {
            Err(Error::InvalidArgument(format!(
                "{method} needs per-channel score volumes (MET_FLOAT) but the inputs are label masks; \
                 use majority-vote or staple for masks"
            )))
        }
        (FusionMethod::MajorityVote, FusionInputs::Masks(m)) => majority_vote(m),
        (FusionMethod::Staple(p), FusionInputs::Masks(m)) => staple::staple_multiclass::<f64>(m, p),
        (_, FusionInputs::Scores(s)) => {
            let masks = s.iter().map(argmax_labels).collect::<Result<Vec<_>>>()?;
            fuse(method, &FusionInputs::<T>::Masks(masks))
        }
    }
}

/// Numerically stable per-voxel softmax across channels.
pub fn softmax_channels<T: Real>(scores: &ScoreVolume<T>) -> ScoreVolume<T> {
    let n = scores.geometry().voxel_count();
    let c = scores.channels();
    let mut out = vec![T::zero(); n * c];
    let mut buf = vec![0.0f64; c];
    for v in 0..n {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = scores.score(k, v).widen();
        }
        softmax_in_place(&mut buf);
        for (k, &p) in buf.iter().enumerate() {
            out[k * n + v] = T::of(p);
        }
    }
    ScoreVolume::new(*scores.geometry(), c, out).expect("softmax output is finite")
}

fn softmax_in_place(values: &mut [f64]) {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// First index attaining the maximum.
#[inline]
fn argmax<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val || i == 0 {
            best = i;
            best_val = v;
        }
    }
    best
}

pub fn argmax_labels<T: Real>(scores: &ScoreVolume<T>) -> Result<LabelVolume> {
    let c = scores.channels();
    if c > MAX_LABELS {
        return Err(Error::InvalidArgument(format!(
            "{c} channels cannot be stored as 8-bit labels"
        )));
    }
    let n = scores.geometry().voxel_count();
    let data = (0..n)
        .map(|v| argmax((0..c).map(|k| scores.score(k, v).widen())) as u8)
        .collect();
    LabelVolume::new(*scores.geometry(), c, data)
}

fn check_scores<T: Real>(models: &[ScoreVolume<T>]) -> Result<(GridGeometry, usize)> {
    let geometry = check_same_geometry(models.iter().map(|m| m.geometry()))?;
    let c = models[0].channels();
    if let Some((i, m)) = models.iter().enumerate().find(|(_, m)| m.channels() != c) {
        return Err(Error::GeometryMismatch(format!(
            "model {i} has {} channels, model 0 has {c}",
            m.channels()
        )));
    }
    if c > MAX_LABELS {
        return Err(Error::InvalidArgument(format!(
            "{c} channels cannot be stored as 8-bit labels"
        )));
    }
    Ok((geometry, c))
}

/// Sum per-voxel channel contributions from every model and take the argmax.
/// `per_model` fills a model's channel values for a voxel into its slot.
fn fuse_summed<T, F>(models: &[ScoreVolume<T>], per_model: F) -> Result<LabelVolume>
where
    T: Real,
    F: Fn(&ScoreVolume<T>, usize, &mut [f64]) + Sync,
{
    let (geometry, c) = check_scores(models)?;
    let r = models.len();
    let n = geometry.voxel_count();
    let data: Vec<u8> = (0..n)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map_init(
            || (vec![0.0f64; r * c], vec![0.0f64; r]),
            |(contrib, column), v| {
                for (m, model) in models.iter().enumerate() {
                    per_model(model, v, &mut contrib[m * c..(m + 1) * c]);
                }
                let sums = (0..c).map(|k| {
                    for m in 0..r {
                        column[m] = contrib[m * c + k];
                    }
                    column.sort_unstable_by(f64::total_cmp);
                    column.iter().sum::<f64>()
                });
                argmax(sums) as u8
            },
        )
        .collect();
    LabelVolume::new(geometry, c, data)
}

/// Sum raw scores across models, then argmax.
pub fn fuse_logit_sum<T: Real>(models: &[ScoreVolume<T>]) -> Result<LabelVolume> {
    fuse_summed(models, |model, v, slot| {
        for (k, s) in slot.iter_mut().enumerate() {
            *s = model.score(k, v).widen();
        }
    })
}

/// Softmax each model per voxel, sum the probabilities, then argmax.
pub fn fuse_softmax_sum<T: Real>(models: &[ScoreVolume<T>]) -> Result<LabelVolume> {
    fuse_summed(models, |model, v, slot| {
        for (k, s) in slot.iter_mut().enumerate() {
            *s = model.score(k, v).widen();
        }
        softmax_in_place(slot);
    })
}

pub(crate) fn check_masks(masks: &[LabelVolume]) -> Result<(GridGeometry, usize)> {
    let geometry = check_same_geometry(masks.iter().map(|m| m.geometry()))?;
    let l = masks[0].num_labels();
    if let Some((i, m)) = masks.iter().enumerate().find(|(_, m)| m.num_labels() != l) {
        return Err(Error::GeometryMismatch(format!(
            "mask {i} declares {} labels, mask 0 declares {l}",
            m.num_labels()
        )));
    }
    Ok((geometry, l))
}

/// Most frequent label per voxel.
pub fn majority_vote(masks: &[LabelVolume]) -> Result<LabelVolume> {
    let (geometry, l) = check_masks(masks)?;
    let n = geometry.voxel_count();
    let data: Vec<u8> = (0..n)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map_init(
            || vec![0u32; l],
            |counts, v| {
                counts.iter_mut().for_each(|c| *c = 0);
                for m in masks {
                    counts[m.data()[v] as usize] += 1;
                }
                let mut best = 0;
                for (label, &c) in counts.iter().enumerate() {
                    if c > counts[best] {
                        best = label;
                    }
                }
                best as u8
            },
        )
        .collect();
    LabelVolume::new(geometry, l, data)
}
