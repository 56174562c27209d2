//! STAPLE consensus (binary expectation-maximization over raters).
//!
//! Each rater `j` is modelled by a sensitivity `p_j` and a specificity `q_j`.
//! The E-step computes, per voxel, the posterior probability `W` that the
//! hidden true label is foreground:
//!
//! ```text
//! a = pi * prod_j p_j^d (1 - p_j)^(1 - d)
//! b = (1 - pi) * prod_j (1 - q_j)^d q_j^(1 - d)
//! W = a / (a + b)
//! ```
//!
//! and the M-step re-estimates `p_j = sum W d / sum W` and
//! `q_j = sum (1 - W)(1 - d) / sum (1 - W)`. Products are taken in log space;
//! the per-rater log terms of a voxel are summed in ascending order so that a
//! permutation of the raters leaves the posterior bit-identical.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::check_masks;
use crate::real::Real;
use crate::volume::{BoundingBox, LabelVolume};

/// How the foreground prior is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// Mean foreground fraction over raters, within the ROI.
    #[default]
    RaterMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StapleParams {
    pub init_sensitivity: f64,
    pub init_specificity: f64,
    pub max_iterations: usize,
    /// Stop once `mean_j |dp_j| + mean_j |dq_j|` drops below this.
    pub convergence_tol: f64,
    pub prior_mode: PriorMode,
    /// Voxels added around the union bounding box of a structure.
    pub roi_margin: usize,
}

impl Default for StapleParams {
    fn default() -> Self {
        Self {
            init_sensitivity: 0.99999,
            init_specificity: 0.99999,
            max_iterations: 100,
            convergence_tol: 1e-7,
            prior_mode: PriorMode::RaterMean,
            roi_margin: 5,
        }
    }
}

impl StapleParams {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.init_sensitivity) {
            return Err(Error::InvalidArgument(format!(
                "init_sensitivity must lie in (0, 1), got {}",
                self.init_sensitivity
            )));
        }
        if !open_unit(self.init_specificity) {
            return Err(Error::InvalidArgument(format!(
                "init_specificity must lie in (0, 1), got {}",
                self.init_specificity
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_tol >= 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "convergence_tol must be finite and non-negative, got {}",
                self.convergence_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StapleResult<T> {
    /// Foreground posterior per ROI voxel.
    pub posterior: Vec<T>,
    pub sensitivity: Vec<T>,
    pub specificity: Vec<T>,
    pub prior: T,
    pub iterations_run: usize,
    pub converged: bool,
    /// Observed-data log-likelihood at every E-step, the final one included.
    pub log_likelihood: Vec<T>,
}

impl<T: Real> StapleResult<T> {
    /// Maximum-a-posteriori mask, `W >= 0.5`.
    pub fn consensus(&self) -> Vec<bool> {
        let half = T::of(0.5);
        self.posterior.iter().map(|&w| w >= half).collect()
    }
}

/// Precomputed `ln` of the rater parameters used by the E-step.
struct LogParams<T> {
    ln_p: Vec<T>,
    ln_not_p: Vec<T>,
    ln_q: Vec<T>,
    ln_not_q: Vec<T>,
}

impl<T: Real> LogParams<T> {
    fn new(p: &[T], q: &[T]) -> Self {
        let ln = |v: &[T], complement: bool| -> Vec<T> {
            v.iter()
                .map(|&x| if complement { (T::one() - x).ln() } else { x.ln() })
                .collect()
        };
        Self {
            ln_p: ln(p, false),
            ln_not_p: ln(p, true),
            ln_q: ln(q, false),
            ln_not_q: ln(q, true),
        }
    }

    /// Posterior and log-likelihood contribution of one decision pattern.
    fn evaluate(&self, decided: impl Fn(usize) -> bool, ln_pi: T, ln_not_pi: T, pi: T, scratch: &mut Vec<T>) -> (T, T) {
        let r = self.ln_p.len();
        let sorted_sum = |scratch: &mut Vec<T>, pick: &dyn Fn(usize) -> T| -> T {
            scratch.clear();
            scratch.extend((0..r).map(pick));
            scratch.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            scratch.iter().fold(T::zero(), |acc, &v| acc + v)
        };
        let la = ln_pi
            + sorted_sum(scratch, &|j| if decided(j) { self.ln_p[j] } else { self.ln_not_p[j] });
        let lb = ln_not_pi
            + sorted_sum(scratch, &|j| if decided(j) { self.ln_not_q[j] } else { self.ln_q[j] });
        if la == T::neg_infinity() && lb == T::neg_infinity() {
            // No parameter setting explains this pattern; fall back to the prior.
            return (pi, T::neg_infinity());
        }
        let w = T::one() / (T::one() + (lb - la).exp());
        let hi = la.max(lb);
        let ll = hi + (-(la - lb).abs()).exp().ln_1p();
        (w, ll)
    }
}

/// Binary STAPLE over `R` rater decision masks sharing one ROI.
pub fn staple_binary<T: Real>(decisions: &[Vec<bool>], params: &StapleParams) -> Result<StapleResult<T>> {
    params.validate()?;
    let r = decisions.len();
    if r == 0 {
        return Err(Error::InvalidArgument("STAPLE needs at least one rater".into()));
    }
    let n = decisions[0].len();
    if let Some((j, d)) = decisions.iter().enumerate().find(|(_, d)| d.len() != n) {
        return Err(Error::GeometryMismatch(format!(
            "rater {j} covers {} voxels, rater 0 covers {n}",
            d.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("STAPLE ROI is empty".into()));
    }
    let fg_counts: Vec<usize> = decisions.iter().map(|d| d.iter().filter(|&&v| v).count()).collect();
    if fg_counts.iter().all(|&c| c == 0) {
        return Err(Error::DegenerateInput(
            "every rater is empty in the ROI; there is no foreground evidence".into(),
        ));
    }
    if fg_counts.iter().all(|&c| c == n) {
        return Err(Error::DegenerateInput(
            "every rater is entirely foreground in the ROI; there is no background evidence".into(),
        ));
    }

    let pi = match params.prior_mode {
        PriorMode::RaterMean => {
            T::of(fg_counts.iter().map(|&c| c as f64 / n as f64).sum::<f64>() / r as f64)
        }
    };
    let ln_pi = pi.ln();
    let ln_not_pi = (T::one() - pi).ln();

    // Decision patterns packed into integers let the E-step run once per
    // distinct pattern instead of once per voxel.
    let packed: Option<Vec<u32>> = (r <= 16).then(|| {
        (0..n)
            .map(|i| {
                decisions
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (j, d)| acc | ((d[i] as u32) << j))
            })
            .collect()
    });

    let mut p = vec![T::of(params.init_sensitivity); r];
    let mut q = vec![T::of(params.init_specificity); r];
    let mut w = vec![T::zero(); n];
    let mut log_likelihood = Vec::new();

    let e_step = |p: &[T], q: &[T], w: &mut [T]| -> T {
        let lp = LogParams::new(p, q);
        let mut scratch = Vec::with_capacity(r);
        match &packed {
            Some(codes) => {
                let mut cache: Vec<Option<(T, T)>> = vec![None; 1 << r];
                let mut ll = T::zero();
                for (i, &code) in codes.iter().enumerate() {
                    let (wi, lli) = *cache[code as usize].get_or_insert_with(|| {
                        lp.evaluate(|j| code >> j & 1 == 1, ln_pi, ln_not_pi, pi, &mut scratch)
                    });
                    w[i] = wi;
                    ll = ll + lli;
                }
                ll
            }
            None => {
                let per_voxel: Vec<(T, T)> = (0..n)
                    .into_par_iter()
                    .map_init(
                        || Vec::with_capacity(r),
                        |scratch, i| lp.evaluate(|j| decisions[j][i], ln_pi, ln_not_pi, pi, scratch),
                    )
                    .collect();
                let mut ll = T::zero();
                for (slot, (wi, lli)) in w.iter_mut().zip(per_voxel) {
                    *slot = wi;
                    ll = ll + lli;
                }
                ll
            }
        }
    };

    let mut iterations_run = 0;
    let mut converged = false;
    while iterations_run < params.max_iterations {
        log_likelihood.push(e_step(&p, &q, &mut w));

        let total_w = w.iter().fold(T::zero(), |acc, &v| acc + v);
        let total_not_w = w.iter().fold(T::zero(), |acc, &v| acc + (T::one() - v));
        let mut change = T::zero();
        for j in 0..r {
            let d = &decisions[j];
            let (mut tp, mut tn) = (T::zero(), T::zero());
            for i in 0..n {
                if d[i] {
                    tp = tp + w[i];
                } else {
                    tn = tn + (T::one() - w[i]);
                }
            }
            let new_p = if total_w > T::zero() { tp / total_w } else { p[j] };
            let new_q = if total_not_w > T::zero() { tn / total_not_w } else { q[j] };
            change = change + (new_p - p[j]).abs() + (new_q - q[j]).abs();
            p[j] = new_p;
            q[j] = new_q;
        }
        iterations_run += 1;
        if change / T::of(r as f64) < T::of(params.convergence_tol) {
            converged = true;
            break;
        }
    }
    log_likelihood.push(e_step(&p, &q, &mut w));

    Ok(StapleResult {
        posterior: w,
        sensitivity: p,
        specificity: q,
        prior: pi,
        iterations_run,
        converged,
        log_likelihood,
    })
}

/// Per-structure STAPLE run retained for reporting.
#[derive(Debug, Clone)]
pub struct LabelStaple<T> {
    pub label: u8,
    pub roi: BoundingBox,
    pub result: StapleResult<T>,
}

#[derive(Debug, Clone)]
pub struct MulticlassStaple<T> {
    pub labels: LabelVolume,
    pub per_label: Vec<LabelStaple<T>>,
}

/// Multi-organ consensus: one binary STAPLE per foreground label inside
/// that label's dilated union bounding box. Voxels claimed by several labels
/// go to the highest posterior, exact ties to the lowest label.
pub fn staple_multiclass<T: Real>(masks: &[LabelVolume], params: &StapleParams) -> Result<LabelVolume> {
    staple_multiclass_detailed::<T>(masks, params).map(|m| m.labels)
}

pub fn staple_multiclass_detailed<T: Real>(
    masks: &[LabelVolume],
    params: &StapleParams,
) -> Result<MulticlassStaple<T>> {
    params.validate()?;
    let (geometry, num_labels) = check_masks(masks)?;

    let mut jobs = Vec::new();
    for label in 1..num_labels {
        let mut union: Option<BoundingBox> = None;
        for m in masks {
            if let Some(b) = m.bounding_box(label)? {
                union = Some(union.map_or(b, |u| u.union(&b)));
            }
        }
        if let Some(u) = union {
            jobs.push((label as u8, u.dilate(params.roi_margin, &geometry)));
        }
    }

    let per_label: Vec<LabelStaple<T>> = jobs
        .into_par_iter()
        .map(|(label, roi)| {
            let decisions: Vec<Vec<bool>> = masks.iter().map(|m| m.indicator_in(label, &roi)).collect();
            staple_binary::<T>(&decisions, params)
                .map(|result| LabelStaple { label, roi, result })
                .map_err(|e| annotate(e, label))
        })
        .collect::<Result<_>>()?;

    let half = T::of(0.5);
    let mut best = vec![T::neg_infinity(); geometry.voxel_count()];
    let mut out = vec![0u8; geometry.voxel_count()];
    for run in &per_label {
        for (i, &w) in run.roi.grid_indices(&geometry).zip(&run.result.posterior) {
            if w >= half && w > best[i] {
                best[i] = w;
                out[i] = run.label;
            }
        }
    }
    Ok(MulticlassStaple {
        labels: LabelVolume::new(geometry, num_labels, out)?,
        per_label,
    })
}

fn annotate(e: Error, label: u8) -> Error {
    match e {
        Error::DegenerateInput(m) => Error::DegenerateInput(format!("label {label}: {m}")),
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("label {label}: {m}")),
        other => other,
    }
}
