//! Straightforward reference implementations used to check the optimized
//! library code. Nothing here is shared with the library.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use segensemble::{GridGeometry, LabelVolume, ScoreVolume};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_dims(rng: &mut StdRng, max: usize) -> [usize; 3] {
    [rng.random_range(1..=max), rng.random_range(1..=max), rng.random_range(1..=max)]
}

pub fn random_spacing(rng: &mut StdRng) -> [f64; 3] {
    std::array::from_fn(|_| rng.random_range(0.3..3.0))
}

pub fn random_scores(rng: &mut StdRng, g: GridGeometry, channels: usize) -> ScoreVolume<f32> {
    let data = (0..channels * g.voxel_count())
        .map(|_| rng.random_range(-6.0f32..6.0))
        .collect();
    ScoreVolume::new(g, channels, data).unwrap()
}

pub fn random_mask(rng: &mut StdRng, g: GridGeometry, labels: usize) -> LabelVolume {
    let data = (0..g.voxel_count()).map(|_| rng.random_range(0..labels) as u8).collect();
    LabelVolume::new(g, labels, data).unwrap()
}

fn first_max(values: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = c;
        }
    }
    best
}

/// Per-voxel sum over models in list order, then argmax.
pub fn logit_sum(models: &[ScoreVolume<f32>]) -> Vec<u8> {
    let c = models[0].channels();
    let n = models[0].geometry().voxel_count();
    (0..n)
        .map(|v| {
            let sums: Vec<f64> = (0..c)
                .map(|ch| models.iter().map(|m| m.score(ch, v) as f64).sum())
                .collect();
            first_max(&sums) as u8
        })
        .collect()
}

/// Per-voxel softmax of each model, summed in list order, then argmax.
pub fn softmax_sum(models: &[ScoreVolume<f32>]) -> Vec<u8> {
    let c = models[0].channels();
    let n = models[0].geometry().voxel_count();
    (0..n)
        .map(|v| {
            let mut sums = vec![0.0f64; c];
            for m in models {
                let raw: Vec<f64> = (0..c).map(|ch| m.score(ch, v) as f64).collect();
                let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = raw.iter().map(|x| (x - hi).exp()).collect();
                let z: f64 = e.iter().sum();
                for ch in 0..c {
                    sums[ch] += e[ch] / z;
                }
            }
            first_max(&sums) as u8
        })
        .collect()
}

pub fn argmax(model: &ScoreVolume<f32>) -> Vec<u8> {
    logit_sum(std::slice::from_ref(model))
}

/// Per-voxel vote count; lowest label wins ties.
pub fn majority(masks: &[Vec<u8>], labels: usize) -> Vec<u8> {
    (0..masks[0].len())
        .map(|v| {
            let mut votes = vec![0f64; labels];
            for m in masks {
                votes[m[v] as usize] += 1.0;
            }
            first_max(&votes) as u8
        })
        .collect()
}

/// Boundary voxels by direct neighbour inspection.
pub fn surface(mask: &LabelVolume, label: u8) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = mask.geometry().dims();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) != label {
                    continue;
                }
                let p = [x as i64, y as i64, z as i64];
                let outside = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                    .iter()
                    .any(|d: &[i64; 3]| {
                        let q = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                        if q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= nx as i64 || q[1] >= ny as i64 || q[2] >= nz as i64 {
                            return true;
                        }
                        mask.get(q[0] as usize, q[1] as usize, q[2] as usize) != label
                    });
                if outside {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

pub fn dist(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    (0..3)
        .map(|k| ((a[k] as f64 - b[k] as f64) * spacing[k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Distance from every grid voxel to the nearest target, by exhaustive search.
pub fn distance_field(g: &GridGeometry, targets: &[[usize; 3]]) -> Vec<f64> {
    (0..g.voxel_count())
        .map(|v| {
            let c = g.coords(v);
            targets
                .iter()
                .map(|&t| dist(c, t, g.spacing()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn directed(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|&a| to.iter().map(|&b| dist(a, b, spacing)).fold(f64::INFINITY, f64::min))
        .collect()
}

pub fn mdta(a: &[[usize; 3]], b: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    (mean(directed(a, b, spacing)) + mean(directed(b, a, spacing))) / 2.0
}

pub fn hd95(a: &[[usize; 3]], b: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    let p95 = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let rank = (0.95 * v.len() as f64).ceil() as usize;
        v[rank.max(1) - 1]
    };
    p95(directed(a, b, spacing)).max(p95(directed(b, a, spacing)))
}

pub struct EmOutcome {
    pub posterior: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
}

/// Binary STAPLE written out literally: products of probabilities, no log
/// space, no caching.
pub fn staple_em(d: &[Vec<bool>], init: f64, max_iterations: usize, tol: f64) -> EmOutcome {
    let r = d.len();
    let n = d[0].len();
    let pi = d.iter().map(|m| m.iter().filter(|&&b| b).count() as f64 / n as f64).sum::<f64>() / r as f64;
    let mut p = vec![init; r];
    let mut q = vec![init; r];
    let e_step = |p: &[f64], q: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut a = pi;
                let mut b = 1.0 - pi;
                for j in 0..r {
                    if d[j][i] {
                        a *= p[j];
                        b *= 1.0 - q[j];
                    } else {
                        a *= 1.0 - p[j];
                        b *= q[j];
                    }
                }
                a / (a + b)
            })
            .collect()
    };
    let mut w = e_step(&p, &q);
    for _ in 0..max_iterations {
        let sw: f64 = w.iter().sum();
        let snw: f64 = w.iter().map(|x| 1.0 - x).sum();
        let mut change = 0.0;
        for j in 0..r {
            let tp: f64 = (0..n).filter(|&i| d[j][i]).map(|i| w[i]).sum();
            let tn: f64 = (0..n).filter(|&i| !d[j][i]).map(|i| 1.0 - w[i]).sum();
            let np = tp / sw;
            let nq = tn / snw;
            change += (np - p[j]).abs() + (nq - q[j]).abs();
            p[j] = np;
            q[j] = nq;
        }
        w = e_step(&p, &q);
        if change / (r as f64) < tol {
            break;
        }
    }
    EmOutcome { posterior: w, sensitivity: p, specificity: q }
}

/// Average ranks by counting, independent of any sorting.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let below = values.iter().filter(|&&u| u < v).count() as f64;
            let equal = values.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided and candidate-better p-values by listing every sign pattern.
pub fn wilcoxon_enumerated(diffs: &[f64]) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return (1.0, 1.0);
    }
    let abs: Vec<f64> = nz.iter().map(|x| x.abs()).collect();
    let r = ranks(&abs);
    let total: f64 = r.iter().sum();
    let t_plus: f64 = (0..n).filter(|&i| nz[i] > 0.0).map(|i| r[i]).sum();
    let w = t_plus.min(total - t_plus);
    let (mut low, mut high) = (0u64, 0u64);
    for pattern in 0u64..(1 << n) {
        let t: f64 = (0..n).filter(|&i| pattern >> i & 1 == 1).map(|i| r[i]).sum();
        if t <= w + 1e-9 {
            low += 1;
        }
        if t >= t_plus - 1e-9 {
            high += 1;
        }
    }
    let patterns = (1u64 << n) as f64;
    ((2.0 * low as f64 / patterns).min(1.0), high as f64 / patterns)
}

/// Two-sided Monte-Carlo p-value from random sign flips.
pub fn wilcoxon_monte_carlo(diffs: &[f64], draws: usize, seed: u64) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|x| x.abs()).collect();
    let r = ranks(&abs);
    let total: f64 = r.iter().sum();
    let mean = total / 2.0;
    let t_plus: f64 = (0..nz.len()).filter(|&i| nz[i] > 0.0).map(|i| r[i]).sum();
    let observed = (t_plus - mean).abs();
    let mut g = rng(seed);
    let mut hits = 0usize;
    for _ in 0..draws {
        let mut t = 0.0;
        let mut bits = 0u64;
        for (i, &ri) in r.iter().enumerate() {
            if i % 64 == 0 {
                bits = g.random();
            }
            if bits >> (i % 64) & 1 == 1 {
                t += ri;
            }
        }
        if (t - mean).abs() >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Best model by trying every model against every other one.
pub fn best_model(medians: &[(f64, f64)]) -> usize {
    let rank = |i: usize, k: usize| {
        let mine = if k == 0 { medians[i].0 } else { medians[i].1 };
        1 + medians
            .iter()
            .filter(|m| (if k == 0 { m.0 } else { m.1 }) < mine)
            .count()
    };
    let mut best = 0;
    for i in 1..medians.len() {
        let (si, sb) = (rank(i, 0) + rank(i, 1), rank(best, 0) + rank(best, 1));
        if si < sb || (si == sb && medians[i].0 < medians[best].0) {
            best = i;
        }
    }
    best
}
