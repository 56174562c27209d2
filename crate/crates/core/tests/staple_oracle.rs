mod oracles;

use rand::Rng;
use segensemble::staple::{staple_binary, staple_multiclass, staple_multiclass_detailed};
use segensemble::{GridGeometry, LabelVolume, StapleParams};

fn perturbed(rng: &mut rand::rngs::StdRng, truth: &[bool], flip: f64) -> Vec<bool> {
    truth.iter().map(|&t| t ^ rng.random_bool(flip)).collect()
}

#[test]
fn agrees_with_plain_em() {
    let mut rng = oracles::rng(31);
    let params = StapleParams::default();
    for _ in 0..20 {
        let n = rng.random_range(40..200);
        let r = rng.random_range(2..=7);
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let raters: Vec<Vec<bool>> = (0..r).map(|_| perturbed(&mut rng, &truth, 0.1)).collect();
        let got = staple_binary::<f64>(&raters, &params).unwrap();
        let want = oracles::staple_em(&raters, params.init_sensitivity, params.max_iterations, params.convergence_tol);
        let worst = got
            .posterior
            .iter()
            .zip(&want.posterior)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "posterior differs by {worst}");
        let mask: Vec<bool> = want.posterior.iter().map(|&w| w >= 0.5).collect();
        assert_eq!(got.consensus(), mask);
    }
}

#[test]
fn dissenting_rater_has_lowest_sensitivity() {
    let g = GridGeometry::new([10, 10, 10], [1.0; 3]).unwrap();
    let inside = |v: usize, lo: usize| g.coords(v).iter().all(|&c| (lo..lo + 4).contains(&c));
    let cube: Vec<bool> = (0..g.voxel_count()).map(|v| inside(v, 1)).collect();
    let other: Vec<bool> = (0..g.voxel_count()).map(|v| inside(v, 6)).collect();
    let raters = vec![cube.clone(), cube.clone(), other, cube.clone(), cube.clone()];
    let params = StapleParams::default();
    let got = staple_binary::<f64>(&raters, &params).unwrap();
    let want = oracles::staple_em(&raters, params.init_sensitivity, params.max_iterations, params.convergence_tol);
    assert_eq!(got.consensus(), cube);
    let lowest = |s: &[f64]| (0..s.len()).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
    assert_eq!(lowest(&got.sensitivity), 2);
    assert_eq!(lowest(&want.sensitivity), 2);
    for (a, b) in got.sensitivity.iter().zip(&want.sensitivity) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn log_likelihood_never_decreases() {
    let mut rng = oracles::rng(32);
    for _ in 0..20 {
        let truth: Vec<bool> = (0..300).map(|_| rng.random_bool(0.25)).collect();
        let raters: Vec<Vec<bool>> = (0..5).map(|j| perturbed(&mut rng, &truth, 0.03 + 0.04 * j as f64)).collect();
        let res = staple_binary::<f64>(&raters, &StapleParams::default()).unwrap();
        for pair in res.log_likelihood.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "{} then {}", pair[0], pair[1]);
        }
        assert!(res.posterior.iter().all(|&w| (0.0..=1.0).contains(&w)));
    }
}

#[test]
fn rater_permutation_permutes_parameters() {
    let mut rng = oracles::rng(33);
    let truth: Vec<bool> = (0..500).map(|_| rng.random_bool(0.4)).collect();
    let raters: Vec<Vec<bool>> = (0..6).map(|_| perturbed(&mut rng, &truth, 0.15)).collect();
    let order = [3, 0, 5, 1, 4, 2];
    let shuffled: Vec<Vec<bool>> = order.iter().map(|&j| raters[j].clone()).collect();
    let params = StapleParams::default();
    let a = staple_binary::<f64>(&raters, &params).unwrap();
    let b = staple_binary::<f64>(&shuffled, &params).unwrap();
    assert_eq!(a.posterior, b.posterior);
    for (k, &j) in order.iter().enumerate() {
        assert_eq!(a.sensitivity[j], b.sensitivity[k]);
        assert_eq!(a.specificity[j], b.specificity[k]);
    }
}

fn two_organ_masks(seed: u64) -> Vec<LabelVolume> {
    let mut rng = oracles::rng(seed);
    let g = GridGeometry::new([24, 20, 18], [1.0; 3]).unwrap();
    (0..5)
        .map(|_| {
            let data = (0..g.voxel_count())
                .map(|v| {
                    let [x, y, z] = g.coords(v);
                    let mut jitter = |lo: usize| lo + rng.random_range(0..2);
                    if (jitter(6)..jitter(11)).contains(&x) && (5..jitter(12)).contains(&y) && (6..11).contains(&z) {
                        1
                    } else if (jitter(14)..jitter(19)).contains(&x) && (jitter(6)..13).contains(&y) && (5..jitter(12)).contains(&z) {
                        2
                    } else {
                        0
                    }
                })
                .collect();
            LabelVolume::new(g, 3, data).unwrap()
        })
        .collect()
}

#[test]
fn roi_restriction_matches_whole_grid_run() {
    for seed in 0..5 {
        let masks = two_organ_masks(100 + seed);
        let roi = staple_multiclass::<f64>(&masks, &StapleParams::default()).unwrap();
        let whole = StapleParams { roi_margin: 1000, ..Default::default() };
        let detailed = staple_multiclass_detailed::<f64>(&masks, &whole).unwrap();
        assert!(detailed.per_label.iter().all(|l| l.roi.voxel_count() == masks[0].geometry().voxel_count()));
        assert_eq!(roi, detailed.labels);
    }
}

#[test]
fn unanimous_two_organ_masks_are_returned_unchanged() {
    let masks = two_organ_masks(7);
    let copies = vec![masks[0].clone(); 4];
    assert_eq!(staple_multiclass::<f64>(&copies, &StapleParams::default()).unwrap(), masks[0]);
}
