use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::TestCaseResult;

use planesweep::fusion::{fuse_volumes, fusion_weights};
use planesweep::geometry::uniform_hypotheses;
use planesweep::pairwise::{entropy_map, soft_argmax, to_probability, CostVolume};
use planesweep::{DepthHypotheses, FusionStrategy, Grid};

pub const CASES: u32 = 1000;

#[derive(Debug, Clone)]
pub struct VolumeCase {
    nd: usize,
    w: usize,
    h: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
    per_pixel: Option<Vec<f64>>,
}

impl VolumeCase {
    fn hypotheses(&self) -> DepthHypotheses {
        match &self.per_pixel {
            Some(v) => DepthHypotheses::per_pixel(self.nd, self.w, self.h, v.clone()).unwrap(),
            None => uniform_hypotheses(2.0, 1.5, self.nd).unwrap(),
        }
    }

    fn volume(&self) -> CostVolume {
        CostVolume::new(
            self.hypotheses(),
            self.w,
            self.h,
            1,
            self.data.clone(),
            self.valid.clone(),
        )
        .unwrap()
    }
}

/// Increasing hypothesis lists, pixel-major.
fn per_pixel_values(nd: usize, n: usize) -> impl Strategy<Value = Vec<f64>> {
    (vec(0.1f64..100.0, n), vec(vec(1e-3f64..5.0, nd), n)).prop_map(move |(starts, steps)| {
        let mut out = Vec::with_capacity(nd * n);
        for p in 0..n {
            let mut d = starts[p];
            for step in &steps[p] {
                out.push(d);
                d += step;
            }
        }
        out
    })
}

pub fn volume_case() -> impl Strategy<Value = VolumeCase> {
    (2usize..33, 1usize..4, 1usize..4, any::<bool>()).prop_flat_map(|(nd, w, h, pp)| {
        let cells = nd * w * h;
        let hyps = if pp {
            per_pixel_values(nd, w * h).prop_map(Some).boxed()
        } else {
            Just(None).boxed()
        };
        (
            vec(-50.0f64..50.0, cells),
            vec(prop::bool::weighted(0.85), cells),
            hyps,
        )
            .prop_map(move |(data, valid, per_pixel)| VolumeCase {
                nd,
                w,
                h,
                data,
                valid,
                per_pixel,
            })
    })
}

#[derive(Debug, Clone)]
pub struct FusionCase {
    nd: usize,
    n: usize,
    groups: usize,
    volumes: Vec<(Vec<f64>, Vec<bool>)>,
    log_unc: Vec<Vec<f64>>,
    shift: f64,
}

pub fn fusion_case() -> impl Strategy<Value = FusionCase> {
    (1usize..9, 2usize..9, 1usize..5, 1usize..4).prop_flat_map(|(views, nd, n, groups)| {
        let cells = nd * n;
        (
            vec(
                (
                    vec(-5.0f64..5.0, cells * groups),
                    vec(prop::bool::weighted(0.8), cells),
                ),
                views,
            ),
            vec(vec(-30.0f64..30.0, n), views),
            -20.0f64..20.0,
        )
            .prop_map(move |(volumes, log_unc, shift)| FusionCase {
                nd,
                n,
                groups,
                volumes,
                log_unc,
                shift,
            })
    })
}

impl FusionCase {
    fn volumes(&self) -> Vec<CostVolume> {
        let hyps = uniform_hypotheses(1.0, 1.0, self.nd).unwrap();
        self.volumes
            .iter()
            .map(|(d, v)| {
                CostVolume::new(hyps.clone(), self.n, 1, self.groups, d.clone(), v.clone()).unwrap()
            })
            .collect()
    }

    fn maps(&self, shift: f64) -> Vec<Grid<f64>> {
        self.log_unc
            .iter()
            .map(|s| Grid::from_vec(self.n, 1, s.iter().map(|v| v + shift).collect()).unwrap())
            .collect()
    }
}

pub fn softmax_normalizes((case, t): (VolumeCase, f64)) -> TestCaseResult {
    let p = to_probability(&case.volume(), t).unwrap();
    let n = case.w * case.h;
    for px in 0..n {
        let col = p.distribution(px);
        let total: f64 = col.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum {total}");
        prop_assert!(col.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let any_valid = (0..case.nd).any(|j| case.valid[j * n + px]);
        prop_assert_eq!(*p.validity().get(px % case.w, px / case.w), any_valid);
        for j in 0..case.nd {
            if any_valid && !case.valid[j * n + px] {
                prop_assert_eq!(col[j], 0.0);
            }
        }
    }
    Ok(())
}

pub fn entropy_within_bounds((case, t): (VolumeCase, f64)) -> TestCaseResult {
    let p = to_probability(&case.volume(), t).unwrap();
    let h = entropy_map(&p);
    let max = (case.nd as f64).ln();
    for &v in h.as_slice() {
        prop_assert!(v >= 0.0 && v <= max + 1e-12, "H = {v}, ln N = {max}");
    }
    Ok(())
}

pub fn soft_argmax_within_span((case, t): (VolumeCase, f64)) -> TestCaseResult {
    let p = to_probability(&case.volume(), t).unwrap();
    let d = soft_argmax(&p);
    let hyps = case.hypotheses();
    for (px, &v) in d.as_slice().iter().enumerate() {
        let span = hyps.at(px);
        let (lo, hi) = (span[0], span[span.len() - 1]);
        let tol = 1e-12 * hi.abs().max(1.0) * case.nd as f64;
        prop_assert!(v >= lo - tol && v <= hi + tol, "{v} outside [{lo}, {hi}]");
    }
    Ok(())
}

pub fn fusion_weights_sum_to_one(case: FusionCase) -> TestCaseResult {
    let weights = fusion_weights(&case.maps(0.0)).unwrap();
    for p in 0..case.n {
        let total: f64 = weights.iter().map(|w| w.as_slice()[p]).sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {total}");
        prop_assert!(weights
            .iter()
            .all(|w| (0.0..=1.0).contains(&w.as_slice()[p])));
    }
    Ok(())
}

pub fn fused_values_within_inputs(case: FusionCase) -> TestCaseResult {
    let vols = case.volumes();
    let maps = case.maps(0.0);
    for strategy in [
        FusionStrategy::VisWeighted,
        FusionStrategy::Average,
        FusionStrategy::MaxPool,
    ] {
        let fused = fuse_volumes(&vols, Some(&maps), strategy).unwrap();
        for j in 0..case.nd {
            for p in 0..case.n {
                let live: Vec<&CostVolume> = vols.iter().filter(|v| v.is_valid(j, p)).collect();
                prop_assert_eq!(fused.is_valid(j, p), !live.is_empty());
                if live.is_empty() {
                    continue;
                }
                for g in 0..case.groups {
                    let lo = live
                        .iter()
                        .map(|v| v.value(j, p, g))
                        .fold(f64::INFINITY, f64::min);
                    let hi = live
                        .iter()
                        .map(|v| v.value(j, p, g))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let f = fused.value(j, p, g);
                    prop_assert!(
                        f >= lo - 1e-12 && f <= hi + 1e-12,
                        "{strategy}: {f} outside [{lo}, {hi}]"
                    );
                }
            }
        }
    }
    Ok(())
}

pub fn log_uncertainty_shift_invariant(case: FusionCase) -> TestCaseResult {
    let vols = case.volumes();
    let base = fuse_volumes(&vols, Some(&case.maps(0.0)), FusionStrategy::VisWeighted).unwrap();
    let shifted = fuse_volumes(
        &vols,
        Some(&case.maps(case.shift)),
        FusionStrategy::VisWeighted,
    )
    .unwrap();
    prop_assert_eq!(base.validity(), shifted.validity());
    for (a, b) in base.data().iter().zip(shifted.data()) {
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
    let wa = fusion_weights(&case.maps(0.0)).unwrap();
    let wb = fusion_weights(&case.maps(case.shift)).unwrap();
    for (a, b) in wa.iter().zip(&wb) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
    Ok(())
}

pub fn temperature() -> impl Strategy<Value = f64> {
    0.01f64..10.0
}
