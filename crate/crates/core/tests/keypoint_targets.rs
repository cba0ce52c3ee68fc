mod support;

use approx::assert_abs_diff_eq;
use dept_core::depth_targets::Box2D;
use dept_core::keypoint_targets::{
    corner_heatmaps, detection_targets, gaussian_sigma, overlap_radius, render_keypoints, Keypoint,
};
use proptest::prelude::*;
use support::oracles::{radius_by_bisection, sigma_by_bisection};

proptest! {
    #[test]
    fn sigma_matches_bisection_oracle(w in 0.5f64..200.0, h in 0.5f64..200.0, m in 0.3f64..0.95) {
        let got = gaussian_sigma(w, h, m).unwrap();
        prop_assert!((got - sigma_by_bisection(w, h, m)).abs() < 1e-6 * w.max(h));
        prop_assert!((overlap_radius(w, h, m) - radius_by_bisection(w, h, m)).abs() < 1e-6 * w.max(h));
    }

    #[test]
    fn rendered_values_follow_the_gaussian(
        px in 0.0f64..19.0, py in 0.0f64..14.0, sigma in 0.5f64..4.0,
        x in 0usize..20, y in 0usize..15,
    ) {
        let kp = Keypoint { channel: 0, px, py, sigma };
        let hm = render_keypoints(&[kp], 1, 20, 15);
        let (kx, ky) = kp.cell();
        let d2 = (x as f64 - kx as f64).powi(2) + (y as f64 - ky as f64).powi(2);
        prop_assert!((hm.get(0, x, y) - (-d2 / (2.0 * sigma * sigma)).exp()).abs() < 1e-9);
        prop_assert_eq!(hm.get(0, kx as usize, ky as usize), 1.0);
    }

    #[test]
    fn overlapping_keypoints_combine_by_max(
        kps in prop::collection::vec((0usize..3, 0.0f64..15.0, 0.0f64..11.0, 0.5f64..3.0), 1..8),
    ) {
        let kps: Vec<Keypoint> = kps.into_iter().map(|(c, px, py, s)| Keypoint { channel: c, px, py, sigma: s }).collect();
        let all = render_keypoints(&kps, 3, 16, 12);
        let singles: Vec<_> = kps.iter().map(|k| render_keypoints(&[*k], 3, 16, 12)).collect();
        for (i, v) in all.values().iter().enumerate() {
            let want = singles.iter().map(|s| s.values()[i]).fold(0.0, f64::max);
            prop_assert_eq!(*v, want);
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}

#[test]
fn sigma_has_a_floor() {
    assert_abs_diff_eq!(
        gaussian_sigma(1.0, 1.0, 0.7).unwrap(),
        2.0 / 3.0,
        epsilon = 1e-12
    );
    assert!(gaussian_sigma(0.0, 3.0, 0.7).is_err());
}

#[test]
fn corners_land_in_their_channels() {
    let b = Box2D::new(0, 8.0, 12.0, 40.0, 36.0, 0.9).unwrap();
    let hm = corner_heatmaps(&[b], 4, 16, 16, 0.7).unwrap();
    for (c, (x, y)) in [(2, 3), (10, 3), (10, 9), (2, 9)].into_iter().enumerate() {
        assert_eq!(hm.get(c, x, y), 1.0, "channel {c}");
    }
}

#[test]
fn corners_outside_the_grid_are_clamped() {
    let b = Box2D::new(0, 0.0, 0.0, 64.0, 64.0, 0.9).unwrap();
    let hm = corner_heatmaps(&[b], 4, 16, 16, 0.7).unwrap();
    assert_eq!(hm.get(2, 15, 15), 1.0);
    assert_eq!(hm.get(0, 0, 0), 1.0);
}

#[test]
fn centers_carry_size_and_offset() {
    let b = Box2D::new(1, 10.0, 6.0, 31.0, 20.0, 0.9).unwrap();
    let t = detection_targets(&[b, b], 2, 4, 16, 16, 0.7).unwrap();
    assert_eq!(t.centers.len(), 1);
    let c = t.centers[0];
    assert_eq!((c.cell_x, c.cell_y), (5, 3));
    assert_abs_diff_eq!(c.size[0], 5.25, epsilon = 1e-12);
    assert_abs_diff_eq!(c.size[1], 3.5, epsilon = 1e-12);
    assert_abs_diff_eq!(c.offset[0], 0.125, epsilon = 1e-12);
    assert_abs_diff_eq!(c.offset[1], 0.25, epsilon = 1e-12);
    assert_eq!(t.center_heatmaps.get(1, 5, 3), 1.0);
    assert_eq!(t.center_heatmaps.channel(0).iter().sum::<f64>(), 0.0);
    assert!(detection_targets(&[b], 1, 4, 16, 16, 0.7).is_err());
}
