use std::path::Path;

use dept_core::depth_targets::{Box2D, DepthLabel, Provenance, SemiDenseDepthTarget};
use dept_core::geometry::LidarPoint;
use dept_core::io_formats::{
    count_classes, decode_depth_png, decode_heatmap, depth_to_png_value, encode_depth_png,
    encode_heatmap, read_detections, read_kitti_calib, read_target_bundle, read_velodyne_bin,
    write_target_bundle, write_velodyne_bin, BoxSource, BundleCounts, BundleMetadata, TargetBundle,
};
use dept_core::keypoint_targets::{CenterTarget, DetectionTargets, HeatmapSet};
use dept_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CALIB: &str = include_str!("fixtures/calib_000007.txt");
const DETECTIONS: &str = include_str!("fixtures/detections.ndjson");

/// Values of `key` split out of the text independently of the parser.
fn fixture_values(key: &str) -> Vec<f64> {
    let line = CALIB
        .lines()
        .find(|l| l.starts_with(&format!("{key}:")))
        .unwrap();
    line[key.len() + 1..]
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect()
}

#[test]
fn calib_fixture_parses_exactly() {
    let c = read_kitti_calib(CALIB, 1242, 375).unwrap();
    let p2 = fixture_values("P2");
    assert_eq!(c.camera.fx, 707.0493);
    assert_eq!(
        (c.camera.fx, c.camera.fy, c.camera.cx, c.camera.cy),
        (p2[0], p2[5], p2[2], p2[6])
    );
    assert_eq!(c.p2.to_vec(), p2);
    assert_eq!(c.tr_velo_to_cam.to_vec(), fixture_values("Tr_velo_to_cam"));
    let r0 = fixture_values("R0_rect");
    assert_eq!(c.rect.unwrap().as_slice().len(), 9);
    assert_eq!(c.rect.unwrap()[(0, 1)], r0[1]);
    // a point 10 m ahead of the lidar lands near the image center
    let p = c
        .lidar_to_cam
        .apply(&nalgebra::Vector3::new(10.0, 0.0, 0.0));
    assert!((p.z - 9.67).abs() < 0.05, "{p:?}");
}

#[test]
fn calib_errors_name_the_problem() {
    let no_tr: String = CALIB
        .lines()
        .filter(|l| !l.starts_with("Tr_velo_to_cam"))
        .collect::<Vec<_>>()
        .join("\n");
    assert!(
        matches!(read_kitti_calib(&no_tr, 1242, 375), Err(Error::MissingKey(k)) if k == "Tr_velo_to_cam")
    );
    let short_p2: String = CALIB
        .lines()
        .map(|l| {
            if l.starts_with("P2:") {
                l.rsplit_once(' ').unwrap().0.to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    assert!(matches!(
        read_kitti_calib(&short_p2, 1242, 375),
        Err(Error::Parse { line: 3, .. })
    ));
}

#[test]
fn velodyne_hand_assembled_bytes() {
    let bytes: [u8; 16] = [
        0, 0, 0x80, 0x3f, 0, 0, 0, 0x40, 0, 0, 0x40, 0x40, 0, 0, 0, 0x3f,
    ];
    assert_eq!(
        read_velodyne_bin(&bytes).unwrap(),
        vec![LidarPoint::new(1.0, 2.0, 3.0, 0.5)]
    );
    assert!(read_velodyne_bin(&[]).unwrap().is_empty());
    assert!(matches!(
        read_velodyne_bin(&bytes[..15]),
        Err(Error::TruncatedFile { .. })
    ));
    let pts = vec![
        LidarPoint::new(-1.5, 0.25, 7.0, 0.0),
        LidarPoint::new(3.0, 4.0, 5.0, 1.0),
    ];
    assert_eq!(read_velodyne_bin(&write_velodyne_bin(&pts)).unwrap(), pts);
}

#[test]
fn detections_fixture() {
    let d = read_detections(DETECTIONS, 0.3).unwrap();
    assert_eq!(d.dropped_low_score, 1);
    assert_eq!(d.dropped_degenerate, 1);
    assert_eq!(
        d.boxes("000007"),
        &[Box2D::new(0, 564.62, 174.59, 616.43, 224.74, 0.97).unwrap()]
    );
    assert_eq!(
        d.boxes("000008").len(),
        1,
        "score equal to the threshold is kept"
    );
    assert_eq!(count_classes(d.class_ids(), 3).unwrap(), vec![1, 1, 0]);
    let bad =
        "{\"frame_id\": \"1\", \"class_id\": 0, \"bbox\": [0, 0, 1, 1], \"score\": 0.5}\n{oops";
    assert!(matches!(
        read_detections(bad, 0.3),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn class_counts() {
    assert_eq!(count_classes([], 3).unwrap(), vec![0, 0, 0]);
    assert_eq!(count_classes([0, 2, 0, 0], 3).unwrap(), vec![3, 0, 1]);
    assert!(matches!(
        count_classes([3], 3),
        Err(Error::UnknownClass { class: 3 })
    ));
}

#[test]
fn png_quantization() {
    assert_eq!(depth_to_png_value(12.345), 3160);
    let mut cells = vec![None; 6];
    cells[4] = Some(DepthLabel {
        depth: 12.345,
        provenance: Provenance::Original,
        weight: 1.0,
        seed: 4,
    });
    let t = SemiDenseDepthTarget::from_cells(3, 2, 4, cells).unwrap();
    let (w, h, d) = decode_depth_png(&encode_depth_png(&t).unwrap(), Path::new("x")).unwrap();
    assert_eq!((w, h), (3, 2));
    assert_eq!(d[4], Some(3160.0 / 256.0));
    assert!((d[4].unwrap() - 12.345).abs() <= 1.0 / 512.0);
    assert!(d.iter().enumerate().all(|(i, v)| v.is_some() == (i == 4)));
}

#[test]
fn corrupt_heatmap_header() {
    let hm = HeatmapSet::filled(2, 3, 4, 0.5).unwrap();
    let mut bytes = encode_heatmap(&hm);
    assert_eq!(decode_heatmap(&bytes, Path::new("h")).unwrap(), hm);
    bytes[0] = b'X';
    assert!(matches!(
        decode_heatmap(&bytes, Path::new("h")),
        Err(Error::CorruptHeader { .. })
    ));
    let mut bytes = encode_heatmap(&hm);
    bytes.pop();
    assert!(matches!(
        decode_heatmap(&bytes, Path::new("h")),
        Err(Error::CorruptHeader { .. })
    ));
}

fn random_bundle(seed: u64) -> TargetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h, n_classes) = (9, 7, 3);
    let cells = (0..w * h)
        .map(|_| {
            rng.random_bool(0.4).then(|| DepthLabel {
                depth: rng.random_range(0.5..59.9),
                provenance: if rng.random_bool(0.5) {
                    Provenance::Original
                } else {
                    Provenance::Propagated
                },
                weight: rng.random_range(0.1..1.0),
                seed: rng.random_range(0..w * h),
            })
        })
        .collect();
    // f32-representable values so the heatmap payload round-trips bit for bit
    let mut hm = |c: usize| {
        let v = (0..c * w * h).map(|_| rng.random::<f32>() as f64).collect();
        HeatmapSet::from_values(c, w, h, v).unwrap()
    };
    let corners = hm(4);
    let center_heatmaps = hm(n_classes);
    let centers = vec![CenterTarget {
        class_id: 2,
        cell_x: 4,
        cell_y: 1,
        size: [3.25, 1.1],
        offset: [0.1, 0.7],
        box_index: 0,
    }];
    TargetBundle {
        depth: SemiDenseDepthTarget::from_cells(w, h, 4, cells).unwrap(),
        corners,
        detection: DetectionTargets {
            center_heatmaps,
            centers,
        },
        metadata: BundleMetadata {
            frame_id: format!("{seed:06}"),
            tool_version: "test".into(),
            image_w: 36,
            image_h: 28,
            stride: 4,
            width: w,
            height: h,
            n_classes,
            max_depth: 60.0,
            sigma_lo: 0.3,
            sigma_hi: 0.7,
            wide_patch: 5,
            narrow_patch: 3,
            propagated_weight: 0.5,
            min_iou: 0.7,
            score_threshold: 0.3,
            box_source: BoxSource::Detector,
            sigma_source: "constant:1".into(),
            counts: BundleCounts {
                class_counts: vec![0, 0, 1],
                ..Default::default()
            },
        },
    }
}

#[test]
fn bundle_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let b = random_bundle(seed);
        let path = dir.path().join(format!("{seed}"));
        write_target_bundle(&b, &path).unwrap();
        let back = read_target_bundle(&path).unwrap();
        assert_eq!(back, b);
        for (x, y) in b.depth.cells().iter().zip(back.depth.cells()) {
            assert_eq!(x.map(|l| l.depth.to_bits()), y.map(|l| l.depth.to_bits()));
        }
        let png = std::fs::read(path.join("depth.png")).unwrap();
        let (_, _, q) = decode_depth_png(&png, &path).unwrap();
        for (l, d) in b.depth.cells().iter().zip(q) {
            assert_eq!(l.is_some(), d.is_some());
            if let (Some(l), Some(d)) = (l, d) {
                assert!((l.depth - d).abs() <= 1.0 / 512.0);
            }
        }
    }
}

#[test]
fn bundle_with_bad_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let b = random_bundle(9);
    write_target_bundle(&b, dir.path()).unwrap();
    let p = dir.path().join("corners.bin");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[..4].copy_from_slice(b"XEPT");
    std::fs::write(&p, bytes).unwrap();
    assert!(matches!(
        read_target_bundle(dir.path()),
        Err(Error::CorruptHeader { .. })
    ));
}
