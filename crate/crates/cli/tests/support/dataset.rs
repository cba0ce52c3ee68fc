//! Synthetic KITTI-layout datasets for end-to-end runs.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use dept_core::geometry::LidarPoint;
use dept_core::io_formats::write_velodyne_bin;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CALIB: &str = include_str!("../../../core/tests/fixtures/calib_000007.txt");

/// Lidar returns on a wall in front of the car plus ground and clutter.
pub fn scan(rng: &mut impl Rng, n: usize) -> Vec<LidarPoint> {
    (0..n)
        .map(|_| {
            let x = rng.random_range(4.0f32..70.0);
            let y = rng.random_range(-15.0f32..15.0);
            let z = rng.random_range(-1.7f32..1.5);
            LidarPoint::new(x, y, z, rng.random_range(0.0..1.0))
        })
        .collect()
}

/// Writes `frames` frames (ids 000000, 000001, ...) into `dir`.
pub fn write_dataset(dir: &Path, frames: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir.join("calib")).unwrap();
    fs::create_dir_all(dir.join("velodyne")).unwrap();
    let mut det = String::new();
    for f in 0..frames {
        let id = format!("{f:06}");
        fs::write(dir.join("calib").join(format!("{id}.txt")), CALIB).unwrap();
        fs::write(
            dir.join("velodyne").join(format!("{id}.bin")),
            write_velodyne_bin(&scan(&mut rng, 4000)),
        )
        .unwrap();
        for _ in 0..rng.random_range(1..5) {
            let x1 = rng.random_range(0.0..1100.0);
            let y1 = rng.random_range(100.0..250.0);
            let w = rng.random_range(20.0..200.0);
            let h = rng.random_range(20.0..120.0);
            det.push_str(&format!(
                "{{\"frame_id\": \"{id}\", \"class_id\": {}, \"bbox\": [{x1}, {y1}, {}, {}], \"score\": {}}}\n",
                rng.random_range(0..3),
                x1 + w,
                y1 + h,
                rng.random_range(0.2..1.0)
            ));
        }
    }
    fs::write(dir.join("detections.ndjson"), det).unwrap();
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
