//! Brute-force vs k-d tree 10HPF search timing.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hpf::{brute_force_best_hpf, find_best_hpf};
use crate::units::{hpf_geometry, MicronsPerPixel, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpfBenchRow {
    pub mf_total: usize,
    pub brute_max_count: usize,
    pub brute_time_s: f64,
    pub kd_max_count: usize,
    pub kd_time_s: f64,
}

impl HpfBenchRow {
    pub fn net_saving_s(&self) -> f64 {
        self.brute_time_s - self.kd_time_s
    }
}

/// `n` points uniform over a square of `extent_px` pixels.
pub fn uniform_points(n: usize, extent_px: f64, rng: &mut impl Rng) -> Vec<Point2> {
    (0..n)
        .map(|_| Point2::new(rng.random_range(0.0..extent_px), rng.random_range(0.0..extent_px)))
        .collect()
}

/// Times both searches on uniform points in an `extent_mm` square slide.
pub fn bench_hpf(ns: &[usize], seed: u64, mpp: MicronsPerPixel, extent_mm: f64) -> Result<Vec<HpfBenchRow>> {
    let geom = hpf_geometry(mpp);
    let extent_px = extent_mm * 1000.0 / mpp.value();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let points = uniform_points(n, extent_px, &mut rng);
        let t = Instant::now();
        let brute = brute_force_best_hpf(&points, &geom)?;
        let brute_time_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let kd = find_best_hpf(&points, &geom)?;
        let kd_time_s = t.elapsed().as_secs_f64();
        rows.push(HpfBenchRow {
            mf_total: n,
            brute_max_count: brute.count,
            brute_time_s,
            kd_max_count: kd.count,
            kd_time_s,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[HpfBenchRow]) -> String {
    let mut s = String::from("mf_total,brute_max_count,brute_time_s,kd_max_count,kd_time_s,net_saving_s\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{:.6},{:.6}",
            r.mf_total,
            r.brute_max_count,
            r.brute_time_s,
            r.kd_max_count,
            r.kd_time_s,
            r.net_saving_s()
        );
    }
    s
}
