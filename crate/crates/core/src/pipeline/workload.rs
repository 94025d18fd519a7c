//! Synthetic workloads: slides on disk plus arrival times.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::config::{ArrivalModel, WorkloadSpec};
use super::job::JobSource;
use crate::error::{Error, Result};
use crate::synth::{gen_synthetic_slide, SlideSpec, DEFAULT_WINDOW_PX};

/// Per-slide generation specs. Each slide is a count slide with probability
/// `count_ratio`, otherwise blank.
pub fn workload_slides(w: &WorkloadSpec) -> Result<Vec<SlideSpec>> {
    w.validate()?;
    let (cols, rows) = w.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(w.seed);
    Ok((0..w.slides)
        .map(|i| {
            let count = rng.random_bool(w.count_ratio);
            let slide_seed = rng.random();
            let base = SlideSpec {
                mpp: w.mpp,
                seed: slide_seed,
                ..SlideSpec::new(
                    format!("slide-{i:05}"),
                    cols * DEFAULT_WINDOW_PX,
                    rows * DEFAULT_WINDOW_PX,
                )
            };
            if count {
                SlideSpec {
                    n_figures: w.figures_per_slide,
                    n_specks: w.specks_per_slide,
                    n_pairs: w.pairs_per_slide,
                    pair_gap_um: w.pair_gap_um,
                    ..base
                }
            } else {
                SlideSpec { blank: true, ..base }
            }
        })
        .collect())
}

/// Submission time of each slide, in workload seconds.
pub fn arrival_times(w: &WorkloadSpec) -> Result<Vec<f64>> {
    w.validate()?;
    Ok(match &w.arrival {
        ArrivalModel::Immediate => vec![0.0; w.slides],
        ArrivalModel::Trace { times_s } => times_s.clone(),
        ArrivalModel::Poisson { rate_per_s } => {
            let rate = rate_per_s.unwrap_or(f64::from(w.slides_per_day) / 86_400.0);
            let exp = Exp::new(rate).map_err(|e| Error::config(format!("poisson rate: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(w.seed ^ 0x5EED_A881_7A1E);
            let mut t = 0.0;
            (0..w.slides)
                .map(|_| {
                    t += exp.sample(&mut rng);
                    t
                })
                .collect()
        }
    })
}

/// Renders the workload's slides under `root` and pairs them with arrivals.
pub fn generate_workload(w: &WorkloadSpec, root: &Path) -> Result<Vec<JobSource>> {
    let specs = workload_slides(w)?;
    let times = arrival_times(w)?;
    specs
        .iter()
        .zip(times)
        .map(|(spec, arrival_s)| {
            let slide = gen_synthetic_slide(spec, root)?;
            Ok(JobSource {
                source_dir: slide.dir,
                arrival_s,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_ratio_is_respected_on_average() {
        let w = WorkloadSpec {
            slides: 4000,
            seed: 3,
            ..WorkloadSpec::default()
        };
        let specs = workload_slides(&w).unwrap();
        let blank = specs.iter().filter(|s| s.blank).count() as f64 / 4000.0;
        // binomial sd is about 0.0075
        assert!((blank - 0.65).abs() < 0.03, "{blank}");
    }

    #[test]
    fn poisson_arrivals_are_increasing_with_expected_mean() {
        let w = WorkloadSpec {
            slides: 5000,
            arrival: ArrivalModel::Poisson { rate_per_s: Some(2.0) },
            ..WorkloadSpec::default()
        };
        let t = arrival_times(&w).unwrap();
        assert!(t.windows(2).all(|p| p[0] <= p[1]));
        let mean_gap = t[t.len() - 1] / t.len() as f64;
        assert!((mean_gap - 0.5).abs() < 0.05, "{mean_gap}");
    }
}
