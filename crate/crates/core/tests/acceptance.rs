//! Acceptance suite. Run with `cargo test -p mitocount --test acceptance`.
//! Prints one PASS/FAIL line per criterion and exits nonzero on any FAIL.

use std::path::Path;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_bigint::BigInt;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mitocount::annotation::{read_annotation_xml, write_annotation_xml, AnnotatedFigure, AnnotatedHpf, AnnotationDoc};
use mitocount::detect::{DetectorSpec, GateSpec};
use mitocount::pipeline::{
    generate_workload, run_sources, JobSource, JobStatus, PipelineConfig, PipelineMetrics, RunMode, WorkloadSpec,
};
use mitocount::postprocess::merge_global;
use mitocount::store::{RecordStatus, ResultStore};
use mitocount::synth::{gen_synthetic_slide, SlideSpec};
use mitocount::tissue::otsu_threshold;
use mitocount::units::{hpf_geometry, microns_to_pixels, HpfGeometry, MicronsPerPixel, Point2};
use mitocount::{brute_force_best_hpf, find_best_hpf};

type Outcome = Result<String, String>;
type Criterion<'a> = (u32, &'a str, Box<dyn FnOnce() -> Outcome>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mpp(v: f64) -> MicronsPerPixel {
    MicronsPerPixel::new(v).unwrap()
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<Point2> {
    (0..n)
        .map(|_| Point2::new(rng.random_range(lo..hi), rng.random_range(lo..hi)))
        .collect()
}

fn criterion_1() -> Outcome {
    let m = mpp(0.25);
    let geom = hpf_geometry(m);
    let extent = microns_to_pixels(20_000.0, m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_count = 0;
    for set in 0..200 {
        let n = rng.random_range(1..=300);
        // half the sets pack points into a corner so regions hold many members
        let hi = if set % 2 == 0 { extent } else { extent / 8.0 };
        let pts = uniform(&mut rng, n, 0.0, hi);
        let kd = find_best_hpf(&pts, &geom).map_err(|e| e.to_string())?;
        let bf = brute_force_best_hpf(&pts, &geom).map_err(|e| e.to_string())?;
        check(kd.count == bf.count, || format!("set {set}: kd {} brute {}", kd.count, bf.count))?;
        check(kd.member_ids == bf.member_ids, || format!("set {set}: member sets differ"))?;
        check(kd.center == bf.center, || format!("set {set}: centers differ"))?;
        max_count = max_count.max(kd.count);
    }
    Ok(format!("200 sets equal, largest region count {max_count}"))
}

fn criterion_2() -> Outcome {
    // same predicate at a small radius keeps a 0.25 px sweep tractable
    let r = 4.0;
    let geom = HpfGeometry {
        area_mm2: 0.0,
        side_px: 2.0 * r,
        radius_px: r,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact_hits = 0;
    for set in 0..100 {
        let n = rng.random_range(1..=12);
        let lattice = set % 2 == 0;
        let pts: Vec<Point2> = (0..n)
            .map(|_| {
                if lattice {
                    Point2::new(f64::from(rng.random_range(0..96u32)) / 4.0, f64::from(rng.random_range(0..96u32)) / 4.0)
                } else {
                    Point2::new(rng.random_range(0.0..24.0), rng.random_range(0.0..24.0))
                }
            })
            .collect();
        let best = find_best_hpf(&pts, &geom).map_err(|e| e.to_string())?.count;
        let mut sweep_max = 0;
        let steps = ((24.0 + 2.0 * r) / 0.25) as i32 + 1;
        for i in 0..steps {
            for j in 0..steps {
                let c = Point2::new(-r + 0.25 * f64::from(i), -r + 0.25 * f64::from(j));
                let k = pts
                    .iter()
                    .filter(|p| (p.x - c.x).abs() <= r && (p.y - c.y).abs() <= r)
                    .count();
                sweep_max = sweep_max.max(k);
            }
        }
        check(sweep_max <= best, || format!("set {set}: sweep found {sweep_max} > {best}"))?;
        if lattice {
            // on-lattice points put the optimal corner on the sweep grid
            check(sweep_max == best, || format!("set {set}: lattice sweep {sweep_max} != {best}"))?;
            exact_hits += 1;
        }
    }
    Ok(format!("100 sets never exceeded, {exact_hits} lattice sets matched exactly"))
}

fn time_best_of(runs: usize, mut f: impl FnMut() -> usize) -> (Duration, usize) {
    let mut best = Duration::MAX;
    let mut count = 0;
    for _ in 0..runs {
        let t = Instant::now();
        count = f();
        best = best.min(t.elapsed());
    }
    (best, count)
}

fn criterion_3() -> Outcome {
    let m = mpp(0.25);
    let geom = hpf_geometry(m);
    let extent = microns_to_pixels(20_000.0, m).unwrap();
    let pts = uniform(&mut ChaCha8Rng::seed_from_u64(3), 750, 0.0, extent);
    let (brute, bc) = time_best_of(3, || brute_force_best_hpf(&pts, &geom).unwrap().count);
    let (kd, kc) = time_best_of(3, || find_best_hpf(&pts, &geom).unwrap().count);
    check(bc == kc, || format!("counts differ: brute {bc} kd {kc}"))?;
    let ratio = brute.as_secs_f64() / kd.as_secs_f64();
    check(ratio >= 10.0, || format!("speedup {ratio:.1}x < 10x"))?;
    Ok(format!(
        "n=750 brute {:.3}s kd {:.4}s speedup {ratio:.1}x",
        brute.as_secs_f64(),
        kd.as_secs_f64()
    ))
}

fn passthrough() -> PipelineConfig {
    PipelineConfig {
        detector: DetectorSpec::named("passthrough"),
        gate: GateSpec::Passthrough,
        ..PipelineConfig::default()
    }
}

fn criterion_4(root: &Path) -> Outcome {
    let spec = SlideSpec {
        n_figures: 50,
        n_specks: 20,
        n_pairs: 10,
        pair_gaps_um: vec![10.0, 20.0],
        seed: 4,
        ..SlideSpec::new("thresholds", 9000, 7200)
    };
    let slide = gen_synthetic_slide(&spec, &root.join("src")).map_err(|e| e.to_string())?;
    let man = &slide.manifest;
    let (mut near, mut far) = (0, 0);
    for f in &man.ground_truth {
        if let Some(p) = f.pair_partner.filter(|&p| p > f.id) {
            let g = man.ground_truth.iter().find(|g| g.id == p).unwrap();
            let gap_um = f.center.euclidean(g.center) * man.mpp.value() - (f.minor_um + g.minor_um) / 2.0;
            if (gap_um - 10.0).abs() < 0.5 {
                near += 1;
            } else if (gap_um - 20.0).abs() < 0.5 {
                far += 1;
            } else {
                return Err(format!("pair {} has gap {gap_um:.2} um", f.id));
            }
        }
    }
    check(near + far == 10, || format!("{near} + {far} pairs planted"))?;
    let specks: Vec<Point2> = man.ground_truth.iter().filter(|f| f.is_speck).map(|f| f.center).collect();
    check(specks.len() == 20, || format!("{} specks planted", specks.len()))?;

    let out = root.join("out");
    let sources = [JobSource {
        source_dir: slide.dir.clone(),
        arrival_s: 0.0,
    }];
    let m = run_sources(&passthrough(), &sources, &out, 0.0).map_err(|e| e.to_string())?;
    let expected = 50 + near + 2 * far;
    let got = m.jobs[0].mf_total;
    check(got == Some(expected), || format!("count {got:?}, expected {expected}"))?;
    let doc = read_annotation_xml(&out.join("annotations/thresholds.xml")).map_err(|e| e.to_string())?;
    let tol = microns_to_pixels(3.0, man.mpp).unwrap();
    let counted_specks = specks
        .iter()
        .filter(|s| doc.figures.iter().any(|f| Point2::new(f.x, f.y).euclidean(**s) <= tol))
        .count();
    check(counted_specks == 0, || format!("{counted_specks} specks counted"))?;
    Ok(format!("count {expected} = 50 + {near} merged + 2x{far} split, 0 specks"))
}

/// Quadratic pair scan with union-find, repeated on cluster means until stable.
fn merge_oracle(points: &[Point2], radius: f64) -> Vec<Vec<usize>> {
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            a = parent[a];
        }
        a
    }
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    loop {
        let means: Vec<Point2> = clusters
            .iter()
            .map(|c| {
                let n = c.len() as f64;
                let (sx, sy) = c.iter().fold((0.0, 0.0), |(x, y), &i| (x + points[i].x, y + points[i].y));
                Point2::new(sx / n, sy / n)
            })
            .collect();
        let mut parent: Vec<usize> = (0..means.len()).collect();
        let mut changed = false;
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                let d = ((means[i].x - means[j].x).powi(2) + (means[i].y - means[j].y).powi(2)).sqrt();
                if d <= radius {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return clusters;
        }
        let mut merged: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
        for (i, members) in clusters.iter().enumerate() {
            let root = find(&mut parent, i);
            merged[root].extend(members);
        }
        clusters = merged.into_iter().filter(|c| !c.is_empty()).collect();
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort();
    }
}

fn criterion_5() -> Outcome {
    let m = mpp(0.25);
    let radius = microns_to_pixels(15.0, m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut merges = 0;
    for set in 0..100 {
        let n = rng.random_range(0..=500);
        let extent = rng.random_range(300.0..4000.0);
        let pts = uniform(&mut rng, n, 0.0, extent);
        let got = merge_global(&pts, m, 15.0).map_err(|e| e.to_string())?;
        let want = merge_oracle(&pts, radius);
        check(got.clusters == want, || format!("set {set} (n={n}): cluster sets differ"))?;
        merges += n - want.len();
    }
    Ok(format!("100 sets equal, {merges} points absorbed into clusters"))
}

/// Between-class variance `w0 w1 (mu0 - mu1)^2` per split, exact, first max wins.
fn otsu_oracle(h: &[u64; 256]) -> Option<u8> {
    let mut best: Option<(BigRational, usize)> = None;
    for t in 0..255 {
        let (lo, hi) = h.split_at(t + 1);
        let w0: u64 = lo.iter().sum();
        let w1: u64 = hi.iter().sum();
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s0: u64 = lo.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
        let s1: u64 = hi.iter().enumerate().map(|(i, &c)| (i + t + 1) as u64 * c).sum();
        let mu0 = BigRational::new(BigInt::from(s0), BigInt::from(w0));
        let mu1 = BigRational::new(BigInt::from(s1), BigInt::from(w1));
        let d = mu0 - mu1;
        let var = BigRational::from_integer(BigInt::from(w0) * BigInt::from(w1)) * &d * &d;
        if best.as_ref().is_none_or(|(b, _)| var > *b) {
            best = Some((var, t));
        }
    }
    best.map(|(_, t)| t as u8)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut compared = 0;
    for k in 0..1000 {
        let mut h = [0u64; 256];
        match k % 4 {
            0 => h.iter_mut().for_each(|c| *c = rng.random_range(0..1000)),
            1 => {
                for _ in 0..rng.random_range(2..6) {
                    h[rng.random_range(0..256)] = rng.random_range(1..4);
                }
            }
            2 => {
                for (i, c) in h.iter_mut().enumerate() {
                    let a = (i as f64 - 70.0) / 12.0;
                    let b = (i as f64 - 200.0) / 20.0;
                    *c = (5000.0 * (-a * a).exp() + 2000.0 * (-b * b).exp()) as u64 + rng.random_range(0..3);
                }
            }
            _ => {
                // mirrored bins give tied scores
                let a = rng.random_range(0..128);
                let c = rng.random_range(1..50);
                h[a] = c;
                h[255 - a] = c;
                h[rng.random_range(0..256)] += rng.random_range(0..2);
            }
        }
        let Some(want) = otsu_oracle(&h) else {
            continue;
        };
        let got = otsu_threshold(&h).map_err(|e| e.to_string())?;
        check(got.threshold == want, || format!("histogram {k}: got {} want {want}", got.threshold))?;
        compared += 1;
    }
    Ok(format!("{compared} histograms equal"))
}

fn counts(m: &PipelineMetrics) -> Vec<(String, JobStatus, Option<usize>, Option<usize>)> {
    let mut v: Vec<_> = m
        .jobs
        .iter()
        .map(|j| (j.slide_id.clone(), j.status, j.mf_total, j.hpf_count))
        .collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

fn blob_config(mode: RunMode, inference: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        mode,
        detector: DetectorSpec::named("blob"),
        gate: GateSpec::Heuristic,
        ..PipelineConfig::default()
    };
    cfg.workers.download = 4;
    cfg.workers.inference = inference;
    cfg.workers.postprocess = 4;
    cfg
}

fn criterion_7(root: &Path) -> Outcome {
    let mixed = WorkloadSpec {
        slides: 12,
        count_ratio: 0.7,
        tiles_per_slide: 6,
        figures_per_slide: 5,
        specks_per_slide: 2,
        pairs_per_slide: 1,
        seed: 7,
        ..WorkloadSpec::default()
    };
    let sources = generate_workload(&mixed, &root.join("mixed")).map_err(|e| e.to_string())?;
    let one = run_sources(&blob_config(RunMode::WallClock, 1), &sources, &root.join("w1"), 0.0).map_err(|e| e.to_string())?;
    let four = run_sources(&blob_config(RunMode::WallClock, 4), &sources, &root.join("w4"), 0.0).map_err(|e| e.to_string())?;
    check(counts(&one) == counts(&four), || "per-slide counts differ between 1 and 4 workers".into())?;
    let counted = one.count(JobStatus::Done);
    check(counted > 0, || "no slide was counted".into())?;

    let heavy = WorkloadSpec {
        slides: 16,
        count_ratio: 1.0,
        tiles_per_slide: 32,
        figures_per_slide: 4,
        specks_per_slide: 1,
        pairs_per_slide: 0,
        seed: 77,
        ..WorkloadSpec::default()
    };
    let sources = generate_workload(&heavy, &root.join("heavy")).map_err(|e| e.to_string())?;
    let v1 = run_sources(&blob_config(RunMode::Virtual, 1), &sources, &root.join("v1"), 0.0).map_err(|e| e.to_string())?;
    let v4 = run_sources(&blob_config(RunMode::Virtual, 4), &sources, &root.join("v4"), 0.0).map_err(|e| e.to_string())?;
    check(counts(&v1) == counts(&v4), || "virtual runs disagree on counts".into())?;
    check(v1.count(JobStatus::Done) == 16, || format!("{} of 16 heavy slides done", v1.count(JobStatus::Done)))?;
    let scale = v4.throughput_per_s() / v1.throughput_per_s();
    check(scale >= 3.0, || format!("throughput scaling {scale:.2}x < 3.0x"))?;
    Ok(format!(
        "12 slides identical ({counted} counted); virtual throughput {:.3} -> {:.3} slides/s, {scale:.2}x",
        v1.throughput_per_s(),
        v4.throughput_per_s()
    ))
}

fn criterion_8(root: &Path) -> Outcome {
    let dims = [(1200, 1200), (2400, 2400), (3000, 2400), (6000, 3000), (9000, 4800)];
    let sources: Vec<JobSource> = dims
        .iter()
        .enumerate()
        .map(|(i, &(w, h))| {
            let spec = SlideSpec {
                n_figures: 2,
                seed: i as u64,
                ..SlideSpec::new(format!("batch-{i}"), w, h)
            };
            gen_synthetic_slide(&spec, &root.join("src")).map(|d| JobSource {
                source_dir: d.dir,
                arrival_s: 0.0,
            })
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let cfg = passthrough();
    check(cfg.batch_size == 16, || format!("default batch size {}", cfg.batch_size))?;
    let m = run_sources(&cfg, &sources, &root.join("out"), 0.0).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for j in &m.jobs {
        check(j.status == JobStatus::Done, || format!("{} ended {:?}", j.slide_id, j.status))?;
        let want = j.tiles.div_ceil(16) as u64;
        check(j.detector_calls == want, || {
            format!("{}: {} tiles, {} calls, want {want}", j.slide_id, j.tiles, j.detector_calls)
        })?;
        pairs.push(format!("{}->{}", j.tiles, j.detector_calls));
    }
    check(m.jobs.iter().any(|j| j.tiles > 32), || "no slide needed three batches".into())?;
    Ok(format!("tiles->calls {}", pairs.join(" ")))
}

fn criterion_9(root: &Path) -> Outcome {
    let mut sources = Vec::new();
    for (i, (w, h)) in [(1800, 1800), (4200, 3000), (600, 600)].into_iter().enumerate() {
        let spec = SlideSpec {
            blank: true,
            seed: i as u64,
            ..SlideSpec::new(format!("blank-{i}"), w, h)
        };
        let dir = gen_synthetic_slide(&spec, &root.join("src")).map_err(|e| e.to_string())?.dir;
        sources.push(JobSource {
            source_dir: dir,
            arrival_s: 0.0,
        });
    }
    let cfg = PipelineConfig {
        gate: GateSpec::Heuristic,
        ..passthrough()
    };
    let out = root.join("out");
    let m = run_sources(&cfg, &sources, &out, 0.0).map_err(|e| e.to_string())?;
    for j in &m.jobs {
        check(j.status == JobStatus::GatedNoCount, || format!("{} ended {:?}", j.slide_id, j.status))?;
        check(j.detector_calls == 0, || format!("{} made {} calls", j.slide_id, j.detector_calls))?;
    }
    let records = ResultStore::open(out.join("results.jsonl"))
        .and_then(|s| s.scan_all())
        .map_err(|e| e.to_string())?;
    check(records.len() == 3, || format!("{} records", records.len()))?;
    check(
        records.iter().all(|r| r.status == RecordStatus::NoCount && r.mf_total.is_none()),
        || "record is not a bare no-count".into(),
    )?;
    Ok("3 blank slides gated, 0 detector calls, 3 no-count records".into())
}

fn arb_doc() -> impl Strategy<Value = AnnotationDoc> {
    let point = (-1e6f64..1e6, -1e6f64..1e6).prop_map(|(x, y)| Point2::new(x, y));
    let figure = (point.clone(), 0.0f64..50.0, prop::collection::vec(point.clone(), 0..10));
    (
        "[a-zA-Z0-9 _<>&\"'./-]{1,16}",
        0.1f64..1.0,
        prop::collection::vec(figure, 0..20),
        prop::option::of((point, 1.0f64..1e4, any::<u64>())),
    )
        .prop_map(|(slide_id, m, figs, hpf)| {
            let mut doc = AnnotationDoc::new(slide_id, MicronsPerPixel::new(m).unwrap());
            for (i, (p, width_um, contour)) in figs.into_iter().enumerate() {
                doc.figures.push(AnnotatedFigure {
                    id: i as u32 + 1,
                    x: p.x,
                    y: p.y,
                    width_um,
                    contour,
                });
            }
            doc.hpf = hpf.map(|(c, side_px, pick)| {
                let members: Vec<u32> = doc
                    .figures
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| pick >> (i % 64) & 1 == 1)
                    .map(|(_, f)| f.id)
                    .collect();
                AnnotatedHpf {
                    x: c.x,
                    y: c.y,
                    side_px,
                    count: members.len(),
                    members,
                }
            });
            doc
        })
}

fn criterion_10(root: &Path) -> Outcome {
    let config = PropConfig {
        cases: 500,
        failure_persistence: None,
        ..PropConfig::default()
    };
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[10; 32]);
    let mut runner = TestRunner::new_with_rng(config, rng);
    let path = root.join("doc.xml");
    runner
        .run(&arb_doc(), |doc| {
            write_annotation_xml(&doc, &path).unwrap();
            let back = read_annotation_xml(&path).unwrap();
            prop_assert_eq!(&back, &doc.quantized());
            write_annotation_xml(&back, &path).unwrap();
            prop_assert_eq!(read_annotation_xml(&path).unwrap(), back);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("500 generated documents round-trip at 3-decimal precision".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = |name: &str| {
        let d = tmp.path().join(name);
        std::fs::create_dir_all(&d).expect("criterion dir");
        d
    };
    let criteria: Vec<Criterion> = vec![
        (1, "k-d search equals brute force", Box::new(criterion_1)),
        (2, "no grid position beats the search", Box::new(criterion_2)),
        (3, "k-d search at least 10x faster at n=750", Box::new(criterion_3)),
        (4, "micron thresholds end to end", Box::new({
            let d = dir("c4");
            move || criterion_4(&d)
        })),
        (5, "global merge equals quadratic union-find", Box::new(criterion_5)),
        (6, "otsu equals exhaustive argmax", Box::new(criterion_6)),
        (7, "pipeline determinism and worker scaling", Box::new({
            let d = dir("c7");
            move || criterion_7(&d)
        })),
        (8, "detector calls are ceil(tiles/16)", Box::new({
            let d = dir("c8");
            move || criterion_8(&d)
        })),
        (9, "blank slides short-circuit", Box::new({
            let d = dir("c9");
            move || criterion_9(&d)
        })),
        (10, "annotation xml round trip", Box::new({
            let d = dir("c10");
            move || criterion_10(&d)
        })),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id:>2}: {name} ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2}: {name} ({detail}) [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
