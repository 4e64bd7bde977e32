//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion ids (`C1` .. `C8`) as
//! arguments to run a subset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use blendmorph::energetics::{gibbs_total, kappa_from_chi, mu_differences, BlendParams};
use blendmorph::gpc::{augment, AugmentationConfig, LabeledPoint};
use blendmorph::grid::{laplacian, BoundarySpec, FieldPair, GridSpec, ScalarField};
use blendmorph::mlkit::{affinity_propagation, elbow_select, kmeans, AffinityConfig};
use blendmorph::pipeline::{labeled_slices, rule_labels, train_slice, LengthScale};
use blendmorph::solver::{run, SimConfig, SimResult, StateId};
use blendmorph::sweep::{read_manifest, run_sweep, SweepBase, SweepSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn desk_run(chi: f64, t_end: f64, seed: u64) -> SimResult {
    let cfg = SimConfig {
        t_end,
        rng_seed: seed,
        snapshot_every: 1,
        ..SimConfig::desk(1.0 / 3.0, 1.0 / 3.0, BlendParams::default().with_chi(chi, chi, chi))
    };
    run(&cfg).expect("valid configuration")
}

fn c1_conservation(r: &SimResult) -> Outcome {
    let first = &r.snapshots[0].fields;
    let (ma, mb) = (first.a.mean(), first.b.mean());
    let (mut da, mut db) = (0.0f64, 0.0f64);
    for s in &r.snapshots {
        da = da.max((s.fields.a.mean() - ma).abs() / ma);
        db = db.max((s.fields.b.mean() - mb).abs() / mb);
    }
    outcome(
        r.completed() && da <= 1e-10 && db <= 1e-10,
        format!(
            "64x64, chi=0.009, t=20 over {} stored states: drift a {da:.2e}, b {db:.2e} (limit 1e-10), wall {:.0} s",
            r.snapshots.len(),
            r.wall_time
        ),
    )
}

fn c2_dissipation(r: &SimResult, twin: &SimResult) -> Outcome {
    let rises = r
        .gibbs_trace
        .windows(2)
        .filter(|w| (w[1].gibbs - w[0].gibbs) / w[0].gibbs.abs() > 1e-8)
        .count();
    let g0 = twin.gibbs_trace[0].gibbs;
    let g1 = twin.gibbs_trace[twin.gibbs_trace.len() - 1].gibbs;
    let rel = (g1 - g0).abs() / g0.abs();
    outcome(
        r.state_id == StateId::State1 && rises == 0 && twin.state_id == StateId::State2 && rel < 1e-9,
        format!(
            "chi=0.009 run {} with {rises} steps of relative increase > 1e-8; chi=0 twin {} with |dG|/|G0| = {rel:.2e} (limit 1e-9)",
            r.state_id, twin.state_id
        ),
    )
}

fn variance_ratio(r: &SimResult) -> f64 {
    r.final_snapshot().fields.a.variance() / r.snapshots[0].fields.a.variance()
}

fn c3_spinodal(unstable: &[SimResult]) -> Outcome {
    let grow: Vec<f64> = unstable.iter().map(variance_ratio).collect();
    let decay: Vec<f64> = (1..=3).map(|s| variance_ratio(&desk_run(0.0005, 20.0, s))).collect();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ");
    outcome(
        grow.iter().all(|&g| g >= 100.0) && decay.iter().all(|&d| d < 1.0),
        format!(
            "variance ratio at chi=0.009 [{}] (need >= 100), at chi=0.0005 [{}] (need < 1)",
            fmt(&grow),
            fmt(&decay)
        ),
    )
}

fn c4_numerics() -> Outcome {
    let g = GridSpec::square(8, 6.0).unwrap();
    let p = BlendParams::default().with_chi(0.006, 0.009, 0.003);
    let k = kappa_from_chi(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut field = |base: f64| {
        ScalarField::from_values(g, (0..g.len()).map(|_| base + rng.gen_range(-0.08..0.08)).collect()).unwrap()
    };
    let f = FieldPair::new(field(0.3), field(0.35)).unwrap();
    let (_, mu_ac, mu_bc) = mu_differences(&f, &k, &p);
    let energy = |a: &[f64], b: &[f64]| {
        let pair = FieldPair::new(
            ScalarField::from_values(g, a.to_vec()).unwrap(),
            ScalarField::from_values(g, b.to_vec()).unwrap(),
        )
        .unwrap();
        gibbs_total(&pair, &k, &p)
    };
    let (a, b) = (f.a.values().to_vec(), f.b.values().to_vec());
    let h = 1e-6;
    let mut good = 0;
    for cell in 0..g.len() {
        let nudge = |v: &[f64], d: f64| {
            let mut w = v.to_vec();
            w[cell] += d;
            w
        };
        let da = (energy(&nudge(&a, h), &b) - energy(&nudge(&a, -h), &b)) / (2.0 * h * g.cell_area());
        let db = (energy(&a, &nudge(&b, h)) - energy(&a, &nudge(&b, -h))) / (2.0 * h * g.cell_area());
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
        if rel(da, mu_ac.values()[cell]) < 1e-4 && rel(db, mu_bc.values()[cell]) < 1e-4 {
            good += 1;
        }
    }
    let frac = good as f64 / g.len() as f64;

    let err = |n: usize| {
        let g = GridSpec::new(n, n, 2.0, 3.0).unwrap();
        let (kx, ky) = (std::f64::consts::PI, std::f64::consts::PI / 3.0);
        let f = ScalarField::from_fn(g, |x, y| (kx * x).sin() * (ky * y).cos());
        let exact = ScalarField::from_fn(g, |x, y| -(kx * kx + ky * ky) * (kx * x).sin() * (ky * y).cos());
        laplacian(&f, BoundarySpec).max_abs_diff(&exact)
    };
    let errs: Vec<f64> = [16, 32, 64, 128].into_iter().map(err).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    outcome(
        frac >= 0.95 && orders.iter().all(|o| (o - 2.0).abs() <= 0.2),
        format!(
            "{:.0}% of cells within 1e-4 (need 95%); Laplacian orders {:?} (need 2.0 +- 0.2)",
            100.0 * frac,
            orders.iter().map(|o| (o * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn blobs(seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let centres = [[0.0, 0.0], [8.0, 0.0], [4.0, 7.0]];
    let mut vals = Vec::new();
    for c in centres {
        for _ in 0..40 {
            vals.push(c[0] + noise.sample(&mut rng));
            vals.push(c[1] + noise.sample(&mut rng));
        }
    }
    DMatrix::from_row_slice(120, 2, &vals)
}

fn c5_clustering() -> Outcome {
    let hits = (0..20)
        .filter(|&s| elbow_select(&blobs(s), 1, 8, s).map(|e| e.k_star == 3).unwrap_or(false))
        .count();
    let same = affinity_propagation(&DMatrix::from_element(6, 3, 0.4), AffinityConfig::default()).unwrap();
    let pairs = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.1, 0.0, 10.0, 10.0, 10.1, 10.0]);
    let two = affinity_propagation(&pairs, AffinityConfig::default()).unwrap();
    let mut monotone = true;
    for s in 0..20 {
        for k in 1..=6 {
            let h = kmeans(&blobs(s), k, s).unwrap().wcss_history;
            monotone &= h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
    outcome(
        hits >= 19 && same.k == 1 && two.k == 2 && monotone,
        format!(
            "elbow k=3 in {hits}/20 trials (need 19); affinity {} cluster on identical points, {} on far pairs; wcss monotone every iteration: {monotone}",
            same.k, two.k
        ),
    )
}

fn slice_spec(chi: [f64; 3], out: &Path) -> SweepSpec {
    let mut base = SweepBase::desk();
    base.grid = GridSpec::square(48, 30.0).unwrap();
    base.t_end = 50.0;
    base.dt = 0.02;
    SweepSpec {
        a0_values: (0..=14).map(|i| (10 + 5 * i) as f64 / 100.0).collect(),
        b0_values: (0..=7).map(|j| (10 + 5 * j) as f64 / 100.0).collect(),
        chi_cases: vec![chi],
        base,
        out_dir: out.to_path_buf(),
        parallelism: 1,
    }
}

struct SliceData {
    chi: [f64; 3],
    planned: Vec<(f64, f64)>,
    points: Vec<LabeledPoint>,
    summary: String,
}

fn run_slice(chi: [f64; 3], root: &Path) -> SliceData {
    let start = Instant::now();
    let spec = slice_spec(chi, &root.join(format!("slice_{}_{}_{}", chi[0], chi[1], chi[2])));
    let planned = spec.plan().0.iter().map(|r| (r.a0, r.b0)).collect();
    let outcome = run_sweep(&spec).expect("sweep runs");
    let t = outcome.tally();
    let records = read_manifest(&outcome.manifest_path).unwrap();
    let points = rule_labels(&outcome.manifest_path)
        .and_then(|labels| labeled_slices(&records, &labels))
        .map(|mut s| s.remove(0).1)
        .unwrap_or_default();
    SliceData {
        chi,
        planned,
        points,
        summary: format!(
            "{} runs in {:.0} s (State1 {}, State2 {}, State3a {}, State3b {})",
            outcome.records.len(),
            start.elapsed().as_secs_f64(),
            t[0],
            t[1],
            t[2],
            t[3]
        ),
    }
}

fn slice_accuracy(s: &SliceData, target: f64) -> (bool, String) {
    let n = s.points.len();
    if n < 25 {
        return (false, format!("chi={:?}: {} eligible runs (need 25); {}", s.chi, n, s.summary));
    }
    let mut accs = Vec::new();
    for seed in 0..5 {
        match train_slice(s.chi, &s.points, 0.2, seed, LengthScale::Fixed(1.0), &AugmentationConfig::default()) {
            Ok((_, report)) => accs.push(report.accuracy),
            Err(e) => return (false, format!("chi={:?}: split {seed} failed to train: {e}", s.chi)),
        }
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let mut classes: Vec<usize> = s.points.iter().map(|p| p.label).collect();
    classes.sort_unstable();
    classes.dedup();
    (
        mean >= target,
        format!(
            "chi={:?}: {n} eligible runs in {} classes, accuracy over 5 splits {:?}, mean {mean:.3} (need {target}); {}",
            s.chi,
            classes.len(),
            accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            s.summary
        ),
    )
}

fn c6_gpc(slices: &[SliceData]) -> Outcome {
    let targets = [0.90, 0.85];
    let parts: Vec<(bool, String)> = slices.iter().zip(targets).map(|(s, t)| slice_accuracy(s, t)).collect();
    outcome(
        parts.iter().all(|p| p.0),
        parts
            .iter()
            .map(|(ok, d)| format!("[{}] {d}", if *ok { "ok" } else { "short" }))
            .collect::<Vec<_>>()
            .join("; "),
    )
}

fn c7_augmentation(slices: &[SliceData]) -> Outcome {
    let mut worst = 0.0f64;
    let mut exact = true;
    let mut total = 0;
    for s in slices {
        let mut pts: Vec<LabeledPoint> = s
            .planned
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| LabeledPoint::new(a, b, 0, s.chi, i))
            .collect();
        pts.extend(s.points.iter().copied());
        let aug = augment(&pts, &AugmentationConfig::default());
        exact &= aug.points.len() == 3 * pts.len() - aug.dropped;
        total += pts.len();
        for q in &aug.points {
            let p = pts.iter().find(|p| p.origin == q.origin && p.chi_case == q.chi_case).unwrap();
            let shift = ((q.a0 - p.a0).powi(2) + (q.b0 - p.b0).powi(2)).sqrt();
            worst = worst.max(shift / (p.a0 * p.a0 + p.b0 * p.b0).sqrt());
        }
    }
    outcome(
        exact && worst <= 0.05 * (1.0 + 1e-12),
        format!(
            "{total} points: largest relative perturbation {:.4}% (limit 5%), count exactly 3n minus drops: {exact}",
            100.0 * worst
        ),
    )
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_blendmorph"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn smoke(dir: &Path) -> bool {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"a0_values": [0.2, 0.3, 0.4, 0.5], "b0_values": [0.2, 0.3],
            "chi_cases": [[0.009, 0.009, 0.009]],
            "base": {"grid": {"nx": 32, "ny": 32, "lx": 20.0, "ly": 20.0}, "t_end": 10.0, "dt": 0.02},
            "out_dir": "sweep"}"#,
    )
    .unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (sw, cl, tr, mp) = (dir.join("sweep"), dir.join("cluster"), dir.join("train"), dir.join("map"));
    let manifest = sw.join("manifest.csv");
    cli(&["sweep", "--spec", &s(&spec), "--jobs", "2", "--out", &s(&sw)])
        && cli(&["cluster", "--manifest", &s(&manifest), "--out", &s(&cl)])
        && cli(&["train", "--manifest", &s(&manifest), "--labels", &s(&cl.join("labels.csv")), "--out", &s(&tr)])
        && cli(&["predict-map", "--model", &s(&tr.join("gpc_slice0.gpcm")), "--out", &s(&mp)])
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["sweep/snapshots", "sweep", "map"] {
        let mut v: Vec<PathBuf> = fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e != "json"))
            .collect();
        v.sort();
        for p in v {
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
        }
    }
    out
}

fn c8_determinism(root: &Path) -> Outcome {
    let (d1, d2) = (root.join("smoke1"), root.join("smoke2"));
    fs::create_dir_all(&d1).unwrap();
    fs::create_dir_all(&d2).unwrap();
    if !(smoke(&d1) && smoke(&d2)) {
        return outcome(false, "smoke pipeline exited nonzero".into());
    }
    let (f1, f2) = (files(&d1), files(&d2));
    let same = f1 == f2;
    let n_snap = f1.iter().filter(|(p, _)| p.starts_with("sweep/snapshots")).count();
    outcome(
        same && n_snap == 8,
        format!("{} files ({n_snap} snapshots, manifest, map) byte-identical across two runs: {same}", f1.len()),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('C')).collect();
    let on = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    let root = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();

    if on("C1") || on("C2") || on("C3") {
        let main_run = desk_run(0.009, 20.0, 0);
        if on("C1") {
            results.push(("C1", "conservation", c1_conservation(&main_run)));
        }
        if on("C2") {
            let twin = desk_run(0.0, 20.0, 0);
            results.push(("C2", "energy dissipation and taxonomy", c2_dissipation(&main_run, &twin)));
        }
        if on("C3") {
            let unstable: Vec<SimResult> = (1..=3).map(|s| desk_run(0.009, 20.0, s)).collect();
            results.push(("C3", "spinodal onset", c3_spinodal(&unstable)));
        }
    }
    if on("C4") {
        results.push(("C4", "numerics oracles", c4_numerics()));
    }
    if on("C5") {
        results.push(("C5", "clustering oracles", c5_clustering()));
    }
    if on("C6") || on("C7") {
        let slices: Vec<SliceData> = [[0.003, 0.003, 0.003], [0.006, 0.003, 0.006]]
            .into_iter()
            .map(|chi| run_slice(chi, root.path()))
            .collect();
        if on("C6") {
            results.push(("C6", "classifier accuracy at desk scale", c6_gpc(&slices)));
        }
        if on("C7") {
            results.push(("C7", "augmentation bound", c7_augmentation(&slices)));
        }
    }
    if on("C8") {
        results.push(("C8", "pipeline determinism", c8_determinism(root.path())));
    }

    for (id, name, o) in &results {
        println!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
