use blendmorph::energetics::BlendParams;
use blendmorph::grid::{FieldPair, GridSpec};
use blendmorph::solver::{
    classify_state, initialize, run, run_from, GibbsPoint, SimConfig, StateId,
};

fn cfg(n: usize, a0: f64, b0: f64, chi: [f64; 3], t_end: f64, seed: u64) -> SimConfig {
    SimConfig {
        grid: GridSpec::square(n, n as f64 * 0.625).unwrap(),
        t_end,
        rng_seed: seed,
        ..SimConfig::desk(
            a0,
            b0,
            BlendParams::default().with_chi(chi[0], chi[1], chi[2]),
        )
    }
}

fn mass(f: &FieldPair) -> (f64, f64) {
    (f.a.integral(), f.b.integral())
}

#[test]
fn every_snapshot_conserves_both_species() {
    let mut c = cfg(24, 0.3, 0.3, [0.009, 0.009, 0.009], 2.0, 5);
    c.snapshot_every = 10;
    let r = run(&c).unwrap();
    let (ma, mb) = mass(&r.snapshots[0].fields);
    for s in &r.snapshots {
        let (a, b) = mass(&s.fields);
        assert!(
            (a - ma).abs() <= 1e-10 * ma,
            "a drift {} at step {}",
            a - ma,
            s.step
        );
        assert!(
            (b - mb).abs() <= 1e-10 * mb,
            "b drift {} at step {}",
            b - mb,
            s.step
        );
        assert!(s.fields.is_physical());
    }
}

#[test]
fn swapping_species_commutes_with_time_stepping() {
    let c = cfg(20, 0.35, 0.25, [0.006, 0.009, 0.004], 1.0, 3);
    let init = initialize(&c).unwrap();
    let direct = run_from(&c, init.clone()).unwrap();

    let mut cs = c.clone();
    cs.params = c.params.swapped();
    cs.a0 = c.b0;
    cs.b0 = c.a0;
    let mirrored = run_from(&cs, init.swapped()).unwrap();

    let d = direct
        .final_snapshot()
        .fields
        .max_abs_diff(&mirrored.final_snapshot().fields.swapped());
    assert!(d <= 1e-12, "swap mismatch {d}");
}

#[test]
fn periodic_shift_commutes_with_time_stepping() {
    let c = cfg(20, 0.3, 0.3, [0.009, 0.009, 0.009], 1.0, 9);
    let init = initialize(&c).unwrap();
    let shifted_init = FieldPair::new(init.a.shift_x(7), init.b.shift_x(7)).unwrap();
    let a = run_from(&c, init).unwrap();
    let b = run_from(&c, shifted_init).unwrap();
    let fa = &a.final_snapshot().fields;
    let moved = FieldPair::new(fa.a.shift_x(7), fa.b.shift_x(7)).unwrap();
    let d = moved.max_abs_diff(&b.final_snapshot().fields);
    assert!(d <= 1e-10, "shift mismatch {d}");
}

#[test]
fn identical_configs_give_identical_runs() {
    let c = cfg(16, 0.3, 0.3, [0.009, 0.009, 0.009], 1.0, 42);
    let (r1, r2) = (run(&c).unwrap(), run(&c).unwrap());
    assert_eq!(r1.final_snapshot().fields, r2.final_snapshot().fields);
    assert_eq!(r1.gibbs_trace, r2.gibbs_trace);
    assert_eq!(r1.state_id, r2.state_id);
}

#[test]
fn noninteracting_blend_keeps_its_energy() {
    let r = run(&cfg(16, 0.3, 0.3, [0.0, 0.0, 0.0], 2.0, 1)).unwrap();
    assert_eq!(r.state_id, StateId::State2);
}

fn trace(values: impl Iterator<Item = f64>, t_end: f64, n: usize) -> Vec<GibbsPoint> {
    values
        .enumerate()
        .map(|(i, g)| GibbsPoint {
            step: i,
            t: i as f64 * t_end / n as f64,
            gibbs: g,
        })
        .collect()
}

#[test]
fn taxonomy_of_synthetic_traces() {
    let n = 200;
    let decay = |rate: f64| {
        trace(
            (0..=n).map(move |i| 1.0 + 0.2 * (-(i as f64) * rate).exp()),
            50.0,
            n,
        )
    };
    assert_eq!(
        classify_state(&decay(0.1), true, None, 50.0),
        StateId::State1
    );
    let linear = trace((0..=n).map(|i| 2.0 - i as f64 / n as f64), 50.0, n);
    assert_eq!(classify_state(&linear, true, None, 50.0), StateId::State3b);
    let flat = trace((0..=n).map(|i| 1.0 - 1e-6 * i as f64), 50.0, n);
    assert_eq!(classify_state(&flat, true, None, 50.0), StateId::State2);

    let early = trace((0..=20).map(|i| 2.0 - 0.05 * i as f64), 10.0, 100);
    assert_eq!(
        classify_state(&early, false, Some(10.0), 50.0),
        StateId::State3a
    );
    let late = trace((0..=100).map(|i| 2.0 - 0.01 * i as f64), 40.0, 100);
    assert_eq!(
        classify_state(&late, false, Some(40.0), 50.0),
        StateId::State3b
    );
    let flat_late = trace((0..=100).map(|_| 2.0), 40.0, 100);
    assert_eq!(
        classify_state(&flat_late, false, Some(40.0), 50.0),
        StateId::State3a
    );
}
