//! Batch parameter sweeps over initial composition and interaction matrix,
//! with a CSV manifest of every attempted run.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::energetics::BlendParams;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::imaging::{render_rgb, save_png};
use crate::snapshot::{write_gibbs_csv, write_snapshot};
use crate::solver::{run, SimConfig, StateId};

/// Upper bound on a0 + b0 for a run to be attempted.
pub const COMPOSITION_MARGIN: f64 = 0.95;
/// Largest accepted interaction parameter.
pub const CHI_MAX: f64 = 0.02;

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Per-run settings shared by every point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBase {
    pub grid: GridSpec,
    /// Chain lengths and length scales; the interaction parameters are
    /// replaced by each χ case.
    #[serde(default)]
    pub params: BlendParams,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "SweepBase::default_noise_amp")]
    pub noise_amp: f64,
    /// Mixed into every run seed.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "SweepBase::default_snapshot_every")]
    pub snapshot_every: usize,
}

impl SweepBase {
    fn default_noise_amp() -> f64 {
        0.005
    }
    fn default_snapshot_every() -> usize {
        500
    }

    /// Desk-scale base: 64x64 over 40x40, t = 50.
    pub fn desk() -> Self {
        Self::from_config(&SimConfig::desk(0.3, 0.3, BlendParams::default()))
    }

    pub fn from_config(c: &SimConfig) -> Self {
        SweepBase {
            grid: c.grid,
            params: c.params,
            t_end: c.t_end,
            dt: c.dt,
            noise_amp: c.noise_amp,
            base_seed: c.rng_seed,
            snapshot_every: c.snapshot_every,
        }
    }

    pub fn config(&self, a0: f64, b0: f64, chi: [f64; 3], seed: u64) -> SimConfig {
        SimConfig {
            grid: self.grid,
            params: self.params.with_chi(chi[0], chi[1], chi[2]),
            a0,
            b0,
            t_end: self.t_end,
            dt: self.dt,
            noise_amp: self.noise_amp,
            rng_seed: seed,
            snapshot_every: self.snapshot_every,
            ..SimConfig::desk(a0, b0, self.params)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub a0_values: Vec<f64>,
    pub b0_values: Vec<f64>,
    /// (χ_AB, χ_AC, χ_BC) triples.
    pub chi_cases: Vec<[f64; 3]>,
    pub base: SweepBase,
    pub out_dir: PathBuf,
    #[serde(default = "SweepSpec::default_parallelism")]
    pub parallelism: usize,
}

impl SweepSpec {
    fn default_parallelism() -> usize {
        1
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a0_values.is_empty() || self.b0_values.is_empty() || self.chi_cases.is_empty() {
            return Err(Error::InvalidConfig(
                "a0_values, b0_values and chi_cases must be nonempty".into(),
            ));
        }
        for chi in &self.chi_cases {
            if chi.iter().any(|&x| !(0.0..=CHI_MAX).contains(&x)) {
                return Err(Error::InvalidConfig(format!(
                    "chi case {chi:?} outside [0, {CHI_MAX}]"
                )));
            }
        }
        if self.parallelism == 0 {
            return Err(Error::InvalidConfig(
                "parallelism must be at least 1".into(),
            ));
        }
        let probe = self.base.config(0.3, 0.3, self.chi_cases[0], 0);
        probe.grid.validate()?;
        probe.params.validate()
    }

    /// Valid (a0, b0, χ) combinations in sweep order, and the skipped pairs.
    pub fn plan(&self) -> (Vec<RunPlan>, Vec<(f64, f64)>) {
        let mut runs = Vec::new();
        let mut skipped = Vec::new();
        for (ci, &chi) in self.chi_cases.iter().enumerate() {
            for &a0 in &self.a0_values {
                for &b0 in &self.b0_values {
                    if a0 + b0 >= COMPOSITION_MARGIN || a0 <= 0.0 || b0 <= 0.0 {
                        if ci == 0 {
                            skipped.push((a0, b0));
                        }
                        continue;
                    }
                    let run_id = format!("run{:05}", runs.len());
                    let seed = run_seed(self.base.base_seed, a0, b0, chi);
                    runs.push(RunPlan {
                        run_id,
                        a0,
                        b0,
                        chi,
                        seed,
                    });
                }
            }
        }
        (runs, skipped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub run_id: String,
    pub a0: f64,
    pub b0: f64,
    pub chi: [f64; 3],
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derived from the base seed and the run's physical parameters.
pub fn run_seed(base_seed: u64, a0: f64, b0: f64, chi: [f64; 3]) -> u64 {
    [a0, b0, chi[0], chi[1], chi[2]]
        .iter()
        .fold(splitmix64(base_seed), |h, x| splitmix64(h ^ x.to_bits()))
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub a0: f64,
    pub b0: f64,
    pub chi_ab: f64,
    pub chi_ac: f64,
    pub chi_bc: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub n_c: f64,
    pub seed: u64,
    pub state_id: StateId,
    pub gibbs_first: f64,
    pub gibbs_last: f64,
    /// Relative to the manifest directory; empty when the run failed.
    pub snapshot_path: String,
    pub image_path: String,
}

impl RunRecord {
    pub fn chi(&self) -> [f64; 3] {
        [self.chi_ab, self.chi_ac, self.chi_bc]
    }

    pub fn is_dataset_eligible(&self) -> bool {
        self.state_id.is_dataset_eligible() && !self.image_path.is_empty()
    }
}

pub fn write_manifest(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record([
            "run_id",
            "a0",
            "b0",
            "chi_ab",
            "chi_ac",
            "chi_bc",
            "n_a",
            "n_b",
            "n_c",
            "seed",
            "state_id",
            "gibbs_first",
            "gibbs_last",
            "snapshot_path",
            "image_path",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub skipped: Vec<(f64, f64)>,
    pub manifest_path: PathBuf,
}

impl SweepOutcome {
    /// Run counts for State1, State2, State3a, State3b.
    pub fn tally(&self) -> [usize; 4] {
        let mut t = [0; 4];
        for r in &self.records {
            t[r.state_id as usize] += 1;
        }
        t
    }
}

fn execute(base: &SweepBase, plan: &RunPlan, out_dir: &Path) -> RunRecord {
    let cfg = base.config(plan.a0, plan.b0, plan.chi, plan.seed);
    let mut rec = RunRecord {
        run_id: plan.run_id.clone(),
        a0: plan.a0,
        b0: plan.b0,
        chi_ab: plan.chi[0],
        chi_ac: plan.chi[1],
        chi_bc: plan.chi[2],
        n_a: cfg.params.n_a,
        n_b: cfg.params.n_b,
        n_c: cfg.params.n_c,
        seed: plan.seed,
        state_id: StateId::State3a,
        gibbs_first: f64::NAN,
        gibbs_last: f64::NAN,
        snapshot_path: String::new(),
        image_path: String::new(),
    };
    let outcome = run(&cfg).and_then(|res| {
        let snap = format!("snapshots/{}.chsnap", plan.run_id);
        let img = format!("images/{}.png", plan.run_id);
        let fields = &res.final_snapshot().fields;
        write_snapshot(&out_dir.join(&snap), fields)?;
        save_png(&out_dir.join(&img), &render_rgb(fields))?;
        write_gibbs_csv(
            &out_dir.join(format!("gibbs/{}.csv", plan.run_id)),
            &res.gibbs_trace,
        )?;
        Ok((res, snap, img))
    });
    match outcome {
        Ok((res, snap, img)) => {
            rec.state_id = res.state_id;
            rec.gibbs_first = res.gibbs_trace[0].gibbs;
            rec.gibbs_last = res.gibbs_trace[res.gibbs_trace.len() - 1].gibbs;
            rec.snapshot_path = snap;
            rec.image_path = img;
        }
        Err(e) => log::error!("{} failed: {e}", plan.run_id),
    }
    rec
}

/// Run every valid combination and write `manifest.csv` into `out_dir`.
///
/// Workers pull runs from a shared queue; records flow to a single writer and
/// the manifest is written in run-id order, so it does not depend on the
/// worker count.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let out = &spec.out_dir;
    for sub in ["snapshots", "images", "gibbs"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let (plan, skipped) = spec.plan();
    for (a0, b0) in &skipped {
        log::warn!("skipping a0={a0}, b0={b0}: a0 + b0 >= {COMPOSITION_MARGIN}");
    }

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let workers = spec.parallelism.min(plan.len().max(1));
    let mut records = std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, plan) = (&next, &plan);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = plan.get(i) else { break };
                if tx.send(execute(&spec.base, p, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut recs = Vec::with_capacity(plan.len());
        for r in rx {
            log::info!(
                "[{}/{}] {} a0={} b0={} -> {}",
                recs.len() + 1,
                plan.len(),
                r.run_id,
                r.a0,
                r.b0,
                r.state_id
            );
            recs.push(r);
        }
        recs
    });
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let manifest_path = out.join(MANIFEST_NAME);
    write_manifest(&manifest_path, &records)?;
    Ok(SweepOutcome {
        records,
        skipped,
        manifest_path,
    })
}
