//! Simulation driver: seeded initial state, time loop, Gibbs-energy trace and
//! run-state classification.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energetics::{gibbs_raw, gibbs_total, kappa_from_chi, BlendParams, KappaSet};
use crate::error::{Error, Result};
use crate::grid::{FieldPair, GridSpec, ScalarField};
use crate::transport::{SolveControls, Transport};

/// Everything needed to reproduce one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub params: BlendParams,
    pub a0: f64,
    pub b0: f64,
    /// Dimensionless duration.
    pub t_end: f64,
    /// Dimensionless time step.
    pub dt: f64,
    #[serde(default = "defaults::noise_amp")]
    pub noise_amp: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "defaults::snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default = "defaults::newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "defaults::newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "defaults::linear_tol")]
    pub linear_tol: f64,
    #[serde(default = "defaults::linear_max_iter")]
    pub linear_max_iter: usize,
}

mod defaults {
    pub fn noise_amp() -> f64 {
        0.005
    }
    pub fn snapshot_every() -> usize {
        500
    }
    pub fn newton_tol() -> f64 {
        1e-10
    }
    pub fn newton_max_iter() -> usize {
        30
    }
    pub fn linear_tol() -> f64 {
        1e-10
    }
    pub fn linear_max_iter() -> usize {
        400
    }
}

impl SimConfig {
    /// Desk-scale defaults: 64x64 cells over 40x40 units, run to t = 50.
    pub fn desk(a0: f64, b0: f64, params: BlendParams) -> Self {
        SimConfig {
            grid: GridSpec {
                nx: 64,
                ny: 64,
                lx: 40.0,
                ly: 40.0,
            },
            params,
            a0,
            b0,
            t_end: 50.0,
            dt: 0.02,
            noise_amp: defaults::noise_amp(),
            rng_seed: 0,
            snapshot_every: defaults::snapshot_every(),
            newton_tol: defaults::newton_tol(),
            newton_max_iter: defaults::newton_max_iter(),
            linear_tol: defaults::linear_tol(),
            linear_max_iter: defaults::linear_max_iter(),
        }
    }

    /// Full-size setup: 80x80 cells over 40x40 units, run to t = 400.
    pub fn paper_scale(a0: f64, b0: f64, params: BlendParams) -> Self {
        SimConfig {
            grid: GridSpec {
                nx: 80,
                ny: 80,
                lx: 40.0,
                ly: 40.0,
            },
            t_end: 400.0,
            ..Self::desk(a0, b0, params)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.params.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.a0 > 0.0 && self.b0 > 0.0 && self.a0 + self.b0 < 1.0) {
            return bad(format!(
                "initial composition (a0={}, b0={}) must satisfy a0, b0 > 0 and a0 + b0 < 1",
                self.a0, self.b0
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return bad(format!(
                "t_end ({}) must be >= dt ({})",
                self.t_end, self.dt
            ));
        }
        if !(self.noise_amp.is_finite() && self.noise_amp >= 0.0) {
            return bad(format!("noise_amp must be >= 0, got {}", self.noise_amp));
        }
        let amp = self.noise_amp;
        let c0 = 1.0 - self.a0 - self.b0;
        if self.a0 - amp <= 0.0
            || self.a0 + amp >= 1.0
            || self.b0 - amp <= 0.0
            || self.b0 + amp >= 1.0
            || c0 - 2.0 * amp <= 0.0
        {
            return bad(format!(
                "noise_amp {amp} can push (a0={}, b0={}) out of the simplex",
                self.a0, self.b0
            ));
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be >= 1".into());
        }
        if !(self.newton_tol > 0.0 && self.linear_tol > 0.0) {
            return bad("solver tolerances must be positive".into());
        }
        if self.newton_max_iter == 0 || self.linear_max_iter == 0 {
            return bad("solver iteration limits must be >= 1".into());
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }

    pub fn kappa(&self) -> KappaSet {
        kappa_from_chi(&self.params)
    }

    fn controls(&self) -> SolveControls {
        SolveControls {
            dt: self.dt,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            linear_tol: self.linear_tol,
            linear_max_iter: self.linear_max_iter,
        }
    }
}

/// Run taxonomy, from a converged pattern to an unusable early blow-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateId {
    /// Completed; Gibbs energy decreased and tapered off.
    State1,
    /// Completed; Gibbs energy essentially constant.
    State2,
    /// Diverged without a usable pattern.
    State3a,
    /// Diverged (or still evolving) after the energy dropped; pattern usable.
    State3b,
}

impl StateId {
    pub fn as_str(&self) -> &'static str {
        match self {
            StateId::State1 => "State1",
            StateId::State2 => "State2",
            StateId::State3a => "State3a",
            StateId::State3b => "State3b",
        }
    }

    /// Only runs that produced a usable pattern feed the learning pipeline.
    pub fn is_dataset_eligible(&self) -> bool {
        matches!(self, StateId::State1 | StateId::State3b)
    }
}

impl std::fmt::Display for StateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "State1" => Ok(StateId::State1),
            "State2" => Ok(StateId::State2),
            "State3a" => Ok(StateId::State3a),
            "State3b" => Ok(StateId::State3b),
            other => Err(Error::Data(format!("unknown state id {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub fields: FieldPair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsPoint {
    pub step: usize,
    pub t: f64,
    pub gibbs: f64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub snapshots: Vec<Snapshot>,
    pub gibbs_trace: Vec<GibbsPoint>,
    pub state_id: StateId,
    pub diverged_at: Option<f64>,
    pub divergence_reason: Option<String>,
    pub wall_time: f64,
    /// Total outer (nonlinear) iterations over the run.
    pub nonlinear_iterations: usize,
    /// Total inner (linear) iterations over the run.
    pub linear_iterations: usize,
}

impl SimResult {
    /// Last stored snapshot; always the final usable state.
    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("run stores at least one snapshot")
    }

    pub fn completed(&self) -> bool {
        self.diverged_at.is_none()
    }
}

fn noise(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    if amp == 0.0 {
        return vec![0.0; n];
    }
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-amp..=amp)).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    v
}

/// Seeded initial state: uniform composition plus mean-free uniform noise.
pub fn initialize(cfg: &SimConfig) -> Result<FieldPair> {
    cfg.validate()?;
    let g = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let na = noise(&mut rng, g.len(), cfg.noise_amp);
    let nb = noise(&mut rng, g.len(), cfg.noise_amp);
    let a: Vec<f64> = na.iter().map(|e| cfg.a0 + e).collect();
    let b: Vec<f64> = nb.iter().map(|e| cfg.b0 + e).collect();
    let f = FieldPair::new(
        ScalarField::from_values(g, a)?,
        ScalarField::from_values(g, b)?,
    )?;
    let ok =
        f.a.values()
            .iter()
            .zip(f.b.values())
            .all(|(&a, &b)| a > 0.0 && b > 0.0 && 1.0 - a - b > 0.0);
    if !ok {
        return Err(Error::InvalidConfig(
            "initial noise produced a nonpositive mole fraction".into(),
        ));
    }
    Ok(f)
}

/// Single-step driver holding the solver workspace for one configuration.
pub struct Stepper {
    cfg: SimConfig,
    kappa: KappaSet,
    transport: Transport,
    /// State one step back, for the initial guess of the next step.
    prev: Option<Vec<f64>>,
}

impl Stepper {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let kappa = cfg.kappa();
        Ok(Stepper {
            cfg: cfg.clone(),
            kappa,
            transport: Transport::new(cfg.grid, cfg.params, kappa),
            prev: None,
        })
    }

    pub fn kappa(&self) -> &KappaSet {
        &self.kappa
    }

    /// One implicit step from `f`. The error carries the time `t` at which
    /// the step was attempted.
    pub fn step(&mut self, f: &FieldPair, t: f64) -> Result<FieldPair> {
        self.step_counted(f, t).map(|(f, _)| f)
    }

    fn step_counted(&mut self, f: &FieldPair, t: f64) -> Result<(FieldPair, usize)> {
        let g = *f.grid();
        if g != self.cfg.grid {
            return Err(Error::Shape(
                "fields do not match the configured grid".into(),
            ));
        }
        let n = g.len();
        let mut u = Vec::with_capacity(2 * n);
        u.extend_from_slice(f.a.values());
        u.extend_from_slice(f.b.values());
        let current = u.clone();
        let prev = self.prev.take().filter(|p| p.len() == u.len());
        let iters = self
            .transport
            .step(&mut u, prev.as_deref(), &self.cfg.controls())
            .map_err(|e| Error::Divergence {
                t,
                reason: e.to_string(),
            })?;
        self.prev = Some(current);
        let b = u.split_off(n);
        Ok((
            FieldPair {
                a: ScalarField::from_raw(g, u),
                b: ScalarField::from_raw(g, b),
            },
            iters,
        ))
    }
}

/// One backward-Euler step of the transport system.
pub fn step(f: &FieldPair, cfg: &SimConfig, k: &KappaSet) -> Result<FieldPair> {
    cfg.validate()?;
    let mut tr = Transport::new(cfg.grid, cfg.params, *k);
    let g = *f.grid();
    let n = g.len();
    let mut u = Vec::with_capacity(2 * n);
    u.extend_from_slice(f.a.values());
    u.extend_from_slice(f.b.values());
    tr.step(&mut u, None, &cfg.controls())
        .map_err(|e| Error::Divergence {
            t: 0.0,
            reason: e.to_string(),
        })?;
    let b = u.split_off(n);
    Ok(FieldPair {
        a: ScalarField::from_raw(g, u),
        b: ScalarField::from_raw(g, b),
    })
}

/// Integrate from the seeded initial state to `t_end` or divergence.
pub fn run(cfg: &SimConfig) -> Result<SimResult> {
    run_from(cfg, initialize(cfg)?)
}

/// Integrate from an explicit initial state.
pub fn run_from(cfg: &SimConfig, init: FieldPair) -> Result<SimResult> {
    let start = Instant::now();
    let mut stepper = Stepper::new(cfg)?;
    let k = stepper.kappa;
    let g = cfg.grid;
    let n_steps = cfg.n_steps();

    let mut f = init;
    let mut trace = vec![GibbsPoint {
        step: 0,
        t: 0.0,
        gibbs: gibbs_total(&f, &k, &cfg.params),
    }];
    let mut snapshots = vec![Snapshot {
        step: 0,
        t: 0.0,
        fields: f.clone(),
    }];
    let mut diverged_at = None;
    let mut reason = None;
    let mut last_step = 0;
    let mut total_iters = 0;

    for s in 1..=n_steps {
        let t = s as f64 * cfg.dt;
        match stepper.step_counted(&f, t) {
            Ok((next, iters)) => {
                total_iters += iters;
                let gibbs = gibbs_raw(&g, next.a.values(), next.b.values(), &k, &cfg.params);
                if !gibbs.is_finite() {
                    diverged_at = Some(t);
                    reason = Some("non-finite Gibbs energy".to_string());
                    break;
                }
                f = next;
                last_step = s;
                trace.push(GibbsPoint { step: s, t, gibbs });
                if s % cfg.snapshot_every == 0 {
                    snapshots.push(Snapshot {
                        step: s,
                        t,
                        fields: f.clone(),
                    });
                }
            }
            Err(Error::Divergence { t, reason: r }) => {
                log::debug!("run diverged at t = {t}: {r}");
                diverged_at = Some(t);
                reason = Some(r);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if snapshots.last().map(|s| s.step) != Some(last_step) {
        snapshots.push(Snapshot {
            step: last_step,
            t: last_step as f64 * cfg.dt,
            fields: f,
        });
    }
    let state_id = classify_state(&trace, diverged_at.is_none(), diverged_at, cfg.t_end);
    Ok(SimResult {
        snapshots,
        gibbs_trace: trace,
        state_id,
        diverged_at,
        divergence_reason: reason,
        wall_time: start.elapsed().as_secs_f64(),
        nonlinear_iterations: total_iters,
        linear_iterations: stepper.transport.linear_iterations,
    })
}

/// Relative energy drop below which a completed run counts as unchanged.
pub const DROP_THRESHOLD: f64 = 0.01;
/// Largest normalised tail slope of a run that has tapered off.
pub const TAIL_SLOPE_THRESHOLD: f64 = 0.1;
/// Divergence later than this fraction of `t_end` may still leave a usable
/// pattern.
pub const USABLE_TIME_FRACTION: f64 = 0.25;

/// Least-squares slope of the last 10% of the trace (at least two points).
fn tail_slope(trace: &[GibbsPoint]) -> f64 {
    let m = ((trace.len() as f64 * 0.1).ceil() as usize).clamp(2, trace.len().max(2));
    if trace.len() < 2 {
        return 0.0;
    }
    let tail = &trace[trace.len() - m..];
    let n = tail.len() as f64;
    let mt = tail.iter().map(|p| p.t).sum::<f64>() / n;
    let mg = tail.iter().map(|p| p.gibbs).sum::<f64>() / n;
    let sxy: f64 = tail.iter().map(|p| (p.t - mt) * (p.gibbs - mg)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.t - mt) * (p.t - mt)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Assign the run taxonomy from the Gibbs trace.
///
/// `drop = (G_first - G_last) / |G_first|`; the tail slope is normalised by
/// `|G_first| / t_end`.
pub fn classify_state(
    trace: &[GibbsPoint],
    completed: bool,
    diverged_at: Option<f64>,
    t_end: f64,
) -> StateId {
    assert!(!trace.is_empty(), "classify_state needs a nonempty trace");
    let g_first = trace[0].gibbs;
    let g_last = trace[trace.len() - 1].gibbs;
    let scale = g_first.abs().max(f64::MIN_POSITIVE);
    let drop = (g_first - g_last) / scale;
    let slope = tail_slope(trace) / (scale / t_end);
    let dropped = drop >= DROP_THRESHOLD;
    if completed {
        if !dropped {
            StateId::State2
        } else if slope.abs() <= TAIL_SLOPE_THRESHOLD {
            StateId::State1
        } else {
            // still evolving at the end: usable, but not tapered
            StateId::State3b
        }
    } else {
        let late = diverged_at.is_some_and(|t| t >= USABLE_TIME_FRACTION * t_end);
        if dropped && late {
            StateId::State3b
        } else {
            StateId::State3a
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(chi: f64) -> SimConfig {
        SimConfig {
            grid: GridSpec::square(16, 10.0).unwrap(),
            t_end: 0.2,
            ..SimConfig::desk(
                1.0 / 3.0,
                1.0 / 3.0,
                BlendParams::default().with_chi(chi, chi, chi),
            )
        }
    }

    fn trace_from(values: &[f64], t_end: f64) -> Vec<GibbsPoint> {
        let dt = t_end / (values.len() - 1) as f64;
        values
            .iter()
            .enumerate()
            .map(|(i, &g)| GibbsPoint {
                step: i,
                t: i as f64 * dt,
                gibbs: g,
            })
            .collect()
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = small_cfg(0.006);
        let mut c = base.clone();
        c.a0 = 0.6;
        c.b0 = 0.4;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.dt = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.t_end = 0.01;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.a0 = 0.004;
        assert!(c.validate().is_err());
        assert!(base.validate().is_ok());
    }

    #[test]
    fn zero_noise_is_uniform() {
        let mut c = small_cfg(0.006);
        c.noise_amp = 0.0;
        let f = initialize(&c).unwrap();
        assert!(f.a.values().iter().all(|&v| v == c.a0));
        assert!(f.b.values().iter().all(|&v| v == c.b0));
    }

    #[test]
    fn noise_is_mean_free_and_seeded() {
        for seed in [0, 1, 77, 123456789] {
            let mut c = small_cfg(0.006);
            c.rng_seed = seed;
            let f = initialize(&c).unwrap();
            assert!((f.a.mean() - c.a0).abs() < 1e-14);
            assert!((f.b.mean() - c.b0).abs() < 1e-14);
            assert_eq!(f, initialize(&c).unwrap());
        }
        let mut c = small_cfg(0.006);
        c.rng_seed = 1;
        let f1 = initialize(&c).unwrap();
        c.rng_seed = 2;
        assert_ne!(f1, initialize(&c).unwrap());
    }

    #[test]
    fn uniform_state_is_stationary_without_interaction() {
        let mut c = small_cfg(0.0);
        c.noise_amp = 0.0;
        let f = initialize(&c).unwrap();
        let next = step(&f, &c, &c.kappa()).unwrap();
        assert!(next.max_abs_diff(&f) <= c.newton_tol);
    }

    #[test]
    fn classify_tapering_trace_is_state1() {
        let vals: Vec<f64> = (0..=100)
            .map(|i| 1.0 + (-(i as f64) / 10.0).exp())
            .collect();
        let tr = trace_from(&vals, 50.0);
        assert_eq!(classify_state(&tr, true, None, 50.0), StateId::State1);
    }

    #[test]
    fn classify_constant_trace_is_state2() {
        let tr = trace_from(&[3.0; 50], 50.0);
        assert_eq!(classify_state(&tr, true, None, 50.0), StateId::State2);
    }

    #[test]
    fn classify_late_divergence_after_drop_is_state3b() {
        // 5% drop, then blow-up at 0.6 t_end
        let vals: Vec<f64> = (0..=60).map(|i| 2.0 - 0.1 * (i as f64 / 60.0)).collect();
        let tr = trace_from(&vals, 30.0);
        assert_eq!(
            classify_state(&tr, false, Some(30.0), 50.0),
            StateId::State3b
        );
    }

    #[test]
    fn classify_early_or_flat_divergence_is_state3a() {
        let vals: Vec<f64> = (0..=10).map(|i| 2.0 - 0.1 * (i as f64 / 10.0)).collect();
        let tr = trace_from(&vals, 5.0);
        assert_eq!(
            classify_state(&tr, false, Some(5.0), 50.0),
            StateId::State3a
        );
        let tr = trace_from(&[2.0; 40], 40.0);
        assert_eq!(
            classify_state(&tr, false, Some(40.0), 50.0),
            StateId::State3a
        );
    }

    #[test]
    fn classify_completed_but_still_falling_is_usable() {
        let vals: Vec<f64> = (0..=100).map(|i| 2.0 - 0.5 * (i as f64 / 100.0)).collect();
        let tr = trace_from(&vals, 50.0);
        assert_eq!(classify_state(&tr, true, None, 50.0), StateId::State3b);
    }

    #[test]
    fn state_id_round_trips_through_strings() {
        for s in [
            StateId::State1,
            StateId::State2,
            StateId::State3a,
            StateId::State3b,
        ] {
            assert_eq!(s.as_str().parse::<StateId>().unwrap(), s);
        }
        assert!("State4".parse::<StateId>().is_err());
    }
}
