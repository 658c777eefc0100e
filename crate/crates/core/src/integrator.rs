//! Adaptive Dormand-Prince 4(5) integration and the simulation loop.
//!
//! The stepper is the classical seven-stage embedded pair with the
//! first-same-as-last property and a fourth-order continuous extension.
//! The simulation loop advances the whole crowd as one coupled system and,
//! after every accepted step, samples observers at a fixed cadence, records
//! flow-line crossings, wraps periodic positions, removes walkers that
//! reached their target and tracks the closest approach of any two walkers.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{positions, rhs, Crowd, NeighborLists, NeighborRebuild, World, STRIDE};
use crate::error::{Error, Result};
use crate::geometry::{Segment, Vec2};
use crate::measurement::{close_pairs, min_pairwise_distance, MeasurementConfig};
use crate::scenario::{spawn_all, Agent, Config};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// First trial step (s).
    pub h_init: f64,
    /// Smallest admissible step (s); going below it is a failure.
    pub h_min: f64,
    /// Largest step (s).
    pub h_max: f64,
    /// Safety factor of the step-size controller.
    pub safety: f64,
    /// Constant step without error control when set (s).
    pub fixed_step: Option<f64>,
    pub neighbor_rebuild: NeighborRebuild,
    /// Extra reach of the neighbor lists beyond `R_p` (m).
    pub neighbor_skin: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            tol_abs: 1e-5,
            tol_rel: 1e-4,
            h_init: 0.01,
            h_min: 1e-8,
            h_max: 0.1,
            safety: 0.9,
            fixed_step: None,
            neighbor_rebuild: NeighborRebuild::PerStep,
            neighbor_skin: 0.3,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_abs > 0.0 && self.tol_abs.is_finite()) {
            return Err(Error::config("integrator.tol_abs", "must be positive"));
        }
        if !(self.tol_rel > 0.0 && self.tol_rel.is_finite()) {
            return Err(Error::config("integrator.tol_rel", "must be positive"));
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_init && self.h_init <= self.h_max && self.h_max.is_finite()) {
            return Err(Error::config("integrator.h_init", "need 0 < h_min <= h_init <= h_max"));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::config("integrator.safety", "must lie in (0, 1]"));
        }
        if let Some(h) = self.fixed_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("integrator.fixed_step", "must be positive"));
            }
        }
        if !(self.neighbor_skin > 0.0 && self.neighbor_skin.is_finite()) {
            return Err(Error::config("integrator.neighbor_skin", "must be positive"));
        }
        Ok(())
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// An ODE right-hand side `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F: FnMut(f64, &[f64], &mut [f64])> OdeSystem for F {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self(t, y, dy);
        Ok(())
    }
}

/// Result of one step attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Scaled max-norm error estimate; at most 1 for accepted steps.
    pub error: f64,
    /// Step size of the attempt.
    pub h: f64,
    /// Proposed size of the next attempt.
    pub h_next: f64,
    /// Component with the largest scaled error.
    pub worst: usize,
}

/// Dormand-Prince 4(5) stepper with reusable stage storage.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub config: IntegratorConfig,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    /// Proposed state after the last attempt.
    pub y_new: Vec<f64>,
    dense: [Vec<f64>; 5],
    fsal: bool,
    /// Size of the next attempt.
    pub h: f64,
    pub rhs_evals: usize,
    pub accepted: usize,
    pub rejected: usize,
}

impl Dopri5 {
    pub fn new(config: IntegratorConfig) -> Self {
        Self {
            h: config.fixed_step.unwrap_or(config.h_init),
            config,
            k: Default::default(),
            stage: Vec::new(),
            y_new: Vec::new(),
            dense: Default::default(),
            fsal: false,
            rhs_evals: 0,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Forget the stored first stage, e.g. after the state was edited.
    pub fn invalidate(&mut self) {
        self.fsal = false;
    }

    /// Derivative at the start of the next step, valid after [`Dopri5::ensure_first_stage`].
    pub fn first_stage(&self) -> &[f64] {
        &self.k[0]
    }

    fn resize(&mut self, n: usize) {
        if self.stage.len() != n {
            for k in &mut self.k {
                k.resize(n, 0.0);
            }
            for d in &mut self.dense {
                d.resize(n, 0.0);
            }
            self.stage.resize(n, 0.0);
            self.y_new.resize(n, 0.0);
            self.fsal = false;
        }
    }

    /// Evaluate `f(t, y)` into the first stage unless it is already known.
    pub fn ensure_first_stage(&mut self, sys: &mut impl OdeSystem, t: f64, y: &[f64]) -> Result<()> {
        self.resize(y.len());
        if !self.fsal {
            sys.eval(t, y, &mut self.k[0])?;
            self.rhs_evals += 1;
            self.fsal = true;
        }
        Ok(())
    }

    /// Attempt one step of size `min(self.h, h_cap)` from `(t, y)`.
    ///
    /// On acceptance `y_new` holds the new state, the dense output covers
    /// the step and the first stage of the next step is already known. On
    /// rejection `self.h` is reduced for the retry.
    pub fn step(&mut self, sys: &mut impl OdeSystem, t: f64, y: &[f64], h_cap: f64) -> Result<StepOutcome> {
        self.ensure_first_stage(sys, t, y)?;
        let h = self.h.min(h_cap);
        let n = y.len();
        {
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let s = &mut self.stage;
            for i in 0..n {
                s[i] = y[i] + h * A21 * k1[i];
            }
            sys.eval(t + C2 * h, s, k2)?;
            for i in 0..n {
                s[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            sys.eval(t + C3 * h, s, k3)?;
            for i in 0..n {
                s[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            sys.eval(t + C4 * h, s, k4)?;
            for i in 0..n {
                s[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            sys.eval(t + C5 * h, s, k5)?;
            for i in 0..n {
                s[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            sys.eval(t + h, s, k6)?;
            let yn = &mut self.y_new;
            for i in 0..n {
                yn[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            sys.eval(t + h, yn, k7)?;
        }
        self.rhs_evals += 6;

        let fixed = self.config.fixed_step.is_some();
        let (mut error, mut worst) = (0.0f64, 0usize);
        if !fixed {
            let [k1, _, k3, k4, k5, k6, k7] = &self.k;
            for i in 0..n {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let scale = self.config.tol_abs + self.config.tol_rel * y[i].abs().max(self.y_new[i].abs());
                let r = e.abs() / scale;
                if r > error || r.is_nan() {
                    error = r;
                    worst = i;
                }
            }
        }

        let accepted = fixed || error <= 1.0;
        let h_next = if fixed {
            self.config.fixed_step.unwrap()
        } else {
            let factor = if error == 0.0 {
                5.0
            } else {
                (self.config.safety * error.powf(-0.2)).clamp(0.2, 5.0)
            };
            let factor = if accepted { factor } else { factor.min(1.0) };
            (h * factor).min(self.config.h_max)
        };
        if !accepted && !(h_next >= self.config.h_min) {
            return Err(Error::StepCollapse {
                t,
                component: worst,
                ratio: error,
            });
        }

        if accepted {
            let [k1, _, k3, k4, k5, k6, k7] = &self.k;
            let [r1, r2, r3, r4, r5] = &mut self.dense;
            for i in 0..n {
                let dy = self.y_new[i] - y[i];
                let bspl = h * k1[i] - dy;
                r1[i] = y[i];
                r2[i] = dy;
                r3[i] = bspl;
                r4[i] = dy - h * k7[i] - bspl;
                r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            self.k.swap(0, 6);
            self.accepted += 1;
            // a step shortened by the caller's cap should not shrink the next one
            if h < self.h && !fixed {
                self.h = self.h.max(h_next);
            } else {
                self.h = h_next;
            }
        } else {
            self.rejected += 1;
            self.h = h_next;
        }
        Ok(StepOutcome {
            accepted,
            error,
            h,
            h_next,
            worst,
        })
    }

    /// Component `i` of the continuous extension at fraction `theta` of the
    /// last accepted step.
    #[inline]
    pub fn dense_value(&self, i: usize, theta: f64) -> f64 {
        let [r1, r2, r3, r4, r5] = &self.dense;
        let t1 = 1.0 - theta;
        r1[i] + theta * (r2[i] + t1 * (r3[i] + theta * (r4[i] + t1 * r5[i])))
    }

    /// Time derivative of the continuous extension; `h` is the step size.
    #[inline]
    pub fn dense_derivative(&self, i: usize, theta: f64, h: f64) -> f64 {
        let [_, r2, r3, r4, r5] = &self.dense;
        let t1 = 1.0 - theta;
        let a = r3[i] + theta * (r4[i] + t1 * r5[i]);
        let da = r4[i] + (1.0 - 2.0 * theta) * r5[i];
        (r2[i] + (1.0 - 2.0 * theta) * a + theta * t1 * da) / h
    }
}

/// One step attempt from `(t, y)` with step `h`.
pub fn step(sys: &mut impl OdeSystem, y: &[f64], t: f64, h: f64, config: &IntegratorConfig) -> Result<(Vec<f64>, StepOutcome)> {
    let mut s = Dopri5::new(*config);
    s.h = h;
    let outcome = s.step(sys, t, y, f64::INFINITY)?;
    Ok((s.y_new.clone(), outcome))
}

/// Integrate from `t0` to `t1` and return the final state with the stepper.
pub fn integrate(
    sys: &mut impl OdeSystem,
    t0: f64,
    y0: &[f64],
    t1: f64,
    config: &IntegratorConfig,
) -> Result<(Vec<f64>, Dopri5)> {
    let mut s = Dopri5::new(*config);
    let mut y = y0.to_vec();
    let mut t = t0;
    while t1 - t > 1e-12 * t1.abs().max(1.0) {
        let o = s.step(sys, t, &y, t1 - t)?;
        if o.accepted {
            t += o.h;
            y.copy_from_slice(&s.y_new);
        }
    }
    Ok((y, s))
}

/// State of the crowd handed to observers at each output time.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub t: f64,
    pub ids: &'a [usize],
    pub targets: &'a [u32],
    pub pos: &'a [Vec2],
    pub w: &'a [f64],
    /// `|dx/dt|` (m/s).
    pub speed: &'a [f64],
    pub v_des: &'a [f64],
}

/// Receives snapshots at the output cadence.
pub trait Sink {
    fn sample(&mut self, world: &World, snap: &Snapshot<'_>) -> Result<()>;

    fn finish(&mut self, _result: &SimulationResult) -> Result<()> {
        Ok(())
    }
}

/// Writes `t,id,x,y,w,vdes` rows.
pub struct TrajectoryWriter<W: Write> {
    out: W,
    header: bool,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, header: false }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> Sink for TrajectoryWriter<W> {
    fn sample(&mut self, _world: &World, snap: &Snapshot<'_>) -> Result<()> {
        if !self.header {
            writeln!(self.out, "t,id,x,y,w,vdes")?;
            self.header = true;
        }
        for k in 0..snap.ids.len() {
            writeln!(
                self.out,
                "{:.3},{},{},{},{},{}",
                snap.t, snap.ids[k], snap.pos[k].x, snap.pos[k].y, snap.w[k], snap.v_des[k]
            )?;
        }
        Ok(())
    }

    fn finish(&mut self, _result: &SimulationResult) -> Result<()> {
        if !self.header {
            writeln!(self.out, "t,id,x,y,w,vdes")?;
            self.header = true;
        }
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub t: f64,
    pub id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionEvent {
    pub t: f64,
    pub id_a: usize,
    pub id_b: usize,
    pub dist: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SimulationResult {
    /// Time the loop stopped at (s).
    pub t_end: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    pub neighbor_rebuilds: usize,
    /// First passage of each walker over the flow line, in time order.
    pub crossings: Vec<Crossing>,
    /// Walkers removed at their target: (time, id).
    pub absorbed: Vec<(f64, usize)>,
    /// Smallest center distance seen at any step end (m); infinite with
    /// fewer than two walkers.
    pub min_distance: f64,
    /// Pairs entering the collision threshold.
    pub collisions: Vec<CollisionEvent>,
    #[serde(skip)]
    pub final_agents: Vec<Agent>,
    /// Wall-clock time of the loop (s).
    pub wall_clock: f64,
}

/// Spawn the configured crowd, build the world and run.
pub fn run_simulation(config: &Config, sinks: &mut [&mut dyn Sink]) -> Result<SimulationResult> {
    config.validate()?;
    let world = World::new(&config.scenario, &config.model)?;
    let agents = spawn_all(config)?;
    run_with_world(
        &world,
        agents,
        &config.integrator,
        &config.measurement,
        config.duration,
        sinks,
    )
}

struct CrowdSystem<'a> {
    world: &'a World,
    crowd: &'a Crowd,
    lists: &'a mut NeighborLists,
}

impl OdeSystem for CrowdSystem<'_> {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        rhs(self.world, self.crowd, t, y, dy, self.lists)
    }
}

/// Run a prepared crowd through `duration` seconds.
pub fn run_with_world(
    world: &World,
    agents: Vec<Agent>,
    integ: &IntegratorConfig,
    measure: &MeasurementConfig,
    duration: f64,
    sinks: &mut [&mut dyn Sink],
) -> Result<SimulationResult> {
    let clock = Instant::now();
    let (mut crowd, mut state) = Crowd::from_agents(world, &agents)?;
    let mut stepper = Dopri5::new(*integ);
    let mut lists = NeighborLists::new(integ.neighbor_rebuild, integ.neighbor_skin);
    let flow_line = measure
        .flow_line
        .map(|[a, b]| Segment::new(Vec2::new(a[0], a[1]), Vec2::new(b[0], b[1])));
    let v_cap = crowd.v_des.iter().copied().fold(0.0, f64::max);
    let w_margin = 1e-3 + 100.0 * (integ.tol_abs + integ.tol_rel * v_cap);
    let threshold = world.params.collision_threshold;

    let mut result = SimulationResult {
        min_distance: f64::INFINITY,
        ..Default::default()
    };
    let mut crossed: HashSet<usize> = HashSet::new();
    let mut in_contact: HashSet<(usize, usize)> = HashSet::new();
    let mut t = 0.0;
    let mut next_sample = 0usize;
    let dt_out = measure.output_interval;

    track_distances(world, &crowd, &state, t, threshold, &mut result, &mut in_contact);

    loop {
        let pos = positions(world, &state);
        lists.begin_step(world, &pos);
        let mut sys = CrowdSystem {
            world,
            crowd: &crowd,
            lists: &mut lists,
        };
        stepper.ensure_first_stage(&mut sys, t, &state)?;
        if next_sample == 0 {
            emit_initial(world, &crowd, &state, stepper.first_stage(), sinks)?;
            next_sample = 1;
        }
        if crowd.is_empty() || duration - t <= 1e-9 {
            break;
        }
        let outcome = stepper.step(&mut sys, t, &state, duration - t)?;
        if !outcome.accepted {
            continue;
        }
        let h = outcome.h;
        let t_new = if duration - (t + h) <= 1e-9 { duration } else { t + h };

        while (next_sample as f64) * dt_out <= t_new + 1e-9 {
            let ts = next_sample as f64 * dt_out;
            let theta = ((ts - t) / h).clamp(0.0, 1.0);
            emit_dense(world, &crowd, &stepper, theta, h, ts, sinks)?;
            next_sample += 1;
        }

        if let Some(line) = &flow_line {
            for i in 0..crowd.len() {
                if crossed.contains(&crowd.ids[i]) {
                    continue;
                }
                let a = Vec2::new(state[i * STRIDE], state[i * STRIDE + 1]);
                let b = Vec2::new(stepper.y_new[i * STRIDE], stepper.y_new[i * STRIDE + 1]);
                if let Some(frac) = crossing_fraction(line, a, b) {
                    crossed.insert(crowd.ids[i]);
                    result.crossings.push(Crossing {
                        t: t + frac * h,
                        id: crowd.ids[i],
                    });
                }
            }
        }

        t = t_new;
        state.copy_from_slice(&stepper.y_new);

        for (i, c) in state.chunks(STRIDE).enumerate() {
            let w = c[2];
            if !(w >= -w_margin && w <= v_cap + w_margin) {
                return Err(Error::Invariant {
                    t,
                    what: format!("relaxed speed {w} of agent {} left [0, {v_cap}]", crowd.ids[i]),
                });
            }
        }

        if world.period().is_some() {
            for c in state.chunks_mut(STRIDE) {
                let p = world.wrap(Vec2::new(c[0], c[1]));
                c[0] = p.x;
            }
        } else {
            let keep: Vec<bool> = (0..crowd.len())
                .map(|i| {
                    let p = Vec2::new(state[i * STRIDE], state[i * STRIDE + 1]);
                    let target = world.scenario.target(crowd.target[i]).ok();
                    !target.and_then(|tg| tg.polygon.as_ref()).is_some_and(|poly| poly.contains(p))
                })
                .collect();
            if keep.iter().any(|k| !k) {
                for (i, k) in keep.iter().enumerate() {
                    if !k {
                        result.absorbed.push((t, crowd.ids[i]));
                    }
                }
                let mut kept = 0;
                for (i, &k) in keep.iter().enumerate() {
                    if k {
                        state.copy_within(i * STRIDE..(i + 1) * STRIDE, kept * STRIDE);
                        kept += 1;
                    }
                }
                state.truncate(kept * STRIDE);
                crowd.retain(&keep);
                stepper.invalidate();
            }
        }

        track_distances(world, &crowd, &state, t, threshold, &mut result, &mut in_contact);
    }

    result.t_end = t;
    result.accepted_steps = stepper.accepted;
    result.rejected_steps = stepper.rejected;
    result.rhs_evals = stepper.rhs_evals;
    result.neighbor_rebuilds = lists.rebuilds;
    result.crossings.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.id.cmp(&b.id)));
    let mut final_agents: Vec<Agent> = agents
        .iter()
        .map(|a| Agent {
            alive: false,
            ..a.clone()
        })
        .collect();
    for (i, id) in crowd.ids.iter().enumerate() {
        if let Some(a) = final_agents.iter_mut().find(|a| a.id == *id) {
            a.pos = Vec2::new(state[i * STRIDE], state[i * STRIDE + 1]);
            a.w = state[i * STRIDE + 2];
            a.alive = true;
        }
    }
    result.final_agents = final_agents;
    result.wall_clock = clock.elapsed().as_secs_f64();
    for s in sinks.iter_mut() {
        s.finish(&result)?;
    }
    Ok(result)
}

/// Fraction along `a -> b` where the path crosses `line` from its left
/// (negative) side to its right side.
fn crossing_fraction(line: &Segment, a: Vec2, b: Vec2) -> Option<f64> {
    let d = line.b - line.a;
    let normal = Vec2::new(d.y, -d.x);
    let sa = (a - line.a).dot(&normal);
    let sb = (b - line.a).dot(&normal);
    if !(sa < 0.0 && sb >= 0.0) {
        return None;
    }
    let frac = sa / (sa - sb);
    let p = a + (b - a) * frac;
    let along = (p - line.a).dot(&d) / d.norm_squared();
    (0.0..=1.0).contains(&along).then_some(frac)
}

fn emit_initial(world: &World, crowd: &Crowd, state: &[f64], k1: &[f64], sinks: &mut [&mut dyn Sink]) -> Result<()> {
    if sinks.is_empty() {
        return Ok(());
    }
    let pos = positions(world, state);
    let w: Vec<f64> = state.chunks(STRIDE).map(|c| c[2]).collect();
    let speed: Vec<f64> = k1.chunks(STRIDE).map(|c| c[0].hypot(c[1])).collect();
    let snap = Snapshot {
        t: 0.0,
        ids: &crowd.ids,
        targets: &crowd.target,
        pos: &pos,
        w: &w,
        speed: &speed,
        v_des: &crowd.v_des,
    };
    for s in sinks.iter_mut() {
        s.sample(world, &snap)?;
    }
    Ok(())
}

fn emit_dense(
    world: &World,
    crowd: &Crowd,
    stepper: &Dopri5,
    theta: f64,
    h: f64,
    t: f64,
    sinks: &mut [&mut dyn Sink],
) -> Result<()> {
    if sinks.is_empty() {
        return Ok(());
    }
    let n = crowd.len();
    let mut pos = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    for i in 0..n {
        let b = i * STRIDE;
        pos.push(world.wrap(Vec2::new(stepper.dense_value(b, theta), stepper.dense_value(b + 1, theta))));
        w.push(stepper.dense_value(b + 2, theta));
        speed.push(
            stepper
                .dense_derivative(b, theta, h)
                .hypot(stepper.dense_derivative(b + 1, theta, h)),
        );
    }
    let snap = Snapshot {
        t,
        ids: &crowd.ids,
        targets: &crowd.target,
        pos: &pos,
        w: &w,
        speed: &speed,
        v_des: &crowd.v_des,
    };
    for s in sinks.iter_mut() {
        s.sample(world, &snap)?;
    }
    Ok(())
}

fn track_distances(
    world: &World,
    crowd: &Crowd,
    state: &[f64],
    t: f64,
    threshold: f64,
    result: &mut SimulationResult,
    in_contact: &mut HashSet<(usize, usize)>,
) {
    if crowd.len() < 2 {
        return;
    }
    let pos = positions(world, state);
    result.min_distance = result.min_distance.min(min_pairwise_distance(world, &pos));
    let mut now = HashSet::new();
    for (a, b, d) in close_pairs(world, &pos, threshold) {
        let key = (crowd.ids[a].min(crowd.ids[b]), crowd.ids[a].max(crowd.ids[b]));
        if !in_contact.contains(&key) {
            result.collisions.push(CollisionEvent {
                t,
                id_a: key.0,
                id_b: key.1,
                dist: d,
            });
        }
        now.insert(key);
    }
    *in_contact = now;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Rect};
    use crate::scenario::{corridor, Boundary, ModelParams, Scenario, Target};

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }

    #[test]
    fn exponential_decay_to_one() {
        let cfg = IntegratorConfig::default();
        let (y, s) = integrate(&mut decay, 0.0, &[1.0], 1.0, &cfg).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() <= 1e-5);
        assert!(s.accepted > 0);
    }

    #[test]
    fn constant_solution_grows_the_step_to_h_max() {
        let cfg = IntegratorConfig::default();
        let mut zero = |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = 0.0;
        let (y, s) = integrate(&mut zero, 0.0, &[2.5], 3.0, &cfg).unwrap();
        assert_eq!(y[0], 2.5);
        assert_eq!(s.h, cfg.h_max);
    }

    fn fixed_error(h: f64) -> f64 {
        let cfg = IntegratorConfig {
            fixed_step: Some(h),
            h_min: h.min(1e-8),
            h_init: h,
            h_max: h,
            ..IntegratorConfig::default()
        };
        let (y, _) = integrate(&mut decay, 0.0, &[1.0], 1.0, &cfg).unwrap();
        (y[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn fixed_step_convergence_order() {
        let e1 = fixed_error(0.1);
        let e2 = fixed_error(0.05);
        let order = (e1 / e2).log2();
        assert!(order >= 4.5, "order {order}");
    }

    #[test]
    fn single_step_api() {
        let cfg = IntegratorConfig::default();
        let (y, o) = step(&mut decay, &[1.0], 0.0, 0.01, &cfg).unwrap();
        assert!(o.accepted && o.error <= 1.0);
        assert!((y[0] - (-0.01f64).exp()).abs() < 1e-12);
        assert!(o.h_next > 0.01);
    }

    #[test]
    fn dense_output_matches_solution_inside_step() {
        let mut s = Dopri5::new(IntegratorConfig {
            h_init: 0.1,
            ..IntegratorConfig::default()
        });
        let o = s.step(&mut decay, 0.0, &[1.0], 1.0).unwrap();
        assert!(o.accepted);
        for theta in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let t = theta * o.h;
            assert!((s.dense_value(0, theta) - (-t).exp()).abs() < 1e-7);
            assert!((s.dense_derivative(0, theta, o.h) + (-t).exp()).abs() < 1e-5);
        }
    }

    #[test]
    fn collapse_reports_time() {
        let cfg = IntegratorConfig {
            h_min: 1e-3,
            h_init: 1e-3,
            ..IntegratorConfig::default()
        };
        let mut stiff = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -1e7 * y[0];
        let err = integrate(&mut stiff, 0.0, &[1.0], 1.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::StepCollapse { .. }), "{err}");
    }

    fn straight_run() -> (World, Vec<Agent>) {
        let s = Scenario {
            name: String::new(),
            domain: Rect::new(-2.0, -3.0, 14.0, 3.0),
            boundary: Boundary::Closed,
            grid_h: 0.1,
            obstacles: vec![],
            targets: vec![Target {
                id: 1,
                polygon: Some(Polygon::from_rect(&Rect::new(10.0, -3.0, 14.0, 3.0))),
                heading: None,
            }],
            sources: vec![],
        };
        let world = World::new(&s, &ModelParams::default()).unwrap();
        let agent = Agent {
            id: 0,
            pos: Vec2::new(0.0, 0.0),
            w: 0.0,
            v_des: 1.34,
            target: 1,
            alive: true,
            pinned: false,
        };
        (world, vec![agent])
    }

    struct Positions(Vec<(f64, Vec2, f64)>);

    impl Sink for Positions {
        fn sample(&mut self, _world: &World, snap: &Snapshot<'_>) -> Result<()> {
            for k in 0..snap.ids.len() {
                self.0.push((snap.t, snap.pos[k], snap.speed[k]));
            }
            Ok(())
        }
    }

    #[test]
    fn free_walker_follows_the_relaxation_solution() {
        let (world, agents) = straight_run();
        let mut rec = Positions(Vec::new());
        let res = run_with_world(
            &world,
            agents,
            &IntegratorConfig::default(),
            &MeasurementConfig::default(),
            12.0,
            &mut [&mut rec],
        )
        .unwrap();
        let (v, tau) = (1.34, 0.5);
        // the smoothed field flattens within one mollifier radius of the target
        let free_until = 10.0 - world.params.moll_radius;
        for &(t, p, _) in &rec.0 {
            let exact = v * (t - tau * (1.0 - (-t / tau).exp()));
            if exact > free_until {
                break;
            }
            assert!((p.x - exact).abs() <= 1e-3, "t={t}: {} vs {exact}", p.x);
            assert!(p.y.abs() <= 1e-3);
        }
        // absorbed on entering the target at x = 10
        assert_eq!(res.absorbed.len(), 1);
        let arrival = 10.0 / v + tau;
        assert!((res.absorbed[0].0 - arrival).abs() < 0.11, "{:?}", res.absorbed);
        assert!(res.t_end < 12.0);
    }

    #[test]
    fn zero_agents_finish_immediately() {
        let (world, _) = straight_run();
        let res = run_with_world(
            &world,
            vec![],
            &IntegratorConfig::default(),
            &MeasurementConfig::default(),
            10.0,
            &mut [],
        )
        .unwrap();
        assert_eq!(res.accepted_steps, 0);
        assert!(res.crossings.is_empty());
    }

    #[test]
    fn trajectory_csv_header_and_cadence() {
        let (world, agents) = straight_run();
        let mut w = TrajectoryWriter::new(Vec::new());
        run_with_world(
            &world,
            agents,
            &IntegratorConfig::default(),
            &MeasurementConfig::default(),
            1.0,
            &mut [&mut w],
        )
        .unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,id,x,y,w,vdes");
        assert_eq!(lines.len(), 1 + 11);
        assert!(lines[11].starts_with("1.000,0,"));
    }

    #[test]
    fn runs_are_deterministic() {
        let mut c = corridor(10.0, 4.0, 2.0);
        c.duration = 3.0;
        c.population.seed = 5;
        let run = |c: &Config| {
            let mut w = TrajectoryWriter::new(Vec::new());
            run_simulation(c, &mut [&mut w]).unwrap();
            w.into_inner()
        };
        assert_eq!(run(&c), run(&c));
    }

    #[test]
    fn tolerance_proportionality() {
        let mut c = corridor(10.0, 4.0, 0.5);
        c.duration = 5.0;
        let finals = |tol: f64| {
            let mut c = c.clone();
            c.integrator.tol_abs = tol;
            c.integrator.tol_rel = tol * 10.0;
            run_simulation(&c, &mut []).unwrap().final_agents
        };
        let coarse = finals(1e-4);
        let fine = finals(1e-5);
        let world = World::new(&c.scenario, &c.model).unwrap();
        let worst = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| world.offset(a.pos, b.pos).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "worst deviation {worst}");
    }

    #[test]
    fn per_stage_rebuild_agrees_with_per_step() {
        let mut c = corridor(10.0, 4.0, 2.0);
        c.duration = 2.0;
        let a = run_simulation(&c, &mut []).unwrap();
        c.integrator.neighbor_rebuild = NeighborRebuild::PerStage;
        let b = run_simulation(&c, &mut []).unwrap();
        for (x, y) in a.final_agents.iter().zip(&b.final_agents) {
            assert_eq!(x.pos, y.pos);
        }
        assert!(b.neighbor_rebuilds > a.neighbor_rebuilds);
    }

    #[test]
    fn crossing_direction_and_extent() {
        let line = Segment::new(Vec2::new(1.0, 0.0), Vec2::new(1.0, 2.0));
        assert_eq!(crossing_fraction(&line, Vec2::new(0.5, 1.0), Vec2::new(1.5, 1.0)), Some(0.5));
        assert_eq!(crossing_fraction(&line, Vec2::new(1.5, 1.0), Vec2::new(0.5, 1.0)), None);
        assert_eq!(crossing_fraction(&line, Vec2::new(0.5, 3.0), Vec2::new(1.5, 3.0)), None);
    }
}
