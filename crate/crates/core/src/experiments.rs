//! Runners for the built-in experiments and their summary metrics.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::StandoffScenario;
use crate::dynamics::World;
use crate::error::Result;
use crate::geometry::Vec2;
use crate::integrator::{run_simulation, SimulationResult, Sink, Snapshot};
use crate::measurement::{flow_rate, speed_stats_rows, LaneRecord, LaneRecorder, SpeedRecorder, SpeedStatistics, SpeedStatsRow};
use crate::scenario::{bidirectional_walkway, bottleneck, bottleneck_opening, corridor, Config, ModelParams};

/// Depth of the strip in front of the entrance used for the cone spread (m).
pub const CONE_STRIP: f64 = 1.0;

/// Shape of the waiting crowd in front of a bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeShape {
    pub t: f64,
    /// Walkers still in front of the entrance.
    pub waiting: usize,
    /// Extent of the waiting crowd along the walking direction (m).
    pub depth: f64,
    /// Extent across the walking direction within [`CONE_STRIP`] of the entrance (m).
    pub spread: f64,
}

impl ConeShape {
    pub fn is_cone(&self) -> bool {
        self.depth > self.spread
    }
}

/// Captures the waiting crowd once half of it has entered the bottleneck.
pub struct ConeProbe {
    entrance_x: f64,
    initial: Option<usize>,
    pub shape: Option<ConeShape>,
}

impl ConeProbe {
    pub fn new(entrance_x: f64) -> Self {
        Self {
            entrance_x,
            initial: None,
            shape: None,
        }
    }
}

impl Sink for ConeProbe {
    fn sample(&mut self, _world: &World, snap: &Snapshot<'_>) -> Result<()> {
        if self.shape.is_some() {
            return Ok(());
        }
        let waiting: Vec<Vec2> = snap.pos.iter().copied().filter(|p| p.x < self.entrance_x).collect();
        let initial = *self.initial.get_or_insert(waiting.len());
        if initial == 0 || 2 * waiting.len() > initial {
            return Ok(());
        }
        let depth = waiting.iter().map(|p| self.entrance_x - p.x).fold(0.0, f64::max);
        let strip: Vec<f64> = waiting
            .iter()
            .filter(|p| p.x >= self.entrance_x - CONE_STRIP)
            .map(|p| p.y)
            .collect();
        let spread = if strip.is_empty() {
            0.0
        } else {
            strip.iter().copied().fold(f64::NEG_INFINITY, f64::max) - strip.iter().copied().fold(f64::INFINITY, f64::min)
        };
        self.shape = Some(ConeShape {
            t: snap.t,
            waiting: waiting.len(),
            depth,
            spread,
        });
        Ok(())
    }
}

/// Summary of one bottleneck evacuation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BottleneckRun {
    pub width: f64,
    pub seed: u64,
    pub crossings: usize,
    /// Flow through the exit of the constriction (P/s).
    pub flow: f64,
    /// Flow per metre of width (P/m/s).
    pub specific_flow: f64,
    pub min_distance: f64,
    pub collisions: usize,
    pub cone: Option<ConeShape>,
    pub t_end: f64,
}

/// Evacuate the bottleneck preset of the given width.
pub fn bottleneck_run(width: f64, seed: u64, params: &ModelParams) -> Result<(BottleneckRun, SimulationResult)> {
    let mut config = bottleneck(width);
    config.model = *params;
    config.population.seed = seed;
    bottleneck_run_config(&config, width)
}

/// Evacuate a prepared bottleneck configuration.
pub fn bottleneck_run_config(config: &Config, width: f64) -> Result<(BottleneckRun, SimulationResult)> {
    let (entrance, _, _) = bottleneck_opening(width);
    let mut probe = ConeProbe::new(entrance);
    let result = run_simulation(config, &mut [&mut probe])?;
    let times: Vec<f64> = result.crossings.iter().map(|c| c.t).collect();
    let flow = flow_rate(&times, None);
    let run = BottleneckRun {
        width,
        seed: config.population.seed,
        crossings: times.len(),
        flow,
        specific_flow: flow / width,
        min_distance: result.min_distance,
        collisions: result.collisions.len(),
        cone: probe.shape,
        t_end: result.t_end,
    };
    Ok((run, result))
}

/// Every `(width, seed)` combination in width-major order.
pub fn bottleneck_sweep(widths: &[f64], seeds: &[u64], params: &ModelParams) -> Result<Vec<BottleneckRun>> {
    let jobs: Vec<(f64, u64)> = widths.iter().flat_map(|&w| seeds.iter().map(move |&s| (w, s))).collect();
    jobs.par_iter()
        .map(|&(w, s)| bottleneck_run(w, s, params).map(|(run, _)| run))
        .collect()
}

/// Mean flow per width over the runs of a sweep, in the order widths first appear.
pub fn mean_flow_by_width(runs: &[BottleneckRun]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in runs {
        match out.iter_mut().find(|(w, _, _)| *w == r.width) {
            Some(e) => {
                e.1 += r.flow;
                e.2 += 1;
            }
            None => out.push((r.width, r.flow, 1)),
        }
    }
    out.into_iter().map(|(w, sum, n)| (w, sum / n as f64)).collect()
}

/// Setup of a periodic-corridor speed measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorridorRun {
    pub length: f64,
    pub width: f64,
    pub duration: f64,
    pub warmup: f64,
}

impl CorridorRun {
    pub fn config(&self, rho: f64, seed: u64, params: &ModelParams) -> Config {
        let mut c = corridor(self.length, self.width, rho);
        c.model = *params;
        c.population.seed = seed;
        c.duration = self.duration;
        c.measurement.warmup = self.warmup;
        c
    }

    /// Speed moments over all walkers and output samples after the warm-up.
    pub fn speed(&self, rho: f64, seed: u64, params: &ModelParams) -> Result<SpeedStatistics> {
        let config = self.config(rho, seed, params);
        let mut rec = SpeedRecorder::new(config.measurement.warmup);
        run_simulation(&config, &mut [&mut rec])?;
        rec.moments.finish()
    }

    /// Speed statistics along a density ladder, filtered across densities.
    pub fn ladder(&self, densities: &[f64], seed: u64, params: &ModelParams, filter_width: usize) -> Result<Vec<SpeedStatsRow>> {
        let stats: Vec<(f64, SpeedStatistics)> = densities
            .par_iter()
            .map(|&rho| self.speed(rho, seed, params).map(|s| (rho, s)))
            .collect::<Result<_>>()?;
        Ok(speed_stats_rows(&stats, filter_width))
    }
}

/// Lane reports of the bidirectional walkway at `duration` seconds.
pub fn lanes_run(rho: f64, seed: u64, duration: f64, params: &ModelParams) -> Result<Vec<LaneRecord>> {
    let mut config = bidirectional_walkway(rho);
    config.model = *params;
    config.population.seed = seed;
    config.duration = duration;
    config.measurement.lane_times = vec![duration];
    let mut rec = LaneRecorder::new(&config.measurement);
    run_simulation(&config, &mut [&mut rec])?;
    Ok(rec.records)
}

/// Tracks how far one walker moves from its first sampled position.
pub struct DisplacementProbe {
    id: usize,
    origin: Option<Vec2>,
    pub max_displacement: f64,
    pub max_speed: f64,
}

impl DisplacementProbe {
    pub fn new(id: usize) -> Self {
        Self {
            id,
            origin: None,
            max_displacement: 0.0,
            max_speed: 0.0,
        }
    }
}

impl Sink for DisplacementProbe {
    fn sample(&mut self, world: &World, snap: &Snapshot<'_>) -> Result<()> {
        if let Some(k) = snap.ids.iter().position(|&id| id == self.id) {
            let p = snap.pos[k];
            let origin = *self.origin.get_or_insert(p);
            self.max_displacement = self.max_displacement.max(world.offset(origin, p).norm());
            self.max_speed = self.max_speed.max(snap.speed[k]);
        }
        Ok(())
    }
}

/// Outcome of running the standoff configuration with the full engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StandoffRun {
    pub duration: f64,
    pub max_displacement: f64,
    pub max_speed: f64,
}

/// Run the standoff walker (id 0) for `duration` seconds.
pub fn standoff_run(scenario: &StandoffScenario, params: &ModelParams, duration: f64) -> Result<StandoffRun> {
    let mut config = scenario.to_config(params);
    config.duration = duration;
    let mut probe = DisplacementProbe::new(0);
    run_simulation(&config, &mut [&mut probe])?;
    Ok(StandoffRun {
        duration,
        max_displacement: probe.max_displacement,
        max_speed: probe.max_speed,
    })
}

/// Simulated seconds per wall-clock second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Throughput {
    pub agents: usize,
    pub simulated: f64,
    pub wall_clock: f64,
    pub ratio: f64,
}

/// Time a periodic corridor run holding `agents` walkers at 2 P/m^2.
pub fn throughput(agents: usize, simulated: f64, params: &ModelParams) -> Result<Throughput> {
    let width = 4.0;
    let rho = 2.0;
    let length = agents as f64 / (rho * width);
    let mut config = corridor(length, width, rho);
    config.model = *params;
    config.duration = simulated;
    config.measurement.flow_line = None;
    let clock = Instant::now();
    let result = run_simulation(&config, &mut [])?;
    let wall_clock = clock.elapsed().as_secs_f64();
    Ok(Throughput {
        agents: result.final_agents.len(),
        simulated,
        wall_clock,
        ratio: simulated / wall_clock.max(1e-12),
    })
}
