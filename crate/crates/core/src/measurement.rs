//! Observables: local density, flow through a line, speed statistics,
//! zero-phase smoothing, lane detection and closest approach.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{NeighborIndex, World};
use crate::error::{Error, Result};
use crate::geometry::{clip_half_plane, convex_polygon_disc_area, Vec2};
use crate::integrator::{CollisionEvent, Crossing, Sink, Snapshot};

/// How the density around a walker is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMethod {
    /// Inverse area of the walker's Voronoi cell, capped at a disc.
    #[default]
    Voronoi,
    /// Walkers inside a disc divided by its area.
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Observer cadence (s).
    pub output_interval: f64,
    /// Samples before this time are ignored by the statistics (s).
    pub warmup: f64,
    /// Line whose crossings are counted, from its first to its second point;
    /// walkers count when moving from its left to its right side.
    pub flow_line: Option<[[f64; 2]; 2]>,
    pub density: DensityMethod,
    /// Cadence of the density-speed samples (s).
    pub density_interval: f64,
    /// Radius bounding a Voronoi cell (m).
    pub voronoi_cap: f64,
    /// Radius of the counting disc (m).
    pub disc_radius: f64,
    /// Times at which lanes are counted (s).
    pub lane_times: Vec<f64>,
    /// Histogram bin across the walkway (m).
    pub lane_bin: f64,
    /// Width of the zero-phase moving average (points).
    pub filter_width: usize,
    /// Width of the zero-phase moving average over the lane histogram (bins).
    pub lane_filter_width: usize,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            output_interval: 0.1,
            warmup: 30.0,
            flow_line: None,
            density: DensityMethod::Voronoi,
            density_interval: 1.0,
            voronoi_cap: 2.0,
            disc_radius: 1.0,
            lane_times: Vec::new(),
            lane_bin: 0.5,
            filter_width: 5,
            lane_filter_width: 2,
        }
    }
}

impl MeasurementConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("output_interval", self.output_interval),
            ("density_interval", self.density_interval),
            ("voronoi_cap", self.voronoi_cap),
            ("disc_radius", self.disc_radius),
            ("lane_bin", self.lane_bin),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("measurement.{name}"), "must be positive"));
            }
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0) {
            return Err(Error::config("measurement.warmup", "must be non-negative"));
        }
        if self.filter_width == 0 {
            return Err(Error::config("measurement.filter_width", "must be at least 1"));
        }
        if self.lane_filter_width == 0 {
            return Err(Error::config("measurement.lane_filter_width", "must be at least 1"));
        }
        if let Some([a, b]) = self.flow_line {
            if a == b || a.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::config("measurement.flow_line", "needs two distinct finite points"));
            }
        }
        if self.lane_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::config("measurement.lane_times", "must be non-negative"));
        }
        Ok(())
    }
}

/// Voronoi cell of walker `i`, relative to its position: the square of
/// half-width `cap` clipped to the domain and by the bisectors with every
/// walker that can still cut it. Periodic neighbors enter through their
/// nearest image.
pub fn voronoi_cell(world: &World, pos: &[Vec2], i: usize, cap: f64, index: &NeighborIndex) -> Vec<Vec2> {
    let xi = pos[i];
    let d = world.scenario.domain;
    let (mut x0, mut x1) = (-cap, cap);
    if world.period().is_none() {
        x0 = x0.max(d.x_min - xi.x);
        x1 = x1.min(d.x_max - xi.x);
    }
    let y0 = (-cap).max(d.y_min - xi.y);
    let y1 = cap.min(d.y_max - xi.y);
    let mut cell = vec![Vec2::new(x0, y0), Vec2::new(x1, y0), Vec2::new(x1, y1), Vec2::new(x0, y1)];
    let mut candidates = Vec::new();
    index.query(xi, &mut candidates);
    let mut offsets: Vec<(f64, usize, Vec2)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| {
            let o = world.offset(xi, pos[j]);
            (o.norm(), j, o)
        })
        .filter(|(r, _, _)| *r < 2.0 * cap)
        .collect();
    offsets.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (r, _, o) in offsets {
        let reach = cell.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if r > 2.0 * reach {
            break;
        }
        cell = clip_half_plane(&cell, o / 2.0, o);
        if cell.len() < 3 {
            break;
        }
    }
    cell
}

/// Density at every walker.
pub fn local_densities(world: &World, pos: &[Vec2], config: &MeasurementConfig) -> Vec<f64> {
    let reach = match config.density {
        DensityMethod::Voronoi => 2.0 * config.voronoi_cap,
        DensityMethod::Disc => config.disc_radius,
    };
    let index = NeighborIndex::build(pos, &world.scenario.domain, world.period().is_some(), reach);
    (0..pos.len()).map(|i| local_density(world, pos, i, config, &index)).collect()
}

/// Density at walker `i` (P/m^2). `index` must have cells of at least
/// `2 * voronoi_cap` (Voronoi) or `disc_radius` (disc).
pub fn local_density(world: &World, pos: &[Vec2], i: usize, config: &MeasurementConfig, index: &NeighborIndex) -> f64 {
    if config.density == DensityMethod::Voronoi {
        let cell = voronoi_cell(world, pos, i, config.voronoi_cap, index);
        let area = convex_polygon_disc_area(&cell, Vec2::zeros(), config.voronoi_cap);
        if cell.len() >= 3 && area.is_finite() && area > 1e-12 {
            return 1.0 / area;
        }
    }
    disc_density(world, pos, i, config.disc_radius, index)
}

/// Walkers within `radius` of walker `i` (itself included) per unit area.
pub fn disc_density(world: &World, pos: &[Vec2], i: usize, radius: f64, index: &NeighborIndex) -> f64 {
    let mut candidates = Vec::new();
    index.query(pos[i], &mut candidates);
    let count = candidates
        .iter()
        .filter(|&&j| world.offset(pos[i], pos[j]).norm() <= radius)
        .count();
    count as f64 / (PI * radius * radius)
}

/// Crossings per second. With a window `(a, b)` this is the number of
/// crossings in `[a, b)` over `b - a`; without one it is the steady rate
/// between the first and the last crossing, `(n - 1) / (t_last - t_first)`.
pub fn flow_rate(times: &[f64], window: Option<(f64, f64)>) -> f64 {
    match window {
        Some((a, b)) => {
            if b <= a {
                return 0.0;
            }
            times.iter().filter(|&&t| t >= a && t < b).count() as f64 / (b - a)
        }
        None => {
            if times.len() < 2 {
                return 0.0;
            }
            let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (times.len() - 1) as f64 / (hi - lo)
            } else {
                0.0
            }
        }
    }
}

/// Moving average of `width` points run forwards and then backwards.
///
/// The two passes combine into the symmetric triangular kernel
/// `c_m = (width - |m|) / width^2`; ends are padded by even reflection.
pub fn zero_phase_filter(series: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 || series.len() < width {
        return Err(Error::InvalidInput(format!(
            "zero-phase filter of width {width} needs at least {width} points, got {}",
            series.len()
        )));
    }
    let n = series.len() as i64;
    let w = width as f64;
    let at = |k: i64| {
        let k = if k < 0 {
            -k - 1
        } else if k >= n {
            2 * n - 1 - k
        } else {
            k
        };
        series[k as usize]
    };
    Ok((0..n)
        .map(|k| {
            let mut acc = w / (w * w) * at(k);
            for m in 1..width as i64 {
                let c = (w - m as f64) / (w * w);
                acc += c * (at(k - m) + at(k + m));
            }
            acc
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedStatistics {
    pub samples: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// `mean / 1.34`.
    pub mu_norm: f64,
    /// `std / 0.26`.
    pub sigma_norm: f64,
}

/// Reference free-flow mean speed (m/s).
pub const SPEED_MEAN_REF: f64 = 1.34;
/// Reference free-flow speed spread (m/s).
pub const SPEED_STD_REF: f64 = 0.26;
/// Fewest samples accepted for one density.
pub const MIN_SPEED_SAMPLES: usize = 30;

impl SpeedStatistics {
    fn from_moments(samples: usize, mean: f64, var: f64) -> Self {
        let std = var.max(0.0).sqrt();
        Self {
            samples,
            mean,
            std,
            mu_norm: mean / SPEED_MEAN_REF,
            sigma_norm: std / SPEED_STD_REF,
        }
    }
}

/// Mean and spread of instantaneous speeds, normalized by the free-flow values.
pub fn speed_statistics(speeds: &[f64]) -> Result<SpeedStatistics> {
    let mut acc = Moments::default();
    speeds.iter().for_each(|&v| acc.push(v));
    acc.finish()
}

/// Running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn finish(&self) -> Result<SpeedStatistics> {
        if self.n < MIN_SPEED_SAMPLES {
            return Err(Error::InvalidInput(format!(
                "speed statistics need at least {MIN_SPEED_SAMPLES} samples, got {}",
                self.n
            )));
        }
        Ok(SpeedStatistics::from_moments(self.n, self.mean, self.m2 / self.n as f64))
    }
}

/// Fewest walkers per direction for a lane count.
pub const MIN_LANE_AGENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaneReport {
    /// Maxima of the smoothed histogram above half the largest one.
    pub count: usize,
    /// No maximum stands out: the tallest is below 1.5 times the mean bin.
    pub no_lanes: bool,
    pub histogram: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl LaneReport {
    /// Lane count, zero when the distribution shows no lanes.
    pub fn lanes(&self) -> usize {
        if self.no_lanes {
            0
        } else {
            self.count
        }
    }
}

/// Count lanes from cross-walkway positions `ys` on `[y_lo, y_hi]`.
pub fn detect_lanes(ys: &[f64], y_lo: f64, y_hi: f64, bin: f64, width: usize) -> Result<LaneReport> {
    if ys.len() < MIN_LANE_AGENTS {
        return Err(Error::InvalidInput(format!(
            "lane detection needs at least {MIN_LANE_AGENTS} walkers, got {}",
            ys.len()
        )));
    }
    let bins = (((y_hi - y_lo) / bin) - 1e-9).ceil().max(1.0) as usize;
    let mut histogram = vec![0.0; bins];
    for &y in ys {
        let k = (((y - y_lo) / bin).floor().max(0.0) as usize).min(bins - 1);
        histogram[k] += 1.0;
    }
    let smoothed = zero_phase_filter(&histogram, width.min(bins))?;
    let peak = smoothed.iter().copied().fold(0.0, f64::max);
    let mean = smoothed.iter().sum::<f64>() / bins as f64;
    let maxima = local_maxima(&smoothed);
    let count = maxima.iter().filter(|&&v| v > 0.5 * peak).count();
    let no_lanes = !maxima.iter().any(|&v| v > 1.5 * mean);
    Ok(LaneReport {
        count,
        no_lanes,
        histogram,
        smoothed,
    })
}

/// Values of the strict local maxima; a plateau counts once when both
/// sides are lower (or it touches an end).
fn local_maxima(f: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < f.len() {
        let mut e = k;
        while e + 1 < f.len() && f[e + 1] == f[k] {
            e += 1;
        }
        let left_lower = k == 0 || f[k - 1] < f[k];
        let right_lower = e + 1 == f.len() || f[e + 1] < f[k];
        if left_lower && right_lower && f.len() > 1 {
            out.push(f[k]);
        }
        k = e + 1;
    }
    out
}

/// All pairs `(a, b, distance)` with `a < b` closer than `radius`.
pub fn close_pairs(world: &World, pos: &[Vec2], radius: f64) -> Vec<(usize, usize, f64)> {
    let index = NeighborIndex::build(pos, &world.scenario.domain, world.period().is_some(), radius);
    let mut out = Vec::new();
    let mut candidates = Vec::new();
    for (i, &p) in pos.iter().enumerate() {
        index.query(p, &mut candidates);
        for &j in candidates.iter().filter(|&&j| j > i) {
            let d = world.offset(p, pos[j]).norm();
            if d < radius {
                out.push((i, j, d));
            }
        }
    }
    out
}

/// Smallest center distance over all pairs, infinite for fewer than two.
pub fn min_pairwise_distance(world: &World, pos: &[Vec2]) -> f64 {
    if pos.len() < 2 {
        return f64::INFINITY;
    }
    let d = world.scenario.domain;
    let diag = d.width().hypot(d.height());
    let mut radius = world.params.ped_radius;
    loop {
        let best = close_pairs(world, pos, radius)
            .into_iter()
            .map(|(_, _, d)| d)
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            return best;
        }
        if radius > diag {
            return min_pairwise_distance_brute(world, pos);
        }
        radius *= 2.0;
    }
}

/// All-pairs reference for [`min_pairwise_distance`].
pub fn min_pairwise_distance_brute(world: &World, pos: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            best = best.min(world.offset(pos[i], pos[j]).norm());
        }
    }
    best
}

/// One row of `density_speed.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensitySpeedSample {
    pub t: f64,
    pub id: usize,
    pub rho: f64,
    pub v: f64,
}

/// Local density and speed of every walker at the density cadence, after
/// the warm-up.
pub struct DensitySpeedRecorder {
    config: MeasurementConfig,
    next: f64,
    pub rows: Vec<DensitySpeedSample>,
}

impl DensitySpeedRecorder {
    pub fn new(config: &MeasurementConfig) -> Self {
        Self {
            config: config.clone(),
            next: config.warmup,
            rows: Vec::new(),
        }
    }
}

impl Sink for DensitySpeedRecorder {
    fn sample(&mut self, world: &World, snap: &Snapshot<'_>) -> Result<()> {
        if snap.t + 1e-9 < self.next {
            return Ok(());
        }
        while self.next <= snap.t + 1e-9 {
            self.next += self.config.density_interval;
        }
        let rho = local_densities(world, snap.pos, &self.config);
        for ((&id, &rho), &v) in snap.ids.iter().zip(&rho).zip(snap.speed) {
            self.rows.push(DensitySpeedSample { t: snap.t, id, rho, v });
        }
        Ok(())
    }
}

/// Instantaneous speeds of all moving walkers after the warm-up.
pub struct SpeedRecorder {
    warmup: f64,
    pub moments: Moments,
}

impl SpeedRecorder {
    pub fn new(warmup: f64) -> Self {
        Self {
            warmup,
            moments: Moments::default(),
        }
    }
}

impl Sink for SpeedRecorder {
    fn sample(&mut self, _world: &World, snap: &Snapshot<'_>) -> Result<()> {
        if snap.t + 1e-9 >= self.warmup {
            snap.speed.iter().for_each(|&v| self.moments.push(v));
        }
        Ok(())
    }
}

/// One row of `lanes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaneRecord {
    pub t: f64,
    /// Target id of the walking direction.
    pub direction: u32,
    pub report: LaneReport,
}

/// Lane counts per walking direction at the configured times.
pub struct LaneRecorder {
    pending: Vec<f64>,
    bin: f64,
    width: usize,
    pub records: Vec<LaneRecord>,
}

impl LaneRecorder {
    pub fn new(config: &MeasurementConfig) -> Self {
        let mut pending = config.lane_times.clone();
        pending.sort_by(|a, b| b.total_cmp(a));
        Self {
            pending,
            bin: config.lane_bin,
            width: config.lane_filter_width,
            records: Vec::new(),
        }
    }
}

impl Sink for LaneRecorder {
    fn sample(&mut self, world: &World, snap: &Snapshot<'_>) -> Result<()> {
        while let Some(&t) = self.pending.last() {
            if snap.t + 1e-9 < t {
                break;
            }
            self.pending.pop();
            let d = world.scenario.domain;
            for (direction, _) in world.navigators() {
                let ys: Vec<f64> = (0..snap.ids.len())
                    .filter(|&k| snap.targets[k] == *direction)
                    .map(|k| snap.pos[k].y)
                    .collect();
                if ys.len() < MIN_LANE_AGENTS {
                    continue;
                }
                let report = detect_lanes(&ys, d.y_min, d.y_max, self.bin, self.width)?;
                self.records.push(LaneRecord {
                    t: snap.t,
                    direction: *direction,
                    report,
                });
            }
        }
        Ok(())
    }
}

pub fn write_density_speed(mut out: impl Write, rows: &[DensitySpeedSample]) -> Result<()> {
    writeln!(out, "t,id,rho,v")?;
    for r in rows {
        writeln!(out, "{:.3},{},{},{}", r.t, r.id, r.rho, r.v)?;
    }
    Ok(())
}

pub fn write_flow(mut out: impl Write, crossings: &[Crossing]) -> Result<()> {
    writeln!(out, "t_cross,id")?;
    for c in crossings {
        writeln!(out, "{},{}", c.t, c.id)?;
    }
    Ok(())
}

/// One row of `speed_stats.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedStatsRow {
    pub rho_global: f64,
    pub mu_norm: f64,
    pub sigma_norm: f64,
    pub mu_filt: f64,
    pub sigma_filt: f64,
}

/// Rows for a density ladder; the filtered columns are the zero-phase
/// smoothed curves when there are enough densities, else a copy.
pub fn speed_stats_rows(ladder: &[(f64, SpeedStatistics)], width: usize) -> Vec<SpeedStatsRow> {
    let mu: Vec<f64> = ladder.iter().map(|(_, s)| s.mu_norm).collect();
    let sigma: Vec<f64> = ladder.iter().map(|(_, s)| s.sigma_norm).collect();
    let mu_f = zero_phase_filter(&mu, width).unwrap_or_else(|_| mu.clone());
    let sigma_f = zero_phase_filter(&sigma, width).unwrap_or_else(|_| sigma.clone());
    ladder
        .iter()
        .enumerate()
        .map(|(k, (rho, s))| SpeedStatsRow {
            rho_global: *rho,
            mu_norm: s.mu_norm,
            sigma_norm: s.sigma_norm,
            mu_filt: mu_f[k],
            sigma_filt: sigma_f[k],
        })
        .collect()
}

pub fn write_speed_stats(mut out: impl Write, rows: &[SpeedStatsRow]) -> Result<()> {
    writeln!(out, "rho_global,mu_norm,sigma_norm,mu_filt,sigma_filt")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.rho_global, r.mu_norm, r.sigma_norm, r.mu_filt, r.sigma_filt
        )?;
    }
    Ok(())
}

pub fn write_lanes(mut out: impl Write, records: &[LaneRecord]) -> Result<()> {
    writeln!(out, "t,direction,count")?;
    for r in records {
        writeln!(out, "{:.3},{},{}", r.t, r.direction, r.report.lanes())?;
    }
    Ok(())
}

pub fn write_collisions(mut out: impl Write, events: &[CollisionEvent]) -> Result<()> {
    writeln!(out, "t,id_a,id_b,dist")?;
    for e in events {
        writeln!(out, "{},{},{},{}", e.t, e.id_a, e.id_b, e.dist)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Navigator;
    use crate::geometry::Rect;
    use crate::scenario::{corridor, Boundary, ModelParams, Scenario, Target};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn open_world(size: f64) -> World {
        let s = Scenario {
            name: String::new(),
            domain: Rect::new(0.0, 0.0, size, size),
            boundary: Boundary::Closed,
            grid_h: 0.1,
            obstacles: vec![],
            targets: vec![Target {
                id: 1,
                polygon: None,
                heading: Some([1.0, 0.0]),
            }],
            sources: vec![],
        };
        World::with_navigators(
            &s,
            &ModelParams::default(),
            vec![(1, Navigator::Heading(Vec2::new(1.0, 0.0)))],
        )
    }

    fn hex_lattice(r: f64, n: usize) -> Vec<Vec2> {
        let h = 3f64.sqrt() / 2.0 * r;
        let mut pts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let shift = if j % 2 == 1 { r / 2.0 } else { 0.0 };
                pts.push(Vec2::new(5.0 + i as f64 * r + shift, 5.0 + j as f64 * h));
            }
        }
        pts
    }

    #[test]
    fn hexagonal_lattice_density() {
        let world = open_world(100.0);
        let r = 0.406_149_257_993_246_25;
        let pts = hex_lattice(r, 30);
        let rho = local_densities(&world, &pts, &MeasurementConfig::default());
        let exact = 2.0 / (3f64.sqrt() * r * r);
        assert!((exact - 7.0).abs() < 1e-12);
        let center = 15 * 30 + 15;
        assert!((rho[center] - exact).abs() / exact < 1e-9, "{} vs {exact}", rho[center]);
    }

    #[test]
    fn square_lattice_density_is_one() {
        let world = open_world(100.0);
        let pts: Vec<Vec2> = (0..400)
            .map(|k| Vec2::new(30.0 + (k % 20) as f64, 30.0 + (k / 20) as f64))
            .collect();
        let rho = local_densities(&world, &pts, &MeasurementConfig::default());
        assert!((rho[10 * 20 + 10] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lone_walker_density_is_capped() {
        let world = open_world(100.0);
        let rho = local_densities(&world, &[Vec2::new(50.0, 50.0)], &MeasurementConfig::default());
        assert!((rho[0] - 1.0 / (PI * 4.0)).abs() < 1e-12);
        assert!((rho[0] - 0.0796).abs() < 1e-4);
    }

    #[test]
    fn periodic_cells_use_nearest_images() {
        let c = corridor(10.0, 2.0, 1.0);
        let world = World::new(&c.scenario, &c.model).unwrap();
        // a row of walkers every metre around a 10 m ring in a 2 m wide
        // corridor: each cell is a 1 m x 2 m strip, the seam included
        let pts: Vec<Vec2> = (0..10).map(|k| Vec2::new(k as f64 + 0.25, 1.0)).collect();
        let rho = local_densities(&world, &pts, &MeasurementConfig::default());
        for r in rho {
            assert!((r - 0.5).abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn disc_density_counts_neighbors() {
        let world = open_world(20.0);
        let pts = vec![Vec2::new(10.0, 10.0), Vec2::new(10.5, 10.0), Vec2::new(12.0, 10.0)];
        let cfg = MeasurementConfig {
            density: DensityMethod::Disc,
            ..MeasurementConfig::default()
        };
        let rho = local_densities(&world, &pts, &cfg);
        assert!((rho[0] - 2.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn flow_rate_examples() {
        let times: Vec<f64> = (0..180).map(|k| k as f64 * 0.5).collect();
        assert_eq!(flow_rate(&times, Some((0.0, 90.0))), 2.0);
        assert_eq!(flow_rate(&[], None), 0.0);
        assert!((flow_rate(&times, None) - 2.0).abs() < 1e-12);
        let shifted: Vec<f64> = times.iter().map(|t| t + 17.3).collect();
        assert!((flow_rate(&shifted, None) - flow_rate(&times, None)).abs() < 1e-12);
        assert!((flow_rate(&times, Some((10.0, 20.0))) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_phase_filter_examples() {
        let c = zero_phase_filter(&[3.0; 12], 5).unwrap();
        assert!(c.iter().all(|v| (v - 3.0).abs() < 1e-15));

        let mut imp = vec![0.0; 21];
        imp[10] = 1.0;
        let f = zero_phase_filter(&imp, 5).unwrap();
        for m in 0..=10 {
            assert_eq!(f[10 - m], f[10 + m]);
        }
        assert!(f[10] > f[11] && f[14] > 0.0 && f[15] == 0.0);

        let ramp: Vec<f64> = (0..30).map(|k| 0.5 * k as f64 - 3.0).collect();
        let g = zero_phase_filter(&ramp, 5).unwrap();
        for k in 4..26 {
            assert!((g[k] - ramp[k]).abs() < 1e-12);
        }
        assert!(zero_phase_filter(&[1.0, 2.0], 5).is_err());
    }

    #[test]
    fn zero_phase_filter_commutes_with_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rev = x.clone();
        rev.reverse();
        let mut a = zero_phase_filter(&x, 5).unwrap();
        a.reverse();
        assert_eq!(a, zero_phase_filter(&rev, 5).unwrap());
    }

    #[test]
    fn speed_statistics_examples() {
        let s = speed_statistics(&[1.34; 100]).unwrap();
        assert!((s.mu_norm - 1.0).abs() < 1e-12 && s.sigma_norm.abs() < 1e-12);
        let half: Vec<f64> = (0..100).map(|k| if k % 2 == 0 { 0.0 } else { 1.34 }).collect();
        let s = speed_statistics(&half).unwrap();
        assert!((s.mu_norm - 0.5).abs() < 1e-12);
        assert!((s.sigma_norm - 0.67 / 0.26).abs() < 1e-12);
        assert!(speed_statistics(&[1.0; 10]).is_err());
    }

    #[test]
    fn lane_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let one: Vec<f64> = (0..40).map(|_| 2.0 + rng.random_range(-0.1..0.1)).collect();
        assert_eq!(detect_lanes(&one, 0.0, 10.0, 0.5, 5).unwrap().lanes(), 1);
        let two: Vec<f64> = (0..40)
            .map(|k| if k % 2 == 0 { 2.0 } else { 8.0 } + rng.random_range(-0.1..0.1))
            .collect();
        assert_eq!(detect_lanes(&two, 0.0, 10.0, 0.5, 5).unwrap().lanes(), 2);
        let uniform: Vec<f64> = (0..200).map(|k| (k as f64 + 0.5) * 10.0 / 200.0).collect();
        let r = detect_lanes(&uniform, 0.0, 10.0, 0.5, 5).unwrap();
        assert!(r.no_lanes);
        assert!(detect_lanes(&one[..10], 0.0, 10.0, 0.5, 5).is_err());
        for width in 1..=5 {
            assert!(detect_lanes(&uniform, 0.0, 10.0, 0.5, width).unwrap().no_lanes);
        }
    }

    #[test]
    fn narrow_bands_survive_light_smoothing() {
        // walkers per 0.5 m bin; counts from an independent evaluation
        let counts = [23, 24, 2, 1, 3, 25, 30, 15, 3, 4, 0, 5, 24, 11, 15, 4, 4, 10, 6, 16];
        let ys: Vec<f64> = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(0.5 * k as f64 + 0.25, c))
            .collect();
        let light = detect_lanes(&ys, 0.0, 10.0, 0.5, 2).unwrap();
        assert!(!light.no_lanes);
        assert_eq!(light.lanes(), 4);
        assert_eq!(detect_lanes(&ys, 0.0, 10.0, 0.5, 5).unwrap().lanes(), 0);
    }

    #[test]
    fn min_distance_examples() {
        let world = open_world(50.0);
        assert_eq!(
            min_pairwise_distance(&world, &[Vec2::new(1.0, 1.0), Vec2::new(2.0, 1.0)]),
            1.0
        );
        let pts = hex_lattice(0.5, 10);
        assert!((min_pairwise_distance(&world, &pts) - 0.5).abs() < 1e-12);
        // far apart: the search radius grows until the pair is found
        let far = [Vec2::new(1.0, 1.0), Vec2::new(40.0, 30.0)];
        assert_eq!(min_pairwise_distance(&world, &far), (39f64).hypot(29.0));
    }

    #[test]
    fn indexed_min_distance_equals_brute_force() {
        let c = corridor(20.0, 4.0, 1.0);
        let world = World::new(&c.scenario, &c.model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 5, 50, 200] {
            let pts: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.random_range(0.0..20.0), rng.random_range(0.0..4.0)))
                .collect();
            assert_eq!(min_pairwise_distance(&world, &pts), min_pairwise_distance_brute(&world, &pts));
        }
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_flow(&mut buf, &[Crossing { t: 1.0, id: 3 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t_cross,id\n1,3\n");
        let mut buf = Vec::new();
        write_speed_stats(&mut buf, &[]).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("rho_global,mu_norm,sigma_norm,mu_filt,sigma_filt"));
    }
}
