//! Right-hand side of the equations of motion.
//!
//! For pedestrian `i` with relaxed speed `w_i` and desired speed `v_i`:
//!
//! ```text
//! N_T = -grad sigma~(x_i)
//! N_P = -(sum_j grad P_ij + sum_B grad P_iB)
//! N   = g(g(N_T) + g(N_P))
//! dx_i/dt = w_i N
//! dw_i/dt = (v_i |N| - w_i) / tau
//! ```
//!
//! The state of `n` walkers is the flat vector `(x_1, y_1, w_1, ..., x_n, y_n, w_n)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::floorfield::{build_speed_function, fast_march, FloorField};
use crate::geometry::{Obstacle, Rect, Vec2};
use crate::scenario::{Agent, ModelParams, Scenario};
use crate::smoothmath::{normalize_capped, view_scale};

/// Entries per walker in the state vector.
pub const STRIDE: usize = 3;

/// Crowds at least this large evaluate the right-hand side on the rayon pool.
const PARALLEL_THRESHOLD: usize = 256;

/// How the walking direction towards one target is obtained.
#[derive(Debug, Clone)]
pub enum Navigator {
    /// Mollified gradient of an arrival-time field.
    Field(Box<FloorField>),
    /// Constant unit heading (periodic corridors).
    Heading(Vec2),
}

impl Navigator {
    #[inline]
    pub fn direction(&self, x: Vec2) -> Vec2 {
        match self {
            Navigator::Field(f) => -f.mollified_gradient(x),
            Navigator::Heading(d) => *d,
        }
    }
}

/// Immutable simulation context: geometry, parameters and target fields.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub params: ModelParams,
    navigators: Vec<(u32, Navigator)>,
    obstacle_reach: Vec<Rect>,
    period: Option<f64>,
}

impl World {
    /// Build the navigators: floor fields for closed domains (in parallel
    /// across targets), constant headings for periodic corridors.
    pub fn new(scenario: &Scenario, params: &ModelParams) -> Result<Self> {
        let navigators = if scenario.is_periodic() {
            scenario
                .targets
                .iter()
                .map(|t| {
                    let h = t
                        .heading_vec()
                        .ok_or_else(|| Error::config(format!("targets[id={}].heading", t.id), "periodic-x needs a heading"))?;
                    Ok((t.id, Navigator::Heading(h)))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            let speed = build_speed_function(scenario, params);
            scenario
                .targets
                .par_iter()
                .map(|t| {
                    let f = fast_march(scenario, t.id, &speed, params.moll_radius)?;
                    Ok((t.id, Navigator::Field(Box::new(f))))
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self::with_navigators(scenario, params, navigators))
    }

    /// A world with caller-supplied navigators.
    pub fn with_navigators(scenario: &Scenario, params: &ModelParams, navigators: Vec<(u32, Navigator)>) -> Self {
        let obstacle_reach = scenario
            .obstacles
            .iter()
            .map(|o| o.bounding_box().expanded(params.obstacle_radius))
            .collect();
        Self {
            period: scenario.is_periodic().then(|| scenario.domain.width()),
            scenario: scenario.clone(),
            params: *params,
            navigators,
            obstacle_reach,
        }
    }

    pub fn navigators(&self) -> &[(u32, Navigator)] {
        &self.navigators
    }

    /// Position of a target in the navigator list.
    pub fn target_slot(&self, target: u32) -> Result<usize> {
        self.navigators
            .iter()
            .position(|(id, _)| *id == target)
            .ok_or_else(|| Error::UnknownTarget {
                requested: target,
                available: self.navigators.iter().map(|(id, _)| *id).collect(),
            })
    }

    pub fn field(&self, target: u32) -> Option<&FloorField> {
        self.navigators.iter().find_map(|(id, n)| match n {
            Navigator::Field(f) if *id == target => Some(f.as_ref()),
            _ => None,
        })
    }

    /// Corridor length for periodic-x domains.
    pub fn period(&self) -> Option<f64> {
        self.period
    }

    /// Map a position into the periodic cell (identity for closed domains).
    #[inline]
    pub fn wrap(&self, p: Vec2) -> Vec2 {
        match self.period {
            Some(len) => {
                let x0 = self.scenario.domain.x_min;
                let mut x = x0 + (p.x - x0).rem_euclid(len);
                if x >= x0 + len {
                    x = x0;
                }
                Vec2::new(x, p.y)
            }
            None => p,
        }
    }

    /// Displacement from `from` to `to`, minimum image along x when periodic.
    #[inline]
    pub fn offset(&self, from: Vec2, to: Vec2) -> Vec2 {
        let mut d = to - from;
        if let Some(len) = self.period {
            d.x -= len * (d.x / len).round();
        }
        d
    }

    /// `N_T` at `x` for the navigator in `slot`.
    #[inline]
    pub fn nav_target(&self, slot: usize, x: Vec2) -> Vec2 {
        self.navigators[slot].1.direction(x)
    }

    /// Sum of obstacle gradients `grad P_iB` at `x`.
    pub fn obstacle_sum(&self, x: Vec2) -> Vec2 {
        let mut acc = Vec2::zeros();
        for (o, reach) in self.scenario.obstacles.iter().zip(&self.obstacle_reach) {
            if reach.contains(x) {
                acc += grad_obstacle(x, o, &self.params);
            }
        }
        acc
    }
}

/// `grad P_ij`: bump of the distance, scaled by the viewing angle, pointing
/// from `x_i` to `x_j`. `offset = x_j - x_i`.
#[inline]
pub fn grad_pedestrian(offset: Vec2, dir_target: Vec2, params: &ModelParams) -> Vec2 {
    let d = offset.norm();
    if d == 0.0 || d >= params.ped_radius {
        return Vec2::zeros();
    }
    let h = params.pedestrian_bump().value_eps(d, params.eps);
    let s = view_scale(dir_target, offset, params.kappa, params.logistic());
    offset * (h * s / d)
}

/// `grad P_iB`: bump of the distance to the nearest obstacle point,
/// pointing from `x` to that point.
#[inline]
pub fn grad_obstacle(x: Vec2, obstacle: &Obstacle, params: &ModelParams) -> Vec2 {
    let xb = obstacle.nearest_point(x);
    let offset = xb - x;
    let d = offset.norm();
    if d == 0.0 || d >= params.obstacle_radius {
        return Vec2::zeros();
    }
    let h = params.obstacle_bump().value_eps(d, params.eps);
    offset * (h / d)
}

/// `N = g(g(N_T) + g(N_P))`.
#[inline]
pub fn nav_combined(n_target: Vec2, n_repulsion: Vec2) -> Vec2 {
    normalize_capped(normalize_capped(n_target) + normalize_capped(n_repulsion))
}

/// Per-walker constants that do not enter the state vector.
#[derive(Debug, Clone, Default)]
pub struct Crowd {
    pub ids: Vec<usize>,
    pub v_des: Vec<f64>,
    pub target: Vec<u32>,
    /// Index into [`World::navigators`].
    pub slot: Vec<usize>,
    pub pinned: Vec<bool>,
}

impl Crowd {
    /// Split alive agents into constants and the initial state vector.
    pub fn from_agents(world: &World, agents: &[Agent]) -> Result<(Crowd, Vec<f64>)> {
        let mut crowd = Crowd::default();
        let mut state = Vec::with_capacity(agents.len() * STRIDE);
        for a in agents.iter().filter(|a| a.alive) {
            crowd.ids.push(a.id);
            crowd.v_des.push(a.v_des);
            crowd.target.push(a.target);
            crowd.slot.push(world.target_slot(a.target)?);
            crowd.pinned.push(a.pinned);
            let p = world.wrap(a.pos);
            state.extend_from_slice(&[p.x, p.y, a.w]);
        }
        Ok((crowd, state))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Keep the walkers flagged in `keep`, in order.
    pub fn retain(&mut self, keep: &[bool]) {
        fn filter<T: Clone>(v: &mut Vec<T>, keep: &[bool]) {
            let mut k = keep.iter();
            v.retain(|_| *k.next().unwrap());
        }
        filter(&mut self.ids, keep);
        filter(&mut self.v_des, keep);
        filter(&mut self.target, keep);
        filter(&mut self.slot, keep);
        filter(&mut self.pinned, keep);
    }
}

/// Positions from a state vector, mapped into the periodic cell.
pub fn positions(world: &World, state: &[f64]) -> Vec<Vec2> {
    state
        .chunks_exact(STRIDE)
        .map(|c| world.wrap(Vec2::new(c[0], c[1])))
        .collect()
}

/// Uniform bucket grid over the domain. Each bucket lists point indices in
/// increasing order.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    origin: Vec2,
    cell_x: f64,
    cell_y: f64,
    nx: usize,
    ny: usize,
    periodic: bool,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl NeighborIndex {
    /// Buckets of at least `cell` on a side, so `query(p, r)` with `r <= cell`
    /// sees every point within `r` of `p`.
    pub fn build(points: &[Vec2], domain: &Rect, periodic: bool, cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let nx = ((domain.width() / cell).floor() as usize).max(1);
        let ny = ((domain.height() / cell).floor() as usize).max(1);
        let mut index = Self {
            origin: Vec2::new(domain.x_min, domain.y_min),
            cell_x: domain.width() / nx as f64,
            cell_y: domain.height() / ny as f64,
            nx,
            ny,
            periodic,
            starts: vec![0; nx * ny + 1],
            items: vec![0; points.len()],
        };
        let cells: Vec<usize> = points.iter().map(|&p| index.cell_of(p)).collect();
        for &c in &cells {
            index.starts[c + 1] += 1;
        }
        for c in 0..nx * ny {
            index.starts[c + 1] += index.starts[c];
        }
        let mut fill = index.starts.clone();
        for (k, &c) in cells.iter().enumerate() {
            index.items[fill[c]] = k;
            fill[c] += 1;
        }
        index
    }

    #[inline]
    fn coords(&self, p: Vec2) -> (i64, i64) {
        let i = ((p.x - self.origin.x) / self.cell_x).floor() as i64;
        let j = ((p.y - self.origin.y) / self.cell_y).floor() as i64;
        let i = if self.periodic {
            i.rem_euclid(self.nx as i64)
        } else {
            i.clamp(0, self.nx as i64 - 1)
        };
        (i, j.clamp(0, self.ny as i64 - 1))
    }

    #[inline]
    fn cell_of(&self, p: Vec2) -> usize {
        let (i, j) = self.coords(p);
        j as usize * self.nx + i as usize
    }

    /// Candidate indices near `p` (a superset of the points within one cell
    /// size), sorted and without duplicates.
    pub fn query(&self, p: Vec2, out: &mut Vec<usize>) {
        out.clear();
        let (ci, cj) = self.coords(p);
        let span_x: Vec<i64> = if self.periodic {
            let mut v: Vec<i64> = (-1..=1).map(|d| (ci + d).rem_euclid(self.nx as i64)).collect();
            v.sort_unstable();
            v.dedup();
            v
        } else {
            (ci - 1..=ci + 1).filter(|&i| i >= 0 && i < self.nx as i64).collect()
        };
        for j in (cj - 1).max(0)..=(cj + 1).min(self.ny as i64 - 1) {
            for &i in &span_x {
                let c = j as usize * self.nx + i as usize;
                out.extend_from_slice(&self.items[self.starts[c]..self.starts[c + 1]]);
            }
        }
        out.sort_unstable();
    }
}

/// When the neighbor lists are rebuilt during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborRebuild {
    /// Once at the start of every step attempt; rebuilt again only if some
    /// stage moves a walker farther than half the skin.
    #[default]
    PerStep,
    /// Before every stage evaluation.
    PerStage,
}

/// Verlet neighbor lists: for each walker, every other walker within
/// `R_p + skin` of it at the reference positions, in increasing order.
#[derive(Debug, Clone)]
pub struct NeighborLists {
    pub mode: NeighborRebuild,
    pub skin: f64,
    reference: Vec<Vec2>,
    starts: Vec<usize>,
    items: Vec<usize>,
    /// Number of list constructions so far.
    pub rebuilds: usize,
}

impl NeighborLists {
    pub fn new(mode: NeighborRebuild, skin: f64) -> Self {
        Self {
            mode,
            skin,
            reference: Vec::new(),
            starts: vec![0],
            items: Vec::new(),
            rebuilds: 0,
        }
    }

    pub fn rebuild(&mut self, world: &World, pos: &[Vec2]) {
        let reach = world.params.ped_radius + self.skin;
        let index = NeighborIndex::build(pos, &world.scenario.domain, world.period.is_some(), reach);
        let reach2 = reach * reach;
        self.reference = pos.to_vec();
        self.starts.clear();
        self.starts.push(0);
        self.items.clear();
        let mut candidates = Vec::new();
        for (i, &p) in pos.iter().enumerate() {
            index.query(p, &mut candidates);
            for &j in &candidates {
                if j != i && world.offset(p, pos[j]).norm_squared() < reach2 {
                    self.items.push(j);
                }
            }
            self.starts.push(self.items.len());
        }
        self.rebuilds += 1;
    }

    /// Whether the lists still cover every pair within `R_p` at `pos`.
    pub fn valid_for(&self, world: &World, pos: &[Vec2]) -> bool {
        if self.reference.len() != pos.len() {
            return false;
        }
        let limit2 = (self.skin / 2.0).powi(2);
        self.reference
            .iter()
            .zip(pos)
            .all(|(a, b)| world.offset(*a, *b).norm_squared() <= limit2)
    }

    /// Called at the start of a step.
    pub fn begin_step(&mut self, world: &World, pos: &[Vec2]) {
        self.rebuild(world, pos);
    }

    /// Called before a stage evaluation.
    pub fn prepare_stage(&mut self, world: &World, pos: &[Vec2]) {
        if self.mode == NeighborRebuild::PerStage || !self.valid_for(world, pos) {
            self.rebuild(world, pos);
        }
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.items[self.starts[i]..self.starts[i + 1]]
    }
}

/// Neighbor source for the pedestrian sum.
#[derive(Clone, Copy)]
pub enum PairScan<'a> {
    /// Every other walker.
    Brute,
    Lists(&'a NeighborLists),
}

/// `sum_j grad P_ij` for walker `i`, summed in increasing `j`.
pub fn pedestrian_sum(world: &World, pos: &[Vec2], i: usize, dir_target: Vec2, scan: PairScan<'_>) -> Vec2 {
    let xi = pos[i];
    let r2 = world.params.ped_radius * world.params.ped_radius;
    let mut acc = Vec2::zeros();
    let mut add = |j: usize| {
        let d = world.offset(xi, pos[j]);
        if d.norm_squared() < r2 {
            acc += grad_pedestrian(d, dir_target, &world.params);
        }
    };
    match scan {
        PairScan::Brute => (0..pos.len()).filter(|&j| j != i).for_each(&mut add),
        PairScan::Lists(l) => l.neighbors(i).iter().copied().for_each(&mut add),
    }
    acc
}

/// Navigation vector `N` of walker `i` and its repulsion part `N_P`.
pub fn navigation(world: &World, crowd: &Crowd, pos: &[Vec2], i: usize, scan: PairScan<'_>) -> (Vec2, Vec2) {
    let n_t = world.nav_target(crowd.slot[i], pos[i]);
    let norm = n_t.norm();
    let dir = if norm > 0.0 { n_t / norm } else { n_t };
    let n_p = -(pedestrian_sum(world, pos, i, dir, scan) + world.obstacle_sum(pos[i]));
    (nav_combined(n_t, n_p), n_p)
}

#[inline]
fn agent_derivative(world: &World, crowd: &Crowd, pos: &[Vec2], w: f64, i: usize, scan: PairScan<'_>) -> [f64; 3] {
    if crowd.pinned[i] {
        return [0.0; 3];
    }
    let (n, _) = navigation(world, crowd, pos, i, scan);
    [w * n.x, w * n.y, (crowd.v_des[i] * n.norm() - w) / world.params.tau]
}

/// Evaluate the derivative of the whole crowd into `out`.
///
/// Each walker's derivative only reads shared data, so the result is the
/// same whether or not the work is spread over threads.
pub fn rhs(world: &World, crowd: &Crowd, t: f64, state: &[f64], out: &mut [f64], lists: &mut NeighborLists) -> Result<()> {
    let pos = positions(world, state);
    lists.prepare_stage(world, &pos);
    let scan = PairScan::Lists(lists);
    let eval = |(i, d): (usize, &mut [f64])| {
        d.copy_from_slice(&agent_derivative(world, crowd, &pos, state[i * STRIDE + 2], i, scan));
    };
    if crowd.len() >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(STRIDE).enumerate().for_each(eval);
    } else {
        out.chunks_mut(STRIDE).enumerate().for_each(eval);
    }
    if let Some(k) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            agent: crowd.ids[k / STRIDE],
            t,
        });
    }
    Ok(())
}

/// Reference derivative with the all-pairs scan.
pub fn rhs_brute(world: &World, crowd: &Crowd, t: f64, state: &[f64], out: &mut [f64]) -> Result<()> {
    let pos = positions(world, state);
    for (i, d) in out.chunks_mut(STRIDE).enumerate() {
        d.copy_from_slice(&agent_derivative(
            world,
            crowd,
            &pos,
            state[i * STRIDE + 2],
            i,
            PairScan::Brute,
        ));
    }
    if let Some(k) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            agent: crowd.ids[k / STRIDE],
            t,
        });
    }
    Ok(())
}
