use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Agent, Config, Placement, PopulationParams, Source};
use crate::error::{Error, Result};
use crate::geometry::{Obstacle, Vec2};

/// Default minimum pairwise distance for random placement (m).
pub const MIN_SPAWN_SPACING: f64 = 0.5;

const ATTEMPTS_PER_AGENT: usize = 20_000;

/// Normal draw redrawn until it falls inside `[v_min, v_max]`.
pub fn draw_desired_speed(population: &PopulationParams, rng: &mut impl Rng) -> f64 {
    if population.v_std == 0.0 {
        return population.v_mean;
    }
    let normal = Normal::new(population.v_mean, population.v_std).expect("validated spread");
    loop {
        let v = normal.sample(rng);
        if (population.v_min..=population.v_max).contains(&v) {
            return v;
        }
    }
}

/// Place the agents of one source.
///
/// `occupied` holds positions already taken by earlier sources; random
/// placement keeps its spacing against them too. Ids start at `first_id`.
pub fn spawn_agents(
    source: &Source,
    population: &PopulationParams,
    obstacles: &[Obstacle],
    occupied: &[Vec2],
    first_id: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Agent>> {
    let positions = match &source.placement {
        Placement::Random { min_spacing } => place_random(source, *min_spacing, obstacles, occupied, rng)?,
        Placement::Lattice { jitter } => place_lattice(source, *jitter, rng),
        Placement::Explicit { positions, .. } => positions.iter().map(|&[x, y]| Vec2::new(x, y)).collect(),
    };
    let pinned = matches!(source.placement, Placement::Explicit { pinned: true, .. });
    let agents = positions
        .into_iter()
        .enumerate()
        .map(|(k, pos)| Agent {
            id: first_id + k,
            pos,
            w: 0.0,
            v_des: source.desired_speed.unwrap_or_else(|| draw_desired_speed(population, rng)),
            target: source.target,
            alive: true,
            pinned,
        })
        .collect();
    Ok(agents)
}

/// Spawn every source of a configuration with a generator seeded from
/// `population.seed`.
pub fn spawn_all(config: &Config) -> Result<Vec<Agent>> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(config.population.seed);
    let mut agents: Vec<Agent> = Vec::with_capacity(config.total_agents());
    for source in &config.scenario.sources {
        let occupied: Vec<Vec2> = agents.iter().map(|a| a.pos).collect();
        let batch = spawn_agents(
            source,
            &config.population,
            &config.scenario.obstacles,
            &occupied,
            agents.len(),
            &mut rng,
        )?;
        agents.extend(batch);
    }
    Ok(agents)
}

fn clear_of_obstacles(p: Vec2, obstacles: &[Obstacle], clearance: f64) -> bool {
    obstacles.iter().all(|o| !o.contains(p) && o.distance(p) >= clearance)
}

fn place_random(
    source: &Source,
    min_spacing: f64,
    obstacles: &[Obstacle],
    occupied: &[Vec2],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec2>> {
    let r = source.region;
    let clearance = min_spacing / 2.0;
    let spacing2 = min_spacing * min_spacing;
    // bucket grid so each candidate only checks nearby points
    let cell = min_spacing.max(1e-3);
    let nx = ((r.width() / cell).ceil() as usize).max(1);
    let ny = ((r.height() / cell).ceil() as usize).max(1);
    let mut buckets: Vec<Vec<Vec2>> = vec![Vec::new(); nx * ny];
    let bucket_of = |p: Vec2| {
        let i = (((p.x - r.x_min) / cell).floor().max(0.0) as usize).min(nx - 1);
        let j = (((p.y - r.y_min) / cell).floor().max(0.0) as usize).min(ny - 1);
        (i, j)
    };
    let nearby: Vec<Vec2> = occupied
        .iter()
        .copied()
        .filter(|p| r.expanded(min_spacing).contains(*p))
        .collect();
    for p in &nearby {
        let (i, j) = bucket_of(*p);
        buckets[j * nx + i].push(*p);
    }

    let mut placed = Vec::with_capacity(source.count);
    let mut attempts = 0usize;
    while placed.len() < source.count {
        if attempts >= ATTEMPTS_PER_AGENT * (placed.len() + 1) {
            return Err(Error::Placement {
                placed: placed.len(),
                requested: source.count,
                attempts,
            });
        }
        attempts += 1;
        let p = Vec2::new(rng.random_range(r.x_min..=r.x_max), rng.random_range(r.y_min..=r.y_max));
        if !clear_of_obstacles(p, obstacles, clearance) {
            continue;
        }
        let (i, j) = bucket_of(p);
        let mut ok = true;
        'scan: for bj in j.saturating_sub(1)..=(j + 1).min(ny - 1) {
            for bi in i.saturating_sub(1)..=(i + 1).min(nx - 1) {
                if buckets[bj * nx + bi].iter().any(|q| (p - q).norm_squared() < spacing2) {
                    ok = false;
                    break 'scan;
                }
            }
        }
        if ok {
            buckets[j * nx + i].push(p);
            placed.push(p);
        }
    }
    Ok(placed)
}

fn place_lattice(source: &Source, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let n = source.count;
    if n == 0 {
        return Vec::new();
    }
    let r = source.region;
    let nx = ((n as f64 * r.width() / r.height()).sqrt().ceil() as usize).max(1);
    let ny = n.div_ceil(nx);
    let (dx, dy) = (r.width() / nx as f64, r.height() / ny as f64);
    let mut cells: Vec<usize> = (0..nx * ny).collect();
    cells.shuffle(rng);
    cells.truncate(n);
    cells.sort_unstable();
    cells
        .into_iter()
        .map(|c| {
            let (i, j) = (c % nx, c / nx);
            let jx = rng.random_range(-jitter..=jitter) * dx;
            let jy = rng.random_range(-jitter..=jitter) * dy;
            Vec2::new(r.x_min + (i as f64 + 0.5) * dx + jx, r.y_min + (j as f64 + 0.5) * dy + jy)
        })
        .collect()
}
