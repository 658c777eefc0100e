//! First-order fast marching for `G |grad sigma| = 1`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;

use super::grid::GridSpec;
use super::speed::SpeedGrid;

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Far,
    Trial,
    Known,
}

/// Arrival times on the grid nodes plus bookkeeping from the march.
#[derive(Debug, Clone)]
pub struct MarchResult {
    pub sigma: Vec<f64>,
    /// Traversable nodes the front never reached.
    pub unreachable: usize,
    /// Nodes in the order they were accepted.
    pub accepted_order: Vec<usize>,
}

/// Upwind update from the smaller known neighbor value along each axis.
#[inline]
fn solve_node(a: f64, b: f64, slowness_h: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if !hi.is_finite() || hi - lo >= slowness_h {
        return lo + slowness_h;
    }
    let diff = a - b;
    (a + b + (2.0 * slowness_h * slowness_h - diff * diff).sqrt()) / 2.0
}

/// March outward from `seeds` (node index, initial arrival time).
///
/// Seeds are accepted as given; every other traversable node receives the
/// first-order upwind solution. Non-traversable nodes stay at `+inf`.
pub fn march(speed: &SpeedGrid, seeds: &[(usize, f64)]) -> MarchResult {
    let grid: GridSpec = speed.grid;
    let n = grid.len();
    let mut sigma = vec![f64::INFINITY; n];
    let mut state = vec![State::Far; n];
    let mut heap: BinaryHeap<Reverse<(OrderedFloat<f64>, usize)>> = BinaryHeap::new();
    for &(k, s) in seeds {
        if speed.traversable[k] && s < sigma[k] {
            sigma[k] = s;
            state[k] = State::Trial;
            heap.push(Reverse((OrderedFloat(s), k)));
        }
    }

    let mut accepted_order = Vec::with_capacity(n);
    let mut last = f64::NEG_INFINITY;
    while let Some(Reverse((OrderedFloat(s), k))) = heap.pop() {
        if state[k] == State::Known || s > sigma[k] {
            continue;
        }
        assert!(
            s >= last - 1e-12 * last.abs().max(1.0),
            "fast marching accepted {s} after {last}"
        );
        last = s;
        state[k] = State::Known;
        accepted_order.push(k);

        let (i, j) = (k % grid.nx, k / grid.nx);
        let mut neighbors = [usize::MAX; 4];
        if i > 0 {
            neighbors[0] = k - 1;
        }
        if i + 1 < grid.nx {
            neighbors[1] = k + 1;
        }
        if j > 0 {
            neighbors[2] = k - grid.nx;
        }
        if j + 1 < grid.ny {
            neighbors[3] = k + grid.nx;
        }
        for &m in &neighbors {
            if m == usize::MAX || state[m] == State::Known || !speed.traversable[m] {
                continue;
            }
            let candidate = update(&grid, &sigma, &state, speed, m);
            if candidate < sigma[m] {
                sigma[m] = candidate;
                state[m] = State::Trial;
                heap.push(Reverse((OrderedFloat(candidate), m)));
            }
        }
    }

    let unreachable = (0..n).filter(|&k| speed.traversable[k] && state[k] != State::Known).count();
    MarchResult {
        sigma,
        unreachable,
        accepted_order,
    }
}

fn update(grid: &GridSpec, sigma: &[f64], state: &[State], speed: &SpeedGrid, m: usize) -> f64 {
    let (i, j) = (m % grid.nx, m / grid.nx);
    let known = |k: usize| {
        if state[k] == State::Known {
            sigma[k]
        } else {
            f64::INFINITY
        }
    };
    let mut a = f64::INFINITY;
    if i > 0 {
        a = a.min(known(m - 1));
    }
    if i + 1 < grid.nx {
        a = a.min(known(m + 1));
    }
    let mut b = f64::INFINITY;
    if j > 0 {
        b = b.min(known(m - grid.nx));
    }
    if j + 1 < grid.ny {
        b = b.min(known(m + grid.nx));
    }
    let slowness_h = grid.h / speed.values[m];
    solve_node(a, b, slowness_h)
}
