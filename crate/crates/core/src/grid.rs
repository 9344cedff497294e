//! Gridworld geometry, periodic state paths and range-limited neighborhoods.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{AgentId, AgentSet};

/// A grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub x: i32,
    pub y: i32,
}

impl GridPos {
    pub const fn new(x: i32, y: i32) -> Self {
        GridPos { x, y }
    }

    pub fn chebyshev(self, other: GridPos) -> u32 {
        (self.x - other.x)
            .unsigned_abs()
            .max((self.y - other.y).unsigned_abs())
    }

    pub fn squared_euclidean(self, other: GridPos) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        dx * dx + dy * dy
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// The finite grid Q = [0, width) × [0, height).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub width: u32,
    pub height: u32,
}

impl Grid {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::schema("grid", "grid dimensions must be positive"));
        }
        Ok(Grid { width, height })
    }

    pub fn contains(&self, p: GridPos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as u32) < self.width && (p.y as u32) < self.height
    }
}

/// Chebyshev radius of a square sensing or communication window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub radius: u32,
}

impl RangeSpec {
    pub const fn new(radius: u32) -> Self {
        RangeSpec { radius }
    }

    /// Cells of the window around `center`, clipped to the grid, in row-major order (y, then x).
    pub fn window(&self, center: GridPos, grid: &Grid) -> Vec<GridPos> {
        let r = self.radius as i32;
        let mut cells = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for y in center.y - r..=center.y + r {
            for x in center.x - r..=center.x + r {
                let p = GridPos::new(x, y);
                if grid.contains(p) {
                    cells.push(p);
                }
            }
        }
        cells
    }
}

/// `max(|Δx|, |Δy|) ≤ radius`; boundary cells belong to the window.
pub fn in_sensing_window(q_i: GridPos, q: GridPos, range: RangeSpec) -> bool {
    q_i.chebyshev(q) <= range.radius
}

/// Which one-step moves are allowed.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum MotionGraph {
    /// King moves plus staying put.
    #[default]
    EightConnected,
    /// Explicit directed edges; staying put must be listed to be allowed.
    Explicit(BTreeSet<(GridPos, GridPos)>),
}

impl MotionGraph {
    pub fn allows(&self, from: GridPos, to: GridPos) -> bool {
        match self {
            MotionGraph::EightConnected => from.chebyshev(to) <= 1,
            MotionGraph::Explicit(edges) => edges.contains(&(from, to)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Identity {
    Good,
    Bad,
}

/// Periodic paths an agent follows when good and when compromised.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatePath {
    pub owner: AgentId,
    pub good_cycle: Vec<GridPos>,
    pub bad_cycle: Vec<GridPos>,
}

impl StatePath {
    pub fn new(owner: AgentId, good_cycle: Vec<GridPos>, bad_cycle: Vec<GridPos>) -> Result<Self> {
        for (name, cycle) in [("good", &good_cycle), ("bad", &bad_cycle)] {
            if cycle.is_empty() {
                return Err(Error::NonPeriodicPath {
                    agent: owner,
                    reason: format!("{name} cycle is empty"),
                });
            }
        }
        Ok(StatePath {
            owner,
            good_cycle,
            bad_cycle,
        })
    }

    /// A path that is the same whether the agent is good or bad.
    pub fn stationary(owner: AgentId, cell: GridPos) -> Self {
        StatePath {
            owner,
            good_cycle: vec![cell],
            bad_cycle: vec![cell],
        }
    }

    pub fn cycle(&self, identity: Identity) -> &[GridPos] {
        match identity {
            Identity::Good => &self.good_cycle,
            Identity::Bad => &self.bad_cycle,
        }
    }

    pub fn period(&self, identity: Identity) -> usize {
        self.cycle(identity).len()
    }

    pub fn position_at(&self, t: usize, identity: Identity) -> GridPos {
        let cycle = self.cycle(identity);
        cycle[t % cycle.len()]
    }

    /// First consecutive pair (with wraparound) the motion graph forbids.
    pub fn invalid_move(&self, identity: Identity, motion: &MotionGraph) -> Option<(usize, GridPos, GridPos)> {
        let cycle = self.cycle(identity);
        (0..cycle.len()).find_map(|k| {
            let from = cycle[k];
            let to = cycle[(k + 1) % cycle.len()];
            (!motion.allows(from, to)).then_some((k, from, to))
        })
    }
}

/// `N_{i,t}`: agents whose transmission range covers agent `i`, plus `i` itself.
///
/// `j ∈ N_{i,t}` iff `q_{i,t}` lies within `comm[j]` of `q_{j,t}`. With uniform
/// radii the relation is symmetric.
pub fn neighbors_at(i: AgentId, positions: &[GridPos], comm: &[RangeSpec]) -> Result<AgentSet> {
    if i >= positions.len() {
        return Err(Error::UnknownAgent(i));
    }
    if comm.len() != positions.len() {
        return Err(Error::DimensionMismatch {
            left: comm.len(),
            right: positions.len(),
        });
    }
    let q_i = positions[i];
    let mut set = AgentSet::singleton(i);
    for (j, (&q_j, range)) in positions.iter().zip(comm).enumerate() {
        if q_j.chebyshev(q_i) <= range.radius {
            set.insert(j);
        }
    }
    Ok(set)
}

pub(crate) fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}
