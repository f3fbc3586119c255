//! Shortest paths over a costmap on the 8-connected pixel grid.
//!
//! Stepping from `u` to a neighbour `v` costs
//! `len * (EPSILON + (C(u) + C(v)) / 2)` with `len` 1 for orthogonal and
//! `sqrt(2)` for diagonal moves. Corner cutting is allowed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Costmap, Grid, GridShape, Pixel, RasterError};

pub const EPSILON: f64 = 0.01;

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("pixel {pixel:?} lies outside the {shape} grid")]
    OutOfBounds { pixel: Pixel, shape: GridShape },
    #[error("a {0} grid has no two distinct pixels to sample")]
    DegenerateGrid(GridShape),
    #[error("down-sampling factor must be at least 1")]
    InvalidFactor,
    #[error("path is invalid: {0}")]
    InvalidPath(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// An ordered sequence of 8-adjacent pixels with its accumulated cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub pixels: Vec<Pixel>,
    pub cost: f64,
}

impl Path {
    /// Number of pixels the path covers.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Checks the path is nonempty, in bounds, 8-connected and simple.
    pub fn check(&self, shape: GridShape) -> Result<(), PlanError> {
        if self.pixels.is_empty() {
            return Err(PlanError::InvalidPath("no pixels".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, p) in self.pixels.iter().enumerate() {
            if !shape.contains(*p) {
                return Err(PlanError::OutOfBounds { pixel: *p, shape });
            }
            if !seen.insert(*p) {
                return Err(PlanError::InvalidPath(format!("pixel {p:?} repeats")));
            }
            if i > 0 && !adjacent(self.pixels[i - 1], *p) {
                return Err(PlanError::InvalidPath(format!("step {} is not to a neighbour", i)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanQuery {
    pub start: Pixel,
    pub goal: Pixel,
}

impl PlanQuery {
    pub fn new(start: Pixel, goal: Pixel) -> Self {
        Self { start, goal }
    }

    pub fn check(&self, shape: GridShape) -> Result<(), PlanError> {
        for pixel in [self.start, self.goal] {
            if !shape.contains(pixel) {
                return Err(PlanError::OutOfBounds { pixel, shape });
            }
        }
        Ok(())
    }
}

fn adjacent(a: Pixel, b: Pixel) -> bool {
    let dx = a.x.abs_diff(b.x);
    let dy = a.y.abs_diff(b.y);
    dx <= 1 && dy <= 1 && (dx, dy) != (0, 0)
}

/// Weight of the undirected edge between neighbours with costs `cu`, `cv`.
pub fn step_cost(cu: f64, cv: f64, diagonal: bool) -> f64 {
    let len = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
    len * (EPSILON + 0.5 * (cu + cv))
}

/// Accumulated cost of walking `pixels` in order, summed step by step from
/// the first pixel.
pub fn path_cost(costmap: &Costmap, pixels: &[Pixel]) -> f64 {
    pixels.windows(2).fold(0.0, |acc, w| {
        let (u, v) = (w[0], w[1]);
        let diagonal = u.x != v.x && u.y != v.y;
        acc + step_cost(costmap.get(u.y, u.x), costmap.get(v.y, v.x), diagonal)
    })
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed for a min-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn pixel_of(shape: GridShape, index: usize) -> Pixel {
    Pixel::new(index % shape.width, index / shape.width)
}

/// Dijkstra from `query.start` to `query.goal`.
///
/// Among equal-cost predecessors the lexicographically smallest `(x, y)`
/// wins, so the returned path is deterministic.
pub fn plan(costmap: &Costmap, query: PlanQuery) -> Result<Path, PlanError> {
    let shape = costmap.shape();
    query.check(shape)?;
    let c = costmap.values();
    let n = shape.len();
    let start = shape.index(query.start.y, query.start.x);
    let goal = shape.index(query.goal.y, query.goal.x);

    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(Entry { dist: 0.0, index: start });

    while let Some(Entry { dist: d, index: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == goal {
            break;
        }
        let (ux, uy) = (u % shape.width, u / shape.width);
        for (dx, dy) in NEIGHBOURS {
            let (Some(vx), Some(vy)) = (ux.checked_add_signed(dx), uy.checked_add_signed(dy)) else {
                continue;
            };
            if vx >= shape.width || vy >= shape.height {
                continue;
            }
            let v = vy * shape.width + vx;
            if done[v] {
                continue;
            }
            let nd = d + step_cost(c[u], c[v], dx != 0 && dy != 0);
            let better = match nd.total_cmp(&dist[v]) {
                Ordering::Less => true,
                Ordering::Equal => pred[v].is_some_and(|p| (ux, uy) < (p % shape.width, p / shape.width)),
                Ordering::Greater => false,
            };
            if better {
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Entry { dist: nd, index: v });
                }
                pred[v] = Some(u);
            }
        }
    }

    let mut pixels = vec![pixel_of(shape, goal)];
    let mut at = goal;
    while let Some(p) = pred[at] {
        pixels.push(pixel_of(shape, p));
        at = p;
    }
    pixels.reverse();
    Ok(Path {
        pixels,
        cost: dist[goal],
    })
}

/// Straight-line pixel path (Bresenham) from start to goal, costed on
/// `costmap`. Used as the preference-blind baseline.
pub fn straight_line(costmap: &Costmap, query: PlanQuery) -> Result<Path, PlanError> {
    query.check(costmap.shape())?;
    let (x0, y0) = (query.start.x as i64, query.start.y as i64);
    let (x1, y1) = (query.goal.x as i64, query.goal.y as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut pixels = Vec::new();
    loop {
        pixels.push(Pixel::new(x as usize, y as usize));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    let cost = path_cost(costmap, &pixels);
    Ok(Path { pixels, cost })
}

/// Draws `n` start/goal pairs uniformly over the grid with `start != goal`,
/// reproducibly from `seed`.
pub fn sample_queries(shape: GridShape, n: usize, seed: u64) -> Result<Vec<PlanQuery>, PlanError> {
    let len = shape.len();
    if len < 2 {
        return Err(PlanError::DegenerateGrid(shape));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let s = rng.random_range(0..len);
            let mut g = rng.random_range(0..len - 1);
            if g >= s {
                g += 1;
            }
            PlanQuery::new(pixel_of(shape, s), pixel_of(shape, g))
        })
        .collect())
}

/// Block-mean down-sampling; edge blocks may be partial.
pub fn downsample(costmap: &Costmap, factor: usize) -> Result<Costmap, PlanError> {
    if factor == 0 {
        return Err(PlanError::InvalidFactor);
    }
    let shape = costmap.shape();
    let coarse = GridShape::new(shape.height.div_ceil(factor), shape.width.div_ceil(factor))?;
    let grid = Grid::from_fn(coarse, |r, c| {
        let rows = r * factor..((r + 1) * factor).min(shape.height);
        let cols = c * factor..((c + 1) * factor).min(shape.width);
        let count = rows.len() * cols.len();
        let sum: f64 = rows
            .flat_map(|y| cols.clone().map(move |x| (y, x)))
            .map(|(y, x)| costmap.get(y, x))
            .sum();
        (sum / count as f64).clamp(0.0, 1.0)
    });
    Ok(Costmap::from_grid(grid)?)
}

/// Plans on a block-mean down-sampled grid and lifts the result back to
/// native pixels by joining block centres with straight segments. The
/// returned cost is measured on the native costmap. `factor` 1 is [`plan`].
pub fn plan_downsampled(costmap: &Costmap, query: PlanQuery, factor: usize) -> Result<Path, PlanError> {
    if factor <= 1 {
        return if factor == 0 { Err(PlanError::InvalidFactor) } else { plan(costmap, query) };
    }
    let shape = costmap.shape();
    query.check(shape)?;
    let coarse = downsample(costmap, factor)?;
    let to_coarse = |p: Pixel| Pixel::new(p.x / factor, p.y / factor);
    let coarse_path = plan(&coarse, PlanQuery::new(to_coarse(query.start), to_coarse(query.goal)))?;

    let centre = |p: Pixel| {
        let x1 = ((p.x + 1) * factor).min(shape.width);
        let y1 = ((p.y + 1) * factor).min(shape.height);
        Pixel::new((p.x * factor + x1 - 1) / 2, (p.y * factor + y1 - 1) / 2)
    };
    let mut anchors: Vec<Pixel> = coarse_path.pixels.iter().map(|&p| centre(p)).collect();
    anchors[0] = query.start;
    *anchors.last_mut().expect("plan returns at least one pixel") = query.goal;
    if anchors.len() == 1 && query.start != query.goal {
        anchors.push(query.goal);
    }

    let mut pixels: Vec<Pixel> = vec![anchors[0]];
    for w in anchors.windows(2) {
        let seg = straight_line(costmap, PlanQuery::new(w[0], w[1]))?;
        pixels.extend_from_slice(&seg.pixels[1..]);
    }
    let pixels = erase_loops(pixels);
    let cost = path_cost(costmap, &pixels);
    Ok(Path { pixels, cost })
}

// Cuts out any cycle so the walk visits each pixel once.
fn erase_loops(walk: Vec<Pixel>) -> Vec<Pixel> {
    let mut out: Vec<Pixel> = Vec::with_capacity(walk.len());
    let mut at: HashMap<Pixel, usize> = HashMap::new();
    for p in walk {
        if let Some(&i) = at.get(&p) {
            for q in out.drain(i + 1..) {
                at.remove(&q);
            }
        } else {
            at.insert(p, out.len());
            out.push(p);
        }
    }
    out
}
