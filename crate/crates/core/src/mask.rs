//! Mask algebra: pixel-wise boolean operators, exact Euclidean distance
//! transforms, geometric cues and class-hierarchy enforcement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BinaryMask, Grid, GridShape, RasterError, SoftMask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("invalid geometric cue {0}")]
    InvalidCue(GeometricCue),
    #[error("class hierarchy contains a cycle through {0:?}")]
    HierarchyCycle(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
}

fn zip_masks(
    a: &BinaryMask,
    b: &BinaryMask,
    f: impl Fn(bool, bool) -> bool,
) -> Result<BinaryMask, RasterError> {
    Ok(BinaryMask::from_grid(
        a.grid().zip_with(b.grid(), |&x, &y| f(x, y))?,
    ))
}

pub fn and(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, RasterError> {
    zip_masks(a, b, |x, y| x && y)
}

pub fn or(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, RasterError> {
    zip_masks(a, b, |x, y| x || y)
}

pub fn not(a: &BinaryMask) -> BinaryMask {
    BinaryMask::from_grid(a.grid().map(|&x| !x))
}

/// `a AND NOT b`.
pub fn remove(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, RasterError> {
    zip_masks(a, b, |x, y| x && !y)
}

/// Squared Euclidean distance (in pixels) from every pixel to the nearest set
/// pixel of `mask`, or `None` when the mask is empty.
///
/// Separable lower-envelope transform (Felzenszwalb & Huttenlocher); every
/// intermediate value is an integer held exactly in `f64`.
pub fn squared_distance_transform(mask: &BinaryMask) -> Option<Grid<f64>> {
    if mask.is_empty() {
        return None;
    }
    let shape = mask.shape();
    let (h, w) = (shape.height, shape.width);
    let far = ((h + w) * (h + w)) as f64 * 4.0;
    let mut data: Vec<f64> = mask
        .values()
        .iter()
        .map(|&b| if b { 0.0 } else { far })
        .collect();

    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for col in 0..w {
        for row in 0..h {
            f[row] = data[row * w + col];
        }
        lower_envelope(&f[..h], &mut d[..h], &mut v, &mut z);
        for row in 0..h {
            data[row * w + col] = d[row];
        }
    }
    for row in 0..h {
        f[..w].copy_from_slice(&data[row * w..(row + 1) * w]);
        lower_envelope(&f[..w], &mut d[..w], &mut v, &mut z);
        data[row * w..(row + 1) * w].copy_from_slice(&d[..w]);
    }
    Some(Grid::from_vec(shape, data).expect("shape preserved"))
}

// 1-D squared distance transform of the sampled function `f`.
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let intersect = |p: usize| {
            let pf = p as f64;
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
        };
        let mut s = intersect(v[k]);
        // z[0] is -inf, so this stops at k == 0
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Euclidean distance (pixels) to the nearest set pixel of `mask`; zero on
/// the mask. An empty mask yields `H + W` everywhere, larger than any
/// achievable distance.
pub fn distance_transform(mask: &BinaryMask) -> Grid<f64> {
    let shape = mask.shape();
    match squared_distance_transform(mask) {
        Some(sq) => sq.map(|v| v.sqrt()),
        None => Grid::filled(shape, empty_distance(shape)),
    }
}

pub fn empty_distance(shape: GridShape) -> f64 {
    (shape.height + shape.width) as f64
}

/// Labels 8-connected components of `mask`; unset pixels get `None`.
pub fn connected_components(mask: &BinaryMask) -> (Grid<Option<u32>>, u32) {
    let shape = mask.shape();
    let (h, w) = (shape.height, shape.width);
    let mut labels: Vec<Option<u32>> = vec![None; shape.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..shape.len() {
        if !mask.values()[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask.values()[j] && labels[j].is_none() {
                        labels[j] = Some(next);
                        stack.push(j);
                    }
                }
            }
        }
        next += 1;
    }
    (Grid::from_vec(shape, labels).expect("shape preserved"), next)
}

/// A spatial transform derived from prompt language ("near the road", "keep
/// to the center of the trail").
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometricCue {
    /// Pixels outside the mask within `radius` of it.
    Near { radius: f64 },
    /// Pixels outside the mask whose distance lies in `[inner, outer]`.
    WithinBand { inner: f64, outer: f64 },
    /// Inside the mask, graded from the boundary up to 1 on the medial axis
    /// of each connected component.
    Center,
    /// Pixels inside the mask within `width` of its boundary.
    Edge { width: f64 },
    Dilate { radius: f64 },
    Erode { radius: f64 },
}

impl GeometricCue {
    pub fn validate(&self) -> Result<(), MaskError> {
        let ok = |r: f64| r.is_finite() && r >= 0.0;
        let valid = match *self {
            GeometricCue::Near { radius }
            | GeometricCue::Dilate { radius }
            | GeometricCue::Erode { radius } => ok(radius),
            GeometricCue::Edge { width } => ok(width),
            GeometricCue::WithinBand { inner, outer } => ok(inner) && ok(outer) && inner <= outer,
            GeometricCue::Center => true,
        };
        if valid {
            Ok(())
        } else {
            Err(MaskError::InvalidCue(*self))
        }
    }
}

impl fmt::Display for GeometricCue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometricCue::Near { radius } => write!(f, "near({radius})"),
            GeometricCue::WithinBand { inner, outer } => write!(f, "within_band({inner}, {outer})"),
            GeometricCue::Center => write!(f, "center"),
            GeometricCue::Edge { width } => write!(f, "edge({width})"),
            GeometricCue::Dilate { radius } => write!(f, "dilate({radius})"),
            GeometricCue::Erode { radius } => write!(f, "erode({radius})"),
        }
    }
}

/// Dilation by the discrete disk `{o : |o| <= radius}`.
pub fn dilate(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let r2 = radius * radius;
    match squared_distance_transform(mask) {
        Some(sq) => BinaryMask::from_grid(sq.map(|&d| d <= r2)),
        None => mask.clone(),
    }
}

/// Erosion by the discrete disk; pixels beyond the image border do not erode.
pub fn erode(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let r2 = radius * radius;
    match squared_distance_transform(&not(mask)) {
        Some(sq) => BinaryMask::from_grid(sq.map(|&d| d > r2)),
        None => mask.clone(),
    }
}

fn indicator(grid: Grid<bool>) -> SoftMask {
    SoftMask::from(&BinaryMask::from_grid(grid))
}

/// Transforms `mask` by `cue` into a geometry-aware soft mask.
pub fn apply_cue(mask: &BinaryMask, cue: GeometricCue) -> Result<SoftMask, MaskError> {
    cue.validate()?;
    let shape = mask.shape();
    if mask.is_empty() {
        return Ok(SoftMask::zeros(shape));
    }
    let out = match cue {
        GeometricCue::Dilate { radius } => SoftMask::from(&dilate(mask, radius)),
        GeometricCue::Erode { radius } => SoftMask::from(&erode(mask, radius)),
        GeometricCue::Near { radius } => {
            let sq = squared_distance_transform(mask).expect("nonempty");
            let r2 = radius * radius;
            indicator(sq.map(|&d| d > 0.0 && d <= r2))
        }
        GeometricCue::WithinBand { inner, outer } => {
            let sq = squared_distance_transform(mask).expect("nonempty");
            let (i2, o2) = (inner * inner, outer * outer);
            indicator(sq.map(|&d| d > 0.0 && d >= i2 && d <= o2))
        }
        GeometricCue::Edge { width } => {
            let inner = inner_distance(mask);
            let w2 = width * width;
            indicator(inner.zip_with(mask.grid(), |&d, &m| m && d * d <= w2)?)
        }
        GeometricCue::Center => center(mask),
    };
    Ok(out)
}

// Distance from pixels of `mask` to the nearest unset pixel.
fn inner_distance(mask: &BinaryMask) -> Grid<f64> {
    distance_transform(&not(mask))
}

fn center(mask: &BinaryMask) -> SoftMask {
    let inner = inner_distance(mask);
    let (labels, count) = connected_components(mask);
    let mut peak = vec![0.0f64; count as usize];
    for (label, &d) in labels.values().iter().zip(inner.values()) {
        if let Some(l) = label {
            peak[*l as usize] = peak[*l as usize].max(d);
        }
    }
    let values = labels
        .values()
        .iter()
        .zip(inner.values())
        .map(|(label, &d)| match label {
            Some(l) => (d / peak[*l as usize]).min(1.0),
            None => 0.0,
        })
        .collect();
    SoftMask::new(mask.shape(), values).expect("ratios lie in [0, 1]")
}

/// `child ⊂ parent`: the child's pixels are carved out of the parent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HierarchyEdge {
    pub child: String,
    pub parent: String,
}

impl HierarchyEdge {
    pub fn new(child: impl Into<String>, parent: impl Into<String>) -> Self {
        Self {
            child: child.into(),
            parent: parent.into(),
        }
    }
}

/// Fails with the first class found on a cycle.
pub fn check_acyclic(edges: &[HierarchyEdge]) -> Result<(), MaskError> {
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in edges {
        if e.child == e.parent {
            return Err(MaskError::HierarchyCycle(e.child.clone()));
        }
        children.entry(&e.parent).or_default().push(&e.child);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit<'a>(
        node: &'a str,
        children: &BTreeMap<&'a str, Vec<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
    ) -> Result<(), MaskError> {
        match marks.get(node) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Active) => return Err(MaskError::HierarchyCycle(node.to_string())),
            None => {}
        }
        marks.insert(node, Mark::Active);
        for &c in children.get(node).into_iter().flatten() {
            visit(c, children, marks)?;
        }
        marks.insert(node, Mark::Done);
        Ok(())
    }
    let mut marks = BTreeMap::new();
    for &node in children.keys() {
        visit(node, &children, &mut marks)?;
    }
    Ok(())
}

/// All transitive descendants of each parent in `edges`.
pub fn descendants(edges: &[HierarchyEdge]) -> BTreeMap<String, BTreeSet<String>> {
    let mut direct: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in edges {
        direct.entry(&e.parent).or_default().push(&e.child);
    }
    let mut out = BTreeMap::new();
    for &parent in direct.keys() {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = direct[parent].clone();
        while let Some(c) = stack.pop() {
            if seen.insert(c.to_string()) {
                stack.extend(direct.get(c).into_iter().flatten().copied());
            }
        }
        out.insert(parent.to_string(), seen);
    }
    out
}

/// Removes every descendant's mask from its ancestors. Children and classes
/// outside the hierarchy pass through unchanged.
pub fn apply_hierarchy(
    masks: &BTreeMap<String, BinaryMask>,
    edges: &[HierarchyEdge],
) -> Result<BTreeMap<String, BinaryMask>, MaskError> {
    for e in edges {
        for name in [&e.child, &e.parent] {
            if !masks.contains_key(name) {
                return Err(MaskError::UnknownClass(name.clone()));
            }
        }
    }
    check_acyclic(edges)?;
    let mut out = masks.clone();
    for (parent, subs) in descendants(edges) {
        let mut carved = masks[&parent].clone();
        for child in &subs {
            carved = remove(&carved, &masks[child])?;
        }
        out.insert(parent, carved);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(h: usize, w: usize) -> GridShape {
        GridShape::new(h, w).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, s: GridShape, density: f64) -> BinaryMask {
        BinaryMask::from_fn(s, |_, _| rng.random_bool(density))
    }

    fn brute_sq_distance(mask: &BinaryMask, row: usize, col: usize) -> Option<usize> {
        let s = mask.shape();
        let mut best = None;
        for r in 0..s.height {
            for c in 0..s.width {
                if mask.get(r, c) {
                    let d = (r as isize - row as isize).pow(2) as usize
                        + (c as isize - col as isize).pow(2) as usize;
                    best = Some(best.map_or(d, |b: usize| b.min(d)));
                }
            }
        }
        best
    }

    #[test]
    fn boolean_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = shape(8, 8);
        let a = random_mask(&mut rng, s, 0.5);
        let b = random_mask(&mut rng, s, 0.5);
        assert_eq!(and(&a, &BinaryMask::ones(s)).unwrap(), a);
        assert_eq!(or(&a, &not(&a)).unwrap(), BinaryMask::ones(s));
        let conj = and(&a, &b).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(conj.get(r, c), a.get(r, c) && b.get(r, c));
            }
        }
        assert_eq!(remove(&a, &BinaryMask::zeros(s)).unwrap(), a);
        assert_eq!(remove(&a, &a).unwrap(), BinaryMask::zeros(s));
        assert!(and(&a, &BinaryMask::zeros(shape(8, 7))).is_err());
    }

    #[test]
    fn remove_is_and_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = shape(6, 9);
        for _ in 0..1000 {
            let a = random_mask(&mut rng, s, 0.5);
            let b = random_mask(&mut rng, s, 0.5);
            assert_eq!(remove(&a, &b).unwrap(), and(&a, &not(&b)).unwrap());
        }
    }

    #[test]
    fn edt_basics() {
        let s = shape(6, 6);
        let mut m = BinaryMask::zeros(s);
        m.set(0, 0, true);
        let d = distance_transform(&m);
        assert_eq!(*d.get(0, 0), 0.0);
        assert_eq!(*d.get(4, 3), 5.0);
        assert_eq!(*d.get(3, 4), 5.0);
        let empty = distance_transform(&BinaryMask::zeros(s));
        assert!(empty.values().iter().all(|&v| v == 12.0));
    }

    #[test]
    fn edt_matches_bruteforce_on_sparse_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for density in [0.02, 0.1, 0.5] {
            for _ in 0..10 {
                let s = shape(rng.random_range(1..17), rng.random_range(1..17));
                let m = random_mask(&mut rng, s, density);
                let d = distance_transform(&m);
                for r in 0..s.height {
                    for c in 0..s.width {
                        let expect = match brute_sq_distance(&m, r, c) {
                            Some(sq) => (sq as f64).sqrt(),
                            None => (s.height + s.width) as f64,
                        };
                        assert_eq!(*d.get(r, c), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn dilate_zero_is_identity_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = shape(12, 12);
        let m = random_mask(&mut rng, s, 0.1);
        assert_eq!(dilate(&m, 0.0), m);
        assert_eq!(erode(&m, 0.0), m);
        let radii = [0.0, 1.0, 1.5, 2.0, 3.2];
        for w in radii.windows(2) {
            let (small, big) = (dilate(&m, w[0]), dilate(&m, w[1]));
            assert_eq!(remove(&small, &big).unwrap(), BinaryMask::zeros(s));
            let (e_small, e_big) = (erode(&m, w[0]), erode(&m, w[1]));
            assert_eq!(remove(&e_big, &e_small).unwrap(), BinaryMask::zeros(s));
        }
    }

    #[test]
    fn dilate_matches_disk_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = shape(10, 13);
        let m = random_mask(&mut rng, s, 0.08);
        let r = 2.3f64;
        let d = dilate(&m, r);
        let e = erode(&m, r);
        let reach = r.floor() as isize;
        for row in 0..s.height as isize {
            for col in 0..s.width as isize {
                let mut hit = false;
                let mut all = true;
                for dr in -reach..=reach {
                    for dc in -reach..=reach {
                        if ((dr * dr + dc * dc) as f64) > r * r {
                            continue;
                        }
                        let (nr, nc) = (row + dr, col + dc);
                        if nr < 0 || nc < 0 || nr >= s.height as isize || nc >= s.width as isize {
                            continue;
                        }
                        let v = m.get(nr as usize, nc as usize);
                        hit |= v;
                        all &= v;
                    }
                }
                assert_eq!(d.get(row as usize, col as usize), hit);
                assert_eq!(e.get(row as usize, col as usize), all && m.get(row as usize, col as usize));
            }
        }
    }

    #[test]
    fn near_is_ring_outside_mask() {
        let s = shape(9, 9);
        let mut m = BinaryMask::zeros(s);
        m.set(4, 4, true);
        let near = apply_cue(&m, GeometricCue::Near { radius: 1.0 }).unwrap();
        assert_eq!(near.get(4, 4), 0.0);
        assert_eq!(near.get(3, 4), 1.0);
        assert_eq!(near.get(3, 3), 0.0);
        assert_eq!(near.values().iter().sum::<f64>(), 4.0);
        let band = apply_cue(&m, GeometricCue::WithinBand { inner: 2.0, outer: 2.0 }).unwrap();
        assert_eq!(band.values().iter().sum::<f64>(), 4.0);
        assert!(apply_cue(&m, GeometricCue::WithinBand { inner: 3.0, outer: 2.0 }).is_err());
        assert!(apply_cue(&m, GeometricCue::Near { radius: -1.0 }).is_err());
    }

    #[test]
    fn center_on_thin_line() {
        let s = shape(7, 10);
        let m = BinaryMask::from_fn(s, |r, c| r == 3 && c > 0 && c < 9);
        let center = apply_cue(&m, GeometricCue::Center).unwrap();
        for r in 0..7 {
            for c in 0..10 {
                assert_eq!(center.get(r, c), if m.get(r, c) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn center_on_wide_band_ramps_to_centerline() {
        // 11-row band across a 32-column image, rows 5..=15
        let s = shape(21, 32);
        let m = BinaryMask::from_fn(s, |r, _| (5..=15).contains(&r));
        let center = apply_cue(&m, GeometricCue::Center).unwrap();
        let inner_peak = (0..s.height)
            .flat_map(|r| (0..s.width).map(move |c| (r, c)))
            .filter(|&(r, c)| m.get(r, c))
            .map(|(r, c)| (brute_sq_distance(&not(&m), r, c).unwrap() as f64).sqrt())
            .fold(0.0, f64::max);
        assert_eq!(inner_peak, 6.0);
        for c in 0..s.width {
            for r in 5..=15 {
                let d = (brute_sq_distance(&not(&m), r, c).unwrap() as f64).sqrt();
                assert!((center.get(r, c) - d / inner_peak).abs() < 1e-12);
            }
            let column: Vec<f64> = (5..=15).map(|r| center.get(r, c)).collect();
            assert!(column[..6].windows(2).all(|w| w[0] < w[1]));
            assert!(column[5..].windows(2).all(|w| w[0] > w[1]));
            assert_eq!(column[5], 1.0);
        }
    }

    #[test]
    fn center_normalizes_per_component() {
        let s = shape(20, 20);
        let m = BinaryMask::from_fn(s, |r, c| (r == 2 && c < 10) || ((8..15).contains(&r) && c < 10));
        let center = apply_cue(&m, GeometricCue::Center).unwrap();
        assert_eq!(center.get(2, 5), 1.0);
        assert_eq!(center.get(11, 5), 1.0);
    }

    #[test]
    fn edge_keeps_boundary_band() {
        let s = shape(9, 9);
        let m = BinaryMask::from_fn(s, |r, c| (2..7).contains(&r) && (2..7).contains(&c));
        let edge = apply_cue(&m, GeometricCue::Edge { width: 1.0 }).unwrap();
        assert_eq!(edge.get(2, 4), 1.0);
        assert_eq!(edge.get(4, 4), 0.0);
        assert_eq!(edge.get(0, 0), 0.0);
        assert_eq!(edge.values().iter().sum::<f64>(), 16.0);
    }

    #[test]
    fn cues_on_empty_mask_are_empty() {
        let s = shape(4, 4);
        let empty = BinaryMask::zeros(s);
        for cue in [
            GeometricCue::Center,
            GeometricCue::Near { radius: 100.0 },
            GeometricCue::Dilate { radius: 100.0 },
            GeometricCue::Edge { width: 2.0 },
        ] {
            assert_eq!(apply_cue(&empty, cue).unwrap(), SoftMask::zeros(s));
        }
    }

    fn named(pairs: Vec<(&str, BinaryMask)>) -> BTreeMap<String, BinaryMask> {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn hierarchy_carves_parents() {
        let s = shape(4, 4);
        let grass = BinaryMask::ones(s);
        let field = BinaryMask::from_fn(s, |r, c| r < 2 && c < 2);
        let masks = named(vec![("grass", grass.clone()), ("baseball field", field.clone())]);
        assert_eq!(apply_hierarchy(&masks, &[]).unwrap(), masks);
        let out = apply_hierarchy(&masks, &[HierarchyEdge::new("baseball field", "grass")]).unwrap();
        assert_eq!(out["grass"], remove(&grass, &field).unwrap());
        assert_eq!(out["baseball field"], field);
    }

    #[test]
    fn hierarchy_chain_is_transitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = shape(8, 8);
        let (a, b, c) = (
            random_mask(&mut rng, s, 0.3),
            random_mask(&mut rng, s, 0.5),
            random_mask(&mut rng, s, 0.7),
        );
        let masks = named(vec![("a", a.clone()), ("b", b.clone()), ("c", c.clone())]);
        let edges = [HierarchyEdge::new("a", "b"), HierarchyEdge::new("b", "c")];
        let out = apply_hierarchy(&masks, &edges).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                let (av, bv, cv) = (a.get(r, col), b.get(r, col), c.get(r, col));
                assert_eq!(out["a"].get(r, col), av);
                assert_eq!(out["b"].get(r, col), bv && !av);
                assert_eq!(out["c"].get(r, col), cv && !(av || bv));
            }
        }
    }

    #[test]
    fn hierarchy_errors() {
        let s = shape(2, 2);
        let masks = named(vec![("a", BinaryMask::ones(s)), ("b", BinaryMask::ones(s))]);
        let cyc = [HierarchyEdge::new("a", "b"), HierarchyEdge::new("b", "a")];
        assert!(matches!(apply_hierarchy(&masks, &cyc), Err(MaskError::HierarchyCycle(_))));
        assert!(matches!(
            apply_hierarchy(&masks, &[HierarchyEdge::new("a", "a")]),
            Err(MaskError::HierarchyCycle(_))
        ));
        assert_eq!(
            apply_hierarchy(&masks, &[HierarchyEdge::new("lava", "a")]),
            Err(MaskError::UnknownClass("lava".into()))
        );
    }
}
