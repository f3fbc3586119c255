//! Synthetic aerial scene with exact ground truth, a matching color palette
//! for the fixture backends, and canned model answers for its prompt.

use std::path::Path;

use image::{Rgb, RgbImage};
use overseec_core::metrics::{RankMap, SemanticMap};
use overseec_core::raster::{Grid, GridShape};

use crate::backends::Palette;
use crate::llm::{StubBackend, Task};

pub const SIZE: usize = 256;

pub const PROMPT: &str = "Drive to the target. Stay on the roads as much as possible, cross grass when needed, \
keep out of the pond and never go through buildings.";

/// Scene classes in semantic-id order with their colors.
pub const CLASSES: [(&str, [u8; 3]); 5] = [
    ("grass", [96, 160, 64]),
    ("road", [128, 128, 128]),
    ("water", [40, 80, 200]),
    ("tree", [24, 90, 36]),
    ("building", [200, 64, 48]),
];

pub const RANKS: [(&str, u32); 6] = [
    ("road", 1),
    ("trail", 1),
    ("grass", 2),
    ("water", 3),
    ("tree", 4),
    ("building", 5),
];

pub const ENTITIES_RESPONSE: &str = r#"{"classes": [
  {"name": "road", "geometry": "linear"},
  {"name": "grass", "geometry": "areal"},
  {"name": "water", "geometry": "areal"},
  {"name": "building", "geometry": "areal"}
]}"#;

pub const COMPOSE_RESPONSE: &str = r#"```dsl
class "road" linear;
class "grass" areal;
class "water" areal;
class "tree" areal;
class "building" areal;
cost M("road"): 0.1;
cost M("grass"): 1;
cost M("tree"): 4;
cost M("water"): 6;
cost M("building"): 10;
```"#;

pub fn ranks_response() -> String {
    let items: Vec<String> = RANKS
        .iter()
        .map(|(n, r)| format!("{{\"name\": \"{n}\", \"rank\": {r}}}"))
        .collect();
    format!("{{\"ranks\": [{}]}}", items.join(", "))
}

pub fn rank_map() -> RankMap {
    RankMap::from_pairs(RANKS).expect("ranks are positive")
}

pub fn palette() -> Palette {
    Palette::new(CLASSES)
}

const ROAD_CENTERS: [usize; 3] = [40, 128, 216];
const ROAD_HALF_WIDTH: usize = 2;

fn class_at(row: usize, col: usize) -> usize {
    let on_road = |v: usize| ROAD_CENTERS.iter().any(|&c| v.abs_diff(c) <= ROAD_HALF_WIDTH);
    if on_road(row) || on_road(col) {
        return 1;
    }
    let (r, c) = (row as f64, col as f64);
    // pond
    if ((r - 84.0) / 26.0).powi(2) + ((c - 172.0) / 34.0).powi(2) <= 1.0 {
        return 2;
    }
    // tree stands
    if ((r - 176.0) / 14.0).powi(2) + ((c - 70.0) / 18.0).powi(2) <= 1.0
        || ((r - 60.0) / 10.0).powi(2) + ((c - 84.0) / 10.0).powi(2) <= 1.0
    {
        return 3;
    }
    const BUILDINGS: [(usize, usize, usize, usize); 6] = [
        (52, 52, 24, 20),
        (140, 140, 30, 24),
        (150, 60, 18, 40),
        (180, 180, 28, 26),
        (228, 96, 16, 22),
        (96, 224, 22, 18),
    ];
    if BUILDINGS
        .iter()
        .any(|&(r0, c0, h, w)| (r0..r0 + h).contains(&row) && (c0..c0 + w).contains(&col))
    {
        return 4;
    }
    0
}

/// Ground-truth class ids, indexing [`CLASSES`].
pub fn semantic_map() -> SemanticMap {
    let shape = GridShape::new(SIZE, SIZE).expect("nonzero");
    let ids = Grid::from_fn(shape, |r, c| class_at(r, c) as u32);
    SemanticMap::new(CLASSES.iter().map(|(n, _)| n.to_string()).collect(), ids).expect("ids index the class list")
}

/// The scene rendered in palette colors.
pub fn image() -> RgbImage {
    RgbImage::from_fn(SIZE as u32, SIZE as u32, |x, y| Rgb(CLASSES[class_at(y as usize, x as usize)].1))
}

/// Writes the palette and the stub answers for [`PROMPT`] under `dir`.
pub fn write_fixtures(dir: &Path) -> std::io::Result<()> {
    palette().save(dir)?;
    StubBackend::record(dir, PROMPT, Task::Entities, None, ENTITIES_RESPONSE)?;
    StubBackend::record(dir, PROMPT, Task::Compose, None, COMPOSE_RESPONSE)?;
    StubBackend::record(dir, PROMPT, Task::Ranks, None, &ranks_response())?;
    Ok(())
}
