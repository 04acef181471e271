//! Built-in layouts: an open room and two spiral mazes.
//!
//! The spirals use two-cell corridors. A block next to the start closes the
//! short way round, so the route from the start circles the outer ring before
//! turning inwards.

use super::MazeSpec;
use crate::error::{Error, Result};

pub const BUILTIN_NAMES: [&str; 3] = ["open", "large", "ultra"];

pub const OPEN: &str = "\
G.........G
...........
...........
...........
...........
.....G.....
...........
...........
...........
...........
G.........*
";

pub const LARGE: &str = "\
G....G....G
...........
..#######..
..#G....#..
..#..#..#..
G.#..#..#..
..#..#G.#..
..#..#..#..
..#..####..
.....#.....
G....#....S
";

pub const ULTRA: &str = "\
G...G..G..G...G
...............
..###########..
..#G...G....#..
..#........G#..
..#..#####..#..
G.#..#G..#..#.G
..#G.#...#..#..
..#..#..G#..#..
..#..#...#.G#..
..#..#G.....#..
..#G.#.....G#..
..#..########..
.....#....G....
G..G.#.G......S
";

/// Default episode horizon for each built-in layout.
pub fn default_horizon(name: &str) -> Option<usize> {
    match name {
        "open" | "large" => Some(100),
        "ultra" => Some(150),
        _ => None,
    }
}

/// Horizon for layouts read from files when none is given.
pub const FILE_HORIZON: usize = 100;

/// Reads `spec` as a layout file if such a path exists, otherwise as a
/// built-in name. `horizon` overrides the layout default.
pub fn load_layout(spec: &str, horizon: Option<usize>) -> Result<MazeSpec> {
    let path = std::path::Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return MazeSpec::parse(&text, horizon.unwrap_or(FILE_HORIZON));
    }
    let maze = builtin(spec)?;
    match horizon {
        Some(h) => maze.with_horizon(h),
        None => Ok(maze),
    }
}

pub fn builtin(name: &str) -> Result<MazeSpec> {
    let text = match name {
        "open" => OPEN,
        "large" => LARGE,
        "ultra" => ULTRA,
        other => return Err(Error::InvalidInput(format!("unknown built-in layout {other:?}"))),
    };
    MazeSpec::parse(text, default_horizon(name).expect("named layouts have horizons"))
}
