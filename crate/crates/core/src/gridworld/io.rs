//! `CINMAP v1` text format.
//!
//! ```text
//! CINMAP v1 <2d|3d> <side> <delta_h_star>
//! <side rows of side whitespace-separated numbers>
//! ```
//!
//! Heights are written in shortest round-trip form, so a save/load cycle
//! reproduces every cell exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MapKind, WorldMap};
use crate::error::{CinError, Result};

const MAGIC: &str = "CINMAP";
const VERSION: &str = "v1";

pub fn write_map(map: &WorldMap) -> String {
    let side = map.side();
    let mut out = String::with_capacity(side * side * 4 + 32);
    let _ = writeln!(
        out,
        "{MAGIC} {VERSION} {} {side} {}",
        map.kind().tag(),
        map.delta_h_star()
    );
    for row in map.cells().chunks(side) {
        let line: Vec<String> = row
            .iter()
            .map(|v| match map.kind() {
                MapKind::Occupancy2D => format!("{}", *v as u8),
                MapKind::Terrain3D => format!("{v}"),
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_map(text: &str) -> Result<WorldMap> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CinError::Format("empty map file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != MAGIC || fields[1] != VERSION {
        return Err(CinError::Format(format!("bad map header: {header:?}")));
    }
    let kind = MapKind::from_tag(fields[2])
        .ok_or_else(|| CinError::Format(format!("unknown map kind {:?}", fields[2])))?;
    let side: usize = fields[3]
        .parse()
        .map_err(|_| CinError::Format(format!("bad side {:?}", fields[3])))?;
    let dh: f64 = fields[4]
        .parse()
        .map_err(|_| CinError::Format(format!("bad delta_h_star {:?}", fields[4])))?;

    let mut cells = Vec::with_capacity(side * side);
    for (r, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| CinError::Format(format!("bad number {tok:?} on row {r}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != side {
            return Err(CinError::Format(format!(
                "row {r} has {} values, expected {side}",
                row.len()
            )));
        }
        cells.extend(row);
    }
    if cells.len() != side * side {
        return Err(CinError::Format(format!(
            "expected {side} rows, found {}",
            cells.len() / side.max(1)
        )));
    }
    match kind {
        MapKind::Occupancy2D => WorldMap::occupancy(side, cells),
        MapKind::Terrain3D => WorldMap::terrain(side, cells, dh),
    }
}

pub fn save_map(map: &WorldMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_map(map))?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<WorldMap> {
    read_map(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_maze, generate_terrain};
    use proptest::prelude::*;

    #[test]
    fn maze_round_trip_is_exact() {
        let map = generate_maze(15, 3).unwrap();
        let text = write_map(&map);
        assert!(text.starts_with("CINMAP v1 2d 15 0\n"));
        let back = read_map(&text).unwrap();
        assert_eq!(back, map);
        assert_eq!(write_map(&back), text);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(read_map("").is_err());
        assert!(read_map("CINMAP v2 2d 3 0\n1 1 1\n1 1 1\n1 1 1\n").is_err());
        assert!(read_map("CINMAP v1 2d 3 0\n1 1 1\n1 1\n1 1 1\n").is_err());
        assert!(read_map("CINMAP v1 2d 3 0\n1 1 1\n1 1 1\n").is_err());
        assert!(read_map("CINMAP v1 2d 3 0\n1 1 1\n1 2 1\n1 1 1\n").is_err());
        assert!(read_map("CINMAP v1 4d 3 0\n1 1 1\n1 1 1\n1 1 1\n").is_err());
    }

    proptest! {
        #[test]
        fn terrain_round_trip_is_bit_exact(seed in any::<u64>(), side in 3usize..20, rough in 0.01f64..1.0) {
            let map = generate_terrain(side, rough, 0.25, seed).unwrap();
            let text = write_map(&map);
            let back = read_map(&text).unwrap();
            for (a, b) in map.cells().iter().zip(back.cells()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(write_map(&back), text);
        }
    }
}
