//! Grid worlds: occupancy mazes and heightfield terrain, the ground-truth
//! motion model, and local patch extraction.
//!
//! Cells are stored row-major. In an occupancy map `0.0` is an obstacle and
//! `1.0` is free space; in a terrain map every cell holds a height and a move
//! is legal when the height difference to the target is at most
//! `delta_h_star`. An illegal move leaves the agent where it is.

mod generate;
mod io;

pub use generate::{generate_maze, generate_terrain, DEFAULT_DELTA_H_STAR, DEFAULT_ROUGHNESS};
pub use io::{load_map, read_map, save_map, write_map};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CinError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapKind {
    Occupancy2D,
    Terrain3D,
}

impl MapKind {
    pub fn tag(self) -> &'static str {
        match self {
            MapKind::Occupancy2D => "2d",
            MapKind::Terrain3D => "3d",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "2d" => Some(MapKind::Occupancy2D),
            "3d" => Some(MapKind::Terrain3D),
            _ => None,
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub row: usize,
    pub col: usize,
}

impl State {
    pub const fn new(row: usize, col: usize) -> Self {
        State { row, col }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

/// The eight compass moves. The declaration order is the tie-break order
/// used by every argmax in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

pub const NUM_ACTIONS: usize = 8;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::N,
        Action::NE,
        Action::E,
        Action::SE,
        Action::S,
        Action::SW,
        Action::W,
        Action::NW,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    /// Row and column displacement of the move.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Action::N => (-1, 0),
            Action::NE => (-1, 1),
            Action::E => (0, 1),
            Action::SE => (1, 1),
            Action::S => (1, 0),
            Action::SW => (1, -1),
            Action::W => (0, -1),
            Action::NW => (-1, -1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::N => "N",
            Action::NE => "NE",
            Action::E => "E",
            Action::SE => "SE",
            Action::S => "S",
            Action::SW => "SW",
            Action::W => "W",
            Action::NW => "NW",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Square occupancy grid or heightfield.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    kind: MapKind,
    side: usize,
    cells: Vec<f64>,
    delta_h_star: f64,
}

impl WorldMap {
    /// Builds an occupancy map; every cell must be exactly 0 or 1.
    pub fn occupancy(side: usize, cells: Vec<f64>) -> Result<Self> {
        check_side(side, cells.len())?;
        if let Some(bad) = cells.iter().find(|&&c| c != 0.0 && c != 1.0) {
            return Err(CinError::InvalidParameter(format!(
                "occupancy cell value {bad} is not 0 or 1"
            )));
        }
        Ok(WorldMap {
            kind: MapKind::Occupancy2D,
            side,
            cells,
            delta_h_star: 0.0,
        })
    }

    /// Builds a heightfield with the given traversable height step.
    pub fn terrain(side: usize, cells: Vec<f64>, delta_h_star: f64) -> Result<Self> {
        check_side(side, cells.len())?;
        if !(delta_h_star.is_finite() && delta_h_star > 0.0) {
            return Err(CinError::InvalidParameter(format!(
                "delta_h_star must be positive, got {delta_h_star}"
            )));
        }
        if cells.iter().any(|h| !h.is_finite()) {
            return Err(CinError::InvalidParameter("terrain heights must be finite".into()));
        }
        Ok(WorldMap {
            kind: MapKind::Terrain3D,
            side,
            cells,
            delta_h_star,
        })
    }

    /// An obstacle-free occupancy map.
    pub fn open(side: usize) -> Result<Self> {
        WorldMap::occupancy(side, vec![1.0; side * side])
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Zero for occupancy maps.
    pub fn delta_h_star(&self) -> f64 {
        self.delta_h_star
    }

    pub fn num_cells(&self) -> usize {
        self.side * self.side
    }

    pub fn index(&self, s: State) -> usize {
        s.row * self.side + s.col
    }

    pub fn state(&self, index: usize) -> State {
        State::new(index / self.side, index % self.side)
    }

    pub fn contains(&self, s: State) -> bool {
        s.row < self.side && s.col < self.side
    }

    pub fn value(&self, s: State) -> f64 {
        self.cells[self.index(s)]
    }

    /// Sets one cell. Occupancy values other than 0/1 are rejected.
    pub fn set(&mut self, s: State, value: f64) -> Result<()> {
        self.check_bounds(s)?;
        match self.kind {
            MapKind::Occupancy2D if value != 0.0 && value != 1.0 => {
                return Err(CinError::InvalidParameter(format!(
                    "occupancy cell value {value} is not 0 or 1"
                )))
            }
            MapKind::Terrain3D if !value.is_finite() => {
                return Err(CinError::InvalidParameter("terrain heights must be finite".into()))
            }
            _ => {}
        }
        let i = self.index(s);
        self.cells[i] = value;
        Ok(())
    }

    /// Whether an agent may occupy `s`. Every terrain cell may be occupied.
    pub fn is_traversable(&self, s: State) -> bool {
        self.contains(s)
            && match self.kind {
                MapKind::Occupancy2D => self.value(s) == 1.0,
                MapKind::Terrain3D => true,
            }
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.num_cells()).map(move |i| self.state(i))
    }

    pub fn traversable_states(&self) -> impl Iterator<Item = State> + '_ {
        self.states().filter(move |&s| self.is_traversable(s))
    }

    /// The neighbour of `s` in direction `a`, if it lies on the grid.
    pub fn neighbor(&self, s: State, a: Action) -> Option<State> {
        let (dr, dc) = a.offset();
        let r = s.row.checked_add_signed(dr)?;
        let c = s.col.checked_add_signed(dc)?;
        let t = State::new(r, c);
        self.contains(t).then_some(t)
    }

    /// Whether a single move from `from` to the adjacent `to` is legal.
    pub fn can_move(&self, from: State, to: State) -> bool {
        match self.kind {
            MapKind::Occupancy2D => self.is_traversable(to),
            MapKind::Terrain3D => (self.value(to) - self.value(from)).abs() <= self.delta_h_star,
        }
    }

    pub(crate) fn check_bounds(&self, s: State) -> Result<()> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(CinError::OutOfBounds {
                row: s.row,
                col: s.col,
                side: self.side,
            })
        }
    }

    pub(crate) fn check_traversable(&self, s: State) -> Result<()> {
        self.check_bounds(s)?;
        if self.is_traversable(s) {
            Ok(())
        } else {
            Err(CinError::NotTraversable {
                row: s.row,
                col: s.col,
            })
        }
    }
}

fn check_side(side: usize, len: usize) -> Result<()> {
    if side < 3 {
        return Err(CinError::InvalidSide(side));
    }
    if len != side * side {
        return Err(CinError::ShapeMismatch {
            expected: side * side,
            found: len,
        });
    }
    Ok(())
}

/// Ground-truth transition: the moved-to cell, or `s` itself when blocked.
pub fn step(map: &WorldMap, s: State, a: Action) -> Result<State> {
    map.check_traversable(s)?;
    Ok(match map.neighbor(s, a) {
        Some(t) if map.can_move(s, t) => t,
        _ => s,
    })
}

/// An `F x F` window of map values centred on a state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPatch {
    pub center: State,
    pub size: usize,
    pub values: Vec<f64>,
}

/// Cuts the `size x size` window around `s`.
///
/// Cells off the grid read as obstacles (occupancy) or as a wall of height
/// `h(s) + 10 * delta_h_star` (terrain). Terrain patches store heights
/// relative to `h(s)`, so the centre entry is always zero.
pub fn extract_patch(map: &WorldMap, s: State, size: usize) -> Result<LocalPatch> {
    check_kernel_size(size)?;
    map.check_bounds(s)?;
    let half = (size / 2) as isize;
    let side = map.side() as isize;
    let mut values = Vec::with_capacity(size * size);
    let base = map.value(s);
    for dr in -half..=half {
        for dc in -half..=half {
            let r = s.row as isize + dr;
            let c = s.col as isize + dc;
            let inside = (0..side).contains(&r) && (0..side).contains(&c);
            let v = match map.kind() {
                MapKind::Occupancy2D => {
                    if inside {
                        map.value(State::new(r as usize, c as usize))
                    } else {
                        0.0
                    }
                }
                MapKind::Terrain3D => {
                    if inside {
                        map.value(State::new(r as usize, c as usize)) - base
                    } else {
                        10.0 * map.delta_h_star()
                    }
                }
            };
            values.push(v);
        }
    }
    Ok(LocalPatch {
        center: s,
        size,
        values,
    })
}

pub(crate) fn check_kernel_size(size: usize) -> Result<()> {
    if size % 2 == 0 {
        Err(CinError::EvenKernelSize(size))
    } else {
        Ok(())
    }
}

/// Position of a displacement inside a flattened `size x size` window.
pub fn window_index(size: usize, dr: isize, dc: isize) -> Option<usize> {
    let half = (size / 2) as isize;
    if dr.abs() > half || dc.abs() > half {
        return None;
    }
    Some(((dr + half) as usize) * size + (dc + half) as usize)
}

/// Index of the window centre.
pub fn center_index(size: usize) -> usize {
    (size / 2) * size + size / 2
}

/// Deterministic one-hot transition kernels at `s`, one `F x F` slice per
/// action in [`Action::ALL`] order.
pub fn true_kernel(map: &WorldMap, s: State, size: usize) -> Result<Vec<f64>> {
    check_kernel_size(size)?;
    let window = size * size;
    let mut out = vec![0.0; NUM_ACTIONS * window];
    for a in Action::ALL {
        let t = step(map, s, a)?;
        let dr = t.row as isize - s.row as isize;
        let dc = t.col as isize - s.col as isize;
        let j = window_index(size, dr, dc).ok_or_else(|| {
            CinError::InvalidParameter(format!(
                "kernel size {size} cannot hold a unit move"
            ))
        })?;
        out[a.index() * window + j] = 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open3() -> WorldMap {
        WorldMap::open(3).unwrap()
    }

    #[test]
    fn action_offsets_are_distinct_and_nonzero() {
        let mut seen = std::collections::HashSet::new();
        for a in Action::ALL {
            let off = a.offset();
            assert_ne!(off, (0, 0));
            assert!(seen.insert(off));
            assert_eq!(Action::from_index(a.index()), Some(a));
        }
        assert_eq!(seen.len(), NUM_ACTIONS);
    }

    #[test]
    fn step_moves_on_open_map() {
        let map = open3();
        assert_eq!(step(&map, State::new(1, 1), Action::E).unwrap(), State::new(1, 2));
    }

    #[test]
    fn step_blocked_by_obstacle_stays() {
        let mut map = open3();
        map.set(State::new(0, 1), 0.0).unwrap();
        assert_eq!(step(&map, State::new(1, 1), Action::N).unwrap(), State::new(1, 1));
    }

    #[test]
    fn step_blocked_by_height_wall_stays() {
        let mut cells = vec![0.0; 9];
        cells[5] = 0.9;
        let map = WorldMap::terrain(3, cells, 0.25).unwrap();
        assert_eq!(step(&map, State::new(1, 1), Action::E).unwrap(), State::new(1, 1));
        assert_eq!(step(&map, State::new(1, 1), Action::W).unwrap(), State::new(1, 0));
    }

    #[test]
    fn step_off_grid_stays() {
        let map = open3();
        assert_eq!(step(&map, State::new(0, 0), Action::NW).unwrap(), State::new(0, 0));
    }

    #[test]
    fn step_rejects_bad_states() {
        let mut map = open3();
        assert!(matches!(
            step(&map, State::new(3, 0), Action::N),
            Err(CinError::OutOfBounds { .. })
        ));
        map.set(State::new(1, 1), 0.0).unwrap();
        assert!(matches!(
            step(&map, State::new(1, 1), Action::N),
            Err(CinError::NotTraversable { .. })
        ));
    }

    #[test]
    fn corner_patch_is_padded_with_obstacles() {
        let map = open3();
        let p = extract_patch(&map, State::new(0, 0), 3).unwrap();
        assert_eq!(p.values.len(), 9);
        assert_eq!(p.values.iter().filter(|&&v| v == 0.0).count(), 5);
    }

    #[test]
    fn interior_patch_of_open_map_is_all_free() {
        let map = WorldMap::open(5).unwrap();
        let p = extract_patch(&map, State::new(2, 2), 3).unwrap();
        assert!(p.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn terrain_patch_is_recentered() {
        let cells: Vec<f64> = (0..25).map(|i| i as f64 * 0.1).collect();
        let map = WorldMap::terrain(5, cells, 0.25).unwrap();
        let p = extract_patch(&map, State::new(2, 3), 3).unwrap();
        assert_eq!(p.values[center_index(3)], 0.0);
        let corner = extract_patch(&map, State::new(0, 0), 3).unwrap();
        assert_eq!(corner.values[0], 2.5);
    }

    #[test]
    fn even_patch_size_is_rejected() {
        let map = open3();
        assert!(matches!(
            extract_patch(&map, State::new(1, 1), 4),
            Err(CinError::EvenKernelSize(4))
        ));
    }

    #[test]
    fn true_kernel_is_one_hot_per_action() {
        let mut map = WorldMap::open(4).unwrap();
        map.set(State::new(0, 1), 0.0).unwrap();
        let s = State::new(1, 1);
        let k = true_kernel(&map, s, 3).unwrap();
        for a in Action::ALL {
            let slice = &k[a.index() * 9..(a.index() + 1) * 9];
            assert_eq!(slice.iter().sum::<f64>(), 1.0);
            assert!(slice.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        // east is open, north is blocked
        assert_eq!(k[Action::E.index() * 9 + window_index(3, 0, 1).unwrap()], 1.0);
        assert_eq!(k[Action::N.index() * 9 + center_index(3)], 1.0);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(WorldMap::open(2), Err(CinError::InvalidSide(2))));
        assert!(WorldMap::occupancy(3, vec![0.5; 9]).is_err());
        assert!(WorldMap::terrain(3, vec![f64::NAN; 9], 0.2).is_err());
        assert!(WorldMap::terrain(3, vec![0.0; 9], 0.0).is_err());
        assert!(WorldMap::occupancy(3, vec![1.0; 8]).is_err());
    }
}
