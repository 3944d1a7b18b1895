use rand::seq::SliceRandom;
use rand::Rng;

use super::WorldMap;
use crate::error::{CinError, Result};
use crate::seed;

/// Terrain roughness used when none is given.
pub const DEFAULT_ROUGHNESS: f64 = 0.5;

/// Default traversable height step for generated terrain.
pub const DEFAULT_DELTA_H_STAR: f64 = 0.25;

/// Lattice spacing of the coarse value-noise grid.
const NOISE_SPACING: usize = 4;

/// Carves a perfect maze with the recursive backtracker.
///
/// Maze cells sit at odd coordinates, the passages between them at the
/// mixed-parity positions, and everything else (including the outer ring)
/// is wall. All free cells form one 4-connected component.
pub fn generate_maze(side: usize, seed: u64) -> Result<WorldMap> {
    if side < 3 {
        return Err(CinError::InvalidSide(side));
    }
    let n = (side - 1) / 2;
    let mut rng = seed::rng(seed);
    let mut cells = vec![0.0; side * side];
    let mut visited = vec![false; n * n];
    let at = |i: usize, j: usize| (2 * i + 1) * side + 2 * j + 1;

    let start = (rng.gen_range(0..n), rng.gen_range(0..n));
    visited[start.0 * n + start.1] = true;
    cells[at(start.0, start.1)] = 1.0;
    let mut stack = vec![start];

    while let Some(&(i, j)) = stack.last() {
        let mut options: Vec<(usize, usize)> = Vec::with_capacity(4);
        if i > 0 {
            options.push((i - 1, j));
        }
        if i + 1 < n {
            options.push((i + 1, j));
        }
        if j > 0 {
            options.push((i, j - 1));
        }
        if j + 1 < n {
            options.push((i, j + 1));
        }
        options.retain(|&(a, b)| !visited[a * n + b]);
        match options.choose(&mut rng) {
            Some(&(a, b)) => {
                visited[a * n + b] = true;
                cells[at(a, b)] = 1.0;
                // knock out the wall between the two lattice cells
                let wall = (i + a + 1) * side + (j + b + 1);
                cells[wall] = 1.0;
                stack.push((a, b));
            }
            None => {
                stack.pop();
            }
        }
    }
    WorldMap::occupancy(side, cells)
}

/// Smoothed value noise with per-cell jitter, rescaled to `[0, 1]`.
///
/// `roughness` is the amplitude of the jitter relative to the smooth
/// component; larger values produce more steps steeper than
/// [`DEFAULT_DELTA_H_STAR`].
pub fn generate_terrain(side: usize, roughness: f64, delta_h_star: f64, seed: u64) -> Result<WorldMap> {
    if side < 3 {
        return Err(CinError::InvalidSide(side));
    }
    if !(roughness > 0.0 && roughness <= 1.0) {
        return Err(CinError::InvalidParameter(format!(
            "roughness must lie in (0, 1], got {roughness}"
        )));
    }
    let mut rng = seed::rng(seed);
    let lattice = side / NOISE_SPACING + 2;
    let coarse: Vec<f64> = (0..lattice * lattice).map(|_| rng.gen::<f64>()).collect();

    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut heights = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let y = r as f64 / NOISE_SPACING as f64;
            let x = c as f64 / NOISE_SPACING as f64;
            let (i, j) = (y.floor() as usize, x.floor() as usize);
            let (ty, tx) = (smooth(y - i as f64), smooth(x - j as f64));
            let g = |a: usize, b: usize| coarse[a * lattice + b];
            let top = g(i, j) * (1.0 - tx) + g(i, j + 1) * tx;
            let bottom = g(i + 1, j) * (1.0 - tx) + g(i + 1, j + 1) * tx;
            let base = top * (1.0 - ty) + bottom * ty;
            heights.push(base + roughness * rng.gen::<f64>());
        }
    }

    let lo = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for h in &mut heights {
        *h = if span > 0.0 { ((*h - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
    WorldMap::terrain(side, heights, delta_h_star)
}
