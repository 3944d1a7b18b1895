use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CinError, Result};
use crate::gridworld::{extract_patch, step, window_index, Action, MapKind, State, WorldMap};
use crate::seed;

/// One observed transition: the patch around `s_t`, the action taken, and
/// where in the window the agent ended up.
#[derive(Debug, Clone, PartialEq)]
pub struct CapSample {
    pub kind: MapKind,
    pub patch: Vec<f64>,
    pub action: Action,
    /// Flat window index of the observed next state.
    pub label: usize,
}

impl CapSample {
    pub fn kernel_size(&self) -> usize {
        (self.patch.len() as f64).sqrt() as usize
    }

    pub fn label_one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.patch.len()];
        out[self.label] = 1.0;
        out
    }
}

/// Rolls a uniform random policy on each map and records every transition.
///
/// Each episode starts on a uniformly drawn traversable cell. Returns
/// `maps.len() * n_episodes * episode_len` samples in map, episode, step
/// order.
pub fn collect_samples(
    maps: &[WorldMap],
    n_episodes: usize,
    episode_len: usize,
    kernel_size: usize,
    seed: u64,
) -> Result<Vec<CapSample>> {
    if maps.is_empty() {
        return Err(CinError::Empty("no maps to sample from"));
    }
    let mut out = Vec::with_capacity(maps.len() * n_episodes * episode_len);
    for (m, map) in maps.iter().enumerate() {
        let free: Vec<State> = map.traversable_states().collect();
        if free.is_empty() {
            return Err(CinError::Generation(format!("map {m} has no free cells")));
        }
        let mut rng = seed::rng(seed::derive(seed, 0x5a4d, m as u64));
        for _ in 0..n_episodes {
            let mut s = *free.choose(&mut rng).unwrap();
            for _ in 0..episode_len {
                let a = Action::ALL[rng.gen_range(0..Action::ALL.len())];
                let next = step(map, s, a)?;
                let dr = next.row as isize - s.row as isize;
                let dc = next.col as isize - s.col as isize;
                let label = window_index(kernel_size, dr, dc).ok_or_else(|| {
                    CinError::InvalidParameter(format!("kernel size {kernel_size} too small"))
                })?;
                out.push(CapSample {
                    kind: map.kind(),
                    patch: extract_patch(map, s, kernel_size)?.values,
                    action: a,
                    label,
                });
                s = next;
            }
        }
    }
    Ok(out)
}

/// Margin lower bounds (relative to `delta_h_star`) of the curriculum bins,
/// easiest first. Anything below the last bound lands in the hardest bin.
pub const CURRICULUM_BOUNDS: [f64; 3] = [0.5, 0.2, 0.05];

/// Distance of the decisive height step from the threshold, in units of
/// `delta_h_star`. The decisive step is the relative height of the cell the
/// action tries to enter.
pub fn difficulty_margin(sample: &CapSample, delta_h_star: f64) -> f64 {
    let size = sample.kernel_size();
    let (dr, dc) = sample.action.offset();
    let j = window_index(size, dr, dc).expect("unit move fits any window of size >= 3");
    (sample.patch[j].abs() - delta_h_star).abs() / delta_h_star
}

/// Splits terrain samples into difficulty bins ordered easy to hard, each
/// shuffled with `seed`. Occupancy samples come back as one bin in their
/// original order.
pub fn curriculum_order(samples: &[CapSample], delta_h_star: f64, seed: u64) -> Vec<Vec<CapSample>> {
    let terrain = samples.iter().any(|s| s.kind == MapKind::Terrain3D);
    if !terrain || delta_h_star <= 0.0 {
        return vec![samples.to_vec()];
    }
    let mut bins = vec![Vec::new(); CURRICULUM_BOUNDS.len() + 1];
    for s in samples {
        let margin = difficulty_margin(s, delta_h_star);
        let bin = CURRICULUM_BOUNDS
            .iter()
            .position(|&b| margin >= b)
            .unwrap_or(CURRICULUM_BOUNDS.len());
        bins[bin].push(s.clone());
    }
    let mut rng = seed::rng(seed);
    for bin in &mut bins {
        bin.shuffle(&mut rng);
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{center_index, generate_maze, generate_terrain};
    use std::collections::HashMap;

    fn terrain_sample(gap: f64, action: Action) -> CapSample {
        let mut patch = vec![0.0; 9];
        let (dr, dc) = action.offset();
        patch[window_index(3, dr, dc).unwrap()] = gap;
        CapSample {
            kind: MapKind::Terrain3D,
            patch,
            action,
            label: center_index(3),
        }
    }

    #[test]
    fn sample_count_is_total_episode_length() {
        let maps: Vec<WorldMap> = (0..3).map(|s| generate_maze(8, s).unwrap()).collect();
        let samples = collect_samples(&maps, 4, 7, 3, 0).unwrap();
        assert_eq!(samples.len(), 3 * 4 * 7);
        assert_eq!(samples, collect_samples(&maps, 4, 7, 3, 0).unwrap());
    }

    #[test]
    fn blocked_moves_are_labelled_with_the_centre() {
        let mut map = WorldMap::open(3).unwrap();
        for s in map.clone().states() {
            if s != State::new(1, 1) {
                map.set(s, 0.0).unwrap();
            }
        }
        let samples = collect_samples(&[map], 1, 20, 3, 5).unwrap();
        assert!(samples.iter().all(|s| s.label == center_index(3)));
    }

    #[test]
    fn labels_are_a_function_of_patch_and_action() {
        let maps: Vec<WorldMap> = (0..20).map(|s| generate_maze(15, s).unwrap()).collect();
        let samples = collect_samples(&maps, 2, 40, 3, 1).unwrap();
        let mut seen: HashMap<(Vec<u64>, Action), usize> = HashMap::new();
        for s in &samples {
            let key = (s.patch.iter().map(|v| v.to_bits()).collect(), s.action);
            let label = *seen.entry(key).or_insert(s.label);
            assert_eq!(label, s.label);
        }
    }

    #[test]
    fn map_without_free_cells_is_an_error() {
        let map = WorldMap::occupancy(3, vec![0.0; 9]).unwrap();
        assert!(collect_samples(&[map], 1, 1, 3, 0).is_err());
        assert!(collect_samples(&[], 1, 1, 3, 0).is_err());
    }

    #[test]
    fn flat_step_is_easy_and_near_threshold_is_hardest() {
        let bins = curriculum_order(
            &[terrain_sample(0.0, Action::E), terrain_sample(0.24, Action::SW)],
            0.25,
            0,
        );
        assert_eq!(bins.len(), 4);
        assert_eq!(bins[0].len(), 1);
        assert_eq!(bins[0][0].action, Action::E);
        assert_eq!(bins[3].len(), 1);
        assert_eq!(bins[3][0].action, Action::SW);
    }

    #[test]
    fn bins_partition_the_input() {
        let maps: Vec<WorldMap> = (0..5).map(|s| generate_terrain(15, 0.3, 0.25, s).unwrap()).collect();
        let samples = collect_samples(&maps, 3, 30, 3, 2).unwrap();
        let bins = curriculum_order(&samples, 0.25, 9);
        let mut flat: Vec<String> = bins.iter().flatten().map(|s| format!("{s:?}")).collect();
        let mut orig: Vec<String> = samples.iter().map(|s| format!("{s:?}")).collect();
        flat.sort();
        orig.sort();
        assert_eq!(flat, orig);
    }

    #[test]
    fn occupancy_samples_pass_through() {
        let maps = vec![generate_maze(8, 0).unwrap()];
        let samples = collect_samples(&maps, 1, 10, 3, 0).unwrap();
        let bins = curriculum_order(&samples, 0.25, 0);
        assert_eq!(bins, vec![samples]);
    }
}
