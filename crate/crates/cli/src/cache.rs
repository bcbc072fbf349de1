//! On-disk cache of solved slices.
//!
//! Entries are `<sha256>.bin` files holding a magic tag, a format version
//! and the bincode encoding of the value function and policy. The key
//! hashes the market, the grid, the penalty and the target inventory at
//! every Euler sub-step, so two problems share an entry only if the solver
//! would compute the same thing.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use xvenue_core::solver::{Policy, SliceProblem, Solver, ValueFunction};

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"XVSOLVE\0";
const VERSION: u32 = 1;

pub struct SolveCache {
    dir: PathBuf,
    pub hits: usize,
    pub misses: usize,
}

impl SolveCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SolveCache {
            dir: dir.into(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn key(problem: &SliceProblem<'_>) -> Result<String, CliError> {
        let k = problem.grid.resolved_substeps(problem.spec).max(1);
        let mut h = Sha256::new();
        h.update(MAGIC);
        h.update(VERSION.to_le_bytes());
        h.update(serde_json::to_vec(problem.spec).expect("spec serialises"));
        h.update(serde_json::to_vec(problem.grid).expect("grid serialises"));
        h.update(problem.penalty.eta_g.to_le_bytes());
        h.update(problem.start_time.to_le_bytes());
        let fine = problem.grid.n_t * k;
        for j in 0..=fine {
            let t = problem.start_time + problem.grid.dt * j as f64 / k as f64;
            h.update(problem.schedule.at(t).to_le_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    fn read(path: &Path) -> Option<(ValueFunction, Policy)> {
        let bytes = fs::read(path).ok()?;
        if bytes.len() < 12 || &bytes[..8] != MAGIC || bytes[8..12] != VERSION.to_le_bytes() {
            return None;
        }
        bincode::deserialize(&bytes[12..]).ok()
    }

    /// Returns the cached solution or solves and stores it. Corrupt or
    /// foreign entries are recomputed and overwritten.
    pub fn solve(&mut self, problem: SliceProblem<'_>) -> Result<(ValueFunction, Policy), CliError> {
        let key = Self::key(&problem)?;
        let path = self.path(&key);
        if let Some(hit) = Self::read(&path) {
            self.hits += 1;
            return Ok(hit);
        }
        self.misses += 1;
        let solved = Solver::new(problem)?.solve()?;
        let mut bytes = Vec::from(&MAGIC[..]);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend(bincode::serialize(&solved).map_err(|e| CliError::Numerical(e.to_string()))?);
        fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(solved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use xvenue_core::curve::Schedule;
    use xvenue_core::presets;
    use xvenue_core::solver::{PenaltySpec, SliceGrid};

    #[test]
    fn key_tracks_every_input_and_corrupt_entries_are_replaced() {
        let spec = presets::two_venue(presets::price(), 1.0).unwrap();
        let other = presets::two_venue(presets::price(), 0.5).unwrap();
        let grid = SliceGrid::new(6, 3, 5, 1.0, 5e4).unwrap();
        let schedule = Schedule::global(presets::curve()).unwrap();
        let base = SliceProblem {
            spec: &spec,
            grid: &grid,
            penalty: PenaltySpec { eta_g: 2e-4 },
            schedule: &schedule,
            start_time: 0.0,
        };
        let k = SolveCache::key(&base).unwrap();
        assert_eq!(k, SolveCache::key(&base).unwrap());
        let variants = [
            SliceProblem { spec: &other, ..base },
            SliceProblem {
                penalty: PenaltySpec { eta_g: 3e-4 },
                ..base
            },
            SliceProblem { start_time: 1.0, ..base },
        ];
        for v in &variants {
            assert_ne!(k, SolveCache::key(v).unwrap());
        }

        let dir = tempfile::tempdir().unwrap();
        let mut cache = SolveCache::new(dir.path());
        let fresh = cache.solve(base).unwrap();
        assert_eq!(cache.solve(base).unwrap(), fresh);
        assert_eq!((cache.hits, cache.misses), (1, 1));
        fs::write(dir.path().join(format!("{k}.bin")), b"garbage").unwrap();
        assert_eq!(cache.solve(base).unwrap(), fresh);
        assert_eq!((cache.hits, cache.misses), (1, 2));
    }
}
