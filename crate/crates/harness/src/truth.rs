//! Monte Carlo truth ensembles with an on-disk cache.
//!
//! The cache stores the full truth-ensemble states at each snapshot, keyed by
//! a hash of everything that determines them. Density fields on any grid are
//! derived from the cached states, so one entry serves every grid choice.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use cgpdf::simulate::{select_columns, simulate_snapshots};
use cgpdf::EnsemblePaths;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Prepared;
use crate::error::{HarnessError, Result, StageExt};

/// Truth-ensemble states at one snapshot, `members × dim` row-major.
#[derive(Debug, Clone)]
pub struct TruthSnapshot {
    pub t: f64,
    pub dim: usize,
    pub states: Vec<f64>,
}

impl TruthSnapshot {
    pub fn columns(&self, dims: &[usize]) -> Vec<f64> {
        select_columns(&self.states, self.dim, dims)
    }

    pub fn members(&self) -> usize {
        self.states.len() / self.dim
    }
}

#[derive(Serialize)]
struct CacheKey<'a> {
    model: String,
    params: &'a cgpdf::models::ModelParams,
    init: &'a crate::config::InitSpec,
    t: f64,
    members: usize,
    dt: f64,
    seed: u64,
}

/// Cache key of the truth ensemble at time `t`.
pub fn cache_key(p: &Prepared, t: f64) -> String {
    let key = CacheKey {
        model: p.model_id.to_string(),
        params: &p.params,
        init: &p.config.init,
        t,
        members: p.config.mc_particles,
        dt: p.config.dt,
        seed: p.config.truth_seed(),
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("cache keys serialize")))
}

fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("truth-{key}.bin"))
}

fn read_cached(path: &Path, dim: usize, members: usize) -> Option<Vec<f64>> {
    let file = File::open(path).ok()?;
    let paths = EnsemblePaths::read_from(BufReader::new(file)).ok()?;
    if paths.n_members != members || paths.n_obs + paths.n_hid != dim || paths.n_times() != 1 {
        log::warn!("ignoring mismatched truth cache entry {}", path.display());
        return None;
    }
    let mut states = vec![0.0; members * dim];
    for m in 0..members {
        let row = &mut states[m * dim..(m + 1) * dim];
        row[..paths.n_obs].copy_from_slice(paths.obs_path(m));
        row[paths.n_obs..].copy_from_slice(paths.hid_path(m));
    }
    Some(states)
}

fn write_cached(p: &Prepared, path: &Path, t: f64, states: &[f64]) -> Result<()> {
    let (n_obs, n_hid, dim) = (p.system.n_obs(), p.system.n_hid(), p.system.dim());
    let members = states.len() / dim;
    let paths = EnsemblePaths {
        times: vec![t],
        n_members: members,
        n_obs,
        n_hid,
        obs: states.chunks(dim).flat_map(|r| r[..n_obs].to_vec()).collect(),
        hid: states.chunks(dim).flat_map(|r| r[n_obs..].to_vec()).collect(),
        seed: p.config.truth_seed(),
        dt: p.config.dt,
    };
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(HarnessError::io(&tmp))?;
    paths.write_to(BufWriter::new(file)).stage("truth cache write")?;
    std::fs::rename(&tmp, path).map_err(HarnessError::io(path))
}

/// Truth-ensemble states at every configured snapshot, read from
/// `cache_dir` where available and simulated otherwise.
pub fn truth_snapshots(p: &Prepared, cache_dir: Option<&Path>) -> Result<Vec<TruthSnapshot>> {
    let cfg = &p.config;
    let dim = p.system.dim();
    let mut found: Vec<Option<Vec<f64>>> = vec![None; cfg.snapshots.len()];
    if let Some(dir) = cache_dir {
        for (slot, &t) in found.iter_mut().zip(&cfg.snapshots) {
            *slot = read_cached(&cache_path(dir, &cache_key(p, t)), dim, cfg.mc_particles);
        }
    }
    let missing: Vec<f64> = cfg
        .snapshots
        .iter()
        .zip(&found)
        .filter(|(_, f)| f.is_none())
        .map(|(&t, _)| t)
        .collect();
    if !missing.is_empty() {
        log::info!("simulating {} truth members to t = {:?}", cfg.mc_particles, missing);
        let fresh = simulate_snapshots(p.system.as_ref(), &p.init, cfg.mc_particles, cfg.dt, &missing, cfg.truth_seed())
            .stage("truth simulation")?;
        if let Some(dir) = cache_dir {
            std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
            for (&t, states) in missing.iter().zip(&fresh) {
                write_cached(p, &cache_path(dir, &cache_key(p, t)), t, states)?;
            }
        }
        let mut fresh = fresh.into_iter();
        for slot in found.iter_mut().filter(|f| f.is_none()) {
            *slot = fresh.next();
        }
    }
    Ok(cfg
        .snapshots
        .iter()
        .zip(found)
        .map(|(&t, states)| TruthSnapshot { t, dim, states: states.expect("every snapshot is filled") })
        .collect())
}
