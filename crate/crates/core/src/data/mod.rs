//! Demonstrations, the trajectory container, and the samplers feeding
//! training: mixture sampling across sources and contiguous video slices.

pub mod container;
pub mod import;

pub use container::{write_dataset, DatasetWriter, TrajectoryDataset};

use crate::error::{Error, Result};
use crate::sprites::{
    render, sample_discovery_scene, scripted_expert, ShiftSpec, SpriteEnv, TaskKind, TaskSpec,
    ViewId,
};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One expert trajectory: frames per view for `T+1` observation steps,
/// proprioception, `T` actions, and task metadata.
#[derive(Debug, Clone)]
pub struct Demonstration {
    pub task: String,
    pub language: String,
    pub source: String,
    pub seed: u64,
    /// `frames[view][t]`, `t ∈ 0..=T`.
    pub frames: Vec<Vec<RgbImage>>,
    /// `proprio[t]`, `t ∈ 0..=T`.
    pub proprio: Vec<Vec<f32>>,
    /// `actions[t]`, `t ∈ 0..T`.
    pub actions: Vec<Vec<f32>>,
}

impl Demonstration {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t1 = self.proprio.len();
        if t1 == 0 {
            return Err(Error::contract("demonstration has no observations"));
        }
        if self.actions.len() + 1 != t1 {
            return Err(Error::contract(format!(
                "demonstration has {} observations but {} actions",
                t1,
                self.actions.len()
            )));
        }
        for view in &self.frames {
            if view.len() != t1 {
                return Err(Error::contract("frame count does not match observations"));
            }
        }
        if self
            .actions
            .iter()
            .flatten()
            .any(|a| !a.is_finite())
        {
            return Err(Error::contract("demonstration actions must be finite"));
        }
        Ok(())
    }
}

/// Per-source sampling weights; non-negative and normalized.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixtureSpec {
    pub weights: BTreeMap<String, f64>,
}

impl MixtureSpec {
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(weights: BTreeMap<String, f64>) -> Result<Self> {
        let spec = MixtureSpec { weights };
        spec.validate()?;
        Ok(spec)
    }

    /// Equal weight per source.
    pub fn balanced(sources: &[&str]) -> Self {
        let w = 1.0 / sources.len() as f64;
        MixtureSpec {
            weights: sources.iter().map(|s| (s.to_string(), w)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::contract("mixture needs at least one source"));
        }
        if self.weights.values().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::contract("mixture weights must be non-negative"));
        }
        let total: f64 = self.weights.values().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::contract(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Draws `batch` records: the source of each record i.i.d. from the
/// mixture weights, the record uniform within its source.
pub fn sample_mixture<'a>(
    datasets: &BTreeMap<String, &'a TrajectoryDataset>,
    spec: &MixtureSpec,
    batch: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<(String, usize)>> {
    spec.validate()?;
    for (source, w) in &spec.weights {
        if *w > 0.0 {
            let ds = datasets.get(source).ok_or_else(|| {
                Error::contract(format!("mixture source {source} has no dataset"))
            })?;
            if ds.is_empty() {
                return Err(Error::contract(format!(
                    "mixture source {source} is empty but has weight {w}"
                )));
            }
        }
    }
    let sources: Vec<(&String, f64)> = spec.weights.iter().map(|(k, v)| (k, *v)).collect();
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = sources.last().expect("non-empty mixture").0;
        for (name, w) in &sources {
            acc += w;
            if u < acc {
                chosen = name;
                break;
            }
        }
        let ds = datasets[chosen.as_str()];
        let idx = rng.gen_range(0..ds.len());
        out.push((chosen.clone(), idx));
    }
    Ok(out)
}

/// Uniformly chosen contiguous window of `length` observation steps.
/// Returns the starting step.
pub fn sample_video_slice(
    demo: &Demonstration,
    length: usize,
    rng: &mut ChaCha12Rng,
) -> Result<usize> {
    let frames = demo.proprio.len();
    if length == 0 {
        return Err(Error::contract("slice length must be positive"));
    }
    if frames < length {
        return Err(Error::contract(format!(
            "demonstration has {frames} frames, need {length}"
        )));
    }
    Ok(rng.gen_range(0..=frames - length))
}

/// Derives a per-episode seed from a base seed and a stream index
/// (splitmix-style mixing, stable across platforms).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct CollectStats {
    pub attempts: u64,
    pub failures: u64,
}

/// Runs the scripted expert until `n` successful episodes are stored.
/// Failures are re-seeded and excluded. Aborts if the running failure rate
/// exceeds 50% (after an initial grace window).
pub fn collect_demonstrations(
    task: &TaskSpec,
    n: usize,
    base_seed: u64,
    views: &[ViewId],
) -> Result<(Vec<Demonstration>, CollectStats)> {
    let expert = scripted_expert(task.kind)?;
    let shift = ShiftSpec::identity();
    let mut demos = Vec::with_capacity(n);
    let mut attempts = 0u64;
    let mut failures = 0u64;
    while demos.len() < n {
        let seed = derive_seed(base_seed, attempts);
        attempts += 1;
        let (mut env, first) = SpriteEnv::reset(task, &shift, seed, views)?;
        let mut frames: Vec<Vec<RgbImage>> = vec![Vec::new(); views.len()];
        let mut proprio = Vec::new();
        let mut actions = Vec::new();
        for (v, f) in first.obs.frames.iter().enumerate() {
            frames[v].push(f.clone());
        }
        proprio.push(first.obs.proprio.clone());
        let mut success = false;
        for _ in 0..task.horizon {
            let action = expert.act(&env)?;
            let result = env.step(&action)?;
            actions.push(action.to_vec());
            for (v, f) in result.obs.frames.iter().enumerate() {
                frames[v].push(f.clone());
            }
            proprio.push(result.obs.proprio.clone());
            if result.done {
                success = result.success;
                break;
            }
        }
        if success {
            demos.push(Demonstration {
                task: task.kind.name().to_string(),
                language: task.language.clone(),
                source: "scripted".to_string(),
                seed,
                frames,
                proprio,
                actions,
            });
        } else {
            failures += 1;
            // 50% failure gate, with a small grace window so one unlucky
            // first episode does not abort a run
            if attempts >= 8 && failures * 2 > attempts {
                return Err(Error::Collection(format!(
                    "expert failed {failures}/{attempts} episodes on {}",
                    task.kind
                )));
            }
        }
    }
    Ok((demos, CollectStats { attempts, failures }))
}

/// Renders `n` single-frame discovery scenes (no task, no actions) for
/// encoder pretraining.
pub fn collect_scene_frames(n: usize, base_seed: u64, views: &[ViewId]) -> Vec<Demonstration> {
    let shift = ShiftSpec::identity();
    (0..n)
        .map(|i| {
            let seed = derive_seed(base_seed, i as u64);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let state = sample_discovery_scene(&mut rng);
            let frames: Vec<Vec<RgbImage>> = views
                .iter()
                .map(|v| vec![render(&state, &shift, *v)])
                .collect();
            Demonstration {
                task: "scenes".to_string(),
                language: "observe the table".to_string(),
                source: "scenes".to_string(),
                seed,
                frames,
                proprio: vec![state.proprio()],
                actions: Vec::new(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sprites::TaskKind;

    fn tiny_demos() -> Vec<Demonstration> {
        let task = TaskSpec::new(TaskKind::Reach);
        let (demos, stats) =
            collect_demonstrations(&task, 3, 7, &[ViewId::Top, ViewId::Side]).unwrap();
        assert_eq!(stats.failures, 0);
        demos
    }

    #[test]
    fn collection_is_deterministic() {
        let task = TaskSpec::new(TaskKind::Reach);
        let (a, _) = collect_demonstrations(&task, 2, 3, &[ViewId::Top]).unwrap();
        let (b, _) = collect_demonstrations(&task, 2, 3, &[ViewId::Top]).unwrap();
        assert_eq!(a.len(), b.len());
        for (da, db) in a.iter().zip(b.iter()) {
            assert_eq!(da.actions, db.actions);
            assert_eq!(da.frames, db.frames);
        }
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let demos = tiny_demos();
        let dir = tempfile::tempdir().unwrap();
        let views = vec!["top".to_string(), "side".to_string()];
        let ds = write_dataset(dir.path(), &demos, &views, (112, 112), 3, 3).unwrap();
        assert_eq!(ds.len(), 3);
        // read back and compare to the originals
        for (i, demo) in demos.iter().enumerate() {
            let loaded = ds.get(i).unwrap();
            assert_eq!(loaded.actions, demo.actions);
            assert_eq!(loaded.proprio, demo.proprio);
            assert_eq!(loaded.frames, demo.frames);
            assert_eq!(loaded.language, demo.language);
            assert_eq!(loaded.seed, demo.seed);
        }
        // writing the same demos again produces byte-identical files
        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(dir2.path(), &demos, &views, (112, 112), 3, 3).unwrap();
        let shard_a = std::fs::read(dir.path().join("shard-00000.bin")).unwrap();
        let shard_b = std::fs::read(dir2.path().join("shard-00000.bin")).unwrap();
        assert_eq!(shard_a, shard_b);
        let idx_a = std::fs::read(dir.path().join("index.json")).unwrap();
        let idx_b = std::fs::read(dir2.path().join("index.json")).unwrap();
        assert_eq!(idx_a, idx_b);
    }

    #[test]
    fn truncated_shard_is_corrupt() {
        let demos = tiny_demos();
        let dir = tempfile::tempdir().unwrap();
        let views = vec!["top".to_string(), "side".to_string()];
        write_dataset(dir.path(), &demos, &views, (112, 112), 3, 3).unwrap();
        let shard = dir.path().join("shard-00000.bin");
        let bytes = std::fs::read(&shard).unwrap();
        std::fs::write(&shard, &bytes[..bytes.len() / 2]).unwrap();
        let ds = TrajectoryDataset::open(dir.path()).unwrap();
        assert!(matches!(ds.get(2), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let views = vec!["top".to_string()];
        write_dataset(dir.path(), &[], &views, (112, 112), 3, 3).unwrap();
        let idx_path = dir.path().join("index.json");
        let mut idx: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&idx_path).unwrap()).unwrap();
        idx["version"] = serde_json::json!(99);
        std::fs::write(&idx_path, serde_json::to_vec(&idx).unwrap()).unwrap();
        assert!(matches!(
            TrajectoryDataset::open(dir.path()),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let views = vec!["top".to_string()];
        let ds = write_dataset(dir.path(), &[], &views, (112, 112), 3, 3).unwrap();
        assert!(ds.is_empty());
        let reopened = TrajectoryDataset::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 0);
    }

    #[test]
    fn mixture_single_source_takes_all() {
        let demos = tiny_demos();
        let dir = tempfile::tempdir().unwrap();
        let views = vec!["top".to_string(), "side".to_string()];
        let ds = write_dataset(dir.path(), &demos, &views, (112, 112), 3, 3).unwrap();
        let mut datasets = BTreeMap::new();
        datasets.insert("scripted".to_string(), &ds);
        let spec = MixtureSpec::balanced(&["scripted"]);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let batch = sample_mixture(&datasets, &spec, 50, &mut rng).unwrap();
        assert!(batch.iter().all(|(s, _)| s == "scripted"));
    }

    #[test]
    fn zero_weight_source_never_sampled() {
        let demos = tiny_demos();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let views = vec!["top".to_string(), "side".to_string()];
        let a = write_dataset(dir_a.path(), &demos, &views, (112, 112), 3, 3).unwrap();
        let b = write_dataset(dir_b.path(), &demos, &views, (112, 112), 3, 3).unwrap();
        let mut datasets = BTreeMap::new();
        datasets.insert("a".to_string(), &a);
        datasets.insert("b".to_string(), &b);
        let mut weights = BTreeMap::new();
        weights.insert("a".to_string(), 1.0);
        weights.insert("b".to_string(), 0.0);
        let spec = MixtureSpec::new(weights).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let batch = sample_mixture(&datasets, &spec, 200, &mut rng).unwrap();
        assert!(batch.iter().all(|(s, _)| s == "a"));
    }

    #[test]
    fn unnormalized_mixture_rejected() {
        let mut weights = BTreeMap::new();
        weights.insert("a".to_string(), 0.7);
        weights.insert("b".to_string(), 0.7);
        assert!(MixtureSpec::new(weights).is_err());
    }

    #[test]
    fn empty_source_with_weight_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let views = vec!["top".to_string()];
        let empty = write_dataset(dir.path(), &[], &views, (112, 112), 3, 3).unwrap();
        let mut datasets = BTreeMap::new();
        datasets.insert("a".to_string(), &empty);
        let spec = MixtureSpec::balanced(&["a"]);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(sample_mixture(&datasets, &spec, 1, &mut rng).is_err());
    }

    #[test]
    fn video_slice_bounds() {
        let demos = tiny_demos();
        let demo = &demos[0];
        let frames = demo.proprio.len();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        // L = 1: any single frame
        let s = sample_video_slice(demo, 1, &mut rng).unwrap();
        assert!(s < frames);
        // L = T+1: the whole demo
        let s = sample_video_slice(demo, frames, &mut rng).unwrap();
        assert_eq!(s, 0);
        // too long
        assert!(sample_video_slice(demo, frames + 1, &mut rng).is_err());
    }

    #[test]
    fn scene_frames_are_single_step() {
        let scenes = collect_scene_frames(4, 9, &[ViewId::Top]);
        assert_eq!(scenes.len(), 4);
        for s in &scenes {
            s.validate().unwrap();
            assert_eq!(s.steps(), 0);
            assert_eq!(s.frames[0].len(), 1);
        }
        // deterministic
        let again = collect_scene_frames(4, 9, &[ViewId::Top]);
        assert_eq!(scenes[2].frames, again[2].frames);
    }
}
