//! Import adapter for external robot-episode archives.
//!
//! Expected layout, one directory per episode:
//!
//! ```text
//! episode_dir/
//!   metadata.json                {task, language, source, seed, views,
//!                                 d_prop, d_act, steps}
//!   proprio.bin                  (steps+1)·d_prop f32 little-endian
//!   actions.bin                  steps·d_act f32 little-endian
//!   frames/<view>/<t:05>.png     one frame per observation step
//! ```
//!
//! This is the seam through which externally collected trajectory archives
//! map into the native container.

use super::{container::DatasetWriter, Demonstration, TrajectoryDataset};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMetadata {
    pub task: String,
    pub language: String,
    pub source: String,
    #[serde(default)]
    pub seed: u64,
    pub views: Vec<String>,
    pub d_prop: u32,
    pub d_act: u32,
    pub steps: u32,
}

fn read_f32_rows(path: &Path, rows: usize, cols: usize) -> Result<Vec<Vec<f32>>> {
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Corrupt(format!(
            "{} is {} bytes, expected {}",
            path.display(),
            bytes.len(),
            rows * cols * 4
        )));
    }
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row = Vec::with_capacity(cols);
        for c in 0..cols {
            let off = (r * cols + c) * 4;
            row.push(f32::from_le_bytes([
                bytes[off],
                bytes[off + 1],
                bytes[off + 2],
                bytes[off + 3],
            ]));
        }
        out.push(row);
    }
    Ok(out)
}

/// Reads one episode directory.
pub fn import_episode(dir: &Path) -> Result<Demonstration> {
    let meta_path = dir.join("metadata.json");
    if !meta_path.exists() {
        return Err(Error::MissingArtifact(meta_path.display().to_string()));
    }
    let meta: EpisodeMetadata = serde_json::from_slice(&fs::read(&meta_path)?)?;
    let t1 = meta.steps as usize + 1;
    let proprio = read_f32_rows(&dir.join("proprio.bin"), t1, meta.d_prop as usize)?;
    let actions = read_f32_rows(
        &dir.join("actions.bin"),
        meta.steps as usize,
        meta.d_act as usize,
    )?;
    let mut frames = Vec::with_capacity(meta.views.len());
    for view in &meta.views {
        let mut per_view = Vec::with_capacity(t1);
        for t in 0..t1 {
            let path = dir.join("frames").join(view).join(format!("{t:05}.png"));
            if !path.exists() {
                return Err(Error::MissingArtifact(path.display().to_string()));
            }
            per_view.push(image::open(&path)?.to_rgb8());
        }
        frames.push(per_view);
    }
    let demo = Demonstration {
        task: meta.task,
        language: meta.language,
        source: meta.source,
        seed: meta.seed,
        frames,
        proprio,
        actions,
    };
    demo.validate()?;
    Ok(demo)
}

/// Imports every episode directory under `root` (sorted by name) into a
/// native dataset at `out`.
pub fn import_episodes(root: &Path, out: &Path) -> Result<TrajectoryDataset> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::contract(format!(
            "no episode directories under {}",
            root.display()
        )));
    }
    let first = import_episode(&dirs[0])?;
    let meta: EpisodeMetadata =
        serde_json::from_slice(&fs::read(dirs[0].join("metadata.json"))?)?;
    let (h, w) = first.frames[0][0].dimensions();
    let mut writer = DatasetWriter::create(out, &meta.views, (w, h), meta.d_prop, meta.d_act)?;
    writer.add(&first)?;
    for dir in &dirs[1..] {
        writer.add(&import_episode(dir)?)?;
    }
    writer.finalize()
}

/// Exports a demonstration into the episode-directory layout (the inverse
/// of [`import_episode`]; used by tests and external tooling).
pub fn export_episode(demo: &Demonstration, views: &[String], dir: &Path) -> Result<()> {
    demo.validate()?;
    fs::create_dir_all(dir)?;
    let meta = EpisodeMetadata {
        task: demo.task.clone(),
        language: demo.language.clone(),
        source: demo.source.clone(),
        seed: demo.seed,
        views: views.to_vec(),
        d_prop: demo.proprio.first().map_or(0, |p| p.len()) as u32,
        d_act: demo.actions.first().map_or(0, |a| a.len()) as u32,
        steps: demo.actions.len() as u32,
    };
    fs::write(
        dir.join("metadata.json"),
        serde_json::to_vec_pretty(&meta)?,
    )?;
    let mut proprio_bytes = Vec::new();
    for row in &demo.proprio {
        for v in row {
            proprio_bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join("proprio.bin"), proprio_bytes)?;
    let mut action_bytes = Vec::new();
    for row in &demo.actions {
        for v in row {
            action_bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join("actions.bin"), action_bytes)?;
    for (v, view) in views.iter().enumerate() {
        let vdir = dir.join("frames").join(view);
        fs::create_dir_all(&vdir)?;
        for (t, frame) in demo.frames[v].iter().enumerate() {
            frame.save(vdir.join(format!("{t:05}.png")))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::collect_demonstrations;
    use crate::sprites::{TaskKind, TaskSpec, ViewId};

    #[test]
    fn export_import_round_trip() {
        let task = TaskSpec::new(TaskKind::Reach);
        let (demos, _) = collect_demonstrations(&task, 2, 11, &[ViewId::Top]).unwrap();
        let views = vec!["top".to_string()];
        let root = tempfile::tempdir().unwrap();
        for (i, d) in demos.iter().enumerate() {
            export_episode(d, &views, &root.path().join(format!("ep_{i:03}"))).unwrap();
        }
        let out = tempfile::tempdir().unwrap();
        let ds = import_episodes(root.path(), out.path()).unwrap();
        assert_eq!(ds.len(), 2);
        for (i, d) in demos.iter().enumerate() {
            let loaded = ds.get(i).unwrap();
            assert_eq!(loaded.actions, d.actions);
            assert_eq!(loaded.proprio, d.proprio);
            assert_eq!(loaded.frames, d.frames);
            assert_eq!(loaded.task, d.task);
        }
    }

    #[test]
    fn missing_metadata_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            import_episode(dir.path()),
            Err(Error::MissingArtifact(_))
        ));
    }
}
