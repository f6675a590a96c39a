//! Counter-based sample streams: element `i` depends only on `(seed, i)`.

use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::numerics::{stream_id, Rng};

use super::conditions::{make_condition, TaskDraw, TaskSample, TaskSpec};
use super::scene::gen_scene;
use super::video::{gen_pretrain_video, PretrainClip};

const TASK_STREAM: u16 = 0x7A5C;
const DRAW_STREAM: u16 = 0x7A5D;
const VIDEO_STREAM: u16 = 0x71D0;

#[derive(Clone, Debug)]
pub struct TaskDataset {
    pub spec: TaskSpec,
    pub seed: u64,
    pub resolution: usize,
    pub count: usize,
}

impl TaskDataset {
    pub fn new(spec: TaskSpec, seed: u64, resolution: usize, count: usize) -> Self {
        Self {
            spec,
            seed,
            resolution,
            count,
        }
    }

    pub fn get(&self, index: usize) -> Result<TaskSample> {
        let mut scene_rng = Rng::new(self.seed, stream_id(TASK_STREAM, index as u64));
        let mut draw_rng = Rng::new(self.seed, stream_id(DRAW_STREAM, index as u64));
        let scene = gen_scene(&mut scene_rng, self.resolution);
        make_condition(&scene, &self.spec, &mut draw_rng)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<TaskSample>> + '_ {
        (0..self.count).map(|i| self.get(i))
    }
}

#[derive(Clone, Debug)]
pub struct VideoDataset {
    pub seed: u64,
    pub frames: usize,
    pub resolution: usize,
}

impl VideoDataset {
    pub fn get(&self, index: usize) -> Result<PretrainClip> {
        let mut rng = Rng::new(self.seed, stream_id(VIDEO_STREAM, index as u64));
        gen_pretrain_video(&mut rng, self.frames, self.resolution)
    }
}

/// `count` samples of `spec` from `seed`.
pub fn dataset_stream(
    spec: TaskSpec,
    seed: u64,
    resolution: usize,
    count: usize,
) -> impl Iterator<Item = Result<TaskSample>> {
    let ds = TaskDataset::new(spec, seed, resolution, count);
    (0..count).map(move |i| ds.get(i))
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    index: usize,
    condition: String,
    target: String,
    prompt: &'a str,
    condition_prompt: Option<&'a str>,
    draw: TaskDraw,
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    resolution: usize,
    task: &'a TaskSpec,
    samples: Vec<ManifestEntry<'a>>,
}

/// Writes `dir/<task>/NNNNN_{condition,target}.ppm` and `manifest.json`.
pub fn export_dataset(ds: &TaskDataset, dir: &Path) -> Result<()> {
    let out = dir.join(ds.spec.kind.as_str());
    std::fs::create_dir_all(&out)?;
    let samples: Vec<TaskSample> = ds.iter().collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let cond = format!("{i:05}_condition.ppm");
        let target = format!("{i:05}_target.ppm");
        s.condition.save_ppm(out.join(&cond))?;
        s.target.save_ppm(out.join(&target))?;
        entries.push(ManifestEntry {
            index: i,
            condition: cond,
            target,
            prompt: &s.prompt,
            condition_prompt: s.condition_prompt.as_deref(),
            draw: s.draw,
        });
    }
    let manifest = Manifest {
        seed: ds.seed,
        resolution: ds.resolution,
        task: &ds.spec,
        samples: entries,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
