//! Pretraining clips and task training sequences.

use crate::error::{Error, Result};
use crate::mixup::{build_sequence, mixup_frame, FrameSequence, MixupSchedule, TransitionKind, DEFAULT_GAMMA};
use crate::numerics::Rng;

use super::conditions::TaskSample;
use super::scene::{gen_scene_with_motion, MAX_SPEED};

pub const FADE_PROB: f64 = 0.3;

/// A moving-shapes clip and the prompt describing its final scene.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainClip {
    pub frames: FrameSequence,
    pub prompt: String,
    /// `Some((start, end))` when frames `start..end` fade to a second scene.
    pub fade: Option<(usize, usize)>,
}

pub fn check_video_frames(frames: usize) -> Result<usize> {
    if frames == 0 || !(frames - 1).is_multiple_of(4) {
        return Err(Error::Layout(format!("video needs 4T+1 frames, got {frames}")));
    }
    Ok((frames - 1) / 4)
}

pub fn gen_pretrain_video(rng: &mut Rng, frames: usize, resolution: usize) -> Result<PretrainClip> {
    gen_pretrain_video_with(rng, frames, resolution, MAX_SPEED, FADE_PROB)
}

/// Shapes on linear trajectories; with probability `fade_prob` the middle
/// third of the clip fades into a second moving scene.
pub fn gen_pretrain_video_with(
    rng: &mut Rng,
    frames: usize,
    resolution: usize,
    max_speed: f64,
    fade_prob: f64,
) -> Result<PretrainClip> {
    check_video_frames(frames)?;
    let first = gen_scene_with_motion(rng, resolution, max_speed);
    let second = gen_scene_with_motion(rng, resolution, max_speed);
    let fade = rng.bernoulli(fade_prob) && frames >= 3;
    let (start, end) = if fade {
        (frames / 3, 2 * frames / 3)
    } else {
        (frames, frames)
    };
    let mut out = Vec::with_capacity(frames);
    let mut alphas = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = f as f64;
        let (img, a) = if f < start {
            (first.render_at(t), 0.0)
        } else if f >= end {
            (second.render_at(t), 1.0)
        } else {
            let a = (f - start + 1) as f64 / (end - start + 1) as f64;
            (
                mixup_frame(&first.render_at(t), &second.render_at(t), a, DEFAULT_GAMMA)?,
                a,
            )
        };
        out.push(img);
        alphas.push(a);
    }
    let prompt = if fade { second.prompt } else { first.prompt };
    Ok(PretrainClip {
        frames: FrameSequence {
            frames: out,
            alphas,
            kind: TransitionKind::Fade,
        },
        prompt,
        fade: fade.then_some((start, end)),
    })
}

/// Transition sequence from the sample's condition to its target.
pub fn build_training_pair(
    sample: &TaskSample,
    kind: TransitionKind,
    schedule: &MixupSchedule,
) -> Result<FrameSequence> {
    build_sequence(kind, &sample.condition, &sample.target, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::conditions::{make_condition, TaskKind, TaskSpec};
    use crate::tasks::scene::gen_scene;

    #[test]
    fn frame_count_validation() {
        assert_eq!(check_video_frames(9).unwrap(), 2);
        assert!(matches!(
            gen_pretrain_video(&mut Rng::new(0, 0), 8, 16),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn zero_velocity_is_static() {
        let clip = gen_pretrain_video_with(&mut Rng::new(1, 0), 9, 16, 0.0, 0.0).unwrap();
        assert!(clip.frames.frames.iter().all(|f| f == clip.frames.first()));
    }

    #[test]
    fn fade_frames_are_mixup_blends() {
        let mut seen = false;
        for seed in 0..20 {
            let clip = gen_pretrain_video_with(&mut Rng::new(seed, 0), 13, 16, 0.0, 1.0).unwrap();
            let (s, e) = clip.fade.unwrap();
            let (a, b) = (clip.frames.first(), clip.frames.last());
            for f in s..e {
                let expect = mixup_frame(a, b, clip.frames.alphas[f], DEFAULT_GAMMA).unwrap();
                let err = clip.frames.frames[f].max_abs_diff(&expect);
                assert!(err <= 1e-6, "{err}");
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn training_pair_boundaries() {
        let s = gen_scene(&mut Rng::new(2, 0), 16);
        let sample = make_condition(&s, &TaskSpec::new(TaskKind::Colorize), &mut Rng::new(2, 1)).unwrap();
        let sched = MixupSchedule::with_k(2).unwrap();
        let seq = build_training_pair(&sample, TransitionKind::Fade, &sched).unwrap();
        assert_eq!(seq.len(), 13);
        assert_eq!(seq.first(), &sample.condition);
        assert_eq!(seq.last(), &sample.target);
    }
}
