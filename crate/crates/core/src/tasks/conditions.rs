//! Condition images for each task, extracted from the ground-truth scene.
//!
//! Random choices are recorded in a [`TaskDraw`] so that the same operator
//! can be re-applied to a generated image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mixup::normalize_dark_colors;
use crate::numerics::Rng;

use super::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Colorize,
    Deblur,
    InpaintOutpaint,
    Edges,
    Superres,
    DepthPredict,
    SubjectToy,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::Colorize,
        TaskKind::Deblur,
        TaskKind::InpaintOutpaint,
        TaskKind::Edges,
        TaskKind::Superres,
        TaskKind::DepthPredict,
        TaskKind::SubjectToy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Colorize => "colorize",
            TaskKind::Deblur => "deblur",
            TaskKind::InpaintOutpaint => "inpaint_outpaint",
            TaskKind::Edges => "edges",
            TaskKind::Superres => "superres",
            TaskKind::DepthPredict => "depth_predict",
            TaskKind::SubjectToy => "subject_toy",
        }
    }

    /// Whether condition and target are pixel-aligned.
    pub fn spatially_aligned(self) -> bool {
        !matches!(self, TaskKind::SubjectToy)
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config("task", format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Inclusive integer blur radius range.
    pub blur_radius: (u32, u32),
    /// Probability that the masked region is the rectangle interior.
    pub mask_inside_prob: f64,
    pub downsample: usize,
    /// Magnitude threshold on the Sobel response of the gray image.
    pub edge_threshold: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            blur_radius: (1, 10),
            mask_inside_prob: 0.5,
            downsample: 4,
            edge_threshold: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y0 + self.h).contains(&y) && (self.x0..self.x0 + self.w).contains(&x)
    }
}

/// The random part of a condition construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskDraw {
    None,
    Blur {
        radius: u32,
    },
    Mask {
        rect: Rect,
        inside: bool,
    },
    /// Horizontal placement of the subject in the target composition.
    Subject {
        offset: i64,
    },
}

pub fn draw_task(spec: &TaskSpec, resolution: usize, rng: &mut Rng) -> TaskDraw {
    match spec.kind {
        TaskKind::Deblur => {
            let (lo, hi) = spec.blur_radius;
            TaskDraw::Blur {
                radius: rng.int_inclusive(lo as i64, hi as i64) as u32,
            }
        }
        TaskKind::InpaintOutpaint => {
            let quarter = (resolution / 4).max(1);
            let h = quarter + rng.below(quarter + 1);
            let w = quarter + rng.below(quarter + 1);
            let y0 = rng.below(resolution - h + 1);
            let x0 = rng.below(resolution - w + 1);
            TaskDraw::Mask {
                rect: Rect { y0, x0, h, w },
                inside: rng.bernoulli(spec.mask_inside_prob),
            }
        }
        TaskKind::SubjectToy => TaskDraw::Subject {
            offset: rng.int_inclusive(-(resolution as i64) / 4, resolution as i64 / 4),
        },
        _ => TaskDraw::None,
    }
}

/// Separable Gaussian blur, `σ = r/2`, half-width `2r`, clamped borders.
pub fn gaussian_blur(img: &Image, radius: u32) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let sigma = radius as f64 / 2.0;
    let half = 2 * radius as i64;
    let kernel: Vec<f64> = (-half..=half)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = (img.height() as i64, img.width() as i64);
    let pass = |src: &[f64], vertical: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (k, d) in (-half..=half).enumerate() {
                        let (sy, sx) = if vertical {
                            ((y + d).clamp(0, h - 1), x)
                        } else {
                            (y, (x + d).clamp(0, w - 1))
                        };
                        acc += kernel[k] * src[((sy * w + sx) * 3 + c) as usize];
                    }
                    out[((y * w + x) * 3 + c) as usize] = acc / norm;
                }
            }
        }
        out
    };
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let out = pass(&pass(&src, false), true);
    Image::new(img.height(), img.width(), out.into_iter().map(|v| v as f32).collect()).unwrap()
}

/// Box-average downsampling by `f`, accumulated in f64.
pub fn downsample(img: &Image, f: usize) -> Result<Image> {
    if f == 0 || !img.height().is_multiple_of(f) || !img.width().is_multiple_of(f) {
        return Err(Error::dim(format!(
            "{}×{} image is not divisible by factor {f}",
            img.height(),
            img.width()
        )));
    }
    let (h, w) = (img.height() / f, img.width() / f);
    let n = (f * f) as f64;
    Ok(Image::from_fn(h, w, |y, x| {
        let mut acc = [0f64; 3];
        for dy in 0..f {
            for dx in 0..f {
                let p = img.pixel(y * f + dy, x * f + dx);
                for c in 0..3 {
                    acc[c] += p[c] as f64;
                }
            }
        }
        acc.map(|v| (v / n) as f32)
    }))
}

pub fn upsample_nearest(img: &Image, f: usize) -> Image {
    Image::from_fn(img.height() * f, img.width() * f, |y, x| img.pixel(y / f, x / f))
}

/// Binary Sobel edge map of the gray image.
pub fn edge_map(img: &Image, threshold: f64) -> Vec<bool> {
    let gray = img.grayscale();
    let (h, w) = (img.height() as i64, img.width() as i64);
    let g = |y: i64, x: i64| gray.pixel(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize)[0] as f64;
    let mut out = Vec::with_capacity((h * w) as usize);
    for y in 0..h {
        for x in 0..w {
            let gx = g(y - 1, x + 1) + 2.0 * g(y, x + 1) + g(y + 1, x + 1)
                - g(y - 1, x - 1)
                - 2.0 * g(y, x - 1)
                - g(y + 1, x - 1);
            let gy = g(y + 1, x - 1) + 2.0 * g(y + 1, x) + g(y + 1, x + 1)
                - g(y - 1, x - 1)
                - 2.0 * g(y - 1, x)
                - g(y - 1, x + 1);
            out.push((gx * gx + gy * gy).sqrt() > threshold);
        }
    }
    out
}

pub fn edge_image(edges: &[bool], height: usize, width: usize) -> Image {
    Image::from_fn(
        height,
        width,
        |y, x| if edges[y * width + x] { [1.0; 3] } else { [0.0; 3] },
    )
}

/// Recovers the binary edge map from a dark-normalized edge condition.
pub fn edges_from_condition(cond: &Image) -> Vec<bool> {
    cond.data().chunks_exact(3).map(|p| p[0] > 0.75).collect()
}

fn apply_mask(img: &Image, rect: Rect, inside: bool) -> Image {
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if rect.contains(y, x) == inside {
                out.set_pixel(y, x, [0.0; 3]);
            }
        }
    }
    normalize_dark_colors(&out)
}

/// Subject reference: the largest object alone on white, centered.
pub fn subject_reference(scene: &Scene) -> Image {
    let Some(obj) = scene.objects.iter().max_by(|a, b| a.size.total_cmp(&b.size)) else {
        return Image::filled(scene.resolution, scene.resolution, [1.0; 3]);
    };
    let c = scene.resolution as f64 / 2.0;
    let mut solo = obj.clone();
    solo.center = [c, c];
    solo.velocity = [0.0, 0.0];
    let reference = Scene {
        resolution: scene.resolution,
        background: "white".into(),
        objects: vec![solo],
        prompt: String::new(),
    };
    reference.render()
}

/// Applies the task operator with a recorded draw. Pure in its arguments.
pub fn apply_condition(img: &Image, spec: &TaskSpec, draw: TaskDraw) -> Result<Image> {
    match (spec.kind, draw) {
        (TaskKind::Colorize, _) => Ok(img.grayscale()),
        (TaskKind::Deblur, TaskDraw::Blur { radius }) => Ok(gaussian_blur(img, radius)),
        (TaskKind::InpaintOutpaint, TaskDraw::Mask { rect, inside }) => Ok(apply_mask(img, rect, inside)),
        (TaskKind::Edges, _) => {
            let e = edge_map(img, spec.edge_threshold);
            Ok(normalize_dark_colors(&edge_image(&e, img.height(), img.width())))
        }
        (TaskKind::Superres, _) => Ok(upsample_nearest(&downsample(img, spec.downsample)?, spec.downsample)),
        (TaskKind::DepthPredict | TaskKind::SubjectToy, _) => Ok(img.clone()),
        (kind, draw) => Err(Error::config("task", format!("draw {draw:?} does not fit task {kind}"))),
    }
}

/// A condition/target pair with prompts.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    pub condition: Image,
    pub target: Image,
    pub prompt: String,
    /// Description of the condition image, used as the `C_P` segment.
    pub condition_prompt: Option<String>,
    pub draw: TaskDraw,
}

pub fn make_condition(scene: &Scene, spec: &TaskSpec, rng: &mut Rng) -> Result<TaskSample> {
    let img = scene.render();
    let draw = draw_task(spec, scene.resolution, rng);
    let sample = match spec.kind {
        TaskKind::DepthPredict => TaskSample {
            condition: img,
            target: scene.depth(),
            prompt: format!("{} {}", crate::dit::DEPTH_TOKEN, scene.prompt),
            condition_prompt: None,
            draw,
        },
        TaskKind::SubjectToy => {
            let TaskDraw::Subject { offset } = draw else {
                unreachable!()
            };
            let reference = subject_reference(scene);
            let subject = scene
                .objects
                .iter()
                .max_by(|a, b| a.size.total_cmp(&b.size))
                .expect("scene has objects");
            let mut moved = scene.clone();
            for o in &mut moved.objects {
                o.center[1] = (o.center[1] + offset as f64).clamp(o.size, scene.resolution as f64 - o.size);
            }
            TaskSample {
                condition: reference,
                target: moved.render(),
                prompt: scene.prompt.clone(),
                condition_prompt: Some(format!(
                    "a {} {} on a white background",
                    subject.color,
                    subject.shape.word()
                )),
                draw,
            }
        }
        _ => TaskSample {
            condition: apply_condition(&img, spec, draw)?,
            target: img,
            prompt: scene.prompt.clone(),
            condition_prompt: None,
            draw,
        },
    };
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::scene::gen_scene;

    #[test]
    fn unknown_task_is_config_error() {
        assert!(matches!("painting".parse::<TaskKind>(), Err(Error::Config { .. })));
        assert_eq!("edges".parse::<TaskKind>().unwrap(), TaskKind::Edges);
    }

    #[test]
    fn colorize_fixed_point() {
        let s = gen_scene(&mut Rng::new(0, 0), 32);
        let gray = s.render().grayscale();
        let spec = TaskSpec::new(TaskKind::Colorize);
        assert_eq!(apply_condition(&gray, &spec, TaskDraw::None).unwrap(), gray);
        let sample = make_condition(&s, &spec, &mut Rng::new(0, 1)).unwrap();
        assert_eq!(sample.target.grayscale(), sample.condition);
    }

    #[test]
    fn superres_downsample_invariant() {
        let spec = TaskSpec::new(TaskKind::Superres);
        for seed in 0..10 {
            let s = gen_scene(&mut Rng::new(seed, 0), 32);
            let sample = make_condition(&s, &spec, &mut Rng::new(seed, 1)).unwrap();
            assert_eq!(
                downsample(&sample.target, 4).unwrap(),
                downsample(&sample.condition, 4).unwrap()
            );
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::filled(16, 16, [0.25, 0.5, 0.75]);
        let b = gaussian_blur(&img, 3);
        assert!(b.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn replaying_a_draw_is_exact() {
        for kind in TaskKind::ALL {
            let spec = TaskSpec::new(kind);
            let s = gen_scene(&mut Rng::new(9, 0), 32);
            let a = make_condition(&s, &spec, &mut Rng::new(9, 1)).unwrap();
            if kind.spatially_aligned() && kind != TaskKind::DepthPredict {
                assert_eq!(
                    apply_condition(&a.target, &spec, a.draw).unwrap(),
                    a.condition,
                    "{kind}"
                );
            }
            let b = make_condition(&s, &spec, &mut Rng::new(9, 1)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn edges_recoverable_from_condition() {
        let s = gen_scene(&mut Rng::new(4, 0), 32);
        let spec = TaskSpec::new(TaskKind::Edges);
        let c = make_condition(&s, &spec, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(
            edges_from_condition(&c.condition),
            edge_map(&c.target, spec.edge_threshold)
        );
        assert!(edges_from_condition(&c.condition).iter().any(|&e| e));
    }
}
