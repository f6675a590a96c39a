//! Procedural scenes: anti-aliased shapes on a solid background, described by
//! a fixed prompt grammar.
//!
//! ```text
//! a <color> <shape> [and a <color> <shape>]* on a <color> background
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::numerics::Rng;

pub const PALETTE: [(&str, [f32; 3]); 8] = [
    ("red", [1.0, 0.0, 0.0]),
    ("orange", [1.0, 0.5, 0.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("green", [0.0, 0.75, 0.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("purple", [0.5, 0.0, 0.75]),
    ("white", [1.0, 1.0, 1.0]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.word() == w)
    }
}

/// Every word the prompt grammar can emit.
pub const GRAMMAR_WORDS: [&str; 15] = [
    "a",
    "and",
    "on",
    "background",
    "red",
    "orange",
    "yellow",
    "green",
    "cyan",
    "blue",
    "purple",
    "white",
    "circle",
    "square",
    "triangle",
];

pub fn color_rgb(name: &str) -> Option<[f32; 3]> {
    PALETTE.iter().find(|(n, _)| *n == name).map(|&(_, c)| c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ShapeKind,
    pub color: String,
    /// Center in pixels.
    pub center: [f64; 2],
    /// Circumradius in pixels.
    pub size: f64,
    /// Displacement per video frame, pixels.
    pub velocity: [f64; 2],
}

impl SceneObject {
    /// Coverage test in continuous pixel coordinates.
    fn contains(&self, y: f64, x: f64, t: f64) -> bool {
        let cy = self.center[0] + self.velocity[0] * t;
        let cx = self.center[1] + self.velocity[1] * t;
        let (dy, dx) = (y - cy, x - cx);
        let r = self.size;
        match self.shape {
            ShapeKind::Circle => dy * dy + dx * dx <= r * r,
            ShapeKind::Square => {
                let h = r * std::f64::consts::FRAC_1_SQRT_2;
                dy.abs() <= h && dx.abs() <= h
            }
            ShapeKind::Triangle => {
                // Upward triangle inscribed in the circle of radius r.
                let top = -r;
                let bottom = 0.5 * r;
                if dy < top || dy > bottom {
                    return false;
                }
                let half = (dy - top) / (bottom - top) * r * 3f64.sqrt() / 2.0;
                dx.abs() <= half
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub resolution: usize,
    pub background: String,
    /// Drawn in order; later objects occlude earlier ones.
    pub objects: Vec<SceneObject>,
    pub prompt: String,
}

const SUPERSAMPLE: usize = 4;

/// Per-pixel coverage of an object, averaged over a 4×4 subpixel grid.
fn coverage(obj: &SceneObject, y: usize, x: usize, t: f64) -> f32 {
    let mut hits = 0;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
            let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
            if obj.contains(py, px, t) {
                hits += 1;
            }
        }
    }
    hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32
}

fn composite(res: usize, background: [f32; 3], layers: &[(&SceneObject, [f32; 3])], t: f64) -> Image {
    let mut img = Image::filled(res, res, background);
    for &(obj, rgb) in layers {
        for y in 0..res {
            for x in 0..res {
                let c = coverage(obj, y, x, t);
                if c == 0.0 {
                    continue;
                }
                let p = img.pixel(y, x);
                img.set_pixel(y, x, std::array::from_fn(|i| p[i] + c * (rgb[i] - p[i])));
            }
        }
    }
    img
}

impl Scene {
    /// The scene with every object displaced by `t` frames of motion.
    pub fn render_at(&self, t: f64) -> Image {
        let bg = color_rgb(&self.background).expect("palette color");
        let layers: Vec<_> = self
            .objects
            .iter()
            .map(|o| (o, color_rgb(&o.color).expect("palette color")))
            .collect();
        composite(self.resolution, bg, &layers, t)
    }

    pub fn render(&self) -> Image {
        self.render_at(0.0)
    }

    /// Depth proxy: background black, shapes gray with brightness growing
    /// with size rank, then dark-color normalized.
    pub fn depth(&self) -> Image {
        let n = self.objects.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.objects[a].size.total_cmp(&self.objects[b].size));
        let mut shade = vec![0f32; n];
        for (rank, &i) in order.iter().enumerate() {
            shade[i] = (rank + 1) as f32 / n as f32;
        }
        let layers: Vec<_> = self.objects.iter().zip(&shade).map(|(o, &s)| (o, [s; 3])).collect();
        crate::mixup::normalize_dark_colors(&composite(self.resolution, [0.0; 3], &layers, 0.0))
    }
}

pub fn scene_prompt(objects: &[SceneObject], background: &str) -> String {
    let parts: Vec<String> = objects
        .iter()
        .map(|o| format!("a {} {}", o.color, o.shape.word()))
        .collect();
    format!("{} on a {background} background", parts.join(" and "))
}

/// Recovers `(color, shape)` pairs and the background color from a prompt.
pub fn parse_prompt(prompt: &str) -> Result<(Vec<(String, ShapeKind)>, String)> {
    let bad = || Error::Format(format!("prompt outside the scene grammar: {prompt:?}"));
    let words: Vec<&str> = prompt.split_whitespace().collect();
    let mut objects = Vec::new();
    let mut i = 0;
    loop {
        let (Some(&"a"), Some(&color), Some(&shape)) = (words.get(i), words.get(i + 1), words.get(i + 2)) else {
            return Err(bad());
        };
        let shape = ShapeKind::from_word(shape).ok_or_else(bad)?;
        color_rgb(color).ok_or_else(bad)?;
        objects.push((color.to_string(), shape));
        i += 3;
        match words.get(i) {
            Some(&"and") => i += 1,
            Some(&"on") => break,
            _ => return Err(bad()),
        }
    }
    match &words[i..] {
        ["on", "a", bg, "background"] if color_rgb(bg).is_some() => Ok((objects, bg.to_string())),
        _ => Err(bad()),
    }
}

/// Maximum speed of moving shapes, pixels per frame.
pub const MAX_SPEED: f64 = 1.0;

/// 1–3 shapes with distinct colors, none matching the background.
pub fn gen_scene(rng: &mut Rng, resolution: usize) -> Scene {
    gen_scene_with_motion(rng, resolution, 0.0)
}

pub fn gen_scene_with_motion(rng: &mut Rng, resolution: usize, max_speed: f64) -> Scene {
    let res = resolution as f64;
    let bg = rng.below(PALETTE.len());
    let n = 1 + rng.below(3);
    let mut colors: Vec<usize> = (0..PALETTE.len()).filter(|&c| c != bg).collect();
    let mut objects = Vec::with_capacity(n);
    for _ in 0..n {
        let color = colors.remove(rng.below(colors.len()));
        let shape = ShapeKind::ALL[rng.below(3)];
        let size = rng.uniform_range(0.15, 0.3) * res;
        let center = [rng.uniform_range(size, res - size), rng.uniform_range(size, res - size)];
        let velocity = if max_speed > 0.0 {
            [
                rng.uniform_range(-max_speed, max_speed),
                rng.uniform_range(-max_speed, max_speed),
            ]
        } else {
            [0.0, 0.0]
        };
        objects.push(SceneObject {
            shape,
            color: PALETTE[color].0.to_string(),
            center,
            size,
            velocity,
        });
    }
    let background = PALETTE[bg].0.to_string();
    let prompt = scene_prompt(&objects, &background);
    Scene {
        resolution,
        background,
        objects,
        prompt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = gen_scene(&mut Rng::new(5, 0), 32);
        let b = gen_scene(&mut Rng::new(5, 0), 32);
        assert_eq!(a, b);
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn prompt_round_trip() {
        for seed in 0..200 {
            let s = gen_scene(&mut Rng::new(seed, 0), 32);
            let (objs, bg) = parse_prompt(&s.prompt).unwrap();
            assert_eq!(bg, s.background);
            let expect: Vec<_> = s.objects.iter().map(|o| (o.color.clone(), o.shape)).collect();
            assert_eq!(objs, expect);
        }
        assert!(parse_prompt("a red blob on a blue background").is_err());
        assert!(parse_prompt("a red circle").is_err());
    }

    #[test]
    fn pixels_stay_in_gamut() {
        for seed in 0..20 {
            let s = gen_scene(&mut Rng::new(seed, 1), 32);
            let img = s.render();
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            // The background color is present at some corner-free pixel.
            let bg = color_rgb(&s.background).unwrap();
            let count = (0..32 * 32).filter(|i| img.pixel(i / 32, i % 32) == bg).count();
            assert!(count > 0);
        }
    }

    #[test]
    fn depth_is_dark_normalized_gray() {
        let s = gen_scene(&mut Rng::new(3, 0), 32);
        let d = s.depth();
        assert!(d.is_grayscale());
        assert!(d.data().iter().all(|&v| v >= 128.0 / 255.0 - 1e-6));
    }
}
