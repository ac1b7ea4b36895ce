//! Synthetic moving-texture clips with known motion.
//!
//! Every picture is evaluated analytically, so a translated object is an
//! exact sub-pixel shift of its earlier appearance.

use std::f64::consts::TAU;

use lvc_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sum of a few random plane waves per channel, in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: [Vec<(f64, f64, f64, f64)>; 3],
    base: [f64; 3],
}

impl Texture {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut wave_set = |count: usize, max_freq: f64, amp: f64| -> Vec<(f64, f64, f64, f64)> {
            (0..count)
                .map(|_| {
                    let angle = rng.gen_range(0.0..TAU);
                    let freq = rng.gen_range(0.02..max_freq);
                    (freq * angle.cos(), freq * angle.sin(), rng.gen_range(0.0..TAU), amp / count as f64)
                })
                .collect()
        };
        let waves = [wave_set(4, 0.25, 0.45), wave_set(2, 0.08, 0.2), wave_set(2, 0.08, 0.2)];
        let base = [rng.gen_range(0.3..0.7), rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6)];
        Texture { waves, base }
    }

    /// Value of channel `c` at continuous position `(y, x)`.
    pub fn sample(&self, c: usize, y: f64, x: f64) -> f64 {
        let v: f64 = self.waves[c]
            .iter()
            .map(|&(fx, fy, phase, amp)| amp * (TAU * (fx * x + fy * y) + phase).sin())
            .sum();
        (self.base[c] + v).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct MovingRect {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
    /// Pixels per frame, `(vy, vx)`.
    pub velocity: (f64, f64),
    pub texture: Texture,
}

/// One scene: a panning background with rectangles moving over it.
#[derive(Clone, Debug)]
pub struct Scene {
    pub size: usize,
    pub background: Texture,
    pub pan: (f64, f64),
    pub rects: Vec<MovingRect>,
}

/// Velocities are multiples of 0.5 in `[-2, 2]`.
fn velocity(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.gen_range(-4..=4) as f64 * 0.5, rng.gen_range(-4..=4) as f64 * 0.5)
}

impl Scene {
    pub fn random(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let background = Texture::random(rng);
        let pan = velocity(rng);
        let count = rng.gen_range(1..=3);
        let s = size as f64;
        let rects = (0..count)
            .map(|_| {
                let height = rng.gen_range(0.2 * s..0.5 * s);
                let width = rng.gen_range(0.2 * s..0.5 * s);
                MovingRect {
                    top: rng.gen_range(0.0..s - height),
                    left: rng.gen_range(0.0..s - width),
                    height,
                    width,
                    velocity: velocity(rng),
                    texture: Texture::random(rng),
                }
            })
            .collect();
        Scene {
            size,
            background,
            pan,
            rects,
        }
    }

    /// Static version of a scene: nothing moves.
    pub fn frozen(mut self) -> Self {
        self.pan = (0.0, 0.0);
        for r in &mut self.rects {
            r.velocity = (0.0, 0.0);
        }
        self
    }

    /// Only the background pans; no foreground objects.
    pub fn pure_translation(mut self) -> Self {
        self.rects.clear();
        self
    }

    /// Picture at time `t` as `[1, 3, size, size]`.
    pub fn render(&self, t: f64) -> Tensor {
        let n = self.size;
        Tensor::from_fn([1, 3, n, n], |[_, c, i, j]| {
            let (y, x) = (i as f64, j as f64);
            // topmost rectangle covering the pixel wins
            for r in self.rects.iter().rev() {
                let (ry, rx) = (y - (r.top + r.velocity.0 * t), x - (r.left + r.velocity.1 * t));
                if ry >= 0.0 && ry < r.height && rx >= 0.0 && rx < r.width {
                    return r.texture.sample(c, ry, rx);
                }
            }
            self.background.sample(c, y - self.pan.0 * t, x - self.pan.1 * t)
        })
    }

    pub fn clip(&self, frames: usize) -> Vec<Tensor> {
        (0..frames).map(|t| self.render(t as f64)).collect()
    }
}

/// `count` three-frame training units, deterministic in `seed`.
pub fn synth_dataset(seed: u64, count: usize, size: usize) -> Vec<[Tensor; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = Scene::random(&mut rng, size);
            [s.render(0.0), s.render(1.0), s.render(2.0)]
        })
        .collect()
}

/// Endless stream of fresh scenes for training.
pub struct SceneStream {
    rng: ChaCha8Rng,
    size: usize,
}

impl SceneStream {
    pub fn new(seed: u64, size: usize) -> Self {
        SceneStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            size,
        }
    }

    /// A batch of `n` three-frame units, each `[n, 3, size, size]` per slot.
    pub fn batch(&mut self, n: usize) -> [Tensor; 3] {
        let units: Vec<[Tensor; 3]> = (0..n)
            .map(|_| {
                let s = Scene::random(&mut self.rng, self.size);
                [s.render(0.0), s.render(1.0), s.render(2.0)]
            })
            .collect();
        std::array::from_fn(|k| Tensor::cat_batch(&units.iter().map(|u| &u[k]).collect::<Vec<_>>()))
    }
}
