//! Procedural test content: textured scenes under integer camera motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Clip, Frame};
use crate::Result;

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64, v: f64 },
    Disk { cx: f64, cy: f64, r: f64, v: f64 },
}

struct Grating {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

/// Lattice value noise over several octaves, amplitude growing with scale
/// so the spectrum falls off roughly as 1/f.
struct Texture {
    key: u64,
    octaves: Vec<(f64, f64)>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Texture {
    fn lattice(&self, octave: usize, ix: i64, iy: i64) -> f64 {
        let h = splitmix(self.key ^ splitmix((octave as u64) << 48 ^ splitmix(ix as u64) ^ (iy as u64).rotate_left(29)));
        (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let mut v = 0.0;
        for (o, &(spacing, amp)) in self.octaves.iter().enumerate() {
            let (gx, gy) = (x / spacing, y / spacing);
            let (ix, iy) = (gx.floor(), gy.floor());
            let (tx, ty) = (smooth(gx - ix), smooth(gy - iy));
            let (ix, iy) = (ix as i64, iy as i64);
            let top = self.lattice(o, ix, iy) * (1.0 - tx) + self.lattice(o, ix + 1, iy) * tx;
            let bottom = self.lattice(o, ix, iy + 1) * (1.0 - tx) + self.lattice(o, ix + 1, iy + 1) * tx;
            v += amp * (top * (1.0 - ty) + bottom * ty);
        }
        v
    }
}

struct Scene {
    base: f64,
    texture: Texture,
    gx: f64,
    gy: f64,
    gratings: Vec<Grating>,
    shapes: Vec<Shape>,
}

impl Scene {
    fn random(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Self {
        let span = width.max(height) as f64;
        let gratings = (0..rng.random_range(2..=4))
            .map(|_| {
                let f = rng.random_range(0.01..0.2);
                let th = rng.random_range(0.0..std::f64::consts::PI);
                Grating {
                    fx: f * th.cos(),
                    fy: f * th.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: rng.random_range(3.0..15.0),
                }
            })
            .collect();
        let shapes = (0..rng.random_range(3..=8))
            .map(|_| {
                let v = rng.random_range(-70.0..70.0);
                let cx = rng.random_range(-0.2..1.2) * width as f64;
                let cy = rng.random_range(-0.2..1.2) * height as f64;
                let s = rng.random_range(0.05..0.4) * span;
                if rng.random_bool(0.5) {
                    Shape::Rect {
                        x0: cx - s,
                        y0: cy - s * rng.random_range(0.3..1.0),
                        x1: cx + s * rng.random_range(0.3..1.0),
                        y1: cy + s,
                        v,
                    }
                } else {
                    Shape::Disk { cx, cy, r: s, v }
                }
            })
            .collect();
        let richness = rng.random_range(0.4..1.6);
        let texture = Texture {
            key: rng.random(),
            octaves: [32.0, 16.0, 8.0, 4.0, 2.0].iter().map(|&sp: &f64| (sp, richness * 3.0 * sp.powf(0.75))).collect(),
        };
        Scene {
            base: rng.random_range(70.0..180.0),
            texture,
            gx: rng.random_range(-40.0..40.0) / span,
            gy: rng.random_range(-40.0..40.0) / span,
            gratings,
            shapes,
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let mut v = self.base + self.gx * x + self.gy * y + self.texture.sample(x, y);
        for g in &self.gratings {
            v += g.amp * (std::f64::consts::TAU * (g.fx * x + g.fy * y) + g.phase).sin();
        }
        for s in &self.shapes {
            match *s {
                Shape::Rect { x0, y0, x1, y1, v: dv } => {
                    if x >= x0 && x < x1 && y >= y0 && y < y1 {
                        v += dv;
                    }
                }
                Shape::Disk { cx, cy, r, v: dv } => {
                    if (x - cx).powi(2) + (y - cy).powi(2) < r * r {
                        v += dv;
                    }
                }
            }
        }
        v
    }
}

/// Settings for [`synthetic_clip`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    /// Largest per-frame camera step in pixels along each axis.
    pub max_motion: i32,
    /// Standard deviation of per-frame sensor noise.
    pub noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            max_motion: 2,
            noise: 2.0,
        }
    }
}

/// Deterministic 8-bit clip: one random scene panned by integer steps.
pub fn synthetic_clip(width: usize, height: usize, frames: usize, seed: u64, opts: SynthOptions) -> Result<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::random(width, height, &mut rng);
    let noise = Normal::new(0.0, opts.noise.max(0.0)).expect("finite noise level");
    let (mut ox, mut oy) = (0i32, 0i32);
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut f = Frame::from_fn(width, height, |x, y| scene.sample((x as i32 + ox) as f64, (y as i32 + oy) as f64));
        for v in f.data_mut() {
            *v = (*v + noise.sample(&mut rng)).round().clamp(0.0, 255.0);
        }
        out.push(f);
        ox += rng.random_range(-opts.max_motion..=opts.max_motion);
        oy += rng.random_range(-opts.max_motion..=opts.max_motion);
    }
    Clip::new(out)
}
