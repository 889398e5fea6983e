//! Synthetic X-ray-like baggage scenes with planted handgun silhouettes.
//!
//! Intensities follow a transmission model: a light background is multiplied
//! by the transmission of every object over a pixel. Metal transmits little,
//! so guns, bars and coins fall below the metal threshold while the non-metal
//! clutter stays above it.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::{save_annotations, Annotation};
use crate::imagecore::{save_png, GrayImage};
use crate::proposals::BoundingBox;

/// Handgun outline facing right, roughly 44 × 28 pixels at unit scale.
const GUN_OUTLINE: [(f64, f64); 10] = [
    (-22.0, -10.0),
    (22.0, -10.0),
    (22.0, -2.0),
    (-2.0, -2.0),
    (-2.0, 5.0),
    (-9.0, 5.0),
    (-11.0, 18.0),
    (-21.0, 18.0),
    (-18.0, -2.0),
    (-22.0, -2.0),
];

/// Trigger guard opening.
const GUN_HOLE: [(f64, f64); 4] = [(-4.0, 0.0), (-4.0, 3.0), (-8.0, 3.0), (-8.0, 0.0)];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    /// Probability that a scene contains a gun.
    pub gun_probability: f64,
    pub max_bars: usize,
    pub max_coins: usize,
    pub max_clutter: usize,
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 160,
            height: 160,
            gun_probability: 1.0,
            max_bars: 3,
            max_coins: 2,
            max_clutter: 4,
            noise: 0.02,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub id: String,
    pub image: GrayImage,
    /// Tight boxes of the planted guns.
    pub guns: Vec<BoundingBox>,
}

fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut c = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            c = !c;
        }
        j = i;
    }
    c
}

/// Placed shape: pixel membership in local coordinates plus a world extent.
struct Placed {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    scale: f64,
    radius: f64,
}

impl Placed {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (
            (dx * self.cos + dy * self.sin) / self.scale,
            (-dx * self.sin + dy * self.cos) / self.scale,
        )
    }

    fn overlaps(&self, o: &Placed, gap: f64) -> bool {
        (self.cx - o.cx).hypot(self.cy - o.cy) < self.radius + o.radius + gap
    }
}

struct Scene {
    w: usize,
    h: usize,
    transmission: Vec<f64>,
}

impl Scene {
    /// Multiplies `t` into every pixel whose local coordinates satisfy `hit`.
    fn stamp(&mut self, p: &Placed, t: f64, hit: impl Fn(f64, f64) -> bool) -> Option<BoundingBox> {
        let r = p.radius.ceil() as i64 + 1;
        let mut bbox: Option<BoundingBox> = None;
        let x0 = (p.cx as i64 - r).max(0) as usize;
        let x1 = ((p.cx as i64 + r).max(0) as usize).min(self.w - 1);
        let y0 = (p.cy as i64 - r).max(0) as usize;
        let y1 = ((p.cy as i64 + r).max(0) as usize).min(self.h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (lx, ly) = p.local(x as f64 + 0.5, y as f64 + 0.5);
                if hit(lx, ly) {
                    self.transmission[y * self.w + x] *= t;
                    let pt = BoundingBox::point(x as u32, y as u32);
                    bbox = Some(bbox.map_or(pt, |b| b.union(&pt)));
                }
            }
        }
        bbox
    }
}

fn place(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    radius: f64,
    scale: f64,
    taken: &[Placed],
) -> Option<Placed> {
    for _ in 0..200 {
        let cx = rng.gen_range(radius..w as f64 - radius);
        let cy = rng.gen_range(radius..h as f64 - radius);
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = Placed {
            cx,
            cy,
            cos: a.cos(),
            sin: a.sin(),
            scale,
            radius,
        };
        if taken.iter().all(|q| !p.overlaps(q, 4.0)) {
            return Some(p);
        }
    }
    None
}

/// One scene; deterministic in `seed`.
pub fn generate_scene(id: &str, params: &SynthParams, seed: u64) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width, params.height);
    let mut scene = Scene {
        w,
        h,
        transmission: vec![1.0; w * h],
    };
    let background = rng.gen_range(0.82..0.95);

    // non-metal clutter may sit under metal objects
    for _ in 0..rng.gen_range(0..=params.max_clutter) {
        let (a, b): (f64, f64) = (rng.gen_range(8.0..28.0), rng.gen_range(6.0..20.0));
        let p = Placed {
            cx: rng.gen_range(0.0..w as f64),
            cy: rng.gen_range(0.0..h as f64),
            cos: 1.0,
            sin: 0.0,
            scale: 1.0,
            radius: a.max(b),
        };
        let t = rng.gen_range(0.7..0.85);
        let ellipse = rng.gen_bool(0.5);
        scene.stamp(&p, t, |x, y| {
            if ellipse {
                (x / a).powi(2) + (y / b).powi(2) <= 1.0
            } else {
                x.abs() <= a && y.abs() <= b
            }
        });
    }

    let mut taken = Vec::new();
    let mut guns = Vec::new();
    if rng.gen_bool(params.gun_probability) {
        let scale = rng.gen_range(0.9..1.3);
        if let Some(p) = place(&mut rng, w, h, 30.0 * scale, scale, &taken) {
            let t = rng.gen_range(0.08..0.22);
            if let Some(b) = scene.stamp(&p, t, |x, y| {
                inside(&GUN_OUTLINE, x, y) && !inside(&GUN_HOLE, x, y)
            }) {
                guns.push(b);
            }
            taken.push(p);
        }
    }
    for _ in 0..rng.gen_range(1..=params.max_bars.max(1)) {
        let len = rng.gen_range(14.0..30.0);
        let half_w = rng.gen_range(2.0..4.0);
        if let Some(p) = place(&mut rng, w, h, len + 1.0, 1.0, &taken) {
            let t = rng.gen_range(0.08..0.25);
            scene.stamp(&p, t, |x, y| x.abs() <= len && y.abs() <= half_w);
            taken.push(p);
        }
    }
    for _ in 0..rng.gen_range(0..=params.max_coins) {
        let r = rng.gen_range(4.0..8.0);
        if let Some(p) = place(&mut rng, w, h, r + 1.0, 1.0, &taken) {
            let t = rng.gen_range(0.1..0.25);
            scene.stamp(&p, t, |x, y| x * x + y * y <= r * r);
            taken.push(p);
        }
    }

    let image = GrayImage::from_fn(w, h, |x, y| {
        let n = rng.gen_range(-params.noise..=params.noise);
        background * scene.transmission[y * w + x] + n
    });
    SynthImage {
        id: id.to_string(),
        image,
        guns,
    }
}

/// A tightly cropped gun on a light background, for whole-image positives.
pub fn generate_crop(id: &str, seed: u64) -> SynthImage {
    let params = SynthParams {
        width: 72,
        height: 72,
        gun_probability: 1.0,
        max_bars: 0,
        max_coins: 0,
        max_clutter: 0,
        noise: 0.02,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut scene = Scene {
        w: params.width,
        h: params.height,
        transmission: vec![1.0; params.width * params.height],
    };
    let scale = rng.gen_range(0.9..1.2);
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    let p = Placed {
        cx: 36.0,
        cy: 36.0,
        cos: a.cos(),
        sin: a.sin(),
        scale,
        radius: 30.0 * scale,
    };
    let t = rng.gen_range(0.08..0.22);
    let guns = scene
        .stamp(&p, t, |x, y| {
            inside(&GUN_OUTLINE, x, y) && !inside(&GUN_HOLE, x, y)
        })
        .into_iter()
        .collect();
    let background = rng.gen_range(0.82..0.95);
    let image = GrayImage::from_fn(params.width, params.height, |x, y| {
        background * scene.transmission[y * params.width + x] + rng.gen_range(-0.02..=0.02)
    });
    SynthImage {
        id: id.to_string(),
        image,
        guns,
    }
}

/// `n` scenes named `scene_000.png`, … with seeds derived from `seed`.
pub fn generate_corpus(n: usize, params: &SynthParams, seed: u64) -> Vec<SynthImage> {
    (0..n)
        .map(|i| {
            generate_scene(
                &format!("scene_{i:03}.png"),
                params,
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            )
        })
        .collect()
}

pub fn annotations(images: &[SynthImage]) -> Vec<Annotation> {
    images
        .iter()
        .flat_map(|s| s.guns.iter().map(|b| Annotation::gun(s.id.clone(), *b)))
        .collect()
}

/// Writes PNGs and an `annotations.json` into `dir`.
pub fn write_corpus(dir: &Path, images: &[SynthImage]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    for s in images {
        save_png(&s.image, dir.join(&s.id))?;
    }
    save_annotations(dir.join("annotations.json"), &annotations(images))
}
