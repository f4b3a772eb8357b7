use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeClass {
    Disk,
    Square,
    Triangle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Disk, ShapeClass::Square, ShapeClass::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the point `(x, y)` lies in the shape centered at `(cx, cy)`
    /// with half-extent `r`.
    fn contains(self, x: f64, y: f64, cx: f64, cy: f64, r: f64) -> bool {
        let (dx, dy) = (x - cx, y - cy);
        match self {
            ShapeClass::Disk => dx * dx + dy * dy <= r * r,
            ShapeClass::Square => dx.abs() <= r && dy.abs() <= r,
            // Apex at the top, base along y = cy + r.
            ShapeClass::Triangle => {
                let depth = dy + r;
                (0.0..=2.0 * r).contains(&depth) && dx.abs() <= depth / 2.0
            }
        }
    }
}

/// Parameters of the scene generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Side length `S` of the square source image.
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 64,
            min_objects: 1,
            max_objects: 3,
        }
    }
}

impl SceneSpec {
    pub fn single_object(size: usize) -> Self {
        SceneSpec {
            size,
            min_objects: 1,
            max_objects: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::invalid(
                "size",
                format!("scene side must be >= 32, got {}", self.size),
            ));
        }
        if self.min_objects < 1 || self.max_objects > 3 || self.min_objects > self.max_objects {
            return Err(Error::invalid(
                "objects",
                format!(
                    "object count range {}..={} must lie within 1..=3",
                    self.min_objects, self.max_objects
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    /// `3×S×S`, values in `[0, 1]`.
    pub image: Tensor,
    /// Row-major `S×S` labels: 0 is background, `k ≥ 1` is the k-th object.
    pub mask: Vec<u32>,
    /// Shape class of each object, indexed by `label - 1`.
    pub objects: Vec<ShapeClass>,
    /// Class of the object covering the most pixels.
    pub class_label: ShapeClass,
}

impl Scene {
    pub fn size(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.mask[y * self.size() + x]
    }

    /// The mask as an `S×S` tensor of labels.
    pub fn mask_tensor(&self) -> Tensor {
        let s = self.size();
        Tensor::new(&[s, s], self.mask.iter().map(|&l| f64::from(l)).collect()).expect("mask is S×S")
    }
}

const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.15, 0.25, 0.90],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85],
    [0.10, 0.85, 0.85],
    [0.98, 0.55, 0.05],
    [0.05, 0.05, 0.05],
];

/// Deterministic scene for `seed`.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.size;
    let sf = s as f64;
    let plane = s * s;

    // Background: mid gray with a faint separable wave and pixel noise.
    let base = rng.gen_range(0.35..0.55);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.04..0.04));
    let freq = (rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6));
    let phase = (
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let mut image = vec![0.0; 3 * plane];
    for y in 0..s {
        for x in 0..s {
            let wave = 0.05 * (freq.0 * x as f64 + phase.0).sin() * (freq.1 * y as f64 + phase.1).sin();
            let noise = rng.gen_range(-0.03..0.03);
            for (ch, t) in tint.iter().enumerate() {
                image[ch * plane + y * s + x] = (base + t + wave + noise).clamp(0.0, 1.0);
            }
        }
    }

    let count = rng.gen_range(spec.min_objects..=spec.max_objects);
    let colors: Vec<[f64; 3]> = PALETTE.choose_multiple(&mut rng, count).copied().collect();
    let mut mask = vec![0u32; plane];
    let mut objects = Vec::with_capacity(count);
    for (k, color) in colors.iter().enumerate() {
        let class = *ShapeClass::ALL.choose(&mut rng).expect("non-empty");
        let r = rng.gen_range(0.15 * sf..0.3 * sf);
        let cx = rng.gen_range(r..sf - r);
        let cy = rng.gen_range(r..sf - r);
        let jitter: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.05..0.05));
        for y in 0..s {
            for x in 0..s {
                if class.contains(x as f64 + 0.5, y as f64 + 0.5, cx, cy, r) {
                    mask[y * s + x] = k as u32 + 1;
                    for ch in 0..3 {
                        image[ch * plane + y * s + x] = (color[ch] + jitter[ch]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        objects.push(class);
    }

    let mut area = vec![0usize; count + 1];
    for &l in &mask {
        area[l as usize] += 1;
    }
    // Ties go to the lower label.
    let dominant = (1..=count)
        .max_by(|&a, &b| area[a].cmp(&area[b]).then(b.cmp(&a)))
        .expect("at least one object");
    if area[dominant] == 0 {
        return Err(Error::invalid("scene", "no object pixel was drawn"));
    }

    Ok(Scene {
        id: seed,
        image: Tensor::new(&[3, s, s], image)?,
        mask,
        class_label: objects[dominant - 1],
        objects,
    })
}
