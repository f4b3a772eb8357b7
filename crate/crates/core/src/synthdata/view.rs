use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The exact transform that produced one view from its source scene.
///
/// Rendering order: crop, nearest-neighbor resize to `out_size`, horizontal
/// flip, additive color shift, clamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub crop_x: usize,
    pub crop_y: usize,
    pub crop_w: usize,
    pub crop_h: usize,
    pub flip: bool,
    pub out_size: usize,
    pub color_shift: [f64; 3],
}

impl ViewTransform {
    /// The whole `size×size` source resized to `out_size`, unflipped.
    pub fn identity(size: usize, out_size: usize) -> Self {
        ViewTransform {
            crop_x: 0,
            crop_y: 0,
            crop_w: size,
            crop_h: size,
            flip: false,
            out_size,
            color_shift: [0.0; 3],
        }
    }

    pub fn validate(&self, source_size: usize) -> Result<()> {
        if self.out_size < 8 {
            return Err(Error::invalid(
                "out_size",
                format!("must be >= 8, got {}", self.out_size),
            ));
        }
        if self.crop_w == 0
            || self.crop_h == 0
            || self.crop_x + self.crop_w > source_size
            || self.crop_y + self.crop_h > source_size
        {
            return Err(Error::invalid(
                "crop",
                format!(
                    "crop {}x{}+{}+{} does not fit a {source_size}px source",
                    self.crop_w, self.crop_h, self.crop_x, self.crop_y
                ),
            ));
        }
        if self.color_shift.iter().any(|c| !(-0.2..=0.2).contains(c)) {
            return Err(Error::invalid("color_shift", "components must lie in [-0.2, 0.2]"));
        }
        Ok(())
    }

    /// Column of the unflipped resized crop shown at view column `u` of a
    /// `side`-wide axis (pixels or grid cells).
    pub(crate) fn unflip(&self, u: usize, side: usize) -> usize {
        if self.flip {
            side - 1 - u
        } else {
            u
        }
    }

    /// Source-image coordinates of the center of grid cell `index` on a
    /// `grid×grid` lattice over the view.
    pub fn cell_center(&self, index: usize, grid: usize) -> (f64, f64) {
        let (row, col) = (index / grid, index % grid);
        let col = self.unflip(col, grid);
        let g = grid as f64;
        (
            self.crop_x as f64 + (col as f64 + 0.5) / g * self.crop_w as f64,
            self.crop_y as f64 + (row as f64 + 0.5) / g * self.crop_h as f64,
        )
    }

    pub fn contains_source_point(&self, x: f64, y: f64) -> bool {
        x >= self.crop_x as f64
            && x < (self.crop_x + self.crop_w) as f64
            && y >= self.crop_y as f64
            && y < (self.crop_y + self.crop_h) as f64
    }

    /// Whether the two crop rectangles share any source area.
    pub fn crops_overlap(&self, other: &ViewTransform) -> bool {
        self.crop_x < other.crop_x + other.crop_w
            && other.crop_x < self.crop_x + self.crop_w
            && self.crop_y < other.crop_y + other.crop_h
            && other.crop_y < self.crop_y + self.crop_h
    }
}

/// Two augmented views of one scene plus the transforms that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_q: Tensor,
    pub view_k: Tensor,
    pub t_q: ViewTransform,
    pub t_k: ViewTransform,
    pub scene_ref: u64,
}

impl ViewPair {
    /// The same pair with query and key roles exchanged.
    pub fn swapped(&self) -> ViewPair {
        ViewPair {
            view_q: self.view_k.clone(),
            view_k: self.view_q.clone(),
            t_q: self.t_k.clone(),
            t_k: self.t_q.clone(),
            scene_ref: self.scene_ref,
        }
    }
}

/// Ranges the two view transforms are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    /// Crop area as a fraction of the source area.
    pub scale: (f64, f64),
    /// Crop aspect ratio `w/h`, sampled log-uniformly.
    pub ratio: (f64, f64),
    pub flip_probability: f64,
    /// Maximum absolute per-channel color offset.
    pub color_shift: f64,
    pub out_size: usize,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            scale: (0.3, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_probability: 0.5,
            color_shift: 0.2,
            out_size: 32,
        }
    }
}

impl AugmentationPolicy {
    /// Full-scene views only: no crop, flip or color change.
    pub fn identity(out_size: usize) -> Self {
        AugmentationPolicy {
            scale: (1.0, 1.0),
            ratio: (1.0, 1.0),
            flip_probability: 0.0,
            color_shift: 0.0,
            out_size,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if !(0.3..=1.0).contains(&lo) || !(0.3..=1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid(
                "scale",
                format!("range {lo}..{hi} must lie within [0.3, 1.0]"),
            ));
        }
        let (rlo, rhi) = self.ratio;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(Error::invalid("ratio", format!("invalid range {rlo}..{rhi}")));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::invalid("flip_probability", "must lie in [0, 1]"));
        }
        if !(0.0..=0.2).contains(&self.color_shift) {
            return Err(Error::invalid("color_shift", "must lie in [0, 0.2]"));
        }
        if self.out_size < 8 {
            return Err(Error::invalid("out_size", "must be >= 8"));
        }
        Ok(())
    }

    fn sample(&self, source: usize, rng: &mut impl Rng) -> ViewTransform {
        let s = source as f64;
        let area = s * s * sample_range(rng, self.scale);
        let log_ratio = sample_range(rng, (self.ratio.0.ln(), self.ratio.1.ln()));
        let ratio = log_ratio.exp();
        let mut w = ((area * ratio).sqrt().round() as usize).clamp(1, source);
        let mut h = ((area / ratio).sqrt().round() as usize).clamp(1, source);
        if w == source && h < source || h == source && w < source {
            // Aspect ratio clipped by the source border: fall back to square.
            let side = (area.sqrt().round() as usize).clamp(1, source);
            w = side;
            h = side;
        }
        let crop_x = rng.gen_range(0..=source - w);
        let crop_y = rng.gen_range(0..=source - h);
        let flip = self.flip_probability > 0.0 && rng.gen_bool(self.flip_probability);
        let color_shift = std::array::from_fn(|_| {
            if self.color_shift > 0.0 {
                rng.gen_range(-self.color_shift..=self.color_shift)
            } else {
                0.0
            }
        });
        ViewTransform {
            crop_x,
            crop_y,
            crop_w: w,
            crop_h: h,
            flip,
            out_size: self.out_size,
            color_shift,
        }
    }
}

fn sample_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Renders one view by nearest-neighbor resampling of the crop.
pub fn render_view(scene: &Scene, t: &ViewTransform) -> Result<Tensor> {
    let s = scene.size();
    t.validate(s)?;
    let v = t.out_size;
    let plane_in = s * s;
    let src = scene.image.data();
    let mut out = vec![0.0; 3 * v * v];
    for row in 0..v {
        let sy = t.crop_y + ((2 * row + 1) * t.crop_h) / (2 * v);
        for col in 0..v {
            let u = t.unflip(col, v);
            let sx = t.crop_x + ((2 * u + 1) * t.crop_w) / (2 * v);
            for ch in 0..3 {
                let value = src[ch * plane_in + sy * s + sx] + t.color_shift[ch];
                out[ch * v * v + row * v + col] = value.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[3, v, v], out)
}

/// Samples two independent transforms from `policy` and renders both views.
pub fn sample_view_pair(scene: &Scene, seed: u64, policy: &AugmentationPolicy) -> Result<ViewPair> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_q = policy.sample(scene.size(), &mut rng);
    let t_k = policy.sample(scene.size(), &mut rng);
    Ok(ViewPair {
        view_q: render_view(scene, &t_q)?,
        view_k: render_view(scene, &t_k)?,
        t_q,
        t_k,
        scene_ref: scene.id,
    })
}
