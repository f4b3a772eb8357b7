use serde::{Deserialize, Serialize};

use super::{Scene, ViewTransform};
use crate::error::Result;
use crate::tensor::Tensor;

/// Ground-truth cell pairs between two views of the same scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoCorrespondence {
    /// `(query cell, key cell)` flat grid indices.
    pub pairs: Vec<(usize, usize)>,
    /// Matched query cells divided by `grid²`.
    pub overlap_fraction: f64,
}

/// Pairs each query grid cell with the key cell whose source-space center is
/// nearest, keeping the pair when the query center lies inside the key crop
/// and the distance is below one key-cell width.
pub fn geometry_correspondence(t_q: &ViewTransform, t_k: &ViewTransform, grid: usize) -> GeoCorrespondence {
    assert!(grid >= 1, "grid must be positive");
    let cells = grid * grid;
    let key_centers: Vec<(f64, f64)> = (0..cells).map(|j| t_k.cell_center(j, grid)).collect();
    let key_cell_width = t_k.crop_w as f64 / grid as f64;

    let mut pairs = Vec::new();
    for i in 0..cells {
        let (qx, qy) = t_q.cell_center(i, grid);
        if !t_k.contains_source_point(qx, qy) {
            continue;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, &(kx, ky)) in key_centers.iter().enumerate() {
            let d = (qx - kx).hypot(qy - ky);
            if d < best.1 {
                best = (j, d);
            }
        }
        if best.1 < key_cell_width {
            pairs.push((i, best.0));
        }
    }
    GeoCorrespondence {
        overlap_fraction: pairs.len() as f64 / cells as f64,
        pairs,
    }
}

/// Majority object label of the source pixels under each grid cell of a
/// view, as a `grid×grid` tensor. Ties go to the lowest label.
///
/// A source pixel belongs to a cell when its center falls inside the cell's
/// source rectangle.
pub fn mask_at_grid(scene: &Scene, t: &ViewTransform, grid: usize) -> Result<Tensor> {
    let labels = grid_labels(scene, t, grid)?;
    Tensor::new(&[grid, grid], labels.iter().map(|&l| f64::from(l)).collect())
}

/// [`mask_at_grid`] as plain labels.
pub fn grid_labels(scene: &Scene, t: &ViewTransform, grid: usize) -> Result<Vec<u32>> {
    t.validate(scene.size())?;
    let max_label = scene.objects.len();
    let mut out = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        let ys = covered(t.crop_y, t.crop_h, row, grid);
        for col in 0..grid {
            let xs = covered(t.crop_x, t.crop_w, t.unflip(col, grid), grid);
            let mut counts = vec![0usize; max_label + 1];
            for y in ys.clone() {
                for x in xs.clone() {
                    counts[scene.label_at(x, y) as usize] += 1;
                }
            }
            if counts.iter().all(|&c| c == 0) {
                let (cx, cy) = t.cell_center(row * grid + col, grid);
                let (x, y) = (cx as usize, cy as usize);
                out.push(scene.label_at(x.min(scene.size() - 1), y.min(scene.size() - 1)));
                continue;
            }
            let label = (0..=max_label)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("non-empty");
            out.push(label as u32);
        }
    }
    Ok(out)
}

/// Source pixels whose centers fall in cell `cell` of `grid` equal parts of
/// `[origin, origin + extent)`, computed in exact integer arithmetic.
fn covered(origin: usize, extent: usize, cell: usize, grid: usize) -> std::ops::Range<usize> {
    // pixel p is covered iff 2·cell·extent <= grid·(2(p − origin) + 1) < 2·(cell+1)·extent
    let first = (0..extent).find(|&p| grid * (2 * p + 1) >= 2 * cell * extent);
    let Some(first) = first else {
        return origin..origin;
    };
    let end = (first..extent)
        .find(|&p| grid * (2 * p + 1) >= 2 * (cell + 1) * extent)
        .unwrap_or(extent);
    origin + first..origin + end
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_scene, sample_view_pair, AugmentationPolicy, SceneSpec};

    fn transform(x: usize, y: usize, w: usize, h: usize, flip: bool) -> ViewTransform {
        ViewTransform {
            crop_x: x,
            crop_y: y,
            crop_w: w,
            crop_h: h,
            flip,
            out_size: 32,
            color_shift: [0.0; 3],
        }
    }

    #[test]
    fn identical_transforms_pair_each_cell_with_itself() {
        let t = transform(5, 7, 40, 36, false);
        let geo = geometry_correspondence(&t, &t, 4);
        assert_eq!(geo.pairs, (0..16).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(geo.overlap_fraction, 1.0);
    }

    #[test]
    fn disjoint_crops_have_no_pairs() {
        let a = transform(0, 0, 30, 30, false);
        let b = transform(32, 32, 30, 30, true);
        let geo = geometry_correspondence(&a, &b, 4);
        assert!(geo.pairs.is_empty());
        assert_eq!(geo.overlap_fraction, 0.0);
        // Adjacent but disjoint crops as well.
        let c = transform(30, 0, 30, 30, false);
        assert!(geometry_correspondence(&a, &c, 4).pairs.is_empty());
        assert!(geometry_correspondence(&c, &a, 4).pairs.is_empty());
    }

    #[test]
    fn flip_maps_to_mirrored_column() {
        let grid = 4;
        let t = transform(10, 4, 44, 52, false);
        let f = ViewTransform {
            flip: true,
            ..t.clone()
        };
        let geo = geometry_correspondence(&t, &f, grid);
        // brute force: mirrored column has the same source center
        let expected: Vec<(usize, usize)> = (0..grid * grid)
            .map(|i| {
                let (r, c) = (i / grid, i % grid);
                let j = r * grid + (grid - 1 - c);
                let (ax, ay) = t.cell_center(i, grid);
                let (bx, by) = f.cell_center(j, grid);
                assert!((ax - bx).abs() < 1e-12 && (ay - by).abs() < 1e-12);
                (i, j)
            })
            .collect();
        assert_eq!(geo.pairs, expected);
    }

    #[test]
    fn emptiness_is_symmetric_and_tracks_overlap() {
        let scene = generate_scene(0, &SceneSpec::default()).unwrap();
        let policy = AugmentationPolicy::default();
        let mut overlapping = 0;
        for seed in 0..200 {
            let pair = sample_view_pair(&scene, seed, &policy).unwrap();
            let fwd = geometry_correspondence(&pair.t_q, &pair.t_k, 4);
            let bwd = geometry_correspondence(&pair.t_k, &pair.t_q, 4);
            assert_eq!(fwd.pairs.is_empty(), bwd.pairs.is_empty(), "seed {seed}");
            assert_eq!(fwd.pairs.is_empty(), !pair.t_q.crops_overlap(&pair.t_k), "seed {seed}");
            if fwd.overlap_fraction > 0.0 {
                overlapping += 1;
            }
        }
        assert!(overlapping >= 120, "only {overlapping}/200 pairs overlap");
    }

    #[test]
    fn pairs_round_trip_within_one_key_cell() {
        let scene = generate_scene(4, &SceneSpec::default()).unwrap();
        for seed in 0..100 {
            let pair = sample_view_pair(&scene, seed, &AugmentationPolicy::default()).unwrap();
            let geo = geometry_correspondence(&pair.t_q, &pair.t_k, 4);
            let width = pair.t_k.crop_w as f64 / 4.0;
            for &(i, j) in &geo.pairs {
                let (qx, qy) = pair.t_q.cell_center(i, 4);
                let (kx, ky) = pair.t_k.cell_center(j, 4);
                assert!((qx - kx).hypot(qy - ky) < width);
                assert!(i < 16 && j < 16);
            }
        }
    }

    #[test]
    fn background_crop_is_all_zero() {
        let scene = generate_scene(0, &SceneSpec::single_object(64)).unwrap();
        // find a fully background 16x16 window
        let s = scene.size();
        let mut found = None;
        'search: for y in 0..=s - 16 {
            for x in 0..=s - 16 {
                if (y..y + 16).all(|yy| (x..x + 16).all(|xx| scene.label_at(xx, yy) == 0)) {
                    found = Some((x, y));
                    break 'search;
                }
            }
        }
        let (x, y) = found.expect("single-object scene has a background window");
        let grid = mask_at_grid(&scene, &transform(x, y, 16, 16, false), 4).unwrap();
        assert_eq!(grid.max_abs(), 0.0);
    }

    #[test]
    fn crop_inside_object_takes_its_label() {
        let scene = generate_scene(6, &SceneSpec::single_object(64)).unwrap();
        let s = scene.size();
        let mut found = None;
        'search: for y in 0..=s - 8 {
            for x in 0..=s - 8 {
                if (y..y + 8).all(|yy| (x..x + 8).all(|xx| scene.label_at(xx, yy) == 1)) {
                    found = Some((x, y));
                    break 'search;
                }
            }
        }
        let (x, y) = found.expect("object is larger than 8x8");
        let grid = mask_at_grid(&scene, &transform(x, y, 8, 8, true), 4).unwrap();
        assert!(grid.data().iter().all(|&l| l == 1.0));
    }

    /// Pixel-level oracle: assign every source pixel to a cell by its center
    /// and count.
    fn brute_force_labels(scene: &Scene, t: &ViewTransform, grid: usize) -> Vec<u32> {
        let n_labels = scene.objects.len() + 1;
        let mut counts = vec![vec![0usize; n_labels]; grid * grid];
        for y in t.crop_y..t.crop_y + t.crop_h {
            for x in t.crop_x..t.crop_x + t.crop_w {
                let fx = (x as f64 + 0.5 - t.crop_x as f64) / t.crop_w as f64;
                let fy = (y as f64 + 0.5 - t.crop_y as f64) / t.crop_h as f64;
                let src_col = (fx * grid as f64).floor() as usize;
                let row = (fy * grid as f64).floor() as usize;
                let col = if t.flip { grid - 1 - src_col } else { src_col };
                counts[row * grid + col][scene.label_at(x, y) as usize] += 1;
            }
        }
        counts
            .iter()
            .map(|c| {
                let best = *c.iter().max().unwrap();
                c.iter().position(|&v| v == best).unwrap() as u32
            })
            .collect()
    }

    #[test]
    fn agrees_with_pixel_oracle() {
        let policy = AugmentationPolicy::default();
        for seed in 0..60 {
            let scene = generate_scene(seed, &SceneSpec::default()).unwrap();
            let pair = sample_view_pair(&scene, seed + 1000, &policy).unwrap();
            for t in [&pair.t_q, &pair.t_k] {
                for grid in [1, 3, 4, 7] {
                    assert_eq!(
                        grid_labels(&scene, t, grid).unwrap(),
                        brute_force_labels(&scene, t, grid),
                        "seed {seed} grid {grid} transform {t:?}"
                    );
                }
            }
        }
    }
}
