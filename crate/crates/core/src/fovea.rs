//! Fovea selection policies, grid-cell geometry and the likelihood / overlap
//! diagnostics.

use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attention_map::{AttentionMap, GRID_CELLS, GRID_COLS, GRID_ROWS};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Side of the feature patch, in grid cells, that one fovea covers.
pub const PATCH_CELLS: usize = 3;

pub type Cell = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FoveaPolicy {
    None,
    Random,
    Central,
    TopK,
    Sampled { temperature: f64 },
}

impl FoveaPolicy {
    pub fn needs_attention(&self) -> bool {
        matches!(self, FoveaPolicy::TopK | FoveaPolicy::Sampled { .. })
    }

    pub fn label(&self) -> String {
        match self {
            FoveaPolicy::None => "none".into(),
            FoveaPolicy::Random => "random".into(),
            FoveaPolicy::Central => "central".into(),
            FoveaPolicy::TopK => "top-k".into(),
            FoveaPolicy::Sampled { temperature } => format!("sampled-t{temperature}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoveaSelectionConfig {
    pub policy: FoveaPolicy,
    pub count: usize,
    /// Full-resolution patch side in pixels.
    pub patch_px: usize,
    pub seed: u64,
}

impl FoveaSelectionConfig {
    pub fn new(policy: FoveaPolicy, patch_px: usize, seed: u64) -> Self {
        FoveaSelectionConfig {
            policy,
            count: 2,
            patch_px,
            seed,
        }
    }

    pub fn validate(&self, frame: (usize, usize)) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("fovea count must be at least 1".into()));
        }
        if let FoveaPolicy::Sampled { temperature } = self.policy {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Config(format!("temperature {temperature} must be positive")));
            }
        }
        if self.policy == FoveaPolicy::Central && self.count != 2 {
            return Err(Error::Config("central policy places exactly two foveae".into()));
        }
        if self.patch_px == 0 || self.patch_px > frame.0 || self.patch_px > frame.1 {
            return Err(Error::Config(format!(
                "patch size {} does not fit frame {:?}",
                self.patch_px, frame
            )));
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        (self.bottom - self.top) * (self.right - self.left)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.bottom && x >= self.left && x < self.right
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoveaGeometry {
    pub cell: Cell,
    pub rect: PixelRect,
    /// Top-left grid cell `(h, w)` of the 3×3 feature patch.
    pub corner: Cell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoveaPlacement {
    pub cells: Vec<Cell>,
    pub rects: Vec<PixelRect>,
    pub corners: Vec<Cell>,
}

impl FoveaPlacement {
    pub fn from_cells(cells: &[Cell], frame: (usize, usize), patch_px: usize) -> Self {
        let geoms: Vec<FoveaGeometry> = cells.iter().map(|&c| cell_to_geometry(c, frame, patch_px)).collect();
        FoveaPlacement {
            cells: cells.to_vec(),
            rects: geoms.iter().map(|g| g.rect).collect(),
            corners: geoms.iter().map(|g| g.corner).collect(),
        }
    }

    pub fn geometries(&self) -> impl Iterator<Item = FoveaGeometry> + '_ {
        self.cells
            .iter()
            .zip(&self.rects)
            .zip(&self.corners)
            .map(|((&cell, &rect), &corner)| FoveaGeometry { cell, rect, corner })
    }
}

fn clamp_span(center: f64, size: usize, limit: usize) -> (usize, usize) {
    let start = (center - size as f64 / 2.0).round();
    let start = start.clamp(0.0, (limit - size) as f64) as usize;
    (start, start + size)
}

/// Maps a grid cell to its pixel patch (centred on the cell, clamped inside
/// the frame) and the insertion corner of its feature patch.
pub fn cell_to_geometry(cell: Cell, frame: (usize, usize), patch_px: usize) -> FoveaGeometry {
    let (i, j) = cell;
    let pitch_y = frame.0 as f64 / GRID_ROWS as f64;
    let pitch_x = frame.1 as f64 / GRID_COLS as f64;
    let (top, bottom) = clamp_span((i as f64 + 0.5) * pitch_y, patch_px, frame.0);
    let (left, right) = clamp_span((j as f64 + 0.5) * pitch_x, patch_px, frame.1);
    let corner = (
        i.saturating_sub(1).min(GRID_ROWS - PATCH_CELLS),
        j.saturating_sub(1).min(GRID_COLS - PATCH_CELLS),
    );
    FoveaGeometry {
        cell,
        rect: PixelRect {
            top,
            left,
            bottom,
            right,
        },
        corner,
    }
}

/// Sampling distribution `p_i ∝ exp(log q_i / T)`. Cells with `q_i = 0`
/// get probability zero.
pub fn tempered_probabilities(map: &AttentionMap, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    if map.probs.len() != GRID_CELLS || map.probs.iter().any(|q| !q.is_finite() || *q < 0.0) {
        return Err(Error::Distribution("attention map is not a valid grid".into()));
    }
    let logits: Vec<Option<f64>> = map
        .probs
        .iter()
        .map(|&q| (q > 0.0).then(|| q.ln() / temperature))
        .collect();
    let max = logits
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Distribution("attention map has no mass".into()));
    }
    let weights: Vec<f64> = logits
        .iter()
        .map(|l| l.map_or(0.0, |l| (l - max).exp()))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn index_to_cell(i: usize) -> Cell {
    (i / GRID_COLS, i % GRID_COLS)
}

/// Inverse-CDF draw from a categorical distribution.
pub fn draw_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// `count` independent draws (with replacement) from the tempered map.
pub fn sample_fovea_cells(map: &AttentionMap, temperature: f64, count: usize, rng: &mut Rng) -> Result<Vec<Cell>> {
    let p = tempered_probabilities(map, temperature)?;
    Ok((0..count).map(|_| index_to_cell(draw_categorical(&p, rng))).collect())
}

/// The `count` largest cells, ties broken in row-major order.
pub fn topk_fovea_cells(map: &AttentionMap, count: usize) -> Vec<Cell> {
    let mut order: Vec<usize> = (0..map.probs.len()).collect();
    order.sort_by(|&a, &b| map.probs[b].total_cmp(&map.probs[a]).then(a.cmp(&b)));
    order.into_iter().take(count).map(index_to_cell).collect()
}

pub fn random_fovea_cells(count: usize, rng: &mut Rng) -> Vec<Cell> {
    (0..count).map(|_| index_to_cell(rng.gen_range(0..GRID_CELLS))).collect()
}

/// Two cells whose patches tile the central `patch × 2·patch` region: the
/// row through the frame centre, one column either side of centre.
pub fn central_fovea_cells() -> Vec<Cell> {
    let row = GRID_ROWS / 2;
    let mid = GRID_COLS / 2;
    vec![(row, mid - 2), (row, mid + 1)]
}

/// Picks cells for one frame. `map` is required for attention-driven policies.
pub fn select_cells(config: &FoveaSelectionConfig, map: Option<&AttentionMap>, rng: &mut Rng) -> Result<Vec<Cell>> {
    let need_map = || map.ok_or_else(|| Error::MissingAttention(config.policy.label()));
    Ok(match config.policy {
        FoveaPolicy::None => Vec::new(),
        FoveaPolicy::Random => random_fovea_cells(config.count, rng),
        FoveaPolicy::Central => central_fovea_cells(),
        FoveaPolicy::TopK => topk_fovea_cells(need_map()?, config.count),
        FoveaPolicy::Sampled { temperature } => sample_fovea_cells(need_map()?, temperature, config.count, rng)?,
    })
}

/// Attention mass captured by the distinct selected cells.
pub fn fovea_likelihood(map: &AttentionMap, cells: &[Cell]) -> f64 {
    let distinct: BTreeSet<Cell> = cells.iter().copied().collect();
    distinct.iter().map(|&(i, j)| map.get(i, j)).sum()
}

fn union_areas(a: &[PixelRect], b: &[PixelRect]) -> (usize, usize) {
    let mut ys: Vec<usize> = a.iter().chain(b).flat_map(|r| [r.top, r.bottom]).collect();
    let mut xs: Vec<usize> = a.iter().chain(b).flat_map(|r| [r.left, r.right]).collect();
    ys.sort_unstable();
    ys.dedup();
    xs.sort_unstable();
    xs.dedup();
    let (mut union_a, mut both) = (0, 0);
    for yw in ys.windows(2) {
        for xw in xs.windows(2) {
            let in_a = a.iter().any(|r| r.contains(yw[0], xw[0]));
            if !in_a {
                continue;
            }
            let area = (yw[1] - yw[0]) * (xw[1] - xw[0]);
            union_a += area;
            if b.iter().any(|r| r.contains(yw[0], xw[0])) {
                both += area;
            }
        }
    }
    (union_a, both)
}

/// `|∪A ∩ ∪B| / |∪A|` by pixel area.
pub fn fovea_overlap(current: &[PixelRect], next: &[PixelRect]) -> f64 {
    let (union_a, both) = union_areas(current, next);
    if union_a == 0 {
        return 0.0;
    }
    both as f64 / union_a as f64
}

/// One line of the placement log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub clip: String,
    pub frame: usize,
    pub cells: Vec<Cell>,
    pub rects: Vec<PixelRect>,
    pub likelihood: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    const FULL: (usize, usize) = (720, 1280);

    fn peaked(cells: &[(Cell, f64)]) -> AttentionMap {
        let rest = 1.0 - cells.iter().map(|c| c.1).sum::<f64>();
        let n_rest = GRID_CELLS - cells.len();
        let mut w = vec![rest / n_rest as f64; GRID_CELLS];
        for &((i, j), q) in cells {
            w[i * GRID_COLS + j] = q;
        }
        AttentionMap::from_weights(0, w).unwrap()
    }

    #[test]
    fn unit_temperature_is_identity() {
        let m = peaked(&[((2, 3), 0.4), ((5, 5), 0.2)]);
        let p = tempered_probabilities(&m, 1.0).unwrap();
        for (a, b) in p.iter().zip(&m.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cold_sampling_hits_argmax() {
        let m = peaked(&[((4, 7), 0.3), ((1, 1), 0.2)]);
        let mut rng = seed::rng(1);
        let mut hits = 0;
        for _ in 0..10_000 {
            let c = sample_fovea_cells(&m, 0.01, 2, &mut rng).unwrap();
            hits += c.iter().filter(|&&c| c == (4, 7)).count();
        }
        assert!(hits as f64 / 20_000.0 > 0.99);
    }

    #[test]
    fn zero_mass_cells_are_never_drawn() {
        let mut w = vec![0.0; GRID_CELLS];
        w[5] = 1.0;
        w[77] = 3.0;
        let m = AttentionMap::from_weights(0, w).unwrap();
        let p = tempered_probabilities(&m, 2.0).unwrap();
        assert_eq!(p.iter().filter(|v| **v > 0.0).count(), 2);
        let mut rng = seed::rng(2);
        for _ in 0..200 {
            for c in sample_fovea_cells(&m, 0.7, 2, &mut rng).unwrap() {
                assert!(c == index_to_cell(5) || c == index_to_cell(77));
            }
        }
    }

    #[test]
    fn all_zero_map_rejected() {
        let m = AttentionMap {
            frame: 0,
            probs: vec![0.0; GRID_CELLS],
        };
        assert!(matches!(
            sample_fovea_cells(&m, 1.0, 2, &mut seed::rng(0)),
            Err(Error::Distribution(_))
        ));
    }

    #[test]
    fn topk_examples() {
        let mut w = vec![0.05 / 142.0; GRID_CELLS];
        w[4 * GRID_COLS + 7] = 0.9;
        w[0] = 0.05;
        let m = AttentionMap::from_weights(0, w).unwrap();
        assert_eq!(topk_fovea_cells(&m, 2), vec![(4, 7), (0, 0)]);
        assert_eq!(topk_fovea_cells(&AttentionMap::uniform(0), 2), vec![(0, 0), (0, 1)]);
        assert_eq!(topk_fovea_cells(&m, GRID_CELLS).len(), GRID_CELLS);
    }

    #[test]
    fn one_hot_map_sampling_agrees_with_topk() {
        let mut w = vec![0.0; GRID_CELLS];
        w[3 * GRID_COLS + 12] = 1.0;
        let m = AttentionMap::from_weights(0, w).unwrap();
        let s = sample_fovea_cells(&m, 1.0, 1, &mut seed::rng(9)).unwrap();
        assert_eq!(s, topk_fovea_cells(&m, 1));
    }

    #[test]
    fn central_rectangles_tile_central_region() {
        let rects: Vec<PixelRect> = central_fovea_cells()
            .into_iter()
            .map(|c| cell_to_geometry(c, FULL, 240).rect)
            .collect();
        assert_eq!(
            rects,
            vec![
                PixelRect { top: 240, left: 400, bottom: 480, right: 640 },
                PixelRect { top: 240, left: 640, bottom: 480, right: 880 },
            ]
        );
    }

    #[test]
    fn geometry_examples() {
        let g = cell_to_geometry((4, 7), FULL, 240);
        assert_eq!(g.rect, PixelRect { top: 240, left: 480, bottom: 480, right: 720 });
        assert_eq!(g.corner, (3, 6));
        let g = cell_to_geometry((0, 0), FULL, 240);
        assert_eq!(g.rect, PixelRect { top: 0, left: 0, bottom: 240, right: 240 });
        assert_eq!(g.corner, (0, 0));
        assert_eq!(cell_to_geometry((8, 15), FULL, 240).corner, (6, 13));
    }

    #[test]
    fn corner_block_contains_cell_at_every_scale() {
        for scale in [1, 2, 4] {
            let frame = (720 / scale, 1280 / scale);
            for i in 0..GRID_ROWS {
                for j in 0..GRID_COLS {
                    let g = cell_to_geometry((i, j), frame, 240 / scale);
                    let (h, w) = g.corner;
                    assert!(i >= h && i < h + PATCH_CELLS && j >= w && j < w + PATCH_CELLS);
                    assert!(g.rect.bottom <= frame.0 && g.rect.right <= frame.1);
                    assert_eq!(g.rect.area(), (240 / scale) * (240 / scale));
                }
            }
        }
    }

    #[test]
    fn likelihood_examples() {
        let m = peaked(&[((4, 7), 0.3), ((4, 8), 0.18)]);
        let cells = topk_fovea_cells(&m, 2);
        assert!((fovea_likelihood(&m, &cells) - 0.48).abs() < 1e-12);
        let u = AttentionMap::uniform(0);
        assert!((fovea_likelihood(&u, &[(0, 0), (1, 1)]) - 2.0 / 144.0).abs() < 1e-12);
        // Duplicates count once.
        assert!((fovea_likelihood(&u, &[(0, 0), (0, 0)]) - 1.0 / 144.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let a = PixelRect { top: 0, left: 0, bottom: 240, right: 240 };
        let far = PixelRect { top: 300, left: 300, bottom: 540, right: 540 };
        let shifted = PixelRect { top: 0, left: 120, bottom: 240, right: 360 };
        assert_eq!(fovea_overlap(&[a], &[a]), 1.0);
        assert_eq!(fovea_overlap(&[a], &[far]), 0.0);
        assert!((fovea_overlap(&[a], &[shifted]) - 0.5).abs() < 1e-9);
    }
}
