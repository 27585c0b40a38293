//! Camera-aware processing of over-complete clouds.
//!
//! `backproject(fill(zbuffer(crop(project(cloud)))))`: points are projected
//! with the pinhole model, cut to the image and depth range, thinned by a
//! patch z-buffer so that near points hide farther ones in their
//! neighborhood, and the empty image border left by moving the environment is
//! either cropped away (shrink) or padded with environment depth (expand).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::cloud::{PointCloud, UNLABELED};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
    pub d: f64,
    /// Index into the projected cloud.
    pub index: usize,
    /// Exempt from hidden-point removal.
    pub bypass: bool,
}

impl PixelPoint {
    fn cell(&self) -> (i64, i64) {
        (self.u.floor() as i64, self.v.floor() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    #[default]
    Shrink,
    Expand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighborhood {
    /// Square patch (max of the cell offsets).
    #[default]
    Chebyshev,
    /// Disc of cells.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessorConfig {
    /// Patch radius in pixels.
    pub patch_radius: usize,
    /// A point is hidden only by points nearer by more than this, meters.
    pub depth_margin: f64,
    pub fill: FillMode,
    pub neighborhood: Neighborhood,
    /// Side of the square pixel blocks used for environment coverage.
    pub coverage_block: u32,
    /// Smallest acceptable shrunk image side, pixels.
    pub min_size: u32,
    pub clip_depth: bool,
}

impl Default for ProcessorConfig {
    fn default() -> Self {
        ProcessorConfig {
            patch_radius: 2,
            depth_margin: 0.005,
            fill: FillMode::Shrink,
            neighborhood: Neighborhood::Chebyshev,
            coverage_block: 4,
            min_size: 32,
            clip_depth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProcessorError {
    #[error("FillInfeasible: {0}")]
    FillInfeasible(String),
}

/// Pinhole projection; points at or behind the camera plane are dropped.
pub fn project(cloud: &PointCloud, cam: &CameraModel, bypass_labels: &[u16]) -> Vec<PixelPoint> {
    let mut out = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        if z <= 0.0 {
            continue;
        }
        out.push(PixelPoint {
            u: cam.fx * x / z + cam.cx,
            v: cam.fy * y / z + cam.cy,
            d: z,
            index: i,
            bypass: !bypass_labels.is_empty() && bypass_labels.contains(&cloud.label(i)),
        });
    }
    out
}

fn in_image(p: &PixelPoint, cam: &CameraModel) -> bool {
    p.u >= 0.0 && p.u < cam.width as f64 && p.v >= 0.0 && p.v < cam.height as f64
}

/// Keeps pixels inside `[0, W) × [0, H)` and within the camera's depth range.
pub fn crop(pixels: &[PixelPoint], cam: &CameraModel, clip_depth: bool) -> Vec<PixelPoint> {
    pixels
        .iter()
        .filter(|p| in_image(p, cam) && (!clip_depth || (p.d >= cam.depth_min && p.d <= cam.depth_max)))
        .copied()
        .collect()
}

/// Minimum over the `2r + 1` window along rows, then columns.
fn chebyshev_min(grid: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return grid.to_vec();
    }
    let mut rows = vec![f64::INFINITY; w * h];
    for y in 0..h {
        let line = &grid[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = line[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
        }
    }
    let mut out = vec![f64::INFINITY; w * h];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            let mut m = f64::INFINITY;
            for yy in lo..=hi {
                m = m.min(rows[yy * w + x]);
            }
            out[y * w + x] = m;
        }
    }
    out
}

fn euclidean_min(grid: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let r = r as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = vec![f64::INFINITY; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut m = f64::INFINITY;
            for (dx, dy) in &offsets {
                let (xx, yy) = (x + dx, y + dy);
                if xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 {
                    m = m.min(grid[(yy * w as i64 + xx) as usize]);
                }
            }
            out[(y * w as i64 + x) as usize] = m;
        }
    }
    out
}

/// Patch z-buffer on the `width` × `height` cell grid: a point is removed
/// when some point within the patch is nearer by more than the margin.
/// Bypass points occlude but are never removed. Input order is preserved.
pub fn zbuffer_patch(pixels: &[PixelPoint], width: u32, height: u32, cfg: &ProcessorConfig) -> Vec<PixelPoint> {
    let (w, h) = (width as usize, height as usize);
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let mut grid = vec![f64::INFINITY; w * h];
    let inside = |p: &PixelPoint| {
        let (x, y) = p.cell();
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h
    };
    for p in pixels.iter().filter(|p| inside(p)) {
        let (x, y) = p.cell();
        let c = &mut grid[y as usize * w + x as usize];
        *c = c.min(p.d);
    }
    let near = match cfg.neighborhood {
        Neighborhood::Chebyshev => chebyshev_min(&grid, w, h, cfg.patch_radius),
        Neighborhood::Euclidean => euclidean_min(&grid, w, h, cfg.patch_radius),
    };
    pixels
        .iter()
        .filter(|p| inside(p))
        .filter(|p| {
            let (x, y) = p.cell();
            p.bypass || near[y as usize * w + x as usize] >= p.d - cfg.depth_margin
        })
        .copied()
        .collect()
}

/// Which `block × block` pixel blocks contain at least one environment pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMask {
    pub block: u32,
    pub cols: usize,
    pub rows: usize,
    pub covered: Vec<bool>,
}

impl CoverageMask {
    pub fn new(cam: &CameraModel, block: u32) -> Self {
        let block = block.max(1);
        let cols = cam.width.div_ceil(block) as usize;
        let rows = cam.height.div_ceil(block) as usize;
        CoverageMask {
            block,
            cols,
            rows,
            covered: vec![false; cols * rows],
        }
    }

    pub fn from_pixels(env: &[PixelPoint], cam: &CameraModel, block: u32) -> Self {
        let mut m = Self::new(cam, block);
        for p in env.iter().filter(|p| in_image(p, cam)) {
            let (x, y) = p.cell();
            let (bx, by) = (x as usize / m.block as usize, y as usize / m.block as usize);
            m.covered[by * m.cols + bx] = true;
        }
        m
    }

    pub fn intersect(&mut self, other: &CoverageMask) {
        for (a, b) in self.covered.iter_mut().zip(&other.covered) {
            *a &= *b;
        }
    }

    pub fn is_full(&self) -> bool {
        self.covered.iter().all(|c| *c)
    }
}

/// Pixel window `[x0, x0 + width) × [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

/// Largest all-covered rectangle of blocks (maximal rectangle in a binary
/// matrix via per-row histograms), as block `(x, y, w, h)`.
fn largest_block_rect(mask: &CoverageMask) -> Option<(usize, usize, usize, usize)> {
    let mut heights = vec![0usize; mask.cols];
    let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
    for row in 0..mask.rows {
        for c in 0..mask.cols {
            heights[c] = if mask.covered[row * mask.cols + c] { heights[c] + 1 } else { 0 };
        }
        let mut stack: Vec<usize> = Vec::new();
        for c in 0..=mask.cols {
            let hc = if c < mask.cols { heights[c] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] < hc {
                    break;
                }
                stack.pop();
                let ht = heights[top];
                let left = stack.last().map_or(0, |&l| l + 1);
                let area = ht * (c - left);
                if ht > 0 && best.is_none_or(|(a, _)| area > a) {
                    best = Some((area, (left, row + 1 - ht, c - left, ht)));
                }
            }
            stack.push(c);
        }
    }
    best.map(|(_, r)| r)
}

/// Pixel window for shrink fill from a coverage mask.
pub fn shrink_rect(mask: &CoverageMask, cam: &CameraModel, cfg: &ProcessorConfig) -> Result<PixelRect, ProcessorError> {
    if mask.is_full() {
        return Ok(PixelRect {
            x0: 0,
            y0: 0,
            width: cam.width,
            height: cam.height,
        });
    }
    let (bx, by, bw, bh) = largest_block_rect(mask)
        .ok_or_else(|| ProcessorError::FillInfeasible("no environment pixels in view".into()))?;
    let b = mask.block;
    let x0 = bx as u32 * b;
    let y0 = by as u32 * b;
    let rect = PixelRect {
        x0,
        y0,
        width: ((bx + bw) as u32 * b).min(cam.width) - x0,
        height: ((by + bh) as u32 * b).min(cam.height) - y0,
    };
    if rect.width < cfg.min_size || rect.height < cfg.min_size {
        return Err(ProcessorError::FillInfeasible(format!(
            "shrunk image {}x{} is below the {}x{} minimum",
            rect.width, rect.height, cfg.min_size, cfg.min_size
        )));
    }
    let eff = cam.cropped(rect.x0, rect.y0, rect.width, rect.height);
    if eff.validate().is_err() {
        return Err(ProcessorError::FillInfeasible(format!(
            "shrunk window {rect:?} excludes the principal point"
        )));
    }
    Ok(rect)
}

fn environment_pixels<'a>(pixels: &'a [PixelPoint], cloud: &'a PointCloud) -> impl Iterator<Item = &'a PixelPoint> {
    pixels
        .iter()
        .filter(move |p| !p.bypass && cloud.label(p.index) == UNLABELED)
}

/// Environment coverage of one cloud after projection and cropping.
pub fn frame_coverage(cloud: &PointCloud, cam: &CameraModel, cfg: &ProcessorConfig, bypass: &[u16]) -> CoverageMask {
    let px = crop(&project(cloud, cam, bypass), cam, cfg.clip_depth);
    let env: Vec<PixelPoint> = environment_pixels(&px, cloud).copied().collect();
    CoverageMask::from_pixels(&env, cam, cfg.coverage_block)
}

fn shift(pixels: &[PixelPoint], rect: &PixelRect, cam: &CameraModel) -> (Vec<PixelPoint>, CameraModel) {
    let eff = cam.cropped(rect.x0, rect.y0, rect.width, rect.height);
    let moved: Vec<PixelPoint> = pixels
        .iter()
        .map(|p| PixelPoint {
            u: p.u - rect.x0 as f64,
            v: p.v - rect.y0 as f64,
            ..*p
        })
        .filter(|p| in_image(p, &eff))
        .collect();
    (moved, eff)
}

/// Expand fill: every empty cell left of the first (right of the last)
/// environment cell in its row takes that cell's depth; rows without
/// environment copy the nearest row that has some. Returns synthesized
/// pixels with the index of the environment point they copy.
fn expand(pixels: &[PixelPoint], env: &[PixelPoint], cam: &CameraModel) -> Vec<PixelPoint> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut occupied = vec![false; w * h];
    for p in pixels {
        let (x, y) = p.cell();
        occupied[y as usize * w + x as usize] = true;
    }
    let mut env_cell: Vec<Option<(f64, usize)>> = vec![None; w * h];
    for p in env {
        let (x, y) = p.cell();
        let c = &mut env_cell[y as usize * w + x as usize];
        if c.is_none_or(|(d, _)| p.d < d) {
            *c = Some((p.d, p.index));
        }
    }
    let mut fill: Vec<Option<(f64, usize)>> = vec![None; w * h];
    let mut row_has = vec![false; h];
    for y in 0..h {
        let row = &env_cell[y * w..(y + 1) * w];
        let (Some(first), Some(last)) = (row.iter().position(|c| c.is_some()), row.iter().rposition(|c| c.is_some())) else {
            continue;
        };
        row_has[y] = true;
        for x in 0..w {
            fill[y * w + x] = if x < first {
                row[first]
            } else if x > last {
                row[last]
            } else {
                row[x]
            };
        }
    }
    if let Some(_) = row_has.iter().position(|r| *r) {
        for y in 0..h {
            if row_has[y] {
                continue;
            }
            let src = (0..h)
                .filter(|yy| row_has[*yy])
                .min_by_key(|yy| (*yy as i64 - y as i64).abs())
                .expect("some row has environment");
            for x in 0..w {
                fill[y * w + x] = fill[src * w + x];
            }
        }
    }
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if occupied[i] || env_cell[i].is_some() {
                continue;
            }
            if let Some((d, index)) = fill[i] {
                out.push(PixelPoint {
                    u: x as f64 + 0.5,
                    v: y as f64 + 0.5,
                    d,
                    index,
                    bypass: false,
                });
            }
        }
    }
    out
}

/// Fill step. Shrink crops to `rect` (computed from `env` coverage when
/// `None`) and returns the reduced camera; expand pads empty cells with
/// environment depth and keeps the camera.
pub fn fill(
    pixels: &[PixelPoint],
    cam: &CameraModel,
    cfg: &ProcessorConfig,
    env: &[PixelPoint],
    rect: Option<PixelRect>,
) -> Result<(Vec<PixelPoint>, CameraModel), ProcessorError> {
    match cfg.fill {
        FillMode::Shrink => {
            let rect = match rect {
                Some(r) => r,
                None => shrink_rect(&CoverageMask::from_pixels(env, cam, cfg.coverage_block), cam, cfg)?,
            };
            Ok(shift(pixels, &rect, cam))
        }
        FillMode::Expand => {
            let mut out = pixels.to_vec();
            out.extend(expand(pixels, env, cam));
            Ok((out, *cam))
        }
    }
}

/// Inverse projection; colors and labels come from `source` by index.
pub fn backproject(pixels: &[PixelPoint], cam: &CameraModel, source: &PointCloud) -> PointCloud {
    let points = pixels
        .iter()
        .map(|p| {
            [
                ((p.u - cam.cx) * p.d / cam.fx) as f32,
                ((p.v - cam.cy) * p.d / cam.fy) as f32,
                p.d as f32,
            ]
        })
        .collect();
    PointCloud {
        points,
        colors: source
            .colors
            .as_ref()
            .map(|c| pixels.iter().map(|p| c[p.index]).collect()),
        labels: source
            .labels
            .as_ref()
            .map(|l| pixels.iter().map(|p| l[p.index]).collect()),
    }
}

/// Full processing of one frame. With `rect` the shrink window is fixed
/// (dataset mode); otherwise it is computed from this frame alone.
pub fn process_frame_in(
    cloud: &PointCloud,
    cam: &CameraModel,
    cfg: &ProcessorConfig,
    bypass: &[u16],
    rect: Option<PixelRect>,
) -> Result<(PointCloud, CameraModel), ProcessorError> {
    let cropped = crop(&project(cloud, cam, bypass), cam, cfg.clip_depth);
    let env: Vec<PixelPoint> = environment_pixels(&cropped, cloud).copied().collect();
    let visible = zbuffer_patch(&cropped, cam.width, cam.height, cfg);
    let (filled, eff) = fill(&visible, cam, cfg, &env, rect)?;
    Ok((backproject(&filled, &eff, cloud), eff))
}

pub fn process_frame(
    cloud: &PointCloud,
    cam: &CameraModel,
    cfg: &ProcessorConfig,
    bypass: &[u16],
) -> Result<(PointCloud, CameraModel), ProcessorError> {
    process_frame_in(cloud, cam, cfg, bypass, None)
}

/// Shared shrink window for a set of frames: the largest rectangle covered
/// by environment in every frame.
pub fn dataset_rect<'a, I>(frames: I, cam: &CameraModel, cfg: &ProcessorConfig) -> Result<PixelRect, ProcessorError>
where
    I: IntoParallelIterator<Item = (&'a PointCloud, &'a [u16])>,
{
    let masks: Vec<CoverageMask> = frames
        .into_par_iter()
        .map(|(c, bypass)| frame_coverage(c, cam, cfg, bypass))
        .collect();
    let mut acc = CoverageMask::new(cam, cfg.coverage_block);
    acc.covered.iter_mut().for_each(|c| *c = true);
    for m in &masks {
        acc.intersect(m);
    }
    shrink_rect(&acc, cam, cfg)
}
