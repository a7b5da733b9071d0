//! Tile-binned front-to-back compositing.

use rayon::prelude::*;

use super::project::{project_gaussian, Splat2D, FOOTPRINT_SIGMAS};
use super::RenderError;
use crate::camera::Camera;
use crate::kinematics::DeformedGaussians;

/// Rasterizer constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Square tile edge, pixels.
    pub tile_size: usize,
    /// Per-splat alpha ceiling.
    pub max_alpha: f64,
    /// Compositing stops once transmittance drops below this.
    pub min_transmittance: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            max_alpha: 0.99,
            min_transmittance: 1e-4,
        }
    }
}

/// Premultiplied colour and coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H x W x 3`, premultiplied by coverage.
    pub rgb: Vec<f64>,
    /// `H x W` coverage `1 - Π(1 - α_k)`.
    pub alpha: Vec<f64>,
}

impl RenderOutput {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0.0; width * height * 3],
            alpha: vec![0.0; width * height],
        }
    }

    pub fn alpha_at(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }

    pub fn rgb_at(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Straight (non-premultiplied) colour; zero where coverage is zero.
    pub fn unpremultiplied(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rgb.len()];
        for (i, &a) in self.alpha.iter().enumerate() {
            if a > 0.0 {
                for c in 0..3 {
                    out[i * 3 + c] = (self.rgb[i * 3 + c] / a).min(1.0);
                }
            }
        }
        out
    }
}

/// Projects every Gaussian; culled ones are dropped.
pub fn project_all(gaussians: &DeformedGaussians<'_>, camera: &Camera) -> Result<Vec<Splat2D>, RenderError> {
    let project = |i: usize| project_gaussian(camera, &gaussians.posed[i], gaussians.opacity(i), gaussians.features(i));
    let results: Vec<_> = if gaussians.len() >= 4096 {
        (0..gaussians.len()).into_par_iter().map(project).collect()
    } else {
        (0..gaussians.len()).map(project).collect()
    };
    let mut splats = Vec::with_capacity(results.len());
    for r in results {
        if let Some(s) = r? {
            splats.push(s);
        }
    }
    Ok(splats)
}

/// Renders posed Gaussians with default settings.
pub fn render(gaussians: &DeformedGaussians<'_>, camera: &Camera) -> Result<RenderOutput, RenderError> {
    render_with(gaussians, camera, &RenderSettings::default())
}

pub fn render_with(
    gaussians: &DeformedGaussians<'_>,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<RenderOutput, RenderError> {
    camera.validate()?;
    let splats = project_all(gaussians, camera)?;
    rasterize(&splats, camera.width as usize, camera.height as usize, settings)
}

/// Inclusive pixel-centre range a splat can touch, slightly padded so that
/// binning never drops a pixel whose Mahalanobis test would pass.
fn pixel_bounds(s: &Splat2D, width: usize, height: usize) -> Option<[usize; 4]> {
    let [ex, ey] = s.extent();
    let pad = 1e-6;
    let x0 = (s.mean[0] - ex - pad).ceil().max(0.0);
    let y0 = (s.mean[1] - ey - pad).ceil().max(0.0);
    let x1 = (s.mean[0] + ex + pad).floor().min(width as f64 - 1.0);
    let y1 = (s.mean[1] + ey + pad).floor().min(height as f64 - 1.0);
    (x0 <= x1 && y0 <= y1).then_some([x0 as usize, y0 as usize, x1 as usize, y1 as usize])
}

/// Composites splats into an image.
///
/// Splats are ordered by `(depth, index)`; each tile keeps the subset whose
/// padded footprint box overlaps it, in that order. Every pixel then runs the
/// same front-to-back loop over its tile's list, so the result does not
/// depend on tile size or thread count.
pub fn rasterize(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    settings: &RenderSettings,
) -> Result<RenderOutput, RenderError> {
    if width == 0 || height == 0 {
        return Err(RenderError::EmptyImage);
    }
    if settings.tile_size == 0 {
        return Err(RenderError::Settings("tile size must be positive".into()));
    }
    let ts = settings.tile_size;
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let n_tiles = tiles_x * tiles_y;

    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        splats[a as usize]
            .depth
            .total_cmp(&splats[b as usize].depth)
            .then(a.cmp(&b))
    });

    // Binning: count, prefix-sum, fill. The result is frozen before compositing.
    let bounds: Vec<Option<[usize; 4]>> = order
        .iter()
        .map(|&i| pixel_bounds(&splats[i as usize], width, height))
        .collect();
    let mut offsets = vec![0usize; n_tiles + 1];
    for b in bounds.iter().flatten() {
        for ty in b[1] / ts..=b[3] / ts {
            for tx in b[0] / ts..=b[2] / ts {
                offsets[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for t in 0..n_tiles {
        offsets[t + 1] += offsets[t];
    }
    let total = offsets[n_tiles];
    let mut entries: Vec<u32> = Vec::new();
    entries
        .try_reserve_exact(total)
        .map_err(|_| RenderError::Resource(format!("cannot allocate {total} tile entries")))?;
    entries.resize(total, 0);
    let mut cursor = offsets.clone();
    for (&i, b) in order.iter().zip(&bounds) {
        if let Some(b) = b {
            for ty in b[1] / ts..=b[3] / ts {
                for tx in b[0] / ts..=b[2] / ts {
                    let t = ty * tiles_x + tx;
                    entries[cursor[t]] = i;
                    cursor[t] += 1;
                }
            }
        }
    }

    let mut out = RenderOutput::empty(width, height);
    let settings = *settings;
    out.rgb
        .par_chunks_mut(ts * width * 3)
        .zip(out.alpha.par_chunks_mut(ts * width))
        .enumerate()
        .for_each(|(ty, (rgb_rows, alpha_rows))| {
            let rows = alpha_rows.len() / width;
            let mut tile = TileBuffer::new(ts);
            for tx in 0..tiles_x {
                let t = ty * tiles_x + tx;
                let list = &entries[offsets[t]..offsets[t + 1]];
                if list.is_empty() {
                    continue;
                }
                let x0 = tx * ts;
                let cols = ts.min(width - x0);
                tile.reset();
                tile.composite(splats, list, [x0, ty * ts], [cols, rows], width, height, &settings);
                for ly in 0..rows {
                    for lx in 0..cols {
                        let (c, a) = tile.pixel(lx, ly);
                        let p = ly * width + x0 + lx;
                        rgb_rows[p * 3..p * 3 + 3].copy_from_slice(&c);
                        alpha_rows[p] = a;
                    }
                }
            }
        });
    Ok(out)
}

const CUTOFF2: f64 = FOOTPRINT_SIGMAS * FOOTPRINT_SIGMAS;

/// Per-tile accumulators. Splats are applied one at a time in depth order to
/// the pixels inside their footprint box, which performs exactly the same
/// per-pixel sequence of operations as walking the sorted list per pixel.
struct TileBuffer {
    size: usize,
    color: Vec<[f64; 3]>,
    transmittance: Vec<f64>,
    done: Vec<bool>,
    remaining: usize,
}

impl TileBuffer {
    fn new(size: usize) -> Self {
        Self {
            size,
            color: vec![[0.0; 3]; size * size],
            transmittance: vec![1.0; size * size],
            done: vec![false; size * size],
            remaining: size * size,
        }
    }

    fn reset(&mut self) {
        self.color.fill([0.0; 3]);
        self.transmittance.fill(1.0);
        self.done.fill(false);
        self.remaining = self.size * self.size;
    }

    fn pixel(&self, lx: usize, ly: usize) -> ([f64; 3], f64) {
        let i = ly * self.size + lx;
        (self.color[i], 1.0 - self.transmittance[i])
    }

    #[allow(clippy::too_many_arguments)]
    fn composite(
        &mut self,
        splats: &[Splat2D],
        list: &[u32],
        origin: [usize; 2],
        dims: [usize; 2],
        width: usize,
        height: usize,
        settings: &RenderSettings,
    ) {
        for &i in list {
            let s = &splats[i as usize];
            let Some(b) = pixel_bounds(s, width, height) else {
                continue;
            };
            let xa = b[0].max(origin[0]);
            let xb = b[2].min(origin[0] + dims[0] - 1);
            let ya = b[1].max(origin[1]);
            let yb = b[3].min(origin[1] + dims[1] - 1);
            if xa > xb || ya > yb {
                continue;
            }
            for y in ya..=yb {
                let dy = y as f64 - s.mean[1];
                let row = (y - origin[1]) * self.size;
                for x in xa..=xb {
                    let p = row + x - origin[0];
                    if self.done[p] {
                        continue;
                    }
                    let dx = x as f64 - s.mean[0];
                    let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                    if !(m <= CUTOFF2) {
                        continue;
                    }
                    let alpha = (s.opacity * (-0.5 * m).exp()).min(settings.max_alpha);
                    let t = self.transmittance[p];
                    let w = t * alpha;
                    let c = &mut self.color[p];
                    c[0] += w * s.color[0];
                    c[1] += w * s.color[1];
                    c[2] += w * s.color[2];
                    let t = t * (1.0 - alpha);
                    self.transmittance[p] = t;
                    if t < settings.min_transmittance {
                        self.done[p] = true;
                        self.remaining -= 1;
                    }
                }
            }
            if self.remaining == 0 {
                break;
            }
        }
    }
}
