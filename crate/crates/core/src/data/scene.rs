//! Layered synthetic stereo scenes with exact ground truth.
//!
//! Every layer is a fronto-parallel textured rectangle at an integer
//! disparity. Textures are evaluated in the layer's own (left-view)
//! coordinates, so a point of layer `L` seen at left column `x` appears at
//! right column `x - d_L` with exactly the same intensity. Larger disparity
//! means closer to the camera, and closer layers occlude farther ones in
//! both views.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Seeded 2-D value noise mapped to `mean ± contrast/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Texture {
    pub seed: u64,
    pub cell: f64,
    pub mean: f64,
    pub contrast: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise in `[0, 1)` with a smoothstep fade.
pub fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (fx, fy) = (x / cell, y / cell);
    let (ix, iy) = (fx.floor() as i64, fy.floor() as i64);
    let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bot = c + (d - c) * tx;
    top + (bot - top) * ty
}

impl Texture {
    pub fn sample(&self, x: usize, y: usize) -> f32 {
        let n = value_noise(self.seed, x as f64, y as f64, self.cell);
        (self.mean + self.contrast * (n - 0.5)).clamp(0.0, 1.0) as f32
    }
}

/// Rectangle `[x0, x0+width) × [y0, y0+height)` in left-view coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub disparity: usize,
    pub texture: Texture,
}

impl Layer {
    fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

/// Explicit scene description; `layers` are drawn in order, later on top.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
    pub background: Texture,
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    pub gt_disparity: Tensor<f32>,
    /// Left pixels whose match is visible in the right view.
    pub visible: Vec<bool>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::InvalidArgument(format!(
                "scene must be at least 32x32, got {}x{}",
                self.height, self.width
            )));
        }
        if self.d_max == 0 || self.d_max >= self.width {
            return Err(Error::InvalidArgument(format!(
                "d_max must be in 1..{}, got {}",
                self.width, self.d_max
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.disparity > self.d_max {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} disparity {} exceeds d_max {}",
                    l.disparity, self.d_max
                )));
            }
        }
        Ok(())
    }

    /// Index of the front-most layer covering a left-view point, if any.
    fn front(&self, x: usize, y: usize) -> Option<usize> {
        (0..self.layers.len()).rev().find(|&i| self.layers[i].covers(x, y))
    }

    /// Front-most layer whose surface lands on right-view column `xr`.
    fn front_right(&self, xr: usize, y: usize) -> Option<usize> {
        (0..self.layers.len())
            .rev()
            .find(|&i| self.layers[i].covers(xr + self.layers[i].disparity, y))
    }

    /// Renders both views and the left-view ground truth.
    pub fn render(&self, seed: u64) -> Result<StereoSample> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        let mut left = vec![0.0f32; h * w];
        let mut right = vec![0.0f32; h * w];
        let mut gt = vec![0.0f32; h * w];
        let mut visible = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let lf = self.front(x, y);
                left[i] = match lf {
                    Some(l) => self.layers[l].texture.sample(x, y),
                    None => self.background.sample(x, y),
                };
                let d = lf.map_or(0, |l| self.layers[l].disparity);
                gt[i] = d as f32;
                visible[i] = x >= d && self.front_right(x - d, y) == lf;
                let rf = self.front_right(x, y);
                right[i] = match rf {
                    Some(l) => {
                        let layer = &self.layers[l];
                        layer.texture.sample(x + layer.disparity, y)
                    }
                    None => self.background.sample(x, y),
                };
            }
        }
        let shape = vec![1, 1, h, w];
        Ok(StereoSample {
            left: Tensor::new(shape.clone(), left)?,
            right: Tensor::new(shape.clone(), right)?,
            gt_disparity: Tensor::new(shape, gt)?,
            visible,
            seed,
        })
    }

    /// Random scene: `n_layers` rectangles at integer disparities in
    /// `1..=d_max`, sorted so nearer layers are drawn last.
    pub fn random(seed: u64, height: usize, width: usize, d_max: usize, n_layers: usize) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::InvalidArgument("scene needs at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let texture = |rng: &mut ChaCha8Rng| Texture {
            seed: rng.gen(),
            cell: rng.gen_range(2.5..5.0),
            mean: rng.gen_range(0.35..0.65),
            contrast: rng.gen_range(0.5..0.9),
        };
        let background = texture(&mut rng);
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let lw = rng.gen_range(width / 4..=(3 * width) / 4);
            let lh = rng.gen_range(height / 4..=(3 * height) / 4);
            let x0 = rng.gen_range(0..=width - lw);
            let y0 = rng.gen_range(0..=height - lh);
            let disparity = rng.gen_range(1..=d_max.max(1));
            layers.push(Layer {
                x0,
                y0,
                width: lw,
                height: lh,
                disparity,
                texture: texture(&mut rng),
            });
        }
        layers.sort_by_key(|l| l.disparity);
        let spec = SceneSpec {
            height,
            width,
            d_max,
            background,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Deterministic sample for `(seed, H, W, d_max, n_layers)`.
pub fn generate_scene(seed: u64, height: usize, width: usize, d_max: usize, n_layers: usize) -> Result<StereoSample> {
    SceneSpec::random(seed, height, width, d_max, n_layers)?.render(seed)
}

/// Stacks samples into `[B,1,H,W]` left, right and ground-truth tensors.
pub fn stack(samples: &[&StereoSample]) -> Result<[Tensor<f32>; 3]> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack an empty batch".into()))?;
    let [_, _, h, w] = first.left.dims4()?;
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for s in samples {
        if s.left.shape() != first.left.shape() {
            return Err(Error::shape("stack", "samples differ in size"));
        }
        out[0].extend_from_slice(s.left.data());
        out[1].extend_from_slice(s.right.data());
        out[2].extend_from_slice(s.gt_disparity.data());
    }
    let shape = vec![samples.len(), 1, h, w];
    let [l, r, g] = out;
    Ok([
        Tensor::new(shape.clone(), l)?,
        Tensor::new(shape.clone(), r)?,
        Tensor::new(shape, g)?,
    ])
}
