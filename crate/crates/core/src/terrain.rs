//! Procedural planetary terrain and sensor-noise injection.
//!
//! The base surface is a fractal sum of smoothed value-noise octaves. Crater
//! bowls (spherical caps with a raised Gaussian rim) and paraboloid rocks are
//! stamped on top so that the hazard oracle sees slopes, walls, and
//! under-body protrusions.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::Dem;
use crate::rng::stream_rng;

/// Inclusive `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::invalid(format!(
                "{name} must satisfy min <= max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainParams {
    /// Side length in pixels; terrains are square.
    pub size: usize,
    pub pitch_m: f64,
    pub base_amplitude_m: f64,
    /// Per-octave amplitude decay: octave `k` is scaled by `2^(-k * exponent)`.
    pub base_roughness_exponent: f64,
    /// Wavelength of the coarsest noise octave.
    pub base_wavelength_m: f64,
    pub crater_count: usize,
    pub crater_radius_range_m: Range,
    /// Bowl depth divided by crater diameter.
    pub crater_depth_fraction: f64,
    pub rock_count: usize,
    pub rock_height_range_m: Range,
    pub rock_radius_range_m: Range,
    pub rng_seed: u64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            size: 64,
            pitch_m: 1.0,
            base_amplitude_m: 2.0,
            base_roughness_exponent: 0.9,
            base_wavelength_m: 32.0,
            crater_count: 3,
            crater_radius_range_m: Range::new(3.0, 9.0),
            crater_depth_fraction: 0.12,
            rock_count: 12,
            rock_height_range_m: Range::new(0.15, 0.7),
            rock_radius_range_m: Range::new(0.8, 1.6),
            rng_seed: 0,
        }
    }
}

const OCTAVES: u32 = 4;
const RIM_HEIGHT_FRACTION: f64 = 0.25;
const RIM_WIDTH_FRACTION: f64 = 0.35;

impl TerrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("terrain size must be at least 1 pixel"));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be > 0, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be >= 0, got {v}")))
            }
        };
        positive("pitch_m", self.pitch_m)?;
        positive("base_wavelength_m", self.base_wavelength_m)?;
        non_negative("base_amplitude_m", self.base_amplitude_m)?;
        non_negative("base_roughness_exponent", self.base_roughness_exponent)?;
        non_negative("crater_depth_fraction", self.crater_depth_fraction)?;
        self.crater_radius_range_m.validate("crater_radius_range_m")?;
        self.rock_height_range_m.validate("rock_height_range_m")?;
        self.rock_radius_range_m.validate("rock_radius_range_m")?;
        positive("crater radius", self.crater_radius_range_m.min)?;
        positive("rock radius", self.rock_radius_range_m.min)?;
        non_negative("rock height", self.rock_height_range_m.min)?;
        Ok(())
    }
}

/// 1-sigma Gaussian height noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_m: f64,
    pub rng_seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_m: f64, rng_seed: u64) -> Result<Self> {
        if !(sigma_m.is_finite() && sigma_m >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma_m}")));
        }
        Ok(Self { sigma_m, rng_seed })
    }
}

/// Lattice of uniform values in [-1, 1] for one value-noise octave.
struct ValueLattice {
    cells: usize,
    spacing: f64,
    values: Vec<f64>,
}

impl ValueLattice {
    fn new<R: Rng>(rng: &mut R, extent_m: f64, spacing: f64) -> Self {
        let cells = (extent_m / spacing).ceil() as usize + 2;
        let values = (0..cells * cells).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Self {
            cells,
            spacing,
            values,
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (gx, gy) = (x / self.spacing, y / self.spacing);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (tx, ty) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
        let v = |i: usize, j: usize| self.values[j.min(self.cells - 1) * self.cells + i.min(self.cells - 1)];
        let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let bottom = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

#[derive(Debug, Clone, Copy)]
struct Crater {
    x: f64,
    y: f64,
    radius: f64,
    depth: f64,
}

impl Crater {
    fn height(&self, x: f64, y: f64) -> f64 {
        let d = ((x - self.x).powi(2) + (y - self.y).powi(2)).sqrt();
        let mut z = 0.0;
        if d < self.radius && self.depth > 0.0 {
            // Sphere through the rim circle with its lowest point at -depth.
            let sphere = (self.radius * self.radius + self.depth * self.depth) / (2.0 * self.depth);
            z += sphere - (sphere * sphere - d * d).sqrt() - self.depth;
        }
        let rim_width = RIM_WIDTH_FRACTION * self.radius;
        z + RIM_HEIGHT_FRACTION * self.depth * (-((d - self.radius) / rim_width).powi(2)).exp()
    }
}

#[derive(Debug, Clone, Copy)]
struct Rock {
    x: f64,
    y: f64,
    radius: f64,
    height: f64,
}

impl Rock {
    fn height(&self, x: f64, y: f64) -> f64 {
        let d2 = ((x - self.x).powi(2) + (y - self.y).powi(2)) / (self.radius * self.radius);
        self.height * (1.0 - d2).max(0.0)
    }
}

/// Generates a square terrain; a pure function of `params`.
pub fn generate_terrain(params: &TerrainParams) -> Result<Dem> {
    params.validate()?;
    let n = params.size;
    let extent = (n - 1) as f64 * params.pitch_m;

    let mut rng = stream_rng(params.rng_seed, 0);
    let lattices: Vec<(f64, ValueLattice)> = (0..OCTAVES)
        .map(|k| {
            let amplitude = params.base_amplitude_m * 2f64.powf(-(k as f64) * params.base_roughness_exponent);
            let spacing = params.base_wavelength_m / 2f64.powi(k as i32);
            (amplitude, ValueLattice::new(&mut rng, extent, spacing))
        })
        .collect();

    let mut rng = stream_rng(params.rng_seed, 1);
    let craters: Vec<Crater> = (0..params.crater_count)
        .map(|_| {
            let radius = params.crater_radius_range_m.sample(&mut rng);
            Crater {
                x: rng.gen_range(0.0..=extent.max(f64::MIN_POSITIVE)),
                y: rng.gen_range(0.0..=extent.max(f64::MIN_POSITIVE)),
                radius,
                depth: 2.0 * radius * params.crater_depth_fraction,
            }
        })
        .collect();

    // Rock peaks sit on grid nodes so the stamped maximum is attained exactly.
    let mut rng = stream_rng(params.rng_seed, 2);
    let rocks: Vec<Rock> = (0..params.rock_count)
        .map(|_| Rock {
            x: rng.gen_range(0..n) as f64 * params.pitch_m,
            y: rng.gen_range(0..n) as f64 * params.pitch_m,
            radius: params.rock_radius_range_m.sample(&mut rng),
            height: params.rock_height_range_m.sample(&mut rng),
        })
        .collect();

    Dem::from_fn(n, n, params.pitch_m, |x, y| {
        let base: f64 = if params.base_amplitude_m > 0.0 {
            lattices.iter().map(|(a, l)| a * l.sample(x, y)).sum()
        } else {
            0.0
        };
        let craters: f64 = craters.iter().map(|c| c.height(x, y)).sum();
        let rocks: f64 = rocks.iter().map(|r| r.height(x, y)).sum();
        base + craters + rocks
    })
}

/// Adds i.i.d. Gaussian noise to every height; dimensions and pitch are kept.
pub fn add_noise(dem: &Dem, spec: &NoiseSpec) -> Result<Dem> {
    let spec = NoiseSpec::new(spec.sigma_m, spec.rng_seed)?;
    if spec.sigma_m == 0.0 {
        return Ok(dem.clone());
    }
    let normal = Normal::new(0.0, spec.sigma_m).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = stream_rng(spec.rng_seed, 0);
    let heights = dem
        .heights()
        .iter()
        .map(|&h| (f64::from(h) + normal.sample(&mut rng)) as f32)
        .collect();
    Dem::new(dem.width(), dem.height(), dem.pitch_m(), heights)
}
