//! Geometric hazard detection in the style of ALHAT: footpads are dropped on
//! the terrain for a sweep of lander poses, a plane is fit through them, and
//! each pose is judged on tilt (slope) and under-body protrusion (roughness).

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::Dem;
use crate::maps::{in_border, Label, ProbabilityMap, SafetyMap};
use crate::rng::stream_rng;

const EXTENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LanderGeometry {
    pub pad_count: usize,
    pub pad_circle_radius_m: f64,
    pub body_clearance_radius_m: f64,
    pub slope_limit_deg: f64,
    pub roughness_limit_m: f64,
}

impl Default for LanderGeometry {
    fn default() -> Self {
        Self {
            pad_count: 4,
            pad_circle_radius_m: 1.5,
            body_clearance_radius_m: 1.7,
            slope_limit_deg: 10.0,
            roughness_limit_m: 0.3,
        }
    }
}

impl LanderGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.pad_count < 3 {
            return Err(Error::invalid(format!("pad_count must be >= 3, got {}", self.pad_count)));
        }
        if !(self.pad_circle_radius_m > 0.0 && self.body_clearance_radius_m > 0.0) {
            return Err(Error::invalid("lander radii must be > 0"));
        }
        if !(self.slope_limit_deg > 0.0 && self.slope_limit_deg < 90.0) {
            return Err(Error::invalid(format!(
                "slope_limit_deg must lie in (0, 90), got {}",
                self.slope_limit_deg
            )));
        }
        if !(self.roughness_limit_m > 0.0) {
            return Err(Error::invalid("roughness_limit_m must be > 0"));
        }
        Ok(())
    }

    /// Largest distance from the pose center that any evaluated point reaches.
    fn reach_m(&self) -> f64 {
        self.pad_circle_radius_m.max(self.body_clearance_radius_m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Lander yaw angles per aiming point, spread over one pad period.
    pub orientation_samples: usize,
    /// Position perturbations per aiming point; the first is always the
    /// nominal, unperturbed position.
    pub offset_samples: usize,
    pub offset_sigma_m: f64,
    pub safety_threshold: f64,
    /// `None` selects [`default_border_margin`].
    pub border_margin_px: Option<usize>,
    pub rng_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            orientation_samples: 8,
            offset_samples: 9,
            offset_sigma_m: 0.5,
            safety_threshold: 0.5,
            border_margin_px: None,
            rng_seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.orientation_samples == 0 || self.offset_samples == 0 {
            return Err(Error::invalid("orientation_samples and offset_samples must be >= 1"));
        }
        if !(self.offset_sigma_m.is_finite() && self.offset_sigma_m >= 0.0) {
            return Err(Error::invalid("offset_sigma_m must be >= 0"));
        }
        if !(self.safety_threshold > 0.0 && self.safety_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "safety_threshold must lie in (0, 1), got {}",
                self.safety_threshold
            )));
        }
        Ok(())
    }

    /// Margin actually used for `geom` on a grid of `pitch_m`.
    pub fn margin_px(&self, geom: &LanderGeometry, pitch_m: f64) -> usize {
        self.border_margin_px
            .unwrap_or_else(|| default_border_margin(geom, self, pitch_m))
    }
}

/// Border ring wide enough that every swept pose stays inside the grid:
/// the lander reach plus the 3-sigma offset clamp.
pub fn default_border_margin(geom: &LanderGeometry, cfg: &OracleConfig, pitch_m: f64) -> usize {
    ((geom.reach_m() + 3.0 * cfg.offset_sigma_m) / pitch_m - EXTENT_EPS).ceil() as usize
}

/// Bilinear interpolation of the DEM at a metric position; `x` runs along
/// columns and `y` along rows, with node `(row, col)` at `(col * pitch, row * pitch)`.
pub fn sample_height(dem: &Dem, x_m: f64, y_m: f64) -> Result<f64> {
    let (ex, ey) = dem.extent_m();
    if !(x_m >= -EXTENT_EPS && y_m >= -EXTENT_EPS && x_m <= ex + EXTENT_EPS && y_m <= ey + EXTENT_EPS) {
        return Err(Error::OutOfExtent { x: x_m, y: y_m });
    }
    let gx = (x_m / dem.pitch_m()).clamp(0.0, (dem.width() - 1) as f64);
    let gy = (y_m / dem.pitch_m()).clamp(0.0, (dem.height() - 1) as f64);
    let c0 = (gx.floor() as usize).min(dem.width().saturating_sub(2));
    let r0 = (gy.floor() as usize).min(dem.height().saturating_sub(2));
    let c1 = (c0 + 1).min(dem.width() - 1);
    let r1 = (r0 + 1).min(dem.height() - 1);
    let tx = gx - c0 as f64;
    let ty = gy - r0 as f64;
    let top = dem.at(r0, c0) * (1.0 - tx) + dem.at(r0, c1) * tx;
    let bottom = dem.at(r1, c0) * (1.0 - tx) + dem.at(r1, c1) * tx;
    Ok(top * (1.0 - ty) + bottom * ty)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEvaluation {
    pub slope_deg: f64,
    pub roughness_m: f64,
}

impl PoseEvaluation {
    pub fn is_safe(&self, geom: &LanderGeometry) -> bool {
        self.slope_deg <= geom.slope_limit_deg && self.roughness_m <= geom.roughness_limit_m
    }
}

/// Fitted plane `z = z0 + gx * dx + gy * dy` about a reference point.
#[derive(Debug, Clone, Copy)]
struct Plane {
    z0: f64,
    gx: f64,
    gy: f64,
}

/// Least-squares plane through `(dx, dy, z)` samples via the 3x3 normal
/// equations, solved by Gaussian elimination with partial pivoting.
fn fit_plane(points: &[(f64, f64, f64)]) -> Result<Plane> {
    let mut m = [[0.0f64; 4]; 3];
    for &(dx, dy, z) in points {
        let row = [1.0, dx, dy];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            m[i][3] += row[i] * z;
        }
    }
    let scale = m[0][0].abs().max(m[1][1].abs()).max(m[2][2].abs());
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap_or(col);
        if m[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::DegeneratePlane);
        }
        m.swap(col, pivot);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Ok(Plane {
        z0: m[0][3] / m[0][0],
        gx: m[1][3] / m[1][1],
        gy: m[2][3] / m[2][2],
    })
}

/// Slope and roughness experienced by a lander touching down at `center`
/// with heading `yaw_rad`.
pub fn evaluate_pose(dem: &Dem, center_m: (f64, f64), yaw_rad: f64, geom: &LanderGeometry) -> Result<PoseEvaluation> {
    let (cx, cy) = center_m;
    let pads = (0..geom.pad_count)
        .map(|k| {
            let angle = yaw_rad + 2.0 * PI * k as f64 / geom.pad_count as f64;
            let (dx, dy) = (geom.pad_circle_radius_m * angle.cos(), geom.pad_circle_radius_m * angle.sin());
            sample_height(dem, cx + dx, cy + dy).map(|z| (dx, dy, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let plane = fit_plane(&pads)?;
    let slope_deg = plane.gx.hypot(plane.gy).atan().to_degrees();

    let pitch = dem.pitch_m();
    let r = geom.body_clearance_radius_m;
    let (ex, ey) = dem.extent_m();
    if cx - r < -EXTENT_EPS || cy - r < -EXTENT_EPS || cx + r > ex + EXTENT_EPS || cy + r > ey + EXTENT_EPS {
        return Err(Error::OutOfExtent { x: cx, y: cy });
    }
    let col_lo = ((cx - r) / pitch).ceil().max(0.0) as usize;
    let col_hi = (((cx + r) / pitch).floor() as usize).min(dem.width() - 1);
    let row_lo = ((cy - r) / pitch).ceil().max(0.0) as usize;
    let row_hi = (((cy + r) / pitch).floor() as usize).min(dem.height() - 1);
    let mut protrusion: f64 = 0.0;
    for row in row_lo..=row_hi {
        let dy = row as f64 * pitch - cy;
        for col in col_lo..=col_hi {
            let dx = col as f64 * pitch - cx;
            if dx * dx + dy * dy <= r * r {
                let plane_z = plane.z0 + plane.gx * dx + plane.gy * dy;
                protrusion = protrusion.max(dem.at(row, col) - plane_z);
            }
        }
    }
    Ok(PoseEvaluation {
        slope_deg,
        roughness_m: protrusion,
    })
}

/// One swept touchdown configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub center_m: (f64, f64),
    pub yaw_rad: f64,
}

/// Every configuration swept at aiming point `(row, col)`: orientations x
/// position offsets. Offsets are Gaussian, clamped radially at 3 sigma, and
/// drawn from a stream keyed by the pixel index so results do not depend on
/// evaluation order.
pub fn swept_poses(dem: &Dem, row: usize, col: usize, geom: &LanderGeometry, cfg: &OracleConfig) -> Vec<Pose> {
    let pitch = dem.pitch_m();
    let center = (col as f64 * pitch, row as f64 * pitch);
    let mut offsets = Vec::with_capacity(cfg.offset_samples);
    offsets.push((0.0, 0.0));
    if cfg.offset_samples > 1 && cfg.offset_sigma_m > 0.0 {
        let normal = Normal::new(0.0, cfg.offset_sigma_m).expect("sigma validated");
        let mut rng = stream_rng(cfg.rng_seed, (row * dem.width() + col) as u64);
        let limit = 3.0 * cfg.offset_sigma_m;
        while offsets.len() < cfg.offset_samples {
            let (dx, dy): (f64, f64) = (normal.sample(&mut rng), normal.sample(&mut rng));
            let norm = dx.hypot(dy);
            let k = if norm > limit { limit / norm } else { 1.0 };
            offsets.push((dx * k, dy * k));
        }
    } else {
        offsets.resize(cfg.offset_samples, (0.0, 0.0));
    }
    let period = 2.0 * PI / geom.pad_count as f64;
    let mut poses = Vec::with_capacity(offsets.len() * cfg.orientation_samples);
    for &(dx, dy) in &offsets {
        for k in 0..cfg.orientation_samples {
            poses.push(Pose {
                center_m: (center.0 + dx, center.1 + dy),
                yaw_rad: period * k as f64 / cfg.orientation_samples as f64,
            });
        }
    }
    poses
}

/// Fraction of swept configurations that pass both the slope and roughness
/// limits. Errors with [`Error::OutOfExtent`] when a pose leaves the grid.
pub fn safety_probability(
    dem: &Dem,
    center_px: (usize, usize),
    geom: &LanderGeometry,
    cfg: &OracleConfig,
) -> Result<f64> {
    let (row, col) = center_px;
    let poses = swept_poses(dem, row, col, geom, cfg);
    let mut safe = 0usize;
    for pose in &poses {
        if evaluate_pose(dem, pose.center_m, pose.yaw_rad, geom)?.is_safe(geom) {
            safe += 1;
        }
    }
    Ok(safe as f64 / poses.len() as f64)
}

fn label_rows(
    dem: &Dem,
    geom: &LanderGeometry,
    cfg: &OracleConfig,
    margin: usize,
    rows: std::ops::Range<usize>,
) -> Result<Vec<(f64, Label)>> {
    let (w, h) = dem.shape();
    let mut out = Vec::with_capacity(rows.len() * w);
    for row in rows {
        for col in 0..w {
            if in_border(row, col, w, h, margin) {
                out.push((0.0, Label::Invalid));
                continue;
            }
            match safety_probability(dem, (row, col), geom, cfg) {
                Ok(p) => {
                    let label = if p >= cfg.safety_threshold { Label::Safe } else { Label::Unsafe };
                    out.push((p, label));
                }
                Err(Error::OutOfExtent { .. }) => out.push((0.0, Label::Invalid)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Labels every pixel of `dem`. Border pixels and any pixel whose sweep
/// leaves the grid are Invalid with probability 0.
pub fn label_dem(dem: &Dem, geom: &LanderGeometry, cfg: &OracleConfig) -> Result<(ProbabilityMap, SafetyMap)> {
    label_dem_with_threads(dem, geom, cfg, 1)
}

/// [`label_dem`] split across `threads` workers by row band. The output is
/// identical for any thread count.
pub fn label_dem_with_threads(
    dem: &Dem,
    geom: &LanderGeometry,
    cfg: &OracleConfig,
    threads: usize,
) -> Result<(ProbabilityMap, SafetyMap)> {
    geom.validate()?;
    cfg.validate()?;
    let (w, h) = dem.shape();
    let margin = cfg.margin_px(geom, dem.pitch_m());
    let threads = threads.clamp(1, h);
    let band = h.div_ceil(threads);
    let bands: Vec<Result<Vec<(f64, Label)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..h)
            .step_by(band)
            .map(|start| {
                let rows = start..(start + band).min(h);
                s.spawn(move || label_rows(dem, geom, cfg, margin, rows))
            })
            .collect();
        handles.into_iter().map(|t| t.join().expect("labeling worker panicked")).collect()
    });
    let mut p_safe = Vec::with_capacity(w * h);
    let mut labels = Vec::with_capacity(w * h);
    for band in bands {
        for (p, l) in band? {
            p_safe.push(p);
            labels.push(l);
        }
    }
    Ok((ProbabilityMap::new(w, h, p_safe)?, SafetyMap::new(w, h, labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dem_2x2() -> Dem {
        Dem::new(2, 2, 1.0, vec![0.0, 1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn bilinear_sampling() {
        let dem = dem_2x2();
        assert_eq!(sample_height(&dem, 1.0, 1.0).unwrap(), 3.0);
        assert_eq!(sample_height(&dem, 0.0, 1.0).unwrap(), 2.0);
        assert!((sample_height(&dem, 0.5, 0.5).unwrap() - 1.5).abs() < 1e-12);
        let ramp = Dem::new(2, 2, 1.0, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((sample_height(&ramp, 0.5, 0.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(sample_height(&dem, 1.5, 0.0), Err(Error::OutOfExtent { .. })));
        assert!(sample_height(&dem, -0.1, 0.0).is_err());
    }

    #[test]
    fn flat_dem_is_level_and_smooth() {
        let dem = Dem::flat(12, 12, 1.0, 4.25).unwrap();
        let e = evaluate_pose(&dem, (5.5, 5.0), 0.3, &LanderGeometry::default()).unwrap();
        assert!(e.slope_deg.abs() < 1e-9);
        assert_eq!(e.roughness_m, 0.0);
    }

    #[test]
    fn three_pad_fit_is_exact() {
        let dem = Dem::from_fn(10, 10, 1.0, |x, y| 0.05 * x - 0.02 * y).unwrap();
        let geom = LanderGeometry {
            pad_count: 3,
            ..LanderGeometry::default()
        };
        let e = evaluate_pose(&dem, (5.0, 5.0), 0.7, &geom).unwrap();
        let expected = (0.05f64.hypot(0.02)).atan().to_degrees();
        assert!((e.slope_deg - expected).abs() < 1e-5);
        assert!(e.roughness_m < 1e-6);
    }

    #[test]
    fn pose_near_edge_is_out_of_extent() {
        let dem = Dem::flat(10, 10, 1.0, 0.0).unwrap();
        assert!(matches!(
            evaluate_pose(&dem, (1.0, 5.0), 0.0, &LanderGeometry::default()),
            Err(Error::OutOfExtent { .. })
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        let dem = Dem::flat(10, 10, 1.0, 0.0).unwrap();
        let geom = LanderGeometry {
            pad_count: 2,
            ..LanderGeometry::default()
        };
        assert!(label_dem(&dem, &geom, &OracleConfig::default()).is_err());
        let cfg = OracleConfig {
            safety_threshold: 1.0,
            ..OracleConfig::default()
        };
        assert!(label_dem(&dem, &LanderGeometry::default(), &cfg).is_err());
    }

    #[test]
    fn default_margin_covers_reach() {
        let m = default_border_margin(&LanderGeometry::default(), &OracleConfig::default(), 1.0);
        assert_eq!(m, 4);
    }

    #[test]
    fn first_offset_is_nominal() {
        let dem = Dem::flat(20, 20, 1.0, 0.0).unwrap();
        let cfg = OracleConfig::default();
        let poses = swept_poses(&dem, 9, 10, &LanderGeometry::default(), &cfg);
        assert_eq!(poses.len(), 72);
        assert_eq!(poses[0].center_m, (10.0, 9.0));
        for p in &poses {
            let d = (p.center_m.0 - 10.0).hypot(p.center_m.1 - 9.0);
            assert!(d <= 1.5 + 1e-12);
        }
    }

    #[test]
    fn threaded_labeling_matches_sequential() {
        let dem = Dem::from_fn(24, 24, 1.0, |x, y| 0.3 * (x * 0.7).sin() + 0.2 * (y * 1.3).cos()).unwrap();
        let geom = LanderGeometry::default();
        let cfg = OracleConfig {
            rng_seed: 11,
            ..OracleConfig::default()
        };
        let seq = label_dem(&dem, &geom, &cfg).unwrap();
        let par = label_dem_with_threads(&dem, &geom, &cfg, 3).unwrap();
        assert_eq!(seq, par);
    }
}
