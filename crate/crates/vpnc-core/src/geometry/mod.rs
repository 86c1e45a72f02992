//! Sphere, equirectangular, and tangent-plane viewport geometry.
//!
//! Conventions, fixed across the whole crate:
//! - ERP row 0 is latitude +90 deg (north pole), column 0 is longitude
//!   -180 deg; `width = 2 * height`.
//! - Continuous pixel coordinate (u, v) addresses the center of pixel
//!   (floor(u), floor(v)) at u + 0.5, i.e. pixel (i, j) has its center at
//!   (i + 0.5, j + 0.5).
//! - Viewport plane coordinates (w, h) are signed offsets from the
//!   viewport center, +w east (right), +h up; the tangent point maps to
//!   (w, h) = (0, 0).
//! - Directions are (a, b, c): +c through the tangent point, +a right,
//!   +b up. Longitude = atan2(a, c), latitude = asin(b / |v|).
//!
//! All geometry math is f64; image payloads are f32 in [0, 1].

mod image;

pub use image::{ErpImage, ViewportImage};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Horizontal/vertical field of view in degrees, each within (0, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView {
    pub h_deg: f64,
    pub v_deg: f64,
}

impl FieldOfView {
    pub fn square(deg: f64) -> Result<Self> {
        Self::new(deg, deg)
    }

    pub fn new(h_deg: f64, v_deg: f64) -> Result<Self> {
        for d in [h_deg, v_deg] {
            if !(d > 0.0 && d < 180.0) || !d.is_finite() {
                return Err(Error::invalid(format!("field of view {d} deg outside (0, 180)")));
            }
        }
        Ok(FieldOfView { h_deg, v_deg })
    }
}

/// Viewport center on the sphere; longitude normalized to [-180, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewportCenter {
    pub lon_deg: f64,
    pub lat_deg: f64,
}

impl ViewportCenter {
    pub fn new(lon_deg: f64, lat_deg: f64) -> Self {
        assert!((-90.0..=90.0).contains(&lat_deg), "latitude {lat_deg} outside [-90, 90]");
        ViewportCenter { lon_deg: normalize_lon(lon_deg), lat_deg }
    }

    pub fn unit_direction(&self) -> [f64; 3] {
        let lon = self.lon_deg.to_radians();
        let lat = self.lat_deg.to_radians();
        [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()]
    }
}

/// Wraps a longitude into [-180, 180).
pub fn normalize_lon(lon_deg: f64) -> f64 {
    let mut l = (lon_deg + 180.0) % 360.0;
    if l < 0.0 {
        l += 360.0;
    }
    l - 180.0
}

/// Ordered set of viewport centers sharing one field of view and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionPlan {
    pub fov: FieldOfView,
    pub viewport_width: usize,
    pub viewport_height: usize,
    pub centers: Vec<ViewportCenter>,
}

impl ExtractionPlan {
    /// Sum of viewport pixel counts over the whole plan.
    pub fn total_pixels(&self) -> usize {
        self.centers.len() * self.viewport_width * self.viewport_height
    }
}

/// Maps viewport-plane pixel offsets to an un-normalized direction
/// (a, b, 1) on the tangent plane.
pub fn viewport_to_sphere(w: f64, h: f64, fov: FieldOfView, vp_w: usize, vp_h: usize) -> [f64; 3] {
    let a = (2.0 * w / vp_w as f64) * (fov.h_deg.to_radians() / 2.0).tan();
    let b = (2.0 * h / vp_h as f64) * (fov.v_deg.to_radians() / 2.0).tan();
    [a, b, 1.0]
}

/// Inverse of `viewport_to_sphere` composed with the frustum test: returns
/// plane offsets when the direction lies in front of the tangent plane.
pub fn sphere_to_viewport(
    dir: [f64; 3],
    fov: FieldOfView,
    vp_w: usize,
    vp_h: usize,
) -> Option<(f64, f64)> {
    let [a, b, c] = dir;
    if c <= 0.0 {
        return None;
    }
    let w = (a / c) * vp_w as f64 / (2.0 * (fov.h_deg.to_radians() / 2.0).tan());
    let h = (b / c) * vp_h as f64 / (2.0 * (fov.v_deg.to_radians() / 2.0).tan());
    Some((w, h))
}

/// Rotation taking tangent-plane directions to world directions for a
/// viewport centered at (lon, lat). Column-vector convention: world = R v.
pub fn rotation_matrix(center: ViewportCenter) -> [[f64; 3]; 3] {
    let phi = center.lon_deg.to_radians(); // longitude
    let theta = center.lat_deg.to_radians(); // latitude
    let (sp, cp) = (phi.sin(), phi.cos());
    let (st, ct) = (theta.sin(), theta.cos());
    [
        [cp, -sp * st, sp * ct],
        [0.0, ct, st],
        [-sp, -cp * st, cp * ct],
    ]
}

pub fn transpose3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            t[j][i] = v;
        }
    }
    t
}

pub fn rotate(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Maps a world direction to continuous ERP coordinates. Pole directions
/// land on u = width/2 (atan2(0, 0) = 0 by IEEE convention).
pub fn sphere_to_erp(dir: [f64; 3], width: usize, height: usize) -> (f64, f64) {
    let [a, b, c] = dir;
    let norm = (a * a + b * b + c * c).sqrt();
    let lon = a.atan2(c).to_degrees();
    let lat = (b / norm).clamp(-1.0, 1.0).asin().to_degrees();
    let mut u = (lon + 180.0) / 360.0 * width as f64;
    if u >= width as f64 {
        u -= width as f64; // lon = +180 wraps onto the -180 column
    }
    let v = (90.0 - lat) / 180.0 * height as f64;
    (u, v)
}

/// Maps continuous ERP coordinates to a unit world direction.
pub fn erp_to_sphere(u: f64, v: f64, width: usize, height: usize) -> [f64; 3] {
    let lon = (u / width as f64 * 360.0 - 180.0).to_radians();
    let lat = (90.0 - v / height as f64 * 180.0).to_radians();
    [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()]
}

/// Extracts one gnomonic (tangent-plane) viewport by bilinear resampling.
pub fn extract_viewport(
    erp: &ErpImage,
    center: ViewportCenter,
    fov: FieldOfView,
    vp_w: usize,
    vp_h: usize,
) -> Result<ViewportImage> {
    ViewportImage::validate_dims(vp_w, vp_h)?;
    let rot = rotation_matrix(center);
    let mut out = ViewportImage::zeros(vp_w, vp_h);
    for row in 0..vp_h {
        let h = vp_h as f64 / 2.0 - (row as f64 + 0.5);
        for col in 0..vp_w {
            let w = (col as f64 + 0.5) - vp_w as f64 / 2.0;
            let dir = rotate(&rot, viewport_to_sphere(w, h, fov, vp_w, vp_h));
            let (u, v) = sphere_to_erp(dir, erp.width, erp.height);
            out.set_pixel(col, row, erp.sample_bilinear(u, v));
        }
    }
    Ok(out)
}

/// Coverage plan: latitude rows at 0, +-fov_v, +-2 fov_v, ... clipped to
/// +-90; per-row count max(1, ceil((360 / fov_h) * cos(lat))). Rows are
/// ordered equator first, then alternating north/south outward; within a
/// row, centers run west to east starting at longitude 0.
pub fn plan_coverage(fov: FieldOfView, vp_w: usize, vp_h: usize) -> Result<ExtractionPlan> {
    ViewportImage::validate_dims(vp_w, vp_h)?;
    let mut lat_rows = vec![0.0f64];
    let mut k = 1;
    loop {
        let lat = k as f64 * fov.v_deg;
        let clipped = lat.min(90.0);
        lat_rows.push(clipped);
        lat_rows.push(-clipped);
        if lat >= 90.0 {
            break;
        }
        k += 1;
    }
    let mut centers = Vec::new();
    for &lat in &lat_rows {
        let count =
            (((360.0 / fov.h_deg) * lat.to_radians().cos()).ceil() as usize).max(1);
        for j in 0..count {
            centers.push(ViewportCenter::new(j as f64 * 360.0 / count as f64, lat));
        }
    }
    Ok(ExtractionPlan { fov, viewport_width: vp_w, viewport_height: vp_h, centers })
}

/// Extracts every viewport of a plan in order.
pub fn extract_plan(erp: &ErpImage, plan: &ExtractionPlan) -> Result<Vec<ViewportImage>> {
    plan.centers
        .iter()
        .map(|&c| extract_viewport(erp, c, plan.fov, plan.viewport_width, plan.viewport_height))
        .collect()
}

/// Rebuilds an ERP image from extracted viewports. Every ERP pixel samples
/// the covering viewport whose center is angularly nearest (ties resolved
/// by plan order); a direction no viewport covers is an error.
pub fn reassemble_erp(
    viewports: &[ViewportImage],
    plan: &ExtractionPlan,
    width: usize,
    height: usize,
) -> Result<ErpImage> {
    if viewports.len() != plan.centers.len() {
        return Err(Error::invalid(format!(
            "plan has {} centers but {} viewports were given",
            plan.centers.len(),
            viewports.len()
        )));
    }
    let inv: Vec<[[f64; 3]; 3]> =
        plan.centers.iter().map(|&c| transpose3(rotation_matrix(c))).collect();
    let dirs: Vec<[f64; 3]> = plan.centers.iter().map(|c| c.unit_direction()).collect();
    let (vw, vh) = (plan.viewport_width, plan.viewport_height);
    // Frustum acceptance with a sliver of slack so adjacent viewports that
    // exactly abut still cover their shared boundary.
    let (wlim, hlim) = (vw as f64 / 2.0 + 1e-6, vh as f64 / 2.0 + 1e-6);
    let mut out = ErpImage::zeros(width, height)?;
    for row in 0..height {
        for col in 0..width {
            let dir = erp_to_sphere(col as f64 + 0.5, row as f64 + 0.5, width, height);
            let mut best: Option<(usize, f64, f64, f64)> = None;
            for i in 0..plan.centers.len() {
                let local = rotate(&inv[i], dir);
                let Some((w, h)) = sphere_to_viewport(local, plan.fov, vw, vh) else {
                    continue;
                };
                if w.abs() > wlim || h.abs() > hlim {
                    continue;
                }
                let dot = dir[0] * dirs[i][0] + dir[1] * dirs[i][1] + dir[2] * dirs[i][2];
                if best.map_or(true, |(_, _, _, bd)| dot > bd) {
                    best = Some((i, w, h, dot));
                }
            }
            let Some((i, w, h, _)) = best else {
                let lon = dir[0].atan2(dir[2]).to_degrees();
                let lat = dir[1].clamp(-1.0, 1.0).asin().to_degrees();
                return Err(Error::Uncovered { lon_deg: lon, lat_deg: lat });
            };
            let x = w + vw as f64 / 2.0;
            let y = vh as f64 / 2.0 - h;
            out.set_pixel(col, row, viewports[i].sample_bilinear(x, y));
        }
    }
    Ok(out)
}
