//! Pinhole camera, software G-buffer rasterizer and back-projection.
//!
//! Camera space is right-handed with the camera looking down -z. Pixel
//! `(x, y)` has its center at `(x + 0.5, y + 0.5)`, rows grow downward.

pub mod tensor;

use std::io::Cursor;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mesh, Vec3};

/// Face id stored for background pixels.
pub const BACKGROUND: u32 = u32::MAX;

const NEAR: f64 = 1e-4;
const ROW_BAND: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub vfov: f64,
    pub width: usize,
    pub height: usize,
    /// Center of the image window in tangent space; non-zero after an
    /// off-center focal crop.
    #[serde(default, skip_serializing_if = "is_zero_shift")]
    pub shift: [f64; 2],
}

fn is_zero_shift(s: &[f64; 2]) -> bool {
    s[0] == 0.0 && s[1] == 0.0
}

impl Camera {
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, vfov: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            eye,
            target,
            up,
            vfov,
            width,
            height,
            shift: [0.0; 2],
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.target - self.eye;
        if !(f.norm() > 1e-12) {
            return Err(Error::InvalidInput("camera eye equals target".into()));
        }
        if !(self.vfov > 0.0 && self.vfov < std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!("vfov {} outside (0, pi)", self.vfov)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("empty image".into()));
        }
        if f.normalize().cross(&self.up).norm() < 1e-9 {
            return Err(Error::InvalidInput("camera up is parallel to view direction".into()));
        }
        if !self.shift.iter().all(|s| s.is_finite()) {
            return Err(Error::InvalidInput("non-finite camera shift".into()));
        }
        Ok(())
    }

    /// Orthonormal frame `(right, up, forward)` in world space.
    pub fn frame(&self) -> (Vec3, Vec3, Vec3) {
        let f = (self.target - self.eye).normalize();
        let r = f.cross(&self.up).normalize();
        let u = r.cross(&f);
        (r, u, f)
    }

    /// Camera-to-world rotation (columns: right, up, -forward).
    pub fn rotation(&self) -> Matrix3<f64> {
        let (r, u, f) = self.frame();
        Matrix3::from_columns(&[r, u, -f])
    }

    pub fn view_dir(&self) -> Vec3 {
        self.frame().2
    }

    pub fn tan_half(&self) -> (f64, f64) {
        let ty = (0.5 * self.vfov).tan();
        (ty * self.width as f64 / self.height as f64, ty)
    }

    /// Unnormalized camera-space ray `(sx, sy, -1)` through a continuous pixel coordinate.
    pub fn ray_cam(&self, x: f64, y: f64) -> Vec3 {
        let (tx, ty) = self.tan_half();
        let sx = (x / self.width as f64 * 2.0 - 1.0) * tx + self.shift[0];
        let sy = (1.0 - y / self.height as f64 * 2.0) * ty + self.shift[1];
        Vec3::new(sx, sy, -1.0)
    }

    /// Unit world-space ray direction through the center of pixel `(px, py)`.
    pub fn pixel_ray(&self, px: usize, py: usize) -> Vec3 {
        (self.rotation() * self.ray_cam(px as f64 + 0.5, py as f64 + 0.5)).normalize()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation().transpose() * (p - self.eye)
    }

    pub fn camera_to_world_dir(&self, v: &Vec3) -> Vec3 {
        self.rotation() * v
    }

    pub fn world_to_camera_dir(&self, v: &Vec3) -> Vec3 {
        self.rotation().transpose() * v
    }

    /// Continuous pixel coordinate and depth of a world point, `None` behind the eye.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let q = self.world_to_camera(p);
        let depth = -q.z;
        if depth <= 0.0 {
            return None;
        }
        let (x, y) = self.cam_to_pixel(&q);
        Some((x, y, depth))
    }

    fn cam_to_pixel(&self, q: &Vec3) -> (f64, f64) {
        let (tx, ty) = self.tan_half();
        let d = -q.z;
        let sx = q.x / d - self.shift[0];
        let sy = q.y / d - self.shift[1];
        (
            (sx / tx + 1.0) * 0.5 * self.width as f64,
            (1.0 - sy / ty) * 0.5 * self.height as f64,
        )
    }

    /// World point on the ray through continuous pixel `(x, y)` at camera depth `depth`.
    pub fn unproject(&self, x: f64, y: f64, depth: f64) -> Vec3 {
        self.eye + self.rotation() * (self.ray_cam(x, y) * depth)
    }

    /// World-space size of one pixel at the given depth.
    pub fn pixel_footprint(&self, depth: f64) -> f64 {
        2.0 * self.tan_half().1 * depth / self.height as f64
    }
}

/// Axis-aligned pixel rectangle in continuous coordinates `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0.0, 0.0, width as f64, height as f64)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Grows the shorter side about the center so the aspect matches `width / height`.
    pub fn expand_to_aspect(&self, width: usize, height: usize) -> Self {
        let aspect = width as f64 / height as f64;
        let (cx, cy) = self.center();
        let (mut w, mut h) = (self.width(), self.height());
        if w / h > aspect {
            h = w / aspect;
        } else {
            w = h * aspect;
        }
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    /// Scales about the center by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        let (hw, hh) = (0.5 * self.width() * factor, 0.5 * self.height() * factor);
        Self::new(cx - hw, cy - hh, cx + hw, cy + hh)
    }

    /// Rect `inner`, given in the pixel frame of a crop by `self`, expressed
    /// in the parent frame. Both rects are aspect-expanded first.
    pub fn compose(&self, inner: &PixelRect, width: usize, height: usize) -> PixelRect {
        let a = self.expand_to_aspect(width, height);
        let b = inner.expand_to_aspect(width, height);
        let sx = a.width() / width as f64;
        let sy = a.height() / height as f64;
        PixelRect::new(a.x0 + b.x0 * sx, a.y0 + b.y0 * sy, a.x0 + b.x1 * sx, a.y0 + b.y1 * sy)
    }
}

/// Camera whose image shows only `rect` of the parent view, resampled to
/// the parent's resolution.
pub fn focal_crop(camera: &Camera, rect: &PixelRect) -> Result<Camera> {
    if !(rect.width() > 0.0 && rect.height() > 0.0) {
        return Err(Error::InvalidInput("empty focal rectangle".into()));
    }
    if *rect == PixelRect::full(camera.width, camera.height) {
        return Ok(camera.clone());
    }
    let r = rect.expand_to_aspect(camera.width, camera.height);
    let (tx, ty) = camera.tan_half();
    let (cx, cy) = r.center();
    let mut out = camera.clone();
    let ty_new = ty * r.height() / camera.height as f64;
    out.vfov = 2.0 * ty_new.atan();
    out.shift = [
        (cx / camera.width as f64 * 2.0 - 1.0) * tx + camera.shift[0],
        (1.0 - cy / camera.height as f64 * 2.0) * ty + camera.shift[1],
    ];
    Ok(out)
}

/// Per-pixel depth, camera-space normal and face id.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    /// Camera-space depth along -z; 0 for background.
    pub depth: Vec<f64>,
    /// Camera-space unit normal facing the viewer; zero for background.
    pub normal: Vec<Vec3>,
    pub face_id: Vec<u32>,
}

impl GBuffer {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            depth: vec![0.0; n],
            normal: vec![Vec3::zeros(); n],
            face_id: vec![BACKGROUND; n],
        }
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.face_id[self.index(x, y)] != BACKGROUND
    }

    pub fn face_at(&self, x: usize, y: usize) -> Option<u32> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let f = self.face_id[self.index(x, y)];
        (f != BACKGROUND).then_some(f)
    }

    pub fn foreground_count(&self) -> usize {
        self.face_id.iter().filter(|&&f| f != BACKGROUND).count()
    }

    /// Nearest foreground pixel to continuous position `(x, y)` within `radius` pixels.
    pub fn nearest_foreground(&self, x: f64, y: f64, radius: f64) -> Option<(usize, usize)> {
        let r = radius.ceil() as i64;
        let (cx, cy) = (x.floor() as i64, y.floor() as i64);
        let mut best: Option<((usize, usize), f64)> = None;
        for py in (cy - r).max(0)..=(cy + r).min(self.height as i64 - 1) {
            for px in (cx - r).max(0)..=(cx + r).min(self.width as i64 - 1) {
                if !self.is_foreground(px as usize, py as usize) {
                    continue;
                }
                let d = ((px as f64 + 0.5 - x).powi(2) + (py as f64 + 0.5 - y).powi(2)).sqrt();
                if d <= radius && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some(((px as usize, py as usize), d));
                }
            }
        }
        best.map(|(p, _)| p)
    }

    /// Depth normalized to [0, 1] over foreground (background stays 0), plus the min/max used.
    pub fn normalized_depth(&self) -> (Vec<f32>, f64, f64) {
        let fg = self.depth.iter().zip(&self.face_id).filter(|(_, &f)| f != BACKGROUND);
        let (lo, hi) = fg.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&d, _)| {
            (lo.min(d), hi.max(d))
        });
        if !lo.is_finite() {
            return (vec![0.0; self.depth.len()], 0.0, 0.0);
        }
        let span = (hi - lo).max(1e-12);
        let out = self
            .depth
            .iter()
            .zip(&self.face_id)
            .map(|(&d, &f)| if f == BACKGROUND { 0.0 } else { ((d - lo) / span) as f32 })
            .collect();
        (out, lo, hi)
    }
}

struct ScreenTri {
    face: u32,
    p: [[f64; 2]; 3],
    ymin: f64,
    ymax: f64,
    /// Camera-space plane `n . q = c`.
    plane_n: Vec3,
    plane_c: f64,
    normal: Vec3,
}

/// Rasterizes the mesh into a G-buffer with a z-test per pixel center.
pub fn render_gbuffer(mesh: &Mesh, camera: &Camera) -> Result<GBuffer> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let rot_t = camera.rotation().transpose();
    let tris: Vec<ScreenTri> = (0..mesh.face_count())
        .into_par_iter()
        .flat_map_iter(|f| {
            let cam = mesh.triangle(f).map(|p| rot_t * (p - camera.eye));
            setup_face(f as u32, cam, camera)
        })
        .collect();
    let mut gb = GBuffer::empty(w, h);
    let rows: Vec<(usize, Vec<f64>, Vec<Vec3>, Vec<u32>)> = (0..h.div_ceil(ROW_BAND))
        .into_par_iter()
        .map(|band| {
            let y0 = band * ROW_BAND;
            let y1 = (y0 + ROW_BAND).min(h);
            let n = (y1 - y0) * w;
            let mut depth = vec![f64::INFINITY; n];
            let mut normal = vec![Vec3::zeros(); n];
            let mut face = vec![BACKGROUND; n];
            for t in &tris {
                if t.ymax < y0 as f64 || t.ymin > y1 as f64 {
                    continue;
                }
                raster_tri(t, camera, y0, y1, &mut depth, &mut normal, &mut face);
            }
            for d in &mut depth {
                if !d.is_finite() {
                    *d = 0.0;
                }
            }
            (y0, depth, normal, face)
        })
        .collect();
    for (y0, depth, normal, face) in rows {
        let start = y0 * w;
        gb.depth[start..start + depth.len()].copy_from_slice(&depth);
        gb.normal[start..start + normal.len()].copy_from_slice(&normal);
        gb.face_id[start..start + face.len()].copy_from_slice(&face);
    }
    Ok(gb)
}

fn setup_face(face: u32, cam: [Vec3; 3], camera: &Camera) -> Vec<ScreenTri> {
    let n = (cam[1] - cam[0]).cross(&(cam[2] - cam[0]));
    let len = n.norm();
    if len == 0.0 {
        return Vec::new();
    }
    let n = n / len;
    let c = n.dot(&cam[0]);
    // plane through the eye is seen edge-on
    if c.abs() < 1e-15 {
        return Vec::new();
    }
    let normal = if c > 0.0 { -n } else { n };
    let poly = clip_near(&cam);
    if poly.len() < 3 {
        return Vec::new();
    }
    let pts: Vec<[f64; 2]> = poly
        .iter()
        .map(|q| {
            let (x, y) = camera.cam_to_pixel(q);
            [x, y]
        })
        .collect();
    (1..pts.len() - 1)
        .filter_map(|k| {
            let p = [pts[0], pts[k], pts[k + 1]];
            let area = edge(p[0], p[1], p[2]);
            if area == 0.0 || !area.is_finite() {
                return None;
            }
            let p = if area < 0.0 { [p[0], p[2], p[1]] } else { p };
            Some(ScreenTri {
                face,
                ymin: p.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min),
                ymax: p.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max),
                p,
                plane_n: n,
                plane_c: c,
                normal,
            })
        })
        .collect()
}

/// Sutherland-Hodgman against the plane z = -NEAR (keeps z <= -NEAR).
fn clip_near(tri: &[Vec3; 3]) -> Vec<Vec3> {
    let inside = |q: &Vec3| q.z <= -NEAR;
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        match (inside(&a), inside(&b)) {
            (true, true) => out.push(b),
            (true, false) | (false, true) => {
                let t = (-NEAR - a.z) / (b.z - a.z);
                out.push(a + (b - a) * t);
                if inside(&b) {
                    out.push(b);
                }
            }
            (false, false) => {}
        }
    }
    out
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let dy = b[1] - a[1];
    let dx = b[0] - a[0];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn raster_tri(
    t: &ScreenTri,
    camera: &Camera,
    y0: usize,
    y1: usize,
    depth: &mut [f64],
    normal: &mut [Vec3],
    face: &mut [u32],
) {
    let w = camera.width;
    let xmin = t.p.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let xmax = t.p.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
    let px0 = ((xmin - 0.5).ceil().max(0.0)) as usize;
    let px1 = ((xmax - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
    if px1 < 0.0 {
        return;
    }
    let px1 = px1 as usize;
    let py0 = ((t.ymin - 0.5).ceil().max(y0 as f64)) as usize;
    let py1 = (t.ymax - 0.5).floor().min(y1 as f64 - 1.0);
    if py1 < py0 as f64 {
        return;
    }
    let py1 = py1 as usize;
    let tl = [
        is_top_left(t.p[0], t.p[1]),
        is_top_left(t.p[1], t.p[2]),
        is_top_left(t.p[2], t.p[0]),
    ];
    for py in py0..=py1 {
        for px in px0..=px1 {
            let c = [px as f64 + 0.5, py as f64 + 0.5];
            let e = [edge(t.p[0], t.p[1], c), edge(t.p[1], t.p[2], c), edge(t.p[2], t.p[0], c)];
            if !(0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && tl[k])) {
                continue;
            }
            let ray = camera.ray_cam(c[0], c[1]);
            let denom = t.plane_n.dot(&ray);
            if denom == 0.0 {
                continue;
            }
            let d = t.plane_c / denom;
            if d < NEAR {
                continue;
            }
            let i = (py - y0) * w + px;
            if d < depth[i] {
                depth[i] = d;
                normal[i] = t.normal;
                face[i] = t.face;
            }
        }
    }
}

/// World-space surface point seen at pixel `(x, y)`.
pub fn backproject(x: usize, y: usize, gbuffer: &GBuffer, camera: &Camera) -> Result<Vec3> {
    if !gbuffer.is_foreground(x, y) {
        return Err(Error::NoSurface { x, y });
    }
    let d = gbuffer.depth[gbuffer.index(x, y)];
    Ok(camera.unproject(x as f64 + 0.5, y as f64 + 0.5, d))
}

/// Pixel containing the projection of `p`.
pub fn project(p: &Vec3, camera: &Camera) -> Option<(usize, usize)> {
    let (x, y, _) = camera.project(p)?;
    if x < 0.0 || y < 0.0 || x >= camera.width as f64 || y >= camera.height as f64 {
        return None;
    }
    Some((x as usize, y as usize))
}

/// Visualization style for PNG export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngStyle {
    /// Lambert-like shading from the camera-space normal.
    Shaded,
    /// Depth min-max normalized to 8-bit gray (near = bright).
    Depth,
    /// Normal mapped from [-1, 1] to RGB.
    Normal,
}

/// Encodes the G-buffer as an RGB PNG. Pixels of `highlight` faces are tinted.
pub fn gbuffer_png(gb: &GBuffer, style: PngStyle, highlight: Option<&[bool]>) -> Result<Vec<u8>> {
    let (depth, _, _) = gb.normalized_depth();
    let mut img = image::RgbImage::new(gb.width as u32, gb.height as u32);
    for y in 0..gb.height {
        for x in 0..gb.width {
            let i = gb.index(x, y);
            let f = gb.face_id[i];
            let mut rgb = if f == BACKGROUND {
                [255.0, 255.0, 255.0]
            } else {
                match style {
                    PngStyle::Shaded => {
                        let n = gb.normal[i];
                        let s = 0.25 + 0.75 * n.z.max(0.0) + 0.1 * n.y;
                        [200.0 * s, 200.0 * s, 205.0 * s]
                    }
                    PngStyle::Depth => {
                        let v = 255.0 * (1.0 - depth[i] as f64);
                        [v, v, v]
                    }
                    PngStyle::Normal => {
                        let n = gb.normal[i];
                        [(n.x + 1.0) * 127.5, (n.y + 1.0) * 127.5, (n.z + 1.0) * 127.5]
                    }
                }
            };
            if let Some(mask) = highlight {
                if f != BACKGROUND && mask.get(f as usize).copied().unwrap_or(false) {
                    rgb = [0.5 * rgb[0] + 120.0, 0.5 * rgb[1] + 40.0, 0.5 * rgb[2]];
                }
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(rgb.map(|c| c.clamp(0.0, 255.0).round() as u8)));
        }
    }
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| Error::InvalidInput(format!("png encoding: {e}")))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{grid_breaks, uv_sphere};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front_camera(w: usize, h: usize) -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y(), 60f64.to_radians(), w, h).unwrap()
    }

    fn quad_z(z: f64, half: f64) -> Mesh {
        grid_breaks(Vec3::new(-half, -half, z), Vec3::x(), &[0.0, 2.0 * half], Vec3::y(), &[0.0, 2.0 * half])
    }

    #[test]
    fn quad_filling_frustum() {
        let cam = front_camera(32, 32);
        let gb = render_gbuffer(&quad_z(0.0, 5.0), &cam).unwrap();
        assert_eq!(gb.foreground_count(), 32 * 32);
        for i in 0..gb.depth.len() {
            assert_abs_diff_eq!(gb.depth[i], 2.0, epsilon = 1e-4);
            assert_abs_diff_eq!(gb.normal[i], Vec3::z(), epsilon = 1e-12);
        }
    }

    #[test]
    fn nearer_quad_wins() {
        let cam = front_camera(24, 24);
        let far = quad_z(0.0, 5.0);
        let near = quad_z(0.5, 0.3);
        let mesh = Mesh::merge(&[&far, &near]);
        let gb = render_gbuffer(&mesh, &cam).unwrap();
        let (x, y) = project(&Vec3::new(0.0, 0.0, 0.5), &cam).unwrap();
        assert!(gb.face_id[gb.index(x, y)] >= 2);
        let mut near_pixels = 0;
        for i in 0..gb.depth.len() {
            if gb.face_id[i] >= 2 {
                near_pixels += 1;
                assert_abs_diff_eq!(gb.depth[i], 1.5, epsilon = 1e-9);
            }
        }
        assert!(near_pixels > 0);
        // the same scene with the faces listed the other way round
        let mesh2 = Mesh::merge(&[&near, &far]);
        let gb2 = render_gbuffer(&mesh2, &cam).unwrap();
        let near_pixels2 = gb2.face_id.iter().filter(|&&f| f < 2).count();
        assert_eq!(near_pixels, near_pixels2);
    }

    #[test]
    fn sphere_center_depth() {
        let (d, r) = (3.0, 0.5);
        let cam = Camera::look_at(Vec3::new(0.0, -d, 0.0), Vec3::zeros(), Vec3::z(), 40f64.to_radians(), 64, 64).unwrap();
        let gb = render_gbuffer(&uv_sphere(Vec3::zeros(), r, 64, 32), &cam).unwrap();
        let (cx, cy) = (32, 32);
        // analytic ray-sphere hit along the exact pixel-center ray
        let dir = cam.pixel_ray(cx, cy);
        let oc = cam.eye;
        let b = oc.dot(&dir);
        let t = -b - (b * b - (oc.norm_squared() - r * r)).sqrt();
        let analytic_depth = t * dir.dot(&cam.view_dir());
        let tol = 2.0 * cam.pixel_footprint(d);
        assert_abs_diff_eq!(gb.depth[gb.index(cx, cy)], analytic_depth, epsilon = tol);
        assert_abs_diff_eq!(gb.depth[gb.index(cx, cy)], d - r, epsilon = tol);
        for n in gb.normal.iter().zip(&gb.face_id).filter(|(_, &f)| f != BACKGROUND).map(|(n, _)| n) {
            assert_abs_diff_eq!(n.norm(), 1.0, epsilon = 1e-9);
            assert!(n.z > 0.0);
        }
    }

    #[test]
    fn backproject_round_trip() {
        let cam = Camera::look_at(Vec3::new(1.2, -2.0, 1.5), Vec3::zeros(), Vec3::z(), 45f64.to_radians(), 96, 80).unwrap();
        let mesh = uv_sphere(Vec3::zeros(), 0.5, 24, 12);
        let gb = render_gbuffer(&mesh, &cam).unwrap();
        let mut checked = 0;
        for v in &mesh.vertices {
            let Some((x, y)) = project(v, &cam) else { continue };
            let q = cam.world_to_camera(v);
            if !gb.is_foreground(x, y) || (gb.depth[gb.index(x, y)] - (-q.z)).abs() > 0.05 {
                continue; // vertex hidden
            }
            let p = backproject(x, y, &gb, &cam).unwrap();
            assert!((p - v).norm() < 2.0 * cam.pixel_footprint(-q.z) + 0.02, "{p:?} vs {v:?}");
            let (px, py, _) = cam.project(&p).unwrap();
            assert!((px - (x as f64 + 0.5)).abs() < 0.5 && (py - (y as f64 + 0.5)).abs() < 0.5);
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn backproject_fronto_plane_and_background() {
        let cam = front_camera(17, 17);
        let gb = render_gbuffer(&quad_z(0.25, 0.4), &cam).unwrap();
        let p = backproject(8, 8, &gb, &cam).unwrap();
        assert_abs_diff_eq!(p.z, 0.25, epsilon = 1e-4);
        assert!(matches!(backproject(0, 0, &gb, &cam), Err(Error::NoSurface { x: 0, y: 0 })));
    }

    #[test]
    fn occluded_vertex_backprojects_onto_occluder() {
        let cam = front_camera(32, 32);
        let hidden = crate::shapes::box_mesh(Vec3::new(0.0, 0.0, -0.5), Vec3::repeat(0.1));
        let occluder = quad_z(0.3, 0.5);
        let mesh = Mesh::merge(&[&hidden, &occluder]);
        let gb = render_gbuffer(&mesh, &cam).unwrap();
        let v = Vec3::new(0.1, 0.1, -0.4);
        let (x, y) = project(&v, &cam).unwrap();
        let p = backproject(x, y, &gb, &cam).unwrap();
        assert_abs_diff_eq!(p.z, 0.3, epsilon = 1e-9);
        assert!(gb.depth[gb.index(x, y)] < -cam.world_to_camera(&v).z);
    }

    fn moller_trumbore(o: &Vec3, d: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
        let e1 = tri[1] - tri[0];
        let e2 = tri[2] - tri[0];
        let p = d.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let s = o - tri[0];
        let u = s.dot(&p) / det;
        let q = s.cross(&e1);
        let v = d.dot(&q) / det;
        if u < 0.0 || v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) / det;
        (t > 0.0).then_some(t)
    }

    #[test]
    fn agrees_with_brute_force_ray_casting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agree = 0usize;
        let mut total = 0usize;
        for _ in 0..20 {
            let nf = rng.gen_range(5..=50);
            let mut verts = Vec::new();
            let mut faces = Vec::new();
            for f in 0..nf {
                let c = Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
                for _ in 0..3 {
                    verts.push(c + Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)));
                }
                faces.push([3 * f as u32, 3 * f as u32 + 1, 3 * f as u32 + 2]);
            }
            let mesh = Mesh::new(verts, faces).unwrap();
            let eye = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..-2.0), rng.gen_range(-1.0..2.0));
            let cam = Camera::look_at(eye, Vec3::zeros(), Vec3::z(), 50f64.to_radians(), 32, 32).unwrap();
            let gb = render_gbuffer(&mesh, &cam).unwrap();
            let fwd = cam.view_dir();
            for y in 0..32 {
                for x in 0..32 {
                    let dir = cam.pixel_ray(x, y);
                    let mut best: Option<(f64, u32)> = None;
                    for f in 0..mesh.face_count() {
                        if let Some(t) = moller_trumbore(&cam.eye, &dir, &mesh.triangle(f)) {
                            if best.map_or(true, |(bt, _)| t < bt) {
                                best = Some((t, f as u32));
                            }
                        }
                    }
                    let i = gb.index(x, y);
                    match best {
                        Some((t, f)) => {
                            total += 1;
                            if gb.face_id[i] == f {
                                agree += 1;
                                assert_abs_diff_eq!(gb.depth[i], t * dir.dot(&fwd), epsilon = 1e-4);
                            }
                        }
                        None => {
                            if gb.face_id[i] != BACKGROUND {
                                total += 1;
                            }
                        }
                    }
                }
            }
        }
        let rate = agree as f64 / total as f64;
        assert!(rate >= 0.99, "agreement {rate}");
    }

    fn ray_dir(cam: &Camera, x: f64, y: f64) -> Vec3 {
        cam.camera_to_world_dir(&cam.ray_cam(x, y)).normalize()
    }

    #[test]
    fn focal_crop_cases() {
        let cam = front_camera(64, 48);
        assert_eq!(focal_crop(&cam, &PixelRect::full(64, 48)).unwrap(), cam);
        let half = focal_crop(&cam, &PixelRect::new(16.0, 12.0, 48.0, 36.0)).unwrap();
        assert_abs_diff_eq!(half.vfov, 2.0 * ((cam.vfov / 2.0).tan() / 2.0).atan(), epsilon = 1e-12);
        assert_abs_diff_eq!(half.shift[0], 0.0, epsilon = 1e-12);
        assert!(focal_crop(&cam, &PixelRect::new(3.0, 3.0, 3.0, 9.0)).is_err());

        let rect = PixelRect::new(5.0, 20.0, 29.0, 38.0);
        let crop = focal_crop(&cam, &rect).unwrap();
        let r = rect.expand_to_aspect(64, 48);
        for (i, j) in [(0, 0), (63, 47), (10, 30), (40, 5)] {
            let a = ray_dir(&crop, i as f64 + 0.5, j as f64 + 0.5);
            let px = r.x0 + (i as f64 + 0.5) * r.width() / 64.0;
            let py = r.y0 + (j as f64 + 0.5) * r.height() / 48.0;
            let b = ray_dir(&cam, px, py);
            assert!((a - b).norm() < 1e-12);
        }
        // rendering the crop equals sampling the parent at the mapped ray
        let scene = quad_z(0.0, 5.0);
        let gb = render_gbuffer(&scene, &crop).unwrap();
        assert_eq!(gb.foreground_count(), 64 * 48);
    }

    #[test]
    fn focal_crop_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cam = Camera::look_at(Vec3::new(0.3, -2.0, 1.0), Vec3::zeros(), Vec3::z(), 0.8, 80, 60).unwrap();
        for _ in 0..20 {
            let rand_rect = |rng: &mut ChaCha8Rng| {
                let x0 = rng.gen_range(0.0..50.0);
                let y0 = rng.gen_range(0.0..40.0);
                PixelRect::new(x0, y0, x0 + rng.gen_range(5.0..30.0), y0 + rng.gen_range(5.0..20.0))
            };
            let a = rand_rect(&mut rng);
            let b = rand_rect(&mut rng);
            let twice = focal_crop(&focal_crop(&cam, &a).unwrap(), &b).unwrap();
            let once = focal_crop(&cam, &a.compose(&b, 80, 60)).unwrap();
            for (x, y) in [(0.5, 0.5), (79.5, 59.5), (40.0, 30.0), (12.5, 47.5)] {
                assert!((ray_dir(&twice, x, y) - ray_dir(&once, x, y)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn near_plane_clipping_keeps_visible_part() {
        // quad passing through the camera position plane
        let cam = front_camera(16, 16);
        let slab = grid_breaks(Vec3::new(-1.0, -0.2, -1.0), Vec3::x(), &[0.0, 2.0], Vec3::z(), &[0.0, 5.0]);
        let gb = render_gbuffer(&slab, &cam).unwrap();
        assert!(gb.foreground_count() > 0);
        assert!(gb.depth.iter().all(|&d| d == 0.0 || d >= NEAR));
    }

    #[test]
    fn camera_json_round_trip() {
        let cam = front_camera(8, 8);
        let s = serde_json::to_string(&cam).unwrap();
        assert!(s.contains("\"eye\":[0.0,0.0,2.0]"), "{s}");
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cam);
        assert!(Camera::look_at(Vec3::zeros(), Vec3::zeros(), Vec3::z(), 1.0, 4, 4).is_err());
        assert!(Camera::look_at(Vec3::z(), Vec3::zeros(), Vec3::z(), 1.0, 4, 4).is_err());
    }

    #[test]
    fn png_export_decodes() {
        let cam = front_camera(20, 10);
        let gb = render_gbuffer(&quad_z(0.0, 0.5), &cam).unwrap();
        for style in [PngStyle::Shaded, PngStyle::Depth, PngStyle::Normal] {
            let png = gbuffer_png(&gb, style, Some(&[true, false])).unwrap();
            let img = image::load_from_memory(&png).unwrap();
            assert_eq!((img.width(), img.height()), (20, 10));
        }
    }
}
