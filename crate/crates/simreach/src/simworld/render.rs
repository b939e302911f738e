use nalgebra::Vector3;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::scene::{Primitive, Scene, Shape};
use crate::numgrad::Tensor;

/// Pinhole camera; `fov` is the full horizontal field of view in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub pos: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub fov: f64,
}

impl Camera {
    fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let f = (self.look_at - self.pos).normalize();
        let r = f.cross(&Vector3::z()).normalize();
        let u = r.cross(&f);
        (f, r, u)
    }

    /// Project a world point to pixel coordinates; returns (px, py, depth).
    pub fn project(&self, p: &Vector3<f64>, resolution: usize) -> (f64, f64, f64) {
        let (f, r, u) = self.basis();
        let d = p - self.pos;
        let depth = d.dot(&f);
        let t = (self.fov / 2.0).tan();
        let ndc_x = d.dot(&r) / (depth * t);
        let ndc_y = d.dot(&u) / (depth * t);
        let res = resolution as f64;
        ((ndc_x + 1.0) / 2.0 * res, (1.0 - ndc_y) / 2.0 * res, depth)
    }
}

struct Raster {
    res: usize,
    rgb: Vec<f64>,
    /// Object id of the last writer per pixel; 0 = background/table.
    owner: Vec<u16>,
}

impl Raster {
    fn new(res: usize, fill: [f64; 3]) -> Self {
        let mut rgb = vec![0.0; res * res * 3];
        for px in rgb.chunks_exact_mut(3) {
            px.copy_from_slice(&fill);
        }
        Self {
            res,
            rgb,
            owner: vec![0; res * res],
        }
    }

    fn fill_triangle(&mut self, p: [(f64, f64); 3], color: [f64; 3], id: u16) {
        let area = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
        if area.abs() < 1e-12 {
            return;
        }
        let sign = area.signum();
        let min_x = p.iter().map(|v| v.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_x = (p.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max).ceil() as i64)
            .clamp(0, self.res as i64) as usize;
        let min_y = p.iter().map(|v| v.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_y = (p.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max).ceil() as i64)
            .clamp(0, self.res as i64) as usize;
        for y in min_y..max_y {
            for x in min_x..max_x {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let e0 = (p[1].0 - p[0].0) * (cy - p[0].1) - (cx - p[0].0) * (p[1].1 - p[0].1);
                let e1 = (p[2].0 - p[1].0) * (cy - p[1].1) - (cx - p[1].0) * (p[2].1 - p[1].1);
                let e2 = (p[0].0 - p[2].0) * (cy - p[2].1) - (cx - p[2].0) * (p[0].1 - p[2].1);
                if e0 * sign >= 0.0 && e1 * sign >= 0.0 && e2 * sign >= 0.0 {
                    let idx = y * self.res + x;
                    self.rgb[idx * 3..idx * 3 + 3].copy_from_slice(&color);
                    self.owner[idx] = id;
                }
            }
        }
    }

    fn fill_disk(&mut self, cx: f64, cy: f64, radius: f64, color: [f64; 3], id: u16) {
        let min_x = ((cx - radius).floor().max(0.0)) as usize;
        let max_x = ((cx + radius).ceil() as i64).clamp(0, self.res as i64) as usize;
        let min_y = ((cy - radius).floor().max(0.0)) as usize;
        let max_y = ((cy + radius).ceil() as i64).clamp(0, self.res as i64) as usize;
        for y in min_y..max_y {
            for x in min_x..max_x {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= radius * radius {
                    let idx = y * self.res + x;
                    self.rgb[idx * 3..idx * 3 + 3].copy_from_slice(&color);
                    self.owner[idx] = id;
                }
            }
        }
    }
}

const LIGHT_DIR: [f64; 3] = [-0.3, 0.2, 0.8];

fn shade(color: &[f64; 3], normal: &Vector3<f64>, gain: f64) -> [f64; 3] {
    let light = Vector3::new(LIGHT_DIR[0], LIGHT_DIR[1], LIGHT_DIR[2]).normalize();
    let f = (0.55 + 0.45 * normal.normalize().dot(&light).abs()) * gain;
    [color[0] * f, color[1] * f, color[2] * f]
}

/// World-space corners of a yawed box standing on `pos`.
fn cuboid_corners(pos: &Vector3<f64>, yaw: f64, sx: f64, sy: f64, sz: f64) -> [Vector3<f64>; 8] {
    let (c, s) = (yaw.cos(), yaw.sin());
    let mut out = [Vector3::zeros(); 8];
    let mut i = 0;
    for &z in &[0.0, sz] {
        for &(lx, ly) in &[
            (-sx / 2.0, -sy / 2.0),
            (sx / 2.0, -sy / 2.0),
            (sx / 2.0, sy / 2.0),
            (-sx / 2.0, sy / 2.0),
        ] {
            out[i] = pos + Vector3::new(c * lx - s * ly, s * lx + c * ly, z);
            i += 1;
        }
    }
    out
}

/// Faces as corner indices; bottom face omitted (it rests on the table).
const BOX_FACES: [[usize; 4]; 5] = [
    [4, 5, 6, 7], // top
    [0, 1, 5, 4],
    [1, 2, 6, 5],
    [2, 3, 7, 6],
    [3, 0, 4, 7],
];

fn draw_quad(
    raster: &mut Raster,
    cam: &Camera,
    corners: &[Vector3<f64>; 4],
    color: [f64; 3],
    gain: f64,
    id: u16,
) {
    let n = (corners[1] - corners[0]).cross(&(corners[2] - corners[0]));
    if n.norm() < 1e-12 {
        return;
    }
    let shaded = shade(&color, &n, gain);
    let p: Vec<(f64, f64)> = corners
        .iter()
        .map(|c| {
            let (px, py, _) = cam.project(c, raster.res);
            (px, py)
        })
        .collect();
    raster.fill_triangle([p[0], p[1], p[2]], shaded, id);
    raster.fill_triangle([p[0], p[2], p[3]], shaded, id);
}

fn draw_primitive(raster: &mut Raster, cam: &Camera, prim: &Primitive, gain: f64, id: u16) {
    match prim.shape {
        Shape::Cuboid { sx, sy, sz } => {
            let corners = cuboid_corners(&prim.pos, prim.yaw, sx, sy, sz);
            // painter's order between faces: farthest centroid first
            let mut faces: Vec<&[usize; 4]> = BOX_FACES.iter().collect();
            let depth_of = |f: &[usize; 4]| -> f64 {
                let c = (corners[f[0]] + corners[f[1]] + corners[f[2]] + corners[f[3]]) / 4.0;
                (c - cam.pos).norm()
            };
            faces.sort_by(|a, b| depth_of(b).partial_cmp(&depth_of(a)).unwrap());
            for f in faces {
                let quad = [corners[f[0]], corners[f[1]], corners[f[2]], corners[f[3]]];
                draw_quad(raster, cam, &quad, prim.color, gain, id);
            }
        }
        Shape::Sphere { r } => {
            let center = prim.pos + Vector3::new(0.0, 0.0, r);
            let (cx, cy, _) = cam.project(&center, raster.res);
            let (_, right, _) = cam.basis();
            let (ex, ey, _) = cam.project(&(center + right * r), raster.res);
            let radius = ((ex - cx).powi(2) + (ey - cy).powi(2)).sqrt();
            let shaded = shade(&prim.color, &Vector3::z(), gain);
            raster.fill_disk(cx, cy, radius, shaded, id);
        }
        Shape::Cylinder { r, h } => {
            const SIDES: usize = 12;
            let ring: Vec<Vector3<f64>> = (0..SIDES)
                .map(|i| {
                    let a = prim.yaw + i as f64 / SIDES as f64 * std::f64::consts::TAU;
                    prim.pos + Vector3::new(r * a.cos(), r * a.sin(), 0.0)
                })
                .collect();
            // side faces far to near
            let mut order: Vec<usize> = (0..SIDES).collect();
            let depth_of = |i: usize| {
                let mid = (ring[i] + ring[(i + 1) % SIDES]) / 2.0 + Vector3::new(0.0, 0.0, h / 2.0);
                (mid - cam.pos).norm()
            };
            order.sort_by(|&a, &b| depth_of(b).partial_cmp(&depth_of(a)).unwrap());
            let up = Vector3::new(0.0, 0.0, h);
            for i in order {
                let j = (i + 1) % SIDES;
                let quad = [ring[i], ring[j], ring[j] + up, ring[i] + up];
                draw_quad(raster, cam, &quad, prim.color, gain, id);
            }
            // top cap
            let top_color = shade(&prim.color, &Vector3::z(), gain);
            let center_top = prim.pos + Vector3::new(0.0, 0.0, h);
            let (c0x, c0y, _) = cam.project(&center_top, raster.res);
            for i in 0..SIDES {
                let j = (i + 1) % SIDES;
                let (ax, ay, _) = cam.project(&(ring[i] + up), raster.res);
                let (bx, by, _) = cam.project(&(ring[j] + up), raster.res);
                raster.fill_triangle([(c0x, c0y), (ax, ay), (bx, by)], top_color, id);
            }
        }
    }
}

/// Flat-shaded painter's-algorithm rasterization of a scene.
///
/// Returns an [H,W,3] tensor with values in [-1,1]. The pseudo-real domain
/// additionally applies its lighting gain and Gaussian pixel noise.
pub fn render(scene: &Scene, resolution: usize) -> Tensor {
    render_with_mask(scene, resolution).0
}

/// As [`render`], also returning the pixel mask of the target cuboid.
pub fn render_with_mask(scene: &Scene, resolution: usize) -> (Tensor, Vec<bool>) {
    let gain = scene.lighting_gain;
    let mut raster = Raster::new(resolution, {
        let g = gain;
        [
            scene.floor_color[0] * g,
            scene.floor_color[1] * g,
            scene.floor_color[2] * g,
        ]
    });
    let cam = &scene.camera;

    // table top
    let (tw, th) = scene.table_size;
    let table = cuboid_corners(&scene.table_center, scene.table_yaw, tw, th, 0.0);
    let quad = [table[0], table[1], table[2], table[3]];
    draw_quad(&mut raster, cam, &quad, scene.table_color, gain, 0);

    // objects far to near; target id 1, distractors from 2
    const TARGET_ID: u16 = 1;
    let mut order: Vec<(u16, &Primitive)> = vec![(TARGET_ID, &scene.target)];
    for (k, d) in scene.distractors.iter().enumerate() {
        order.push((2 + k as u16, d));
    }
    order.sort_by(|a, b| {
        let da = (a.1.pos - cam.pos).norm();
        let db = (b.1.pos - cam.pos).norm();
        db.partial_cmp(&da).unwrap()
    });
    for (id, prim) in order {
        draw_primitive(&mut raster, cam, prim, gain, id);
    }

    // pixel noise, then map [0,1] -> [-1,1]
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(scene.noise_seed);
    let noise = Normal::new(0.0, scene.pixel_noise.max(1e-300)).unwrap();
    let data: Vec<f64> = raster
        .rgb
        .iter()
        .map(|&v| {
            let v = if scene.pixel_noise > 0.0 {
                v + noise.sample(&mut rng)
            } else {
                v
            };
            (v.clamp(0.0, 1.0)) * 2.0 - 1.0
        })
        .collect();
    let mut data = data;
    let mut mask: Vec<bool> = raster.owner.iter().map(|&o| o == TARGET_ID).collect();
    if scene.sensor_mirrored {
        for r in 0..resolution {
            for c in 0..resolution / 2 {
                let (a, b) = (r * resolution + c, r * resolution + resolution - 1 - c);
                mask.swap(a, b);
                for ch in 0..3 {
                    data.swap(3 * a + ch, 3 * b + ch);
                }
            }
        }
    }
    (
        Tensor::new(vec![resolution, resolution, 3], data).unwrap(),
        mask,
    )
}
