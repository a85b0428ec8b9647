//! Analytic ray casting against planes, spheres and axis-aligned boxes.

use serde::{Deserialize, Serialize};

use crate::geometry::{pixel_direction, Intrinsics, Pose, Vec3};

/// Two-colour checkerboard with square cells of side `cell` metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checker {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub cell: f64,
}

impl Checker {
    fn pick(&self, parity: i64) -> [f64; 3] {
        if parity.rem_euclid(2) == 0 {
            self.a
        } else {
            self.b
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// Plane through `point` with unit `normal`. With `half_extent` it is
    /// a square of that half-size centred on `point`.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        half_extent: Option<f64>,
        texture: Checker,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        texture: Checker,
    },
    Box {
        min: [f64; 3],
        max: [f64; 3],
        texture: Checker,
    },
}

/// Ray hit: parameter along the (unnormalised) direction, surface normal
/// facing the ray origin, and the primitive index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
    pub point: Vec3,
    pub index: usize,
}

const MIN_T: f64 = 1e-9;

/// Orthonormal in-plane axes for a plane normal.
fn plane_axes(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

impl Primitive {
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3)> {
        match self {
            Primitive::Plane {
                point,
                normal,
                half_extent,
                ..
            } => {
                let n = Vec3::from(*normal);
                let p = Vec3::from(*point);
                let denom = n.dot(d);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (p - o).dot(&n) / denom;
                if t <= MIN_T {
                    return None;
                }
                if let Some(h) = half_extent {
                    let (e1, e2) = plane_axes(&n);
                    let rel = o + d * t - p;
                    if rel.dot(&e1).abs() > *h || rel.dot(&e2).abs() > *h {
                        return None;
                    }
                }
                Some((t, n))
            }
            Primitive::Sphere { center, radius, .. } => {
                let c = Vec3::from(*center);
                let oc = o - c;
                let a = d.dot(d);
                let b = oc.dot(d);
                let cc = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // numerically stable roots of a·t² + 2b·t + cc
                let qv = if b > 0.0 { -(b + sq) } else { sq - b };
                if qv == 0.0 {
                    return None;
                }
                let (t0, t1) = (qv / a, cc / qv);
                let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                let t = if lo > MIN_T {
                    lo
                } else if hi > MIN_T {
                    hi
                } else {
                    return None;
                };
                Some((t, (o + d * t - c) / *radius))
            }
            Primitive::Box { min, max, .. } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut near_axis = 0;
                let mut far_axis = 0;
                for i in 0..3 {
                    if d[i].abs() < 1e-300 {
                        if o[i] < min[i] || o[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let mut a = (min[i] - o[i]) / d[i];
                    let mut b = (max[i] - o[i]) / d[i];
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    if a > t_near {
                        t_near = a;
                        near_axis = i;
                    }
                    if b < t_far {
                        t_far = b;
                        far_axis = i;
                    }
                }
                if t_near > t_far {
                    return None;
                }
                let (t, axis) = if t_near > MIN_T {
                    (t_near, near_axis)
                } else if t_far > MIN_T {
                    (t_far, far_axis)
                } else {
                    return None;
                };
                let mut n = Vec3::zeros();
                n[axis] = 1.0;
                Some((t, n))
            }
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        match self {
            Primitive::Plane { point, normal, .. } => {
                // only a bounded ground plane has an "inside": below it
                (p - Vec3::from(*point)).dot(&Vec3::from(*normal)) < 0.0
            }
            Primitive::Sphere { center, radius, .. } => (p - Vec3::from(*center)).norm() < *radius,
            Primitive::Box { min, max, .. } => (0..3).all(|i| p[i] > min[i] && p[i] < max[i]),
        }
    }

    fn albedo(&self, p: &Vec3) -> [f64; 3] {
        match self {
            Primitive::Plane {
                point, normal, texture, ..
            } => {
                let n = Vec3::from(*normal);
                let (e1, e2) = plane_axes(&n);
                let rel = p - Vec3::from(*point);
                let i = (rel.dot(&e1) / texture.cell).floor() as i64;
                let j = (rel.dot(&e2) / texture.cell).floor() as i64;
                texture.pick(i + j)
            }
            Primitive::Sphere { texture, .. } | Primitive::Box { texture, .. } => {
                let s = p.map(|v| (v / texture.cell).floor() as i64);
                texture.pick(s.x + s.y + s.z)
            }
        }
    }

    fn scaled(&self, c: f64) -> Primitive {
        let s = |v: [f64; 3]| v.map(|x| x * c);
        let tex = |t: &Checker| Checker { cell: t.cell * c, ..*t };
        match self {
            Primitive::Plane {
                point,
                normal,
                half_extent,
                texture,
            } => Primitive::Plane {
                point: s(*point),
                normal: *normal,
                half_extent: half_extent.map(|h| h * c),
                texture: tex(texture),
            },
            Primitive::Sphere { center, radius, texture } => Primitive::Sphere {
                center: s(*center),
                radius: radius * c,
                texture: tex(texture),
            },
            Primitive::Box { min, max, texture } => Primitive::Box {
                min: s(*min),
                max: s(*max),
                texture: tex(texture),
            },
        }
    }
}

/// Static world of primitives lit by a directional light.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    /// Unit direction towards the light.
    pub light: [f64; 3],
    pub ambient: f64,
}

/// Rendered view: planar RGB `[3, H, W]` and z-depth `[H, W]` (0 for sky).
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
}

impl View {
    pub fn valid_fraction(&self) -> f64 {
        self.depth.iter().filter(|&&d| d > 0.0).count() as f64 / self.depth.len() as f64
    }
}

impl Scene {
    /// Nearest hit along `o + t·d`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (index, prim) in self.primitives.iter().enumerate() {
            if let Some((t, n)) = prim.intersect(o, d) {
                if best.is_none_or(|b| t < b.t) {
                    let n = if n.dot(d) > 0.0 { -n } else { n };
                    best = Some(Hit {
                        t,
                        normal: n,
                        point: o + d * t,
                        index,
                    });
                }
            }
        }
        best
    }

    pub fn camera_inside(&self, eye: &Vec3) -> bool {
        self.primitives.iter().any(|p| p.contains(eye))
    }

    /// z-depth seen through the fractional pixel `(u, v)`, if any surface
    /// is hit.
    pub fn cast_depth(&self, k: &Intrinsics, pose: &Pose, u: f64, v: f64) -> Option<f64> {
        let d = pose.rotation() * pixel_direction(k, u, v);
        // the camera-frame direction has z = 1, so the ray parameter is
        // the z-depth
        self.intersect(pose.translation(), &d).map(|h| h.t)
    }

    pub fn render(&self, k: &Intrinsics, pose: &Pose) -> View {
        let (w, h) = (k.width, k.height);
        let mut rgb = vec![0.0; 3 * w * h];
        let mut depth = vec![0.0; w * h];
        let light = Vec3::from(self.light);
        let o = pose.translation();
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                let d = pose.rotation() * pixel_direction(k, u as f64, v as f64);
                let color = match self.intersect(o, &d) {
                    Some(hit) => {
                        depth[i] = hit.t;
                        let prim = &self.primitives[hit.index];
                        let albedo = prim.albedo(&(hit.point - hit.normal * 1e-7));
                        let shade = self.ambient + (1.0 - self.ambient) * hit.normal.dot(&light).max(0.0);
                        albedo.map(|a| (a * shade).clamp(0.0, 1.0))
                    }
                    None => {
                        let up = (d.z / d.norm()).clamp(-1.0, 1.0);
                        let s = 0.5 + 0.5 * up;
                        [0.45 + 0.25 * s, 0.6 + 0.2 * s, 0.8 + 0.15 * s]
                    }
                };
                for c in 0..3 {
                    rgb[c * w * h + i] = color[c];
                }
            }
        }
        View { rgb, depth }
    }

    /// The same scene with every length multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Scene {
        Scene {
            primitives: self.primitives.iter().map(|p| p.scaled(c)).collect(),
            light: self.light,
            ambient: self.ambient,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GREY: Checker = Checker {
        a: [0.5; 3],
        b: [0.7; 3],
        cell: 1.0,
    };

    fn single(p: Primitive) -> Scene {
        Scene {
            primitives: vec![p],
            light: [0.0, 0.0, -1.0],
            ambient: 0.3,
        }
    }

    #[test]
    fn fronto_parallel_plane_has_constant_depth() {
        let d = 3.25;
        let scene = single(Primitive::Plane {
            point: [0.0, 0.0, d],
            normal: [0.0, 0.0, -1.0],
            half_extent: None,
            texture: GREY,
        });
        let k = Intrinsics::centered(20.0, 20.0, 16, 12).unwrap();
        let view = scene.render(&k, &Pose::identity());
        assert!(view.depth.iter().all(|&z| (z - d).abs() < 1e-12));
    }

    #[test]
    fn sphere_on_axis_front_surface() {
        let (d, r) = (5.0, 1.5);
        let scene = single(Primitive::Sphere {
            center: [0.0, 0.0, d],
            radius: r,
            texture: GREY,
        });
        let k = Intrinsics::centered(20.0, 20.0, 17, 17).unwrap();
        let view = scene.render(&k, &Pose::identity());
        assert!((view.depth[8 * 17 + 8] - (d - r)).abs() < 1e-12);
        assert_eq!(view.depth[0], 0.0);
    }

    #[test]
    fn box_face_depth_and_inside_test() {
        let scene = single(Primitive::Box {
            min: [-1.0, -1.0, 4.0],
            max: [1.0, 1.0, 6.0],
            texture: GREY,
        });
        let k = Intrinsics::centered(10.0, 10.0, 9, 9).unwrap();
        let z = scene.cast_depth(&k, &Pose::identity(), 4.0, 4.0).unwrap();
        assert!((z - 4.0).abs() < 1e-12);
        assert!(scene.camera_inside(&Vec3::new(0.0, 0.0, 5.0)));
        assert!(!scene.camera_inside(&Vec3::zeros()));
    }

    #[test]
    fn bounded_plane_misses_outside_extent() {
        let scene = single(Primitive::Plane {
            point: [0.0, 0.0, 2.0],
            normal: [0.0, 0.0, 1.0],
            half_extent: Some(0.5),
            texture: GREY,
        });
        let k = Intrinsics::centered(10.0, 10.0, 21, 21).unwrap();
        assert!(scene.cast_depth(&k, &Pose::identity(), 10.0, 10.0).is_some());
        assert!(scene.cast_depth(&k, &Pose::identity(), 0.0, 10.0).is_none());
    }
}
