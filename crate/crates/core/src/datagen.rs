//! Seeded synthetic surfaces with labels: a split plane, stacked primitives,
//! partial/complete sphere pairs and box wireframes with keypoints.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::PointCloud;
use crate::error::{invalid, Result};
use crate::geom::{self, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    SplitPlane,
    MultiPart,
    PartialComplete,
    KeypointShape,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub kind: ShapeKind,
    pub n_points: usize,
    pub parts: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: ShapeKind, n_points: usize, parts: usize, noise_sigma: f64, seed: u64) -> Self {
        Self { kind, n_points, parts, noise_sigma, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts < 1 {
            return invalid("parts must be at least 1");
        }
        if self.n_points < self.parts {
            return invalid(format!("n_points ({}) must be at least parts ({})", self.n_points, self.parts));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return invalid(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

fn noise(sigma: f64) -> Normal<f64> {
    // sigma was validated as finite and non-negative
    Normal::new(0.0, sigma).expect("valid sigma")
}

/// `n` jittered points in `[0,w] x [0,h]`, one per cell of a near-square grid.
fn stratified_rect(n: usize, w: f64, h: f64, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let rows = ((n as f64 * h / w).sqrt().round() as usize).clamp(1, n);
    let mut out = Vec::with_capacity(n);
    for r in 0..rows {
        let cols = n / rows + usize::from(r < n % rows);
        for c in 0..cols {
            let u = (c as f64 + rng.random::<f64>()) / cols as f64;
            let v = (r as f64 + rng.random::<f64>()) / rows as f64;
            out.push((u * w, v * h));
        }
    }
    out
}

/// Largest-remainder split of `n` by real weights; ties go to the lower index.
fn allocate(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let given: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(given)) {
        counts[i] += 1;
    }
    counts
}

/// Unit square in the xy-plane cut into `parts` equal strips along x.
pub fn gen_split_plane(spec: &SyntheticSpec) -> Result<PointCloud> {
    spec.validate()?;
    if spec.parts > 4 {
        return invalid(format!("split plane supports 1 to 4 parts, got {}", spec.parts));
    }
    let mut rng = spec.rng();
    let z = noise(spec.noise_sigma);
    let mut points = Vec::with_capacity(spec.n_points);
    let mut labels = Vec::with_capacity(spec.n_points);
    for (x, y) in stratified_rect(spec.n_points, 1.0, 1.0, &mut rng) {
        points.push([x, y, z.sample(&mut rng)]);
        labels.push(((x * spec.parts as f64).floor() as usize).min(spec.parts - 1) as i32);
    }
    PointCloud::new(points)?.with_labels(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Primitive {
    Box,
    Cylinder,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Footprint {
    Square,
    Circle,
}

impl Primitive {
    fn at(i: usize) -> Self {
        const HEAD: [Primitive; 4] = [Primitive::Box, Primitive::Box, Primitive::Cylinder, Primitive::Disk];
        const TAIL: [Primitive; 3] = [Primitive::Box, Primitive::Cylinder, Primitive::Disk];
        if i < HEAD.len() {
            HEAD[i]
        } else {
            TAIL[(i - HEAD.len()) % TAIL.len()]
        }
    }

    fn footprint(self) -> Footprint {
        match self {
            Primitive::Box => Footprint::Square,
            _ => Footprint::Circle,
        }
    }

    fn height(self) -> f64 {
        match self {
            Primitive::Disk => 0.0,
            _ => 1.0,
        }
    }
}

const SIDE: f64 = 1.0;
const RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
enum Patch {
    SquareWall { z0: f64, h: f64 },
    TubeWall { z0: f64, h: f64 },
    SquareCap { z: f64 },
    CircleCap { z: f64 },
    /// Square cap with the inscribed circle removed.
    Ring { z: f64 },
}

impl Patch {
    fn area(self) -> f64 {
        match self {
            Patch::SquareWall { h, .. } => 4.0 * SIDE * h,
            Patch::TubeWall { h, .. } => 2.0 * PI * RADIUS * h,
            Patch::SquareCap { .. } => SIDE * SIDE,
            Patch::CircleCap { .. } => PI * RADIUS * RADIUS,
            Patch::Ring { .. } => SIDE * SIDE - PI * RADIUS * RADIUS,
        }
    }

    fn sample(self, n: usize, rng: &mut impl Rng) -> Vec<Point3> {
        let half = SIDE / 2.0;
        match self {
            Patch::SquareWall { z0, h } => stratified_rect(n, 4.0 * SIDE, h, rng)
                .into_iter()
                .map(|(s, t)| {
                    let face = ((s / SIDE) as usize).min(3);
                    let a = s - face as f64 * SIDE - half;
                    let xy = match face {
                        0 => [a, -half],
                        1 => [half, a],
                        2 => [-a, half],
                        _ => [-half, -a],
                    };
                    [xy[0], xy[1], z0 + t]
                })
                .collect(),
            Patch::TubeWall { z0, h } => stratified_rect(n, 2.0 * PI * RADIUS, h, rng)
                .into_iter()
                .map(|(s, t)| {
                    let th = s / RADIUS;
                    [RADIUS * th.cos(), RADIUS * th.sin(), z0 + t]
                })
                .collect(),
            Patch::SquareCap { z } => stratified_rect(n, SIDE, SIDE, rng)
                .into_iter()
                .map(|(u, v)| [u - half, v - half, z])
                .collect(),
            Patch::CircleCap { z } => stratified_rect(n, 1.0, 1.0, rng)
                .into_iter()
                .map(|(u, v)| {
                    let (r, th) = (RADIUS * u.sqrt(), 2.0 * PI * v);
                    [r * th.cos(), r * th.sin(), z]
                })
                .collect(),
            Patch::Ring { z } => {
                let mut out = Vec::with_capacity(n);
                while out.len() < n {
                    let (x, y) = (rng.random::<f64>() * SIDE - half, rng.random::<f64>() * SIDE - half);
                    if x * x + y * y > RADIUS * RADIUS {
                        out.push([x, y, z]);
                    }
                }
                out
            }
        }
    }
}

fn cap(fp: Footprint, z: f64) -> Patch {
    match fp {
        Footprint::Square => Patch::SquareCap { z },
        Footprint::Circle => Patch::CircleCap { z },
    }
}

/// Patches of a stack of `parts` primitives along z, with owning part labels.
fn stack_patches(parts: usize) -> Vec<(i32, Patch)> {
    let mut out = Vec::new();
    let mut z = 0.0;
    for i in 0..parts {
        let prim = Primitive::at(i);
        let label = i as i32;
        let h = prim.height();
        if i == 0 && prim != Primitive::Disk {
            out.push((label, cap(prim.footprint(), z)));
        }
        match prim {
            Primitive::Box => out.push((label, Patch::SquareWall { z0: z, h })),
            Primitive::Cylinder => out.push((label, Patch::TubeWall { z0: z, h })),
            Primitive::Disk => out.push((label, Patch::CircleCap { z })),
        }
        z += h;
        if i + 1 < parts {
            let next = Primitive::at(i + 1);
            match (prim.footprint(), next.footprint()) {
                (Footprint::Square, Footprint::Circle) => out.push((label, Patch::Ring { z })),
                (Footprint::Circle, Footprint::Square) => out.push((label + 1, Patch::Ring { z })),
                _ => {}
            }
        } else if prim != Primitive::Disk {
            out.push((label, cap(prim.footprint(), z)));
        }
    }
    out
}

/// Centers on the bounding-box midpoint and scales into the unit sphere.
fn normalize_unit_sphere(points: &mut [Point3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points.iter() {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let center = geom::scale(&geom::add(&lo, &hi), 0.5);
    let radius = points.iter().map(|p| geom::dist(p, &center)).fold(0.0, f64::max);
    let s = if radius > 0.0 { 1.0 / radius } else { 1.0 };
    for p in points.iter_mut() {
        *p = geom::scale(&geom::sub(p, &center), s);
    }
}

/// Stack of touching primitives (boxes, open cylinders, disks), one label each,
/// with points spread by surface area.
pub fn gen_multipart(spec: &SyntheticSpec) -> Result<PointCloud> {
    spec.validate()?;
    if spec.parts < 2 {
        return invalid(format!("multipart needs at least 2 parts, got {}", spec.parts));
    }
    let patches = stack_patches(spec.parts);
    let areas: Vec<f64> = patches.iter().map(|(_, p)| p.area()).collect();
    let counts = allocate(&areas, spec.n_points);
    let mut rng = spec.rng();
    let mut points = Vec::with_capacity(spec.n_points);
    let mut labels = Vec::with_capacity(spec.n_points);
    for ((label, patch), &n) in patches.iter().zip(&counts) {
        points.extend(patch.sample(n, &mut rng));
        labels.extend(std::iter::repeat_n(*label, n));
    }
    normalize_unit_sphere(&mut points);
    let nd = noise(spec.noise_sigma);
    for p in points.iter_mut() {
        for c in p.iter_mut() {
            *c += nd.sample(&mut rng);
        }
    }
    PointCloud::new(points)?.with_labels(labels)
}

pub const SPHERE_RADIUS: f64 = 0.5;

/// Orthonormal frame whose third axis is `dir`.
fn frame(dir: &Point3) -> [Point3; 3] {
    let helper = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = {
        let t = geom::sub(&helper, &geom::scale(dir, geom::dot(&helper, dir)));
        geom::scale(&t, 1.0 / geom::norm(&t))
    };
    let e2 = [
        dir[1] * e1[2] - dir[2] * e1[1],
        dir[2] * e1[0] - dir[0] * e1[2],
        dir[0] * e1[1] - dir[1] * e1[0],
    ];
    [e1, e2, *dir]
}

/// Area-uniform stratified points on a sphere cap `w >= w_min` in `axes`.
fn sphere_band(n: usize, w_min: f64, axes: &[Point3; 3], rng: &mut impl Rng) -> Vec<Point3> {
    let span = 1.0 - w_min;
    stratified_rect(n, 2.0 * PI, span * 2.0, rng)
        .into_iter()
        .map(|(phi, t)| {
            let w = w_min + t / 2.0;
            let s = (1.0 - w * w).max(0.0).sqrt();
            let local = [s * phi.cos(), s * phi.sin(), w];
            let mut p = [0.0; 3];
            for (k, axis) in axes.iter().enumerate() {
                p = geom::add(&p, &geom::scale(axis, local[k] * SPHERE_RADIUS));
            }
            p
        })
        .collect()
}

/// Sphere of radius 0.5 at the origin, and the hemisphere facing `view`,
/// each with `n_points` points.
pub fn gen_partial_complete(spec: &SyntheticSpec, view: &Point3) -> Result<(PointCloud, PointCloud)> {
    spec.validate()?;
    if !geom::is_finite(view) || (geom::norm(view) - 1.0).abs() > 1e-9 {
        return invalid(format!("view direction must be a unit vector, got {view:?}"));
    }
    let mut rng = spec.rng();
    let axes = frame(view);
    let nd = noise(spec.noise_sigma);
    let jitter = |pts: Vec<Point3>, rng: &mut ChaCha8Rng| -> Vec<Point3> {
        pts.into_iter()
            .map(|p| {
                let r = nd.sample(rng);
                geom::add(&p, &geom::scale(&p, r / SPHERE_RADIUS))
            })
            .collect()
    };
    let complete = sphere_band(spec.n_points, -1.0, &axes, &mut rng);
    let complete = jitter(complete, &mut rng);
    let partial = sphere_band(spec.n_points, 0.0, &axes, &mut rng);
    let partial = jitter(partial, &mut rng);
    Ok((PointCloud::new(partial)?, PointCloud::new(complete)?))
}

const FRAME_DIMS: Point3 = [1.0, 0.8, 0.6];

fn box_corners() -> Vec<Point3> {
    let mut out = Vec::with_capacity(8);
    for i in 0..8 {
        out.push([
            if i & 1 == 0 { 0.0 } else { FRAME_DIMS[0] },
            if i & 2 == 0 { 0.0 } else { FRAME_DIMS[1] },
            if i & 4 == 0 { 0.0 } else { FRAME_DIMS[2] },
        ]);
    }
    out
}

fn box_edges() -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(12);
    for a in 0..8usize {
        for bit in [1usize, 2, 4] {
            if a & bit == 0 {
                out.push((a, a | bit));
            }
        }
    }
    out
}

/// Box wireframe with corner keypoints plus a seeded number of edge
/// midpoints (8 to 16 keypoints in total), scaled into the unit sphere.
///
/// Keypoints are the first entries of the cloud; their indices are returned.
pub fn gen_keypoint_shape(spec: &SyntheticSpec) -> Result<(PointCloud, Vec<usize>)> {
    spec.validate()?;
    if spec.n_points < 200 {
        return invalid(format!("keypoint shape needs at least 200 points, got {}", spec.n_points));
    }
    let mut rng = spec.rng();
    let corners = box_corners();
    let edges = box_edges();
    let extra = rng.random_range(0..=8usize);
    let chosen = rand::seq::index::sample(&mut rng, edges.len(), extra).into_vec();
    let mut points = corners.clone();
    for &e in &chosen {
        let (a, b) = edges[e];
        points.push(geom::scale(&geom::add(&corners[a], &corners[b]), 0.5));
    }
    let keypoints: Vec<usize> = (0..points.len()).collect();
    let lengths: Vec<f64> = edges.iter().map(|&(a, b)| geom::dist(&corners[a], &corners[b])).collect();
    let total: f64 = lengths.iter().sum();
    let rest = spec.n_points - points.len();
    // jittered strata along the concatenated edge length
    for i in 0..rest {
        let mut s = (i as f64 + rng.random::<f64>()) / rest as f64 * total;
        let mut e = 0;
        while e + 1 < edges.len() && s > lengths[e] {
            s -= lengths[e];
            e += 1;
        }
        let (a, b) = edges[e];
        let t = (s / lengths[e]).clamp(0.0, 1.0);
        points.push(geom::add(&corners[a], &geom::scale(&geom::sub(&corners[b], &corners[a]), t)));
    }
    normalize_unit_sphere(&mut points);
    let nd = noise(spec.noise_sigma);
    for p in points.iter_mut() {
        for c in p.iter_mut() {
            *c += nd.sample(&mut rng);
        }
    }
    Ok((PointCloud::new(points)?, keypoints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::chamfer;
    use crate::task_aware::{completion_supervision, default_epsilon, detect_boundary, soft_keypoints};

    fn spec(kind: ShapeKind, n: usize, parts: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec::new(kind, n, parts, 0.0, seed)
    }

    #[test]
    fn split_plane_labels_and_band() {
        let c = gen_split_plane(&spec(ShapeKind::SplitPlane, 2048, 2, 7)).unwrap();
        assert_eq!(c.len(), 2048);
        let labels = c.labels().unwrap();
        for (p, &l) in c.points().iter().zip(labels) {
            assert_eq!(l, i32::from(p[0] >= 0.5));
            assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
            assert_eq!(p[2], 0.0);
        }
        let eps = default_epsilon(&c).unwrap();
        let mask = detect_boundary(&c, eps).unwrap();
        let (flagged, _) = mask.counts();
        assert!(flagged > 0);
        for (p, &f) in c.points().iter().zip(&mask.flags) {
            if f {
                assert!((p[0] - 0.5).abs() <= eps + 1e-12);
            }
        }
    }

    #[test]
    fn split_plane_single_part_and_validation() {
        let c = gen_split_plane(&spec(ShapeKind::SplitPlane, 300, 1, 1)).unwrap();
        assert!(c.labels().unwrap().iter().all(|&l| l == 0));
        let mask = detect_boundary(&c, default_epsilon(&c).unwrap()).unwrap();
        assert_eq!(mask.counts().0, 0);
        assert!(gen_split_plane(&spec(ShapeKind::SplitPlane, 300, 0, 1)).is_err());
        assert!(gen_split_plane(&spec(ShapeKind::SplitPlane, 300, 5, 1)).is_err());
        assert!(gen_split_plane(&spec(ShapeKind::SplitPlane, 4, 4, 1)).is_ok());
        assert!(gen_split_plane(&spec(ShapeKind::SplitPlane, 2, 3, 1)).is_err());
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let s = SyntheticSpec::new(ShapeKind::SplitPlane, 500, 3, 0.01, 9);
        assert_eq!(gen_split_plane(&s).unwrap().points(), gen_split_plane(&s).unwrap().points());
        let s = SyntheticSpec::new(ShapeKind::MultiPart, 500, 4, 0.0, 9);
        assert_eq!(gen_multipart(&s).unwrap().points(), gen_multipart(&s).unwrap().points());
        let s = SyntheticSpec::new(ShapeKind::KeypointShape, 400, 1, 0.0, 3);
        let (a, ka) = gen_keypoint_shape(&s).unwrap();
        let (b, kb) = gen_keypoint_shape(&s).unwrap();
        assert_eq!((a.points(), ka), (b.points(), kb));
        let other = gen_split_plane(&SyntheticSpec::new(ShapeKind::SplitPlane, 500, 3, 0.01, 10)).unwrap();
        let s = SyntheticSpec::new(ShapeKind::SplitPlane, 500, 3, 0.01, 9);
        assert_ne!(gen_split_plane(&s).unwrap().points(), other.points());
    }

    #[test]
    fn boundary_fraction_shrinks_with_density() {
        let fractions: Vec<f64> = [512, 2048, 8192]
            .iter()
            .map(|&n| {
                let c = gen_split_plane(&spec(ShapeKind::SplitPlane, n, 2, 5)).unwrap();
                let (f, _) = detect_boundary(&c, default_epsilon(&c).unwrap()).unwrap().counts();
                f as f64 / n as f64
            })
            .collect();
        assert!(fractions[0] > fractions[1] && fractions[1] > fractions[2], "{fractions:?}");
    }

    #[test]
    fn two_boxes_have_boundary_on_seam() {
        let c = gen_multipart(&spec(ShapeKind::MultiPart, 4000, 2, 2)).unwrap();
        let eps = default_epsilon(&c).unwrap();
        let mask = detect_boundary(&c, eps).unwrap();
        let labels = c.labels().unwrap();
        // the seam is the plane splitting the two labels
        let top0 = (0..c.len()).filter(|&i| labels[i] == 0).map(|i| c.point(i)[2]).fold(f64::MIN, f64::max);
        let bot1 = (0..c.len()).filter(|&i| labels[i] == 1).map(|i| c.point(i)[2]).fold(f64::MAX, f64::min);
        let seam = 0.5 * (top0 + bot1);
        let flagged: Vec<usize> = (0..c.len()).filter(|&i| mask.flags[i]).collect();
        assert!(!flagged.is_empty());
        for i in flagged {
            assert!((c.point(i)[2] - seam).abs() <= eps + 1e-9);
        }
    }

    #[test]
    fn multipart_labels_follow_area() {
        for parts in 2..=7 {
            let n = 6000;
            let c = gen_multipart(&spec(ShapeKind::MultiPart, n, parts, 4)).unwrap();
            let mut area = vec![0.0; parts];
            for (l, p) in stack_patches(parts) {
                area[l as usize] += p.area();
            }
            let total: f64 = area.iter().sum();
            let mut hist = vec![0usize; parts];
            for &l in c.labels().unwrap() {
                hist[l as usize] += 1;
            }
            for k in 0..parts {
                let expect = area[k] / total;
                let got = hist[k] as f64 / n as f64;
                assert!((got - expect).abs() <= 0.05 * expect, "parts {parts} label {k}: {got} vs {expect}");
            }
            assert!(c.points().iter().all(|p| geom::norm(p) <= 1.0 + 1e-12));
        }
        assert!(gen_multipart(&spec(ShapeKind::MultiPart, 100, 1, 0)).is_err());
    }

    #[test]
    fn partial_is_visible_hemisphere() {
        let s = spec(ShapeKind::PartialComplete, 1024, 1, 3);
        let (partial, complete) = gen_partial_complete(&s, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!((partial.len(), complete.len()), (1024, 1024));
        assert!(partial.points().iter().all(|p| p[0] >= -1e-12));
        for p in complete.points() {
            assert!((geom::norm(p) - SPHERE_RADIUS).abs() < 1e-12);
        }
        assert!(chamfer(partial.points(), complete.points()).unwrap() > 0.0);
        assert_eq!(chamfer(complete.points(), complete.points()).unwrap(), 0.0);
        let sup = completion_supervision(&complete, 128).unwrap();
        let back = sup.coordinates.iter().filter(|p| p[0] < 0.0).count();
        assert!(back as f64 >= 0.3 * 128.0);
        assert!(gen_partial_complete(&s, &[2.0, 0.0, 0.0]).is_err());

        let d = [0.0, 0.6, 0.8];
        let (partial, _) = gen_partial_complete(&s, &d).unwrap();
        assert!(partial.points().iter().all(|p| geom::dot(p, &d) >= -1e-12));
    }

    #[test]
    fn keypoint_shape_contract() {
        for seed in 0..20 {
            let s = spec(ShapeKind::KeypointShape, 400, 1, seed);
            let (c, keys) = gen_keypoint_shape(&s).unwrap();
            assert_eq!(c.len(), 400);
            assert!((8..=16).contains(&keys.len()));
            assert!(keys.iter().all(|&k| k < c.len()));
            let max = c.points().iter().map(geom::norm).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
            let mask = soft_keypoints(&c, &keys, 20).unwrap();
            let (flagged, _) = mask.counts();
            assert!(flagged >= keys.len() && flagged <= keys.len() * 20);
        }
        assert!(gen_keypoint_shape(&spec(ShapeKind::KeypointShape, 199, 1, 0)).is_err());
    }
}
