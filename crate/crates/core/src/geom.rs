//! Small fixed-size vector helpers on `[f64; 3]`.

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    dist2(a, b).sqrt()
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn is_finite(p: &Point3) -> bool {
    p.iter().all(|v| v.is_finite())
}

/// Unit vector from `b` towards `a`, or zero when the points coincide.
///
/// This is the gradient of `|a - b|` with respect to `a`, with the zero
/// subgradient chosen at the kink.
#[inline]
pub fn unit_diff(a: &Point3, b: &Point3) -> Point3 {
    let d = sub(a, b);
    let n = norm(&d);
    if n > 0.0 {
        scale(&d, 1.0 / n)
    } else {
        [0.0; 3]
    }
}
