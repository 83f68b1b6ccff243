//! Geographic primitives: WGS84 points, haversine distances and a local
//! planar frame for polygon work at city scale.

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Builds a point, rejecting non-finite or out-of-range coordinates.
    pub fn new(lat: f64, lon: f64) -> Result<Self, ValidationError> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(ValidationError::Coordinate(format!("latitude {} out of range", self.lat)));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(ValidationError::Coordinate(format!("longitude {} out of range", self.lon)));
        }
        Ok(())
    }

    /// Great-circle distance in meters.
    pub fn haversine(&self, other: &GeoPoint) -> f64 {
        let (lat1, lat2) = (self.lat.to_radians(), other.lat.to_radians());
        let dlat = lat2 - lat1;
        let dlon = (other.lon - self.lon).to_radians();
        let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }

    /// Moves the point by `east`/`north` meters on the local tangent plane.
    pub fn offset(&self, east: f64, north: f64) -> GeoPoint {
        LocalFrame::new(*self).unproject(Vec2::new(east, north))
    }
}

/// Length of a polyline in meters.
pub fn polyline_length(points: &[GeoPoint]) -> f64 {
    points.windows(2).map(|w| w[0].haversine(&w[1])).sum()
}

/// Planar vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }

    /// Unit normal pointing to the left of the direction.
    pub fn left_normal(self) -> Vec2 {
        let n = self.norm();
        if n == 0.0 {
            Vec2::default()
        } else {
            Vec2::new(-self.y / n, self.x / n)
        }
    }
}

/// Equirectangular projection around an origin. Accurate to well under a
/// meter over the extent of a city.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    origin: GeoPoint,
    cos_lat: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        LocalFrame { origin, cos_lat: origin.lat.to_radians().cos() }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn project(&self, p: GeoPoint) -> Vec2 {
        Vec2::new(
            (p.lon - self.origin.lon).to_radians() * EARTH_RADIUS_M * self.cos_lat,
            (p.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M,
        )
    }

    pub fn unproject(&self, v: Vec2) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat + (v.y / EARTH_RADIUS_M).to_degrees(),
            lon: self.origin.lon + (v.x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees(),
        }
    }
}

/// Closest point on segment `a`-`b` to `p`, with its parameter in [0, 1].
pub fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    (a.add(ab.scale(t)), t)
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Vec2,
    pub distance: f64,
    /// Arc length from the polyline start to the projected point.
    pub arc_length: f64,
}

/// Least-squares (perpendicular) projection of `p` onto a polyline.
pub fn project_onto_polyline(p: Vec2, line: &[Vec2]) -> Option<Projection> {
    match line {
        [] => None,
        [only] => Some(Projection { point: *only, distance: p.dist(*only), arc_length: 0.0 }),
        _ => {
            let mut best: Option<Projection> = None;
            let mut walked = 0.0;
            for w in line.windows(2) {
                let (q, t) = closest_on_segment(p, w[0], w[1]);
                let seg = w[0].dist(w[1]);
                let d = p.dist(q);
                if best.is_none_or(|b| d < b.distance) {
                    best = Some(Projection { point: q, distance: d, arc_length: walked + t * seg });
                }
                walked += seg;
            }
            best
        }
    }
}

/// Even-odd ray casting. Points exactly on the boundary count as inside.
pub fn ring_contains(ring: &[Vec2], p: Vec2) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if closest_on_segment(p, a, b).0.dist(p) < 1e-9 {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to a closed ring; zero when `p` is inside.
pub fn ring_distance(ring: &[Vec2], p: Vec2) -> f64 {
    if ring_contains(ring, p) {
        return 0.0;
    }
    boundary_distance(ring, p)
}

/// Distance from `p` to the ring's boundary, regardless of containment.
pub fn boundary_distance(ring: &[Vec2], p: Vec2) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            closest_on_segment(p, a, b).0.dist(p)
        })
        .fold(f64::INFINITY, f64::min)
}

fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = b.sub(a).cross(c.sub(a));
    let d2 = b.sub(a).cross(d.sub(a));
    let d3 = d.sub(c).cross(a.sub(c));
    let d4 = d.sub(c).cross(b.sub(c));
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

/// True when no two non-adjacent ring edges properly intersect and the ring
/// has at least three distinct vertices.
pub fn ring_is_simple(ring: &[Vec2]) -> bool {
    let n = ring.len();
    let mut distinct: Vec<Vec2> = Vec::with_capacity(n);
    for v in ring {
        if !distinct.iter().any(|d| d.dist(*v) < 1e-9) {
            distinct.push(*v);
        }
    }
    if distinct.len() < 3 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Buffer polygon around a polyline: left offset forward, right offset back,
/// with mitered joins clamped at twice the half width.
pub fn buffer_polyline(line: &[Vec2], half_width: f64) -> Vec<Vec2> {
    if line.len() < 2 {
        return line.first().map(|c| regular_polygon(*c, half_width, 16)).unwrap_or_default();
    }
    let offset_side = |sign: f64| -> Vec<Vec2> {
        let n = line.len();
        (0..n)
            .map(|i| {
                let prev = if i > 0 { Some(line[i].sub(line[i - 1]).left_normal()) } else { None };
                let next = if i + 1 < n { Some(line[i + 1].sub(line[i]).left_normal()) } else { None };
                let normal = match (prev, next) {
                    (Some(a), Some(b)) => {
                        let m = a.add(b);
                        let mn = m.norm();
                        if mn < 1e-12 {
                            a
                        } else {
                            let unit = m.scale(1.0 / mn);
                            let cos_half = unit.dot(a).max(0.5);
                            unit.scale(1.0 / cos_half)
                        }
                    }
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => Vec2::default(),
                };
                line[i].add(normal.scale(sign * half_width))
            })
            .collect()
    };
    let mut ring = offset_side(1.0);
    let mut right = offset_side(-1.0);
    right.reverse();
    ring.extend(right);
    ring
}

/// Regular polygon approximating a disc.
pub fn regular_polygon(center: Vec2, radius: f64, sides: usize) -> Vec<Vec2> {
    (0..sides)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / sides as f64;
            Vec2::new(center.x + radius * a.cos(), center.y + radius * a.sin())
        })
        .collect()
}
