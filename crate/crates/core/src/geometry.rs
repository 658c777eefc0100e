//! Planar geometry primitives: rectangles, polygons, wall segments.

use serde::{Deserialize, Serialize};

pub type Vec2 = nalgebra::Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x_min >= self.x_min && other.x_max <= self.x_max && other.y_min >= self.y_min && other.y_max <= self.y_max
    }

    pub fn corners(&self) -> Vec<Vec2> {
        vec![
            Vec2::new(self.x_min, self.y_min),
            Vec2::new(self.x_max, self.y_min),
            Vec2::new(self.x_max, self.y_max),
            Vec2::new(self.x_min, self.y_max),
        ]
    }

    pub fn expanded(&self, margin: f64) -> Rect {
        Rect::new(
            self.x_min - margin,
            self.y_min - margin,
            self.x_max + margin,
            self.y_max + margin,
        )
    }

    /// Intersection with `outer`.
    pub fn clamp_into(&self, outer: &Rect) -> Rect {
        Rect::new(
            self.x_min.max(outer.x_min),
            self.y_min.max(outer.y_min),
            self.x_max.min(outer.x_max),
            self.y_max.min(outer.y_max),
        )
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x_min <= other.x_max && other.x_min <= self.x_max && self.y_min <= other.y_max && other.y_min <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn nearest_point(&self, p: Vec2) -> Vec2 {
        let d = self.b - self.a;
        let len2 = d.norm_squared();
        if len2 == 0.0 {
            return self.a;
        }
        let t = ((p - self.a).dot(&d) / len2).clamp(0.0, 1.0);
        self.a + d * t
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        (p - self.nearest_point(p)).norm()
    }
}

/// Simple polygon given by its vertices in order (either orientation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        Self { vertices }
    }

    pub fn from_rect(r: &Rect) -> Self {
        Self::new(r.corners())
    }

    pub fn edges(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| Segment::new(self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let a = self.signed_area();
        if a == 0.0 {
            return self.vertices.iter().sum::<Vec2>() / n as f64;
        }
        let mut c = Vec2::zeros();
        for i in 0..n {
            let (p, q) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let cross = p.x * q.y - q.x * p.y;
            c += (p + q) * cross;
        }
        c / (6.0 * a)
    }

    /// Even-odd rule; points on the boundary may land on either side.
    pub fn contains(&self, p: Vec2) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (vi, vj) = (self.vertices[i], self.vertices[j]);
            if (vi.y > p.y) != (vj.y > p.y) {
                let x_cross = vj.x + (p.y - vj.y) * (vi.x - vj.x) / (vi.y - vj.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn nearest_boundary_point(&self, p: Vec2) -> Vec2 {
        let mut best = self.vertices[0];
        let mut best_d2 = f64::INFINITY;
        for e in self.edges() {
            let q = e.nearest_point(p);
            let d2 = (p - q).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = q;
            }
        }
        best
    }

    pub fn bounding_box(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            r.x_min = r.x_min.min(v.x);
            r.y_min = r.y_min.min(v.y);
            r.x_max = r.x_max.max(v.x);
            r.y_max = r.y_max.max(v.y);
        }
        r
    }
}

impl From<Vec<[f64; 2]>> for Polygon {
    fn from(v: Vec<[f64; 2]>) -> Self {
        Polygon::new(v.into_iter().map(|[x, y]| Vec2::new(x, y)).collect())
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices.iter().map(|v| [v.x, v.y]).collect()
    }
}

/// Anything a pedestrian keeps clear of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ObstacleSpec", into = "ObstacleSpec")]
pub enum Obstacle {
    Polygon(Polygon),
    Wall(Segment),
}

/// File representation: `{"polygon": [[x, y], ...]}` or `{"wall": [[x, y], [x, y]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ObstacleSpec {
    Polygon(Polygon),
    Wall([[f64; 2]; 2]),
}

impl From<ObstacleSpec> for Obstacle {
    fn from(s: ObstacleSpec) -> Self {
        match s {
            ObstacleSpec::Polygon(p) => Obstacle::Polygon(p),
            ObstacleSpec::Wall([a, b]) => Obstacle::Wall(Segment::new(Vec2::new(a[0], a[1]), Vec2::new(b[0], b[1]))),
        }
    }
}

impl From<Obstacle> for ObstacleSpec {
    fn from(o: Obstacle) -> Self {
        match o {
            Obstacle::Polygon(p) => ObstacleSpec::Polygon(p),
            Obstacle::Wall(s) => ObstacleSpec::Wall([[s.a.x, s.a.y], [s.b.x, s.b.y]]),
        }
    }
}

impl Obstacle {
    /// Nearest point of the obstacle's boundary to `p`.
    pub fn nearest_point(&self, p: Vec2) -> Vec2 {
        match self {
            Obstacle::Polygon(poly) => poly.nearest_boundary_point(p),
            Obstacle::Wall(s) => s.nearest_point(p),
        }
    }

    /// Distance to the obstacle, zero inside a polygon.
    pub fn distance(&self, p: Vec2) -> f64 {
        match self {
            Obstacle::Polygon(poly) if poly.contains(p) => 0.0,
            _ => (p - self.nearest_point(p)).norm(),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            Obstacle::Polygon(poly) => poly.contains(p),
            Obstacle::Wall(_) => false,
        }
    }

    pub fn bounding_box(&self) -> Rect {
        match self {
            Obstacle::Polygon(poly) => poly.bounding_box(),
            Obstacle::Wall(s) => Rect::new(s.a.x.min(s.b.x), s.a.y.min(s.b.y), s.a.x.max(s.b.x), s.a.y.max(s.b.y)),
        }
    }
}

/// Clip a convex polygon (counter-clockwise) by the half-plane
/// `{ q : (q - point) . normal <= 0 }`.
pub fn clip_half_plane(poly: &[Vec2], point: Vec2, normal: Vec2) -> Vec<Vec2> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let cur = poly[i];
        let next = poly[(i + 1) % n];
        let dc = (cur - point).dot(&normal);
        let dn = (next - point).dot(&normal);
        if dc <= 0.0 {
            out.push(cur);
        }
        if (dc < 0.0 && dn > 0.0) || (dc > 0.0 && dn < 0.0) {
            let t = dc / (dc - dn);
            out.push(cur + (next - cur) * t);
        }
    }
    out
}

/// Area of the intersection of a convex polygon with the disc of radius
/// `radius` centered at `center`.
pub fn convex_polygon_disc_area(poly: &[Vec2], center: Vec2, radius: f64) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        total += triangle_disc_area(poly[i] - center, poly[(i + 1) % n] - center, radius);
    }
    total.abs()
}

/// Signed area of the intersection of the triangle (0, a, b) with the disc
/// of radius `r` about the origin.
fn triangle_disc_area(a: Vec2, b: Vec2, r: f64) -> f64 {
    let cross = |u: Vec2, v: Vec2| u.x * v.y - u.y * v.x;
    let sector = |u: Vec2, v: Vec2| 0.5 * r * r * cross(u, v).atan2(u.dot(&v));
    let r2 = r * r;
    let (da, db) = (a.norm_squared(), b.norm_squared());
    if da <= r2 && db <= r2 {
        return 0.5 * cross(a, b);
    }
    // Points where the line a + t (b - a) meets the circle.
    let d = b - a;
    let qa = d.norm_squared();
    if qa == 0.0 {
        return 0.0;
    }
    let qb = a.dot(&d);
    let qc = da - r2;
    let disc = qb * qb - qa * qc;
    if disc <= 0.0 {
        return sector(a, b);
    }
    let sq = disc.sqrt();
    let t1 = (-qb - sq) / qa;
    let t2 = (-qb + sq) / qa;
    let p1 = a + d * t1;
    let p2 = a + d * t2;
    if da <= r2 {
        // a inside, b outside: leaves at t2
        0.5 * cross(a, p2) + sector(p2, b)
    } else if db <= r2 {
        // a outside, b inside: enters at t1
        sector(a, p1) + 0.5 * cross(p1, b)
    } else if t1 >= 0.0 && t2 <= 1.0 && t1 < t2 {
        sector(a, p1) + 0.5 * cross(p1, p2) + sector(p2, b)
    } else {
        sector(a, b)
    }
}
