//! Deterministic 2D primitives shared by the simulator, search heuristics,
//! and distance functions: poses, discs, oriented rectangles, the track band,
//! sensor sectors, and ray casting.
//!
//! All distances are signed where overlap is meaningful (negative iff the
//! shapes overlap) so heuristics degrade smoothly through contact.

use serde::{Deserialize, Serialize};

/// Step used to discretize the analytic shoulder curves into polylines.
/// Distance tolerances elsewhere are stated against this discretization.
pub const SHOULDER_POLYLINE_DX: f64 = 0.01;

/// Fraction of the x-range at which the end zone begins when an environment
/// document does not carry an explicit value (matches the default scenario).
pub const END_ZONE_FRACTION: f64 = 0.9;

const RAY_MARCH_STEP: f64 = 0.02;
const RAY_BISECTION_ITERS: u32 = 60;
const SECTOR_CONSERVATIVE_SLACK: f64 = 1e-9;

/// Normalize an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r -= 2.0 * std::f64::consts::PI;
    }
    r
}

/// A planar position plus heading, heading normalized into `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2 {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn direction(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }
}

/// Circular obstacle element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    #[serde(rename = "x")]
    pub cx: f64,
    #[serde(rename = "y")]
    pub cy: f64,
    pub r: f64,
}

impl Disc {
    pub fn new(cx: f64, cy: f64, r: f64) -> Self {
        debug_assert!(r > 0.0, "disc radius must be positive");
        Disc { cx, cy, r }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }
}

/// Rectangle described by its center pose and full extents: `length` along
/// the heading axis, `width` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Pose2,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn new(center: Pose2, length: f64, width: f64) -> Self {
        debug_assert!(length > 0.0 && width > 0.0);
        OrientedRect {
            center,
            length,
            width,
        }
    }

    /// Corners in CCW order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (ux, uy) = self.center.direction();
        let (vx, vy) = (-uy, ux);
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let c = (self.center.x, self.center.y);
        [
            (c.0 + hl * ux + hw * vx, c.1 + hl * uy + hw * vy),
            (c.0 - hl * ux + hw * vx, c.1 - hl * uy + hw * vy),
            (c.0 - hl * ux - hw * vx, c.1 - hl * uy - hw * vy),
            (c.0 + hl * ux - hw * vx, c.1 + hl * uy - hw * vy),
        ]
    }

    fn local_coords(&self, x: f64, y: f64) -> (f64, f64) {
        let (ux, uy) = self.center.direction();
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        (dx * ux + dy * uy, -dx * uy + dy * ux)
    }

    /// Signed distance from a point to the rectangle boundary:
    /// positive outside, negative inside.
    pub fn signed_distance_to_point(&self, x: f64, y: f64) -> f64 {
        let (lx, ly) = self.local_coords(x, y);
        let dx = lx.abs() - self.length / 2.0;
        let dy = ly.abs() - self.width / 2.0;
        if dx > 0.0 || dy > 0.0 {
            let ox = dx.max(0.0);
            let oy = dy.max(0.0);
            (ox * ox + oy * oy).sqrt()
        } else {
            dx.max(dy)
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.signed_distance_to_point(x, y) <= 0.0
    }

    /// Axis-aligned bounding box as (min_x, min_y, max_x, max_y).
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let cs = self.corners();
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in cs {
            lo.0 = lo.0.min(x);
            lo.1 = lo.1.min(y);
            hi.0 = hi.0.max(x);
            hi.1 = hi.1.max(y);
        }
        (lo.0, lo.1, hi.0, hi.1)
    }

    pub fn half_diagonal(&self) -> f64 {
        ((self.length * self.length + self.width * self.width) / 4.0).sqrt()
    }
}

/// Exact signed clearance between a rectangle boundary and a disc boundary.
/// Negative iff the shapes overlap.
pub fn rect_to_disc_distance(rect: &OrientedRect, d: &Disc) -> f64 {
    rect.signed_distance_to_point(d.cx, d.cy) - d.r
}

fn point_to_segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let abx = bx - ax;
    let aby = by - ay;
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * abx + (py - ay) * aby) / len2).clamp(0.0, 1.0)
    };
    let qx = ax + t * abx;
    let qy = ay + t * aby;
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    fn on_segment(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
        c.0 >= a.0.min(b.0) && c.0 <= a.0.max(b.0) && c.1 >= a.1.min(b.1) && c.1 <= a.1.max(b.1)
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Distance between a segment and a rectangle; 0 when they touch or cross.
fn segment_to_rect_distance(a: (f64, f64), b: (f64, f64), rect: &OrientedRect) -> f64 {
    if rect.contains_point(a.0, a.1) || rect.contains_point(b.0, b.1) {
        return 0.0;
    }
    let cs = rect.corners();
    for i in 0..4 {
        if segments_intersect(a, b, cs[i], cs[(i + 1) % 4]) {
            return 0.0;
        }
    }
    let mut best = rect
        .signed_distance_to_point(a.0, a.1)
        .min(rect.signed_distance_to_point(b.0, b.1));
    for (cx, cy) in cs {
        best = best.min(point_to_segment_distance(cx, cy, a.0, a.1, b.0, b.1));
    }
    best
}

/// Track band around the curve `y = amplitude * sin(x)` over `[x_start, x_end]`,
/// of half-width `half_width`. The end zone is the band portion with
/// `x >= end_zone_start`; the shoulders are the areas beyond the band edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackGeometry {
    pub amplitude: f64,
    pub x_start: f64,
    pub x_end: f64,
    pub half_width: f64,
    pub end_zone_start: f64,
}

impl TrackGeometry {
    pub fn new(amplitude: f64, x_start: f64, x_end: f64, half_width: f64) -> Self {
        TrackGeometry {
            amplitude,
            x_start,
            x_end,
            half_width,
            end_zone_start: x_start + END_ZONE_FRACTION * (x_end - x_start),
        }
    }

    pub fn with_end_zone(mut self, end_zone_start: f64) -> Self {
        self.end_zone_start = end_zone_start;
        self
    }

    /// Centerline height. The sinusoid is defined for all x so ray queries
    /// stay total just outside the nominal range.
    pub fn centerline_y(&self, x: f64) -> f64 {
        self.amplitude * x.sin()
    }

    pub fn centerline_slope(&self, x: f64) -> f64 {
        self.amplitude * x.cos()
    }

    /// Track tangent direction at x.
    pub fn heading_at(&self, x: f64) -> f64 {
        self.centerline_slope(x).atan()
    }

    /// Signed lateral clearance of a point from the nearer band edge
    /// (positive inside the band).
    pub fn lateral_clearance(&self, x: f64, y: f64) -> f64 {
        self.half_width - (y - self.centerline_y(x)).abs()
    }

    pub fn in_band(&self, x: f64, y: f64) -> bool {
        self.lateral_clearance(x, y) >= 0.0 && x >= self.x_start && x <= self.x_end
    }

    pub fn in_end_zone(&self, x: f64, y: f64) -> bool {
        x >= self.end_zone_start && x <= self.x_end && self.lateral_clearance(x, y) >= 0.0
    }

    /// True iff the whole rectangle lies inside the end zone. Lateral
    /// containment is implied for non-colliding shapes, so the x-extent of
    /// the corners decides.
    pub fn rect_in_end_zone(&self, rect: &OrientedRect) -> bool {
        rect.corners()
            .iter()
            .all(|&(x, _)| x >= self.end_zone_start && x <= self.x_end)
    }

    /// Bounding strip of the band: x-range times the y-range reachable by
    /// the band plus shoulders padding.
    pub fn bounding_strip(&self) -> (f64, f64, f64, f64) {
        let a = self.amplitude.abs();
        (
            self.x_start,
            -(a + self.half_width),
            self.x_end,
            a + self.half_width,
        )
    }
}

/// Circular sector used as the sensor footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorFOV {
    pub apex: Pose2,
    pub range: f64,
    pub half_angle: f64,
}

impl SectorFOV {
    /// Euclidean distance from a point to the closed sector (0 inside).
    pub fn distance_to_point(&self, x: f64, y: f64) -> f64 {
        let wx = x - self.apex.x;
        let wy = y - self.apex.y;
        let dist = (wx * wx + wy * wy).sqrt();
        if dist == 0.0 {
            return 0.0;
        }
        let ang = normalize_angle(wy.atan2(wx) - self.apex.heading).abs();
        if ang <= self.half_angle {
            return (dist - self.range).max(0.0);
        }
        let mut best = f64::INFINITY;
        for sign in [-1.0, 1.0] {
            let edge = self.apex.heading + sign * self.half_angle;
            let ex = self.apex.x + self.range * edge.cos();
            let ey = self.apex.y + self.range * edge.sin();
            best = best.min(point_to_segment_distance(
                x,
                y,
                self.apex.x,
                self.apex.y,
                ex,
                ey,
            ));
        }
        best
    }
}

/// True iff the disc intersects the closed sector. With `conservative` set
/// the test is inflated slightly: false positives allowed, false negatives
/// never.
pub fn sector_intersects_disc(fov: &SectorFOV, d: &Disc, conservative: bool) -> bool {
    let slack = if conservative {
        SECTOR_CONSERVATIVE_SLACK
    } else {
        0.0
    };
    fov.distance_to_point(d.cx, d.cy) <= d.r + slack
}

/// Distance along a ray to the first disc intersection, if any.
fn ray_disc_distance(ox: f64, oy: f64, dx: f64, dy: f64, d: &Disc) -> Option<f64> {
    let fx = ox - d.cx;
    let fy = oy - d.cy;
    let c = fx * fx + fy * fy - d.r * d.r;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = fx * dx + fy * dy;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    if t >= 0.0 {
        Some(t)
    } else {
        None
    }
}

/// First crossing of the ray with either shoulder boundary, found by
/// marching on the analytic curve and refining with bisection. The march
/// grid is anchored at t = 0 independently of `max_range`, so enlarging the
/// cap never changes an unclamped result.
fn ray_shoulder_distance(
    ox: f64,
    oy: f64,
    dx: f64,
    dy: f64,
    max_range: f64,
    track: &TrackGeometry,
) -> f64 {
    let clearance = |t: f64| track.lateral_clearance(ox + t * dx, oy + t * dy);
    if clearance(0.0) <= 0.0 {
        return 0.0;
    }
    let mut k = 0u32;
    loop {
        let t0 = f64::from(k) * RAY_MARCH_STEP;
        if t0 >= max_range {
            return max_range;
        }
        let t1 = f64::from(k + 1) * RAY_MARCH_STEP;
        if clearance(t1) <= 0.0 {
            let mut lo = t0;
            let mut hi = t1;
            for _ in 0..RAY_BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if clearance(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return hi.min(max_range);
        }
        k += 1;
    }
}

/// Distance from `origin` along bearing `bearing` (relative to the origin
/// heading) to the first obstacle disc or shoulder boundary, clamped to
/// `max_range`.
pub fn cast_ray(
    origin: &Pose2,
    bearing: f64,
    max_range: f64,
    track: &TrackGeometry,
    obstacles: &[Disc],
) -> f64 {
    debug_assert!(max_range > 0.0);
    let dir = origin.heading + bearing;
    let (dx, dy) = (dir.cos(), dir.sin());
    let mut hit = max_range;
    for d in obstacles {
        if let Some(t) = ray_disc_distance(origin.x, origin.y, dx, dy, d) {
            hit = hit.min(t);
        }
    }
    // Shoulders only need to be probed up to the nearest disc hit.
    ray_shoulder_distance(origin.x, origin.y, dx, dy, hit, track)
}

/// The two shoulder boundary curves `y = c(x) +- half_width`, discretized
/// once so that repeated rectangle clearance queries stay cheap.
#[derive(Debug, Clone)]
pub struct ShoulderPolyline {
    track: TrackGeometry,
    x0: f64,
    dx: f64,
    upper: Vec<f64>,
    lower: Vec<f64>,
}

impl ShoulderPolyline {
    pub fn new(track: &TrackGeometry) -> Self {
        let span = track.x_end - track.x_start;
        let segments = (span / SHOULDER_POLYLINE_DX).ceil().max(1.0) as usize;
        let dx = span / segments as f64;
        let mut upper = Vec::with_capacity(segments + 1);
        let mut lower = Vec::with_capacity(segments + 1);
        for i in 0..=segments {
            let x = track.x_start + i as f64 * dx;
            let c = track.centerline_y(x);
            upper.push(c + track.half_width);
            lower.push(c - track.half_width);
        }
        ShoulderPolyline {
            track: *track,
            x0: track.x_start,
            dx,
            upper,
            lower,
        }
    }

    pub fn track(&self) -> &TrackGeometry {
        &self.track
    }

    fn index_range(&self, min_x: f64, max_x: f64) -> (usize, usize) {
        let n = self.upper.len();
        let lo = ((min_x - self.x0) / self.dx).floor().max(0.0) as usize;
        let hi = (((max_x - self.x0) / self.dx).ceil().max(0.0) as usize).min(n - 1);
        (lo.min(n - 1), hi)
    }

    fn boundary_distance(&self, rect: &OrientedRect, ys: &[f64], shoulder_above: bool) -> f64 {
        let (bx0, _by0, bx1, _by1) = rect.bbox();
        // Window wide enough to contain the nearest boundary point: a point
        // in the strip is never farther than half_width + 2*amplitude from a
        // boundary curve.
        let margin = self.track.half_width + 2.0 * self.track.amplitude.abs() + 1.0;
        let (lo, hi) = self.index_range(bx0 - margin, bx1 + margin);

        let cx = rect.center.x;
        let cy = rect.center.y;
        let hd = rect.half_diagonal();
        let corners = rect.corners();

        let mut crossing = false;
        let mut best = f64::INFINITY;
        let mut prev_pt_dist =
            ((self.x0 + lo as f64 * self.dx - cx).powi(2) + (ys[lo] - cy).powi(2)).sqrt();
        for i in lo..hi {
            let xa = self.x0 + i as f64 * self.dx;
            let xb = xa + self.dx;
            let da = prev_pt_dist;
            let db = ((xb - cx).powi(2) + (ys[i + 1] - cy).powi(2)).sqrt();
            prev_pt_dist = db;
            // Lower bound on the segment-to-rect distance; skip segments
            // that cannot improve on the current best.
            if da.min(db) - hd - self.dx > best {
                continue;
            }
            let d = segment_to_rect_distance((xa, ys[i]), (xb, ys[i + 1]), rect);
            if d == 0.0 {
                crossing = true;
            }
            best = best.min(d);
        }

        // Penetration: any corner beyond the analytic boundary curve.
        let mut depth: f64 = 0.0;
        let mut beyond = false;
        for &(x, y) in &corners {
            let edge = self.track.centerline_y(x)
                + if shoulder_above {
                    self.track.half_width
                } else {
                    -self.track.half_width
                };
            let over = if shoulder_above { y - edge } else { edge - y };
            if over > 0.0 {
                beyond = true;
                depth = depth.max(self.corner_penetration(x, y, ys, lo, hi));
            }
        }
        if beyond {
            return -depth;
        }
        if crossing {
            // Boundary dips into the rectangle without a corner beyond it:
            // measure how deep the polyline vertices sit inside.
            let mut inside: f64 = 0.0;
            for (i, &y) in ys.iter().enumerate().take(hi + 1).skip(lo) {
                let x = self.x0 + i as f64 * self.dx;
                let sd = rect.signed_distance_to_point(x, y);
                if sd < 0.0 {
                    inside = inside.max(-sd);
                }
            }
            return -inside;
        }
        best
    }

    fn corner_penetration(&self, x: f64, y: f64, ys: &[f64], lo: usize, hi: usize) -> f64 {
        let mut best = f64::INFINITY;
        for i in lo..hi {
            let xa = self.x0 + i as f64 * self.dx;
            best = best.min(point_to_segment_distance(
                x,
                y,
                xa,
                ys[i],
                xa + self.dx,
                ys[i + 1],
            ));
        }
        best
    }

    /// Min signed clearance from the rectangle to either shoulder boundary;
    /// negative iff the rectangle crosses into a shoulder.
    pub fn rect_clearance(&self, rect: &OrientedRect) -> f64 {
        let upper = self.boundary_distance(rect, &self.upper, true);
        let lower = self.boundary_distance(rect, &self.lower, false);
        upper.min(lower)
    }
}

/// Min clearance from the rectangle to either shoulder boundary of `track`,
/// computed against the polyline discretization. Negative iff the rectangle
/// crosses a shoulder. Builds the polyline on the fly; hot paths should hold
/// a [`ShoulderPolyline`] instead.
pub fn rect_to_shoulders_distance(rect: &OrientedRect, track: &TrackGeometry) -> f64 {
    ShoulderPolyline::new(track).rect_clearance(rect)
}
