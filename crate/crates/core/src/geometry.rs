//! Planar geometry for study regions and sampling plots.
//!
//! Regions are polygons with optional holes. Containment is closed: points on
//! any ring count as inside the region, so plot corners may sit exactly on the
//! boundary. Grids are square lattices anchored at the lower-left corner of the
//! region's bounding box, with points at cell centres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A location in region units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point2,
    pub max: Point2,
}

impl BBox {
    fn of(points: &[Point2]) -> BBox {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        BBox { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    /// Grows the box by `pad` on every side.
    pub fn inflate(&self, pad: f64) -> BBox {
        BBox {
            min: Point2::new(self.min.x - pad, self.min.y - pad),
            max: Point2::new(self.max.x + pad, self.max.y + pad),
        }
    }

    pub fn to_polygon(&self) -> Result<Polygon> {
        Polygon::new(
            vec![
                self.min,
                Point2::new(self.max.x, self.min.y),
                self.max,
                Point2::new(self.min.x, self.max.y),
            ],
            Vec::new(),
        )
    }
}

/// Polygon with holes. Rings are stored without a repeated closing vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolygonRepr", into = "PolygonRepr")]
pub struct Polygon {
    outer: Vec<Point2>,
    holes: Vec<Vec<Point2>>,
}

#[derive(Serialize, Deserialize)]
struct PolygonRepr {
    outer: Vec<Point2>,
    #[serde(default)]
    holes: Vec<Vec<Point2>>,
}

impl TryFrom<PolygonRepr> for Polygon {
    type Error = Error;

    fn try_from(r: PolygonRepr) -> Result<Self> {
        Polygon::new(r.outer, r.holes)
    }
}

impl From<Polygon> for PolygonRepr {
    fn from(p: Polygon) -> Self {
        PolygonRepr {
            outer: p.outer,
            holes: p.holes,
        }
    }
}

impl Polygon {
    /// Validates and builds a polygon. A trailing vertex equal to the first is dropped.
    pub fn new(outer: Vec<Point2>, holes: Vec<Vec<Point2>>) -> Result<Self> {
        let outer = normalize_ring(outer, "outer ring")?;
        let mut clean_holes = Vec::with_capacity(holes.len());
        for (i, h) in holes.into_iter().enumerate() {
            let h = normalize_ring(h, "hole")?;
            if let Some(p) = h.iter().find(|p| !point_in_ring(&outer, p)) {
                return Err(Error::InvalidGeometry(format!(
                    "hole {i} vertex ({}, {}) lies outside the outer ring",
                    p.x, p.y
                )));
            }
            clean_holes.push(h);
        }
        Ok(Polygon {
            outer,
            holes: clean_holes,
        })
    }

    pub fn outer(&self) -> &[Point2] {
        &self.outer
    }

    pub fn holes(&self) -> &[Vec<Point2>] {
        &self.holes
    }

    pub fn bbox(&self) -> BBox {
        BBox::of(&self.outer)
    }

    fn rings(&self) -> impl Iterator<Item = &[Point2]> {
        std::iter::once(self.outer.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }
}

fn normalize_ring(mut ring: Vec<Point2>, what: &str) -> Result<Vec<Point2>> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(Error::InvalidGeometry(format!(
            "{what} has {} vertices, need at least 3",
            ring.len()
        )));
    }
    if ring.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidGeometry(format!("{what} has a non-finite vertex")));
    }
    let area = signed_ring_area(&ring).abs();
    let scale = BBox::of(&ring);
    let extent = scale.width().max(scale.height());
    if !(area > 1e-12 * extent * extent) {
        return Err(Error::InvalidGeometry(format!("{what} is degenerate (zero area)")));
    }
    if ring_self_intersects(&ring) {
        return Err(Error::InvalidGeometry(format!("{what} is self-intersecting")));
    }
    Ok(ring)
}

fn signed_ring_area(ring: &[Point2]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

fn cross(o: &Point2, a: &Point2, b: &Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_intersect(p1: &Point2, p2: &Point2, q1: &Point2, q2: &Point2) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn on_segment(a: &Point2, b: &Point2, p: &Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn ring_self_intersects(ring: &[Point2]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(&a1, &a2, &b1, &b2) {
                return true;
            }
        }
    }
    false
}

/// Distance from `p` to segment `ab`.
fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(&Point2::new(a.x + t * dx, a.y + t * dy))
}

fn on_ring_boundary(ring: &[Point2], p: &Point2, tol: f64) -> bool {
    let n = ring.len();
    (0..n).any(|i| point_segment_distance(p, &ring[i], &ring[(i + 1) % n]) <= tol)
}

/// Even-odd crossing test, boundary-inclusive.
fn point_in_ring(ring: &[Point2], p: &Point2) -> bool {
    let bb = BBox::of(ring);
    let tol = 1e-12 * bb.width().max(bb.height()).max(1.0);
    if p.x < bb.min.x - tol || p.x > bb.max.x + tol || p.y < bb.min.y - tol || p.y > bb.max.y + tol
    {
        return false;
    }
    if on_ring_boundary(ring, p, tol) {
        return true;
    }
    crossing_parity(ring, p)
}

fn crossing_parity(ring: &[Point2], p: &Point2) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Shoelace area of the outer ring minus the hole areas.
pub fn polygon_area(poly: &Polygon) -> Result<f64> {
    let outer = signed_ring_area(&poly.outer).abs();
    let holes: f64 = poly.holes.iter().map(|h| signed_ring_area(h).abs()).sum();
    let area = outer - holes;
    if area > 0.0 {
        Ok(area)
    } else {
        Err(Error::InvalidGeometry(format!(
            "holes cover the outer ring (area {area})"
        )))
    }
}

/// The study area `A`: a validated polygon with cached area and extent.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRegion {
    boundary: Polygon,
    area: f64,
    bbox: BBox,
    tol: f64,
}

impl StudyRegion {
    pub fn new(boundary: Polygon) -> Result<Self> {
        let area = polygon_area(&boundary)?;
        let bbox = boundary.bbox();
        let tol = 1e-12 * bbox.width().max(bbox.height()).max(1.0);
        Ok(StudyRegion {
            boundary,
            area,
            bbox,
            tol,
        })
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let bb = BBox {
            min: Point2::new(x0, y0),
            max: Point2::new(x1, y1),
        };
        StudyRegion::new(bb.to_polygon()?)
    }

    pub fn boundary(&self) -> &Polygon {
        &self.boundary
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    /// Largest distance between two outer-ring vertices.
    pub fn diameter(&self) -> f64 {
        let v = &self.boundary.outer;
        let mut best = 0.0f64;
        for i in 0..v.len() {
            for j in (i + 1)..v.len() {
                best = best.max(v[i].distance_sq(&v[j]));
            }
        }
        best.sqrt()
    }

    /// Closed containment: inside the outer ring and not strictly inside any hole.
    pub fn contains(&self, p: &Point2) -> bool {
        if !point_in_ring(&self.boundary.outer, p) {
            return false;
        }
        for hole in &self.boundary.holes {
            if crossing_parity(hole, p) && !on_ring_boundary(hole, p, self.tol) {
                return false;
            }
        }
        true
    }

    /// True when the closed rectangle lies entirely within the region.
    pub fn contains_plot(&self, plot: &RectPlot) -> bool {
        if !plot.corners().iter().all(|c| self.contains(c)) {
            return false;
        }
        // A ring edge entering the open rectangle means part of it is outside.
        self.boundary.rings().all(|ring| {
            let n = ring.len();
            (0..n).all(|i| !segment_enters_open_rect(&ring[i], &ring[(i + 1) % n], plot))
        })
    }
}

/// Liang-Barsky clip of `ab` to the closed rectangle, then test whether the clipped
/// chord's midpoint is strictly interior.
fn segment_enters_open_rect(a: &Point2, b: &Point2, plot: &RectPlot) -> bool {
    let (lo, hi) = plot.bounds();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-dx, a.x - lo.x),
        (dx, hi.x - a.x),
        (-dy, a.y - lo.y),
        (dy, hi.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return false;
    }
    let tm = 0.5 * (t0 + t1);
    let m = Point2::new(a.x + tm * dx, a.y + tm * dy);
    let eps = 1e-12 * plot.side_x.max(plot.side_y);
    m.x > lo.x + eps && m.x < hi.x - eps && m.y > lo.y + eps && m.y < hi.y - eps
}

/// Axis-aligned rectangular sampling plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectPlot {
    pub centroid: Point2,
    pub side_x: f64,
    pub side_y: f64,
}

impl RectPlot {
    pub fn new(centroid: Point2, side_x: f64, side_y: f64) -> Result<Self> {
        if !(side_x > 0.0 && side_y > 0.0) || !side_x.is_finite() || !side_y.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "plot sides must be positive, got {side_x} x {side_y}"
            )));
        }
        if !centroid.is_finite() {
            return Err(Error::InvalidGeometry("plot centroid is not finite".into()));
        }
        Ok(RectPlot {
            centroid,
            side_x,
            side_y,
        })
    }

    pub fn square(centroid: Point2, side: f64) -> Result<Self> {
        RectPlot::new(centroid, side, side)
    }

    pub fn area(&self) -> f64 {
        self.side_x * self.side_y
    }

    pub fn bounds(&self) -> (Point2, Point2) {
        let hx = 0.5 * self.side_x;
        let hy = 0.5 * self.side_y;
        (
            Point2::new(self.centroid.x - hx, self.centroid.y - hy),
            Point2::new(self.centroid.x + hx, self.centroid.y + hy),
        )
    }

    pub fn corners(&self) -> [Point2; 4] {
        let (lo, hi) = self.bounds();
        [lo, Point2::new(hi.x, lo.y), hi, Point2::new(lo.x, hi.y)]
    }

    /// Closed footprint test.
    pub fn contains(&self, p: &Point2) -> bool {
        let (lo, hi) = self.bounds();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }
}

/// Uniform bucket index over plot footprints for fast point lookup.
#[derive(Debug, Clone)]
pub struct PlotIndex {
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
    plots: Vec<RectPlot>,
}

impl PlotIndex {
    pub fn new(plots: &[RectPlot]) -> Self {
        if plots.is_empty() {
            return PlotIndex {
                origin: Point2::new(0.0, 0.0),
                cell: 1.0,
                nx: 0,
                ny: 0,
                buckets: Vec::new(),
                plots: Vec::new(),
            };
        }
        let corners: Vec<Point2> = plots.iter().flat_map(|p| p.corners()).collect();
        let bb = BBox::of(&corners);
        let max_side = plots
            .iter()
            .map(|p| p.side_x.max(p.side_y))
            .fold(0.0, f64::max);
        let span = bb.width().max(bb.height()).max(max_side);
        let target = (plots.len() as f64).sqrt().ceil().max(1.0);
        let cell = (span / target).max(max_side);
        let nx = ((bb.width() / cell).floor() as usize) + 1;
        let ny = ((bb.height() / cell).floor() as usize) + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, p) in plots.iter().enumerate() {
            let (lo, hi) = p.bounds();
            let (ix0, iy0) = Self::cell_of(bb.min, cell, nx, ny, &lo);
            let (ix1, iy1) = Self::cell_of(bb.min, cell, nx, ny, &hi);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    buckets[iy * nx + ix].push(i);
                }
            }
        }
        PlotIndex {
            origin: bb.min,
            cell,
            nx,
            ny,
            buckets,
            plots: plots.to_vec(),
        }
    }

    fn cell_of(origin: Point2, cell: f64, nx: usize, ny: usize, p: &Point2) -> (usize, usize) {
        let ix = ((p.x - origin.x) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let iy = ((p.y - origin.y) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize;
        (ix, iy)
    }

    /// Index of the first plot (in input order) whose closed footprint holds `p`.
    pub fn locate(&self, p: &Point2) -> Option<usize> {
        if self.plots.is_empty() {
            return None;
        }
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        // points just past the last cell edge may still touch a plot boundary
        if fx < -1e-9 || fy < -1e-9 || fx > self.nx as f64 + 1e-9 || fy > self.ny as f64 + 1e-9 {
            return None;
        }
        let (ix, iy) = Self::cell_of(self.origin, self.cell, self.nx, self.ny, p);
        self.buckets[iy * self.nx + ix]
            .iter()
            .copied()
            .filter(|&i| self.plots[i].contains(p))
            .min()
    }
}

/// Convex hull by Andrew's monotone chain; counterclockwise, collinear vertices dropped.
pub fn convex_hull(points: &[Point2]) -> Result<Polygon> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateHull(format!(
            "{} distinct points, need at least 3",
            pts.len()
        )));
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(Error::DegenerateHull("all points are collinear".into()));
    }
    Polygon::new(hull, Vec::new())
        .map_err(|e| Error::DegenerateHull(format!("hull rejected: {e}")))
}

/// Square lattice clipped to the region, spacing `sqrt(|A| / target_count)`.
pub fn systematic_grid(region: &StudyRegion, target_count: usize) -> Result<Vec<Point2>> {
    if target_count == 0 {
        return Err(Error::InvalidArgument("target_count must be >= 1".into()));
    }
    if !(region.area() > 0.0) {
        return Err(Error::InvalidGeometry("region has zero area".into()));
    }
    let spacing = (region.area() / target_count as f64).sqrt();
    Ok(lattice(region.bbox(), spacing)
        .filter(|p| region.contains(p))
        .collect())
}

/// Cell-centre lattice over a bounding box, row-major from the lower-left corner.
fn lattice(bb: BBox, spacing: f64) -> impl Iterator<Item = Point2> {
    let nx = (bb.width() / spacing).ceil().max(1.0) as usize;
    let ny = (bb.height() / spacing).ceil().max(1.0) as usize;
    (0..ny).flat_map(move |j| {
        (0..nx).map(move |i| {
            Point2::new(
                bb.min.x + (i as f64 + 0.5) * spacing,
                bb.min.y + (j as f64 + 0.5) * spacing,
            )
        })
    })
}

/// Lattice rotation for prediction grids: `atan(1/φ²)`, an irrational slope.
/// An axis-aligned lattice beats against regular plot layouts and thins the
/// unsampled-area nodes unevenly across the region.
pub const PREDICTION_GRID_ANGLE: f64 = 0.364_863_828_113_483_17;

/// Square lattice of the given spacing rotated by `angle` about the bounding
/// box's lower-left corner, restricted to the box. Row-major in lattice
/// coordinates.
fn rotated_lattice(bb: BBox, spacing: f64, angle: f64) -> Vec<Point2> {
    let (sin, cos) = angle.sin_cos();
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(bb.width(), 0.0),
        Point2::new(0.0, bb.height()),
        Point2::new(bb.width(), bb.height()),
    ];
    // lattice coordinates of the box corners bound the index range
    let (mut ulo, mut uhi, mut vlo, mut vhi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for c in &corners {
        let u = (c.x * cos + c.y * sin) / spacing;
        let v = (-c.x * sin + c.y * cos) / spacing;
        ulo = ulo.min(u);
        uhi = uhi.max(u);
        vlo = vlo.min(v);
        vhi = vhi.max(v);
    }
    let (i0, i1) = ((ulo - 0.5).floor() as i64, (uhi - 0.5).ceil() as i64);
    let (j0, j1) = ((vlo - 0.5).floor() as i64, (vhi - 0.5).ceil() as i64);
    let mut out = Vec::new();
    for j in j0..=j1 {
        for i in i0..=i1 {
            let u = (i as f64 + 0.5) * spacing;
            let v = (j as f64 + 0.5) * spacing;
            let p = Point2::new(bb.min.x + u * cos - v * sin, bb.min.y + u * sin + v * cos);
            if p.x >= bb.min.x && p.x <= bb.max.x && p.y >= bb.min.y && p.y <= bb.max.y {
                out.push(p);
            }
        }
    }
    out
}

/// Riemann-sum nodes over the unsampled part of the region.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub points: Vec<Point2>,
    pub cell_area: f64,
    pub unsampled_area: f64,
}

impl PredictionGrid {
    /// The grid for a full census: no nodes, no unsampled area.
    pub fn empty() -> Self {
        PredictionGrid {
            points: Vec::new(),
            cell_area: 0.0,
            unsampled_area: 0.0,
        }
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub const DEFAULT_GRID_POINTS: usize = 10_000;

/// Rotated-lattice nodes in `A` minus every plot footprint.
pub fn prediction_grid(
    region: &StudyRegion,
    plots: &[RectPlot],
    n_p_target: usize,
) -> Result<PredictionGrid> {
    prediction_grid_labeled(region, plots, None, n_p_target)
}

/// As [`prediction_grid`], with `plot_ids` naming plots in error messages.
pub fn prediction_grid_labeled(
    region: &StudyRegion,
    plots: &[RectPlot],
    plot_ids: Option<&[String]>,
    n_p_target: usize,
) -> Result<PredictionGrid> {
    if n_p_target < 100 {
        return Err(Error::InvalidArgument(format!(
            "prediction grid needs at least 100 target points, got {n_p_target}"
        )));
    }
    for (i, plot) in plots.iter().enumerate() {
        if !region.contains_plot(plot) {
            let id = plot_ids
                .and_then(|ids| ids.get(i).cloned())
                .unwrap_or_else(|| i.to_string());
            return Err(Error::PlotOutsideRegion { id });
        }
    }
    let sampled: f64 = plots.iter().map(RectPlot::area).sum();
    let unsampled = region.area() - sampled;
    if unsampled <= 1e-9 * region.area() {
        return Err(Error::EmptyUnsampledRegion);
    }
    let index = PlotIndex::new(plots);
    let mut spacing = (unsampled / n_p_target as f64).sqrt();
    // slivers between plots can dodge a coarse lattice entirely
    for _ in 0..8 {
        let points: Vec<Point2> = rotated_lattice(region.bbox(), spacing, PREDICTION_GRID_ANGLE)
            .into_iter()
            .filter(|p| region.contains(p) && index.locate(p).is_none())
            .collect();
        if !points.is_empty() {
            let cell_area = unsampled / points.len() as f64;
            return Ok(PredictionGrid {
                points,
                cell_area,
                unsampled_area: unsampled,
            });
        }
        spacing *= 0.5;
    }
    Err(Error::InvalidGeometry(
        "unsampled area too fragmented to place prediction nodes".into(),
    ))
}
