//! Box domains, uniform node grids, crack sets built from segments and their
//! rasterization into node constraint masks.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};

/// Problem-level parameters shared by all experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub p: f64,
    pub dim: usize,
    /// Half-width `R` of the box `(-R, R)^N`.
    pub half_width: f64,
    pub lambda: f64,
    pub length_budget: Option<f64>,
}

impl ProblemSpec {
    pub fn new(p: f64, dim: usize, half_width: f64) -> Result<Self> {
        let spec = Self {
            p,
            dim,
            half_width,
            lambda: 0.0,
            length_budget: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        validate_exponent(self.p)?;
        if self.dim < 2 {
            return Err(invalid(format!("dimension must be >= 2, got {}", self.dim)));
        }
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(invalid(format!("half-width must be positive, got {}", self.half_width)));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(l) = self.length_budget {
            if !(l > 0.0) {
                return Err(invalid(format!("length budget must be positive, got {l}")));
            }
        }
        Ok(())
    }

    /// Whether cracks of finite length carry positive capacity (`p > N - 1`).
    pub fn in_nontrivial_regime(&self) -> bool {
        self.p > self.dim as f64 - 1.0
    }

    /// Source integrability exponent `q0` for this `(N, p)`.
    pub fn q0(&self) -> f64 {
        source_exponent(self.dim, self.p)
    }
}

/// Integrability exponent `q0`: `(p*)'` below the critical exponent, `1` above it.
///
/// At `p = N` any `q0 > 1` is admissible; 2 is used.
pub fn source_exponent(dim: usize, p: f64) -> f64 {
    let n = dim as f64;
    if p < n {
        let p_star = n * p / (n - p);
        p_star / (p_star - 1.0)
    } else if p == n {
        2.0
    } else {
        1.0
    }
}

/// Hölder conjugate `p' = p / (p - 1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

pub(crate) fn validate_exponent(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(invalid(format!("exponent p must be in (1, inf), got {p}")));
    }
    Ok(())
}

/// A closed segment between two distinct points.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    start: Vec<f64>,
    end: Vec<f64>,
}

impl Segment {
    pub fn new(start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if start.len() != end.len() || start.is_empty() {
            return Err(invalid("segment endpoints must share a nonzero dimension"));
        }
        if start.iter().chain(&end).any(|v| !v.is_finite()) {
            return Err(invalid("segment coordinates must be finite"));
        }
        let seg = Self { start, end };
        if !(seg.length() > 0.0) {
            return Err(invalid("segment endpoints must differ"));
        }
        Ok(seg)
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn end(&self) -> &[f64] {
        &self.end
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn length(&self) -> f64 {
        self.start
            .iter()
            .zip(&self.end)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.start.iter().zip(&self.end).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Translate by `offset`.
    pub fn translated(&self, offset: &[f64]) -> Self {
        let shift = |v: &[f64]| v.iter().zip(offset).map(|(a, b)| a + b).collect();
        Self {
            start: shift(&self.start),
            end: shift(&self.end),
        }
    }

    /// Euclidean distance from `point` to the closed segment.
    pub fn distance_to(&self, point: &[f64]) -> f64 {
        let mut dd = 0.0;
        let mut pd = 0.0;
        for ((e, s), x) in self.end.iter().zip(&self.start).zip(point) {
            let d = e - s;
            dd += d * d;
            pd += (x - s) * d;
        }
        let s = (pd / dd).clamp(0.0, 1.0);
        (0..self.dim())
            .map(|k| {
                let c = self.start[k] + s * (self.end[k] - self.start[k]);
                (point[k] - c) * (point[k] - c)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Length of the common part when both segments lie on one line, else 0.
    fn collinear_overlap(&self, other: &Segment) -> f64 {
        let n = self.dim();
        let d: Vec<f64> = (0..n).map(|k| self.end[k] - self.start[k]).collect();
        let len = self.length();
        let scale = len.max(other.length());
        let tol = 1e-12 * scale.max(1.0);
        if other.distance_to_line(&self.start, &d) > tol {
            return 0.0;
        }
        if self.distance_to_line(&other.start, &other.direction()) > tol
            || self.distance_to_line(&other.end, &other.direction()) > tol
        {
            return 0.0;
        }
        let proj = |p: &[f64]| (0..n).map(|k| (p[k] - self.start[k]) * d[k]).sum::<f64>() / len;
        let (a, b) = (proj(&other.start), proj(&other.end));
        let (lo, hi) = (a.min(b), a.max(b));
        (hi.min(len) - lo.max(0.0)).max(0.0)
    }

    fn direction(&self) -> Vec<f64> {
        self.start.iter().zip(&self.end).map(|(a, b)| b - a).collect()
    }

    /// Distance from this segment's endpoints to the infinite line through
    /// `origin` with direction `dir` (maximum over both endpoints).
    fn distance_to_line(&self, origin: &[f64], dir: &[f64]) -> f64 {
        let dd: f64 = dir.iter().map(|v| v * v).sum();
        [&self.start, &self.end]
            .iter()
            .map(|p| {
                let t: f64 = (0..dir.len()).map(|k| (p[k] - origin[k]) * dir[k]).sum::<f64>() / dd;
                (0..dir.len())
                    .map(|k| {
                        let r = p[k] - origin[k] - t * dir[k];
                        r * r
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// A finite union of segments with its exact total length.
#[derive(Debug, Clone, PartialEq)]
pub struct CrackSet {
    dim: usize,
    segments: Vec<Segment>,
    total_length: f64,
}

impl CrackSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            segments: Vec::new(),
            total_length: 0.0,
        }
    }

    pub fn new(dim: usize, segments: Vec<Segment>) -> Result<Self> {
        if let Some(s) = segments.iter().find(|s| s.dim() != dim) {
            return Err(invalid(format!(
                "segment of dimension {} in a {dim}-dimensional crack set",
                s.dim()
            )));
        }
        let total_length = total_length(&segments)?;
        Ok(Self {
            dim,
            segments,
            total_length,
        })
    }

    pub fn single(segment: Segment) -> Self {
        let total_length = segment.length();
        Self {
            dim: segment.dim(),
            segments: vec![segment],
            total_length,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// Adds a segment, re-checking for overlaps.
    pub fn push(&mut self, segment: Segment) -> Result<()> {
        let mut segments = self.segments.clone();
        segments.push(segment);
        *self = Self::new(self.dim, segments)?;
        Ok(())
    }

    /// Largest distance between two points of the set.
    pub fn diameter(&self) -> f64 {
        let pts: Vec<&[f64]> = self.segments.iter().flat_map(|s| [s.start(), s.end()]).collect();
        let mut best = 0.0f64;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                best = best.max(euclid(a, b));
            }
        }
        best
    }

    /// Center of the axis-aligned bounding box.
    pub fn bounding_center(&self) -> Vec<f64> {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for s in &self.segments {
            for p in [s.start(), s.end()] {
                for k in 0..self.dim {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        if self.segments.is_empty() {
            return vec![0.0; self.dim];
        }
        lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn translated(&self, offset: &[f64]) -> Self {
        Self {
            dim: self.dim,
            segments: self.segments.iter().map(|s| s.translated(offset)).collect(),
            total_length: self.total_length,
        }
    }

    /// Parses the plain text crack format: one segment per line with the
    /// start coordinates followed by the end coordinates, `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut segments = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let values = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| parse_err(format!("bad number {t:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() < 4 || values.len() % 2 != 0 {
                return Err(parse_err(format!(
                    "expected an even number (>= 4) of coordinates, got {}",
                    values.len()
                )));
            }
            let n = values.len() / 2;
            match dim {
                None => dim = Some(n),
                Some(d) if d != n => {
                    return Err(parse_err(format!("segment has dimension {n}, expected {d}")));
                }
                _ => {}
            }
            let seg = Segment::new(values[..n].to_vec(), values[n..].to_vec()).map_err(|e| parse_err(e.to_string()))?;
            segments.push(seg);
        }
        match dim {
            Some(d) => Self::new(d, segments),
            None => Ok(Self::empty(2)),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# start coordinates, then end coordinates\n");
        for s in &self.segments {
            let coords: Vec<String> = s.start().iter().chain(s.end()).map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", coords.join(" "));
        }
        out
    }
}

/// Exact one-dimensional measure of a union of segments.
///
/// Segments may cross at isolated points; collinear overlaps of positive
/// length are rejected.
pub fn total_length(segments: &[Segment]) -> Result<f64> {
    for (i, a) in segments.iter().enumerate() {
        for (j, b) in segments.iter().enumerate().skip(i + 1) {
            if a.collinear_overlap(b) > 1e-12 * a.length().max(b.length()) {
                return Err(Error::OverlappingSegments { index: i, other: j });
            }
        }
    }
    Ok(segments.iter().map(Segment::length).sum())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Uniform node grid over an axis-aligned cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    nodes_per_side: usize,
    h: f64,
    origin: Vec<f64>,
}

impl Grid {
    /// Grid on the cube `origin + [0, side]^N`.
    pub fn cube(origin: Vec<f64>, side: f64, nodes_per_side: usize) -> Result<Self> {
        if nodes_per_side < 2 {
            return Err(invalid(format!("nodes_per_side must be >= 2, got {nodes_per_side}")));
        }
        if !(2..=4).contains(&origin.len()) {
            return Err(invalid(format!(
                "grid dimension must lie in 2..=4, got {}",
                origin.len()
            )));
        }
        if !(side > 0.0) || !side.is_finite() {
            return Err(invalid(format!("cube side must be positive, got {side}")));
        }
        Ok(Self {
            dim: origin.len(),
            nodes_per_side,
            h: side / (nodes_per_side - 1) as f64,
            origin,
        })
    }

    /// Grid with spacing `h` and `nodes_per_side` nodes starting at `origin`.
    pub fn with_spacing(origin: Vec<f64>, h: f64, nodes_per_side: usize) -> Result<Self> {
        if !(h > 0.0) {
            return Err(invalid(format!("grid spacing must be positive, got {h}")));
        }
        let mut g = Self::cube(origin, h * (nodes_per_side.max(2) - 1) as f64, nodes_per_side)?;
        g.h = h;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_side(&self) -> usize {
        self.nodes_per_side
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn side(&self) -> f64 {
        self.h * (self.nodes_per_side - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_side.pow(self.dim as u32)
    }

    pub fn cell_count(&self) -> usize {
        (self.nodes_per_side - 1).pow(self.dim as u32)
    }

    /// Flat-index stride along `axis` (axis 0 is fastest).
    pub fn stride(&self, axis: usize) -> usize {
        self.nodes_per_side.pow(axis as u32)
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().map(|(k, &i)| i * self.stride(k)).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let m = self.nodes_per_side;
        (0..self.dim)
            .map(|_| {
                let i = flat % m;
                flat /= m;
                i
            })
            .collect()
    }

    pub fn coordinate(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.coordinate_into(flat, &mut out);
        out
    }

    pub(crate) fn coordinate_into(&self, mut flat: usize, out: &mut [f64]) {
        let m = self.nodes_per_side;
        for (o, origin) in out.iter_mut().zip(&self.origin).take(self.dim) {
            *o = origin + (flat % m) as f64 * self.h;
            flat /= m;
        }
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let last = self.nodes_per_side - 1;
        self.multi_index(flat).iter().any(|&i| i == 0 || i == last)
    }

    /// Trapezoidal quadrature weight of a node.
    pub fn node_weight(&self, flat: usize) -> f64 {
        let last = self.nodes_per_side - 1;
        let mut w = self.h.powi(self.dim as i32);
        let m = self.nodes_per_side;
        let mut f = flat;
        for _ in 0..self.dim {
            let i = f % m;
            f /= m;
            if i == 0 || i == last {
                w *= 0.5;
            }
        }
        w
    }

    pub fn node_weights(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.node_weight(i)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim as i32)
    }

    /// Whether `point` lies in the closed grid box (with round-off slack).
    pub fn contains(&self, point: &[f64]) -> bool {
        let slack = 1e-9 * self.h;
        let side = self.side();
        (0..self.dim).all(|k| point[k] >= self.origin[k] - slack && point[k] <= self.origin[k] + side + slack)
    }

    /// Samples a function at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        (0..self.node_count())
            .map(|i| {
                self.coordinate_into(i, &mut x);
                f(&x)
            })
            .collect()
    }

    /// Flat indices of all nodes whose multi-index lies in the inclusive
    /// per-axis ranges.
    pub(crate) fn nodes_in_index_box(&self, lo: &[usize], hi: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        if (0..self.dim).any(|k| lo[k] > hi[k]) {
            return out;
        }
        let mut idx = lo.to_vec();
        loop {
            out.push(self.flat_index(&idx));
            let mut k = 0;
            loop {
                if k == self.dim {
                    return out;
                }
                if idx[k] < hi[k] {
                    idx[k] += 1;
                    break;
                }
                idx[k] = lo[k];
                k += 1;
            }
        }
    }
}

/// Uniform grid over the problem box `[-R, R]^N`.
pub fn build_grid(spec: &ProblemSpec, nodes_per_side: usize) -> Result<Grid> {
    spec.validate()?;
    Grid::cube(vec![-spec.half_width; spec.dim], 2.0 * spec.half_width, nodes_per_side)
}

/// Per-node pinning flags: pinned nodes carry a prescribed value.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMask {
    pinned: Vec<bool>,
    /// Segments shorter than `h` that captured no node.
    invisible_segments: Vec<usize>,
}

impl ConstraintMask {
    pub fn none(grid: &Grid) -> Self {
        Self {
            pinned: vec![false; grid.node_count()],
            invisible_segments: Vec::new(),
        }
    }

    pub fn boundary(grid: &Grid) -> Self {
        Self {
            pinned: (0..grid.node_count()).map(|i| grid.is_boundary(i)).collect(),
            invisible_segments: Vec::new(),
        }
    }

    pub fn from_flags(pinned: Vec<bool>) -> Self {
        Self {
            pinned,
            invisible_segments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pinned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pinned.is_empty()
    }

    pub fn is_pinned(&self, node: usize) -> bool {
        self.pinned[node]
    }

    pub fn flags(&self) -> &[bool] {
        &self.pinned
    }

    pub fn pin(&mut self, node: usize) {
        self.pinned[node] = true;
    }

    pub fn pinned_count(&self) -> usize {
        self.pinned.iter().filter(|&&b| b).count()
    }

    /// Pinned nodes that are not on the grid boundary.
    pub fn interior_pinned_count(&self, grid: &Grid) -> usize {
        (0..self.pinned.len())
            .filter(|&i| self.pinned[i] && !grid.is_boundary(i))
            .count()
    }

    pub fn invisible_segments(&self) -> &[usize] {
        &self.invisible_segments
    }

    /// True when every node pinned here is pinned in `other` as well.
    pub fn is_subset_of(&self, other: &ConstraintMask) -> bool {
        self.pinned.iter().zip(&other.pinned).all(|(&a, &b)| !a || b)
    }

    /// Pins every node within `h/2` of a segment. Returns the number of newly
    /// captured nodes per segment.
    fn add_cracks(&mut self, cracks: &CrackSet, grid: &Grid) -> Result<()> {
        if cracks.dim() != grid.dim() && !cracks.is_empty() {
            return Err(invalid(format!(
                "crack set of dimension {} on a {}-dimensional grid",
                cracks.dim(),
                grid.dim()
            )));
        }
        let h = grid.h();
        let radius = 0.5 * h * (1.0 + 1e-9);
        let last = (grid.nodes_per_side() - 1) as f64;
        let mut x = vec![0.0; grid.dim()];
        for (si, seg) in cracks.segments().iter().enumerate() {
            for p in [seg.start(), seg.end()] {
                if !grid.contains(p) {
                    return Err(Error::OutsideBox(format!("segment {si} endpoint {p:?}")));
                }
            }
            let mut lo = Vec::with_capacity(grid.dim());
            let mut hi = Vec::with_capacity(grid.dim());
            for k in 0..grid.dim() {
                let a = seg.start()[k].min(seg.end()[k]) - radius - grid.origin()[k];
                let b = seg.start()[k].max(seg.end()[k]) + radius - grid.origin()[k];
                lo.push(((a / h).floor().max(0.0)) as usize);
                hi.push(((b / h).ceil().min(last)) as usize);
            }
            let mut captured = 0usize;
            for node in grid.nodes_in_index_box(&lo, &hi) {
                grid.coordinate_into(node, &mut x);
                if seg.distance_to(&x) <= radius {
                    self.pinned[node] = true;
                    captured += 1;
                }
            }
            if captured == 0 {
                log::warn!(
                    "segment {si} (length {:.3e}) captures no node at h = {h:.3e}; it is invisible at this resolution",
                    seg.length()
                );
                self.invisible_segments.push(si);
            }
        }
        Ok(())
    }
}

/// Mask pinning the box boundary and every node within `h/2` of a crack.
pub fn rasterize(cracks: &CrackSet, grid: &Grid) -> Result<ConstraintMask> {
    let mut mask = ConstraintMask::boundary(grid);
    mask.add_cracks(cracks, grid)?;
    Ok(mask)
}

/// Mask pinning only the nodes within `h/2` of a crack (free outer boundary).
pub fn rasterize_cracks_only(cracks: &CrackSet, grid: &Grid) -> Result<ConstraintMask> {
    let mut mask = ConstraintMask::none(grid);
    mask.add_cracks(cracks, grid)?;
    Ok(mask)
}

/// Axis-aligned segment through `center` along `axis` with the given length.
pub fn axis_segment(center: &[f64], axis: usize, length: f64) -> Result<Segment> {
    let mut a = center.to_vec();
    let mut b = center.to_vec();
    a[axis] -= 0.5 * length;
    b[axis] += 0.5 * length;
    Segment::new(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: &[f64], b: &[f64]) -> Segment {
        Segment::new(a.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn grid_spacing_examples() {
        let spec = ProblemSpec::new(2.0, 2, 1.0).unwrap();
        let g = build_grid(&spec, 3).unwrap();
        assert_eq!(g.h(), 1.0);
        let xs: Vec<f64> = (0..3).map(|i| g.coordinate(i)[0]).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);

        let g = build_grid(&spec, 257).unwrap();
        assert_eq!(g.h(), 2.0 / 256.0);

        let spec2 = ProblemSpec::new(2.0, 2, 2.0).unwrap();
        let g = build_grid(&spec2, 2).unwrap();
        assert_eq!(g.h(), 4.0);
        let mask = rasterize(&CrackSet::empty(2), &g).unwrap();
        assert_eq!(mask.pinned_count(), 4);
    }

    #[test]
    fn grid_rejects_single_node() {
        let spec = ProblemSpec::new(2.0, 2, 1.0).unwrap();
        assert!(build_grid(&spec, 1).is_err());
        assert!(build_grid(&spec, 0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(ProblemSpec::new(1.0, 2, 1.0).is_err());
        assert!(ProblemSpec::new(2.0, 1, 1.0).is_err());
        assert!(ProblemSpec::new(2.0, 2, 0.0).is_err());
        assert!(ProblemSpec::new(2.0, 2, 1.0).unwrap().with_lambda(-1.0).is_err());
        let s = ProblemSpec::new(1.5, 2, 1.0).unwrap();
        assert!(s.in_nontrivial_regime());
        assert!(!ProblemSpec::new(2.0, 3, 1.0).unwrap().in_nontrivial_regime());
    }

    #[test]
    fn source_exponents() {
        // p* = 6 for (N, p) = (2, 1.5), so q0 = 6/5.
        assert!((source_exponent(2, 1.5) - 1.2).abs() < 1e-15);
        assert_eq!(source_exponent(2, 3.0), 1.0);
        assert_eq!(source_exponent(2, 2.0), 2.0);
        assert_eq!(conjugate(3.0), 1.5);
    }

    #[test]
    fn empty_mask_is_boundary() {
        let g = Grid::cube(vec![-1.0, -1.0], 2.0, 9).unwrap();
        let m = rasterize(&CrackSet::empty(2), &g).unwrap();
        assert_eq!(m, ConstraintMask::boundary(&g));
        assert_eq!(m.pinned_count(), 4 * 8);
        assert_eq!(m.interior_pinned_count(&g), 0);
    }

    #[test]
    fn grid_line_segment_pins_k_plus_one_nodes() {
        let g = Grid::cube(vec![-1.0, -1.0], 2.0, 17).unwrap();
        let h = g.h();
        for k in 1..=6 {
            let s = seg(&[-0.5, 0.25], &[-0.5 + k as f64 * h, 0.25]);
            let m = rasterize(&CrackSet::single(s), &g).unwrap();
            assert_eq!(m.interior_pinned_count(&g), k + 1);
        }
    }

    #[test]
    fn short_offgrid_segment_is_invisible() {
        let g = Grid::cube(vec![0.0, 0.0], 1.0, 11).unwrap();
        // Centered in a cell, far from every node.
        let s = seg(&[0.53, 0.55], &[0.57, 0.55]);
        let m = rasterize(&CrackSet::single(s), &g).unwrap();
        assert_eq!(m.interior_pinned_count(&g), 0);
        assert_eq!(m.invisible_segments(), &[0]);
    }

    #[test]
    fn rasterize_rejects_outside() {
        let g = Grid::cube(vec![0.0, 0.0], 1.0, 11).unwrap();
        let s = seg(&[0.5, 0.5], &[1.5, 0.5]);
        assert!(matches!(rasterize(&CrackSet::single(s), &g), Err(Error::OutsideBox(_))));
    }

    #[test]
    fn lengths() {
        assert_eq!(total_length(&[]).unwrap(), 0.0);
        let s = seg(&[0.0, 0.0], &[0.3, 0.0]);
        assert_eq!(total_length(&[s]).unwrap(), 0.3);
    }

    #[test]
    fn overlap_detection() {
        let a = seg(&[0.0, 0.0], &[1.0, 0.0]);
        let b = seg(&[0.5, 0.0], &[2.0, 0.0]);
        assert!(matches!(
            CrackSet::new(2, vec![a.clone(), b]),
            Err(Error::OverlappingSegments { index: 0, other: 1 })
        ));
        // Touching end to end and crossing are both measure-zero intersections.
        let c = seg(&[1.0, 0.0], &[2.0, 0.0]);
        let d = seg(&[0.5, -1.0], &[0.5, 1.0]);
        let set = CrackSet::new(2, vec![a, c, d]).unwrap();
        assert!((set.total_length() - 4.0).abs() < 1e-15);
        // Parallel but offset.
        let e = seg(&[0.0, 0.1], &[1.0, 0.1]);
        let f = seg(&[0.0, 0.0], &[1.0, 0.0]);
        assert!(CrackSet::new(2, vec![e, f]).is_ok());
    }

    #[test]
    fn text_format_parses_comments_and_reports_lines() {
        let text = "# header\n0 0 1 0\n\n0.5 -1 0.5 1 # crossing\n";
        let set = CrackSet::parse(text).unwrap();
        assert_eq!(set.segments().len(), 2);
        assert_eq!(set.total_length(), 3.0);
        let back = CrackSet::parse(&set.to_text()).unwrap();
        assert_eq!(back, set);

        let err = CrackSet::parse("0 0 1 0\n0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = CrackSet::parse("0 0 x 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = CrackSet::parse("0 0 0 1 1 1\n0 0 1 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn segment_distance() {
        let s = seg(&[0.0, 0.0], &[1.0, 0.0]);
        assert_eq!(s.distance_to(&[0.5, 0.3]), 0.3);
        assert!((s.distance_to(&[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((s.distance_to(&[-3.0, 4.0]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn node_weights_integrate_volume() {
        let g = Grid::cube(vec![0.0, 0.0, 0.0], 2.0, 5).unwrap();
        let total: f64 = g.node_weights().iter().sum();
        assert!((total - 8.0).abs() < 1e-12);
    }
}
