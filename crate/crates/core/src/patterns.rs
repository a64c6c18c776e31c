//! Doubly periodic integer patterns: lattice bookkeeping, the `r`-matching
//! predicate, the `V` norms, structure identities, and extraction of patterns
//! and quadratic fits from solved fields.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};
use num_integer::Integer;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{fmt_rat, int, parse_rat, rat, round_to_small_rational, to_f64, Rat};
use crate::grid::{ball_offsets, IntField, LatticePoint};

/// Integer lattice in Hermite normal form, generated by `(a, 0)` and `(b, d)`
/// with `a, d > 0` and `0 <= b < a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hnf {
    pub a: i64,
    pub b: i64,
    pub d: i64,
}

impl Hnf {
    /// Lattice generated by the given vectors, or `None` when they do not span the plane.
    pub fn from_generators(gens: &[LatticePoint]) -> Option<Hnf> {
        let mut r = LatticePoint::ORIGIN;
        let mut a = 0i64;
        for &g0 in gens {
            let mut g = g0;
            while g.y != 0 {
                let q = r.y / g.y;
                r = LatticePoint::new(r.x - q * g.x, r.y - q * g.y);
                std::mem::swap(&mut r, &mut g);
            }
            a = a.gcd(&g.x);
        }
        if r.y < 0 {
            r = -r;
        }
        if a == 0 || r.y == 0 {
            return None;
        }
        Some(Hnf { a, b: r.x.rem_euclid(a), d: r.y })
    }

    pub fn covolume(&self) -> i64 {
        self.a * self.d
    }

    /// Canonical representative of the coset of `p`, in `[0, a) x [0, d)`.
    pub fn reduce(&self, p: LatticePoint) -> LatticePoint {
        let k = p.y.div_euclid(self.d);
        let y = p.y - k * self.d;
        let x = (p.x - k * self.b).rem_euclid(self.a);
        LatticePoint::new(x, y)
    }

    pub fn contains(&self, p: LatticePoint) -> bool {
        self.reduce(p) == LatticePoint::ORIGIN
    }

    /// Coset representatives in lexicographic order.
    pub fn reps(&self) -> Vec<LatticePoint> {
        let mut v: Vec<LatticePoint> =
            (0..self.a).flat_map(|x| (0..self.d).map(move |y| LatticePoint::new(x, y))).collect();
        v.sort();
        v
    }

    /// A basis of shortest vectors, signs normalized so each vector's first nonzero
    /// coordinate is positive and ordered by length then lexicographically.
    pub fn reduced_basis(&self) -> [LatticePoint; 2] {
        let mut u = LatticePoint::new(self.a, 0);
        let mut v = LatticePoint::new(self.b, self.d);
        loop {
            if v.norm_sq() < u.norm_sq() {
                std::mem::swap(&mut u, &mut v);
            }
            let dot = u.x * v.x + u.y * v.y;
            let nu = u.norm_sq();
            let q = (2 * dot + nu).div_euclid(2 * nu);
            if q == 0 {
                break;
            }
            v = LatticePoint::new(v.x - q * u.x, v.y - q * u.y);
            if v.norm_sq() >= u.norm_sq() {
                break;
            }
        }
        let canon = |p: LatticePoint| if p.x < 0 || (p.x == 0 && p.y < 0) { -p } else { p };
        let (mut u, mut v) = (canon(u), canon(v));
        if (v.norm_sq(), v) < (u.norm_sq(), u) {
            std::mem::swap(&mut u, &mut v);
        }
        [u, v]
    }
}

/// `p(x) = tile(x mod Λ)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodicPattern {
    hnf: Hnf,
    /// Values at `hnf.reps()`, indexed `x * d + y`.
    values: Vec<i64>,
}

impl PeriodicPattern {
    /// Builds a pattern from a basis and one value per coset.
    pub fn new(basis: [LatticePoint; 2], tile: &[(LatticePoint, i64)]) -> Result<PeriodicPattern> {
        let hnf = Hnf::from_generators(&basis).ok_or_else(|| Error::domain("pattern basis is degenerate"))?;
        let det = (basis[0].x * basis[1].y - basis[0].y * basis[1].x).abs();
        if det != hnf.covolume() {
            return Err(Error::domain("pattern basis is degenerate"));
        }
        let mut values = vec![None; det as usize];
        for &(p, v) in tile {
            let q = hnf.reduce(p);
            let slot = &mut values[(q.x * hnf.d + q.y) as usize];
            if slot.is_some() {
                return Err(Error::domain(format!("tile has two cells in the coset of {p:?}")));
            }
            *slot = Some(v);
        }
        let values = values
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::domain(format!("tile must have exactly {det} cells, one per coset")))?;
        Ok(PeriodicPattern { hnf, values })
    }

    /// Samples `f` on coset representatives.
    pub fn from_fn(basis: [LatticePoint; 2], f: impl Fn(LatticePoint) -> i64) -> Result<PeriodicPattern> {
        let hnf = Hnf::from_generators(&basis).ok_or_else(|| Error::domain("pattern basis is degenerate"))?;
        let tile: Vec<(LatticePoint, i64)> = hnf.reps().into_iter().map(|p| (p, f(p))).collect();
        PeriodicPattern::new(basis, &tile)
    }

    pub fn constant(v: i64) -> PeriodicPattern {
        PeriodicPattern { hnf: Hnf { a: 1, b: 0, d: 1 }, values: vec![v] }
    }

    pub fn hnf(&self) -> Hnf {
        self.hnf
    }

    pub fn basis(&self) -> [LatticePoint; 2] {
        self.hnf.reduced_basis()
    }

    pub fn covolume(&self) -> i64 {
        self.hnf.covolume()
    }

    pub fn get(&self, p: LatticePoint) -> i64 {
        let q = self.hnf.reduce(p);
        self.values[(q.x * self.hnf.d + q.y) as usize]
    }

    /// `(representative, value)` pairs in lexicographic order.
    pub fn tile(&self) -> Vec<(LatticePoint, i64)> {
        self.hnf.reps().into_iter().map(|p| (p, self.get(p))).collect()
    }

    /// Whether both patterns are the same function on the lattice.
    pub fn same_function(&self, other: &PeriodicPattern) -> bool {
        self.hnf == other.hnf && self.values == other.values
    }

    pub fn to_json(&self) -> PatternJson {
        let b = self.basis();
        PatternJson {
            basis: [[b[0].x, b[0].y], [b[1].x, b[1].y]],
            tile: self.tile().into_iter().map(|(p, v)| TileCell { x: p.x, y: p.y, v }).collect(),
        }
    }

    pub fn from_json(j: &PatternJson) -> Result<PeriodicPattern> {
        let basis = [LatticePoint::new(j.basis[0][0], j.basis[0][1]), LatticePoint::new(j.basis[1][0], j.basis[1][1])];
        let tile: Vec<(LatticePoint, i64)> = j.tile.iter().map(|c| (LatticePoint::new(c.x, c.y), c.v)).collect();
        PeriodicPattern::new(basis, &tile).map_err(|e| Error::format(format!("invalid pattern file: {e}")))
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("serializable")
    }

    pub fn decode(text: &str) -> Result<PeriodicPattern> {
        let j: PatternJson = serde_json::from_str(text).map_err(|e| Error::format(format!("invalid pattern file: {e}")))?;
        PeriodicPattern::from_json(&j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileCell {
    pub x: i64,
    pub y: i64,
    pub v: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternJson {
    pub basis: [[i64; 2]; 2],
    pub tile: Vec<TileCell>,
}

/// `V` is a 2x3 integer matrix stored by rows.
pub type Mat23 = [[i64; 3]; 2];

/// `|x|_V = |V^T x|_inf`.
pub fn v_norm(v: &Mat23, x: [i64; 2]) -> i64 {
    (0..3).map(|j| (v[0][j] * x[0] + v[1][j] * x[1]).abs()).max().unwrap()
}

/// `min |y|_1` over integer `y` with `V y = x`, or `None` when `x` is not in the
/// integer image of `V`.
///
/// Requires `V (1,1,1) = 0` and rank 2, so every solution is `y0 + t (1,1,1)`.
pub fn vinv_norm(v: &Mat23, x: [i64; 2]) -> Result<Option<i64>> {
    if v[0].iter().sum::<i64>() != 0 || v[1].iter().sum::<i64>() != 0 {
        return Err(Error::domain("V must annihilate (1,1,1)"));
    }
    // with y3 = 0 the system is the 2x2 block of the first two columns
    let det = v[0][0] * v[1][1] - v[0][1] * v[1][0];
    if det == 0 {
        return Err(Error::domain("V must have rank 2"));
    }
    let n1 = x[0] * v[1][1] - x[1] * v[0][1];
    let n2 = v[0][0] * x[1] - v[1][0] * x[0];
    if n1 % det != 0 || n2 % det != 0 {
        return Ok(None);
    }
    let mut y = [n1 / det, n2 / det, 0];
    let mut sorted = y;
    sorted.sort();
    let t = -sorted[1];
    for c in &mut y {
        *c += t;
    }
    Ok(Some(y.iter().map(|c| c.abs()).sum()))
}

/// Structure data `(P, A, V)` with an optional fundamental tile of Laplacian values.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternData {
    pub p: [[Rat; 2]; 2],
    pub a: Mat23,
    pub v: Mat23,
    pub tile: Option<Vec<(LatticePoint, i64)>>,
}

/// `Q' = V^T Q V` for the standard `V`.
pub const Q_PRIME: [[i64; 3]; 3] = [[0, 1, -1], [-1, 0, 1], [1, -1, 0]];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureReport {
    pub pv_equals_a: bool,
    pub annihilates_ones: bool,
    pub symplectic: bool,
    pub vvt_det_positive: bool,
    /// Tile checks, present only when a tile is supplied.
    pub tile_boundary_twos: Option<bool>,
    pub tile_covers: Option<bool>,
    pub violations: Vec<String>,
}

impl StructureReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl PatternData {
    /// `A = P V`, which must be integral.
    pub fn from_pv(p: [[Rat; 2]; 2], v: Mat23) -> Result<PatternData> {
        let mut a = [[0i64; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                let e = &p[i][0] * int(v[0][j]) + &p[i][1] * int(v[1][j]);
                if !e.is_integer() {
                    return Err(Error::domain("P V is not integral"));
                }
                a[i][j] = crate::exact::floor_i64(&e).ok_or_else(|| Error::domain("entry out of range"))?;
            }
        }
        Ok(PatternData { p, a, v, tile: None })
    }

    pub fn validate(&self, window: i64) -> StructureReport {
        let mut rep = StructureReport::default();
        rep.pv_equals_a = (0..2).all(|i| {
            (0..3).all(|j| &self.p[i][0] * int(self.v[0][j]) + &self.p[i][1] * int(self.v[1][j]) == int(self.a[i][j]))
        });
        if !rep.pv_equals_a {
            rep.violations.push("P V != A".into());
        }
        rep.annihilates_ones = self.a.iter().chain(&self.v).all(|row| row.iter().sum::<i64>() == 0);
        if !rep.annihilates_ones {
            rep.violations.push("A or V does not annihilate (1,1,1)".into());
        }
        // A^T Q V + V^T Q A with Q = [[0,1],[-1,0]]: entry (i,j) is det(a_i, v_j) + det(v_i, a_j)
        let col = |m: &Mat23, j: usize| [m[0][j], m[1][j]];
        let det = |u: [i64; 2], w: [i64; 2]| u[0] * w[1] - u[1] * w[0];
        rep.symplectic = (0..3).all(|i| {
            (0..3).all(|j| det(col(&self.a, i), col(&self.v, j)) + det(col(&self.v, i), col(&self.a, j)) == Q_PRIME[i][j])
        });
        if !rep.symplectic {
            rep.violations.push("A^T Q V + V^T Q A != Q'".into());
        }
        let g = |r: usize, s: usize| (0..3).map(|j| self.v[r][j] * self.v[s][j]).sum::<i64>();
        rep.vvt_det_positive = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0) > 0;
        if !rep.vvt_det_positive {
            rep.violations.push("det(V V^T) <= 0".into());
        }
        if let Some(tile) = &self.tile {
            let (twos, covers) = self.check_tile(tile, window);
            rep.tile_boundary_twos = Some(twos);
            rep.tile_covers = Some(covers);
            if !twos {
                rep.violations.push("tile boundary site with Laplacian != 2".into());
            }
            if !covers {
                rep.violations.push("tile translates do not cover the window with boundary-only overlaps".into());
            }
        }
        rep
    }

    /// Boundary values and cover of `[-window, window]^2` by translates `T + V Z^3`.
    fn check_tile(&self, tile: &[(LatticePoint, i64)], window: i64) -> (bool, bool) {
        let cells: HashSet<LatticePoint> = tile.iter().map(|t| t.0).collect();
        let boundary = |p: LatticePoint| p.neighbors().iter().any(|q| !cells.contains(q));
        let twos = tile.iter().all(|&(p, v)| !boundary(p) || v == 2);
        if tile.is_empty() {
            return (twos, false);
        }
        let v1 = LatticePoint::new(self.v[0][0], self.v[1][0]);
        let v2 = LatticePoint::new(self.v[0][1], self.v[1][1]);
        let det = v1.x * v2.y - v1.y * v2.x;
        if det == 0 {
            return (twos, false);
        }
        let reach = tile.iter().map(|t| t.0.x.abs().max(t.0.y.abs())).max().unwrap() + window;
        // solve for coefficient ranges covering the reach box
        let span = (2 * reach * (v1.x.abs() + v1.y.abs() + v2.x.abs() + v2.y.abs())) / det.abs() + 2;
        let mut count: BTreeMap<LatticePoint, (u32, bool)> = BTreeMap::new();
        for i in -span..=span {
            for j in -span..=span {
                let t = LatticePoint::new(i * v1.x + j * v2.x, i * v1.y + j * v2.y);
                if t.x.abs() > reach || t.y.abs() > reach {
                    continue;
                }
                for &(p, _) in tile {
                    let q = p + t;
                    if q.x.abs() <= window && q.y.abs() <= window {
                        let e = count.entry(q).or_insert((0, true));
                        e.0 += 1;
                        e.1 &= boundary(p);
                    }
                }
            }
        }
        let full = count.len() as i64 == (2 * window + 1) * (2 * window + 1);
        let covers = full && count.values().all(|&(c, all_boundary)| c == 1 || all_boundary);
        (twos, covers)
    }

    pub fn to_json(&self) -> PatternDataJson {
        PatternDataJson {
            p: self.p.each_ref().map(|r| r.each_ref().map(fmt_rat)),
            a: self.a,
            v: self.v,
            tile: self.tile.as_ref().map(|t| t.iter().map(|&(p, v)| TileCell { x: p.x, y: p.y, v }).collect()),
        }
    }

    pub fn from_json(j: &PatternDataJson) -> Result<PatternData> {
        let p = [[parse_rat(&j.p[0][0])?, parse_rat(&j.p[0][1])?], [parse_rat(&j.p[1][0])?, parse_rat(&j.p[1][1])?]];
        Ok(PatternData {
            p,
            a: j.a,
            v: j.v,
            tile: j.tile.as_ref().map(|t| t.iter().map(|c| (LatticePoint::new(c.x, c.y), c.v)).collect()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternDataJson {
    #[serde(rename = "P")]
    pub p: [[String; 2]; 2],
    #[serde(rename = "A")]
    pub a: Mat23,
    #[serde(rename = "V")]
    pub v: Mat23,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<Vec<TileCell>>,
}

/// A finite set of lattice points to analyze, optionally eroded.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionShape {
    Cells(Vec<LatticePoint>),
    /// Lattice points `p` with `p / scale` in the union of the closed convex polygons
    /// (counter-clockwise vertices).
    Polygons { polygons: Vec<Vec<[Rat; 2]>>, scale: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub shape: RegionShape,
    /// Points are kept only if the closed Euclidean ball of this radius lies in the shape.
    pub margin: i64,
}

fn in_convex(poly: &[[Rat; 2]], x: &[Rat; 2]) -> bool {
    let k = poly.len();
    (0..k).all(|i| {
        let (a, b) = (&poly[i], &poly[(i + 1) % k]);
        let o = (&b[0] - &a[0]) * (&x[1] - &a[1]) - (&b[1] - &a[1]) * (&x[0] - &a[0]);
        !o.is_negative()
    })
}

impl Region {
    pub fn cells(points: Vec<LatticePoint>) -> Region {
        Region { shape: RegionShape::Cells(points), margin: 0 }
    }

    pub fn polygons(polygons: Vec<Vec<[Rat; 2]>>, scale: i64) -> Region {
        Region { shape: RegionShape::Polygons { polygons, scale }, margin: 0 }
    }

    pub fn eroded(&self, by: i64) -> Region {
        Region { shape: self.shape.clone(), margin: self.margin + by }
    }

    fn base_points(&self) -> Vec<LatticePoint> {
        let mut pts = match &self.shape {
            RegionShape::Cells(c) => c.clone(),
            RegionShape::Polygons { polygons, scale } => {
                let mut out = Vec::new();
                let s = int(*scale);
                for poly in polygons {
                    if poly.is_empty() {
                        continue;
                    }
                    let lo = |k: usize| {
                        poly.iter().map(|v| (&v[k] * &s).floor().to_integer()).min().unwrap().try_into().unwrap_or(i64::MIN)
                    };
                    let hi = |k: usize| {
                        poly.iter().map(|v| (&v[k] * &s).ceil().to_integer()).max().unwrap().try_into().unwrap_or(i64::MAX)
                    };
                    for y in lo(1)..=hi(1) {
                        for x in lo(0)..=hi(0) {
                            if in_convex(poly, &[rat(x, *scale), rat(y, *scale)]) {
                                out.push(LatticePoint::new(x, y));
                            }
                        }
                    }
                }
                out
            }
        };
        pts.sort();
        pts.dedup();
        pts
    }

    /// Region points in lexicographic order.
    pub fn points(&self) -> Vec<LatticePoint> {
        let base = self.base_points();
        if self.margin <= 0 {
            return base;
        }
        let set: HashSet<LatticePoint> = base.iter().copied().collect();
        let ball = ball_offsets(self.margin);
        base.into_iter().filter(|&p| ball.iter().all(|&z| set.contains(&(p + z)))).collect()
    }
}

/// Lexicographically least coset representative `y` with `s(x+z) = p(y+z)` for `|z| <= r`.
pub fn match_at(image: &IntField, pattern: &PeriodicPattern, x: LatticePoint, r: i64) -> Result<Option<LatticePoint>> {
    if r < 1 {
        return Err(Error::domain("matching radius must be at least 1"));
    }
    let w = image.window();
    if !(w.contains(x + LatticePoint::new(-r, -r)) && w.contains(x + LatticePoint::new(r, r))) {
        return Err(Error::domain(format!("ball of radius {r} around {x:?} leaves the image window")));
    }
    Ok(match_with(image, pattern, x, &ball_offsets(r)))
}

fn match_with(image: &IntField, pattern: &PeriodicPattern, x: LatticePoint, ball: &[LatticePoint]) -> Option<LatticePoint> {
    let vals: Vec<i64> = ball.iter().map(|&z| image.get(x + z)).collect();
    pattern.hnf.reps().into_iter().find(|&y| ball.iter().zip(&vals).all(|(&z, &v)| pattern.get(y + z) == v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetCount {
    pub x: i64,
    pub y: i64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub r: i64,
    pub total: usize,
    pub matched: usize,
    pub fraction: f64,
    pub offsets: Vec<OffsetCount>,
}

/// Per-point matching results over `points` (same order), computed in parallel.
pub fn match_points(image: &IntField, pattern: &PeriodicPattern, points: &[LatticePoint], r: i64) -> Result<Vec<Option<LatticePoint>>> {
    use rayon::prelude::*;
    let w = image.window();
    if let Some(p) = points.iter().find(|&&p| !(w.contains(p + LatticePoint::new(-r, -r)) && w.contains(p + LatticePoint::new(r, r)))) {
        return Err(Error::domain(format!("ball of radius {r} around {p:?} leaves the image window")));
    }
    if r < 1 {
        return Err(Error::domain("matching radius must be at least 1"));
    }
    let ball = ball_offsets(r);
    Ok(points.par_iter().map(|&p| match_with(image, pattern, p, &ball)).collect())
}

/// Fraction of points of `region` eroded by `r` at which the pattern `r`-matches.
pub fn match_fraction(image: &IntField, pattern: &PeriodicPattern, region: &Region, r: i64) -> Result<MatchReport> {
    let points = region.eroded(r).points();
    if points.is_empty() {
        return Err(Error::domain("region is empty after erosion"));
    }
    let results = match_points(image, pattern, &points, r)?;
    let mut hist: BTreeMap<LatticePoint, usize> = BTreeMap::new();
    for y in results.iter().flatten() {
        *hist.entry(*y).or_default() += 1;
    }
    let matched: usize = hist.values().sum();
    Ok(MatchReport {
        r,
        total: points.len(),
        matched,
        fraction: matched as f64 / points.len() as f64,
        offsets: hist.into_iter().map(|(p, count)| OffsetCount { x: p.x, y: p.y, count }).collect(),
    })
}

/// Finds the period lattice of `image` on the region from exact shift agreement.
///
/// A shift `t` with `|t|_inf <= bound` agrees when `s(x+t) = s(x)` for every
/// `x` with both `x` and `x+t` in the region. Agreeing shifts whose overlap
/// holds at least half of the region generate the candidate lattice; every
/// lattice vector within the bound must then agree, and every coset must be seen.
pub fn detect_period(image: &IntField, region: &Region, bound: i64) -> Option<PeriodicPattern> {
    let points = region.points();
    if points.is_empty() || bound < 1 {
        return None;
    }
    let set: HashSet<LatticePoint> = points.iter().copied().collect();
    // (agrees, overlap) per shift
    let test = |t: LatticePoint| {
        let mut overlap = 0;
        for &x in &points {
            if set.contains(&(x + t)) {
                if image.get(x + t) != image.get(x) {
                    return (false, overlap);
                }
                overlap += 1;
            }
        }
        (true, overlap)
    };
    let shifts: Vec<(LatticePoint, bool, usize)> = (-bound..=bound)
        .flat_map(|y| (-bound..=bound).map(move |x| LatticePoint::new(x, y)))
        .filter(|&t| t != LatticePoint::ORIGIN)
        .map(|t| {
            let (ok, overlap) = test(t);
            (t, ok, overlap)
        })
        .collect();
    let gens: Vec<LatticePoint> =
        shifts.iter().filter(|s| s.1 && 2 * s.2 >= points.len()).map(|s| s.0).collect();
    let hnf = Hnf::from_generators(&gens)?;
    if shifts.iter().any(|&(t, ok, _)| hnf.contains(t) && !ok) {
        return None;
    }
    let mut tile: BTreeMap<LatticePoint, i64> = BTreeMap::new();
    for &x in &points {
        let v = image.get(x);
        if *tile.entry(hnf.reduce(x)).or_insert(v) != v {
            return None;
        }
    }
    if tile.len() as i64 != hnf.covolume() {
        return None;
    }
    let basis = [LatticePoint::new(hnf.a, 0), LatticePoint::new(hnf.b, hnf.d)];
    let tile: Vec<(LatticePoint, i64)> = tile.into_iter().collect();
    PeriodicPattern::new(basis, &tile).ok()
}

/// Least-squares quadratic `½ x·P x + b·x + c` with `P` rounded to small denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFit {
    pub p: [[Rat; 2]; 2],
    pub b: [f64; 2],
    pub c: f64,
    /// Maximum absolute deviation of the field from the fit over the region.
    pub residual: f64,
}

pub const FIT_MAX_DENOMINATOR: i64 = 10;

pub fn fit_quadratic(field: &IntField, region: &Region) -> Result<QuadraticFit> {
    let points = region.points();
    if points.len() < 6 {
        return Err(Error::domain("quadratic fit needs at least 6 points"));
    }
    // centered coordinates keep the normal equations well conditioned
    let k = points.len() as f64;
    let cx = points.iter().map(|p| p.x as f64).sum::<f64>() / k;
    let cy = points.iter().map(|p| p.y as f64).sum::<f64>() / k;
    let rows: Vec<[f64; 2]> = points.iter().map(|p| [p.x as f64 - cx, p.y as f64 - cy]).collect();
    let vals: Vec<f64> = points.iter().map(|&p| field.get(p) as f64).collect();
    let design = DMatrix::from_fn(rows.len(), 6, |i, j| {
        let [x, y] = rows[i];
        [0.5 * x * x, x * y, 0.5 * y * y, x, y, 1.0][j]
    });
    let coef = lstsq(&design, &DVector::from_vec(vals.clone()))?;
    let round = |v: f64| {
        let (p, q) = round_to_small_rational(v, FIT_MAX_DENOMINATOR);
        rat(p, q)
    };
    let p = [[round(coef[0]), round(coef[1])], [round(coef[1]), round(coef[2])]];
    let pf = p.each_ref().map(|r| r.each_ref().map(to_f64));
    // refit the affine part with P fixed
    let rest: Vec<f64> = rows
        .iter()
        .zip(&vals)
        .map(|([x, y], v)| v - 0.5 * (pf[0][0] * x * x + 2.0 * pf[0][1] * x * y + pf[1][1] * y * y))
        .collect();
    let affine = DMatrix::from_fn(rows.len(), 3, |i, j| [rows[i][0], rows[i][1], 1.0][j]);
    let beta = lstsq(&affine, &DVector::from_vec(rest.clone()))?;
    let residual = rows
        .iter()
        .zip(&rest)
        .map(|([x, y], r)| (r - beta[0] * x - beta[1] * y - beta[2]).abs())
        .fold(0.0, f64::max);
    // back to lattice coordinates: x = ξ + center
    let b = [beta[0] - pf[0][0] * cx - pf[0][1] * cy, beta[1] - pf[1][0] * cx - pf[1][1] * cy];
    let c = beta[2] - beta[0] * cx - beta[1] * cy + 0.5 * (pf[0][0] * cx * cx + 2.0 * pf[0][1] * cx * cy + pf[1][1] * cy * cy);
    Ok(QuadraticFit { p, b, c, residual })
}

fn lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin <= smax * 1e-10 {
        return Err(Error::domain("design matrix is rank deficient"));
    }
    svd.solve(y, 0.0).map_err(|e| Error::domain(format!("least squares failed: {e}")))
}

/// Whether every entry is zero.
pub fn is_zero_matrix(p: &[[Rat; 2]; 2]) -> bool {
    p.iter().flatten().all(Zero::is_zero)
}
