//! Exact piecewise-quadratic supersolutions on the square `(-1,1)^2`.
//!
//! Gradients are assembled on `(0,1)^2` from affine maps interpolating an
//! iterated family of triangles. Layers are painted in order (the base map,
//! then the `w` family at depths `0..n`, then the `z` family at depth `n`),
//! later layers overwriting earlier ones. Values come from integrating the
//! gradient to the edge `x1 = 1`, where the supersolution vanishes, and the
//! function is extended to the other quadrants by reflection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{fmt_rat, half, int, rat, to_f64, Rat};
use crate::formats::RealField;
use crate::grid::{LatticePoint, ShapeSpec, Window};

pub const MAX_DEPTH: usize = 12;

/// A complex number with exact rational parts, used as a point of the plane.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CxPoint {
    pub re: Rat,
    pub im: Rat,
}

impl CxPoint {
    pub fn new(re: Rat, im: Rat) -> Self {
        CxPoint { re, im }
    }

    pub fn int(re: i64, im: i64) -> Self {
        CxPoint::new(int(re), int(im))
    }

    pub fn conj(&self) -> CxPoint {
        CxPoint::new(self.re.clone(), -&self.im)
    }

    pub fn scale(&self, k: &Rat) -> CxPoint {
        CxPoint::new(&self.re * k, &self.im * k)
    }

    pub fn to_f64(&self) -> [f64; 2] {
        [to_f64(&self.re), to_f64(&self.im)]
    }
}

impl Add for &CxPoint {
    type Output = CxPoint;
    fn add(self, o: &CxPoint) -> CxPoint {
        CxPoint::new(&self.re + &o.re, &self.im + &o.im)
    }
}

impl Sub for &CxPoint {
    type Output = CxPoint;
    fn sub(self, o: &CxPoint) -> CxPoint {
        CxPoint::new(&self.re - &o.re, &self.im - &o.im)
    }
}

impl Mul for &CxPoint {
    type Output = CxPoint;
    fn mul(self, o: &CxPoint) -> CxPoint {
        CxPoint::new(&self.re * &o.re - &self.im * &o.im, &self.re * &o.im + &self.im * &o.re)
    }
}

impl fmt::Display for CxPoint {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "({}, {})", fmt_rat(&self.re), fmt_rat(&self.im))
    }
}

fn cross(a: &CxPoint, b: &CxPoint) -> Rat {
    &a.re * &b.im - &a.im * &b.re
}

/// Twice the signed area of the triangle.
fn orient(a: &CxPoint, b: &CxPoint, c: &CxPoint) -> Rat {
    cross(&(b - a), &(c - a))
}

/// Sign of [`orient`], decided in floating point when the result is clearly
/// away from zero and exactly otherwise.
fn orient_sign(a: &CxPoint, b: &CxPoint, c: &CxPoint) -> Ordering {
    let ([ax, ay], [bx, by], [cx, cy]) = (a.to_f64(), b.to_f64(), c.to_f64());
    let (ux, uy, vx, vy) = (bx - ax, by - ay, cx - ax, cy - ay);
    let approx = ux * vy - uy * vx;
    let bound = 1e-12 * (ux.abs() * vy.abs() + uy.abs() * vx.abs() + ax.abs() + ay.abs() + bx.abs() + by.abs() + cx.abs() + cy.abs());
    if approx.abs() > bound {
        return approx.partial_cmp(&0.0).unwrap();
    }
    orient_small(a, b, c).unwrap_or_else(|| orient(a, b, c).cmp(&Rat::zero()))
}

/// Exact orientation sign over a common denominator when everything fits in machine integers.
fn orient_small(a: &CxPoint, b: &CxPoint, c: &CxPoint) -> Option<Ordering> {
    let (_, v) = common_scale([a, b, c])?;
    let (ux, uy, vx, vy) = (v[1][0] - v[0][0], v[1][1] - v[0][1], v[2][0] - v[0][0], v[2][1] - v[0][1]);
    Some(ux.checked_mul(vy)?.checked_sub(uy.checked_mul(vx)?)?.cmp(&0))
}

pub type Triple = [CxPoint; 3];

/// 3x3 complex matrix acting on vertex triples.
#[derive(Debug, Clone)]
struct CxMat3([[CxPoint; 3]; 3]);

impl CxMat3 {
    fn third(rows: [[(i64, i64); 3]; 3]) -> CxMat3 {
        let t = rat(1, 3);
        CxMat3(rows.map(|r| r.map(|(a, b)| CxPoint::int(a, b).scale(&t))))
    }

    fn conj(&self) -> CxMat3 {
        CxMat3(self.0.clone().map(|r| r.map(|c| c.conj())))
    }

    fn apply(&self, v: &Triple) -> Triple {
        std::array::from_fn(|i| {
            let row = &self.0[i];
            let s = &(&row[0] * &v[0]) + &(&row[1] * &v[1]);
            &s + &(&row[2] * &v[2])
        })
    }
}

fn q_matrix() -> CxMat3 {
    CxMat3::third([[(3, 0), (0, 0), (0, 0)], [(1, 1), (1, -1), (1, 0)], [(1, -1), (1, 0), (1, 1)]])
}

fn s_matrix() -> CxMat3 {
    CxMat3::third([[(1, 0), (1, 1), (1, -1)], [(1, -1), (1, 0), (1, 1)], [(1, 1), (1, -1), (1, 0)]])
}

/// Cyclic vertex shift applied `k` times: `(z1, z2, z3) -> (z2, z3, z1)`.
fn rotate(v: &Triple, k: u8) -> Triple {
    let k = (k % 3) as usize;
    std::array::from_fn(|i| v[(i + k) % 3].clone())
}

/// Root triangle `(1, 1+i, i)` and its gradient images `(0, -1, i)`.
pub fn root_data() -> (Triple, Triple) {
    (
        [CxPoint::int(1, 0), CxPoint::int(1, 1), CxPoint::int(0, 1)],
        [CxPoint::int(0, 0), CxPoint::int(-1, 0), CxPoint::int(0, 1)],
    )
}

/// Child `k` of a triangle pair: `(Q R^k z, conj(Q) R^k a)`.
pub fn child(z: &Triple, a: &Triple, k: u8) -> (Triple, Triple) {
    let q = q_matrix();
    (q.apply(&rotate(z, k)), q.conj().apply(&rotate(a, k)))
}

/// The `w` triangle attached to a `z` triangle: `(S z, conj(S) a)`.
pub fn inner(z: &Triple, a: &Triple) -> (Triple, Triple) {
    let s = s_matrix();
    (s.apply(z), s.conj().apply(a))
}

/// Address of a triangle in the iterated function system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct IfsWord(pub Vec<u8>);

impl IfsWord {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&self, k: u8) -> IfsWord {
        let mut v = self.0.clone();
        v.push(k);
        IfsWord(v)
    }
}

impl fmt::Display for IfsWord {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        for d in &self.0 {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Z,
    W,
}

/// `x -> m x + t` on the plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Affine {
    pub m: [[Rat; 2]; 2],
    pub t: [Rat; 2],
}

impl Affine {
    pub fn apply(&self, x: &CxPoint) -> CxPoint {
        CxPoint::new(
            &self.m[0][0] * &x.re + &self.m[0][1] * &x.im + &self.t[0],
            &self.m[1][0] * &x.re + &self.m[1][1] * &x.im + &self.t[1],
        )
    }

    pub fn is_symmetric(&self) -> bool {
        self.m[0][1] == self.m[1][0]
    }

    /// The affine map sending `z_k` to `a_k`.
    pub fn interpolating(z: &Triple, a: &Triple) -> Result<Affine> {
        let d1 = &z[1] - &z[0];
        let d2 = &z[2] - &z[0];
        let det = cross(&d1, &d2);
        if det.is_zero() {
            return Err(Error::domain("degenerate triangle"));
        }
        let e1 = &a[1] - &a[0];
        let e2 = &a[2] - &a[0];
        // M [d1 d2] = [e1 e2]  =>  M = [e1 e2] [d1 d2]^{-1}
        let inv = [[&d2.im / &det, -(&d2.re / &det)], [-(&d1.im / &det), &d1.re / &det]];
        let m = [
            [&e1.re * &inv[0][0] + &e2.re * &inv[1][0], &e1.re * &inv[0][1] + &e2.re * &inv[1][1]],
            [&e1.im * &inv[0][0] + &e2.im * &inv[1][0], &e1.im * &inv[0][1] + &e2.im * &inv[1][1]],
        ];
        let t = [
            &a[0].re - (&m[0][0] * &z[0].re + &m[0][1] * &z[0].im),
            &a[0].im - (&m[1][0] * &z[0].re + &m[1][1] * &z[0].im),
        ];
        Ok(Affine { m, t })
    }
}

/// Barycentric coordinates of `x` with respect to a non-degenerate triangle.
fn barycentric(z: &Triple, x: &CxPoint) -> Result<[Rat; 3]> {
    let total = orient(&z[0], &z[1], &z[2]);
    if total.is_zero() {
        return Err(Error::domain("degenerate triangle"));
    }
    let t1 = orient(x, &z[1], &z[2]) / &total;
    let t2 = orient(&z[0], x, &z[2]) / &total;
    let t3 = Rat::one() - &t1 - &t2;
    Ok([t1, t2, t3])
}

/// Barycentric interpolation of `z_k -> a_k` evaluated at `x` in the closed triangle.
pub fn interpolate(z: &Triple, a: &Triple, x: &CxPoint) -> Result<CxPoint> {
    let t = barycentric(z, x)?;
    if t.iter().any(|c| c.is_negative()) {
        return Err(Error::domain(format!("{x} lies outside the triangle")));
    }
    let sum = &(&a[0].scale(&t[0]) + &a[1].scale(&t[1])) + &a[2].scale(&t[2]);
    Ok(sum)
}

/// Bounding box in floats, padded outward so exact containment implies box containment.
type Bbox = [f64; 4];

fn bbox_of<'a>(pts: impl IntoIterator<Item = &'a CxPoint>) -> Bbox {
    const PAD: f64 = 1e-9;
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in pts {
        let [x, y] = p.to_f64();
        b[0] = b[0].min(x - PAD);
        b[1] = b[1].min(y - PAD);
        b[2] = b[2].max(x + PAD);
        b[3] = b[3].max(y + PAD);
    }
    b
}

fn bbox_contains(b: &Bbox, x: [f64; 2]) -> bool {
    x[0] >= b[0] && x[0] <= b[2] && x[1] >= b[1] && x[1] <= b[3]
}

fn bbox_overlap(a: &Bbox, b: &Bbox) -> bool {
    a[0] <= b[2] && b[0] <= a[2] && a[1] <= b[3] && b[1] <= a[3]
}

/// One interpolated gradient patch.
#[derive(Debug, Clone)]
pub struct TriangleMap {
    pub z: Triple,
    pub a: Triple,
    pub word: IfsWord,
    pub family: Family,
    pub affine: Affine,
    /// `z` reordered counter-clockwise.
    ccw: Triple,
    bbox: Bbox,
}

impl TriangleMap {
    pub fn new(z: Triple, a: Triple, word: IfsWord, family: Family) -> Result<TriangleMap> {
        let affine = Affine::interpolating(&z, &a)?;
        if !affine.is_symmetric() {
            return Err(Error::domain(format!("gradient of {family:?}-patch {word} is not symmetric")));
        }
        let mut ccw = z.clone();
        if orient(&ccw[0], &ccw[1], &ccw[2]).is_negative() {
            ccw.swap(1, 2);
        }
        let bbox = bbox_of(&z);
        Ok(TriangleMap { z, a, word, family, affine, ccw, bbox })
    }

    /// Closed-triangle membership.
    pub fn contains(&self, x: &CxPoint) -> bool {
        if !bbox_contains(&self.bbox, x.to_f64()) {
            return false;
        }
        let c = &self.ccw;
        (0..3).all(|e| orient_sign(&c[e], &c[(e + 1) % 3], x) != Ordering::Less)
    }

    /// Hessian of the supersolution on this patch: gradient of the map plus `diag(1, 0)`.
    pub fn hessian(&self) -> [[Rat; 2]; 2] {
        hessian_of(&self.affine)
    }

    pub fn area(&self) -> Rat {
        orient(&self.ccw[0], &self.ccw[1], &self.ccw[2]) / int(2)
    }

    pub fn ccw_vertices(&self) -> &Triple {
        &self.ccw
    }
}

fn hessian_of(a: &Affine) -> [[Rat; 2]; 2] {
    [[&a.m[0][0] + Rat::one(), a.m[0][1].clone()], [a.m[1][0].clone(), a.m[1][1].clone()]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    /// `w` family with words of the given length.
    W(usize),
    /// `z` family at the full depth.
    Z,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    /// Sorted by word; within a layer the largest containing word wins.
    pub maps: Vec<TriangleMap>,
}

/// Identifies the patch that owns a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PieceRef {
    Base,
    Map { layer: usize, index: usize },
}

/// Uniform bucket grid over the unit square for bounding-box queries.
#[derive(Debug, Clone)]
struct Buckets {
    k: usize,
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    /// Grid sized for roughly `items` entries.
    fn new(items: usize) -> Self {
        let k = ((items as f64).sqrt().ceil() as usize).clamp(16, 512);
        Buckets { k, cells: vec![Vec::new(); k * k] }
    }

    fn range(&self, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
        let k = self.k;
        let f = |v: f64| ((v * k as f64).floor().max(0.0) as usize).min(k - 1);
        f(lo)..=f(hi)
    }

    fn insert(&mut self, id: u32, b: &Bbox) {
        for j in self.range(b[1], b[3]) {
            for i in self.range(b[0], b[2]) {
                self.cells[j * self.k + i].push(id);
            }
        }
    }

    fn at(&self, x: [f64; 2]) -> &[u32] {
        let i = *self.range(x[0], x[0]).start();
        let j = *self.range(x[1], x[1]).start();
        &self.cells[j * self.k + i]
    }

    fn query(&self, b: &Bbox) -> Vec<u32> {
        let mut out = Vec::new();
        for j in self.range(b[1], b[3]) {
            for i in self.range(b[0], b[2]) {
                out.extend_from_slice(&self.cells[j * self.k + i]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// The depth-`n` supersolution: base map, `w` layers and the final `z` layer.
#[derive(Debug)]
pub struct SuperSolution {
    depth: usize,
    base: Affine,
    layers: Vec<Layer>,
    /// Per layer: map indices by bucket.
    index: Vec<Buckets>,
    partition: OnceLock<Partition>,
    pieces: OnceLock<Vec<QuadraticPiece>>,
}

/// All triangle maps for words of length up to `depth`.
pub fn ifs_generate(depth: usize) -> Result<SuperSolution> {
    if depth > MAX_DEPTH {
        return Err(Error::domain(format!("depth {depth} exceeds the cap of {MAX_DEPTH}")));
    }
    let mut level: Vec<(IfsWord, Triple, Triple)> = {
        let (z, a) = root_data();
        vec![(IfsWord::default(), z, a)]
    };
    let mut layers = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        if k == depth {
            let maps = level
                .iter()
                .map(|(s, z, a)| TriangleMap::new(z.clone(), a.clone(), s.clone(), Family::Z))
                .collect::<Result<Vec<_>>>()?;
            layers.push(Layer { kind: LayerKind::Z, maps });
            break;
        }
        let maps = level
            .iter()
            .map(|(s, z, a)| {
                let (w, b) = inner(z, a);
                TriangleMap::new(w, b, s.clone(), Family::W)
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer { kind: LayerKind::W(k), maps });
        level = level
            .iter()
            .flat_map(|(s, z, a)| {
                (1..=3u8).map(move |c| {
                    let (zc, ac) = child(z, a, c);
                    (s.push(c), zc, ac)
                })
            })
            .collect();
    }
    for layer in &mut layers {
        layer.maps.sort_by(|a, b| a.word.cmp(&b.word));
    }
    let index = layers
        .iter()
        .map(|l| {
            let mut b = Buckets::new(l.maps.len());
            for (i, m) in l.maps.iter().enumerate() {
                b.insert(i as u32, &m.bbox);
            }
            b
        })
        .collect();
    let base = Affine { m: [[int(0), int(0)], [int(0), int(1)]], t: [int(0), int(0)] };
    Ok(SuperSolution { depth, base, layers, index, partition: OnceLock::new(), pieces: OnceLock::new() })
}

/// Folds a point into the closed first quadrant, returning the signs used.
fn fold(x: &CxPoint) -> (CxPoint, [bool; 2]) {
    let neg = [x.re.is_negative(), x.im.is_negative()];
    (CxPoint::new(x.re.abs(), x.im.abs()), neg)
}

impl SuperSolution {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn base(&self) -> &Affine {
        &self.base
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Every triangle map in painting order.
    pub fn maps(&self) -> impl Iterator<Item = (PieceRef, &TriangleMap)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| layer.maps.iter().enumerate().map(move |(i, m)| (PieceRef::Map { layer: l, index: i }, m)))
    }

    pub fn map(&self, r: PieceRef) -> Option<&TriangleMap> {
        match r {
            PieceRef::Base => None,
            PieceRef::Map { layer, index } => Some(&self.layers[layer].maps[index]),
        }
    }

    pub fn affine(&self, r: PieceRef) -> &Affine {
        self.map(r).map_or(&self.base, |m| &m.affine)
    }

    /// Patch owning `x` in the closed unit square: last layer first, largest word
    /// first within a layer, falling back to the base map.
    pub fn owner(&self, x: &CxPoint) -> PieceRef {
        let xf = x.to_f64();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for &i in self.index[l].at(xf).iter().rev() {
                if layer.maps[i as usize].contains(x) {
                    return PieceRef::Map { layer: l, index: i as usize };
                }
            }
        }
        PieceRef::Base
    }

    /// `G_n(x)` on the closed unit square.
    pub fn g(&self, x: &CxPoint) -> CxPoint {
        self.affine(self.owner(x)).apply(x)
    }

    /// Gradient of the supersolution at any point of the plane.
    pub fn gradient_at(&self, x: &CxPoint) -> CxPoint {
        let (y, neg) = fold(x);
        if y.re > int(1) || y.im > int(1) {
            return CxPoint::default();
        }
        let mut g = self.g(&y);
        g.re += &y.re;
        if neg[0] {
            g.re = -g.re;
        }
        if neg[1] {
            g.im = -g.im;
        }
        g
    }

    /// Exact value by integrating `∂/∂x1` along the horizontal segment from `x` to
    /// the edge `x1 = 1`. The integrand is affine between consecutive crossings
    /// with patch edges, so the trapezoid rule is exact on each piece.
    pub fn value_at(&self, x: &CxPoint) -> Rat {
        let (y, _) = fold(x);
        let one = int(1);
        if y.re >= one || y.im >= one {
            return Rat::zero();
        }
        let h = &y.im;
        let hf = to_f64(h);
        let mut cuts = vec![y.re.clone(), one.clone()];
        let seg = [to_f64(&y.re) - 1e-9, hf - 1e-9, 1.0 + 1e-9, hf + 1e-9];
        let candidates = self
            .layers
            .iter()
            .zip(&self.index)
            .flat_map(|(layer, idx)| idx.query(&seg).into_iter().map(move |i| &layer.maps[i as usize]));
        for m in candidates {
            if hf < m.bbox[1] || hf > m.bbox[3] {
                continue;
            }
            for e in 0..3 {
                let (p, q) = (&m.z[e], &m.z[(e + 1) % 3]);
                let (dp, dq) = (&p.im - h, &q.im - h);
                if dp.is_zero() {
                    cuts.push(p.re.clone());
                }
                if dp.is_zero() && dq.is_zero() {
                    cuts.push(q.re.clone());
                } else if (dp.is_positive() && dq.is_negative()) || (dp.is_negative() && dq.is_positive()) {
                    cuts.push(&p.re + (&q.re - &p.re) * (&dp / (&dp - &dq)));
                }
            }
        }
        cuts.retain(|t| *t >= y.re && *t <= one);
        cuts.sort();
        cuts.dedup();
        let mut total = Rat::zero();
        for w in cuts.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let mid = CxPoint::new((a + b) * half(), h.clone());
            let aff = self.affine(self.owner(&mid));
            let g1 = |t: &Rat| &aff.m[0][0] * t + &aff.m[0][1] * h + &aff.t[0] + t;
            total += (b - a) * (g1(a) + g1(b)) * half();
        }
        -total
    }

    /// Visible decomposition of the unit square by owning patch (computed once).
    pub fn partition(&self) -> &Partition {
        self.partition.get_or_init(|| Partition::paint(self))
    }

    /// One quadratic per patch with nonempty visible area, in painting order (computed once).
    pub fn pieces(&self) -> &[QuadraticPiece] {
        self.pieces.get_or_init(|| self.build_pieces())
    }

    fn build_pieces(&self) -> Vec<QuadraticPiece> {
        let part = self.partition();
        let mut by_owner: BTreeMap<PieceRef, Vec<usize>> = BTreeMap::new();
        for (i, c) in part.cells.iter().enumerate() {
            by_owner.entry(c.owner).or_default().push(i);
        }
        let owners: Vec<PieceRef> = by_owner.keys().copied().collect();
        let slot: BTreeMap<PieceRef, usize> = owners.iter().enumerate().map(|(i, &o)| (o, i)).collect();
        let hess: Vec<([[Rat; 2]; 2], [Rat; 2])> = owners
            .iter()
            .map(|&o| {
                let aff = self.affine(o);
                (hessian_of(aff), aff.t.clone())
            })
            .collect();

        // One exact integral fixes the constant of the first piece; continuity of
        // the value across shared cell edges fixes the rest.
        let mut cs: Vec<Option<Rat>> = vec![None; owners.len()];
        let mut queue = std::collections::VecDeque::new();
        for start in 0..owners.len() {
            if cs[start].is_some() {
                continue;
            }
            let anchor = centroid(&part.cells[by_owner[&owners[start]][0]].polygon);
            let (p, b) = &hess[start];
            cs[start] = Some(self.value_at(&anchor) - quad_eval(p, b, &Rat::zero(), &anchor));
            queue.push_back(start);
            while let Some(k) = queue.pop_front() {
                let (p, b) = &hess[k];
                let c = cs[k].clone().unwrap();
                for &ci in &by_owner[&owners[k]] {
                    let poly = &part.cells[ci].polygon;
                    for e in 0..poly.len() {
                        let mid = (&poly[e] + &poly[(e + 1) % poly.len()]).scale(&half());
                        for other in part.cells_at_where(&mid, |c| cs[slot[&c.owner]].is_none()) {
                            let j = slot[&part.cells[other].owner];
                            if cs[j].is_none() {
                                let (pj, bj) = &hess[j];
                                cs[j] = Some(quad_eval(p, b, &c, &mid) - quad_eval(pj, bj, &Rat::zero(), &mid));
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }

        owners
            .iter()
            .zip(hess)
            .zip(cs)
            .map(|((&owner, (p, b)), c)| {
                let cells = &by_owner[&owner];
                let area: Rat = cells.iter().map(|&i| part.cells[i].area.clone()).sum();
                let (word, family, layer, vertices) = match (owner, self.map(owner)) {
                    (PieceRef::Map { layer, .. }, Some(m)) => {
                        let fam = match m.family {
                            Family::Z => PieceFamily::Z,
                            Family::W => PieceFamily::W,
                        };
                        (m.word.clone(), fam, layer as i64, m.z.to_vec())
                    }
                    _ => (IfsWord::default(), PieceFamily::Base, -1, unit_square()),
                };
                QuadraticPiece {
                    owner,
                    word,
                    family,
                    layer,
                    vertices,
                    p,
                    b,
                    c: c.unwrap(),
                    area,
                    polygons: cells.iter().map(|&i| part.cells[i].polygon.clone()).collect(),
                }
            })
            .collect()
    }
}

fn quad_eval(p: &[[Rat; 2]; 2], b: &[Rat; 2], c: &Rat, x: &CxPoint) -> Rat {
    let q = &p[0][0] * &x.re * &x.re + int(2) * &p[0][1] * &x.re * &x.im + &p[1][1] * &x.im * &x.im;
    q * half() + &b[0] * &x.re + &b[1] * &x.im + c
}

fn unit_square() -> Vec<CxPoint> {
    vec![CxPoint::int(0, 0), CxPoint::int(1, 0), CxPoint::int(1, 1), CxPoint::int(0, 1)]
}

fn centroid(poly: &[CxPoint]) -> CxPoint {
    let k = int(poly.len() as i64);
    let s = poly.iter().fold(CxPoint::default(), |acc, p| &acc + p);
    CxPoint::new(s.re / &k, s.im / &k)
}

fn polygon_area(poly: &[CxPoint]) -> Rat {
    let k = poly.len();
    (0..k).fold(Rat::zero(), |acc, i| acc + cross(&poly[i], &poly[(i + 1) % k])) / int(2)
}

/// Keeps the part of a convex polygon where `side * orient(a, b, x) >= 0`.
fn clip(poly: &[CxPoint], a: &CxPoint, b: &CxPoint, side: i32) -> Vec<CxPoint> {
    let sign: Vec<Ordering> = poly
        .iter()
        .map(|x| {
            let o = orient_sign(a, b, x);
            if side < 0 {
                o.reverse()
            } else {
                o
            }
        })
        .collect();
    if sign.iter().all(|&o| o != Ordering::Less) {
        return poly.to_vec();
    }
    if sign.iter().all(|&o| o != Ordering::Greater) {
        return poly.iter().zip(&sign).filter(|(_, &o)| o == Ordering::Equal).map(|(p, _)| p.clone()).collect();
    }
    let k = poly.len();
    let mut out: Vec<CxPoint> = Vec::with_capacity(k + 1);
    for i in 0..k {
        let j = (i + 1) % k;
        if sign[i] != Ordering::Less {
            out.push(poly[i].clone());
        }
        if sign[i] != Ordering::Equal && sign[j] != Ordering::Equal && sign[i] != sign[j] {
            out.push(crossing_small(a, b, &poly[i], &poly[j]).unwrap_or_else(|| {
                let (di, dj) = (orient(a, b, &poly[i]), orient(a, b, &poly[j]));
                let t = &di / (&di - &dj);
                &poly[i] + &(&poly[j] - &poly[i]).scale(&t)
            }));
        }
    }
    out.dedup();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

/// Scales points to integers over a common denominator when that stays small.
fn common_scale<const K: usize>(pts: [&CxPoint; K]) -> Option<(i64, Vec<[i128; 2]>)> {
    use num_integer::Integer;
    use num_traits::ToPrimitive;
    let mut den: i64 = 1;
    for p in pts {
        for r in [&p.re, &p.im] {
            den = den.lcm(&r.denom().to_i64()?);
            if den > 1 << 40 {
                return None;
            }
        }
    }
    let scale = |r: &Rat| -> Option<i128> {
        let v = r.numer().to_i64()?.checked_mul(den / r.denom().to_i64()?)?;
        (v.unsigned_abs() <= 1 << 60).then_some(v as i128)
    };
    let v = pts.iter().map(|p| Some([scale(&p.re)?, scale(&p.im)?])).collect::<Option<Vec<_>>>()?;
    Some((den, v))
}

/// Intersection of segment `pq` with line `ab` in machine integers, if they fit.
fn crossing_small(a: &CxPoint, b: &CxPoint, p: &CxPoint, q: &CxPoint) -> Option<CxPoint> {
    let (den, v) = common_scale([a, b, p, q])?;
    let o = |x: [i128; 2]| -> Option<i128> {
        let (ux, uy, vx, vy) = (v[1][0] - v[0][0], v[1][1] - v[0][1], x[0] - v[0][0], x[1] - v[0][1]);
        ux.checked_mul(vy)?.checked_sub(uy.checked_mul(vx)?)
    };
    let (di, dj) = (o(v[2])?, o(v[3])?);
    let w = di.checked_sub(dj)?;
    // p + (q - p) di / (di - dj), all over den
    let coord = |k: usize| -> Option<Rat> {
        let num = v[2][k].checked_mul(w)?.checked_add((v[3][k] - v[2][k]).checked_mul(di)?)?;
        let d = w.checked_mul(den as i128)?;
        Some(Rat::new(num.into(), d.into()))
    };
    Some(CxPoint::new(coord(0)?, coord(1)?))
}

/// Whether a convex polygon (without repeated vertices) has positive area.
fn has_area(poly: &[CxPoint]) -> bool {
    poly.len() >= 3 && (2..poly.len()).any(|i| orient_sign(&poly[0], &poly[i - 1], &poly[i]) == Ordering::Greater)
}

/// A convex visible region owned by one patch.
#[derive(Debug, Clone)]
pub struct Cell {
    pub owner: PieceRef,
    /// Counter-clockwise vertices.
    pub polygon: Vec<CxPoint>,
    pub area: Rat,
    bbox: Bbox,
}

/// Decomposition of `[0,1]^2` into convex cells after all overwrites.
#[derive(Debug, Clone)]
pub struct Partition {
    pub cells: Vec<Cell>,
    index: Buckets,
}

impl Partition {
    fn paint(ss: &SuperSolution) -> Partition {
        let square = unit_square();
        let mut cells: Vec<Option<Cell>> =
            vec![Some(Cell { owner: PieceRef::Base, bbox: bbox_of(&square), area: int(1), polygon: square })];
        let mut index = Buckets::new(8 * ss.maps().count());
        index.insert(0, &cells[0].as_ref().unwrap().bbox);
        for (owner, m) in ss.maps() {
            let tri = m.ccw_vertices();
            for id in index.query(&m.bbox) {
                let Some(cell) = &cells[id as usize] else { continue };
                if !bbox_overlap(&cell.bbox, &m.bbox) {
                    continue;
                }
                let mut inside = cell.polygon.clone();
                for e in 0..3 {
                    inside = clip(&inside, &tri[e], &tri[(e + 1) % 3], 1);
                    if inside.len() < 3 {
                        break;
                    }
                }
                if !has_area(&inside) {
                    continue;
                }
                // split the rest of the cell into convex pieces outside each edge in turn
                let mut rest = cell.polygon.clone();
                let mut pieces = Vec::new();
                for e in 0..3 {
                    let out = clip(&rest, &tri[e], &tri[(e + 1) % 3], -1);
                    if has_area(&out) {
                        pieces.push(out);
                    }
                    rest = clip(&rest, &tri[e], &tri[(e + 1) % 3], 1);
                    if rest.len() < 3 {
                        break;
                    }
                }
                let old_owner = cell.owner;
                cells[id as usize] = None;
                let mut add = |owner: PieceRef, polygon: Vec<CxPoint>| {
                    let area = polygon_area(&polygon);
                    let bbox = bbox_of(&polygon);
                    index.insert(cells.len() as u32, &bbox);
                    cells.push(Some(Cell { owner, polygon, area, bbox }));
                };
                for p in pieces {
                    add(old_owner, p);
                }
                add(owner, inside);
            }
        }
        let cells: Vec<Cell> = cells.into_iter().flatten().collect();
        let mut index = Buckets::new(cells.len());
        for (i, c) in cells.iter().enumerate() {
            index.insert(i as u32, &c.bbox);
        }
        Partition { cells, index }
    }

    /// Cells whose closure contains `x`.
    pub fn cells_at(&self, x: &CxPoint) -> Vec<usize> {
        self.cells_at_where(x, |_| true)
    }

    /// Cells accepted by `keep` whose closure contains `x`.
    fn cells_at_where(&self, x: &CxPoint, keep: impl Fn(&Cell) -> bool) -> Vec<usize> {
        let xf = x.to_f64();
        self.index
            .at(xf)
            .iter()
            .map(|&i| i as usize)
            .filter(|&i| keep(&self.cells[i]) && bbox_contains(&self.cells[i].bbox, xf))
            .filter(|&i| {
                let poly = &self.cells[i].polygon;
                let k = poly.len();
                (0..k).all(|e| orient_sign(&poly[e], &poly[(e + 1) % k], x) != Ordering::Less)
            })
            .collect()
    }

    pub fn total_area(&self) -> Rat {
        self.cells.iter().map(|c| c.area.clone()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PieceFamily {
    Base,
    W,
    Z,
}

/// `½ x·P x + b·x + c` on the visible region of one patch.
#[derive(Debug, Clone)]
pub struct QuadraticPiece {
    pub owner: PieceRef,
    pub word: IfsWord,
    pub family: PieceFamily,
    /// Painting layer, `-1` for the base map.
    pub layer: i64,
    /// Triangle (or the unit square for the base map).
    pub vertices: Vec<CxPoint>,
    pub p: [[Rat; 2]; 2],
    pub b: [Rat; 2],
    pub c: Rat,
    /// Visible area after all overwrites.
    pub area: Rat,
    pub polygons: Vec<Vec<CxPoint>>,
}

impl QuadraticPiece {
    pub fn trace(&self) -> Rat {
        &self.p[0][0] + &self.p[1][1]
    }

    pub fn eval(&self, x: &CxPoint) -> Rat {
        quad_eval(&self.p, &self.b, &self.c, x)
    }

    pub fn to_json(&self) -> PieceJson {
        let s = |r: &Rat| fmt_rat(r);
        PieceJson {
            word: self.word.to_string(),
            family: self.family,
            layer: self.layer,
            p: self.p.each_ref().map(|r| r.each_ref().map(s)),
            b: self.b.each_ref().map(s),
            c: s(&self.c),
            area: s(&self.area),
            vertices: self.vertices.iter().map(|v| [s(&v.re), s(&v.im)]).collect(),
        }
    }
}

/// Serialized piece, rationals as `"p/q"` strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceJson {
    pub word: String,
    pub family: PieceFamily,
    pub layer: i64,
    #[serde(rename = "P")]
    pub p: [[String; 2]; 2],
    pub b: [String; 2],
    pub c: String,
    pub area: String,
    pub vertices: Vec<[String; 2]>,
}

/// Maps lattice points of a scaled square domain to the reference square `(-1,1)^2`.
///
/// A lattice point `p` corresponds to `x = (p/n - center) / half`, and the
/// lattice solution is compared against `(n·half)^2 · v(x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub n: i64,
    pub center: [Rat; 2],
    pub half: Rat,
}

impl Frame {
    /// The reference square itself scaled by `n`: `x = p / n`.
    pub fn centered(n: i64) -> Frame {
        Frame { n, center: [Rat::zero(), Rat::zero()], half: Rat::one() }
    }

    pub fn for_shape(shape: &ShapeSpec, n: i64) -> Result<Frame> {
        let (center, half) =
            shape.as_square().ok_or_else(|| Error::domain("continuum comparison needs an axis-aligned square domain"))?;
        Ok(Frame { n, center, half })
    }

    pub fn to_reference(&self, p: LatticePoint) -> CxPoint {
        let n = int(self.n);
        CxPoint::new((int(p.x) / &n - &self.center[0]) / &self.half, (int(p.y) / &n - &self.center[1]) / &self.half)
    }

    pub fn to_reference_f64(&self, p: LatticePoint) -> [f64; 2] {
        let n = self.n as f64;
        let h = to_f64(&self.half);
        [(p.x as f64 / n - to_f64(&self.center[0])) / h, (p.y as f64 / n - to_f64(&self.center[1])) / h]
    }

    pub fn value_scale(&self) -> Rat {
        let s = int(self.n) * &self.half;
        &s * &s
    }
}

/// Float evaluator for the supersolution built from its visible pieces.
#[derive(Debug, Clone)]
pub struct PieceEvaluator {
    cells: Vec<(Vec<[f64; 2]>, usize)>,
    quads: Vec<[f64; 6]>,
    index: Buckets,
}

impl PieceEvaluator {
    pub fn new(pieces: &[QuadraticPiece]) -> PieceEvaluator {
        let f = to_f64;
        let quads = pieces
            .iter()
            .map(|p| [f(&p.p[0][0]), f(&p.p[0][1]), f(&p.p[1][1]), f(&p.b[0]), f(&p.b[1]), f(&p.c)])
            .collect();
        let cells: Vec<(Vec<[f64; 2]>, usize)> = pieces
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.polygons.iter().map(move |poly| (poly.iter().map(CxPoint::to_f64).collect(), k)))
            .collect();
        let mut index = Buckets::new(cells.len());
        for (i, (poly, _)) in cells.iter().enumerate() {
            let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for v in poly {
                b = [b[0].min(v[0]), b[1].min(v[1]), b[2].max(v[0]), b[3].max(v[1])];
            }
            index.insert(i as u32, &[b[0] - 1e-9, b[1] - 1e-9, b[2] + 1e-9, b[3] + 1e-9]);
        }
        PieceEvaluator { cells, quads, index }
    }

    /// Piece whose cell contains `y` with the largest edge margin (robust on shared edges).
    fn locate(&self, y: [f64; 2]) -> usize {
        let mut best: Option<(f64, usize)> = None;
        for &id in self.index.at(y) {
            let (poly, k) = &self.cells[id as usize];
            let mut margin = f64::INFINITY;
            for e in 0..poly.len() {
                let a = poly[e];
                let b = poly[(e + 1) % poly.len()];
                let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                let l = (ex * ex + ey * ey).sqrt();
                margin = margin.min((ex * (y[1] - a[1]) - ey * (y[0] - a[0])) / l);
            }
            if best.is_none_or(|(m, _)| margin > m) {
                best = Some((margin, *k));
            }
        }
        best.expect("cells cover the unit square").1
    }

    /// Supersolution value at a point of the plane.
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let y = [x[0].abs(), x[1].abs()];
        if y[0] >= 1.0 || y[1] >= 1.0 {
            return 0.0;
        }
        let q = &self.quads[self.locate(y)];
        0.5 * (q[0] * y[0] * y[0] + 2.0 * q[1] * y[0] * y[1] + q[2] * y[1] * y[1]) + q[3] * y[0] + q[4] * y[1] + q[5]
    }

    /// Supersolution gradient at a point of the plane.
    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let y = [x[0].abs(), x[1].abs()];
        if y[0] > 1.0 || y[1] > 1.0 {
            return [0.0, 0.0];
        }
        let q = &self.quads[self.locate(y)];
        let g = [q[0] * y[0] + q[1] * y[1] + q[3], q[1] * y[0] + q[2] * y[1] + q[4]];
        [if x[0] < 0.0 { -g[0] } else { g[0] }, if x[1] < 0.0 { -g[1] } else { g[1] }]
    }
}

/// `(n·half)^2 · v(x(p))` at each lattice point of the window.
pub fn sample_field(eval: &PieceEvaluator, frame: &Frame, window: Window) -> RealField {
    let scale = to_f64(&frame.value_scale());
    let values = window.points().map(|p| scale * eval.value(frame.to_reference_f64(p))).collect();
    RealField::from_values(window, values).expect("window-sized")
}

/// Exact counterpart of [`sample_field`] at a single lattice point.
pub fn sample_exact(ss: &SuperSolution, frame: &Frame, p: LatticePoint) -> Rat {
    frame.value_scale() * ss.value_at(&frame.to_reference(p))
}

/// Compares gradients of all patches meeting at sampled points of shared edges.
///
/// For every layer, `per_layer` points are drawn on edges of visible cells owned by
/// that layer; at each point every cell whose closure contains it must give the
/// same `G_n` exactly. Returns `(points checked, mismatches)`.
pub fn gluing_check(ss: &SuperSolution, per_layer: usize, seed: u64) -> (usize, usize) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let part = ss.partition();
    let (mut checked, mut bad) = (0, 0);
    for l in 0..ss.layers.len() {
        let owned: Vec<&Cell> =
            part.cells.iter().filter(|c| matches!(c.owner, PieceRef::Map { layer, .. } if layer == l)).collect();
        if owned.is_empty() {
            continue;
        }
        let mut tries = 0;
        let mut done = 0;
        while done < per_layer && tries < per_layer * 20 {
            tries += 1;
            let cell = owned[rng.gen_range(0..owned.len())];
            let k = cell.polygon.len();
            let e = rng.gen_range(0..k);
            let (a, b) = (&cell.polygon[e], &cell.polygon[(e + 1) % k]);
            let t = rat(rng.gen_range(1..1000), 1000);
            let x = a + &(b - a).scale(&t);
            let owners = part.cells_at(&x);
            if owners.len() < 2 {
                continue;
            }
            done += 1;
            checked += 1;
            let g0 = ss.affine(part.cells[owners[0]].owner).apply(&x);
            if owners[1..].iter().any(|&o| ss.affine(part.cells[o].owner).apply(&x) != g0) {
                bad += 1;
            }
        }
    }
    (checked, bad)
}

/// Visible areas by family: `(w areas sorted decreasing, base area, z-layer area)`.
pub fn area_accounting(ss: &SuperSolution) -> (Vec<(IfsWord, Rat)>, Rat, Rat) {
    let mut w = Vec::new();
    let (mut base, mut z) = (Rat::zero(), Rat::zero());
    for p in ss.pieces() {
        match p.family {
            PieceFamily::W => w.push((p.word.clone(), p.area.clone())),
            PieceFamily::Base => base += &p.area,
            PieceFamily::Z => z += &p.area,
        }
    }
    w.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    (w, base, z)
}

/// Orders rationals, used to keep report ordering deterministic.
pub fn cmp_rat(a: &Rat, b: &Rat) -> Ordering {
    a.cmp(b)
}
