//! Lattice geometry, integer fields on finite windows, domain masks and the
//! five-point Laplacian.

use std::ops::{Add, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{int, Rat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct LatticePoint {
    pub x: i64,
    pub y: i64,
}

impl LatticePoint {
    pub const fn new(x: i64, y: i64) -> Self {
        LatticePoint { x, y }
    }

    pub const ORIGIN: LatticePoint = LatticePoint::new(0, 0);

    pub fn norm_sq(self) -> i64 {
        self.x * self.x + self.y * self.y
    }

    pub fn neighbors(self) -> [LatticePoint; 4] {
        let LatticePoint { x, y } = self;
        [
            LatticePoint::new(x + 1, y),
            LatticePoint::new(x - 1, y),
            LatticePoint::new(x, y + 1),
            LatticePoint::new(x, y - 1),
        ]
    }
}

impl Add for LatticePoint {
    type Output = LatticePoint;
    fn add(self, o: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(self, o: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for LatticePoint {
    type Output = LatticePoint;
    fn neg(self) -> LatticePoint {
        LatticePoint::new(-self.x, -self.y)
    }
}

/// Lattice offsets `z` with `|z| <= r` in the Euclidean norm, in row-major order.
pub fn ball_offsets(r: i64) -> Vec<LatticePoint> {
    let mut out = Vec::new();
    for y in -r..=r {
        for x in -r..=r {
            if x * x + y * y <= r * r {
                out.push(LatticePoint::new(x, y));
            }
        }
    }
    out
}

/// Axis-aligned rectangle of lattice cells `[x0, x0+width) x [y0, y0+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn new(x0: i64, y0: i64, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain(format!("window must be non-empty, got {width}x{height}")));
        }
        Ok(Window { x0, y0, width, height })
    }

    /// Smallest window containing both corners (inclusive).
    pub fn spanning(min: LatticePoint, max: LatticePoint) -> Result<Self> {
        if max.x < min.x || max.y < min.y {
            return Err(Error::domain("window corners out of order"));
        }
        Window::new(min.x, min.y, (max.x - min.x + 1) as usize, (max.y - min.y + 1) as usize)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x1(&self) -> i64 {
        self.x0 + self.width as i64
    }

    pub fn y1(&self) -> i64 {
        self.y0 + self.height as i64
    }

    pub fn contains(&self, p: LatticePoint) -> bool {
        p.x >= self.x0 && p.x < self.x1() && p.y >= self.y0 && p.y < self.y1()
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        other.x0 >= self.x0 && other.x1() <= self.x1() && other.y0 >= self.y0 && other.y1() <= self.y1()
    }

    #[inline]
    pub fn index(&self, p: LatticePoint) -> Option<usize> {
        if self.contains(p) {
            Some((p.y - self.y0) as usize * self.width + (p.x - self.x0) as usize)
        } else {
            None
        }
    }

    #[inline]
    pub fn point(&self, idx: usize) -> LatticePoint {
        LatticePoint::new(self.x0 + (idx % self.width) as i64, self.y0 + (idx / self.width) as i64)
    }

    /// Row-major iteration, rows in increasing y.
    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Grows (or, for negative `k`, shrinks) the window on every side.
    pub fn expand(&self, k: i64) -> Result<Window> {
        let w = self.width as i64 + 2 * k;
        let h = self.height as i64 + 2 * k;
        if w <= 0 || h <= 0 {
            return Err(Error::domain("window shrunk to nothing"));
        }
        Window::new(self.x0 - k, self.y0 - k, w as usize, h as usize)
    }
}

/// Integer function on the lattice, stored on a window and zero outside it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntField {
    window: Window,
    values: Vec<i64>,
}

impl IntField {
    pub fn zeros(window: Window) -> Self {
        IntField { values: vec![0; window.len()], window }
    }

    pub fn from_values(window: Window, values: Vec<i64>) -> Result<Self> {
        if values.len() != window.len() {
            return Err(Error::domain(format!(
                "field has {} values for a {}x{} window",
                values.len(),
                window.width,
                window.height
            )));
        }
        Ok(IntField { window, values })
    }

    pub fn from_fn(window: Window, mut f: impl FnMut(LatticePoint) -> i64) -> Self {
        let values = window.points().map(&mut f).collect();
        IntField { window, values }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<i64> {
        self.values
    }

    #[inline]
    pub fn get(&self, p: LatticePoint) -> i64 {
        match self.window.index(p) {
            Some(i) => self.values[i],
            None => 0,
        }
    }

    /// Panics if `p` lies outside the window.
    pub fn set(&mut self, p: LatticePoint, v: i64) {
        let i = self.window.index(p).expect("point outside field window");
        self.values[i] = v;
    }

    /// Copies this field onto another window; cells outside the source read 0.
    pub fn restrict(&self, window: Window) -> IntField {
        IntField::from_fn(window, |p| self.get(p))
    }

    pub fn min_max(&self) -> Option<(i64, i64)> {
        let min = self.values.iter().copied().min()?;
        let max = self.values.iter().copied().max()?;
        Some((min, max))
    }
}

/// `sum over neighbors of (u(y) - u(p))`, reading 0 outside the window.
#[inline]
pub fn laplacian_at(field: &IntField, p: LatticePoint) -> i64 {
    let [a, b, c, d] = p.neighbors();
    field.get(a) + field.get(b) + field.get(c) + field.get(d) - 4 * field.get(p)
}

/// Pointwise Laplacian over `window`, which must lie inside the field's window.
pub fn laplacian_field(field: &IntField, window: Window) -> Result<IntField> {
    if !field.window().contains_window(&window) {
        return Err(Error::domain("laplacian window is not contained in the field window"));
    }
    Ok(IntField::from_fn(window, |p| laplacian_at(field, p)))
}

/// The integer quadratic `x1 (x1 + 1) / 2`, whose Laplacian is identically 1.
pub fn cutoff_quadratic(p: LatticePoint) -> i64 {
    p.x * (p.x + 1) / 2
}

/// Adds `alpha * q` to the field on its window, where `q(x) = x1 (x1 + 1) / 2`.
/// This raises the Laplacian by `alpha` at every point whose neighbors lie in
/// the window.
pub fn shift_cutoff(field: &IntField, alpha: i64) -> IntField {
    IntField::from_fn(*field.window(), |p| field.get(p) + alpha * cutoff_quadratic(p))
}

/// Planar domain, always interpreted as an open set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShapeSpec {
    /// `(0,1)^2`.
    UnitSquare,
    /// Open axis-aligned rectangle `(min.x, max.x) x (min.y, max.y)`.
    Rectangle { min: [Rat; 2], max: [Rat; 2] },
    /// Open convex polygon; vertices in either orientation.
    Polygon { vertices: Vec<[Rat; 2]> },
}

impl ShapeSpec {
    /// `(-1,1)^2`.
    pub fn square2() -> ShapeSpec {
        ShapeSpec::Rectangle { min: [int(-1), int(-1)], max: [int(1), int(1)] }
    }

    pub fn name(&self) -> String {
        match self {
            ShapeSpec::UnitSquare => "unit-square".into(),
            ShapeSpec::Rectangle { .. } if *self == ShapeSpec::square2() => "square2".into(),
            ShapeSpec::Rectangle { .. } => "rectangle".into(),
            ShapeSpec::Polygon { .. } => "polygon".into(),
        }
    }

    /// Counter-clockwise vertex list, validated as a non-degenerate convex polygon.
    pub fn vertices(&self) -> Result<Vec<[Rat; 2]>> {
        let mut vs = match self {
            ShapeSpec::UnitSquare => vec![[int(0), int(0)], [int(1), int(0)], [int(1), int(1)], [int(0), int(1)]],
            ShapeSpec::Rectangle { min, max } => vec![
                [min[0].clone(), min[1].clone()],
                [max[0].clone(), min[1].clone()],
                [max[0].clone(), max[1].clone()],
                [min[0].clone(), max[1].clone()],
            ],
            ShapeSpec::Polygon { vertices } => vertices.clone(),
        };
        if vs.len() < 3 {
            return Err(Error::domain("polygon needs at least three vertices"));
        }
        let area2 = signed_area2(&vs);
        if area2.is_zero() {
            return Err(Error::domain("degenerate shape with zero area"));
        }
        if area2.is_negative() {
            vs.reverse();
        }
        let k = vs.len();
        for i in 0..k {
            let (a, b) = (&vs[i], &vs[(i + 1) % k]);
            let e = [&b[0] - &a[0], &b[1] - &a[1]];
            if e[0].is_zero() && e[1].is_zero() {
                return Err(Error::domain("repeated polygon vertex"));
            }
            for c in &vs {
                let cr = &e[0] * (&c[1] - &a[1]) - &e[1] * (&c[0] - &a[0]);
                if cr.is_negative() {
                    return Err(Error::domain("polygon must be simple and convex"));
                }
            }
        }
        Ok(vs)
    }

    /// The open square `center + (-half, half)^2` when the shape is an
    /// axis-aligned square.
    pub fn as_square(&self) -> Option<([Rat; 2], Rat)> {
        match self {
            ShapeSpec::UnitSquare => Some(([crate::exact::half(), crate::exact::half()], crate::exact::half())),
            ShapeSpec::Rectangle { min, max } => {
                let w = &max[0] - &min[0];
                let h = &max[1] - &min[1];
                if w != h || !w.is_positive() {
                    return None;
                }
                let two = int(2);
                Some(([(&min[0] + &max[0]) / &two, (&min[1] + &max[1]) / &two], w / two))
            }
            ShapeSpec::Polygon { .. } => None,
        }
    }
}

fn signed_area2(vs: &[[Rat; 2]]) -> Rat {
    let k = vs.len();
    (0..k).fold(Rat::zero(), |acc, i| {
        let (a, b) = (&vs[i], &vs[(i + 1) % k]);
        acc + &a[0] * &b[1] - &a[1] * &b[0]
    })
}

/// Lattice sites of `Z^2 ∩ n·Ω` on a window with a one-cell margin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainMask {
    window: Window,
    member: Vec<bool>,
    n: i64,
    shape: Option<ShapeSpec>,
}

impl DomainMask {
    /// Mask from an explicit set of sites; `n` is recorded as 1.
    pub fn from_cells(cells: &[LatticePoint]) -> DomainMask {
        if cells.is_empty() {
            let window = Window { x0: 0, y0: 0, width: 1, height: 1 };
            return DomainMask { window, member: vec![false], n: 1, shape: None };
        }
        let min = LatticePoint::new(cells.iter().map(|p| p.x).min().unwrap() - 1, cells.iter().map(|p| p.y).min().unwrap() - 1);
        let max = LatticePoint::new(cells.iter().map(|p| p.x).max().unwrap() + 1, cells.iter().map(|p| p.y).max().unwrap() + 1);
        let window = Window::spanning(min, max).expect("ordered corners");
        let mut member = vec![false; window.len()];
        for &c in cells {
            member[window.index(c).unwrap()] = true;
        }
        DomainMask { window, member, n: 1, shape: None }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn n(&self) -> i64 {
        self.n
    }

    pub fn shape(&self) -> Option<&ShapeSpec> {
        self.shape.as_ref()
    }

    #[inline]
    pub fn is_member(&self, p: LatticePoint) -> bool {
        self.window.index(p).is_some_and(|i| self.member[i])
    }

    pub(crate) fn member_flags(&self) -> &[bool] {
        &self.member
    }

    pub fn members(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        self.window.points().zip(&self.member).filter(|(_, &m)| m).map(|(p, _)| p)
    }

    pub fn member_count(&self) -> usize {
        self.member.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.member_count() == 0
    }
}

/// Sites `p` with `p / n` strictly inside the shape.
pub fn build_mask(shape: &ShapeSpec, n: i64) -> Result<DomainMask> {
    if n < 1 {
        return Err(Error::domain(format!("scale n must be at least 1, got {n}")));
    }
    let vs = shape.vertices()?;
    // Clear denominators so the strict half-plane tests run in integers.
    let lcm = vs.iter().flatten().fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
    let scaled: Vec<[i128; 2]> = vs
        .iter()
        .map(|v| {
            let f = |c: &Rat| (c * Rat::from_integer(lcm.clone())).to_integer().to_i128();
            match (f(&v[0]), f(&v[1])) {
                (Some(a), Some(b)) => Ok([a, b]),
                _ => Err(Error::domain("shape coordinates too large")),
            }
        })
        .collect::<Result<_>>()?;
    let l = lcm.to_i128().ok_or_else(|| Error::domain("shape denominators too large"))?;
    let n128 = n as i128;
    let k = scaled.len();
    let inside = |p: LatticePoint| {
        let q = [p.x as i128 * l, p.y as i128 * l];
        (0..k).all(|i| {
            let a = scaled[i];
            let b = scaled[(i + 1) % k];
            let e = [b[0] - a[0], b[1] - a[1]];
            let d = [q[0] - n128 * a[0], q[1] - n128 * a[1]];
            e[0] * d[1] - e[1] * d[0] > 0
        })
    };
    let bound = |pick: fn(&Rat, &Rat) -> bool, coord: usize| {
        vs.iter().map(|v| v[coord].clone()).reduce(|a, b| if pick(&a, &b) { a } else { b }).unwrap()
    };
    let lo = |c: usize| (bound(|a, b| a < b, c) * int(n)).floor().to_integer().to_i64();
    let hi = |c: usize| (bound(|a, b| a > b, c) * int(n)).ceil().to_integer().to_i64();
    let (Some(xl), Some(yl), Some(xh), Some(yh)) = (lo(0), lo(1), hi(0), hi(1)) else {
        return Err(Error::domain("scaled shape exceeds the 64-bit lattice"));
    };
    let cand = Window::spanning(LatticePoint::new(xl, yl), LatticePoint::new(xh, yh))?;
    let cells: Vec<LatticePoint> = cand.points().filter(|&p| inside(p)).collect();
    let mut mask = DomainMask::from_cells(&cells);
    mask.n = n;
    mask.shape = Some(shape.clone());
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::rat;
    use proptest::prelude::*;

    fn win(x0: i64, y0: i64, w: usize, h: usize) -> Window {
        Window::new(x0, y0, w, h).unwrap()
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = IntField::from_fn(win(-3, -3, 7, 7), |_| 7);
        assert_eq!(laplacian_at(&f, LatticePoint::ORIGIN), 0);
    }

    #[test]
    fn laplacian_of_cutoff_quadratic_is_one() {
        let f = IntField::from_fn(win(-5, -5, 11, 11), cutoff_quadratic);
        for p in [LatticePoint::new(0, 0), LatticePoint::new(3, -2), LatticePoint::new(-4, 4)] {
            assert_eq!(laplacian_at(&f, p), 1);
        }
    }

    #[test]
    fn laplacian_of_norm_squared_is_four() {
        let f = IntField::from_fn(win(-5, -5, 11, 11), |p| p.norm_sq());
        assert_eq!(laplacian_at(&f, LatticePoint::new(2, 1)), 4);
    }

    #[test]
    fn exterior_reads_zero() {
        let f = IntField::from_fn(win(0, 0, 1, 1), |_| 5);
        assert_eq!(f.get(LatticePoint::new(1, 0)), 0);
        assert_eq!(laplacian_at(&f, LatticePoint::ORIGIN), -20);
    }

    #[test]
    fn laplacian_field_cases() {
        let w = win(-4, -4, 9, 9);
        let zero = IntField::zeros(w);
        assert!(laplacian_field(&zero, w).unwrap().values().iter().all(|&v| v == 0));
        let affine = IntField::from_fn(w, |p| 3 * p.x - p.y);
        let inner = w.expand(-1).unwrap();
        assert!(laplacian_field(&affine, inner).unwrap().values().iter().all(|&v| v == 0));
        assert!(laplacian_field(&affine, w.expand(1).unwrap()).is_err());
    }

    #[test]
    fn unit_square_masks() {
        let m = build_mask(&ShapeSpec::UnitSquare, 3).unwrap();
        let mut got: Vec<_> = m.members().collect();
        got.sort();
        let want: Vec<_> = [(1, 1), (1, 2), (2, 1), (2, 2)].iter().map(|&(x, y)| LatticePoint::new(x, y)).collect();
        assert_eq!(got, want);
        assert_eq!(*m.window(), win(0, 0, 4, 4));
        assert!(build_mask(&ShapeSpec::UnitSquare, 1).unwrap().is_empty());
        assert!(build_mask(&ShapeSpec::UnitSquare, 0).is_err());
    }

    #[test]
    fn centered_square_mask_counts() {
        for n in 1..8 {
            let m = build_mask(&ShapeSpec::square2(), n).unwrap();
            assert_eq!(m.member_count() as i64, (2 * n - 1) * (2 * n - 1));
            assert!(m.members().all(|p| p.x.abs() < n && p.y.abs() < n));
        }
    }

    #[test]
    fn polygon_masks() {
        let tri = ShapeSpec::Polygon { vertices: vec![[int(0), int(0)], [int(0), int(1)], [int(1), int(0)]] };
        // strict interior of x, y > 0, x + y < 1 scaled by 4
        let m = build_mask(&tri, 4).unwrap();
        assert_eq!(m.member_count(), 3);
        let degenerate = ShapeSpec::Polygon { vertices: vec![[int(0), int(0)], [int(1), int(1)], [int(2), int(2)]] };
        assert!(build_mask(&degenerate, 3).is_err());
        let bowtie = ShapeSpec::Polygon {
            vertices: vec![[int(0), int(0)], [int(1), int(1)], [int(1), int(0)], [int(0), int(1)]],
        };
        assert!(build_mask(&bowtie, 3).is_err());
        let half = ShapeSpec::Rectangle { min: [rat(-1, 2), int(0)], max: [rat(1, 2), int(1)] };
        assert_eq!(build_mask(&half, 4).unwrap().member_count(), 3 * 3);
    }

    #[test]
    fn mask_has_margin() {
        let m = build_mask(&ShapeSpec::UnitSquare, 9).unwrap();
        let w = *m.window();
        for p in w.points() {
            let edge = p.x == w.x0 || p.y == w.y0 || p.x == w.x1() - 1 || p.y == w.y1() - 1;
            if edge {
                assert!(!m.is_member(p));
            }
        }
    }

    #[test]
    fn square_membership_is_monotone_in_scale() {
        for n in 1..20 {
            let m = build_mask(&ShapeSpec::UnitSquare, n).unwrap();
            assert!(m.members().all(|p| p.x > 0 && p.x < n && p.y > 0 && p.y < n));
            assert_eq!(m.member_count() as i64, (n - 1) * (n - 1));
        }
    }

    #[test]
    fn shift_cutoff_behaviour() {
        let w = win(-6, -6, 13, 13);
        let u = IntField::from_fn(w, |p| (p.x * 7 + p.y * 3) % 5);
        assert_eq!(shift_cutoff(&u, 0), u);
        let inner = w.expand(-1).unwrap();
        let z = shift_cutoff(&IntField::zeros(w), 1);
        assert!(laplacian_field(&z, inner).unwrap().values().iter().all(|&v| v == 1));
        let back = shift_cutoff(&shift_cutoff(&u, 1), -1);
        assert_eq!(back, u);
        let s = laplacian_field(&u, inner).unwrap();
        let s3 = laplacian_field(&shift_cutoff(&u, 3), inner).unwrap();
        for (a, b) in s.values().iter().zip(s3.values()) {
            assert_eq!(a + 3, *b);
        }
    }

    fn small_field() -> impl Strategy<Value = IntField> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            prop::collection::vec(-50i64..50, w * h)
                .prop_map(move |vals| IntField::from_values(Window::new(-2, 1, w, h).unwrap(), vals).unwrap())
        })
    }

    proptest! {
        #[test]
        fn laplacian_is_linear(u in small_field(), a in -5i64..5, b in -5i64..5, seed in 0i64..1000) {
            let v = IntField::from_fn(*u.window(), |p| (p.x * 31 + p.y * 17 + seed) % 11 - 5);
            let w = IntField::from_fn(*u.window(), |p| a * u.get(p) + b * v.get(p));
            for p in u.window().expand(1).unwrap().points() {
                prop_assert_eq!(laplacian_at(&w, p), a * laplacian_at(&u, p) + b * laplacian_at(&v, p));
            }
        }

        #[test]
        fn laplacian_sum_is_boundary_flux(u in small_field()) {
            // Summing over a window that strictly contains the support leaves
            // only the flux through the outer ring, which vanishes.
            let big = u.window().expand(1).unwrap();
            let total: i64 = big.points().map(|p| laplacian_at(&u, p)).sum();
            prop_assert_eq!(total, 0);
            // On the field's own window the sum equals the outward flux term.
            let w = *u.window();
            let inner: i64 = w.points().map(|p| laplacian_at(&u, p)).sum();
            let flux: i64 = w
                .points()
                .flat_map(|p| p.neighbors().into_iter().map(move |q| (p, q)))
                .filter(|(_, q)| !w.contains(*q))
                .map(|(p, q)| u.get(q) - u.get(p))
                .sum();
            prop_assert_eq!(inner, flux);
        }
    }
}
