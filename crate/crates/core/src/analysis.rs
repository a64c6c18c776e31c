//! Desk-scale experiments: convergence of `u_n` to the continuum supersolution,
//! pattern defects inside the large patches, and decay of patch areas.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::continuum::{area_accounting, ifs_generate, Frame, PieceEvaluator, PieceFamily, QuadraticPiece, SuperSolution};
use crate::error::{Error, Result};
use crate::exact::{fmt_rat, int, to_f64, Rat};
use crate::grid::{build_mask, IntField, LatticePoint, ShapeSpec};
use crate::patterns::{detect_period, match_fraction, match_points, PeriodicPattern, Region};
use crate::solver::{solve_least, Solution, DEFAULT_CUTOFF};

/// Extra erosion beyond the matching radius, keeping detection off patch edges.
pub const PATCH_MARGIN: i64 = 2;
/// Largest shift (in sup norm) searched for period vectors.
pub const DETECT_BOUND: i64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: i64,
    pub depth: usize,
    pub sup_error: f64,
    pub normalized: f64,
    /// Same comparison against the shallower supersolution (absent at depth 0).
    pub sup_error_prev_depth: Option<f64>,
    pub normalized_prev_depth: Option<f64>,
    /// `log(e_n / e_prev) / log(n / n_prev)` against the previous row.
    pub exponent: Option<f64>,
}

fn sup_error(sol: &Solution, eval: &PieceEvaluator, frame: &Frame) -> f64 {
    let scale = to_f64(&frame.value_scale());
    sol.mask
        .members()
        .map(|p| (sol.u.get(p) as f64 - scale * eval.value(frame.to_reference_f64(p))).abs())
        .fold(0.0, f64::max)
}

/// Convergence rows for already computed solutions (sorted by increasing `n`).
pub fn convergence_rows(sols: &[&Solution], ss: &SuperSolution, prev: Option<&SuperSolution>) -> Result<Vec<ConvergenceRow>> {
    let eval = PieceEvaluator::new(ss.pieces());
    let eval_prev = prev.map(|s| PieceEvaluator::new(s.pieces()));
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(sols.len());
    for sol in sols {
        let n = sol.mask.n();
        let shape = sol.mask.shape().ok_or_else(|| Error::domain("solution has no shape provenance"))?;
        let frame = Frame::for_shape(shape, n)?;
        if let Some(last) = rows.last() {
            if last.n >= n {
                return Err(Error::domain("ns must be strictly increasing"));
            }
        }
        let e = sup_error(sol, &eval, &frame);
        let n2 = (n * n) as f64;
        let e_prev = eval_prev.as_ref().map(|ev| sup_error(sol, ev, &frame));
        let exponent = rows.last().map(|r| (e / r.sup_error).ln() / (n as f64 / r.n as f64).ln());
        rows.push(ConvergenceRow {
            n,
            depth: ss.depth(),
            sup_error: e,
            normalized: e / n2,
            sup_error_prev_depth: e_prev,
            normalized_prev_depth: e_prev.map(|x| x / n2),
            exponent,
        });
    }
    Ok(rows)
}

/// Solves each `n` on a square and compares with `n^2 v_depth(·/n)`.
pub fn convergence_report(shape: &ShapeSpec, ns: &[i64], depth: usize) -> Result<Vec<ConvergenceRow>> {
    if shape.as_square().is_none() {
        return Err(Error::domain("convergence needs a square domain"));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("ns must be strictly increasing"));
    }
    let ss = ifs_generate(depth)?;
    let prev = if depth > 0 { Some(ifs_generate(depth - 1)?) } else { None };
    let sols = ns
        .iter()
        .map(|&n| Ok(solve_least(&build_mask(shape, n)?, DEFAULT_CUTOFF)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Solution> = sols.iter().collect();
    convergence_rows(&refs, &ss, prev.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub k: usize,
    pub word: String,
    pub trace: String,
    /// Patch triangle in lattice coordinates.
    pub polygon: Vec<[f64; 2]>,
    pub r: i64,
    /// Points of the patch eroded by `r + PATCH_MARGIN`.
    pub eroded_points: usize,
    pub matched: usize,
    pub fraction: Option<f64>,
    /// Fraction on the patch eroded by `max(rs) + PATCH_MARGIN`, shared by all rows of the patch.
    pub common_points: usize,
    pub fraction_common: Option<f64>,
    pub covolume: Option<i64>,
    pub basis: Option<[[i64; 2]; 2]>,
    /// The period was found on this row's own eroded patch.
    pub period_detected: bool,
    /// The pattern used here was detected on the patch eroded for another `r`.
    pub fallback: bool,
    /// The eroded patch was empty and the row carries no statistics.
    pub skipped: bool,
    /// Least-squares slope of `log(1 - fraction_common)` against `log r` for the patch.
    pub deficit_slope: Option<f64>,
}

/// W-family pieces by decreasing visible area (ties by word).
pub fn w_pieces_by_area(ss: &SuperSolution) -> Vec<&QuadraticPiece> {
    let mut w: Vec<&QuadraticPiece> = ss.pieces().iter().filter(|p| p.family == PieceFamily::W).collect();
    w.sort_by(|a, b| b.area.cmp(&a.area).then_with(|| a.word.cmp(&b.word)));
    w
}

/// The visible part of a piece, mapped into domain coordinates `p/n` of the
/// quadrant nearest the origin.
pub fn patch_region(piece: &QuadraticPiece, frame: &Frame) -> Region {
    let polys = piece
        .polygons
        .iter()
        .map(|poly| {
            poly.iter()
                .map(|v| [&frame.center[0] + &frame.half * &v.re, &frame.center[1] + &frame.half * &v.im])
                .collect()
        })
        .collect();
    Region::polygons(polys, frame.n)
}

fn patch_triangle(piece: &QuadraticPiece, frame: &Frame) -> Vec<[f64; 2]> {
    let n = int(frame.n);
    piece
        .vertices
        .iter()
        .map(|v| {
            [
                to_f64(&(&n * (&frame.center[0] + &frame.half * &v.re))),
                to_f64(&(&n * (&frame.center[1] + &frame.half * &v.im))),
            ]
        })
        .collect()
}

fn slope(xs: &[(f64, f64)]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = xs.len() as f64;
    let (sx, sy) = xs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = xs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = xs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Pattern defect statistics for the `k_max + 1` largest w-patches, one row per `(k, r)`.
pub fn defect_report(sol: &Solution, ss: &SuperSolution, rs: &[i64], k_max: usize) -> Result<Vec<DefectReport>> {
    let mut rs = rs.to_vec();
    rs.sort_unstable();
    rs.dedup();
    if rs.is_empty() || rs[0] < 1 {
        return Err(Error::domain("radii must be positive"));
    }
    let shape = sol.mask.shape().ok_or_else(|| Error::domain("solution has no shape provenance"))?;
    let frame = Frame::for_shape(shape, sol.mask.n())?;
    let lap = sol.laplacian();
    let pieces = w_pieces_by_area(ss);
    if pieces.len() <= k_max {
        return Err(Error::domain(format!("depth {} has only {} w-pieces", ss.depth(), pieces.len())));
    }
    let r_max = *rs.last().unwrap();
    let mut out = Vec::new();
    for (k, piece) in pieces.iter().take(k_max + 1).enumerate() {
        let patch = patch_region(piece, &frame);
        let regions: Vec<Region> = rs.iter().map(|&r| patch.eroded(r + PATCH_MARGIN)).collect();
        let own: Vec<Option<PeriodicPattern>> = regions.iter().map(|reg| detect_period(&lap, reg, DETECT_BOUND)).collect();
        let chosen = own.iter().flatten().next().cloned();
        let common = patch.eroded(r_max + PATCH_MARGIN).points();
        let mut rows = Vec::new();
        for (i, &r) in rs.iter().enumerate() {
            let eroded_points = regions[i].points().len();
            let mut row = DefectReport {
                k,
                word: piece.word.to_string(),
                trace: fmt_rat(&piece.trace()),
                polygon: patch_triangle(piece, &frame),
                r,
                eroded_points,
                matched: 0,
                fraction: None,
                common_points: common.len(),
                fraction_common: None,
                covolume: None,
                basis: None,
                period_detected: own[i].is_some(),
                fallback: false,
                skipped: eroded_points == 0,
                deficit_slope: None,
            };
            if let (false, Some(pat)) = (row.skipped, own[i].as_ref().or(chosen.as_ref())) {
                row.fallback = own[i].is_none();
                row.covolume = Some(pat.covolume());
                let b = pat.basis();
                row.basis = Some([[b[0].x, b[0].y], [b[1].x, b[1].y]]);
                let m = match_fraction(&lap, pat, &patch.eroded(PATCH_MARGIN), r)?;
                row.matched = m.matched;
                row.fraction = Some(m.fraction);
                if !common.is_empty() {
                    let cpat = chosen.as_ref().unwrap();
                    let hits = match_points(&lap, cpat, &common, r)?.iter().filter(|y| y.is_some()).count();
                    row.fraction_common = Some(hits as f64 / common.len() as f64);
                }
            }
            rows.push(row);
        }
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|row| row.fraction_common.filter(|&f| f < 1.0).map(|f| ((row.r as f64).ln(), (1.0 - f).ln())))
            .collect();
        let s = slope(&pts);
        for row in &mut rows {
            row.deficit_slope = s;
        }
        out.extend(rows);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfectRow {
    pub n: i64,
    /// Exponent with `n = 3^m`, absent for contrast rows.
    pub m: Option<u32>,
    pub k: usize,
    pub word: String,
    pub eroded_points: usize,
    /// Size whose eroded patch supplied the pattern (the largest `n` where detection succeeds).
    pub pattern_n: Option<i64>,
    pub covolume: Option<i64>,
    /// Eroded patch points where the patch pattern fails to match.
    pub defects: Option<usize>,
}

/// Depth of the supersolution used to outline patches in [`perfect_check`].
pub const PERFECT_DEPTH: usize = 6;
/// Matching radius used by [`perfect_check`].
pub const PERFECT_RADIUS: i64 = 2;

struct PerfectRun {
    n: i64,
    m: Option<u32>,
    lap: IntField,
    /// Eroded points per patch.
    patches: Vec<Vec<LatticePoint>>,
}

/// Per-patch defect counts for `n = 3^m`, plus the same rows for each contrast `n`.
///
/// A patch's pattern does not depend on `n`, so it is detected once, on the
/// largest size where detection succeeds, and then matched at every size.
pub fn perfect_check(ms: &[u32], min_patch: usize, contrast: &[i64]) -> Result<Vec<PerfectRow>> {
    if let Some(m) = ms.iter().find(|&&m| m > 6) {
        return Err(Error::domain(format!("m = {m} exceeds 6")));
    }
    let ss = ifs_generate(PERFECT_DEPTH)?;
    let pieces = w_pieces_by_area(&ss);
    let shape = ShapeSpec::UnitSquare;
    let sizes = ms.iter().map(|&m| (3i64.pow(m), Some(m))).chain(contrast.iter().map(|&n| (n, None)));
    let mut runs = Vec::new();
    for (n, m) in sizes {
        let frame = Frame::for_shape(&shape, n)?;
        let lap = solve_least(&build_mask(&shape, n)?, DEFAULT_CUTOFF).laplacian();
        let patches = pieces
            .iter()
            .map(|p| patch_region(p, &frame).eroded(PERFECT_RADIUS + PATCH_MARGIN).points())
            .collect();
        runs.push(PerfectRun { n, m, lap, patches });
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(runs[i].n));
    let mut rows = Vec::new();
    for (k, piece) in pieces.iter().enumerate() {
        if runs.iter().all(|run| run.patches[k].len() < min_patch.max(1)) {
            continue;
        }
        let pattern = order.iter().find_map(|&i| {
            let run = &runs[i];
            let region = Region::cells(run.patches[k].clone());
            detect_period(&run.lap, &region, DETECT_BOUND).map(|p| (run.n, p))
        });
        for run in &runs {
            let points = &run.patches[k];
            if points.len() < min_patch.max(1) {
                continue;
            }
            let defects = match &pattern {
                Some((_, p)) => Some(match_points(&run.lap, p, points, PERFECT_RADIUS)?.iter().filter(|y| y.is_none()).count()),
                None => None,
            };
            rows.push(PerfectRow {
                n: run.n,
                m: run.m,
                k,
                word: piece.word.to_string(),
                eroded_points: points.len(),
                pattern_n: pattern.as_ref().map(|p| p.0),
                covolume: pattern.as_ref().map(|p| p.1.covolume()),
                defects,
            });
        }
    }
    rows.sort_by_key(|r| (r.m.is_none(), r.n, r.k));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchArea {
    pub k: usize,
    pub word: String,
    pub area: String,
    pub area_f64: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub depth: usize,
    pub pieces: Vec<PatchArea>,
    pub w_total: String,
    pub base_area: String,
    /// Area still covered by the last (z) layer.
    pub remainder: String,
    /// `w_total + base_area + remainder`, always `1` for a sound construction.
    pub total: String,
    /// `exp` of the least-squares slope of `log area_k` against `k`.
    pub ratio: Option<f64>,
}

/// Visible w-piece areas sorted by size, with a fitted geometric decay ratio.
pub fn patch_measure_decay(ss: &SuperSolution) -> DecayReport {
    let (w, base, z) = area_accounting(ss);
    let w_total = w.iter().fold(Rat::zero(), |acc, (_, a)| acc + a);
    let total = &w_total + &base + &z;
    let pieces: Vec<PatchArea> = w
        .iter()
        .enumerate()
        .map(|(k, (word, a))| PatchArea { k, word: word.to_string(), area: fmt_rat(a), area_f64: to_f64(a) })
        .collect();
    let pts: Vec<(f64, f64)> =
        pieces.iter().filter(|p| p.area_f64 > 0.0).map(|p| (p.k as f64, p.area_f64.ln())).collect();
    DecayReport {
        depth: ss.depth(),
        pieces,
        w_total: fmt_rat(&w_total),
        base_area: fmt_rat(&base),
        remainder: fmt_rat(&z),
        total: fmt_rat(&total),
        ratio: slope(&pts).map(f64::exp),
    }
}
