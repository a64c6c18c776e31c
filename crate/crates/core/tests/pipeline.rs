use sandpile_core::analysis::{defect_report, patch_region, w_pieces_by_area};
use sandpile_core::continuum::{ifs_generate, sample_exact, sample_field, Frame, PieceEvaluator};
use sandpile_core::exact::to_f64;
use sandpile_core::grid::{build_mask, IntField, LatticePoint, ShapeSpec};
use sandpile_core::patterns::{detect_period, match_fraction};
use sandpile_core::solver::{least_via_toppling, solve_least};

#[test]
fn toppling_agrees_with_solver_on_squares() {
    for n in [3, 7, 12, 20] {
        let mask = build_mask(&ShapeSpec::UnitSquare, n).unwrap();
        assert_eq!(least_via_toppling(&mask, 2).unwrap(), solve_least(&mask, 2).u, "n={n}");
    }
}

#[test]
fn square2_matches_unit_square_up_to_translation() {
    // (-1,1)^2 at scale n is the unit square at scale 2n shifted by -n
    let a = solve_least(&build_mask(&ShapeSpec::square2(), 9).unwrap(), 2);
    let b = solve_least(&build_mask(&ShapeSpec::UnitSquare, 18).unwrap(), 2);
    for p in a.mask.members() {
        assert_eq!(a.u.get(p), b.u.get(p + LatticePoint::new(9, 9)));
    }
}

#[test]
fn float_samples_track_exact_values() {
    let ss = ifs_generate(4).unwrap();
    let eval = PieceEvaluator::new(ss.pieces());
    let frame = Frame::for_shape(&ShapeSpec::UnitSquare, 27).unwrap();
    let mask = build_mask(&ShapeSpec::UnitSquare, 27).unwrap();
    let field = sample_field(&eval, &frame, *mask.window());
    for p in mask.members().step_by(7) {
        let exact = to_f64(&sample_exact(&ss, &frame, p));
        assert!((field.get(p) - exact).abs() < 1e-6 * (1.0 + exact.abs()), "{p:?}");
    }
}

#[test]
fn synthesized_patch_pattern_matches_itself() {
    let n = 243;
    let sol = solve_least(&build_mask(&ShapeSpec::UnitSquare, n).unwrap(), 2);
    let lap = sol.laplacian();
    let ss = ifs_generate(6).unwrap();
    let frame = Frame::for_shape(&ShapeSpec::UnitSquare, n).unwrap();
    let piece = w_pieces_by_area(&ss)[1];
    let region = patch_region(piece, &frame).eroded(4);
    let pat = detect_period(&lap, &region, 8).expect("second patch is periodic");
    let synth = IntField::from_fn(*lap.window(), |p| pat.get(p));
    assert_eq!(match_fraction(&synth, &pat, &region, 3).unwrap().fraction, 1.0);
}

#[test]
fn defect_fractions_shrink_with_radius_on_common_points() {
    let sol = solve_least(&build_mask(&ShapeSpec::UnitSquare, 243).unwrap(), 2);
    let rows = defect_report(&sol, &ifs_generate(6).unwrap(), &[1, 2, 3], 3).unwrap();
    assert_eq!(rows.len(), 12);
    for k in 0..4 {
        let f: Vec<f64> = rows.iter().filter(|r| r.k == k).filter_map(|r| r.fraction_common).collect();
        assert!(f.windows(2).all(|w| w[1] <= w[0]), "k={k} {f:?}");
    }
}
