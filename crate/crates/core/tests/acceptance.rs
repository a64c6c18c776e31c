//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sandpile_core::analysis::{convergence_rows, defect_report, patch_measure_decay, perfect_check};
use sandpile_core::continuum::{gluing_check, ifs_generate, CxPoint, SuperSolution};
use sandpile_core::exact::{int, rat, Rat};
use sandpile_core::formats::{decode_fgf1, decode_igf1, encode_fgf1, encode_igf1, RealField};
use sandpile_core::grid::{build_mask, laplacian_at, DomainMask, IntField, LatticePoint, ShapeSpec, Window};
use sandpile_core::patterns::{v_norm, vinv_norm, Mat23, PatternData, PeriodicPattern};
use sandpile_core::render::{render_field, render_pieces, Channels, Image, Palette};
use sandpile_core::solver::{brute_force_least, burning_certificate, solve_least, Solution};

struct Ctx {
    sols: HashMap<i64, Arc<Solution>>,
    depths: HashMap<usize, Arc<SuperSolution>>,
    archive: PathBuf,
}

impl Ctx {
    fn square(&mut self, n: i64) -> Arc<Solution> {
        self.sols
            .entry(n)
            .or_insert_with(|| Arc::new(solve_least(&build_mask(&ShapeSpec::UnitSquare, n).unwrap(), 2)))
            .clone()
    }

    fn ss(&mut self, depth: usize) -> Arc<SuperSolution> {
        self.depths.entry(depth).or_insert_with(|| Arc::new(ifs_generate(depth).unwrap())).clone()
    }

    fn archive(&self, name: &str, json: &str) {
        std::fs::create_dir_all(&self.archive).unwrap();
        std::fs::write(self.archive.join(name), json).unwrap();
    }
}

type Outcome = (bool, String);
type Criterion = (&'static str, fn(&mut Ctx) -> Outcome);

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

/// Connected (4-neighbor) subsets of the 4x4 block with 1..=9 cells.
fn connected_masks() -> Vec<Vec<LatticePoint>> {
    let cell = |i: u32| LatticePoint::new((i % 4) as i64, (i / 4) as i64);
    let mut out = Vec::new();
    for bits in 1u32..(1 << 16) {
        let k = bits.count_ones();
        if k > 9 {
            continue;
        }
        let start = bits.trailing_zeros();
        let mut seen = 1u32 << start;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y) = (i % 4, i / 4);
            let mut nb = Vec::new();
            if x > 0 {
                nb.push(i - 1);
            }
            if x < 3 {
                nb.push(i + 1);
            }
            if y > 0 {
                nb.push(i - 4);
            }
            if y < 3 {
                nb.push(i + 4);
            }
            for j in nb {
                if bits & (1 << j) != 0 && seen & (1 << j) == 0 {
                    seen |= 1 << j;
                    stack.push(j);
                }
            }
        }
        if seen == bits {
            out.push((0..16).filter(|&i| bits & (1 << i) != 0).map(cell).collect());
        }
    }
    out
}

fn c1_oracle(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let masks = connected_masks();
    // u >= -(25/2 - |p - (3/2,3/2)|^2)/2 >= -6 on the 4x4 block by comparison
    let lo = -6;
    let mut bad = 0;
    for cells in &masks {
        let m = DomainMask::from_cells(cells);
        let bf = brute_force_least(&m, 2, lo).unwrap();
        if bf.u != solve_least(&m, 2).u {
            bad += 1;
        }
    }
    let (fast, time) = within(t, Duration::from_secs(120));
    (bad == 0 && fast, format!("{} masks, {bad} mismatches, {time}", masks.len()))
}

fn c2_burning(ctx: &mut Ctx) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for n in [9, 27, 81, 243] {
        let pass = burning_certificate(&ctx.square(n)).unwrap().pass;
        ok &= pass;
        detail.push(format!("n={n}:{pass}"));
    }
    let sol = ctx.square(27);
    let mut bumped = (*sol).clone();
    for p in sol.mask.members() {
        bumped.u.set(p, sol.u.get(p) + 1);
    }
    let fails = !burning_certificate(&bumped).map(|r| r.pass).unwrap_or(true);
    ok &= fails;
    detail.push(format!("perturbed n=27 rejected:{fails}"));
    (ok, detail.join(" "))
}

fn c3_constraints(ctx: &mut Ctx) -> Outcome {
    let (mut exact, mut observed) = (true, true);
    let mut range = (i64::MAX, i64::MIN);
    for n in [9, 27, 81, 243] {
        let sol = ctx.square(n);
        for p in sol.u.window().points() {
            if sol.mask.is_member(p) {
                let s = laplacian_at(&sol.u, p);
                exact &= s <= 2;
                observed &= (-1..=2).contains(&s);
                range = (range.0.min(s), range.1.max(s));
            } else {
                exact &= sol.u.get(p) == 0;
            }
        }
    }
    let obs = if observed { "pass" } else { "FAIL (observational)" };
    (exact, format!("exact constraints hold: {exact}; Laplacian range [{}, {}] observational {obs}", range.0, range.1))
}

fn c4_determinism(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let ss = ctx.ss(5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let sol = solve_least(&build_mask(&ShapeSpec::UnitSquare, 81).unwrap(), 2);
            let field = encode_igf1(&sol.u);
            let raster = render_field(&sol.laplacian(), Palette::Sandpile).encode();
            let pieces = render_pieces(&ss, 128).unwrap().encode();
            (field, raster, pieces)
        })
    };
    let (a, b) = (run(1), run(8));
    let same = a == b;
    let (fast, time) = within(t, Duration::from_secs(60));
    (same && fast, format!("threads 1 vs 8: IGF1, field raster and piece raster identical: {same}; {time}"))
}

fn c5_continuum(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<CxPoint> =
        (0..1000).map(|_| CxPoint::new(rat(rng.gen_range(1..2003), 2003), rat(rng.gen_range(1..2003), 2003))).collect();
    let mut prev: Option<Vec<Rat>> = None;
    let mut monotone_bad = 0;
    let mut glue = (0, 0);
    let mut trace_bad = 0;
    for depth in 0..=7 {
        let ss = ctx.ss(depth);
        if depth <= 6 {
            let (c, b) = gluing_check(&ss, 100, depth as u64);
            glue = (glue.0 + c, glue.1 + b);
            for p in ss.pieces() {
                if p.p[0][1] != p.p[1][0] || p.trace() > int(2) {
                    trace_bad += 1;
                }
            }
        }
        let vals: Vec<Rat> = samples.iter().map(|x| ss.value_at(x)).collect();
        if let Some(pv) = &prev {
            monotone_bad += vals.iter().zip(pv).filter(|(v, w)| v > w).count();
        }
        prev = Some(vals);
    }
    ok &= glue.1 == 0 && glue.0 > 0 && trace_bad == 0 && monotone_bad == 0;
    notes.push(format!("gluing {} points {} mismatches", glue.0, glue.1));
    notes.push(format!("Hessian symmetric/trace<=2 violations {trace_bad}"));
    notes.push(format!("v(n+1) > v(n) at {monotone_bad} of 1000 points, n=0..6"));
    let (fast, time) = within(t, Duration::from_secs(120));
    notes.push(time);
    (ok && fast, notes.join("; "))
}

fn c6_areas(ctx: &mut Ctx) -> Outcome {
    let rep = patch_measure_decay(&ctx.ss(8));
    ctx.archive("decay.json", &serde_json::to_string_pretty(&rep).unwrap());
    let ratio = rep.ratio.unwrap_or(f64::NAN);
    let ok = rep.total == "1" && ratio < 1.0;
    (ok, format!("depth 8: {} w-pieces, total area {} (remainder {}), decay ratio {ratio:.6}", rep.pieces.len(), rep.total, rep.remainder))
}

fn c7_convergence(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let sols: Vec<Arc<Solution>> = [27, 81, 243].iter().map(|&n| ctx.square(n)).collect();
    let refs: Vec<&Solution> = sols.iter().map(|s| s.as_ref()).collect();
    let (ss, prev) = (ctx.ss(8), ctx.ss(7));
    let rows = convergence_rows(&refs, &ss, Some(&prev)).unwrap();
    ctx.archive("convergence.json", &serde_json::to_string_pretty(&rows).unwrap());
    let decreasing = rows.windows(2).all(|w| w[1].normalized < w[0].normalized);
    let exps_ok = rows.iter().filter_map(|r| r.exponent).all(|e| e <= 1.95);
    let desc: Vec<String> = rows
        .iter()
        .map(|r| match r.exponent {
            Some(e) => format!("n={} e/n^2={:.3e} exp={e:.3}", r.n, r.normalized),
            None => format!("n={} e/n^2={:.3e}", r.n, r.normalized),
        })
        .collect();
    let (fast, time) = within(t, Duration::from_secs(600));
    (decreasing && exps_ok && fast, format!("{}; strictly decreasing {decreasing}; {time}", desc.join(", ")))
}

fn c8_patterns(ctx: &mut Ctx) -> Outcome {
    let (sol, ss) = (ctx.square(243), ctx.ss(8));
    let rows = defect_report(&sol, &ss, &[2, 3, 5, 8], 0).unwrap();
    ctx.archive("defects.json", &serde_json::to_string_pretty(&rows).unwrap());
    let r3 = rows.iter().find(|r| r.r == 3).unwrap();
    let detected = r3.period_detected;
    let f3 = r3.fraction.unwrap_or(0.0);
    let common: Vec<f64> = rows.iter().map(|r| r.fraction_common.unwrap_or(f64::NAN)).collect();
    let monotone = common.windows(2).all(|w| w[1] <= w[0]);
    let slope = rows[0].deficit_slope.map_or("n/a (no deficit)".to_string(), |s| format!("{s:.3}"));
    let fr: Vec<String> = rows.iter().map(|r| format!("r={}:{:.4}", r.r, r.fraction.unwrap_or(f64::NAN))).collect();
    (
        detected && f3 >= 0.95 && monotone,
        format!(
            "largest patch word '{}' covolume {:?}, detected at r=3: {detected}, fractions {}, non-increasing on common set: {monotone}, log-log deficit slope {slope}",
            r3.word,
            r3.covolume,
            fr.join(" ")
        ),
    )
}

fn random_v(rng: &mut ChaCha8Rng) -> Mat23 {
    loop {
        let c: Vec<i64> = (0..4).map(|_| rng.gen_range(-4..=4)).collect();
        if c[0] * c[3] - c[1] * c[2] != 0 {
            return [[c[0], c[1], -c[0] - c[1]], [c[2], c[3], -c[2] - c[3]]];
        }
    }
}

fn apply_v(v: &Mat23, y: [i64; 3]) -> [i64; 2] {
    [(0..3).map(|j| v[0][j] * y[j]).sum(), (0..3).map(|j| v[1][j] * y[j]).sum()]
}

fn c9_norms(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut dual_bad = 0;
    for _ in 0..10_000 {
        let v = random_v(&mut rng);
        let x = [rng.gen_range(-20..=20), rng.gen_range(-20..=20)];
        let y = [rng.gen_range(-9..=9), rng.gen_range(-9..=9), rng.gen_range(-9..=9)];
        let z = apply_v(&v, y);
        let zn = vinv_norm(&v, z).unwrap().expect("z lies in the image of V");
        if (x[0] * z[0] + x[1] * z[1]).abs() > v_norm(&v, x) * zn {
            dual_bad += 1;
        }
    }
    let mut brute_bad = 0;
    for i in 0..1000 {
        let v = random_v(&mut rng);
        let x = if i % 4 == 0 {
            [rng.gen_range(-12..=12), rng.gen_range(-12..=12)]
        } else {
            let y = [rng.gen_range(-3..=3), rng.gen_range(-3..=3), rng.gen_range(-3..=3)];
            apply_v(&v, y)
        };
        let mut best: Option<i64> = None;
        for a in -6i64..=6 {
            for b in -6i64..=6 {
                for c in -6i64..=6 {
                    let l1 = a.abs() + b.abs() + c.abs();
                    if l1 <= 6 && apply_v(&v, [a, b, c]) == x && best.is_none_or(|m| l1 < m) {
                        best = Some(l1);
                    }
                }
            }
        }
        let got = vinv_norm(&v, x).unwrap();
        let agree = match best {
            Some(b) => got == Some(b),
            None => got.is_none_or(|g| g > 6),
        };
        if !agree {
            brute_bad += 1;
        }
    }
    (dual_bad == 0 && brute_bad == 0, format!("duality violations {dual_bad}/10000, brute-force disagreements {brute_bad}/1000"))
}

fn c10_structure(_: &mut Ctx) -> Outcome {
    let v0: Mat23 = [[1, 0, -1], [0, 1, -1]];
    let mut vectors = vec![
        PatternData::from_pv([[int(1), int(0)], [int(0), int(0)]], v0).unwrap(),
        PatternData::from_pv([[int(0), int(0)], [int(0), int(1)]], v0).unwrap(),
        PatternData::from_pv([[int(1), int(1)], [int(0), int(0)]], v0).unwrap(),
        PatternData::from_pv([[int(2), int(1)], [int(1), int(-1)]], v0).unwrap(),
    ];
    // the all-twos pattern of the central patch: one-cell tile, unit lattice
    let mut twos = PatternData::from_pv([[int(0), int(0)], [int(0), int(1)]], v0).unwrap();
    twos.tile = Some(vec![(LatticePoint::new(0, 0), 2)]);
    vectors.push(twos);
    let pass = vectors.iter().filter(|d| d.validate(6).pass()).count();
    let mut caught = 0;
    let mut tried = 0;
    for d in &vectors {
        for i in 0..2 {
            for j in 0..3 {
                for which in 0..2 {
                    let mut e = d.clone();
                    if which == 0 {
                        e.a[i][j] += 1;
                    } else {
                        e.v[i][j] += 1;
                    }
                    tried += 1;
                    if !e.validate(6).pass() {
                        caught += 1;
                    }
                }
            }
            for j in 0..2 {
                let mut e = d.clone();
                e.p[i][j] += int(1);
                tried += 1;
                if !e.validate(6).pass() {
                    caught += 1;
                }
            }
        }
    }
    (
        pass == vectors.len() && caught == tried,
        format!("{pass}/{} vectors pass, {caught}/{tried} single-entry perturbations rejected", vectors.len()),
    )
}

fn c11_formats(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = Vec::new();
    let mut count = 0;
    for _ in 0..200 {
        count += 1;
        let w = Window::new(rng.gen_range(-50..50), rng.gen_range(-50..50), rng.gen_range(1..20), rng.gen_range(1..20)).unwrap();
        let vals: Vec<i64> = (0..w.len()).map(|_| rng.gen()).collect();
        let f = IntField::from_values(w, vals).unwrap();
        let bytes = encode_igf1(&f);
        if decode_igf1(&bytes).ok() != Some(f.clone()) || encode_igf1(&decode_igf1(&bytes).unwrap()) != bytes {
            bad.push("IGF1");
        }
        let reals: Vec<f64> = (0..w.len()).map(|_| f64::from_bits(rng.gen())).collect();
        let rf = RealField::from_values(w, reals).unwrap();
        let bytes = encode_fgf1(&rf);
        let back = decode_fgf1(&bytes).unwrap();
        let same = back.window() == rf.window()
            && back.values().iter().zip(rf.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || encode_fgf1(&back) != bytes {
            bad.push("FGF1");
        }
        let a = rng.gen_range(1..6);
        let d = rng.gen_range(1..6);
        let b = rng.gen_range(0..a);
        let basis = [LatticePoint::new(a, 0), LatticePoint::new(b, d)];
        let salt: i64 = rng.gen_range(0..1000);
        let pat = PeriodicPattern::from_fn(basis, |p| (p.x * 31 + p.y * 17 + salt).rem_euclid(7) - 3).unwrap();
        let text = pat.encode();
        match PeriodicPattern::decode(&text) {
            Ok(p) if p == pat && p.encode() == text => {}
            _ => bad.push("pattern JSON"),
        }
        let (iw, ih) = (rng.gen_range(1..30), rng.gen_range(1..30));
        for channels in [Channels::Rgb, Channels::Gray] {
            let c = if channels == Channels::Rgb { 3 } else { 1 };
            let img = Image {
                width: iw,
                height: ih,
                channels,
                data: (0..iw * ih * c).map(|_| rng.gen()).collect(),
                comment: (channels == Channels::Gray).then(|| "value = 0 + (9 - 0) * g / 255".to_string()),
            };
            let bytes = img.encode();
            if Image::decode(&bytes).ok() != Some(img) {
                bad.push("PPM/PGM");
            }
        }
    }
    bad.dedup();
    (bad.is_empty(), format!("{count} randomized rounds of IGF1, FGF1, pattern JSON, PPM and PGM; failures: {bad:?}"))
}

fn c12_perfect(ctx: &mut Ctx) -> Outcome {
    let a = perfect_check(&[3, 4, 5], 5, &[200]).unwrap();
    let b = perfect_check(&[3, 4, 5], 5, &[200]).unwrap();
    let (ja, jb) = (serde_json::to_string_pretty(&a).unwrap(), serde_json::to_string_pretty(&b).unwrap());
    ctx.archive("perfect.json", &ja);
    let per_m: Vec<String> = [Some(3), Some(4), Some(5), None]
        .iter()
        .map(|m| {
            let rows: Vec<_> = a.iter().filter(|r| r.m == *m).collect();
            let defects: usize = rows.iter().filter_map(|r| r.defects).sum();
            let label = m.map_or("n=200".to_string(), |m| format!("m={m}"));
            format!("{label}: {} patches, {defects} defects", rows.len())
        })
        .collect();
    let present = a.iter().any(|r| r.m == Some(4)) && a.iter().any(|r| r.m == Some(5));
    (present && ja == jb, format!("{}; deterministic: {}", per_m.join(", "), ja == jb))
}

fn main() {
    let mut ctx = Ctx {
        sols: HashMap::new(),
        depths: HashMap::new(),
        archive: PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"),
    };
    let criteria: [Criterion; 12] = [
        ("1 oracle equivalence", c1_oracle),
        ("2 minimality certificates", c2_burning),
        ("3 constraint audit", c3_constraints),
        ("4 determinism", c4_determinism),
        ("5 continuum exactness", c5_continuum),
        ("6 exact area accounting", c6_areas),
        ("7 convergence trend", c7_convergence),
        ("8 pattern matching", c8_patterns),
        ("9 norm duality", c9_norms),
        ("10 structure identities", c10_structure),
        ("11 format round-trips", c11_formats),
        ("12 perfect-Sierpinski experiment", c12_perfect),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(|| f(&mut ctx))) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        if !ok {
            failed += 1;
        }
        println!("criterion {name}: {} ({:.1}s) {detail}", if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed; reports in {}", 12 - failed, ctx.archive.display());
    if failed > 0 {
        std::process::exit(1);
    }
}
