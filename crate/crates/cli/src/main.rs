//! `sandpile`: command-line front end for the solver, the continuum
//! construction, pattern matching, analysis reports and rendering.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sandpile_core::analysis::{convergence_report, defect_report, patch_measure_decay, perfect_check};
use sandpile_core::continuum::ifs_generate;
use sandpile_core::exact::parse_rat;
use sandpile_core::formats::{decode_igf1, encode_igf1};
use sandpile_core::grid::{build_mask, laplacian_field, shift_cutoff, IntField, LatticePoint, ShapeSpec};
use sandpile_core::patterns::{detect_period, match_fraction, PeriodicPattern, Region};
use sandpile_core::render::{render_field, render_pieces, Palette};
use sandpile_core::solver::{burning_certificate, solve_least, DEFAULT_CUTOFF};
use sandpile_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sandpile", version, about = "Least-action sandpile solutions and their continuum limit")]
struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Least solution of Δu ≤ cutoff on a scaled shape, as IGF1.
    Solve(SolveArgs),
    /// Discrete Laplacian of an IGF1 field.
    Laplacian(InOut),
    /// Summary of the depth-d supersolution: layer sizes and exact area accounting.
    Continuum(DepthOut),
    /// Visible quadratic pieces of the depth-d supersolution.
    Pieces(DepthOut),
    /// r-matching statistics of a pattern against an image.
    Match(MatchArgs),
    /// Period lattice of an image inside a box.
    DetectPeriod(DetectArgs),
    AnalyzeConvergence(ConvergenceArgs),
    AnalyzeDefects(DefectArgs),
    AnalyzePerfect(PerfectArgs),
    /// PPM/PGM image of an IGF1 field, or of the piece diagram when `--depth` is given.
    Render(RenderArgs),
    /// Adds alpha·x1(x1+1)/2 to a field, raising its Laplacian by alpha.
    Shift(ShiftArgs),
    /// Runs the standard experiment set into a directory with a manifest.
    Experiments(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long, default_value = "unit-square")]
    shape: String,
    #[arg(long)]
    n: i64,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: i64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InOut {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DepthOut {
    #[arg(long)]
    depth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MatchArgs {
    /// Image (IGF1).
    #[arg(long = "in")]
    input: PathBuf,
    /// Pattern JSON.
    #[arg(long)]
    pattern: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    r: Vec<i64>,
    /// `x0,y0,x1,y1` (inclusive); the whole image window by default.
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<i64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<i64>>,
    #[arg(long, default_value_t = 8)]
    bound: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[arg(long, default_value = "unit-square")]
    shape: String,
    #[arg(long, value_delimiter = ',', required = true)]
    ns: Vec<i64>,
    #[arg(long)]
    depth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DefectArgs {
    #[arg(long, default_value = "unit-square")]
    shape: String,
    #[arg(long)]
    n: i64,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: i64,
    #[arg(long)]
    depth: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,3,5,8")]
    r: Vec<i64>,
    #[arg(long, default_value_t = 0)]
    k_max: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PerfectArgs {
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    ms: Vec<u32>,
    #[arg(long, default_value_t = 5)]
    min_patch: usize,
    /// Non-power sizes solved for comparison.
    #[arg(long, value_delimiter = ',', default_value = "200")]
    contrast: Vec<i64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long = "in", conflicts_with = "depth")]
    input: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    #[arg(long, default_value = "sandpile")]
    palette: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ShiftArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    alpha: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, default_value = "unit-square")]
    shape: String,
    #[arg(long, value_delimiter = ',', default_value = "27,81,243")]
    ns: Vec<i64>,
    #[arg(long, default_value_t = 8)]
    depth: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,3,5,8")]
    r: Vec<i64>,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    ms: Vec<u32>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Files written by a run, recorded in the manifest line.
#[derive(Default)]
struct Outputs(Vec<Value>);

impl Outputs {
    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.0.push(json!({"path": path.display().to_string(), "bytes": bytes.len(), "sha256": sha256_hex(bytes)}));
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_shape(s: &str) -> Result<ShapeSpec> {
    match s {
        "unit-square" => Ok(ShapeSpec::UnitSquare),
        "square2" => Ok(ShapeSpec::square2()),
        _ => {
            let file = s.strip_prefix("polygon:").ok_or_else(|| Error::Domain(format!("unknown shape {s:?}")))?;
            // JSON list of [x, y] pairs, each coordinate an integer or "p/q" string
            let raw: Vec<[Value; 2]> = serde_json::from_str(&std::fs::read_to_string(file)?)?;
            let coord = |v: &Value| match v {
                Value::String(t) => parse_rat(t),
                Value::Number(n) => parse_rat(&n.to_string()),
                _ => Err(Error::Format(format!("bad polygon coordinate {v}"))),
            };
            let vertices = raw.iter().map(|[x, y]| Ok([coord(x)?, coord(y)?])).collect::<Result<Vec<_>>>()?;
            let shape = ShapeSpec::Polygon { vertices };
            shape.vertices()?;
            Ok(shape)
        }
    }
}

fn read_field(path: &Path) -> Result<IntField> {
    decode_igf1(&std::fs::read(path)?)
}

fn box_region(field: &IntField, region: &Option<Vec<i64>>) -> Result<Region> {
    let (x0, y0, x1, y1) = match region {
        None => {
            let w = field.window();
            (w.x0, w.y0, w.x1() - 1, w.y1() - 1)
        }
        Some(v) if v.len() == 4 => (v[0], v[1], v[2], v[3]),
        Some(_) => return Err(Error::Domain("--region takes x0,y0,x1,y1".into())),
    };
    let cells = (y0..=y1).flat_map(|y| (x0..=x1).map(move |x| LatticePoint::new(x, y))).collect();
    Ok(Region::cells(cells))
}

fn run(cmd: &Command, out: &mut Outputs) -> Result<Value> {
    match cmd {
        Command::Solve(a) => {
            let mask = build_mask(&parse_shape(&a.shape)?, a.n)?;
            let sol = solve_least(&mask, a.cutoff);
            out.write(&a.out, &encode_igf1(&sol.u))?;
            let burn = burning_certificate(&sol)?;
            let stats = sol.stats_record(burn.pass);
            if let Some(p) = &a.stats {
                out.write_json(p, &stats)?;
            }
            Ok(json!({"n": a.n, "members": stats.members, "burn_pass": burn.pass}))
        }
        Command::Laplacian(a) => {
            let u = read_field(&a.input)?;
            let s = laplacian_field(&u, *u.window())?;
            out.write(&a.out, &encode_igf1(&s))?;
            Ok(json!({}))
        }
        Command::Continuum(a) => {
            let ss = ifs_generate(a.depth)?;
            let layers: Vec<Value> =
                ss.layers().iter().map(|l| json!({"kind": format!("{:?}", l.kind), "maps": l.maps.len()})).collect();
            let decay = patch_measure_decay(&ss);
            let ok = decay.total == "1";
            out.write_json(&a.out, &json!({"depth": a.depth, "layers": layers, "areas": decay}))?;
            if !ok {
                return Err(Error::Domain(format!("areas sum to {} instead of 1", decay.total)));
            }
            Ok(json!({"depth": a.depth, "pieces": ss.pieces().len()}))
        }
        Command::Pieces(a) => {
            let ss = ifs_generate(a.depth)?;
            let pieces: Vec<_> = ss.pieces().iter().map(|p| p.to_json()).collect();
            out.write_json(&a.out, &pieces)?;
            Ok(json!({"pieces": pieces.len()}))
        }
        Command::Match(a) => {
            let image = read_field(&a.input)?;
            let pattern = PeriodicPattern::decode(&std::fs::read_to_string(&a.pattern)?)?;
            let region = box_region(&image, &a.region)?;
            let reports = a.r.iter().map(|&r| match_fraction(&image, &pattern, &region, r)).collect::<Result<Vec<_>>>()?;
            out.write_json(&a.out, &reports)?;
            Ok(json!({"fractions": reports.iter().map(|m| m.fraction).collect::<Vec<_>>()}))
        }
        Command::DetectPeriod(a) => {
            let image = read_field(&a.input)?;
            let region = box_region(&image, &a.region)?;
            let pattern = detect_period(&image, &region, a.bound)
                .ok_or_else(|| Error::Domain(format!("no period lattice within bound {}", a.bound)))?;
            out.write(&a.out, pattern.encode().as_bytes())?;
            Ok(json!({"covolume": pattern.covolume()}))
        }
        Command::AnalyzeConvergence(a) => {
            let rows = convergence_report(&parse_shape(&a.shape)?, &a.ns, a.depth)?;
            out.write_json(&a.out, &rows)?;
            Ok(json!({"rows": rows.len()}))
        }
        Command::AnalyzeDefects(a) => {
            let sol = solve_least(&build_mask(&parse_shape(&a.shape)?, a.n)?, a.cutoff);
            let rows = defect_report(&sol, &ifs_generate(a.depth)?, &a.r, a.k_max)?;
            out.write_json(&a.out, &rows)?;
            Ok(json!({"rows": rows.len()}))
        }
        Command::AnalyzePerfect(a) => {
            let rows = perfect_check(&a.ms, a.min_patch, &a.contrast)?;
            out.write_json(&a.out, &rows)?;
            Ok(json!({"rows": rows.len()}))
        }
        Command::Render(a) => {
            let palette = Palette::parse(&a.palette)?;
            let img = match (&a.input, a.depth) {
                (Some(p), None) => render_field(&read_field(p)?, palette),
                (None, Some(d)) => render_pieces(&ifs_generate(d)?, a.resolution)?,
                _ => return Err(Error::Domain("render needs exactly one of --in or --depth".into())),
            };
            out.write(&a.out, &img.encode())?;
            Ok(json!({"width": img.width, "height": img.height}))
        }
        Command::Shift(a) => {
            let u = read_field(&a.input)?;
            out.write(&a.out, &encode_igf1(&shift_cutoff(&u, a.alpha)))?;
            Ok(json!({}))
        }
        Command::Experiments(a) => experiments(a, out),
    }
}

fn experiments(a: &ExperimentArgs, out: &mut Outputs) -> Result<Value> {
    std::fs::create_dir_all(&a.out)?;
    let shape = parse_shape(&a.shape)?;
    let mut fields = Vec::new();
    for &n in &a.ns {
        let sol = solve_least(&build_mask(&shape, n)?, DEFAULT_CUTOFF);
        let bytes = encode_igf1(&sol.u);
        let path = a.out.join(format!("u{n}.igf"));
        out.write(&path, &bytes)?;
        let lap = sol.laplacian();
        out.write(&a.out.join(format!("s{n}.ppm")), &render_field(&lap, Palette::Sandpile).encode())?;
        fields.push(json!({"n": n, "file": path.file_name().unwrap().to_string_lossy(), "sha256": sha256_hex(&bytes)}));
    }
    let conv = convergence_report(&shape, &a.ns, a.depth)?;
    out.write_json(&a.out.join("convergence.json"), &conv)?;
    let ss = ifs_generate(a.depth)?;
    out.write_json(&a.out.join("decay.json"), &patch_measure_decay(&ss))?;
    out.write(&a.out.join("pieces.ppm"), &render_pieces(&ss, 256)?.encode())?;
    if let Some(&n) = a.ns.last() {
        let sol = solve_least(&build_mask(&shape, n)?, DEFAULT_CUTOFF);
        out.write_json(&a.out.join("defects.json"), &defect_report(&sol, &ss, &a.r, 2)?)?;
    }
    out.write_json(&a.out.join("perfect.json"), &perfect_check(&a.ms, 5, &[200])?)?;
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": {"shape": shape.name(), "ns": a.ns, "depth": a.depth, "r": a.r, "ms": a.ms, "cutoff": DEFAULT_CUTOFF},
        "fields": fields,
    });
    out.write_json(&a.out.join("manifest.json"), &manifest)?;
    Ok(json!({"fields": a.ns.len()}))
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Solve(_) => "solve",
        Command::Laplacian(_) => "laplacian",
        Command::Continuum(_) => "continuum",
        Command::Pieces(_) => "pieces",
        Command::Match(_) => "match",
        Command::DetectPeriod(_) => "detect-period",
        Command::AnalyzeConvergence(_) => "analyze-convergence",
        Command::AnalyzeDefects(_) => "analyze-defects",
        Command::AnalyzePerfect(_) => "analyze-perfect",
        Command::Render(_) => "render",
        Command::Shift(_) => "shift",
        Command::Experiments(_) => "experiments",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let mut outputs = Outputs::default();
    let (status, code, result) = match run(&cli.command, &mut outputs) {
        Ok(v) => ("ok", 0, v),
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_domain() { 2 } else { 1 };
            ("error", code, json!({"message": e.to_string()}))
        }
    };
    let manifest = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "status": status,
        "exit": code,
        "outputs": outputs.0,
        "result": result,
    });
    println!("{manifest}");
    ExitCode::from(code)
}
