//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! The full experiment grid (criterion 7, first half) takes hours and only
//! runs with `SWBREAK_FULL_GRID=1`; everything else runs on every
//! `cargo test`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use swbreak::detect::{detect_candidates, DetectConfig};
use swbreak::model::{MeanLevelSchedule, ModelSpec};
use swbreak::montecarlo::{aggregate, run_replications, AggregateTable, Cell, ExperimentConfig};
use swbreak::panel_io::{read_panel_csv, screen_locations, write_panel_csv, RawPanel};
use swbreak::penalized::{kkt_residual, lasso_cd, ridge_fit, Design, PenalizedProblem};
use swbreak::seed;
use swbreak::simgen::{gen_random, generate, simulate_panel, GridSpec, SchemeConfig, SchemeKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn swbreak(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_swbreak"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Result<(), String> {
    let out = swbreak(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`swbreak {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

// ---------------------------------------------------------------- criterion 1

/// `y'y - 2 c'b + b'Gb + lambda sum w |b|`
struct Quadratic {
    g: DMatrix<f64>,
    c: DVector<f64>,
    yy: f64,
    lambda: f64,
    w: Vec<f64>,
}

impl Quadratic {
    fn value(&self, b: &[f64]) -> f64 {
        let p = b.len();
        let mut v = self.yy;
        for i in 0..p {
            v += -2.0 * self.c[i] * b[i] + self.lambda * self.w[i] * b[i].abs();
            for j in 0..p {
                v += b[i] * self.g[(i, j)] * b[j];
            }
        }
        v
    }
}

/// Exhaustive search over integer multiples of `step` in the box
/// `[center - half*step, center + half*step]` intersected with `[lo, hi]`.
fn grid_pass(
    q: &Quadratic,
    lo: &[f64],
    hi: &[f64],
    center: &[i64],
    step: f64,
    half: i64,
) -> (Vec<i64>, f64, bool) {
    let p = center.len();
    let range: Vec<(i64, i64)> = (0..p)
        .map(|j| {
            let a = (center[j] - half).max((lo[j] / step).ceil().max(-1e15) as i64);
            let b = (center[j] + half).min((hi[j] / step).floor().min(1e15) as i64);
            (a, b)
        })
        .collect();
    let mut idx: Vec<i64> = range.iter().map(|r| r.0).collect();
    let mut best = (idx.clone(), f64::INFINITY);
    let mut b = vec![0.0; p];
    loop {
        for j in 0..p {
            b[j] = idx[j] as f64 * step;
        }
        let v = q.value(&b);
        if v < best.1 {
            best = (idx.clone(), v);
        }
        let mut j = 0;
        while j < p {
            idx[j] += 1;
            if idx[j] <= range[j].1 {
                break;
            }
            idx[j] = range[j].0;
            j += 1;
        }
        if j == p {
            break;
        }
    }
    // touching a window edge that is not a feasibility bound
    let at_edge = (0..p).any(|j| {
        (best.0[j] == range[j].0 && range[j].0 == center[j] - half)
            || (best.0[j] == range[j].1 && range[j].1 == center[j] + half)
    });
    (best.0, best.1, at_edge)
}

/// Coarse-to-fine grid search ending at spacing 0.001.
fn grid_minimum(q: &Quadratic, lo: &[f64], hi: &[f64], radius: f64) -> f64 {
    const HALF: i64 = 10;
    let p = lo.len();
    let mut step = 10f64
        .powi((radius / HALF as f64).log10().ceil() as i32)
        .max(0.001);
    let mut center = vec![0i64; p];
    loop {
        let (mut best, mut value, mut edge) = grid_pass(q, lo, hi, &center, step, HALF);
        let mut moves = 0;
        while edge && moves < 1000 {
            center = best.clone();
            (best, value, edge) = grid_pass(q, lo, hi, &center, step, HALF);
            moves += 1;
        }
        if step <= 0.0015 {
            return value;
        }
        let next = step / 10.0;
        center = best
            .iter()
            .map(|&i| (i as f64 * step / next).round() as i64)
            .collect();
        step = next;
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    let mut solved = 0;
    while solved < 200 {
        let p = rng.random_range(1..=3usize);
        let m = rng.random_range(8..=30usize);
        let x = DMatrix::from_fn(m, p, |_, _| normal(&mut rng));
        let g = x.transpose() * &x;
        let eig = g.clone().symmetric_eigen().eigenvalues;
        let (emin, emax) = (eig.min(), eig.max());
        if emin <= 0.0 || emax / emin > 20.0 {
            continue;
        }
        let truth: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m)
            .map(|i| (0..p).map(|j| x[(i, j)] * truth[j]).sum::<f64>() + 0.5 * normal(&mut rng))
            .collect();
        let yv = DVector::from_column_slice(&y);
        let c = x.transpose() * &yv;
        let w: Vec<f64> = (0..p)
            .map(|_| {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    rng.random_range(0.2..3.0)
                }
            })
            .collect();
        let boxed: Vec<bool> = (0..p).map(|_| rng.random_bool(0.5)).collect();
        let lo: Vec<f64> = boxed
            .iter()
            .map(|&b| if b { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        let hi: Vec<f64> = boxed
            .iter()
            .map(|&b| if b { 1.0 } else { f64::INFINITY })
            .collect();
        let lmax = (0..p).map(|j| 2.0 * c[j].abs() / w[j]).fold(0.0, f64::max);
        let lambda = rng.random_range(0.0..1.2) * lmax;
        let q = Quadratic {
            g,
            c: c.clone(),
            yy: yv.dot(&yv),
            lambda,
            w: w.clone(),
        };
        let radius = 2.0 * c.norm() / emin + 1.0;

        let problem = PenalizedProblem::new(Design::from_dense(&x).unwrap(), y)
            .and_then(|pr| pr.with_penalty_weights(w))
            .and_then(|pr| pr.with_bounds(lo.clone(), hi.clone()))
            .unwrap();
        let fit = match lasso_cd(&problem, lambda, None) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("solver error: {e}")),
        };
        let solver = problem.objective(lambda, &fit.coefficients, 0.0);
        let grid = grid_minimum(&q, &lo, &hi, radius);
        worst_gap = worst_gap.max((solver - grid).abs());
        worst_kkt = worst_kkt.max(kkt_residual(&problem, &fit));
        solved += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_gap <= 2e-3 && worst_kkt < 1e-5 && secs < 60.0,
        format!("200 problems, max |objective gap| {worst_gap:.2e}, max KKT {worst_kkt:.2e}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut rng = seed::rng(202);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(3..=40usize);
        let p = rng.random_range(1..=12usize);
        let lambda = rng.random_range(0.01..10.0);
        let x = DMatrix::from_fn(m, p, |_, _| normal(&mut rng));
        let y: Vec<f64> = (0..m).map(|_| 3.0 * normal(&mut rng)).collect();
        let got = ridge_fit(&Design::from_dense(&x).unwrap(), &y, lambda).unwrap();
        // least squares on [X; sqrt(lambda) I] b = [y; 0] by QR
        let mut aug = DMatrix::zeros(m + p, p);
        aug.view_mut((0, 0), (m, p)).copy_from(&x);
        for j in 0..p {
            aug[(m + j, j)] = lambda.sqrt();
        }
        let mut rhs = DVector::zeros(m + p);
        rhs.rows_mut(0, m)
            .copy_from(&DVector::from_column_slice(&y));
        let qr = aug.qr();
        let qty = qr.q().transpose() * rhs;
        let want = qr.r().solve_upper_triangular(&qty).unwrap();
        for j in 0..p {
            worst = worst.max((got[j] - want[j]).abs());
        }
    }
    outcome(
        worst <= 1e-8,
        format!("100 problems, max |difference| {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let mut cfg = DetectConfig::default();
    let (mut hits, mut empty) = (0, 0);
    for s in 0..100u64 {
        let mut rng = seed::rng(seed::derive(303, &[s]));
        let noise: Vec<f64> = (0..100).map(|_| normal(&mut rng)).collect();
        // level 0 through t = 50, level 5 from t = 51
        let step: Vec<f64> = noise
            .iter()
            .enumerate()
            .map(|(k, e)| if k + 1 > 50 { 5.0 + e } else { *e })
            .collect();
        cfg.seed = s;
        let c = detect_candidates(&step, &cfg).unwrap();
        if c.iter().any(|t| (50..=52).contains(t)) {
            hits += 1;
        }
        if detect_candidates(&noise, &cfg).unwrap().is_empty() {
            empty += 1;
        }
    }
    outcome(
        hits >= 95 && empty >= 95,
        format!("step hit {hits}/100, constant series empty {empty}/100"),
    )
}

// ------------------------------------------------------------ criteria 4 and 5

fn queen_cells(reps: usize) -> AggregateTable {
    let rhos = [0.25, 0.5, 0.75];
    let cfg = ExperimentConfig {
        replications: reps,
        cells: Some(
            rhos.iter()
                .map(|&rho| Cell {
                    scheme: SchemeKind::Queen,
                    rho,
                    t_len: 100,
                })
                .collect(),
        ),
        ..ExperimentConfig::default()
    };
    let records = run_replications(&cfg, &[], None).expect("valid experiment");
    aggregate(&cfg.cell_list(), &records)
}

fn queen_row(table: &AggregateTable, rho: f64) -> &swbreak::montecarlo::AggregateRow {
    table
        .row(&Cell {
            scheme: SchemeKind::Queen,
            rho,
            t_len: 100,
        })
        .expect("cell was run")
}

fn criterion_4(table: &AggregateTable) -> Outcome {
    let r = queen_row(table, 0.5);
    let pi0 = r.specificity.mean.unwrap_or(f64::NAN);
    let piw = r.sensitivity.mean.unwrap_or(f64::NAN);
    let bw = r.weight_bias.mean.unwrap_or(f64::NAN);
    let rmse = r.fitted_rmse.mean.unwrap_or(f64::NAN);
    let pass = (0.80..=0.97).contains(&pi0)
        && (0.47..=0.77).contains(&piw)
        && bw.abs() <= 0.03
        && (0.85..=0.97).contains(&rmse)
        && r.failed == 0;
    outcome(
        pass,
        format!(
            "M = {}: Pi_0 {pi0:.3} (published 0.905), Pi_w {piw:.3} (0.622), B_w {bw:.4} (0.006), RMSE_y {rmse:.3} (0.902), {} failed",
            r.succeeded + r.failed,
            r.failed
        ),
    )
}

fn criterion_5(table: &AggregateTable) -> Outcome {
    let v: Vec<f64> = [0.25, 0.5, 0.75]
        .iter()
        .map(|&rho| queen_row(table, rho).sensitivity.mean.unwrap_or(f64::NAN))
        .collect();
    outcome(
        v[0] < v[1] && v[1] < v[2],
        format!(
            "Pi_w {:.3} < {:.3} < {:.3} (published 0.278, 0.622, 0.781)",
            v[0], v[1], v[2]
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for kind in SchemeKind::ALL {
        for s in 0..4u64 {
            let base = generate(GridSpec::default(), &SchemeConfig::new(kind, s)).unwrap();
            for rho in [0.25, 0.5, 0.75] {
                let r = base.scaled(rho).unwrap().spectral_radius().unwrap();
                worst = worst.max((r - rho).abs());
                count += 1;
            }
        }
    }
    outcome(
        worst <= 1e-8,
        format!("{count} matrices, max |radius - rho| {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- criterion 7

/// 240 monthly prices at 24 locations; the last one misses 130 months and
/// a few retained locations have sporadic gaps. Some locations break after
/// the frozen tail starts.
fn empirical_panel(dir: &Path) -> PathBuf {
    let (t_len, n) = (240, 23);
    let base = gen_random(n, &SchemeConfig::new(SchemeKind::Random, 7))
        .unwrap()
        .scaled(0.4)
        .unwrap();
    let levels = DMatrix::from_fn(t_len, n, |row, i| {
        let t = row + 1;
        match i % 4 {
            0 if t >= 120 => 2.0,
            1 if t >= 234 => 4.0,
            2 if (60..180).contains(&t) => -2.0,
            _ => 0.0,
        }
    });
    let spec = ModelSpec::new(base, MeanLevelSchedule::from_levels(levels).unwrap(), 1.0).unwrap();
    let y = simulate_panel(&spec, 77).unwrap();
    let mut rng = seed::rng(78);
    let time: Vec<String> = (0..t_len)
        .map(|k| format!("{}-{:02}", 2000 + k / 12, k % 12 + 1))
        .collect();
    let locations: Vec<String> = (0..=n).map(|i| format!("{}", 10115 + 2 * i)).collect();
    let rows = (0..t_len)
        .map(|t| {
            let mut r: Vec<Option<f64>> = (0..n)
                .map(|i| {
                    let price = 2500.0 * (0.08 * y.values()[(t, i)]).exp();
                    let v = (price * 100.0).round() / 100.0;
                    (i % 5 != 3 || rng.random_range(0.0..1.0) > 0.05).then_some(v)
                })
                .collect();
            r.push((t >= 130).then_some(1000.0 + t as f64));
            r
        })
        .collect();
    let raw = RawPanel::new(time, locations, rows).unwrap();
    let path = dir.join("prices.csv");
    write_panel_csv(&path, &raw).unwrap();
    path
}

fn candidate_instants(path: &Path) -> Vec<u64> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object()
        .unwrap()
        .values()
        .flat_map(|a| a.as_array().unwrap().iter().map(|t| t.as_u64().unwrap()))
        .collect()
}

fn break_instants(path: &Path) -> Vec<u64> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_array()
        .unwrap()
        .iter()
        .flat_map(|l| {
            l["breaks"]
                .as_array()
                .unwrap()
                .iter()
                .map(|b| b["t"].as_u64().unwrap())
        })
        .collect()
}

fn criterion_7_pipeline() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let prices = empirical_panel(dir);
    let p = |x: &Path| x.display().to_string();
    let tr = dir.join("transformed");
    run_ok(&[
        "transform",
        "--direction",
        "to-normal",
        "-i",
        &p(&prices),
        "-o",
        &p(&tr),
    ])?;
    let scores = tr.join("scores.csv");
    let state = tr.join("transform_state.json");
    let est = dir.join("estimate");
    run_ok(&[
        "estimate",
        "-i",
        &p(&scores),
        "-o",
        &p(&est),
        "--tail-freeze",
        "0.05",
        "--seed",
        "5",
    ])?;
    let cands = candidate_instants(&est.join("candidates.json"));
    let breaks = break_instants(&est.join("breaks.json"));
    if let Some(t) = cands.iter().chain(&breaks).find(|t| **t > 228) {
        return Err(format!(
            "break or candidate at t = {t} inside the frozen tail"
        ));
    }
    let back = dir.join("back");
    run_ok(&[
        "transform",
        "--direction",
        "to-original",
        "-i",
        &p(&scores),
        "--state",
        &p(&state),
        "-o",
        &p(&back),
    ])?;
    let (screened, report) = screen_locations(&read_panel_csv(&prices).unwrap(), 0.5).unwrap();
    let recovered = read_panel_csv(back.join("original.csv")).unwrap();
    if recovered != screened {
        return Err("round trip through the normal scores is not exact".into());
    }
    Ok(format!(
        "240x{} after dropping {} location(s): {} candidates, {} breaks, none after t = 228; round trip exact",
        screened.n(),
        report.dropped.len(),
        cands.len(),
        breaks.len()
    ))
}

const PUBLISHED_QUEEN: [(f64, usize, [f64; 4]); 6] = [
    (0.25, 100, [0.925, 0.278, 0.001, 0.934]),
    (0.25, 200, [0.911, 0.446, 0.002, 0.961]),
    (0.5, 100, [0.905, 0.622, 0.006, 0.902]),
    (0.5, 200, [0.909, 0.789, 0.008, 0.935]),
    (0.75, 100, [0.904, 0.781, 0.005, 0.905]),
    (0.75, 200, [0.919, 0.874, 0.006, 0.937]),
];

fn criterion_7_full_grid() -> Outcome {
    let cfg = ExperimentConfig::default();
    let records = run_replications(&cfg, &[], None).expect("valid experiment");
    let table = aggregate(&cfg.cell_list(), &records);
    let mut worst = 0.0f64;
    for (rho, t_len, published) in PUBLISHED_QUEEN {
        let r = table
            .row(&Cell {
                scheme: SchemeKind::Queen,
                rho,
                t_len,
            })
            .unwrap();
        let ours = [
            r.specificity.mean,
            r.sensitivity.mean,
            r.weight_bias.mean,
            r.fitted_rmse.mean,
        ];
        for (o, p) in ours.iter().zip(published) {
            worst = worst.max((o.unwrap_or(f64::NAN) - p).abs());
        }
    }
    println!("{}", swbreak::montecarlo::table_markdown(&table));
    outcome(
        worst <= 0.08,
        format!("max |ours - published| over Queen Pi_0, Pi_w, B_w, RMSE_y: {worst:.3}"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn twice(args: &[&str], out: &Path) -> Result<usize, String> {
    run_ok(args)?;
    let first = snapshot(out);
    run_ok(args)?;
    if snapshot(out) != first {
        return Err(format!("`swbreak {}` is not reproducible", args.join(" ")));
    }
    Ok(first.len())
}

fn criterion_8() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| tmp.path().join(name).display().to_string();
    let small = [
        "--set",
        "grid.rows=3",
        "--set",
        "grid.cols=3",
        "--set",
        "group1_size=4",
    ];
    let mut files = 0;

    let sim_dir = d("sim");
    let mut sim = vec![
        "simulate",
        "-o",
        &sim_dir as &str,
        "--t-len",
        "40",
        "--seed",
        "9",
    ];
    sim.extend(small);
    files += twice(&sim, Path::new(&sim_dir))?;

    let panel = format!("{sim_dir}/panel.csv");
    let est_dir = d("est");
    files += twice(
        &["estimate", "-i", &panel, "-o", &est_dir, "--seed", "9"],
        Path::new(&est_dir),
    )?;

    let mc_dir = d("mc");
    let mut mc = vec![
        "mc",
        "-o",
        &mc_dir as &str,
        "--cells",
        "queen:0.5:30,block:0.25:30",
        "--reps",
        "2",
    ];
    mc.extend(small);
    files += twice(&mc, Path::new(&mc_dir))?;
    // resuming keeps every stored replication
    let rep_path = Path::new(&mc_dir).join("replications.csv");
    let text = fs::read_to_string(&rep_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    fields[5] = "0.123456789".into();
    lines[1] = fields.join(",");
    fs::write(&rep_path, lines.join("\n") + "\n").unwrap();
    let tampered = snapshot(Path::new(&mc_dir));
    let mut resume = mc.clone();
    resume.push("--resume");
    run_ok(&resume)?;
    let after = snapshot(Path::new(&mc_dir));
    if after["replications.csv"] != tampered["replications.csv"] {
        return Err("--resume recomputed a stored replication".into());
    }

    let tr_dir = d("tr");
    files += twice(
        &[
            "transform",
            "--direction",
            "to-normal",
            "-i",
            &panel,
            "-o",
            &tr_dir,
        ],
        Path::new(&tr_dir),
    )?;
    let back_dir = d("back");
    let scores = format!("{tr_dir}/scores.csv");
    let state = format!("{tr_dir}/transform_state.json");
    files += twice(
        &[
            "transform",
            "--direction",
            "to-original",
            "-i",
            &scores,
            "--state",
            &state,
            "-o",
            &back_dir,
        ],
        Path::new(&back_dir),
    )?;
    Ok(format!("{files} files byte-identical across reruns of all four subcommands; --resume recomputes nothing"))
}

// ------------------------------------------------------------------------ main

fn report(n: &str, o: &Outcome) {
    println!(
        "criterion {n}: {} - {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn from_result(r: Result<String, String>) -> Outcome {
    match r {
        Ok(d) => outcome(true, d),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored.
    let mut all = true;
    let mut record = |n: &str, o: Outcome| {
        report(n, &o);
        all &= o.pass;
    };
    record("1", criterion_1());
    record("2", criterion_2());
    record("3", criterion_3());
    let table = queen_cells(50);
    record("4", criterion_4(&table));
    record("5", criterion_5(&table));
    record("6", criterion_6());
    record("7 (240x23 pipeline)", from_result(criterion_7_pipeline()));
    if std::env::var("SWBREAK_FULL_GRID").is_ok_and(|v| v == "1") {
        record("7 (full grid)", criterion_7_full_grid());
    } else {
        println!("criterion 7 (full grid): SKIPPED - hours of runtime; set SWBREAK_FULL_GRID=1 or run scripts/full_grid.sh");
    }
    record("8", from_result(criterion_8()));
    if !all {
        std::process::exit(1);
    }
}
