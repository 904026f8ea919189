use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use swbreak::joint::{estimate as run_estimate, EstimateConfig};
use swbreak::montecarlo::{
    aggregate, read_replications, replication_estimate_config, run_replications,
    simulate_replication, table_markdown, write_replications, write_table_csv, Cell,
    ExperimentConfig,
};
use swbreak::panel_io::{
    normal_to_original, pit_to_normal, read_panel_csv, screen_locations, write_estimation,
    write_json_file, write_matrix_csv, write_panel_csv, Labels, RawPanel, TransformState,
    DEFAULT_MAX_MISSING_FRACTION,
};
use swbreak::simgen::{GridSpec, SchemeKind};

use crate::config::{parse_sets, parse_value, resolve, resolved_json, Flat};
use crate::{CliError, Common, Direction, EstimateArgs, McArgs, SimulateArgs, TransformArgs};

/// Success rate below which `mc` exits with a failure code.
const MIN_SUCCESS_RATE: f64 = 0.95;

fn compute(e: impl std::fmt::Display) -> CliError {
    CliError::Compute(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Flag overrides: the typed flags first, then every `--set`.
fn overrides(
    common: &Common,
    typed: Vec<(&str, Option<Value>)>,
) -> Result<Vec<(String, Value)>, CliError> {
    let mut out: Vec<(String, Value)> = typed
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect();
    if let Some(o) = &common.output {
        out.push(("output".into(), Value::from(o.display().to_string())));
    }
    out.extend(parse_sets(&common.set)?);
    Ok(out)
}

fn output_dir(s: &str) -> Result<PathBuf, CliError> {
    if s.is_empty() {
        return Err(usage("no output directory given"));
    }
    Ok(PathBuf::from(s))
}

fn input_file(s: &str) -> Result<PathBuf, CliError> {
    if s.is_empty() {
        return Err(usage("no input file given"));
    }
    let p = PathBuf::from(s);
    if !p.is_file() {
        return Err(usage(format!("input file {} does not exist", p.display())));
    }
    Ok(p)
}

fn write_resolved(dir: &Path, flat: &Flat) -> Result<(), CliError> {
    fs::write(dir.join("config_resolved.json"), resolved_json(flat)).map_err(compute)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

fn opt<T: Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|x| serde_json::to_value(x).expect("flag values serialize"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimulateRun {
    output: String,
    scheme: SchemeKind,
    rho: f64,
    t_len: usize,
    /// Replication seed; the estimate subcommand derives its fold seeds from
    /// the same value.
    seed: u64,
    grid: GridSpec,
    group1_size: usize,
    noise_sd: f64,
    link_probability: f64,
    n_blocks: usize,
    block_side_range: (usize, usize),
}

impl Default for SimulateRun {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            output: ".".into(),
            scheme: SchemeKind::Queen,
            rho: 0.5,
            t_len: 100,
            seed: 1,
            grid: e.grid,
            group1_size: e.group1_size,
            noise_sd: e.noise_sd,
            link_probability: e.link_probability,
            n_blocks: e.n_blocks,
            block_side_range: e.block_side_range,
        }
    }
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let o = overrides(
        &a.common,
        vec![
            ("scheme", a.scheme.map(Value::from)),
            ("rho", opt(a.rho)),
            ("t_len", opt(a.t_len)),
            ("seed", opt(a.seed)),
            ("noise_sd", opt(a.noise_sd)),
        ],
    )?;
    let (run, flat) = resolve(&SimulateRun::default(), a.common.config.as_deref(), &o)?;
    let dir = output_dir(&run.output)?;
    let cell = Cell {
        scheme: run.scheme,
        rho: run.rho,
        t_len: run.t_len,
    };
    cell.validate().map_err(usage)?;
    let exp = ExperimentConfig {
        grid: run.grid,
        group1_size: run.group1_size,
        noise_sd: run.noise_sd,
        link_probability: run.link_probability,
        n_blocks: run.n_blocks,
        block_side_range: run.block_side_range,
        ..ExperimentConfig::default()
    };
    let sim = simulate_replication(&cell, run.seed, &exp).map_err(usage)?;
    create_dir(&dir)?;
    let panel = RawPanel::from_observations(&sim.panel);
    let labels = Labels::of(&panel);
    write_panel_csv(dir.join("panel.csv"), &panel).map_err(compute)?;
    write_matrix_csv(
        dir.join("w_true.csv"),
        "location",
        &labels.locations,
        &labels.locations,
        sim.spec.weights.matrix(),
    )
    .map_err(compute)?;
    write_matrix_csv(
        dir.join("schedule.csv"),
        "time",
        &labels.time,
        &labels.locations,
        sim.spec.schedule.levels(),
    )
    .map_err(compute)?;
    write_resolved(&dir, &flat)?;
    log::info!(
        "wrote a {}x{} panel to {}",
        sim.panel.t_len(),
        sim.panel.n(),
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EstimateRun {
    input: String,
    output: String,
    /// When set, replaces both fold seeds by the values a simulation
    /// replication with this seed would use.
    seed: Option<u64>,
    estimate: EstimateConfig,
}

impl Default for EstimateRun {
    fn default() -> Self {
        Self {
            input: String::new(),
            output: ".".into(),
            seed: None,
            estimate: EstimateConfig::default(),
        }
    }
}

pub fn estimate(a: EstimateArgs) -> Result<(), CliError> {
    let o = overrides(
        &a.common,
        vec![
            (
                "input",
                a.input.map(|p| Value::from(p.display().to_string())),
            ),
            ("seed", opt(a.seed)),
            ("estimate.tail_freeze_fraction", opt(a.tail_freeze)),
        ],
    )?;
    let (run, flat) = resolve(&EstimateRun::default(), a.common.config.as_deref(), &o)?;
    let input = input_file(&run.input)?;
    let dir = output_dir(&run.output)?;
    if !(0.0..1.0).contains(&run.estimate.tail_freeze_fraction) {
        return Err(usage(format!(
            "estimate.tail_freeze_fraction = {} must lie in [0, 1)",
            run.estimate.tail_freeze_fraction
        )));
    }
    let raw = read_panel_csv(&input).map_err(|e| usage(format!("{}: {e}", input.display())))?;
    let panel = raw.to_observations().map_err(|e| {
        usage(format!(
            "{}: {e}; screen the panel with `transform` first",
            input.display()
        ))
    })?;
    let cfg = match run.seed {
        Some(s) => replication_estimate_config(&run.estimate, s),
        None => run.estimate,
    };
    let est = run_estimate(&panel, &cfg).map_err(compute)?;
    let labels = Labels::of(&raw);
    create_dir(&dir)?;
    write_estimation(&dir, &est.result, &labels).map_err(compute)?;
    write_json_file(
        dir.join("candidates.json"),
        &est.candidates.to_json(&labels.locations),
    )
    .map_err(compute)?;
    write_resolved(&dir, &flat)?;
    let d = &est.result.diagnostics;
    log::info!(
        "{} of {} candidate breaks kept, {} links, spectral radius {}",
        d.selected_breaks,
        d.candidate_breaks,
        d.links,
        d.spectral_radius
            .map_or("unknown".into(), |r| format!("{r:.4}"))
    );
    for w in &d.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct McRun {
    output: String,
    #[serde(flatten)]
    experiment: ExperimentConfig,
}

pub fn mc(a: McArgs) -> Result<(), CliError> {
    let cells = if a.cells.is_empty() {
        None
    } else {
        let parsed = a
            .cells
            .iter()
            .map(|c| c.trim().parse::<Cell>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(usage)?;
        Some(serde_json::to_value(parsed).map_err(compute)?)
    };
    let o = overrides(
        &a.common,
        vec![
            ("cells", cells),
            ("replications", opt(a.reps)),
            ("master_seed", opt(a.seed)),
        ],
    )?;
    let defaults = McRun {
        output: ".".into(),
        experiment: ExperimentConfig::default(),
    };
    let (run, flat) = resolve(&defaults, a.common.config.as_deref(), &o)?;
    let dir = output_dir(&run.output)?;
    let cfg = run.experiment;
    cfg.validate().map_err(usage)?;
    let rep_path = dir.join("replications.csv");
    let existing = if a.resume && rep_path.is_file() {
        let f = fs::File::open(&rep_path).map_err(usage)?;
        read_replications(f).map_err(|e| usage(format!("{}: {e}", rep_path.display())))?
    } else {
        Vec::new()
    };
    let total = cfg.cell_list().len() * cfg.replications;
    log::info!(
        "{} cells, {total} replications, {} already done",
        cfg.cell_list().len(),
        existing.len()
    );
    let step = (total / 20).max(1);
    let progress = move |done: usize, total: usize| {
        if done.is_multiple_of(step) || done == total {
            log::info!("{done}/{total} replications");
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(compute)?;
    let records = pool
        .install(|| run_replications(&cfg, &existing, Some(&progress)))
        .map_err(compute)?;
    let table = aggregate(&cfg.cell_list(), &records);
    create_dir(&dir)?;
    let file = |name: &str| fs::File::create(dir.join(name)).map_err(compute);
    write_replications(file("replications.csv")?, &records).map_err(compute)?;
    write_table_csv(file("table.csv")?, &table).map_err(compute)?;
    fs::write(dir.join("table.md"), table_markdown(&table)).map_err(compute)?;
    write_resolved(&dir, &flat)?;
    let rate = table.success_rate();
    if rate < MIN_SUCCESS_RATE {
        let failed = records.iter().filter(|r| r.metrics.is_none()).count();
        return Err(compute(format!(
            "{failed} of {} replications failed (success rate {:.1}%)",
            records.len(),
            100.0 * rate
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransformRun {
    direction: String,
    input: String,
    output: String,
    /// State file; defaults to `transform_state.json` in the output directory
    /// when mapping to normal scores.
    state: String,
    max_missing_fraction: f64,
}

impl Default for TransformRun {
    fn default() -> Self {
        Self {
            direction: "to-normal".into(),
            input: String::new(),
            output: ".".into(),
            state: String::new(),
            max_missing_fraction: DEFAULT_MAX_MISSING_FRACTION,
        }
    }
}

pub fn transform(a: TransformArgs) -> Result<(), CliError> {
    let direction = a.direction.map(|d| {
        parse_value(match d {
            Direction::ToNormal => "to-normal",
            Direction::ToOriginal => "to-original",
        })
    });
    let o = overrides(
        &a.common,
        vec![
            ("direction", direction),
            (
                "input",
                a.input.map(|p| Value::from(p.display().to_string())),
            ),
            (
                "state",
                a.state.map(|p| Value::from(p.display().to_string())),
            ),
            ("max_missing_fraction", opt(a.max_missing)),
        ],
    )?;
    let (run, flat) = resolve(&TransformRun::default(), a.common.config.as_deref(), &o)?;
    let input = input_file(&run.input)?;
    let dir = output_dir(&run.output)?;
    let raw = read_panel_csv(&input).map_err(|e| usage(format!("{}: {e}", input.display())))?;
    match run.direction.as_str() {
        "to-normal" => {
            let (screened, report) =
                screen_locations(&raw, run.max_missing_fraction).map_err(usage)?;
            let (scores, state) = pit_to_normal(&screened).map_err(usage)?;
            let scored = screened.with_values(scores.values()).map_err(compute)?;
            create_dir(&dir)?;
            let state_path = if run.state.is_empty() {
                dir.join("transform_state.json")
            } else {
                PathBuf::from(&run.state)
            };
            write_panel_csv(dir.join("scores.csv"), &scored).map_err(compute)?;
            let mut json = state.to_json().map_err(compute)?;
            json.push('\n');
            fs::write(&state_path, json).map_err(compute)?;
            write_json_file(dir.join("screening.json"), &report).map_err(compute)?;
            for d in &report.dropped {
                log::info!(
                    "dropped location {} ({} of {} values missing)",
                    d.label,
                    d.missing,
                    raw.t_len()
                );
            }
        }
        "to-original" => {
            if run.state.is_empty() {
                return Err(usage("to-original needs a transform state (--state)"));
            }
            let text =
                fs::read_to_string(&run.state).map_err(|e| usage(format!("{}: {e}", run.state)))?;
            let state = TransformState::from_json(&text)
                .map_err(|e| usage(format!("{}: {e}", run.state)))?;
            if raw.location_labels() != state.location_labels().as_slice() {
                return Err(usage(
                    "score columns do not match the locations of the transform state",
                ));
            }
            let scores = raw.to_observations().map_err(usage)?;
            let back = normal_to_original(scores.values(), &state).map_err(usage)?;
            let original = raw.with_values(&back.values).map_err(compute)?;
            create_dir(&dir)?;
            write_panel_csv(dir.join("original.csv"), &original).map_err(compute)?;
            if back.clamped > 0 {
                log::warn!(
                    "{} score(s) were clamped to the observed range",
                    back.clamped
                );
            }
        }
        other => {
            return Err(usage(format!(
                "direction '{other}' is not to-normal or to-original"
            )))
        }
    }
    write_resolved(&dir, &flat)
}
