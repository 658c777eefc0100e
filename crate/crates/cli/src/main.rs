//! `gnm`: run gradient-navigation crowd experiments from the command line.

mod output;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gnm_core::calibration::{calibrate, fit_wall_distance, StandoffScenario};
use gnm_core::experiments::{lanes_run, mean_flow_by_width, CorridorRun};
use gnm_core::floorfield::{build_speed_function, fast_march};
use gnm_core::integrator::{run_simulation, TrajectoryWriter};
use gnm_core::measurement::{
    speed_stats_rows, write_collisions, write_density_speed, write_flow, write_lanes, write_speed_stats, DensitySpeedRecorder,
    LaneRecorder, SpeedRecorder,
};
use gnm_core::scenario::{
    bidirectional_walkway, bottleneck, corridor, load_scenario, save_scenario, Config, ModelParams, PresetKind,
};
use gnm_core::{Error, ErrorClass};

use output::{write_manifest, write_plot, Plot};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "gnm", version, about = "Gradient navigation model pedestrian simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its metric files.
    Run(RunArgs),
    /// Run a preset over a parameter grid and aggregate one row per run.
    Sweep(SweepArgs),
    /// Solve the standoff condition for the repulsion heights.
    Calibrate(CalibrateArgs),
    /// Dump the floor field of one target.
    Field(FieldArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Preset {
    Bottleneck,
    FundamentalDiagram,
    StopAndGo,
    Lanes,
    Standoff,
}

impl Preset {
    fn kind(self) -> PresetKind {
        match self {
            Preset::Bottleneck => PresetKind::Bottleneck,
            Preset::FundamentalDiagram => PresetKind::FundamentalDiagram,
            Preset::StopAndGo => PresetKind::StopAndGo,
            Preset::Lanes => PresetKind::Lanes,
            Preset::Standoff => PresetKind::Standoff,
        }
    }
}

#[derive(Args, Debug)]
struct Source {
    /// Built-in experiment.
    #[arg(long, value_enum, conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<Preset>,
    /// Scenario file (JSON) or a `run.json` manifest.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Bottleneck width (m).
    #[arg(long, allow_negative_numbers = true)]
    width: Option<f64>,
    /// Global density for corridor and walkway presets (P/m^2).
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
}

#[derive(Args, Debug)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time (s).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    tol_abs: Option<f64>,
    #[arg(long)]
    tol_rel: Option<f64>,
    /// Override a model parameter, e.g. `--param ped_radius=1.0`.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory.
    #[arg(long, env = "GNM_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Also write every sampled position to `trajectories.csv`.
    #[arg(long)]
    trajectories: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    /// Bottleneck widths (m).
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 1.0, 1.2, 1.4, 1.6, 2.0])]
    widths: Vec<f64>,
    /// Global densities for corridor presets (P/m^2); defaults to 0.5, 1.0, ..., 6.0.
    #[arg(long, value_delimiter = ',')]
    densities: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
    seeds: Vec<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    #[arg(long, env = "GNM_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Density of the lattice the walker is packed in (P/m^2).
    #[arg(long, default_value_t = 7.0)]
    rho_max: f64,
    #[arg(long, default_value_t = 0.70)]
    ped_radius: f64,
    #[arg(long, default_value_t = 0.25)]
    obstacle_radius: f64,
    /// Distance from the walker to the wall (m).
    #[arg(long, default_value_t = 0.2)]
    wall_distance: f64,
    /// Include every lattice site within the pedestrian radius instead of the closest shell.
    #[arg(long)]
    layered: bool,
    /// Scan cells per axis on the search box.
    #[arg(long, default_value_t = 50)]
    scan: usize,
    /// Also find the wall distance at which p_B equals this value.
    #[arg(long)]
    fit_p_b: Option<f64>,
    /// Store the calibrated heights and radii in this scenario file.
    #[arg(long, value_name = "SCENARIO")]
    write_back: Option<PathBuf>,
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    #[arg(long, env = "GNM_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FieldArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 1)]
    target: u32,
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    #[arg(long, env = "GNM_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("invalid value for `{k}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Field(a) => cmd_field(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        return match err.class() {
            ErrorClass::Config => EXIT_CONFIG,
            ErrorClass::Numeric => EXIT_NUMERIC,
            ErrorClass::Io => EXIT_IO,
        };
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        EXIT_IO
    } else {
        EXIT_CONFIG
    }
}

fn positive(name: &str, v: f64) -> anyhow::Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::config(name, format!("must be positive, got {v}")).into());
    }
    Ok(v)
}

fn base_config(source: &Source) -> anyhow::Result<Config> {
    if let Some(path) = &source.scenario {
        if source.width.is_some() || source.rho.is_some() {
            bail!(Error::config("--scenario", "--width and --rho only apply to presets"));
        }
        return Ok(load_scenario(path)?);
    }
    let preset = source.preset.expect("clap requires a preset or a scenario");
    let width = source.width.map(|w| positive("--width", w)).transpose()?;
    let rho = source.rho.map(|r| positive("--rho", r)).transpose()?;
    let config = match (preset, width, rho) {
        (Preset::Bottleneck, Some(w), None) => bottleneck(w),
        (Preset::FundamentalDiagram, None, Some(r)) => corridor(40.0, 4.0, r),
        (Preset::StopAndGo, None, Some(r)) => corridor(50.0, 4.0, r),
        (Preset::Lanes, None, Some(r)) => bidirectional_walkway(r),
        (p, None, None) => p.kind().default_config(),
        (p, _, _) => bail!(Error::config(
            "--width/--rho",
            format!("not applicable to preset {}", p.kind().file_stem())
        )),
    };
    Ok(config)
}

fn apply_params(model: &mut ModelParams, params: &[(String, f64)]) -> anyhow::Result<()> {
    for (k, v) in params {
        model.set(k, *v)?;
    }
    Ok(())
}

fn apply(config: &mut Config, o: &Overrides) -> anyhow::Result<()> {
    if let Some(seed) = o.seed {
        config.population.seed = seed;
    }
    if let Some(d) = o.duration {
        config.duration = d;
    }
    if let Some(t) = o.tol_abs {
        config.integrator.tol_abs = t;
    }
    if let Some(t) = o.tol_rel {
        config.integrator.tol_rel = t;
    }
    apply_params(&mut config.model, &o.params)?;
    config.validate()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = base_config(&args.source)?;
    apply(&mut config, &args.overrides)?;
    prepare_dir(&args.out)?;
    let clock = Instant::now();

    let mut density = DensitySpeedRecorder::new(&config.measurement);
    let mut speeds = SpeedRecorder::new(config.measurement.warmup);
    let mut lanes = LaneRecorder::new(&config.measurement);
    let mut trajectory = args
        .trajectories
        .then(|| create(&args.out, "trajectories.csv").map(TrajectoryWriter::new))
        .transpose()?;
    let result = {
        let mut sinks: Vec<&mut dyn gnm_core::integrator::Sink> = vec![&mut density, &mut speeds, &mut lanes];
        if let Some(t) = trajectory.as_mut() {
            sinks.push(t);
        }
        run_simulation(&config, &mut sinks)?
    };
    let wall_clock = clock.elapsed().as_secs_f64();

    write_density_speed(create(&args.out, "density_speed.csv")?, &density.rows)?;
    write_plot(&args.out, Plot::DensitySpeed)?;
    write_collisions(create(&args.out, "collisions.csv")?, &result.collisions)?;
    if config.measurement.flow_line.is_some() {
        write_flow(create(&args.out, "flow.csv")?, &result.crossings)?;
        write_plot(&args.out, Plot::Flow)?;
    }
    if config.scenario.is_periodic() && speeds.moments.count() > 0 {
        let rho = config.total_agents() as f64 / config.scenario.domain.area();
        let rows = speed_stats_rows(&[(rho, speeds.moments.finish()?)], config.measurement.filter_width);
        write_speed_stats(create(&args.out, "speed_stats.csv")?, &rows)?;
        write_plot(&args.out, Plot::SpeedStats)?;
    }
    if !lanes.records.is_empty() {
        write_lanes(create(&args.out, "lanes.csv")?, &lanes.records)?;
    }
    write_manifest(&args.out, "run", &config, serde_json::to_value(&result)?, wall_clock)?;

    println!(
        "t_end {:.3} s, {} steps ({} rejected), {} crossings, {} absorbed, min distance {:.3} m, wall clock {:.1} s",
        result.t_end,
        result.accepted_steps,
        result.rejected_steps,
        result.crossings.len(),
        result.absorbed.len(),
        result.min_distance,
        wall_clock
    );
    Ok(())
}

fn default_ladder() -> Vec<f64> {
    (1..=12).map(|k| k as f64 * 0.5).collect()
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    if args.seeds.is_empty() {
        bail!(Error::config("--seeds", "grid is empty"));
    }
    let mut model = ModelParams::default();
    apply_params(&mut model, &args.params)?;
    model.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel.unwrap_or(0))
        .build()
        .context("building the worker pool")?;
    prepare_dir(&args.out)?;
    let clock = Instant::now();
    let mut manifest_config = args.preset.kind().default_config();
    manifest_config.model = model;

    let summary = match args.preset {
        Preset::Bottleneck => {
            if args.widths.is_empty() {
                bail!(Error::config("--widths", "grid is empty"));
            }
            for &w in &args.widths {
                positive("--widths", w)?;
            }
            let runs: Vec<_> = pool.install(|| {
                use rayon::prelude::*;
                let jobs: Vec<(f64, u64)> = args
                    .widths
                    .iter()
                    .flat_map(|&w| args.seeds.iter().map(move |&s| (w, s)))
                    .collect();
                jobs.par_iter()
                    .map(|&(w, s)| {
                        let mut c = bottleneck(w);
                        c.model = model;
                        c.population.seed = s;
                        if let Some(d) = args.duration {
                            c.duration = d;
                        }
                        gnm_core::experiments::bottleneck_run_config(&c, w).map(|(run, _)| run)
                    })
                    .collect::<gnm_core::Result<Vec<_>>>()
            })?;
            let mut out = create(&args.out, "sweep.csv")?;
            output::write_bottleneck_rows(&mut out, &runs)?;
            write_plot(&args.out, Plot::Bottleneck)?;
            serde_json::json!({ "runs": runs, "mean_flow": mean_flow_by_width(&runs) })
        }
        Preset::FundamentalDiagram | Preset::StopAndGo => {
            let densities = args.densities.clone().unwrap_or_else(default_ladder);
            if densities.is_empty() {
                bail!(Error::config("--densities", "grid is empty"));
            }
            for &r in &densities {
                positive("--densities", r)?;
            }
            let length = if args.preset == Preset::StopAndGo { 50.0 } else { 40.0 };
            let setup = CorridorRun {
                length,
                width: 4.0,
                duration: args.duration.unwrap_or(manifest_config.duration),
                warmup: manifest_config.measurement.warmup,
            };
            let seed = args.seeds[0];
            let rows = pool.install(|| setup.ladder(&densities, seed, &model, manifest_config.measurement.filter_width))?;
            write_speed_stats(create(&args.out, "speed_stats.csv")?, &rows)?;
            write_plot(&args.out, Plot::SpeedStats)?;
            serde_json::json!({ "corridor": setup, "seed": seed, "rows": rows })
        }
        Preset::Lanes => {
            let rho = args.densities.as_ref().and_then(|d| d.first().copied()).unwrap_or(0.3);
            let duration = args.duration.unwrap_or(manifest_config.duration);
            let records: Vec<_> = pool.install(|| {
                use rayon::prelude::*;
                args.seeds
                    .par_iter()
                    .map(|&s| lanes_run(rho, s, duration, &model).map(|r| (s, r)))
                    .collect::<gnm_core::Result<Vec<_>>>()
            })?;
            let mut out = create(&args.out, "sweep.csv")?;
            output::write_lane_rows(&mut out, &records)?;
            serde_json::json!({ "rho": rho, "duration": duration, "seeds": args.seeds })
        }
        Preset::Standoff => bail!(Error::config("--preset", "use `gnm calibrate` for the standoff experiment")),
    };
    write_manifest(&args.out, "sweep", &manifest_config, summary, clock.elapsed().as_secs_f64())?;
    println!("sweep written to {}", args.out.display());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let mut model = ModelParams::default();
    apply_params(&mut model, &args.params)?;
    let mut scenario = if args.layered {
        StandoffScenario::layered(args.rho_max, args.ped_radius)
    } else {
        StandoffScenario::single_layer(args.rho_max)
    };
    scenario.wall_distance = args.wall_distance;
    let c = calibrate(&scenario, args.ped_radius, args.obstacle_radius, &model, args.scan)?;
    println!(
        "p_p = {:.6}, p_B = {:.6}, residual {:.3e}, distance to (3.59, 9.96): {:.4}",
        c.p_p,
        c.p_b,
        c.residual,
        c.distance_to(3.59, 9.96)
    );
    let fit = match args.fit_p_b {
        Some(target) => {
            let (d, fc) = fit_wall_distance(&scenario, args.ped_radius, args.obstacle_radius, &model, target)?;
            println!("wall distance {d:.6} m gives p_p = {:.6}, p_B = {:.6}", fc.p_p, fc.p_b);
            Some(serde_json::json!({ "wall_distance": d, "calibration": fc }))
        }
        None => None,
    };
    prepare_dir(&args.out)?;
    let neighbors: Vec<[f64; 2]> = scenario.neighbors.iter().map(|p| [p.x, p.y]).collect();
    let report = serde_json::json!({
        "rho_max": args.rho_max,
        "ped_radius": args.ped_radius,
        "obstacle_radius": args.obstacle_radius,
        "wall_distance": scenario.wall_distance,
        "neighbors": neighbors,
        "calibration": c,
        "wall_fit": fit,
    });
    let path = args.out.join("calibration.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    if let Some(target) = &args.write_back {
        let mut config = load_scenario(target)?;
        config.model.ped_height = c.p_p;
        config.model.ped_radius = args.ped_radius;
        config.model.obstacle_height = c.p_b;
        config.model.obstacle_radius = args.obstacle_radius;
        config.validate()?;
        save_scenario(&config, target)?;
        println!("updated {}", target.display());
    }
    Ok(())
}

fn cmd_field(args: FieldArgs) -> anyhow::Result<()> {
    let mut config = base_config(&args.source)?;
    apply_params(&mut config.model, &args.params)?;
    config.validate()?;
    config.scenario.target(args.target)?;
    let speed = build_speed_function(&config.scenario, &config.model);
    let field = fast_march(&config.scenario, args.target, &speed, config.model.moll_radius)?;
    prepare_dir(&args.out)?;
    let name = format!("field_{}.csv", args.target);
    field.write_csv(create(&args.out, &name)?)?;
    write_plot(&args.out, Plot::Field(args.target))?;
    println!(
        "{} nodes written to {}",
        field.grid.nx * field.grid.ny,
        args.out.join(name).display()
    );
    Ok(())
}
