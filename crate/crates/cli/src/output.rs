//! Run manifests, sweep tables and gnuplot script templates.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use gnm_core::experiments::BottleneckRun;
use gnm_core::measurement::LaneRecord;
use gnm_core::scenario::Config;
use serde_json::{json, Value};

/// Write `<kind>.json` holding everything needed to repeat the run.
pub fn write_manifest(dir: &Path, kind: &str, config: &Config, summary: Value, wall_clock: f64) -> anyhow::Result<()> {
    let manifest = json!({
        "command": kind,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.population.seed,
        "wall_clock": wall_clock,
        "config": config,
        "summary": summary,
    });
    let name = if kind == "run" {
        "run.json".to_string()
    } else {
        format!("{kind}.json")
    };
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))
}

pub fn write_bottleneck_rows(out: &mut impl Write, runs: &[BottleneckRun]) -> anyhow::Result<()> {
    writeln!(out, "width,seed,crossings,J,J_specific,min_distance,cone_depth,cone_spread")?;
    for r in runs {
        let (depth, spread) = r.cone.map_or((f64::NAN, f64::NAN), |c| (c.depth, c.spread));
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.3},{:.3}",
            r.width, r.seed, r.crossings, r.flow, r.specific_flow, r.min_distance, depth, spread
        )?;
    }
    Ok(())
}

pub fn write_lane_rows(out: &mut impl Write, runs: &[(u64, Vec<LaneRecord>)]) -> anyhow::Result<()> {
    writeln!(out, "seed,t,direction,count")?;
    for (seed, records) in runs {
        for r in records {
            writeln!(out, "{seed},{:.3},{},{}", r.t, r.direction, r.report.count)?;
        }
    }
    Ok(())
}

/// gnuplot templates shipped next to the data they plot.
#[derive(Debug, Clone, Copy)]
pub enum Plot {
    DensitySpeed,
    Flow,
    SpeedStats,
    Bottleneck,
    Field(u32),
}

impl Plot {
    fn file_name(self) -> String {
        match self {
            Plot::DensitySpeed => "density_speed.gp".into(),
            Plot::Flow => "flow.gp".into(),
            Plot::SpeedStats => "speed_stats.gp".into(),
            Plot::Bottleneck => "bottleneck.gp".into(),
            Plot::Field(id) => format!("field_{id}.gp"),
        }
    }

    fn script(self) -> String {
        let header = "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n";
        let body = match self {
            Plot::DensitySpeed => "set output 'density_speed.png'\n\
                 set xlabel 'local density [P/m^2]'\nset ylabel 'speed [m/s]'\n\
                 plot 'density_speed.csv' using 3:4 with dots notitle\n"
                .to_string(),
            Plot::Flow => "set output 'flow.png'\n\
                 set xlabel 't [s]'\nset ylabel 'cumulative crossings'\n\
                 plot 'flow.csv' using 1:0 with steps notitle\n"
                .to_string(),
            Plot::SpeedStats => "set output 'speed_stats.png'\n\
                 set xlabel 'density [P/m^2]'\nset ylabel 'normalized'\n\
                 plot 'speed_stats.csv' using 1:4 with linespoints title 'mean speed / 1.34', \\\n\
                 \x20    '' using 1:5 with linespoints title 'std / 0.26'\n"
                .to_string(),
            Plot::Bottleneck => "set output 'bottleneck.png'\n\
                 set xlabel 'width [m]'\nset ylabel 'J [P/s]'\n\
                 plot 'sweep.csv' using 1:4 with points pt 7 notitle\n"
                .to_string(),
            Plot::Field(id) => format!(
                "set output 'field_{id}.png'\nset view map\nset size ratio -1\n\
                 splot 'field_{id}.csv' using 1:2:($3 < 1e300 ? $3 : 1/0) with image notitle\n"
            ),
        };
        format!("{header}{body}")
    }
}

pub fn write_plot(dir: &Path, plot: Plot) -> anyhow::Result<()> {
    let path = dir.join(plot.file_name());
    fs::write(&path, plot.script()).with_context(|| format!("writing {}", path.display()))
}
