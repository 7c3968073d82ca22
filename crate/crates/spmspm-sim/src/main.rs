//! Command-line driver: single-layer runs, synthetic sweeps and
//! model-chain comparisons against the fixed-dataflow baselines.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spmspm_sim::dataflow::{Dataflow, Family};
use spmspm_sim::engine::LayerSpec;
use spmspm_sim::harness::config::AcceleratorConfig;
use spmspm_sim::harness::model::{GridSpec, ModelSpec};
use spmspm_sim::harness::report;
use spmspm_sim::harness::select::{
    self, parse_family, run_model, select_dataflow, simulate_all, Strategy,
};
use spmspm_sim::sparse::{convert, load_matrix_str, ValueMode};
use spmspm_sim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "spmspm-sim",
    about = "Cycle-level simulator of a reconfigurable sparse-sparse matmul accelerator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Base seed for synthetic operands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Value domain of generated matrices.
    #[arg(long, global = true, default_value = "int", value_parser = parse_value_mode)]
    value_mode: ValueMode,
}

#[derive(Args)]
struct ConfigArg {
    /// Accelerator config file (key = value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one layer from matrix files.
    Run {
        /// Left operand (Matrix Market or dense text).
        #[arg(long)]
        a: PathBuf,
        /// Right operand (Matrix Market or dense text).
        #[arg(long)]
        b: PathBuf,
        /// ip-m | op-m | gust-m | ip-n | op-n | gust-n | auto | heuristic
        #[arg(long)]
        dataflow: String,
        #[command(flatten)]
        config: ConfigArg,
        /// Write JSONL records here in addition to the stdout summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate all six dataflows over a synthetic grid.
    Sweep {
        /// Grid file (M/N/K/spA/spB value lists).
        #[arg(long)]
        grid: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a layer chain under a strategy and against fixed baselines.
    Compare {
        /// Model file (ordered layer descriptors).
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated fixed-dataflow baselines to compare against.
        #[arg(long, default_value = "ip,op,gust")]
        baselines: String,
        /// auto | heuristic | a fixed dataflow name
        #[arg(long, default_value = "auto")]
        strategy: String,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_value_mode(s: &str) -> std::result::Result<ValueMode, String> {
    match s {
        "int" => Ok(ValueMode::Int),
        "real" => Ok(ValueMode::Real),
        other => Err(format!("bad value mode {other:?} (expected int or real)")),
    }
}

fn load_config(arg: &ConfigArg) -> Result<AcceleratorConfig> {
    match &arg.config {
        None => Ok(AcceleratorConfig::default()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            AcceleratorConfig::from_config_text(&text)
        }
    }
}

fn read_input(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &PathBuf, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { a, b, dataflow, config, out } => {
            let cfg = load_config(&config)?;
            let (a_mat, _) = load_matrix_str(&read_input(&a)?)?;
            let (b_mat, _) = load_matrix_str(&read_input(&b)?)?;
            let layer = LayerSpec::new(a_mat, b_mat, Some("L0:file".into()))?;
            run_one(&layer, &dataflow, &cfg, out.as_ref())
        }
        Command::Sweep { grid, config, out } => {
            let cfg = load_config(&config)?;
            let mut spec = GridSpec::parse(&read_input(&grid)?)?;
            if cli.seed != 0 {
                spec.seed ^= cli.seed;
            }
            let rep = select::sweep(&spec, &cfg, cli.value_mode)?;
            print!("{}", report::sweep_table(&rep));
            if let Some(path) = out {
                write_output(&path, &report::sweep_jsonl(&rep)?)?;
            }
            Ok(())
        }
        Command::Compare { model, baselines, strategy, config, out } => {
            let cfg = load_config(&config)?;
            let spec = ModelSpec::parse(&read_input(&model)?)?;
            let strat = Strategy::parse(&strategy)?;
            let reader = |p: &str| read_input(&PathBuf::from(p));
            let run = run_model(&spec, &cfg, strat, cli.value_mode, &reader)?;
            let mut base_totals: Vec<(String, u64)> = Vec::new();
            for name in baselines.split(',').filter(|s| !s.is_empty()) {
                let family: Family = parse_family(name.trim())?;
                let base =
                    run_model(&spec, &cfg, Strategy::FixedFamily(family), cli.value_mode, &reader)?;
                base_totals.push((report::baseline_label(family), base.total_cycles));
            }
            print!("{}", report::model_table(&run, &strat.label(), &base_totals));
            if let Some(path) = out {
                write_output(&path, &report::model_jsonl(&run, &strat.label(), &base_totals)?)?;
            }
            Ok(())
        }
    }
}

fn run_one(
    layer: &LayerSpec,
    dataflow: &str,
    cfg: &AcceleratorConfig,
    out: Option<&PathBuf>,
) -> Result<()> {
    let runs: Vec<(Dataflow, spmspm_sim::SimResult, bool)> = match dataflow {
        "auto" => {
            let sims = simulate_all(layer, cfg)?;
            let (chosen, _) = select_dataflow(layer, cfg, Strategy::Exhaustive)?;
            Dataflow::ALL
                .into_iter()
                .zip(sims)
                .map(|(d, r)| (d, r, d == chosen))
                .collect()
        }
        "heuristic" => {
            let (d, r) = select_dataflow(layer, cfg, Strategy::Heuristic)?;
            vec![(d, r, true)]
        }
        name => {
            let d = Dataflow::parse_cli_name(name)?;
            // Operands are staged offline in the required formats; a
            // mismatched hand-off is a chain cost, not a single-run cost.
            let (a_fmt, b_fmt) = spmspm_sim::dataflow::required_formats(d);
            let staged = LayerSpec::new(
                convert(&layer.a, a_fmt),
                convert(&layer.b, b_fmt),
                layer.label.clone(),
            )?;
            let r = spmspm_sim::run_layer(&staged, d, cfg)?;
            vec![(d, r, true)]
        }
    };

    let mut jsonl = String::new();
    for (d, r, chosen) in &runs {
        let star = if *chosen { "*" } else { " " };
        println!(
            "{star}{:<7} cycles={} (sta {} / str {} / merge {} / conv {}) psums={} miss={:.3}% out_nnz={}",
            d.cli_name(),
            r.cycles_total,
            r.cycles.stationary,
            r.cycles.streaming,
            r.cycles.merging,
            r.cycles.conversion,
            r.psum_count,
            100.0 * r.str_cache.miss_rate,
            r.c.nnz()
        );
        if out.is_some() {
            let rec = serde_json::json!({
                "layer": 0,
                "label": layer.label.as_deref().unwrap_or("L0"),
                "dataflow": d.cli_name(),
                "chosen": chosen,
                "cycles_total": r.cycles_total,
                "cycles_stationary": r.cycles.stationary,
                "cycles_streaming": r.cycles.streaming,
                "cycles_merging": r.cycles.merging,
                "cycles_conversion": r.cycles.conversion,
                "sta_read_bytes": r.traffic.sta_read,
                "str_read_bytes": r.traffic.str_read,
                "psram_write_bytes": r.traffic.psram_write,
                "psram_read_bytes": r.traffic.psram_read,
                "dram_read_bytes": r.traffic.dram_read,
                "dram_write_bytes": r.traffic.dram_write,
                "str_hits": r.str_cache.hits,
                "str_misses": r.str_cache.misses,
                "str_miss_rate": r.str_cache.miss_rate,
                "psum_count": r.psum_count,
                "ec_conversions": r.ec_conversions,
                "tile_passes": r.tile_passes,
                "output_nnz": r.c.nnz(),
            });
            jsonl.push_str(&rec.to_string());
            jsonl.push('\n');
        }
    }
    if let Some(path) = out {
        write_output(path, &jsonl)?;
    }
    Ok(())
}
