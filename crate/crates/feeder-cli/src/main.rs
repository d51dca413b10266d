//! `feeder-reduce`: command-line front end for the feeder reduction
//! pipeline: ingest -> visualize -> powerflow -> reduce -> simulate ->
//! report, plus the synthetic fixture generator.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use feeder_core::dynamics::{
    extract_metrics, simulate_scenario, EventMetrics, ScenarioSpec, SimulationParams,
};
use feeder_core::fixtures::{
    generate_fixture_with_manifest, write_fixture_csv, write_manifest, FixtureSpec,
};
use feeder_core::ingest::{parse_sections, validate_topology, FeederDataset};
use feeder_core::model::ConductorLibrary;
use feeder_core::powerflow::{sweep_voltage_drops, SweepSolution};
use feeder_core::reduction::{reduce_dataset, Composition, ReducedFeederModel};
use feeder_core::topology::{export_visualization, kamada_kawai_layout, ExportFormat, FeederGraph};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

mod config;
mod report;

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "feeder-reduce",
    version,
    about = "Reduce radial distribution feeders to three-segment models and simulate fault scenarios"
)]
struct Cli {
    /// Optional TOML or JSON config file; command-line flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for generators.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// Section CSV file.
    dataset: PathBuf,
    /// External id of the feeder head; inferred when omitted.
    #[arg(long)]
    root: Option<String>,
    /// Conductor library JSON; the builtin table is used when omitted.
    #[arg(long)]
    conductors: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a section CSV, writing a validation report.
    Ingest(DatasetArgs),
    /// Lay out the feeder graph and export a drawing.
    Visualize {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long, default_value = "svg")]
        format: ExportFormat,
        /// Reduced-model JSON whose boundaries are drawn as dividers.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 50_000)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Run the voltage-drop sweep and export the solution.
    Powerflow {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        head_v: Option<f64>,
    },
    /// Reduce the feeder to the three-segment model.
    Reduce {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        head_v: Option<f64>,
        #[arg(long)]
        window_frac: Option<f64>,
        #[arg(long)]
        min_pocket_frac: Option<f64>,
        /// Load composition as sphim,three_phase_motor,resistive shares.
        #[arg(long)]
        composition: Option<String>,
    },
    /// Simulate a fault scenario on a reduced model.
    Simulate {
        /// Reduced-model JSON, or `feeder-o` for the builtin baseline.
        model: PathBuf,
        /// Scenario JSON path or a builtin label (s1, s2, s3).
        #[arg(long)]
        scenario: String,
    },
    /// Render a comparison table from metrics JSON files.
    Report {
        /// Metrics files produced by `simulate`.
        metrics: Vec<PathBuf>,
    },
    /// Generate a synthetic feeder dataset with a ground-truth manifest.
    GenFixture {
        #[arg(long, default_value_t = 478)]
        nodes: usize,
        #[arg(long, default_value_t = 485)]
        sections: usize,
        #[arg(long, default_value_t = 90)]
        loaded: usize,
        #[arg(long, default_value_t = 3.63)]
        head_mva: f64,
        /// Comma-separated pocket load fractions.
        #[arg(long, default_value = "0.19,0.35,0.46")]
        fractions: String,
        #[arg(long, default_value = "feederA-synth")]
        name: String,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(ref args) => cmd_ingest(&cli, &cfg, args),
        Command::Visualize {
            ref dataset,
            format,
            ref model,
            iterations,
            tol,
        } => cmd_visualize(&cli, &cfg, dataset, format, model.as_deref(), iterations, tol),
        Command::Powerflow {
            ref dataset,
            head_v,
        } => cmd_powerflow(&cli, &cfg, dataset, head_v),
        Command::Reduce {
            ref dataset,
            head_v,
            window_frac,
            min_pocket_frac,
            ref composition,
        } => cmd_reduce(
            &cli,
            &cfg,
            dataset,
            head_v,
            window_frac,
            min_pocket_frac,
            composition.as_deref(),
        ),
        Command::Simulate {
            ref model,
            ref scenario,
        } => cmd_simulate(&cli, &cfg, model, scenario),
        Command::Report { ref metrics } => cmd_report(&cli, metrics),
        Command::GenFixture {
            nodes,
            sections,
            loaded,
            head_mva,
            ref fractions,
            ref name,
        } => cmd_gen_fixture(&cli, nodes, sections, loaded, head_mva, fractions, name),
    }
}

fn load_dataset(args: &DatasetArgs) -> Result<FeederDataset> {
    let library = match &args.conductors {
        Some(path) => ConductorLibrary::from_json_file(path)
            .with_context(|| format!("loading conductor library {}", path.display()))?,
        None => ConductorLibrary::builtin(),
    };
    let dataset = parse_sections(&args.dataset, library, args.root.as_deref())?;
    Ok(dataset)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

/// `--out` interpreted as a file path: a bare directory gets the default
/// file name appended; parent directories are created.
fn out_file(cli: &Cli, default_name: &str) -> Result<PathBuf> {
    let path = match &cli.out {
        Some(p) if p.extension().is_some() => p.clone(),
        Some(p) => p.join(default_name),
        None => PathBuf::from(default_name),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    Ok(path)
}

fn say(cli: &Cli, msg: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", msg.as_ref());
    }
}

fn cmd_ingest(cli: &Cli, _cfg: &FileConfig, args: &DatasetArgs) -> Result<()> {
    let dataset = load_dataset(args)?;
    let report = validate_topology(&dataset);
    let path = out_file(cli, &format!("{}-validation.json", dataset.name))?;
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    say(
        cli,
        format!(
            "{}: {} nodes, {} sections ({} loaded), root {}; report {}",
            dataset.name,
            report.node_count,
            report.section_count,
            report.loaded_section_count,
            dataset.external_ids[report.root.index()],
            path.display()
        ),
    );
    if !report.accepted {
        bail!(
            "dataset rejected: {} unreachable node(s), see {}",
            report.unreachable_nodes.len(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_visualize(
    cli: &Cli,
    _cfg: &FileConfig,
    args: &DatasetArgs,
    format: ExportFormat,
    model: Option<&Path>,
    iterations: usize,
    tol: f64,
) -> Result<()> {
    let dataset = load_dataset(args)?;
    let graph = FeederGraph::build(&dataset)?;
    let layout = kamada_kawai_layout(&graph.adjacency, iterations, tol)?;
    let boundaries = match model {
        Some(path) => {
            let model = read_model(path)?;
            model.boundary_nodes.map(|b| {
                vec![
                    feeder_core::model::NodeId(b[0]),
                    feeder_core::model::NodeId(b[1]),
                ]
            })
        }
        None => None,
    };
    let ext = match format {
        ExportFormat::Dot => "dot",
        ExportFormat::Json => "json",
        ExportFormat::Svg => "svg",
    };
    let path = out_file(cli, &format!("{}.{ext}", dataset.name))?;
    export_visualization(
        &dataset,
        &graph,
        &layout,
        format,
        &path,
        boundaries.as_deref(),
    )?;
    say(
        cli,
        format!(
            "layout stress {:.6} after {} updates; wrote {}",
            layout.stress,
            layout.stress_trace.len() - 1,
            path.display()
        ),
    );
    Ok(())
}

#[derive(Serialize)]
struct NodeVoltageOut {
    id: usize,
    external_id: String,
    v_pu: f64,
    angle_deg: f64,
}

#[derive(Serialize)]
struct SectionCurrentOut {
    index: usize,
    from: usize,
    to: usize,
    i_pu: f64,
    angle_deg: f64,
}

#[derive(Serialize)]
struct SweepOut {
    dataset: String,
    head_voltage_pu: f64,
    head_mva: f64,
    head_mw: f64,
    head_mvar: f64,
    iterations: usize,
    min_voltage_pu: f64,
    nodes: Vec<NodeVoltageOut>,
    sections: Vec<SectionCurrentOut>,
}

fn sweep_with(
    cfg: &FileConfig,
    dataset: &FeederDataset,
    head_v: Option<f64>,
) -> Result<(SweepSolution, f64)> {
    let head = head_v.or(cfg.head_v).unwrap_or(1.02);
    let options = cfg.sweep_options();
    let solution = sweep_voltage_drops(dataset, head, &options)?;
    Ok((solution, head))
}

fn cmd_powerflow(
    cli: &Cli,
    cfg: &FileConfig,
    args: &DatasetArgs,
    head_v: Option<f64>,
) -> Result<()> {
    let dataset = load_dataset(args)?;
    let (solution, head) = sweep_with(cfg, &dataset, head_v)?;
    let out = SweepOut {
        dataset: dataset.name.clone(),
        head_voltage_pu: head,
        head_mva: solution.head_power_mva.norm(),
        head_mw: solution.head_power_mva.re,
        head_mvar: solution.head_power_mva.im,
        iterations: solution.iterations,
        min_voltage_pu: solution.min_voltage_pu(),
        nodes: solution
            .node_voltage
            .iter()
            .enumerate()
            .map(|(i, v)| NodeVoltageOut {
                id: i,
                external_id: dataset.external_ids[i].clone(),
                v_pu: v.norm(),
                angle_deg: v.arg().to_degrees(),
            })
            .collect(),
        sections: solution
            .section_current
            .iter()
            .enumerate()
            .map(|(i, c)| SectionCurrentOut {
                index: i,
                from: dataset.sections[i].from.index(),
                to: dataset.sections[i].to.index(),
                i_pu: c.norm(),
                angle_deg: c.arg().to_degrees(),
            })
            .collect(),
    };
    let path = out_file(cli, &format!("{}-powerflow.json", dataset.name))?;
    std::fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")?;
    say(
        cli,
        format!(
            "head {:.4} MVA ({:.4} MW, {:.4} Mvar) in {} iterations; min |V| {:.4} pu; wrote {}",
            out.head_mva,
            out.head_mw,
            out.head_mvar,
            out.iterations,
            out.min_voltage_pu,
            path.display()
        ),
    );
    Ok(())
}

fn parse_composition(text: &str) -> Result<Composition> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("composition must be three comma-separated numbers"))?;
    if parts.len() != 3 {
        bail!("composition must have exactly three shares");
    }
    let c = Composition {
        sphim: parts[0],
        three_phase_motor: parts[1],
        resistive: parts[2],
    };
    if (c.sum() - 1.0).abs() > 1e-9 {
        bail!("composition shares sum to {}, expected 1", c.sum());
    }
    Ok(c)
}

#[allow(clippy::too_many_arguments)]
fn cmd_reduce(
    cli: &Cli,
    cfg: &FileConfig,
    args: &DatasetArgs,
    head_v: Option<f64>,
    window_frac: Option<f64>,
    min_pocket_frac: Option<f64>,
    composition: Option<&str>,
) -> Result<()> {
    let dataset = load_dataset(args)?;
    let graph = FeederGraph::build(&dataset)?;
    let (solution, _) = sweep_with(cfg, &dataset, head_v)?;
    let mut params = cfg.reduction_params();
    if let Some(w) = window_frac {
        params.window_frac = w;
    }
    if let Some(m) = min_pocket_frac {
        params.min_pocket_frac = m;
    }
    if let Some(c) = composition {
        params.composition = parse_composition(c)?;
    }
    let model = reduce_dataset(&dataset, &graph, &solution, &params)?;
    let path = out_file(cli, &format!("{}-model.json", dataset.name))?;
    std::fs::write(&path, serde_json::to_string_pretty(&model)? + "\n")?;
    let fr: Vec<String> = model
        .segments
        .iter()
        .map(|s| format!("{:.3}", s.load_fraction))
        .collect();
    let drops: Vec<String> = model
        .segments
        .iter()
        .map(|s| format!("{:.2}%", s.vdrop_pct))
        .collect();
    say(
        cli,
        format!(
            "{}: fractions [{}], drops [{}], rated {:.3} MVA; wrote {}",
            model.name,
            fr.join(", "),
            drops.join(", "),
            model.rated_mva,
            path.display()
        ),
    );
    Ok(())
}

fn read_model(path: &Path) -> Result<ReducedFeederModel> {
    if path.as_os_str() == "feeder-o" {
        return Ok(feeder_core::reduction::builtin_feeder_o());
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model file {}", path.display()))?;
    let model: ReducedFeederModel = serde_json::from_str(&text)
        .with_context(|| format!("parsing model file {}", path.display()))?;
    model.validate().map_err(|e| anyhow!("invalid model: {e}"))?;
    Ok(model)
}

/// Wrapper stored in metrics JSON so reports can label their rows.
#[derive(Serialize, Deserialize)]
struct MetricsRecord {
    feeder: String,
    scenario: String,
    metrics: EventMetrics,
}

fn cmd_simulate(cli: &Cli, cfg: &FileConfig, model_path: &Path, scenario: &str) -> Result<()> {
    let model = read_model(model_path)?;
    let spec = match ScenarioSpec::builtin(scenario) {
        Some(s) => s,
        None => {
            let text = std::fs::read_to_string(scenario)
                .with_context(|| format!("reading scenario file {scenario}"))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing scenario file {scenario}"))?
        }
    };
    let params: SimulationParams = cfg.simulation_params();
    let ts = simulate_scenario(&model, &spec, &params)?;
    let metrics = extract_metrics(&ts, spec.fault_start_ms);

    let dir = out_dir(cli)?;
    let csv_path = dir.join(format!("{}-{}-timeseries.csv", model.name, spec.label));
    let mut csv = std::fs::File::create(&csv_path)?;
    ts.write_csv(&mut csv)?;
    let metrics_path = dir.join(format!("{}-{}-metrics.json", model.name, spec.label));
    let record = MetricsRecord {
        feeder: model.name.clone(),
        scenario: spec.label.clone(),
        metrics: metrics.clone(),
    };
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&record)? + "\n")?;
    say(
        cli,
        format!(
            "{}/{}: {} TMS {} IMS {:?}; wrote {} and {}",
            model.name,
            spec.label,
            metrics.st,
            metrics.tms,
            metrics.ims,
            csv_path.display(),
            metrics_path.display()
        ),
    );
    Ok(())
}

fn cmd_report(cli: &Cli, metrics: &[PathBuf]) -> Result<()> {
    if metrics.is_empty() {
        bail!("report needs at least one metrics JSON file");
    }
    let mut records = Vec::new();
    for path in metrics {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading metrics file {}", path.display()))?;
        let record: MetricsRecord = serde_json::from_str(&text)
            .with_context(|| format!("parsing metrics file {}", path.display()))?;
        records.push(record);
    }
    let table = report::render_markdown(&records);
    print!("{table}");
    if cli.out.is_some() {
        let path = out_file(cli, "report.md")?;
        std::fs::write(&path, &table)?;
        say(cli, format!("wrote {}", path.display()));
    }
    Ok(())
}

fn cmd_gen_fixture(
    cli: &Cli,
    nodes: usize,
    sections: usize,
    loaded: usize,
    head_mva: f64,
    fractions: &str,
    name: &str,
) -> Result<()> {
    let fractions: Vec<f64> = fractions
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("fractions must be comma-separated numbers"))?;
    let spec = FixtureSpec {
        name: name.to_string(),
        node_count: nodes,
        section_count: sections,
        loaded_section_count: loaded,
        target_head_mva: head_mva,
        target_pocket_fractions: fractions,
        seed: cli.seed.unwrap_or(42),
    };
    let (dataset, manifest) = generate_fixture_with_manifest(&spec)?;
    let dir = out_dir(cli)?;
    let csv_path = dir.join(format!("{name}.csv"));
    write_fixture_csv(&dataset, &csv_path)?;
    let manifest_path = dir.join(format!("{name}-manifest.json"));
    write_manifest(&manifest, &manifest_path)?;
    say(
        cli,
        format!(
            "{name}: {} nodes, {} sections ({} loaded), head {:.3} MVA, min |V| {:.4}; wrote {} and {}",
            manifest.node_count,
            manifest.section_count,
            manifest.loaded_section_count,
            manifest.achieved_head_mva,
            manifest.min_voltage_pu,
            csv_path.display(),
            manifest_path.display()
        ),
    );
    Ok(())
}
