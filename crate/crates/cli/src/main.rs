mod manifest;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpscale::perfmodel::{amdahl_curve, calibrate as fit, iteration_compute_time, time_by_kind, Anchor};
use dpscale::scalesim::{large_batch_tradeoff, simulate as run_simulation, LargeBatchPolicy, LargeBatchReport};
use dpscale::sgdcore::{accuracy, batch_step_sweep, blobs, mean_loss, parallel_train, SgdConfig};
use dpscale::{DeviceProfile, Error, NetworkSpec, Scenario};

use manifest::RunManifest;
use output::{fmt_opt, prepare_dir, write_csv, write_series, write_text};

#[derive(Debug, Parser)]
#[command(name = "dpscale", version, about = "Scaling model for synchronous data-parallel training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Static properties of a network: layers, weights, model size, FLOPs.
    Analyze {
        #[arg(long)]
        network: PathBuf,
        /// Also break the iteration time down by layer kind on this device.
        #[arg(long)]
        device: Option<PathBuf>,
        #[arg(long)]
        batch: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Strong-scaling report for a scenario.
    Simulate(ScenarioArgs),
    /// Large-batch trade-off: the scenario with its global batch enlarged.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Batch enlargement factors; overrides the scenario's policy.
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<u64>>,
    },
    /// Train the reference perceptron on synthetic blobs.
    TrainToy(TrainArgs),
    /// Fit a device's effective FLOP rate to measured iteration times.
    Calibrate {
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        batch: Option<u64>,
        /// Measured seconds per iteration.
        #[arg(long)]
        seconds: f64,
        /// Further anchors as NETWORK:BATCH:SECONDS.
        #[arg(long)]
        anchor: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<u64>>,
    #[arg(long)]
    reduction_factor: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 512)]
    iterations: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    /// Held-out samples, generated from the same blobs.
    #[arg(long, default_value_t = 1024)]
    validation: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 1.5)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the (kB, kε, T/k) family for these k instead of a single run.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<u64>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Model(Error),
}

impl CliError {
    pub fn io(path: &Path, msg: String) -> Self {
        CliError::Usage(format!("{}: {msg}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Model(Error::Syntax { .. } | Error::Io { .. }) => 1,
            CliError::Model(Error::Invariant { .. }) => 2,
            CliError::Model(Error::Diverged { .. }) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Model(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Model(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Analyze { network, device, batch, out } => analyze(&network, device.as_deref(), batch, out.as_deref()),
        Command::Simulate(args) => simulate(&args),
        Command::Sweep { scenario, factors } => sweep(&scenario, factors),
        Command::TrainToy(args) => train_toy(&args),
        Command::Calibrate { device, network, batch, seconds, anchor, out } => {
            calibrate(&device, &network, batch, seconds, &anchor, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn analyze(network: &Path, device: Option<&Path>, batch: Option<u64>, out: Option<&Path>) -> Result<(), CliError> {
    let net = NetworkSpec::load(network)?;
    let mut s = net.summary();
    if let Some(b) = batch {
        if b == 0 {
            return Err(CliError::Usage("--batch must be at least 1".into()));
        }
        s.batch = b;
        s.flops_per_iteration =
            dpscale::netspec::flops_per_iteration(&net, b, dpscale::netspec::Direction::ForwardBackward);
    }
    let mut rows: Vec<(String, String)> = vec![
        ("network".into(), s.name.clone()),
        ("layers".into(), s.layers.to_string()),
        ("conv_layers".into(), s.conv_layers.to_string()),
        ("fc_layers".into(), s.fc_layers.to_string()),
        ("auxiliary_fc_layers".into(), s.auxiliary_fc_layers.to_string()),
        ("fc_weights".into(), s.fc_weights.to_string()),
        ("total_weights".into(), s.total_weights.to_string()),
        ("model_bytes".into(), s.model_bytes.to_string()),
        ("batch".into(), s.batch.to_string()),
        ("flops_per_iteration".into(), s.flops_per_iteration.to_string()),
        ("iterations_to_convergence".into(), s.iterations_to_convergence.to_string()),
        ("flops_to_convergence".into(), s.flops_to_convergence().to_string()),
    ];
    let mut inputs = vec![network.to_path_buf()];
    if let Some(dp) = device {
        let dev = DeviceProfile::load(dp)?;
        inputs.push(dp.to_path_buf());
        let total = iteration_compute_time(&net, s.batch, &dev);
        rows.push(("device".into(), dev.name.clone()));
        rows.push(("iteration_s".into(), total.to_string()));
        for (kind, t) in time_by_kind(&net, s.batch, &dev) {
            rows.push((format!("share_{kind}"), (t / total).to_string()));
        }
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in &rows {
        println!("{k:<width$}  {v}");
    }
    if let Some(dir) = out {
        let dir = prepare_dir(dir)?;
        let mut m = RunManifest::new("analyze", &dir);
        m.inputs = inputs;
        let records: Vec<Vec<String>> = rows.into_iter().map(|(k, v)| vec![k, v]).collect();
        write_csv(&dir.join("analyze.csv"), &m, &[], &["property", "value"], &records)?;
    }
    Ok(())
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(&args.scenario)?;
    if let Some(ns) = &args.n_list {
        s.n_list = ns.clone();
    }
    if let Some(r) = args.reduction_factor {
        s.reduction_factor = r;
    }
    s.validate()?;
    Ok(s)
}

fn scenario_manifest(name: &'static str, args: &ScenarioArgs, s: &Scenario, dir: &Path) -> RunManifest {
    let mut m = RunManifest::new(name, dir);
    m.inputs = vec![args.scenario.clone(), s.network_path.clone(), s.device_path.clone()];
    m
}

fn simulate(args: &ScenarioArgs) -> Result<(), CliError> {
    let s = load_scenario(args)?;
    let report = run_simulation(&s)?;
    let dir = prepare_dir(&args.out)?;
    let m = scenario_manifest("simulate", args, &s, &dir);

    let notes = vec![
        format!("scenario: {}", report.scenario),
        format!("global_batch: {}", report.global_batch),
        format!("crossover_n: {}", fmt_opt(report.crossover_n)),
        format!("convergence_hours: {}", report.convergence_hours),
    ];
    let header = [
        "n", "b", "compute_s", "comm_s", "data_stall_s", "iteration_s", "speedup", "efficiency", "comm_bound",
        "convergence_h",
    ];
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.b.to_string(),
                r.compute_s.to_string(),
                r.comm_s.to_string(),
                r.data_stall_s.to_string(),
                r.iteration_s.to_string(),
                r.speedup.to_string(),
                r.efficiency.to_string(),
                r.comm_bound.to_string(),
                r.convergence_h.to_string(),
            ]
        })
        .collect();
    write_csv(&dir.join("report.csv"), &m, &notes, &header, &rows)?;

    let by_n = |f: &dyn Fn(&dpscale::ScalingRow) -> f64| -> Vec<(f64, f64)> {
        report.rows.iter().map(|r| (r.n as f64, f(r))).collect()
    };
    write_series(&dir.join("speedup.series"), &m, &[("speedup", by_n(&|r| r.speedup))])?;
    write_series(
        &dir.join("timeline.series"),
        &m,
        &[
            ("forward_end", by_n(&|r| r.timeline.forward_end)),
            ("backward_end", by_n(&|r| r.timeline.backward_end)),
            ("comm_end", by_n(&|r| r.timeline.comm_end)),
            ("iteration_time", by_n(&|r| r.timeline.iteration_time)),
            ("idle_fraction", by_n(&|r| r.timeline.idle_fraction)),
        ],
    )?;
    write_series(&dir.join("compute.series"), &m, &[("compute_s", by_n(&|r| r.compute_s))])?;
    write_series(&dir.join("comm.series"), &m, &[("comm_s", by_n(&|r| r.comm_s))])?;
    let amdahl = amdahl_curve(report.serial_fraction, &s.nodes());
    write_series(
        &dir.join("amdahl.series"),
        &m,
        &[(
            &format!("amdahl_speedup s={}", report.serial_fraction),
            amdahl.points.iter().map(|p| (p.n as f64, p.speedup)).collect(),
        )],
    )?;

    println!("scenario {}  B = {}", report.scenario, report.global_batch);
    println!(
        "{:>6} {:>6} {:>11} {:>11} {:>11} {:>11} {:>9} {:>7}  bound",
        "n", "b", "compute_s", "comm_s", "stall_s", "iter_s", "speedup", "eff"
    );
    for r in &report.rows {
        println!(
            "{:>6} {:>6} {:>11.5} {:>11.5} {:>11.5} {:>11.5} {:>9.3} {:>7.3}  {}",
            r.n,
            r.b,
            r.compute_s,
            r.comm_s,
            r.data_stall_s,
            r.iteration_s,
            r.speedup,
            r.efficiency,
            if r.comm_bound { "comm" } else { "-" }
        );
    }
    println!("crossover_n: {}", report.crossover_n.map_or("none".into(), |n| n.to_string()));
    println!("convergence on one node: {:.1} h", report.convergence_hours);
    println!("wrote {}", dir.display());
    Ok(())
}

fn sweep(args: &ScenarioArgs, factors: Option<Vec<u64>>) -> Result<(), CliError> {
    let mut s = load_scenario(args)?;
    if let Some(f) = factors {
        let base = s.large_batch.clone().unwrap_or(LargeBatchPolicy {
            factors: vec![],
            step_rule: Default::default(),
            iteration_rule: Default::default(),
        });
        s.large_batch = Some(LargeBatchPolicy { factors: f, ..base });
        s.validate()?;
    }
    let report = large_batch_tradeoff(&s)?;
    let dir = prepare_dir(&args.out)?;
    let m = scenario_manifest("sweep", args, &s, &dir);
    let header = [
        "k",
        "global_batch",
        "step",
        "iterations",
        "n",
        "b",
        "iteration_s",
        "enlarged_speedup",
        "original_speedup",
        "work_normalized_speedup",
        "convergence_h",
    ];
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.global_batch.to_string(),
                r.step.to_string(),
                r.iterations.to_string(),
                r.n.to_string(),
                r.b.to_string(),
                r.iteration_s.to_string(),
                r.enlarged_speedup.to_string(),
                r.original_speedup.to_string(),
                r.work_normalized_speedup.to_string(),
                r.convergence_h.to_string(),
            ]
        })
        .collect();
    let notes = vec![format!("scenario: {}", report.scenario), LargeBatchReport::NOTE.to_string()];
    write_csv(&dir.join("large_batch.csv"), &m, &notes, &header, &rows)?;
    let reference: Vec<Vec<String>> = report
        .reference
        .iter()
        .map(|r| vec![r.global_batch.to_string(), r.k.to_string(), r.step.to_string(), r.top1.to_string()])
        .collect();
    write_csv(
        &dir.join("reference_accuracy.csv"),
        &m,
        &["measured AlexNet/ImageNet top-1 validation accuracy; reference only, not reproducible at desk scale".into()],
        &["global_batch", "k", "step", "top1"],
        &reference,
    )?;
    let mut series = Vec::new();
    let mut ks: Vec<u64> = report.rows.iter().map(|r| r.k).collect();
    ks.dedup();
    for k in ks {
        let pts: Vec<(f64, f64)> = report.rows.iter().filter(|r| r.k == k).map(|r| (r.n as f64, r.enlarged_speedup)).collect();
        series.push((format!("enlarged_speedup k={k}"), pts));
    }
    let named: Vec<(&str, Vec<(f64, f64)>)> = series.iter().map(|(n, p)| (n.as_str(), p.clone())).collect();
    write_series(&dir.join("large_batch.series"), &m, &named)?;

    println!("{:>4} {:>7} {:>6} {:>10} {:>10} {:>10} {:>10}", "k", "B", "n", "iter_s", "enlarged", "original", "work_norm");
    for r in &report.rows {
        println!(
            "{:>4} {:>7} {:>6} {:>10.5} {:>10.3} {:>10.3} {:>10.3}",
            r.k, r.global_batch, r.n, r.iteration_s, r.enlarged_speedup, r.original_speedup, r.work_normalized_speedup
        );
    }
    println!("note: {}", LargeBatchReport::NOTE);
    println!("wrote {}", dir.display());
    Ok(())
}

fn train_toy(a: &TrainArgs) -> Result<(), CliError> {
    if a.classes < 2 || a.dim == 0 || a.samples == 0 {
        return Err(CliError::Usage("need --classes >= 2, --dim >= 1 and --samples >= 1".into()));
    }
    let (train_set, validation) =
        blobs(a.samples + a.validation, a.dim, a.classes, a.separation, a.seed).split(a.samples);
    let cfg = SgdConfig {
        batch: a.batch,
        workers: a.workers,
        step: a.step,
        iterations: a.iterations,
        seed: a.seed,
        hidden: a.hidden,
    };
    let dir = prepare_dir(&a.out)?;
    let mut m = RunManifest::new("train-toy", &dir);
    m.seed = Some(a.seed);

    if let Some(factors) = &a.sweep {
        let rows = batch_step_sweep(&train_set, &validation, &cfg, factors)?;
        let records: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    r.batch.to_string(),
                    r.step.to_string(),
                    r.iterations.to_string(),
                    fmt_opt(r.train_loss),
                    fmt_opt(r.validation_accuracy),
                    fmt_opt(r.diverged_at),
                ]
            })
            .collect();
        write_csv(
            &dir.join("sweep.csv"),
            &m,
            &[],
            &["k", "batch", "step", "iterations", "train_loss", "validation_accuracy", "diverged_at"],
            &records,
        )?;
        for r in &rows {
            match (r.validation_accuracy, r.diverged_at) {
                (Some(acc), _) => println!("k={} B={} step={} T={}  val_acc={acc:.4}", r.k, r.batch, r.step, r.iterations),
                (None, it) => println!("k={} B={} step={} T={}  diverged at {}", r.k, r.batch, r.step, r.iterations, fmt_opt(it)),
            }
        }
        println!("wrote {}", dir.display());
        return Ok(());
    }

    let header = [
        "workers", "batch", "step", "iterations", "train_loss", "train_accuracy", "validation_accuracy", "diverged_at",
    ];
    let base = vec![a.workers.to_string(), a.batch.to_string(), a.step.to_string(), a.iterations.to_string()];
    match parallel_train(&cfg, &train_set) {
        Ok(model) => {
            let loss = mean_loss(&model, &train_set)?;
            let (tr, va) = (accuracy(&model, &train_set), accuracy(&model, &validation));
            let mut rec = base;
            rec.extend([loss.to_string(), tr.to_string(), va.to_string(), String::new()]);
            write_csv(&dir.join("metrics.csv"), &m, &[], &header, &[rec])?;
            let weights: Vec<Vec<String>> =
                model.w.iter().enumerate().map(|(i, w)| vec![i.to_string(), w.to_string()]).collect();
            write_csv(&dir.join("weights.csv"), &m, &[], &["index", "weight"], &weights)?;
            println!("loss {loss:.6}  train_acc {tr:.4}  val_acc {va:.4}");
        }
        // Divergence is an outcome of the run, not a tool failure.
        Err(Error::Diverged { iteration, loss }) => {
            let mut rec = base;
            rec.extend([loss.to_string(), String::new(), String::new(), iteration.to_string()]);
            write_csv(&dir.join("metrics.csv"), &m, &[], &header, &[rec])?;
            println!("diverged at iteration {iteration} (loss = {loss})");
        }
        Err(e) => return Err(e.into()),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn parse_anchor(spec: &str) -> Result<(PathBuf, Option<u64>, f64), CliError> {
    let bad = || CliError::Usage(format!("--anchor `{spec}`: expected NETWORK:BATCH:SECONDS"));
    let mut parts = spec.rsplitn(3, ':');
    let seconds = parts.next().ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?;
    let batch = parts.next().ok_or_else(bad)?.parse::<u64>().map_err(|_| bad())?;
    let net = parts.next().ok_or_else(bad)?;
    Ok((PathBuf::from(net), Some(batch), seconds))
}

fn calibrate(
    device: &Path,
    network: &Path,
    batch: Option<u64>,
    seconds: f64,
    extra: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let dev = DeviceProfile::load(device)?;
    let mut specs = vec![(network.to_path_buf(), batch, seconds)];
    for a in extra {
        specs.push(parse_anchor(a)?);
    }
    let nets = specs.iter().map(|(p, _, _)| NetworkSpec::load(p)).collect::<Result<Vec<_>, _>>()?;
    let anchors: Vec<Anchor<'_>> = specs
        .iter()
        .zip(&nets)
        .map(|((_, b, t), net)| Anchor { net, batch: b.unwrap_or(net.default_batch), seconds: *t })
        .collect();
    let fitted = fit(&dev, &anchors)?;
    let dir = prepare_dir(out)?;
    let mut m = RunManifest::new("calibrate", &dir);
    m.inputs = std::iter::once(device.to_path_buf()).chain(specs.iter().map(|(p, _, _)| p.clone())).collect();
    let path = dir.join(format!("{}.toml", fitted.name));
    write_text(&path, &m, &fitted.to_toml_string())?;
    println!("effective_flops: {} -> {}", dev.effective_flops, fitted.effective_flops);
    for a in &anchors {
        println!(
            "{} b={}: measured {} s, predicted {} s",
            a.net.name,
            a.batch,
            a.seconds,
            iteration_compute_time(a.net, a.batch, &fitted)
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
