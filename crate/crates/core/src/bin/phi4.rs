//! `phi4`: command line front end.
//!
//! Every command reads an optional `key = value` config file, applies flag
//! overrides, writes the effective configuration next to its outputs and
//! exits with 0 on success, 1 on invalid input and 2 when a numerical guard
//! aborts the run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use phi4_mrf::field::{magnetization, CouplingSet, TargetActionSpec};
use phi4_mrf::io::config::{Command, RunConfig};
use phi4_mrf::io::{
    emit_csv, emit_pgm, ingest_dataset, load_checkpoint, load_ensemble, parse_config, save_checkpoint,
    save_ensemble, write_atomic, Cell, Checkpoint, Dataset, DatasetSource, EnsembleFile, Params, Table,
    TrainerState,
};
use phi4_mrf::lattice::{Boundary, GraphDescriptor, LatticeGraph};
use phi4_mrf::markov::{conditional_consistency_suite, factorization_suite, locality_suite};
use phi4_mrf::quadrature::{exact_expectation, partition_function, OracleSettings};
use phi4_mrf::rbm::{extract_features, train_rbm, HiddenMode, RbmParams};
use phi4_mrf::reweight::{linspace, reweight_sweep, Observable, ReweightRequest};
use phi4_mrf::sampler::{run_chains, ChainSettings, ChainStart, SamplingAction};
use phi4_mrf::trainers::{train_on_data, train_variational, InitPolicy, TrainConfig, TrainTrace};
use phi4_mrf::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "phi4", version, about = "phi^4 lattice field theory as a trainable Markov random field")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set L=12`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Default)]
struct ChainFlags {
    #[arg(long)]
    therm: Option<usize>,
    #[arg(long)]
    skip: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Vertex, edge and clique counts of a lattice.
    LatticeInfo,
    /// Exact partition function and moments of a tiny lattice by quadrature.
    Oracle,
    /// Metropolis ensemble of the model or target action.
    Sample(ChainFlags),
    /// Randomized clique-factorization and locality checks.
    CheckMarkov,
    /// Fit the couplings to a target action.
    TrainVariational(ChainFlags),
    /// Fit the couplings to a dataset.
    TrainData(ChainFlags),
    /// Train the φ⁴ neural network with contrastive divergence.
    TrainRbm {
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Reweight a stored ensemble over a grid of one target coupling.
    Reweight {
        #[arg(long)]
        j: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        from: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        to: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        obs: Option<String>,
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Export the receptive fields of a trained network.
    Features {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn push<T: ToString>(overrides: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        overrides.push((key.to_string(), v.to_string()));
    }
}

fn push_chain(overrides: &mut Vec<(String, String)>, f: &ChainFlags) {
    push(overrides, "therm", f.therm);
    push(overrides, "skip", f.skip);
    push(overrides, "n", f.n);
    push(overrides, "delta", f.delta);
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig> {
        let mut ov = Vec::new();
        let command = match &self.command {
            Cmd::LatticeInfo => Command::LatticeInfo,
            Cmd::Oracle => Command::Oracle,
            Cmd::Sample(f) => {
                push_chain(&mut ov, f);
                Command::Sample
            }
            Cmd::CheckMarkov => Command::CheckMarkov,
            Cmd::TrainVariational(f) => {
                push_chain(&mut ov, f);
                Command::TrainVariational
            }
            Cmd::TrainData(f) => {
                push_chain(&mut ov, f);
                Command::TrainData
            }
            Cmd::TrainRbm { hidden, mode, k } => {
                push(&mut ov, "hidden", *hidden);
                push(&mut ov, "mode", mode.as_ref());
                push(&mut ov, "k", *k);
                Command::TrainRbm
            }
            Cmd::Reweight {
                j,
                from,
                to,
                points,
                obs,
                ensemble,
            } => {
                push(&mut ov, "j", *j);
                push(&mut ov, "from", *from);
                push(&mut ov, "to", *to);
                push(&mut ov, "points", *points);
                push(&mut ov, "obs", obs.as_ref());
                push(&mut ov, "ensemble", ensemble.as_ref().map(|p| p.display()));
                Command::Reweight
            }
            Cmd::Features { checkpoint } => {
                push(&mut ov, "checkpoint", checkpoint.as_ref().map(|p| p.display()));
                Command::Features
            }
        };
        push(&mut ov, "seed", self.common.seed);
        push(&mut ov, "out", self.common.out.as_ref().map(|p| p.display()));
        // Explicit `--set` pairs win over the dedicated flags.
        for pair in &self.common.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config {
                key: pair.clone(),
                reason: "expected KEY=VALUE".into(),
            })?;
            ov.push((k.trim().to_string(), v.trim().to_string()));
        }
        parse_config(command, self.common.config.as_deref(), &ov)
    }
}

fn config_error(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

fn lattice(cfg: &RunConfig) -> Result<LatticeGraph> {
    let boundary: Boundary = cfg.get_str("boundary").parse()?;
    LatticeGraph::square(cfg.get_usize("L")?, boundary)
}

fn target_spec(cfg: &RunConfig) -> Result<TargetActionSpec> {
    let g = ["g1", "g2", "g3", "g4", "g5"].map(|k| cfg.get_f64(k));
    TargetActionSpec::new(g, g.map(|v| v != 0.0))
}

fn chain_settings(cfg: &RunConfig, start: ChainStart) -> Result<ChainSettings> {
    Ok(ChainSettings {
        thermalization: cfg.get_usize("therm")?,
        measurements: cfg.get_positive("n")?,
        skip: cfg.get_positive("skip")?,
        delta: cfg.get_f64("delta"),
        seed: cfg.get_u64("seed")?,
        tune_delta: cfg.get_bool("tune"),
        start,
    })
}

fn train_config(cfg: &RunConfig, chain: ChainSettings) -> Result<TrainConfig> {
    let clip = cfg.get_f64("clip");
    let mut tc = TrainConfig {
        learning_rate: cfg.get_f64("eta"),
        epochs: cfg.get_positive("epochs")?,
        chain,
        clip: (clip > 0.0).then_some(clip),
        quartic_floor: cfg.get_f64("quartic_floor"),
        ..TrainConfig::default()
    };
    if cfg.command != Command::TrainVariational {
        tc.batch_size = cfg.get_positive("batch")?;
    }
    if cfg.command != Command::TrainRbm {
        tc.init = cfg.get_str("init").parse::<InitPolicy>()?;
        tc.persistent = cfg.get_bool("persistent");
        tc.train_r = cfg.get_bool("train_r");
    }
    Ok(tc)
}

fn dataset(cfg: &RunConfig, sites: usize) -> Result<Dataset> {
    let paths = || -> Result<Vec<PathBuf>> {
        let paths: Vec<PathBuf> = cfg
            .get_str("path")
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(PathBuf::from)
            .collect();
        if paths.is_empty() {
            return Err(config_error("path", "image datasets need at least one file"));
        }
        Ok(paths)
    };
    let source = match cfg.get_str("dataset") {
        "gaussian" => DatasetSource::Gaussian {
            mu: cfg.get_f64("mu"),
            sigma: cfg.get_f64("sigma"),
            count: cfg.get_positive("count")?,
            sites,
        },
        "pgm" => DatasetSource::Pgm(paths()?),
        _ => DatasetSource::Csv {
            paths: paths()?,
            max_pixel: cfg.get_f64("max_pixel"),
        },
    };
    // Data draws use their own stream so that they do not repeat the chains.
    ingest_dataset(&source, cfg.get_u64("seed")? ^ 0xda7a_5eed)
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    Path::new(cfg.get_str("out")).join(name)
}

fn trace_table(trace: &TrainTrace, monitor: &str) -> Table {
    let mut t = Table::new([
        "epoch",
        "grad_norm",
        monitor,
        "acceptance",
        "mean_w",
        "mean_a",
        "mean_b",
        "mean_r",
        "digest",
    ]);
    for r in &trace.records {
        let mut row: Vec<Cell> = vec![r.epoch.into(), r.grad_norm.into(), r.monitor.into(), r.acceptance.into()];
        row.extend(r.mean_couplings.map(Cell::from));
        row.push(r.theta_digest.clone().into());
        t.push(row);
    }
    t
}

fn coupling_checkpoint(cfg: &RunConfig, graph: &LatticeGraph, theta: CouplingSet) -> Result<Checkpoint> {
    let mut cp = Checkpoint::new(
        graph.descriptor(),
        Params::couplings(theta),
        TrainerState {
            epochs_completed: cfg.get_usize("epochs")?,
            seed: cfg.get_u64("seed")?,
        },
    );
    cp.metadata.insert("command".into(), cfg.command.to_string());
    cp.metadata.insert("config".into(), cfg.render_settings());
    Ok(cp)
}

fn lattice_info(cfg: &RunConfig) -> Result<()> {
    let g = lattice(cfg)?;
    let cliques = g.maximal_cliques();
    let mut t = Table::new(["quantity", "value"]);
    t.push(vec!["vertices".into(), g.vertex_count().into()]);
    t.push(vec!["nn_edges".into(), g.nn_edges().len().into()]);
    t.push(vec!["nnn_edges".into(), g.nnn_edges().len().into()]);
    t.push(vec!["maximal_cliques".into(), cliques.len().into()]);
    let largest = cliques.iter().map(Vec::len).max().unwrap_or(0);
    t.push(vec!["largest_clique".into(), largest.into()]);
    t.push(vec!["triangle_free".into(), (!g.has_triangle()).into()]);
    emit_csv(&t, &out_path(cfg, "lattice_info.csv"))?;

    let mut edges = Table::new(["kind", "i", "j"]);
    for (kind, list) in [("nn", g.nn_edges()), ("nnn", g.nnn_edges())] {
        for &(i, j) in list {
            edges.push(vec![kind.into(), i.into(), j.into()]);
        }
    }
    emit_csv(&edges, &out_path(cfg, "edges.csv"))?;
    println!(
        "{} vertices, {} nn edges, {} nnn edges, {} maximal cliques of size {largest}",
        g.vertex_count(),
        g.nn_edges().len(),
        g.nnn_edges().len(),
        cliques.len()
    );
    Ok(())
}

fn oracle(cfg: &RunConfig) -> Result<()> {
    let g = lattice(cfg)?;
    let mut theta = CouplingSet::homogeneous(&g, cfg.get_f64("w"), cfg.get_f64("a"), cfg.get_f64("b"));
    theta.r.fill(cfg.get_f64("r"));
    let settings = OracleSettings {
        node_count: cfg.get_positive("nodes")?,
        tail: cfg.get_f64("tail"),
    };
    let z = partition_function(&theta, &g, &settings)?;
    let v = g.vertex_count() as f64;
    let mut t = Table::new(["quantity", "value"]);
    t.push(vec!["ln_z".into(), z.log_z.into()]);
    t.push(vec!["z".into(), z.z.into()]);
    t.push(vec!["free_energy".into(), z.free_energy.into()]);
    let moments: [(&str, Box<dyn Fn(&[f64]) -> f64 + Sync>); 4] = [
        ("m", Box::new(magnetization)),
        ("m2", Box::new(|p: &[f64]| magnetization(p).powi(2))),
        ("phi2", Box::new(move |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>() / v)),
        ("phi4", Box::new(move |p: &[f64]| p.iter().map(|x| x.powi(4)).sum::<f64>() / v)),
    ];
    for (name, f) in moments {
        let value = exact_expectation(f, &theta, &g, &settings)?;
        t.push(vec![name.into(), value.into()]);
    }
    emit_csv(&t, &out_path(cfg, "oracle.csv"))?;
    print!("{}", String::from_utf8_lossy(&t.to_csv()?));
    Ok(())
}

fn sample(cfg: &RunConfig) -> Result<()> {
    let g = lattice(cfg)?;
    let start = match cfg.get_str("start") {
        "zero" => ChainStart::Zero,
        "cold" => ChainStart::Constant(1.0),
        _ => ChainStart::Random(1.0),
    };
    let settings = chain_settings(cfg, start)?;
    let spec = target_spec(cfg)?;
    let theta = match cfg.get_str("couplings") {
        "" => {
            let mut theta = CouplingSet::homogeneous(&g, cfg.get_f64("w"), cfg.get_f64("a"), cfg.get_f64("b"));
            theta.r.fill(cfg.get_f64("r"));
            theta
        }
        path => {
            let cp = load_checkpoint(Path::new(path))?;
            cp.check_graph(&g.descriptor())?;
            cp.couplings()?.clone()
        }
    };
    let source = match cfg.get_str("source") {
        "model" => SamplingAction::Model(&theta),
        _ => SamplingAction::Target(&spec),
    };
    let attach = cfg.get_bool("attach").then_some(&spec);
    let seed = settings.seed;
    let seeds: Vec<u64> = (0..cfg.get_positive("chains")? as u64).map(|k| seed.wrapping_add(k)).collect();
    let ens = run_chains(source, &g, &settings, attach, &seeds)?;
    info!(
        "{} records, acceptance {:.3}, delta {:.4}",
        ens.len(),
        ens.meta.acceptance,
        ens.meta.delta
    );

    let mut t = Table::new(["index", "action", "magnetization"]);
    for (k, (s, m)) in ens.actions.iter().zip(&ens.magnetizations).enumerate() {
        t.push(vec![k.into(), (*s).into(), (*m).into()]);
    }
    emit_csv(&t, &out_path(cfg, "samples.csv"))?;
    save_ensemble(&out_path(cfg, "ensemble.json"), &EnsembleFile::new(&g, ens))
}

fn check_markov(cfg: &RunConfig) -> Result<bool> {
    let cases = cfg.get_positive("cases")?;
    let seed = cfg.get_u64("seed")?;
    let g = lattice(cfg)?;
    let reports = [
        factorization_suite(&g, cases, seed)?,
        locality_suite(&g, cases, seed.wrapping_add(1))?,
        conditional_consistency_suite(&g, cases, seed.wrapping_add(2))?,
    ];
    let mut t = Table::new(["suite", "cases", "max_error", "tolerance", "passed"]);
    for r in &reports {
        println!(
            "{}: {} ({} cases, max error {:e}, tolerance {:e})",
            r.name,
            if r.passed() { "PASS" } else { "FAIL" },
            r.cases,
            r.max_error,
            r.tolerance
        );
        t.push(vec![r.name.into(), r.cases.into(), r.max_error.into(), r.tolerance.into(), r.passed().into()]);
    }
    emit_csv(&t, &out_path(cfg, "check_markov.csv"))?;
    Ok(reports.iter().all(|r| r.passed()))
}

fn train_variational_cmd(cfg: &RunConfig) -> Result<()> {
    let g = lattice(cfg)?;
    let spec = target_spec(cfg)?;
    let tc = train_config(cfg, chain_settings(cfg, ChainStart::Zero)?)?;
    let (theta, trace) = train_variational(&spec, &g, &tc)?;
    emit_csv(&trace_table(&trace, "target_minus_model"), &out_path(cfg, "trace.csv"))?;
    save_checkpoint(&out_path(cfg, "checkpoint.json"), &coupling_checkpoint(cfg, &g, theta)?)
}

fn train_data_cmd(cfg: &RunConfig) -> Result<()> {
    let g = lattice(cfg)?;
    let data = dataset(cfg, g.vertex_count())?;
    data.check_graph(&g)?;
    let tc = train_config(cfg, chain_settings(cfg, ChainStart::Zero)?)?;
    let (theta, trace) = train_on_data(&data.configs, &g, &tc)?;
    emit_csv(&trace_table(&trace, "data_action"), &out_path(cfg, "trace.csv"))?;
    save_checkpoint(&out_path(cfg, "checkpoint.json"), &coupling_checkpoint(cfg, &g, theta)?)
}

fn train_rbm_cmd(cfg: &RunConfig) -> Result<()> {
    let data = dataset(cfg, cfg.get_positive("visible")?)?;
    let visible = data.configs[0].len();
    let hidden = cfg.get_positive("hidden")?;
    let mode: HiddenMode = cfg.get_str("mode").parse()?;
    let seed = cfg.get_u64("seed")?;
    let chain = ChainSettings {
        seed,
        ..ChainSettings::default()
    };
    let tc = train_config(cfg, chain)?;
    let params0 = RbmParams::init(visible, hidden, mode, seed);
    let (params, trace) = train_rbm(&data.configs, params0, &tc, cfg.get_positive("k")?)?;
    emit_csv(&trace_table(&trace, "reconstruction_error"), &out_path(cfg, "trace.csv"))?;

    let mut cp = Checkpoint::new(
        GraphDescriptor::Bipartite { visible, hidden },
        Params::Rbm(params),
        TrainerState {
            epochs_completed: tc.epochs,
            seed,
        },
    );
    cp.metadata.insert("command".into(), cfg.command.to_string());
    cp.metadata.insert("config".into(), cfg.render_settings());
    if let Some((h, w)) = data.shape {
        cp.metadata.insert("height".into(), h.to_string());
        cp.metadata.insert("width".into(), w.to_string());
    }
    save_checkpoint(&out_path(cfg, "checkpoint.json"), &cp)
}

fn reweight_cmd(cfg: &RunConfig) -> Result<()> {
    let (file, _graph) = load_ensemble(Path::new(cfg.get_str("ensemble")))?;
    let spec = TargetActionSpec::all_terms(["g1", "g2", "g3", "g4", "g5"].map(|k| cfg.get_f64(k)))?;
    let grid = linspace(cfg.get_f64("from"), cfg.get_f64("to"), cfg.get_positive("points")?);
    let observable: Observable = cfg.get_str("obs").parse()?;
    let mut req = ReweightRequest::new(&file.ensemble, spec, cfg.get_positive("j")?, grid, observable);
    req.n_eff_floor = cfg.get_f64("floor");
    let results = reweight_sweep(&req)?;

    let mut t = Table::new(["gprime", "re_mean", "im_mean", "err", "n_eff", "flagged"]);
    for r in &results {
        t.push(vec![
            r.g_prime.into(),
            r.mean.re.into(),
            r.mean.im.into(),
            r.error.0.hypot(r.error.1).into(),
            r.n_eff.into(),
            r.flagged.into(),
        ]);
    }
    emit_csv(&t, &out_path(cfg, "reweight.csv"))
}

fn features_cmd(cfg: &RunConfig) -> Result<()> {
    let cp = load_checkpoint(Path::new(cfg.get_str("checkpoint")))?;
    let params = cp.rbm()?;
    let from_meta = |k: &str| cp.metadata.get(k).and_then(|v| v.parse::<usize>().ok());
    let (h, w) = match (cfg.get_usize("height")?, cfg.get_usize("width")?) {
        (0, 0) => match (from_meta("height"), from_meta("width")) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                let side = (params.visible as f64).sqrt().round() as usize;
                if side * side != params.visible {
                    return Err(config_error("height", "visible layer is not square; give height and width"));
                }
                (side, side)
            }
        },
        (0, w) if w > 0 && params.visible % w == 0 => (params.visible / w, w),
        (h, 0) if h > 0 && params.visible % h == 0 => (h, params.visible / h),
        (h, w) => (h, w),
    };
    let features = extract_features(params, h, w)?;
    let mut summary = Table::new(["hidden", "min", "max", "norm"]);
    for (j, f) in features.iter().enumerate() {
        emit_pgm(&f.raw, &out_path(cfg, &format!("feature_{j}.pgm")))?;
        let mut m = Table::new((0..w).map(|c| format!("c{c}")));
        for row in &f.raw {
            m.push(row.iter().map(|&v| Cell::from(v)).collect());
        }
        emit_csv(&m, &out_path(cfg, &format!("feature_{j}.csv")))?;
        let flat = f.flatten();
        let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        summary.push(vec![j.into(), lo.into(), hi.into(), norm.into()]);
    }
    emit_csv(&summary, &out_path(cfg, "features.csv"))
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = cli.resolve()?;
    let out = Path::new(cfg.get_str("out"));
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let rendered = cfg.render();
    for line in rendered.lines() {
        info!("{line}");
    }
    write_atomic(&out.join("effective_config.txt"), rendered.as_bytes())?;

    match cfg.command {
        Command::LatticeInfo => lattice_info(&cfg)?,
        Command::Oracle => oracle(&cfg)?,
        Command::Sample => sample(&cfg)?,
        Command::CheckMarkov => return check_markov(&cfg),
        Command::TrainVariational => train_variational_cmd(&cfg)?,
        Command::TrainData => train_data_cmd(&cfg)?,
        Command::TrainRbm => train_rbm_cmd(&cfg)?,
        Command::Reweight => reweight_cmd(&cfg)?,
        Command::Features => features_cmd(&cfg)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
