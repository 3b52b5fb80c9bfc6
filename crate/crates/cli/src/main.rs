//! Command-line front end for phase identification experiments.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};

use phaseid::baselines::{correlation_linkage, kmeans_phase_cluster, knn_classify, map_clusters_to_labels};
use phaseid::circuit::{sample_voltages, CircuitSpec, PhaseLabel};
use phaseid::entropy::EntropyReport;
use phaseid::infonet::{evaluate_accuracy, predict, train_classifier, ClassifierModel, InfonetError, TrainingConfig};
use phaseid::numerics::{IndexSet, SymMatrix};
use phaseid::pipeline::config::DataSource;
use phaseid::pipeline::experiment::FailureKind;
use phaseid::pipeline::io::{default_ids, LoadedDataset};
use phaseid::pipeline::report::{config_from_provenance, seed_from_provenance};
use phaseid::pipeline::{emit_reports, load_dataset, preprocess, run_experiment, save_dataset, ExperimentConfig, PipelineError};
use phaseid::selection::{cosine_kernel, select, SelectionMethod, SelectionResult};

#[derive(Parser)]
#[command(name = "phaseid", version, about = "Training-data selection and information loading for phase identification")]
struct Cli {
    /// Seed for synthesis, random selection and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a feeder dataset from the [data] section of a config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose training customers.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        m: usize,
        /// Write the selection record here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the classifier on a selection.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Score a trained model on customers outside its selection.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Customers to exclude from scoring.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Write `customer_id,predicted` rows here.
        #[arg(long)]
        predictions_out: Option<PathBuf>,
    },
    /// Score a comparison method.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        method: BaselineArg,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Cluster count; defaults to the number of distinct labels.
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Per-customer entropy bounds, optionally with a covariance file.
    Entropy {
        #[arg(long)]
        n: usize,
        /// Square CSV matrix without header.
        #[arg(long)]
        from_covariance: Option<PathBuf>,
    },
    /// Regenerate a report from its provenance file.
    Report {
        #[arg(long)]
        provenance: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full experiment described by a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides experiment.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Voltage CSV (`customer_id,t0,...`).
    #[arg(long)]
    data: PathBuf,
    /// Label CSV (`customer_id,phase`).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    stat_hidden_width: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MethodArg {
    InverseSchur,
    Greedy,
    Exhaustive,
    Facility,
    Random,
}

impl From<MethodArg> for SelectionMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::InverseSchur => SelectionMethod::InverseSchur,
            MethodArg::Greedy => SelectionMethod::Greedy,
            MethodArg::Exhaustive => SelectionMethod::Exhaustive,
            MethodArg::Facility => SelectionMethod::Facility,
            MethodArg::Random => SelectionMethod::Random,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Knn,
    Correlation,
    Kmeans,
}

/// A failure with its exit code: 2 for bad input, 3 for numerical trouble.
struct Failure {
    code: u8,
    message: String,
}

fn data(e: impl Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn numerical(e: impl Display) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e.kind {
            FailureKind::Data => data(e),
            FailureKind::Numerical => numerical(e),
        }
    }
}

fn infonet_failure(e: InfonetError) -> Failure {
    match e {
        InfonetError::Diverged(_) => numerical(e),
        _ => data(e),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { config, out } => synth(&config, &out, seed),
        Command::Select { data, method, m, out } => select_cmd(&data, method.into(), m, out.as_deref(), seed),
        Command::Train { data, beta, selection, model_out, training } => {
            train(&data, beta, &selection, &model_out, &training, seed)
        }
        Command::Eval { data, model, selection, predictions_out } => {
            eval(&data, &model, selection.as_deref(), predictions_out.as_deref())
        }
        Command::Baseline { data, method, selection, k, clusters } => baseline(&data, method, &selection, k, clusters, seed),
        Command::Entropy { n, from_covariance } => entropy(n, from_covariance.as_deref()),
        Command::Report { provenance, out } => {
            let text = std::fs::read_to_string(&provenance).map_err(data)?;
            let cfg_text = config_from_provenance(&text).ok_or_else(|| data("provenance file has no config block"))?;
            run_config(ExperimentConfig::from_toml_str(cfg_text)?, Some(&out), seed_from_provenance(&text))
        }
        Command::Run { config, out } => run_config(ExperimentConfig::from_path(&config)?, out.as_deref(), seed),
    }
}

fn synth(config: &Path, out: &Path, seed: Option<u64>) -> Outcome {
    let cfg = ExperimentConfig::from_path(config)?;
    let DataSource::Synth { spec, n_timesteps } = cfg.data else {
        return Err(data("synth needs a config with data.source = \"synth\""));
    };
    let spec = CircuitSpec { seed: seed.unwrap_or(cfg.master_seed), ..spec };
    let ds = sample_voltages(&spec, n_timesteps).map_err(data)?;
    std::fs::create_dir_all(out).map_err(data)?;
    let ids = default_ids(ds.n_customers());
    save_dataset(&ds, &ids, &out.join("voltages.csv"), Some(&out.join("labels.csv"))).map_err(data)?;
    log::info!("wrote {} customers x {} timesteps to {}", ds.n_customers(), ds.n_timesteps(), out.display());
    Ok(())
}

struct Prepared {
    loaded: LoadedDataset,
    features: Array2<f64>,
}

fn prepare(args: &DataArgs) -> Result<Prepared, Failure> {
    let loaded = load_dataset(&args.data, args.labels.as_deref()).map_err(data)?;
    if loaded.imputed_cells > 0 {
        log::warn!("imputed {} empty voltage cells", loaded.imputed_cells);
    }
    let (pre, _) = preprocess(&loaded.dataset).map_err(data)?;
    Ok(Prepared { features: pre.voltages, loaded })
}

fn truth(p: &Prepared) -> Result<&[PhaseLabel], Failure> {
    p.loaded.dataset.labels.as_deref().ok_or_else(|| data("this command needs --labels"))
}

fn read_selection(path: &Path, n: usize) -> Result<SelectionResult, Failure> {
    let text = std::fs::read_to_string(path).map_err(data)?;
    let sel = SelectionResult::from_record(&text).map_err(data)?;
    if let Some(&bad) = sel.indices.as_slice().iter().find(|&&i| i >= n) {
        return Err(data(format!("selection index {bad} out of range for {n} customers")));
    }
    Ok(sel)
}

fn select_cmd(args: &DataArgs, method: SelectionMethod, m: usize, out: Option<&Path>, seed: Option<u64>) -> Outcome {
    let p = prepare(args)?;
    let kernel = cosine_kernel(p.features.view()).map_err(numerical)?;
    let result = select(method, &kernel, p.features.view(), m, seed.unwrap_or(0)).map_err(|e| {
        use phaseid::selection::SelectionError::*;
        match e {
            BadCardinality { .. } | TooLarge { .. } | UnknownMethod(_) | ZeroNormRow(_) => data(e),
            _ => numerical(e),
        }
    })?;
    let record = result.to_record();
    match out {
        Some(path) => std::fs::write(path, record).map_err(data)?,
        None => print!("{record}"),
    }
    Ok(())
}

fn train(args: &DataArgs, beta: f64, selection: &Path, model_out: &Path, t: &TrainingArgs, seed: Option<u64>) -> Outcome {
    let p = prepare(args)?;
    let truth = truth(&p)?;
    let sel = read_selection(selection, truth.len())?;
    let labels: Vec<PhaseLabel> = sel.indices.as_slice().iter().map(|&i| truth[i]).collect();
    let d = TrainingConfig::default();
    let cfg = TrainingConfig {
        beta,
        epochs: t.epochs.unwrap_or(d.epochs),
        learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
        batch_size: t.batch_size.unwrap_or(d.batch_size),
        hidden_width: t.hidden_width.unwrap_or(d.hidden_width),
        stat_hidden_width: t.stat_hidden_width.unwrap_or(d.stat_hidden_width),
        seed: seed.unwrap_or(0),
        ..d
    };
    let model = train_classifier(p.features.view(), &sel.indices, &labels, &cfg).map_err(infonet_failure)?;
    if let Some(last) = model.trace.last() {
        log::info!("final epoch: cross-entropy {:.5}, information {:.5}", last.cross_entropy, last.mutual_information);
    }
    model.save(model_out).map_err(data)
}

fn eval(args: &DataArgs, model: &Path, selection: Option<&Path>, predictions_out: Option<&Path>) -> Outcome {
    let p = prepare(args)?;
    let model = ClassifierModel::load(model).map_err(data)?;
    if model.input_dim() != p.features.ncols() {
        return Err(data(format!("model expects {} features, data has {}", model.input_dim(), p.features.ncols())));
    }
    let pred = predict(&model, p.features.view()).map_err(infonet_failure)?;
    if let Some(path) = predictions_out {
        let mut text = String::from("customer_id,predicted\n");
        for (id, l) in p.loaded.ids.iter().zip(&pred.labels) {
            text.push_str(&format!("{id},{l}\n"));
        }
        std::fs::write(path, text).map_err(data)?;
    }
    if let Some(truth) = p.loaded.dataset.labels.as_deref() {
        let excluded = match selection {
            Some(s) => read_selection(s, truth.len())?.indices,
            None => IndexSet::new(vec![]).map_err(data)?,
        };
        let keep = excluded.complement(truth.len());
        let pr: Vec<PhaseLabel> = keep.iter().map(|&i| pred.labels[i]).collect();
        let tr: Vec<PhaseLabel> = keep.iter().map(|&i| truth[i]).collect();
        let acc = evaluate_accuracy(&pr, &tr).map_err(data)?;
        println!("accuracy {acc}");
    }
    Ok(())
}

fn baseline(args: &DataArgs, method: BaselineArg, selection: &Path, k: usize, clusters: Option<usize>, seed: Option<u64>) -> Outcome {
    let p = prepare(args)?;
    let truth = truth(&p)?;
    let sel = read_selection(selection, truth.len())?;
    let labels: Vec<PhaseLabel> = sel.indices.as_slice().iter().map(|&i| truth[i]).collect();
    let n_clusters = clusters.unwrap_or_else(|| {
        let mut l = truth.to_vec();
        l.sort();
        l.dedup();
        l.len()
    });
    let pred = match method {
        BaselineArg::Knn => {
            let train = p.features.select(Axis(0), sel.indices.as_slice());
            knn_classify(train.view(), &labels, p.features.view(), k).map_err(data)?
        }
        BaselineArg::Correlation => {
            let mut a = correlation_linkage(p.loaded.dataset.voltages.view(), n_clusters).map_err(data)?;
            map_clusters_to_labels(&mut a, &sel.indices, &labels).map_err(data)?
        }
        BaselineArg::Kmeans => {
            let mut a = kmeans_phase_cluster(p.features.view(), n_clusters, seed.unwrap_or(0)).map_err(data)?;
            map_clusters_to_labels(&mut a, &sel.indices, &labels).map_err(data)?
        }
    };
    let keep = sel.indices.complement(truth.len());
    let pr: Vec<PhaseLabel> = keep.iter().map(|&i| pred[i]).collect();
    let tr: Vec<PhaseLabel> = keep.iter().map(|&i| truth[i]).collect();
    println!("accuracy {}", evaluate_accuracy(&pr, &tr).map_err(data)?);
    Ok(())
}

fn read_matrix(path: &Path) -> Result<SymMatrix, Failure> {
    let text = std::fs::read_to_string(path).map_err(data)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .enumerate()
            .map(|(j, c)| c.trim().parse::<f64>().map_err(|_| data(format!("line {}, column {}: cannot parse {c:?}", i + 1, j + 1))))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(data("covariance must be a non-empty square matrix"));
    }
    let m = Array2::from_shape_vec((n, n), rows.concat()).map_err(data)?;
    SymMatrix::new(m).map_err(data)
}

fn entropy(n: usize, covariance: Option<&Path>) -> Outcome {
    let mut report = EntropyReport::from_bounds(n).map_err(data)?;
    if let Some(path) = covariance {
        let sigma = read_matrix(path)?;
        if sigma.dim() != n {
            return Err(data(format!("covariance is {0}x{0} but --n is {n}", sigma.dim())));
        }
        report = report.with_covariance(&sigma).map_err(numerical)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn run_config(mut cfg: ExperimentConfig, out: Option<&Path>, seed: Option<u64>) -> Outcome {
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let bundle = run_experiment(&cfg)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    let files = emit_reports(&bundle, &dir)?;
    for r in &bundle.accuracy {
        println!("{}\t{}\tmean {:.4}\tstd {:.4}\ttrials {}", r.method, r.circuit, r.mean, r.std, r.trials);
    }
    log::info!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}
