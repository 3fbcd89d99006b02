//! `shgnn`: train, evaluate, and inspect structure-aware heterogeneous GNNs.
//!
//! Exit codes: 0 on success, 1 for input or configuration problems, 2 for
//! numerical failures. On failure the last line on stderr reads
//! `error: <kind>: <message>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use shgnn::autodiff::GradCheckStatus;
use shgnn::centrality::{count_coverage_capped, summarize};
use shgnn::checkpoint::Checkpoint;
use shgnn::eval::{self, FRACTIONS};
use shgnn::hetgraph::write_dataset;
use shgnn::metapath::{build_tree_capped, enumerate_instances_capped};
use shgnn::synth::{gradcheck_config, gradcheck_toy, planted, PlantedConfig};
use shgnn::train::{argmax_rows, fit};
use shgnn::{load_dataset, model, Error, MetaPath, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "shgnn", version, about = "Structure-aware heterogeneous graph neural network")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and evaluate its embeddings.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        d1: Option<usize>,
    },
    /// Evaluate an embeddings TSV against labels.
    Eval {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cluster count for clustering; defaults to the number of classes.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Dump the meta-path instances and aggregation tree of one target.
    Enumerate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metapath: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        max_instances: Option<usize>,
    },
    /// Coverage centrality of every node.
    Centrality {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Meta-paths and instance cap are taken from this training config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every model gradient on a built-in graph.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Write the planted synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Classification,
    Clustering,
}

/// A failure with its exit code and one-line reason.
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        kind: "usage".into(),
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return report(usage(first));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return report(usage("--threads must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report(usage(format!("cannot size the thread pool: {e}")));
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let message = f.message.replace(['\n', '\r'], " ");
    eprintln!("error: {}: {}", f.kind, message);
    ExitCode::from(f.code)
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Train {
            data,
            config,
            out,
            seed,
            epochs,
            learning_rate,
            d1,
        } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::load(path)?,
                None => TrainConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
            cfg.d1 = d1.unwrap_or(cfg.d1);
            train(&data, cfg, &out)
        }
        Command::Eval {
            embeddings,
            labels,
            task,
            out,
            seed,
            k,
        } => evaluate(&embeddings, &labels, task, &out, seed, k),
        Command::Enumerate {
            data,
            metapath,
            target,
            max_instances,
        } => enumerate(&data, &metapath, &target, max_instances),
        Command::Centrality { data, out, config } => centrality(&data, &out, config.as_deref()),
        Command::Gradcheck { seed, step, tolerance } => gradcheck(seed, step, tolerance),
        Command::Synth { seed, out } => synth(seed, &out),
    }
}

fn unix_millis() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: 1,
        kind: "io".into(),
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure {
        code: 1,
        kind: "io".into(),
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write(path, &(text + "\n"))
}

/// Timestamps live apart from the results so reruns compare byte-for-byte.
fn write_metadata(out: &Path, command: &str, started: u128) -> Outcome {
    write_json(
        &out.join("metadata.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix_ms": started as u64,
            "finished_unix_ms": unix_millis() as u64,
        }),
    )
}

fn train(data: &Path, cfg: TrainConfig, out: &Path) -> Outcome {
    let started = unix_millis();
    cfg.validate()?;
    let ds = load_dataset(data)?;
    let cfg = cfg.resolved(ds.graph.schema())?;
    create_dir(out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let outcome = fit(&ds, &cfg)?;
    let g = &ds.graph;
    let emb = model::embed(&outcome.inputs, &outcome.params)?;

    Checkpoint::new(&cfg, &outcome.params).save(out.join("checkpoint.json"))?;
    let mut log = String::new();
    for entry in &outcome.log {
        log.push_str(&serde_json::to_string(entry).expect("log serializes"));
        log.push('\n');
    }
    write(&out.join("train_log.jsonl"), &log)?;
    eval::export_embeddings(g, &emb, out.join("embeddings.tsv"))?;

    let pred = argmax_rows(&emb);
    let test = &ds.splits.test;
    let truth: Vec<usize> = test.iter().map(|&v| g.label(v).expect("split nodes are labeled")).collect();
    let test_pred: Vec<usize> = test.iter().map(|&v| pred[g.local_index(v)]).collect();
    let rows: Vec<Vec<f64>> = test.iter().map(|&v| emb.row(g.local_index(v)).to_vec()).collect();

    let mut report = json!({
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.log.len() - 1,
        "stopped_early": outcome.stopped_early,
    });
    if !test.is_empty() {
        report["test"] = json!({
            "macro_f1": eval::macro_f1(&test_pred, &truth)?,
            "micro_f1": eval::micro_f1(&test_pred, &truth)?,
        });
        let test_emb = shgnn::autodiff::Tensor::from_rows(&rows)?;
        report["classification"] = serde_json::to_value(eval::svm_evaluate(&test_emb, &truth, &FRACTIONS, cfg.seed)?).expect("report serializes");
        let k = g.schema().num_classes;
        if test.len() >= k {
            report["clustering"] = serde_json::to_value(eval::kmeans_evaluate(&test_emb, &truth, k, cfg.seed)?).expect("report serializes");
        } else {
            log::warn!("{} test nodes cannot form {k} clusters; clustering skipped", test.len());
        }
    }
    write_json(&out.join("report.json"), &report)?;
    write_metadata(out, "train", started)
}

fn evaluate(embeddings: &Path, labels: &Path, task: TaskArg, out: &Path, seed: u64, k: Option<usize>) -> Outcome {
    let started = unix_millis();
    let (names, emb) = eval::load_embeddings(embeddings)?;
    let label_map = eval::load_labels(labels)?;
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (i, name) in names.iter().enumerate() {
        if let Some(&y) = label_map.get(name) {
            rows.push(emb.row(i).to_vec());
            truth.push(y);
        }
    }
    if rows.is_empty() {
        return Err(Error::Validation("no embedding row has a label".into()).into());
    }
    let x = shgnn::autodiff::Tensor::from_rows(&rows)?;
    create_dir(out)?;
    let (report, resolved) = match task {
        TaskArg::Classification => (
            eval::svm_evaluate(&x, &truth, &FRACTIONS, seed)?,
            json!({"task": "classification", "seed": seed, "fractions": FRACTIONS, "runs": eval::RUNS}),
        ),
        TaskArg::Clustering => {
            let classes = truth.iter().max().map_or(0, |m| m + 1);
            let k = k.unwrap_or(classes);
            (
                eval::kmeans_evaluate(&x, &truth, k, seed)?,
                json!({"task": "clustering", "seed": seed, "k": k, "runs": eval::RUNS}),
            )
        }
    };
    write_json(&out.join("config.json"), &resolved)?;
    write_json(&out.join("report.json"), &report)?;
    write_metadata(out, "eval", started)
}

fn enumerate(data: &Path, metapath: &str, target: &str, cap: Option<usize>) -> Outcome {
    if cap == Some(0) {
        return Err(usage("--max-instances must be positive"));
    }
    let ds = load_dataset(data)?;
    let g = &ds.graph;
    let p = MetaPath::parse(g.schema(), metapath)?;
    let v = g
        .node_id(target)
        .ok_or_else(|| Error::Validation(format!("unknown node {target}")))?;
    if g.node_type(v) != p.end_type() {
        return Err(Error::Validation(format!(
            "{target} has type {}, but {p} ends at {}",
            g.type_name(g.node_type(v)),
            g.type_name(p.end_type())
        ))
        .into());
    }
    let mut out = String::new();
    for inst in enumerate_instances_capped(g, &p, v, cap)? {
        out.push_str("instance");
        for &n in &inst.nodes {
            out.push('\t');
            out.push_str(g.node_name(n));
        }
        out.push('\n');
    }
    let tree = build_tree_capped(g, &p, v, cap)?;
    for (i, tn) in tree.nodes().iter().enumerate() {
        let parent = tn.parent.map_or("-".to_string(), |p| p.to_string());
        out.push_str(&format!("tree\t{i}\t{}\t{parent}\t{}\n", tn.depth, g.node_name(tn.node)));
    }
    print!("{out}");
    Ok(())
}

fn centrality(data: &Path, out: &Path, config: Option<&Path>) -> Outcome {
    let started = unix_millis();
    let cfg = match config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    let ds = load_dataset(data)?;
    let g = &ds.graph;
    let paths = cfg.resolve_metapaths(g.schema())?;
    let table = count_coverage_capped(g, &paths, cfg.max_instances)?;
    create_dir(out)?;
    let names: Vec<String> = paths.iter().map(|p| p.to_string()).collect();
    write_json(&out.join("config.json"), &json!({"metapaths": names, "max_instances": cfg.max_instances}))?;
    let mut tsv = String::from("node\ttype\tc\tc_plus\n");
    for v in 0..g.num_nodes() {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            g.node_name(v),
            g.type_name(g.node_type(v)),
            table.c[v],
            table.c_plus[v]
        ));
    }
    write(&out.join("centrality.tsv"), &tsv)?;
    write_json(&out.join("histogram.json"), &summarize(g, &table))?;
    write_metadata(out, "centrality", started)
}

fn gradcheck(seed: u64, step: f64, tolerance: f64) -> Outcome {
    if !(step > 0.0 && tolerance > 0.0) {
        return Err(usage("--step and --tolerance must be positive"));
    }
    let ds = gradcheck_toy(seed)?;
    let cfg = gradcheck_config(seed);
    let report = model::check_gradients(&ds, &cfg, step, tolerance)?;
    let head = match report.status {
        GradCheckStatus::Pass => "PASS",
        GradCheckStatus::Fail => "FAIL",
        GradCheckStatus::Skipped => "SKIPPED",
    };
    println!("{head} max_rel_err={:.3e} checked={}", report.max_rel_err, report.checked);
    if report.status == GradCheckStatus::Fail {
        let worst = &report.worst[0];
        return Err(Failure {
            code: 2,
            kind: "gradcheck".into(),
            message: format!(
                "parameter {} element {}: analytic {:e}, numeric {:e}",
                worst.input, worst.element, worst.analytic, worst.numeric
            ),
        });
    }
    Ok(())
}

fn synth(seed: u64, out: &Path) -> Outcome {
    let started = unix_millis();
    let cfg = PlantedConfig::default();
    let ds = planted(&cfg, seed)?;
    write_dataset(&ds, out)?;
    let mut resolved: Value = serde_json::to_value(&cfg).expect("config serializes");
    resolved["seed"] = json!(seed);
    write_json(&out.join("config.json"), &resolved)?;
    write_metadata(out, "synth", started)
}
