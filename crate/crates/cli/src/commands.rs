use std::io::{BufReader, Write};
use std::path::Path;

use clap::ArgMatches;
use serde::Serialize;
use serde_json::{json, Value};
use temi::baselines::{kmeans as run_kmeans, linear_probe, KMeansConfig, ProbeConfig};
use temi::features::generate_synthetic;
use temi::knn::{mine_knn, mine_knn_with, KnnOptions};
use temi::metrics::{beta_scan as run_beta_scan, diagnostics, weight_separation, Diagnostics, EvalReport};
use temi::rng::{rng_for, stream};
use temi::theorem::{theorem_check as run_theorem_check, DiscreteModel, GradientConfig, Optimizer};
use temi::trainer::{train as run_train, TrainConfig};
use temi::{FeatureSet, HeadEnsemble, NeighborTable, SynthConfig};

use crate::cli::{BetaScanArgs, EvalArgs, KmeansArgs, KnnArgs, OptimizerArg, ProbeArgs, SynthArgs, TheoremArgs, TrainCmd};
use crate::run::{create, manifest_beside, open, write_json, CliResult, Failure, Recorder};

/// Names the file in I/O and format errors raised while reading it.
fn reading<T>(path: &Path, result: temi::Result<T>) -> CliResult<T> {
    result.map_err(|err| match err {
        temi::Error::Io(e) => Failure::Io(format!("{}: {e}", path.display())),
        other => {
            let failure = Failure::from(other);
            match failure {
                Failure::Validation(m) => Failure::Validation(format!("{}: {m}", path.display())),
                f => f,
            }
        }
    })
}

/// Loads TEMIFEAT, or CSV when the extension says so.
fn load_features(path: &Path) -> CliResult<FeatureSet> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    reading(path, if is_csv { FeatureSet::load_csv(path) } else { FeatureSet::load(path) })
}

fn prepare(fs: FeatureSet, raw: bool) -> FeatureSet {
    if raw {
        fs
    } else {
        fs.standardize()
    }
}

fn load_neighbors(path: &Path, fs: &FeatureSet) -> CliResult<NeighborTable> {
    let nt = reading(path, NeighborTable::load(path))?;
    if nt.n() != fs.n() {
        return Err(Failure::invalid(format!(
            "{} lists neighbors for {} examples but the features have {}",
            path.display(),
            nt.n(),
            fs.n()
        )));
    }
    Ok(nt)
}

/// Neighbors from `path`, or mined from `fs` when no file is given.
fn neighbors(fs: &FeatureSet, path: Option<&Path>, k: usize, rec: &mut Recorder) -> CliResult<NeighborTable> {
    match path {
        Some(p) => {
            let nt = load_neighbors(p, fs)?;
            rec.input("neighbors", p)?;
            Ok(nt)
        }
        None => Ok(mine_knn(fs, k)?),
    }
}

#[derive(Serialize)]
struct AssignmentFile<'a> {
    method: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    head: Option<usize>,
    num_clusters: usize,
    assignments: &'a [usize],
}

struct Assignments {
    labels: Vec<usize>,
    head: Option<usize>,
    method: Option<String>,
}

/// Accepts a bare JSON array of labels or an object with an `assignments`
/// (or `labels`) array.
fn read_assignments(path: &Path) -> CliResult<Assignments> {
    let value: Value = serde_json::from_reader(BufReader::new(open(path)?))?;
    let bad = |what: &str| Failure::invalid(format!("{}: {what}", path.display()));
    let (array, object) = match &value {
        Value::Array(_) => (&value, None),
        Value::Object(o) => (
            o.get("assignments")
                .or_else(|| o.get("labels"))
                .ok_or_else(|| bad("expected an \"assignments\" or \"labels\" field"))?,
            Some(o),
        ),
        _ => return Err(bad("expected a JSON array or object")),
    };
    let labels: Vec<usize> = serde_json::from_value(array.clone()).map_err(|e| bad(&format!("labels must be nonnegative integers ({e})")))?;
    let field = |key: &str| object.and_then(|o| o.get(key));
    Ok(Assignments {
        labels,
        head: field("head").and_then(Value::as_u64).map(|h| h as usize),
        method: field("method").and_then(Value::as_str).map(str::to_owned),
    })
}

fn write_lines(path: &Path, text: &str) -> CliResult {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult {
    let mut rec = Recorder::new("synth");
    rec.seed(args.seed);
    rec.config(args)?;
    let fs = generate_synthetic(&SynthConfig {
        n_per_class: args.n_per_class,
        classes: args.classes,
        dim: args.dim,
        separation: args.sep,
        noise: args.noise,
        seed: args.seed,
    })?;
    fs.save(&args.out)?;
    rec.output("features", &args.out)?;
    rec.finish(&manifest_beside(&args.out))?;
    Ok(())
}

pub fn knn(args: &KnnArgs) -> CliResult {
    let mut rec = Recorder::new("knn");
    rec.config(args)?;
    let fs = prepare(load_features(&args.input)?, args.raw);
    rec.input("features", &args.input)?;
    let nt = mine_knn_with(&fs, args.k, KnnOptions { include_self: args.include_self })?;
    nt.save(&args.out)?;
    rec.output("neighbors", &args.out)?;
    if let Some(labels) = fs.labels() {
        println!("true-positive rate {:.4}", temi::knn::true_positive_rate(&nt, labels)?);
    }
    rec.finish(&manifest_beside(&args.out))?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a TrainConfig,
    standardized: bool,
    best_head: usize,
    smoothed_losses: &'a [f64],
    final_loss: f64,
    steps: usize,
    steps_per_epoch: usize,
    diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval: Option<EvalReport>,
}

pub fn train(args: &TrainCmd, m: &ArgMatches) -> CliResult {
    let mut rec = Recorder::new("train");
    let fs = prepare(load_features(&args.input)?, args.train.raw);
    rec.input("features", &args.input)?;
    let cfg = args.train.resolve(m, args.beta, fs.num_classes());
    // Fail on bad hyperparameters before spending time on neighbor mining.
    cfg.validate()?;
    let nt = neighbors(&fs, args.knn.as_deref(), cfg.knn_k, &mut rec)?;
    let cfg = TrainConfig { knn_k: nt.k(), ..cfg };
    rec.seed(cfg.seed);
    rec.config(&json!({ "train": &cfg, "standardized": !args.train.raw, "preset": args.train.preset }))?;

    let run = run_train(&fs, &nt, &cfg)?;

    let dir = &args.out;
    let ckpt = dir.join("model.ckpt");
    let assign = dir.join("assignments.json");
    let log = dir.join("log.jsonl");
    let summary = dir.join("summary.json");
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    run.ensemble.save(&ckpt, Some(&run.optimizers))?;
    write_json(
        &assign,
        &AssignmentFile { method: cfg.mode.name(), head: Some(run.best_head), num_clusters: cfg.clusters, assignments: &run.assignments },
    )?;
    let mut w = create(&log)?;
    for record in &run.log {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    drop(w);
    let eval = fs.labels().map(|truth| EvalReport::new(&run.assignments, truth)).transpose()?;
    let acc = eval.as_ref().map(|e| e.acc);
    write_json(
        &summary,
        &TrainSummary {
            config: &cfg,
            standardized: !args.train.raw,
            best_head: run.best_head,
            smoothed_losses: &run.smoothed_losses,
            final_loss: run.log.last().map_or(f64::NAN, |r| r.loss),
            steps: run.log.len(),
            steps_per_epoch: run.steps_per_epoch,
            diagnostics: diagnostics(run.probs.view())?,
            eval,
        },
    )?;
    for (role, path) in [("checkpoint", &ckpt), ("assignments", &assign), ("log", &log), ("summary", &summary)] {
        rec.output(role, path)?;
    }
    rec.finish(&dir.join("manifest.json"))?;
    match acc {
        Some(acc) => println!("best head {} ACC {acc:.4}", run.best_head),
        None => println!("best head {}", run.best_head),
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let mut rec = Recorder::new("eval");
    let pred = read_assignments(&args.pred)?;
    rec.input("pred", &args.pred)?;
    let mut features = None;
    if let Some(path) = &args.features {
        features = Some(prepare(load_features(path)?, args.raw));
        rec.input("features", path)?;
    }
    let truth = match (&args.truth, &features) {
        (Some(path), _) => {
            rec.input("truth", path)?;
            read_assignments(path)?.labels
        }
        (None, Some(fs)) => fs
            .labels()
            .ok_or_else(|| Failure::invalid("the feature file carries no labels"))?
            .to_vec(),
        (None, None) => unreachable!("clap requires --truth or --features"),
    };
    let mut report = EvalReport::new(&pred.labels, &truth)?;
    let head = args.head.or(pred.head).unwrap_or(0);
    if let (Some(path), Some(fs)) = (&args.checkpoint, &features) {
        let (ensemble, _) = reading(path, HeadEnsemble::load(path))?;
        rec.input("checkpoint", path)?;
        if head >= ensemble.num_heads() {
            return Err(Failure::arg(format!("head {head} out of range; the checkpoint has {} heads", ensemble.num_heads())));
        }
        let probs = ensemble.teacher_probs(head, fs.data().view())?;
        report.diagnostics = Some(diagnostics(probs.view())?);
        if let Some(knn_path) = &args.knn {
            let nt = load_neighbors(knn_path, fs)?;
            rec.input("neighbors", knn_path)?;
            report.weight_separation = Some(weight_separation(&nt, probs.view(), &truth)?);
        }
    }
    let method = args.method.clone().or(pred.method).unwrap_or_else(|| "unknown".into());
    rec.config(&json!({ "method": method, "backbone": args.backbone, "head": head, "csv": args.csv, "standardized": !args.raw }))?;
    let text = if args.csv {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        if !args.no_header {
            w.write_record(["method", "backbone", "acc", "nmi", "ari", "ami"]).map_err(csv_failure)?;
        }
        let row = [method.clone(), args.backbone.clone(), report.acc.to_string(), report.nmi.to_string(), report.ari.to_string(), report.ami.to_string()];
        w.write_record(&row).map_err(csv_failure)?;
        String::from_utf8(w.into_inner().map_err(|e| Failure::Io(e.to_string()))?).expect("csv output is UTF-8")
    } else {
        serde_json::to_string_pretty(&report)? + "\n"
    };
    let manifest_path = match &args.out {
        Some(out) => {
            write_lines(out, &text)?;
            rec.output("report", out)?;
            manifest_beside(out)
        }
        None => {
            print!("{text}");
            let mut name = args.pred.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".eval.manifest.json");
            args.pred.with_file_name(name)
        }
    };
    rec.finish(&manifest_path)?;
    Ok(())
}

fn csv_failure(err: csv::Error) -> Failure {
    if err.is_io_error() {
        Failure::Io(err.to_string())
    } else {
        Failure::invalid(err.to_string())
    }
}

pub fn kmeans(args: &KmeansArgs) -> CliResult {
    let mut rec = Recorder::new("kmeans");
    rec.seed(args.seed);
    let fs = prepare(load_features(&args.input)?, args.raw);
    rec.input("features", &args.input)?;
    let k = args
        .k
        .or(fs.num_classes())
        .ok_or_else(|| Failure::arg("-k is required when the features carry no labels"))?;
    let cfg = KMeansConfig { restarts: args.restarts, max_iters: args.max_iters, ..KMeansConfig::new(k, args.seed) };
    rec.config(&json!({ "kmeans": &cfg, "standardized": !args.raw }))?;
    let result = run_kmeans(&fs, &cfg)?;
    let eval = fs.labels().map(|truth| EvalReport::new(&result.assignments, truth)).transpose()?;
    let assign = args.out.join("assignments.json");
    let report = args.out.join("report.json");
    write_json(&assign, &AssignmentFile { method: "kmeans", head: None, num_clusters: k, assignments: &result.assignments })?;
    write_json(&report, &json!({ "inertia": result.inertia, "restart": result.restart, "eval": eval }))?;
    rec.output("assignments", &assign)?;
    rec.output("report", &report)?;
    rec.finish(&args.out.join("manifest.json"))?;
    if let Some(e) = eval {
        println!("ACC {:.4}", e.acc);
    }
    Ok(())
}

pub fn probe(args: &ProbeArgs) -> CliResult {
    let mut rec = Recorder::new("probe");
    rec.seed(args.seed);
    rec.config(args)?;
    let train = prepare(load_features(&args.train)?, args.raw);
    rec.input("train", &args.train)?;
    let eval = prepare(load_features(&args.eval)?, args.raw);
    rec.input("eval", &args.eval)?;
    let cfg = ProbeConfig { lr: args.lr, weight_decay: args.weight_decay, epochs: args.epochs, batch_size: args.batch_size, seed: args.seed };
    let result = linear_probe(&train, &eval, &cfg)?;
    write_json(&args.out, &json!({ "config": &cfg, "result": &result }))?;
    rec.output("report", &args.out)?;
    rec.finish(&manifest_beside(&args.out))?;
    println!("train {:.4} eval {:.4}", result.train_accuracy, result.eval_accuracy);
    Ok(())
}

pub fn theorem_check(args: &TheoremArgs) -> CliResult {
    let mut rec = Recorder::new("theorem-check");
    rec.seed(args.seed);
    rec.config(args)?;
    let classes = match (&args.priors, args.classes) {
        (Some(p), Some(c)) if p.len() != c => {
            return Err(Failure::arg(format!("--classes {c} disagrees with {} priors", p.len())));
        }
        (Some(p), _) => p.len(),
        (None, c) => c.unwrap_or(3),
    };
    let model = if args.soft {
        DiscreteModel::random_soft(args.n_x, classes, &mut rng_for(args.seed, stream::THEOREM))?
    } else {
        match &args.priors {
            Some(p) => DiscreteModel::one_hot(args.n_x, p)?,
            None => DiscreteModel::balanced_one_hot(args.n_x, classes)?,
        }
    };
    let optimizer = match args.optimizer {
        OptimizerArg::Exhaustive => Optimizer::Exhaustive,
        OptimizerArg::Gradient => Optimizer::Gradient,
    };
    let cfg = GradientConfig {
        step: args.step,
        iterations: args.iterations,
        restarts: args.restarts,
        patience: args.patience,
        per_example: !args.plain,
        seed: args.seed,
    };
    let verdict = run_theorem_check(&model, optimizer, &cfg)?;
    let out = json!({
        "model": {
            "n_x": model.n_x(),
            "classes": model.classes(),
            "p_c": model.p_c().to_vec(),
            "one_hot": model.hard_labels().is_some(),
            "mutual_information": model.mutual_information(),
        },
        "verdict": &verdict,
    });
    write_json(&args.out, &out)?;
    rec.output("verdict", &args.out)?;
    rec.finish(&manifest_beside(&args.out))?;
    println!("recovered {} (ACC {}, gap {:.3e})", verdict.recovered, verdict.matched_accuracy, verdict.kl_gap);
    Ok(())
}

pub fn beta_scan(args: &BetaScanArgs, m: &ArgMatches) -> CliResult {
    let mut rec = Recorder::new("beta-scan");
    let first = *args.betas.first().ok_or_else(|| Failure::arg("--betas needs at least one value"))?;
    let fs = prepare(load_features(&args.input)?, args.train.raw);
    rec.input("features", &args.input)?;
    let cfg = args.train.resolve(m, first, fs.num_classes());
    cfg.validate()?;
    let nt = neighbors(&fs, args.knn.as_deref(), cfg.knn_k, &mut rec)?;
    let cfg = TrainConfig { knn_k: nt.k(), ..cfg };
    rec.seed(cfg.seed);
    rec.config(&json!({ "train": &cfg, "betas": &args.betas, "standardized": !args.train.raw, "preset": args.train.preset }))?;
    let rows = run_beta_scan(&fs, &nt, &cfg, &args.betas)?;
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    for row in &rows {
        w.serialize(row).map_err(csv_failure)?;
    }
    w.flush()?;
    drop(w);
    rec.output("sweep", &args.out)?;
    rec.finish(&manifest_beside(&args.out))?;
    Ok(())
}
