use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rankad::dataset::{load_csv, sample_anomaly_box, sample_mixture, LabelColumn};
use rankad::detector::{GridBounds, DEFAULT_ALPHA, DEFAULT_GRID_RESOLUTION};
use rankad::eval::{timing_run, EvalReport, TIMING_REPS};
use rankad::knn::{resampled_ranks, DEFAULT_K, DEFAULT_ROUNDS};
use rankad::pipeline::DEFAULT_M;
use rankad::select::{cross_validate, mean_knn_distance, CvGrid};
use rankad::{fit, Data, Detector, Error, ErrorClass, MixtureDensity, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "rankad", version, about = "Anomaly detection by learning to rank K-NN scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic data set.
    Synth(SynthArgs),
    /// Train a detector and write it as JSON.
    Train(TrainArgs),
    /// Score every row of a CSV file.
    Score(ScoreArgs),
    /// AUC and false-alarm rates on labelled data.
    Eval(EvalArgs),
    /// Export scores and decision masks on a 2-D grid.
    Grid(GridArgs),
    /// Run the cross-validation grid and report every fold loss.
    CvReport(CvArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    /// Two overlapping Gaussian blobs, training data only.
    #[value(name = "toy-fig1")]
    Toy,
    /// Crossed Gaussians with uniform box anomalies: train, nominal test and anomaly test.
    #[value(name = "synth-sec62")]
    Crossed,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Toy => "toy-fig1",
            Preset::Crossed => "synth-sec62",
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, default_value_t = 500)]
    n_test_nominal: usize,
    #[arg(long, default_value_t = 1000)]
    n_test_anomaly: usize,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_M)]
    m: usize,
    #[arg(long, default_value_t = DEFAULT_ROUNDS)]
    rounds: usize,
    /// Rank-SVM regularization constant.
    #[arg(long = "C")]
    c: Option<f64>,
    /// RBF bandwidth; defaults to a multiple of the mean K-NN distance.
    #[arg(long)]
    sigma: Option<f64>,
    /// Cap on the number of preference pairs.
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    seed: u64,
}

impl TrainFlags {
    fn config(&self, cv: bool, alpha: f64) -> TrainConfig<f64> {
        let mut cfg = TrainConfig::new(self.seed);
        cfg.k = self.k;
        cfg.m = self.m;
        cfg.rounds = self.rounds;
        cfg.max_pairs = self.max_pairs;
        if let Some(c) = self.c {
            cfg.c = c;
        }
        cfg.sigma = self.sigma;
        cfg.cv = cv;
        cfg.alpha = alpha;
        cfg
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Where to write the trained detector.
    #[arg(long, alias = "out")]
    model: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    /// Pick C and sigma by cross-validation.
    #[arg(long)]
    cv: bool,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Also write the cross-validation table here (with --cv).
    #[arg(long)]
    cv_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input CSV; may be given several times.
    #[arg(long, required = true)]
    test: Vec<PathBuf>,
    /// Significance level; may be repeated.
    #[arg(long)]
    alpha: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true)]
    test: Vec<PathBuf>,
    #[arg(long)]
    alpha: Vec<f64>,
    /// Also time single-threaded scoring.
    #[arg(long)]
    timing: bool,
    /// CSV report path; the text report always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
    grid_res: usize,
    #[arg(long)]
    alpha: Vec<f64>,
    /// Bounds as `xmin,xmax,ymin,ymax`; defaults to the padded extent of the support points.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    bounds: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}

fn run(command: Command) -> rankad::Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::CvReport(a) => cv_report(a),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn create(path: &Path) -> rankad::Result<File> {
    File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn stdout_err(e: io::Error) -> Error {
    Error::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

fn load_data(paths: &[PathBuf]) -> rankad::Result<Data> {
    let parts = paths
        .iter()
        .map(|p| load_csv(p, LabelColumn::Auto))
        .collect::<rankad::Result<Vec<Data>>>()?;
    if parts.len() == 1 {
        Ok(parts.into_iter().next().expect("one part"))
    } else {
        Data::concat(&parts)
    }
}

fn config_line(config: &Value) -> String {
    format!("config {config}")
}

fn synth(a: SynthArgs) -> rankad::Result<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let (density, default_n) = match a.preset {
        Preset::Toy => (MixtureDensity::twin_gaussians(), 1000),
        Preset::Crossed => (MixtureDensity::crossed_gaussians(), 600),
    };
    let n_train = a.n_train.unwrap_or(default_n);
    let mut config = json!({
        "command": "synth",
        "preset": a.preset.name(),
        "seed": a.seed,
        "n_train": n_train,
    });

    let mut files = vec![("train.csv", sample_mixture::<f64>(&density, n_train, a.seed)?)];
    if let Preset::Crossed = a.preset {
        config["n_test_nominal"] = json!(a.n_test_nominal);
        config["n_test_anomaly"] = json!(a.n_test_anomaly);
        let bounds = density.anomaly_box().expect("preset has an anomaly box");
        files.push((
            "test_nominal.csv",
            sample_mixture(&density, a.n_test_nominal, a.seed.wrapping_add(1))?,
        ));
        files.push((
            "test_anomaly.csv",
            sample_anomaly_box(bounds, a.n_test_anomaly, a.seed.wrapping_add(2))?,
        ));
    }
    let comments = [config_line(&config)];
    for (name, data) in &files {
        let path = a.out.join(name);
        data.save_csv(&path, &comments)?;
        println!("wrote {} ({} rows)", path_str(&path), data.n());
    }
    Ok(())
}

fn train(a: TrainArgs) -> rankad::Result<()> {
    let data = load_data(std::slice::from_ref(&a.train))?;
    let cfg = a.flags.config(a.cv, a.alpha);
    let fitted = fit(&data, &cfg)?;
    let mut detector = fitted.detector;
    let mut config = detector.config().clone();
    config["command"] = json!("train");
    config["train_path"] = json!(path_str(&a.train));
    detector = detector.with_config(config.clone());
    detector.save(&a.model)?;

    if let (Some(res), Some(path)) = (&fitted.cv, &a.cv_out) {
        res.write_csv(create(path)?, &[config_line(&config)])?;
    }
    let model = detector.model();
    println!("support {}", model.support_count());
    println!("objective {}", model.objective());
    println!("C {}", fitted.c);
    println!("sigma {}", fitted.sigma);
    println!("pairs {}", fitted.pairs);
    println!("sweeps {}", fitted.trace.sweeps);
    println!("converged {}", fitted.trace.converged);
    println!("model {}", path_str(&a.model));
    Ok(())
}

fn score(a: ScoreArgs) -> rankad::Result<()> {
    let detector = Detector::load(&a.model)?;
    let data = load_data(&a.test)?;
    let alphas = if a.alpha.is_empty() {
        vec![detector.alpha()]
    } else {
        a.alpha.clone()
    };
    let scores = detector.score_all(&data)?;
    let config = json!({
        "command": "score",
        "model": path_str(&a.model),
        "test": a.test.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
        "alpha": alphas,
        "model_config": detector.config(),
    });

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(io::BufWriter::new(create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    };
    let mut body = format!("# {}\nrow,score", config_line(&config));
    for alpha in &alphas {
        body.push_str(&format!(",anomaly@{alpha}"));
    }
    body.push('\n');
    for (i, s) in scores.iter().enumerate() {
        body.push_str(&format!("{i},{s}"));
        for &alpha in &alphas {
            body.push_str(if *s <= alpha { ",1" } else { ",0" });
        }
        body.push('\n');
    }
    out.write_all(body.as_bytes()).map_err(stdout_err)?;
    out.flush().map_err(stdout_err)
}

fn eval(a: EvalArgs) -> rankad::Result<()> {
    let detector = Detector::load(&a.model)?;
    let data = load_data(&a.test)?;
    let alphas = if a.alpha.is_empty() {
        vec![0.01, 0.05, 0.1]
    } else {
        a.alpha.clone()
    };
    let mut report = EvalReport::evaluate(&detector, &data, &alphas)?;
    if a.timing {
        report.timing = Some(timing_run(&detector, &data, TIMING_REPS)?);
    }
    report.config = json!({
        "command": "eval",
        "model": path_str(&a.model),
        "test": a.test.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
        "alpha": alphas,
        "timing": a.timing,
        "model_config": detector.config(),
    });
    let comments = [config_line(&report.config)];
    if let Some(p) = &a.out {
        report.write_csv(create(p)?, &comments)?;
    }
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "# {}", comments[0]).map_err(stdout_err)?;
    stdout.write_all(report.to_text().as_bytes()).map_err(stdout_err)
}

fn grid(a: GridArgs) -> rankad::Result<()> {
    let detector = Detector::load(&a.model)?;
    let alphas = if a.alpha.is_empty() {
        vec![detector.alpha()]
    } else {
        a.alpha.clone()
    };
    let d = detector.model().dim();
    if d != 2 {
        return Err(Error::InvalidParameter(format!("grid export needs a 2-D model, got d = {d}")));
    }
    let bounds = match &a.bounds {
        Some(b) => GridBounds {
            x: (b[0], b[1]),
            y: (b[2], b[3]),
        },
        None => GridBounds::around(&Data::new(detector.model().support().clone())?, 0.25)?,
    };
    let result = detector.decision_grid(bounds, a.grid_res, &alphas)?;
    let config = json!({
        "command": "grid",
        "model": path_str(&a.model),
        "grid_res": a.grid_res,
        "bounds": [bounds.x.0, bounds.x.1, bounds.y.0, bounds.y.1],
        "alpha": alphas,
        "model_config": detector.config(),
    });
    result.write_csv(create(&a.out)?, &[config_line(&config)])?;
    println!("wrote {} ({}x{} cells)", path_str(&a.out), a.grid_res, a.grid_res);
    Ok(())
}

fn cv_report(a: CvArgs) -> rankad::Result<()> {
    let data = load_data(std::slice::from_ref(&a.train))?;
    let cfg = a.flags.config(true, DEFAULT_ALPHA);
    let table = resampled_ranks(&data, cfg.k, cfg.rounds, cfg.seed)?;
    let dk = mean_knn_distance(&data, cfg.k)?;
    let grid = CvGrid::standard(dk, cfg.seed.wrapping_add(2))?
        .with_solver(cfg.solver.clone())
        .with_max_pairs(cfg.max_pairs);
    let res = cross_validate(&data, &table, cfg.m, &grid)?;
    let config = json!({
        "command": "cv-report",
        "train_path": path_str(&a.train),
        "train": cfg,
        "dk": dk,
    });
    let comments = [config_line(&config)];
    match &a.out {
        Some(p) => res.write_csv(create(p)?, &comments)?,
        None => res.write_csv(io::stdout().lock(), &comments)?,
    }
    for msg in &res.diagnostics {
        eprintln!("warning: {msg}");
    }
    let (c, sigma) = res.selected();
    eprintln!("selected C {c} sigma {sigma}");
    Ok(())
}
