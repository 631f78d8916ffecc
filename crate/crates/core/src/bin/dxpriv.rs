use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use dxpriv::harness::{
    self, io as hio, CoefficientLaw, CoordBox, ExperimentConfig, Loss, Mechanism, MetricSpec, QuerySpec, Strategy,
    UniverseSpec,
};
use dxpriv::metric::{euclidean_metric, write_metric_csv};
use dxpriv::select::{closed_form_single, improvement_factor};
use dxpriv::Error;

#[derive(Parser)]
#[command(name = "dxpriv", version, about = "Metric differential privacy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample distinct random points and write them as CSV.
    GenUniverse {
        #[arg(long, default_value_t = 50)]
        size: usize,
        #[arg(long, default_value_t = harness::DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        bounds: BoundsArgs,
        /// Add smooth `elevation` and random `population` columns.
        #[arg(long)]
        attributes: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate random query matrices as CSV.
    GenQueries {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Universe size.
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = LawArg::Uniform)]
        law: LawArg,
        #[arg(long, default_value_t = harness::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment and write the report.
    Run {
        #[arg(long)]
        seed: u64,
        /// JSON experiment config; other flags are ignored except --seed and outputs.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
        metric: MetricArg,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 10.0)]
        threshold: f64,
        /// Queries CSV; overrides generated queries.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Use a point attribute as a single query.
        #[arg(long, conflicts_with = "queries")]
        attribute: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Threshold and smooth-threshold metrics over a grid of (T, eps).
    BlowfishSweep {
        #[arg(long, default_value_t = harness::DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 4.0, 8.0, 16.0])]
        thresholds: Vec<f64>,
        #[arg(long = "eps", value_delimiter = ',', default_values_t = vec![1.0])]
        eps_list: Vec<f64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Parse a points CSV and summarize it.
    Ingest {
        #[arg(long)]
        points: PathBuf,
        /// Report the closed-form improvement factor of this attribute query.
        #[arg(long)]
        attribute: Option<String>,
        /// Write the Euclidean metric as CSV.
        #[arg(long)]
        metric_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long, default_value_t = 100.0)]
    x1: f64,
    #[arg(long, default_value_t = 0.0)]
    y0: f64,
    #[arg(long, default_value_t = 100.0)]
    y1: f64,
}

impl BoundsArgs {
    fn to_box(&self) -> CoordBox {
        CoordBox {
            x: (self.x0, self.x1),
            y: (self.y0, self.y1),
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Universe size for random points.
    #[arg(long, default_value_t = 50)]
    size: usize,
    /// Points CSV instead of random points.
    #[arg(long)]
    points: Option<PathBuf>,
    #[command(flatten)]
    bounds: BoundsArgs,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, value_enum, default_value_t = LawArg::Uniform)]
    law: LawArg,
    #[arg(long, value_enum, default_value_t = MechArg::ClosedForm)]
    mechanism: MechArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = LossArg::L2sq)]
    loss: LossArg,
    #[arg(long, default_value_t = harness::DEFAULT_RECORDS)]
    records: u64,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LawArg {
    Uniform,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Uniform,
    Blowfish,
    Smooth,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechArg {
    Vanilla,
    ClosedForm,
    Strategy1,
    Strategy2,
    Psa,
    Altmin,
    Smalldb,
    Mwem,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    L1,
    L2sq,
    Linf,
}

impl LawArg {
    fn law(self) -> CoefficientLaw {
        match self {
            LawArg::Uniform => CoefficientLaw::Uniform,
            LawArg::Binary => CoefficientLaw::Binary,
        }
    }
}

impl ExperimentArgs {
    fn config(&self, seed: u64, metric: MetricSpec) -> ExperimentConfig {
        let universe = match &self.points {
            Some(path) => UniverseSpec::Csv { path: path.clone() },
            None => UniverseSpec::Random {
                size: self.size,
                bounds: self.bounds.to_box(),
            },
        };
        let dx = |strategy| Mechanism::DxLaplace { strategy };
        let mechanism = match self.mechanism {
            MechArg::Vanilla => Mechanism::Vanilla,
            MechArg::ClosedForm => dx(Strategy::ClosedForm),
            MechArg::Strategy1 => dx(Strategy::Strategy1),
            MechArg::Strategy2 => dx(Strategy::Strategy2),
            MechArg::Psa => dx(Strategy::Psa),
            MechArg::Altmin => dx(Strategy::Altmin),
            MechArg::Smalldb => Mechanism::Smalldb { alpha: self.alpha },
            MechArg::Mwem => Mechanism::Mwem { rounds: self.rounds },
        };
        ExperimentConfig {
            seed,
            universe,
            metric,
            queries: QuerySpec::Random {
                count: self.count,
                k: self.k,
                law: self.law.law(),
            },
            mechanism,
            trials: self.trials,
            loss: match self.loss {
                LossArg::L1 => Loss::L1,
                LossArg::L2sq => Loss::L2sq,
                LossArg::Linf => Loss::Linf,
            },
            records: self.records,
        }
    }
}

enum Failure {
    Lib(Error),
    InfeasibleAll,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenUniverse {
            size,
            seed,
            bounds,
            attributes,
            out,
        } => {
            let pts = if attributes {
                if bounds.to_box() != CoordBox::default() {
                    return Err(Error::Invalid("--attributes uses the default [0,100]² box".into()).into());
                }
                harness::correlated_elevation_points(size, seed)?
            } else {
                harness::gen_universe(size, bounds.to_box(), seed)?
            };
            hio::write_points_csv(&pts, sink(out.as_deref())?)?;
        }
        Command::GenQueries {
            count,
            k,
            n,
            law,
            seed,
            out,
        } => {
            let qs = harness::gen_queries(count, k, n, law.law(), seed)?;
            hio::write_queries_csv(&qs, sink(out.as_deref())?)?;
        }
        Command::Run {
            seed,
            config,
            exp,
            metric,
            eps,
            threshold,
            queries,
            attribute,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => serde_json::from_reader(File::open(path)?).map_err(Error::Json)?,
                None => {
                    let spec = match metric {
                        MetricArg::Euclidean => MetricSpec::Euclidean,
                        MetricArg::Uniform => MetricSpec::Uniform { eps },
                        MetricArg::Blowfish => MetricSpec::Blowfish { threshold, eps },
                        MetricArg::Smooth => MetricSpec::Smooth { threshold, eps },
                    };
                    let mut cfg = exp.config(seed, spec);
                    if let Some(name) = attribute {
                        cfg.queries = QuerySpec::Attribute { name };
                    }
                    cfg
                }
            };
            cfg.seed = seed;
            cfg.validate()?;
            let report = match queries {
                Some(path) => {
                    let points = cfg.load_universe()?;
                    let m = cfg.metric.build(&points)?;
                    let qs = hio::read_queries_csv(File::open(path)?)?;
                    harness::run_experiment(&cfg, &points, &m, &qs)?
                }
                None => harness::run_single_experiment(&cfg)?,
            };
            info!("elapsed {:.2?}", report.elapsed);
            hio::write_report_csv(&report, sink(out.out_csv.as_deref())?)?;
            if let Some(p) = out.out_json {
                hio::write_report_json(&report, File::create(p)?)?;
            }
            if report.all_infeasible() {
                return Err(Failure::InfeasibleAll);
            }
        }
        Command::BlowfishSweep {
            seed,
            exp,
            thresholds,
            eps_list,
            out,
        } => {
            let cfg = exp.config(seed, MetricSpec::Euclidean);
            let sweep = harness::run_blowfish_sweep(&cfg, &thresholds, &eps_list)?;
            hio::write_sweep_csv(&sweep, sink(out.out_csv.as_deref())?)?;
            if let Some(p) = out.out_json {
                hio::write_sweep_json(&sweep, File::create(p)?)?;
            }
            if sweep.cells.iter().all(|c| c.summary.usable == 0) {
                return Err(Failure::InfeasibleAll);
            }
        }
        Command::Ingest {
            points,
            attribute,
            metric_out,
        } => {
            let pts = hio::ingest_points_csv(&points)?;
            let m = euclidean_metric(&pts)?;
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "points: {}", pts.len())?;
            let names: Vec<&str> = pts.attributes.keys().map(String::as_str).collect();
            writeln!(stdout, "attributes: {}", names.join(","))?;
            if let Some(eps) = m.min_finite_off_diagonal() {
                writeln!(stdout, "min distance: {eps}")?;
            }
            if let Some(name) = attribute {
                let q = harness::attribute_query(&pts, &name)?;
                let params = closed_form_single(q.row(0), &m)?;
                writeln!(stdout, "{name} scale: {}", params.scales()[0])?;
                writeln!(stdout, "{name} improvement factor: {}", improvement_factor(&params, &q, &m)?)?;
            }
            if let Some(p) = metric_out {
                write_metric_csv(&m, BufWriter::new(File::create(p)?))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors are config errors; clap's own exit code 2 is reserved
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::InfeasibleAll) => {
            eprintln!("error: no query had feasible parameters");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
