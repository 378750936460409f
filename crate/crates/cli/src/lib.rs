//! Command-line front end: `fit`, `simulate` and `diagnose`.
//!
//! Every option can come from a flat `key = value` config file (`--config`);
//! flags take precedence. All randomness derives from `--seed`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use regsdml::diagnostics::{naive_instrument_diagnostic, orthogonality_diagnostic, Score};
use regsdml::io::{lengths_path, load_dataset_csv, render_report, ConfigFile, OutputFormat, Report, Roles};
use regsdml::{
    estimate_methods, run_monte_carlo, EstimationConfig, GammaGrid, Learner, LearnerKind, Method, MonteCarloConfig,
    NuisanceSource, RegressorSpec, ScenarioKind, ScenarioSpec,
};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "REGSDML_THREADS";

#[derive(Debug, Parser)]
#[command(name = "regsdml", version, about = "DML, regDML and regsDML for partially linear models with endogeneity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the causal coefficient on a CSV dataset.
    Fit(FitArgs),
    /// Monte Carlo study of coverage, rejection rate and interval length.
    Simulate(SimulateArgs),
    /// Numerical orthogonality check or raw-instrument bias comparison.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Confidence level of the two-sided intervals.
    #[arg(long)]
    level: Option<f64>,
    /// Number of folds.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Number of sample splits.
    #[arg(long = "S")]
    s: Option<usize>,
    /// spline, forest or oracle (simulations only).
    #[arg(long)]
    learner: Option<String>,
    /// Trees per forest.
    #[arg(long)]
    trees: Option<usize>,
    /// `default` or a comma list such as `0,1,10,inf`.
    #[arg(long = "gamma-grid")]
    gamma_grid: Option<String>,
    /// Comma list of DML, DML1, regDML, regsDML, LIML, Fuller1, Fuller4.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Instrument columns (comma list).
    #[arg(long = "a-cols")]
    a_cols: Option<String>,
    /// Endogenous regressor columns (comma list).
    #[arg(long = "x-cols")]
    x_cols: Option<String>,
    /// Adjustment covariate columns (comma list).
    #[arg(long = "w-cols")]
    w_cols: Option<String>,
    /// Response column.
    #[arg(long = "y-col")]
    y_col: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: Option<String>,
    /// Sample size per dataset.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Number of datasets.
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    beta0: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    Orthogonality,
    NaiveInstrument,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long, value_enum)]
    which: Which,
    #[arg(long)]
    scenario: Option<String>,
    /// Monte Carlo size (orthogonality) or sample size (naive-instrument).
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "M")]
    m: Option<usize>,
    /// Finite-difference step.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    beta0: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Estimation(regsdml::Error),
}

impl From<regsdml::Error> for CliError {
    fn from(e: regsdml::Error) -> Self {
        CliError::Estimation(e)
    }
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

/// Flag values with config-file fallback.
struct Settings<'a> {
    common: &'a CommonArgs,
    file: ConfigFile,
}

impl<'a> Settings<'a> {
    fn new(common: &'a CommonArgs) -> CliResult<Self> {
        let file = match &common.config {
            Some(p) => ConfigFile::load(p).map_err(usage)?,
            None => ConfigFile::default(),
        };
        Ok(Self { common, file })
    }

    fn value<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file.get_parsed(key).map_err(usage),
        }
    }

    fn text(&self, flag: Option<&String>, key: &str) -> Option<String> {
        flag.cloned().or_else(|| self.file.get(key).map(String::from))
    }

    fn seed(&self) -> CliResult<u64> {
        self.value(self.common.seed, "seed")?
            .ok_or_else(|| usage("--seed is required (no entropy-based default)"))
    }

    fn format(&self) -> CliResult<OutputFormat> {
        self.text(self.common.format.as_ref(), "format")
            .map(|f| f.parse().map_err(usage))
            .transpose()
            .map(Option::unwrap_or_default)
    }

    fn out(&self) -> Option<PathBuf> {
        self.common.out.clone().or_else(|| self.file.get("out").map(PathBuf::from))
    }

    fn threads(&self) -> CliResult<Option<usize>> {
        if let Some(t) = self.value(self.common.threads, "threads")? {
            return Ok(Some(t));
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
            _ => Ok(None),
        }
    }

    fn estimation(&self, default_s: usize) -> CliResult<EstimationConfig> {
        let mut cfg = EstimationConfig {
            s: default_s,
            ..EstimationConfig::default()
        };
        if let Some(k) = self.value(self.common.k, "K")? {
            cfg.k = k;
        }
        if let Some(s) = self.value(self.common.s, "S")? {
            cfg.s = s;
        }
        if let Some(level) = self.value(self.common.level, "level")? {
            cfg.level = level;
        }
        if let Some(grid) = self.text(self.common.gamma_grid.as_ref(), "gamma_grid") {
            cfg.grid = grid.parse::<GammaGrid>().map_err(usage)?;
        }
        if cfg.k < 1 || cfg.s < 1 {
            return Err(usage("K and S must be at least 1"));
        }
        if !(cfg.level > 0.0 && cfg.level < 1.0) {
            return Err(usage(format!("--level must lie in (0, 1), got {}", cfg.level)));
        }
        Ok(cfg)
    }

    fn methods(&self, default: &[Method]) -> CliResult<Vec<Method>> {
        match self.text(self.common.methods.as_ref(), "methods") {
            None => Ok(default.to_vec()),
            Some(list) => list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<Method>().map_err(usage))
                .collect(),
        }
    }

    /// `None` stands for the oracle learner.
    fn learner(&self, default: &str) -> CliResult<Option<RegressorSpec>> {
        let name = self
            .text(self.common.learner.as_ref(), "learner")
            .or_else(|| self.file.get("learner.kind").map(String::from))
            .unwrap_or_else(|| default.to_string());
        if name.eq_ignore_ascii_case("oracle") {
            return Ok(None);
        }
        let kind: LearnerKind = name.parse().map_err(usage)?;
        let mut spec = match kind {
            LearnerKind::SplineAdditive => RegressorSpec::splines(),
            LearnerKind::RandomForest => RegressorSpec::forest(),
        };
        if let Some(t) = self.value(self.common.trees, "learner.trees")? {
            spec.forest_trees = t;
        }
        if let Some(m) = self.value(None, "learner.min_node")? {
            spec.forest_min_node = m;
        }
        spec.forest_mtry = self.value(None, "learner.mtry")?;
        spec.spline_df = self.value(None, "learner.spline_df")?;
        spec.validate().map_err(usage)?;
        Ok(Some(spec))
    }

    fn scenario(&self, flag: Option<&String>, default: Option<ScenarioKind>, beta0: Option<f64>) -> CliResult<ScenarioSpec> {
        let kind = match self.text(flag, "scenario") {
            Some(name) => name.parse::<ScenarioKind>().map_err(usage)?,
            None => default.ok_or_else(|| usage("--scenario is required"))?,
        };
        let mut spec = ScenarioSpec::new(kind);
        if let Some(b) = self.value(beta0, "scenario.beta0")? {
            spec.beta0 = b;
        }
        if let Some(c) = self.value(None, "scenario.chi")? {
            spec.chi = c;
        }
        if let Some(k) = self.value(None, "scenario.kappa")? {
            spec.kappa_noise = k;
        }
        if let Some(a) = self.value(None, "scenario.alpha")? {
            spec.alpha_link = a;
        }
        if let Some(w) = self.value(None, "scenario.w_scale")? {
            spec.w_scale = w;
        }
        Ok(spec)
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn write_output(report: Report<'_>, out: Option<&Path>, format: OutputFormat) -> CliResult<()> {
    let (main, lengths) = render_report(report, format)?;
    match out {
        Some(path) => {
            write_file(path, &main)?;
            if let Some(lengths) = lengths {
                write_file(&lengths_path(path), &lengths)?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(main.as_bytes())
                .map_err(|e| usage(format!("cannot write to stdout: {e}")))?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| {
        CliError::Estimation(regsdml::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

const FIT_METHODS: [Method; 3] = [Method::Dml2, Method::RegDml, Method::RegsDml];

fn fit(args: &FitArgs) -> CliResult<()> {
    let st = Settings::new(&args.common)?;
    let seed = st.seed()?;
    let format = st.format()?;
    let role = |flag: &Option<String>, key: &str| {
        st.text(flag.as_ref(), key)
            .ok_or_else(|| usage(format!("column role '{key}' is missing; pass a flag or set it in --config")))
    };
    let roles = Roles {
        a: split_list(&role(&args.a_cols, "roles.a")?),
        x: split_list(&role(&args.x_cols, "roles.x")?),
        w: split_list(&role(&args.w_cols, "roles.w")?),
        y: role(&args.y_col, "roles.y")?,
    };
    roles.validate().map_err(usage)?;
    let methods = st.methods(&FIT_METHODS)?;
    let config = st.estimation(100)?;
    let learner = st
        .learner("forest")?
        .ok_or_else(|| usage("the oracle learner is only available for simulations"))?;
    let threads = st.threads()?;

    with_threads(threads, || {
        let data = load_dataset_csv(&args.data, &roles)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let output = estimate_methods(&data, &NuisanceSource::Fitted(learner), &methods, &config, &mut rng)?;
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for (m, r) in output.results {
            match r {
                Ok(r) => ok.push(r),
                Err(e) => failed.push((m, e)),
            }
        }
        write_output(Report::Estimates(&ok), st.out().as_deref(), format)?;
        match failed.into_iter().next() {
            None => Ok(()),
            Some((m, e)) => Err(CliError::Estimation(regsdml::Error::Data(format!("{m}: {e}")))),
        }
    })
}

const SIM_METHODS: [Method; 3] = [Method::Dml2, Method::RegDml, Method::RegsDml];

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let st = Settings::new(&args.common)?;
    let seed = st.seed()?;
    let format = st.format()?;
    let spec = st.scenario(args.scenario.as_ref(), None, args.beta0)?;
    let n = st.value(args.n, "N")?.unwrap_or(200);
    let m = st.value(args.m, "M")?.unwrap_or(100);
    if n < 1 || m < 1 {
        return Err(usage("N and M must be at least 1"));
    }
    let learner = match st.learner("spline")? {
        Some(s) => Learner::Fitted(s),
        None => Learner::Oracle,
    };
    let config = MonteCarloConfig {
        n,
        m,
        methods: st.methods(&SIM_METHODS)?,
        learner,
        estimation: st.estimation(10)?,
    };
    config.estimation.validate(n).map_err(usage)?;
    let threads = st.threads()?;
    with_threads(threads, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = run_monte_carlo(&spec, &config, &mut rng)?;
        for s in report.methods.iter().filter(|s| s.failures > 0) {
            eprintln!("warning: {} failed on {} of {} runs", s.method, s.failures, s.runs);
        }
        write_output(Report::Simulation(&report), st.out().as_deref(), format)
    })
}

fn diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    let st = Settings::new(&args.common)?;
    let seed = st.seed()?;
    let format = st.format()?;
    let threads = st.threads()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<(String, f64)> = match args.which {
        Which::Orthogonality => {
            let spec = st.scenario(args.scenario.as_ref(), Some(ScenarioKind::LinearGaussianOracle), args.beta0)?;
            let mc_size = st.value(args.n, "N")?.unwrap_or(100_000);
            let step = st.value(args.step, "step")?.unwrap_or(0.01);
            let psi = orthogonality_diagnostic(Score::NeymanPsi, &spec, mc_size, step, &mut rng)?;
            let phi = orthogonality_diagnostic(Score::NaiveVarphi, &spec, mc_size, step, &mut rng)?;
            vec![
                ("psi_derivative".into(), psi.value),
                ("psi_std_error".into(), psi.std_error),
                ("varphi_derivative".into(), phi.value),
                ("varphi_std_error".into(), phi.std_error),
            ]
        }
        Which::NaiveInstrument => {
            let n = st.value(args.n, "N")?.unwrap_or(500);
            let m = st.value(args.m, "M")?.unwrap_or(200);
            let k = st.value(args.common.k, "K")?.unwrap_or(2);
            let learner = st
                .learner("forest")?
                .ok_or_else(|| usage("the raw-instrument diagnostic needs a fitted learner"))?;
            let summary = with_threads(threads, || Ok(naive_instrument_diagnostic(n, m, k, &learner, &mut rng)?))?;
            vec![
                ("proper_standardized_bias".into(), summary.proper_bias),
                ("naive_standardized_bias".into(), summary.naive_bias),
            ]
        }
    };
    write_output(Report::Metrics(&rows), st.out().as_deref(), format)
}

fn with_threads<T: Send>(threads: Option<usize>, body: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match threads {
        None => body(),
        Some(0) => Err(usage("thread count must be positive")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(usage)?
            .install(body),
    }
}

/// Runs the tool and returns the process exit code: 0 on success, 1 on usage
/// errors, 2 when estimation or I/O fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            1
        }
        Err(CliError::Estimation(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
