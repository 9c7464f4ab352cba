mod args;
mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::Parser;
use sa_core::bench::{self, BenchOptions, Dims};
use sa_core::eval::{self, ClusterSpec, Dataset, EvalReport, ReplicaSource, SweepStrategy};
use sa_core::io::{read_matrix_file, TraceFormat};
use sa_core::sampling::SamplingSpec;
use sa_core::surprise::{Method, SaConfig, ScoreFormat, SurpriseAdequacy};
use sa_core::{BandwidthRule, KdeConfig, SaError, SampleSelection, Strategy, TraceSet};

use args::{
    BenchArgs, CalcArgs, Cli, Command, EvalArgs, InputFormat, MethodArg, OutputFormat, PrepArgs,
    SampleArgs, SamplingArgs, StrategyArg, TrainArgs,
};
use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// Core errors; validation failures exit with 2, the rest with 1.
    Core(SaError),
    /// Failures writing outputs; exit code 1.
    Runtime(String),
}

impl From<SaError> for CliError {
    fn from(e: SaError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prep(a) => cmd_prep(a),
        Command::Calc(a) => cmd_calc(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_with<T: FromStr<Err = SaError>>(text: &str) -> CliResult<T> {
    text.parse().map_err(CliError::Core)
}

/// Training-set options merged from flags and the config file.
struct TrainSpec {
    train: PathBuf,
    labels: Option<PathBuf>,
    format: Option<TraceFormat>,
    skip_header: bool,
    num_classes: Option<usize>,
    kde: KdeConfig,
    threads: usize,
}

fn resolve_format(flag: Option<InputFormat>, cfg: Option<&str>) -> CliResult<Option<TraceFormat>> {
    match flag {
        Some(InputFormat::Npy) => Ok(Some(TraceFormat::BinaryMatrix)),
        Some(InputFormat::Csv) => Ok(Some(TraceFormat::Csv)),
        None => cfg.map(parse_with).transpose(),
    }
}

fn resolve_train(
    a: &TrainArgs,
    cfg: &RunConfig,
    require_train: bool,
) -> CliResult<Option<TrainSpec>> {
    let mut kde = KdeConfig::default();
    if let Some(b) = a.bandwidth.as_deref().or(cfg.bandwidth.as_deref()) {
        kde.rule = parse_with::<BandwidthRule>(b)?;
    }
    if let Some(t) = a.variance_threshold.or(cfg.variance_threshold) {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(usage(format!(
                "variance threshold must be finite and >= 0, got {t}"
            )));
        }
        kde.variance_threshold = t;
    }
    kde.standardize = !a.no_standardize && cfg.standardize.unwrap_or(true);
    let threads = a.threads.or(cfg.threads).unwrap_or_else(default_threads);
    if threads == 0 {
        return Err(usage("--threads must be positive"));
    }
    let Some(train) = a.train.clone().or_else(|| cfg.train.clone()) else {
        return if require_train {
            Err(usage("missing --train"))
        } else {
            Ok(None)
        };
    };
    Ok(Some(TrainSpec {
        train,
        labels: a.labels.clone().or_else(|| cfg.labels.clone()),
        format: resolve_format(a.format, cfg.format.as_deref())?,
        skip_header: a.skip_header || cfg.skip_header.unwrap_or(false),
        num_classes: a.num_classes.or(cfg.num_classes),
        kde,
        threads,
    }))
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn resolve_method(flag: Option<MethodArg>, cfg: &RunConfig) -> CliResult<Method> {
    match flag {
        Some(MethodArg::Lsa) => Ok(Method::Lsa),
        Some(MethodArg::Dsa) => Ok(Method::Dsa),
        None => match cfg.method.as_deref() {
            Some(m) => parse_with(m),
            None => Err(usage("missing --method (lsa or dsa)")),
        },
    }
}

/// Loads traces with labels; `labels` may be omitted only when the caller
/// does not need them (LSA queries), in which case every row gets class 0.
fn load_set(
    path: &Path,
    labels: Option<&Path>,
    spec: &TrainSpec,
    num_classes: Option<usize>,
    labels_required: bool,
    what: &str,
) -> CliResult<TraceSet> {
    let format = spec.format.unwrap_or_else(|| TraceFormat::from_path(path));
    let opts = sa_core::trace::LoadOptions {
        num_classes,
        skip_header: spec.skip_header,
        name: None,
    };
    match labels {
        Some(l) => Ok(sa_core::trace::load_traces(path, format, l, &opts)?),
        None if labels_required => Err(usage(format!("missing labels for the {what} traces"))),
        None => {
            let m = read_matrix_file(path, format, spec.skip_header)?;
            let n = m.nrows();
            let name = path
                .file_stem()
                .map_or_else(|| what.to_string(), |s| s.to_string_lossy().into_owned());
            Ok(TraceSet::new(m, vec![0; n], num_classes, name)?)
        }
    }
}

fn load_train(spec: &TrainSpec) -> CliResult<TraceSet> {
    load_set(
        &spec.train,
        spec.labels.as_deref(),
        spec,
        spec.num_classes,
        true,
        "training",
    )
}

/// Resolves `--sampling` / `--selection` into a selection of `train`, or
/// `None` when neither is given. Enforces the LSA pairing rule.
fn select_training(
    s: &SamplingArgs,
    cfg: &RunConfig,
    train: &TraceSet,
    kde: &KdeConfig,
    method: Option<Method>,
) -> CliResult<Option<SampleSelection>> {
    let force = s.force || cfg.force.unwrap_or(false);
    let seed = s.seed.or(cfg.seed).unwrap_or(0);
    let shuffle = s.shuffle || cfg.shuffle.unwrap_or(false);
    let sampling = s.sampling.as_deref().or(cfg.sampling.as_deref());
    let selection = s.selection.clone().or_else(|| cfg.selection.clone());
    let sel = match (sampling, selection) {
        (Some(_), Some(_)) => {
            return Err(usage("--sampling and --selection are mutually exclusive"))
        }
        (None, None) => return Ok(None),
        (Some(text), None) => {
            let spec: SamplingSpec = parse_with(text)?;
            if method == Some(Method::Lsa) && !spec.is_distribution_preserving() && !force {
                return Err(lsa_pairing_error(spec.strategy()));
            }
            spec.select(train, seed, kde, shuffle)?
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path).map_err(|e| SaError::io(&path, e))?;
            let sel = SampleSelection::from_json(&text)?;
            sel.check_parent(train.len())?;
            let preserving = matches!(sel.strategy, Strategy::Uniform | Strategy::Full);
            if method == Some(Method::Lsa) && !preserving && !force {
                return Err(lsa_pairing_error(sel.strategy));
            }
            sel
        }
    };
    Ok(Some(sel))
}

fn lsa_pairing_error(strategy: Strategy) -> CliError {
    usage(format!(
        "{strategy} sampling does not preserve the training distribution, so it is \
         only valid for DSA; LSA accepts uniform sampling only (pass --force to override)"
    ))
}

fn sa_config(
    spec: &TrainSpec,
    cache: Option<PathBuf>,
    batch_size: Option<usize>,
) -> CliResult<SaConfig> {
    let batch_size = batch_size.unwrap_or(SaConfig::default().batch_size);
    if batch_size == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    Ok(SaConfig {
        kde: spec.kde,
        batch_size,
        threads: spec.threads,
        cache_dir: cache,
    })
}

fn prepared(
    method: Method,
    spec: &TrainSpec,
    s: &SamplingArgs,
    cfg: &RunConfig,
    sa_cfg: SaConfig,
) -> CliResult<(SurpriseAdequacy, sa_core::surprise::PrepReport)> {
    let mut train = load_train(spec)?;
    if let Some(sel) = select_training(s, cfg, &train, &spec.kde, Some(method))? {
        train = train.restrict(&sel)?;
    }
    if let Some(dir) = &sa_cfg.cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| SaError::io(dir, e))?;
    }
    let mut sa = SurpriseAdequacy::new(method, train, sa_cfg);
    let report = sa.prep()?;
    Ok((sa, report))
}

fn cmd_prep(a: PrepArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.train.config.as_deref())?;
    let method = resolve_method(a.method, &cfg)?;
    let spec = resolve_train(&a.train, &cfg, true)?.expect("required");
    let cache = a
        .cache
        .or_else(|| cfg.cache.clone())
        .ok_or_else(|| usage("missing --cache directory"))?;
    let sa_cfg = sa_config(&spec, Some(cache.clone()), cfg.batch_size)?;
    let (sa, report) = prepared(method, &spec, &a.sampling, &cfg, sa_cfg)?;
    let path = sa.cache_path(&cache);
    println!("fingerprint: {}", report.fingerprint);
    if report.cache_hit {
        println!("cache hit: {}", path.display());
    } else {
        println!("prepared: {}", path.display());
    }
    Ok(())
}

fn create_output(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SaError::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| SaError::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_output(
    out: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> CliResult<()> {
    let result = match out {
        Some(path) => {
            let mut w = create_output(path)?;
            f(&mut w).and_then(|_| w.flush())
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).and_then(|_| lock.flush())
        }
    };
    result.map_err(|e| CliError::Runtime(format!("writing output: {e}")))
}

fn cmd_calc(a: CalcArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.train.config.as_deref())?;
    let method = resolve_method(a.method, &cfg)?;
    let spec = resolve_train(&a.train, &cfg, true)?.expect("required");
    let queries_path = a
        .queries
        .or_else(|| cfg.queries.clone())
        .ok_or_else(|| usage("missing --queries"))?;
    let query_labels = a.query_labels.or_else(|| cfg.query_labels.clone());
    let format = match a.output_format {
        Some(OutputFormat::Csv) => ScoreFormat::Csv,
        Some(OutputFormat::Jsonl) => ScoreFormat::JsonLines,
        None => match cfg.output_format.as_deref() {
            None | Some("csv") => ScoreFormat::Csv,
            Some("jsonl") => ScoreFormat::JsonLines,
            Some(other) => return Err(usage(format!("unknown output format {other:?}"))),
        },
    };
    let sa_cfg = sa_config(
        &spec,
        a.cache.or_else(|| cfg.cache.clone()),
        a.batch_size.or(cfg.batch_size),
    )?;
    let (sa, _) = prepared(method, &spec, &a.sampling, &cfg, sa_cfg)?;
    let queries = load_set(
        &queries_path,
        query_labels.as_deref(),
        &spec,
        Some(sa.train().num_classes()),
        method == Method::Dsa,
        "query",
    )?;
    let scores = sa.calc(&queries)?;
    let out = a.out.or_else(|| cfg.out.clone());
    write_output(out.as_deref(), |w| scores.write(w, format))
}

fn cmd_sample(a: SampleArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.train.config.as_deref())?;
    let spec = resolve_train(&a.train, &cfg, true)?.expect("required");
    let train = load_train(&spec)?;
    let has_request = a.sampling.sampling.is_some() || cfg.sampling.is_some();
    if !has_request {
        return Err(usage("missing --sampling"));
    }
    let sel = sa_core::surprise::with_threads(spec.threads, || {
        select_training(&a.sampling, &cfg, &train, &spec.kde, None)
    })??
    .expect("sampling requested");
    let out = a.out.or_else(|| cfg.out.clone());
    write_output(out.as_deref(), |w| writeln!(w, "{}", sel.to_json()))
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.train.config.as_deref())?;
    let spec = resolve_train(&a.train, &cfg, false)?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let synth = a.synth.clone().or_else(|| cfg.synth.clone());
    let source = match (synth, &spec) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(&path).map_err(|e| SaError::io(&path, e))?;
            ReplicaSource::Synthetic {
                spec: ClusterSpec::from_json(&text)?,
                base_seed: seed,
            }
        }
        (None, Some(spec)) => {
            let train = load_train(spec)?;
            let k = Some(train.num_classes());
            let pick = |flag: &Option<PathBuf>, c: &Option<PathBuf>, name: &str| {
                flag.clone()
                    .or_else(|| c.clone())
                    .ok_or_else(|| usage(format!("missing --{name}")))
            };
            let nominal = pick(&a.nominal, &cfg.nominal, "nominal")?;
            let nominal_labels = pick(&a.nominal_labels, &cfg.nominal_labels, "nominal-labels")?;
            let outliers = pick(&a.outliers, &cfg.outliers, "outliers")?;
            let outlier_labels = pick(&a.outlier_labels, &cfg.outlier_labels, "outlier-labels")?;
            let data = Dataset {
                nominal: load_set(&nominal, Some(&nominal_labels), spec, k, true, "nominal")?,
                outliers: load_set(&outliers, Some(&outlier_labels), spec, k, true, "outlier")?,
                train,
            };
            ReplicaSource::Fixed { data, seed }
        }
        (None, None) => {
            return Err(usage(
                "eval needs --synth or --train with --nominal and --outliers",
            ))
        }
    };
    let methods: Vec<Method> = if !a.methods.is_empty() {
        a.methods
            .iter()
            .map(|m| match m {
                MethodArg::Lsa => Method::Lsa,
                MethodArg::Dsa => Method::Dsa,
            })
            .collect()
    } else if let Some(ms) = &cfg.methods {
        ms.iter().map(|m| parse_with(m)).collect::<CliResult<_>>()?
    } else {
        vec![Method::Lsa, Method::Dsa]
    };
    let strategy = match a.strategy {
        Some(StrategyArg::Uniform) => SweepStrategy::Uniform,
        Some(StrategyArg::Unsurprising) => SweepStrategy::Unsurprising,
        Some(StrategyArg::Neighborfree) => SweepStrategy::NeighborFree,
        None => cfg
            .strategy
            .as_deref()
            .map_or(Ok(SweepStrategy::Uniform), parse_with)?,
    };
    let force = a.force || cfg.force.unwrap_or(false);
    let ratios = if a.ratios.is_empty() {
        cfg.ratios.clone().unwrap_or_default()
    } else {
        a.ratios.clone()
    };
    let bandwidths = if a.bandwidths.is_empty() {
        cfg.bandwidths.clone().unwrap_or_default()
    } else {
        a.bandwidths.clone()
    };
    let replicas = a.replicas.or(cfg.replicas).unwrap_or(5);
    if replicas == 0 {
        return Err(usage("--replicas must be >= 1"));
    }
    for &r in &ratios {
        if !(r > 0.0 && r <= 1.0) {
            return Err(usage(format!("ratio {r} outside (0, 1]")));
        }
    }
    if ratios.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--ratios must be strictly ascending"));
    }
    if let Some(&h) = bandwidths.iter().find(|&&h| !(h > 0.0 && h.is_finite())) {
        return Err(usage(format!("bandwidth must be positive, got {h}")));
    }
    if !bandwidths.is_empty() && !methods.contains(&Method::Lsa) {
        return Err(usage("--bandwidths applies to LSA; add lsa to --methods"));
    }
    if strategy != SweepStrategy::Uniform && methods.contains(&Method::Lsa) && !force {
        let tag = match strategy {
            SweepStrategy::Unsurprising => Strategy::UnsurprisingFirst,
            _ => Strategy::NeighborFree,
        };
        return Err(lsa_pairing_error(tag));
    }
    let sa_cfg = SaConfig {
        kde: spec.as_ref().map_or_else(KdeConfig::default, |s| s.kde),
        batch_size: a
            .batch_size
            .or(cfg.batch_size)
            .unwrap_or(SaConfig::default().batch_size),
        threads: spec.as_ref().map_or_else(default_threads, |s| s.threads),
        cache_dir: None,
    };
    if sa_cfg.batch_size == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    let mut report = EvalReport::default();
    for &m in &methods {
        report.merge(eval::sweep_sampling(
            &source, m, strategy, &ratios, replicas, &sa_cfg,
        )?);
    }
    if !bandwidths.is_empty() {
        report.merge(eval::sweep_bandwidth(
            &source,
            &bandwidths,
            replicas,
            &sa_cfg,
        )?);
    }
    match a.out.or_else(|| cfg.out.clone()) {
        Some(prefix) => {
            let with_ext = |ext: &str| {
                let mut p = prefix.clone().into_os_string();
                p.push(ext);
                PathBuf::from(p)
            };
            let json = report.to_json();
            write_output(Some(&with_ext(".json")), |w| writeln!(w, "{json}"))?;
            write_output(Some(&with_ext(".csv")), |w| report.write_csv(w))?;
            write_output(Some(&with_ext(".dat")), |w| report.write_gnuplot(w))?;
            write_output(None, |w| report.write_csv(w))
        }
        None => write_output(None, |w| report.write_csv(w)),
    }
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    if !a.dsa && a.ratios.is_empty() {
        return Err(usage("choose --dsa and/or --ratios"));
    }
    if a.threads.contains(&0) {
        return Err(usage("--threads values must be positive"));
    }
    if a.reps == 0 {
        return Err(usage("--reps must be >= 1"));
    }
    if let Some(&r) = a.ratios.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(usage(format!("ratio {r} outside (0, 1]")));
    }
    let dims = Dims {
        n: a.n,
        q: a.q,
        d: a.d,
        classes: a.classes,
    };
    let opts = BenchOptions {
        reps: a.reps,
        warmup: !a.no_warmup,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let mut results = Vec::new();
    if a.dsa {
        results.extend(bench::bench_dsa(dims, &a.threads, !a.no_naive, &opts)?);
    }
    let mut fit = None;
    if !a.ratios.is_empty() {
        let b = bench::bench_sampling(dims, &a.ratios, a.threads[0], &opts)?;
        fit = Some((b.slope_ms_per_row, b.intercept_ms, b.r_squared));
        results.extend(b.results);
    }
    print!("{}", bench::format_table(&results));
    if let Some(naive) = results.iter().find(|r| r.implementation == "naive") {
        for r in results
            .iter()
            .filter(|r| r.scenario == "dsa" && r.implementation == "optimized")
        {
            println!(
                "speedup vs naive at {} thread(s): {:.2}x",
                r.threads,
                naive.ms / r.ms
            );
        }
    }
    if let Some((slope, intercept, r2)) = fit {
        println!("time vs sample size: {slope:.6} ms/row + {intercept:.3} ms, R^2 = {r2:.4}");
    }
    if let Some(out) = &a.out {
        write_output(Some(out), |w| bench::write_csv(&results, w))?;
    }
    Ok(())
}
