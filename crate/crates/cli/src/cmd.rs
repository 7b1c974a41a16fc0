use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::Context;
use nbrnas::agg::AggregationKind;
use nbrnas::analysis::{
    criterion_top_k, flat_sharp_study, landscape_grid, ranking_study, Criterion, FlatSharpConfig,
    LandscapeParams, RankingStudyConfig, TopKConfig,
};
use nbrnas::bench::{gen_synthetic, GenParams, Objective, TabularBenchmark};
use nbrnas::gradsearch::{init_logits, run_na_descent, DescentConfig, GradAggregation};
use nbrnas::nbhd::NeighborhoodParams;
use nbrnas::search::{na_random_search, random_search, SearchTrace};
use nbrnas::seed::{derive_seed, rng_for};
use nbrnas::space::{relax, DiscreteCell, RelaxedCell, SpaceSpec};
use serde::Serialize;

use crate::fmt::sig6;
use crate::{
    FlatAnalysisArgs, GenBenchArgs, GradSearchArgs, LandscapeArgs, Method, RankEvalArgs, SearchArgs, Source,
};

pub enum CliError {
    /// Bad flag values; exit code 2.
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn flag_for(param: &str) -> String {
    let name = match param {
        "learning_rate" => "lr",
        "sample_size" => "samples",
        "grid_n" => "grid",
        other => other,
    };
    format!("--{}", name.replace('_', "-"))
}

/// Errors caused by flag values exit with 2; everything else with 1.
fn classify(e: nbrnas::Error) -> CliError {
    use nbrnas::Error as E;
    match e {
        E::InvalidParam { name, reason } => CliError::Usage(format!("invalid value for {}: {reason}", flag_for(name))),
        E::NonDifferentiable(kind) => {
            CliError::Usage(format!("invalid value for --agg: `{kind}` is not differentiable"))
        }
        e @ (E::NeighborhoodTooSmall { .. } | E::EpochOutOfRange { .. } | E::UnknownDataset(_) | E::MissingSpecialOps) => {
            CliError::Usage(e.to_string())
        }
        e => CliError::Runtime(e.into()),
    }
}

trait OrUsage<T> {
    fn or_usage(self) -> CliResult<T>;
}

impl<T> OrUsage<T> for nbrnas::Result<T> {
    fn or_usage(self) -> CliResult<T> {
        self.map_err(classify)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).context("serializing output")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct Loaded {
    bench: TabularBenchmark,
    dataset: String,
    epoch: usize,
}

impl Loaded {
    fn objective(&self) -> CliResult<Objective> {
        Objective::validation(&self.bench, &self.dataset, self.epoch).or_usage()
    }

    fn describe(&self, cell: &DiscreteCell) -> CliResult {
        let rec = self.bench.record(cell).map_err(|e| CliError::Runtime(e.into()))?;
        println!("val_err[{}@{}]: {}", self.dataset, self.epoch, sig6(rec.val_err[&self.dataset][self.epoch]));
        for (ds, v) in &rec.test_err {
            println!("test_err[{ds}]: {}", sig6(*v));
        }
        Ok(())
    }
}

fn load(src: &Source) -> CliResult<Loaded> {
    let bench = TabularBenchmark::read(&src.bench)
        .with_context(|| format!("loading benchmark {}", src.bench.display()))?;
    if let Some(path) = &src.space {
        let spec = SpaceSpec::load(path).with_context(|| format!("loading space {}", path.display()))?;
        if &spec != bench.spec() {
            return Err(CliError::Runtime(anyhow::anyhow!("benchmark does not match space {}", path.display())));
        }
    }
    let dataset = match &src.dataset {
        Some(d) => d.clone(),
        None => bench
            .validation_datasets()
            .into_iter()
            .next()
            .context("benchmark has no validation data")?,
    };
    let epoch = src.epoch.unwrap_or(bench.epochs() - 1);
    let loaded = Loaded { bench, dataset, epoch };
    loaded.objective()?;
    Ok(loaded)
}

fn parse_kind(s: &str) -> CliResult<AggregationKind> {
    s.parse().map_err(|e| CliError::Usage(format!("invalid value for --agg: {e}")))
}

pub fn gen_bench(a: GenBenchArgs) -> CliResult {
    let params = GenParams {
        spike_fraction: a.spike_fraction,
        spike_height: a.spike_height,
        generalization_gap: a.generalization_gap,
        noise_scale: a.noise_scale,
        epochs: a.epochs,
    };
    params.validate().or_usage()?;
    let spec = SpaceSpec::load(&a.space).with_context(|| format!("loading space {}", a.space.display()))?;
    let bench = gen_synthetic(&spec, a.seed, &params).map_err(|e| CliError::Runtime(e.into()))?;
    bench.write(&a.out).map_err(|e| CliError::Runtime(e.into()))?;
    println!("cells: {}", bench.records().len());
    println!("wrote: {}", a.out.display());
    Ok(())
}

fn print_trace(trace: &SearchTrace, loaded: &Loaded) -> CliResult {
    let cell = trace.incumbent_cell(loaded.bench.spec()).map_err(|e| CliError::Runtime(e.into()))?;
    println!("method: {}", trace.method);
    println!("incumbent: {}", trace.incumbent);
    println!("criterion: {}", sig6(trace.incumbent_score));
    loaded.describe(&cell)?;
    println!("total_evaluations: {}", trace.total_evaluations);
    Ok(())
}

pub fn search(a: SearchArgs) -> CliResult {
    let loaded = load(&a.source)?;
    let obj = loaded.objective()?;
    let mut rng = rng_for(a.seed, "search", 0);
    let trace = match a.method {
        Method::Rs => random_search(&obj, a.budget, &mut rng).or_usage()?,
        Method::NaRs => {
            let kind = parse_kind(&a.agg)?;
            let params = NeighborhoodParams::new(a.d, a.n_nbr, obj.spec()).or_usage()?;
            na_random_search(&obj, a.steps, params, kind, &mut rng).or_usage()?
        }
    };
    if let Some(out) = &a.out {
        write_json(out, &trace)?;
    }
    print_trace(&trace, &loaded)
}

pub fn grad_search(a: GradSearchArgs) -> CliResult {
    let kind = GradAggregation::try_from(parse_kind(&a.agg)?).or_usage()?;
    let loaded = load(&a.source)?;
    let obj = loaded.objective()?;
    let spec = obj.spec();
    let cfg = DescentConfig {
        steps: a.steps,
        n_nbr: a.n_nbr,
        d: a.d.unwrap_or_else(|| spec.default_perturbed_edges()),
        eps: a.eps,
        learning_rate: a.lr,
        kind,
        seed: derive_seed(a.seed, "grad-search", 0),
    };
    cfg.validate(spec).or_usage()?;
    let beta0 = init_logits(spec, derive_seed(a.seed, "grad-search", 1));
    let (trace, cell) = run_na_descent(&beta0, &obj, &cfg).map_err(|e| CliError::Runtime(e.into()))?;
    if let Some(out) = &a.out {
        write_json(out, &trace)?;
    }
    println!("final_cell: {}", trace.final_cell);
    println!("surrogate: {}", sig6(trace.final_objective));
    loaded.describe(&cell)
}

fn eval_datasets(requested: &[String], bench: &TabularBenchmark) -> Vec<String> {
    if requested.is_empty() {
        bench.test_datasets()
    } else {
        requested.to_vec()
    }
}

pub fn rank_eval(a: RankEvalArgs) -> CliResult {
    let kinds = a.kinds.iter().map(|k| parse_kind(k)).collect::<CliResult<Vec<_>>>()?;
    let loaded = load(&a.study.source)?;
    let config = RankingStudyConfig {
        val_dataset: loaded.dataset.clone(),
        eval_datasets: eval_datasets(&a.study.datasets, &loaded.bench),
        kinds,
        epoch: loaded.epoch,
        sample_size: a.samples,
        repeats: a.repeats,
        d: a.study.d,
    };
    let report = ranking_study(&loaded.bench, &config, &mut rng_for(a.seed, "rank-eval", 0)).or_usage()?;
    if let Some(out) = &a.study.out {
        write_json(out, &report)?;
    }
    for t in &report.taus {
        println!("tau[{}][{}]: {} ± {}", t.dataset, t.criterion, sig6(t.mean), sig6(t.std));
    }
    Ok(())
}

pub fn flat_analysis(a: FlatAnalysisArgs) -> CliResult {
    let criteria = a
        .criteria
        .iter()
        .map(|c| c.parse::<Criterion>().map_err(|e| CliError::Usage(format!("invalid value for --criteria: {e}"))))
        .collect::<CliResult<Vec<_>>>()?;
    let loaded = load(&a.study.source)?;
    let datasets = eval_datasets(&a.study.datasets, &loaded.bench);
    let config = FlatSharpConfig {
        val_dataset: loaded.dataset.clone(),
        eval_datasets: datasets.clone(),
        epoch: loaded.epoch,
        top_k: a.top_k,
        d: a.study.d,
    };
    let report = flat_sharp_study(&loaded.bench, &config).or_usage()?;
    if let Some(out) = &a.study.out {
        write_json(out, &report)?;
    }
    for (name, g) in [("flat", &report.flat), ("sharp", &report.sharp)] {
        println!("{name}.size: {}", g.size);
        println!("{name}.val_err: {}", sig6(g.mean_val_err));
        println!("{name}.nbhd_variance: {}", sig6(g.mean_nbhd_variance));
        for (ds, v) in &g.mean_test_err {
            println!("{name}.test_err[{ds}]: {}", sig6(*v));
        }
    }
    if let Some(out) = &a.criteria_out {
        let mut reports = Vec::new();
        for criterion in criteria {
            let cfg = TopKConfig {
                val_dataset: loaded.dataset.clone(),
                eval_datasets: datasets.clone(),
                epoch: loaded.epoch,
                criterion,
                k: a.top_k,
                d: a.study.d,
            };
            let r = criterion_top_k(&loaded.bench, &cfg).or_usage()?;
            println!("top_k[{criterion}].nbhd_variance: {}", sig6(r.mean_nbhd_variance));
            reports.push(r);
        }
        write_json(out, &reports)?;
    }
    Ok(())
}

fn read_center(path: &Path) -> CliResult<RelaxedCell> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let dists = match value.get("final_alpha") {
        Some(alpha) => alpha.clone(),
        None => value,
    };
    let dists: Vec<Vec<f64>> = serde_json::from_value(dists)
        .with_context(|| format!("{}: expected a list of per-edge distributions", path.display()))?;
    RelaxedCell::new(dists).map_err(|e| CliError::Runtime(anyhow::Error::new(e).context(path.display().to_string())))
}

pub fn landscape(a: LandscapeArgs) -> CliResult {
    let params = LandscapeParams { grid_n: a.grid, radius: a.radius, h: a.h };
    params.validate().or_usage()?;
    let loaded = load(&a.source)?;
    let obj = loaded.objective()?;
    let spec = obj.spec();
    let center = match (&a.center, &a.cell) {
        (Some(path), _) => read_center(path)?,
        (None, Some(cell)) => relax(&spec.parse_cell(cell).map_err(|e| CliError::Usage(format!("invalid value for --cell: {e}")))?, spec),
        (None, None) => RelaxedCell::uniform(spec),
    };
    spec.check_relaxed(&center).map_err(|e| CliError::Runtime(e.into()))?;
    let grid = landscape_grid(&obj, &center, &params).map_err(|e| CliError::Runtime(e.into()))?;
    if let Some(out) = &a.out {
        write_json(out, &grid)?;
    }
    if let Some(csv) = &a.csv {
        fs::write(csv, grid.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    println!("center_cell: {}", grid.center_cell);
    println!("center_value: {}", sig6(grid.center_value()));
    println!("eigenvalues: {} {}", sig6(grid.eigen.lambda0), sig6(grid.eigen.lambda1));
    Ok(())
}
