//! Studies on a complete benchmark: how well neighborhood criteria rank
//! architectures, and whether flat neighborhoods generalize better.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kendall_tau;
use crate::agg::{aggregate, neighborhood_variance, AggregationKind};
use crate::bench::{Objective, TabularBenchmark};
use crate::nbhd::{neighborhood_size, NeighborIter};
use crate::space::{DiscreteCell, SpaceSpec};
use crate::{Error, Result};

/// Largest number of objective lookups an exhaustive criterion scan may do.
pub const EXHAUSTIVE_LIMIT: u128 = 10_000_000;

/// A selection criterion: the cell's own error, or an aggregate over its
/// full `d`-neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    Baseline,
    Aggregate(AggregationKind),
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::Baseline => f.write_str("baseline"),
            Criterion::Aggregate(kind) => kind.fmt(f),
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Criterion::Baseline),
            other => other.parse().map(Criterion::Aggregate),
        }
    }
}

impl Serialize for Criterion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Criterion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn ball_values(obj: &Objective, cell: &DiscreteCell, d: usize) -> Vec<f64> {
    NeighborIter::new(cell, obj.spec(), d).map(|c| obj.at(&c)).collect()
}

fn score(obj: &Objective, cell: &DiscreteCell, criterion: Criterion, d: usize) -> Result<f64> {
    match criterion {
        Criterion::Baseline => Ok(obj.at(cell)),
        Criterion::Aggregate(kind) => {
            let values = ball_values(obj, cell, d);
            aggregate(kind, values[0], &values)
        }
    }
}

fn check_d(spec: &SpaceSpec, d: usize) -> Result<()> {
    if d > spec.edge_count() {
        return Err(Error::param("d", format!("{d} exceeds the edge count {}", spec.edge_count())));
    }
    Ok(())
}

/// Criterion value of `cell`, aggregating over its whole `d`-ball.
pub fn criterion_value(obj: &Objective, cell: &DiscreteCell, criterion: Criterion, d: usize) -> Result<f64> {
    obj.spec().check_cell(cell)?;
    check_d(obj.spec(), d)?;
    score(obj, cell, criterion, d)
}

/// Criterion values of every cell, in index order.
pub fn criterion_scores(obj: &Objective, criterion: Criterion, d: usize) -> Result<Vec<f64>> {
    let spec = obj.spec();
    check_d(spec, d)?;
    let size = spec.size();
    let ball = match criterion {
        Criterion::Baseline => 1,
        Criterion::Aggregate(_) => neighborhood_size(spec.edge_count(), spec.op_count(), d),
    };
    let lookups = size.saturating_mul(ball);
    if lookups > EXHAUSTIVE_LIMIT {
        return Err(Error::SpaceTooLarge { size: lookups, limit: EXHAUSTIVE_LIMIT, what: "exhaustive criterion" });
    }
    (0..size as usize).into_par_iter().map(|i| score(obj, &spec.cell_at(i), criterion, d)).collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn check_datasets(bench: &TabularBenchmark, datasets: &[String]) -> Result<()> {
    let known = bench.test_datasets();
    match datasets.iter().find(|d| !known.contains(d)) {
        Some(d) => Err(Error::UnknownDataset(d.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingStudyConfig {
    /// Dataset whose validation error drives every criterion.
    pub val_dataset: String,
    /// Datasets whose test error is the ground-truth ranking.
    pub eval_datasets: Vec<String>,
    pub kinds: Vec<AggregationKind>,
    pub epoch: usize,
    pub sample_size: usize,
    pub repeats: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub dataset: String,
    pub criterion: Criterion,
    pub mean: f64,
    pub std: f64,
    pub per_repeat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingStudyReport {
    pub config: RankingStudyConfig,
    /// One entry per (dataset, criterion): baseline first, then `kinds` in order.
    pub taus: Vec<TauSummary>,
}

impl RankingStudyReport {
    pub fn tau(&self, dataset: &str, criterion: Criterion) -> Option<&TauSummary> {
        self.taus.iter().find(|t| t.dataset == dataset && t.criterion == criterion)
    }
}

/// Population mean and standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let mu = mean(values.iter().copied());
    let var = mean(values.iter().map(|v| (v - mu) * (v - mu)));
    (mu, var.sqrt())
}

/// Samples `sample_size` distinct cells per repeat and compares the ranking
/// induced by each criterion with the ranking by test error.
pub fn ranking_study<R: Rng + ?Sized>(
    bench: &TabularBenchmark,
    config: &RankingStudyConfig,
    rng: &mut R,
) -> Result<RankingStudyReport> {
    let spec = bench.spec();
    let obj = Objective::validation(bench, &config.val_dataset, config.epoch)?;
    check_d(spec, config.d)?;
    check_datasets(bench, &config.eval_datasets)?;
    if config.repeats == 0 {
        return Err(Error::param("repeats", "must be at least 1"));
    }
    let size = spec.dense_size(u128::MAX, "ranking study")?;
    if config.sample_size < 2 || config.sample_size > size {
        return Err(Error::param("sample_size", format!("{} not in [2, {size}]", config.sample_size)));
    }
    let criteria: Vec<Criterion> =
        std::iter::once(Criterion::Baseline).chain(config.kinds.iter().map(|&k| Criterion::Aggregate(k))).collect();
    let truth: Vec<Objective> =
        config.eval_datasets.iter().map(|ds| Objective::test(bench, ds)).collect::<Result<_>>()?;

    let samples: Vec<Vec<usize>> =
        (0..config.repeats).map(|_| index::sample(rng, size, config.sample_size).into_vec()).collect();

    // taus[dataset][criterion][repeat]
    let mut taus = vec![vec![Vec::with_capacity(config.repeats); criteria.len()]; truth.len()];
    for sample in &samples {
        let cells: Vec<DiscreteCell> = sample.iter().map(|&i| spec.cell_at(i)).collect();
        let scores: Vec<Vec<f64>> = criteria
            .iter()
            .map(|&c| cells.par_iter().map(|cell| score(&obj, cell, c, config.d)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        for (t, gt) in truth.iter().enumerate() {
            let target: Vec<f64> = cells.iter().map(|c| gt.at(c)).collect();
            for (c, s) in scores.iter().enumerate() {
                taus[t][c].push(kendall_tau(s, &target)?);
            }
        }
    }

    let mut out = Vec::new();
    for (t, ds) in config.eval_datasets.iter().enumerate() {
        for (c, &criterion) in criteria.iter().enumerate() {
            let per_repeat = std::mem::take(&mut taus[t][c]);
            let (mean, std) = mean_std(&per_repeat);
            out.push(TauSummary { dataset: ds.clone(), criterion, mean, std, per_repeat });
        }
    }
    Ok(RankingStudyReport { config: config.clone(), taus: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatSharpConfig {
    pub val_dataset: String,
    pub eval_datasets: Vec<String>,
    pub epoch: usize,
    pub top_k: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub size: usize,
    pub mean_val_err: f64,
    pub mean_test_err: BTreeMap<String, f64>,
    pub mean_nbhd_variance: f64,
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatSharpReport {
    pub config: FlatSharpConfig,
    pub flat: GroupSummary,
    pub sharp: GroupSummary,
}

fn summarize(
    bench: &TabularBenchmark,
    obj: &Objective,
    datasets: &[String],
    members: &[(usize, f64)],
) -> Result<GroupSummary> {
    let spec = bench.spec();
    let mut mean_test_err = BTreeMap::new();
    for ds in datasets {
        let t = Objective::test(bench, ds)?;
        mean_test_err.insert(ds.clone(), mean(members.iter().map(|&(i, _)| t.values()[i])));
    }
    Ok(GroupSummary {
        size: members.len(),
        mean_val_err: mean(members.iter().map(|&(i, _)| obj.values()[i])),
        mean_test_err,
        mean_nbhd_variance: mean(members.iter().map(|&(_, v)| v)),
        cells: members.iter().map(|&(i, _)| spec.render_cell(&spec.cell_at(i))).collect(),
    })
}

/// Indices of the `k` smallest scores, ties broken by cell index.
fn smallest_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn variances(obj: &Objective, picked: &[usize], d: usize) -> Result<Vec<f64>> {
    let spec = obj.spec();
    picked.par_iter().map(|&i| neighborhood_variance(&ball_values(obj, &spec.cell_at(i), d))).collect()
}

/// Takes the `top_k` cells with the lowest validation error and splits them
/// at the median neighborhood variance into a flat and a sharp half.
pub fn flat_sharp_study(bench: &TabularBenchmark, config: &FlatSharpConfig) -> Result<FlatSharpReport> {
    let spec = bench.spec();
    let obj = Objective::validation(bench, &config.val_dataset, config.epoch)?;
    check_d(spec, config.d)?;
    check_datasets(bench, &config.eval_datasets)?;
    let size = obj.values().len();
    if config.top_k < 2 || config.top_k % 2 != 0 || config.top_k > size {
        return Err(Error::param("top_k", format!("{} must be even and in [2, {size}]", config.top_k)));
    }
    let picked = smallest_k(obj.values(), config.top_k);
    let vars = variances(&obj, &picked, config.d)?;
    let mut ranked: Vec<(usize, f64)> = picked.into_iter().zip(vars).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let (flat, sharp) = ranked.split_at(config.top_k / 2);
    Ok(FlatSharpReport {
        config: config.clone(),
        flat: summarize(bench, &obj, &config.eval_datasets, flat)?,
        sharp: summarize(bench, &obj, &config.eval_datasets, sharp)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKConfig {
    pub val_dataset: String,
    pub eval_datasets: Vec<String>,
    pub epoch: usize,
    pub criterion: Criterion,
    pub k: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub config: TopKConfig,
    /// Selected cells, best first.
    pub cells: Vec<String>,
    pub scores: Vec<f64>,
    pub mean_nbhd_variance: f64,
    pub mean_test_err: BTreeMap<String, f64>,
}

/// Exact top-`k` cells by criterion over the whole space.
pub fn criterion_top_k(bench: &TabularBenchmark, config: &TopKConfig) -> Result<TopKReport> {
    let obj = Objective::validation(bench, &config.val_dataset, config.epoch)?;
    check_datasets(bench, &config.eval_datasets)?;
    let scores = criterion_scores(&obj, config.criterion, config.d)?;
    if config.k == 0 || config.k > scores.len() {
        return Err(Error::param("k", format!("{} not in [1, {}]", config.k, scores.len())));
    }
    let picked = smallest_k(&scores, config.k);
    let vars = variances(&obj, &picked, config.d)?;
    let members: Vec<(usize, f64)> = picked.iter().copied().zip(vars).collect();
    let group = summarize(bench, &obj, &config.eval_datasets, &members)?;
    Ok(TopKReport {
        config: config.clone(),
        scores: picked.iter().map(|&i| scores[i]).collect(),
        cells: group.cells,
        mean_nbhd_variance: group.mean_nbhd_variance,
        mean_test_err: group.mean_test_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{gen_synthetic, ArchRecord, GenParams, SEARCH_DATASET, TRANSFER_DATASET};
    use crate::seed::rng_for;

    fn space(edges: usize, m: usize) -> SpaceSpec {
        SpaceSpec::new(edges, (0..m).map(|i| format!("o{i}")).collect(), None, None).unwrap()
    }

    /// Benchmark whose validation and test error are both `values`.
    fn table_bench(spec: SpaceSpec, values: &[f64]) -> TabularBenchmark {
        let records = values
            .iter()
            .map(|&v| ArchRecord {
                val_err: [("x".to_string(), vec![v])].into(),
                test_err: [("x".to_string(), v)].into(),
            })
            .collect();
        TabularBenchmark::from_dense(spec, 1, vec!["x".into()], records).unwrap()
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("baseline".parse::<Criterion>().unwrap(), Criterion::Baseline);
        assert_eq!("mean".parse::<Criterion>().unwrap(), Criterion::Aggregate(AggregationKind::Mean));
        assert!("best".parse::<Criterion>().is_err());
        let json = serde_json::to_string(&Criterion::Aggregate(AggregationKind::Max)).unwrap();
        assert_eq!(json, "\"max\"");
    }

    #[test]
    fn mean_criterion_on_two_by_two() {
        let bench = table_bench(space(2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let obj = Objective::validation(&bench, "x", 0).unwrap();
        let s = criterion_scores(&obj, Criterion::Aggregate(AggregationKind::Mean), 1).unwrap();
        assert_eq!(s, vec![2.0, 7.0 / 3.0, 8.0 / 3.0, 3.0]);
    }

    fn top_k_cfg(criterion: Criterion, k: usize, d: usize) -> TopKConfig {
        TopKConfig { val_dataset: "x".into(), eval_datasets: vec!["x".into()], epoch: 0, criterion, k, d }
    }

    #[test]
    fn top_k_edge_cases() {
        let spec = space(3, 3);
        let values: Vec<f64> = (0..27).map(|i| ((i * 7) % 11) as f64).collect();
        let bench = table_bench(spec.clone(), &values);
        let all = criterion_top_k(&bench, &top_k_cfg(Criterion::Baseline, 27, 1)).unwrap();
        let mut sorted = all.cells.clone();
        sorted.sort();
        let mut every: Vec<String> = spec.cells().map(|c| spec.render_cell(&c)).collect();
        every.sort();
        assert_eq!(sorted, every);

        let base = criterion_top_k(&bench, &top_k_cfg(Criterion::Baseline, 10, 0)).unwrap();
        let mean = criterion_top_k(&bench, &top_k_cfg(Criterion::Aggregate(AggregationKind::Mean), 10, 0)).unwrap();
        assert_eq!(base.cells, mean.cells);
        // Ties in value resolve by cell index.
        assert_eq!(base.cells[0], "o0|o0|o0");
        assert!(criterion_top_k(&bench, &top_k_cfg(Criterion::Baseline, 28, 1)).is_err());
    }

    #[test]
    fn exhaustive_limit() {
        let spec = space(10, 5);
        let obj = Objective::from_table(spec.clone(), vec![1.0; 9_765_625]).unwrap();
        assert!(matches!(
            criterion_scores(&obj, Criterion::Aggregate(AggregationKind::Mean), 1),
            Err(Error::SpaceTooLarge { .. })
        ));
    }

    #[test]
    fn ranking_is_perfect_when_test_equals_validation() {
        let spec = space(4, 3);
        let values: Vec<f64> = (0..81).map(|i| ((i * 13) % 81) as f64 * 0.5).collect();
        let bench = table_bench(spec, &values);
        let cfg = RankingStudyConfig {
            val_dataset: "x".into(),
            eval_datasets: vec!["x".into()],
            kinds: vec![AggregationKind::Mean],
            epoch: 0,
            sample_size: 30,
            repeats: 4,
            d: 1,
        };
        let r = ranking_study(&bench, &cfg, &mut rng_for(0, "t", 0)).unwrap();
        let base = r.tau("x", Criterion::Baseline).unwrap();
        assert_eq!(base.mean, 1.0);
        assert_eq!(base.std, 0.0);
        assert_eq!(base.per_repeat.len(), 4);
        let mean = r.tau("x", Criterion::Aggregate(AggregationKind::Mean)).unwrap();
        assert!((-1.0..=1.0).contains(&mean.mean));
    }

    fn designed(seed: u64) -> TabularBenchmark {
        gen_synthetic(&SpaceSpec::nas_bench_201(), seed, &GenParams::default()).unwrap()
    }

    #[test]
    fn flat_sharp_groups_on_designed_benchmark() {
        let bench = designed(11);
        let cfg = FlatSharpConfig {
            val_dataset: SEARCH_DATASET.into(),
            eval_datasets: vec![SEARCH_DATASET.into(), TRANSFER_DATASET.into()],
            epoch: bench.epochs() - 1,
            top_k: 100,
            d: 1,
        };
        let r = flat_sharp_study(&bench, &cfg).unwrap();
        assert_eq!(r.flat.size, 50);
        assert_eq!(r.sharp.size, 50);
        assert!(r.flat.mean_nbhd_variance <= r.sharp.mean_nbhd_variance);
        assert!(r.sharp.mean_test_err[TRANSFER_DATASET] > r.flat.mean_test_err[TRANSFER_DATASET]);
        assert!(flat_sharp_study(&bench, &FlatSharpConfig { top_k: 99, ..cfg.clone() }).is_err());
    }

    #[test]
    fn flat_sharp_without_gap_or_noise_tracks_the_base_landscape() {
        // Without gap or noise every cell tests at its base error b, and the
        // validation error is b, or b − spike_height for spiked cells.
        let p = GenParams { generalization_gap: 0.0, noise_scale: 0.0, ..GenParams::default() };
        let bench = gen_synthetic(&SpaceSpec::nas_bench_201(), 2, &p).unwrap();
        let cfg = FlatSharpConfig {
            val_dataset: SEARCH_DATASET.into(),
            eval_datasets: vec![TRANSFER_DATASET.into()],
            epoch: bench.epochs() - 1,
            top_k: 100,
            d: 1,
        };
        let r = flat_sharp_study(&bench, &cfg).unwrap();
        for g in [&r.flat, &r.sharp] {
            let base: f64 = g
                .cells
                .iter()
                .map(|c| {
                    let cell = bench.spec().parse_cell(c).unwrap();
                    let rec = bench.record(&cell).unwrap();
                    let val = *rec.val_err[SEARCH_DATASET].last().unwrap();
                    let t = rec.test_err[TRANSFER_DATASET];
                    assert!(t == val || (t - val - p.spike_height).abs() < 1e-9);
                    t
                })
                .sum::<f64>()
                / g.size as f64;
            assert!((base - g.mean_test_err[TRANSFER_DATASET]).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_criterion_top_k_is_flatter_than_baseline() {
        let bench = designed(5);
        let cfg = |criterion| TopKConfig {
            val_dataset: SEARCH_DATASET.into(),
            eval_datasets: vec![TRANSFER_DATASET.into()],
            epoch: bench.epochs() - 1,
            criterion,
            k: 100,
            d: 1,
        };
        let base = criterion_top_k(&bench, &cfg(Criterion::Baseline)).unwrap();
        let mean = criterion_top_k(&bench, &cfg(Criterion::Aggregate(AggregationKind::Mean))).unwrap();
        assert!(mean.mean_nbhd_variance <= base.mean_nbhd_variance);
        assert!(mean.scores.windows(2).all(|w| w[0] <= w[1]));
    }
}
