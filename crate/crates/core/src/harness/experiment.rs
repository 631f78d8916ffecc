use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    attribute_query, gen_histogram, gen_queries, ExperimentConfig, Loss, Mechanism, MetricSpec, QuerySpec, Strategy,
    HISTOGRAM_LAW,
};
use crate::mech::{derive_seed, l2_error_bound, laplace_dx_with, seeded_rng, vanilla_scale, MechRng};
use crate::select::{
    altmin_preopt, closed_form_single, improvement_factor, psa, scalar_transform, strategy1, strategy2,
    PSA_DEFAULT_MAX_ITERS, PSA_ZERO_STEP,
};
use crate::synth::{mwem, smalldb, SmallDbConfig};
use crate::types::{check_feasibility, Histogram, ModelParams, PrivacyMetric, QueryMatrix, UniversePoints, DEFAULT_TOL};

const NOISE_STREAM: u64 = 0x4e;
const ALTMIN_MAX_OUTER: usize = 100;
const ALTMIN_TOL: f64 = 1e-9;

/// Monte-Carlo RMSE `sqrt(mean ‖Z − truth‖₂²)` and its delta-method standard
/// error.
pub fn estimate_rmse<F>(mut mechanism: F, truth: &[f64], trials: usize, seed: u64) -> Result<(f64, f64)>
where
    F: FnMut(&mut MechRng) -> Result<Vec<f64>>,
{
    if trials < 2 {
        return Err(Error::Invalid(format!("need at least 2 trials, got {trials}")));
    }
    let mut rng = seeded_rng(seed);
    let sq = (0..trials)
        .map(|_| mechanism(&mut rng).map(|z| Loss::L2sq.eval(&z, truth)))
        .collect::<Result<Vec<_>>>()?;
    let (rmse, se) = rmse_from_squares(&sq);
    Ok((rmse, se.unwrap_or(f64::NAN)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn rmse_from_squares(sq: &[f64]) -> (f64, Option<f64>) {
    let m = mean(sq);
    let rmse = m.sqrt();
    if sq.len() < 2 {
        return (rmse, None);
    }
    let var = sq.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (sq.len() - 1) as f64;
    let se_mean = (var / sq.len() as f64).sqrt();
    let se = if rmse > 0.0 { se_mean / (2.0 * rmse) } else { 0.0 };
    (rmse, Some(se))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: usize,
    pub k: usize,
    pub strategy: String,
    pub scales: Vec<f64>,
    pub improvement: Option<f64>,
    pub rmse: Option<f64>,
    pub stderr: Option<f64>,
    /// Mean of the configured loss over trials.
    pub mean_loss: Option<f64>,
    pub l2_bound: Option<f64>,
    pub seed: u64,
    pub feasible: bool,
    pub error: Option<String>,
}

impl QueryRecord {
    fn usable(&self) -> bool {
        self.feasible && self.error.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub queries: usize,
    pub usable: usize,
    pub infinite_improvement: usize,
    pub mean_improvement: Option<f64>,
    pub median_improvement: Option<f64>,
    pub min_improvement: Option<f64>,
    pub max_improvement: Option<f64>,
    pub mean_rmse: Option<f64>,
    /// Standard error of `mean_rmse` from the per-query standard errors.
    pub pooled_stderr: Option<f64>,
}

impl Summary {
    pub fn from_records(records: &[QueryRecord]) -> Self {
        let usable: Vec<&QueryRecord> = records.iter().filter(|r| r.usable()).collect();
        let mut ifs: Vec<f64> = usable
            .iter()
            .filter_map(|r| r.improvement)
            .filter(|v| v.is_finite())
            .collect();
        ifs.sort_by(f64::total_cmp);
        let infinite_improvement = usable
            .iter()
            .filter(|r| r.improvement.is_some_and(f64::is_infinite))
            .count();
        let rmses: Vec<f64> = usable.iter().filter_map(|r| r.rmse).collect();
        let ses: Vec<f64> = usable.iter().filter_map(|r| r.stderr).collect();
        let nonempty = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
        Self {
            queries: records.len(),
            usable: usable.len(),
            infinite_improvement,
            mean_improvement: nonempty(&ifs),
            median_improvement: (!ifs.is_empty()).then(|| {
                let h = ifs.len() / 2;
                if ifs.len() % 2 == 1 {
                    ifs[h]
                } else {
                    0.5 * (ifs[h - 1] + ifs[h])
                }
            }),
            min_improvement: ifs.first().copied(),
            max_improvement: ifs.last().copied(),
            mean_rmse: nonempty(&rmses),
            pooled_stderr: (!ses.is_empty() && ses.len() == rmses.len())
                .then(|| ses.iter().map(|s| s * s).sum::<f64>().sqrt() / ses.len() as f64),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub metric: String,
    pub histogram_law: String,
    pub records: Vec<QueryRecord>,
    pub summary: Summary,
    /// Wall time; kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub elapsed: Duration,
}

impl RunReport {
    pub fn all_infeasible(&self) -> bool {
        !self.records.is_empty() && self.summary.usable == 0
    }
}

/// Parameters and answer function for one query under one mechanism.
enum Prepared {
    Laplace(ModelParams),
    SmallDb { params: ModelParams, cfg: SmallDbConfig },
    Mwem { params: ModelParams, rounds: usize },
}

impl Prepared {
    fn params(&self) -> &ModelParams {
        match self {
            Prepared::Laplace(p) | Prepared::SmallDb { params: p, .. } | Prepared::Mwem { params: p, .. } => p,
        }
    }

    fn sample(&self, x: &Histogram, rng: &mut MechRng) -> Result<Vec<f64>> {
        match self {
            Prepared::Laplace(p) => laplace_dx_with(x, p, rng),
            Prepared::SmallDb { params, cfg } => {
                let qp = params.transformed();
                let m = cfg.database_size(qp.num_queries());
                let y = smalldb(x, qp, cfg, rng)?;
                let rescale = x.total() as f64 / m as f64;
                Ok(params.effective().answer(&y)?.iter().map(|v| v * rescale).collect())
            }
            Prepared::Mwem { params, rounds } => {
                let out = mwem(x, params.transformed(), params.scales()[0], *rounds, rng)?;
                params.effective().apply(&out.synthetic)
            }
        }
    }
}

fn prepare(mech: &Mechanism, q: &QueryMatrix, m: &PrivacyMetric, records: u64) -> Result<Prepared> {
    let k = q.num_queries();
    Ok(match *mech {
        Mechanism::Vanilla => {
            let eps = m
                .min_finite_off_diagonal()
                .ok_or_else(|| Error::Invalid("metric has no finite budget for the vanilla baseline".into()))?;
            Prepared::Laplace(ModelParams::from_scales(q, vec![vanilla_scale(q, eps)?; k])?)
        }
        Mechanism::DxLaplace { strategy } => Prepared::Laplace(match strategy {
            Strategy::ClosedForm if k == 1 => closed_form_single(q.row(0), m)?,
            Strategy::ClosedForm => {
                return Err(Error::Invalid(format!("closed-form parameters need K = 1, got K = {k}")))
            }
            Strategy::Strategy1 => strategy1(q, m)?,
            Strategy::Strategy2 => strategy2(q, m)?,
            Strategy::Psa => psa(m, q, PSA_DEFAULT_MAX_ITERS, PSA_ZERO_STEP)?.params,
            Strategy::Altmin => altmin_preopt(q, m, records, ALTMIN_MAX_OUTER, ALTMIN_TOL)?.params,
        }),
        Mechanism::Smalldb { .. } | Mechanism::Mwem { .. } => {
            let st = scalar_transform(q, m)?;
            if st.scale <= 0.0 {
                return Err(Error::Invalid("synthetic-data mechanisms need a positive scale".into()));
            }
            let params = ModelParams::new(vec![st.scale; k], st.transformed)?;
            match *mech {
                Mechanism::Smalldb { alpha } => Prepared::SmallDb {
                    cfg: SmallDbConfig::new(alpha, st.scale),
                    params,
                },
                Mechanism::Mwem { rounds } => Prepared::Mwem { params, rounds },
                _ => unreachable!(),
            }
        }
    })
}

/// Synthetic-data mechanisms answer every query from one release, so each
/// transformed query only needs to meet the pair budgets on its own.
fn feasible(prepared: &Prepared, m: &PrivacyMetric) -> Result<bool> {
    let p = prepared.params();
    match prepared {
        Prepared::Laplace(_) => Ok(check_feasibility(p, m, DEFAULT_TOL)?.feasible),
        _ => {
            for row in p.transformed().rows() {
                let single = ModelParams::new(vec![p.scales()[0]], QueryMatrix::single(row)?)?;
                if !check_feasibility(&single, m, DEFAULT_TOL)?.feasible {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    metric: &'a PrivacyMetric,
    x: &'a Histogram,
    noise_root: u64,
}

fn evaluate(ctx: &Context, query_id: usize, q: &QueryMatrix) -> QueryRecord {
    let seed = derive_seed(ctx.noise_root, query_id as u64);
    let mut rec = QueryRecord {
        query_id,
        k: q.num_queries(),
        strategy: ctx.cfg.mechanism.name(),
        scales: Vec::new(),
        improvement: None,
        rmse: None,
        stderr: None,
        mean_loss: None,
        l2_bound: None,
        seed,
        feasible: false,
        error: None,
    };
    if let Err(e) = fill(ctx, q, &mut rec) {
        rec.error = Some(e.to_string());
    }
    rec
}

fn fill(ctx: &Context, q: &QueryMatrix, rec: &mut QueryRecord) -> Result<()> {
    let prepared = prepare(&ctx.cfg.mechanism, q, ctx.metric, ctx.cfg.records)?;
    let params = prepared.params();
    rec.scales = params.scales().to_vec();
    rec.feasible = feasible(&prepared, ctx.metric)?;
    if !rec.feasible {
        return Ok(());
    }
    rec.improvement = Some(improvement_factor(params, q, ctx.metric)?);
    if let Prepared::Laplace(p) = &prepared {
        rec.l2_bound = Some(l2_error_bound(p, q, ctx.x.total() as f64));
    }

    let truth = q.answer(ctx.x)?;
    let mut rng = seeded_rng(rec.seed);
    let mut sq = Vec::with_capacity(ctx.cfg.trials);
    let mut loss = 0.0;
    for _ in 0..ctx.cfg.trials {
        let z = prepared.sample(ctx.x, &mut rng)?;
        sq.push(Loss::L2sq.eval(&z, &truth));
        loss += ctx.cfg.loss.eval(&z, &truth);
    }
    let (rmse, se) = rmse_from_squares(&sq);
    rec.rmse = Some(rmse);
    rec.stderr = se;
    rec.mean_loss = Some(loss / ctx.cfg.trials as f64);
    Ok(())
}

/// Runs every query against a fixed universe and metric. Queries are evaluated
/// in parallel; records come back in query order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    points: &UniversePoints,
    metric: &PrivacyMetric,
    queries: &[QueryMatrix],
) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let n = points.len();
    if metric.size() != n {
        return Err(Error::Dimension {
            what: "metric size",
            expected: n,
            got: metric.size(),
        });
    }
    for q in queries {
        q.check_universe(n)?;
    }
    let x = gen_histogram(n, cfg.records, cfg.seed)?;
    let ctx = Context {
        cfg,
        metric,
        x: &x,
        noise_root: derive_seed(cfg.seed, NOISE_STREAM),
    };
    let records: Vec<QueryRecord> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| evaluate(&ctx, i, q))
        .collect();
    for r in records.iter().filter(|r| !r.usable()) {
        match &r.error {
            Some(e) => warn!("query {}: {e}", r.query_id),
            None => warn!("query {}: parameters failed the feasibility check", r.query_id),
        }
    }
    let summary = Summary::from_records(&records);
    let elapsed = start.elapsed();
    info!(
        "{} queries, {} usable, {:.2?}",
        summary.queries, summary.usable, elapsed
    );
    Ok(RunReport {
        config: cfg.clone(),
        metric: cfg.metric.label(),
        histogram_law: HISTOGRAM_LAW.into(),
        records,
        summary,
        elapsed,
    })
}

fn build_queries(cfg: &ExperimentConfig, points: &UniversePoints) -> Result<Vec<QueryMatrix>> {
    match &cfg.queries {
        QuerySpec::Random { count, k, law } => gen_queries(*count, *k, points.len(), *law, cfg.seed),
        QuerySpec::Attribute { name } => Ok(vec![attribute_query(points, name)?]),
    }
}

/// Builds universe, metric and queries from the config and runs them.
pub fn run_single_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let points = cfg.load_universe()?;
    let metric = cfg.metric.build(&points)?;
    let queries = build_queries(cfg, &points)?;
    run_experiment(cfg, &points, &metric, &queries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub metric: MetricSpec,
    pub summary: Summary,
    /// Finite improvement factors of the usable queries, in query order.
    pub improvements: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, metric: MetricSpec) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.metric == metric)
    }
}

/// Threshold and smooth-threshold metrics over the Euclidean base for every
/// `(T, ε)` pair. The same universe, histogram, queries and per-query noise
/// seeds are shared by all cells.
pub fn run_blowfish_sweep(cfg: &ExperimentConfig, thresholds: &[f64], eps_list: &[f64]) -> Result<SweepReport> {
    cfg.validate()?;
    if cfg.metric != MetricSpec::Euclidean {
        return Err(Error::Invalid("threshold sweeps need the euclidean base metric".into()));
    }
    let points = cfg.load_universe()?;
    let queries = build_queries(cfg, &points)?;
    let mut cells = Vec::new();
    for &eps in eps_list {
        for &threshold in thresholds {
            for spec in [MetricSpec::Blowfish { threshold, eps }, MetricSpec::Smooth { threshold, eps }] {
                let metric = spec.build(&points)?;
                let mut cell_cfg = cfg.clone();
                cell_cfg.metric = spec;
                let report = run_experiment(&cell_cfg, &points, &metric, &queries)?;
                let improvements = report
                    .records
                    .iter()
                    .filter(|r| r.usable())
                    .filter_map(|r| r.improvement)
                    .filter(|v| v.is_finite())
                    .collect();
                cells.push(SweepCell {
                    metric: spec,
                    summary: report.summary,
                    improvements,
                });
            }
        }
    }
    Ok(SweepReport {
        config: cfg.clone(),
        cells,
    })
}
