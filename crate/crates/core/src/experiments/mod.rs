//! Toy-scale experiment harnesses built on the trainer.

mod mog;

use core::fmt;
use core::str::FromStr;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub use crate::metrics::wasserstein1_1d;
pub use mog::{sample_mog, Component, MoGSpec};

use crate::error::{invalid, Error, Result};
use crate::metrics::sliced_w1;
use crate::tensor::RealArray;
use crate::trainer::{train, Conditioning, Dataset, MetricsRow, RunConfig, TrainState};

/// Samples per side for the end-of-run distances.
pub const FINAL_EVAL_SAMPLES: usize = 10_000;

/// Discriminator conditioning schemes compared on the mixtures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Acgan,
    Reacgan,
    Projection,
    TwoC,
    ReacganTac,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Acgan,
        Method::Reacgan,
        Method::Projection,
        Method::TwoC,
        Method::ReacganTac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Acgan => "acgan",
            Method::Reacgan => "reacgan",
            Method::Projection => "projection",
            Method::TwoC => "two_c",
            Method::ReacganTac => "reacgan_tac",
        }
    }

    pub fn conditioning(self) -> Conditioning {
        match self {
            Method::Acgan => Conditioning::Acgan,
            Method::Reacgan | Method::ReacganTac => Conditioning::D2dce,
            Method::Projection => Conditioning::Projection,
            Method::TwoC => Conditioning::TwoC,
        }
    }

    /// Sets the conditioning fields of `config` for this method.
    pub fn apply(self, config: &mut RunConfig) {
        config.conditioning = self.conditioning();
        config.tac_enabled = self == Method::ReacganTac;
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownKind {
                what: "method",
                name: s.to_string(),
            })
    }
}

/// One training run of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct CellPlan {
    pub label: String,
    pub config: RunConfig,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub experiment: &'static str,
    pub spec: MoGSpec,
    pub cells: Vec<CellPlan>,
}

/// Result of one cell: distances of the evaluation generator and the curves
/// logged during training.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub label: String,
    pub seed: u64,
    pub marginal_w1: Option<f64>,
    pub per_class_w1: Vec<f64>,
    pub curves: Vec<MetricsRow>,
    pub diverged: Option<String>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub experiment: &'static str,
    pub spec: MoGSpec,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

impl ExperimentReport {
    /// Marginal distances of the finished cells carrying `label`, in seed order.
    pub fn marginal_w1(&self, label: &str) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.label == label)
            .filter_map(|c| c.marginal_w1)
            .collect()
    }
}

/// Median of a nonempty list; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Marginal and per-class W1 between `n` fresh real samples and generated
/// samples carrying the same labels.
pub fn final_distances(state: &TrainState, spec: &MoGSpec, n: usize) -> Result<(f64, Vec<f64>)> {
    let mut rng =
        crate::trainer::stream_rng(state.config.seed ^ 0x5eed, crate::trainer::Stream::Eval);
    let (real, y) = spec.sample(n, &mut rng)?;
    let fake = state.generate(&y, &mut rng)?;
    let marginal = sliced_w1(&real, &fake)?;
    let mut per_class = Vec::with_capacity(spec.classes());
    for k in 0..spec.classes() {
        let rows: Vec<usize> = (0..n).filter(|&i| y[i] == k).collect();
        if rows.is_empty() {
            per_class.push(0.0);
            continue;
        }
        let pick = |a: &RealArray| -> Result<RealArray> {
            let data = rows
                .iter()
                .flat_map(|&i| a.row(i).iter().copied())
                .collect();
            Ok(RealArray::matrix(rows.len(), a.cols(), data)?)
        };
        per_class.push(sliced_w1(&pick(&real)?, &pick(&fake)?)?);
    }
    Ok((marginal, per_class))
}

/// Trains one cell and measures the evaluation generator; a divergence is
/// recorded in the result instead of being returned.
pub fn run_cell(cell: &CellPlan, spec: &MoGSpec) -> Result<CellResult> {
    let outcome = train(cell.config.clone(), spec)?;
    let state = outcome.state;
    let mut result = CellResult {
        label: cell.label.clone(),
        seed: cell.config.seed,
        marginal_w1: None,
        per_class_w1: Vec::new(),
        curves: outcome.log,
        diverged: None,
        note: cell.note.clone(),
    };
    match outcome.failure {
        Some(e @ Error::Diverged { .. }) => result.diverged = Some(e.to_string()),
        Some(e) => return Err(e),
        None => match final_distances(&state, spec, FINAL_EVAL_SAMPLES) {
            Ok((m, per)) => {
                result.marginal_w1 = Some(m);
                result.per_class_w1 = per;
            }
            Err(e) => result.diverged = Some(e.to_string()),
        },
    }
    Ok(result)
}

/// Runs every cell of a plan in order.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    let cells = plan
        .cells
        .iter()
        .map(|c| run_cell(c, &plan.spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(plan, cells))
}

/// Builds the report from per-cell results given in plan order.
pub fn assemble(plan: &ExperimentPlan, cells: Vec<CellResult>) -> ExperimentReport {
    let mut seeds: Vec<u64> = plan.cells.iter().map(|c| c.config.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    ExperimentReport {
        experiment: plan.experiment,
        spec: plan.spec.clone(),
        seeds,
        cells,
    }
}

fn seeded(config: &RunConfig, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        ..config.clone()
    }
}

pub fn plan_mog(
    methods: &[Method],
    spec: &MoGSpec,
    config: &RunConfig,
    seeds: &[u64],
) -> ExperimentPlan {
    let mut cells = Vec::new();
    for &m in methods {
        for &s in seeds {
            let mut cfg = seeded(config, s);
            m.apply(&mut cfg);
            cells.push(CellPlan {
                label: m.name().to_string(),
                config: cfg,
                note: None,
            });
        }
    }
    ExperimentPlan {
        experiment: "mog",
        spec: spec.clone(),
        cells,
    }
}

pub fn run_mog_experiment(
    method: Method,
    spec: &MoGSpec,
    config: &RunConfig,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    run_plan(&plan_mog(&[method], spec, config, seeds))
}

/// Unnormalized classifier (`normalize = false`) or its unit-norm
/// counterpart on a mixture with `spec.classes()` classes.
pub fn plan_instability(
    normalize: bool,
    spec: &MoGSpec,
    config: &RunConfig,
    seeds: &[u64],
) -> Result<ExperimentPlan> {
    if spec.classes() < 10 {
        return Err(invalid(
            "classes",
            "the instability task needs at least 10 classes",
        ));
    }
    let label = if normalize {
        "normalized"
    } else {
        "unnormalized"
    };
    let cells = seeds
        .iter()
        .map(|&s| {
            let mut cfg = seeded(config, s);
            cfg.conditioning = if normalize {
                Conditioning::NormalizedCe
            } else {
                Conditioning::Acgan
            };
            cfg.tac_enabled = false;
            CellPlan {
                label: label.to_string(),
                config: cfg,
                note: None,
            }
        })
        .collect();
    Ok(ExperimentPlan {
        experiment: "instability",
        spec: spec.clone(),
        cells,
    })
}

pub fn run_instability_experiment(
    normalize: bool,
    spec: &MoGSpec,
    config: &RunConfig,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    run_plan(&plan_instability(normalize, spec, config, seeds)?)
}

/// Label used for the cell of masking probability `p`.
pub fn ablation_label(p: f64) -> String {
    format!("p={p}")
}

/// One D2D-CE run per drop probability and seed.
pub fn plan_ablation(
    p_values: &[f64],
    spec: &MoGSpec,
    config: &RunConfig,
    seeds: &[u64],
) -> Result<ExperimentPlan> {
    if p_values.is_empty() {
        return Err(Error::EmptyInput("masking probabilities"));
    }
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("mask_drop_p", "must lie in [0, 1]"));
    }
    let mut cells = Vec::new();
    for &p in p_values {
        for &s in seeds {
            let mut cfg = seeded(config, s);
            Method::Reacgan.apply(&mut cfg);
            cfg.mask_drop_p = p;
            cells.push(CellPlan {
                label: ablation_label(p),
                config: cfg,
                note: (p == 1.0).then(|| "all negatives dropped: positive term only".to_string()),
            });
        }
    }
    Ok(ExperimentPlan {
        experiment: "ablation",
        spec: spec.clone(),
        cells,
    })
}

pub fn run_masking_ablation(
    p_values: &[f64],
    spec: &MoGSpec,
    config: &RunConfig,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    run_plan(&plan_ablation(p_values, spec, config, seeds)?)
}

#[cfg(test)]
mod tests;
