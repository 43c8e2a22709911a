//! Resolving flags into a full configuration and executing it.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use ekde_core::baselines::{self, BaselineScores};
use ekde_core::ekde::DEFAULT_DEGENERATE_FLOOR;
use ekde_core::kernels::select_bandwidths_on;
use ekde_core::refine::{build_adjacency, refine_scores};
use ekde_core::{
    Dataset, EkdeConfig, InstanceKey, KernelConfig, Label, ScoreTable, DEFAULT_BANDWIDTH_GRID,
};

use crate::args::{Method, MethodArgs};
use crate::schema::{AnnotateConfig, EkdeSettings, InstanceRecord, RunStats, SelectionRecord};

pub struct Annotation {
    pub records: Vec<InstanceRecord>,
    pub ekde_run: Option<RunStats>,
    pub detected_count: usize,
}

impl Annotation {
    pub fn positive_labels(&self) -> BTreeMap<InstanceKey, Label> {
        self.records
            .iter()
            .filter(|r| r.in_positive_bag)
            .map(|r| {
                (
                    InstanceKey::new(&r.bag, &r.instance),
                    label_of(r.label.unwrap_or(-1)),
                )
            })
            .collect()
    }
}

fn label_of(v: i8) -> Label {
    if v > 0 {
        Label::Positive
    } else {
        Label::Negative
    }
}

fn ekde_template(args: &MethodArgs) -> Result<EkdeConfig> {
    let mut cfg = EkdeConfig::new(KernelConfig::shared(1.0, !args.unnormalized_kernel)?);
    cfg.epsilon = args.epsilon;
    cfg.max_iter = args.max_iter;
    cfg.degenerate_floor = DEFAULT_DEGENERATE_FLOOR;
    cfg.validate()?;
    Ok(cfg)
}

/// eKDE settings with any missing bandwidth chosen on `dataset`.
pub fn resolve_ekde(dataset: &Dataset, args: &MethodArgs) -> Result<EkdeSettings> {
    let template = ekde_template(args)?;
    let grid = args
        .bandwidth_grid
        .clone()
        .unwrap_or_else(|| DEFAULT_BANDWIDTH_GRID.to_vec());
    let (sigma_pos, sigma_neg, selection) = match (args.sigma_pos, args.sigma_neg) {
        (Some(p), Some(n)) => (p, n, None),
        (p, n) => {
            let pos_grid = p.map_or_else(|| grid.clone(), |p| vec![p]);
            let neg_grid = n.map_or_else(|| grid.clone(), |n| vec![n]);
            let sel = select_bandwidths_on(
                dataset,
                &pos_grid,
                &neg_grid,
                &template,
                args.bandwidth_objective.into(),
            )?;
            let rejected = sel.evaluated.iter().filter(|e| e.score.is_none()).count();
            (
                sel.config.sigma_pos,
                sel.config.sigma_neg,
                Some(SelectionRecord {
                    objective: sel.objective,
                    pos_grid,
                    neg_grid,
                    best_score: sel.best_score,
                    rejected_pairs: rejected,
                }),
            )
        }
    };
    KernelConfig::new(sigma_pos, sigma_neg, template.kernel.normalized)?;
    Ok(EkdeSettings {
        sigma_pos,
        sigma_neg,
        normalized_kernel: template.kernel.normalized,
        epsilon: template.epsilon,
        max_iter: template.max_iter,
        degenerate_floor: template.degenerate_floor,
        selection,
    })
}

pub fn resolve(
    dataset: &Dataset,
    method: Method,
    top_k: Option<usize>,
    args: &MethodArgs,
) -> Result<AnnotateConfig> {
    let ekde = match method {
        Method::Ekde => Some(resolve_ekde(dataset, args)?),
        _ => None,
    };
    let sigma = match method {
        Method::Ekde => None,
        _ => {
            KernelConfig::shared(args.sigma, false)?;
            Some(args.sigma)
        }
    };
    let refine_alpha = if args.refine {
        if !(0.0..=1.0).contains(&args.alpha) {
            bail!(ekde_core::Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {}",
                args.alpha
            )));
        }
        Some(args.alpha)
    } else {
        None
    };
    Ok(AnnotateConfig {
        method,
        normalize_features: !args.no_normalize,
        ekde,
        sigma,
        top_k,
        refine_alpha,
    })
}

fn table_from_baseline(scores: &BaselineScores) -> Result<ScoreTable> {
    Ok(ScoreTable::from_scores(
        scores.entries.iter().map(|(k, s)| (k.clone(), true, *s)),
    )?)
}

fn refined(table: ScoreTable, dataset: &Dataset, alpha: Option<f64>) -> Result<ScoreTable> {
    match alpha {
        Some(a) => Ok(refine_scores(&table, &build_adjacency(dataset)?, a)?),
        None => Ok(table),
    }
}

/// Labels of the positive-bag entries of `table`: top-k when asked for,
/// otherwise `fallback`.
fn positive_labels(
    table: &ScoreTable,
    top_k: Option<usize>,
    fallback: impl FnOnce(&ScoreTable) -> BTreeMap<InstanceKey, Label>,
) -> Result<BTreeMap<InstanceKey, Label>> {
    match top_k {
        Some(k) => Ok(baselines::top_k_labels(
            table.positive_bag_entries().map(|e| (&e.key, e.score)),
            k,
        )?),
        None => Ok(fallback(table)),
    }
}

pub fn execute(dataset: &Dataset, config: &AnnotateConfig) -> Result<Annotation> {
    match config.method {
        Method::Ekde => execute_ekde(dataset, config),
        m => execute_baseline(dataset, config, m),
    }
}

fn execute_ekde(dataset: &Dataset, config: &AnnotateConfig) -> Result<Annotation> {
    let Some(s) = &config.ekde else {
        bail!(ekde_core::Error::InvalidArgument(
            "eKDE configuration is missing its kernel settings".into()
        ));
    };
    let mut cfg = EkdeConfig::new(KernelConfig::new(
        s.sigma_pos,
        s.sigma_neg,
        s.normalized_kernel,
    )?);
    cfg.epsilon = s.epsilon;
    cfg.max_iter = s.max_iter;
    cfg.degenerate_floor = s.degenerate_floor;
    let run = ekde_core::run_ekde(dataset, &cfg)?;
    let ranking = match config.refine_alpha {
        Some(_) => refined(run.margins.clone(), dataset, config.refine_alpha)?,
        None => run.scores.clone(),
    };
    let labels = positive_labels(&ranking, config.top_k, ScoreTable::positive_labels)?;
    let w = run.soft_labels.values();
    let records = ranking
        .entries
        .iter()
        .enumerate()
        .map(|(q, e)| InstanceRecord {
            bag: e.key.bag.clone(),
            instance: e.key.instance.clone(),
            in_positive_bag: e.in_positive_bag,
            score: e.score,
            label: labels.get(&e.key).map(|l| l.as_i8()),
            vote: Some(run.scores.entries[q].score),
            margin: Some(run.margins.entries[q].score),
            soft_label: w.get(q).copied().filter(|_| e.in_positive_bag),
        })
        .collect();
    Ok(Annotation {
        records,
        ekde_run: Some(RunStats {
            iterations: run.iterations,
            converged: run.converged,
        }),
        detected_count: labels.values().filter(|l| l.is_positive()).count(),
    })
}

fn execute_baseline(
    dataset: &Dataset,
    config: &AnnotateConfig,
    method: Method,
) -> Result<Annotation> {
    let Some(sigma) = config.sigma else {
        bail!(ekde_core::Error::InvalidArgument(format!(
            "{} configuration is missing its bandwidth",
            method.name()
        )));
    };
    let raw = match method {
        Method::Negmin => baselines::negmin_scores(dataset, sigma)?,
        Method::Crane => baselines::crane_scores(dataset, sigma)?,
        Method::Negvote => baselines::negvote_scores(dataset, sigma)?,
        Method::Ekde => unreachable!("handled by execute_ekde"),
    };
    let table = refined(table_from_baseline(&raw)?, dataset, config.refine_alpha)?;
    let labels = positive_labels(&table, config.top_k, |t| {
        baselines::per_bag_argmax(&BaselineScores {
            method: raw.method,
            entries: t.entries.iter().map(|e| (e.key.clone(), e.score)).collect(),
        })
    })?;
    let records = table
        .entries
        .iter()
        .map(|e| InstanceRecord {
            bag: e.key.bag.clone(),
            instance: e.key.instance.clone(),
            in_positive_bag: true,
            score: e.score,
            label: Some(labels[&e.key].as_i8()),
            vote: None,
            margin: None,
            soft_label: None,
        })
        .collect();
    Ok(Annotation {
        records,
        ekde_run: None,
        detected_count: labels.values().filter(|l| l.is_positive()).count(),
    })
}
