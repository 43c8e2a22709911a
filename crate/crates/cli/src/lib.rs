//! Command-line driver: `annotate`, `evaluate`, `synth` and `compare`.

pub mod args;
pub mod pipeline;
pub mod schema;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use ekde_core::eval::{average_precision, pr_curve, Media};
use ekde_core::io::{write_atomic, write_json_atomic};
use ekde_core::synth::{generate, write_files, SynthConfig};
use ekde_core::{load_dataset, Dataset, ErrorKind, InstanceKey, Label};
use serde::Serialize;

use crate::args::{AnnotateArgs, Cli, Command, CompareArgs, EvaluateArgs, Method, SynthArgs};
use crate::schema::{
    AnnotateConfig, CompareManifest, CompareReport, CompareRow, EvaluateManifest, EvaluateReport,
    Manifest, Results, TOOL, VERSION,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_DEGENERATE: i32 = 5;

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<ekde_core::Error>())
        .map(ekde_core::Error::kind);
    match kind {
        Some(ErrorKind::Parse) => EXIT_PARSE,
        Some(ErrorKind::Validation) => EXIT_VALIDATION,
        Some(ErrorKind::DegenerateClass) => EXIT_DEGENERATE,
        Some(ErrorKind::InvalidArgument) => EXIT_USAGE,
        Some(ErrorKind::Io) | None => EXIT_FAILURE,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let Cli {
        threads,
        output,
        quiet,
        command,
    } = cli;
    let ctx = Session { output, quiet };
    with_threads(threads, quiet, || match command {
        Command::Annotate(a) => annotate(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
    })
}

struct Session {
    output: Option<PathBuf>,
    quiet: bool,
}

impl Session {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn emit<T: Serialize>(&self, value: &T) -> Result<()> {
        match &self.output {
            Some(path) => Ok(write_json_atomic(path, value)?),
            None => {
                println!("{}", serde_json::to_string_pretty(value)?);
                Ok(())
            }
        }
    }
}

#[cfg(feature = "parallel")]
fn with_threads<T>(
    threads: Option<usize>,
    _quiet: bool,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T>
where
    T: Send,
{
    match threads {
        None => f(),
        Some(0) => {
            Err(ekde_core::Error::InvalidArgument("--threads must be at least 1".into()).into())
        }
        Some(n) => {
            use anyhow::Context as _;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building the thread pool")?
                .install(f)
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T>(
    threads: Option<usize>,
    quiet: bool,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    if threads == Some(0) {
        return Err(
            ekde_core::Error::InvalidArgument("--threads must be at least 1".into()).into(),
        );
    }
    if threads.is_some_and(|n| n > 1) && !quiet {
        eprintln!("warning: built without the `parallel` feature; running on one thread");
    }
    f()
}

fn annotate(ctx: &Session, args: AnnotateArgs) -> Result<()> {
    let start = Instant::now();
    let (input, config) = match &args.replay {
        Some(path) => {
            let prior = read_results(path)?;
            (prior.manifest.input, prior.manifest.config)
        }
        None => {
            let input = args.input.clone().expect("required unless replaying");
            let ds = load_dataset(&input, !args.method_args.no_normalize)?;
            let config = pipeline::resolve(&ds, args.method, args.top_k, &args.method_args)?;
            (input, config)
        }
    };
    let dataset = load_dataset(&input, config.normalize_features)?;
    let annotation = pipeline::execute(&dataset, &config)?;
    if let Some(s) = config.ekde.as_ref() {
        ctx.note(format!(
            "ekde: sigma_pos {} sigma_neg {}, {} iterations{}",
            s.sigma_pos,
            s.sigma_neg,
            annotation.ekde_run.map_or(0, |r| r.iterations),
            if annotation.ekde_run.is_some_and(|r| !r.converged) {
                " (not converged)"
            } else {
                ""
            }
        ));
    }
    ctx.note(format!(
        "{}: {} of {} positive-bag instances labeled +1",
        config.method.name(),
        annotation.detected_count,
        dataset.num_positive_instances()
    ));
    let results = Results {
        manifest: Manifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: "annotate".into(),
            input,
            output: ctx.output.clone(),
            config,
            ekde_run: annotation.ekde_run,
            duration_ms: args
                .record_timing
                .then(|| start.elapsed().as_secs_f64() * 1e3),
        },
        detected_count: annotation.detected_count,
        instances: annotation.records,
    };
    ctx.emit(&results)
}

pub fn read_results(path: &Path) -> Result<Results> {
    let text = std::fs::read_to_string(path).map_err(|source| ekde_core::Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(
        serde_json::from_str(&text).map_err(|source| ekde_core::Error::Parse {
            path: path.to_path_buf(),
            source,
        })?,
    )
}

fn threshold_for(media: Media, explicit: Option<f64>) -> f64 {
    explicit.unwrap_or(media.threshold())
}

fn evaluate(ctx: &Session, args: EvaluateArgs) -> Result<()> {
    let dataset = load_dataset(&args.input, false)?;
    let results = read_results(&args.results)?;
    let media: Media = args.media.into();
    let threshold = threshold_for(media, args.threshold);
    let labels: BTreeMap<InstanceKey, Label> = results
        .instances
        .iter()
        .filter(|r| r.in_positive_bag)
        .map(|r| {
            let l = if r.label.is_some_and(|l| l > 0) {
                Label::Positive
            } else {
                Label::Negative
            };
            (InstanceKey::new(&r.bag, &r.instance), l)
        })
        .collect();
    let report = average_precision(&labels, &dataset, threshold)?;
    if let Some(pr) = &args.pr {
        let scores: BTreeMap<InstanceKey, f64> = results
            .instances
            .iter()
            .filter(|r| r.in_positive_bag)
            .map(|r| (InstanceKey::new(&r.bag, &r.instance), r.score))
            .collect();
        write_atomic(pr, pr_curve(&scores, &dataset)?.to_csv().as_bytes())?;
    }
    ctx.note(format!(
        "{}: AP {:.4} ({} of {} bags above overlap {threshold})",
        results.manifest.config.method.name(),
        report.ap,
        report.correct_count(),
        report.per_bag.len()
    ));
    ctx.emit(&EvaluateReport {
        manifest: EvaluateManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: "evaluate".into(),
            input: args.input,
            results: args.results,
            media,
            pr: args.pr,
        },
        method: results.manifest.config.method,
        report,
    })
}

fn synth(ctx: &Session, args: SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| ekde_core::Error::Read {
        path: args.config.clone(),
        source,
    })?;
    let config: SynthConfig =
        serde_json::from_str(&text).map_err(|source| ekde_core::Error::Parse {
            path: args.config.clone(),
            source,
        })?;
    let out = args.out.or_else(|| ctx.output.clone()).ok_or_else(|| {
        ekde_core::Error::InvalidArgument("synth needs --out (or --output)".into())
    })?;
    let (dataset, truth) = generate(&config)?;
    let side = write_files(&dataset, &truth, &out)?;
    ctx.note(format!(
        "synth: {} bags, {} instances, {} witnesses -> {} (+ {})",
        dataset.positive_bags().len() + dataset.negative_bags().len(),
        dataset.num_instances(),
        truth.witnesses.len(),
        out.display(),
        side.display()
    ));
    Ok(())
}

/// Fraction of positive-bag instances whose label matches the ground
/// truth; `None` unless every such instance carries a flag.
fn accuracy(dataset: &Dataset, labels: &BTreeMap<InstanceKey, Label>) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (bag, inst) in dataset.positive_instances() {
        let gt = inst.gt?;
        let predicted = labels
            .get(&InstanceKey::new(&bag.id, &inst.id))
            .is_some_and(|l| l.is_positive());
        hits += usize::from(predicted == gt);
        total += 1;
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

fn compare(ctx: &Session, args: CompareArgs) -> Result<()> {
    let media: Media = args.media.into();
    let threshold = threshold_for(media, args.threshold);
    let dataset = load_dataset(&args.input, !args.method_args.no_normalize)?;
    let ekde_config = pipeline::resolve(&dataset, Method::Ekde, None, &args.method_args)?;
    let ekde = pipeline::execute(&dataset, &ekde_config)?;
    let k = ekde.detected_count;

    let mut rows = Vec::with_capacity(args.methods.len());
    for &method in &args.methods {
        let (annotation, top_k) = match method {
            Method::Ekde => (None, None),
            Method::Negmin => (Some(run_baseline(&dataset, method, None, &args)?), None),
            Method::Crane | Method::Negvote => (
                Some(run_baseline(&dataset, method, Some(k), &args)?),
                Some(k),
            ),
        };
        let annotation = annotation.as_ref().unwrap_or(&ekde);
        let labels = annotation.positive_labels();
        let report = average_precision(&labels, &dataset, threshold)?;
        rows.push(CompareRow {
            method,
            ap: report.ap,
            correct_bags: report.correct_count(),
            evaluated_bags: report.per_bag.len(),
            detected_count: report.detected_count,
            top_k,
            accuracy: accuracy(&dataset, &labels),
        });
    }
    if !ctx.quiet {
        eprintln!(
            "{:<8} {:>6} {:>9} {:>9}",
            "method", "AP", "detected", "accuracy"
        );
        for r in &rows {
            let acc = r.accuracy.map_or_else(|| "-".into(), |a| format!("{a:.3}"));
            eprintln!(
                "{:<8} {:>6.3} {:>9} {:>9}",
                r.method.name(),
                r.ap,
                r.detected_count,
                acc
            );
        }
    }
    ctx.emit(&CompareReport {
        manifest: CompareManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: "compare".into(),
            input: args.input.clone(),
            media,
            threshold,
            ekde: ekde_config,
            ekde_run: ekde.ekde_run,
        },
        rows,
    })
}

fn run_baseline(
    dataset: &Dataset,
    method: Method,
    top_k: Option<usize>,
    args: &CompareArgs,
) -> Result<pipeline::Annotation> {
    let config: AnnotateConfig = pipeline::resolve(dataset, method, top_k, &args.method_args)?;
    pipeline::execute(dataset, &config)
}
