//! One line per acceptance criterion; exits non-zero if any fails.

#[path = "../../../core/tests/common/mod.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use clap::Parser;
use ekde_cli::args::{Cli, Command as Sub, MethodArgs};
use ekde_cli::pipeline;
use ekde_core::baselines::{crane_scores, negmin_score, negmin_select};
use ekde_core::ekde::{
    class_conditionals, class_priors, update_soft_labels, voting_score, weighted_vote,
    DEFAULT_DEGENERATE_FLOOR,
};
use ekde_core::eval::{average_precision, pr_curve, IMAGE_THRESHOLD};
use ekde_core::synth::{generate, write_files, GroundTruth, SynthConfig};
use ekde_core::{
    load_dataset, run_ekde, Bag, Dataset, EkdeConfig, Instance, KernelConfig, Label, SoftLabels,
};
use oracle::Toy;
use rand::Rng;

const IDENTITY_REL_TOL: f64 = 1e-10;
const IDENTITY_CASES: usize = 100;
const IDENTITY_BUDGET: Duration = Duration::from_secs(5);
const KDE_TOL: f64 = 1e-12;
const KDE_CASES: usize = 50;
const NEGMIN_CASES: usize = 300;
const CRANE_CASES: usize = 100;
const EPSILON: f64 = 1e-6;
const MAX_ITER: usize = 100;
const PRIOR_TOL: f64 = 1e-12;
const BENCHMARK_SEED: u64 = 1;
const MIN_ACCURACY: f64 = 0.95;
const MIN_AP: f64 = 0.9;
const BENCHMARK_BUDGET: Duration = Duration::from_secs(10);
const REFINE_ALPHA: f64 = 0.5;
const REFINE_SLACK: f64 = 0.05;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

/// Prior-normalization and soft-label range checks made along the way.
#[derive(Default)]
struct Inline {
    checks: usize,
    failures: Vec<String>,
}

impl Inline {
    fn soft_labels(&mut self, where_: &str, ds: &Dataset, w: &SoftLabels) {
        self.checks += 1;
        let p = class_priors(ds, w);
        if (p.p1 + p.pm1 - 1.0).abs() > PRIOR_TOL {
            self.failures
                .push(format!("{where_}: p1 + pm1 = {}", p.p1 + p.pm1));
        }
        if let Some(v) = w.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            self.failures.push(format!("{where_}: soft label {v}"));
        }
    }

    fn range(&mut self, where_: &str, lo: f64, hi: f64) {
        self.checks += 1;
        if lo < 0.0 || hi > 1.0 {
            self.failures
                .push(format!("{where_}: soft labels span [{lo}, {hi}]"));
        }
    }

    /// Also checks one update from `w`, so every test exercises the update.
    fn after_update(&mut self, where_: &str, ds: &Dataset, w: &SoftLabels, kc: &KernelConfig) {
        self.soft_labels(where_, ds, w);
        if let Ok(next) = update_soft_labels(ds, w, kc, DEFAULT_DEGENERATE_FLOOR) {
            self.soft_labels(where_, ds, &next);
        }
    }
}

fn equivalence_identity(inline: &mut Inline) -> Outcome {
    let start = Instant::now();
    let mut r = oracle::rng(101);
    let mut worst: f64 = 0.0;
    let mut queries = 0;
    for case in 0..IDENTITY_CASES {
        let toy = Toy::random(&mut r, 3, 2, 6, 4);
        let ds = toy.dataset();
        let w = toy.random_w(&mut r);
        let sl = SoftLabels::from_values(&ds, w.clone()).map_err(|e| e.to_string())?;
        let sigma = r.random_range(0.25..4.0);
        let kc = KernelConfig::shared(sigma, true).map_err(|e| e.to_string())?;
        inline.after_update("identity", &ds, &sl, &kc);
        for x in toy.positives().into_iter().chain(toy.negatives()) {
            let direct = oracle::direct_vote(x, &toy, &w, sigma, true);
            let lib = voting_score(x, &ds, &sl, &kc, DEFAULT_DEGENERATE_FLOOR)
                .map_err(|e| e.to_string())?;
            let oracle_diff = oracle::posterior_difference(x, &toy, &w, sigma, sigma);
            let lib_vote = weighted_vote(x, &ds, &sl, sigma, true).map_err(|e| e.to_string())?;
            let err = oracle::rel_err(direct, lib).max(oracle::rel_err(oracle_diff, lib_vote));
            ensure!(
                err <= IDENTITY_REL_TOL,
                "case {case}: relative error {err:e} (vote {direct}, scaled posterior {lib})"
            );
            worst = worst.max(err);
            queries += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(
        elapsed < IDENTITY_BUDGET,
        "took {elapsed:?}, budget {IDENTITY_BUDGET:?}"
    );
    Ok(format!(
        "{IDENTITY_CASES} datasets, {queries} queries, max rel err {worst:.1e} <= {IDENTITY_REL_TOL:e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn kde_reduction(inline: &mut Inline) -> Outcome {
    let mut r = oracle::rng(102);
    let mut worst: f64 = 0.0;
    for case in 0..KDE_CASES {
        let toy = Toy::random(&mut r, 3, 3, 5, 4);
        let ds = toy.dataset();
        let ones = SoftLabels::ones(&ds);
        let (sp, sn) = (r.random_range(0.25..4.0), r.random_range(0.25..4.0));
        let kc = KernelConfig::new(sp, sn, true).map_err(|e| e.to_string())?;
        inline.after_update("kde", &ds, &ones, &kc);
        let x: Vec<f64> = (0..toy.dimension)
            .map(|_| r.random_range(-2.0..2.0))
            .collect();
        let d = class_conditionals(&x, &ds, &ones, &kc, DEFAULT_DEGENERATE_FLOOR)
            .map_err(|e| e.to_string())?;
        let want_pos = oracle::plain_kde(&x, &toy.positives(), sp, true);
        let want_neg = oracle::plain_kde(&x, &toy.negatives(), sn, true);
        let err = oracle::rel_err(d.p_pos, want_pos).max(oracle::rel_err(d.p_neg, want_neg));
        ensure!(err <= KDE_TOL, "case {case}: relative error {err:e}");
        worst = worst.max(err);
    }
    Ok(format!(
        "{KDE_CASES} cases, max rel err {worst:.1e} <= {KDE_TOL:e}"
    ))
}

fn negmin_oracle(inline: &mut Inline) -> Outcome {
    let mut r = oracle::rng(103);
    let mut selections = 0;
    let mut worst: f64 = 0.0;
    for case in 0..NEGMIN_CASES {
        let toy = Toy::random(&mut r, 2, 4, 4, 3);
        let ds = toy.dataset();
        let sigma = r.random_range(0.25..4.0);
        let w = SoftLabels::from_values(&ds, toy.random_w(&mut r)).map_err(|e| e.to_string())?;
        let kc = KernelConfig::shared(sigma, true).map_err(|e| e.to_string())?;
        inline.after_update("negmin", &ds, &w, &kc);
        for (b, bag) in ds.positive_bags().iter().enumerate() {
            let brute: Vec<f64> = toy.pos[b]
                .iter()
                .map(|x| oracle::negmin_brute_force(x, &toy.neg, sigma))
                .collect();
            for (x, want) in toy.pos[b].iter().zip(&brute) {
                let got = negmin_score(x, &ds, sigma).map_err(|e| e.to_string())?;
                worst = worst.max((got - want).abs());
            }
            let mut best = 0;
            for (j, s) in brute.iter().enumerate() {
                if *s > brute[best] {
                    best = j;
                }
            }
            let got = negmin_select(bag, &ds, sigma).map_err(|e| e.to_string())?;
            ensure!(
                got == bag.instances[best].id,
                "case {case}: selected {got}, enumeration picks {}",
                bag.instances[best].id
            );
            selections += 1;
        }
    }
    ensure!(
        worst <= 1e-12,
        "score differs from enumeration by {worst:e}"
    );
    Ok(format!(
        "{NEGMIN_CASES} datasets, {selections} selections identical, max score diff {worst:.1e}"
    ))
}

fn crane_conservation(inline: &mut Inline) -> Outcome {
    let mut r = oracle::rng(104);
    let mut untied = 0;
    for case in 0..CRANE_CASES {
        let toy = Toy::random(&mut r, 2, 4, 5, 3);
        let ds = toy.dataset();
        let sigma = r.random_range(0.25..4.0);
        let w = SoftLabels::from_values(&ds, toy.random_w(&mut r)).map_err(|e| e.to_string())?;
        let kc = KernelConfig::shared(sigma, true).map_err(|e| e.to_string())?;
        inline.after_update("crane", &ds, &w, &kc);
        let (want, any_tie) = oracle::crane_oracle(&toy, sigma);
        let got: Vec<f64> = crane_scores(&ds, sigma)
            .map_err(|e| e.to_string())?
            .entries
            .iter()
            .map(|(_, s)| *s)
            .collect();
        ensure!(got == want, "case {case}: {got:?} vs oracle {want:?}");
        if !any_tie {
            let mass: f64 = got.iter().map(|s| -s).sum();
            ensure!(
                mass == toy.negatives().len() as f64,
                "case {case}: penalty mass {mass} for {} negatives",
                toy.negatives().len()
            );
            untied += 1;
        }
    }
    // one negative exactly between two positives
    let ds = Dataset::new(
        1,
        vec![
            Bag::new(
                "p",
                Label::Positive,
                vec![
                    Instance::new("a", vec![-1.0]),
                    Instance::new("b", vec![1.0]),
                    Instance::new("c", vec![4.0]),
                ],
            ),
            Bag::new("n", Label::Negative, vec![Instance::new("z", vec![0.0])]),
        ],
    )
    .map_err(|e| e.to_string())?;
    let tied: Vec<f64> = crane_scores(&ds, 1.0)
        .map_err(|e| e.to_string())?
        .entries
        .iter()
        .map(|(_, s)| *s)
        .collect();
    ensure!(tied == [-1.0, -1.0, 0.0], "tie case gave {tied:?}");
    Ok(format!(
        "{untied} tie-free datasets conserve mass exactly, both tied neighbours penalized"
    ))
}

fn benchmark_dataset(dir: &Path) -> Result<(std::path::PathBuf, GroundTruth), String> {
    let (ds, truth) =
        generate(&SynthConfig::benchmark(BENCHMARK_SEED)).map_err(|e| e.to_string())?;
    let path = dir.join("benchmark.json");
    write_files(&ds, &truth, &path).map_err(|e| e.to_string())?;
    Ok((path, truth))
}

fn method_args(input: &Path, extra: &[&str]) -> Result<MethodArgs, String> {
    let mut argv = vec!["ekde", "annotate", "--input", input.to_str().unwrap()];
    argv.extend_from_slice(extra);
    match Cli::try_parse_from(argv)
        .map_err(|e| e.to_string())?
        .command
    {
        Sub::Annotate(a) => Ok(a.method_args),
        _ => unreachable!(),
    }
}

fn fixed_point(dir: &Path, inline: &mut Inline) -> Outcome {
    let (path, _) = benchmark_dataset(dir)?;
    let ds = load_dataset(&path, true).map_err(|e| e.to_string())?;
    let settings =
        pipeline::resolve_ekde(&ds, &method_args(&path, &[])?).map_err(|e| format!("{e:#}"))?;
    let mut cfg = EkdeConfig::new(
        KernelConfig::new(settings.sigma_pos, settings.sigma_neg, true)
            .map_err(|e| e.to_string())?,
    );
    cfg.epsilon = EPSILON;
    cfg.max_iter = MAX_ITER;
    let run = run_ekde(&ds, &cfg).map_err(|e| e.to_string())?;
    for h in &run.history {
        inline.range("fixed point", h.min_w, h.max_w);
    }
    inline.soft_labels("fixed point", &ds, &run.soft_labels);
    let last = run.history.last().ok_or("no iterations recorded")?;
    ensure!(
        run.converged && run.iterations <= MAX_ITER && last.max_delta < EPSILON,
        "converged {} after {} iterations, last max |dw| {:e}",
        run.converged,
        run.iterations,
        last.max_delta
    );
    let lo = run
        .history
        .iter()
        .map(|h| h.min_w)
        .fold(f64::INFINITY, f64::min);
    let hi = run
        .history
        .iter()
        .map(|h| h.max_w)
        .fold(f64::NEG_INFINITY, f64::max);
    ensure!(
        lo >= 0.0 && hi <= 1.0,
        "soft labels left [0, 1]: [{lo}, {hi}]"
    );
    Ok(format!(
        "converged in {} iterations (sigma {} / {}), last max |dw| {:.1e} < {EPSILON:e}, w within [{lo:.2e}, {hi}]",
        run.iterations, settings.sigma_pos, settings.sigma_neg, last.max_delta
    ))
}

fn prior_invariants(inline: &Inline) -> Outcome {
    ensure!(
        inline.failures.is_empty(),
        "{} of {} checks failed; first: {}",
        inline.failures.len(),
        inline.checks,
        inline.failures[0]
    );
    ensure!(inline.checks > 0, "no in-line checks ran");
    Ok(format!(
        "{} in-line checks over criteria 1-5, |p1 + pm1 - 1| <= {PRIOR_TOL:e}, w in [0, 1]",
        inline.checks
    ))
}

fn benchmark(dir: &Path) -> Outcome {
    let start = Instant::now();
    let (path, truth) = benchmark_dataset(dir)?;
    let ds = load_dataset(&path, true).map_err(|e| e.to_string())?;
    let raw = load_dataset(&path, false).map_err(|e| e.to_string())?;
    let args = method_args(&path, &[])?;
    let run = |method, top_k| -> Result<pipeline::Annotation, String> {
        let cfg = pipeline::resolve(&ds, method, top_k, &args).map_err(|e| format!("{e:#}"))?;
        pipeline::execute(&ds, &cfg).map_err(|e| format!("{e:#}"))
    };
    let ekde = run(ekde_cli::args::Method::Ekde, None)?;
    let labels = ekde.positive_labels();
    let accuracy = truth.accuracy(&raw, &labels);
    let ap = average_precision(&labels, &raw, IMAGE_THRESHOLD)
        .map_err(|e| e.to_string())?
        .ap;
    let k = ekde.detected_count;
    let crane = run(ekde_cli::args::Method::Crane, Some(k))?;
    let crane_ap = average_precision(&crane.positive_labels(), &raw, IMAGE_THRESHOLD)
        .map_err(|e| e.to_string())?
        .ap;
    let elapsed = start.elapsed();
    let detail = format!(
        "seed {BENCHMARK_SEED}: accuracy {accuracy:.3}, AP {ap:.3}, CRANE AP {crane_ap:.3} at k = {k}, {:.2}s",
        elapsed.as_secs_f64()
    );
    ensure!(
        accuracy >= MIN_ACCURACY,
        "{detail}; accuracy below {MIN_ACCURACY}"
    );
    ensure!(ap >= MIN_AP, "{detail}; AP below {MIN_AP}");
    ensure!(crane_ap < ap, "{detail}; CRANE not strictly lower");
    ensure!(
        crane.detected_count == k,
        "{detail}; CRANE detected {}",
        crane.detected_count
    );
    ensure!(
        elapsed < BENCHMARK_BUDGET,
        "{detail}; budget {BENCHMARK_BUDGET:?}"
    );
    Ok(detail)
}

fn refinement(dir: &Path) -> Outcome {
    let (path, _) = benchmark_dataset(dir)?;
    let ds = load_dataset(&path, true).map_err(|e| e.to_string())?;
    let raw = load_dataset(&path, false).map_err(|e| e.to_string())?;
    let ap_with = |extra: &[&str]| -> Result<(f64, usize), String> {
        let args = method_args(&path, extra)?;
        let cfg = pipeline::resolve(&ds, ekde_cli::args::Method::Ekde, None, &args)
            .map_err(|e| format!("{e:#}"))?;
        let a = pipeline::execute(&ds, &cfg).map_err(|e| format!("{e:#}"))?;
        let ap = average_precision(&a.positive_labels(), &raw, IMAGE_THRESHOLD)
            .map_err(|e| e.to_string())?
            .ap;
        Ok((ap, a.detected_count))
    };
    let (plain, k_plain) = ap_with(&[])?;
    let alpha = REFINE_ALPHA.to_string();
    let (refined, k_refined) = ap_with(&["--refine", "--alpha", &alpha])?;
    let detail = format!(
        "unrefined AP {plain:.3} ({k_plain} detected), refined AP {refined:.3} ({k_refined} detected), alpha {REFINE_ALPHA}"
    );
    ensure!(refined >= plain - REFINE_SLACK, "{detail}");
    Ok(detail)
}

fn determinism(dir: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_ekde");
    let cfg = dir.join("synth.json");
    std::fs::write(
        &cfg,
        serde_json::to_string(&SynthConfig::benchmark(BENCHMARK_SEED)).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let data = dir.join("det.json");
    let results = dir.join("det.results.json");
    let sh = |args: &[&str]| -> Result<(), String> {
        let o = Command::new(bin)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            o.status.success(),
            "`ekde {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&o.stderr)
        );
        Ok(())
    };
    let p = |q: &Path| q.to_str().unwrap().to_owned();
    sh(&["synth", "-q", "--config", &p(&cfg), "--out", &p(&data)])?;
    let mut files = Vec::new();
    for threads in ["1", "8"] {
        sh(&[
            "annotate",
            "-q",
            "--threads",
            threads,
            "--input",
            &p(&data),
            "-o",
            &p(&results),
        ])?;
        files.push(std::fs::read(&results).map_err(|e| e.to_string())?);
    }
    ensure!(
        files[0] == files[1],
        "results differ between 1 and 8 threads"
    );
    Ok(format!(
        "--threads 1 and --threads 8 wrote identical {}-byte results",
        files[0].len()
    ))
}

fn evaluation_oracle() -> Outcome {
    let ds = oracle::eval_fixture();
    let labels = oracle::eval_fixture_labels();
    let report = average_precision(&labels, &ds, IMAGE_THRESHOLD).map_err(|e| e.to_string())?;
    let overlaps: Vec<f64> = report.per_bag.iter().map(|b| b.overlap).collect();
    ensure!(overlaps == [0.375, 1.0, 0.0], "overlaps {overlaps:?}");
    ensure!(report.ap == 1.0 / 3.0, "AP {}", report.ap);
    for thr in [0.125, 0.3, 0.375, 0.5, 1.0] {
        let ap = average_precision(&labels, &ds, thr)
            .map_err(|e| e.to_string())?
            .ap;
        let want = oracle::ap_recount(&ds, &labels, thr);
        ensure!(ap == want, "AP at {thr}: {ap} vs recount {want}");
    }
    let scores = oracle::eval_fixture_scores();
    let curve = pr_curve(&scores, &ds).map_err(|e| e.to_string())?;
    let got: Vec<(f64, f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.threshold, p.precision, p.recall))
        .collect();
    ensure!(
        got == oracle::EVAL_FIXTURE_PR,
        "PR {got:?} vs hand values {:?}",
        oracle::EVAL_FIXTURE_PR
    );
    ensure!(
        got == oracle::pr_brute_force(&ds, &scores),
        "PR disagrees with the brute-force sweep"
    );
    Ok(format!(
        "overlaps [0.375, 1, 0], AP 1/3, {} PR points match hand values",
        got.len()
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut inline = Inline::default();
    let mut outcomes: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        outcomes.push((name, outcome));
    };
    record("1 equivalence identity", &mut || {
        equivalence_identity(&mut inline)
    });
    record("2 KDE reduction", &mut || kde_reduction(&mut inline));
    record("3 NegMin enumeration", &mut || negmin_oracle(&mut inline));
    record("4 CRANE vote conservation", &mut || {
        crane_conservation(&mut inline)
    });
    record("5 fixed-point behaviour", &mut || {
        fixed_point(dir.path(), &mut inline)
    });
    record("6 prior and range invariants", &mut || {
        prior_invariants(&inline)
    });
    record("7 synthetic benchmark", &mut || benchmark(dir.path()));
    record("8 refinement sanity", &mut || refinement(dir.path()));
    record("9 thread determinism", &mut || determinism(dir.path()));
    record("10 evaluation oracle", &mut evaluation_oracle);

    let mut failed = 0;
    for (name, outcome) in &outcomes {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        outcomes.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
