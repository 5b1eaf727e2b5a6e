//! Command-line entry point: batch subcommands over the library.
//!
//! `train`, `evaluate`, `ablate`, `gradcheck`, `synth`, and `inject`, each
//! driven by the plain-text config plus `--set` dot-path overrides. Run
//! artifacts land under `--out` (or the config's `out`, or `GLAFF_OUT_DIR`).

use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DataSource, RunConfig};
use crate::data::{inject_anomalies, load_csv, synth_generate, to_csv_string, TestRegion};
use crate::error::{Error, Result};
use crate::harness::{
    self, ablate, curve_csv, evaluate_checkpoint, report_records, train, SplitSel, TrainReport,
};
use crate::ioutil::write_atomic_str;

const USAGE: &str = "usage: glaff <subcommand> [flags]

subcommands:
  train      --config FILE [--data CSV] [--set key=value ...] [--out DIR]
  evaluate   --checkpoint FILE [--config FILE] [--data CSV] [--split train|val|test]
             [--set key=value ...]
  ablate     --variants full,no_quantile,... [--config FILE] [--anomalies SPECS]
             [--set key=value ...] [--out DIR]
  gradcheck  [--seed N]
  synth      [--n N] [--channels C] [--seed S] [--set synth.key=value ...] --out DIR
  inject     --data CSV --anomalies SPECS [--set key=value ...] --out DIR

flags may appear in any order; --set applies file < --data < --set < --out.
anomaly SPECS: kind:rate:magnitude[:seed][,more] with kind point|contextual.";

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: usage: {msg}");
            eprintln!("{USAGE}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {}: {e}", e.category());
            1
        }
        Err(CliError::Gradcheck(failures)) => {
            eprintln!("error: gradcheck: max relative error >= 1e-4 in: {failures}");
            1
        }
    }
}

enum CliError {
    Usage(String),
    Run(Error),
    Gradcheck(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult = std::result::Result<(), CliError>;

#[derive(Default)]
struct Flags {
    config: Option<String>,
    data: Option<String>,
    out: Option<String>,
    checkpoint: Option<String>,
    split: Option<String>,
    variants: Option<String>,
    anomalies: Option<String>,
    n: Option<String>,
    channels: Option<String>,
    seed: Option<String>,
    sets: Vec<(String, String)>,
}

fn parse_flags(args: &[String], allowed: &[&str]) -> std::result::Result<Flags, CliError> {
    let mut flags = Flags::default();
    let mut i = 0;
    let take_value = |args: &[String], i: &mut usize, name: &str| {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{name} needs a value")))
    };
    while i < args.len() {
        let a = args[i].as_str();
        if !a.starts_with("--") {
            return Err(CliError::Usage(format!("unexpected argument '{a}'")));
        }
        let name = &a[2..];
        if !allowed.contains(&name) {
            return Err(CliError::Usage(format!("unknown flag '--{name}'")));
        }
        let value = take_value(args, &mut i, a)?;
        match name {
            "config" => flags.config = Some(value),
            "data" => flags.data = Some(value),
            "out" => flags.out = Some(value),
            "checkpoint" => flags.checkpoint = Some(value),
            "split" => flags.split = Some(value),
            "variants" => flags.variants = Some(value),
            "anomalies" => flags.anomalies = Some(value),
            "n" => flags.n = Some(value),
            "channels" => flags.channels = Some(value),
            "seed" => flags.seed = Some(value),
            "set" => {
                let (k, v) = value.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("--set expects key=value, got '{value}'"))
                })?;
                flags.sets.push((k.trim().to_string(), v.trim().to_string()));
            }
            _ => unreachable!(),
        }
        i += 1;
    }
    Ok(flags)
}

/// Assemble the effective config: file, then --data sugar, then --set pairs
/// in order, then --out.
fn build_config(flags: &Flags) -> std::result::Result<RunConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(Path::new(path))?,
        None => RunConfig::default(),
    };
    if let Some(data) = &flags.data {
        cfg.set("data.source", "csv")?;
        cfg.set("data.csv_path", data)?;
    }
    for (k, v) in &flags.sets {
        cfg.set(k, v)
            .map_err(|e| CliError::Usage(format!("--set {k}: {e}")))?;
    }
    if let Some(out) = &flags.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run_dir(cfg: &RunConfig, leaf: &str) -> PathBuf {
    cfg.out_dir().join(leaf)
}

fn write_run_artifacts(
    dir: &Path,
    cfg: &RunConfig,
    reports: &[TrainReport],
) -> Result<()> {
    let mut metrics = String::new();
    let mut timing = String::from("run_id,variant,seed,seconds\n");
    for r in reports {
        for rec in report_records(r) {
            metrics.push_str(&rec.to_json_line());
            metrics.push('\n');
        }
        timing.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.run_id, r.variant, r.seed, r.seconds
        ));
    }
    write_atomic_str(&dir.join("metrics.jsonl"), &metrics)?;
    write_atomic_str(&dir.join("timing.csv"), &timing)?;
    if reports.len() == 1 {
        write_atomic_str(&dir.join("curve.csv"), &curve_csv(&reports[0]))?;
    }
    let _ = cfg;
    Ok(())
}

fn cmd_train(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["config", "data", "out", "set"])?;
    let cfg = build_config(&flags)?;
    let dir = run_dir(&cfg, &cfg.run_id());
    // snapshot first: the run must be reproducible even if it dies later
    write_atomic_str(&dir.join("config.cfg"), &cfg.snapshot())?;
    let (mut model, spec, report) = train(&cfg)?;
    save_checkpoint(&mut model, &spec, &dir.join("model.ckpt"))?;
    write_run_artifacts(&dir, &cfg, std::slice::from_ref(&report))?;
    println!(
        "run {} variant={} seed={} best_epoch={}",
        report.run_id, report.variant, report.seed, report.best_epoch
    );
    println!(
        "val mse {:.6} mae {:.6} | test mse {:.6} mae {:.6}",
        report.val.mse, report.val.mae, report.test.mse, report.test.mae
    );
    if let Some(p) = report.test_polluted {
        println!("test (anomalous history) mse {:.6} mae {:.6}", p.mse, p.mae);
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_evaluate(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["config", "data", "checkpoint", "split", "set"])?;
    let ckpt = flags
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("evaluate needs --checkpoint".into()))?;
    let cfg = build_config(&flags)?;
    let split = SplitSel::parse(flags.split.as_deref().unwrap_or("test"))?;
    let (mut model, spec) = load_checkpoint(Path::new(ckpt))?;
    let metrics = evaluate_checkpoint(&mut model, &spec, &cfg, split)?;
    println!(
        "{{\"run_id\":\"{}\",\"split\":\"{}\",\"mse\":{},\"mae\":{}}}",
        cfg.run_id(),
        match split {
            SplitSel::Train => "train",
            SplitSel::Val => "val",
            SplitSel::Test => "test",
        },
        metrics.mse,
        metrics.mae
    );
    Ok(())
}

fn cmd_ablate(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["config", "data", "out", "set", "variants", "anomalies"])?;
    let mut cfg = build_config(&flags)?;
    if let Some(specs) = &flags.anomalies {
        cfg.set("anomaly.specs", specs)?;
    }
    let variants: Vec<String> = flags
        .variants
        .as_deref()
        .unwrap_or("full,no_backbone,no_attention,no_quantile,no_adaptive")
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if variants.is_empty() {
        return Err(CliError::Usage("--variants list is empty".into()));
    }
    let dir = run_dir(&cfg, &format!("{}-ablation", cfg.run_id()));
    write_atomic_str(&dir.join("config.cfg"), &cfg.snapshot())?;
    let reports = ablate(&cfg, &variants)?;
    write_run_artifacts(&dir, &cfg, &reports)?;

    // Table-3-shaped comparison: one row per metric row, one column pair per
    // variant, cells = mse/mae
    let mut table = String::from("setting");
    for r in &reports {
        table.push_str(&format!(",{} mse,{} mae", r.variant, r.variant));
    }
    table.push('\n');
    let mut write_row = |name: &str, pick: &dyn Fn(&TrainReport) -> Option<(f64, f64)>| {
        let mut row = name.to_string();
        let mut any = false;
        for r in &reports {
            match pick(r) {
                Some((mse, mae)) => {
                    row.push_str(&format!(",{mse:.4},{mae:.4}"));
                    any = true;
                }
                None => row.push_str(",,"),
            }
        }
        row.push('\n');
        if any {
            table.push_str(&row);
        }
    };
    let horizon = cfg.horizon;
    write_row(&format!("test@{horizon}"), &|r| {
        Some((r.test.mse, r.test.mae))
    });
    write_row(&format!("test_anomalous@{horizon}"), &|r| {
        r.test_polluted.map(|m| (m.mse, m.mae))
    });
    write_atomic_str(&dir.join("ablation.csv"), &table)?;

    for r in &reports {
        let weights = r
            .mean_weights
            .map(|(a, b)| format!(" weights=({a:.3},{b:.3})"))
            .unwrap_or_default();
        println!(
            "{:<24} test mse {:.6} mae {:.6}{}",
            r.variant, r.test.mse, r.test.mae, weights
        );
        if let Some(p) = r.test_polluted {
            println!(
                "{:<24}      anomalous mse {:.6} mae {:.6}",
                "", p.mse, p.mae
            );
        }
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_gradcheck(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["seed", "set"])?;
    let seed: u64 = match &flags.seed {
        Some(s) => s
            .parse()
            .map_err(|_| CliError::Usage(format!("bad --seed '{s}'")))?,
        None => 1234,
    };
    let report = harness::gradcheck(seed)?;
    for c in &report.components {
        println!(
            "{:<16} max rel err {:.3e}  worst {}  [{}]",
            c.component,
            c.max_rel_err,
            c.worst_param,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    println!(
        "subgradient locality: {}",
        if report.subgradient_locality {
            "pass"
        } else {
            "FAIL"
        }
    );
    if report.passed() {
        println!("gradcheck passed (tolerance {:.0e})", report.tolerance);
        Ok(())
    } else {
        Err(CliError::Gradcheck(report.failures().join(", ")))
    }
}

fn cmd_synth(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["n", "channels", "seed", "out", "set", "config"])?;
    let mut cfg = build_config(&flags)?;
    if let Some(n) = &flags.n {
        cfg.set("synth.n", n)?;
    }
    if let Some(c) = &flags.channels {
        cfg.set("synth.channels", c)?;
    }
    if let Some(s) = &flags.seed {
        cfg.set("synth.seed", s)?;
    }
    let ds = synth_generate(cfg.synth_n, &cfg.synth_profile())?;
    let path = cfg.out_dir().join("synth.csv");
    write_atomic_str(&path, &to_csv_string(&ds))?;
    println!(
        "wrote {} ({} rows, {} channels)",
        path.display(),
        ds.len(),
        ds.channel_count()
    );
    Ok(())
}

fn cmd_inject(args: &[String]) -> CliResult {
    let flags = parse_flags(args, &["config", "data", "anomalies", "out", "set"])?;
    let mut cfg = build_config(&flags)?;
    if let Some(specs) = &flags.anomalies {
        cfg.set("anomaly.specs", specs)?;
    }
    let specs = cfg.anomalies()?;
    if specs.is_empty() {
        return Err(CliError::Usage(
            "inject needs --anomalies (or anomaly.specs in the config)".into(),
        ));
    }
    let ds = match &cfg.source {
        DataSource::Csv(path) => load_csv(Path::new(path))?,
        DataSource::Synth => synth_generate(cfg.synth_n, &cfg.synth_profile())?,
    };
    let n = ds.len();
    let test_start = (n as f64 * (cfg.split.train + cfg.split.val)).floor() as usize;
    let region = TestRegion {
        first_target: test_start.max(cfg.history),
        history: cfg.history,
        horizon: cfg.horizon,
    };
    let mut out = ds;
    for spec in &specs {
        out = inject_anomalies(&out, spec, &region)?;
    }
    let path = cfg.out_dir().join("injected.csv");
    write_atomic_str(&path, &to_csv_string(&out))?;
    println!("wrote {} ({} rows)", path.display(), out.len());
    Ok(())
}

fn dispatch(args: &[String]) -> CliResult {
    let Some(cmd) = args.first() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "train" => cmd_train(rest),
        "evaluate" => cmd_evaluate(rest),
        "ablate" => cmd_ablate(rest),
        "gradcheck" => cmd_gradcheck(rest),
        "synth" => cmd_synth(rest),
        "inject" => cmd_inject(rest),
        other => Err(CliError::Usage(format!("unknown subcommand '{other}'"))),
    }
}
