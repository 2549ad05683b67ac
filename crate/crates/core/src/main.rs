use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use kathleen::bench::{self, CountingAlloc};
use kathleen::checkpoint;
use kathleen::config::{ModelConfig, RunConfig};
use kathleen::data::{load_dataset, ByteBatch};
use kathleen::gradcheck::{self, Options};
use kathleen::model::Kathleen;
use kathleen::rng::Rng;
use kathleen::training::{self, mean_std, EpochReport};
use kathleen::Error;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "kathleen", version, about = "Byte-level text classifier")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one seed, or every seed in `train.seeds` when --seed is absent.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Accuracy and confusion matrix of a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Evaluate on the training split instead.
        #[arg(long)]
        train_split: bool,
    },
    /// Finite-difference gradient checks; exits 1 on any failure.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        size: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Wall time and peak heap against sequence length (CSV).
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        repeat: usize,
        /// Time forward plus backward.
        #[arg(long)]
        backward: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter accounting of a checkpoint, or the default config.
    Inspect {
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        defaults: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train { config, seed, out } => cmd_train(&config, seed, &out),
        Cmd::Evaluate {
            checkpoint,
            config,
            train_split,
        } => cmd_evaluate(&checkpoint, &config, train_split),
        Cmd::Gradcheck {
            size,
            trials,
            corrupt,
        } => cmd_gradcheck(&size, trials, corrupt),
        Cmd::Bench {
            lengths,
            repeat,
            backward,
            checkpoint,
            config,
            seed,
        } => cmd_bench(
            &lengths,
            repeat,
            backward,
            checkpoint.as_deref(),
            config.as_deref(),
            seed,
        ),
        Cmd::Inspect {
            checkpoint,
            defaults,
        } => cmd_inspect(checkpoint.as_deref(), defaults),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence(_) => 3,
        Error::Shape(_) | Error::Domain(_) => 1,
        _ => 2,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_train(config: &Path, seed: Option<u64>, out: &Path) -> Result<ExitCode, Error> {
    let cfg = RunConfig::load(config)?;
    let seeds = match seed {
        Some(s) => vec![s],
        None if cfg.train.seeds.is_empty() => vec![cfg.train.seed],
        None => cfg.train.seeds.clone(),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut finals = Vec::new();
    for &s in &seeds {
        let splits = load_dataset(&cfg.data, s)?;
        let mut lines = String::new();
        let mut on_epoch = |r: &EpochReport| {
            let line = serde_json::to_string(r).expect("report serializes");
            println!("{line}");
            eprintln!(
                "seed {s} epoch {:>2}  loss {:.4}  train {:.4}  test {}  ({:.1}s)",
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                r.test_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                r.seconds
            );
            lines.push_str(&line);
            lines.push('\n');
        };
        let outcome = training::train(&cfg, &splits, s, &mut on_epoch)?;
        let summary =
            serde_json::to_string(&json!({ "run": &outcome.report })).expect("report serializes");
        println!("{summary}");
        lines.push_str(&summary);
        lines.push('\n');
        write_file(&out.join(format!("report-seed{s}.jsonl")), &lines)?;
        checkpoint::save(&out.join(format!("best-seed{s}.kath")), &outcome.best)?;
        checkpoint::save(&out.join(format!("last-seed{s}.kath")), &outcome.last)?;
        finals.push((
            s,
            outcome.report.best_test_accuracy,
            outcome.report.last_test_accuracy,
        ));
    }
    if finals.len() > 1 {
        let best: Vec<f64> = finals.iter().map(|f| 100.0 * f.1).collect();
        let last: Vec<f64> = finals.iter().map(|f| 100.0 * f.2).collect();
        let (bm, bs) = mean_std(&best);
        let (lm, ls) = mean_std(&last);
        let per_seed: Vec<String> = finals
            .iter()
            .map(|(s, b, _)| format!("seed {s}: {:.1}", 100.0 * b))
            .collect();
        eprintln!("{} | mean ± std: {bm:.1} ± {bs:.1}", per_seed.join(" | "));
        println!(
            "{}",
            json!({ "summary": {
                "seeds": finals.iter().map(|f| f.0).collect::<Vec<_>>(),
                "best_test_accuracy": best,
                "best_mean": bm, "best_std": bs,
                "last_test_accuracy": last,
                "last_mean": lm, "last_std": ls,
            }})
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(ckpt: &Path, config: &Path, train_split: bool) -> Result<ExitCode, Error> {
    let cfg = RunConfig::load(config)?;
    let (_, params) = checkpoint::decode(&std::fs::read(ckpt).map_err(|e| Error::io(ckpt, e))?)?;
    let model = Kathleen::from_params(cfg.model.clone(), params)?;
    let splits = load_dataset(&cfg.data, cfg.train.seed)?;
    let examples = if train_split {
        &splits.train
    } else {
        &splits.test
    };
    let report = training::evaluate(&model, examples, cfg.train.batch_size)?;
    println!(
        "{}",
        serde_json::to_string(&report).expect("report serializes")
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(size: &str, trials: usize, corrupt: Option<String>) -> Result<ExitCode, Error> {
    if size != "tiny" {
        return Err(Error::Config(format!(
            "unknown gradcheck size {size:?} (only \"tiny\")"
        )));
    }
    let opts = Options {
        corrupt,
        ..Options::default()
    };
    let mut rows = gradcheck::check_ops_trials(&opts, trials.max(1));
    rows.extend(gradcheck::check_stop_gradients(&opts));
    rows.extend(gradcheck::check_model(&ModelConfig::tiny(), &opts));
    println!("tensor,elements,max_rel_err,status");
    for r in &rows {
        println!(
            "{},{},{:.3e},{}",
            r.name, r.elements, r.max_rel_err, r.status
        );
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    eprintln!("{} checks, {failed} failed", rows.len());
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_bench(
    lengths: &[usize],
    repeat: usize,
    backward: bool,
    ckpt: Option<&Path>,
    config: Option<&Path>,
    seed: u64,
) -> Result<ExitCode, Error> {
    let model = match (ckpt, config) {
        (Some(path), _) => {
            let m = checkpoint::load(path)?;
            let cfg = bench::config_for(&m.cfg, lengths)?;
            if cfg.l_max != m.cfg.l_max {
                return Err(Error::Config(format!(
                    "checkpoint positional bias covers {} frames; lengths need {}",
                    m.cfg.l_max, cfg.l_max
                )));
            }
            m
        }
        (None, Some(path)) => {
            let cfg = RunConfig::load(path)?;
            Kathleen::new(bench::config_for(&cfg.model, lengths)?, seed)?
        }
        (None, None) => Kathleen::new(bench::config_for(&ModelConfig::default(), lengths)?, seed)?,
    };
    let rows = bench::run(&model, lengths, repeat, backward, seed)?;
    print!("{}", bench::to_csv(&rows));
    for (a, b, t, m) in bench::ratios(&rows) {
        eprintln!("t({b})/t({a}) = {t:.2}  mem({b})/mem({a}) = {m:.2}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_inspect(ckpt: Option<&Path>, defaults: bool) -> Result<ExitCode, Error> {
    if defaults {
        print!("{}", RunConfig::default().to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let model = match ckpt {
        Some(path) => checkpoint::load(path)?,
        None => Kathleen::new(ModelConfig::default(), 0)?,
    };
    let report = model.report();
    println!("kind,name,shape,count,status");
    for (name, shape, n) in &report.tensors {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        println!("tensor,{name},{},{n},", dims.join("x"));
    }
    for (group, n) in &report.groups {
        println!("group,{group},,{n},");
    }
    println!("total,,,{},", report.total);

    let violations = report.violations();
    for (name, label, want) in kathleen::model::STRUCTURAL.iter() {
        let got = report.count_of(name).unwrap_or(0);
        let status = if got == *want { "ok" } else { "VIOLATION" };
        println!("check,{label},,{got},{status}");
    }
    let cfg = &model.cfg;
    let mut rng = Rng::new(0x6a7e);
    let texts: Vec<String> = (0..8)
        .map(|_| {
            (0..cfg.max_len)
                .map(|_| (32 + rng.below(95) as u8) as char)
                .collect()
        })
        .collect();
    let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
    let batch = ByteBatch::from_texts(&refs, &[0; 8], cfg.max_len, cfg.num_classes)?;
    let mut gate_bad = false;
    match model.gate_range(&batch)? {
        Some((lo, hi)) => {
            gate_bad = !(lo > cfg.gamma_min && hi < cfg.gamma_max);
            let status = if gate_bad { "VIOLATION" } else { "ok" };
            println!("check,gate range,,{lo:.6}..{hi:.6},{status}");
        }
        None => println!("check,gate range,,,absent"),
    }
    for v in &violations {
        eprintln!("violation: {v}");
    }
    Ok(if violations.is_empty() && !gate_bad {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
