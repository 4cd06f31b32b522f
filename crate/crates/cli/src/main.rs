mod recipes;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sblab::checkpoint::{load_model, save_model, Container};
use sblab::datasets::data_dir;
use sblab::diagnostics::{correlation_heatmap, inter_feature_correlation, matrix_csv, taxonomy_csv, FeatureTaxonomy};
use sblab::nets::{ExtractorSpec, Model};
use sblab::phase::Phase;
use sblab::pipeline::{
    experiment_ids, optimize, run_colored_on, sweep_phase, table2_csv, taxonomy, ColoredConfig, ColoredData, ColoredReport,
    ConcatLab, LabConfig, PhaseConfig, RunRecord, SearchSpace,
};
use sblab::theory::{verify_theory, write_theory_outputs, Axis, TheoryReport, VerifyOptions};

use recipes::{RecipeArgs, RECIPES};

#[derive(Parser)]
#[command(name = "sblab", version, about = "Feature reconstruction regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the replicated-feature toy problem and check the closed forms.
    VerifyTheory {
        /// Replication counts, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 5, 20])]
        d: Vec<usize>,
        /// Restrict to one replication axis (`first` or `second`).
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write CSV, JSON and boundary plots here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset and store it as a container file.
    GenData {
        /// One of the known recipes (see `--help`).
        #[arg(help = format!("recipe: {RECIPES}"))]
        recipe: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Output file; defaults to `<data dir>/<recipe>-<seed>.sbd`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one training phase from a JSON phase configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset container; when absent, `--recipe` is generated.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "colored-train")]
        recipe: String,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Starting checkpoint; a fresh model is built otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Re-initialize the head before training.
        #[arg(long)]
        reinit_head: bool,
        /// Where to write the trained checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a registry experiment (E1..E18), `colored`, or `all`.
    Experiment {
        id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sblab-out")]
        out: PathBuf,
    },
    /// Random search over learning rate, regularizer weight and norm for
    /// head retraining on the coloured-digit task.
    Sweep {
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(long, default_value = "FRR-L")]
        phase: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        #[arg(long, default_value_t = 2000)]
        erm_steps: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feature taxonomy and correlation structure of a coloured-digit model.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the theory checks, the coloured-digit study and the registry,
    /// writing every table, log and plot.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        skip_colored: bool,
        #[arg(long)]
        skip_concat: bool,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::VerifyTheory { d, axis, seed, out } => {
            let axes = match axis {
                Some(a) => vec![a.parse::<Axis>()?],
                None => vec![Axis::First, Axis::Second],
            };
            let opts = VerifyOptions { d_list: d, axes, seed, ..VerifyOptions::default() };
            let report = verify_theory(&opts)?;
            print_theory(&report);
            if let Some(dir) = out {
                write_theory_outputs(&report, &dir, seed)?;
                println!("wrote {}", dir.display());
            }
        }
        Command::GenData { recipe, seed, per_class, size, out } => {
            let args = RecipeArgs { per_class, size, seed };
            let g = recipes::generate(&recipe, &args)?;
            let path = out.unwrap_or_else(|| data_dir().join(format!("{recipe}-{seed}.sbd")));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            recipes::to_container(&recipe, &args, &g)?.write(&path)?;
            println!(
                "{recipe}: {} samples, {} classes, inputs {:?} -> {}",
                g.dataset.len(),
                g.dataset.classes,
                g.dataset.inputs.shape(),
                path.display()
            );
        }
        Command::Train { config, data, recipe, per_class, size, init, reinit_head, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg: PhaseConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            let g = match data {
                Some(p) => recipes::from_container(&Container::read(&p)?)?,
                None => recipes::generate(&recipe, &RecipeArgs { per_class, size, seed: cfg.seed })?,
            };
            let (train, val) = g.dataset.split_validation(0.1, cfg.seed);
            let mut model = match init {
                Some(p) => load_model(&p)?.0,
                None => Model::new(&g.extractor, recipes::head_width(&train), cfg.decoder, cfg.seed)?,
            };
            if reinit_head {
                model.reinit_head(cfg.seed.wrapping_add(101));
            }
            let outcome = optimize(&mut model, &train, &cfg)?;
            let val_acc = sblab::pipeline::accuracy(&model, &val)?;
            println!(
                "{}: {} steps in {:.1}s, final loss {:.5} (ce {:.5}), validation accuracy {val_acc:.2}%",
                outcome.phase, outcome.steps, outcome.seconds, outcome.final_loss, outcome.final_ce
            );
            for a in &outcome.audits {
                println!("  {:?}: trained={} checksum {:016x} -> {:016x}", a.group, a.trained, a.before, a.after);
            }
            if let Some(p) = out {
                save_model(&p, &model, &[cfg.phase.to_string()])?;
                println!("wrote {}", p.display());
            }
        }
        Command::Experiment { id, seed, out } => {
            fs::create_dir_all(&out)?;
            if id.eq_ignore_ascii_case("colored") {
                let cfg = ColoredConfig { seed, ..ColoredConfig::default() };
                let data = ColoredData::generate(&cfg)?;
                let (report, model) = run_colored_on(&cfg, &data)?;
                write_colored(&report, &model, &out)?;
            } else {
                let ids: Vec<String> = if id.eq_ignore_ascii_case("all") {
                    experiment_ids().iter().map(|s| s.to_string()).collect()
                } else {
                    vec![id]
                };
                let lab = run_lab(seed, &out, &ids)?;
                print!("{}", table2_csv(lab.records.values()));
            }
        }
        Command::Sweep { trials, phase, seed, per_class, erm_steps, steps, out } => {
            let phase: Phase = phase.parse()?;
            if !phase.is_linear_only() {
                bail!("sweep retrains the head only; `{phase}` also trains the extractor");
            }
            let cfg = ColoredConfig {
                seed,
                train_per_class: per_class,
                erm: PhaseConfig { steps: erm_steps, ..ColoredConfig::default().erm },
                ..ColoredConfig::default()
            };
            let data = ColoredData::generate(&cfg)?;
            let (train, val) = data.train.split_validation(0.1, seed);
            let mut model = sblab::pipeline::colored_model(&cfg)?;
            optimize(&mut model, &train, &cfg.erm)?;
            model.reinit_head(seed.wrapping_add(101));
            let base = PhaseConfig { phase, steps, ..cfg.frr_l.clone() };
            let result = sweep_phase(&model, &train, &val, &base, &SearchSpace::default(), trials, seed)?;
            println!("trial,learning_rate,lambda,norm,validation_accuracy");
            for t in &result.trials {
                println!(
                    "{},{:.3e},{:.3e},{},{:.2}",
                    t.index,
                    t.config.learning_rate,
                    t.config.active_lambda(),
                    t.config.norm,
                    t.validation_accuracy
                );
            }
            println!("best trial {}", result.best_index);
            println!("{}", serde_json::to_string_pretty(&result.best)?);
            if let Some(p) = out {
                fs::write(&p, serde_json::to_string_pretty(&result)?)?;
                println!("wrote {}", p.display());
            }
        }
        Command::Diagnose { checkpoint, seed, per_class, out } => {
            let (model, provenance) = load_model(&checkpoint)?;
            let ExtractorSpec::Cnn(spec) = &model.extractor.spec else {
                bail!("diagnose expects a single-branch coloured-digit model");
            };
            if spec.in_channels != 3 || spec.height != spec.width {
                bail!("diagnose expects square RGB inputs, model takes {:?}", model.extractor.spec.input_shape());
            }
            let cfg = ColoredConfig { seed, size: spec.height, test_per_class: per_class, ..ColoredConfig::default() };
            let data = ColoredData::generate(&cfg)?;
            let (tax, feats, ood) = taxonomy(&model, data.probes(), &data.test, cfg.threshold)?;
            let id = sblab::pipeline::accuracy(&model, &data.id_test)?;
            println!("provenance: {}", provenance.join(" -> "));
            println!("id accuracy {id:.2}%, ood accuracy {ood:.2}%");
            print_taxonomy(&tax);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                let corr = inter_feature_correlation(&feats)?;
                fs::write(dir.join("taxonomy.csv"), taxonomy_csv(&tax))?;
                fs::write(dir.join("correlation.csv"), matrix_csv(&corr))?;
                fs::write(dir.join("correlation.svg"), correlation_heatmap("feature correlation", &corr, Some(&tax)))?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Report { out, seed, skip_colored, skip_concat } => {
            fs::create_dir_all(&out)?;
            let report = verify_theory(&VerifyOptions { seed, ..VerifyOptions::default() })?;
            print_theory(&report);
            write_theory_outputs(&report, &out.join("theory"), seed)?;
            if !skip_colored {
                let cfg = ColoredConfig { seed, ..ColoredConfig::default() };
                let data = ColoredData::generate(&cfg)?;
                let (report, model) = run_colored_on(&cfg, &data)?;
                write_colored(&report, &model, &out.join("colored"))?;
            }
            if !skip_concat {
                let ids: Vec<String> = experiment_ids().iter().map(|s| s.to_string()).collect();
                let lab = run_lab(seed, &out.join("concat"), &ids)?;
                print!("{}", table2_csv(lab.records.values()));
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn print_theory(report: &TheoryReport) {
    println!("d,axis,solver,w,w_proj,id_acc,ood_acc,group_residual,converged");
    for r in &report.rows {
        let w: Vec<String> = r.w.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "{},{},{},[{}],[{:.4} {:.4}],{:.2},{:.2},{:.2e},{}",
            r.d,
            r.axis,
            r.solver,
            w.join(" "),
            r.w_proj[0],
            r.w_proj[1],
            r.id_acc,
            r.ood_acc,
            r.group_equality_residual,
            r.converged
        );
    }
    if let Some(a) = &report.moment_audit {
        println!("{}", a.summary());
    }
}

fn print_taxonomy(t: &FeatureTaxonomy) {
    println!(
        "features: {} simple, {} complex, {} unclassified (threshold {})",
        t.counts.simple, t.counts.complex, t.counts.unclassified, t.threshold
    );
    if let Some(oc) = t.output_corr {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        println!("output correlation: simple {}, complex {}", fmt(oc.simple), fmt(oc.complex));
    }
}

fn write_colored(report: &ColoredReport, model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    println!("phase,id_accuracy,ood_accuracy,simple,complex,unclassified");
    for s in &report.stages {
        let c = s.taxonomy.counts;
        println!(
            "{},{:.2},{:.2},{},{},{}",
            s.phase, s.id_accuracy, s.ood_accuracy, c.simple, c.complex, c.unclassified
        );
        fs::write(dir.join(format!("taxonomy_{}.csv", s.phase)), taxonomy_csv(&s.taxonomy))?;
    }
    let corr = report.correlation_matrix();
    let first = report.stages.first().map(|s| &s.taxonomy);
    fs::write(dir.join("correlation.csv"), matrix_csv(&corr))?;
    fs::write(dir.join("correlation.svg"), correlation_heatmap("feature correlation after ERM", &corr, first))?;
    fs::write(dir.join("colored.json"), serde_json::to_string_pretty(report)?)?;
    save_model(&dir.join("final.ckpt"), model, &report.stages.iter().map(|s| s.phase.to_string()).collect::<Vec<_>>())?;
    Ok(())
}

fn run_lab(seed: u64, out: &Path, ids: &[String]) -> Result<ConcatLab> {
    let mut lab = ConcatLab::new(LabConfig { seed, ..LabConfig::default() }, Some(out.join("checkpoints")))?;
    let runs = out.join("runs");
    fs::create_dir_all(&runs)?;
    for id in ids {
        let r = lab.run(id)?;
        eprintln!("{}: id {:.2}, complex-only {:.2} ({:.0}s)", r.id, acc(&r, "id"), acc(&r, "avg_simple"), r.seconds);
    }
    for r in lab.records.values() {
        fs::write(runs.join(format!("{}.json", r.id)), r.to_json()?)?;
    }
    fs::write(out.join("table2.csv"), table2_csv(lab.records.values()))?;
    Ok(lab)
}

fn acc(r: &RunRecord, key: &str) -> f64 {
    r.accuracy.get(key).copied().unwrap_or(f64::NAN)
}
