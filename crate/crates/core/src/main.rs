use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use strength_rank::harness::{
    dataset_diagnostics, derive_seed, run_experiment, thread_pool, write_results, ExperimentConfig,
    ExperimentOutput, Metric,
};
use strength_rank::learners::{fit, parse_learners, LearnerKind};
use strength_rank::metrics::{pdc_validation, PdcValidationConfig};
use strength_rank::ranking::stratum_stats;
use strength_rank::{build_dataset, DatasetConfig, LabelerKind, Preference, Result, UtilityNet};

#[derive(Parser)]
#[command(name = "strength-rank", version, about = "Utility learning from preferences and strength signals")]
struct Cli {
    /// Base seed; trial i uses a seed derived from (seed, i).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 100)]
    trials: usize,
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one synthetic dataset as JSON lines.
    Generate(GenerateArgs),
    /// Run one dataset condition for the selected learners and fractions.
    Run(RunArgs),
    /// Run the dataset-size sweep over all dataset kinds.
    Sweep(SweepArgs),
    /// PDC/TCE degradation grid on synthetic perfect predictions.
    PdcValidate(PdcArgs),
    /// Label confusion, strength rank agreement and partition statistics.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Clone, Copy)]
struct Condition {
    #[arg(long, value_parser = parse_kind)]
    kind: LabelerKind,
    /// Per-stratum response-time multipliers (the default).
    #[arg(long, overrides_with = "no_variability")]
    variability: bool,
    #[arg(long, overrides_with = "variability")]
    no_variability: bool,
}

impl Condition {
    fn dataset(&self) -> DatasetConfig {
        DatasetConfig::new(self.kind, !self.no_variability)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    condition: Condition,
    #[arg(long, default_value_t = 50)]
    train_size: usize,
    #[arg(long, default_value_t = 200)]
    test_size: usize,
    #[arg(long, default_value_t = 20)]
    features: usize,
    /// Output path (default: <out-dir>/dataset.jsonl). Test utilities go to
    /// `<out>.truth.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    condition: Condition,
    #[arg(long, default_value = "bt,rr,rr-pool,rr-perm,rtreg,rtreg-perm")]
    learners: String,
    #[arg(long, default_value = "1.0", value_delimiter = ',')]
    fractions: Vec<f64>,
    /// Write trial-0 models at the largest fraction as JSON.
    #[arg(long)]
    dump_model: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "bt,rr,rr-pool,rr-perm,rtreg,rtreg-perm")]
    learners: String,
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0", value_delimiter = ',')]
    fractions: Vec<f64>,
    #[arg(long, default_value = "deterministic,ddm,stochastic", value_delimiter = ',', value_parser = parse_kind)]
    kinds: Vec<LabelerKind>,
    /// Also run every kind without stratum variability.
    #[arg(long)]
    include_no_variability: bool,
}

#[derive(Args)]
struct PdcArgs {
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 50_000)]
    pairs: usize,
    #[arg(long, default_value_t = 11)]
    grid_steps: usize,
    /// Output path (default: <out-dir>/pdc_validation.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    condition: Condition,
    /// Partition size cap for the partition statistics.
    #[arg(long)]
    max_size: Option<usize>,
}

fn parse_kind(s: &str) -> std::result::Result<LabelerKind, String> {
    s.parse::<LabelerKind>().map_err(|e| e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct DatasetHeader<'a> {
    config: &'a DatasetConfig,
    seed: u64,
    train: usize,
    test: usize,
}

#[derive(Serialize)]
struct ComparisonLine<'a> {
    a: &'a [f64],
    b: &'a [f64],
    pref: Preference,
    strength: f64,
    stratum: usize,
    split: &'static str,
}

#[derive(Serialize)]
struct TruthLine {
    index: usize,
    u_a: f64,
    u_b: f64,
}

#[derive(Serialize)]
struct Truth {
    seed: u64,
    diff_scale: f64,
    test: Vec<TruthLine>,
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let mut cfg = args.condition.dataset();
    cfg.train_size = args.train_size;
    cfg.test_size = args.test_size;
    cfg.features = args.features;
    // Same dataset as trial 0 of `run` with this seed.
    let seed = derive_seed(cli.seed, 0);
    let data = build_dataset(&cfg, seed)?;

    let path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("dataset.jsonl"));
    let mut w = create(&path)?;
    let header = DatasetHeader {
        config: &cfg,
        seed,
        train: data.train.len(),
        test: data.test.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    let splits = data
        .train
        .iter()
        .map(|c| (c, "train"))
        .chain(data.test.iter().map(|c| (c, "test")));
    for (c, split) in splits {
        let line = ComparisonLine {
            a: &c.a,
            b: &c.b,
            pref: c.preference,
            strength: c.strength,
            stratum: c.stratum,
            split,
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    w.flush()?;

    let truth = Truth {
        seed,
        diff_scale: data.ground_truth.diff_scale,
        test: data
            .test
            .iter()
            .enumerate()
            .map(|(index, c)| TruthLine {
                index,
                u_a: data.ground_truth.utility(&c.a),
                u_b: data.ground_truth.utility(&c.b),
            })
            .collect(),
    };
    let mut truth_path = path.into_os_string();
    truth_path.push(".truth.json");
    let mut tw = create(Path::new(&truth_path))?;
    serde_json::to_writer(&mut tw, &truth)?;
    tw.flush()?;
    Ok(())
}

fn experiment(cli: &Cli, dataset: DatasetConfig, learners: &str, fractions: &[f64]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(dataset.kind, dataset.variability, cli.seed);
    cfg.dataset = dataset;
    cfg.learners = parse_learners(learners)?;
    cfg.fractions = fractions.to_vec();
    cfg.trials = cli.trials;
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(outputs: &[ExperimentOutput]) {
    println!("dataset        var    learner      fraction  pdc (mean ± ci)    accuracy (mean ± ci)");
    for out in outputs {
        let cfg = &out.config;
        for &learner in &cfg.learners {
            for &fraction in &cfg.fractions {
                let cell = |m| {
                    out.aggregate_for(learner, fraction, m)
                        .map(|a| format!("{:.3} ± {:.3}", a.mean, a.ci))
                        .unwrap_or_else(|| "n/a".into())
                };
                println!(
                    "{:<14} {:<6} {:<12} {:<9} {:<18} {}",
                    cfg.dataset.kind.name(),
                    cfg.dataset.variability,
                    learner.name(),
                    fraction,
                    cell(Metric::Pdc),
                    cell(Metric::Accuracy),
                );
            }
        }
        for row in &out.breakevens {
            if let Some(f) = row.breakeven {
                println!(
                    "{} {}: {} reaches full-data {} {} at fraction {:.3}",
                    cfg.dataset.kind.name(),
                    if cfg.dataset.variability { "var" } else { "no-var" },
                    row.learner.name(),
                    row.baseline.name(),
                    row.metric.name(),
                    f
                );
            }
        }
    }
}

#[derive(Serialize)]
struct DumpedModel<'a> {
    learner: LearnerKind,
    fraction: f64,
    layer_sizes: Vec<usize>,
    net: &'a UtilityNet,
}

fn dump_models(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let seed = derive_seed(cfg.base_seed, 0);
    let data = build_dataset(&cfg.dataset, seed)?;
    let fit_seed = derive_seed(seed, strength_rank::harness::FIT_STREAM);
    let fraction = *cfg.fractions.last().expect("validated");
    let n = strength_rank::harness::prefix_len(fraction, data.train.len());
    let fitted = cfg
        .learners
        .iter()
        .map(|&l| fit(l, &data.train[..n], &cfg.fit, fit_seed).map(|f| (l, f.net)))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<DumpedModel> = fitted
        .iter()
        .map(|(l, net)| DumpedModel {
            learner: *l,
            fraction,
            layer_sizes: net.layer_sizes(),
            net,
        })
        .collect();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &models)?;
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let cfg = experiment(cli, args.condition.dataset(), &args.learners, &args.fractions)?;
    let out = run_experiment(&cfg)?;
    write_results(&cli.out_dir, std::slice::from_ref(&out))?;
    print_summary(std::slice::from_ref(&out));
    if let Some(path) = &args.dump_model {
        dump_models(&cfg, path)?;
    }
    Ok(())
}

fn sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let mut conditions = vec![true];
    if args.include_no_variability {
        conditions.push(false);
    }
    let mut outputs = Vec::new();
    for &variability in &conditions {
        for &kind in &args.kinds {
            let cfg = experiment(cli, DatasetConfig::new(kind, variability), &args.learners, &args.fractions)?;
            eprintln!("running {} (variability {variability}), {} trials", kind.name(), cfg.trials);
            outputs.push(run_experiment(&cfg)?);
        }
    }
    write_results(&cli.out_dir, &outputs)?;
    print_summary(&outputs);
    Ok(())
}

fn pdc_validate(cli: &Cli, args: &PdcArgs) -> Result<()> {
    let cfg = PdcValidationConfig {
        items: args.items,
        pairs: args.pairs,
        grid_steps: args.grid_steps,
        seed: cli.seed,
    };
    let cells = pdc_validation(&cfg)?;
    let path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("pdc_validation.csv"));
    let mut w = create(&path)?;
    writeln!(w, "# config {}", serde_json::to_string(&cfg)?)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["f_sign", "f_mag", "scaling", "pdc", "tce"])?;
    for c in &cells {
        csv.write_record([
            c.f_sign.to_string(),
            c.f_mag.to_string(),
            c.scaling.name().to_string(),
            c.pdc.to_string(),
            c.tce.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

fn analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<()> {
    let cfg = args.condition.dataset();
    let rows = dataset_diagnostics(&cfg, cli.trials, cli.seed)?;
    std::fs::create_dir_all(&cli.out_dir)?;

    let mut w = create(&cli.out_dir.join("diagnostics.csv"))?;
    writeln!(w, "# config {}", serde_json::to_string(&cfg)?)?;
    writeln!(w, "# base_seed {} trials {}", cli.seed, cli.trials)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "trial",
        "seed",
        "true_a_label_a",
        "true_a_label_b",
        "true_b_label_a",
        "true_b_label_b",
        "error_rate",
        "strength_tau",
    ])?;
    for r in &rows {
        csv.write_record([
            r.trial.to_string(),
            r.seed.to_string(),
            r.confusion.true_a_label_a.to_string(),
            r.confusion.true_a_label_b.to_string(),
            r.confusion.true_b_label_a.to_string(),
            r.confusion.true_b_label_b.to_string(),
            r.error_rate.to_string(),
            r.strength_tau.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;

    let mut w = create(&cli.out_dir.join("partitions.csv"))?;
    writeln!(w, "# config {}", serde_json::to_string(&cfg)?)?;
    writeln!(w, "# base_seed {} trials {} max_size {:?}", cli.seed, cli.trials, args.max_size)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "trial",
        "stratum",
        "comparisons",
        "tie_groups",
        "largest_tie_group",
        "partitions",
        "smallest_partition",
        "largest_partition",
    ])?;
    for r in &rows {
        let data = build_dataset(&cfg, r.seed)?;
        for s in stratum_stats(&data.train, args.max_size)? {
            csv.write_record([
                r.trial.to_string(),
                s.stratum.to_string(),
                s.comparisons.to_string(),
                s.tie_groups.to_string(),
                s.largest_tie_group.to_string(),
                s.partitions.to_string(),
                s.smallest_partition.to_string(),
                s.largest_partition.to_string(),
            ])?;
        }
    }
    csv.flush()?;

    let n = rows.len() as f64;
    let error = rows.iter().map(|r| r.error_rate).sum::<f64>() / n;
    let taus: Vec<f64> = rows.iter().filter_map(|r| r.strength_tau).collect();
    let tau = taus.iter().sum::<f64>() / taus.len().max(1) as f64;
    println!(
        "{} (variability {}): mean label error {:.4}, mean strength tau {:.4} over {} trials",
        cfg.kind.name(),
        cfg.variability,
        error,
        tau,
        rows.len()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let pool = thread_pool(cli.threads)?;
    pool.install(|| match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Run(a) => run(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::PdcValidate(a) => pdc_validate(cli, a),
        Command::Analyze(a) => analyze(cli, a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
