//! Command-line front end: synthesize data, train, score, evaluate, inspect.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gicisad::eval::{auroc, emit_report, frame_scores, param_count, read_score_csv, score_csv};
use gicisad::jigsaw::extract_subgraphs;
use gicisad::numerics::checkpoint::Checkpoint;
use gicisad::pipeline::{
    fuse_actors, history_csv, score_dataset, train_model, Aggregation, Model, TrainConfig,
};
use gicisad::pose::{
    generate_synthetic, load_pose_dataset, read_labels, write_labels, write_poses, SyntheticSpec,
    LABELS_FILE, POSES_FILE,
};
use gicisad::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "gicisad", version, about = "Skeleton-video anomaly detection with graph-conditioned diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pose dataset with labels.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-epoch loss history as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score every window and write frame-level scores as CSV.
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        agg: Option<Aggregation>,
        /// Generations per window.
        #[arg(long = "M", alias = "m")]
        generations: Option<usize>,
        /// Score windows one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Frame-level AUROC plus score, ROC and histogram files.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a model's noise schedule, learned graph or parameter counts.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct InspectArgs {
    /// Trained checkpoint; without it (or `--config`) a fresh model with
    /// default settings is built.
    #[arg(long, conflicts_with = "config")]
    ckpt: Option<PathBuf>,
    /// Build a fresh model from this config instead of loading weights.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 17)]
    joints: usize,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    #[arg(long)]
    schedule: bool,
    #[arg(long)]
    graph: bool,
    #[arg(long)]
    params: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Train {
            config,
            data,
            out,
            history,
        } => train(&config, &data, &out, history.as_deref()),
        Command::Score {
            ckpt,
            data,
            out,
            agg,
            generations,
            sequential,
        } => score(&ckpt, &data, &out, agg, generations, !sequential),
        Command::Eval {
            scores,
            labels,
            out,
        } => eval(&scores, &labels, &out),
        Command::Inspect(args) => inspect(&args),
    }
}

fn synth(spec: &Path, out: &Path) -> Result<()> {
    let spec = SyntheticSpec::read(spec)?;
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(out)?;
    write_poses(&out.join(POSES_FILE), &data.dataset)?;
    write_labels(&out.join(LABELS_FILE), &data.labels)?;
    fs::write(out.join("spec.txt"), spec.to_kv())?;
    let spans: String = data.spans.iter().map(|s| format!("{s}\n")).collect();
    fs::write(out.join("spans.txt"), spans)?;
    println!(
        "wrote {} tracks, {} labeled frames ({} anomalous) to {}",
        data.dataset.tracks.len(),
        data.labels.len(),
        data.labels.anomalous_count(),
        out.display()
    );
    Ok(())
}

fn train(config: &Path, data: &Path, out: &Path, history: Option<&Path>) -> Result<()> {
    let config = TrainConfig::read(config)?;
    let (dataset, _) = load_pose_dataset(data, false)?;
    let (model, hist) = train_model(&dataset, &config, |e| {
        eprintln!(
            "epoch {:>4}  total {:.6}  graph {:.6}  puzzle {:.6}  diffusion {:.6}",
            e.epoch, e.total, e.graph, e.puzzle, e.diffusion
        );
    })?;
    model.to_checkpoint().write(out)?;
    if let Some(path) = history {
        fs::write(path, history_csv(&hist))?;
    }
    println!("wrote checkpoint ({} parameters) to {}", model.param_count(), out.display());
    Ok(())
}

fn load_model(ckpt: &Path) -> Result<Model<f32>> {
    Model::from_checkpoint(&Checkpoint::read(ckpt)?)
}

fn score(
    ckpt: &Path,
    data: &Path,
    out: &Path,
    agg: Option<Aggregation>,
    generations: Option<usize>,
    parallel: bool,
) -> Result<()> {
    let mut model = load_model(ckpt)?;
    if let Some(a) = agg {
        model.config.aggregation = a;
    }
    if let Some(m) = generations {
        model.config.generations = m;
        model.config.validate()?;
    }
    let (dataset, _) = load_pose_dataset(data, false)?;
    let records = score_dataset(&model, &dataset, parallel)?;
    let windows = fuse_actors(&records)?;
    let series = frame_scores(
        &windows,
        &dataset.video_spans(),
        model.config.window,
        model.config.past,
    )?;
    fs::write(out, score_csv(&series))?;
    println!(
        "scored {} windows ({} positions) into {}",
        records.len(),
        windows.len(),
        out.display()
    );
    Ok(())
}

fn eval(scores: &Path, labels: &Path, out: &Path) -> Result<()> {
    let series = read_score_csv(scores)?;
    let labels = if labels.is_dir() {
        read_labels(&labels.join(LABELS_FILE))?
    } else {
        read_labels(labels)?
    };
    let roc = auroc(&series, &labels)?;
    emit_report(&series, &labels, &roc, out)?;
    println!(
        "auroc {:.6} ({} anomalous, {} normal frames)",
        roc.auroc, roc.positives, roc.negatives
    );
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let model: Model<f32> = match (&args.ckpt, &args.config) {
        (Some(path), _) => load_model(path)?,
        (None, Some(path)) => Model::new(&TrainConfig::read(path)?, args.joints, args.channels)?,
        (None, None) => Model::new(&TrainConfig::default(), args.joints, args.channels)?,
    };
    let all = !(args.schedule || args.graph || args.params);
    if args.schedule || all {
        let s = model.schedule()?;
        println!("schedule {} T={}", model.config.schedule, s.steps());
        println!("t,beta,alpha,alpha_bar");
        for t in 1..=s.steps() {
            println!("{t},{},{},{}", s.beta(t), s.alpha(t), s.alpha_bar(t));
        }
    }
    if args.graph || all {
        let adj = model.adjacency()?;
        println!("graph K={} delta={}", adj.nodes(), adj.delta);
        for k in 0..adj.nodes() {
            let n: Vec<String> = adj.neighbors(k).iter().map(|n| n.to_string()).collect();
            println!("{k}: {}", n.join(" "));
        }
        match extract_subgraphs(adj.edges.view(), model.config.eta) {
            Ok(p) => {
                for i in 0..p.eta {
                    let m: Vec<String> = p.members(i).iter().map(|n| n.to_string()).collect();
                    println!("subgraph {i}: {}", m.join(" "));
                }
            }
            Err(Error::DegeneratePartition(m)) => println!("subgraphs: {m}"),
            Err(e) => return Err(e),
        }
    }
    if args.params || all {
        print!("{}", param_count(&model.store));
    }
    Ok(())
}
