use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use neurss::pipeline::{self, compute_ate, evaluate_surface, slam_pass, write_attempts, PipelineConfig};
use neurss::sim::{default_terrain, generate_survey, read_survey, read_trajectory, write_survey, write_trajectory, SurveyPlan, TerrainSpec};
use neurss::surface::{read_checkpoint, write_checkpoint};
use neurss::train::{train, TrainConfig};
use neurss::{Error, Result};

#[derive(Parser)]
#[command(name = "neurss", version, about = "Sidescan sonar SLAM with a neural bathymetry prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey directory.
    Simulate(SimulateArgs),
    /// Fit a surface model to a survey's dead-reckoned pings.
    Train(TrainArgs),
    /// One SLAM pass over a survey with a fitted surface.
    Slam(SlamArgs),
    /// The full iterative pipeline, simulating the survey if none is given.
    Run(RunArgs),
    /// ATE and bathymetry error of a trajectory and model.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name (flat, ridge, complex) or a terrain JSON file.
    #[arg(long, default_value = "complex")]
    terrain: String,
    /// Survey plan JSON; defaults apply to missing keys.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    survey: PathBuf,
    /// TrainConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path; the loss table goes next to it as `<out>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SlamArgs {
    #[arg(long)]
    survey: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// PipelineConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Existing survey directory.
    #[arg(long, conflicts_with_all = ["plan", "terrain"])]
    survey: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    terrain: Option<String>,
    /// Seeds both the simulator and the trainer.
    #[arg(long)]
    seed: Option<u64>,
    /// PipelineConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    survey: PathBuf,
    /// Trajectory CSV; dead reckoning when omitted.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Bathymetry grid spacing, m.
    #[arg(long, default_value_t = 2.0)]
    cell: f64,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn json_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).context(path.display().to_string()))
}

fn simulate(plan: Option<&PathBuf>, terrain: &str, seed: Option<u64>) -> Result<neurss::sim::Survey> {
    let mut plan: SurveyPlan = json_or_default(plan)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    let terrain = if terrain == "complex" {
        default_terrain(&plan)
    } else if Path::new(terrain).is_file() {
        read_json::<TerrainSpec>(Path::new(terrain))?
    } else {
        TerrainSpec::preset(terrain, plan.area(), plan.landmarks, plan.seed)?
    };
    generate_survey(&terrain, &plan)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => {
            let s = simulate(a.plan.as_ref(), &a.terrain, a.seed)?;
            write_survey(&a.out, &s)?;
            println!("{} pings, {} associations", s.pings.len(), s.associations.entries.len());
        }
        Command::Train(a) => {
            let mut cfg: TrainConfig = json_or_default(a.config.as_ref())?;
            cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
            cfg.lr = a.lr.unwrap_or(cfg.lr);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let s = read_survey(&a.survey)?;
            let out = train(&s.pings, &s.line_of, &cfg, None)?;
            let mut w = create(&a.out)?;
            write_checkpoint(&mut w, &out.model)?;
            w.flush()?;
            let mut loss_path = a.out.clone().into_os_string();
            loss_path.push(".loss.csv");
            let mut csv = csv::Writer::from_writer(create(Path::new(&loss_path))?);
            csv.write_record(["epoch", "height", "intensity", "total", "lr"])?;
            for (k, e) in out.report.epochs.iter().enumerate() {
                csv.write_record([k.to_string(), e.height.to_string(), e.intensity.to_string(), e.total.to_string(), e.lr.to_string()])?;
            }
            csv.flush()?;
        }
        Command::Slam(a) => {
            let cfg: PipelineConfig = json_or_default(a.config.as_ref())?;
            cfg.validate()?;
            let s = read_survey(&a.survey)?;
            let model = read_checkpoint(&mut BufReader::new(File::open(&a.model)?))?;
            let pass = slam_pass(&s, &Arc::new(model.net), cfg.prior, &cfg)?;
            std::fs::create_dir_all(&a.out)?;
            write_trajectory(create(&a.out.join("trajectory.csv"))?, &s.times, &pass.trajectory)?;
            write_attempts(create(&a.out.join("lc_attempts.csv"))?, [(1, pass.attempts.as_slice())])?;
            let mut w = create(&a.out.join("edges.csv"))?;
            pass.graph.write_edges(&mut w)?;
            w.flush()?;
            println!(
                "ate {:.4} accepted {}/{}",
                compute_ate(&pass.trajectory, &s.gt)?,
                pass.accepted(),
                pass.attempts.len()
            );
        }
        Command::Run(a) => {
            let mut cfg: PipelineConfig = json_or_default(a.config.as_ref())?;
            let s = match &a.survey {
                Some(dir) => read_survey(dir)?,
                None => simulate(a.plan.as_ref(), a.terrain.as_deref().unwrap_or("complex"), a.seed)?,
            };
            if let Some(seed) = a.seed {
                cfg.train.seed = seed;
            }
            cfg.output = Some(a.out);
            let out = pipeline::run(&s, &cfg)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "iteration,ate,lc_accepted,bathy_mae")?;
            for r in &out.report.iterations {
                writeln!(stdout, "{},{},{},{}", r.iteration, r.ate, r.lc_accepted, r.bathy.mae)?;
            }
        }
        Command::Eval(a) => {
            let s = read_survey(&a.survey)?;
            let traj = match &a.trajectory {
                Some(p) => read_trajectory(File::open(p)?)?.1,
                None => s.dr.clone(),
            };
            println!("ate,{}", compute_ate(&traj, &s.gt)?);
            if let Some(m) = &a.model {
                let model = read_checkpoint(&mut BufReader::new(File::open(m)?))?;
                let b = evaluate_surface(&s, &model.net, a.cell)?;
                println!("bathy_mean,{}\nbathy_std,{}\nbathy_mae,{}", b.mean, b.std, b.mae);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                _ if e.is_numerical() => 3,
                Error::Config(_) => 2,
                Error::Context { ref source, .. } if matches!(**source, Error::Config(_)) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
