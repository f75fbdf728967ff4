use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smtk::blocks::MaskConfig;
use smtk::geometry::{xyzl, PointCloud};
use smtk::gradcheck::suites;
use smtk::network::{AblationCase, KeyValues, Model, NetworkConfig, ParamCount, Sharing};
use smtk::train::{evaluate, toy_splits, train_loop, Metrics, TrainConfig, TrainOutputs};
use smtk::Error;

const TARGET_REDUCTION: f64 = 24.3;

#[derive(Parser, Debug)]
#[command(name = "smtk", version, about = "Soft masked point transformer toolkit")]
struct Cli {
    /// Seed for weights, data and augmentation.
    #[arg(long, global = true, env = "SMTK_SEED", default_value_t = 0)]
    seed: u64,
    /// key = value file; overrides defaults, flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a data directory, or on generated toy scenes.
    Train(TrainArgs),
    /// Score a checkpoint.
    Eval(EvalArgs),
    /// Parameter totals per module.
    ParamCount {
        #[arg(long, value_enum, default_value_t = SharingArg::Both)]
        sharing: SharingArg,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// One suite; all of them when omitted.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Train one component case on the toy task and print a CSV row.
    Ablate(AblateArgs),
    /// Write toy scenes as `.xyzl` files under `OUT/train` and `OUT/test`.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory with `train/` and `test/` subdirectories of `.xyzl` files.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Receives `log.jsonl`, `best.smtk` and `final.smtk`.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Start from these weights instead of a fresh model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `.xyzl` directory; its `test/` subdirectory is used when present.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    case: AblationCase,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Append the row to this CSV file, writing the header if it is new.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_header: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SharingArg {
    Shared,
    Unshared,
    Both,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERICAL: u8 = 3;

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn data(e: Error) -> Self {
        let code = if matches!(e, Error::Diverged { .. }) { NUMERICAL } else { DATA };
        Self::new(code, e.to_string())
    }

    fn usage(e: Error) -> Self {
        Self::new(USAGE, e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Toy-data sizes; configurable under the keys of the same name.
struct DataConfig {
    train_scenes: usize,
    test_scenes: usize,
    points: usize,
    noise: f64,
}

struct Settings {
    network: NetworkConfig,
    train: TrainConfig,
    data: DataConfig,
}

fn load_settings(cli: &Cli, network: NetworkConfig) -> Outcome<Settings> {
    let mut kv = match &cli.config {
        Some(p) => KeyValues::read(p).map_err(Failure::data)?,
        None => KeyValues::parse("", None).map_err(Failure::data)?,
    };
    let network = network.with_key_values(&mut kv).map_err(Failure::data)?;
    let train = TrainConfig {
        seed: cli.seed,
        ..TrainConfig::default()
    }
    .with_key_values(&mut kv)
    .map_err(Failure::data)?;
    let mut data = DataConfig {
        train_scenes: 200,
        test_scenes: 50,
        points: 256,
        noise: 0.005,
    };
    let take = |kv: &mut KeyValues, key: &str, slot: &mut usize| -> Outcome<()> {
        if let Some(v) = kv.take(key).map_err(Failure::data)? {
            *slot = v;
        }
        Ok(())
    };
    take(&mut kv, "train_scenes", &mut data.train_scenes)?;
    take(&mut kv, "test_scenes", &mut data.test_scenes)?;
    take(&mut kv, "points", &mut data.points)?;
    if let Some(v) = kv.take("noise").map_err(Failure::data)? {
        data.noise = v;
    }
    kv.finish().map_err(Failure::data)?;
    Ok(Settings { network, train, data })
}

fn datasets(data: Option<&Path>, settings: &Settings, seed: u64) -> Outcome<(Vec<PointCloud>, Vec<PointCloud>)> {
    match data {
        Some(dir) => Ok((
            xyzl::read_dir(&dir.join("train")).map_err(Failure::data)?,
            xyzl::read_dir(&dir.join("test")).map_err(Failure::data)?,
        )),
        None => {
            let d = &settings.data;
            toy_splits(d.train_scenes, d.test_scenes, d.points, d.noise, seed).map_err(Failure::data)
        }
    }
}

fn apply_flags(train: &mut TrainConfig, epochs: Option<usize>, lr: Option<f64>) -> Outcome<()> {
    if let Some(e) = epochs {
        train.epochs = e;
    }
    if let Some(lr) = lr {
        train.lr = lr;
    }
    if train.epochs == 0 {
        return Err(Failure::new(USAGE, "epochs must be positive"));
    }
    train.validate().map_err(Failure::usage)
}

fn create_dir(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::data(Error::io(dir, e)))
}

fn print_metrics(m: &Metrics) {
    println!("mIoU {:.4}  mAcc {:.4}  OA {:.4}", m.miou, m.macc, m.oa);
}

fn run_train(cli: &Cli, args: &TrainArgs) -> Outcome<()> {
    let mut settings = load_settings(cli, NetworkConfig::tiny(3))?;
    apply_flags(&mut settings.train, args.epochs, args.lr)?;
    let (train, test) = datasets(args.data.as_deref(), &settings, cli.seed)?;
    let mut model = match &args.checkpoint {
        Some(p) => Model::load(p).map_err(Failure::data)?,
        None => Model::build(&settings.network, cli.seed).map_err(Failure::usage)?,
    };
    create_dir(&args.out)?;
    let outputs = TrainOutputs {
        log: Some(args.out.join("log.jsonl")),
        best_checkpoint: Some(args.out.join("best.smtk")),
    };
    let log = train_loop(&mut model, &train, &test, &settings.train, &outputs).map_err(Failure::data)?;
    model.save(&args.out.join("final.smtk")).map_err(Failure::data)?;
    for r in &log.records {
        println!(
            "epoch {:>3}  loss {:.4}  mIoU {:.4}  mAcc {:.4}  OA {:.4}  lr {:.2e}",
            r.epoch, r.loss, r.miou, r.macc, r.oa, r.lr
        );
    }
    print!("best epoch {}: ", log.best_epoch);
    print_metrics(&log.best);
    Ok(())
}

fn run_eval(cli: &Cli, args: &EvalArgs) -> Outcome<()> {
    let settings = load_settings(cli, NetworkConfig::tiny(3))?;
    let model = Model::load(&args.checkpoint).map_err(Failure::data)?;
    let test = match &args.data {
        Some(dir) => {
            let split = dir.join("test");
            xyzl::read_dir(if split.is_dir() { &split } else { dir }).map_err(Failure::data)?
        }
        None => datasets(None, &settings, cli.seed)?.1,
    };
    let m = evaluate(&model, &test).map_err(Failure::data)?.metrics();
    let csv = format!("scenes,mIoU,mAcc,OA\n{},{:.6},{:.6},{:.6}\n", test.len(), m.miou, m.macc, m.oa);
    print!("{csv}");
    if let Some(p) = &args.out {
        std::fs::write(p, csv).map_err(|e| Failure::data(Error::io(p, e)))?;
    }
    Ok(())
}

fn print_count(label: &str, count: &ParamCount) {
    println!("{label}: {} parameters ({} in position encodings)", count.total, count.position_encoding);
    for (module, n) in &count.by_module {
        println!("  {module:<8} {n:>10}");
    }
}

fn run_param_count(cli: &Cli, sharing: SharingArg) -> Outcome<()> {
    let settings = load_settings(cli, NetworkConfig::default())?;
    let count = |s: Sharing| -> Outcome<ParamCount> {
        let model = Model::build(&settings.network.with_sharing(s), cli.seed).map_err(Failure::usage)?;
        Ok(model.count_parameters())
    };
    match sharing {
        SharingArg::Shared => print_count("shared", &count(Sharing::Shared)?),
        SharingArg::Unshared => print_count("unshared", &count(Sharing::Unshared)?),
        SharingArg::Both => {
            let unshared = count(Sharing::Unshared)?;
            let shared = count(Sharing::Shared)?;
            print_count("unshared", &unshared);
            print_count("shared", &shared);
            let reduction = 100.0 * (1.0 - shared.total as f64 / unshared.total as f64);
            println!("reduction: {reduction:.1}% (target {TARGET_REDUCTION}%)");
        }
    }
    Ok(())
}

fn run_gradcheck(cli: &Cli, module: Option<&str>, seeds: u64) -> Outcome<()> {
    load_settings(cli, NetworkConfig::tiny(3))?;
    let names: Vec<&str> = match module {
        Some(m) if suites::SUITES.contains(&m) => vec![m],
        Some(m) => {
            return Err(Failure::new(
                USAGE,
                format!("unknown module `{m}` (known: {})", suites::SUITES.join(", ")),
            ))
        }
        None => suites::SUITES.to_vec(),
    };
    let mut failed = 0;
    for name in names {
        for seed in cli.seed..cli.seed + seeds.max(1) {
            let report = suites::run(name, seed).map_err(Failure::data)?;
            println!("{report}");
            if !report.passed() {
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::new(NUMERICAL, format!("{failed} gradient check(s) failed")));
    }
    Ok(())
}

const ABLATION_HEADER: &str = "case,mask,position_encoding,upsample,sharing,parameters,epochs,mIoU,mAcc,OA,seconds";

fn mask_name(m: MaskConfig) -> String {
    match m {
        MaskConfig::None => "none".into(),
        MaskConfig::Soft => "soft".into(),
        MaskConfig::Hard { tau } => format!("hard:{tau}"),
    }
}

fn run_ablate(cli: &Cli, args: &AblateArgs) -> Outcome<()> {
    let mut settings = load_settings(cli, NetworkConfig::tiny(3))?;
    settings.train.epochs = 12;
    settings.train.milestones = vec![8, 10];
    apply_flags(&mut settings.train, args.epochs, args.lr)?;
    let config = args.case.apply(&settings.network);
    let (train, test) = datasets(args.data.as_deref(), &settings, cli.seed)?;
    let mut model = Model::build(&config, cli.seed).map_err(Failure::usage)?;
    let params = model.count_parameters().total;
    let start = Instant::now();
    let log = train_loop(&mut model, &train, &test, &settings.train, &TrainOutputs::default())
        .map_err(Failure::data)?;
    let last = log.last();
    let row = format!(
        "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.1}",
        args.case,
        mask_name(config.mask),
        config.encoding,
        config.upsample,
        config.sharing,
        params,
        settings.train.epochs,
        last.miou,
        last.macc,
        last.oa,
        start.elapsed().as_secs_f64()
    );
    if !args.no_header {
        println!("{ABLATION_HEADER}");
    }
    println!("{row}");
    if let Some(p) = &args.out {
        use std::io::Write;
        let fresh = !p.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .map_err(|e| Failure::data(Error::io(p, e)))?;
        let text = if fresh { format!("{ABLATION_HEADER}\n{row}\n") } else { format!("{row}\n") };
        f.write_all(text.as_bytes()).map_err(|e| Failure::data(Error::io(p, e)))?;
    }
    Ok(())
}

fn run_gen_data(
    cli: &Cli,
    out: &Path,
    train: Option<usize>,
    test: Option<usize>,
    points: Option<usize>,
) -> Outcome<()> {
    let mut settings = load_settings(cli, NetworkConfig::tiny(3))?;
    let d = &mut settings.data;
    d.train_scenes = train.unwrap_or(d.train_scenes);
    d.test_scenes = test.unwrap_or(d.test_scenes);
    d.points = points.unwrap_or(d.points);
    let (train, test) = toy_splits(d.train_scenes, d.test_scenes, d.points, d.noise, cli.seed).map_err(Failure::usage)?;
    for (split, clouds) in [("train", &train), ("test", &test)] {
        let dir = out.join(split);
        create_dir(&dir)?;
        for (i, cloud) in clouds.iter().enumerate() {
            xyzl::write(&dir.join(format!("scene_{i:04}.xyzl")), cloud).map_err(Failure::data)?;
        }
    }
    println!("wrote {} train and {} test scenes to {}", train.len(), test.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Outcome<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::new(USAGE, "--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(USAGE, e.to_string()))?;
    }
    match &cli.command {
        Command::Train(a) => run_train(cli, a),
        Command::Eval(a) => run_eval(cli, a),
        Command::ParamCount { sharing } => run_param_count(cli, *sharing),
        Command::Gradcheck { module, seeds } => run_gradcheck(cli, module.as_deref(), *seeds),
        Command::Ablate(a) => run_ablate(cli, a),
        Command::GenData {
            out,
            train,
            test,
            points,
        } => run_gen_data(cli, out, *train, *test, *points),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
