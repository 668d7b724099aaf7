use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bipn::dataset::{clip_seed, gen_clip, held_out_clips, Clip};
use bipn::harness::io::{
    export_clip, export_frames, import_clip, load_clip_dir, write_raw_clip, RAW_EXTENSION,
};
use bipn::harness::train::{TrainEvent, CHECKPOINT_FILE};
use bipn::harness::{
    checkpoint_dtype, evaluate_crossfade, evaluate_generator, gradcheck, sample_multimodal,
    Checkpoint, EvalReport, Generator, TrainConfig, Trainer,
};
use bipn::metrics::ColorMode;
use bipn::model::Bipn;
use bipn::{DType, Error, Result, Scalar};
use clap::{Arg, ArgAction, ArgMatches, Command};

const DEFAULT_OUTPUT: &str = "bipn-run";

fn config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value configuration file; flags override it"),
        )
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("override any configuration key"),
        );
    TrainConfig::KEYS.iter().fold(cmd, |cmd, &key| {
        cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .help_heading("Configuration"),
        )
    })
}

fn build_config(m: &ArgMatches) -> Result<TrainConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => TrainConfig::load(Path::new(p))?,
        None => TrainConfig::default(),
    };
    for key in TrainConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    if let Some(sets) = m.get_many::<String>("set") {
        for kv in sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {kv}` is not key=value")))?;
            cfg.set(k.trim(), v)?;
        }
    }
    Ok(cfg)
}

fn cli() -> Command {
    let checkpoint = Arg::new("checkpoint")
        .long("checkpoint")
        .value_name("FILE")
        .required(true);
    let color = Arg::new("color")
        .long("color")
        .value_parser(["luminance", "full"])
        .default_value("luminance")
        .help("metric colour handling");
    Command::new("bipn")
        .about("Bidirectional predictive network for long-term video interpolation")
        .subcommand_required(true)
        .subcommand(
            config_args(Command::new("gen-data").about("Write seeded moving-shapes clips"))
                .arg(Arg::new("out").long("out").value_name("DIR").required(true))
                .arg(
                    Arg::new("count")
                        .long("count")
                        .value_parser(clap::value_parser!(usize))
                        .default_value("16"),
                )
                .arg(
                    Arg::new("held-out")
                        .long("held-out")
                        .action(ArgAction::SetTrue)
                        .help("write the held-out set"),
                )
                .arg(
                    Arg::new("raw")
                        .long("raw")
                        .action(ArgAction::SetTrue)
                        .help("raw .bipn files instead of PNG directories"),
                ),
        )
        .subcommand(
            config_args(
                Command::new("train")
                    .about("Train a model; writes config, logs and checkpoint to output_dir"),
            )
            .arg(
                Arg::new("resume")
                    .long("resume")
                    .value_name("CHECKPOINT")
                    .help("continue from a checkpoint"),
            )
            .arg(
                Arg::new("log-every")
                    .long("log-every")
                    .value_parser(clap::value_parser!(u64))
                    .default_value("50")
                    .help("print every n-th loss line"),
            ),
        )
        .subcommand(
            Command::new("eval")
                .about("Evaluate a checkpoint on held-out clips")
                .arg(checkpoint.clone())
                .arg(
                    Arg::new("data")
                        .long("data")
                        .value_name("DIR")
                        .help("clip directory instead of the seeded held-out set"),
                )
                .arg(
                    Arg::new("clips")
                        .long("clips")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(color.clone())
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("FILE")
                        .help("write per-clip TSV here and key=value beside it"),
                ),
        )
        .subcommand(
            Command::new("sample")
                .about("Draw predictions for several noise seeds")
                .arg(checkpoint)
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .value_delimiter(',')
                        .value_parser(clap::value_parser!(u64))
                        .default_value("1,2"),
                )
                .arg(
                    Arg::new("clip")
                        .long("clip")
                        .value_name("DIR")
                        .help("PNG clip supplying the endpoints"),
                )
                .arg(
                    Arg::new("clip-seed")
                        .long("clip-seed")
                        .value_parser(clap::value_parser!(u64))
                        .default_value("0"),
                )
                .arg(Arg::new("out").long("out").value_name("DIR")),
        )
        .subcommand(
            config_args(
                Command::new("baseline").about("Score the cross-fade baseline on the held-out set"),
            )
            .arg(Arg::new("data").long("data").value_name("DIR"))
            .arg(color),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Finite-difference check of every layer and a small model")
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_parser(clap::value_parser!(u64))
                        .default_value("0"),
                )
                .arg(
                    Arg::new("step")
                        .long("step")
                        .value_parser(clap::value_parser!(f64))
                        .default_value("1e-4"),
                )
                .arg(
                    Arg::new("tolerance")
                        .long("tolerance")
                        .value_parser(clap::value_parser!(f64))
                        .default_value("1e-4"),
                ),
        )
}

fn color_mode(m: &ArgMatches) -> ColorMode {
    match m.get_one::<String>("color").map(String::as_str) {
        Some("full") => ColorMode::Full,
        _ => ColorMode::Luminance,
    }
}

fn gen_data(m: &ArgMatches) -> Result<()> {
    let cfg = build_config(m)?;
    let clip_cfg = cfg.clip_config();
    clip_cfg.validate()?;
    let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
    let count = *m.get_one::<usize>("count").expect("defaulted");
    std::fs::create_dir_all(&out)?;
    let clips: Vec<Clip<f32>> = if m.get_flag("held-out") {
        held_out_clips(cfg.seed, &clip_cfg, count)?
    } else {
        (0..count as u64)
            .map(|i| gen_clip(clip_seed(cfg.seed, i), &clip_cfg))
            .collect::<Result<_>>()?
    };
    for (i, clip) in clips.iter().enumerate() {
        if m.get_flag("raw") {
            write_raw_clip(
                &clip.frames,
                &out.join(format!("clip_{i:05}.{RAW_EXTENSION}")),
            )?;
        } else {
            export_clip(clip, &out.join(format!("clip_{i:05}")))?;
        }
    }
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    println!("wrote {} clips to {}", clips.len(), out.display());
    Ok(())
}

fn train_with<T: Scalar>(mut trainer: Trainer<T>, log_every: u64) -> Result<()> {
    let dir = trainer.config().output_dir.clone().expect("set by caller");
    println!("{}", bipn::losses::LossReport::TSV_HEADER);
    let mut last = None;
    trainer.run_logged_with(|ev| {
        match ev {
            TrainEvent::Loss(r) => {
                if log_every > 0 && r.iteration % log_every == 0 {
                    println!("{r}");
                }
                last = Some(r.clone());
            }
            TrainEvent::Eval { iteration, report } => {
                println!(
                    "eval\t{iteration}\tpsnr={:.4}\tssim={:.4}\tsharpdiff={:.4}",
                    report.mean_psnr(),
                    report.mean_ssim(),
                    report.mean_sharpdiff()
                );
            }
        }
        Ok(())
    })?;
    if let Some(r) = last {
        println!("final\t{r}");
    }
    println!("checkpoint: {}", dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn train(m: &ArgMatches) -> Result<()> {
    let log_every = *m.get_one::<u64>("log-every").expect("defaulted");
    if let Some(ck) = m.get_one::<String>("resume") {
        let path = Path::new(ck);
        let overrides = build_config(m)?;
        return match checkpoint_dtype(path)? {
            DType::F32 => resume::<f32>(path, m, overrides, log_every),
            DType::F64 => resume::<f64>(path, m, overrides, log_every),
        };
    }
    let mut cfg = build_config(m)?;
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(PathBuf::from(DEFAULT_OUTPUT));
    }
    match cfg.precision {
        DType::F32 => train_with(Trainer::<f32>::new(cfg)?, log_every),
        DType::F64 => train_with(Trainer::<f64>::new(cfg)?, log_every),
    }
}

/// Resumes a checkpoint; only `iterations`, `eval_every` and `output_dir`
/// may be changed on the command line.
fn resume<T: Scalar>(
    path: &Path,
    m: &ArgMatches,
    overrides: TrainConfig,
    log_every: u64,
) -> Result<()> {
    let mut ck = Checkpoint::<T>::load(path)?;
    if m.get_one::<String>("iterations").is_some() {
        ck.config.iterations = overrides.iterations;
    }
    if m.get_one::<String>("eval_every").is_some() {
        ck.config.eval_every = overrides.eval_every;
    }
    if m.get_one::<String>("output_dir").is_some() {
        ck.config.output_dir = overrides.output_dir;
    }
    if ck.config.output_dir.is_none() {
        ck.config.output_dir = Some(PathBuf::from(DEFAULT_OUTPUT));
    }
    train_with(Trainer::from_checkpoint(ck)?, log_every)
}

fn print_eval(name: &str, report: &EvalReport, out: Option<&String>) -> Result<()> {
    print!("{}", report.summary_table(name));
    println!(
        "sharpdiff={:.4} clips={}",
        report.mean_sharpdiff(),
        report.per_clip.len()
    );
    if let Some(out) = out {
        let path = PathBuf::from(out);
        std::fs::write(&path, report.to_tsv())?;
        std::fs::write(path.with_extension("txt"), report.to_key_value())?;
    }
    Ok(())
}

fn eval_with<T: Scalar>(path: &Path, m: &ArgMatches) -> Result<()> {
    let ck = Checkpoint::<T>::load(path)?;
    let cfg = &ck.config;
    let model = Bipn::new(cfg.model.clone())?;
    let clips = match m.get_one::<String>("data") {
        Some(dir) => load_clip_dir::<T>(Path::new(dir))?,
        None => {
            let n = m
                .get_one::<usize>("clips")
                .copied()
                .unwrap_or(cfg.eval_clips);
            held_out_clips(cfg.seed, &cfg.clip_config(), n)?
        }
    };
    let gen = Generator {
        model: &model,
        params: &ck.generator,
    };
    let report = evaluate_generator(&gen, &clips, cfg.batch_size, color_mode(m))?;
    let name = if cfg.model.scales == 1 {
        "BiPN (single-scale)"
    } else {
        "BiPN (multi-scale)"
    };
    print_eval(name, &report, m.get_one::<String>("out"))
}

fn eval(m: &ArgMatches) -> Result<()> {
    let path = Path::new(m.get_one::<String>("checkpoint").expect("required"));
    match checkpoint_dtype(path)? {
        DType::F32 => eval_with::<f32>(path, m),
        DType::F64 => eval_with::<f64>(path, m),
    }
}

fn sample_with<T: Scalar>(path: &Path, m: &ArgMatches) -> Result<()> {
    let ck = Checkpoint::<T>::load(path)?;
    let cfg = &ck.config;
    let model = Bipn::new(cfg.model.clone())?;
    let clip: Clip<T> = match m.get_one::<String>("clip") {
        Some(dir) => import_clip(Path::new(dir))?,
        None => gen_clip(
            *m.get_one::<u64>("clip-seed").expect("defaulted"),
            &cfg.clip_config(),
        )?,
    };
    let l = cfg.model.frames;
    let (start, _, end) = bipn::harness::eval::clip_window(&clip, l)?;
    let seeds: Vec<u64> = m
        .get_many::<u64>("seeds")
        .expect("defaulted")
        .copied()
        .collect();
    let gen = Generator {
        model: &model,
        params: &ck.generator,
    };
    let samples = sample_multimodal(&gen, start, end, &seeds)?;
    print!("{}", samples.to_tsv());
    if let Some(out) = m.get_one::<String>("out") {
        for (seed, pred) in seeds.iter().zip(&samples.predictions) {
            export_frames(pred, &Path::new(out).join(format!("seed_{seed}")))?;
        }
        println!("wrote {} samples to {out}", seeds.len());
    }
    Ok(())
}

fn sample(m: &ArgMatches) -> Result<()> {
    let path = Path::new(m.get_one::<String>("checkpoint").expect("required"));
    match checkpoint_dtype(path)? {
        DType::F32 => sample_with::<f32>(path, m),
        DType::F64 => sample_with::<f64>(path, m),
    }
}

fn baseline(m: &ArgMatches) -> Result<()> {
    let cfg = build_config(m)?;
    let clips: Vec<Clip<f64>> = match m.get_one::<String>("data") {
        Some(dir) => load_clip_dir(Path::new(dir))?,
        None => held_out_clips(cfg.seed, &cfg.clip_config(), cfg.eval_clips)?,
    };
    let report = evaluate_crossfade(&clips, cfg.model.frames, color_mode(m))?;
    print_eval("cross-fade", &report, None)
}

fn run_gradcheck(m: &ArgMatches) -> Result<bool> {
    let seed = *m.get_one::<u64>("seed").expect("defaulted");
    let step = *m.get_one::<f64>("step").expect("defaulted");
    let tol = *m.get_one::<f64>("tolerance").expect("defaulted");
    let mut ok = true;
    for (name, check) in gradcheck::gradcheck_suite(seed, step)? {
        let pass = check.passes(tol);
        ok &= pass;
        println!(
            "{:<20} max_rel_err={:.3e} checked={} skipped_kinks={} {}",
            name,
            check.max_error,
            check.checked,
            check.skipped,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let result = match matches.subcommand() {
        Some(("gen-data", m)) => gen_data(m).map(|_| true),
        Some(("train", m)) => train(m).map(|_| true),
        Some(("eval", m)) => eval(m).map(|_| true),
        Some(("sample", m)) => sample(m).map(|_| true),
        Some(("baseline", m)) => baseline(m).map(|_| true),
        Some(("gradcheck", m)) => run_gradcheck(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error[gradient]: finite-difference check exceeded tolerance");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
