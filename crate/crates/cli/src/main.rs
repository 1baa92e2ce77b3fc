use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use log::{info, warn};
use tkan::data::{
    format_manifest, load_manifest, load_silhouette_dir, synth_gait_dataset, ClipData, ClipRecord, DatasetSplit,
    GrayFrame, LoadOptions, ManifestEntry, SynthConfig, STANDARD_TRAIN_MAX_ID,
};
use tkan::data::frame::write_pgm;
use tkan::gradcheck;
use tkan::train::eval::{comparison_table_from_ranks, parse_report_ranks};
use tkan::train::{
    embed_all, evaluate_embeddings, load_checkpoint, train, EvalProtocol, EvalReport, HeadKind, RunFiles, TrainConfig,
};
use tkan::{Error, Result};

const TRAIN_MAX_ID: &str = "train_max_id";

fn config_args() -> Vec<Arg> {
    let mut args = vec![
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("key = value file; flags override its values"),
        Arg::new("preset")
            .long("preset")
            .value_parser(["full", "desk"])
            .default_value("full")
            .help("starting values before the config file and flags"),
        Arg::new(TRAIN_MAX_ID)
            .long("train-max-id")
            .value_name("ID")
            .value_parser(value_parser!(u32))
            .help("highest subject id used for training [default: 74]"),
    ];
    for (key, default) in TrainConfig::default().entries() {
        args.push(
            Arg::new(key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .help(format!("training field `{key}` (full preset: {default})")),
        );
    }
    args
}

fn data_arg() -> Arg {
    Arg::new("data")
        .long("data")
        .value_name("PATH")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help("silhouette tree root/<subject>/<cond>-<seq>/<view>/ or a manifest file")
}

fn checkpoint_arg() -> Arg {
    Arg::new("checkpoint").long("checkpoint").value_name("FILE").required(true).value_parser(value_parser!(PathBuf))
}

fn no_exclusion_arg() -> Arg {
    Arg::new("same-view")
        .long("keep-same-view")
        .action(ArgAction::SetTrue)
        .help("do not exclude gallery clips that share the probe's view")
}

fn cli() -> Command {
    Command::new("tkan")
        .about("Temporal KAN gait identification: training, evaluation and synthetic data")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("train")
                .about("Train one model and evaluate it on the held-out subjects")
                .arg(data_arg())
                .arg(Arg::new("out").long("out").value_name("DIR").required(true).value_parser(value_parser!(PathBuf)))
                .arg(no_exclusion_arg())
                .args(config_args()),
        )
        .subcommand(
            Command::new("evaluate")
                .about("Gallery/probe evaluation of a checkpoint on subjects it was not trained on")
                .arg(checkpoint_arg())
                .arg(data_arg())
                .arg(Arg::new("out").long("out").value_name("FILE").value_parser(value_parser!(PathBuf)))
                .arg(no_exclusion_arg()),
        )
        .subcommand(
            Command::new("embed")
                .about("Write one embedding per clip as tab-separated text")
                .arg(checkpoint_arg())
                .arg(data_arg())
                .arg(Arg::new("out").long("out").value_name("FILE").required(true).value_parser(value_parser!(PathBuf))),
        )
        .subcommand(
            Command::new("synth-data")
                .about("Render a seeded synthetic silhouette set with a manifest and config")
                .arg(Arg::new("out").long("out").value_name("DIR").required(true).value_parser(value_parser!(PathBuf)))
                .arg(Arg::new("subjects").long("subjects").default_value("10").value_parser(value_parser!(usize)))
                .arg(Arg::new("clips").long("clips").default_value("8").value_parser(value_parser!(usize)))
                .arg(Arg::new("seed").long("seed").default_value("1").value_parser(value_parser!(u64)))
                .arg(Arg::new("side").long("side").default_value("64").value_parser(value_parser!(usize)))
                .arg(Arg::new("frames").long("frames").default_value("50").value_parser(value_parser!(usize)))
                .arg(
                    Arg::new("supersample")
                        .long("supersample")
                        .help("Samples per pixel along each axis")
                        .default_value("1")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("translation")
                        .long("translation")
                        .help("Largest per-clip horizontal offset in pixels at side 64")
                        .default_value("0")
                        .value_parser(value_parser!(f64)),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Finite-difference checks of every backward pass")
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
                .arg(
                    Arg::new("suite")
                        .long("suite")
                        .action(ArgAction::Append)
                        .value_parser(gradcheck::suite_names().collect::<Vec<_>>())
                        .help("run only these suites"),
                ),
        )
        .subcommand(
            Command::new("report")
                .about("Combine evaluation reports into one comparison table")
                .arg(
                    Arg::new("reports")
                        .required(true)
                        .num_args(1..)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(Arg::new("out").long("out").value_name("FILE").value_parser(value_parser!(PathBuf))),
        )
}

/// Preset, then config file, then flags.
fn build_config(m: &ArgMatches) -> Result<(TrainConfig, u32)> {
    let mut cfg = match m.get_one::<String>("preset").map(String::as_str) {
        Some("desk") => TrainConfig::desk(),
        _ => TrainConfig::default(),
    };
    let mut max_id = STANDARD_TRAIN_MAX_ID;
    if let Some(path) = m.get_one::<PathBuf>("config") {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in cfg.apply_text(&text, true)? {
            if k == TRAIN_MAX_ID {
                max_id = v.parse().map_err(|_| Error::Config(format!("{TRAIN_MAX_ID} must be an integer, got '{v}'")))?;
            } else {
                return Err(Error::Config(format!("{}: unknown config key '{k}'", path.display())));
            }
        }
    }
    for (key, _) in TrainConfig::default().entries() {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    if let Some(&id) = m.get_one::<u32>(TRAIN_MAX_ID) {
        max_id = id;
    }
    cfg.validate()?;
    Ok((cfg, max_id))
}

fn load_data(path: &Path, frames: usize, side: usize) -> Result<Vec<ClipRecord>> {
    let opts = LoadOptions { frames, side };
    let report = if path.is_dir() { load_silhouette_dir(path, opts)? } else { load_manifest(path, opts)? };
    for w in &report.warnings {
        warn!("{w}");
    }
    for e in &report.errors {
        warn!("{e}");
    }
    if report.records.is_empty() {
        return Err(Error::Data(format!("no clips loaded from {}", path.display())));
    }
    info!("loaded {} clips from {}", report.records.len(), path.display());
    Ok(report.records)
}

fn protocol(m: &ArgMatches) -> EvalProtocol {
    EvalProtocol { exclude_same_view: !m.get_flag("same-view"), ..EvalProtocol::default() }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn rank_summary(report: &EvalReport) -> String {
    let mut s = String::from("condition\tprobes\tmissing\trank1\trank5\n");
    for c in &report.results.conditions {
        s.push_str(&format!("{}\t{}\t{}\t{:.2}\t{:.2}\n", c.name, c.probes, c.missing, c.rank1, c.rank5));
    }
    s
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let (cfg, max_id) = build_config(m)?;
    let out = m.get_one::<PathBuf>("out").expect("required");
    let records = load_data(m.get_one::<PathBuf>("data").expect("required"), cfg.frames, cfg.input_side)?;
    let split = DatasetSplit::by_subject_id(records, max_id);
    if split.train().is_empty() {
        return Err(Error::Data(format!("no clips from training subjects (ids <= {max_id})")));
    }
    let files = RunFiles::new(out)?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    let outcome = train(&cfg, split.train(), Some(&files))?;
    println!("best epoch {} of {}; checkpoint {}", outcome.best_epoch, outcome.curves.len(), files.best().display());
    if split.test().is_empty() {
        println!("no held-out subjects; evaluation skipped");
        return Ok(());
    }
    let results = evaluate_embeddings(&embed_all(&outcome.model, split.test())?, &protocol(m))?;
    let report = EvalReport { head: cfg.head, seed: cfg.seed, epoch: outcome.best_epoch, results, curves: outcome.curves, config: cfg };
    write_text(&out.join("report.txt"), &report.to_text())?;
    print!("{}", rank_summary(&report));
    Ok(())
}

fn cmd_evaluate(m: &ArgMatches) -> Result<()> {
    let (meta, model) = load_checkpoint(m.get_one::<PathBuf>("checkpoint").expect("required"))?;
    let cfg = meta.config.clone();
    let records = load_data(m.get_one::<PathBuf>("data").expect("required"), cfg.frames, cfg.input_side)?;
    let (test, seen): (Vec<ClipRecord>, Vec<ClipRecord>) =
        records.into_iter().partition(|r| !meta.labels.contains(&r.subject));
    if !seen.is_empty() {
        warn!("ignored {} clips from subjects the checkpoint was trained on", seen.len());
    }
    if test.is_empty() {
        return Err(Error::Data("every clip belongs to a training subject".into()));
    }
    let results = evaluate_embeddings(&embed_all(&model, &test)?, &protocol(m))?;
    let report = EvalReport { head: cfg.head, seed: cfg.seed, epoch: meta.epoch, results, curves: Vec::new(), config: cfg };
    match m.get_one::<PathBuf>("out") {
        Some(p) => {
            write_text(p, &report.to_text())?;
            print!("{}", rank_summary(&report));
        }
        None => print!("{}", report.to_text()),
    }
    Ok(())
}

fn cmd_embed(m: &ArgMatches) -> Result<()> {
    let (meta, model) = load_checkpoint(m.get_one::<PathBuf>("checkpoint").expect("required"))?;
    let records = load_data(m.get_one::<PathBuf>("data").expect("required"), meta.config.frames, meta.config.input_side)?;
    let mut s = String::from("subject\tcondition\tseq\tview\tembedding\n");
    for e in embed_all(&model, &records)? {
        let values: Vec<String> = e.embedding.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", e.subject, e.condition, e.seq, e.view, values.join(",")));
    }
    let out = m.get_one::<PathBuf>("out").expect("required");
    write_text(out, &s)?;
    println!("{} embeddings written to {}", records.len(), out.display());
    Ok(())
}

fn cmd_synth(m: &ArgMatches) -> Result<()> {
    let out = m.get_one::<PathBuf>("out").expect("required");
    let mut cfg = SynthConfig::new(*m.get_one("subjects").expect("default"), *m.get_one("clips").expect("default"));
    cfg.side = *m.get_one("side").expect("default");
    cfg.frames = *m.get_one("frames").expect("default");
    cfg.supersample = *m.get_one("supersample").expect("default");
    cfg.translation = *m.get_one("translation").expect("default");
    if cfg.subjects < 2 {
        return Err(Error::Config("synth-data needs at least 2 subjects".into()));
    }
    let split = synth_gait_dataset(&cfg, *m.get_one("seed").expect("default"))?;
    let max_id = split.train_subjects().into_iter().max().unwrap_or(0);
    let (train_set, test_set) = split.into_parts();
    let mut entries = Vec::new();
    for clip in train_set.iter().chain(&test_set) {
        let rel = PathBuf::from("frames")
            .join(format!("{:03}", clip.subject))
            .join(format!("{}-{:02}", clip.condition.tag(), clip.seq))
            .join(&clip.view);
        let dir = out.join(&rel);
        fs::create_dir_all(&dir)?;
        let ClipData::Frames { side, data } = &clip.data else { unreachable!("synthetic clips hold frames") };
        for (t, frame) in data.chunks(side * side).enumerate() {
            let g = GrayFrame::new(*side, *side, frame.iter().map(|&v| v as f64).collect())?;
            write_pgm(&dir.join(format!("{t:03}.pgm")), &g)?;
        }
        entries.push(ManifestEntry {
            subject: clip.subject,
            condition: clip.condition,
            seq: clip.seq,
            view: clip.view.clone(),
            path: rel,
        });
    }
    write_text(&out.join("manifest.csv"), &format_manifest(&entries))?;
    let conf = format!(
        "# synthetic set: {} subjects, {} clips each\n{TRAIN_MAX_ID} = {max_id}\ninput_side = {}\nframes = {}\n",
        cfg.subjects, cfg.clips_per_subject, cfg.side, cfg.frames
    );
    write_text(&out.join("tkan.conf"), &conf)?;
    println!("{} clips written under {}", entries.len(), out.display());
    Ok(())
}

fn cmd_gradcheck(m: &ArgMatches) -> Result<bool> {
    let seed = *m.get_one::<u64>("seed").expect("default");
    let reports = match m.get_many::<String>("suite") {
        Some(names) => names.map(|n| gradcheck::run_suite(n, seed)).collect::<Result<Vec<_>>>()?,
        None => gradcheck::run_all(seed)?,
    };
    print!("{}", gradcheck::format_reports(&reports));
    Ok(reports.iter().all(|r| r.passed()))
}

fn cmd_report(m: &ArgMatches) -> Result<()> {
    let mut rows = Vec::new();
    for path in m.get_many::<PathBuf>("reports").expect("required") {
        let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let (head, ranks) = parse_report_ranks(&text)?;
        let method = head.parse::<HeadKind>().map(|h| h.method().to_string()).unwrap_or(head);
        rows.push((method, ranks));
    }
    let table = comparison_table_from_ranks(&rows);
    if let Some(p) = m.get_one::<PathBuf>("out") {
        write_text(p, &table)?;
    }
    print!("{table}");
    Ok(())
}

fn run(m: &ArgMatches) -> Result<ExitCode> {
    match m.subcommand() {
        Some(("train", s)) => cmd_train(s)?,
        Some(("evaluate", s)) => cmd_evaluate(s)?,
        Some(("embed", s)) => cmd_embed(s)?,
        Some(("synth-data", s)) => cmd_synth(s)?,
        Some(("gradcheck", s)) => {
            if !cmd_gradcheck(s)? {
                eprintln!("error: gradient check above tolerance");
                return Ok(ExitCode::from(3));
            }
        }
        Some(("report", s)) => cmd_report(s)?,
        _ => unreachable!("subcommand required"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
