use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sweepqa::config::RunConfig;
use sweepqa::downstream::Task;
use sweepqa::eval::{self, Corpus, DetectorSource, EvalReport};
use sweepqa::manifest::{self, Manifest, MANIFEST_FILE};
use sweepqa::par::Exec;
use sweepqa::perturb::{self, MixtureSpec};
use sweepqa::qa;
use sweepqa::report::{self, Format};
use sweepqa::synthgen;
use sweepqa::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sweepqa", version, about = "Synthetic ultrasound sweep QA pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root for corpus/, perturbed/, qa/ and reports/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// auto, sequential or parallel.
    #[arg(long, global = true)]
    exec: Option<String>,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    Synth {
        #[arg(long)]
        patients: Option<usize>,
        /// train,val,test patient counts.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Perturb the test split of the corpus.
    Perturb {
        /// p0,p1,p2,p3: probabilities of 0..3 perturbations per sweep.
        #[arg(long)]
        mixture: Option<String>,
    },
    /// Run QA detection on the perturbed test split.
    Qa {
        /// Validate an external detections file and use it instead.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Score downstream predictions and QA detections.
    Eval {
        /// Evaluate the clean corpus instead of the perturbed one.
        #[arg(long)]
        clean: bool,
        /// reference, perfect, never, or a detections JSONL file.
        #[arg(long)]
        detectors: Option<String>,
        /// reference, or a predictions JSONL file.
        #[arg(long)]
        predictions: Option<String>,
    },
    /// Simulate flag-and-reacquire on the perturbed test split.
    Loop {
        #[arg(long)]
        detectors: Option<String>,
        #[arg(long)]
        predictions: Option<String>,
        /// External predictions on the clean corpus.
        #[arg(long)]
        clean_predictions: Option<PathBuf>,
    },
    /// Render a JSON report as text or CSV.
    Report {
        /// Report to render; defaults to reports/loop.json, then reports/eval.json.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: String,
        /// Destination; defaults to the input path with a .txt or .csv extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, n: usize, what: &str) -> Result<Vec<T>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{what} needs {n} comma-separated values, got {s:?}"
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {p:?} in {what}")))
        })
        .collect()
}

fn parse_exec(s: &str) -> Result<Exec> {
    match s {
        "auto" => Ok(Exec::Auto),
        "sequential" => Ok(Exec::Sequential),
        "parallel" => Ok(Exec::Parallel),
        other => Err(Error::InvalidArgument(format!("unknown exec mode {other:?}"))),
    }
}

/// Effective configuration: defaults, then the config file, then flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) if !p.exists() => return Err(Error::InvalidArgument(format!("config file {} not found", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let g = &cli.global;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.paths.out = o.clone();
    }
    if let Some(e) = &g.exec {
        cfg.exec = parse_exec(e)?;
    }
    match &cli.command {
        Command::Synth {
            patients,
            split,
            noise_sigma,
        } => {
            if let Some(n) = patients {
                cfg.corpus.n_patients = *n;
                if split.is_none()
                    && cfg.corpus.split_sizes.0 + cfg.corpus.split_sizes.1 + cfg.corpus.split_sizes.2 != *n
                {
                    return Err(Error::InvalidArgument(format!(
                        "--patients {n} needs a matching --split train,val,test"
                    )));
                }
            }
            if let Some(s) = split {
                let v: Vec<usize> = parse_list(s, 3, "--split")?;
                cfg.corpus.split_sizes = (v[0], v[1], v[2]);
            }
            if let Some(s) = noise_sigma {
                cfg.corpus.noise_sigma = *s;
            }
        }
        Command::Perturb { mixture } => {
            if let Some(m) = mixture {
                let v: Vec<f64> = parse_list(m, 4, "--mixture")?;
                cfg.mixture = MixtureSpec::new(v[0], v[1], v[2], v[3])?;
            }
        }
        Command::Qa { detections } => {
            if let Some(d) = detections {
                cfg.sources.detectors = d.display().to_string();
            }
        }
        Command::Eval {
            detectors, predictions, ..
        } => {
            if let Some(d) = detectors {
                cfg.sources.detectors = d.clone();
            }
            if let Some(p) = predictions {
                cfg.sources.predictions = p.clone();
            }
        }
        Command::Loop {
            detectors,
            predictions,
            clean_predictions,
        } => {
            if let Some(d) = detectors {
                cfg.sources.detectors = d.clone();
            }
            if let Some(p) = predictions {
                cfg.sources.predictions = p.clone();
            }
            if let Some(c) = clean_predictions {
                cfg.sources.clean_predictions = Some(c.clone());
            }
        }
        Command::Report { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Input files must exist before anything is written.
fn require_input(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{} not found ({hint})", path.display())))
    }
}

fn load_corpus(dir: &Path, hint: &str) -> Result<(Manifest, PathBuf)> {
    let path = dir.join(MANIFEST_FILE);
    require_input(&path, hint)?;
    Ok((manifest::read_manifest(&path)?, manifest::manifest_dir(&path)))
}

fn check_external(src: &DetectorSource) -> Result<()> {
    if let DetectorSource::External { path, .. } = src {
        require_input(path, "external detections file")?;
    }
    Ok(())
}

fn check_predictions(cfg: &RunConfig) -> Result<()> {
    if let eval::PredictionSource::External { perturbed, clean } = cfg.prediction_source()? {
        require_input(&perturbed, "external predictions file")?;
        if let Some(c) = clean {
            require_input(&c, "external clean predictions file")?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_owned(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn write_report(cfg: &RunConfig, mut report: EvalReport, name: &str, quiet: bool) -> Result<()> {
    report.meta.config = Some(cfg.echo());
    let path = cfg.paths.reports_dir().join(format!("{name}.json"));
    write_file(&path, &report.to_json()?)?;
    if !quiet {
        print!("{}", report::render_text(&report));
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let quiet = cli.global.quiet;
    let exec = cfg.exec;
    let tasks = Task::ALL;
    match &cli.command {
        Command::Synth { .. } => {
            let dir = cfg.paths.corpus_dir();
            let m = synthgen::generate_corpus(&cfg.gen_params(), &dir, exec)?;
            if !quiet {
                let (tr, va, te) = m.split_counts();
                println!(
                    "{}: {} patients ({tr} train / {va} val / {te} test), {} sweep files",
                    dir.join(MANIFEST_FILE).display(),
                    m.entries.len(),
                    m.entries.len() * 6
                );
            }
        }
        Command::Perturb { .. } => {
            let (clean, base) = load_corpus(&cfg.paths.corpus_dir(), "run `sweepqa synth` first")?;
            let out = cfg.paths.perturbed_dir();
            let m = perturb::perturb_corpus(&clean, &base, &cfg.mixture, &cfg.truncation, cfg.seed, &out, exec)?;
            manifest::write_manifest(&m, &out.join(MANIFEST_FILE))?;
            if !quiet {
                let truths = eval::truths_from_manifest(&m);
                let untouched = truths.iter().filter(|t| t.plan().is_clean()).count();
                println!(
                    "{}: {} test sweeps, {untouched} left unaltered",
                    out.join(MANIFEST_FILE).display(),
                    truths.len()
                );
            }
        }
        Command::Qa { .. } => {
            let (m, base) = load_corpus(&cfg.paths.perturbed_dir(), "run `sweepqa perturb` first")?;
            let src = cfg.detector_source()?;
            check_external(&src)?;
            let corpus = Corpus {
                manifest: &m,
                base: &base,
            };
            let detections = eval::load_detections(&src, corpus, exec)?;
            let out = cfg.paths.detections_file();
            write_file(&out, &qa::detections_to_jsonl(&m.test_keys(), &detections)?)?;
            if !quiet {
                let flagged = eval::flagged_keys(&detections).len();
                println!("{}: {} sweeps, {flagged} flagged", out.display(), detections.len());
            }
        }
        Command::Eval { clean, detectors, .. } => {
            let (dir, hint) = if *clean {
                (cfg.paths.corpus_dir(), "run `sweepqa synth` first")
            } else {
                (cfg.paths.perturbed_dir(), "run `sweepqa perturb` first")
            };
            let (m, base) = load_corpus(&dir, hint)?;
            check_predictions(&cfg)?;
            // The qa stage's output is scored by default when it exists.
            let det = if *clean {
                None
            } else if detectors.is_none()
                && cfg.sources.detectors == "reference"
                && cfg.paths.detections_file().is_file()
            {
                Some(DetectorSource::External {
                    path: cfg.paths.detections_file(),
                    thresholds: cfg.qa.thresholds,
                })
            } else {
                Some(cfg.detector_source()?)
            };
            if let Some(d) = &det {
                check_external(d)?;
            }
            let corpus = Corpus {
                manifest: &m,
                base: &base,
            };
            let report = eval::evaluate_manifest(corpus, &cfg.prediction_source()?, det.as_ref(), &tasks, exec)?;
            write_report(&cfg, report, if *clean { "eval_clean" } else { "eval" }, quiet)?;
        }
        Command::Loop { detectors, .. } => {
            let (cm, cbase) = load_corpus(&cfg.paths.corpus_dir(), "run `sweepqa synth` first")?;
            let (pm, pbase) = load_corpus(&cfg.paths.perturbed_dir(), "run `sweepqa perturb` first")?;
            check_predictions(&cfg)?;
            let det =
                if detectors.is_none() && cfg.sources.detectors == "reference" && cfg.paths.detections_file().is_file()
                {
                    DetectorSource::External {
                        path: cfg.paths.detections_file(),
                        thresholds: cfg.qa.thresholds,
                    }
                } else {
                    cfg.detector_source()?
                };
            check_external(&det)?;
            let report = eval::feedback_loop(
                Corpus {
                    manifest: &cm,
                    base: &cbase,
                },
                Corpus {
                    manifest: &pm,
                    base: &pbase,
                },
                &det,
                &cfg.prediction_source()?,
                &tasks,
                exec,
            )?;
            write_report(&cfg, report, "loop", quiet)?;
        }
        Command::Report { input, format, output } => {
            let format: Format = format.parse()?;
            let input = match input {
                Some(p) => p.clone(),
                None => {
                    let dir = cfg.paths.reports_dir();
                    let lp = dir.join("loop.json");
                    if lp.is_file() {
                        lp
                    } else {
                        dir.join("eval.json")
                    }
                }
            };
            require_input(&input, "run `sweepqa eval` or `sweepqa loop` first")?;
            let text = fs::read_to_string(&input).map_err(|e| Error::Io {
                path: input.clone(),
                source: e,
            })?;
            let report = EvalReport::from_json(&text, &input.display().to_string())?;
            let rendered = report::render(&report, format);
            let out = output.clone().unwrap_or_else(|| {
                input.with_extension(match format {
                    Format::Text => "txt",
                    Format::Csv => "csv",
                })
            });
            write_file(&out, &rendered)?;
            if !quiet {
                print!("{rendered}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sweepqa: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
