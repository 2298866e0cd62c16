//! `fotcfm`: generate data, train, sample, evaluate, and run the oracles.
//!
//! Exit codes: 0 success, 1 failed contract or runtime error, 2 usage or
//! configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use fotcfm::config::{DataSource, RunConfig};
use fotcfm::datagen::{make_grf_dataset, simulate_kolmogorov, Mixture};
use fotcfm::evalmetrics::evaluate;
use fotcfm::grf::build_sampler;
use fotcfm::io::{manifest_text, read_fields, trace_csv, write_atomic, write_fields, Checkpoint};
use fotcfm::neuralop::OperatorParams;
use fotcfm::oracles::{check_loss_gap, check_w2_convergence, LossGapScenario, W2Scenario};
use fotcfm::rng::derive_seed;
use fotcfm::sampler::{sample, IntegratorSpec};
use fotcfm::trainer::{StepRecord, TrainObserver, Trainer};
use fotcfm::{Error, GridSpec};

#[derive(Parser)]
#[command(
    name = "fotcfm",
    version,
    about = "Functional flow matching with mini-batch OT coupling"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a field batch (Kolmogorov snapshots or GRF draws).
    Datagen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_grid)]
        grid_override: Option<(usize, usize)>,
    },
    /// Train a velocity operator on a field batch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints, trace and manifest.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw fields from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_grid)]
        grid_override: Option<(usize, usize)>,
    },
    /// Compare a generated batch with a reference batch.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Output directory for the report and curves.
        #[arg(long)]
        out: PathBuf,
        /// Recorded in the report; read from the batch manifest if absent.
        #[arg(long)]
        nfe: Option<usize>,
        /// Only use spectral bins 1..=kmax.
        #[arg(long)]
        kmax: Option<usize>,
    },
    /// Run a numerical oracle; exits 1 if its contract fails.
    Oracle {
        which: Oracle,
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    Thm2,
    Thm3,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NXxNY, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad grid size {v:?}"));
    Ok((p(a)?, p(b)?))
}

enum Failure {
    Usage(String),
    Contract(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidGrid(_) | Error::GridMismatch(..) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn override_grid(grid: GridSpec, o: Option<(usize, usize)>) -> Result<GridSpec, Failure> {
    match o {
        None => Ok(grid),
        Some((nx, ny)) => Ok(GridSpec::new(nx, ny, grid.lx, grid.ly)?),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    write_atomic(path, text.as_bytes()).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn datagen(config: &Path, out: &Path, seed: Option<u64>, grid: Option<(usize, usize)>) -> Outcome {
    let mut cfg = load_config(config)?;
    cfg.grid = override_grid(cfg.grid, grid)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    let d = cfg.datagen;
    let fields = match d.source {
        DataSource::Kolmogorov => {
            let k = cfg.kolmogorov(seed);
            k.validate()?;
            info!("simulating {} snapshots on {}", k.n_snapshots, k.grid);
            simulate_kolmogorov(&k)?
        }
        DataSource::Grf => {
            let mixture = (d.mixture_shift != 0.0).then_some(Mixture {
                weight: 0.5,
                shift_a: -d.mixture_shift,
                shift_b: d.mixture_shift,
            });
            make_grf_dataset(cfg.kernel, cfg.grid, d.snapshots, seed, mixture)?
        }
    };
    write_fields(out, &fields)?;
    let mut entries = cfg.entries();
    entries.push(("seed".into(), seed.to_string()));
    entries.push(("count".into(), fields.len().to_string()));
    entries.push(("format".into(), "FGB1 v1 f64".into()));
    write_text(&manifest_path(out), &manifest_text(&entries))?;
    info!("wrote {} fields to {}", fields.len(), out.display());
    Ok(())
}

struct FileObserver {
    dir: PathBuf,
    trace: Vec<StepRecord>,
    kernel: fotcfm::KernelSpec,
    seed: u64,
}

impl TrainObserver<OperatorParams> for FileObserver {
    fn on_step(&mut self, r: &StepRecord) -> fotcfm::Result<()> {
        if r.step.is_multiple_of(50) {
            info!("step {} epoch {} loss {:.5e} lr {:.2e}", r.step, r.epoch, r.loss, r.lr);
        }
        self.trace.push(*r);
        Ok(())
    }

    fn on_checkpoint(&mut self, t: &Trainer<OperatorParams>, epoch: usize) -> fotcfm::Result<String> {
        let path = self.dir.join(format!("epoch_{epoch:04}.fck"));
        Checkpoint {
            params: t.model.clone(),
            kernel: self.kernel,
            step: t.step as u64,
            adam: t.adam.clone(),
            seed: self.seed,
        }
        .save(&path)?;
        info!("checkpoint {}", path.display());
        Ok(path.display().to_string())
    }
}

fn train(config: &Path, data: &Path, out: &Path, seed: Option<u64>, resume: Option<&Path>) -> Outcome {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let dataset = read_fields(data)?;
    let grid = *dataset[0].grid();
    if !grid.same_as(&cfg.grid) {
        return Err(Failure::Usage(format!(
            "dataset grid {grid} does not match configured grid {}",
            cfg.grid
        )));
    }
    cfg.fno.check_grid(&grid)?;
    if dataset.len() < cfg.train.batch_size {
        return Err(Failure::Usage(format!(
            "dataset has {} fields, fewer than train.batch = {}",
            dataset.len(),
            cfg.train.batch_size
        )));
    }
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let seed = cfg.train.seed;
    let noise = build_sampler(cfg.kernel, grid, derive_seed(seed, "noise"))?;
    let model = OperatorParams::init(cfg.fno, derive_seed(seed, "init"))?;
    let mut trainer = Trainer::new(model, cfg.train)?;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        if ck.seed != seed || ck.params.config() != &cfg.fno || ck.kernel != cfg.kernel {
            return Err(Failure::Usage(format!(
                "{} was trained with a different seed, model or noise kernel",
                path.display()
            )));
        }
        trainer.model = ck.params;
        trainer.adam = ck.adam;
        trainer.step = ck.step as usize;
        info!("resuming at step {}", trainer.step);
    }
    let mut obs = FileObserver {
        dir: out.to_path_buf(),
        trace: Vec::new(),
        kernel: cfg.kernel,
        seed,
    };
    let result = trainer.train(&dataset, &noise, &mut obs);
    write_text(&out.join("trace.csv"), &trace_csv(&obs.trace))?;
    result?;
    let mut entries = cfg.entries();
    entries.push(("data".into(), data.display().to_string()));
    entries.push(("steps".into(), trainer.step.to_string()));
    write_text(&out.join("manifest.txt"), &manifest_text(&entries))?;
    Ok(())
}

fn sample_cmd(
    checkpoint: &Path,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    grid: Option<(usize, usize)>,
) -> Outcome {
    let cfg = load_config(config)?;
    let grid = override_grid(cfg.grid, grid)?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.params.config().check_grid(&grid)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    let noise = build_sampler(ck.kernel, grid, derive_seed(seed, "sample"))?;
    let spec = IntegratorSpec::new(cfg.sample.scheme, cfg.sample.steps, grid)?;
    info!("sampling {} fields on {grid} with nfe {}", cfg.sample.count, spec.nfe());
    let s = sample(&ck.params, &spec, &noise, 0, cfg.sample.count)?;
    write_fields(out, &s.fields)?;
    let mut entries = cfg.entries();
    entries.push(("checkpoint".into(), checkpoint.display().to_string()));
    entries.push(("seed".into(), seed.to_string()));
    entries.push(("sample_grid".into(), format!("{}x{}", grid.nx, grid.ny)));
    entries.push(("nfe".into(), s.nfe.to_string()));
    write_text(&manifest_path(out), &manifest_text(&entries))?;
    Ok(())
}

fn manifest_nfe(batch: &Path) -> Option<usize> {
    let text = fs::read_to_string(manifest_path(batch)).ok()?;
    text.lines()
        .find_map(|l| l.trim().strip_prefix("\"nfe\": \""))
        .and_then(|rest| rest.split('"').next())
        .and_then(|v| v.parse().ok())
}

fn eval(gen: &Path, reference: &Path, out: &Path, nfe: Option<usize>, kmax: Option<usize>) -> Outcome {
    let g = read_fields(gen)?;
    let r = read_fields(reference)?;
    let nfe = nfe.or_else(|| manifest_nfe(gen)).unwrap_or(0);
    let ev = evaluate(&g, &r, nfe, kmax)?;
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write_text(&out.join("metrics.csv"), &ev.report.to_csv())?;
    for (name, (a, b)) in [("radial", &ev.radial), ("kx", &ev.kx), ("ky", &ev.ky)] {
        write_text(&out.join(format!("{name}_gen.csv")), &a.to_csv())?;
        write_text(&out.join(format!("{name}_ref.csv")), &b.to_csv())?;
    }
    write_text(&out.join("kde.csv"), &ev.kde.to_csv())?;
    print!("{}", ev.report.to_csv());
    Ok(())
}

const LOSS_GAP_TOL: f64 = 1e-6;
const W2_TOL: f64 = 0.15;

fn oracle(which: Oracle, config: Option<&Path>, out: Option<&Path>, seed: Option<u64>) -> Outcome {
    let cfg = config.map(load_config).transpose()?;
    let seed = seed.or(cfg.as_ref().map(|c| c.train.seed)).unwrap_or(0);
    let (csv, ok, summary) = match which {
        Oracle::Thm2 => {
            let r = check_loss_gap(&LossGapScenario::canonical(seed))?;
            let mut csv = String::from("theta,fcfm,ffm,gap\n");
            println!("theta  fcfm            ffm             gap");
            for (i, (a, b)) in r.fcfm.iter().zip(&r.ffm).enumerate() {
                println!("{i:<6} {a:<15.10} {b:<15.10} {:.12}", a - b);
                csv.push_str(&format!("{i},{a},{b},{}\n", a - b));
            }
            println!(
                "constant {:.12}  spread {:.3e}  constant error {:.3e}",
                r.constant, r.spread, r.constant_error
            );
            let ok = r.passed(LOSS_GAP_TOL);
            (
                csv,
                ok,
                format!(
                    "spread {:.3e}, constant error {:.3e} (tolerance {LOSS_GAP_TOL:e})",
                    r.spread, r.constant_error
                ),
            )
        }
        Oracle::Thm3 => {
            let o = cfg.map(|c| c.oracle).unwrap_or(fotcfm::config::OracleConfig {
                dim: 2,
                shift: 2.0,
                trials: 20,
                batches: vec![8, 32, 128, 512],
            });
            let s = W2Scenario::along_first_axis(o.dim, o.shift, o.batches, o.trials, seed);
            let r = check_w2_convergence(&s)?;
            println!("batch  mean_w2    std_err    exact      rel_error");
            for row in &r.rows {
                println!(
                    "{:<6} {:<10.5} {:<10.5} {:<10.5} {:.5}",
                    row.batch, row.mean_w2, row.std_error, row.exact_w2, row.rel_error
                );
            }
            let last = r.rows.last().map(|r| r.rel_error).unwrap_or(f64::NAN);
            let (inv, sig) = r.inversions();
            let ok = r.passed(W2_TOL);
            (
                r.to_csv(),
                ok,
                format!("dim {}: final relative error {last:.4} (tolerance {W2_TOL}), {inv} increases, {sig} beyond one standard error", o.dim),
            )
        }
    };
    if let Some(p) = out {
        write_text(p, &csv)?;
    }
    if ok {
        println!("PASS {summary}");
        Ok(())
    } else {
        println!("FAIL {summary}");
        Err(Failure::Contract(summary))
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Datagen {
            config,
            out,
            seed,
            grid_override,
        } => datagen(&config, &out, seed, grid_override),
        Command::Train {
            config,
            data,
            out,
            seed,
            resume,
        } => train(&config, &data, &out, seed, resume.as_deref()),
        Command::Sample {
            checkpoint,
            config,
            out,
            seed,
            grid_override,
        } => sample_cmd(&checkpoint, &config, &out, seed, grid_override),
        Command::Eval {
            gen,
            reference,
            out,
            nfe,
            kmax,
        } => eval(&gen, &reference, &out, nfe, kmax),
        Command::Oracle {
            which,
            config,
            out,
            seed,
        } => oracle(which, config.as_deref(), out.as_deref(), seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Contract(m)) => {
            eprintln!("contract failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
