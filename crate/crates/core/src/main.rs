use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;

use flowception::config::Config;
use flowception::error::{Error, Result};
use flowception::eval::{context_fidelity, EvalReport};
use flowception::flops::analytic_costs;
use flowception::model::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, ConditionalOracle, FieldModel, ReferenceNet,
    ZeroRate,
};
use flowception::rng::{self, streams};
use flowception::sampler::{generate, Preset, SamplerConfig};
use flowception::seq::{FrameSeq, FrameShape};
use flowception::toyset::{gen_mixture, gen_toy, read_dataset, write_dataset, TOY_LENGTHS};
use flowception::trainer::Trainer;

#[derive(Parser)]
#[command(name = "flowception", version, about = "Variable-length generation with interleaved flow and insertion")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Toy,
    Mixture,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, value_enum, default_value = "toy")]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the reference network.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss log, one `step,insertion_nll,velocity_mse` line per entry.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate sequences.
    Sample {
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Dataset whose videos serve as conditional-oracle targets.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        w_s: Option<f64>,
        /// Force all insertion rates to zero.
        #[arg(long)]
        zero_rate: bool,
        #[arg(long, default_value = "unconditional")]
        preset: String,
        /// Dataset providing context frames for conditional presets.
        #[arg(long)]
        context: Option<PathBuf>,
    },
    /// Compare generated lengths against a reference dataset.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = TOY_LENGTHS.to_vec())]
        modes: Vec<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Attention cost table.
    Flops {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        l: u64,
        #[arg(long)]
        t_full: u64,
        #[arg(long)]
        t_ar: u64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        /// Sampler trace to add the measured column.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Config(_) | Error::InvalidArgument(_)) {
        1
    } else {
        2
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { out, count, kind, seed } => {
            let mut r = rng::stream(seed, streams::DATA);
            let videos = match kind {
                Kind::Toy => gen_toy(count, &mut r)?.into_iter().map(|v| v.frames).collect(),
                Kind::Mixture => gen_mixture(count, &mut r)?,
            };
            write_dataset(&out, &videos)?;
            println!("wrote {} videos to {}", videos.len(), out.display());
            Ok(())
        }
        Cmd::Train {
            config,
            data,
            out,
            resume,
            log,
        } => train(config.as_deref(), &data, &out, resume.as_deref(), log.as_deref()),
        Cmd::Sample {
            checkpoint,
            oracle,
            config,
            count,
            out,
            trace,
            seed,
            h,
            w_s,
            zero_rate,
            preset,
            context,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut scfg = cfg.sampler_config()?;
            if let Some(h) = h {
                scfg.h = h;
            }
            if let Some(w) = w_s {
                scfg.w_s = w;
            }
            if let Some(s) = seed {
                scfg.seed = s;
            }
            scfg.validate()?;
            let job = SampleJob {
                count,
                preset: preset.parse()?,
                context: context.as_deref().map(read_dataset).transpose()?,
                zero_rate,
                cfg: scfg,
            };
            let (videos, traces) = match (checkpoint, oracle) {
                (Some(path), _) => {
                    let ck = load_checkpoint(&path)?;
                    let shape = ck.net.arch().frame;
                    job.run(shape, |_, _| Ok(ck.net.clone()))?
                }
                (None, Some(path)) => {
                    let targets = read_dataset(&path)?;
                    let shape = targets
                        .first()
                        .ok_or_else(|| Error::invalid("oracle dataset is empty"))?
                        .shape();
                    let scheduler = job.cfg.scheduler;
                    let n_start = job.cfg.n_start;
                    job.run(shape, |i, seed| {
                        let mut r = rng::run_stream(seed, streams::TIMES, i as u64);
                        let target = targets[r.random_range(0..targets.len())].clone();
                        ConditionalOracle::sample(target, n_start, &scheduler, &mut r)
                    })?
                }
                (None, None) => return Err(Error::invalid("need --checkpoint or --oracle")),
            };
            write_dataset(&out, &videos)?;
            if let Some(tp) = trace {
                std::fs::write(&tp, traces).map_err(|e| Error::io(&tp, e))?;
            }
            println!("wrote {} samples to {}", videos.len(), out.display());
            Ok(())
        }
        Cmd::Eval {
            generated,
            reference,
            modes,
            json,
        } => {
            let g = read_dataset(&generated)?;
            let r = read_dataset(&reference)?;
            let report = EvalReport::new(&g, &r, &modes)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Corrupt(e.to_string()))?);
            } else {
                println!("samples      {}", report.generated.total);
                println!("length_tv    {:.4}", report.length_tv);
                println!("mode_mass    {:.4}", report.mode_mass);
                println!("mean_length  {:.3}", report.mean_length);
                println!("std_length   {:.3}", report.std_length);
                print!("{}", report.generated.csv());
            }
            Ok(())
        }
        Cmd::Flops {
            n,
            l,
            t_full,
            t_ar,
            alpha,
            trace,
        } => {
            let mut report = analytic_costs(n, l, t_full, t_ar, alpha)?;
            if let Some(tp) = trace {
                report = report.with_empirical(trace_cost(&tp, l)?);
            }
            print!("{}", report.table());
            Ok(())
        }
    }
}

struct SampleJob {
    count: usize,
    preset: Preset,
    context: Option<Vec<FrameSeq>>,
    zero_rate: bool,
    cfg: SamplerConfig,
}

impl SampleJob {
    fn run<M: FieldModel>(
        &self,
        shape: FrameShape,
        model_for: impl Fn(usize, u64) -> Result<M>,
    ) -> Result<(Vec<FrameSeq>, String)> {
        if self.count == 0 {
            return Err(Error::invalid("count must be at least 1"));
        }
        let mut videos = Vec::with_capacity(self.count);
        let mut traces = String::new();
        for i in 0..self.count {
            let cfg = SamplerConfig {
                seed: self.cfg.seed.wrapping_add(i as u64),
                ..self.cfg.clone()
            };
            let ctx = match (&self.preset, &self.context) {
                (Preset::Unconditional, _) => flowception::ContextSpec::none(),
                (_, None) => return Err(Error::invalid("conditional presets need --context")),
                (p, Some(src)) => {
                    let v = &src[i % src.len()];
                    let frames = match p {
                        Preset::Interpolation => vec![v.frames()[0].clone(), v.frames()[v.len() - 1].clone()],
                        _ => vec![v.frames()[0].clone()],
                    };
                    p.context(frames, cfg.n_start)?
                }
            };
            let model = model_for(i, self.cfg.seed)?;
            let (out, trace) = if self.zero_rate {
                generate(&ZeroRate(&model), shape, &cfg, &ctx)?
            } else {
                generate(&model, shape, &cfg, &ctx)?
            };
            if !ctx.is_empty() && !context_fidelity(&out, &trace, &ctx) {
                return Err(Error::Corrupt(format!("context frames altered in run {i}")));
            }
            for line in trace.to_jsonl().lines() {
                traces.push_str(&format!("{{\"run\":{i},{}\n", &line[1..]));
            }
            videos.push(out);
        }
        Ok((videos, traces))
    }
}

fn trace_cost(path: &Path, l: u64) -> Result<f64> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut per_run = std::collections::BTreeMap::<u64, f64>::new();
    for (no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::Corrupt(format!("trace line {}: {e}", no + 1)))?;
        let active = v["n_active"]
            .as_u64()
            .ok_or_else(|| Error::Corrupt(format!("trace line {} lacks n_active", no + 1)))?;
        let run = v["run"].as_u64().unwrap_or(0);
        *per_run.entry(run).or_default() += (active as f64 * l as f64).powi(2);
    }
    if per_run.is_empty() {
        return Ok(0.0);
    }
    Ok(per_run.values().sum::<f64>() / per_run.len() as f64)
}

fn train(config: Option<&Path>, data: &Path, out: &Path, resume: Option<&Path>, log: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let tcfg = cfg.train_config()?;
    let videos = read_dataset(data)?;
    let shape = videos
        .first()
        .ok_or_else(|| Error::invalid("training set is empty"))?
        .shape();
    let arch = cfg.architecture(shape)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint_expecting(p, &arch)?;
            Trainer::resume(ck.net, tcfg, ck.step)?
        }
        None => Trainer::new(ReferenceNet::new(arch, tcfg.seed)?, tcfg)?,
    };
    let log_every = cfg.train.log_every.unwrap_or(100).max(1);
    let ckpt_every = cfg.train.checkpoint_every.unwrap_or(0);
    let mut sink = match log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(resume.is_some())
                .write(true)
                .truncate(resume.is_none())
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };
    while trainer.step() < trainer.config.steps {
        let batch = trainer.sample_batch(&videos)?;
        let r = trainer.train_on(&batch)?;
        let step = trainer.step();
        if step % log_every == 0 || step == trainer.config.steps {
            let line = format!("{step},{:.6},{:.6}", r.insertion_nll, r.velocity_mse);
            match sink.as_mut() {
                Some(f) => writeln!(f, "{line}").map_err(|e| Error::io(log.unwrap_or(out), e))?,
                None => println!("{line}"),
            }
        }
        if ckpt_every > 0 && step % ckpt_every == 0 {
            save_checkpoint(out, &trainer.net, step)?;
        }
    }
    save_checkpoint(out, &trainer.net, trainer.step())?;
    Ok(())
}
