use std::path::PathBuf;
use std::process::ExitCode;

use bitplan::pipeline::{self, ActivationBits, Overrides, PipelineConfig};
use bitplan::sensitivity::Method;
use bitplan::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bitplan", version, about = "4/8-bit mixed-precision planning for small CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true, default_value = "bitplan.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    ratio: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Sensitivity weight; gamma becomes 1 - beta.
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true)]
    bits_activations: Option<ActivationBits>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled toy model and a default config into a directory.
    Init { dir: PathBuf },
    Distill,
    Sense,
    Profile,
    Plan,
    Quantize,
    Eval,
    /// Rebuild report.json / report.csv from existing artifacts.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn init(dir: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let model = bitplan::toy::bundled_model()?;
    bitplan::model::save_model(&model, &dir.join("toy_model.json"))?;
    let cfg = PipelineConfig::new("toy_model.json", "out");
    std::fs::write(dir.join("bitplan.toml"), cfg.to_toml()?)?;
    println!("wrote {}", dir.join("bitplan.toml").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Init { dir } = &cli.command {
        return init(dir);
    }
    let mut cfg = PipelineConfig::load(&cli.config)?;
    Overrides {
        out: cli.out,
        seed: cli.seed,
        ratio: cli.ratio,
        alpha: cli.alpha,
        beta: cli.beta,
        method: cli.method,
        bits_activations: cli.bits_activations,
    }
    .apply(&mut cfg)?;
    let json = |v: serde_json::Result<String>| -> Result<()> {
        println!("{}", v?);
        Ok(())
    };
    match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Distill => {
            let b = pipeline::cmd_distill(&cfg)?;
            println!("final loss {:.6e} after {} steps", b.final_loss, b.loss_history.len());
            Ok(())
        }
        Command::Sense => json(serde_json::to_string_pretty(&pipeline::cmd_sense(&cfg)?)),
        Command::Profile => {
            let p = pipeline::cmd_profile(&cfg)?;
            println!("{} rows, max tile side {}", p.rows.len(), p.bram.max_side);
            Ok(())
        }
        Command::Plan => {
            let p = pipeline::cmd_plan(&cfg)?;
            println!("bits {:?}  size {} / {} bits", p.bits(), p.result.size_bits, p.result.limit_bits);
            Ok(())
        }
        Command::Quantize => {
            let q = pipeline::cmd_quantize(&cfg)?;
            println!("quantized {} layers", q.layers().len());
            Ok(())
        }
        Command::Eval => json(serde_json::to_string_pretty(&pipeline::cmd_eval(&cfg)?)),
        Command::Report => {
            let r = pipeline::cmd_report(&cfg)?;
            println!("{}", r.canonical_sha256);
            Ok(())
        }
        Command::Pipeline => {
            let r = pipeline::cmd_pipeline(&cfg)?;
            for e in &r.eval.entries {
                println!("{:8} acc {:.3}  cycles {:>9}  size {:>8} bits", e.name, e.accuracy, e.cycles, e.size_bits);
            }
            println!("report {}", cfg.artifact(pipeline::REPORT_JSON).display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

