use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfris::harness::{aggregate, run_sweep, run_trial, write_rows, Axis, Method, SweepSpec};
use cfris::units::dbm_to_w;
use cfris::validate::{render_table, run_suite, write_csv};
use cfris::{Result, SystemConfig};

#[derive(Parser)]
#[command(name = "cfris", version, about = "Cell-free THz downlink simulator with active-RIS precoding optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one channel draw and write result, trace and config.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ARIS")]
        method: Method,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo sweep over one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values; P_A_max in dBm.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "ARIS,PRIS,RND_ARIS")]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 10)]
        trials: u32,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suite; exits 0 only if every check passes.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Optional CSV with the check results.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write only the convergence trace of one run.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ARIS")]
        method: Method,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file (replaces the profile).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted key=value override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    pmax_dbm: Option<f64>,
    #[arg(long)]
    dac_bits: Option<u32>,
}

impl Common {
    fn config(&self) -> Result<SystemConfig> {
        let mut c = match &self.config {
            Some(p) => SystemConfig::from_toml(&fs::read_to_string(p)?)?,
            None => SystemConfig::profile(&self.profile)?,
        };
        c.apply_overrides(&self.set)?;
        if let Some(k) = self.kappa {
            c.kappa = k;
        }
        if let Some(p) = self.pmax_dbm {
            c.ap_power_max_w = dbm_to_w(p);
        }
        if let Some(b) = self.dac_bits {
            c.dac_bits = b;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

fn echo_config(c: &SystemConfig) {
    println!("# config");
    for line in c.to_toml().lines() {
        println!("#   {line}");
    }
}

fn create_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common, method, out } => {
            let cfg = common.config()?;
            echo_config(&cfg);
            let t = run_trial(&cfg, method, cfg.seed)?;
            let r = &t.row;
            println!("method        {}", method);
            println!("seed          {}", r.seed);
            println!("SE            {:.6} bit/s/Hz", r.se);
            println!("EE            {:.6} bit/s/Hz/W", r.ee);
            println!("objective     {:.6}", r.objective);
            println!("P_sys         {:.6} W", r.p_sys);
            println!("max residual  {:.3e}", r.max_residual);
            println!("outer iters   {}", r.outer_iters);
            println!("feasible      {}", r.feasible);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                write_rows(std::slice::from_ref(r), fs::File::create(dir.join("result.csv"))?)?;
                t.solution.trace.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
                fs::write(dir.join("config.toml"), cfg.to_toml())?;
            }
            println!(
                "RESULT method={} seed={} se={} ee={} objective={} p_sys={} max_residual={} outer_iters={} feasible={}",
                method, r.seed, r.se, r.ee, r.objective, r.p_sys, r.max_residual, r.outer_iters, r.feasible
            );
            Ok(true)
        }
        Command::Sweep { common, axis, values, methods, trials, threads, out } => {
            let cfg = common.config()?;
            echo_config(&cfg);
            let values: Vec<f64> =
                if axis == Axis::PowerMax { values.iter().map(|&v| dbm_to_w(v)).collect() } else { values };
            let spec = SweepSpec { axis, values, methods, trials, base_seed: cfg.seed, base: cfg, threads };
            create_parent(&out)?;
            let rows = run_sweep(&spec, Some(fs::File::create(&out)?))?;
            println!("{:>12}  {:>8}  {:>6}  {:>10}  {:>10}", axis.name(), "method", "ok", "mean SE", "mean EE");
            for a in aggregate(&rows) {
                println!(
                    "{:>12.6}  {:>8}  {:>3}/{:<2}  {:>10.5}  {:>10.5}",
                    a.value, a.method, a.feasible, a.trials, a.se_mean, a.ee_mean
                );
            }
            let failed = rows.iter().filter(|r| !r.se.is_finite()).count();
            let feasible = rows.iter().filter(|r| r.feasible).count();
            println!("RESULT rows={} feasible={} failed={} out={}", rows.len(), feasible, failed, out.display());
            Ok(true)
        }
        Command::Validate { common, out } => {
            let cfg = common.config()?;
            echo_config(&cfg);
            let checks = run_suite(&cfg, cfg.seed)?;
            print!("{}", render_table(&checks));
            if let Some(p) = out {
                create_parent(&p)?;
                write_csv(&checks, fs::File::create(&p)?)?;
            }
            let passed = checks.iter().filter(|c| c.passed()).count();
            println!("RESULT checks={} passed={} failed={}", checks.len(), passed, checks.len() - passed);
            Ok(passed == checks.len())
        }
        Command::Trace { common, method, out } => {
            let cfg = common.config()?;
            let t = run_trial(&cfg, method, cfg.seed)?;
            create_parent(&out)?;
            t.solution.trace.write_csv(fs::File::create(&out)?)?;
            println!("RESULT iterations={} out={}", t.solution.trace.rows.len(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
