mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nested_hinf::plant::{
    example_fig1, read_controller, read_plant, write_controller, write_plant, Fig1Variant, GeneralizedPlant,
    StructuredController,
};
use nested_hinf::synth_full::{synthesize_full, SynthOptions};
use nested_hinf::synth_nested::{synthesize_structured, verify_controller};
use nested_hinf::{Error, Partition};

use sweep::SweepSpec;

const EXIT_FAIL: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "nesthinf",
    version,
    about = "H-infinity synthesis for nested interconnections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log solver progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Relative margin for strict inequalities.
    #[arg(long, default_value_t = SynthOptions::default().solver.eps_rel)]
    eps: f64,
    /// Relative distance above the optimal level used for construction.
    #[arg(long, default_value_t = SynthOptions::default().backoff)]
    backoff: f64,
}

impl SolverArgs {
    fn options(&self) -> SynthOptions {
        let mut o = SynthOptions::default();
        o.solver.eps_rel = self.eps;
        o.backoff = self.backoff;
        o
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Mode {
    Full,
    Structured,
}

#[derive(Copy, Clone, ValueEnum)]
enum Variant {
    Plus,
    Minus,
}

impl From<Variant> for Fig1Variant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Plus => Fig1Variant::Plus,
            Variant::Minus => Fig1Variant::Minus,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Design a controller and write it together with its certificate.
    Synth {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long, value_enum, default_value = "structured")]
        mode: Mode,
        /// Target level, or `auto` for the optimum plus backoff.
        #[arg(long, default_value = "auto")]
        gamma: String,
        /// Controller file; the certificate goes next to it as `*.cert.json`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Check stability, the closed-loop norm and the controller structure.
    Verify {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        #[arg(long)]
        gamma: f64,
        /// `full` skips the block-triangular structure check.
        #[arg(long, value_enum, default_value = "structured")]
        mode: Mode,
    },
    /// Optimal levels of the two-subsystem example over a grid of rho.
    Sweep {
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        rho_start: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        rho_stop: f64,
        #[arg(long, default_value_t = 0.1)]
        rho_step: f64,
        /// Comma separated subset of `full,structured`.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "full,structured")]
        mode: Vec<Mode>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// CSV file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Write the two-subsystem example plant as JSON.
    Example {
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long, allow_hyphen_values = true)]
        rho: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::Structure(_) | Error::Dimension(_) | Error::Partition(_) | Error::Wiring(_) => {
                EXIT_INPUT
            }
            Error::Infeasible(_) => EXIT_INFEASIBLE,
            _ => EXIT_NUMERICAL,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: String) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message,
    }
}

fn load_plant(path: &Path) -> Result<GeneralizedPlant, Failure> {
    read_plant(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn cert_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "controller".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.cert.json"))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn synth(plant: &Path, mode: Mode, gamma: &str, out: &Path, opts: &SynthOptions) -> Result<(), Failure> {
    let plant = load_plant(plant)?;
    let gamma = match gamma {
        "auto" => None,
        g => Some(
            g.parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| input_error(format!("--gamma: expected `auto` or a positive number, got `{g}`")))?,
        ),
    };
    let (gamma_opt, target, controller, cert) = match mode {
        Mode::Full => {
            let d = synthesize_full(&plant, gamma, opts)?;
            let cert = serde_json::to_string_pretty(&d.certificate).expect("serializable");
            (d.gamma_opt, d.gamma, d.controller, cert)
        }
        Mode::Structured => {
            let d = synthesize_structured(&plant, gamma, opts)?;
            (d.gamma_opt, d.gamma, d.controller, d.certificate.to_json())
        }
    };
    write_controller(out, &controller)?;
    write_text(&cert_path(out), &cert)?;
    let tol = if mode == Mode::Full { f64::INFINITY } else { 0.0 };
    let report = verify_controller(&plant, &controller, target, tol)?;
    if gamma.is_none() {
        println!("optimal level       {gamma_opt:.6e}");
    }
    println!("design level        {target:.6e}");
    println!("controller order    {}", controller.order());
    print_report(&report);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            message: "constructed controller failed verification".into(),
        })
    }
}

fn print_report(r: &nested_hinf::synth_nested::VerificationReport) {
    println!(
        "spectral abscissa   {:.6e}  ({})",
        r.spectral_abscissa,
        if r.stable { "stable" } else { "UNSTABLE" }
    );
    println!(
        "closed-loop norm    {:.6e}  ({})",
        r.hinf_norm,
        if r.below_gamma {
            "below gamma"
        } else {
            "NOT below gamma"
        }
    );
    if r.structure_residual.is_nan() {
        println!("structure residual  not checked");
    } else {
        println!(
            "structure residual  {:.3e}  ({})",
            r.structure_residual,
            if r.structured {
                "block lower-triangular"
            } else {
                "NOT block lower-triangular"
            }
        );
    }
    println!("result              {}", if r.passed() { "PASS" } else { "FAIL" });
}

/// A controller with a single state block is viewed with its state split
/// evenly across the subsystems, so that its structure can be judged.
fn repartition(plant: &GeneralizedPlant, mut k: StructuredController) -> StructuredController {
    let p = plant.p();
    let nk = k.order();
    let fits = k.nk_parts.as_ref().is_some_and(|parts| parts.blocks() == p);
    if !fits && nk >= p && p > 0 {
        let sizes = (0..p).map(|j| nk / p + usize::from(j < nk % p)).collect();
        k.nk_parts = Partition::new(sizes).ok();
    }
    k
}

fn verify(plant: &Path, controller: &Path, gamma: f64, mode: Mode) -> Result<(), Failure> {
    let plant = load_plant(plant)?;
    let k = read_controller(controller).map_err(|e| input_error(format!("{}: {e}", controller.display())))?;
    let k = if mode == Mode::Structured {
        repartition(&plant, k)
    } else {
        k
    };
    let tol = if mode == Mode::Full { f64::INFINITY } else { 0.0 };
    let report = verify_controller(&plant, &k, gamma, tol)?;
    print_report(&report);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAIL,
            message: "verification failed".into(),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth {
            plant,
            mode,
            gamma,
            out,
            solver,
        } => synth(&plant, mode, &gamma, &out, &solver.options()),
        Command::Verify {
            plant,
            controller,
            gamma,
            mode,
        } => verify(&plant, &controller, gamma, mode),
        Command::Sweep {
            variant,
            rho_start,
            rho_stop,
            rho_step,
            mode,
            workers,
            out,
            solver,
        } => {
            let spec = SweepSpec::new(
                variant.into(),
                (rho_start, rho_stop, rho_step),
                mode.contains(&Mode::Full),
                mode.contains(&Mode::Structured),
            )
            .map_err(input_error)?;
            let result = sweep::run(&spec, workers, &solver.options().solver).map_err(|e| Failure {
                code: EXIT_NUMERICAL,
                message: e.to_string(),
            })?;
            let csv = result.to_csv();
            match out {
                Some(path) => write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
            info!("{} of {} rows succeeded", result.succeeded(), result.rows.len());
            if result.acceptable() {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_NUMERICAL,
                    message: format!(
                        "only {} of {} grid points succeeded",
                        result.succeeded(),
                        result.rows.len()
                    ),
                })
            }
        }
        Command::Example { variant, rho, out } => {
            write_plant(&out, &example_fig1(variant.into(), rho))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
