use clap::{Parser, Subcommand, ValueEnum};
use freefall::cli::serve::{ServeOptions, Server, Session};
use freefall::cli::{cmd_estimate, cmd_layout, cmd_oscillate, cmd_reconstruct, cmd_trim, CliError, Scenario};
use freefall::maneuvers::LayoutKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "freefall", version, about = "Skydiver free-fall simulation, trim and coefficient estimation")]
struct Args {
    /// Scenario TOML; built-in defaults when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory, overrides the scenario.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Measurement profile: tracking, transitions or turning.
    #[arg(long, global = true)]
    profile: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Front,
    Back,
}

#[derive(Subcommand)]
enum Cmd {
    /// Terminal speed, body pitch and knee bend of the stable pose.
    Trim,
    /// Forward simulation of a posture track with fixed coefficients.
    Reconstruct,
    /// Fit the conscious-input coefficients to a measurement track.
    Estimate,
    /// Front or back layout driven by the three inputs.
    Layout {
        #[arg(long, value_enum, default_value = "front")]
        kind: Kind,
        /// Keep pitch damping high for the whole run.
        #[arg(long)]
        hold_damping: bool,
    },
    /// Damping and shoulder sweep for pitch or roll oscillation.
    Oscillate,
    /// Live simulation over NDJSON on a local TCP port.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    let mut sc = match &args.scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    if let Some(o) = args.out {
        sc.output_dir = o;
    }
    if let Some(s) = args.seed {
        sc.seed = s;
    }
    let profile = args.profile.as_deref();
    match args.cmd {
        Cmd::Trim => {
            let r = cmd_trim(&sc)?;
            println!(
                "terminal speed {:.3} m/s, body pitch {:.2} deg, knee {:.2} deg, residual {:.2e}",
                r.terminal_speed_mps,
                r.body_pitch_deg,
                r.knee_bend_deg,
                r.residual.iter().fold(0.0f64, |a, v| a.max(v.abs()))
            );
        }
        Cmd::Reconstruct => {
            let r = cmd_reconstruct(&sc, profile)?;
            println!("{} samples written to {}", r.samples, sc.output_dir.display());
        }
        Cmd::Estimate => {
            let out = cmd_estimate(&sc, profile, args.seed)?;
            println!("{} estimates written to {}", out.estimate.t.len(), sc.output_dir.display());
            if let Some(f) = out.report.sign_agreement {
                println!("sign agreement {:.3}", f);
            }
        }
        Cmd::Layout { kind, hold_damping } => {
            let kind = match kind {
                Kind::Front => LayoutKind::Front,
                Kind::Back => LayoutKind::Back,
            };
            let (r, _) = cmd_layout(&sc, kind, hold_damping || sc.layout.hold_damping)?;
            println!(
                "rotation {:.1} deg, final level error {:.1} deg, completed {}",
                r.rotation_deg,
                r.final_level_error_deg,
                r.completed
            );
        }
        Cmd::Oscillate => {
            let r = cmd_oscillate(&sc)?;
            let seen: Vec<String> = r.regimes_seen.iter().map(|g| format!("{g:?}").to_lowercase()).collect();
            println!("regimes seen: {}", seen.join(", "));
        }
        Cmd::Serve { port } => {
            let plant = sc.plant()?;
            let session = Session::new(plant, sc.initial_altitude)?;
            let server = Server::bind(port).map_err(|e| CliError::Config(format!("bind {port}: {e}")))?;
            eprintln!("listening on {}", server.addr);
            server.run(session, ServeOptions::default())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
