use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blochdyn_cli::config::ScenarioConfig;
use blochdyn_cli::scenario::{self, ValidationFailed};
use blochdyn_cli::{manifest, reproduce};
use blochdyn_core::analysis::{extract_masses, fit_diffraction, fit_two_sine, DiffractionHints, TwoSineGuess};
use blochdyn_core::trace::VelocityTrace;

/// Forced-lattice wavepacket simulations and their measurement pipeline.
///
/// All trace files are in recoil units (t/t_r, v/v_r) unless noted; band
/// tables and profiles carry their units in the column headers.
#[derive(Parser)]
#[command(name = "blochdyn", version, about)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed override for synthetic noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the band structure of a configuration and export the table.
    Bands {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Propagate the wavepacket and export the observable traces.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit a velocity trace (CSV with t,v columns, recoil units) or a single
    /// density profile (CSV with z_m,density_per_m columns).
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Velocity trace to fit.
        #[arg(long, conflicts_with = "profile")]
        trace: Option<PathBuf>,
        /// Density profile to fit with the Gaussian comb.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a full scenario (or sweep) from a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Regenerate a built-in result bundle.
    Reproduce {
        /// One of: fig2, fig3, fig4.
        which: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err:#}");
            if err.downcast_ref::<ValidationFailed>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let mut cfg = ScenarioConfig::from_toml(&text)
        .map_err(|e| anyhow::Error::new(ValidationFailed(format!("{e:#}"))))?;
    if let Some(s) = seed {
        cfg.output.seed = s;
    }
    Ok(cfg)
}

fn require_valid(cfg: &ScenarioConfig) -> anyhow::Result<()> {
    let report = cfg.validate();
    if !report.is_ok() {
        return Err(ValidationFailed(report.render()).into());
    }
    for line in report.render().lines() {
        if line.starts_with("warning") {
            eprintln!("{line}");
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Bands { config, out } => {
            let cfg = load_config(&config, cli.seed)?;
            require_valid(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let (_, bands) = scenario::solve_scenario_bands(&cfg)?;
            let mut buf = Vec::new();
            bands.write_csv(&mut buf)?;
            let mut man = manifest::Manifest::new(&cfg.to_toml(), cfg.output.seed);
            manifest::emit(&mut man, &out, "bands.csv", &buf)?;
            man.write(&out)?;
            println!("band table written to {}", out.join("bands.csv").display());
            Ok(())
        }
        Command::Simulate { config, out } => {
            let cfg = load_config(&config, cli.seed)?;
            require_valid(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let (_, _, evo) = scenario::propagate(&cfg)?;
            let mut man = manifest::Manifest::new(&cfg.to_toml(), cfg.output.seed);
            let mut buf = Vec::new();
            evo.trace.write_csv(&mut buf)?;
            manifest::emit(&mut man, &out, "trace_direct.csv", &buf)?;
            if cfg.propagation.dump_snapshots {
                for (i, snap) in evo.snapshots.iter().enumerate() {
                    let mut buf = Vec::new();
                    snap.write_csv(&mut buf)?;
                    manifest::emit(&mut man, &out, &format!("snapshot_{i:04}.csv"), &buf)?;
                }
            }
            man.write(&out)?;
            println!("trace written to {}", out.join("trace_direct.csv").display());
            Ok(())
        }
        Command::Analyze { config, trace, profile, out } => {
            let cfg = load_config(&config, cli.seed)?;
            require_valid(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let lattice = cfg.lattice_config()?;
            let force = lattice.accel_to_force(cfg.force.accel);
            let mut man = manifest::Manifest::new(&cfg.to_toml(), cfg.output.seed);
            if let Some(path) = trace {
                let file = std::fs::File::open(&path)?;
                let trace = VelocityTrace::read_csv(std::io::BufReader::new(file))?;
                let (_, bands) = scenario::solve_scenario_bands(&cfg)?;
                let guess = TwoSineGuess {
                    omega_fast: Some(bands.gap_at(1, 0, cfg.packet.k0)),
                    omega_slow: Some(std::f64::consts::PI * force),
                };
                let window = (0.0, lattice.time_to_recoil(cfg.analysis.fit_window_us * 1e-6));
                let fit = fit_two_sine(&trace, Some(window), &guess)?;
                let masses = extract_masses(&fit, force).ok();
                let json = serde_json::json!({ "two_sine": fit, "masses": masses });
                manifest::emit(
                    &mut man,
                    &out,
                    "fits.json",
                    serde_json::to_string_pretty(&json)?.as_bytes(),
                )?;
                let mut text = String::from("t,v,model,residual\n");
                for (t, v) in trace.times.iter().zip(&trace.velocity) {
                    if *t < window.0 || *t > window.1 {
                        continue;
                    }
                    let model = fit.eval(*t);
                    text.push_str(&format!("{t},{v},{model},{}\n", v - model));
                }
                manifest::emit(&mut man, &out, "residuals.csv", text.as_bytes())?;
                println!("fit results written to {}", out.join("fits.json").display());
            } else if let Some(path) = profile {
                let file = std::fs::File::open(&path)?;
                let (headers, cols) =
                    blochdyn_core::io::read_numeric_csv(std::io::BufReader::new(file))?;
                let iz = headers.iter().position(|h| h == "z_m");
                let id = headers.iter().position(|h| h == "density_per_m");
                let (iz, id) = match (iz, id) {
                    (Some(a), Some(b)) => (a, b),
                    _ => anyhow::bail!("profile CSV needs z_m and density_per_m columns"),
                };
                let prof = blochdyn_core::propagator::Profile {
                    positions: cols[iz].clone(),
                    density: cols[id].clone(),
                    mass_in_window: None,
                };
                let hints = DiffractionHints {
                    spacing: Some(2.0 * lattice.recoil_velocity() * cfg.tof.time_ms * 1e-3),
                    ..Default::default()
                };
                let fit = fit_diffraction(&prof, cfg.tof.n_peaks, &hints)?;
                manifest::emit(
                    &mut man,
                    &out,
                    "diffraction_fit.json",
                    serde_json::to_string_pretty(&fit)?.as_bytes(),
                )?;
                println!(
                    "diffraction fit written to {}",
                    out.join("diffraction_fit.json").display()
                );
            } else {
                anyhow::bail!("analyze needs --trace or --profile");
            }
            man.write(&out)?;
            Ok(())
        }
        Command::Run { config, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let summaries = scenario::run_scenario(&cfg, &out)?;
            println!("{} point(s) written to {}", summaries.len(), out.display());
            Ok(())
        }
        Command::Reproduce { which, out } => {
            let seed = cli.seed.unwrap_or(1);
            match reproduce::run(&which, &out, seed)? {
                reproduce::ReproduceOutcome::Fig2(s) => {
                    println!(
                        "fig2: omega_B = {:.1} rad/s (predicted {:.1}), period {:.3} ms, h/gap = {:.1} us",
                        s.omega_bloch_fit_si,
                        s.omega_bloch_predicted_si,
                        s.bloch_period_si * 1e3,
                        s.h_over_gap_si * 1e6
                    );
                }
                reproduce::ReproduceOutcome::Fig3(s) => {
                    println!(
                        "fig3: slope = {:.4e} /(N s) vs d/hbar = {:.4e} ({:+.2}%)",
                        s.slope_si,
                        s.d_over_hbar,
                        100.0 * s.slope_relative_deviation
                    );
                }
                reproduce::ReproduceOutcome::Fig4(rows) => {
                    for r in &rows {
                        println!(
                            "fig4 s={:4}: m_dyn = {:?}, m_eff = {:?} (band {:.3}), clipped = {}",
                            r.depth, r.m_dyn, r.m_eff, r.m_band, r.window_clipped
                        );
                    }
                }
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config, cli.seed)?;
            let report = cfg.validate();
            print!("{}", report.render());
            if report.is_ok() {
                Ok(())
            } else {
                Err(ValidationFailed(report.render()).into())
            }
        }
    }
}
