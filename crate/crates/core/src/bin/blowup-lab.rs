use blowup_lab::blowup_law::{predicted_rates, select_initial_params, time_maps, LawConstants};
use blowup_lab::harness::{
    decompose_run, fit_rate, pipeline_minimal_blowup, pipeline_nls_minus, read_lambda_table, run_matrix, simulate,
    Config, ExperimentSpec, FitOrigin, InitialData,
};
use blowup_lab::linops::{coercivity_mu, Linops};
use blowup_lab::profile::ProfileExpansion;
use blowup_lab::{LabError, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "blowup-lab",
    version,
    about = "Minimal-mass blow-up lab for critical NLS with an inverse-power potential"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    e0: Option<f64>,
    #[arg(long, global = true)]
    name: Option<String>,
    /// Output directory (defaults to $BLOWUP_LAB_OUT/<name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for Q and write its samples and norms.
    GroundState,
    /// Operator identities for L± and, optionally, the coercivity constant.
    Linops {
        /// Fail with exit code 3 if an identity residual exceeds 1e-6.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        coercivity: bool,
    },
    /// Build the profile expansion and write it as JSON.
    Profile,
    /// Law constants, initial parameters and predicted rates.
    Law,
    /// Evolve initial data, saving states for later decomposition.
    Simulate {
        #[arg(long, default_value = "profile")]
        init: String,
        #[arg(long, default_value_t = 5)]
        save_every: usize,
    },
    /// Decompose the saved states of a simulation.
    DecomposeRun {
        #[arg(long)]
        traj: PathBuf,
        /// Profile JSON; rebuilt from the configuration when absent.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Power-law fit of a modulation table column.
    FitRate {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "lambda")]
        column: String,
        /// `zero`, `fitted` or a number.
        #[arg(long, default_value = "fitted")]
        origin: String,
        #[arg(long, default_value_t = f64::NEG_INFINITY, allow_negative_numbers = true)]
        tmin: f64,
        #[arg(long, default_value_t = f64::INFINITY, allow_negative_numbers = true)]
        tmax: f64,
    },
    /// Full pipeline with report: `minimal` (NLS+) or `minus` (NLS-).
    Report {
        #[arg(long, default_value = "minimal")]
        scenario: String,
    },
    /// Minimal blow-up pipeline over a σ × E₀ grid.
    Matrix {
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.3,0.5")]
        sigmas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        e0s: Vec<f64>,
    },
}

fn config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    for kv in &c.set {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| LabError::Invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim());
    }
    if let Some(v) = c.dim {
        cfg.set("dim", v);
    }
    if let Some(v) = c.sigma {
        cfg.set("sigma", v);
    }
    if let Some(v) = c.e0 {
        cfg.set("E0", v);
    }
    if let Some(v) = &c.name {
        cfg.set("name", v);
    }
    if let Some(v) = &c.out {
        cfg.set("out", v.display());
    }
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    // A closed pipe downstream is not an error.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    let spec = ExperimentSpec::from_config(&cfg)?;
    match cli.cmd {
        Cmd::GroundState => {
            let b = spec.ground_state()?;
            std::fs::create_dir_all(&spec.out)?;
            let mut w = csv::Writer::from_path(spec.out.join("q.csv"))?;
            w.write_record(["r", "q"])?;
            for (r, q) in b.grid().nodes().iter().zip(&b.qv) {
                w.write_record([format!("{r:.17e}"), format!("{q:.17e}")])?;
            }
            w.flush()?;
            print_json(&serde_json::json!({
                "dim": b.dim(), "sigma": b.sigma, "q0": b.q0, "mass2": b.mass2, "grad2": b.grad2,
                "virial2": b.virial2, "virial4": b.virial4, "inv_sigma2": b.inv_sigma2,
                "gn_check": b.gn_check, "residual": b.residual, "energy_crit": b.energy_crit,
            }))
        }
        Cmd::Linops { check, coercivity } => {
            let b = spec.ground_state()?;
            let ops = Linops::new(&b)?;
            let rep = ops.identity_report(&b);
            let coer = if coercivity { Some(coercivity_mu(spec.dim, spec.sigma, 0.05, 25.0)?) } else { None };
            print_json(&serde_json::json!({ "identities": rep, "coercivity": coer }))?;
            if check && rep.max_operator_residual() > 1e-6 {
                return Err(LabError::numerical(
                    "linops",
                    format!("identity residual {:.3e} above 1e-6", rep.max_operator_residual()),
                ));
            }
            Ok(())
        }
        Cmd::Profile => {
            let exp = spec.expansion()?;
            std::fs::create_dir_all(&spec.out)?;
            std::fs::write(spec.out.join("profile.json"), serde_json::to_string(&exp.to_json())?)?;
            let slots: Vec<_> = exp.slots().values().collect();
            print_json(&serde_json::json!({ "beta": exp.beta(), "slots": slots }))
        }
        Cmd::Law => {
            let exp = spec.expansion()?;
            let lc = LawConstants::from_expansion(&exp, spec.e0, spec.lambda0)?;
            let s1 = time_maps(spec.t1, &lc)?;
            let (l1, b1) = select_initial_params(s1, &exp, &lc)?;
            let rates: Vec<_> = (0..=30)
                .map(|i| {
                    let t = spec.t1 * 10f64.powf(-(i as f64) / 10.0);
                    predicted_rates(t, &lc).map(|(l, b)| [t, l, b])
                })
                .collect::<Result<_>>()?;
            print_json(&serde_json::json!({
                "constants": lc, "s1": s1, "lambda1": l1, "b1": b1, "predicted": rates,
            }))
        }
        Cmd::Simulate { init, save_every } => {
            let init: InitialData = init.parse()?;
            let res = simulate(&spec, init, save_every)?;
            print_json(&serde_json::json!({
                "stop": res.stop, "steps": res.steps, "samples": res.samples.len(),
                "max_mass_drift": res.max_mass_drift, "max_energy_drift": res.max_energy_drift,
                "out": spec.out,
            }))
        }
        Cmd::DecomposeRun { traj, profile } => {
            let exp = match profile {
                Some(p) => ProfileExpansion::from_json(&serde_json::from_str(&std::fs::read_to_string(p)?)?)?,
                None => spec.expansion()?,
            };
            let out = traj.join("modulation.csv");
            let recs = decompose_run(&traj, &exp, &out)?;
            let valid = recs.iter().filter(|r| r.valid).count();
            print_json(&serde_json::json!({ "decomposed": recs.len(), "valid": valid, "table": out }))
        }
        Cmd::FitRate { table, column, origin, tmin, tmax } => {
            let (t, l, b) = read_lambda_table(&table)?;
            let origin = match origin.as_str() {
                "zero" => FitOrigin::Zero,
                "fitted" => FitOrigin::Fitted,
                v => FitOrigin::Given(
                    v.parse().map_err(|_| LabError::Invalid(format!("origin `{v}`: zero, fitted or a number")))?,
                ),
            };
            let (y, p) = match column.as_str() {
                "lambda" => (l, 1.0 / (1.0 + spec.sigma)),
                "b" => (b, (1.0 - spec.sigma) / (1.0 + spec.sigma)),
                c => return Err(LabError::Invalid(format!("column `{c}`: lambda or b"))),
            };
            print_json(&fit_rate(&t, &y, (tmin, tmax), origin, p)?)
        }
        Cmd::Report { scenario } => match scenario.as_str() {
            "minimal" => print_json(&pipeline_minimal_blowup(&spec)?),
            "minus" => print_json(&pipeline_nls_minus(&spec)?),
            s => Err(LabError::Invalid(format!("scenario `{s}`: minimal or minus"))),
        },
        Cmd::Matrix { sigmas, e0s } => {
            let entries = run_matrix(&cfg, &sigmas, &e0s, &spec.out)?;
            let summary: Vec<_> = entries
                .iter()
                .map(|e| match &e.outcome {
                    Ok(r) => serde_json::json!({
                        "name": e.name, "lambda_exponent": r.lambda_fit.exponent,
                        "predicted": r.lambda_fit.predicted_exponent, "stop": r.stop,
                    }),
                    Err(msg) => serde_json::json!({ "name": e.name, "error": msg }),
                })
                .collect();
            print_json(&summary)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        let stage = match &e {
            LabError::Numerical { stage, .. } => *stage,
            LabError::Invalid(_) | LabError::GridMismatch => "validation",
            LabError::Solvability(_) => "profile",
            LabError::Io(_) | LabError::Csv(_) | LabError::Json(_) => "io",
        };
        match &e {
            LabError::Numerical { msg, .. } => eprintln!("blowup-lab [{stage}]: {msg}"),
            _ => eprintln!("blowup-lab [{stage}]: {e}"),
        }
        std::process::exit(e.exit_code());
    }
}
