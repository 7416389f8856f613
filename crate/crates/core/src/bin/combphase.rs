use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use combphase::analysis::{self, GenDataOptions, InputError, TruthModel};
use combphase::calibration::{self, CalibrationOptions};
use combphase::engine::{EngineGeometry, IvcState};
use combphase::lattice::{halton_lattice, ConditionBox};
use combphase::model::{self, ModelParams, OperatingCondition, PressureTrace, WiebeParams};
use combphase::scenario::{self, ControllerKind, Preset, ScenarioConfig};
use combphase::{Error, Result};

#[derive(Parser)]
#[command(name = "combphase", version, about = "CA50 modeling, calibration and control")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// RNG seed for noise and perturbations.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Knock-integral step (CAD).
    #[arg(long, global = true, default_value_t = 0.1)]
    step: f64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Engine geometry TOML.
    #[arg(long, global = true)]
    geometry: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit model constants to a dataset.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        /// Starting parameters (defaults to the reference set).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Randomly scale each starting constant by up to ±this fraction.
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
        /// Trace CSV with the summary block.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        soc_weight: Option<f64>,
    },
    /// SOC and CA50 at one operating condition.
    Predict {
        #[arg(long)]
        n: f64,
        #[arg(long)]
        egr: f64,
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        p_ivc: f64,
        #[arg(long)]
        t_ivc: f64,
        #[arg(long, default_value_t = combphase::control::X_R_BAR)]
        x_r: f64,
        #[arg(long, default_value_t = 0.0)]
        soi: f64,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Run a closed-loop scenario.
    Simulate {
        /// Scenario TOML; a bundled preset is used when omitted.
        config: Option<PathBuf>,
        #[arg(long, default_value = "case1")]
        preset: String,
        #[arg(long, value_enum, default_value_t = Controller::Adaptive)]
        controller: Controller,
        /// Metrics TOML; stderr when omitted.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Prediction error statistics under injected input errors.
    Sensitivity {
        /// Dataset CSV; defaults to a generated full-integral lattice.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Closed-form against integrated SOC over a lattice.
    CompareSoc {
        #[arg(long, default_value_t = ConditionBox::DEFAULT_POINTS)]
        count: usize,
        /// Hold P and T at their SOI values inside the integral.
        #[arg(long)]
        frozen: bool,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Write a synthetic calibration dataset.
    GenData {
        #[arg(long, default_value_t = ConditionBox::DEFAULT_POINTS)]
        count: usize,
        /// Gaussian noise on SOC and CA50 (CAD).
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, value_enum, default_value_t = Truth::Full)]
        truth: Truth,
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Controller {
    Adaptive,
    Feedforward,
}

#[derive(Clone, Copy, ValueEnum)]
enum Truth {
    Full,
    Simplified,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn io_err(path: Option<&Path>) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source: e,
    }
}

fn load_params(path: Option<&PathBuf>) -> Result<ModelParams> {
    path.map_or(Ok(ModelParams::REFERENCE), ModelParams::read_param_file)
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let out = c.out.as_deref();
    let geom = match &c.geometry {
        Some(p) => EngineGeometry::from_toml_file(p)?,
        None => EngineGeometry::default(),
    };
    match cli.cmd {
        Cmd::Calibrate {
            data,
            init,
            perturb,
            report,
            learning_rate,
            max_epochs,
            tolerance,
            soc_weight,
        } => {
            let dataset = calibration::load_dataset(&data, &geom)?;
            let mut start = load_params(init.as_ref())?;
            if perturb != 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
                let mut v = start.to_array();
                for x in v.iter_mut().take(8) {
                    *x *= 1.0 + rng.random_range(-perturb..=perturb);
                }
                v[8] = 1.0 + (v[8] - 1.0) * (1.0 + rng.random_range(-perturb..=perturb));
                start = ModelParams::from_array(v);
            }
            let d = CalibrationOptions::default();
            let opts = CalibrationOptions {
                learning_rate: learning_rate.unwrap_or(d.learning_rate),
                max_epochs: max_epochs.unwrap_or(d.max_epochs),
                tolerance: tolerance.unwrap_or(d.tolerance),
                soc_weight: soc_weight.unwrap_or(d.soc_weight),
                ..d
            };
            let rep = calibration::calibrate(&dataset, &start, &geom, &opts)?;
            let mut w = output(out)?;
            w.write_all(rep.final_params.to_param_string().as_bytes())
                .and_then(|_| w.flush())
                .map_err(io_err(out))?;
            if let Some(p) = &report {
                let mut f = output(Some(p))?;
                rep.write_csv(&mut f).and_then(|_| f.flush()).map_err(io_err(Some(p)))?;
            }
            eprint!("{}", rep.summary());
        }
        Cmd::Predict {
            n,
            egr,
            phi,
            p_ivc,
            t_ivc,
            x_r,
            soi,
            params,
        } => {
            let p = load_params(params.as_ref())?;
            let cond = OperatingCondition {
                n,
                egr,
                phi,
                ivc: IvcState::at_ivc(&geom, p_ivc, t_ivc),
                x_r,
                soi,
            };
            cond.validate()?;
            let (ps, ts) = model::soi_state(&cond, &p, &geom)?;
            let soc = model::soc_simplified(&cond, ps, ts, &p)?;
            let ca50 = model::ca50_predict(&cond, ps, ts, &p)?;
            let soc_full = model::soc_full_integral(&cond, &p, &geom, c.step)?;
            let wiebe = WiebeParams::default_for(p.c9);
            let bd = model::burn_duration(cond.dilution(), phi, &p, &wiebe);
            let ca50_full = model::ca50_by_wiebe_root(soc_full, bd, &wiebe)?;
            let mut w = output(out)?;
            writeln!(w, "p_soi,t_soi,soc,ca50,soc_full,burn_duration,ca50_full")
                .and_then(|_| writeln!(w, "{ps},{ts},{soc},{ca50},{soc_full},{bd},{ca50_full}"))
                .and_then(|_| w.flush())
                .map_err(io_err(out))?;
        }
        Cmd::Simulate {
            config,
            preset,
            controller,
            metrics,
        } => {
            let mut cfg = match &config {
                Some(p) => scenario::load_scenario(p)?,
                None => {
                    let kind = match controller {
                        Controller::Adaptive => ControllerKind::Adaptive,
                        Controller::Feedforward => ControllerKind::Feedforward,
                    };
                    let mut cfg = ScenarioConfig::preset(preset.parse::<Preset>()?, kind);
                    cfg.plant.geom = geom;
                    cfg
                }
            };
            cfg.plant.noise.seed = c.seed;
            cfg.plant.integration_step = c.step;
            let result = scenario::run_scenario(&cfg)?;
            let csv_path = out.map(Path::to_path_buf).or(cfg.csv_out.clone());
            scenario::write_records_csv(output(csv_path.as_deref())?, &result.records)?;
            let text = result.metrics.to_toml();
            match metrics.or(cfg.metrics_out.clone()) {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?,
                None => eprint!("{text}"),
            }
        }
        Cmd::Sensitivity { data, params } => {
            let p = load_params(params.as_ref())?;
            let dataset = match &data {
                Some(path) => calibration::load_dataset(path, &geom)?,
                None => analysis::gen_data(
                    &GenDataOptions {
                        params: p,
                        step: c.step,
                        seed: c.seed,
                        ..Default::default()
                    },
                    &geom,
                )?,
            };
            let rows = analysis::sensitivity(&dataset, &p, &geom, &InputError::standard_rows())?;
            analysis::write_sensitivity_csv(output(out)?, &rows)?;
        }
        Cmd::CompareSoc { count, frozen, params } => {
            let p = load_params(params.as_ref())?;
            let conds = halton_lattice(&ConditionBox::SIMULATION, count, &geom);
            let trace = if frozen {
                PressureTrace::FrozenAtSoi
            } else {
                PressureTrace::Polytropic
            };
            let cmp = analysis::compare_soc(&conds, &p, &geom, c.step, trace)?;
            analysis::write_comparison_csv(output(out)?, &cmp)?;
            eprintln!(
                "points = {}\nmean = {}\nstd_dev = {}\nmax_abs_error = {}\nbeyond_1_cad = {}",
                cmp.rows.len(),
                cmp.mean,
                cmp.std_dev,
                cmp.max_abs_error,
                cmp.beyond_one_cad
            );
        }
        Cmd::GenData {
            count,
            noise,
            truth,
            params,
        } => {
            let opts = GenDataOptions {
                count,
                noise,
                params: load_params(params.as_ref())?,
                truth: match truth {
                    Truth::Full => TruthModel::FullIntegral,
                    Truth::Simplified => TruthModel::Simplified,
                },
                step: c.step,
                seed: c.seed,
                ..Default::default()
            };
            let data = analysis::gen_data(&opts, &geom)?;
            calibration::write_dataset(output(out)?, &data)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
