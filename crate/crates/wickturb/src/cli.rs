//! Command-line experiment runner. Every subcommand writes a CSV table (with header)
//! and a JSON report into the output directory; both carry the config hash.

use crate::acceptance::{run_all, run_one, KNOWN_UNATTAINABLE};
use crate::combinatorics::{
    couple_count, enumerate_couples, enumerate_regular_couples, regular_couple_count, Couple,
};
use crate::config::ExperimentConfig;
use crate::decorations::{count_quasi_resonant, LatticeSpec};
use crate::error::{Error, Result};
use crate::kinetic::{solve, KineticState, Scheme, SolveOptions, Trajectory};
use crate::montecarlo::wick_crosscheck;
use crate::oscillatory::{convergence_sweep, SeparableTestFunction, TemporalProfile};
use crate::spectra::{spectrum_sweep, ResonantRule};
use crate::timeorder::{decay_bound, linear_extension_count, theta, OrderedForest};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "wickturb", version, about = "Diagrammatic wave-turbulence experiments")]
pub struct Cli {
    /// JSON experiment config; defaults are used for missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count (and list) couples of a given order.
    Enumerate {
        #[arg(long)]
        order: usize,
        #[arg(long)]
        regular: bool,
    },
    /// Quasi-resonant lattice counts along the L sweep.
    CountLattice {
        #[arg(long, default_value_t = 1)]
        order: usize,
        /// Serialized couple; defaults to the first couple of the given order.
        #[arg(long)]
        couple: Option<String>,
        /// Window half-width: `|Ω| ≤ window · L^{-α}` at every branching node.
        #[arg(long, default_value_t = 1.0)]
        window: f64,
    },
    /// Time-ordered kernels of random forests against their decay bound.
    Theta {
        #[arg(long, default_value_t = 4)]
        max_n: usize,
        #[arg(long, default_value_t = 20)]
        forests: usize,
        #[arg(long, default_value_t = 5.0)]
        omega_max: f64,
    },
    /// Riemann-sum convergence of the order-n oscillatory functional.
    OscConverge {
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Finite-L spectra against the kinetic limit.
    Spectrum {
        /// Serialized couple; defaults to every regular couple of order 1.
        #[arg(long)]
        couple: Option<String>,
        /// Sample wavenumbers, e.g. `--k 0,0,0 --k 0.5,0,0`.
        #[arg(long, value_delimiter = ',', num_args = 1.., action = clap::ArgAction::Append)]
        k: Vec<f64>,
    },
    /// Evolve WK (or WK-2 with `--wk2`) and save the trajectory.
    KineticSolve {
        #[arg(long)]
        wk2: bool,
        #[arg(long, value_enum, default_value_t = SchemeArg::Rk4)]
        scheme: SchemeArg,
    },
    /// Monte Carlo check of a Wick pairing against its diagrammatic target.
    McValidate {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        n_prime: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,0,0")]
        k: Vec<i64>,
        #[arg(long, value_delimiter = ',', default_value = "1,0,0")]
        k_prime: Vec<i64>,
    },
    /// Run the acceptance suite (all criteria unless `--criteria` is given).
    Acceptance {
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Rk4,
    Picard,
}

/// Result of a subcommand: what to print, what to write, and the exit status.
pub struct Artifacts {
    pub name: &'static str,
    pub summary: String,
    pub csv: String,
    pub report: Value,
    pub trajectory: Option<Trajectory>,
    pub exit_code: i32,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct Table {
    buf: String,
    hash: String,
}

impl Table {
    fn new(hash: &str, header: &[&str]) -> Self {
        let mut buf = String::from("config_hash");
        for h in header {
            buf.push(',');
            buf.push_str(h);
        }
        buf.push('\n');
        Table { buf, hash: hash.to_string() }
    }
    fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&self.hash);
        for c in cells {
            let _ = write!(self.buf, ",{}", csv_field(c));
        }
        self.buf.push('\n');
    }
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

/// Resolves the config from file and flags.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a subcommand against a validated config without touching the filesystem.
pub fn execute(cmd: &Command, cfg: &ExperimentConfig) -> Result<Artifacts> {
    let hash = cfg.hash();
    let d = cfg.d;
    let base = json!({ "config_hash": hash, "config": cfg.canonical() });
    let mut report = base;
    let mut exit_code = 0;
    let mut trajectory = None;
    let (name, summary, csv) = match cmd {
        Command::Enumerate { order, regular } => {
            let cs = if *regular { enumerate_regular_couples(*order)? } else { enumerate_couples(*order)? };
            let formula = if *regular { regular_couple_count(*order) } else { couple_count(*order) };
            let mut t = Table::new(&hash, &["index", "couple"]);
            for (i, c) in cs.iter().enumerate() {
                t.row(&[i.to_string(), c.serialize()]);
            }
            report["order"] = json!(order);
            report["regular"] = json!(regular);
            report["count"] = json!(cs.len());
            report["formula_count"] = json!(formula.to_string());
            ("enumerate", format!("{}", cs.len()), t.buf)
        }
        Command::CountLattice { order, couple, window } => {
            let c = match couple {
                Some(s) => Couple::parse(s)?,
                None => enumerate_couples(*order)?.into_iter().next().unwrap(),
            };
            let n = c.order() as f64;
            let origin = vec![0i64; d];
            let mut t = Table::new(&hash, &["couple", "l", "count", "normalized"]);
            let mut lines = Vec::new();
            for &l in &cfg.l_sweep {
                let spec = LatticeSpec::new(l, d, cfg.radius)?;
                let count = count_quasi_resonant(&c, &origin, &spec, &[(-window, *window)], l.powf(cfg.alpha))?;
                let norm = count as f64 / l.powf(n * (2.0 * d as f64 - cfg.alpha));
                t.row(&[c.serialize(), l.to_string(), count.to_string(), format!("{norm:.10e}")]);
                lines.push(format!("L={l}: {count} ({norm:.4e})"));
            }
            report["couple"] = json!(c.serialize());
            ("count-lattice", lines.join("\n"), t.buf)
        }
        Command::Theta { max_n, forests, omega_max } => {
            if *max_n == 0 {
                return Err(Error::Validation("max-n: must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut t = Table::new(&hash, &["parents", "n", "t", "omega", "re", "im", "abs", "bound", "volume"]);
            let mut worst: f64 = 0.0;
            for _ in 0..*forests {
                let n = rng.random_range(1..=*max_n);
                let g = OrderedForest::random(n, 0.3, &mut rng);
                let om: Vec<f64> = (0..n).map(|_| rng.random_range(-omega_max..=*omega_max)).collect();
                let v = theta(&g, &om)?.eval(cfg.t);
                let b = decay_bound(&g, &om, cfg.t)?;
                let vol = linear_extension_count(&g) as f64 * cfg.t.powi(n as i32) / (1..=n).product::<usize>() as f64;
                worst = worst.max((v.norm() / b).powf(1.0 / n as f64));
                let parents: Vec<String> = (0..n).map(|i| g.parent(i).map_or("-".into(), |p| p.to_string())).collect();
                t.row(&[
                    parents.join(" "),
                    n.to_string(),
                    cfg.t.to_string(),
                    join(&om, " "),
                    format!("{:.15e}", v.re),
                    format!("{:.15e}", v.im),
                    format!("{:.15e}", v.norm()),
                    format!("{b:.15e}"),
                    format!("{vol:.15e}"),
                ]);
            }
            report["fitted_constant"] = json!(worst);
            ("theta", format!("{forests} forests, fitted decay constant {worst:.4}"), t.buf)
        }
        Command::OscConverge { n } => {
            let phi = SeparableTestFunction::gaussian(*n, d, TemporalProfile::Gaussian);
            let rows = convergence_sweep(&phi, &cfg.l_sweep, cfg.alpha)?;
            let mut t = Table::new(&hash, &["l", "alpha", "value_re", "value_im", "reference", "abs_error"]);
            for r in &rows {
                t.row(&[
                    r.l.to_string(),
                    r.alpha.to_string(),
                    format!("{:.15e}", r.value_re),
                    format!("{:.15e}", r.value_im),
                    format!("{:.15e}", r.reference),
                    format!("{:.6e}", r.abs_error),
                ]);
            }
            let s = rows.iter().map(|r| format!("L={}: {:.4e}", r.l, r.abs_error)).collect::<Vec<_>>().join("\n");
            report["rows"] = json!(rows);
            ("osc-converge", s, t.buf)
        }
        Command::Spectrum { couple, k } => {
            let cs = match couple {
                Some(s) => vec![Couple::parse(s)?],
                None => enumerate_regular_couples(1)?,
            };
            let ks: Vec<Vec<f64>> = if k.is_empty() {
                vec![vec![0.0; d]]
            } else if k.len() % d != 0 {
                return Err(Error::Validation(format!("k: expected multiples of d={d} components, got {}", k.len())));
            } else {
                k.chunks(d).map(|c| c.to_vec()).collect()
            };
            let mut t = Table::new(&hash, &["couple", "l", "t", "k", "finite_l", "kinetic_limit", "abs_error"]);
            let mut lines = Vec::new();
            for c in &cs {
                for r in spectrum_sweep(c, cfg.t, &ks, &cfg.l_sweep, cfg.radius, cfg.alpha, &cfg.profile, &cfg.quadrature)? {
                    lines.push(format!("{} L={} k={:?}: {:.6e} vs {:.6e}", r.couple, r.l, r.k, r.value, r.reference));
                    t.row(&[
                        r.couple,
                        r.l.to_string(),
                        r.t.to_string(),
                        join(&r.k, " "),
                        format!("{:.15e}", r.value),
                        format!("{:.15e}", r.reference),
                        format!("{:.6e}", r.error),
                    ]);
                }
            }
            ("spectrum", lines.join("\n"), t.buf)
        }
        Command::KineticSolve { wk2, scheme } => {
            let state0 = if *wk2 {
                let z = cfg.zeta_grid.ok_or_else(|| Error::Validation("zeta_grid: required for --wk2".into()))?;
                KineticState::initial_e(cfg.k_grid, cfg.x_grid, z, &cfg.profile)?
            } else {
                KineticState::initial_w(cfg.k_grid, cfg.x_grid, &cfg.profile)?
            };
            let opts = SolveOptions {
                t_end: cfg.t,
                dt: cfg.dt,
                scheme: match scheme {
                    SchemeArg::Rk4 => Scheme::Rk4,
                    SchemeArg::Picard => Scheme::Picard,
                },
                regime: cfg.regime()?,
                ..Default::default()
            };
            let rule = ResonantRule::from_spec(d, &cfg.quadrature)?;
            let traj = solve(&state0, &opts, &rule)?;
            let mut t = Table::new(&hash, &["step", "t", "sup_norm", "mass_x0"]);
            for i in 0..traj.times.len() {
                let s = traj.state(i);
                t.row(&[i.to_string(), traj.times[i].to_string(), format!("{:.15e}", s.sup_norm()), format!("{:.15e}", s.mass()[0])]);
            }
            let last = traj.last();
            report["trajectory"] = json!({ "stem": "kinetic_trajectory", "steps": traj.times.len() });
            let s = format!("{} steps to t={}, final sup norm {:.6e}", traj.times.len() - 1, last.t, last.sup_norm());
            trajectory = Some(traj);
            ("kinetic-solve", s, t.buf)
        }
        Command::McValidate { n, n_prime, k, k_prime } => {
            let spec = LatticeSpec::new(cfg.l_sweep[0], d, cfg.radius)?;
            let rep = wick_crosscheck(*n, *n_prime, cfg.t, k, k_prime, &spec, cfg.alpha, &cfg.profile, cfg.samples, cfg.seed)?;
            let mut t = Table::new(&hash, &["n", "n_prime", "k", "k_prime", "samples", "est_re", "est_im", "stderr", "target_re", "target_im", "z"]);
            t.row(&[
                rep.n.to_string(),
                rep.n_prime.to_string(),
                join(&rep.k, " "),
                join(&rep.k_prime, " "),
                rep.samples.to_string(),
                format!("{:.15e}", rep.estimate[0]),
                format!("{:.15e}", rep.estimate[1]),
                format!("{:.15e}", rep.stderr),
                format!("{:.15e}", rep.target[0]),
                format!("{:.15e}", rep.target[1]),
                format!("{:.4}", rep.z),
            ]);
            let s = format!("estimate {:?} ± {:.3e}, target {:?}, z = {:.2}", rep.estimate, rep.stderr, rep.target, rep.z);
            report["result"] = json!(rep);
            ("mc-validate", s, t.buf)
        }
        Command::Acceptance { criteria } => {
            let outcomes = if criteria.is_empty() {
                run_all()
            } else {
                criteria
                    .iter()
                    .map(|&i| run_one(i).ok_or_else(|| Error::Validation(format!("criteria: no criterion {i}"))))
                    .collect::<Result<Vec<_>>>()?
            };
            let mut t = Table::new(&hash, &["id", "title", "pass", "detail"]);
            for o in &outcomes {
                t.row(&[o.id.to_string(), o.title.to_string(), o.pass.to_string(), o.detail.clone()]);
            }
            if outcomes.iter().any(|o| !o.pass && !KNOWN_UNATTAINABLE.contains(&o.id)) {
                exit_code = 1;
            }
            report["outcomes"] = json!(outcomes);
            report["known_unattainable"] = json!(KNOWN_UNATTAINABLE);
            let s = outcomes.iter().map(|o| o.line()).collect::<Vec<_>>().join("\n");
            ("acceptance", s, t.buf)
        }
    };
    Ok(Artifacts { name, summary, csv, report, trajectory, exit_code })
}

/// Writes `<name>.csv`, `<name>.json` (and trajectory files) into the output directory.
pub fn write_artifacts(a: &Artifacts, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if let Some(traj) = &a.trajectory {
        let stem = dir.join("kinetic_trajectory");
        traj.save(&stem, &cfg.hash())?;
        written.push(stem.with_extension("bin"));
        written.push(stem.with_extension("json"));
    }
    let csv = dir.join(format!("{}.csv", a.name));
    std::fs::write(&csv, &a.csv)?;
    let js = dir.join(format!("{}.json", a.name));
    std::fs::write(&js, serde_json::to_string_pretty(&a.report)? + "\n")?;
    written.push(csv);
    written.push(js);
    Ok(written)
}

/// Full CLI run; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = (|| -> Result<i32> {
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Validation(format!("threads: {e}")))?;
        }
        let cfg = resolve_config(&cli)?;
        let a = execute(&cli.command, &cfg)?;
        println!("{}", a.summary);
        for p in write_artifacts(&a, &cfg)? {
            eprintln!("wrote {}", p.display());
        }
        Ok(a.exit_code)
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
