use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use cbrw_core::asymptotics::Asymptotics;
use cbrw_core::config::{model_hash, parse_config};
use cbrw_core::lattice::{escape_probability, DEFAULT_TOL};
use cbrw_core::model::classify_regime;
use cbrw_core::montecarlo::{simulate_population, SimConfig};
use cbrw_core::verify::{Lab, Suite, SuiteReport, VerifyOptions};
use cbrw_core::volterra::{TimeField, TimeGrid, VolterraSolver};
use cbrw_core::{CbrwModel, Error, Site};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const DEFAULT_SEED: u64 = 20240602;

#[derive(Parser)]
#[command(name = "cbrw", version, about = "Catalytic branching random walk laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare E ξ with the critical threshold
    Classify(RunArgs),
    /// Asymptotic constants C_d(x, y), ρ_d and optionally J(s; y)
    Constants(RunArgs),
    /// Mean field m(t; x, y) on a time grid
    SolveM(RunArgs),
    /// Survival field q(s, t; x, y) on a time grid
    SolveQ(RunArgs),
    /// J(s; y) with its tail bound
    JIntegral(RunArgs),
    /// Monte Carlo estimates of μ(t; y)
    Simulate(RunArgs),
    /// Run a verification suite; exits with 1 when a check fails
    Verify(RunArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// Model file (TOML)
    #[arg(long)]
    model: PathBuf,
    /// Output file; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to csv for time fields and json for reports
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Time step of the coarse grid
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Time horizon
    #[arg(long)]
    horizon: Option<f64>,
    /// Starting site, e.g. 1 or 1,0
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    /// Observed site
    #[arg(long, allow_hyphen_values = true)]
    y: Option<String>,
    /// Comma-separated values of s in [0, 1]
    #[arg(long)]
    s: Option<String>,
    /// Monte Carlo replicates
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// theorem1, theorem2, theorem3, moments, mc-cross, bounds or all
    #[arg(long)]
    suite: Option<String>,
    /// Comma-separated checkpoint times for simulate
    #[arg(long)]
    times: Option<String>,
    /// Also write raw (replicate, t, y, count) records to this file
    #[arg(long)]
    raw: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Input(Error),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

struct Output {
    text: String,
    verified: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(out) => {
            if out.verified {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Input(e)) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(3)
        }
    }
}

fn error_json(e: &Error) -> String {
    let debug = format!("{e:?}");
    let kind: String = debug.chars().take_while(|c| c.is_alphanumeric()).collect();
    json!({ "error": { "kind": kind, "message": e.to_string() } }).to_string()
}

fn run(command: Command) -> Result<Output, Failure> {
    let (args, default_format) = match &command {
        Command::SolveM(a) | Command::SolveQ(a) => (a, Format::Csv),
        Command::Classify(a)
        | Command::Constants(a)
        | Command::JIntegral(a)
        | Command::Simulate(a)
        | Command::Verify(a) => (a, Format::Json),
    };
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| Failure::Usage(format!("cannot read model file {}: {e}", args.model.display())))?;
    let model = parse_config(&text).map_err(Failure::Input)?;
    let format = args.format.unwrap_or(default_format);
    if !(args.step > 0.0 && args.step.is_finite()) {
        return Err(Failure::Usage(format!("--step must be positive, got {}", args.step)));
    }
    if let Some(h) = args.horizon {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Failure::Usage(format!("--horizon must be positive, got {h}")));
        }
    }
    let ctx = Context {
        model: &model,
        args,
        format,
    };
    let output = match command {
        Command::Classify(_) => ctx.classify()?,
        Command::Constants(_) => ctx.constants()?,
        Command::SolveM(_) => ctx.solve_m()?,
        Command::SolveQ(_) => ctx.solve_q()?,
        Command::JIntegral(_) => ctx.j_integral()?,
        Command::Simulate(_) => ctx.simulate()?,
        Command::Verify(_) => ctx.verify()?,
    };
    match &args.out {
        Some(path) => std::fs::write(path, &output.text)
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{}", output.text),
    }
    Ok(output)
}

fn parse_site(text: Option<&str>, d: usize, flag: &str) -> Result<Site, Failure> {
    let Some(text) = text else {
        return Ok(Site::origin(d));
    };
    let trimmed = text.trim().trim_start_matches('(').trim_end_matches(')');
    let coords = trimmed
        .split(',')
        .map(|c| c.trim().parse::<i64>())
        .collect::<Result<Vec<i64>, _>>()
        .map_err(|e| Failure::Usage(format!("--{flag} '{text}': {e}")))?;
    if coords.len() != d {
        return Err(Failure::Usage(format!(
            "--{flag} '{text}' has {} coordinates, the model has dimension {d}",
            coords.len()
        )));
    }
    Ok(Site::new(coords))
}

fn parse_list(text: &str, flag: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| Failure::Usage(format!("--{flag} '{text}': {e}")))
}

fn parse_s(text: Option<&str>) -> Result<Vec<f64>, Failure> {
    let values = match text {
        Some(t) => parse_list(t, "s")?,
        None => vec![0.0],
    };
    if let Some(bad) = values.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Failure::Usage(format!("--s value {bad} lies outside [0, 1]")));
    }
    Ok(values)
}

fn site_csv(z: &Site) -> String {
    z.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

struct Context<'a> {
    model: &'a CbrwModel,
    args: &'a RunArgs,
    format: Format,
}

impl Context<'_> {
    fn dim(&self) -> usize {
        self.model.dimension()
    }

    fn x(&self) -> Result<Site, Failure> {
        parse_site(self.args.x.as_deref(), self.dim(), "x")
    }

    fn y(&self) -> Result<Site, Failure> {
        parse_site(self.args.y.as_deref(), self.dim(), "y")
    }

    fn comment(&self, horizon: f64, extra: &str) -> String {
        let mut line = format!(
            "# model={} step={} horizon={horizon} tol={DEFAULT_TOL:e}",
            model_hash(self.model),
            self.args.step
        );
        if !extra.is_empty() {
            line.push(' ');
            line.push_str(extra);
        }
        line.push('\n');
        line
    }

    fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            step: self.args.step,
            horizon: self.args.horizon,
            replicates: self.args.reps,
            seed: self.args.seed,
        }
    }

    fn classify(&self) -> Result<Output, Failure> {
        let esc = escape_probability(self.model.kernel());
        let report = classify_regime(self.model, esc.value);
        let text = match self.format {
            Format::Json => to_json(&report),
            Format::Csv => format!(
                "{}regime,threshold,mean_offspring,escape_probability,tolerance\n{},{},{},{},{}\n",
                self.comment(0.0, ""),
                report.regime,
                report.threshold,
                report.mean_offspring,
                report.escape_probability,
                report.tolerance
            ),
        };
        Ok(Output { text, verified: true })
    }

    fn constants(&self) -> Result<Output, Failure> {
        let (x, y) = (self.x()?, self.y()?);
        let o = Site::origin(self.dim());
        let mut pairs = vec![(o.clone(), o.clone()), (o.clone(), y.clone()), (x.clone(), o.clone()), (x.clone(), y.clone())];
        pairs.sort();
        pairs.dedup();
        let mut js = Vec::new();
        let lab;
        let report = if self.args.s.is_some() {
            lab = Lab::new(self.model, self.verify_options())?;
            for s in parse_s(self.args.s.as_deref())? {
                js.push((y.clone(), lab.j(&y, s)?));
            }
            lab.asymptotics().constants_report(&pairs, &js)?
        } else {
            Asymptotics::new(self.model)?.constants_report(&pairs, &js)?
        };
        let text = match self.format {
            Format::Json => to_json(&report),
            Format::Csv => {
                let mut out = self.comment(self.args.horizon.unwrap_or(0.0), "");
                out.push_str("name,x,y,s,value,error_estimate\n");
                for c in &report.constants {
                    let _ = writeln!(out, "C,{},{},,{},", site_csv(&c.x), site_csv(&c.y), c.value);
                }
                for (z, v) in &report.rho {
                    let _ = writeln!(out, "rho,,{},,{v},", site_csv(z));
                }
                for (z, v) in &report.gamma_tilde {
                    let _ = writeln!(out, "gamma_tilde,,{},,{v},", site_csv(z));
                }
                let _ = writeln!(out, "gamma,,,,{},", report.gamma);
                let _ = writeln!(out, "beta,,,,{},", report.beta);
                let _ = writeln!(out, "escape_probability,,,,{},", report.escape_probability);
                if let Some(g) = report.green_zero {
                    let _ = writeln!(out, "green_zero,,,,{g},");
                }
                for j in &report.j_integrals {
                    let _ = writeln!(out, "J,,{},{},{},{}", site_csv(&j.y), j.s, j.value, j.head_error + j.tail_bound);
                }
                out
            }
        };
        Ok(Output { text, verified: true })
    }

    fn grid(&self, default_horizon: f64) -> Result<TimeGrid, Failure> {
        Ok(TimeGrid::new(self.args.step, self.args.horizon.unwrap_or(default_horizon))?)
    }

    fn field_output(&self, field: &TimeField, extra: &str) -> String {
        let times = field.grid.times();
        match self.format {
            Format::Csv => {
                let mut out = self.comment(field.grid.horizon(), extra);
                out.push_str("t,value,error_estimate\n");
                for ((t, v), e) in times.iter().zip(&field.values).zip(&field.error) {
                    let _ = writeln!(out, "{t},{v:e},{e:e}");
                }
                out
            }
            Format::Json => to_json(&json!({
                "model": model_hash(self.model),
                "x": field.x,
                "y": field.y,
                "kind": format!("{:?}", field.kind),
                "step": field.grid.step(),
                "horizon": field.grid.horizon(),
                "t": times,
                "value": field.values,
                "error_estimate": field.error,
            })),
        }
    }

    fn solve_m(&self) -> Result<Output, Failure> {
        let (x, y) = (self.x()?, self.y()?);
        let solver = VolterraSolver::new(self.model, self.grid(100.0)?)?;
        let field = solver.mean(&x, &y)?;
        let text = self.field_output(&field, &format!("x={x} y={y}"));
        Ok(Output { text, verified: true })
    }

    fn solve_q(&self) -> Result<Output, Failure> {
        let (x, y) = (self.x()?, self.y()?);
        let s = parse_s(self.args.s.as_deref())?;
        if s.len() != 1 {
            return Err(Failure::Usage("solve-q takes a single value of --s".into()));
        }
        let s = s[0];
        let o = Site::origin(self.dim());
        let solver = VolterraSolver::new(self.model, self.grid(100.0)?)?;
        let m00 = solver.solve_mean_origin(&o)?;
        let m0y = solver.extend_mean(&m00, &y)?;
        let q0 = solver.solve_survival_origin(&y, s, &m00, &m0y)?;
        let field = if x.is_origin() {
            q0
        } else {
            let mx0 = solver.solve_mean_origin(&x)?;
            let mxy = solver.extend_mean(&mx0, &y)?;
            solver.extend_survival(&q0, &mx0, &mxy)?
        };
        let text = self.field_output(&field, &format!("x={x} y={y} s={s}"));
        Ok(Output { text, verified: true })
    }

    fn j_integral(&self) -> Result<Output, Failure> {
        let y = self.y()?;
        let lab = Lab::new(self.model, self.verify_options())?;
        let mut rows = Vec::new();
        for s in parse_s(self.args.s.as_deref())? {
            rows.push(lab.j(&y, s)?);
        }
        let text = match self.format {
            Format::Json => to_json(&json!({
                "model": model_hash(self.model),
                "y": y,
                "step": self.args.step,
                "horizon": lab.horizon(),
                "values": rows.iter().map(|j| json!({
                    "s": j.s,
                    "value": j.value(),
                    "head": j.head.value,
                    "head_error": j.head.error,
                    "tail_bound": j.tail_bound,
                    "tail_order": j.tail_order,
                })).collect::<Vec<_>>(),
            })),
            Format::Csv => {
                let mut out = self.comment(lab.horizon(), &format!("y={y}"));
                out.push_str("s,value,head_error,tail_bound\n");
                for j in &rows {
                    let _ = writeln!(out, "{},{},{:e},{:e}", j.s, j.value(), j.head.error, j.tail_bound);
                }
                out
            }
        };
        Ok(Output { text, verified: true })
    }

    fn simulate(&self) -> Result<Output, Failure> {
        let (x, y) = (self.x()?, self.y()?);
        let times = match (&self.args.times, self.args.horizon) {
            (Some(t), _) => parse_list(t, "times")?,
            (None, Some(h)) => vec![h],
            (None, None) => return Err(Failure::Usage("simulate needs --times or --horizon".into())),
        };
        let reps = self.args.reps.unwrap_or(10_000);
        let mut config = SimConfig::new(self.model.clone(), x.clone(), times.clone(), vec![y.clone()], reps, self.args.seed);
        config.keep_raw = self.args.raw.is_some();
        let est = simulate_population(&config)?;
        if let (Some(path), Some(raw)) = (&self.args.raw, est.raw_csv()) {
            std::fs::write(path, raw).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
        }
        let s_values = match &self.args.s {
            Some(_) => parse_s(self.args.s.as_deref())?,
            None => Vec::new(),
        };
        let mut points = Vec::new();
        let mut pgfs = Vec::new();
        for &t in &times {
            points.push(est.point(t, &y)?);
            for &s in &s_values {
                match est.conditional_pgf(t, &y, s) {
                    Ok(p) => pgfs.push(json!({ "t": t, "s": s, "value": p.value, "se": p.se, "survivors": p.survivors })),
                    Err(e @ Error::InsufficientSurvivors { .. }) => {
                        pgfs.push(json!({ "t": t, "s": s, "error": e.to_string() }))
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let text = match self.format {
            Format::Json => to_json(&json!({
                "model": model_hash(self.model),
                "seed": self.args.seed,
                "replicates": est.replicates(),
                "start": x,
                "watch": y,
                "capped": est.capped.len(),
                "points": points,
                "conditional_pgf": pgfs,
            })),
            Format::Csv => {
                let mut out = format!(
                    "# model={} seed={} replicates={reps} x={x} y={y} capped={}\n",
                    model_hash(self.model),
                    self.args.seed,
                    est.capped.len()
                );
                out.push_str("t,replicates,mean,mean_se,survival,survival_se,factorial2,factorial2_se\n");
                for p in &points {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        p.t, p.replicates, p.mean, p.mean_se, p.survival, p.survival_se, p.factorial2, p.factorial2_se
                    );
                }
                out
            }
        };
        Ok(Output { text, verified: true })
    }

    fn verify(&self) -> Result<Output, Failure> {
        let name = self
            .args
            .suite
            .as_deref()
            .ok_or_else(|| Failure::Usage("verify needs --suite".into()))?;
        let suites: Vec<Suite> = if name == "all" {
            Suite::ALL.to_vec()
        } else {
            vec![name.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?]
        };
        let lab = Lab::new(self.model, self.verify_options())?;
        let reports = suites
            .into_iter()
            .map(|s| lab.run(s))
            .collect::<Result<Vec<SuiteReport>, Error>>()?;
        let verified = reports.iter().all(SuiteReport::passed);
        let text = match self.format {
            Format::Json => to_json(&reports),
            Format::Csv => {
                let mut out = format!(
                    "# model={} seed={} step={} horizon={} tol={DEFAULT_TOL:e}\n",
                    model_hash(self.model),
                    self.args.seed,
                    self.args.step,
                    lab.horizon()
                );
                out.push_str("suite,check,passed,enforced,measured,threshold,detail\n");
                for r in &reports {
                    for c in &r.checks {
                        let _ = writeln!(
                            out,
                            "{},\"{}\",{},{},{},{},\"{}\"",
                            r.suite,
                            c.name.replace('"', "'"),
                            c.passed,
                            c.enforced,
                            c.measured,
                            c.threshold,
                            c.detail.replace('"', "'")
                        );
                    }
                }
                out
            }
        };
        for r in &reports {
            for c in &r.checks {
                let status = match (c.passed, c.enforced) {
                    (true, _) => "pass",
                    (false, true) => "FAIL",
                    (false, false) => "info",
                };
                eprintln!("{:<9} {status}  {}: {}", r.suite, c.name, c.detail);
            }
        }
        Ok(Output { text, verified })
    }
}
