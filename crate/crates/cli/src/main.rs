use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use epb_core::model::{generate_environment, is_quality_dominant};
use epb_core::oracles::{ln_pivotal_probability_exact, tie_probability_exact};
use epb_core::performance::{
    performance_at, records_to_csv, run_sweep, impossibility_construction, SweepConfig, ZERO_OPTIMUM_RATIO,
};
use epb_core::strategic::{
    compute_t_tilde, enumerate_pivotal_pairs, pivotal_csv, rarity_simulation, refined_pivotal_estimate,
    sample_information_structure, tie_probability_saddlepoint, ConstraintSpec, RarityConfig,
};
use epb_core::{rng, Environment, Execution, RuleId, UtilityKind};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "epb", version, about = "Epistemic participatory budgeting lab")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Primary output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the human-readable report.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random environment as JSON.
    GenEnv(GenEnvArgs),
    /// Monte Carlo performance sweep.
    Simulate(SimulateArgs),
    /// Rarity of the pivotal-rate coincidence.
    Bne(BneArgs),
    /// Count pivotal pairs.
    PivotEnum(PivotEnumArgs),
    /// Exact and approximate two-count tie probability.
    Saddlepoint(SaddlepointArgs),
    /// Minimizer of the rate function for one constraint set.
    RateFn(RateFnArgs),
    /// Performance on the two indistinguishable scenarios.
    Construction(ConstructionArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenEnvArgs {
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    budget: f64,
    #[arg(long, default_value_t = 2)]
    lmax: usize,
    #[arg(long, default_value = "normal")]
    utility: UtilityKind,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Environment JSON; replaces the generator parameters.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    m: usize,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "4")]
    budget: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    lmax: usize,
    #[arg(long, default_value = "normal")]
    utility: UtilityKind,
    /// Comma list of rule names, or `all`.
    #[arg(long, default_value = "all")]
    rules: String,
    /// Comma list of n values; `a,b,...,z` expands an arithmetic run.
    #[arg(long)]
    n_list: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

#[derive(Args, Debug, Serialize)]
struct BneArgs {
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    budget: usize,
    #[arg(long, default_value_t = 2)]
    lmax: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    /// Sample only quality-dominant structures.
    #[arg(long)]
    dominance_only: bool,
    /// Per-sample rates CSV.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PivotEnumArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 2)]
    lmax: usize,
    /// Information structure for the CSV rates; sampled from the seed otherwise.
    #[arg(long)]
    env: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SaddlepointArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    p1: f64,
    #[arg(long)]
    p2: f64,
}

#[derive(Args, Debug, Serialize)]
struct RateFnArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    eq: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    gt: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lt: Vec<f64>,
    /// Also compare the exact probability with the refined estimate at this n.
    #[arg(long)]
    n: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct ConstructionArgs {
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = "av")]
    rule: String,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value = "normal")]
    utility: UtilityKind,
}

/// Sidecar describing how the outputs of one invocation were produced.
#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: &'static str,
    params: serde_json::Value,
    seed: u64,
    version: &'static str,
    started: String,
    finished: String,
    zero_optimum_ratio: f64,
    outputs: Vec<OutputDigest>,
}

#[derive(Debug, Serialize)]
struct OutputDigest {
    path: String,
    sha256: String,
}

struct Ctx {
    seed: u64,
    out: Option<PathBuf>,
    quiet: bool,
    exec: Execution,
    started: String,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn write(&mut self, path: &Path, contents: &str) -> anyhow::Result<()> {
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    /// Writes to `--out` when given, stdout otherwise.
    fn emit(&mut self, contents: &str) -> anyhow::Result<()> {
        match self.out.clone() {
            Some(path) => self.write(&path, contents),
            None => {
                print!("{contents}");
                Ok(())
            }
        }
    }

    fn finish(self, subcommand: &'static str, params: impl Serialize) -> anyhow::Result<()> {
        let Some(first) = self.written.first() else {
            return Ok(());
        };
        let mut outputs = Vec::new();
        for path in &self.written {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            outputs.push(OutputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) });
        }
        let manifest = RunManifest {
            subcommand,
            params: serde_json::to_value(params)?,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            started: self.started,
            finished: now(),
            zero_optimum_ratio: ZERO_OPTIMUM_RATIO,
            outputs,
        };
        let mut path = first.clone().into_os_string();
        path.push(".manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", Path::new(&path).display()))?;
        Ok(())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// `10,20,...,100` expands to every step of the run.
fn parse_n_list(s: &str) -> anyhow::Result<Vec<usize>> {
    let tokens: Vec<&str> = s.split(',').map(str::trim).collect();
    let mut out: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == "..." {
            let (Some(&b), Some(next)) = (out.last(), tokens.get(i + 1)) else {
                bail!("`...` needs two values before it and one after");
            };
            if out.len() < 2 {
                bail!("`...` needs two values before it and one after");
            }
            let step = b as i64 - out[out.len() - 2] as i64;
            let end: usize = next.parse().with_context(|| format!("bad n value `{next}`"))?;
            if step <= 0 || end < b || (end - b) as i64 % step != 0 {
                bail!("`{s}` is not an increasing arithmetic run");
            }
            let mut v = b + step as usize;
            while v <= end {
                out.push(v);
                v += step as usize;
            }
            i += 2;
            continue;
        }
        out.push(tokens[i].parse().with_context(|| format!("bad n value `{}`", tokens[i]))?);
        i += 1;
    }
    if out.is_empty() {
        bail!("empty n list");
    }
    Ok(out)
}

fn read_env(path: &Path) -> anyhow::Result<Environment> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Environment::from_json(&text)?)
}

fn gen_env(mut ctx: Ctx, a: GenEnvArgs) -> anyhow::Result<()> {
    let env = generate_environment(a.m, a.alpha, a.budget, a.lmax, &mut rng::stream(ctx.seed, &[]))?
        .with_utility_kind(a.utility);
    ctx.emit(&(env.to_json()? + "\n"))?;
    let dominant = is_quality_dominant(env.info());
    if ctx.out.is_some() {
        ctx.say(format!("quality dominant: {dominant}"));
    } else if !ctx.quiet {
        eprintln!("quality dominant: {dominant}");
    }
    ctx.finish("gen-env", a)
}

fn simulate(mut ctx: Ctx, a: SimulateArgs) -> anyhow::Result<()> {
    let env = a.env.as_deref().map(read_env).transpose()?;
    let cfg = SweepConfig {
        n_values: parse_n_list(&a.n_list)?,
        alphas: a.alpha.clone(),
        budgets: a.budget.clone(),
        rules: RuleId::parse_list(&a.rules)?,
        m: a.m,
        lmax: a.lmax,
        utility_kind: a.utility,
        trials: a.trials,
        samples: a.samples,
        seed: ctx.seed,
        env,
    };
    let records = run_sweep(&cfg, ctx.exec)?;
    let csv = records_to_csv(&records);
    if ctx.out.is_some() {
        for r in &records {
            ctx.say(format!("{:<13} n={:<5} alpha={:<4} B={:<4} {:.4} ± {:.4}", r.rule, r.n, r.alpha, r.budget, r.mean_ratio, r.ci95_half_width));
        }
    }
    ctx.emit(&csv)?;
    ctx.finish("simulate", a)
}

fn bne(mut ctx: Ctx, a: BneArgs) -> anyhow::Result<()> {
    if a.samples == 0 && !ctx.quiet {
        eprintln!("warning: no samples requested");
    }
    let cfg = RarityConfig {
        m: a.m,
        budget: a.budget,
        lmax: a.lmax,
        samples: a.samples,
        tolerance: a.tolerance,
        seed: ctx.seed,
        dominance_only: a.dominance_only,
    };
    let report = rarity_simulation(&cfg, ctx.exec)?;
    ctx.say(format!("condition holds: {}/{}", report.hold_count, report.total));
    if let Some(path) = &ctx.out.clone() {
        let doc = json!({
            "m": a.m, "budget": a.budget, "lmax": a.lmax, "tolerance": a.tolerance,
            "hold_count": report.hold_count, "total": report.total,
        });
        ctx.write(path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    if let Some(path) = &a.dump {
        let mut csv = String::from("sample,g_plus,g_minus,diff,holds\n");
        for (s, row) in report.samples.iter().enumerate() {
            writeln!(csv, "{s},{:.12},{:.12},{:.3e},{}", row.g_plus, row.g_minus, row.g_plus - row.g_minus, row.holds)?;
        }
        ctx.write(path, &csv)?;
    }
    ctx.finish("bne", a)
}

fn pivot_enum(mut ctx: Ctx, a: PivotEnumArgs) -> anyhow::Result<()> {
    let pairs = enumerate_pivotal_pairs(a.m, a.budget, a.lmax)?;
    ctx.say(format!("partitions: {}", pairs.partitions));
    ctx.say(format!("piv+ / piv-: {}/{}", pairs.plus.len(), pairs.minus.len()));
    if let Some(reference) = pairs.reference_count() {
        ctx.say(format!("reference count: {reference}"));
        if reference != pairs.plus.len() {
            ctx.say(
                "note: a partition of alternatives 1..m-1 into (eq, gt, lt) is pivotal when |gt| < B <= |gt| + |eq|, \
                 with the pivot last in tie priority so it displaces the last tied winner in index order; \
                 the reference count follows a convention that is not stated and is not matched here",
            );
        }
    }
    if let Some(path) = ctx.out.clone() {
        let info = match &a.env {
            Some(p) => read_env(p)?.info().clone(),
            None => sample_information_structure(a.m, a.lmax, false, &mut rng::stream(ctx.seed, &[])),
        };
        let csv = pivotal_csv(&pairs, &info)?;
        ctx.write(&path, &csv)?;
    }
    ctx.finish("pivot-enum", a)
}

fn saddlepoint(mut ctx: Ctx, a: SaddlepointArgs) -> anyhow::Result<()> {
    let exact = tie_probability_exact(a.n, a.p1, a.p2)?;
    let approx = tie_probability_saddlepoint(a.n, a.p1, a.p2);
    let rel = (approx - exact).abs() / exact;
    ctx.say(format!("exact:  {exact:.6e}\napprox: {approx:.6e}\nrel-err: {rel:.4e}"));
    if let Some(path) = ctx.out.clone() {
        let csv = format!("n,p1,p2,exact,approx,rel_error\n{},{},{},{exact:.12e},{approx:.12e},{rel:.6e}\n", a.n, a.p1, a.p2);
        ctx.write(&path, &csv)?;
    }
    ctx.finish("saddlepoint", a)
}

fn rate_fn(mut ctx: Ctx, a: RateFnArgs) -> anyhow::Result<()> {
    let spec = ConstraintSpec::new(a.eq.clone(), a.gt.clone(), a.lt.clone())?;
    let r = compute_t_tilde(&spec);
    ctx.say(format!("t_tilde: {:.12}\nG: {:.12}\nactive: {}\nsingular: {}", r.t_tilde, r.g_value, r.active_set_size, r.singular));
    if let Some(n) = a.n {
        let exact = ln_pivotal_probability_exact(n, &spec).exp();
        ctx.say(format!("exact P(n={n}): {exact:.6e}"));
        match refined_pivotal_estimate(n, &spec) {
            Ok(est) => ctx.say(format!("refined estimate: {est:.6e}")),
            Err(e) => ctx.say(format!("refined estimate: n/a ({e})")),
        }
    }
    if let Some(path) = ctx.out.clone() {
        let csv = format!(
            "t_tilde,g_value,active_set_size,singular\n{:.12},{:.12},{},{}\n",
            r.t_tilde, r.g_value, r.active_set_size, r.singular
        );
        ctx.write(&path, &csv)?;
    }
    ctx.finish("rate-fn", a)
}

fn construction(mut ctx: Ctx, a: ConstructionArgs) -> anyhow::Result<()> {
    let rule: RuleId = a.rule.parse()?;
    let scenarios = impossibility_construction(a.m, a.utility)?;
    let mut values = Vec::new();
    for (k, (env, quality)) in scenarios.iter().enumerate() {
        let p = performance_at(env, quality, rule, a.n, a.samples, rng::derive(ctx.seed, &[k as u64]), ctx.exec)?;
        ctx.say(format!("scenario {}: {p:.6}", k + 1));
        values.push(p);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    ctx.say(format!("min: {min:.6}"));
    if let Some(path) = ctx.out.clone() {
        let csv = format!("scenario,performance\n1,{:.6}\n2,{:.6}\nmin,{min:.6}\n", values[0], values[1]);
        ctx.write(&path, &csv)?;
    }
    ctx.finish("construction", a)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
        exec: Execution::Parallel,
        started: now(),
        written: Vec::new(),
    };
    match cli.command {
        Command::GenEnv(a) => gen_env(ctx, a),
        Command::Simulate(a) => simulate(ctx, a),
        Command::Bne(a) => bne(ctx, a),
        Command::PivotEnum(a) => pivot_enum(ctx, a),
        Command::Saddlepoint(a) => saddlepoint(ctx, a),
        Command::RateFn(a) => rate_fn(ctx, a),
        Command::Construction(a) => construction(ctx, a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use epb_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidEnvironment(_) | E::InvalidParameter(_) | E::Json(_) => 2,
                E::InstanceTooLarge { .. } | E::EmptyPivotalSet | E::SingularCase => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<rayon::ThreadPoolBuildError>().is_some() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
