use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pomdp_ope::dr::{cross_fit_dr, dr_estimate};
use pomdp_ope::environments::{
    make_1d_process, make_binary_confounded_pomdp, make_random_bandit_pomdp, BINARY_TOY_ID, DEFAULT_DISCOUNT,
    DEFAULT_OBS_FLIP, DYN1D_ID, RANDOM_BANDIT_ID,
};
use pomdp_ope::features::{one_hot_features, sample_rff, FeatureMap, DEFAULT_KERNEL_GAMMA, DEFAULT_RFF_DIM};
use pomdp_ope::harness::{run_1d_sweep, run_toy_table, write_csv, SweepConfig, ToyConfig};
use pomdp_ope::identification::{check_rank_conditions, estimate_bandit_matrices, MatrixOptions};
use pomdp_ope::io;
use pomdp_ope::kernel::{kernel_value_estimate, train_bridge_kernel, LossKind, TrainConfig};
use pomdp_ope::linear::{
    estimate_value, fit_value_bridge_linear, fit_weight_bridge_linear, lstdq_baseline, EstimatorKind, Ridge,
    DEFAULT_CONTINUOUS_RIDGE,
};
use pomdp_ope::model::{ActionPolicy, InputKind, Obs, SigmoidPolicy, TabularPolicy, TupleDataset, ValueEstimate};
use pomdp_ope::simulation::{exact_tabular_value, generate_dataset, monte_carlo_value, sample_bandit_dataset, truncation_horizon};
use pomdp_ope::{Error, Result};

#[derive(Parser, Debug)]
#[command(version, about = "Off-policy evaluation for confounded POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact or Monte Carlo value of a target policy.
    Oracle {
        #[arg(long)]
        env: String,
        #[arg(long, conflicts_with = "sigma_o")]
        epsilon: Option<f64>,
        #[arg(long)]
        sigma_o: Option<f64>,
        /// Target weight of the 1D process (ignored by the binary toy, whose target is uniform).
        #[arg(long, allow_hyphen_values = true)]
        policy_w: Option<f64>,
        /// Monte Carlo rollouts; the binary toy is solved exactly when omitted.
        #[arg(long)]
        rollouts: Option<usize>,
        /// Rollout length; defaults to a 1e-3 truncation bound.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Binary toy table: exact value, proposed and naive estimates.
    ToyTable {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        epsilon_list: Option<Vec<f64>>,
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// 1D process sweep over observation noise, target weight and sample size.
    #[command(name = "sweep-1d")]
    Sweep1d {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: PathBuf,
    },
    /// Estimate a policy value from a tuple CSV.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: EvalMethod,
        /// Target weight for continuous observations.
        #[arg(long, allow_hyphen_values = true)]
        target_w: Option<f64>,
        /// JSON table `[[p(a|o)...]...]` for discrete observations; uniform when omitted.
        #[arg(long)]
        target_table: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_RFF_DIM)]
        rff_d: usize,
        #[arg(long, default_value_t = DEFAULT_KERNEL_GAMMA)]
        rff_gamma: f64,
        /// `pinv` or a trace-scaled ridge factor.
        #[arg(long)]
        ridge: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON training configuration for the kernel losses.
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Write the kernel training trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Rank diagnostics of a bandit CSV (`o_minus,a,o,r`).
    RankCheck {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Simulate behavior data and write it as CSV.
    Simulate {
        #[arg(long)]
        env: String,
        #[arg(long, conflicts_with = "sigma_o")]
        epsilon: Option<f64>,
        #[arg(long)]
        sigma_o: Option<f64>,
        /// Trajectories (or bandit records).
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalMethod {
    Vm,
    Is,
    Dr,
    DrCrossfit,
    Lstdq,
    Pomql,
    Pomwl,
    Mql,
    Mwl,
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn oracle(
    env: &str,
    epsilon: Option<f64>,
    sigma_o: Option<f64>,
    policy_w: Option<f64>,
    rollouts: Option<usize>,
    horizon: Option<usize>,
    seed: u64,
) -> Result<ValueEstimate> {
    match env {
        BINARY_TOY_ID => {
            let eps = epsilon.ok_or_else(|| Error::Validation("binary-toy needs --epsilon".into()))?;
            let (model, _, target) = make_binary_confounded_pomdp(eps, DEFAULT_OBS_FLIP)?;
            match rollouts {
                None => {
                    let j = exact_tabular_value(&model, &target)?.j;
                    ValueEstimate::new(j, None, pomdp_ope::model::Method::OracleExact, 0)
                }
                Some(n) => {
                    let h = horizon.unwrap_or_else(|| truncation_horizon(model.discount(), model.r_max(), 1e-3));
                    monte_carlo_value(&model, &target, n, h, seed)
                }
            }
        }
        DYN1D_ID => {
            let sigma = sigma_o.ok_or_else(|| Error::Validation("dyn1d needs --sigma-o".into()))?;
            let w = policy_w.ok_or_else(|| Error::Validation("dyn1d needs --policy-w".into()))?;
            let model = make_1d_process(sigma, DEFAULT_DISCOUNT)?;
            let h = horizon.unwrap_or_else(|| truncation_horizon(model.discount, model.r_max, 1e-3));
            monte_carlo_value(&model, &SigmoidPolicy::target_1d(w), rollouts.unwrap_or(1_000_000), h, seed)
        }
        other => Err(Error::Validation(format!("unknown env {other:?}"))),
    }
}

fn parse_ridge(s: Option<&str>, discrete: bool) -> Result<Ridge> {
    match s {
        None if discrete => Ok(Ridge::Pinv),
        None => Ok(DEFAULT_CONTINUOUS_RIDGE),
        Some("pinv") => Ok(Ridge::Pinv),
        Some(v) => v
            .parse::<f64>()
            .ok()
            .filter(|c| *c >= 0.0)
            .map(Ridge::TraceScaled)
            .ok_or_else(|| Error::Validation(format!("invalid ridge {v:?}"))),
    }
}

enum Target {
    Sigmoid(SigmoidPolicy),
    Table(TabularPolicy),
}

struct EvalArgs {
    method: EvalMethod,
    ridge: Ridge,
    seed: u64,
    train: TrainConfig,
    trace: Option<PathBuf>,
}

fn evaluate_with<P: ActionPolicy + 'static>(data: &TupleDataset, fm: &FeatureMap, target: &P, args: &EvalArgs) -> Result<ValueEstimate> {
    let ridge = args.ridge;
    let fit_pair = |d: &TupleDataset| {
        Ok((fit_weight_bridge_linear(d, target, fm, ridge)?, fit_value_bridge_linear(d, target, fm, true, ridge)?))
    };
    let kernel = |kind: LossKind| -> Result<ValueEstimate> {
        let (bridge, trace) = train_bridge_kernel(data, kind, fm, target, &args.train, args.seed)?;
        if let Some(p) = &args.trace {
            io::write_trace(p, &trace)?;
        }
        kernel_value_estimate(kind, &bridge, data, target)
    };
    match args.method {
        EvalMethod::Vm => estimate_value(EstimatorKind::Vm, &fit_value_bridge_linear(data, target, fm, true, ridge)?, data, target),
        EvalMethod::Is => estimate_value(EstimatorKind::Is, &fit_weight_bridge_linear(data, target, fm, ridge)?, data, target),
        EvalMethod::Dr => {
            let (f, g) = fit_pair(data)?;
            dr_estimate(&f, &g, data, target)
        }
        EvalMethod::DrCrossfit => cross_fit_dr(data, fit_pair, target, args.seed),
        EvalMethod::Lstdq => lstdq_baseline(data, target, fm, ridge),
        EvalMethod::Pomql => kernel(LossKind::Pomql),
        EvalMethod::Pomwl => kernel(LossKind::Pomwl),
        EvalMethod::Mql => kernel(LossKind::Mql),
        EvalMethod::Mwl => kernel(LossKind::Mwl),
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    data: PathBuf,
    method: EvalMethod,
    target_w: Option<f64>,
    target_table: Option<PathBuf>,
    gamma: Option<f64>,
    rff_d: usize,
    rff_gamma: f64,
    ridge: Option<String>,
    seed: u64,
    train_config: Option<PathBuf>,
    trace: Option<PathBuf>,
) -> Result<ValueEstimate> {
    let data = io::read_tuples(&data, gamma)?;
    let discrete = matches!(data.tuples[0].o, Obs::Discrete(_));
    let num_actions = data.tuples.iter().map(|t| t.a).max().unwrap_or(0) + 1;
    let (fm, target) = if discrete {
        let num_obs = data
            .tuples
            .iter()
            .flat_map(|t| [&t.o_minus, &t.o, &t.o_plus])
            .filter_map(Obs::index)
            .max()
            .unwrap_or(0)
            + 1;
        let table = match &target_table {
            Some(p) => TabularPolicy::new(serde_json::from_reader(BufReader::new(File::open(p)?))?, InputKind::Observation)?,
            None => TabularPolicy::uniform(num_obs, num_actions.max(2), InputKind::Observation),
        };
        let num_obs = num_obs.max(table.num_inputs());
        (one_hot_features(table.table()[0].len(), num_obs)?, Target::Table(table))
    } else {
        let w = target_w.ok_or_else(|| Error::Validation("continuous data needs --target-w".into()))?;
        let dim = data.tuples[0].o.values().map_or(1, <[f64]>::len);
        (sample_rff(dim, rff_d, rff_gamma, 2, seed)?, Target::Sigmoid(SigmoidPolicy::target_1d(w)))
    };
    data.validate(fm.num_actions, None)?;
    let train = match train_config {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
        None => TrainConfig::default(),
    };
    let args = EvalArgs { method, ridge: parse_ridge(ridge.as_deref(), discrete)?, seed, train, trace };
    match &target {
        Target::Sigmoid(p) => evaluate_with(&data, &fm, p, &args),
        Target::Table(p) => evaluate_with(&data, &fm, p, &args),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    env: &str,
    epsilon: Option<f64>,
    sigma_o: Option<f64>,
    count: usize,
    horizon: usize,
    states: usize,
    actions: usize,
    seed: u64,
    out: &std::path::Path,
) -> Result<()> {
    match env {
        BINARY_TOY_ID => {
            let eps = epsilon.ok_or_else(|| Error::Validation("binary-toy needs --epsilon".into()))?;
            let (model, behavior, _) = make_binary_confounded_pomdp(eps, DEFAULT_OBS_FLIP)?;
            io::write_tuples(out, &generate_dataset(&model, &behavior, count, horizon, BINARY_TOY_ID, seed)?)
        }
        DYN1D_ID => {
            let sigma = sigma_o.ok_or_else(|| Error::Validation("dyn1d needs --sigma-o".into()))?;
            let model = make_1d_process(sigma, DEFAULT_DISCOUNT)?;
            io::write_tuples(out, &generate_dataset(&model, &SigmoidPolicy::behavior_1d(), count, horizon, DYN1D_ID, seed)?)
        }
        RANDOM_BANDIT_ID => {
            let bandit = make_random_bandit_pomdp(states, states, actions, seed)?;
            io::write_bandit(out, &sample_bandit_dataset(&bandit, count, seed)?)
        }
        other => Err(Error::Validation(format!("unknown env {other:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Oracle { env, epsilon, sigma_o, policy_w, rollouts, horizon, seed } => {
            print_json(&oracle(&env, epsilon, sigma_o, policy_w, rollouts, horizon, seed)?)
        }
        Command::ToyTable { out, seed, epsilon_list, trajectories } => {
            let mut cfg = ToyConfig { seed, ..ToyConfig::default() };
            if let Some(e) = epsilon_list {
                cfg.epsilons = e;
            }
            if let Some(t) = trajectories {
                cfg.trajectories = t;
            }
            let rows = run_toy_table(&cfg)?;
            write_csv(BufWriter::new(File::create(out)?), &rows)?;
            print_json(&rows)
        }
        Command::Sweep1d { config, out, summary } => {
            let cfg: SweepConfig = serde_json::from_reader(BufReader::new(File::open(config)?))?;
            let res = run_1d_sweep(&cfg)?;
            write_csv(BufWriter::new(File::create(out)?), &res.raw)?;
            write_csv(BufWriter::new(File::create(summary)?), &res.summary)?;
            log::info!("wrote {} raw rows and {} summary rows", res.raw.len(), res.summary.len());
            Ok(())
        }
        Command::Evaluate { data, method, target_w, target_table, gamma, rff_d, rff_gamma, ridge, seed, train_config, trace } => {
            print_json(&evaluate(data, method, target_w, target_table, gamma, rff_d, rff_gamma, ridge, seed, train_config, trace)?)
        }
        Command::RankCheck { data, tol } => {
            let bandit = io::read_bandit(&data)?;
            let m = estimate_bandit_matrices(&bandit, &MatrixOptions::default())?;
            print_json(&check_rank_conditions(&m, None, tol))
        }
        Command::Simulate { env, epsilon, sigma_o, count, horizon, states, actions, seed, out } => {
            simulate(&env, epsilon, sigma_o, count, horizon, states, actions, seed, &out)
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
