use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};

use netvar::cli::{
    base_dir, config_section, error_kind, exit_code, matrix_rows, merge_layers, read_json, sigma_from_lower,
    ModelDoc, RunContext, SpecDoc, EXIT_ESTIMATION, EXIT_OK, EXIT_USAGE,
};
use netvar::dynamics::{girf, long_run_response, order_decompose, timing_profile, ShockScale, DEFAULT_HORIZON};
use netvar::forecast::{rolling_evaluate, EvalConfig, FactorFactory, LambdaChoice, ModelFactory, NvarFactory};
use netvar::netest::{
    fit_alpha_given_a, fit_joint, gibbs_nvar_p1, select_lambda_bic, FitControl, FitResult, GibbsConfig,
    PenaltyConfig,
};
use netvar::output::fmt_num;
use netvar::panel::{detrend_deseasonalize, load_adjacency, load_panel, write_adjacency, IngestOptions, PreprocessSpec};
use netvar::smc::{default_grid, model_select, run_smc, Criterion, GridPoint, SmcConfig};
use netvar::timeagg::{aggregate, build_state_space, default_truncation, timeagg_irf};
use netvar::{HighFreqSpec, NetvarError, Network, NvarModel, Panel, SamplingRatio};

#[derive(Parser, Debug)]
#[command(name = "netvar", version, about = "Network-driven vector autoregressions")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "NETVAR_THREADS")]
    threads: Option<usize>,
    /// JSON settings file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a panel from a model.
    Simulate(SimulateArgs),
    /// Degree, distance and density summaries of a network.
    Netstats(NetstatsArgs),
    /// Impulse responses, order decomposition and timing profiles.
    Irf(IrfArgs),
    /// Observed-frequency representation of a latent specification.
    Aggregate(AggregateArgs),
    /// Estimate timing weights, lag weights or the network.
    Estimate(EstimateArgs),
    /// Rank (p*, q*) specifications.
    Select(SelectArgs),
    /// Rolling forecast comparison of NVAR and factor models.
    Compare(CompareArgs),
}

/// Flags that parse a panel CSV.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct PanelArgs {
    /// Panel CSV (`time,<labels>`).
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Remove a linear trend from every unit.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    detrend: bool,
    /// Remove seasonal dummies with this period.
    #[arg(long)]
    seasonal_period: Option<usize>,
    /// Subtract unit means.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    demean: bool,
    /// Fill interior gaps by linear interpolation.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    interpolate_missing: bool,
}

/// Sampler flags shared by `estimate --mode delta-smc` and `select`.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct SmcArgs {
    #[arg(long)]
    particles: Option<usize>,
    /// Metropolis steps per particle per stage.
    #[arg(long)]
    n_mh: Option<usize>,
    #[arg(long)]
    ess_target: Option<f64>,
    #[arg(long)]
    max_stages: Option<usize>,
    /// Truncation lag for q* >= 2.
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    sigma_bound_multiplier: Option<f64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateArgs {
    /// Model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Latent specification JSON (with --network).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Adjacency CSV.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Observed periods.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t: Option<usize>,
    /// Discarded start-up periods.
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Read the model's lag weights as latent timing weights observed at this ratio.
    #[arg(long)]
    snapshot_q: Option<String>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    allow_nonstationary: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetstatsArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Links at or below this weight are dropped.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IrfArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    /// Largest horizon.
    #[arg(long = "H")]
    #[serde(rename = "H")]
    h: Option<usize>,
    /// `unit` or `one-std`.
    #[arg(long)]
    shock_scale: Option<String>,
    /// Add one row per connection order.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    decompose: bool,
    /// Also write cumulative responses.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    cumulative: bool,
    /// Latent periods between the shock and the next observation (q* >= 2).
    #[arg(long)]
    sub_period: Option<usize>,
    /// Write the timing profile of a weighted aggregate (needs --spec).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    timing: bool,
    /// Aggregation weights, comma separated; equal weights by default.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Shocked unit, 1-based.
    #[arg(long)]
    shock_unit: Option<usize>,
    #[arg(long)]
    fraction_horizon: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregateArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    /// Truncation lag; chosen from the network when absent.
    #[arg(long)]
    truncation: Option<usize>,
    /// Write the state-space matrices with a zero presample.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    dump_state_space: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateArgs {
    /// delta-smc, alpha-ols, joint-lasso or gibbs.
    #[arg(long)]
    mode: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    p_star: Option<usize>,
    #[arg(long)]
    q_star: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    smc: SmcArgs,
    /// HPD mass reported for the timing weights.
    #[arg(long)]
    hpd_mass: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    varphi: Option<f64>,
    /// `auto` or a comma-separated decreasing list.
    #[arg(long)]
    lambda_path: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Margin added to the largest link when rescaling the estimate.
    #[arg(long)]
    rescale_eps: Option<f64>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    network: Option<PathBuf>,
    /// Comma-separated `p*:q*` pairs; the default grid when absent.
    #[arg(long)]
    grid: Option<String>,
    /// mdd, bic or aic.
    #[arg(long)]
    criterion: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    smc: SmcArgs,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelArgs,
    /// Models to compare, comma separated (`nvar`, `factor`); relative MSE
    /// is first over last.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// NVAR lag order.
    #[arg(long)]
    p: Option<usize>,
    /// Fixed Lasso weight; BIC over a path when absent.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    varphi: Option<f64>,
    #[arg(long)]
    r_max: Option<usize>,
    #[arg(long)]
    var_lags: Option<usize>,
    /// First origin (0-based period index); half the sample by default.
    #[arg(long)]
    initial_train_end: Option<usize>,
    /// Last origin; `T - 2` by default.
    #[arg(long)]
    final_train_end: Option<usize>,
    /// Largest horizon; horizons are 1..=H.
    #[arg(long = "H")]
    #[serde(rename = "H")]
    h: Option<usize>,
    /// Targets after this period are not scored.
    #[arg(long)]
    exclusion_after: Option<usize>,
    #[arg(long)]
    origin_step: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure of a run: bad invocation or a library error.
enum Failure {
    Usage(String),
    Run(NetvarError),
}

impl From<NetvarError> for Failure {
    fn from(e: NetvarError) -> Self {
        Failure::Run(e)
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

fn need<T: Clone>(v: &Option<T>, flag: &str) -> CmdResult<T> {
    v.clone().ok_or_else(|| Failure::Usage(format!("missing required option --{flag}")))
}

fn parse_ratio(s: &str) -> CmdResult<SamplingRatio> {
    s.parse().map_err(|e: NetvarError| Failure::Usage(e.to_string()))
}

/// Merges defaults, config section and flags, then reads the result back.
fn resolve<A: Serialize + DeserializeOwned>(flags: &A, defaults: &A, config: Option<Value>) -> CmdResult<(A, Value)> {
    let to_value = |a: &A| serde_json::to_value(a).map_err(|e| Failure::Usage(e.to_string()));
    let merged = merge_layers(to_value(defaults)?, config, to_value(flags)?);
    let resolved: A = serde_json::from_value(merged.clone()).map_err(|e| Failure::Usage(format!("config: {e}")))?;
    Ok((resolved, merged))
}

fn load_model(ctx: &mut RunContext, path: &Path) -> CmdResult<NvarModel> {
    ctx.input(path)?;
    let doc: ModelDoc = read_json(path)?;
    if let Some(p) = &doc.network_path {
        ctx.input(&base_dir(path).join(p))?;
    }
    Ok(doc.into_model(&base_dir(path))?)
}

fn load_network(ctx: &mut RunContext, path: &Path) -> CmdResult<Network> {
    ctx.input(path)?;
    Ok(load_adjacency(path)?)
}

/// Specification, network and innovation covariance from `--spec` and `--network`.
fn load_spec(ctx: &mut RunContext, spec: &Path, network: &Option<PathBuf>) -> CmdResult<(HighFreqSpec, Network, DMatrix<f64>)> {
    ctx.input(spec)?;
    let doc: SpecDoc = read_json(spec)?;
    doc.spec.validate()?;
    let net = load_network(ctx, &need(network, "network")?)?;
    let sigma = sigma_from_lower(net.n(), doc.sigma.as_deref())?;
    Ok((doc.spec, net, sigma))
}

fn load_panel_args(ctx: &mut RunContext, a: &PanelArgs) -> CmdResult<Panel> {
    let path = need(&a.panel, "panel")?;
    ctx.input(&path)?;
    let options = IngestOptions { interpolate_missing: a.interpolate_missing, frequency_tag: String::new() };
    let panel = load_panel(&path, &options)?;
    let spec = PreprocessSpec { remove_linear_trend: a.detrend, seasonal_period: a.seasonal_period, demean: a.demean };
    if spec == PreprocessSpec::default() {
        return Ok(panel);
    }
    let cleaned = detrend_deseasonalize(&panel, &spec)?;
    ctx.write_json("preprocessing.json", &cleaned.preprocessing_log)?;
    Ok(cleaned)
}

fn smc_config(a: &SmcArgs, seed: u64) -> SmcConfig {
    let d = SmcConfig::default();
    SmcConfig {
        particles: a.particles.unwrap_or(d.particles),
        n_mh: a.n_mh.unwrap_or(d.n_mh),
        ess_target: a.ess_target.unwrap_or(d.ess_target),
        max_stages: a.max_stages.unwrap_or(d.max_stages),
        truncation: a.truncation,
        sigma_bound_multiplier: a.sigma_bound_multiplier.unwrap_or(d.sigma_bound_multiplier),
        seed,
        ..d
    }
}

fn smc_defaults() -> SmcArgs {
    let d = SmcConfig::default();
    SmcArgs {
        particles: Some(d.particles),
        n_mh: Some(d.n_mh),
        ess_target: Some(d.ess_target),
        max_stages: Some(d.max_stages),
        truncation: None,
        sigma_bound_multiplier: Some(d.sigma_bound_multiplier),
    }
}

fn cmd_simulate(a: &SimulateArgs, ctx: &mut RunContext) -> CmdResult {
    let t = need(&a.t, "T")?;
    let seed = a.seed.unwrap_or(0);
    let snapshot = match (&a.model, &a.spec, &a.snapshot_q) {
        (Some(_), Some(_), _) => return Err(Failure::Usage("give --model or --spec, not both".into())),
        (Some(path), None, None) => {
            let model = load_model(ctx, path)?;
            let panel = netvar::model::simulate(&model, t, a.burn, seed, a.allow_nonstationary)?;
            ctx.write("panel.csv", |w| panel.write_csv(w))?;
            return Ok(());
        }
        (Some(path), None, Some(q)) => {
            let model = load_model(ctx, path)?;
            if model.q() != 1 {
                return Err(Failure::Usage("--snapshot-q needs a model with q = 1".into()));
            }
            let delta: Vec<f64> = model.alpha().iter().cloned().collect();
            let spec = HighFreqSpec::new(parse_ratio(q)?, delta, false)?;
            (spec, model.network().clone(), model.sigma().clone())
        }
        (None, Some(path), q) => {
            let (mut spec, net, sigma) = load_spec(ctx, path, &a.network)?;
            if let Some(q) = q {
                spec.q_star = parse_ratio(q)?;
            }
            (spec, net, sigma)
        }
        (None, None, _) => return Err(Failure::Usage("simulate needs --model or --spec".into())),
    };
    let (spec, net, sigma) = snapshot;
    let (latent, observed) =
        netvar::model::simulate_snapshots(&spec, &net, &sigma, t, a.burn, seed, a.allow_nonstationary)?;
    ctx.write("panel.csv", |w| observed.write_csv(w))?;
    if spec.q_star.aggregates() {
        ctx.write("latent.csv", |w| latent.write_csv(w))?;
    }
    Ok(())
}

fn cmd_netstats(a: &NetstatsArgs, ctx: &mut RunContext) -> CmdResult {
    let net = match (&a.network, &a.model) {
        (Some(p), None) => load_network(ctx, p)?,
        (None, Some(p)) => load_model(ctx, p)?.network().clone(),
        _ => return Err(Failure::Usage("netstats needs exactly one of --network or --model".into())),
    };
    let stats = net.compute_stats(a.threshold.unwrap_or(0.0));
    let mut doc = serde_json::to_value(&stats).map_err(NetvarError::from)?;
    doc["spectral_radius"] = json!(net.spectral_radius()?);
    doc["n"] = json!(net.n());
    ctx.write_json("netstats.json", &doc)?;
    let units = (0..net.n()).map(|i| {
        vec![
            stats.labels[i].clone(),
            stats.in_degrees[i].to_string(),
            stats.out_degrees[i].to_string(),
            fmt_num(stats.weighted_in_degrees[i]),
            fmt_num(stats.weighted_out_degrees[i]),
        ]
    });
    ctx.write_rows(
        "units.csv",
        &["unit", "in_degree", "out_degree", "weighted_in_degree", "weighted_out_degree"],
        units,
    )?;
    let mut dist = Vec::new();
    for i in 0..net.n() {
        for j in 0..net.n() {
            let d = stats.distances[i][j].map(|d| d.to_string()).unwrap_or_default();
            dist.push(vec![stats.labels[i].clone(), stats.labels[j].clone(), d]);
        }
    }
    ctx.write_rows("distances.csv", &["i", "j", "distance"], dist)?;
    Ok(())
}

fn shock_scale(s: &str) -> CmdResult<ShockScale> {
    match s {
        "unit" => Ok(ShockScale::Unit),
        "one-std" | "one_std" => Ok(ShockScale::OneStd),
        other => Err(Failure::Usage(format!("unknown shock scale {other:?}; use unit or one-std"))),
    }
}

/// Long rows `h, i, j, value, order_k` for one matrix.
fn irf_rows(rows: &mut Vec<Vec<String>>, labels: &[String], h: usize, m: &DMatrix<f64>, order: Option<usize>) {
    let k = order.map(|k| k.to_string()).unwrap_or_default();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            rows.push(vec![h.to_string(), labels[i].clone(), labels[j].clone(), fmt_num(m[(i, j)]), k.clone()]);
        }
    }
}

fn scale_columns(m: &mut DMatrix<f64>, sd: &[f64]) {
    for (j, s) in sd.iter().enumerate() {
        m.column_mut(j).iter_mut().for_each(|v| *v *= s);
    }
}

fn cmd_irf(a: &IrfArgs, ctx: &mut RunContext) -> CmdResult {
    let h_max = a.h.unwrap_or(DEFAULT_HORIZON);
    let scale = shock_scale(a.shock_scale.as_deref().unwrap_or("unit"))?;
    let (model, spec) = match (&a.model, &a.spec) {
        (Some(p), None) => (Some(load_model(ctx, p)?), None),
        (None, Some(p)) => {
            let (spec, net, sigma) = load_spec(ctx, p, &a.network)?;
            let model = match spec.observed_alpha() {
                Some(alpha) => Some(NvarModel::p1(&alpha, net.clone(), sigma.clone())?),
                None => None,
            };
            (model, Some((spec, net, sigma)))
        }
        _ => return Err(Failure::Usage("irf needs exactly one of --model or --spec".into())),
    };
    let mut rows = Vec::new();
    match &model {
        Some(model) => {
            let labels = model.network().labels().to_vec();
            let resp = girf(model, h_max, scale);
            for (h, m) in resp.responses.iter().enumerate() {
                irf_rows(&mut rows, &labels, h, m, None);
            }
            if a.cumulative {
                let mut cum = Vec::new();
                for (h, m) in resp.cumulative().iter().enumerate() {
                    irf_rows(&mut cum, &labels, h, m, None);
                }
                ctx.write_rows("irf_cumulative.csv", &["h", "i", "j", "value", "order_k"], cum)?;
            }
            if a.decompose && h_max >= 1 {
                let sd: Vec<f64> = match scale {
                    ShockScale::Unit => vec![1.0; model.n()],
                    ShockScale::OneStd => (0..model.n()).map(|j| model.sigma()[(j, j)].max(0.0).sqrt()).collect(),
                };
                let dec = order_decompose(model, h_max)?;
                let mut coeffs = Vec::new();
                for ho in &dec.horizons {
                    for (k, c) in ho.orders() {
                        coeffs.push(vec![ho.h.to_string(), k.to_string(), fmt_num(c)]);
                        let mut m = dec.contribution(model.network(), ho.h, k);
                        scale_columns(&mut m, &sd);
                        irf_rows(&mut rows, &labels, ho.h, &m, Some(k));
                    }
                }
                ctx.write_rows("orders.csv", &["h", "order_k", "coefficient"], coeffs)?;
            }
        }
        None => {
            let (spec, net, _) = spec.as_ref().expect("spec path");
            if a.decompose {
                return Err(Failure::Usage("--decompose is not available when q* >= 2".into()));
            }
            let resp = timeagg_irf(spec, net, h_max, a.sub_period.unwrap_or(0))?;
            for (h, m) in resp.responses.iter().enumerate() {
                irf_rows(&mut rows, net.labels(), h, m, None);
            }
        }
    }
    ctx.write_rows("irf.csv", &["h", "i", "j", "value", "order_k"], rows)?;
    if let Some((spec, net, _)) = &spec {
        let lr = long_run_response(spec, net, h_max)?;
        ctx.write_rows("long_run.csv", &["kind", "i", "j", "value"], matrix_rows("long_run", &lr.matrix))?;
        if a.timing {
            let n = net.n();
            let weights = a.weights.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
            let unit = need(&a.shock_unit, "shock-unit")?;
            if unit == 0 {
                return Err(Failure::Usage("--shock-unit is 1-based".into()));
            }
            let fh = a.fraction_horizon.unwrap_or(12.min(h_max));
            let prof = timing_profile(spec, net, &weights, unit - 1, h_max, fh)?;
            ctx.write_rows(
                "timing.csv",
                &["h", "share"],
                prof.path.iter().enumerate().map(|(h, v)| vec![h.to_string(), fmt_num(*v)]),
            )?;
            ctx.write_json("timing.json", &prof)?;
        }
    } else if a.timing {
        return Err(Failure::Usage("--timing needs --spec".into()));
    }
    Ok(())
}

fn cmd_aggregate(a: &AggregateArgs, ctx: &mut RunContext) -> CmdResult {
    let (spec, net, sigma) = load_spec(ctx, &need(&a.spec, "spec")?, &a.network)?;
    let p = match a.truncation {
        Some(p) => p,
        None => default_truncation(&spec, &net)?,
    };
    let agg = aggregate(&spec, &net, p)?;
    let labels = net.labels();
    let mut phi_rows = Vec::new();
    for (l, m) in agg.phi.iter().enumerate() {
        for i in 0..agg.n {
            for j in 0..agg.n {
                phi_rows.push(vec![(l + 1).to_string(), labels[i].clone(), labels[j].clone(), fmt_num(m[(i, j)])]);
            }
        }
    }
    ctx.write_rows("phi.csv", &["lag", "i", "j", "value"], phi_rows)?;
    let mut theta_rows = Vec::new();
    for (l, m) in agg.theta.iter().enumerate() {
        for b in 0..agg.shock_blocks {
            for i in 0..agg.n {
                for j in 0..agg.n {
                    theta_rows.push(vec![
                        l.to_string(),
                        (b + 1).to_string(),
                        labels[i].clone(),
                        labels[j].clone(),
                        fmt_num(m[(i, b * agg.n + j)]),
                    ]);
                }
            }
        }
    }
    ctx.write_rows("theta.csv", &["lag", "block", "i", "j", "value"], theta_rows)?;
    let doc = json!({
        "n": agg.n,
        "p": agg.p,
        "q": agg.q,
        "q_star": agg.q_star,
        "shock_blocks": agg.shock_blocks,
        "phi_poly": agg.phi_poly.iter().map(|c| c.coeffs.clone()).collect::<Vec<_>>(),
        "theta_poly": agg.theta_poly.iter().map(|b| b.iter().map(|c| c.coeffs.clone()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "warnings": agg.warnings,
    });
    ctx.write_json("aggregation.json", &doc)?;
    if a.dump_state_space {
        let ss = build_state_space(&agg, &sigma, &DMatrix::zeros(agg.n, agg.p))?;
        ctx.write_json("state_space.json", &ss)?;
    }
    for w in &agg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn lag_rows(alpha: &DMatrix<f64>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for l in 0..alpha.nrows() {
        for g in 0..alpha.ncols() {
            rows.push(vec![(l + 1).to_string(), (g + 1).to_string(), fmt_num(alpha[(l, g)])]);
        }
    }
    rows
}

fn write_fit(ctx: &mut RunContext, fit: &FitResult, eps: f64) -> CmdResult {
    let (alpha, net) = if fit.n_nonzero == 0 {
        (fit.alpha.clone(), fit.network.clone())
    } else {
        fit.network.rescale_identified(&fit.alpha, eps)?
    };
    ctx.write_rows("alpha.csv", &["lag", "order", "value"], lag_rows(&alpha))?;
    ctx.write("adjacency.csv", |w| write_adjacency(&net, w))?;
    let mut doc = serde_json::to_value(fit).map_err(NetvarError::from)?;
    doc["bic"] = json!(fit.bic());
    doc["rescaled_alpha"] = json!(alpha.iter().cloned().collect::<Vec<f64>>());
    doc["spectral_radius"] = json!(net.spectral_radius()?);
    ctx.write_json("fit.json", &doc)?;
    Ok(())
}

fn parse_lambda_path(s: &str) -> CmdResult<Option<Vec<f64>>> {
    if s == "auto" {
        return Ok(None);
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("bad lambda value {v:?}"))))
        .collect::<CmdResult<Vec<f64>>>()
        .map(Some)
}

fn cmd_estimate(a: &EstimateArgs, ctx: &mut RunContext) -> CmdResult {
    let mode = need(&a.mode, "mode")?;
    let panel = load_panel_args(ctx, &a.panel)?;
    let seed = a.seed.unwrap_or(0);
    let control = FitControl {
        tol: a.tol.unwrap_or(FitControl::default().tol),
        max_iter: a.max_iter.unwrap_or(FitControl::default().max_iter),
    };
    let penalty = PenaltyConfig { lambda: a.lambda.unwrap_or(0.0), varphi: a.varphi.unwrap_or(0.0), lambda_path: None };
    match mode.as_str() {
        "delta-smc" => {
            let net = load_network(ctx, &need(&a.network, "network")?)?;
            let p_star = need(&a.p_star, "p-star")?;
            let q_star = parse_ratio(a.q_star.as_deref().unwrap_or("1"))?;
            let cfg = smc_config(&a.smc, seed);
            let res = run_smc(&panel, &net, p_star, q_star, &cfg, None)?;
            ctx.write("delta_posterior.csv", |w| res.write_posterior_csv(w))?;
            let mass = a.hpd_mass.unwrap_or(0.95);
            let hpd: Vec<(f64, f64)> = (1..=p_star).map(|l| res.delta_hpd(l, mass)).collect();
            let sigma_hpd: Vec<(f64, f64)> = (0..net.n()).map(|i| res.sigma_hpd(i, mass)).collect();
            let doc = json!({
                "score": res.score,
                "map": {"delta": res.map.full_delta(), "sigma": res.map.sigma},
                "map_loglik": res.map_loglik,
                "posterior_mean": {"delta": res.posterior_mean.full_delta(), "sigma": res.posterior_mean.sigma},
                "hpd_mass": mass,
                "delta_hpd": hpd,
                "sigma_hpd": sigma_hpd,
                "stages": res.stages,
                "sigma_bounds": res.sigma_bounds,
                "bound_exceeded": res.bound_exceeded,
                "warnings": res.warnings,
            });
            ctx.write_json("score.json", &doc)?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
        }
        "alpha-ols" => {
            let net = load_network(ctx, &need(&a.network, "network")?)?;
            let alpha = fit_alpha_given_a(&panel, &net, need(&a.p, "p")?, a.q.unwrap_or(1), penalty.varphi, None)?;
            ctx.write_rows("alpha.csv", &["lag", "order", "value"], lag_rows(&alpha))?;
        }
        "joint-lasso" => {
            let p = need(&a.p, "p")?;
            let eps = a.rescale_eps.unwrap_or(1e-6);
            match a.lambda_path.as_deref().map(parse_lambda_path).transpose()? {
                None => {
                    penalty.validate()?;
                    let fit = fit_joint(&panel, p, &penalty, None, &control)?;
                    write_fit(ctx, &fit, eps)?;
                }
                Some(path) => {
                    let pen = PenaltyConfig { lambda_path: path, ..penalty };
                    pen.validate()?;
                    let sel = select_lambda_bic(&panel, p, &pen, &control)?;
                    write_fit(ctx, &sel.fit, eps)?;
                    let mut path_rows = Vec::new();
                    let mut coef_rows = Vec::new();
                    for (k, (pt, fit)) in sel.path.iter().zip(&sel.fits).enumerate() {
                        path_rows.push(vec![
                            k.to_string(),
                            fmt_num(pt.lambda),
                            fmt_num(pt.bic),
                            fmt_num(pt.ssr),
                            pt.n_nonzero.to_string(),
                            pt.iterations.to_string(),
                            pt.converged.to_string(),
                        ]);
                        for (l, v) in fit.alpha.iter().enumerate() {
                            coef_rows.push(vec![k.to_string(), "alpha".into(), (l + 1).to_string(), String::new(), fmt_num(*v)]);
                        }
                        let adj = fit.network.adjacency();
                        for i in 0..adj.nrows() {
                            for j in 0..adj.ncols() {
                                if adj[(i, j)] != 0.0 {
                                    coef_rows.push(vec![
                                        k.to_string(),
                                        "adjacency".into(),
                                        (i + 1).to_string(),
                                        (j + 1).to_string(),
                                        fmt_num(adj[(i, j)]),
                                    ]);
                                }
                            }
                        }
                    }
                    ctx.write_rows(
                        "path.csv",
                        &["index", "lambda", "bic", "ssr", "n_nonzero", "iterations", "converged"],
                        path_rows,
                    )?;
                    ctx.write_rows("path_coefficients.csv", &["index", "kind", "i", "j", "value"], coef_rows)?;
                    let best = sel.path.iter().position(|pt| pt.lambda == sel.lambda).unwrap_or(0);
                    ctx.write_json(
                        "bic_selected.json",
                        &json!({"index": best, "lambda": sel.lambda, "bic": sel.fit.bic(), "n_nonzero": sel.fit.n_nonzero}),
                    )?;
                }
            }
        }
        "gibbs" => {
            let p = need(&a.p, "p")?;
            penalty.validate()?;
            let cfg = GibbsConfig {
                n_draws: a.draws.unwrap_or(GibbsConfig::default().n_draws),
                burn: a.burn.unwrap_or(GibbsConfig::default().burn),
                seed,
            };
            let draws = gibbs_nvar_p1(&panel, p, &penalty, &cfg)?;
            let mut alpha_rows = Vec::new();
            let mut adj_rows = Vec::new();
            for (d, (al, adj)) in draws.alpha.iter().zip(&draws.adjacency).enumerate() {
                alpha_rows.push(std::iter::once(d.to_string()).chain(al.iter().map(|v| fmt_num(*v))).collect());
                adj_rows.push(std::iter::once(d.to_string()).chain(adj.iter().map(|v| fmt_num(*v))).collect());
            }
            let alpha_header: Vec<String> =
                std::iter::once("draw".to_string()).chain((1..=p).map(|l| format!("alpha_{l}"))).collect();
            let n = panel.n();
            // Column-major entry order, matching the storage of the draws.
            let adj_header: Vec<String> = std::iter::once("draw".to_string())
                .chain((0..n * n).map(|k| format!("a_{}_{}", k % n + 1, k / n + 1)))
                .collect();
            let ah: Vec<&str> = alpha_header.iter().map(String::as_str).collect();
            let dh: Vec<&str> = adj_header.iter().map(String::as_str).collect();
            ctx.write_rows("draws_alpha.csv", &ah, alpha_rows)?;
            ctx.write_rows("draws_adjacency.csv", &dh, adj_rows)?;
            let mat = |m: DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect::<Vec<f64>>()).collect::<Vec<_>>();
            let doc = json!({
                "draws": draws.len(),
                "burn": cfg.burn,
                "seed": cfg.seed,
                "lambda": penalty.lambda,
                "varphi": penalty.varphi,
                "alpha_mean": draws.alpha_mean().iter().cloned().collect::<Vec<f64>>(),
                "alpha_sd": draws.alpha_sd().iter().cloned().collect::<Vec<f64>>(),
                "adjacency_mean": mat(draws.adjacency_mean()),
                "adjacency_sd": mat(draws.adjacency_sd()),
                "sigma_mean": mat(draws.sigma_mean()),
            });
            ctx.write_json("summary.json", &doc)?;
        }
        other => {
            return Err(Failure::Usage(format!(
                "unknown mode {other:?}; use delta-smc, alpha-ols, joint-lasso or gibbs"
            )))
        }
    }
    Ok(())
}

fn parse_grid(s: &str) -> CmdResult<Vec<GridPoint>> {
    s.split(',')
        .map(|item| {
            let (p, q) = item
                .split_once(':')
                .ok_or_else(|| Failure::Usage(format!("grid entry {item:?} is not p*:q*")))?;
            let p_star: f64 = p.trim().parse().map_err(|_| Failure::Usage(format!("bad p* in {item:?}")))?;
            Ok(GridPoint { p_star, q_star: parse_ratio(q)? })
        })
        .collect()
}

fn cmd_select(a: &SelectArgs, ctx: &mut RunContext) -> CmdResult {
    let panel = load_panel_args(ctx, &a.panel)?;
    let net = load_network(ctx, &need(&a.network, "network")?)?;
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(),
    };
    let criterion: Criterion = a
        .criterion
        .as_deref()
        .unwrap_or("mdd")
        .parse()
        .map_err(|e: NetvarError| Failure::Usage(e.to_string()))?;
    let cfg = smc_config(&a.smc, a.seed.unwrap_or(0));
    let sel = model_select(&panel, &net, &grid, criterion, &cfg)?;

    let mut ratios: Vec<SamplingRatio> = Vec::new();
    let mut multiples: Vec<f64> = Vec::new();
    for r in &sel.results {
        if !ratios.contains(&r.score.q_star) {
            ratios.push(r.score.q_star);
        }
        let m = r.score.p_star as f64 / r.score.q_star.value();
        if !multiples.iter().any(|x| (x - m).abs() < 1e-9) {
            multiples.push(m);
        }
    }
    ratios.sort_by(|x, y| x.value().total_cmp(&y.value()));
    multiples.sort_by(f64::total_cmp);
    let mut header = vec!["q_star".to_string()];
    header.extend(multiples.iter().map(|m| format!("{}q*", fmt_multiple(*m))));
    let table = ratios.iter().map(|q| {
        let mut row = vec![q.to_string()];
        for m in &multiples {
            let cell = sel
                .results
                .iter()
                .find(|r| r.score.q_star == *q && (r.score.p_star as f64 / q.value() - m).abs() < 1e-9)
                .map(|r| fmt_num(r.score.log_mdd))
                .unwrap_or_default();
            row.push(cell);
        }
        row
    });
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.write_rows("table.csv", &hdr, table)?;
    let scores = sel.ranked.iter().map(|s| {
        vec![
            s.p_star.to_string(),
            s.q_star.to_string(),
            fmt_num(s.log_mdd),
            fmt_num(s.log_mdd_raw),
            fmt_num(s.loglik_max),
            fmt_num(s.bic),
            fmt_num(s.aic),
            s.n_params.to_string(),
            s.n_obs.to_string(),
        ]
    });
    ctx.write_rows(
        "scores.csv",
        &["p_star", "q_star", "log_mdd", "log_mdd_raw", "loglik_max", "bic", "aic", "n_params", "n_obs"],
        scores,
    )?;
    let best_by = |c: Criterion| sel.ranked_by(c)[0].clone();
    let doc = json!({
        "criterion": sel.criterion,
        "best": sel.best(),
        "best_by": {"mdd": best_by(Criterion::Mdd), "bic": best_by(Criterion::Bic), "aic": best_by(Criterion::Aic)},
        "start": sel.start,
        "skipped": sel.skipped,
        "estimates": sel.results.iter().map(|r| json!({
            "p_star": r.score.p_star,
            "q_star": r.score.q_star,
            "map_delta": r.map.full_delta(),
            "map_sigma": r.map.sigma,
            "posterior_mean_delta": r.posterior_mean.full_delta(),
            "warnings": r.warnings,
        })).collect::<Vec<_>>(),
    });
    ctx.write_json("selection.json", &doc)?;
    Ok(())
}

fn fmt_multiple(m: f64) -> String {
    if (m - m.round()).abs() < 1e-9 {
        format!("{}", m.round() as i64)
    } else {
        format!("{m:.4}")
    }
}

fn cmd_compare(a: &CompareArgs, ctx: &mut RunContext) -> CmdResult {
    let panel = load_panel_args(ctx, &a.panel)?;
    let t = panel.t();
    if t < 4 {
        return Err(Failure::Run(NetvarError::Validation(format!("panel with T = {t} is too short to compare forecasts"))));
    }
    let names = a.models.clone().unwrap_or_else(|| vec!["nvar".into(), "factor".into()]);
    let mut nvar = NvarFactory::new(a.p.unwrap_or(1));
    nvar.varphi = a.varphi.unwrap_or(0.0);
    if let Some(l) = a.lambda {
        nvar.lambda = LambdaChoice::Fixed(l);
    }
    let factor = FactorFactory::new(a.r_max.unwrap_or(8), a.var_lags.unwrap_or(1));
    let mut models: Vec<&dyn ModelFactory> = Vec::new();
    for name in &names {
        match name.as_str() {
            "nvar" => models.push(&nvar),
            "factor" => models.push(&factor),
            other => return Err(Failure::Usage(format!("unknown model {other:?}; use nvar or factor"))),
        }
    }
    if models.is_empty() {
        return Err(Failure::Usage("no models to compare".into()));
    }
    let config = EvalConfig {
        initial_train_end: a.initial_train_end.unwrap_or(t / 2),
        final_train_end: a.final_train_end.unwrap_or(t - 2),
        horizons: (1..=a.h.unwrap_or(24)).collect(),
        exclusion_after: a.exclusion_after,
        origin_step: a.origin_step.unwrap_or(1),
        seed: a.seed.unwrap_or(0),
    };
    let report = rolling_evaluate(&panel, &models, &config)?;
    ctx.write("report.csv", |w| report.write_csv(w))?;
    ctx.write_json("report.json", &json!({"config": config, "report": report}))?;
    for f in &report.failures {
        eprintln!("warning: {} failed at origin {}: {}", f.model, f.origin, f.message);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli) as u8)
}

fn run(cli: Cli) -> i32 {
    let started = Instant::now();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_USAGE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    }
    let threads = rayon::current_num_threads();
    let mut ctx = match RunContext::new(&cli.out) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: cannot use output directory {}: {e}", cli.out.display());
            return EXIT_USAGE;
        }
    };
    let command = command_name(&cli.command);
    let (resolved, outcome) = dispatch(&cli, command, &mut ctx);
    let (code, message) = match &outcome {
        Ok(()) => (EXIT_OK, None),
        Err(Failure::Usage(m)) => (EXIT_USAGE, Some(m.clone())),
        Err(Failure::Run(e)) => (exit_code(e), Some(e.to_string())),
    };
    if let Some(m) = &message {
        eprintln!("error: {m}");
    }
    if let Err(Failure::Run(e)) = &outcome {
        if code == EXIT_ESTIMATION {
            let diag = json!({"command": command, "kind": error_kind(e), "message": e.to_string()});
            if let Err(e) = ctx.write_json("diagnostic.json", &diag) {
                eprintln!("error: cannot write diagnostic: {e}");
            }
        }
    }
    let seed = resolved.get("seed").and_then(Value::as_u64);
    let wall = started.elapsed().as_secs_f64();
    match ctx.manifest(command, resolved, seed, threads, wall, code, message) {
        Ok(m) => {
            let path = ctx.out_dir.join("manifest.json");
            let text = serde_json::to_string_pretty(&m).expect("manifest serialises") + "\n";
            if let Err(e) = std::fs::write(&path, text) {
                eprintln!("error: cannot write manifest: {e}");
                return if code == EXIT_OK { EXIT_USAGE } else { code };
            }
        }
        Err(e) => eprintln!("error: cannot build manifest: {e}"),
    }
    code
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Netstats(_) => "netstats",
        Command::Irf(_) => "irf",
        Command::Aggregate(_) => "aggregate",
        Command::Estimate(_) => "estimate",
        Command::Select(_) => "select",
        Command::Compare(_) => "compare",
    }
}

fn load_config(ctx: &mut RunContext, path: &Option<PathBuf>, command: &str) -> CmdResult<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    ctx.input(path)?;
    let doc: Value = read_json(path).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    config_section(doc, command).map(Some).map_err(|e| Failure::Usage(e.to_string()))
}

/// Resolves the settings for the chosen command and runs it.
fn dispatch(cli: &Cli, command: &str, ctx: &mut RunContext) -> (Value, CmdResult) {
    let config = match load_config(ctx, &cli.config, command) {
        Ok(c) => c,
        Err(e) => return (Value::Null, Err(e)),
    };
    macro_rules! go {
        ($args:expr, $defaults:expr, $f:ident) => {
            match resolve($args, &$defaults, config) {
                Ok((a, v)) => {
                    let r = $f(&a, ctx);
                    (v, r)
                }
                Err(e) => (Value::Null, Err(e)),
            }
        };
    }
    match &cli.command {
        Command::Simulate(a) => go!(a, SimulateArgs { burn: None, seed: Some(0), ..Default::default() }, cmd_simulate),
        Command::Netstats(a) => go!(a, NetstatsArgs { threshold: Some(0.0), ..Default::default() }, cmd_netstats),
        Command::Irf(a) => go!(
            a,
            IrfArgs {
                h: Some(DEFAULT_HORIZON),
                shock_scale: Some("unit".into()),
                sub_period: Some(0),
                ..Default::default()
            },
            cmd_irf
        ),
        Command::Aggregate(a) => go!(a, AggregateArgs::default(), cmd_aggregate),
        Command::Estimate(a) => go!(
            a,
            EstimateArgs {
                q_star: Some("1".into()),
                smc: smc_defaults(),
                hpd_mass: Some(0.95),
                q: Some(1),
                lambda: Some(0.0),
                varphi: Some(0.0),
                tol: Some(FitControl::default().tol),
                max_iter: Some(FitControl::default().max_iter),
                rescale_eps: Some(1e-6),
                draws: Some(GibbsConfig::default().n_draws),
                burn: Some(GibbsConfig::default().burn),
                seed: Some(0),
                ..Default::default()
            },
            cmd_estimate
        ),
        Command::Select(a) => go!(
            a,
            SelectArgs { criterion: Some("mdd".into()), smc: smc_defaults(), seed: Some(0), ..Default::default() },
            cmd_select
        ),
        Command::Compare(a) => go!(
            a,
            CompareArgs {
                models: Some(vec!["nvar".into(), "factor".into()]),
                p: Some(1),
                varphi: Some(0.0),
                r_max: Some(8),
                var_lags: Some(1),
                h: Some(24),
                origin_step: Some(1),
                seed: Some(0),
                ..Default::default()
            },
            cmd_compare
        ),
    }
}
