//! Argument surfaces and implementations for the seven commands.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use warpfit::{
    barycenter_quantile, default_start_grid, derive_seed, estimate, inverse_warp, minimize_u_n,
    normal_quantile, phi_from_r_quantile, simulate_limit_null, test_nonparametric_delta0,
    test_parametric_null, test_vn_normal, AnchorChoice, BootstrapConfig, BootstrapMode,
    DeformationFamily, EstimateOptions, LocationFamily, LocationScaleFamily, MinimizeOptions,
    NullLimitModel, PhiMatrix, QuantileFn, ScalarFn, ScaleFamily, SigmaStrategy, TestOptions,
    ThetaVector,
};

use crate::dataset::{load_dataset, Dataset};
use crate::report::{
    BarycenterOutput, CommandResult, FitOutput, LimitSimOutput, QuantilePoint, Report,
    ResolvedConfig, SimulateDataOutput,
};
use crate::{CliError, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "warpfit",
    version,
    about = "Estimation and goodness-of-fit testing for 1-D deformation models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate warp parameters by minimizing the barycenter variation.
    Fit(FitArgs),
    /// Bootstrap-calibrated test of H0: the deformation model holds.
    TestNull(TestNullArgs),
    /// Bootstrap-calibrated test of H0: minimal variation >= delta0.
    TestDelta0(TestDelta0Args),
    /// Normal-quantile variant of the delta0 test.
    TestVn(TestVnArgs),
    /// Barycenter quantile atoms of the raw input groups.
    Barycenter(BarycenterArgs),
    /// Draw synthetic grouped data from the deformation model.
    SimulateData(SimulateArgs),
    /// Simulate the null limit law of n * inf U_n for a configuration.
    LimitSim(LimitSimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyKind {
    Location,
    Scale,
    LocationScale,
}

impl FamilyKind {
    pub fn build(self) -> Arc<dyn DeformationFamily + Send + Sync> {
        match self {
            FamilyKind::Location => Arc::new(LocationFamily::default()),
            FamilyKind::Scale => Arc::new(ScaleFamily::default()),
            FamilyKind::LocationScale => Arc::new(LocationScaleFamily::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MnRule {
    /// m_n = ceil(n^0.7), for the parametric-null statistic.
    Param,
    /// m_n = ceil(n^0.45), for the centered nonparametric statistic.
    Nonparam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaKind {
    /// Standard deviation of the bootstrap replicates (default).
    Bootstrap,
    /// Experimental plug-in estimator from cumulative sums.
    PluginL,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemplateKind {
    /// Uniform(0,1) template noise.
    Uniform,
    /// Standard normal template noise.
    Normal,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with header `group,value`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FamilyKind::Location)]
    pub family: FamilyKind,
    /// Group id to pin to the identity warp, or `none`. Default: last group.
    #[arg(long)]
    pub anchor: Option<String>,
    /// Master seed; 0 draws one from entropy and records it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flags shared by the three test commands.
#[derive(Debug, Args)]
pub struct TestCommonArgs {
    /// Input CSV with header `group,value`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FamilyKind::Location)]
    pub family: FamilyKind,
    /// Group id to pin to the identity warp, or `none`. Default: last group.
    #[arg(long)]
    pub anchor: Option<String>,
    /// Test level in (0,1).
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Resample-size growth rule when --mn is not given.
    #[arg(long, value_enum)]
    pub mn_rule: Option<MnRule>,
    /// Explicit resample size m_n (overrides the rule).
    #[arg(long)]
    pub mn: Option<usize>,
    /// Bootstrap replicate count.
    #[arg(long = "B", default_value_t = 500)]
    pub b: usize,
    /// Master seed; 0 draws one from entropy and records it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestNullArgs {
    #[command(flatten)]
    pub common: TestCommonArgs,
}

#[derive(Debug, Args)]
pub struct TestDelta0Args {
    #[command(flatten)]
    pub common: TestCommonArgs,
    /// Null lower bound on the minimal variation; must be positive.
    #[arg(long)]
    pub delta0: f64,
}

#[derive(Debug, Args)]
pub struct TestVnArgs {
    #[command(flatten)]
    pub common: TestCommonArgs,
    /// Null lower bound on the minimal variation; must be positive.
    #[arg(long)]
    pub delta0: f64,
    /// Standard-deviation estimator for the normalized statistic.
    #[arg(long, value_enum, default_value_t = SigmaKind::Bootstrap)]
    pub sigma: SigmaKind,
}

#[derive(Debug, Args)]
pub struct BarycenterArgs {
    /// Input CSV with header `group,value`.
    #[arg(long)]
    pub input: PathBuf,
    /// Master seed; 0 draws one from entropy and records it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = FamilyKind::Location)]
    pub family: FamilyKind,
    /// True per-group parameters: groups separated by `:`, coordinates by
    /// `,` (e.g. `0.5:-0.3:0` for three location groups).
    #[arg(long)]
    pub theta: String,
    #[arg(long, value_enum, default_value_t = TemplateKind::Uniform)]
    pub template: TemplateKind,
    /// Observations per group.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Master seed; 0 draws one from entropy and records it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination for the synthetic CSV.
    #[arg(long)]
    pub data_out: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LimitSimArgs {
    #[arg(long, value_enum, default_value_t = FamilyKind::Location)]
    pub family: FamilyKind,
    /// Null parameters: groups separated by `:`, coordinates by `,`.
    #[arg(long)]
    pub theta: String,
    #[arg(long, value_enum, default_value_t = TemplateKind::Uniform)]
    pub template: TemplateKind,
    /// Group id (g1..gJ) to anchor, or `none`. Default: last group.
    #[arg(long)]
    pub anchor: Option<String>,
    /// Bridge grid size.
    #[arg(long, default_value_t = 1024)]
    pub k: usize,
    /// Number of limit-law draws.
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    /// Master seed; 0 draws one from entropy and records it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A finished run: the rendered report and how the command ended.
pub struct RunOutput {
    pub json: String,
    pub outcome: Outcome,
    pub wrote_file: bool,
}

pub fn run(cli: Cli) -> Result<RunOutput, CliError> {
    let (report, outcome, out) = match cli.command {
        Command::Fit(args) => run_fit(args)?,
        Command::TestNull(args) => run_test_null(args)?,
        Command::TestDelta0(args) => run_test_delta0(args)?,
        Command::TestVn(args) => run_test_vn(args)?,
        Command::Barycenter(args) => run_barycenter(args)?,
        Command::SimulateData(args) => run_simulate_data(args)?,
        Command::LimitSim(args) => run_limit_sim(args)?,
    };
    let json = crate::report::write_report(&report, out.as_deref())?;
    Ok(RunOutput {
        json,
        outcome,
        wrote_file: out.is_some(),
    })
}

fn make_report(command: &str, config: ResolvedConfig, result: CommandResult) -> Report {
    Report {
        timestamp: chrono::Utc::now().to_rfc3339(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config,
        result,
    }
}

/// Seed 0 means "draw a fresh nonzero seed from entropy"; the resolved
/// value is recorded in the report so the run can be replayed.
fn resolve_seed(seed: u64) -> u64 {
    if seed != 0 {
        return seed;
    }
    let mut rng = rand::thread_rng();
    loop {
        let s: u64 = rng.gen();
        if s != 0 {
            return s;
        }
    }
}

fn param_box_config(fam: &dyn DeformationFamily) -> Vec<[f64; 2]> {
    fam.param_box().into_iter().map(|(lo, hi)| [lo, hi]).collect()
}

/// Maps the --anchor flag to a library anchor choice against the dataset's
/// group ids, returning the anchored id for the report.
fn resolve_anchor(
    arg: &Option<String>,
    dataset: &Dataset,
) -> Result<(AnchorChoice, Option<String>), CliError> {
    match arg.as_deref() {
        None => Ok((
            AnchorChoice::LastGroup,
            Some(dataset.groups.last().unwrap().clone()),
        )),
        Some("none") => Ok((AnchorChoice::Unanchored, None)),
        Some(id) => {
            let idx = dataset.group_index(id).ok_or_else(|| {
                CliError::Usage(format!("anchor group `{id}` not present in the input"))
            })?;
            Ok((AnchorChoice::Group(idx), Some(id.to_string())))
        }
    }
}

fn resolve_bootstrap(
    common: &TestCommonArgs,
    dataset: &Dataset,
    default_rule: MnRule,
    seed: u64,
) -> (BootstrapConfig, String) {
    let rule = common.mn_rule.unwrap_or(default_rule);
    let mode = match rule {
        MnRule::Param => BootstrapMode::ParametricNull,
        MnRule::Nonparam => BootstrapMode::Nonparametric,
    };
    let mut config = BootstrapConfig::for_data(&dataset.data, mode, seed);
    config.b = common.b;
    if let Some(m) = common.mn {
        config.m_n = m;
    }
    let rule_name = match rule {
        MnRule::Param => "param",
        MnRule::Nonparam => "nonparam",
    };
    (config, rule_name.to_string())
}

fn family_name(kind: FamilyKind) -> &'static str {
    match kind {
        FamilyKind::Location => "location",
        FamilyKind::Scale => "scale",
        FamilyKind::LocationScale => "location-scale",
    }
}

fn run_fit(args: FitArgs) -> Result<(Report, Outcome, Option<PathBuf>), CliError> {
    let dataset = load_dataset(&args.input)?;
    let fam = args.family.build();
    let (anchor, anchor_id) = resolve_anchor(&args.anchor, &dataset)?;
    let seed = resolve_seed(args.seed);

    let output = if dataset.data.equal_n().is_some() {
        let options = EstimateOptions {
            anchor,
            ..EstimateOptions::default()
        };
        let res = estimate(&dataset.data, &*fam, &options)?;
        FitOutput {
            groups: dataset.groups.clone(),
            theta_hat: (0..dataset.groups.len())
                .map(|j| res.theta_hat.group(j).to_vec())
                .collect(),
            inf_u_n: res.value,
            converged: res.converged,
            iterations: res.iterations,
            restarts_used: res.restarts_used,
            phi: Some(matrix_rows(res.phi.effective())),
            phi_invertible: Some(res.phi.invertible()),
        }
    } else {
        // Unequal group sizes: the criterion and its minimizer are still
        // defined, but the plug-in curvature is not reported.
        let j = dataset.data.num_groups();
        let anchor_idx = match anchor {
            AnchorChoice::LastGroup => Some(j - 1),
            AnchorChoice::Group(a) => Some(a),
            AnchorChoice::Unanchored => None,
        };
        let starts = default_start_grid(&*fam, j, anchor_idx)?;
        let res = minimize_u_n(&dataset.data, &*fam, &starts, &MinimizeOptions::default())?;
        FitOutput {
            groups: dataset.groups.clone(),
            theta_hat: (0..dataset.groups.len())
                .map(|j| res.theta_hat.group(j).to_vec())
                .collect(),
            inf_u_n: res.value,
            converged: res.converged,
            iterations: res.iterations,
            restarts_used: res.restarts_used,
            phi: None,
            phi_invertible: None,
        }
    };

    let config = ResolvedConfig {
        input: Some(args.input.display().to_string()),
        family: Some(family_name(args.family).to_string()),
        param_box: Some(param_box_config(&*fam)),
        anchor_group: anchor_id,
        anchor_params: match anchor {
            AnchorChoice::Unanchored => None,
            _ => Some(fam.identity_params()),
        },
        seed,
        ..ResolvedConfig::default()
    };
    Ok((
        make_report("fit", config, CommandResult::Fit(output)),
        Outcome::Completed,
        args.out,
    ))
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

/// Shared setup for the three test commands.
struct TestSetup {
    dataset: Dataset,
    fam: Arc<dyn DeformationFamily + Send + Sync>,
    options: TestOptions,
    config: ResolvedConfig,
}

fn prepare_test(
    common: &TestCommonArgs,
    default_rule: MnRule,
    sigma: SigmaKind,
) -> Result<TestSetup, CliError> {
    let dataset = load_dataset(&common.input)?;
    let fam = common.family.build();
    let (anchor, anchor_id) = resolve_anchor(&common.anchor, &dataset)?;
    let seed = resolve_seed(common.seed);
    let (bootstrap, rule_name) = resolve_bootstrap(common, &dataset, default_rule, seed);

    let config = ResolvedConfig {
        input: Some(common.input.display().to_string()),
        family: Some(family_name(common.family).to_string()),
        param_box: Some(param_box_config(&*fam)),
        anchor_group: anchor_id,
        anchor_params: match anchor {
            AnchorChoice::Unanchored => None,
            _ => Some(fam.identity_params()),
        },
        alpha: Some(common.alpha),
        mn_rule: Some(rule_name),
        m_n: Some(bootstrap.m_n),
        b: Some(bootstrap.b),
        sigma: match sigma {
            SigmaKind::Bootstrap => None,
            SigmaKind::PluginL => Some("plugin-l".to_string()),
        },
        seed,
        ..ResolvedConfig::default()
    };

    let mut options = TestOptions::new(bootstrap);
    options.anchor = anchor;
    options.sigma = match sigma {
        SigmaKind::Bootstrap => SigmaStrategy::Bootstrap,
        SigmaKind::PluginL => SigmaStrategy::PluginL,
    };
    Ok(TestSetup {
        dataset,
        fam,
        options,
        config,
    })
}

fn test_outcome(reject: bool) -> Outcome {
    if reject {
        Outcome::Rejected
    } else {
        Outcome::Completed
    }
}

fn run_test_null(args: TestNullArgs) -> Result<(Report, Outcome, Option<PathBuf>), CliError> {
    let setup = prepare_test(&args.common, MnRule::Param, SigmaKind::Bootstrap)?;
    let report = test_parametric_null(
        &setup.dataset.data,
        &*setup.fam,
        args.common.alpha,
        &setup.options,
    )?;
    let outcome = test_outcome(report.reject);
    Ok((
        make_report("test-null", setup.config, CommandResult::Test(report)),
        outcome,
        args.common.out,
    ))
}

fn run_test_delta0(args: TestDelta0Args) -> Result<(Report, Outcome, Option<PathBuf>), CliError> {
    let mut setup = prepare_test(&args.common, MnRule::Nonparam, SigmaKind::Bootstrap)?;
    setup.config.delta0 = Some(args.delta0);
    let report = test_nonparametric_delta0(
        &setup.dataset.data,
        &*setup.fam,
        args.delta0,
        args.common.alpha,
        &setup.options,
    )?;
    let outcome = test_outcome(report.reject);
    Ok((
        make_report("test-delta0", setup.config, CommandResult::Test(report)),
        outcome,
        args.common.out,
    ))
}

fn run_test_vn(args: TestVnArgs) -> Result<(Report, Outcome, Option<PathBuf>), CliError> {
    let mut setup = prepare_test(&args.common, MnRule::Nonparam, args.sigma)?;
    setup.config.delta0 = Some(args.delta0);
    let report = test_vn_normal(
        &setup.dataset.data,
        &*setup.fam,
        args.delta0,
        args.common.alpha,
        &setup.options,
    )?;
    let outcome = test_outcome(report.reject);
    Ok((
        make_report("test-vn", setup.config, CommandResult::Test(report)),
        outcome,
        args.common.out,
    ))
}

fn run_barycenter(args: BarycenterArgs) -> Result<(Report, Outcome, Option<PathBuf>), CliError> {
    let dataset = load_dataset(&args.input)?;
    let qs: Vec<QuantileFn> = dataset
        .data
        .groups()
        .iter()
        .map(|s| s.quantile_fn())
        .collect();
    let bary = barycenter_quantile(&qs)?;
    let output = BarycenterOutput {
        groups: dataset.groups.clone(),
        atoms: bary.atoms().into_iter().map(|(w, l)| [w, l]).collect(),
    };
    let config = ResolvedConfig {
        input: Some(args.input.display().to_string()),
        seed: resolve_seed(args.seed),
        ..ResolvedConfig::default()
    };
    Ok((
        make_report("barycenter", config, CommandResult::Barycenter(output)),
        Outcome::Completed,
        args.out,
    ))
}

/// Parses `a1,b1:a2,b2:...` into per-group parameter vectors and validates
/// them against the family's box.
fn parse_theta(text: &str, fam: &dyn DeformationFamily) -> Result<Vec<Vec<f64>>, CliError> {
    let mut params = Vec::new();
    for group_text in text.split(':') {
        let coords = group_text
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| CliError::Usage(format!("cannot parse theta group `{group_text}`")))?;
        if coords.len() != fam.param_dim() {
            return Err(CliError::Usage(format!(
                "theta group `{group_text}` has {} coordinates, family `{}` needs {}",
                coords.len(),
                fam.name(),
                fam.param_dim()
            )));
        }
        params.push(coords);
    }
    if params.len() < 2 {
        return Err(CliError::Usage(
            "theta must specify at least 2 groups".to_string(),
        ));
    }
    // Box validation happens in the library constructor.
    ThetaVector::new(params.clone(), fam)?;
    Ok(params)
}

fn template_name(kind: TemplateKind) -> &'static str {
    match kind {
        TemplateKind::Uniform => "uniform",
        TemplateKind::Normal => "normal",
    }
}

fn run_simulate_data(args: SimulateArgs) -> Result<(Report, Outcome, Option<PathBuf>), CliError> {
    let fam = args.family.build();
    let theta = parse_theta(&args.theta, &*fam)?;
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".to_string()));
    }
    let seed = resolve_seed(args.seed);
    let groups: Vec<String> = (1..=theta.len()).map(|j| format!("g{j}")).collect();

    // X = inverse warp of the template draw, one derived RNG stream per
    // group so group count does not reshuffle other groups' draws.
    let mut csv = String::from("group,value\n");
    for (j, lam) in theta.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, j as u64));
        for _ in 0..args.n {
            let eps: f64 = match args.template {
                TemplateKind::Uniform => rng.gen(),
                TemplateKind::Normal => rng.sample(StandardNormal),
            };
            let x = inverse_warp(&*fam, lam, eps)?;
            csv.push_str(&format!("{},{x}\n", groups[j]));
        }
    }
    std::fs::write(&args.data_out, &csv)?;

    let output = SimulateDataOutput {
        groups: groups.clone(),
        n_per_group: args.n,
        rows: args.n * theta.len(),
        data_path: args.data_out.display().to_string(),
    };
    let config = ResolvedConfig {
        family: Some(family_name(args.family).to_string()),
        param_box: Some(param_box_config(&*fam)),
        template: Some(template_name(args.template).to_string()),
        n: Some(args.n),
        theta: Some(theta),
        data_out: Some(args.data_out.display().to_string()),
        seed,
        ..ResolvedConfig::default()
    };
    Ok((
        make_report(
            "simulate-data",
            config,
            CommandResult::SimulateData(output),
        ),
        Outcome::Completed,
        args.out,
    ))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Score functions t -> d/dtheta phi(x_j(t)) along the template quantile,
/// where x_j(t) is the group quantile implied by the null parameters.
fn make_scores(
    kind: FamilyKind,
    theta: &[Vec<f64>],
    template: TemplateKind,
) -> Vec<Vec<ScalarFn>> {
    theta
        .iter()
        .map(|lam| {
            let p = lam.len();
            (0..p)
                .map(|coord| {
                    let fam = kind.build();
                    let lam = lam.clone();
                    let f: ScalarFn = Box::new(move |t| {
                        let y = match template {
                            TemplateKind::Uniform => t,
                            TemplateKind::Normal => {
                                normal_quantile(t).expect("interior grid point")
                            }
                        };
                        let x = inverse_warp(&*fam, &lam, y)
                            .expect("affine warps invert everywhere");
                        let mut grad = vec![0.0; lam.len()];
                        fam.grad_params(&lam, x, &mut grad);
                        grad[coord]
                    });
                    f
                })
                .collect()
        })
        .collect()
}

fn run_limit_sim(args: LimitSimArgs) -> Result<(Report, Outcome, Option<PathBuf>), CliError> {
    let fam = args.family.build();
    let theta = parse_theta(&args.theta, &*fam)?;
    let j = theta.len();
    let groups: Vec<String> = (1..=j).map(|g| format!("g{g}")).collect();
    let (anchor_idx, anchor_id) = match args.anchor.as_deref() {
        None => (Some(j - 1), Some(groups[j - 1].clone())),
        Some("none") => (None, None),
        Some(id) => {
            let idx = groups.iter().position(|g| g == id).ok_or_else(|| {
                CliError::Usage(format!(
                    "anchor `{id}` not among the {j} simulated groups g1..g{j}"
                ))
            })?;
            (Some(idx), Some(id.to_string()))
        }
    };
    if args.draws == 0 {
        return Err(CliError::Usage("--draws must be at least 1".to_string()));
    }
    let seed = resolve_seed(args.seed);

    let density: ScalarFn = match args.template {
        TemplateKind::Uniform => Box::new(|_| 1.0),
        TemplateKind::Normal => Box::new(|t| {
            normal_pdf(normal_quantile(t).expect("interior grid point"))
        }),
    };
    let full = phi_from_r_quantile(&make_scores(args.family, &theta, args.template), args.k)?;
    let phi = PhiMatrix::from_full(full, anchor_idx, fam.param_dim())?;
    let model = NullLimitModel {
        r_at_template_quantile: make_scores(args.family, &theta, args.template),
        template_density_at_quantile: density,
        anchor: anchor_idx,
    };
    let sample = simulate_limit_null(&model, phi.effective(), args.k, args.draws, seed)?;

    let mut sorted = sample.draws.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.5, 0.9, 0.95, 0.99]
        .iter()
        .map(|&level| QuantilePoint {
            level,
            value: empirical_quantile(&sorted, level),
        })
        .collect();
    let n_draws = sample.draws.len();
    let mean = sample.draws.iter().sum::<f64>() / n_draws as f64;
    let sd = (sample
        .draws
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / (n_draws - 1).max(1) as f64)
        .sqrt();
    let output = LimitSimOutput {
        draws: n_draws,
        mean,
        sd,
        quantiles,
        first_term_mean: sample.components.as_ref().map(|cs| {
            cs.iter().map(|c| c.first_term).sum::<f64>() / cs.len() as f64
        }),
    };

    let config = ResolvedConfig {
        family: Some(family_name(args.family).to_string()),
        param_box: Some(param_box_config(&*fam)),
        anchor_group: anchor_id,
        anchor_params: anchor_idx.map(|_| fam.identity_params()),
        template: Some(template_name(args.template).to_string()),
        theta: Some(theta),
        k: Some(args.k),
        draws: Some(args.draws),
        seed,
        ..ResolvedConfig::default()
    };
    Ok((
        make_report("limit-sim", config, CommandResult::LimitSim(output)),
        Outcome::Completed,
        args.out,
    ))
}

/// Order statistic at rank ceil(len * level), the same convention as the
/// bootstrap quantile.
fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let rank = ((sorted.len() as f64) * level).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
