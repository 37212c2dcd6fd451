use serde::Serialize;

use super::config::{ExperimentConfig, LossSpec};
use super::output::{line_plot_svg, num, ArtifactWriter};
use super::scenarios::{
    huber_contraction, mixture_contraction_grid, ratio_spread, regime_grid, scaling_study,
    symmetrization_suite, tail_suite, SimRow,
};
use crate::chaining::{logfactor_study, LogfactorConfig};
use crate::emp_process::{hoeffding_bound, Regime, TailCheckReport};
use crate::error::Result;
use crate::losses::LossModel;
use crate::rng::{derive_seed, replication_rng};
use crate::sample::{gaussian_design, Generator};
use crate::solver::{solve, SolverConfig};

/// One named pass/fail gate evaluated by a subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Solve,
    Simulate,
    Check,
    Chain,
    Oracle,
    Scaling,
}

fn bool_str(b: bool) -> String {
    b.to_string()
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Linear => "linear",
        Regime::Glm => "glm",
        Regime::ExtendedGlm => "extended-glm",
        Regime::Nonlinear => "nonlinear",
    }
}

/// Runs one subcommand, writes its artifacts and returns its verdicts.
pub fn run_task(task: Task, cfg: &ExperimentConfig, seed: u64, out: &ArtifactWriter) -> Result<Vec<Verdict>> {
    match task {
        Task::Solve => run_solve(cfg, seed, out),
        Task::Simulate => run_simulate(cfg, seed, out),
        Task::Check => run_check(cfg, seed, out),
        Task::Chain => run_chain(cfg, seed, out),
        Task::Oracle => run_oracle(cfg, seed, out),
        Task::Scaling => run_scaling(cfg, seed, out),
    }
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    lambda: f64,
    theta: &'a [f64],
    objective: f64,
    kkt: f64,
    iterations: usize,
    converged: bool,
}

fn run_solve(cfg: &ExperimentConfig, seed: u64, out: &ArtifactWriter) -> Result<Vec<Verdict>> {
    let s = &cfg.solve;
    let z = gaussian_design(s.n, s.p, derive_seed(seed, 0), true);
    let theta0: Vec<f64> = (0..s.p)
        .map(|j| match j {
            j if j >= s.s0 => 0.0,
            j if j % 2 == 0 => s.signal,
            _ => -s.signal,
        })
        .collect();
    let (model, generator) = match s.loss {
        LossSpec::Quadratic => (LossModel::quadratic(s.p), Generator::LinearGaussian { theta0, sigma: s.sigma }),
        LossSpec::Huber { kappa } => (LossModel::huber(s.p, kappa)?, Generator::LinearGaussian { theta0, sigma: s.sigma }),
        LossSpec::Logistic => (LossModel::logistic(s.p), Generator::Logistic { theta0 }),
    };
    let sample = generator.sample(&z, &mut replication_rng(seed, 1))?;
    let lambda = s
        .lambda
        .unwrap_or_else(|| s.lambda_multiple * hoeffding_bound(s.p, s.n, 1.0));
    let solver = SolverConfig {
        lambda,
        seed: derive_seed(seed, 2),
        ..s.solver.clone()
    };
    let sol = solve(&model, &sample, &solver)?;
    out.json(
        "solve.json",
        &SolveOutput {
            lambda,
            theta: &sol.theta,
            objective: sol.objective,
            kkt: sol.kkt,
            iterations: sol.iterations,
            converged: sol.converged,
        },
    )?;
    Ok(vec![Verdict::new(
        "solver-converged",
        sol.converged,
        format!("kkt={} after {} iterations", sol.kkt, sol.iterations),
    )])
}

const SIM_HEADER: [&str; 10] = ["regime", "n", "p", "M", "estimate", "se", "bound", "ratio", "dominated", "lower_estimate"];

fn sim_record(r: &SimRow) -> Vec<String> {
    vec![
        regime_name(r.regime).into(),
        r.n.to_string(),
        r.p.to_string(),
        num(r.m),
        num(r.estimate),
        num(r.se),
        num(r.bound),
        num(r.ratio),
        bool_str(r.dominated()),
        bool_str(r.lower_estimate),
    ]
}

/// Domination in every cell, plus the ratio band for the linear regime
/// where the bound is sharp up to the maximal inequality.
fn domination_verdicts(rows: &[SimRow]) -> Vec<Verdict> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let bad = rows.iter().filter(|r| !r.dominated()).count();
    let mut v = vec![Verdict::new(
        "bound-dominates-estimate",
        bad == 0,
        format!("{bad} of {} cells exceed bound + 3 SE", rows.len()),
    )];
    if first.regime == Regime::Linear {
        let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
        v.push(Verdict::new(
            "ratio-in-band",
            lo >= 0.25 && hi <= 1.0,
            format!("estimate/bound in [{lo:.4}, {hi:.4}], required [0.25, 1]"),
        ));
    }
    v
}

fn run_simulate(cfg: &ExperimentConfig, seed: u64, out: &ArtifactWriter) -> Result<Vec<Verdict>> {
    let s = &cfg.simulate;
    let rows = regime_grid(s.regime, &s.n_grid, &s.p_grid, &s.m_grid, s.reps, seed, &s.search)?;
    let records: Vec<Vec<String>> = rows.iter().map(sim_record).collect();
    out.csv("simulate.csv", &SIM_HEADER, &records)?;
    Ok(domination_verdicts(&rows))
}

fn tail_record(r: &TailCheckReport) -> Vec<String> {
    vec![
        format!("{:?}", r.kind).to_lowercase(),
        num(r.t),
        r.reps.to_string(),
        num(r.frequency),
        num(r.se),
        num(r.allowed),
        bool_str(r.verdict),
        bool_str(r.lower_estimate),
    ]
}

fn run_check(cfg: &ExperimentConfig, seed: u64, out: &ArtifactWriter) -> Result<Vec<Verdict>> {
    let c = &cfg.check;
    let mut verdicts = Vec::new();
    let mut tails = Vec::new();
    for (k, &t) in c.t_grid.iter().enumerate() {
        let tail_seed = derive_seed(seed, k as u64);
        let suite = tail_suite(c.n, c.p, t, c.reps, tail_seed, &c.search)?;
        for r in suite.reports() {
            verdicts.push(Verdict::new(
                &format!("tail-{:?}-t{t}", r.kind).to_lowercase(),
                r.verdict,
                format!("frequency {} vs allowed {} + 3 SE ({})", r.frequency, r.allowed, r.se),
            ));
            tails.push(tail_record(r));
        }
        if t >= 4.0 {
            let sym = symmetrization_suite(c.n, c.p, t, c.reps, tail_seed, &c.search)?;
            verdicts.push(Verdict::new(
                &format!("symmetrization-t{t}"),
                sym.verdict,
                format!("lhs {} vs 4 x rhs {}", sym.lhs_freq, sym.rhs_times_4),
            ));
            tails.push(vec![
                "symmetrization".into(),
                num(t),
                sym.reps.to_string(),
                num(sym.lhs_freq),
                num(sym.se),
                num(sym.rhs_times_4),
                bool_str(sym.verdict),
                bool_str(false),
            ]);
        }
    }
    out.csv(
        "check_tails.csv",
        &["kind", "t", "reps", "frequency", "se", "allowed", "verdict", "lower_estimate"],
        &tails,
    )?;

    let header = ["toy", "n", "p", "contracted", "contracted_se", "linear", "linear_se", "ratio", "ratio_se"];
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let mut rows = Vec::new();
    let huber = huber_contraction(c.contraction_n, c.contraction_p, c.reps, derive_seed(seed, 100), &c.contraction_search)?;
    rows.push(vec![
        "huber".into(),
        c.contraction_n.to_string(),
        c.contraction_p.to_string(),
        num(huber.contracted.mean),
        num(huber.contracted.std_error),
        num(huber.linear.mean),
        num(huber.linear.std_error),
        opt(huber.ratio),
        opt(huber.ratio_se),
    ]);
    verdicts.push(Verdict::new(
        "huber-contraction",
        huber.verdict == Some(true),
        format!("ratio {:?} (se {:?}), allowed 2 + 3 SE", huber.ratio, huber.ratio_se),
    ));
    let mixture = mixture_contraction_grid(
        &c.mixture_n_grid,
        c.mixture_q,
        c.mixture_reps,
        derive_seed(seed, 101),
        &c.contraction_search,
    )?;
    for m in &mixture {
        rows.push(vec![
            "mixture".into(),
            m.n.to_string(),
            m.q.to_string(),
            num(m.report.contracted.mean),
            num(m.report.contracted.std_error),
            num(m.report.linear.mean),
            num(m.report.linear.std_error),
            opt(m.report.ratio),
            opt(m.report.ratio_se),
        ]);
    }
    let spread = ratio_spread(&mixture);
    verdicts.push(Verdict::new(
        "mixture-ratio-stable",
        spread <= 2.0,
        format!("max/min ratio over n = {spread}"),
    ));
    out.csv("check_contraction.csv", &header, &rows)?;
    Ok(verdicts)
}

fn run_chain(cfg: &ExperimentConfig, seed: u64, out: &ArtifactWriter) -> Result<Vec<Verdict>> {
    let c = &cfg.chain;
    let table = logfactor_study(&LogfactorConfig {
        p: c.p,
        n_grid: c.n_grid.clone(),
        extra: c.extra,
        reps: c.reps,
        seed,
    })?;
    let records: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.p.to_string(),
                num(r.dudley),
                num(r.dualnorm),
                num(r.mc_sup),
                num(r.ratio),
                r.surrogate_size.to_string(),
                num(r.mc_se),
                num(r.dudley_entropy),
                num(r.dual_over_mc),
            ]
        })
        .collect();
    out.csv(
        "chain.csv",
        &["n", "p", "dudley", "dualnorm", "mc_sup", "ratio", "surrogate_size", "mc_se", "dudley_entropy", "dual_over_mc"],
        &records,
    )?;
    out.json("chain_fit.json", &(&table.fit, &table.entropy_fit, table.dual_mc_band))?;
    if c.svg {
        let pts: Vec<(f64, f64)> = table.rows.iter().map(|r| ((r.n as f64).ln(), r.ratio)).collect();
        out.text("chain.svg", &line_plot_svg("Dudley / dual-norm bound", "log n", "ratio", &pts))?;
    }
    let f = &table.fit;
    Ok(vec![
        Verdict::new(
            "logfactor-slope",
            f.slope > 0.0 && f.r_squared >= 0.9,
            format!("slope {} with R^2 {}", f.slope, f.r_squared),
        ),
        Verdict::new(
            "dualnorm-mc-band",
            table.dual_mc_band <= 2.0,
            format!("max/min dualnorm/mc = {}", table.dual_mc_band),
        ),
    ])
}

fn run_oracle(cfg: &ExperimentConfig, seed: u64, out: &ArtifactWriter) -> Result<Vec<Verdict>> {
    let report = crate::oracle::oracle_experiment(&cfg.oracle.to_config(seed))?;
    out.json("oracle.json", &report)?;
    let records: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.replication.to_string(),
                num(r.lambda0),
                num(r.lambda),
                num(r.m0),
                num(r.lhs),
                num(r.rhs),
                num(r.excess),
                num(r.l1_error),
                bool_str(r.event_holds),
                bool_str(r.verdict),
                bool_str(r.converged),
            ]
        })
        .collect();
    out.csv(
        "oracle.csv",
        &["replication", "lambda0", "lambda", "m0", "lhs", "rhs", "excess", "l1_error", "event_holds", "verdict", "converged"],
        &records,
    )?;
    Ok(vec![
        Verdict::new(
            "deviation-event-frequency",
            report.event_frequency >= 0.9,
            format!("T held in {} of replications", report.event_frequency),
        ),
        Verdict::new(
            "oracle-inequality-given-event",
            report.verdict_frequency_given_event >= 0.95,
            format!("lhs <= rhs in {} of replications with T", report.verdict_frequency_given_event),
        ),
    ])
}

fn run_scaling(cfg: &ExperimentConfig, seed: u64, out: &ArtifactWriter) -> Result<Vec<Verdict>> {
    let s = &cfg.scaling;
    let table = scaling_study(s.regime, &s.n_grid, &s.p_grid, s.radius, s.reps, seed, &s.search)?;
    let records: Vec<Vec<String>> = table.rows.iter().map(sim_record).collect();
    out.csv("scaling.csv", &SIM_HEADER, &records)?;
    let pairs: Vec<Vec<String>> = table
        .n_pairs
        .iter()
        .map(|q| ("n", q))
        .chain(table.p_pairs.iter().map(|q| ("p", q)))
        .map(|(axis, q)| {
            vec![
                axis.into(),
                q.from.0.to_string(),
                q.from.1.to_string(),
                q.to.0.to_string(),
                q.to.1.to_string(),
                num(q.observed),
                num(q.se),
                num(q.predicted),
                num(q.deviation),
            ]
        })
        .collect();
    out.csv(
        "scaling_pairs.csv",
        &["axis", "n_from", "p_from", "n_to", "p_to", "observed", "se", "predicted", "deviation"],
        &pairs,
    )?;
    #[derive(Serialize)]
    struct Fit<'a> {
        intercept: f64,
        exponent_log_p: f64,
        exponent_inv_sqrt_n: f64,
        shape_fit: &'a crate::stats::LinearFit,
        max_deviation: f64,
    }
    out.json(
        "scaling_fit.json",
        &Fit {
            intercept: table.intercept,
            exponent_log_p: table.exponent_log_p,
            exponent_inv_sqrt_n: table.exponent_inv_sqrt_n,
            shape_fit: &table.shape_fit,
            max_deviation: table.max_deviation(),
        },
    )?;
    if s.regime != Regime::Linear {
        return Ok(Vec::new());
    }
    let dev = table.max_deviation();
    Ok(vec![Verdict::new(
        "scaling-ratios",
        dev <= s.tolerance,
        format!("largest |observed/predicted - 1| = {dev}, tolerance {}", s.tolerance),
    )])
}
