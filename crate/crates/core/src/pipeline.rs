//! Staged experiment runs with hashed artifacts.
//!
//! Stages run in a fixed order; the first failing stage stops the run and
//! the remaining ones are reported as skipped. Every numeric claim records
//! the threshold it was tested against. Nothing time- or host-dependent is
//! written, so equal configurations give byte-identical output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cauchy::comparison_suite;
use crate::config::ExperimentConfig;
use crate::entire::{
    assemble_entire, limit_report, p_bound_check, p_closed_form, p_rk4_check, qualitative_checks, supersolution_check,
    time_grid, Case, Construction, EntireRun,
};
use crate::error::{Error, Result};
use crate::field::GridFunction;
use crate::kernel::{KernelReport, KernelSpec, SampledKernel};
use crate::reaction::IgnitionNonlinearity;
use crate::spectral::{find_roots, ratio_diagnostic, tail_rate_fit, CharacteristicRoots, Side, TAIL_BAND};
use crate::waves::{
    classify_speeds, difference_identity, monotonicity_defect, reaction_integral, reflect_wave, solve_decreasing,
    solve_increasing, solve_wave_newton, speed_identity_check, SpeedClass, WaveGrid, WavePair, WaveSolution,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Kernel,
    Waves,
    Identities,
    Spectral,
    Comparison,
    Entire,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Kernel,
        Stage::Waves,
        Stage::Identities,
        Stage::Spectral,
        Stage::Comparison,
        Stage::Entire,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Kernel => "kernel",
            Stage::Waves => "waves",
            Stage::Identities => "identities",
            Stage::Spectral => "spectral",
            Stage::Comparison => "comparison",
            Stage::Entire => "entire",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<")]
    Below,
}

/// A number, the threshold it is compared with, and the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub passed: bool,
}

impl Claim {
    pub fn new(name: &str, value: f64, relation: Relation, tolerance: f64) -> Self {
        let passed = match relation {
            Relation::AtMost => value <= tolerance,
            Relation::AtLeast => value >= tolerance,
            Relation::Below => value < tolerance,
        };
        Claim {
            name: name.into(),
            value,
            relation,
            tolerance,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed { exit_code: i32, error: String },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    #[serde(flatten)]
    pub status: StageStatus,
    pub claims: Vec<Claim>,
    pub data: Value,
}

impl StageReport {
    pub fn claims_hold(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageReport>,
}

impl Diagnostics {
    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn claim(&self, name: &str) -> Option<&Claim> {
        self.stages.iter().flat_map(|s| &s.claims).find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Index of a run: the configuration hash, stage outcomes and every file
/// written, by path relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub exit_code: i32,
    pub failed_stage: Option<Stage>,
    pub failed_claims: Vec<String>,
    pub stages: Vec<(Stage, String)>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub diagnostics: Diagnostics,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        self.manifest.exit_code
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

struct Artifacts {
    root: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl Artifacts {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.entries.push(ArtifactEntry {
            path: rel.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }
}

fn profile_csv(u: &GridFunction) -> String {
    let mut s = String::from("x,u\n");
    for (x, v) in u.xs().zip(&u.values) {
        writeln!(s, "{x},{v}").expect("string write");
    }
    s
}

fn wave_summary(w: &WaveSolution) -> Value {
    json!({
        "speed": w.speed,
        "method": w.method,
        "orientation": w.orientation,
        "residual_norm": w.residual_norm,
        "monotonicity_defect": monotonicity_defect(w),
        "points": w.profile.len(),
        "window": [w.profile.x0, w.profile.x_end()],
    })
}

const PLOT_SCRIPT: &str = r#"# Plots the artifacts of one run: python3 plot.py <run-dir>
import csv, json, pathlib, sys
import matplotlib.pyplot as plt

root = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".")

def table(name):
    with open(root / name) as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}

fig, ax = plt.subplots(1, 3, figsize=(15, 4))
for name, label in [("waves/increasing.csv", "phi"), ("waves/decreasing.csv", "phi_hat")]:
    if (root / name).exists():
        t = table(name)
        ax[0].plot(t["x"], t["u"], label=label)
ax[0].set_xlabel("x"); ax[0].legend()
if (root / "entire/finest.csv").exists():
    t = table("entire/finest.csv")
    for s in sorted(set(t["t"])):
        idx = [i for i, v in enumerate(t["t"]) if v == s]
        ax[1].plot([t["x"][i] for i in idx], [t["u"][i] for i in idx], lw=0.8)
    ax[1].set_xlabel("x"); ax[1].set_title("entire solution, finest member")
if (root / "entire/limit.csv").exists():
    t = table("entire/limit.csv")
    ax[2].semilogy(t["t_back"], t["deviation"], "o-")
    ax[2].set_xlabel("T"); ax[2].set_title("D(T)")
fig.tight_layout()
fig.savefig(root / "overview.png", dpi=120)
"#;

/// Results shared between stages.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    nl: IgnitionNonlinearity,
    spec: Option<KernelSpec>,
    kernel_report: Option<KernelReport>,
    waves: Option<(WavePair, WavePair)>,
    class: Option<SpeedClass>,
    roots: Option<CharacteristicRoots>,
}

impl Context<'_> {
    fn spec(&self) -> &KernelSpec {
        self.spec.as_ref().expect("kernel stage ran")
    }

    fn fronts(&self) -> (&WaveSolution, &WaveSolution) {
        let (up, down) = self.waves.as_ref().expect("wave stage ran");
        (up.best(), down.best())
    }

    fn roots(&self) -> Result<&CharacteristicRoots> {
        self.roots
            .as_ref()
            .ok_or_else(|| Error::Config("the spectral stage must run before this stage".into()))
    }
}

fn require(present: bool, stage: Stage, needs: Stage) -> Result<()> {
    if present {
        Ok(())
    } else {
        Err(Error::Config(format!("stage {} needs stage {}", stage.name(), needs.name())))
    }
}

fn kernel_stage(ctx: &mut Context, out: &mut Artifacts) -> Result<(Vec<Claim>, Value)> {
    let tol = ctx.cfg.tolerances;
    let spec = ctx.cfg.kernel.build()?;
    let report = spec.check(tol.quadrature)?;
    let claims = vec![Claim::new(
        "kernel_mass_error",
        (report.mass - 1.0).abs(),
        Relation::AtMost,
        tol.kernel_moments,
    )];
    let (lo, hi) = spec.scan_bounds();
    let mut csv = String::from("x,j\n");
    for i in 0..=2000 {
        let x = lo + (hi - lo) * i as f64 / 2000.0;
        writeln!(csv, "{x},{}", spec.density(x)).expect("string write");
    }
    out.write("kernel/density.csv", csv.as_bytes())?;
    let data = serde_json::to_value(&report)?;
    ctx.spec = Some(spec);
    ctx.kernel_report = Some(report);
    Ok((claims, data))
}

fn wave_stage(ctx: &mut Context, out: &mut Artifacts) -> Result<(Vec<Claim>, Value)> {
    require(ctx.spec.is_some(), Stage::Waves, Stage::Kernel)?;
    let cfg = ctx.cfg;
    let tol = cfg.tolerances;
    let spec = ctx.spec();
    let up = solve_increasing(spec, &ctx.nl, &cfg.grid, cfg.method, &cfg.tracking, &cfg.newton)?;
    let down = solve_decreasing(spec, &ctx.nl, &cfg.grid, cfg.method, &cfg.tracking, &cfg.newton)?;
    let mut claims = Vec::new();
    for (label, pair) in [("increasing", &up), ("decreasing", &down)] {
        if let (Some(t), Some(n)) = (&pair.tracking, &pair.newton) {
            claims.push(Claim::new(
                &format!("{label}_speed_relative_gap"),
                (t.speed - n.speed).abs() / n.speed.abs(),
                Relation::AtMost,
                tol.speed_agreement,
            ));
        }
        if let Some(n) = &pair.newton {
            claims.push(Claim::new(
                &format!("{label}_newton_residual"),
                n.residual_norm,
                Relation::AtMost,
                tol.newton_residual,
            ));
        }
        out.write(&format!("waves/{label}.csv"), profile_csv(&pair.best().profile).as_bytes())?;
    }
    let data = json!({
        "increasing": {
            "tracking": up.tracking.as_ref().map(wave_summary),
            "newton": up.newton.as_ref().map(wave_summary),
        },
        "decreasing": {
            "tracking": down.tracking.as_ref().map(wave_summary),
            "newton": down.newton.as_ref().map(wave_summary),
        },
    });
    ctx.waves = Some((up, down));
    Ok((claims, data))
}

fn identity_stage(ctx: &mut Context, _out: &mut Artifacts) -> Result<(Vec<Claim>, Value)> {
    require(ctx.waves.is_some(), Stage::Identities, Stage::Waves)?;
    let tol = ctx.cfg.tolerances;
    let m1 = ctx.kernel_report.as_ref().expect("kernel stage ran").m1;
    let (up, down) = ctx.fronts();
    let claims = vec![
        Claim::new(
            "increasing_speed_identity",
            speed_identity_check(up, m1, &ctx.nl),
            Relation::AtMost,
            tol.speed_identity,
        ),
        Claim::new(
            "decreasing_speed_identity",
            speed_identity_check(down, m1, &ctx.nl),
            Relation::AtMost,
            tol.speed_identity,
        ),
        Claim::new(
            "speed_difference_identity",
            difference_identity(up, down, &ctx.nl),
            Relation::AtMost,
            tol.difference_identity,
        ),
    ];
    let data = json!({
        "c": up.speed,
        "c_hat": down.speed,
        "m1": m1,
        "reaction_integral": reaction_integral(&ctx.nl, up),
        "reaction_integral_hat": reaction_integral(&ctx.nl, down),
    });
    // The sign pattern c < 0 < ĉ and c ≤ ĉ are stage errors, not claims.
    let class = classify_speeds(up.speed, down.speed)?;
    ctx.class = Some(class);
    let mut data = data;
    data["classification"] = serde_json::to_value(class)?;
    Ok((claims, data))
}

fn spectral_stage(ctx: &mut Context, _out: &mut Artifacts) -> Result<(Vec<Claim>, Value)> {
    require(ctx.class.is_some(), Stage::Spectral, Stage::Identities)?;
    let tol = ctx.cfg.tolerances;
    let (up, down) = ctx.fronts();
    let roots = find_roots(ctx.spec(), up.speed, down.speed, ctx.nl.slope(1.0), tol.root)?;
    let right = tail_rate_fit(&up.profile, Side::Right, TAIL_BAND)?;
    let left_hat = tail_rate_fit(&down.profile, Side::Left, TAIL_BAND)?;
    let report = ctx.kernel_report.as_ref().expect("kernel stage ran");
    let ratio = ratio_diagnostic(up, roots.mu1, TAIL_BAND, Some((report.m1, report.m2)))?;
    let ratio_hat = ratio_diagnostic(down, roots.mu1_hat, TAIL_BAND, None)?;
    let claims = vec![
        Claim::new("characteristic_root_residual", roots.max_residual, Relation::AtMost, 1e-8),
        Claim::new(
            "right_tail_rate_relative_gap",
            (right.rate - roots.mu21).abs() / roots.mu21.abs(),
            Relation::AtMost,
            tol.tail_rate,
        ),
        Claim::new("right_tail_fit_r2", right.r2, Relation::AtLeast, tol.tail_r2),
        Claim::new(
            "hat_left_tail_rate_relative_gap",
            (left_hat.rate + roots.mu21_hat).abs() / roots.mu21_hat.abs(),
            Relation::AtMost,
            tol.tail_rate,
        ),
        Claim::new("hat_left_tail_fit_r2", left_hat.r2, Relation::AtLeast, tol.tail_r2),
    ];
    let data = json!({
        "roots": roots,
        "right_tail": right,
        "hat_left_tail": left_hat,
        "zero_tail_ratio": ratio,
        "hat_zero_tail_ratio": ratio_hat,
    });
    ctx.roots = Some(roots);
    Ok((claims, data))
}

fn comparison_stage(ctx: &mut Context, _out: &mut Artifacts) -> Result<(Vec<Claim>, Value)> {
    require(ctx.spec.is_some(), Stage::Comparison, Stage::Kernel)?;
    let c = &ctx.cfg.comparison;
    let kernel = ctx.spec().sample(ctx.cfg.grid.h)?;
    let rep = comparison_suite(&kernel, &ctx.nl, c.window, c.pairs, c.t_end, c.dt, ctx.cfg.seed)?;
    let claims = vec![Claim::new(
        "comparison_worst_violation",
        rep.worst_violation,
        Relation::AtMost,
        rep.tolerance,
    )];
    Ok((claims, serde_json::to_value(&rep)?))
}

/// Fronts on `grid`, Newton-solved from the wave stage's fronts continued
/// by their far fields.
fn widened_fronts(ctx: &Context, grid: &WaveGrid) -> Result<(WaveSolution, WaveSolution)> {
    let (up, down) = ctx.fronts();
    if (up.profile.x0 - grid.lo).abs() < 1e-12
        && (up.profile.x_end() - grid.hi).abs() < 1e-12
        && (up.profile.h - grid.h).abs() < 1e-12
    {
        return Ok((up.clone(), down.clone()));
    }
    let extend = |p: &GridFunction, g: &WaveGrid| {
        GridFunction::from_fn(g.lo, g.hi, g.h, p.farfield_left, p.farfield_right, |x| p.interpolate(x))
    };
    let newton = &ctx.cfg.newton;
    let wide_up = solve_wave_newton(ctx.spec(), &ctx.nl, &extend(&up.profile, grid), up.speed, newton)?;
    let psi = extend(&down.profile.mirrored(), &grid.mirrored());
    let wide_psi = solve_wave_newton(&ctx.spec().reflect(), &ctx.nl, &psi, -down.speed, newton)?;
    Ok((wide_up, reflect_wave(&wide_psi)))
}

fn entire_stage(ctx: &mut Context, out: &mut Artifacts) -> Result<(Vec<Claim>, Value)> {
    require(ctx.roots.is_some(), Stage::Entire, Stage::Spectral)?;
    let cfg = ctx.cfg;
    let e = &cfg.entire;
    let tol = cfg.tolerances;
    let grid = e.wave_grid.unwrap_or(cfg.grid);
    let (up, down) = widened_fronts(ctx, &grid)?;
    let kernel: SampledKernel = ctx.spec().sample(e.run.h)?;
    let cons = Construction::new(&kernel, &ctx.nl, &up, &down, ctx.roots()?, &e.construction)?;
    let case = Case::of(cons.class);
    if let Some(expected) = e.case_expect {
        if expected != case {
            return Err(Error::InvariantViolation(format!(
                "speeds c = {}, ĉ = {} give case {case:?}, expected {expected:?}",
                cons.c, cons.c_hat
            )));
        }
    }
    let mut claims = Vec::new();

    let pp = &cons.pparams;
    let p_rk4 = p_rk4_check(pp, e.p_t_start, e.p_steps)?;
    claims.push(Claim::new("p_rk4_max_error", p_rk4.max_error, Relation::AtMost, tol.p_integration));
    let p_times = time_grid(e.p_t_start, 0.05);
    let bound = p_bound_check(pp, &p_times)?;
    claims.push(Claim::new("p_bound_max_ratio", bound.max_ratio, Relation::AtMost, 1.0 + 1e-12));
    claims.push(Claim::new("p_bound_min_gap", bound.min_gap, Relation::AtLeast, 0.0));
    let mut csv = String::from("t,p,bound\n");
    for &t in &p_times {
        let p = p_closed_form(pp, t)?;
        let b = pp.c0 * t + pp.omega + pp.k_bound * (pp.c0 * pp.sigma * t).exp();
        writeln!(csv, "{t},{p},{b}").expect("string write");
    }
    out.write("entire/p.csv", csv.as_bytes())?;

    let times = time_grid(e.supersolution_t_start, e.supersolution_time_step);
    let window = e.supersolution_window;
    let n_star = cons.constants.n_star;
    let sup = supersolution_check(&cons, window, e.run.h, &times, tol.supersolution)?;
    claims.push(Claim::new(
        "supersolution_min_residual",
        sup.min_residual,
        Relation::AtLeast,
        -tol.supersolution,
    ));
    let doubled = supersolution_check(&cons.with_n(2.0 * pp.n)?, window, e.run.h, &times, tol.supersolution)?;
    claims.push(Claim::new(
        "supersolution_doubling_n_change",
        doubled.min_residual - sup.min_residual,
        Relation::AtLeast,
        -1e-12,
    ));
    let weak = supersolution_check(
        &cons.with_n(e.falsification_factor * n_star)?,
        window,
        e.run.h,
        &times,
        tol.supersolution,
    )?;
    claims.push(Claim::new(
        "falsification_min_residual",
        weak.min_residual,
        Relation::Below,
        -tol.supersolution,
    ));

    let run = assemble_entire(&cons, &kernel, &e.run)?;
    let d = &run.diagnostics;
    let worst_margin = d
        .ladder
        .iter()
        .map(|l| l.lower_margin.min(l.upper_margin))
        .fold(f64::INFINITY, f64::min);
    claims.push(Claim::new("sandwich_min_margin", worst_margin, Relation::AtLeast, -d.sandwich_tol));
    let worst_gap = d.monotonicity_gaps.iter().copied().fold(f64::INFINITY, f64::min);
    claims.push(Claim::new(
        "monotonicity_min_gap",
        worst_gap,
        Relation::AtLeast,
        -d.monotonicity_tol,
    ));
    claims.push(Claim::new(
        "successive_difference_max_ratio",
        max_ratio(&d.successive_differences),
        Relation::Below,
        1.0,
    ));
    let limit = limit_report(&cons, &run, &e.run.limit_times)?;
    let mut by_time = limit.points.clone();
    by_time.sort_by(|a, b| a.t_back.total_cmp(&b.t_back));
    let deviations: Vec<f64> = by_time.iter().map(|p| p.deviation).collect();
    claims.push(Claim::new("limit_deviation_max_ratio", max_ratio(&deviations), Relation::Below, 1.0));

    let qual = qualitative_checks(&run, &kernel, &ctx.nl, case, e.run.margin, e.halfline_range, e.epsilon)?;
    let floor = 1.0 - e.epsilon;
    match case {
        Case::A => {
            claims.push(Claim::new("right_edge_min", qual.right_edge_min, Relation::AtLeast, floor));
            claims.push(Claim::new("right_halfline_min", qual.final_halfline_min, Relation::AtLeast, floor));
        }
        Case::B => {
            claims.push(Claim::new("left_edge_min", qual.left_edge_min, Relation::AtLeast, floor));
            claims.push(Claim::new("left_halfline_min", qual.final_halfline_min, Relation::AtLeast, floor));
        }
        Case::C => {
            claims.push(Claim::new(
                "min_time_derivative",
                qual.min_time_derivative,
                Relation::AtLeast,
                -qual.time_derivative_tol,
            ));
            claims.push(Claim::new(
                "final_sup_deviation",
                qual.final_sup_deviation,
                Relation::AtMost,
                e.epsilon,
            ));
            claims.push(Claim::new("right_edge_min", qual.right_edge_min, Relation::AtLeast, floor));
            claims.push(Claim::new("left_edge_min", qual.left_edge_min, Relation::AtLeast, floor));
        }
    }
    let regularity = run.regularity(&kernel, &ctx.nl, e.regularity_eta)?;
    write_entire_artifacts(&run, &limit.points, out, e.snapshot_every)?;

    let data = json!({
        "case": case,
        "constants": cons.constants,
        "p": pp,
        "p_rk4": p_rk4,
        "p_bound": bound,
        "supersolution": sup,
        "supersolution_doubled_n": doubled,
        "falsification": weak,
        "ladder": d,
        "limit": limit,
        "qualitative": qual,
        "regularity": regularity,
    });
    Ok((claims, data))
}

/// Largest ratio of consecutive entries; `∞` if fewer than two.
fn max_ratio(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::INFINITY;
    }
    v.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max)
}

fn write_entire_artifacts(
    run: &EntireRun,
    limit: &[crate::entire::LimitPoint],
    out: &mut Artifacts,
    snapshot_every: f64,
) -> Result<()> {
    let finest = run.finest();
    let traj = &finest.trajectory;
    let mut csv = String::from("t,x,u\n");
    let mut next = traj.times[0];
    for (k, (&t, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        if t + 1e-9 < next && k + 1 != traj.times.len() {
            continue;
        }
        next = t + snapshot_every;
        for (x, v) in u.xs().zip(&u.values) {
            writeln!(csv, "{t},{x},{v}").expect("string write");
        }
    }
    out.write("entire/finest.csv", csv.as_bytes())?;

    let mut header = String::from("x");
    for r in &run.runs {
        write!(header, ",u_{}", r.n).expect("string write");
    }
    let mut csv = header + "\n";
    let zero: Vec<&GridFunction> = run.runs.iter().map(|r| r.at_zero()).collect();
    for i in 0..zero[0].len() {
        write!(csv, "{}", zero[0].x(i)).expect("string write");
        for u in &zero {
            write!(csv, ",{}", u.values[i]).expect("string write");
        }
        csv.push('\n');
    }
    out.write("entire/ladder_t0.csv", csv.as_bytes())?;

    let mut csv = String::from("t_back,deviation\n");
    for p in limit {
        writeln!(csv, "{},{}", p.t_back, p.deviation).expect("string write");
    }
    out.write("entire/limit.csv", csv.as_bytes())
}

type StageFn = fn(&mut Context, &mut Artifacts) -> Result<(Vec<Claim>, Value)>;

fn stage_fn(stage: Stage) -> StageFn {
    match stage {
        Stage::Kernel => kernel_stage,
        Stage::Waves => wave_stage,
        Stage::Identities => identity_stage,
        Stage::Spectral => spectral_stage,
        Stage::Comparison => comparison_stage,
        Stage::Entire => entire_stage,
    }
}

/// Runs every stage (the entire stage only when enabled) into
/// `root / cfg.output_dir`, or `cfg.output_dir` itself without a root.
pub fn run_pipeline(cfg: &ExperimentConfig, root: Option<&Path>) -> Result<PipelineOutcome> {
    let stages: Vec<Stage> = Stage::ALL
        .into_iter()
        .filter(|&s| s != Stage::Entire || cfg.entire.enabled)
        .collect();
    run_stages(cfg, root, &stages)
}

/// Validates `cfg`, then runs `stages` in order. Validation errors are
/// returned; stage errors are recorded in the manifest and stop the run.
pub fn run_stages(cfg: &ExperimentConfig, root: Option<&Path>, stages: &[Stage]) -> Result<PipelineOutcome> {
    let (nl, _) = cfg.validate()?;
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let dir = match root {
        Some(r) => r.join(&cfg.output_dir),
        None => cfg.output_dir.clone(),
    };
    fs::create_dir_all(&dir)?;
    let config_hash = cfg.hash()?;
    let mut out = Artifacts {
        root: dir.clone(),
        entries: Vec::new(),
    };
    out.write("config.json", format!("{}\n", cfg.located_nowhere().to_json()?).as_bytes())?;
    out.write("plot.py", PLOT_SCRIPT.as_bytes())?;

    let mut ctx = Context {
        cfg,
        nl,
        spec: None,
        kernel_report: None,
        waves: None,
        class: None,
        roots: None,
    };
    let mut reports = Vec::new();
    let mut failed_stage = None;
    let mut exit_code = 0;
    for &stage in &stages {
        if failed_stage.is_some() {
            reports.push(StageReport {
                stage,
                status: StageStatus::Skipped,
                claims: Vec::new(),
                data: Value::Null,
            });
            continue;
        }
        match stage_fn(stage)(&mut ctx, &mut out) {
            Ok((claims, data)) => reports.push(StageReport {
                stage,
                status: StageStatus::Ok,
                claims,
                data,
            }),
            Err(err) => {
                exit_code = err.exit_code();
                failed_stage = Some(stage);
                reports.push(StageReport {
                    stage,
                    status: StageStatus::Failed {
                        exit_code,
                        error: err.to_string(),
                    },
                    claims: Vec::new(),
                    data: Value::Null,
                });
            }
        }
    }
    let failed_claims: Vec<String> = reports
        .iter()
        .flat_map(|r| &r.claims)
        .filter(|c| !c.passed)
        .map(|c| c.name.clone())
        .collect();
    if exit_code == 0 && !failed_claims.is_empty() {
        exit_code = 4;
    }
    let diagnostics = Diagnostics {
        config_hash: config_hash.clone(),
        seed: cfg.seed,
        stages: reports,
    };
    out.json(DIAGNOSTICS_FILE, &diagnostics)?;
    let manifest = Manifest {
        config_hash,
        seed: cfg.seed,
        exit_code,
        failed_stage,
        failed_claims,
        stages: diagnostics
            .stages
            .iter()
            .map(|r| {
                let s = match &r.status {
                    StageStatus::Ok if r.claims_hold() => "ok",
                    StageStatus::Ok => "claims-failed",
                    StageStatus::Failed { .. } => "failed",
                    StageStatus::Skipped => "skipped",
                };
                (r.stage, s.to_string())
            })
            .collect(),
        artifacts: out.entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(PipelineOutcome {
        dir,
        manifest,
        diagnostics,
    })
}

/// One swept parameter: a dotted configuration path and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub overrides: Vec<(String, Value)>,
    pub output_dir: PathBuf,
    pub exit_code: i32,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
}

/// The cartesian product of the axes, first axis slowest.
pub fn sweep_points(base: &ExperimentConfig, axes: &[SweepAxis]) -> Result<Vec<(Vec<(String, Value)>, ExperimentConfig)>> {
    let mut points = vec![(Vec::new(), base.clone())];
    for axis in axes {
        if axis.values.is_empty() {
            return Err(Error::Config(format!("sweep axis '{}' has no values", axis.path)));
        }
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for (over, cfg) in &points {
            for v in &axis.values {
                let mut o = over.clone();
                o.push((axis.path.clone(), v.clone()));
                next.push((o, cfg.with_override(&axis.path, v.clone())?));
            }
        }
        points = next;
    }
    Ok(points)
}

/// Runs one pipeline per point into `output_dir/point-NNN` and writes
/// `sweep.json` next to them.
pub fn run_sweep(base: &ExperimentConfig, axes: &[SweepAxis], root: Option<&Path>) -> Result<SweepSummary> {
    let points = sweep_points(base, axes)?;
    for (_, cfg) in &points {
        cfg.validate()?;
    }
    let mut summary = SweepSummary { points: Vec::new() };
    for (index, (overrides, mut cfg)) in points.into_iter().enumerate() {
        cfg.output_dir = base.output_dir.join(format!("point-{index:03}"));
        let outcome = run_pipeline(&cfg, root)?;
        summary.points.push(SweepPoint {
            index,
            overrides,
            output_dir: cfg.output_dir.clone(),
            exit_code: outcome.exit_code(),
            config_hash: outcome.manifest.config_hash,
        });
    }
    let dir = match root {
        Some(r) => r.join(&base.output_dir),
        None => base.output_dir.clone(),
    };
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claim_relations() {
        assert!(Claim::new("a", 1e-4, Relation::AtMost, 1e-3).passed);
        assert!(!Claim::new("a", 1e-2, Relation::AtMost, 1e-3).passed);
        assert!(Claim::new("b", -1e-9, Relation::AtLeast, -1e-8).passed);
        assert!(!Claim::new("c", 1.0, Relation::Below, 1.0).passed);
        assert!(!Claim::new("d", f64::NAN, Relation::AtLeast, 0.0).passed);
    }

    #[test]
    fn ratios() {
        assert_eq!(max_ratio(&[4.0, 2.0, 1.5]), 0.75);
        assert!(max_ratio(&[1.0]).is_infinite());
    }

    #[test]
    fn sweep_is_a_cartesian_product() {
        let base = ExperimentConfig::default();
        let axes = vec![
            SweepAxis {
                path: "kernel.shift".into(),
                values: vec![json!(-0.8), json!(0.0), json!(0.8)],
            },
            SweepAxis {
                path: "seed".into(),
                values: vec![json!(1), json!(2)],
            },
        ];
        let pts = sweep_points(&base, &axes).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1].1.kernel.shift, -0.8);
        assert_eq!(pts[1].1.seed, 2);
        assert_eq!(pts[5].1.kernel.shift, 0.8);
    }

    #[test]
    fn missing_prerequisite_is_reported() {
        let cfg = ExperimentConfig::preset("quick").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_stages(&cfg, Some(dir.path()), &[Stage::Identities]).unwrap();
        assert_eq!(out.manifest.failed_stage, Some(Stage::Identities));
        assert_eq!(out.exit_code(), 2);
    }

    #[test]
    fn quick_kernel_stage_writes_a_manifest() {
        let cfg = ExperimentConfig::preset("quick").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_stages(&cfg, Some(dir.path()), &[Stage::Kernel]).unwrap();
        assert_eq!(out.exit_code(), 0);
        assert!(out.dir.join(MANIFEST_FILE).exists());
        let names: Vec<&str> = out.manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert!(names.contains(&"kernel/density.csv") && names.contains(&DIAGNOSTICS_FILE));
    }
}
