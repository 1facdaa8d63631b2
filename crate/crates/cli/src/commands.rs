use std::f64::consts::TAU;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use lrbounds::bounds::{
    bound_field, crossing_time, fit_speed, front_extract, impulsive_exact_field, BoundKind, BoundModel, SineConvention,
    ARRIVAL_THRESHOLD,
};
use lrbounds::constants::{angular_to_hz, hz_to_angular};
use lrbounds::crystal::{build_q, normal_modes, stiffness, CrystalConfig, CrystalSpec, DriveSpec, KappaConvention, QuadraticCoupling};
use lrbounds::exactsim::{
    dominance_suite, impulsive_closed_form_shaped, impulsive_fock, linear_response_protocol, DominanceConfig, EvolveOptions,
    ProtocolConfig, Regime, SpinBosonParams,
};
use lrbounds::lattice::{
    build_chain, build_triangular, compute_a0, converge_a0, lattice_a0_limit, zeta_estimate_a0, DecayEnvelope, LatticeGeometry,
    LatticeKind, ZetaConvention,
};
use lrbounds::propagator::{ConstantPropagation, ModalPropagator, PropagatorFamily, PulseShape};

use crate::output::{heatmap_svg, Cell, OutDir, Table};
use crate::scenario::{Drive, Scenario, TimeGrid};

/// Outcome of a command that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Violation,
}

impl Status {
    fn from_violations(n: usize) -> Self {
        if n == 0 {
            Status::Ok
        } else {
            Status::Violation
        }
    }
}

pub struct Ctx {
    pub out: OutDir,
    pub seed: u64,
}

/// Relative slack for dominance checks.
const SLACK: f64 = 1e-12;

fn envelope(eta: f64, mu: f64) -> Result<DecayEnvelope> {
    Ok(DecayEnvelope::new(mu, eta, 1.0)?)
}

fn crystal(preset: &str) -> Result<CrystalSpec> {
    Ok(CrystalConfig::preset(preset)?.build()?)
}

fn beta_omega_t(spec: &CrystalSpec) -> f64 {
    stiffness(spec) * spec.omega_t
}

fn geometry_table(positions: &[[f64; 2]]) -> Table {
    let mut t = Table::new(["site_index", "x", "y"]);
    for (i, p) in positions.iter().enumerate() {
        t.push(vec![i.into(), p[0].into(), p[1].into()]);
    }
    t
}

fn triangular_shells(sites: usize) -> usize {
    (0..).find(|&s| 1 + 3 * s * (s + 1) >= sites).unwrap()
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Geometry {
    Chain,
    Triangular,
}

#[derive(Args, Debug)]
pub struct A0Args {
    #[arg(long, value_enum)]
    pub geometry: Geometry,
    #[arg(long, default_value_t = 3.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Fixed number of sites; without it patches grow until a0 converges.
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 4096)]
    pub max_sites: usize,
}

#[derive(Serialize)]
struct A0Report {
    a0: f64,
    argmax_pair: (usize, usize),
    patch_size: usize,
    eta: f64,
    mu: f64,
    converged: bool,
    /// Supremum over the infinite lattice, when it applies.
    infinite_lattice_a0: Option<f64>,
    /// Graph-distance estimate for comparison.
    zeta_estimate: Option<f64>,
}

pub fn a0(ctx: &Ctx, args: &A0Args) -> Result<Status> {
    let env = envelope(args.eta, args.mu)?;
    let kind = match args.geometry {
        Geometry::Chain => LatticeKind::Chain,
        Geometry::Triangular => LatticeKind::Triangular,
    };
    let build = |sites: usize| -> Result<LatticeGeometry> {
        Ok(match kind {
            LatticeKind::Chain => build_chain(sites)?,
            _ => build_triangular(triangular_shells(sites)).truncate_radial(sites)?,
        })
    };
    let (report, geom) = match args.n {
        Some(n) => {
            let geom = build(n)?;
            let a = compute_a0(&geom, &env)?;
            let r = A0Report {
                a0: a.a0,
                argmax_pair: a.argmax,
                patch_size: n,
                eta: args.eta,
                mu: args.mu,
                converged: true,
                infinite_lattice_a0: None,
                zeta_estimate: None,
            };
            (r, geom)
        }
        None => {
            let c = converge_a0(kind, &env, args.tol, args.max_sites)?;
            let limit = (args.mu == 0.0)
                .then(|| lattice_a0_limit(kind, &env, 12.0, 150.0))
                .transpose()?
                .map(|l| l.a0);
            let dim = kind.dimension().unwrap_or(1);
            let zeta = (args.mu == 0.0).then(|| zeta_estimate_a0(dim, args.eta, ZetaConvention::Printed)).transpose().ok().flatten();
            let r = A0Report {
                a0: c.a0,
                argmax_pair: c.argmax,
                patch_size: c.patch_size,
                eta: args.eta,
                mu: args.mu,
                converged: c.converged,
                infinite_lattice_a0: limit,
                zeta_estimate: zeta,
            };
            (r, build(c.patch_size)?)
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    ctx.out.json("a0.json", &report)?;
    ctx.out.csv("geometry.csv", &geometry_table(geom.positions()))?;
    Ok(Status::Ok)
}

#[derive(Args, Debug)]
pub struct ModesArgs {
    #[arg(long, default_value = "mg_chain")]
    pub preset: String,
}

#[derive(Serialize)]
struct ModesReport {
    preset: String,
    n: usize,
    beta: f64,
    beta_omega_t_hz: f64,
    d_m_um: f64,
    omega_n_hz_max: f64,
    omega_n_hz_min: f64,
}

pub fn modes(ctx: &Ctx, args: &ModesArgs) -> Result<Status> {
    let spec = crystal(&args.preset)?;
    let q = build_q(&spec)?;
    let drive = DriveSpec::from_force(0.0, 0.1, 0.0, 0.0, 1.0);
    let modes = match normal_modes(&q, &drive) {
        Ok(m) => m,
        Err(lrbounds::Error::UnstableCrystal { mode, value }) => {
            eprintln!("unstable crystal: mode {mode} has 1 + beta V = {value}");
            return Ok(Status::Violation);
        }
        Err(e) => return Err(e.into()),
    };
    let n = spec.n();
    let mut t = Table::new(
        ["mode_index".to_string(), "omega_n_hz".to_string()]
            .into_iter()
            .chain((0..n).map(|i| format!("participation_{i}"))),
    );
    for (k, w) in modes.omega_n.iter().enumerate() {
        let mut row = vec![k.into(), angular_to_hz(*w).into()];
        row.extend((0..n).map(|i| Cell::Float(modes.m[(i, k)])));
        t.push(row);
    }
    ctx.out.csv("modes.csv", &t)?;
    let hz: Vec<f64> = modes.omega_n.iter().map(|w| angular_to_hz(*w)).collect();
    let report = ModesReport {
        preset: args.preset.clone(),
        n,
        beta: stiffness(&spec),
        beta_omega_t_hz: angular_to_hz(beta_omega_t(&spec)),
        d_m_um: spec.d_m * 1e6,
        omega_n_hz_max: hz.iter().cloned().fold(f64::MIN, f64::max),
        omega_n_hz_min: hz.iter().cloned().fold(f64::MAX, f64::min),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    ctx.out.json("modes.json", &report)?;
    Ok(Status::Ok)
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kappa {
    Supp,
    Main,
}

/// Scenario given as a file, as flags, or as a file with flag overrides.
#[derive(Args, Debug, Default)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Bound kind; repeat for several.
    #[arg(long = "kind")]
    pub kinds: Vec<String>,
    #[arg(long)]
    pub source: Option<usize>,
    #[arg(long)]
    pub t_max_s: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub g_hz: Option<f64>,
    #[arg(long)]
    pub detuning_hz: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, value_enum)]
    pub kappa: Option<Kappa>,
}

impl ScenarioArgs {
    /// `t_max` supplies the default horizon for a preset when neither file
    /// nor flags set one.
    fn resolve(&self, name: &str, preset: &str, kinds: &[&str], steps: usize, t_max: impl Fn(&CrystalSpec) -> f64) -> Result<Scenario> {
        let mut s = match &self.scenario {
            Some(path) => Scenario::load(path)?,
            None => {
                let p = self.preset.clone().unwrap_or_else(|| preset.to_string());
                let spec = crystal(&p)?;
                Scenario {
                    name: name.to_string(),
                    preset: p,
                    kinds: kinds.iter().map(|k| k.to_string()).collect(),
                    source: None,
                    probe: None,
                    time: TimeGrid {
                        t_min_s: 0.0,
                        t_max_s: t_max(&spec),
                        steps,
                    },
                    drive: Drive::default(),
                    out_dir: None,
                }
            }
        };
        if self.scenario.is_some() {
            if let Some(p) = &self.preset {
                s.preset = p.clone();
            }
        }
        if !self.kinds.is_empty() {
            s.kinds = self.kinds.clone();
        }
        s.source = self.source.or(s.source);
        if let Some(v) = self.t_max_s {
            s.time.t_max_s = v;
        }
        if let Some(v) = self.steps {
            s.time.steps = v;
        }
        if let Some(v) = self.g_hz {
            s.drive.g_hz = v;
        }
        if let Some(v) = self.detuning_hz {
            s.drive.detuning_hz = Some(v);
        }
        if let Some(v) = self.theta {
            s.drive.theta_rad = v;
        }
        if let Some(k) = self.kappa {
            s.drive.kappa = match k {
                Kappa::Supp => KappaConvention::KappaSupp,
                Kappa::Main => KappaConvention::KappaMain,
            };
        }
        s.validate()?;
        Ok(s)
    }
}

/// Everything a field command needs about the crystal.
struct Setup {
    spec: CrystalSpec,
    q: QuadraticCoupling,
    a0: f64,
    bw: f64,
    source: usize,
    times: Vec<f64>,
}

impl Setup {
    fn new(s: &Scenario) -> Result<Self> {
        let spec = crystal(&s.preset)?;
        let q = build_q(&spec)?;
        let a0 = compute_a0(&spec.geometry, &DecayEnvelope::power_law(3.0))?.a0;
        let bw = beta_omega_t(&spec);
        let source = s.source.unwrap_or_else(|| spec.geometry.central_site());
        if source >= spec.n() {
            bail!("source {source} out of range for N = {}", spec.n());
        }
        Ok(Setup {
            spec,
            q,
            a0,
            bw,
            source,
            times: s.time.points(),
        })
    }

    fn model(&self, drive: &Drive) -> BoundModel {
        let m = BoundModel::trapped_ion(self.a0, self.bw, drive.g(), drive.kappa);
        match drive.detuning() {
            Some(d) => m.with_detuning(d),
            None => m,
        }
    }

    /// Bosonic model with kappa measured on Q.
    fn bosonic_model(&self) -> BoundModel {
        BoundModel::trapped_ion(self.a0, self.bw, 0.0, KappaConvention::KappaSupp).with_kappa(self.q.kappa)
    }

    fn cone(&self) -> Result<DMatrix<f64>> {
        let fam = ConstantPropagation::from_coupling(&self.q, 0.0)?;
        let n = self.spec.n();
        let mut field = DMatrix::zeros(n, self.times.len());
        for (k, &t) in self.times.iter().enumerate() {
            for (j, v) in fam.source_block_norms(self.source, t).into_iter().enumerate() {
                field[(j, k)] = v;
            }
        }
        Ok(field)
    }

    fn field_table(&self, field: &DMatrix<f64>, value: &str, kind: Option<&str>) -> Table {
        let mut header = vec!["site_index", "x", "y", "time_s", value];
        if kind.is_some() {
            header.push("bound_kind");
        }
        let mut t = Table::new(header);
        self.extend(&mut t, field, kind);
        t
    }

    fn extend(&self, t: &mut Table, field: &DMatrix<f64>, kind: Option<&str>) {
        for j in 0..field.nrows() {
            let p = self.spec.positions[j];
            for (k, &time) in self.times.iter().enumerate() {
                let mut row = vec![j.into(), p[0].into(), p[1].into(), time.into(), field[(j, k)].into()];
                if let Some(kind) = kind {
                    row.push(kind.into());
                }
                t.push(row);
            }
        }
    }

    /// Entries of `field` above the bosonic bound, with the largest ratio.
    fn bosonic_check(&self, field: &DMatrix<f64>) -> (usize, f64) {
        let model = self.bosonic_model();
        let (mut viol, mut worst) = (0, 0.0_f64);
        for j in 0..field.nrows() {
            let d = self.spec.geometry.d(j, self.source);
            for (k, &t) in self.times.iter().enumerate() {
                let b = model.bosonic(d, t, j == self.source);
                worst = worst.max(field[(j, k)] / b);
                if field[(j, k)] > b * (1.0 + SLACK) {
                    viol += 1;
                }
            }
        }
        (viol, worst)
    }
}

fn count_above(field: &DMatrix<f64>, bound: &DMatrix<f64>) -> (usize, f64) {
    let mut viol = 0;
    let mut worst = 0.0_f64;
    for (v, b) in field.iter().zip(bound.iter()) {
        if *b > 0.0 {
            worst = worst.max(v / b);
        }
        if *v > b * (1.0 + SLACK) {
            viol += 1;
        }
    }
    (viol, worst)
}

#[derive(Serialize)]
struct DominanceSummary {
    check: String,
    violations: usize,
    max_ratio: f64,
}

fn default_horizon(spec: &CrystalSpec) -> f64 {
    20.0 / beta_omega_t(spec)
}

pub fn cone(ctx: &Ctx, args: &ScenarioArgs) -> Result<Status> {
    let s = args.resolve("cone", "mg_chain", &[], 100, default_horizon)?;
    let setup = Setup::new(&s)?;
    let field = setup.cone()?;
    ctx.out.csv(&format!("{}_cone.csv", s.name), &setup.field_table(&field, "block_norm", None))?;
    let (violations, max_ratio) = setup.bosonic_check(&field);
    let summary = DominanceSummary {
        check: "block norm <= bosonic bound".into(),
        violations,
        max_ratio,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Status::from_violations(violations))
}

pub fn bounds(ctx: &Ctx, args: &ScenarioArgs) -> Result<Status> {
    let s = args.resolve("bounds", "mg_chain", &["eq9"], 100, default_horizon)?;
    let setup = Setup::new(&s)?;
    let kinds = s.bound_kinds()?;
    if kinds.is_empty() {
        bail!("no bound kind requested");
    }
    let model = setup.model(&s.drive);
    let theta = s.drive.theta_rad;
    let mut table = Table::new(["site_index", "x", "y", "time_s", "block_norm", "bound_kind"]);
    let mut fields = Vec::new();
    for &kind in &kinds {
        let field = match kind {
            BoundKind::ImpulsiveExact => {
                let modal = ModalPropagator::new(setup.q.matrix(), 0.0)?.context("the exact envelope needs a trap Q")?;
                impulsive_exact_field(&modal, setup.source, &setup.times, theta, SineConvention::default())?
            }
            BoundKind::Bosonic => bound_field(&setup.bosonic_model(), kind, &setup.spec.geometry, setup.source, &setup.times, (theta, theta))?,
            _ => bound_field(&model, kind, &setup.spec.geometry, setup.source, &setup.times, (theta, theta))?,
        };
        setup.extend(&mut table, &field, Some(kind.as_str()));
        fields.push((kind, field));
    }
    ctx.out.csv(&format!("{}_{}.csv", s.name, s.kinds.join("_")), &table)?;

    let mut summaries = Vec::new();
    let get = |k: BoundKind| fields.iter().find(|f| f.0 == k).map(|f| &f.1);
    if let Some(bound) = get(BoundKind::Bosonic) {
        let (violations, max_ratio) = count_above(&setup.cone()?, bound);
        summaries.push(DominanceSummary {
            check: "block norm <= bosonic".into(),
            violations,
            max_ratio,
        });
    }
    if let (Some(exact), Some(bound)) = (get(BoundKind::ImpulsiveExact), get(BoundKind::Eq10)) {
        let (violations, max_ratio) = count_above(exact, bound);
        summaries.push(DominanceSummary {
            check: "impulsive_exact <= eq10".into(),
            violations,
            max_ratio,
        });
    }
    for s in &summaries {
        println!("{}", serde_json::to_string(s)?);
    }
    Ok(Status::from_violations(summaries.iter().map(|s| s.violations).sum()))
}

#[derive(Args, Debug)]
pub struct ImpulsiveArgs {
    /// Coupling beta omega_t in units of omega_t.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub theta: f64,
    /// Pulse centres and width in units of 1/omega_t.
    #[arg(long, default_value_t = 0.5)]
    pub t0: f64,
    #[arg(long, default_value_t = 3.5)]
    pub tf: f64,
    #[arg(long, default_value_t = 0.04)]
    pub width: f64,
    #[arg(long, default_value_t = 13)]
    pub n_max: usize,
    #[arg(long, default_value_t = 20.0)]
    pub steps_per_period: f64,
}

#[derive(Serialize)]
struct ImpulsiveReport {
    phase: f64,
    fock: f64,
    exact_closed_form: f64,
    printed_closed_form: f64,
    gap_exact: f64,
    gap_printed: f64,
    n_max: usize,
}

/// Two ions at unit spacing; omega_t = 1.
fn pair_q(beta: f64) -> DMatrix<f64> {
    chain_q(2, beta)
}

/// Unit-spaced chain with dipolar coupling beta / r^3; omega_t = 1.
fn chain_q(n: usize, beta: f64) -> DMatrix<f64> {
    let mut q = DMatrix::identity(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = beta / (i.abs_diff(j) as f64).powi(3);
                q[(2 * i, 2 * j)] = v;
                q[(2 * i, 2 * i)] -= v;
            }
        }
    }
    q
}

pub fn impulsive(ctx: &Ctx, args: &ImpulsiveArgs) -> Result<Status> {
    if !(args.tf > args.t0) {
        bail!("the probe pulse must follow the source pulse");
    }
    let q = pair_q(args.beta);
    let pj = PulseShape::Gaussian {
        center: args.t0,
        width: args.width,
        area: args.theta,
    };
    let pi = PulseShape::Gaussian {
        center: args.tf,
        width: args.width,
        area: args.theta,
    };
    let closed = impulsive_closed_form_shaped(&q, 0, 1, &pi, &pj)?;
    let opts = EvolveOptions::magnus4(args.steps_per_period);
    let fock = impulsive_fock(&q, 1.0, 0, 1, pi, pj, args.tf + 10.0 * args.width, args.n_max, &opts)?;
    let report = ImpulsiveReport {
        phase: closed.phase,
        fock,
        exact_closed_form: closed.exact,
        printed_closed_form: closed.printed,
        gap_exact: (fock - closed.exact).abs(),
        gap_printed: (fock - closed.printed).abs(),
        n_max: args.n_max,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    ctx.out.json("impulsive.json", &report)?;
    Ok(Status::Ok)
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Convention {
    /// 8 |sin W| theta_i theta_j.
    Outside,
    /// 8 |sin(W theta_i theta_j)|.
    Inside,
}

#[derive(Args, Debug)]
pub struct Figure1Args {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Times of the heatmap slices (s).
    #[arg(long, value_delimiter = ',', default_values_t = [2e-6, 5e-6, 10e-6])]
    pub slices_s: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Convention::Outside)]
    pub convention: Convention,
}

#[derive(Serialize)]
struct FrontReport {
    theta: f64,
    threshold: f64,
    speed_m_per_s: Option<f64>,
    reference_m_per_s: f64,
    ratio: Option<f64>,
    sites_reached: usize,
    sites: usize,
    completion_s: Option<f64>,
    eq10_violations: usize,
}

pub fn figure1(ctx: &Ctx, args: &Figure1Args) -> Result<Status> {
    let s = args.scenario.resolve("figure1", "be_penning", &[], 600, |_| 30e-6)?;
    let setup = Setup::new(&s)?;
    let theta = s.drive.theta_rad;
    let modal = ModalPropagator::new(setup.q.matrix(), 0.0)?.context("figure 1 needs a trap Q")?;
    let convention = match args.convention {
        Convention::Outside => SineConvention::ThetaOutside,
        Convention::Inside => SineConvention::ThetaInside,
    };
    let field = impulsive_exact_field(&modal, setup.source, &setup.times, theta, convention)?;
    ctx.out.csv(&format!("{}_field.csv", s.name), &setup.field_table(&field, "envelope", None))?;

    let reference = 3.0 * setup.spec.d_m * setup.bw;
    for (idx, &ts) in args.slices_s.iter().enumerate() {
        let k = nearest(&setup.times, ts);
        let values: Vec<f64> = field.column(k).iter().cloned().collect();
        let title = format!("t = {:.2} us, theta = {theta}", setup.times[k] * 1e6);
        let radius = reference * setup.times[k] / setup.spec.d_m;
        let svg = heatmap_svg(&setup.spec.positions, &values, &title, Some(radius));
        ctx.out.svg(&format!("{}_slice{idx}.svg", s.name), &svg)?;
    }

    let arrivals = front_extract(&field, &setup.times, ARRIVAL_THRESHOLD)?;
    let points: Vec<(f64, f64)> = arrivals
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != setup.source)
        .filter_map(|(i, a)| a.map(|t| (setup.spec.geometry.d(i, setup.source) * setup.spec.d_m, t)))
        .collect();
    let speed = fit_speed(&points);
    let eq10 = bound_field(&setup.model(&s.drive), BoundKind::Eq10, &setup.spec.geometry, setup.source, &setup.times, (theta, theta))?;
    let (eq10_violations, _) = count_above(&field, &eq10);
    let report = FrontReport {
        theta,
        threshold: ARRIVAL_THRESHOLD,
        speed_m_per_s: speed,
        reference_m_per_s: reference,
        ratio: speed.map(|v| v / reference),
        sites_reached: points.len(),
        sites: setup.spec.n() - 1,
        completion_s: points.iter().map(|p| p.1).reduce(f64::max),
        eq10_violations,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    ctx.out.json(&format!("{}_front.json", s.name), &report)?;
    Ok(Status::from_violations(eq10_violations))
}

fn nearest(times: &[f64], t: f64) -> usize {
    (0..times.len())
        .min_by(|&a, &b| (times[a] - t).abs().total_cmp(&(times[b] - t).abs()))
        .unwrap_or(0)
}

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[arg(long = "N", default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub draws: usize,
    /// Fock cutoff; the suite default when absent.
    #[arg(long)]
    pub n_max: Option<usize>,
}

pub fn exact(ctx: &Ctx, args: &ExactArgs) -> Result<Status> {
    if !(2..=3).contains(&args.n) {
        bail!("the exact suite supports N = 2 or 3");
    }
    let mut cfg = DominanceConfig::new(args.n, args.draws, ctx.seed);
    if let Some(n_max) = args.n_max {
        cfg.n_max = n_max;
    }
    let report = dominance_suite(&cfg)?;
    println!(
        "N={} draws={} violations={} max_ratio={:.3e} max_truncation_delta={:.1e}",
        report.n_sites,
        report.draws.len(),
        report.violations,
        report.max_ratio,
        report.max_truncation_delta
    );
    ctx.out.json(&format!("exact_N{}.json", args.n), &report)?;
    Ok(if report.passed() { Status::Ok } else { Status::Violation })
}

#[derive(Args, Debug)]
pub struct ProtocolArgs {
    #[arg(long = "N", default_value_t = 2)]
    pub n: usize,
    /// Spin-echo sequence instead of continuous driving.
    #[arg(long)]
    pub echo: bool,
    #[arg(long, default_value_t = 0.05)]
    pub nbar: f64,
    /// Final time in units of 1/omega_t; rounded to whole drive periods under echo.
    #[arg(long, default_value_t = 3.0)]
    pub t_f: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
}

/// Largest |finite difference - direct| accepted by the protocol check.
const PROTOCOL_TOL: f64 = 1e-5;

#[derive(Serialize)]
struct ProtocolOutput {
    n_sites: usize,
    echo: bool,
    beta_omega_t: f64,
    g: f64,
    nu: f64,
    phi: f64,
    h: f64,
    t_f: f64,
    #[serde(flatten)]
    report: lrbounds::exactsim::ProtocolReport,
}

pub fn protocol(ctx: &Ctx, args: &ProtocolArgs) -> Result<Status> {
    if !(2..=3).contains(&args.n) {
        bail!("the protocol supports N = 2 or 3");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let bw = rng.gen_range(0.05..0.2);
    let params = SpinBosonParams {
        q: chain_q(args.n, bw),
        omega_ref: 1.0,
        g: rng.gen_range(0.2..1.0),
        nu: 1.0 + rng.gen_range(-0.3..0.3),
        phi: rng.gen_range(0.0..TAU),
        h: rng.gen_range(0.2..1.0),
    };
    let t_f = if args.echo {
        let period = TAU / params.nu;
        (args.t_f / period).round().max(1.0) * period
    } else {
        args.t_f
    };
    let mut cfg = ProtocolConfig::new(0, args.n - 1, 0.0, t_f);
    cfg.nbar = args.nbar;
    cfg.lambda_b = args.lambda;
    cfg.opts = EvolveOptions::magnus4(20.0);
    if args.echo {
        cfg.regime = Regime::Echo {
            ac_stark: rng.gen_range(0.0..0.5),
            omega_tilde: rng.gen_range(0.0..0.5),
        };
    }
    let report = linear_response_protocol(&params, &cfg)?;
    let pass = report.abs_error < PROTOCOL_TOL;
    let out = ProtocolOutput {
        n_sites: args.n,
        echo: args.echo,
        beta_omega_t: bw,
        g: params.g,
        nu: params.nu,
        phi: params.phi,
        h: params.h,
        t_f,
        report,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    ctx.out.json(&format!("protocol_N{}.json", args.n), &out)?;
    Ok(if pass { Status::Ok } else { Status::Violation })
}

#[derive(Serialize)]
struct GoldenReport {
    a0_chain: f64,
    a0_triangular_patch: f64,
    a0_triangular_infinite: f64,
    zeta_estimate_chain: f64,
    zeta_estimate_triangular: f64,
    mg_beta: f64,
    mg_beta_omega_t_khz: f64,
    be_beta: f64,
    be_beta_omega_t_khz: f64,
    mg_chain_length_um: f64,
    mg_central_spacing_um: f64,
    spin_boson_timescale_s: Option<f64>,
    strong_spin_model_timescale_s: Option<f64>,
    dipolar_spin_model_timescale_s: Option<f64>,
    figure1_front_ratio: Option<f64>,
}

pub fn report(ctx: &Ctx) -> Result<Status> {
    let pl3 = DecayEnvelope::power_law(3.0);
    let chain = converge_a0(LatticeKind::Chain, &pl3, 1e-3, 4096)?;
    let tri = converge_a0(LatticeKind::Triangular, &pl3, 1e-3, 1500)?;
    let tri_limit = lattice_a0_limit(LatticeKind::Triangular, &pl3, 12.0, 150.0)?;
    let mg = crystal("mg_chain")?;
    let be = crystal("be_penning")?;
    let length = (mg.positions[mg.n() - 1][0] - mg.positions[0][0]) * mg.d_m;

    // timescales at d = 5 on the Be crystal with g/2pi = 0.6 kHz
    let be_a0 = compute_a0(&be.geometry, &pl3)?.a0;
    let sb = BoundModel::trapped_ion(be_a0, beta_omega_t(&be), hz_to_angular(0.6e3), KappaConvention::KappaSupp);
    let d = 5.0;
    let tier = |detuning_hz: f64| {
        let m = sb.clone().with_detuning(hz_to_angular(detuning_hz));
        crossing_time(|t| m.spin_model_main(d, t).unwrap_or(0.0), ARRIVAL_THRESHOLD, 1e3)
    };

    let setup = Setup::new(&Scenario {
        name: "figure1".into(),
        preset: "be_penning".into(),
        kinds: Vec::new(),
        source: None,
        probe: None,
        time: TimeGrid {
            t_min_s: 0.0,
            t_max_s: 30e-6,
            steps: 600,
        },
        drive: Drive::default(),
        out_dir: None,
    })?;
    let modal = ModalPropagator::new(setup.q.matrix(), 0.0)?.context("trap Q")?;
    let field = impulsive_exact_field(&modal, setup.source, &setup.times, 1.0, SineConvention::ThetaOutside)?;
    let points: Vec<(f64, f64)> = front_extract(&field, &setup.times, ARRIVAL_THRESHOLD)?
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != setup.source)
        .filter_map(|(i, a)| a.map(|t| (be.geometry.d(i, setup.source) * be.d_m, t)))
        .collect();

    let r = GoldenReport {
        a0_chain: chain.a0,
        a0_triangular_patch: tri.a0,
        a0_triangular_infinite: tri_limit.a0,
        zeta_estimate_chain: zeta_estimate_a0(1, 3.0, ZetaConvention::Printed)?,
        zeta_estimate_triangular: zeta_estimate_a0(2, 3.0, ZetaConvention::Printed)?,
        mg_beta: stiffness(&mg),
        mg_beta_omega_t_khz: angular_to_hz(beta_omega_t(&mg)) / 1e3,
        be_beta: stiffness(&be),
        be_beta_omega_t_khz: angular_to_hz(beta_omega_t(&be)) / 1e3,
        mg_chain_length_um: length * 1e6,
        mg_central_spacing_um: mg.d_m * 1e6,
        spin_boson_timescale_s: crossing_time(|t| sb.trapped_ion_bound(d, t), ARRIVAL_THRESHOLD, 1.0),
        strong_spin_model_timescale_s: tier(8e3),
        dipolar_spin_model_timescale_s: tier(80e3),
        figure1_front_ratio: fit_speed(&points).map(|v| v / (3.0 * be.d_m * beta_omega_t(&be))),
    };
    println!("{}", serde_json::to_string_pretty(&r)?);
    ctx.out.json("report.json", &r)?;
    Ok(Status::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_q_matches_the_pair_layout() {
        let q = pair_q(0.1);
        assert_eq!(q[(0, 0)], 0.9);
        assert_eq!(q[(0, 2)], 0.1);
        assert_eq!(q[(1, 1)], 1.0);
        let q3 = chain_q(3, 0.08);
        assert!((q3[(2, 2)] - (1.0 - 0.16)).abs() < 1e-15);
        assert!((q3[(0, 4)] - 0.01).abs() < 1e-15);
        assert_eq!(q3.transpose(), q3);
    }

    #[test]
    fn shells_cover_the_requested_sites() {
        assert_eq!(triangular_shells(1), 0);
        assert_eq!(triangular_shells(7), 1);
        assert_eq!(triangular_shells(8), 2);
        assert_eq!(triangular_shells(271), 9);
    }

    #[test]
    fn nearest_picks_the_closest_grid_point() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(nearest(&t, 1.4), 1);
        assert_eq!(nearest(&t, 1.6), 2);
        assert_eq!(nearest(&t, 10.0), 3);
    }
}
