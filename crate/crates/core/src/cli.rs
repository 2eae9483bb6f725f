//! Scenario runner behind the `twohol` binary.
//!
//! A scenario builds its data, runs the relevant verifiers and pipelines and turns every
//! measured residual into a [`Record`]. Reports print as aligned text or as JSON lines.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{axioms_report, AbPair, AbelianGerbe, CrossedModule, Inner, Trivial};
use crate::bundle::{
    gl2_form, gl2_gauge, inner_annulus_scenario, inner_sphere_scenario, sphere_two_chart_scenario, synthesize_bundle,
    tetrahedron_two_arrow, torus_map, verify_cocycle, verify_compatibility, Atlas, BundleData, TORUS_RADII,
};
use crate::connection::{Form1, Form2, GaugeTransformation, GroupField, LocalConnection, Module};
use crate::global_holonomy::{
    build_mesh, cell_in_chart, class_distance, glue_with, reparametrization_residual, sphere_kernel_check, ChartAssignment, GlobalHolonomy,
    GlueOptions, Mesh, SurfaceLoop, SweepOrder,
};
use crate::numerics::{
    c, convergence_order, distance, gauss_legendre_interval, gauss_legendre_rect, identity, inverse, real, scalar, zeros, Mat, Rect,
    StepSpec,
};
use crate::path_transport::{
    gauge_transport_h, holonomy1, loop_holonomy_from, loop_holonomy_u, script_a, script_b, wreath_holonomy, ParamPath, SurfaceMap,
    SurfacePatch,
};
use crate::surface_transport::{cylinder_residual, gauge_cube_residual, hcompose_local, local_2_holonomy, vcompose_local};
use crate::{Error, Result};

const COMPATIBILITY_FD: f64 = 1e-4;
const SHEAR: fn(f64, f64) -> (f64, f64) = |t, s| (t + 0.2 * t * (1.0 - t) * s, s * s * (3.0 - 2.0 * s));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Plain,
    Records,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Trivial,
    AbelianStokes,
    InnerAnnulus,
    SphereGerbe,
    ReparamShear,
    RefinementSweep,
    Verify,
    Sweep,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Trivial,
        Scenario::AbelianStokes,
        Scenario::InnerAnnulus,
        Scenario::SphereGerbe,
        Scenario::ReparamShear,
        Scenario::RefinementSweep,
        Scenario::Verify,
        Scenario::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Trivial => "trivial",
            Scenario::AbelianStokes => "abelian-stokes",
            Scenario::InnerAnnulus => "inner-annulus",
            Scenario::SphereGerbe => "sphere-gerbe",
            Scenario::ReparamShear => "reparam-shear",
            Scenario::RefinementSweep => "refinement-sweep",
            Scenario::Verify => "verify",
            Scenario::Sweep => "sweep",
        }
    }

    fn summary(self) -> &'static str {
        match self {
            Scenario::Trivial => "zero data on the trivial crossed module; every residual is exactly zero",
            Scenario::AbelianStokes => "single chart, G = H = R>0: surface holonomy and loop holonomy against quadratures",
            Scenario::InnerAnnulus => "INNER(2) bundle on three charts over a torus: cocycle, cube, cylinder and gluing checks",
            Scenario::SphereGerbe => "abelian gerbe on the two-chart sphere with flux 2*pi*n (set n with --flux)",
            Scenario::ReparamShear => "Hol of a sphere against Hol of its sheared reparametrization",
            Scenario::RefinementSweep => "Hol classes under repeated mesh refinement",
            Scenario::Verify => "every verifier suite: algebra, transport, surface and bundle",
            Scenario::Sweep => "convergence orders under step halving",
        }
    }

    fn default_steps(self) -> usize {
        match self {
            Scenario::Trivial => 8,
            Scenario::AbelianStokes | Scenario::InnerAnnulus | Scenario::SphereGerbe | Scenario::RefinementSweep => 64,
            Scenario::ReparamShear | Scenario::Verify => 128,
            Scenario::Sweep => 8,
        }
    }
}

/// Everything a run depends on. Loaded from TOML or assembled from flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Integration steps per unit parameter length; the scenario default when absent.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Replaces every upper-bound tolerance of the scenario.
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Flux integer of the sphere gerbe.
    #[serde(default = "default_flux")]
    pub flux: i32,
    /// Base mesh is `mesh × mesh` before chart refinement.
    #[serde(default = "default_mesh")]
    pub mesh: usize,
    /// Random overlap points per bundle verifier.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_format")]
    pub format: Format,
    #[serde(default)]
    pub timing: bool,
}

fn default_seed() -> u64 {
    7
}
fn default_flux() -> i32 {
    1
}
fn default_mesh() -> usize {
    8
}
fn default_samples() -> usize {
    16
}
fn default_format() -> Format {
    Format::Plain
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        ScenarioConfig {
            scenario,
            steps: None,
            seed: default_seed(),
            tolerance: None,
            flux: default_flux(),
            mesh: default_mesh(),
            samples: default_samples(),
            format: default_format(),
            timing: false,
        }
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config { path: origin.into(), message: e.message().to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Err(Error::Config { path: path.into(), message: message.into() });
        if self.steps == Some(0) {
            return bad("steps", "must be at least 1");
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return bad("tolerance", "must be positive and finite");
            }
        }
        if self.mesh == 0 {
            return bad("mesh", "must be at least 1");
        }
        if self.samples == 0 {
            return bad("samples", "must be at least 1");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or_else(|| self.scenario.default_steps())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

/// One check. Field order is the wire order of the records format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub name: String,
    pub anchor: String,
    #[serde(with = "non_finite_as_null")]
    pub residual: f64,
    pub tolerance: f64,
    pub status: Status,
    pub millis: Option<u64>,
}

mod non_finite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// A named pipeline output such as the entries of `Hol_γ`, as `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub name: String,
    pub values: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub outputs: Vec<Output>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub header: Header,
    pub records: Vec<Record>,
    /// Pipeline failures, reported next to the failing record they produced.
    pub errors: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> usize {
        self.records.iter().filter(|r| r.status == Status::Pass).count()
    }

    pub fn all_passed(&self) -> bool {
        self.errors.is_empty() && self.passed() == self.records.len()
    }

    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }
}

pub fn emit_report(report: &RunReport, format: Format) -> String {
    match format {
        Format::Records => {
            let mut out = serde_json::to_string(&report.header).expect("header serializes");
            out.push('\n');
            for r in &report.records {
                out.push_str(&serde_json::to_string(r).expect("record serializes"));
                out.push('\n');
            }
            out
        }
        Format::Plain => {
            let h = &report.header;
            let mut out = format!("# twohol {}  seed={}  steps={}\n", h.scenario, h.seed, h.steps);
            for o in &h.outputs {
                let values: Vec<String> = o.values.iter().map(|[re, im]| format!("{re:+.12e}{im:+.12e}i")).collect();
                let _ = writeln!(out, "{} = [{}]", o.name, values.join(", "));
            }
            let width = report.records.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &report.records {
                let status = if r.status == Status::Pass { "PASS" } else { "FAIL" };
                let _ = write!(out, "{status}  {:width$}  {:.3e}  (tol {:.1e})  {}", r.name, r.residual, r.tolerance, r.anchor);
                if let Some(ms) = r.millis {
                    let _ = write!(out, "  {ms} ms");
                }
                out.push('\n');
            }
            for e in &report.errors {
                let _ = writeln!(out, "error: {e}");
            }
            let _ = writeln!(out, "passed {}/{}", report.passed(), report.records.len());
            out
        }
    }
}

/// Inverse of [`emit_report`] for the records format.
pub fn parse_records(text: &str) -> Result<(Header, Vec<Record>)> {
    let bad = |line: usize, e: serde_json::Error| Error::Config { path: format!("line {line}"), message: e.to_string() };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Header = serde_json::from_str(lines.next().unwrap_or("")).map_err(|e| bad(1, e))?;
    let records = lines.enumerate().map(|(k, l)| serde_json::from_str(l).map_err(|e| bad(k + 2, e))).collect::<Result<_>>()?;
    Ok((header, records))
}

pub fn list_scenarios() -> String {
    let mut out = String::new();
    for s in Scenario::ALL {
        let _ = writeln!(out, "{:<17} {}", s.name(), s.summary());
    }
    out
}

struct Runner {
    tolerance: Option<f64>,
    timing: bool,
    records: Vec<Record>,
    outputs: Vec<Output>,
    errors: Vec<String>,
}

impl Runner {
    fn push(&mut self, name: &str, anchor: &str, residual: f64, tolerance: f64, at_least: bool, millis: Option<u64>) {
        let residual = if residual.is_nan() { f64::INFINITY } else { residual };
        let pass = if at_least { residual >= tolerance } else { residual <= tolerance };
        self.records.push(Record {
            name: name.into(),
            anchor: anchor.into(),
            residual,
            tolerance,
            status: if pass { Status::Pass } else { Status::Fail },
            millis,
        });
    }

    /// Records `residual ≤ tolerance`, with the tolerance overridable from the command line.
    fn below(&mut self, name: &str, anchor: &str, residual: f64, tolerance: f64, millis: Option<u64>) {
        self.push(name, anchor, residual, self.tolerance.unwrap_or(tolerance), false, millis);
    }

    /// Records `residual ≥ bound`; used for orders and for effects that must be visible.
    fn above(&mut self, name: &str, anchor: &str, residual: f64, bound: f64, millis: Option<u64>) {
        self.push(name, anchor, residual, bound, true, millis);
    }

    /// Runs `f`, keeping its wall time only when timing was requested.
    fn timed<T>(&self, f: impl FnOnce() -> T) -> (T, Option<u64>) {
        let start = Instant::now();
        let out = f();
        (out, self.timing.then(|| start.elapsed().as_millis() as u64))
    }

    /// Turns a pipeline error into a failing record named `name`.
    fn fallible<T>(&mut self, name: &str, anchor: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("{name}: {e}"));
                self.push(name, anchor, f64::INFINITY, self.tolerance.unwrap_or(0.0), false, None);
                None
            }
        }
    }

    fn output(&mut self, name: &str, m: &Mat) {
        self.outputs.push(Output { name: name.into(), values: m.iter().map(|z| [z.re, z.im]).collect() });
    }

    fn output_vec(&mut self, name: &str, v: &[Complex64]) {
        self.outputs.push(Output { name: name.into(), values: v.iter().map(|z| [z.re, z.im]).collect() });
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    config.validate()?;
    let steps = config.steps();
    let mut run = Runner { tolerance: config.tolerance, timing: config.timing, records: vec![], outputs: vec![], errors: vec![] };
    let spec = StepSpec::rk4(steps);
    match config.scenario {
        Scenario::Trivial => trivial(&mut run, spec, config),
        Scenario::AbelianStokes => abelian_stokes(&mut run, spec),
        Scenario::InnerAnnulus => inner_annulus(&mut run, spec, config),
        Scenario::SphereGerbe => sphere_gerbe(&mut run, spec, config),
        Scenario::ReparamShear => reparam_shear(&mut run, spec, config),
        Scenario::RefinementSweep => refinement_sweep(&mut run, spec, config),
        Scenario::Verify => verify(&mut run, spec, config),
        Scenario::Sweep => sweep(&mut run, steps),
    }
    Ok(RunReport {
        header: Header { scenario: config.scenario.name().into(), seed: config.seed, steps, outputs: run.outputs },
        records: run.records,
        errors: run.errors,
    })
}

fn plane() -> SurfaceMap {
    SurfaceMap::new(|t, s| vec![t, s, 0.3 * t * s], Rect::UNIT).with_jacobian(|t, s| (vec![1.0, 0.0, 0.3 * s], vec![0.0, 1.0, 0.3 * t]))
}

fn warped() -> SurfaceMap {
    SurfaceMap::new(|t, s| vec![t + 0.1 * s * s, s - 0.2 * t * s, 0.3 * (t * s).sin()], Rect::UNIT)
        .with_jacobian(|t, s| (vec![1.0, -0.2 * s, 0.3 * s * (t * s).cos()], vec![0.2 * s, 1.0 - 0.2 * t, 0.3 * t * (t * s).cos()]))
}

fn inner2() -> Module {
    Arc::new(Inner::general(2))
}

fn options(order: SweepOrder) -> GlueOptions {
    GlueOptions { order, tolerance: f64::INFINITY }
}

fn mesh_for(run: &mut Runner, gamma: &SurfaceLoop, b: &BundleData, n: usize) -> Option<(Mesh, ChartAssignment)> {
    run.fallible("mesh covers the surface", "every cell lies in its chart", build_mesh(gamma, &b.atlas, (n, n), 4))
}

/// A cell in `rows` that lies in a second chart, with that chart.
fn movable_cell(
    gamma: &SurfaceLoop,
    b: &BundleData,
    mesh: &Mesh,
    asg: &ChartAssignment,
    rows: impl Iterator<Item = usize> + Clone,
) -> Option<((usize, usize), usize)> {
    let last = mesh.n_s() - 1;
    for row in rows {
        for a in 0..mesh.n_t() {
            let cur = asg.get(a, row);
            for chart in 0..b.atlas.len() {
                let fits = |r: usize| cell_in_chart(gamma, &b.atlas, mesh.rect(a, r), chart);
                let partner_ok = if row == 0 || row == last { fits(0) && fits(last) } else { true };
                if chart != cur && fits(row) && partner_ok {
                    return Some(((a, row), chart));
                }
            }
        }
    }
    None
}

fn bundle_checks(run: &mut Runner, b: &BundleData, config: &ScenarioConfig, label: &str) {
    let ((cocycle, compat), ms) = run.timed(|| {
        (verify_cocycle(b, config.samples, config.seed), verify_compatibility(b, config.samples, config.seed, Some(COMPATIBILITY_FD)))
    });
    if let Some(r) = run.fallible(&format!("{label}: cocycle"), "cocycle identities", cocycle) {
        for e in &r.entries {
            run.below(&format!("{label}: {}", e.name), &e.anchor, e.value, 1e-10, ms);
        }
    }
    if let Some(r) = run.fallible(&format!("{label}: compatibility"), "gauge relations", compat) {
        for e in &r.entries {
            run.below(&format!("{label}: {}", e.name), &e.anchor, e.value, 1e-6, ms);
        }
    }
}

fn tetrahedra(run: &mut Runner, b: &BundleData, config: &ScenarioConfig, label: &str) {
    let n = b.atlas.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (worst, ms) = run.timed(|| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        for p in b.atlas.sample_overlap(&[i, j, k, l], 2, &mut rng) {
                            let (x, y) = tetrahedron_two_arrow(b, (i, j, k, l), &p)?;
                            worst = worst.max(distance(&x.h, &y.h)).max(distance(&x.source, &y.source));
                        }
                    }
                }
            }
        }
        Ok(worst)
    });
    let name = format!("{label}: tetrahedron");
    if let Some(w) = run.fallible(&name, "both tetrahedron composites agree", worst) {
        run.below(&name, "both tetrahedron composites agree", w, 1e-10, ms);
    }
}

/// Glue with both sweep orders and refinement, recording the invariance checks shared by the
/// annulus and the sphere.
fn gluing_battery(
    run: &mut Runner,
    gamma: &SurfaceLoop,
    b: &BundleData,
    spec: StepSpec,
    config: &ScenarioConfig,
    label: &str,
) -> Option<GlobalHolonomy> {
    let cm = b.cm.as_ref();
    let (mesh, asg) = mesh_for(run, gamma, b, config.mesh)?;
    let (row, ms) = run.timed(|| glue_with(gamma, b, &mesh, &asg, spec, options(SweepOrder::RowMajor)));
    let row = run.fallible(&format!("{label}: glue"), "frontier composable at every cell", row)?;
    run.below(&format!("{label}: composability"), "alpha(h^-1) W0 = frontier after each cell", row.mismatch, 1e-5, ms);
    run.below(&format!("{label}: target"), "alpha(Hol^-1) source = target", row.target_residual, 1e-5, ms);
    run.output(&format!("{label}: hol"), row.hol());
    run.output_vec(&format!("{label}: class"), &row.invariant);

    let (col, ms) = run.timed(|| glue_with(gamma, b, &mesh, &asg, spec, options(SweepOrder::ColumnMajor)));
    if let Some(col) = run.fallible(&format!("{label}: column-major order"), "row-major ~ column-major", col) {
        run.below(
            &format!("{label}: column-major order"),
            "[Hol row-major] = [Hol column-major]",
            class_distance(row.hol(), col.hol(), cm),
            1e-5,
            ms,
        );
    }

    let (fine, ms) = run.timed(|| glue_with(gamma, b, &mesh.refined(), &asg.refined(), spec, options(SweepOrder::RowMajor)));
    if let Some(fine) = run.fallible(&format!("{label}: refinement"), "[Hol] = [Hol refined]", fine) {
        run.below(&format!("{label}: refinement"), "[Hol] = [Hol refined]", class_distance(row.hol(), fine.hol(), cm), 1e-5, ms);
    }

    let name = format!("{label}: interior reassignment");
    let anchor = "[Hol] independent of chart choice";
    let (moved, ms) = run.timed(|| -> Result<Option<(GlobalHolonomy, GlobalHolonomy)>> {
        let (mut m, mut a) = (mesh.clone(), asg.clone());
        for level in 0..3 {
            if let Some((cell, chart)) = movable_cell(gamma, b, &m, &a, 1..m.n_s().saturating_sub(1)) {
                let base = if level == 0 { row.clone() } else { glue_with(gamma, b, &m, &a, spec, options(SweepOrder::RowMajor))? };
                return Ok(Some((base, reassigned(gamma, b, &m, &a, cell, chart, spec)?)));
            }
            (m, a) = (m.refined(), a.refined());
        }
        Ok(None)
    });
    match run.fallible(&name, anchor, moved) {
        Some(Some((base, moved))) => run.below(&name, anchor, class_distance(base.hol(), moved.hol(), cm), 1e-5, ms),
        Some(None) => run.push(&name, anchor, f64::INFINITY, 1e-5, false, ms),
        None => {}
    }
    if gamma.sphere {
        run.below(&format!("{label}: kernel"), "alpha(Hol) = 1 on a sphere", sphere_kernel_check(&row, cm), 1e-5, None);
    }
    Some(row)
}

fn reassigned(
    gamma: &SurfaceLoop,
    b: &BundleData,
    mesh: &Mesh,
    asg: &ChartAssignment,
    (a, row): (usize, usize),
    chart: usize,
    spec: StepSpec,
) -> Result<GlobalHolonomy> {
    let mut moved = asg.clone();
    moved.set(a, row, chart);
    let last = mesh.n_s() - 1;
    if row == 0 || row == last {
        moved.set(a, last - row, chart);
    }
    glue_with(gamma, b, mesh, &moved, spec, options(SweepOrder::RowMajor))
}

fn trivial(run: &mut Runner, spec: StepSpec, config: &ScenarioConfig) {
    let cm: Module = Arc::new(Trivial);
    let (report, ms) = run.timed(|| axioms_report(cm.as_ref(), config.samples, config.seed));
    run.below("crossed module axioms", "all crossed-module identities", report.max(), 1e-12, ms);
    let rho = ParamPath::new(|t| vec![t.cos(), t.sin(), t], 0.0, 1.0);
    if let Some(f) = run.fallible("zero transport", "F_0(rho) = 1", holonomy1(&Form1::zero(1), &rho, spec, cm.as_ref())) {
        run.below("zero transport", "F_0(rho) = 1", distance(&f.endpoint, &identity(1)), 1e-12, None);
    }
    let conn = LocalConnection::zero(cm.as_ref());
    let local = local_2_holonomy(&conn, &SurfacePatch::new(warped(), Rect::UNIT, 0), spec, cm.as_ref());
    if let Some(l) = run.fallible("zero surface transport", "H_{0,0} = 1", local) {
        run.below("zero surface transport", "H_{0,0} = 1", distance(l.h(), &identity(1)), 1e-12, None);
    }
    let (big, small) = TORUS_RADII;
    let atlas = Atlas::in_box(vec![(-1.0, 1.0); 3]).with_chart("east", |p| p[0] > -0.2).with_chart("west", |p| p[0] < 0.2);
    let gauges = [GaugeTransformation::identity(cm.as_ref()), GaugeTransformation::identity(cm.as_ref())];
    let Some(b) = run.fallible("trivial bundle", "synthesis", synthesize_bundle(cm.clone(), atlas, &conn, &gauges)) else {
        return;
    };
    bundle_checks(run, &b, config, "trivial");
    let gamma = SurfaceLoop::new(torus_map(big, small));
    if let Some((mesh, asg)) = mesh_for(run, &gamma, &b, config.mesh) {
        if let Some(h) = run.fallible("glued holonomy", "Hol = 1", glue_with(&gamma, &b, &mesh, &asg, spec, options(SweepOrder::RowMajor)))
        {
            run.below("glued holonomy", "Hol = 1", distance(h.hol(), &identity(1)), 1e-12, None);
            run.output("hol", h.hol());
        }
    }
}

/// `A = sin(z) dx + x dy + y z dz` on `G = H = ℝ>0`, with `B = dA` so the pair is fake-flat.
fn stokes_connection() -> LocalConnection {
    let a = Form1::from_components(|p: &[f64]| vec![scalar(c(p[2].sin())), scalar(c(p[0])), scalar(c(p[1] * p[2]))]);
    let b = Form2::from_components(|p: &[f64]| {
        // dA = dx∧dy − cos z dx∧dz + z dy∧dz
        let (xy, xz, yz) = (scalar(c(1.0)), scalar(c(-p[2].cos())), scalar(c(p[2])));
        vec![vec![zeros(1), xy.clone(), xz.clone()], vec![-xy, zeros(1), yz.clone()], vec![-xz, -yz, zeros(1)]]
    });
    LocalConnection::new(a, b, 0)
}

fn abelian_stokes(run: &mut Runner, spec: StepSpec) {
    let cm = AbPair;
    let conn = stokes_connection();
    let surf = warped();
    let patch = SurfacePatch::new(surf.clone(), Rect::UNIT, 0);
    let (hol, ms) = run.timed(|| local_2_holonomy(&conn, &patch, spec, &cm));
    let Some(hol) = run.fallible("surface holonomy", "H = exp(int gamma*B)", hol) else { return };
    let flux = gauss_legendre_rect(
        |t, s| {
            let (dt, ds) = surf.tangents(t, s);
            conn.b.eval(&surf.point(t, s), &dt, &ds)
        },
        Rect::UNIT,
        10,
        4,
    );
    run.below("surface holonomy", "H = exp(int gamma*B)", distance(hol.h(), &flux.exp()), 1e-6, ms);
    let (u, ms) = run.timed(|| loop_holonomy_u(&conn.a, &patch, 1.0, 1.0, spec, &cm));
    let Some(u) = run.fallible("loop holonomy", "u = exp(loop integral of A)", u) else { return };
    let edge = |rho: ParamPath| gauss_legendre_interval(|t| conn.a.eval(&rho.point(t), &rho.velocity(t)), rho.a, rho.b, 10, 4);
    let circulation =
        edge(surf.column(0.0, 0.0, 1.0)) + edge(surf.row(1.0, 0.0, 1.0)) - edge(surf.row(0.0, 0.0, 1.0)) - edge(surf.column(1.0, 0.0, 1.0));
    run.below("loop holonomy", "u = exp(loop integral of A)", distance(&u, &circulation.exp()), 1e-6, ms);
    run.below("target matching", "alpha(H^-1) = u", hol.target_residual, 1e-6, None);
    run.output("hol", hol.h());
    run.output("u", &u);
}

fn inner_annulus(run: &mut Runner, spec: StepSpec, config: &ScenarioConfig) {
    let Some((b, gamma)) = run.fallible("inner-annulus bundle", "synthesis", inner_annulus_scenario()) else { return };
    bundle_checks(run, &b, config, "annulus");
    tetrahedra(run, &b, config, "annulus");
    let cm = b.cm.clone();

    let patch = SurfacePatch::new(warped(), Rect::new(0.0, 0.8, 0.1, 0.9), 0);
    let conn = b.connections[0].clone();
    let (cube, ms) = run.timed(|| gauge_cube_residual(&conn, &gl2_gauge(1.0), &patch, spec, &cm, None));
    if let Some(r) = run.fallible("gauge cube", "gauge cube faces compose", cube) {
        run.below("gauge cube", "gauge cube faces compose", r, 1e-5, ms);
    }
    let rho = ParamPath::line(vec![-0.1, 0.3, 0.1], vec![0.15, 0.6, -0.1]);
    let (cyl, ms) = run.timed(|| cylinder_residual(&b, 0, 1, 2, &rho, spec));
    if let Some(r) = run.fallible("cylinder", "transition cylinder closes with fillers", cyl) {
        run.below("cylinder", "transition cylinder closes with fillers", r, 1e-5, ms);
    }

    let Some(row) = gluing_battery(run, &gamma, &b, spec, config, "annulus") else { return };
    let Some((mesh, asg)) = mesh_for(run, &gamma, &b, config.mesh) else { return };
    match movable_cell(&gamma, &b, &mesh, &asg, [0].into_iter()) {
        Some((cell, chart)) => {
            let (moved, ms) = run.timed(|| reassigned(&gamma, &b, &mesh, &asg, cell, chart, spec));
            if let Some(moved) = run.fallible("annulus: first-row reassignment", "[Hol] independent of chart choice", moved) {
                run.below(
                    "annulus: first-row reassignment",
                    "[Hol] independent of chart choice",
                    class_distance(row.hol(), moved.hol(), cm.as_ref()),
                    1e-5,
                    ms,
                );
                run.above(
                    "annulus: first-row raw change",
                    "|Hol - Hol'| > 1e-3 before the quotient",
                    distance(row.hol(), moved.hol()),
                    1e-3,
                    ms,
                );
            }
        }
        None => run.errors.push("annulus: no first-row cell lies in two charts".into()),
    }
}

fn sphere_gerbe(run: &mut Runner, spec: StepSpec, config: &ScenarioConfig) {
    let n = config.flux;
    let Some((b, gamma)) = run.fallible("sphere-gerbe bundle", "synthesis", sphere_two_chart_scenario(n)) else { return };
    bundle_checks(run, &b, config, "sphere");
    let Some(hol) = gluing_battery(run, &gamma, &b, spec, config, "sphere") else { return };
    let oracle = scalar(Complex64::new(0.0, 2.0 * std::f64::consts::PI * n as f64).exp());
    run.below("sphere: flux", "Hol = exp(2 pi i n)", distance(hol.hol(), &oracle), 1e-5, None);
}

type BuildScenario = fn() -> Result<(BundleData, SurfaceLoop)>;

fn reparam_shear(run: &mut Runner, spec: StepSpec, config: &ScenarioConfig) {
    let cases: [(&str, BuildScenario); 2] = [("sphere gerbe", || sphere_two_chart_scenario(1)), ("inner sphere", inner_sphere_scenario)];
    for (label, build) in cases {
        let name = format!("{label}: shear");
        let Some((b, gamma)) = run.fallible(&name, "synthesis", build()) else { continue };
        let (r, ms) = run.timed(|| reparametrization_residual(&gamma, SHEAR, &b, config.mesh, spec));
        if let Some(r) = run.fallible(&name, "[Hol(gamma)] = [Hol(gamma o Xi)]", r) {
            run.below(&name, "[Hol(gamma)] = [Hol(gamma o Xi)]", r, 1e-4, ms);
        }
    }
}

fn refinement_sweep(run: &mut Runner, spec: StepSpec, config: &ScenarioConfig) {
    let cases: [(&str, BuildScenario); 2] = [("annulus", inner_annulus_scenario), ("sphere", || sphere_two_chart_scenario(1))];
    for (label, build) in cases {
        let Some((b, gamma)) = run.fallible(label, "synthesis", build()) else { continue };
        let Some((mut mesh, mut asg)) = mesh_for(run, &gamma, &b, (config.mesh / 2).max(1)) else { continue };
        let mut previous: Option<GlobalHolonomy> = None;
        for level in 0..3 {
            let name = format!("{label}: {}x{} mesh", mesh.n_t(), mesh.n_s());
            let (h, ms) = run.timed(|| glue_with(&gamma, &b, &mesh, &asg, spec, options(SweepOrder::RowMajor)));
            let Some(h) = run.fallible(&name, "[Hol] = [Hol refined]", h) else { break };
            if let Some(p) = &previous {
                run.below(&name, "[Hol] = [Hol refined]", class_distance(p.hol(), h.hol(), b.cm.as_ref()), 1e-5, ms);
            }
            if level < 2 {
                (mesh, asg) = (mesh.refined(), asg.refined());
            }
            previous = Some(h);
        }
    }
}

fn verify(run: &mut Runner, spec: StepSpec, config: &ScenarioConfig) {
    algebra_suite(run, config);
    transport_suite(run, spec);
    surface_suite(run, spec);
    bundle_suite(run, config, spec);
}

fn algebra_suite(run: &mut Runner, config: &ScenarioConfig) {
    let modules: Vec<Box<dyn CrossedModule>> =
        vec![Box::new(Trivial), Box::new(AbelianGerbe), Box::new(Inner::general(2)), Box::new(Inner::orthogonal(3)), Box::new(AbPair)];
    for cm in &modules {
        let (r, ms) = run.timed(|| axioms_report(cm.as_ref(), 200.max(config.samples), config.seed));
        let exact = r.entries.iter().filter(|e| !e.finite_difference).map(|e| e.value).fold(0.0, f64::max);
        let fd = r.entries.iter().filter(|e| e.finite_difference).map(|e| e.value).fold(0.0, f64::max);
        run.below(&format!("algebra {}: identities", cm.name()), "crossed-module, wreath and interchange identities", exact, 1e-12, ms);
        run.below(&format!("algebra {}: derivatives", cm.name()), "differentials match finite differences", fd, 1e-9, ms);
    }
}

fn transport_suite(run: &mut Runner, spec: StepSpec) {
    let cm = inner2();
    let cm = cm.as_ref();
    let a = gl2_form(1.0);
    let rho = ParamPath::new(|t| vec![t.cos(), t * t, (2.0 * t).sin()], 0.0, 1.0);
    let r = (|| -> Result<()> {
        let whole = holonomy1(&a, &rho, spec, cm)?.endpoint;
        let first = holonomy1(&a, &rho.segment(0.0, 0.37), spec, cm)?.endpoint;
        let second = holonomy1(&a, &rho.segment(0.37, 1.0), spec, cm)?.endpoint;
        run.below("transport composition", "F(rho1 # rho2) = F(rho1) F(rho2)", distance(&whole, &(first * second)), 1e-6, None);
        let back = holonomy1(&a, &rho.reversed(), spec, cm)?.endpoint;
        run.below("transport reversal", "F(rho^-1) = F(rho)^-1", distance(&(&whole * back), &identity(2)), 1e-6, None);

        let patch = SurfacePatch::new(plane(), Rect::UNIT, 0);
        let (t, s, s0) = (0.7, 0.9, 0.4);
        let u = loop_holonomy_u(&a, &patch, t, s, spec, cm)?;
        let f = holonomy1(&a, &patch.surface.column(0.0, 0.0, s0), spec, cm)?.endpoint;
        let rhs = &f * loop_holonomy_from(&a, &patch, s0, t, s, spec, cm)? * inverse(&f)? * loop_holonomy_u(&a, &patch, t, s0, spec, cm)?;
        run.below("loop decomposition", "u(t,s) = F u_{s0}(t,s) F^-1 u(t,s0)", distance(&u, &rhs), 1e-6, None);

        let conn = LocalConnection::fake_flat_from(a.clone(), 0)?;
        let sa = script_a(&conn.a, &patch, 0.8, 0.5, spec, cm, None)?;
        let sb = script_b(&conn, &patch, 0.8, 0.5, spec, cm)?;
        run.below("alpha(script B)", "alpha(B_t(s)) = A_t(s)", distance(&cm.alpha_lie(&sb), &sa), 1e-6, None);

        let module = inner2();
        let gt = gl2_gauge(1.0);
        let gauged = crate::connection::apply_gauge(&conn, &gt, &module, None)?;
        let path = ParamPath::new(|t| vec![0.5 * t, t * t - 0.2, (3.0 * t).sin()], 0.0, 1.0);
        let h = gauge_transport_h(&a, &gt.phi, &path, spec, cm)?.endpoint;
        let f = holonomy1(&a, &path, spec, cm)?.endpoint;
        let f2 = holonomy1(&gauged.a, &path, spec, cm)?.endpoint;
        let lhs = cm.alpha(&inverse(&h)?) * &f * gt.g.eval(&path.point(1.0));
        run.below(
            "gauge transport target",
            "alpha(h^-1) F g(end) = g(start) F'",
            distance(&lhs, &(gt.g.eval(&path.point(0.0)) * f2)),
            1e-6,
            None,
        );
        let h1 = gauge_transport_h(&a, &gt.phi, &path.segment(0.0, 0.45), spec, cm)?.endpoint;
        let h2 = gauge_transport_h(&a, &gt.phi, &path.segment(0.45, 1.0), spec, cm)?.endpoint;
        let f1 = holonomy1(&a, &path.segment(0.0, 0.45), spec, cm)?.endpoint;
        run.below("gauge transport composition", "h(rho1 # rho2) = (F1 |> h2) h1", distance(&h, &(cm.act(&f1, &h2) * h1)), 1e-6, None);
        let w = wreath_holonomy(&a, &gt.phi, &path, spec, cm)?;
        run.below("wreath transport", "F_(A,phi) = (F_A, h)", distance(&w.g, &f).max(distance(&w.h, &h)), 1e-6, None);
        Ok(())
    })();
    run.fallible("transport suite", "transport identities", r);
}

fn surface_suite(run: &mut Runner, spec: StepSpec) {
    let module = inner2();
    let cm = module.as_ref();
    let r = (|| -> Result<()> {
        let conn = LocalConnection::fake_flat_from(gl2_form(1.0), 0)?;
        let surf = warped();
        let patch = SurfacePatch::new(surf.clone(), Rect::new(0.1, 0.8, 0.0, 0.7), 0);
        let hol = local_2_holonomy(&conn, &patch, spec, cm)?;
        run.below("surface target", "alpha(H^-1) F(up) = F(down)", hol.target_residual, 1e-5, None);
        let u = loop_holonomy_u(&conn.a, &patch, 0.8, 0.7, spec, cm)?;
        run.below("surface loop identity", "alpha(H^-1) = u", distance(&cm.alpha(&inverse(hol.h())?), &u), 1e-5, None);
        let piece = |r: Rect| local_2_holonomy(&conn, &SurfacePatch::new(surf.clone(), r, 0), spec, cm);
        let (_, h) = hcompose_local(&piece(Rect::new(0.0, 0.375, 0.0, 0.6))?, &piece(Rect::new(0.375, 1.0, 0.0, 0.6))?, cm)?;
        run.below("horizontal composition", "H(left # right) = left #0 right", h, 1e-5, None);
        let (_, v) = vcompose_local(&piece(Rect::new(0.0, 0.7, 0.0, 0.25))?, &piece(Rect::new(0.0, 0.7, 0.25, 1.0))?, cm)?;
        run.below("vertical composition", "H(top # bottom) = top #1 bottom", v, 1e-5, None);
        let cube =
            gauge_cube_residual(&conn, &gl2_gauge(1.0), &SurfacePatch::new(surf, Rect::new(0.0, 0.8, 0.1, 0.9), 0), spec, &module, None)?;
        run.below("gauge cube", "gauge cube faces compose", cube, 1e-5, None);
        Ok(())
    })();
    run.fallible("surface suite", "surface identities", r);
}

fn bundle_suite(run: &mut Runner, config: &ScenarioConfig, spec: StepSpec) {
    let Some((b, _)) = run.fallible("annulus bundle", "synthesis", inner_annulus_scenario()) else { return };
    bundle_checks(run, &b, config, "annulus");
    tetrahedra(run, &b, config, "annulus");
    let rho = ParamPath::line(vec![-0.1, 0.3, 0.1], vec![0.15, 0.6, -0.1]);
    if let Some(r) = run.fallible("cylinder", "transition cylinder closes with fillers", cylinder_residual(&b, 0, 1, 2, &rho, spec)) {
        run.below("cylinder", "transition cylinder closes with fillers", r, 1e-5, None);
    }

    let mut bad = b.clone();
    if let Ok(f) = bad.f(0, 1, 2) {
        bad.cocycle.f.insert((0, 1, 2), f.product(&GroupField::constant(real(&[&[1.0, 0.01], &[0.0, 1.0]]))));
        if let Some(r) = run.fallible("perturbed f flagged", "f cocycle", verify_cocycle(&bad, config.samples, config.seed)) {
            run.above("perturbed f flagged", "f cocycle residual > 1e-4", r.get("f cocycle").unwrap_or(0.0), 1e-4, None);
        }
    }
    let mut bad = b.clone();
    if let Ok(a) = bad.a(0, 2) {
        bad.a.insert((0, 2), a.add(&Form1::from_components(|_| vec![real(&[&[0.0, 1e-2], &[0.0, 0.0]]); 3])));
        let r = verify_compatibility(&bad, config.samples, config.seed, Some(COMPATIBILITY_FD));
        if let Some(r) = run.fallible("perturbed a flagged", "connection compatibility", r) {
            run.above("perturbed a flagged", "compatibility residual > 1e-3", r.get("connection compatibility").unwrap_or(0.0), 1e-3, None);
        }
    }

    let Some((s, _)) = run.fallible("sphere bundle", "synthesis", sphere_two_chart_scenario(config.flux)) else { return };
    bundle_checks(run, &s, config, "sphere");
}

/// Error against a fine reference at `base`, `2·base` and `4·base` steps per unit.
fn order_of(run: &mut Runner, name: &str, base: usize, reference: Result<Mat>, at: impl Fn(usize) -> Result<Mat>) {
    let r = (|| -> Result<f64> {
        let reference = reference?;
        let mut samples = vec![];
        for k in 0..3 {
            let n = base << k;
            samples.push((1.0 / n as f64, distance(&at(n)?, &reference)));
        }
        Ok(convergence_order(&samples)?.value())
    })();
    if let Some(p) = run.fallible(name, "order >= 2", r) {
        run.above(name, "order >= 2 under step halving", p, 2.0, None);
    }
}

fn sweep(run: &mut Runner, base: usize) {
    let module = inner2();
    let cm = module.as_ref();
    let a = gl2_form(1.0);
    let rho = ParamPath::new(|t| vec![t.cos(), t * t, (2.0 * t).sin()], 0.0, 1.0);
    let f = |n: usize| holonomy1(&a, &rho, StepSpec::rk4(n), cm).map(|r| r.endpoint);
    order_of(run, "transport order", base, f(base * 64), f);

    let gt = gl2_gauge(1.0);
    let h = |n: usize| gauge_transport_h(&a, &gt.phi, &rho, StepSpec::rk4(n), cm).map(|r| r.endpoint);
    order_of(run, "gauge transport order", base, h(base * 64), h);

    let Ok(conn) = LocalConnection::fake_flat_from(a.clone(), 0) else { return };
    let patch = SurfacePatch::new(warped(), Rect::new(0.1, 0.8, 0.0, 0.7), 0);
    let surface = |n: usize| local_2_holonomy(&conn, &patch, StepSpec::rk4(n), cm).map(|l| l.h().clone());
    order_of(run, "surface order", base, surface(base * 32), surface);

    let cm_ab = AbPair;
    let stokes = stokes_connection();
    let full = SurfacePatch::new(warped(), Rect::UNIT, 0);
    let ab = |n: usize| local_2_holonomy(&stokes, &full, StepSpec::rk4(n), &cm_ab).map(|l| l.h().clone());
    order_of(run, "abelian surface order", base, ab(base * 32), ab);
}

#[derive(Debug, Parser)]
#[command(name = "twohol", version, about = "Surface holonomy of 2-connections: scenario runner and residual reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// Integration steps per unit parameter length.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replaces every upper-bound tolerance of the scenario.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// TOML scenario file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base mesh size before chart refinement.
    #[arg(long, global = true)]
    pub mesh: Option<usize>,
    /// Random overlap points per bundle verifier.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Adds wall-clock milliseconds to every record.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Zero data on the trivial crossed module.
    Trivial,
    /// Single-chart abelian surface holonomy against quadratures.
    AbelianStokes,
    /// INNER(2) bundle over a torus with gluing invariance checks.
    InnerAnnulus,
    /// Two-chart sphere gerbe against its flux.
    SphereGerbe {
        /// Flux integer n; the total flux is 2*pi*n.
        #[arg(long)]
        flux: Option<i32>,
    },
    /// Sphere holonomy against a sheared reparametrization.
    ReparamShear,
    /// Holonomy classes under repeated mesh refinement.
    RefinementSweep,
    /// Run every verifier suite.
    Verify,
    /// Measure convergence orders under step halving.
    Sweep,
    /// List the built-in scenarios.
    List,
}

impl Command {
    fn scenario(&self) -> Option<Scenario> {
        Some(match self {
            Command::Trivial => Scenario::Trivial,
            Command::AbelianStokes => Scenario::AbelianStokes,
            Command::InnerAnnulus => Scenario::InnerAnnulus,
            Command::SphereGerbe { .. } => Scenario::SphereGerbe,
            Command::ReparamShear => Scenario::ReparamShear,
            Command::RefinementSweep => Scenario::RefinementSweep,
            Command::Verify => Scenario::Verify,
            Command::Sweep => Scenario::Sweep,
            Command::List => return None,
        })
    }
}

/// Merges the config file, if any, with the flags.
pub fn resolve_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let origin = path.display().to_string();
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config { path: origin.clone(), message: e.to_string() })?;
            let mut config = ScenarioConfig::from_toml(&text, &origin)?;
            if let Some(s) = cli.command.as_ref().and_then(Command::scenario) {
                config.scenario = s;
            }
            config
        }
        None => match cli.command.as_ref().and_then(Command::scenario) {
            Some(s) => ScenarioConfig::new(s),
            None => return Err(Error::Config { path: "scenario".into(), message: "no scenario given".into() }),
        },
    };
    if let Some(Command::SphereGerbe { flux: Some(n) }) = &cli.command {
        config.flux = *n;
    }
    config.steps = cli.steps.or(config.steps);
    config.seed = cli.seed.unwrap_or(config.seed);
    config.tolerance = cli.tolerance.or(config.tolerance);
    config.format = cli.format.unwrap_or(config.format);
    config.mesh = cli.mesh.unwrap_or(config.mesh);
    config.samples = cli.samples.unwrap_or(config.samples);
    config.timing |= cli.timing;
    config.validate()?;
    Ok(config)
}

/// Runs the parsed command line, writing to `out` and `err`; returns the exit code.
pub fn main_with(cli: Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32 {
    if matches!(cli.command, Some(Command::List)) {
        let _ = out.write_all(list_scenarios().as_bytes());
        return 0;
    }
    let config = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "twohol: {e}");
            return 2;
        }
    };
    match run_scenario(&config) {
        Ok(report) => {
            let _ = out.write_all(emit_report(&report, config.format).as_bytes());
            if config.format == Format::Records {
                for e in &report.errors {
                    let _ = writeln!(err, "twohol: {e}");
                }
            }
            if report.all_passed() {
                0
            } else {
                1
            }
        }
        Err(e @ Error::Config { .. }) => {
            let _ = writeln!(err, "twohol: {e}");
            2
        }
        Err(e) => {
            let _ = writeln!(err, "twohol: {e}");
            1
        }
    }
}
