//! Meshing the parameter square, assigning charts, and gluing local 2-holonomies with
//! transition 2-arrows and cocycle fillers into the global 2-holonomy `Hol_γ`.
//!
//! The gluing keeps a frontier: a staircase path from `γ(0,0)` to `γ(1,1)` written as a word
//! `F_{i₁}(e₁) g_{i₁i₂} F_{i₂}(e₂) ⋯` with every edge expressed in one chart and a single
//! transition between consecutive edges. It starts as the top boundary followed by the
//! right boundary and ends as the left boundary followed by the bottom boundary. Each cell
//! rewrites its top and right edges into its own chart (fillers `f` at vertices, transition
//! 2-arrows `Ψ⁻¹` along edges) and then swaps them for its left and bottom edges through
//! its local 2-holonomy; every rewrite is a whiskered vertical composition.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{CrossedModule, WreathElement};
use crate::bundle::{unit_distance, Atlas, BundleData};
use crate::error::{Error, Result};
use crate::numerics::{distance, inverse, norm, Mat, Rect, StepSpec};
use crate::path_transport::{holonomy1, transition_psi, ParamPath, SurfaceMap, SurfacePatch};
use crate::surface_transport::{local_2_holonomy, par_map, LocalTwoHolonomy};

/// Sub-grid resolution used to test that a cell's image lies in a chart.
const CELL_SAMPLES: usize = 8;

/// A map of the unit square that is a loop in loop space; in sphere mode the whole boundary
/// maps to one point.
#[derive(Clone, Debug)]
pub struct SurfaceLoop {
    pub map: SurfaceMap,
    pub sphere: bool,
}

impl SurfaceLoop {
    pub fn new(map: SurfaceMap) -> Self {
        SurfaceLoop { map, sphere: false }
    }

    pub fn sphere(map: SurfaceMap) -> Self {
        SurfaceLoop { map, sphere: true }
    }

    pub fn point(&self, t: f64, s: f64) -> Vec<f64> {
        self.map.point(t, s)
    }

    /// Worst violation of `γ(0,·) = γ(1,·)` and `γ(·,0) = γ(·,1)` (and of a constant
    /// boundary in sphere mode) over `n + 1` boundary samples.
    pub fn closure_residual(&self, n: usize) -> f64 {
        let d = |p: Vec<f64>, q: Vec<f64>| p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let base = self.point(0.0, 0.0);
        let mut worst: f64 = 0.0;
        for k in 0..=n {
            let x = k as f64 / n as f64;
            worst = worst.max(d(self.point(0.0, x), self.point(1.0, x)));
            worst = worst.max(d(self.point(x, 0.0), self.point(x, 1.0)));
            if self.sphere {
                worst = worst.max(d(self.point(x, 0.0), base.clone()));
                worst = worst.max(d(self.point(0.0, x), base.clone()));
            }
        }
        worst
    }

    /// `γ ∘ Ξ`
    pub fn reparametrized(&self, xi: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static) -> SurfaceLoop {
        SurfaceLoop { map: self.map.compose(xi), sphere: self.sphere }
    }
}

/// Grid `0 = t₀ < ⋯ < t_N = 1`, `0 = s₀ < ⋯ < s_M = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
}

impl Mesh {
    pub fn uniform(n_t: usize, n_s: usize) -> Self {
        let grid = |n: usize| (0..=n).map(|k| k as f64 / n as f64).collect();
        Mesh { t: grid(n_t.max(1)), s: grid(n_s.max(1)) }
    }

    pub fn n_t(&self) -> usize {
        self.t.len() - 1
    }

    pub fn n_s(&self) -> usize {
        self.s.len() - 1
    }

    pub fn rect(&self, a: usize, b: usize) -> Rect {
        Rect::new(self.t[a], self.t[a + 1], self.s[b], self.s[b + 1])
    }

    /// Every cell split into four.
    pub fn refined(&self) -> Mesh {
        let split = |g: &[f64]| {
            let mut out = vec![g[0]];
            for w in g.windows(2) {
                out.push(0.5 * (w[0] + w[1]));
                out.push(w[1]);
            }
            out
        };
        Mesh { t: split(&self.t), s: split(&self.s) }
    }

    pub fn is_valid(&self) -> bool {
        let ok = |g: &[f64]| g.len() >= 2 && g[0] == 0.0 && g[g.len() - 1] == 1.0 && g.windows(2).all(|w| w[0] < w[1]);
        ok(&self.t) && ok(&self.s)
    }
}

/// Chart of each cell `□_ab`, stored row by row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartAssignment {
    pub n_t: usize,
    pub charts: Vec<usize>,
}

impl ChartAssignment {
    pub fn get(&self, a: usize, b: usize) -> usize {
        self.charts[b * self.n_t + a]
    }

    pub fn set(&mut self, a: usize, b: usize, chart: usize) {
        self.charts[b * self.n_t + a] = chart;
    }

    pub fn n_s(&self) -> usize {
        self.charts.len() / self.n_t
    }

    /// The assignment on [`Mesh::refined`]: children inherit their parent's chart.
    pub fn refined(&self) -> ChartAssignment {
        let n_t = 2 * self.n_t;
        let charts = (0..2 * self.n_s()).flat_map(|b| (0..n_t).map(move |a| (a, b))).map(|(a, b)| self.get(a / 2, b / 2)).collect();
        ChartAssignment { n_t, charts }
    }

    /// `c(a, 0) = c(a, M−1)` for every column.
    pub fn rows_match(&self) -> bool {
        let m = self.n_s();
        (0..self.n_t).all(|a| self.get(a, 0) == self.get(a, m - 1))
    }
}

fn cell_samples(gamma: &SurfaceLoop, rect: Rect) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..=CELL_SAMPLES).flat_map(move |i| {
        (0..=CELL_SAMPLES).map(move |j| {
            let (x, y) = (i as f64 / CELL_SAMPLES as f64, j as f64 / CELL_SAMPLES as f64);
            gamma.point(rect.t0 + x * rect.width(), rect.s0 + y * rect.height())
        })
    })
}

/// Whether every sampled point of `γ(rect)` lies in the chart.
pub fn cell_in_chart(gamma: &SurfaceLoop, atlas: &Atlas, rect: Rect, chart: usize) -> bool {
    cell_samples(gamma, rect).all(|p| atlas.contains(chart, &p))
}

fn candidates(gamma: &SurfaceLoop, atlas: &Atlas, rect: Rect) -> Vec<usize> {
    (0..atlas.len()).filter(|&i| cell_in_chart(gamma, atlas, rect, i)).collect()
}

/// A uniform mesh, doubled until every cell lies in a chart, with the lowest admissible chart
/// per cell; cells of the first and last rows share their chart column by column.
pub fn build_mesh(gamma: &SurfaceLoop, atlas: &Atlas, initial: (usize, usize), max_refinements: usize) -> Result<(Mesh, ChartAssignment)> {
    let mut mesh = Mesh::uniform(initial.0, initial.1);
    let mut failed = (0, 0);
    for _ in 0..=max_refinements {
        let (n, m) = (mesh.n_t(), mesh.n_s());
        let cands: Vec<Vec<usize>> =
            (0..m).flat_map(|b| (0..n).map(move |a| (a, b))).map(|(a, b)| candidates(gamma, atlas, mesh.rect(a, b))).collect();
        let mut charts = Vec::with_capacity(n * m);
        let mut ok = true;
        'cells: for b in 0..m {
            for a in 0..n {
                let own = &cands[b * n + a];
                let pick = if b == 0 || b == m - 1 {
                    let other = &cands[if b == 0 { (m - 1) * n + a } else { a }];
                    own.iter().copied().find(|c| other.contains(c))
                } else {
                    own.first().copied()
                };
                match pick {
                    Some(c) => charts.push(c),
                    None => {
                        failed = (a, b);
                        ok = false;
                        break 'cells;
                    }
                }
            }
        }
        if ok {
            return Ok((mesh, ChartAssignment { n_t: n, charts }));
        }
        mesh = mesh.refined();
    }
    Err(Error::Uncoverable { a: failed.0, b: failed.1, refinements: max_refinements })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    /// Rows from the top, cells right to left within a row.
    RowMajor,
    /// Columns from the right, cells top to bottom within a column.
    ColumnMajor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlueOptions {
    pub order: SweepOrder,
    /// Largest accepted `‖target − frontier‖ / (1 + ‖frontier‖)` after any cell.
    pub tolerance: f64,
}

impl Default for GlueOptions {
    fn default() -> Self {
        GlueOptions { order: SweepOrder::RowMajor, tolerance: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct GlobalHolonomy {
    /// `(source 1-holonomy, Hol_γ)`
    pub arrow: WreathElement,
    pub target: Mat,
    pub invariant: Vec<Complex64>,
    pub mesh: Mesh,
    pub assignment: ChartAssignment,
    pub spec: StepSpec,
    pub order: SweepOrder,
    /// Worst accumulated composability mismatch over the sweep.
    pub mismatch: f64,
    /// `‖α(Hol⁻¹)·source − target‖`
    pub target_residual: f64,
    pub sphere: bool,
}

impl GlobalHolonomy {
    pub fn hol(&self) -> &Mat {
        &self.arrow.h
    }

    pub fn source(&self) -> &Mat {
        &self.arrow.g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Edge {
    /// Along `s = s_b` from `t_a` to `t_{a+1}`.
    H(usize, usize),
    /// Along `t = t_a` from `s_b` to `s_{b+1}`.
    V(usize, usize),
}

#[derive(Clone, Debug)]
struct Seg {
    edge: Edge,
    chart: usize,
    f: Mat,
}

struct Sweep<'a> {
    gamma: &'a SurfaceLoop,
    bundle: &'a BundleData,
    mesh: &'a Mesh,
    spec: StepSpec,
    segs: Vec<Seg>,
    tail: usize,
    h: Mat,
    w0: Mat,
    mismatch: f64,
    tolerance: f64,
}

impl<'a> Sweep<'a> {
    fn cm(&self) -> &'a dyn CrossedModule {
        self.bundle.cm.as_ref()
    }

    fn path(&self, edge: Edge, chart: usize) -> ParamPath {
        let (m, g) = (self.mesh, &self.gamma.map);
        match edge {
            Edge::H(a, b) => g.row(m.s[b], m.t[a], m.t[a + 1]).in_chart(chart),
            Edge::V(a, b) => g.column(m.t[a], m.s[b], m.s[b + 1]).in_chart(chart),
        }
    }

    fn end(&self, edge: Edge) -> Vec<f64> {
        let m = self.mesh;
        match edge {
            Edge::H(a, b) => self.gamma.point(m.t[a + 1], m.s[b]),
            Edge::V(a, b) => self.gamma.point(m.t[a], m.s[b + 1]),
        }
    }

    fn g(&self, i: usize, j: usize, p: &[f64]) -> Result<Mat> {
        Ok(self.bundle.g(i, j)?.eval(p))
    }

    fn next_chart(&self, r: usize) -> usize {
        self.segs.get(r + 1).map_or(self.tail, |s| s.chart)
    }

    /// `F₀ g₀₁ F₁ ⋯ F_{r−1}`
    fn prefix(&self, r: usize) -> Result<Mat> {
        let mut w = self.cm().unit_g();
        for (q, seg) in self.segs[..r].iter().enumerate() {
            if q > 0 {
                w *= self.g(self.segs[q - 1].chart, seg.chart, &self.end(self.segs[q - 1].edge))?;
            }
            w *= &seg.f;
        }
        Ok(w)
    }

    fn word(&self) -> Result<Mat> {
        let r = self.segs.len();
        let last = &self.segs[r - 1];
        Ok(self.prefix(r)? * self.g(last.chart, self.tail, &self.end(last.edge))?)
    }

    fn apply(&mut self, whisker: &Mat, h: &Mat) {
        self.h = &self.h * self.cm().act(whisker, h);
    }

    /// Rewrites edge `r` from its chart `i` into chart `k`: `g_pi ⇒ g_pk g_ki` at its start,
    /// `g_ki F_i ⇒ F_k g_ki` along it, and `g_ki g_ij ⇒ g_kj` at its end.
    fn rechart(&mut self, r: usize, k: usize) -> Result<()> {
        let i = self.segs[r].chart;
        if i == k {
            return Ok(());
        }
        let cm = self.cm();
        let edge = self.segs[r].edge;
        let path = self.path(edge, k);
        let start = path.point(path.a);
        let mut lead = self.prefix(r)?;
        if r > 0 {
            let p = self.segs[r - 1].chart;
            let fill = self.bundle.f(p, k, i)?.eval(&start);
            self.apply(&lead, &inverse(&fill)?);
            lead *= self.g(p, k, &start)?;
        } else {
            return Err(Error::Precondition("the first frontier edge cannot change chart".into()));
        }
        let a_k = &self.bundle.connection(k)?.a;
        let psi = transition_psi(a_k, &self.bundle.g(k, i)?, &self.bundle.a(k, i)?, &path, self.spec, cm)?;
        self.apply(&lead, &inverse(&psi.h)?);
        let f_k = holonomy1(a_k, &path, self.spec, cm)?.endpoint;
        lead *= &f_k;
        self.segs[r] = Seg { edge, chart: k, f: f_k };
        let j = self.next_chart(r);
        let fill = self.bundle.f(k, i, j)?.eval(&self.end(edge));
        self.apply(&lead, &fill);
        Ok(())
    }

    fn cell(&mut self, a: usize, b: usize, hol: &LocalTwoHolonomy) -> Result<()> {
        let r = self
            .segs
            .iter()
            .position(|s| s.edge == Edge::H(a, b))
            .filter(|&r| self.segs.get(r + 1).is_some_and(|s| s.edge == Edge::V(a + 1, b)))
            .ok_or_else(|| Error::Precondition(format!("cell ({a},{b}) is not at a frontier corner")))?;
        let k = hol.patch.chart;
        self.rechart(r, k)?;
        self.rechart(r + 1, k)?;
        let mut lead = self.prefix(r)?;
        if r > 0 {
            lead *= self.g(self.segs[r - 1].chart, k, &self.gamma.point(self.mesh.t[a], self.mesh.s[b]))?;
        }
        self.apply(&lead, hol.h());
        self.segs[r] = Seg { edge: Edge::V(a, b), chart: k, f: hol.left.clone() };
        self.segs[r + 1] = Seg { edge: Edge::H(a, b + 1), chart: k, f: hol.bottom.clone() };

        let cm = self.cm();
        let w = self.word()?;
        let mismatch = distance(&(cm.alpha(&inverse(&self.h)?) * &self.w0), &w) / (1.0 + norm(&w));
        self.mismatch = self.mismatch.max(mismatch);
        if !(mismatch <= self.tolerance) {
            return Err(Error::Composability { context: format!("cell ({a},{b})"), mismatch });
        }
        Ok(())
    }
}

/// Contracts the closed chain `g_{i₁i₂}(x) g_{i₂i₃}(x) ⋯ g_{i_N i₁}(x)` to `1` with the fillers
/// `f_{i₁ i_m i_{m+1}}(x)`, returning the H part of the contraction.
fn chain_contraction(bundle: &BundleData, charts: &[usize], x: &[f64]) -> Result<Mat> {
    let mut h = bundle.cm.unit_h();
    let first = charts[0];
    for m in 1..charts.len() {
        let next = charts.get(m + 1).copied().unwrap_or(first);
        h *= bundle.f(first, charts[m], next)?.eval(x);
    }
    Ok(h)
}

/// `Hol_γ` glued in the default row-major order.
pub fn glue(gamma: &SurfaceLoop, bundle: &BundleData, mesh: &Mesh, assignment: &ChartAssignment, spec: StepSpec) -> Result<GlobalHolonomy> {
    glue_with(gamma, bundle, mesh, assignment, spec, GlueOptions::default())
}

pub fn glue_with(
    gamma: &SurfaceLoop,
    bundle: &BundleData,
    mesh: &Mesh,
    assignment: &ChartAssignment,
    spec: StepSpec,
    options: GlueOptions,
) -> Result<GlobalHolonomy> {
    let cm = bundle.cm.as_ref();
    let (n, m) = (mesh.n_t(), mesh.n_s());
    if !mesh.is_valid() || assignment.n_t != n || assignment.n_s() != m {
        return Err(Error::Precondition("mesh and chart assignment do not match".into()));
    }
    if !assignment.rows_match() {
        return Err(Error::Precondition("first and last rows must use the same charts".into()));
    }
    let cells = par_map(n * m, |q| {
        let (a, b) = (q % n, q / n);
        let chart = assignment.get(a, b);
        let patch = SurfacePatch::new(gamma.map.clone(), mesh.rect(a, b), chart);
        local_2_holonomy(bundle.connection(chart)?, &patch, spec, cm)
    })?;

    let mut sweep = Sweep {
        gamma,
        bundle,
        mesh,
        spec,
        segs: Vec::with_capacity(n + m),
        tail: assignment.get(0, m - 1),
        h: cm.unit_h(),
        w0: cm.unit_g(),
        mismatch: 0.0,
        tolerance: options.tolerance,
    };
    for a in 0..n {
        sweep.segs.push(Seg { edge: Edge::H(a, 0), chart: assignment.get(a, 0), f: cells[a].top.clone() });
    }
    for b in 0..m {
        let chart = assignment.get(0, b);
        let path = sweep.path(Edge::V(n, b), chart);
        let f = holonomy1(&bundle.connection(chart)?.a, &path, spec, cm)?.endpoint;
        sweep.segs.push(Seg { edge: Edge::V(n, b), chart, f });
    }
    sweep.w0 = sweep.word()?;

    let order: Vec<(usize, usize)> = match options.order {
        SweepOrder::RowMajor => (0..m).flat_map(|b| (0..n).rev().map(move |a| (a, b))).collect(),
        SweepOrder::ColumnMajor => (0..n).rev().flat_map(|a| (0..m).map(move |b| (a, b))).collect(),
    };
    for (a, b) in order {
        sweep.cell(a, b, &cells[b * n + a])?;
    }

    let mut source = sweep.w0.clone();
    let mut target = sweep.word()?;
    let mut h = sweep.h.clone();
    if gamma.sphere {
        let top: Vec<usize> = (0..n).map(|a| assignment.get(a, 0)).collect();
        let x0 = gamma.point(0.0, 0.0);
        let x1 = gamma.point(0.0, 1.0);
        let upper = sweep.prefix(0)?;
        let mut chain_top = upper.clone();
        let mut chain_bottom = upper;
        for a in 0..n {
            let next = top.get(a + 1).copied().unwrap_or(top[0]);
            chain_top *= sweep.g(top[a], next, &x0)?;
            chain_bottom *= sweep.g(top[a], next, &x1)?;
        }
        let phi_top = chain_contraction(bundle, &top, &x0)?;
        let phi_bottom = chain_contraction(bundle, &top, &x1)?;
        source = inverse(&chain_top)? * &source;
        target = &target * inverse(&chain_bottom)?;
        h = inverse(&phi_top)? * h * cm.act(&target, &phi_bottom);
    }
    let target_residual = distance(&(cm.alpha(&inverse(&h)?) * &source), &target);
    Ok(GlobalHolonomy {
        invariant: cm.quotient_invariant(&h),
        arrow: WreathElement::new(source, h),
        target,
        mesh: mesh.clone(),
        assignment: assignment.clone(),
        spec,
        order: options.order,
        mismatch: sweep.mismatch,
        target_residual,
        sphere: gamma.sphere,
    })
}

/// Meshes from an `n × n` grid and glues.
pub fn global_holonomy(gamma: &SurfaceLoop, bundle: &BundleData, n: usize, spec: StepSpec) -> Result<GlobalHolonomy> {
    let (mesh, assignment) = build_mesh(gamma, &bundle.atlas, (n, n), 4)?;
    glue(gamma, bundle, &mesh, &assignment, spec)
}

/// Norm of the difference of the class invariants of `h1` and `h2` in `H/[G,H]`.
pub fn class_distance(h1: &Mat, h2: &Mat, cm: &dyn CrossedModule) -> f64 {
    cm.quotient_invariant(h1).iter().zip(cm.quotient_invariant(h2)).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
}

/// `h1 ∼ h2` in `H/[G,H]` within `tolerance`.
pub fn equivalent_mod_gh(h1: &Mat, h2: &Mat, cm: &dyn CrossedModule, tolerance: f64) -> bool {
    class_distance(h1, h2, cm) <= tolerance
}

/// Class distance between `Hol_γ` on the mesh and on its refinement with inherited charts.
pub fn invariance_under_refinement(
    gamma: &SurfaceLoop,
    bundle: &BundleData,
    mesh: &Mesh,
    assignment: &ChartAssignment,
    spec: StepSpec,
) -> Result<f64> {
    let coarse = glue(gamma, bundle, mesh, assignment, spec)?;
    let fine = glue(gamma, bundle, &mesh.refined(), &assignment.refined(), spec)?;
    Ok(class_distance(coarse.hol(), fine.hol(), bundle.cm.as_ref()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reassignment {
    pub class_distance: f64,
    /// `‖Hol − Hol'‖` of the raw H elements.
    pub raw_distance: f64,
}

/// Compares `Hol_γ` before and after moving one cell to another chart. A cell of the first
/// or last row moves together with its partner in the other of those rows.
pub fn invariance_under_reassignment(
    gamma: &SurfaceLoop,
    bundle: &BundleData,
    mesh: &Mesh,
    assignment: &ChartAssignment,
    (a, b): (usize, usize),
    chart: usize,
    spec: StepSpec,
) -> Result<Reassignment> {
    let m = mesh.n_s();
    let mut cells = vec![(a, b)];
    if b == 0 || b == m - 1 {
        cells.push((a, if b == 0 { m - 1 } else { 0 }));
    }
    let mut moved = assignment.clone();
    for &(x, y) in &cells {
        if !cell_in_chart(gamma, &bundle.atlas, mesh.rect(x, y), chart) {
            return Err(Error::Precondition(format!("cell ({x},{y}) does not lie in chart {chart}")));
        }
        moved.set(x, y, chart);
    }
    let before = glue(gamma, bundle, mesh, assignment, spec)?;
    let after = glue(gamma, bundle, mesh, &moved, spec)?;
    Ok(Reassignment {
        class_distance: class_distance(before.hol(), after.hol(), bundle.cm.as_ref()),
        raw_distance: distance(before.hol(), after.hol()),
    })
}

/// Checks that `Ξ(t', s') = (α(t', s'), β(s'))` preserves the square with `∂α/∂t' > 0` and
/// `β' > 0` at interior samples.
pub fn check_reparametrization(xi: &dyn Fn(f64, f64) -> (f64, f64), n: usize) -> Result<()> {
    let e = 1e-6;
    let fail = |what: &str| Err(Error::Precondition(format!("reparametrization {what}")));
    for k in 0..=n {
        let x = k as f64 / n as f64;
        let (l, r, t, b) = (xi(0.0, x), xi(1.0, x), xi(x, 0.0), xi(x, 1.0));
        if l.0.abs() > 1e-12 || (r.0 - 1.0).abs() > 1e-12 || t.1.abs() > 1e-12 || (b.1 - 1.0).abs() > 1e-12 {
            return fail("does not map the boundary of the square to itself");
        }
    }
    for i in 0..n {
        for j in 0..n {
            let (t, s) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            let dt = (xi(t + e, s).0 - xi(t - e, s).0) / (2.0 * e);
            let ds = (xi(t, s + e).1 - xi(t, s - e).1) / (2.0 * e);
            let cross = (xi(t + e, s).1 - xi(t - e, s).1) / (2.0 * e);
            if !(dt > 0.0) || !(ds > 0.0) {
                return fail("is not orientation preserving");
            }
            if cross.abs() > 1e-8 {
                return fail("mixes t' into the s coordinate");
            }
        }
    }
    Ok(())
}

const CLOSURE_TOLERANCE: f64 = 1e-9;

/// Class distance between `Hol(γ)` and `Hol(γ∘Ξ)`, each on its own mesh from an `n × n` grid.
pub fn reparametrization_residual(
    gamma: &SurfaceLoop,
    xi: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static,
    bundle: &BundleData,
    n: usize,
    spec: StepSpec,
) -> Result<f64> {
    check_reparametrization(&xi, 32)?;
    let moved_loop = gamma.reparametrized(xi);
    if moved_loop.closure_residual(64) > CLOSURE_TOLERANCE + gamma.closure_residual(64) {
        return Err(Error::Precondition("reparametrized surface is no longer a loop of loops".into()));
    }
    let original = global_holonomy(gamma, bundle, n, spec)?;
    let moved = global_holonomy(&moved_loop, bundle, n, spec)?;
    Ok(class_distance(original.hol(), moved.hol(), bundle.cm.as_ref()))
}

/// `‖α(Hol_γ) − 1‖`
pub fn sphere_kernel_check(hol: &GlobalHolonomy, cm: &dyn CrossedModule) -> f64 {
    unit_distance(&cm.alpha(hol.hol()))
}
