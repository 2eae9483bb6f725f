//! Atlases, nonabelian 2-cocycles `(g_ij, f_ijk)`, connection gluing data `a_ij`, their
//! verifiers, and synthesis of consistent test bundles.
//!
//! Degenerate indices are normalized: `g_ii = 1`, `a_ii = 0`, and `f_ijk = 1` whenever
//! two indices coincide.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{AbelianGerbe, Inner, TwoArrow};
use crate::connection::{apply_gauge, Form1, Form2, GaugeTransformation, GroupField, LocalConnection, Module};
use crate::error::{Error, Result};
use crate::global_holonomy::SurfaceLoop;
use crate::numerics::{c, distance, inverse, norm, real, scalar, zeros, Mat, Rect};
use crate::path_transport::SurfaceMap;
use crate::report::Residuals;

/// Step used when a gauge or twist lacks an analytic derivative.
pub const SYNTHESIS_FD: f64 = 1e-5;

const MAX_DRAWS_PER_SAMPLE: usize = 200;

type Pred = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
type Sampler = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct Chart {
    pub name: String,
    contains: Pred,
}

/// Charts as membership predicates on a common ambient space, with a point sampler used
/// by the verifiers.
#[derive(Clone)]
pub struct Atlas {
    charts: Vec<Chart>,
    sampler: Sampler,
}

impl fmt::Debug for Atlas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.charts.iter().map(|c| &c.name)).finish()
    }
}

impl Atlas {
    /// An empty atlas sampling uniformly from the box `bounds`.
    pub fn in_box(bounds: Vec<(f64, f64)>) -> Self {
        Atlas { charts: Vec::new(), sampler: Arc::new(move |rng| bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()) }
    }

    pub fn with_sampler(mut self, sampler: impl Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.sampler = Arc::new(sampler);
        self
    }

    pub fn with_chart(mut self, name: &str, contains: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.charts.push(Chart { name: name.into(), contains: Arc::new(contains) });
        self
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.charts[i].name
    }

    pub fn contains(&self, i: usize, p: &[f64]) -> bool {
        self.charts.get(i).is_some_and(|c| (c.contains)(p))
    }

    pub fn in_overlap(&self, ids: &[usize], p: &[f64]) -> bool {
        ids.iter().all(|&i| self.contains(i, p))
    }

    pub fn charts_at(&self, p: &[f64]) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.contains(i, p)).collect()
    }

    /// Up to `count` sampled points of `⋂ U_i`; fewer when the overlap is rarely hit.
    pub fn sample_overlap(&self, ids: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count * MAX_DRAWS_PER_SAMPLE {
            if out.len() == count {
                break;
            }
            let p = (self.sampler)(rng);
            if self.in_overlap(ids, &p) {
                out.push(p);
            }
        }
        out
    }

    fn predicate(&self, i: usize) -> Pred {
        self.charts[i].contains.clone()
    }
}

/// The 2-cocycle: `g_ij` on double and `f_ijk` on triple overlaps.
#[derive(Clone, Debug, Default)]
pub struct Cocycle {
    pub g: BTreeMap<(usize, usize), GroupField>,
    pub f: BTreeMap<(usize, usize, usize), GroupField>,
}

#[derive(Clone, Debug)]
pub struct BundleData {
    pub cm: Module,
    pub atlas: Atlas,
    pub connections: Vec<LocalConnection>,
    pub cocycle: Cocycle,
    pub a: BTreeMap<(usize, usize), Form1>,
}

impl BundleData {
    pub fn connection(&self, i: usize) -> Result<&LocalConnection> {
        self.connections.get(i).ok_or_else(|| Error::Precondition(format!("no connection on chart {i}")))
    }

    pub fn g(&self, i: usize, j: usize) -> Result<GroupField> {
        if i == j {
            return Ok(GroupField::constant(self.cm.unit_g()));
        }
        self.cocycle.g.get(&(i, j)).cloned().ok_or_else(|| Error::Precondition(format!("no g for ({i},{j})")))
    }

    pub fn f(&self, i: usize, j: usize, k: usize) -> Result<GroupField> {
        if i == j || j == k || i == k {
            return Ok(GroupField::constant(self.cm.unit_h()));
        }
        match self.cocycle.f.get(&(i, j, k)) {
            Some(f) => Ok(f.clone()),
            None if self.cm.alpha_is_trivial() => Ok(GroupField::constant(self.cm.unit_h())),
            None => Err(Error::Precondition(format!("no f for ({i},{j},{k})"))),
        }
    }

    pub fn a(&self, i: usize, j: usize) -> Result<Form1> {
        if i == j {
            return Ok(Form1::zero(self.cm.dim_h()));
        }
        self.a.get(&(i, j)).cloned().ok_or_else(|| Error::Precondition(format!("no a for ({i},{j})")))
    }

    /// The transition `(g_ij, a_ij)` as a gauge transformation.
    pub fn transition(&self, i: usize, j: usize) -> Result<GaugeTransformation> {
        Ok(GaugeTransformation::new(self.g(i, j)?, self.a(i, j)?))
    }
}

fn tuples(n: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out.into_iter().flat_map(|t| (0..n).map(move |i| [t.clone(), vec![i]].concat())).collect();
    }
    out
}

fn distinct(ids: &[usize]) -> Vec<usize> {
    let mut d = ids.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

/// Worst residuals of `α(f_ijk⁻¹) g_ij g_jk = g_ik`, of the 4-index cocycle identity and of
/// its rearranged form, over sampled overlap points and all index tuples.
pub fn verify_cocycle(b: &BundleData, samples: usize, seed: u64) -> Result<Residuals> {
    let cm = b.cm.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Residuals::default();
    r.record("g cocycle", "alpha(f_ijk^-1) g_ij g_jk = g_ik", 0.0);
    r.record("f cocycle", "(g_ij |> f_jkl) f_ijl = f_ijk f_ikl", 0.0);
    r.record("rearranged tetrahedron", "f_lkj f_lij^-1 = f_lik^-1 (g_li |> f_ikj)", 0.0);
    let n = b.atlas.len();
    for t in tuples(n, 3) {
        let (i, j, k) = (t[0], t[1], t[2]);
        let (gij, gjk, gik, f) = (b.g(i, j)?, b.g(j, k)?, b.g(i, k)?, b.f(i, j, k)?);
        for p in b.atlas.sample_overlap(&distinct(&t), samples, &mut rng) {
            let lhs = cm.alpha(&inverse(&f.eval(&p))?) * gij.eval(&p) * gjk.eval(&p);
            r.record("g cocycle", "", distance(&lhs, &gik.eval(&p)));
        }
    }
    for t in tuples(n, 4) {
        let (i, j, k, l) = (t[0], t[1], t[2], t[3]);
        let pts = b.atlas.sample_overlap(&distinct(&t), samples, &mut rng);
        if pts.is_empty() {
            continue;
        }
        let (gij, gli) = (b.g(i, j)?, b.g(l, i)?);
        let (fjkl, fijl, fijk, fikl) = (b.f(j, k, l)?, b.f(i, j, l)?, b.f(i, j, k)?, b.f(i, k, l)?);
        let (flkj, flij, flik, fikj) = (b.f(l, k, j)?, b.f(l, i, j)?, b.f(l, i, k)?, b.f(i, k, j)?);
        for p in pts {
            let lhs = cm.act(&gij.eval(&p), &fjkl.eval(&p)) * fijl.eval(&p);
            r.record("f cocycle", "", distance(&lhs, &(fijk.eval(&p) * fikl.eval(&p))));
            let lhs = flkj.eval(&p) * inverse(&flij.eval(&p))?;
            let rhs = inverse(&flik.eval(&p))? * cm.act(&gli.eval(&p), &fikj.eval(&p));
            r.record("rearranged tetrahedron", "", distance(&lhs, &rhs));
        }
    }
    Ok(r)
}

/// Worst residuals of the gauge relations between neighbouring local connections and of
/// `a_ij + g_ij ▷ a_jk = f a_ik f⁻¹ + (A_i ▷ f) f⁻¹ + df f⁻¹` along random directions.
pub fn verify_compatibility(b: &BundleData, samples: usize, seed: u64, fd: Option<f64>) -> Result<Residuals> {
    let cm = b.cm.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Residuals::default();
    let (anchor_a, anchor_b, anchor_c) = (
        "A_j = Ad(g_ij^-1)(A_i - alpha(a_ij) + dg_ij g_ij^-1)",
        "B_j = g_ij^-1 |> (B_i - da_ij - A_i |> a_ij + a_ij ^ a_ij)",
        "a_ij + g_ij |> a_jk = f a_ik f^-1 + (A_i |> f) f^-1 + df f^-1",
    );
    let n = b.atlas.len();
    let mut finite = false;
    r.record("gauge relation A", anchor_a, 0.0);
    r.record("gauge relation B", anchor_b, 0.0);
    r.record("connection compatibility", anchor_c, 0.0);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let pts = b.atlas.sample_overlap(&[i, j], samples, &mut rng);
            if pts.is_empty() {
                continue;
            }
            let gt = b.transition(i, j)?;
            finite |= !(gt.g.has_derivative() && gt.phi.has_derivative() && b.connection(i)?.b.has_derivative());
            let gauged = apply_gauge(b.connection(i)?, &gt, &b.cm, fd)?;
            let target = b.connection(j)?;
            for p in pts {
                let (u, v) = (random_direction(&mut rng, p.len()), random_direction(&mut rng, p.len()));
                r.push("gauge relation A", anchor_a, distance(&gauged.a.eval(&p, &u), &target.a.eval(&p, &u)), finite);
                let db = distance(&gauged.b.eval(&p, &u, &v), &target.b.eval(&p, &u, &v));
                r.push("gauge relation B", anchor_b, db, finite);
            }
        }
    }
    for t in tuples(n, 3) {
        let (i, j, k) = (t[0], t[1], t[2]);
        let pts = b.atlas.sample_overlap(&distinct(&t), samples, &mut rng);
        if pts.is_empty() {
            continue;
        }
        let (aij, ajk, aik, gij, f) = (b.a(i, j)?, b.a(j, k)?, b.a(i, k)?, b.g(i, j)?, b.f(i, j, k)?);
        let ai = &b.connection(i)?.a;
        finite |= !f.has_derivative();
        for p in pts {
            let v = random_direction(&mut rng, p.len());
            let (fp, fi) = (f.eval(&p), inverse(&f.eval(&p))?);
            let lhs = aij.eval(&p, &v) + cm.act_lie_h(&gij.eval(&p), &ajk.eval(&p, &v));
            let rhs = &fp * aik.eval(&p, &v) * &fi + cm.act_on_group(&ai.eval(&p, &v), &fp) * &fi + f.derivative(&p, &v, fd)? * &fi;
            r.push("connection compatibility", anchor_c, distance(&lhs, &rhs), finite);
        }
    }
    Ok(r)
}

/// Both composites of the tetrahedron at `p ∈ U_i ∩ U_j ∩ U_k ∩ U_l`:
/// `(g_ij g_jk g_kl, g_ij ▷ f_jkl) #₁ (g_ij g_jl, f_ijl)` and
/// `(g_ij g_jk g_kl, f_ijk) #₁ (g_ik g_kl, f_ikl)`.
pub fn tetrahedron_two_arrow(b: &BundleData, (i, j, k, l): (usize, usize, usize, usize), p: &[f64]) -> Result<(TwoArrow, TwoArrow)> {
    if !b.atlas.in_overlap(&[i, j, k, l], p) {
        return Err(Error::Precondition(format!("point outside the overlap of ({i},{j},{k},{l})")));
    }
    let cm = b.cm.as_ref();
    let g = |x: usize, y: usize| b.g(x, y).map(|g| g.eval(p));
    let f = |x: usize, y: usize, z: usize| b.f(x, y, z).map(|f| f.eval(p));
    let source = g(i, j)? * g(j, k)? * g(k, l)?;
    let left = TwoArrow::new(source.clone(), cm.act(&g(i, j)?, &f(j, k, l)?) * f(i, j, l)?);
    let right = TwoArrow::new(source, f(i, j, k)? * f(i, k, l)?);
    Ok((left, right))
}

/// `(A_i ▷ η) η⁻¹ + dη η⁻¹ + η a η⁻¹`: the gluing form after twisting `(g, a)` by `η`.
fn twisted_form(a_i: &Form1, eta: &GroupField, a: &Form1, cm: &Module) -> Result<Form1> {
    let deta = eta.right_log_derivative(Some(SYNTHESIS_FD))?;
    let (a_i, eta, a, cm) = (a_i.clone(), eta.clone(), a.clone(), cm.clone());
    Ok(Form1::new(move |p, v| {
        let h = eta.eval(p);
        let hi = inverse(&h).expect("invertible");
        cm.act_on_group(&a_i.eval(p, v), &h) * &hi + deta.eval(p, v) + &h * a.eval(p, v) * &hi
    }))
}

/// Builds a consistent bundle: chart `i` carries the gauge transform of `global` by
/// `gauges[i]`, and transitions compose the gauges. See [`synthesize_twisted_bundle`].
pub fn synthesize_bundle(cm: Module, atlas: Atlas, global: &LocalConnection, gauges: &[GaugeTransformation]) -> Result<BundleData> {
    synthesize_twisted_bundle(cm, atlas, global, gauges, &BTreeMap::new())
}

/// As [`synthesize_bundle`], with transitions `(i, j)`, `i < j`, twisted by H-valued
/// fields `η_ij`: `g_ij ↦ α(η_ij) g_ij`, which makes
/// `f_ijk = η_ij (g_ij ▷ η_jk) η_ik⁻¹` with `η_ji = g_ji ▷ η_ij⁻¹`.
pub fn synthesize_twisted_bundle(
    cm: Module,
    atlas: Atlas,
    global: &LocalConnection,
    gauges: &[GaugeTransformation],
    twists: &BTreeMap<(usize, usize), GroupField>,
) -> Result<BundleData> {
    let n = atlas.len();
    if gauges.len() != n {
        return Err(Error::Precondition(format!("{} gauges for {n} charts", gauges.len())));
    }
    if let Some(&(i, j)) = twists.keys().find(|&&(i, j)| i >= j || j >= n) {
        return Err(Error::Precondition(format!("twist index ({i},{j}) must satisfy i < j < {n}")));
    }
    let connections = (0..n)
        .map(|i| {
            let conn = apply_gauge(global, &gauges[i], &cm, Some(SYNTHESIS_FD))?;
            let pred = atlas.predicate(i);
            Ok(LocalConnection::new(conn.a.with_domain(move |p| pred(p)), conn.b, i))
        })
        .collect::<Result<Vec<_>>>()?;

    let plain = |i: usize, j: usize| gauges[i].inverse(&cm).then(&gauges[j], &cm);
    let mut transitions = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let t = match twists.get(&(i, j)) {
                None => plain(i, j),
                Some(eta) => {
                    let t = plain(i, j);
                    let phi = twisted_form(&connections[i].a, eta, &t.phi, &cm)?;
                    GaugeTransformation::new(eta.alpha(&cm).product(&t.g), phi)
                }
            };
            transitions.insert((j, i), t.inverse(&cm));
            transitions.insert((i, j), t);
        }
    }

    let eta = |i: usize, j: usize| -> Option<GroupField> {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Less => twists.get(&(i, j)).cloned(),
            std::cmp::Ordering::Greater => twists.get(&(j, i)).map(|e| GroupField::act(&plain(i, j).g, &e.inverse(), &cm)),
        }
    };
    let mut cocycle = Cocycle::default();
    for (&(i, j), t) in &transitions {
        cocycle.g.insert((i, j), t.g.clone());
    }
    for t in tuples(n, 3) {
        let (i, j, k) = (t[0], t[1], t[2]);
        if distinct(&t).len() < 3 {
            continue;
        }
        let mut f = GroupField::constant(cm.unit_h());
        if let Some(e) = eta(i, j) {
            f = e;
        }
        if let Some(e) = eta(j, k) {
            f = f.product(&GroupField::act(&plain(i, j).g, &e, &cm));
        }
        if let Some(e) = eta(i, k) {
            f = f.product(&e.inverse());
        }
        cocycle.f.insert((i, j, k), f);
    }
    let a = transitions.into_iter().map(|(key, t)| (key, t.phi)).collect();
    Ok(BundleData { cm, atlas, connections, cocycle, a })
}

// Scenarios shared by the tests, the acceptance suite and the command line.

/// `(t, s) ↦ ` the circle of angular radius `πs` through the north pole, traversed from the
/// pole at angle `2πt`. The whole boundary of the square maps to the pole.
pub fn sphere_map() -> SurfaceMap {
    SurfaceMap::new(
        |t, s| {
            let (r, th) = (PI * s, 2.0 * PI * t);
            let (sr, cr) = r.sin_cos();
            vec![sr * cr * (1.0 - th.cos()), sr * th.sin(), cr * cr + sr * sr * th.cos()]
        },
        Rect::UNIT,
    )
    .with_jacobian(|t, s| {
        let (r, th) = (PI * s, 2.0 * PI * t);
        let (sr, cr) = r.sin_cos();
        let (s2, c2) = (2.0 * r).sin_cos();
        let (st, ct) = th.sin_cos();
        (vec![PI * s2 * st, 2.0 * PI * sr * ct, -2.0 * PI * sr * sr * st], vec![PI * c2 * (1.0 - ct), PI * cr * st, -PI * s2 * (1.0 - ct)])
    })
}

fn sphere_atlas() -> Atlas {
    Atlas::in_box(vec![(-1.0, 1.0); 3])
        .with_sampler(|rng| {
            let (z, phi): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI));
            let rho = (1.0 - z * z).sqrt();
            vec![rho * phi.cos(), rho * phi.sin(), z]
        })
        .with_chart("north", |p| p[2] > -0.3)
        .with_chart("south", |p| p[2] < 0.3)
}

/// `p·(u × v)`, the area form of the unit sphere extended to the ambient space.
fn area_form(scale: Complex64) -> Form2 {
    Form2::new(move |p, u, v| {
        let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        scalar(scale * (p[0] * cross[0] + p[1] * cross[1] + p[2] * cross[2]))
    })
}

/// Abelian gerbe on `S²` with `B = (i n / 2)·area`, total flux `2πi n`, split into a
/// north chart with trivial gauge and a south chart gauged by `φ = iκ(x dy − y dx)`.
pub fn sphere_two_chart_scenario(n: i32) -> Result<(BundleData, SurfaceLoop)> {
    let kappa = 0.7;
    let cm: Module = Arc::new(AbelianGerbe);
    let global = LocalConnection::new(Form1::zero(1), area_form(Complex64::new(0.0, 0.5 * n as f64)), 0);
    let i = Complex64::new(0.0, kappa);
    let phi = Form1::from_components(move |p| vec![scalar(-i * p[1]), scalar(i * p[0]), zeros(1)]).with_component_jacobian(move |_| {
        let z = zeros(1);
        vec![vec![z.clone(), scalar(i), z.clone()], vec![scalar(-i), z.clone(), z.clone()], vec![z.clone(), z.clone(), z]]
    });
    let gauges = [GaugeTransformation::identity(cm.as_ref()), GaugeTransformation::new(GroupField::constant(cm.unit_g()), phi)];
    let bundle = synthesize_bundle(cm, sphere_atlas(), &global, &gauges)?;
    Ok((bundle, SurfaceLoop::sphere(sphere_map())))
}

/// A smooth `gl(2)`-valued 1-form on `ℝ³` with analytic partials, scaled by `k`.
pub fn gl2_form(k: f64) -> Form1 {
    let x1 = real(&[&[0.3, 1.0], &[-0.2, 0.1]]) * c(k);
    let x2 = real(&[&[0.0, -0.4], &[0.7, -0.3]]) * c(k);
    let x3 = real(&[&[0.5, 0.2], &[0.1, -0.6]]) * c(k);
    let (a1, a2, a3) = (x1.clone(), x2.clone(), x3.clone());
    Form1::from_components(move |p| vec![&a1 * c(p[1].sin()), &a2 * c(p[0] * p[2]), &a3 * c((0.5 * p[0]).cos() + p[1])])
        .with_component_jacobian(move |p| {
            let z = zeros(2);
            vec![
                vec![z.clone(), &x2 * c(p[2]), &x3 * c(-0.5 * (0.5 * p[0]).sin())],
                vec![&x1 * c(p[1].cos()), z.clone(), x3.clone()],
                vec![z.clone(), &x2 * c(p[0]), z.clone()],
            ]
        })
}

/// A smooth gauge transformation `(g, φ)` for `INNER(2)`, varied by `seed`.
pub fn gl2_gauge(seed: f64) -> GaugeTransformation {
    let x = real(&[&[0.1, 0.5 * seed], &[-0.3, 0.2]]);
    let y = real(&[&[0.0, 0.3], &[0.4 * seed, -0.1]]);
    let g = GroupField::exp_scalar(x, move |p| 0.8 * p[0] * p[1] + 0.3 * seed * p[2], move |p| vec![0.8 * p[1], 0.8 * p[0], 0.3 * seed])
        .product(&GroupField::exp_scalar(y, |p| p[2].sin(), |p| vec![0.0, 0.0, p[2].cos()]));
    let (y1, y2) = (real(&[&[0.2, -0.1], &[0.3 * seed, 0.0]]), real(&[&[0.0, 0.4], &[0.1, -0.2]]));
    let (z1, z2) = (y1.clone(), y2.clone());
    let phi = Form1::from_components(move |p| vec![&y1 * c(p[1]), zeros(2), &y2 * c(p[0] * p[0])]).with_component_jacobian(move |p| {
        let z = zeros(2);
        vec![vec![z.clone(), z.clone(), &z2 * c(2.0 * p[0])], vec![z1.clone(), z.clone(), z.clone()], vec![z.clone(), z.clone(), z.clone()]]
    });
    GaugeTransformation::new(g, phi)
}

fn gl2_twist(seed: f64) -> GroupField {
    let y = real(&[&[0.2, -0.5], &[0.3 * seed, 0.1]]);
    GroupField::exp_scalar(y, move |p| 0.6 * p[0] - 0.4 * seed * p[1] * p[2], move |p| vec![0.6, -0.4 * seed * p[2], -0.4 * seed * p[1]])
}

/// Torus `((R + r cos 2πs) cos 2πt, (R + r cos 2πs) sin 2πt, r sin 2πs)`.
pub fn torus_map(big: f64, small: f64) -> SurfaceMap {
    SurfaceMap::new(
        move |t, s| {
            let (th, ph) = (2.0 * PI * t, 2.0 * PI * s);
            let w = big + small * ph.cos();
            vec![w * th.cos(), w * th.sin(), small * ph.sin()]
        },
        Rect::UNIT,
    )
    .with_jacobian(move |t, s| {
        let (th, ph) = (2.0 * PI * t, 2.0 * PI * s);
        let w = big + small * ph.cos();
        let dw = -2.0 * PI * small * ph.sin();
        (vec![-2.0 * PI * w * th.sin(), 2.0 * PI * w * th.cos(), 0.0], vec![dw * th.cos(), dw * th.sin(), 2.0 * PI * small * ph.cos()])
    })
}

pub const TORUS_RADII: (f64, f64) = (0.6, 0.25);

/// `INNER(2)` bundle over an annular region of `ℝ³` with three charts (two half-spaces
/// `x > −0.2`, `x < 0.2` and `y > 0.1`), all gauged and twisted, and a torus loop in it.
pub fn inner_annulus_scenario() -> Result<(BundleData, SurfaceLoop)> {
    let cm: Module = Arc::new(Inner::general(2));
    let (big, small) = TORUS_RADII;
    let torus = torus_map(big, small);
    let sample_torus = torus.clone();
    let atlas = Atlas::in_box(vec![(-1.0, 1.0); 3])
        .with_sampler(move |rng| sample_torus.point(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
        .with_chart("east", |p| p[0] > -0.2)
        .with_chart("west", |p| p[0] < 0.2)
        .with_chart("north", |p| p[1] > 0.1);
    let global = LocalConnection::fake_flat_from(gl2_form(0.5), 0)?;
    let gauges = [GaugeTransformation::identity(cm.as_ref()), gl2_gauge(1.0), gl2_gauge(-0.7)];
    let twists = BTreeMap::from([((0, 1), gl2_twist(1.0)), ((0, 2), gl2_twist(-0.5)), ((1, 2), gl2_twist(0.8))]);
    let bundle = synthesize_twisted_bundle(cm, atlas, &global, &gauges, &twists)?;
    Ok((bundle, SurfaceLoop::new(torus)))
}

/// `INNER(2)` bundle on `S²` with the north/south charts, a gauged south chart and a
/// twisted transition.
pub fn inner_sphere_scenario() -> Result<(BundleData, SurfaceLoop)> {
    let cm: Module = Arc::new(Inner::general(2));
    let global = LocalConnection::fake_flat_from(gl2_form(0.5), 0)?;
    let gauges = [GaugeTransformation::identity(cm.as_ref()), gl2_gauge(0.6)];
    let twists = BTreeMap::from([((0, 1), gl2_twist(1.0))]);
    let bundle = synthesize_twisted_bundle(cm, sphere_atlas(), &global, &gauges, &twists)?;
    Ok((bundle, SurfaceLoop::sphere(sphere_map())))
}

/// Max of `‖γ(t, s)‖ − 1` over a grid; zero for maps onto the unit sphere.
pub fn sphere_radius_residual(map: &SurfaceMap, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..=n {
        for b in 0..=n {
            let p = map.point(a as f64 / n as f64, b as f64 / n as f64);
            worst = worst.max((p.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs());
        }
    }
    worst
}

/// `‖m − 1‖` for an `n × n` matrix.
pub(crate) fn unit_distance(m: &Mat) -> f64 {
    norm(&(m - Mat::identity(m.nrows(), m.ncols())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Trivial;
    use crate::numerics::identity;
    use crate::numerics::StepSpec;
    use crate::path_transport::ParamPath;
    use crate::surface_transport::cylinder_residual;

    fn plane_atlas() -> Atlas {
        Atlas::in_box(vec![(-1.0, 1.0); 3])
            .with_chart("a", |p| p[0] > -0.5)
            .with_chart("b", |p| p[1] > -0.5)
            .with_chart("c", |p| p[0] + p[1] < 0.8)
    }

    fn three_chart_inner() -> BundleData {
        let cm: Module = Arc::new(Inner::general(2));
        let global = LocalConnection::fake_flat_from(gl2_form(0.8), 0).unwrap();
        let gauges = [gl2_gauge(0.3), gl2_gauge(1.0), gl2_gauge(-0.7)];
        let twists = BTreeMap::from([((0, 1), gl2_twist(1.0)), ((0, 2), gl2_twist(-0.5)), ((1, 2), gl2_twist(0.8))]);
        synthesize_twisted_bundle(cm, plane_atlas(), &global, &gauges, &twists).unwrap()
    }

    fn trivial_bundle() -> BundleData {
        let cm: Module = Arc::new(Inner::general(2));
        let global = LocalConnection::zero(cm.as_ref());
        let gauges = vec![GaugeTransformation::identity(cm.as_ref()); 3];
        synthesize_bundle(cm, plane_atlas(), &global, &gauges).unwrap()
    }

    #[test]
    fn atlas_overlaps() {
        let atlas = plane_atlas();
        assert_eq!(atlas.charts_at(&[0.0, 0.0, 0.0]), vec![0, 1, 2]);
        assert_eq!(atlas.charts_at(&[-0.9, 0.9, 0.0]), vec![1, 2]);
        assert_eq!(atlas.charts_at(&[-0.9, -0.9, 0.0]), vec![2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = atlas.sample_overlap(&[0, 1, 2], 20, &mut rng);
        assert_eq!(pts.len(), 20);
        assert!(pts.iter().all(|p| atlas.in_overlap(&[0, 1, 2], p)));
    }

    #[test]
    fn trivial_bundle_verifies_to_zero() {
        let b = trivial_bundle();
        assert_eq!(verify_cocycle(&b, 8, 1).unwrap().max(), 0.0);
        assert_eq!(verify_compatibility(&b, 8, 1, Some(1e-4)).unwrap().max(), 0.0);
        let (l, r) = tetrahedron_two_arrow(&b, (0, 1, 2, 0), &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(l, TwoArrow::unit(identity(2), b.cm.as_ref()));
        assert_eq!(l, r);
    }

    #[test]
    fn twisted_bundle_is_consistent() {
        let b = three_chart_inner();
        let cocycle = verify_cocycle(&b, 16, 7).unwrap();
        assert!(cocycle.max() < 1e-10, "{cocycle:?}");
        let compat = verify_compatibility(&b, 16, 7, Some(1e-4)).unwrap();
        assert!(compat.max() < 1e-6, "{compat:?}");
        let f = b.f(0, 1, 2).unwrap().eval(&[0.1, 0.2, 0.3]);
        assert!(distance(&f, &identity(2)) > 1e-2);
        let (l, r) = tetrahedron_two_arrow(&b, (0, 2, 1, 2), &[0.1, -0.2, 0.3]).unwrap();
        assert!(distance(&l.h, &r.h) < 1e-10);
        assert!(distance(&l.source, &r.source) < 1e-15);
    }

    #[test]
    fn perturbed_data_is_flagged() {
        let mut b = three_chart_inner();
        let f = b.f(0, 1, 2).unwrap();
        let bump = GroupField::constant(real(&[&[1.0, 0.01], &[0.0, 1.0]]));
        b.cocycle.f.insert((0, 1, 2), f.product(&bump));
        assert!(verify_cocycle(&b, 8, 2).unwrap().get("f cocycle").unwrap() > 1e-4);
        let (l, r) = tetrahedron_two_arrow(&b, (0, 1, 2, 0), &[0.1, 0.1, 0.0]).unwrap();
        assert!(distance(&l.h, &r.h) > 1e-4);

        let mut b = three_chart_inner();
        let a = b.a(0, 2).unwrap().add(&Form1::from_components(|_| vec![real(&[&[0.0, 1e-2], &[0.0, 0.0]]); 3]));
        b.a.insert((0, 2), a);
        assert!(verify_compatibility(&b, 8, 2, Some(1e-4)).unwrap().get("connection compatibility").unwrap() > 1e-3);
    }

    #[test]
    fn abelian_reduction_of_compatibility() {
        let b = sphere_two_chart_scenario(1).unwrap().0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in b.atlas.sample_overlap(&[0, 1], 8, &mut rng) {
            let v = random_direction(&mut rng, 3);
            let sum = b.a(0, 1).unwrap().eval(&p, &v) + b.a(1, 0).unwrap().eval(&p, &v);
            assert!(norm(&sum) < 1e-15);
        }
        let compat = verify_compatibility(&b, 32, 5, Some(1e-4)).unwrap();
        assert!(compat.max() < 1e-6, "{compat:?}");
    }

    #[test]
    fn zeroed_south_field_is_flagged() {
        let mut b = sphere_two_chart_scenario(1).unwrap().0;
        b.connections[1].b = Form2::zero(1);
        assert!(verify_compatibility(&b, 16, 5, Some(1e-4)).unwrap().get("gauge relation B").unwrap() > 0.1);
    }

    #[test]
    fn sphere_map_is_on_the_sphere_with_pole_boundary() {
        let m = sphere_map();
        assert!(sphere_radius_residual(&m, 16) < 1e-14);
        for k in 0..=8 {
            let x = k as f64 / 8.0;
            for p in [m.point(x, 0.0), m.point(x, 1.0), m.point(0.0, x), m.point(1.0, x)] {
                assert!(distance(&real(&[&p]), &real(&[&[0.0, 0.0, 1.0]])) < 1e-14);
            }
        }
        let f = |t: f64, s: f64| m.point(t, s);
        for (t, s) in [(0.3, 0.2), (0.7, 0.55), (0.1, 0.9)] {
            let (dt, ds) = m.tangents(t, s);
            let (ft, _) = crate::numerics::fd_tangent(&f, (t, s), true, 1e-5, Rect::UNIT);
            let (fs, _) = crate::numerics::fd_tangent(&f, (t, s), false, 1e-5, Rect::UNIT);
            for i in 0..3 {
                assert!((dt[i] - ft[i]).abs() < 1e-8 && (ds[i] - fs[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn unsupported_shapes_are_rejected() {
        let cm: Module = Arc::new(Trivial);
        let global = LocalConnection::zero(cm.as_ref());
        assert!(synthesize_bundle(cm.clone(), plane_atlas(), &global, &[]).is_err());
        let gauges = vec![GaugeTransformation::identity(cm.as_ref()); 3];
        let twists = BTreeMap::from([((1, 0), GroupField::constant(cm.unit_h()))]);
        assert!(synthesize_twisted_bundle(cm, plane_atlas(), &global, &gauges, &twists).is_err());
    }

    #[test]
    fn cylinder_on_synthesized_bundle() {
        let b = three_chart_inner();
        let rho = ParamPath::line(vec![0.0, -0.1, 0.2], vec![0.3, 0.25, -0.1]);
        let spec = StepSpec::rk4(128);
        let r = cylinder_residual(&b, 0, 1, 2, &rho, spec).unwrap();
        assert!(r < 1e-6, "{r}");
        let r = cylinder_residual(&b, 2, 0, 1, &rho, spec).unwrap();
        assert!(r < 1e-6, "{r}");

        let trivial = trivial_bundle();
        assert!(cylinder_residual(&trivial, 0, 1, 2, &rho, spec).unwrap() < 1e-15);

        let residual_with = |eps: f64| {
            let mut b = three_chart_inner();
            let a = b.a(0, 2).unwrap().add(&Form1::from_components(move |_| vec![real(&[&[0.0, eps], &[0.0, 0.0]]); 3]));
            b.a.insert((0, 2), a);
            cylinder_residual(&b, 0, 1, 2, &rho, spec).unwrap()
        };
        let (r1, r2) = (residual_with(1e-3), residual_with(2e-3));
        assert!(r1 > 1e-4);
        assert!((r2 / r1 - 2.0).abs() < 0.05, "{r1} {r2}");
    }
}
