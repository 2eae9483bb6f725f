//! The local 2-holonomy `H_{A,B}` on a rectangular patch, its compositions, and the
//! gauge-cube and cylinder checks.

use crate::algebra::{CrossedModule, TwoArrow};
use crate::bundle::BundleData;
use crate::connection::{apply_gauge, curvature1, GaugeTransformation, LocalConnection, Module};
use crate::error::{Error, Result};
use crate::numerics::{distance, integrate_sampled, inverse, norm, Mat, Rect, Retraction, Side, StepSpec};
use crate::path_transport::{
    gauge_transport_h, holonomy1, row_steps, row_transport, script_b_from_row, transition_psi, ParamPath, SurfacePatch,
};

const FAKE_FLATNESS_WARNING: f64 = 1e-6;

/// `(F_A(γ⁺), H_{A,B})` on a patch, with its four edge transports.
#[derive(Clone, Debug)]
pub struct LocalTwoHolonomy {
    pub arrow: TwoArrow,
    pub patch: SurfacePatch,
    pub conn: LocalConnection,
    pub spec: StepSpec,
    pub top: Mat,
    pub right: Mat,
    pub bottom: Mat,
    pub left: Mat,
    /// `‖α(H⁻¹)F_A(γ⁺) − F_A(γ⁻)‖`
    pub target_residual: f64,
    /// Max of `‖γ*(Ω^A − α(B))‖` at the patch corners and centre, when `dA` is analytic.
    pub fake_flatness: Option<f64>,
    pub warning: Option<String>,
}

impl LocalTwoHolonomy {
    pub fn h(&self) -> &Mat {
        &self.arrow.h
    }

    /// `F_A(γ⁻) = left · bottom`
    pub fn lower(&self) -> Mat {
        &self.left * &self.bottom
    }

    /// `F_A(γ⁺) = top · right`
    pub fn upper(&self) -> Mat {
        &self.top * &self.right
    }
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

fn fake_flatness_on(conn: &LocalConnection, patch: &SurfacePatch, cm: &dyn CrossedModule) -> Option<f64> {
    if !conn.a.has_derivative() {
        return None;
    }
    let omega = curvature1(&conn.a, None).ok()?;
    let r = patch.rect;
    let pts = [(r.t0, r.s0), (r.t1, r.s0), (r.t0, r.s1), (r.t1, r.s1), (0.5 * (r.t0 + r.t1), 0.5 * (r.s0 + r.s1))];
    let worst = pts
        .iter()
        .map(|&(t, s)| {
            let p = patch.surface.point(t, s);
            let (dt, ds) = patch.surface.tangents(t, s);
            norm(&(omega.eval(&p, &dt, &ds) - cm.alpha_lie(&conn.b.eval(&p, &dt, &ds))))
        })
        .fold(0.0, f64::max);
    Some(worst)
}

/// Solves `dH/ds = H·ℬ_t(s)`, `H(t, s₀) = 1`, across the whole patch.
///
/// Every row at the `2n_s + 1` half-step heights is transported once and reused for the
/// τ-quadrature of ℬ; rows are independent and evaluated concurrently.
pub fn local_2_holonomy(conn: &LocalConnection, patch: &SurfacePatch, spec: StepSpec, cm: &dyn CrossedModule) -> Result<LocalTwoHolonomy> {
    let r = patch.rect;
    let a = &conn.a;
    let top = holonomy1(a, &patch.top(), spec, cm)?.endpoint;
    let right = holonomy1(a, &patch.right(), spec, cm)?.endpoint;
    let bottom = holonomy1(a, &patch.bottom(), spec, cm)?.endpoint;
    let left = holonomy1(a, &patch.left(), spec, cm)?.endpoint;
    let fake_flatness = fake_flatness_on(conn, patch, cm);
    let warning = fake_flatness
        .filter(|&f| f > FAKE_FLATNESS_WARNING)
        .map(|f| format!("connection is not fake-flat on the patch (residual {f:.3e})"));

    let h = if r.width() == 0.0 || r.height() == 0.0 {
        cm.unit_h()
    } else {
        let n_s = spec.steps_for(r.height());
        let n_t = row_steps(spec, r.width());
        let h_s = r.height() / n_s as f64;
        let left_half = {
            let path = patch.left();
            let half = (0..=4 * n_s)
                .map(|k| {
                    let s = r.s0 + k as f64 * 0.25 * h_s;
                    a.eval(&path.point(s), &path.velocity(s))
                })
                .collect::<Vec<_>>();
            integrate_sampled(&half, r.s0, 0.5 * h_s, Side::Right, &cm.unit_g(), spec.method, Retraction::None)?
        };
        let samples = par_map(2 * n_s + 1, |k| {
            let s = r.s0 + k as f64 * 0.5 * h_s;
            let row = row_transport(a, patch, s, r.t1, n_t, &left_half[k].1, spec)?;
            Ok(script_b_from_row(&row, &conn.b, patch, s, cm))
        })?;
        let trace = integrate_sampled(&samples, r.s0, h_s, Side::Right, &cm.unit_h(), spec.method, Retraction::None)?;
        trace.last().expect("non-empty trace").1.clone()
    };

    let upper = &top * &right;
    let target_residual = distance(&(cm.alpha(&inverse(&h)?) * &upper), &(&left * &bottom));
    Ok(LocalTwoHolonomy {
        arrow: TwoArrow::new(upper, h),
        patch: patch.clone(),
        conn: conn.clone(),
        spec,
        top,
        right,
        bottom,
        left,
        target_residual,
        fake_flatness,
        warning,
    })
}

fn same_surface_chart(a: &LocalTwoHolonomy, b: &LocalTwoHolonomy) -> Result<()> {
    if a.patch.chart != b.patch.chart {
        return Err(Error::Precondition("patches lie in different charts".into()));
    }
    Ok(())
}

/// `H(t+t', s) = F_A(γ_{[0,t];0}) ▷ Ĥ(t', s) · H(t, s)` and its distance to the union patch.
pub fn hcompose_local(left: &LocalTwoHolonomy, right: &LocalTwoHolonomy, cm: &dyn CrossedModule) -> Result<(TwoArrow, f64)> {
    same_surface_chart(left, right)?;
    let (l, r) = (left.patch.rect, right.patch.rect);
    if l.t1 != r.t0 || l.s0 != r.s0 || l.s1 != r.s1 {
        return Err(Error::Precondition("patches are not horizontally adjacent".into()));
    }
    let h = cm.act(&left.top, right.h()) * left.h();
    let composed = TwoArrow::new(&left.top * right.upper(), h);
    let union = local_2_holonomy(&left.conn, &left.patch.sub(Rect::new(l.t0, r.t1, l.s0, l.s1)), left.spec, cm)?;
    let residual = distance(&composed.h, union.h());
    Ok((composed, residual))
}

/// `H(t, s+s') = H(t, s) · F_A(γ_{0;[0,s]}) ▷ H̃(t, s')` and its distance to the union patch.
pub fn vcompose_local(top: &LocalTwoHolonomy, bottom: &LocalTwoHolonomy, cm: &dyn CrossedModule) -> Result<(TwoArrow, f64)> {
    same_surface_chart(top, bottom)?;
    let (u, d) = (top.patch.rect, bottom.patch.rect);
    if u.s1 != d.s0 || u.t0 != d.t0 || u.t1 != d.t1 {
        return Err(Error::Precondition("patches are not vertically adjacent".into()));
    }
    let h = top.h() * cm.act(&top.left, bottom.h());
    let composed = TwoArrow::new(&top.top * &top.right * &bottom.right, h);
    let union = local_2_holonomy(&top.conn, &top.patch.sub(Rect::new(u.t0, u.t1, u.s0, d.s1)), top.spec, cm)?;
    let residual = distance(&composed.h, union.h());
    Ok((composed, residual))
}

/// `‖g(γ₀₀) ▷ H_{A',B'} − h(γ⁺)⁻¹ H_{A,B} h(γ⁻)‖` with `(A', B')` the gauge transform of `(A, B)`.
pub fn gauge_cube_residual(
    conn: &LocalConnection,
    gt: &GaugeTransformation,
    patch: &SurfacePatch,
    spec: StepSpec,
    cm: &Module,
    fd: Option<f64>,
) -> Result<f64> {
    let gauged = apply_gauge(conn, gt, cm, fd)?;
    let cmr = cm.as_ref();
    let hol = local_2_holonomy(conn, patch, spec, cmr)?;
    let hol2 = local_2_holonomy(&gauged, patch, spec, cmr)?;
    let h = |rho: &ParamPath| gauge_transport_h(&conn.a, &gt.phi, rho, spec, cmr).map(|x| x.endpoint);
    let h_upper = cmr.act(&hol.top, &h(&patch.right())?) * h(&patch.top())?;
    let h_lower = cmr.act(&hol.left, &h(&patch.bottom())?) * h(&patch.left())?;
    let r = patch.rect;
    let g0 = gt.g.eval(&patch.surface.point(r.t0, r.s0));
    let lhs = cmr.act(&g0, hol2.h());
    let rhs = inverse(&h_upper)? * hol.h() * h_lower;
    Ok(distance(&lhs, &rhs))
}

/// `‖g_ij(x) ▷ ψ_jk − ψ_ij⁻¹ · (F_{A_i} ▷ f_ijk(y)) · ψ_ik · f_ijk(x)⁻¹‖` along `ρ` in `U_i ∩ U_j ∩ U_k`.
pub fn cylinder_residual(bundle: &BundleData, i: usize, j: usize, k: usize, rho: &ParamPath, spec: StepSpec) -> Result<f64> {
    let cm = bundle.cm.as_ref();
    let (x, y) = (rho.point(rho.a), rho.point(rho.b));
    for p in [&x, &y] {
        if !bundle.atlas.in_overlap(&[i, j, k], p) {
            return Err(Error::ChartViolation { chart: k, param: rho.a });
        }
    }
    let psi = |m: usize, n: usize| -> Result<Mat> {
        let a_m = &bundle.connection(m)?.a;
        Ok(transition_psi(a_m, &bundle.g(m, n)?, &bundle.a(m, n)?, rho, spec, cm)?.h)
    };
    let f = bundle.f(i, j, k)?;
    let fi = holonomy1(&bundle.connection(i)?.a, rho, spec, cm)?.endpoint;
    let lhs = cm.act(&bundle.g(i, j)?.eval(&x), &psi(j, k)?);
    let rhs = inverse(&psi(i, j)?)? * cm.act(&fi, &f.eval(&y)) * psi(i, k)? * inverse(&f.eval(&x))?;
    Ok(distance(&lhs, &rhs))
}
