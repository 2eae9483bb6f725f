//! Browser bindings for three `twohol` computations. Every function returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use twohol::bundle::{gl2_form, inner_annulus_scenario, sphere_two_chart_scenario, BundleData};
use twohol::connection::LocalConnection;
use twohol::global_holonomy::{
    build_mesh, cell_in_chart, class_distance, glue_with, sphere_kernel_check, ChartAssignment, GlobalHolonomy, GlueOptions, Mesh,
    SurfaceLoop,
};
use twohol::numerics::{distance, scalar, Mat, Rect, StepSpec};
use twohol::path_transport::{SurfaceMap, SurfacePatch};
use twohol::surface_transport::local_2_holonomy;

#[derive(Serialize)]
struct Fail {
    error: String,
}

fn to_json<T: Serialize>(r: twohol::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v),
        Err(e) => serde_json::to_string(&Fail { error: e.to_string() }),
    }
    .expect("plain data serializes")
}

/// Glues without rejecting the result; the worst frontier mismatch is reported instead.
fn glued(gamma: &SurfaceLoop, b: &BundleData, mesh: &Mesh, asg: &ChartAssignment, steps: usize) -> twohol::Result<GlobalHolonomy> {
    let options = GlueOptions { tolerance: f64::INFINITY, ..GlueOptions::default() };
    glue_with(gamma, b, mesh, asg, StepSpec::rk4(steps.max(1)), options)
}

fn entries(m: &Mat) -> Vec<[f64; 2]> {
    m.transpose().iter().map(|z| [z.re, z.im]).collect()
}

fn grid(asg: &ChartAssignment) -> Vec<Vec<usize>> {
    (0..asg.n_s()).map(|b| (0..asg.n_t).map(|a| asg.get(a, b)).collect()).collect()
}

#[derive(Serialize)]
struct SphereFlux {
    flux: i32,
    hol: [f64; 2],
    oracle: [f64; 2],
    error: f64,
    kernel: f64,
    mismatch: f64,
    charts: Vec<Vec<usize>>,
}

/// Glues the two-chart sphere gerbe with flux `2πn`.
#[wasm_bindgen]
pub fn sphere_flux(n: i32, steps: usize, mesh: usize) -> String {
    to_json((|| {
        let (b, gamma) = sphere_two_chart_scenario(n)?;
        let (m, asg) = build_mesh(&gamma, &b.atlas, (mesh.max(1), mesh.max(1)), 4)?;
        let hol = glued(&gamma, &b, &m, &asg, steps)?;
        let h = hol.hol()[(0, 0)];
        let oracle = num_complex::Complex64::new(0.0, 2.0 * std::f64::consts::PI * n as f64).exp();
        Ok(SphereFlux {
            flux: n,
            hol: [h.re, h.im],
            oracle: [oracle.re, oracle.im],
            error: distance(hol.hol(), &scalar(oracle)),
            kernel: sphere_kernel_check(&hol, b.cm.as_ref()),
            mismatch: hol.mismatch,
            charts: grid(&asg),
        })
    })())
}

#[derive(Serialize)]
struct Reassignment {
    hol: Vec<[f64; 2]>,
    moved: Vec<[f64; 2]>,
    raw_distance: f64,
    class_distance: f64,
    mismatch: f64,
    charts: Vec<Vec<usize>>,
    moved_charts: Vec<Vec<usize>>,
}

/// Moves cell `(a, b)` of the annulus mesh to `chart` and compares the glued elements.
#[wasm_bindgen]
pub fn annulus_reassign(steps: usize, a: usize, b: usize, chart: usize) -> String {
    to_json((|| {
        let (bundle, gamma) = inner_annulus_scenario()?;
        let (mesh, asg) = build_mesh(&gamma, &bundle.atlas, (8, 8), 2)?;
        if a >= mesh.n_t() || b >= mesh.n_s() || chart >= bundle.atlas.len() {
            return Err(twohol::Error::Precondition(format!("cell ({a}, {b}) or chart {chart} out of range")));
        }
        let last = mesh.n_s() - 1;
        let rows = if b == 0 || b == last { vec![0, last] } else { vec![b] };
        if rows.iter().any(|&r| !cell_in_chart(&gamma, &bundle.atlas, mesh.rect(a, r), chart)) {
            return Err(twohol::Error::Precondition(format!("cell ({a}, {b}) does not lie in chart {chart}")));
        }
        let mut moved = asg.clone();
        for r in rows {
            moved.set(a, r, chart);
        }
        let h0 = glued(&gamma, &bundle, &mesh, &asg, steps)?;
        let h1 = glued(&gamma, &bundle, &mesh, &moved, steps)?;
        Ok(Reassignment {
            hol: entries(h0.hol()),
            moved: entries(h1.hol()),
            raw_distance: distance(h0.hol(), h1.hol()),
            class_distance: class_distance(h0.hol(), h1.hol(), bundle.cm.as_ref()),
            mismatch: h0.mismatch.max(h1.mismatch),
            charts: grid(&asg),
            moved_charts: grid(&moved),
        })
    })())
}

#[derive(Serialize)]
struct Level {
    steps: usize,
    h: Vec<[f64; 2]>,
    target_residual: f64,
    change: Option<f64>,
}

/// `H_{A,B}` of an `INNER(2)` connection of strength `k` on a warped square, at doubling step counts.
#[wasm_bindgen]
pub fn local_holonomy(k: f64, levels: usize) -> String {
    to_json((|| {
        let cm = twohol::algebra::Inner::general(2);
        let conn = LocalConnection::fake_flat_from(gl2_form(k), 0)?;
        let surface = SurfaceMap::new(|t, s| vec![t + 0.1 * s * s, s - 0.2 * t * s, 0.3 * (t * s).sin()], Rect::UNIT);
        let patch = SurfacePatch::new(surface, Rect::UNIT, 0);
        let mut out: Vec<Level> = vec![];
        let mut previous: Option<Mat> = None;
        for level in 0..levels.clamp(1, 7) {
            let steps = 4 << level;
            let hol = local_2_holonomy(&conn, &patch, StepSpec::rk4(steps.max(1)), &cm)?;
            out.push(Level {
                steps,
                h: entries(hol.h()),
                target_residual: hol.target_residual,
                change: previous.as_ref().map(|p| distance(p, hol.h())),
            });
            previous = Some(hol.h().clone());
        }
        Ok(out)
    })())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_flux_reports_a_small_error() {
        let v: serde_json::Value = serde_json::from_str(&sphere_flux(1, 32, 8)).unwrap();
        assert!(v["error"].as_f64().unwrap() < 1e-4, "{v}");
        assert_eq!(v["kernel"].as_f64().unwrap(), 0.0);
        assert_eq!(v["charts"].as_array().unwrap().len(), 16);
    }

    #[test]
    fn bad_cells_are_reported_as_errors() {
        let v: serde_json::Value = serde_json::from_str(&annulus_reassign(8, 40, 0, 0)).unwrap();
        assert!(v["error"].as_str().unwrap().contains("out of range"));
    }

    #[test]
    fn first_row_move_changes_the_element_but_not_its_class() {
        let v: serde_json::Value = serde_json::from_str(&annulus_reassign(32, 1, 0, 2)).unwrap();
        assert!(v["raw_distance"].as_f64().unwrap() > 1e-3, "{v}");
        assert!(v["class_distance"].as_f64().unwrap() < 1e-5, "{v}");
        assert_eq!(v["moved_charts"][7][1], 2);
    }

    #[test]
    fn local_holonomy_settles_under_refinement() {
        let v: serde_json::Value = serde_json::from_str(&local_holonomy(1.0, 4)).unwrap();
        let levels = v.as_array().unwrap();
        assert_eq!(levels.len(), 4);
        let changes: Vec<f64> = levels[1..].iter().map(|l| l["change"].as_f64().unwrap()).collect();
        assert!(changes[2] < changes[0], "{changes:?}");
    }
}
