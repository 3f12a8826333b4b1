//! Shared oracles for the integration tests.
#![allow(dead_code)]

use inperturb::rng::RngStream;
use inperturb::solver::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Grid spacing the brute-force search refines down to.
pub const FINEST_STEP: f64 = 1e-3;

fn normal(g: &mut impl Rng) -> f64 {
    StandardNormal.sample(g)
}

/// Random PSD instance with `d <= 3`, ridge and radius drawn so that some optima
/// are interior and some on the sphere.
pub fn random_small_qp(rng: RngStream) -> QuadraticProgram {
    let mut g = rng.rng();
    let d = g.random_range(1..=3);
    let b = DMatrix::from_fn(d, d, |_, _| normal(&mut g));
    let a = b.tr_mul(&b);
    let a = (&a + a.transpose()) * 0.5;
    QuadraticProgram {
        a,
        b_lin: DVector::from_fn(d, |_, _| normal(&mut g)),
        c0: 0.0,
        reg: g.random_range(0.0..1.0),
        n: 1,
        radius: g.random_range(0.5..1.5),
    }
}

fn visit_grid(center: &DVector<f64>, half_width: f64, step: f64, radius: f64, f: &mut impl FnMut(&DVector<f64>)) {
    let d = center.len();
    let k = (half_width / step).round() as i64;
    let mut idx = vec![-k; d];
    let mut w = DVector::zeros(d);
    loop {
        for j in 0..d {
            w[j] = center[j] + idx[j] as f64 * step;
        }
        let norm = w.norm();
        if norm <= radius {
            f(&w);
        } else if norm <= radius + step * (d as f64).sqrt() {
            // Lattice points rarely land on the sphere; their projections do.
            f(&(&w * (radius / norm)));
        }
        let mut j = 0;
        loop {
            if j == d {
                return;
            }
            idx[j] += 1;
            if idx[j] <= k {
                break;
            }
            idx[j] = -k;
            j += 1;
        }
    }
}

/// Minimum of `qp` over grid points inside the ball, plus the radial projections
/// of grid points just outside it: a coarse grid over the whole ball, then
/// repeated local refinement around the best candidates until the spacing
/// reaches [`FINEST_STEP`].
pub fn brute_force_minimum(qp: &QuadraticProgram) -> (DVector<f64>, f64) {
    let d = qp.dim();
    let r = qp.radius;
    let mut step = r / 40.0;
    let mut cands: Vec<(f64, DVector<f64>)> = Vec::new();
    visit_grid(&DVector::zeros(d), r, step, r, &mut |w| {
        cands.push((qp.objective(w), w.clone()))
    });
    let keep = 16;
    loop {
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        cands.truncate(keep);
        if step <= FINEST_STEP * (1.0 + 1e-12) {
            break;
        }
        let next = (step / 8.0).max(FINEST_STEP);
        let mut refined = Vec::new();
        for (_, c) in &cands {
            visit_grid(c, 2.0 * step, next, r, &mut |w| {
                refined.push((qp.objective(w), w.clone()))
            });
        }
        refined.append(&mut cands);
        cands = refined;
        step = next;
    }
    let (v, w) = cands.swap_remove(0);
    (w, v)
}
