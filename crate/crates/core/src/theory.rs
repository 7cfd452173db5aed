//! Empirical verification of the cross-modal gap convergence bound.
//!
//! Two strongly convex quadratics share an optimum and optimal value; the
//! one with the larger initial loss (the "boosted" side, playing modality a)
//! is driven by a weak-learner direction h that satisfies
//!   <grad, h> <= -nu ||grad||^2   and   ||h|| <= beta ||grad||
//! with step eta = nu / (L_a beta^2), while the other side stays fixed.
//! The simulator records the gap G(t) = L_a(t) - L_v, the closed-form bound
//! G(0) / (1 + d t G(0)) with d = nu^2 kappa^2 / (2 L_a beta^2), and the
//! gradient norm for the gap-bound inequality ||grad|| >= kappa |G|.
//! All guarantees hold in the G > 0 regime; the symmetric case is covered by
//! swapping roles.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// L(phi) = 0.5 (phi - opt)^T A (phi - opt), with lambda_min = mu and
/// lambda_max = lip by construction.
#[derive(Debug, Clone)]
pub struct QuadForm {
    pub matrix: Matrix,
    pub mu: f64,
    pub lip: f64,
}

impl QuadForm {
    pub fn loss(&self, phi: &[f64], optimum: &[f64]) -> f64 {
        let diff: Vec<f64> = phi.iter().zip(optimum).map(|(a, b)| a - b).collect();
        0.5 * dot(&diff, &matvec(&self.matrix, &diff))
    }

    pub fn grad(&self, phi: &[f64], optimum: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = phi.iter().zip(optimum).map(|(a, b)| a - b).collect();
        matvec(&self.matrix, &diff)
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub dim: usize,
    /// Modality a: larger initial loss, receives the boosting updates.
    pub boosted: QuadForm,
    /// Modality v: evaluated once, parameters never move.
    pub fixed: QuadForm,
    pub optimum: Vec<f64>,
    pub init_boosted: Vec<f64>,
    pub init_fixed: Vec<f64>,
}

/// Constants of the bound, derived from the problem and the weak-learner
/// quality (nu, beta).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoostConstants {
    pub nu: f64,
    pub beta: f64,
    /// min(mu_a, mu_v): conservative reading of the unsubscripted mu.
    pub mu: f64,
    pub l_a: f64,
    /// c = ((L_a + L_v)/2) ||phi(0) - phi*||^2 over the joint initial point.
    pub c: f64,
    /// kappa = sqrt(2 mu / c)
    pub kappa: f64,
    /// d = nu^2 kappa^2 / (2 L_a beta^2)
    pub d: f64,
    /// eta = nu / (L_a beta^2)
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapSample {
    pub step: usize,
    pub gap: f64,
    pub bound: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct GapTraceRecord {
    pub constants: BoostConstants,
    pub points: Vec<GapSample>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundReport {
    pub satisfied: bool,
    /// min over checked steps of bound(t) - G(t); negative means violation.
    pub worst_margin: f64,
    pub first_violation: Option<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn gaussian_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian draw.
fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v = gaussian_vec(dim, rng);
        for c in &cols {
            let proj = dot(&v, c);
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= proj * ci;
            }
        }
        let n = norm(&v);
        if n < 1e-8 {
            continue;
        }
        for vi in &mut v {
            *vi /= n;
        }
        cols.push(v);
    }
    Matrix::from_fn(dim, dim, |i, j| cols[j][i])
}

fn spectrum_matrix(dim: usize, mu: f64, lip: f64, rng: &mut impl Rng) -> Matrix {
    let eigenvalues: Vec<f64> = if dim == 1 {
        vec![mu]
    } else {
        (0..dim).map(|i| mu + (lip - mu) * i as f64 / (dim - 1) as f64).collect()
    };
    let q = random_orthogonal(dim, rng);
    // A = Q^T diag Q
    let mut scaled = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            scaled.set(i, j, eigenvalues[i] * q.get(i, j));
        }
    }
    q.transpose().matmul(&scaled).expect("square")
}

/// Build a problem whose boosted side starts with twice the fixed side's
/// loss plus one, guaranteeing G(0) > 0.
pub fn make_problem(
    dim: usize,
    mu_a: f64,
    l_a: f64,
    mu_v: f64,
    l_v: f64,
    seed: u64,
) -> Result<QuadraticProblem> {
    for (mu, lip) in [(mu_a, l_a), (mu_v, l_v)] {
        if !(mu > 0.0 && lip >= mu && lip.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < mu <= L, got mu={mu} L={lip}"
            )));
        }
    }
    if dim == 0 || (dim == 1 && (mu_a != l_a || mu_v != l_v)) {
        return Err(Error::InvalidArgument(format!(
            "dim {dim} cannot span the requested spectra"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boosted = QuadForm { matrix: spectrum_matrix(dim, mu_a, l_a, &mut rng), mu: mu_a, lip: l_a };
    let fixed = QuadForm { matrix: spectrum_matrix(dim, mu_v, l_v, &mut rng), mu: mu_v, lip: l_v };
    let optimum = gaussian_vec(dim, &mut rng);

    let dir_fixed = {
        let v = gaussian_vec(dim, &mut rng);
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let init_fixed: Vec<f64> = optimum.iter().zip(&dir_fixed).map(|(o, d)| o + d).collect();
    let fixed_loss = fixed.loss(&init_fixed, &optimum);

    let dir_boosted = {
        let v = gaussian_vec(dim, &mut rng);
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    // 0.5 r^2 u^T A u = target  =>  r = sqrt(2 target / u^T A u)
    let target = 2.0 * fixed_loss + 1.0;
    let quad = dot(&dir_boosted, &matvec(&boosted.matrix, &dir_boosted));
    let radius = (2.0 * target / quad).sqrt();
    let init_boosted: Vec<f64> =
        optimum.iter().zip(&dir_boosted).map(|(o, d)| o + radius * d).collect();

    Ok(QuadraticProblem { dim, boosted, fixed, optimum, init_boosted, init_fixed })
}

pub fn estimate_constants(problem: &QuadraticProblem, nu: f64, beta: f64) -> Result<BoostConstants> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu must be in (0,1], got {nu}")));
    }
    if beta < nu {
        return Err(Error::InvalidArgument(format!(
            "infeasible weak learner: beta {beta} < nu {nu}"
        )));
    }
    let mu = problem.boosted.mu.min(problem.fixed.mu);
    let l_a = problem.boosted.lip;
    let dist2 = |p: &[f64]| -> f64 {
        p.iter().zip(&problem.optimum).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let c = ((problem.boosted.lip + problem.fixed.lip) / 2.0)
        * (dist2(&problem.init_boosted) + dist2(&problem.init_fixed));
    let kappa = (2.0 * mu / c).sqrt();
    let d = nu * nu * kappa * kappa / (2.0 * l_a * beta * beta);
    let eta = nu / (l_a * beta * beta);
    let out = BoostConstants { nu, beta, mu, l_a, c, kappa, d, eta };
    for v in [out.c, out.kappa, out.d, out.eta] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::Numeric(format!("degenerate constants: {out:?}")));
        }
    }
    Ok(out)
}

/// Weak-learner direction: h = -nu * grad + gamma * w with w orthogonal to
/// the gradient, scaled so both defining inequalities hold. nu = beta gives
/// exactly -nu * grad; zero gradient gives zero.
pub fn boost_direction(
    problem: &QuadraticProblem,
    phi: &[f64],
    nu: f64,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu must be in (0,1], got {nu}")));
    }
    if beta < nu {
        return Err(Error::InvalidArgument(format!(
            "infeasible weak learner: beta {beta} < nu {nu}"
        )));
    }
    let g = problem.boosted.grad(phi, &problem.optimum);
    let gnorm = norm(&g);
    if gnorm == 0.0 {
        return Ok(vec![0.0; g.len()]);
    }
    let mut h: Vec<f64> = g.iter().map(|x| -nu * x).collect();
    if beta > nu && g.len() > 1 {
        let mut w = gaussian_vec(g.len(), rng);
        let proj = dot(&w, &g) / (gnorm * gnorm);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= proj * gi;
        }
        let wnorm = norm(&w);
        if wnorm > 1e-12 {
            let gamma = rng.random_range(0.0..1.0) * (beta * beta - nu * nu).sqrt() * gnorm;
            for (hi, wi) in h.iter_mut().zip(&w) {
                *hi += gamma * wi / wnorm;
            }
        }
    }
    // re-verify the two inequalities with a small float slack
    let inner = dot(&g, &h);
    let hnorm = norm(&h);
    let slack = 1e-9 * gnorm * gnorm;
    if inner > -nu * gnorm * gnorm + slack || hnorm > beta * gnorm * (1.0 + 1e-9) {
        return Err(Error::Numeric(format!(
            "constructed direction violates the weak-learner inequalities: \
             inner={inner}, bound={}, |h|={hnorm}, cap={}",
            -nu * gnorm * gnorm,
            beta * gnorm
        )));
    }
    Ok(h)
}

/// Direction parameters actually used to build h; normally equal to the
/// claimed constants, split out so deliberately broken learners can be
/// simulated as a negative control.
#[derive(Debug, Clone, Copy)]
pub struct DirectionParams {
    pub nu: f64,
    pub beta: f64,
}

pub fn run_gap_sim(
    problem: &QuadraticProblem,
    constants: &BoostConstants,
    steps: usize,
    seed: u64,
) -> Result<GapTraceRecord> {
    run_gap_sim_with(
        problem,
        constants,
        DirectionParams { nu: constants.nu, beta: constants.beta },
        steps,
        seed,
    )
}

/// Boosting update phi <- phi + eta h applied to the boosted side only.
/// Flags divergence when the gap grows for ten consecutive steps.
pub fn run_gap_sim_with(
    problem: &QuadraticProblem,
    constants: &BoostConstants,
    direction: DirectionParams,
    steps: usize,
    seed: u64,
) -> Result<GapTraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixed_loss = problem.fixed.loss(&problem.init_fixed, &problem.optimum);
    let gap0 = problem.boosted.loss(&problem.init_boosted, &problem.optimum) - fixed_loss;
    if !gap0.is_finite() {
        return Err(Error::Numeric("unbounded initial gap".to_string()));
    }
    let bound = |t: usize| gap0 / (1.0 + constants.d * t as f64 * gap0);

    let mut phi = problem.init_boosted.clone();
    let mut points = Vec::with_capacity(steps + 1);
    let grad0 = problem.boosted.grad(&phi, &problem.optimum);
    points.push(GapSample { step: 0, gap: gap0, bound: bound(0), grad_norm: norm(&grad0) });

    let mut growth_streak = 0usize;
    for t in 1..=steps {
        let h = boost_direction(problem, &phi, direction.nu, direction.beta, &mut rng)?;
        for (p, hi) in phi.iter_mut().zip(&h) {
            *p += constants.eta * hi;
        }
        let gap = problem.boosted.loss(&phi, &problem.optimum) - fixed_loss;
        let grad_norm = norm(&problem.boosted.grad(&phi, &problem.optimum));
        if gap > points[t - 1].gap {
            growth_streak += 1;
            if growth_streak >= 10 {
                return Err(Error::Numeric(format!("gap diverged at step {t}")));
            }
        } else {
            growth_streak = 0;
        }
        points.push(GapSample { step: t, gap, bound: bound(t), grad_norm });
    }
    Ok(GapTraceRecord { constants: *constants, points })
}

/// Check G(t) <= bound(t) wherever the gap is still positive.
pub fn check_bound(trace: &GapTraceRecord) -> BoundReport {
    let mut worst = f64::INFINITY;
    let mut first_violation = None;
    for p in &trace.points {
        if p.gap <= 0.0 {
            break;
        }
        let margin = p.bound - p.gap;
        if margin < worst {
            worst = margin;
        }
        if margin < -1e-12 * p.bound.abs().max(1.0) && first_violation.is_none() {
            first_violation = Some(p.step);
        }
    }
    if worst == f64::INFINITY {
        worst = 0.0;
    }
    BoundReport { satisfied: first_violation.is_none(), worst_margin: worst, first_violation }
}

/// Check the per-step descent inequality
/// G(t+1) <= G(t) - nu^2/(2 L_a beta^2) ||grad(t)||^2 while G > 0.
pub fn check_per_step_descent(trace: &GapTraceRecord, slack: f64) -> BoundReport {
    let c = &trace.constants;
    let rate = c.nu * c.nu / (2.0 * c.l_a * c.beta * c.beta);
    let mut worst = f64::INFINITY;
    let mut first_violation = None;
    for w in trace.points.windows(2) {
        if w[0].gap <= 0.0 {
            break;
        }
        let allowed = w[0].gap - rate * w[0].grad_norm * w[0].grad_norm;
        let margin = allowed - w[1].gap;
        if margin < worst {
            worst = margin;
        }
        if margin < -slack && first_violation.is_none() {
            first_violation = Some(w[1].step);
        }
    }
    if worst == f64::INFINITY {
        worst = 0.0;
    }
    BoundReport { satisfied: first_violation.is_none(), worst_margin: worst, first_violation }
}

/// Check the gap-bound inequality ||grad|| >= kappa |G| while G > 0.
pub fn check_gap_bound_inequality(trace: &GapTraceRecord, slack: f64) -> BoundReport {
    let kappa = trace.constants.kappa;
    let mut worst = f64::INFINITY;
    let mut first_violation = None;
    for p in &trace.points {
        if p.gap <= 0.0 {
            break;
        }
        let margin = p.grad_norm - kappa * p.gap.abs();
        if margin < worst {
            worst = margin;
        }
        if margin < -slack && first_violation.is_none() {
            first_violation = Some(p.step);
        }
    }
    if worst == f64::INFINITY {
        worst = 0.0;
    }
    BoundReport { satisfied: first_violation.is_none(), worst_margin: worst, first_violation }
}

/// CSV trace: `t,G,bound,grad_norm_a` per line.
pub fn write_trace_csv<W: Write>(trace: &GapTraceRecord, mut out: W) -> Result<()> {
    writeln!(out, "t,G,bound,grad_norm_a")?;
    for p in &trace.points {
        writeln!(out, "{},{:?},{:?},{:?}", p.step, p.gap, p.bound, p.grad_norm)?;
    }
    Ok(())
}

/// Verification grid over weak-learner quality and conditioning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub nus: Vec<f64>,
    pub condition_numbers: Vec<f64>,
    pub seeds: Vec<u64>,
    pub dim: usize,
    pub steps: usize,
    pub beta: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nus: vec![0.5, 0.9, 1.0],
            condition_numbers: vec![1.0, 10.0, 100.0],
            seeds: (0..5).collect(),
            dim: 8,
            steps: 300,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCellReport {
    pub nu: f64,
    pub condition_number: f64,
    pub seed: u64,
    pub bound: BoundReport,
    pub descent: BoundReport,
    pub gap_inequality: BoundReport,
}

impl GridCellReport {
    pub fn ok(&self) -> bool {
        self.bound.satisfied && self.descent.satisfied && self.gap_inequality.satisfied
    }
}

/// Run every grid cell; Err(BoundViolation) when any check fails.
pub fn run_grid(spec: &GridSpec) -> Result<Vec<GridCellReport>> {
    let mut reports = Vec::new();
    for &nu in &spec.nus {
        for &cond in &spec.condition_numbers {
            for &seed in &spec.seeds {
                let problem = make_problem(spec.dim, 1.0, cond, 1.0, cond, seed)?;
                let constants = estimate_constants(&problem, nu, spec.beta)?;
                let trace = run_gap_sim(&problem, &constants, spec.steps, seed)?;
                reports.push(GridCellReport {
                    nu,
                    condition_number: cond,
                    seed,
                    bound: check_bound(&trace),
                    descent: check_per_step_descent(&trace, 1e-9),
                    gap_inequality: check_gap_bound_inequality(&trace, 1e-9),
                });
            }
        }
    }
    if let Some(bad) = reports.iter().find(|r| !r.ok()) {
        return Err(Error::BoundViolation(format!(
            "nu={} cond={} seed={}: bound={:?} descent={:?} gap_inequality={:?}",
            bad.nu, bad.condition_number, bad.seed, bad.bound, bad.descent, bad.gap_inequality
        )));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_spectrum_is_scaled_identity() {
        let p = make_problem(5, 2.0, 2.0, 1.0, 1.0, 3).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 2.0 } else { 0.0 };
                assert!((p.boosted.matrix.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenvalue_extremes_match_nalgebra_oracle() {
        for seed in 0..3 {
            let p = make_problem(6, 0.5, 12.0, 1.0, 4.0, seed).unwrap();
            for (form, mu, lip) in [(&p.boosted, 0.5, 12.0), (&p.fixed, 1.0, 4.0)] {
                let m = nalgebra::DMatrix::from_fn(6, 6, |i, j| form.matrix.get(i, j));
                let eigen = m.symmetric_eigen();
                let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = eigen.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!((min - mu).abs() < 1e-10, "seed {seed}: min {min} vs {mu}");
                assert!((max - lip).abs() < 1e-10, "seed {seed}: max {max} vs {lip}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let p = make_problem(4, 1.0, 3.0, 1.0, 3.0, 7).unwrap();
        for form in [&p.boosted, &p.fixed] {
            let g = form.grad(&p.optimum, &p.optimum);
            assert!(norm(&g) < 1e-12);
        }
    }

    #[test]
    fn initial_gap_is_positive() {
        for seed in 0..10 {
            let p = make_problem(8, 1.0, 10.0, 1.0, 10.0, seed).unwrap();
            let ga = p.boosted.loss(&p.init_boosted, &p.optimum);
            let gv = p.fixed.loss(&p.init_fixed, &p.optimum);
            assert!(ga > gv, "seed {seed}: {ga} <= {gv}");
        }
    }

    #[test]
    fn make_problem_rejects_bad_spectra() {
        assert!(make_problem(4, 0.0, 1.0, 1.0, 1.0, 0).is_err());
        assert!(make_problem(4, 2.0, 1.0, 1.0, 1.0, 0).is_err());
        assert!(make_problem(1, 1.0, 2.0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn tight_direction_is_negative_gradient() {
        let p = make_problem(5, 1.0, 1.0, 1.0, 1.0, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = boost_direction(&p, &p.init_boosted, 1.0, 1.0, &mut rng).unwrap();
        let g = p.boosted.grad(&p.init_boosted, &p.optimum);
        for (hi, gi) in h.iter().zip(&g) {
            assert!((hi + gi).abs() < 1e-12);
        }
    }

    #[test]
    fn direction_zero_at_optimum() {
        let p = make_problem(4, 1.0, 5.0, 1.0, 5.0, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = boost_direction(&p, &p.optimum, 0.7, 1.0, &mut rng).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direction_rejects_infeasible_beta() {
        let p = make_problem(4, 1.0, 5.0, 1.0, 5.0, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(boost_direction(&p, &p.init_boosted, 0.9, 0.5, &mut rng).is_err());
    }

    #[test]
    fn direction_inequalities_hold_over_many_random_states() {
        let p = make_problem(6, 0.8, 9.0, 1.0, 3.0, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for case in 0..10_000 {
            let phi = gaussian_vec(6, &mut rng);
            let (nu, beta) = match case % 3 {
                0 => (0.5, 1.0),
                1 => (0.9, 2.0),
                _ => (1.0, 1.0),
            };
            let h = boost_direction(&p, &phi, nu, beta, &mut rng).unwrap();
            let g = p.boosted.grad(&phi, &p.optimum);
            let gn = norm(&g);
            assert!(dot(&g, &h) <= -nu * gn * gn + 1e-9 * gn * gn);
            assert!(norm(&h) <= beta * gn * (1.0 + 1e-9));
        }
    }

    #[test]
    fn one_step_exact_convergence_in_tight_isotropic_case() {
        // nu = beta = 1, mu_a = L_a = 1 gives eta = 1: one gradient step of a
        // unit quadratic lands on the optimum, so G(1) = -(L_v(0) - L_v(*))
        let p = make_problem(5, 1.0, 1.0, 1.0, 3.0, 19).unwrap();
        let constants = estimate_constants(&p, 1.0, 1.0).unwrap();
        assert_eq!(constants.eta, 1.0);
        let trace = run_gap_sim(&p, &constants, 3, 19).unwrap();
        let fixed_loss = p.fixed.loss(&p.init_fixed, &p.optimum);
        assert!((trace.points[1].gap + fixed_loss).abs() < 1e-9);
        assert!(trace.points[1].grad_norm < 1e-9);
    }

    #[test]
    fn gap_non_increasing_while_positive() {
        let p = make_problem(8, 1.0, 10.0, 1.0, 10.0, 23).unwrap();
        let constants = estimate_constants(&p, 0.9, 1.0).unwrap();
        let trace = run_gap_sim(&p, &constants, 200, 23).unwrap();
        for w in trace.points.windows(2) {
            if w[0].gap <= 0.0 {
                break;
            }
            assert!(w[1].gap <= w[0].gap + 1e-12);
        }
    }

    #[test]
    fn grid_bound_and_descent_hold() {
        let spec = GridSpec { seeds: vec![0, 1], steps: 150, ..GridSpec::default() };
        let reports = run_grid(&spec).unwrap();
        assert_eq!(reports.len(), 3 * 3 * 2);
        assert!(reports.iter().all(|r| r.ok()));
    }

    #[test]
    fn broken_weak_learner_is_detected() {
        // direction built for nu = 0.05 while the constants claim nu = 0.9:
        // the descent inequality must fail
        let p = make_problem(8, 1.0, 10.0, 1.0, 10.0, 29).unwrap();
        let constants = estimate_constants(&p, 0.9, 1.0).unwrap();
        let trace = run_gap_sim_with(
            &p,
            &constants,
            DirectionParams { nu: 0.05, beta: 1.0 },
            100,
            29,
        )
        .unwrap();
        let descent = check_per_step_descent(&trace, 1e-9);
        assert!(!descent.satisfied, "expected a descent violation: {descent:?}");
    }

    #[test]
    fn constant_gap_trace_violates_bound_at_step_one() {
        let p = make_problem(4, 1.0, 2.0, 1.0, 2.0, 31).unwrap();
        let constants = estimate_constants(&p, 0.9, 1.0).unwrap();
        let g0 = 1.0;
        let points = (0..5)
            .map(|t| GapSample {
                step: t,
                gap: g0,
                bound: g0 / (1.0 + constants.d * t as f64 * g0),
                grad_norm: 1.0,
            })
            .collect();
        let report = check_bound(&GapTraceRecord { constants, points });
        assert!(!report.satisfied);
        assert_eq!(report.first_violation, Some(1));
    }

    #[test]
    fn empty_and_zero_step_traces_are_trivially_satisfied() {
        let p = make_problem(4, 1.0, 2.0, 1.0, 2.0, 37).unwrap();
        let constants = estimate_constants(&p, 0.9, 1.0).unwrap();
        let trace = run_gap_sim(&p, &constants, 0, 37).unwrap();
        assert_eq!(trace.points.len(), 1);
        assert!(check_bound(&trace).satisfied);
        assert!(check_per_step_descent(&trace, 1e-9).satisfied);
    }

    #[test]
    fn csv_trace_has_expected_header() {
        let p = make_problem(4, 1.0, 2.0, 1.0, 2.0, 41).unwrap();
        let constants = estimate_constants(&p, 0.9, 1.0).unwrap();
        let trace = run_gap_sim(&p, &constants, 2, 41).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,G,bound,grad_norm_a\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
