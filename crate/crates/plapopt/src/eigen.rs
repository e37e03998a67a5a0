//! Principal eigenpairs of the weighted p-Laplacian with a potential.
//!
//! The eigenvalue is the minimum of the energy
//! `E(u) = ∫ |∇u|^p + V |u|^p` over Dirichlet fields normalized by
//! `∫ g |u|^p = 1`. All integrals use the cellwise quadrature of
//! [`crate::mesh`]: gradients are cellwise constant and nonlinear terms in
//! `u` are cell averages of vertex values, which makes the potential and
//! constraint terms diagonal in the nodal values (a lumped scheme). Two
//! consequences the tests lean on: scaling the weight rescales the
//! eigenvalue exactly, and shifting the potential shifts it exactly, both
//! already at the discrete level.
//!
//! For p ≠ 2 the integrand is degenerate at ∇u = 0, so minimization runs on
//! the smoothed energy `∫ (|∇u|² + ε²)^{(p−2)/2} |∇u|² + V |u|^p` with ε
//! driven down a geometric schedule; the minimizers converge to the
//! unregularized one as ε → 0. Each ε level is minimized by preconditioned
//! projected gradient descent: the search direction is the residual
//! `∇E − μ∇N` mapped through a banded Cholesky factorization of the current
//! weighted stiffness matrix (a lagged, always-positive-definite metric),
//! followed by an Armijo backtracking line search, a pointwise absolute
//! value, and exact renormalization. With p = 2 the smoothing is inert and
//! a single level is used.
//!
//! The module also estimates the best constants of the embeddings
//! `‖u‖_{L^r} ≤ C ‖∇u‖_{L^p}` (as the infimum `S_r` of the p-Dirichlet
//! energy over unit-`L^r`-norm fields, including the sup-norm case r = ∞),
//! and uses them to check the admissibility conditions (H1)/(H2) under
//! which the eigenvalue is well posed and coercive.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::banded::{BandedCholesky, BandedMatrix};
use crate::mesh::{CellField, Mesh, NodeField, NO_VERTEX};
use crate::{Error, Result};

/// One eigenproblem instance: exponents and coefficient fields.
#[derive(Clone, Debug)]
pub struct ProblemData {
    /// Differentiability exponent of the energy; must exceed 1.
    pub p: f64,
    /// Integrability exponent for the negative part of the potential,
    /// constrained by (H1): q > N/p when p ≤ N, q = 1 when p > N.
    pub q: f64,
    /// Weight multiplying the eigenvalue term; must be positive somewhere.
    pub g: CellField,
    /// Potential.
    pub v: CellField,
}

impl ProblemData {
    pub fn new(p: f64, q: f64, g: CellField, v: CellField) -> Self {
        ProblemData { p, q, g, v }
    }

    /// Structural validation: exponent ranges and field sizes. The deeper
    /// admissibility conditions (the (H1) arithmetic and the coercivity
    /// bound (H2)) live in [`check_hypotheses`], which runs two Sobolev
    /// solves and is therefore an explicit, separate step.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if !(self.p > 1.0) {
            return Err(Error::HypothesisH1(format!(
                "p must exceed 1, got {}",
                self.p
            )));
        }
        if !(self.q >= 1.0) {
            return Err(Error::HypothesisH1(format!(
                "q must be at least 1, got {}",
                self.q
            )));
        }
        self.g.validate(mesh)?;
        self.v.validate(mesh)?;
        Ok(())
    }

    /// The (H1) arithmetic for dimension `n`: q > n/p when p ≤ n, q = 1
    /// when p > n.
    pub fn h1_holds(&self, n: usize) -> bool {
        let n = n as f64;
        self.p > 1.0
            && self.q >= 1.0
            && if self.p > n { self.q == 1.0 } else { self.q > n / self.p }
    }
}

/// Tuning knobs of the descent solver. The defaults are used by every test
/// in the crate; they favour reproducibility over speed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Initial smoothing: ε₀ = factor · mesh diameter. Setting the factor
    /// to 0 runs a single level at `eps_min` (useful for studying a fixed
    /// regularization strength, and for warm starts).
    pub eps_initial_factor: f64,
    /// Geometric decay between smoothing levels.
    pub eps_decay: f64,
    /// Final smoothing strength. Must be positive when p < 2; may be 0 for
    /// p ≥ 2, where the unregularized integrand is already C¹.
    pub eps_min: f64,
    /// Preconditioned-gradient stopping threshold, scaled by (1 + |λ|).
    pub grad_tol: f64,
    /// Per-iteration eigenvalue stability threshold, scaled by (1 + |λ|).
    pub lambda_tol: f64,
    /// Consecutive λ-stable iterations required (together with the
    /// gradient test) before a level is considered converged.
    pub lambda_streak: usize,
    /// Total accepted-iteration budget across all levels; exhausting it
    /// returns the best iterate flagged as non-converged.
    pub max_iters: usize,
    /// Accepted steps between rebuilds of the banded preconditioner.
    pub rebuild_every: usize,
    /// Armijo sufficient-decrease parameter.
    pub armijo_c1: f64,
    /// Maximum step halvings per line search.
    pub max_backtracks: usize,
    /// Randomize the initial iterate (multiplicative noise on the default
    /// bump). Used by the multi-start agreement checks.
    pub randomize: bool,
    /// Seed for the randomized initialization.
    pub seed: u64,
    /// Residual level a converged solve is expected to reach; recorded in
    /// results and asserted by tests, not enforced by the solver loop.
    pub residual_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_initial_factor: 0.1,
            eps_decay: 10.0,
            eps_min: 1e-8,
            grad_tol: 1e-8,
            lambda_tol: 1e-10,
            lambda_streak: 5,
            max_iters: 20_000,
            rebuild_every: 40,
            armijo_c1: 1e-4,
            max_backtracks: 60,
            randomize: false,
            seed: 0,
            residual_tol: 1e-5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, p: f64) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.lambda_tol > 0.0 && self.residual_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.eps_min < 0.0 || self.eps_initial_factor < 0.0 {
            return Err(Error::Config("smoothing parameters must be nonnegative".into()));
        }
        if p < 2.0 && self.eps_min == 0.0 {
            return Err(Error::Config(
                "eps_min must be positive for p < 2 (the integrand is singular at ∇u = 0)".into(),
            ));
        }
        if self.eps_decay <= 1.0 {
            return Err(Error::Config("eps_decay must exceed 1".into()));
        }
        if self.lambda_streak == 0 || self.rebuild_every == 0 || self.max_backtracks == 0 {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::Config("armijo_c1 must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn levels(&self, p: f64, diameter: f64) -> Vec<f64> {
        if (p - 2.0).abs() < 1e-12 {
            // Smoothing is exactly inert at p = 2.
            return vec![self.eps_min];
        }
        let mut levels = Vec::new();
        let mut eps = self.eps_initial_factor * diameter;
        while eps > self.eps_min {
            levels.push(eps);
            eps /= self.eps_decay;
        }
        levels.push(self.eps_min);
        levels
    }
}

/// A converged (or best-effort) eigenpair.
#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Rayleigh quotient of `u` with the unsmoothed energy.
    pub lambda: f64,
    /// Quotient with the smoothed energy at `epsilon_final` (equals
    /// `lambda` up to the smoothing error; exactly at p = 2).
    pub lambda_epsilon: f64,
    /// Nonnegative Dirichlet eigenfunction, normalized.
    pub u: NodeField,
    /// Euclidean norm of the interior weak-form residual at `lambda`.
    pub residual: f64,
    /// |∫ g |u|^p − 1|.
    pub normalization_defect: f64,
    /// Accepted descent steps, totalled over all smoothing levels.
    pub iterations: usize,
    /// Last smoothing strength used.
    pub epsilon_final: f64,
    /// Whether the stopping criteria were met (false means the iteration
    /// budget ran out; the iterate is still the best one found).
    pub converged: bool,
    /// Objective value after each accepted step (the solve trace).
    pub lambda_history: Vec<f64>,
}

/// Constraint exponent for Sobolev-constant estimation: a finite
/// Lebesgue exponent or the sup norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SobolevExponent {
    Finite(f64),
    Sup,
}

/// Output of [`estimate_sobolev_constant`].
#[derive(Clone, Debug)]
pub struct SobolevEstimate {
    /// The constant: minimized p-Dirichlet energy at unit constraint norm.
    pub value: f64,
    /// Minimizer (normalized by the constraint).
    pub u: NodeField,
    pub iterations: usize,
    pub converged: bool,
}

/// Which admissibility branch the potential satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum H2Branch {
    /// ‖V⁻‖_{L^q} < S_{pq′}.
    NormBound,
    /// min V > −S_p.
    LowerBound,
    Fail,
}

/// Admissibility report: the (H1) arithmetic, the relevant Sobolev
/// constants, and the coercivity margin δ₀.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub h1_ok: bool,
    pub h2_branch: H2Branch,
    /// Estimate of S_p (None when (H1) already fails).
    pub s_p: Option<f64>,
    /// Estimate of S_{pq′} (sup-norm constant when q = 1).
    pub s_pq_prime: Option<f64>,
    /// ‖V⁻‖_{L^q}, by exact quadrature with deterministic sorted summation.
    pub v_minus_norm: f64,
    /// Smallest cell value of V.
    pub v_min: f64,
    /// Coercivity margin: positive exactly when a branch holds.
    pub delta0: f64,
}

impl HypothesisReport {
    pub fn passes(&self) -> bool {
        self.h1_ok && self.h2_branch != H2Branch::Fail
    }
}

// ---------------------------------------------------------------------------
// Scalar kernels for the smoothed integrand.

/// |x|^e with a fast path for squares.
#[inline]
fn abs_pow(x: f64, e: f64) -> f64 {
    if e == 2.0 {
        x * x
    } else {
        x.abs().powf(e)
    }
}

/// sign(x)·|x|^e, continuous at 0 for e > 0.
#[inline]
pub(crate) fn signed_pow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else if x >= 0.0 {
        x.powf(e)
    } else {
        -((-x).powf(e))
    }
}

/// Smoothed gradient-energy density as a function of s = |∇u|²:
/// (s + ε²)^{(p−2)/2} · s, which tends to s^{p/2} as ε → 0.
#[inline]
fn grad_density(s: f64, e2: f64, p: f64) -> f64 {
    if p == 2.0 {
        return s;
    }
    if s == 0.0 {
        return 0.0;
    }
    (s + e2).powf(0.5 * (p - 2.0)) * s
}

/// Derivative of `grad_density` in s:
/// (s + ε²)^{(p−4)/2} · ((p/2)·s + ε²). Always nonnegative for p > 1.
#[inline]
fn grad_density_deriv(s: f64, e2: f64, p: f64) -> f64 {
    if p == 2.0 {
        return 1.0;
    }
    let base = s + e2;
    if base == 0.0 {
        // Only reachable for p ≥ 2 with ε = 0; the correct limit is 0 for
        // p > 2 (the p = 2 case returned above).
        return 0.0;
    }
    base.powf(0.5 * (p - 4.0)) * (0.5 * p * s + e2)
}

/// Lumped node weights of a cell field: ω_j = Σ_{cells c ∋ j} |c|·f_c / k,
/// so that Σ_c |c| · f_c · avg_c(φ) = Σ_j ω_j φ_j for vertex data φ.
fn lumped_weights(mesh: &Mesh, f: &CellField) -> Vec<f64> {
    let k = mesh.verts_per_cell as f64;
    let mut w = vec![0.0; mesh.n_nodes()];
    for c in 0..mesh.n_cells() {
        let share = mesh.cell_measures[c] * f.values[c] / k;
        for &v in &mesh.cells[c][..mesh.verts_per_cell] {
            w[v] += share;
        }
    }
    w
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// The descent engine, shared by the eigensolver and the Sobolev estimators.

struct ConstraintSpec {
    /// Lumped weights of the constraint density (g for eigensolves, the
    /// unit field for Sobolev constants).
    omega: Vec<f64>,
    /// Homogeneity exponent r of the constraint Σ ω_j |u_j|^r.
    exponent: f64,
}

struct Descent<'a> {
    mesh: &'a Mesh,
    p: f64,
    /// Lumped potential weights (all zeros when there is no potential).
    omega_pot: Vec<f64>,
    /// `None` runs unconstrained minimization (used by the pinned sup-norm
    /// solve); `Some` minimizes the quotient E/N^{p/r} via renormalization.
    constraint: Option<ConstraintSpec>,
    free_nodes: Vec<usize>,
    node_to_free: Vec<usize>,
    bandwidth: usize,
}

struct DescentOutcome {
    u: Vec<f64>,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

impl<'a> Descent<'a> {
    /// `pinned` nodes are held at fixed values (in addition to the
    /// homogeneous boundary); they are excluded from the unknowns.
    fn new(
        mesh: &'a Mesh,
        p: f64,
        omega_pot: Vec<f64>,
        constraint: Option<ConstraintSpec>,
        pinned: &[usize],
    ) -> Self {
        let mut node_to_free = vec![NO_VERTEX; mesh.n_nodes()];
        let mut free_nodes = Vec::new();
        for j in 0..mesh.n_nodes() {
            if !mesh.boundary[j] && !pinned.contains(&j) {
                node_to_free[j] = free_nodes.len();
                free_nodes.push(j);
            }
        }
        let mut bandwidth = 0usize;
        for c in 0..mesh.n_cells() {
            let cell = &mesh.cells[c][..mesh.verts_per_cell];
            for (a, &va) in cell.iter().enumerate() {
                for &vb in &cell[a + 1..] {
                    let (fa, fb) = (node_to_free[va], node_to_free[vb]);
                    if fa != NO_VERTEX && fb != NO_VERTEX {
                        bandwidth = bandwidth.max(fa.abs_diff(fb));
                    }
                }
            }
        }
        Descent { mesh, p, omega_pot, constraint, free_nodes, node_to_free, bandwidth }
    }

    fn cell_grad_sq(&self, u: &[f64], c: usize) -> f64 {
        let g = crate::mesh::cell_gradient(self.mesh, u, c);
        g[0] * g[0] + g[1] * g[1]
    }

    /// Smoothed energy E_ε(u) = Σ_c |c|·f(s_c) + Σ_j ω^V_j |u_j|^p.
    fn energy(&self, u: &[f64], e2: f64) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.mesh.n_cells() {
            acc += self.mesh.cell_measures[c] * grad_density(self.cell_grad_sq(u, c), e2, self.p);
        }
        for (j, &w) in self.omega_pot.iter().enumerate() {
            if w != 0.0 {
                acc += w * abs_pow(u[j], self.p);
            }
        }
        acc
    }

    /// Gradient of the smoothed energy on the free nodes.
    fn energy_gradient(&self, u: &[f64], e2: f64, out: &mut [f64]) {
        out.fill(0.0);
        for c in 0..self.mesh.n_cells() {
            let g = crate::mesh::cell_gradient(self.mesh, u, c);
            let s = g[0] * g[0] + g[1] * g[1];
            let factor = 2.0 * self.mesh.cell_measures[c] * grad_density_deriv(s, e2, self.p);
            if factor == 0.0 {
                continue;
            }
            let basis = &self.mesh.grad_basis[c];
            for (k, &v) in self.mesh.cells[c][..self.mesh.verts_per_cell].iter().enumerate() {
                let f = self.node_to_free[v];
                if f != NO_VERTEX {
                    out[f] += factor * (g[0] * basis[k][0] + g[1] * basis[k][1]);
                }
            }
        }
        let p = self.p;
        for (i, &j) in self.free_nodes.iter().enumerate() {
            let w = self.omega_pot[j];
            if w != 0.0 {
                out[i] += p * w * signed_pow(u[j], p - 1.0);
            }
        }
    }

    fn constraint_value(&self, u: &[f64]) -> f64 {
        let cons = self.constraint.as_ref().expect("constrained mode");
        let mut acc = 0.0;
        for (j, &w) in cons.omega.iter().enumerate() {
            if w != 0.0 {
                acc += w * abs_pow(u[j], cons.exponent);
            }
        }
        acc
    }

    fn constraint_gradient(&self, u: &[f64], out: &mut [f64]) {
        let cons = self.constraint.as_ref().expect("constrained mode");
        let r = cons.exponent;
        for (i, &j) in self.free_nodes.iter().enumerate() {
            out[i] = r * cons.omega[j] * signed_pow(u[j], r - 1.0);
        }
    }

    /// Banded Cholesky factorization of the current weighted stiffness
    /// matrix Σ_c 2|c|·f′(s_c)·⟨b_i, b_j⟩ on the free nodes. Strictly
    /// positive weights make it positive definite; a relative ridge guards
    /// the factorization where the weights are many orders apart.
    fn build_preconditioner(&self, u: &[f64], e2: f64) -> Result<BandedCholesky> {
        let n = self.free_nodes.len();
        let mut a = BandedMatrix::zeros(n, self.bandwidth);
        for c in 0..self.mesh.n_cells() {
            let s = self.cell_grad_sq(u, c);
            let w2 = 2.0 * self.mesh.cell_measures[c] * grad_density_deriv(s, e2, self.p);
            let cell = &self.mesh.cells[c][..self.mesh.verts_per_cell];
            let basis = &self.mesh.grad_basis[c];
            for (k, &va) in cell.iter().enumerate() {
                let fa = self.node_to_free[va];
                if fa == NO_VERTEX {
                    continue;
                }
                for (l, &vb) in cell.iter().enumerate() {
                    let fb = self.node_to_free[vb];
                    if fb == NO_VERTEX || fa < fb {
                        continue;
                    }
                    let dot_b = basis[k][0] * basis[l][0] + basis[k][1] * basis[l][1];
                    a.add(fa, fb, w2 * dot_b);
                }
            }
        }
        let max_diag = (0..n).map(|i| a.get(i, i)).fold(0.0f64, f64::max);
        let ridge = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
        for i in 0..n {
            a.add(i, i, ridge);
        }
        a.cholesky()
    }

    fn renormalize(&self, u: &mut [f64]) -> Result<f64> {
        let cons = self.constraint.as_ref().expect("constrained mode");
        let nv = self.constraint_value(u);
        if !(nv > 0.0) || !nv.is_finite() {
            return Err(Error::NonPositiveNormalization);
        }
        let scale = nv.powf(-1.0 / cons.exponent);
        for x in u.iter_mut() {
            *x *= scale;
        }
        Ok(nv)
    }

    /// Run the level schedule. `u` must satisfy the constraint's positivity
    /// precondition when in constrained mode.
    fn minimize(&self, mut u: Vec<f64>, levels: &[f64], config: &SolverConfig) -> Result<DescentOutcome> {
        let n = self.free_nodes.len();
        let mut history = Vec::new();
        let mut iterations = 0usize;
        let mut converged = false;
        if self.constraint.is_some() {
            self.renormalize(&mut u)?;
        }
        let mut grad = vec![0.0; n];
        let mut gcon = vec![0.0; n];
        let mut resid = vec![0.0; n];
        let mu_ratio = self
            .constraint
            .as_ref()
            .map(|c| self.p / c.exponent)
            .unwrap_or(0.0);

        'levels: for (li, &eps) in levels.iter().enumerate() {
            let e2 = eps * eps;
            let final_level = li + 1 == levels.len();
            let mut precond = self.build_preconditioner(&u, e2)?;
            let mut since_rebuild = 0usize;
            let mut alpha = 1.0f64;
            let mut streak = 0usize;
            let mut best_pgrad = f64::INFINITY;
            let mut since_best = 0usize;
            let mut obj = self.energy(&u, e2);

            loop {
                if iterations >= config.max_iters {
                    return Ok(DescentOutcome { u, iterations, converged: false, history });
                }
                self.energy_gradient(&u, e2, &mut grad);
                if self.constraint.is_some() {
                    let mu = mu_ratio * obj;
                    self.constraint_gradient(&u, &mut gcon);
                    for i in 0..n {
                        resid[i] = grad[i] - mu * gcon[i];
                    }
                } else {
                    resid.copy_from_slice(&grad);
                }
                let z = precond.solve(&resid);
                let pgrad2 = dot(&resid, &z).max(0.0);
                let pgrad = pgrad2.sqrt();
                let tol = config.grad_tol * (1.0 + obj.abs());

                if pgrad <= tol && streak >= config.lambda_streak {
                    if final_level {
                        converged = true;
                    }
                    continue 'levels;
                }
                // Watchdog: once the preconditioned gradient stops making
                // progress for a long stretch, the iterate sits at the
                // numeric floor of this level's landscape.
                if pgrad < 0.99 * best_pgrad {
                    best_pgrad = pgrad;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best > 60 {
                        if final_level {
                            converged = pgrad <= 1e3 * tol;
                        }
                        continue 'levels;
                    }
                }

                // Armijo backtracking along the preconditioned residual.
                // The acceptance test carries a rounding allowance so the
                // search keeps moving once per-step decreases reach the
                // floating-point floor of the energy evaluation.
                let slope = -pgrad2;
                let noise = 1e-14 * (1.0 + obj.abs());
                let mut step = alpha;
                let mut accepted: Option<(Vec<f64>, f64, f64)> = None;
                let eval_at = |s: f64| -> Option<(Vec<f64>, f64)> {
                    let mut trial = u.clone();
                    for (i, &j) in self.free_nodes.iter().enumerate() {
                        trial[j] -= s * z[i];
                    }
                    if self.constraint.is_some() {
                        // Sign freedom of the eigenproblem: fold to the
                        // nonnegative representative before renormalizing.
                        for &j in &self.free_nodes {
                            trial[j] = trial[j].abs();
                        }
                        if self.renormalize(&mut trial).is_err() {
                            return None;
                        }
                    }
                    let t_obj = self.energy(&trial, e2);
                    t_obj.is_finite().then_some((trial, t_obj))
                };
                for _ in 0..=config.max_backtracks {
                    match eval_at(step) {
                        Some((trial, t_obj))
                            if t_obj <= obj + config.armijo_c1 * step * slope + noise =>
                        {
                            accepted = Some((trial, t_obj, step));
                            break;
                        }
                        _ => step *= 0.5,
                    }
                }
                // Armijo alone can lock onto an overlong step whose decrease
                // is real but dominated by the low-frequency error, leaving
                // the high-frequency modes barely contracted; greedily probe
                // halved steps and keep the lowest-energy candidate.
                if let Some((_, a_obj, a_step)) = &accepted {
                    let (mut b_obj, mut b_step) = (*a_obj, *a_step);
                    let mut better = None;
                    for _ in 0..4 {
                        let s = 0.5 * b_step;
                        match eval_at(s) {
                            Some((trial, t_obj)) if t_obj < b_obj => {
                                b_obj = t_obj;
                                b_step = s;
                                better = Some((trial, t_obj, s));
                            }
                            _ => break,
                        }
                    }
                    if better.is_some() {
                        accepted = better;
                    }
                }

                match accepted {
                    Some((trial, t_obj, step)) => {
                        u = trial;
                        let dl = (t_obj - obj).abs();
                        obj = t_obj;
                        history.push(obj);
                        iterations += 1;
                        since_rebuild += 1;
                        alpha = (2.0 * step).min(1e8);
                        if dl <= config.lambda_tol * (1.0 + obj.abs()) {
                            streak += 1;
                        } else {
                            streak = 0;
                        }
                        if since_rebuild >= config.rebuild_every {
                            precond = self.build_preconditioner(&u, e2)?;
                            since_rebuild = 0;
                        }
                    }
                    None => {
                        if since_rebuild > 0 {
                            // The lagged metric may be stale; refresh it
                            // and retry before giving up on the level.
                            precond = self.build_preconditioner(&u, e2)?;
                            since_rebuild = 0;
                            alpha = 1.0;
                            continue;
                        }
                        // No achievable decrease at machine precision.
                        if final_level {
                            converged = pgrad <= 1e3 * tol;
                        }
                        continue 'levels;
                    }
                }
            }
        }
        Ok(DescentOutcome { u, iterations, converged, history })
    }
}

// ---------------------------------------------------------------------------
// Public operations.

/// The quotient (∫|∇u|^p + V|u|^p) / ∫ g|u|^p with the module quadrature.
pub fn rayleigh_quotient(mesh: &Mesh, problem: &ProblemData, u: &NodeField) -> Result<f64> {
    problem.validate(mesh)?;
    u.validate(mesh)?;
    let descent = Descent::new(
        mesh,
        problem.p,
        lumped_weights(mesh, &problem.v),
        Some(ConstraintSpec { omega: lumped_weights(mesh, &problem.g), exponent: problem.p }),
        &[],
    );
    let denom = descent.constraint_value(&u.values);
    if !(denom > 0.0) {
        return Err(Error::NonPositiveNormalization);
    }
    Ok(descent.energy(&u.values, 0.0) / denom)
}

/// Builds the default initial iterate: the lumped positive part of the
/// weight, a bump supported where the constraint density is positive (so
/// its weighted norm is positive by construction), optionally randomized.
fn initial_iterate(
    mesh: &Mesh,
    g: &CellField,
    omega_g: &[f64],
    free_nodes: &[usize],
    exponent: f64,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let n_value = |u: &[f64]| -> f64 {
        omega_g
            .iter()
            .zip(u)
            .map(|(&w, &x)| w * abs_pow(x, exponent))
            .sum()
    };
    let mut u = vec![0.0; mesh.n_nodes()];
    for &j in free_nodes {
        u[j] = omega_g[j].max(0.0);
    }
    if config.randomize {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        for &j in free_nodes {
            let noise = 1.0 + 0.5 * rng.gen::<f64>();
            if u[j] > 0.0 {
                u[j] *= noise;
            }
        }
    }
    if n_value(&u) > 0.0 {
        return Ok(u);
    }
    // The lumped weights can all be nonpositive even when the field has
    // positive cells (cancellation from strongly negative neighbours).
    // Fall back to indicators of the positive cells, best first.
    let mut positive: Vec<usize> =
        (0..mesh.n_cells()).filter(|&c| g.values[c] > 0.0).collect();
    positive.sort_by(|&a, &b| g.values[b].total_cmp(&g.values[a]).then(a.cmp(&b)));
    for c in positive {
        let mut v = vec![0.0; mesh.n_nodes()];
        for &j in &mesh.cells[c][..mesh.verts_per_cell] {
            if !mesh.boundary[j] {
                v[j] = 1.0;
            }
        }
        if n_value(&v) > 0.0 {
            return Ok(v);
        }
    }
    Err(Error::NoInitialIterate)
}

/// Computes the principal eigenpair by smoothed preconditioned descent.
///
/// Preconditions checked here: valid exponents and sizes, equal-measure
/// mesh, and a weight with a positive part. The full admissibility report
/// (Sobolev constants, coercivity margin) is the caller's business via
/// [`check_hypotheses`]; it costs two auxiliary solves and is therefore not
/// repeated inside every eigensolve.
pub fn solve_principal(mesh: &Mesh, problem: &ProblemData, config: &SolverConfig) -> Result<EigenResult> {
    solve_with_start(mesh, problem, config, None)
}

/// Like [`solve_principal`], but starts from a caller-supplied iterate and
/// runs only the final smoothing level. Intended for re-solving after a
/// small perturbation of the coefficients (finite-difference derivative
/// checks, the alternating optimizer), where continuation from scratch
/// would be wasted work.
pub fn solve_principal_from(
    mesh: &Mesh,
    problem: &ProblemData,
    config: &SolverConfig,
    start: &NodeField,
) -> Result<EigenResult> {
    start.validate(mesh)?;
    solve_with_start(mesh, problem, config, Some(start))
}

fn solve_with_start(
    mesh: &Mesh,
    problem: &ProblemData,
    config: &SolverConfig,
    start: Option<&NodeField>,
) -> Result<EigenResult> {
    problem.validate(mesh)?;
    config.validate(problem.p)?;
    mesh.validate()?;
    if !mesh.equal_measure() {
        return Err(Error::UnequalMeasure);
    }
    if !problem.g.values.iter().any(|&v| v > 0.0) {
        return Err(Error::Admissibility(
            "the weight g must be positive on at least one cell".into(),
        ));
    }
    let omega_g = lumped_weights(mesh, &problem.g);
    let omega_v = lumped_weights(mesh, &problem.v);
    let descent = Descent::new(
        mesh,
        problem.p,
        omega_v,
        Some(ConstraintSpec { omega: omega_g.clone(), exponent: problem.p }),
        &[],
    );

    let (u0, levels) = match start {
        Some(s) => {
            let mut u0: Vec<f64> = s.values.iter().map(|x| x.abs()).collect();
            for (j, x) in u0.iter_mut().enumerate() {
                if mesh.boundary[j] {
                    *x = 0.0;
                }
            }
            let n: f64 = omega_g
                .iter()
                .zip(&u0)
                .map(|(&w, &x)| w * abs_pow(x, problem.p))
                .sum();
            if n > 0.0 {
                (u0, vec![config.eps_min])
            } else {
                (
                    initial_iterate(mesh, &problem.g, &omega_g, &descent.free_nodes, problem.p, config)?,
                    config.levels(problem.p, mesh.diameter()),
                )
            }
        }
        None => (
            initial_iterate(mesh, &problem.g, &omega_g, &descent.free_nodes, problem.p, config)?,
            config.levels(problem.p, mesh.diameter()),
        ),
    };

    let outcome = descent.minimize(u0, &levels, config)?;
    let epsilon_final = *levels.last().expect("nonempty schedule");
    let u = NodeField { values: outcome.u, dirichlet: true };
    let n = descent.constraint_value(&u.values);
    if !(n > 0.0) {
        return Err(Error::NonPositiveNormalization);
    }
    let lambda = descent.energy(&u.values, 0.0) / n;
    let lambda_epsilon = descent.energy(&u.values, epsilon_final * epsilon_final) / n;
    let residual = pde_residual(mesh, problem, lambda, &u)?;
    Ok(EigenResult {
        lambda,
        lambda_epsilon,
        u,
        residual,
        normalization_defect: (n - 1.0).abs(),
        iterations: outcome.iterations,
        epsilon_final,
        converged: outcome.converged,
        lambda_history: outcome.history,
    })
}

/// Euclidean norm of the discrete weak-form residual of
/// −Δ_p u + V|u|^{p−2}u = λ g|u|^{p−2}u over the interior nodes,
/// assembled with the unsmoothed integrand.
pub fn pde_residual(mesh: &Mesh, problem: &ProblemData, lambda: f64, u: &NodeField) -> Result<f64> {
    problem.validate(mesh)?;
    u.validate(mesh)?;
    let p = problem.p;
    let omega_g = lumped_weights(mesh, &problem.g);
    let omega_v = lumped_weights(mesh, &problem.v);
    let mut r = vec![0.0; mesh.n_nodes()];
    for c in 0..mesh.n_cells() {
        let g = crate::mesh::cell_gradient(mesh, &u.values, c);
        let s = g[0] * g[0] + g[1] * g[1];
        if s == 0.0 {
            continue;
        }
        let factor = mesh.cell_measures[c] * p * s.powf(0.5 * (p - 2.0));
        let basis = &mesh.grad_basis[c];
        for (k, &v) in mesh.cells[c][..mesh.verts_per_cell].iter().enumerate() {
            r[v] += factor * (g[0] * basis[k][0] + g[1] * basis[k][1]);
        }
    }
    let mut norm2 = 0.0;
    for j in 0..mesh.n_nodes() {
        if mesh.boundary[j] {
            continue;
        }
        let zero_order = p * (omega_v[j] - lambda * omega_g[j]) * signed_pow(u.values[j], p - 1.0);
        let rj = r[j] + zero_order;
        norm2 += rj * rj;
    }
    Ok(norm2.sqrt())
}

/// Estimates S_r: the infimum of ∫|∇u|^p over Dirichlet fields with unit
/// L^r norm (unit sup norm for [`SobolevExponent::Sup`]).
///
/// Finite exponents run the same constrained descent as the eigensolver
/// with the unit weight and constraint exponent r. The sup-norm case pins
/// the value 1 at the most central interior node and minimizes the
/// unconstrained p-Dirichlet energy; if the minimizer's maximum migrates
/// off the pin, the pin follows it (at most a handful of re-pins, by the
/// discrete maximum principle on these non-obtuse meshes).
pub fn estimate_sobolev_constant(
    mesh: &Mesh,
    p: f64,
    r: SobolevExponent,
    config: &SolverConfig,
) -> Result<SobolevEstimate> {
    config.validate(p)?;
    mesh.validate()?;
    if !(p > 1.0) {
        return Err(Error::BadSobolevExponent(format!("p must exceed 1, got {p}")));
    }
    let n = mesh.dimension as f64;
    match r {
        SobolevExponent::Sup => {
            if p <= n {
                return Err(Error::BadSobolevExponent(format!(
                    "sup-norm constraint needs p > dimension (p = {p}, dimension = {n})"
                )));
            }
            estimate_sup_constant(mesh, p, config)
        }
        SobolevExponent::Finite(rv) => {
            if !(rv >= 1.0) {
                return Err(Error::BadSobolevExponent(format!(
                    "constraint exponent must be at least 1, got {rv}"
                )));
            }
            if p < n {
                let critical = n * p / (n - p);
                if rv >= critical {
                    return Err(Error::BadSobolevExponent(format!(
                        "constraint exponent {rv} is not below the critical exponent {critical}"
                    )));
                }
            }
            let ones = CellField::constant(mesh, 1.0);
            let omega = lumped_weights(mesh, &ones);
            let descent = Descent::new(
                mesh,
                p,
                vec![0.0; mesh.n_nodes()],
                Some(ConstraintSpec { omega: omega.clone(), exponent: rv }),
                &[],
            );
            let u0 = initial_iterate(mesh, &ones, &omega, &descent.free_nodes, rv, config)?;
            let levels = config.levels(p, mesh.diameter());
            let outcome = descent.minimize(u0, &levels, config)?;
            let u = NodeField { values: outcome.u, dirichlet: true };
            let nv = descent.constraint_value(&u.values);
            if !(nv > 0.0) {
                return Err(Error::NonPositiveNormalization);
            }
            let value = descent.energy(&u.values, 0.0) / nv.powf(p / rv);
            Ok(SobolevEstimate { value, u, iterations: outcome.iterations, converged: outcome.converged })
        }
    }
}

fn estimate_sup_constant(mesh: &Mesh, p: f64, config: &SolverConfig) -> Result<SobolevEstimate> {
    // Pin at the interior node closest to the domain center.
    let center = [
        0.5 * (mesh.extents[0][0] + mesh.extents[0][1]),
        0.5 * (mesh.extents[1][0] + mesh.extents[1][1]),
    ];
    let mut pin = NO_VERTEX;
    let mut best = f64::INFINITY;
    for j in 0..mesh.n_nodes() {
        if mesh.boundary[j] {
            continue;
        }
        let d = (mesh.nodes[j][0] - center[0]).hypot(mesh.nodes[j][1] - center[1]);
        if d < best {
            best = d;
            pin = j;
        }
    }
    if pin == NO_VERTEX {
        return Err(Error::ResolutionTooSmall(mesh.resolution[0]));
    }
    let levels = config.levels(p, mesh.diameter());
    let mut iterations = 0;
    let mut last: Option<(Descent, DescentOutcome)> = None;
    for _ in 0..5 {
        let descent = Descent::new(mesh, p, vec![0.0; mesh.n_nodes()], None, &[pin]);
        let mut u0 = vec![0.0; mesh.n_nodes()];
        u0[pin] = 1.0;
        if let Some((_, prev)) = &last {
            // Carry the previous minimizer over, rescaled to honor the pin.
            let peak = prev.u[pin];
            if peak > 0.0 {
                u0 = prev.u.iter().map(|&x| x / peak).collect();
                u0[pin] = 1.0;
            }
        }
        let outcome = descent.minimize(u0, &levels, config)?;
        iterations += outcome.iterations;
        // If the energy minimizer exceeds its pinned value elsewhere, the
        // true sup-constrained optimum peaks at that node instead.
        let (mut arg, mut peak) = (pin, 1.0f64);
        for j in 0..mesh.n_nodes() {
            if outcome.u[j].abs() > peak * (1.0 + 1e-9) {
                peak = outcome.u[j].abs();
                arg = j;
            }
        }
        let done = arg == pin;
        last = Some((descent, outcome));
        if done {
            break;
        }
        pin = arg;
    }
    let (descent, outcome) = last.expect("at least one pinned solve");
    let u = NodeField { values: outcome.u, dirichlet: true };
    let peak = u.values.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let value = descent.energy(&u.values, 0.0) / peak.powf(p);
    Ok(SobolevEstimate { value, u, iterations, converged: outcome.converged })
}

/// ‖V⁻‖_{L^q} by exact quadrature. The per-cell terms are summed in sorted
/// order, so the result is bitwise identical across rearrangements of V.
pub fn v_minus_norm(mesh: &Mesh, v: &CellField, q: f64) -> Result<f64> {
    v.validate(mesh)?;
    let mut terms: Vec<f64> = (0..mesh.n_cells())
        .map(|c| mesh.cell_measures[c] * (-v.values[c]).max(0.0).powf(q))
        .collect();
    terms.sort_by(f64::total_cmp);
    let total: f64 = terms.iter().sum();
    Ok(total.powf(1.0 / q))
}

/// Evaluates the admissibility conditions: the (H1) exponent arithmetic
/// and the (H2) coercivity alternatives, reporting the Sobolev constants
/// and the margin δ₀. Runs two auxiliary minimizations (for S_p and
/// S_{pq′}), so this is an explicit check, not an implicit precondition of
/// every solve. Failures are carried in the report, never as errors.
pub fn check_hypotheses(mesh: &Mesh, problem: &ProblemData, config: &SolverConfig) -> Result<HypothesisReport> {
    problem.g.validate(mesh)?;
    problem.v.validate(mesh)?;
    let p = problem.p;
    let q = problem.q;
    let h1_ok = problem.h1_holds(mesh.dimension);
    let g_plus_ok = problem.g.values.iter().any(|&v| v > 0.0);
    let v_min = problem.v.min();
    let vnorm = if q >= 1.0 { v_minus_norm(mesh, &problem.v, q)? } else { f64::NAN };

    if !h1_ok || !g_plus_ok {
        return Ok(HypothesisReport {
            h1_ok,
            h2_branch: H2Branch::Fail,
            s_p: None,
            s_pq_prime: None,
            v_minus_norm: vnorm,
            v_min,
            delta0: 0.0,
        });
    }

    let s_p = estimate_sobolev_constant(mesh, p, SobolevExponent::Finite(p), config)?.value;
    let r = if q == 1.0 {
        SobolevExponent::Sup
    } else {
        SobolevExponent::Finite(p * q / (q - 1.0))
    };
    let s_pq_prime = estimate_sobolev_constant(mesh, p, r, config)?.value;

    let norm_margin = 1.0 - vnorm / s_pq_prime;
    let lower_margin = (v_min + s_p) / s_p;
    let (branch, delta0) = if norm_margin > 0.0 {
        (H2Branch::NormBound, norm_margin)
    } else if lower_margin > 0.0 {
        (H2Branch::LowerBound, lower_margin)
    } else {
        (H2Branch::Fail, norm_margin.max(lower_margin))
    };
    Ok(HypothesisReport {
        h1_ok,
        h2_branch: branch,
        s_p: Some(s_p),
        s_pq_prime: Some(s_pq_prime),
        v_minus_norm: vnorm,
        v_min,
        delta0,
    })
}
