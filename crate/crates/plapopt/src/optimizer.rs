//! Minimization of the principal eigenvalue over rearrangement classes.
//!
//! Fix reference fields g₀ and V₀; their rearrangement classes are the
//! cell fields sharing the same value multisets. This module minimizes
//! λ(g, V) over the product of the two classes by alternating descent:
//!
//! 1. solve the eigenproblem for the current pair (g_k, V_k);
//! 2. form the cell field w = cell-average of u_k^p;
//! 3. replace g with the class element comonotone with w (maximizing
//!    ∫ g w — the eigenvalue's denominator) and V with the element
//!    anti-comonotone with w (minimizing ∫ V w — part of the numerator);
//! 4. stop at the first iteration with zero changed cells, the discrete
//!    fixed point where g is an increasing and V a decreasing function of
//!    the eigenfunction density.
//!
//! Each sort weakly decreases the Rayleigh quotient of the *current* u
//! provided the quotient's numerator is positive — exactly what the
//! coercivity margin δ₀ > 0 of the admissibility check guarantees, and δ₀
//! is invariant under rearrangement, so one check at the initial
//! assignment covers the whole run. The next eigensolve is warm-started
//! from u_k and minimizes the quotient further, making the λ-history
//! monotone by construction rather than by luck.
//!
//! Certificates: class preservation is exact (sorting permutes the stored
//! multiset), comonotonicity defects of the final pair are zero at a fixed
//! point by construction, and stationarity can be probed post hoc with
//! divergence-free deformation fields via [`verify_optimality`]. A
//! brute-force enumerator covers tiny instances as an end-to-end oracle.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::derivative::derivative_hadamard;
use crate::eigen::{
    check_hypotheses, solve_principal, solve_principal_from, EigenResult, ProblemData,
    SolverConfig,
};
use crate::flow::DeformationField;
use crate::mesh::{cell_average_abs_pow, CellField, Mesh, NodeField};
use crate::rearrangement::{
    comonotonicity_defect, extremal_rearrangement, in_class, Extremum, RearrangementClass,
};
use crate::{Error, Result};

/// Optimizer knobs. The initial assignment defaults to the canonical
/// (value-sorted) representative of each class; tests of starting-point
/// independence override it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    /// Iteration cap; the loop normally exits earlier at a fixed point.
    pub max_iters: usize,
    /// Starting g assignment (must lie in the g class).
    #[serde(skip)]
    pub initial_g: Option<CellField>,
    /// Starting V assignment (must lie in the V class).
    #[serde(skip)]
    pub initial_v: Option<CellField>,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig { max_iters: 200, initial_g: None, initial_v: None }
    }
}

/// Cells changed by one iteration's rearrangements (a transposition
/// touches two cells).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SwapCounts {
    pub g: usize,
    pub v: usize,
}

/// The final iterate of the alternating loop, with its full trace. All
/// fields describe one coherent iterate: `lambda` and `u` solve the
/// eigenproblem for exactly this (`g`, `v`) pair.
#[derive(Clone, Debug)]
pub struct OptState {
    /// Number of eigensolves performed.
    pub iteration: usize,
    pub g: CellField,
    pub v: CellField,
    pub lambda: f64,
    pub u: NodeField,
    /// λ_k for each iteration, nonincreasing.
    pub lambda_history: Vec<f64>,
    /// Changed-cell counts per iteration; a trailing (0, 0) entry is the
    /// fixed-point certificate.
    pub swap_history: Vec<SwapCounts>,
}

/// Output of [`alternate_minimize`].
#[derive(Clone, Debug)]
pub struct OptResult {
    pub state: OptState,
    /// True when the loop reached a fixed point within the cap.
    pub converged: bool,
    /// Comonotonicity defect of g with the eigenfunction density (0 at a
    /// fixed point).
    pub comonotonicity_g: f64,
    /// Anti-comonotonicity defect of V with the density (0 at a fixed
    /// point).
    pub comonotonicity_v: f64,
    /// Max |Hadamard derivative| over probe fields; filled by
    /// [`verify_optimality`], absent until then.
    pub stationarity: Option<f64>,
    pub p: f64,
    pub q: f64,
    /// The final eigensolve (same λ and u as the state, plus diagnostics).
    pub eig: EigenResult,
}

/// Stationarity and monotone-coupling certificates for a converged run.
#[derive(Clone, Debug, Serialize)]
pub struct OptimalityReport {
    pub comonotonicity_g: f64,
    pub comonotonicity_v: f64,
    /// max over probes of |derivative_hadamard|.
    pub stationarity: f64,
    pub per_probe: Vec<f64>,
    pub pass: bool,
}

fn changed_cells(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Alternating minimization of λ over R(g₀) × R(V₀).
///
/// The initial assignment must pass the admissibility check; since every
/// quantity in that check is rearrangement-invariant, admissibility then
/// holds along the entire trajectory.
pub fn alternate_minimize(
    mesh: &Mesh,
    p: f64,
    q: f64,
    g_class: &RearrangementClass,
    v_class: &RearrangementClass,
    solver: &SolverConfig,
    opt: &OptConfig,
) -> Result<OptResult> {
    mesh.validate()?;
    if opt.max_iters == 0 {
        return Err(Error::Config("optimizer iteration cap must be positive".into()));
    }
    if g_class.n_cells() != mesh.n_cells() {
        return Err(Error::SizeMismatch { expected: mesh.n_cells(), got: g_class.n_cells() });
    }
    if v_class.n_cells() != mesh.n_cells() {
        return Err(Error::SizeMismatch { expected: mesh.n_cells(), got: v_class.n_cells() });
    }
    let mut g = match &opt.initial_g {
        Some(f) => {
            if !in_class(mesh, g_class, f)? {
                return Err(Error::Admissibility(
                    "initial g assignment is not a rearrangement of the g class".into(),
                ));
            }
            f.clone()
        }
        None => g_class.canonical_field(),
    };
    let mut v = match &opt.initial_v {
        Some(f) => {
            if !in_class(mesh, v_class, f)? {
                return Err(Error::Admissibility(
                    "initial V assignment is not a rearrangement of the V class".into(),
                ));
            }
            f.clone()
        }
        None => v_class.canonical_field(),
    };

    let initial = ProblemData::new(p, q, g.clone(), v.clone());
    let hypotheses = check_hypotheses(mesh, &initial, solver)?;
    if !hypotheses.passes() {
        return Err(Error::Admissibility(format!(
            "initial assignment fails admissibility (h1_ok = {}, branch = {:?}, delta0 = {}); \
             the margin is rearrangement-invariant, so no assignment in these classes passes",
            hypotheses.h1_ok, hypotheses.h2_branch, hypotheses.delta0
        )));
    }

    let mut lambda_history = Vec::new();
    let mut swap_history = Vec::new();
    let mut previous: Option<EigenResult> = None;
    let mut converged = false;
    let mut iteration = 0;

    while iteration < opt.max_iters {
        iteration += 1;
        let problem = ProblemData::new(p, q, g.clone(), v.clone());
        let eig = match &previous {
            Some(prev) => solve_principal_from(mesh, &problem, solver, &prev.u)?,
            None => solve_principal(mesh, &problem, solver)?,
        };
        if !eig.converged {
            return Err(Error::NotConverged(format!(
                "eigensolve did not converge at optimizer iteration {iteration}"
            )));
        }
        lambda_history.push(eig.lambda);
        let w = cell_average_abs_pow(mesh, &eig.u, p);
        let g_next = extremal_rearrangement(mesh, g_class, &w, Extremum::Max)?;
        let v_next = extremal_rearrangement(mesh, v_class, &w, Extremum::Min)?;
        let swaps = SwapCounts {
            g: changed_cells(&g.values, &g_next.values),
            v: changed_cells(&v.values, &v_next.values),
        };
        swap_history.push(swaps);
        previous = Some(eig);
        if swaps.g == 0 && swaps.v == 0 {
            converged = true;
            break;
        }
        g = g_next;
        v = v_next;
    }

    let eig = previous.expect("the cap is positive, so at least one solve ran");
    let w = cell_average_abs_pow(mesh, &eig.u, p);
    let comonotonicity_g = comonotonicity_defect(mesh, &g, &w, 1.0)?;
    let comonotonicity_v = comonotonicity_defect(mesh, &v, &w, -1.0)?;
    Ok(OptResult {
        state: OptState {
            iteration,
            g,
            v,
            lambda: eig.lambda,
            u: eig.u.clone(),
            lambda_history,
            swap_history,
        },
        converged,
        comonotonicity_g,
        comonotonicity_v,
        stationarity: None,
        p,
        q,
        eig,
    })
}

/// Post-hoc optimality certificates: recomputes the comonotonicity defects
/// from the stored iterate and probes stationarity with divergence-free
/// fields through the Hadamard derivative. Passing means the iterate is a
/// discrete fixed point whose one-sided derivatives vanish to tolerance.
pub fn verify_optimality(
    mesh: &Mesh,
    result: &OptResult,
    probes: &[DeformationField],
    stationarity_tol: f64,
) -> Result<OptimalityReport> {
    if !result.converged {
        return Err(Error::NotConverged(
            "optimality verification requires a converged optimization".into(),
        ));
    }
    let w = cell_average_abs_pow(mesh, &result.eig.u, result.p);
    let comonotonicity_g = comonotonicity_defect(mesh, &result.state.g, &w, 1.0)?;
    let comonotonicity_v = comonotonicity_defect(mesh, &result.state.v, &w, -1.0)?;
    let problem = ProblemData::new(
        result.p,
        result.q,
        result.state.g.clone(),
        result.state.v.clone(),
    );
    let mut per_probe = Vec::with_capacity(probes.len());
    for probe in probes {
        per_probe.push(derivative_hadamard(mesh, &problem, &result.eig, probe)?.abs());
    }
    let stationarity = per_probe.iter().fold(0.0f64, |m, &x| m.max(x));
    Ok(OptimalityReport {
        comonotonicity_g,
        comonotonicity_v,
        stationarity,
        per_probe,
        pass: comonotonicity_g == 0.0 && comonotonicity_v == 0.0 && stationarity <= stationarity_tol,
    })
}

/// Reproducible divergence-free probe fields for stationarity checks:
/// stream-function bumps with random centers, radii, and signed strengths,
/// all supported strictly inside the mesh. 2D only — no nonzero compactly
/// supported divergence-free field exists on an interval.
pub fn random_stream_probes(mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<DeformationField>> {
    if mesh.dimension != 2 {
        return Err(Error::BadDimension(mesh.dimension));
    }
    let [ax, bx] = mesh.extents[0];
    let [ay, by] = mesh.extents[1];
    let min_extent = (bx - ax).min(by - ay);
    let h = mesh.h_max();
    let r_max = 0.2 * min_extent;
    if r_max + 2.0 * h >= 0.5 * min_extent {
        return Err(Error::Config(format!(
            "mesh too coarse for interior probe placement (spacing {h})"
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(count);
    for _ in 0..count {
        let radius = rng.gen_range(0.6 * r_max..r_max);
        let margin = radius + 2.0 * h;
        let center = [
            rng.gen_range(ax + margin..bx - margin),
            rng.gen_range(ay + margin..by - margin),
        ];
        let magnitude = rng.gen_range(0.5..1.5);
        let strength = if rng.gen::<bool>() { magnitude } else { -magnitude };
        let field = DeformationField::StreamBump { center, radius, strength };
        field.validate_support(mesh)?;
        probes.push(field);
    }
    Ok(probes)
}

/// Exhaustive minimum of λ over all distinct assignment pairs of two
/// classes.
#[derive(Clone, Debug)]
pub struct BruteForceResult {
    pub lambda: f64,
    pub g: CellField,
    pub v: CellField,
    /// Distinct (g, V) pairs enumerated.
    pub assignments: usize,
}

/// All distinct permutations of a multiset (ascending input), in
/// lexicographic order.
fn distinct_permutations(sorted: &[f64]) -> Vec<Vec<f64>> {
    let mut current = sorted.to_vec();
    let mut out = vec![current.clone()];
    // Standard next-permutation loop; duplicates collapse because equal
    // neighbours never produce a strictly larger arrangement.
    loop {
        let Some(i) = (0..current.len().saturating_sub(1))
            .rev()
            .find(|&i| current[i] < current[i + 1])
        else {
            break;
        };
        let j = (i + 1..current.len())
            .rev()
            .find(|&j| current[j] > current[i])
            .expect("a successor exists to the right of a strict ascent");
        current.swap(i, j);
        current[i + 1..].reverse();
        out.push(current.clone());
    }
    out
}

/// Enumerates every assignment pair and solves each eigenproblem from
/// scratch — the ground-truth oracle for tiny instances. Refuses instances
/// with more than `max_assignments` pairs.
pub fn brute_force_minimum(
    mesh: &Mesh,
    p: f64,
    q: f64,
    g_class: &RearrangementClass,
    v_class: &RearrangementClass,
    solver: &SolverConfig,
    max_assignments: usize,
) -> Result<BruteForceResult> {
    let g_perms = distinct_permutations(&g_class.sorted_values);
    let v_perms = distinct_permutations(&v_class.sorted_values);
    let total = g_perms.len() * v_perms.len();
    if total > max_assignments {
        return Err(Error::Config(format!(
            "brute force over {total} assignments exceeds the cap of {max_assignments}"
        )));
    }
    let mut best: Option<BruteForceResult> = None;
    for gv in &g_perms {
        for vv in &v_perms {
            let problem =
                ProblemData::new(p, q, CellField::new(gv.clone()), CellField::new(vv.clone()));
            let eig = solve_principal(mesh, &problem, solver)?;
            if !eig.converged {
                return Err(Error::NotConverged(
                    "brute-force eigensolve hit the iteration cap".into(),
                ));
            }
            if best.as_ref().is_none_or(|b| eig.lambda < b.lambda) {
                best = Some(BruteForceResult {
                    lambda: eig.lambda,
                    g: problem.g,
                    v: problem.v,
                    assignments: total,
                });
            }
        }
    }
    best.ok_or_else(|| Error::Config("empty rearrangement class".into()))
}
