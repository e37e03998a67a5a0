//! Compactly supported deformation fields, their flows, and transport of
//! cell data along those flows.
//!
//! Every field carries analytic value, Jacobian, and divergence, so callers
//! never need numerical differentiation of the field itself (the tests do
//! differentiate numerically, to validate the hand-written Jacobians).
//! Flows are integrated with classical fourth-order Runge-Kutta; for an
//! autonomous field the inverse flow is the flow of the negated field.
//!
//! Fields vanish outside a ball strictly inside the domain. Trajectories
//! therefore never leave the closure of the support, and cells outside it
//! are fixed by transport exactly.

use crate::mesh::{CellField, Mesh};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fraction of the bump radius over which the profile is identically 1.
const PLATEAU: f64 = 0.4;

/// Quintic smoothstep: 0 -> 1 on [0, 1] with vanishing first and second
/// derivatives at both ends (C^2 glue for the bump profiles).
fn smoothstep(t: f64) -> f64 {
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn smoothstep_deriv(t: f64) -> f64 {
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// Plateau bump: 1 on [0, PLATEAU], smooth descent to 0 at 1, 0 beyond.
fn bump(rho: f64) -> f64 {
    if rho <= PLATEAU {
        1.0
    } else if rho >= 1.0 {
        0.0
    } else {
        1.0 - smoothstep((rho - PLATEAU) / (1.0 - PLATEAU))
    }
}

fn bump_deriv(rho: f64) -> f64 {
    if rho <= PLATEAU || rho >= 1.0 {
        0.0
    } else {
        -smoothstep_deriv((rho - PLATEAU) / (1.0 - PLATEAU)) / (1.0 - PLATEAU)
    }
}

/// A smooth velocity field with compact support.
///
/// `Sum` and `Scale` form linear combinations, which the derivative tests
/// use to probe linearity; all leaves are closed-form families.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeformationField {
    /// The zero field (its flow is the identity).
    Zero { dim: usize },
    /// Divergence-free 2D field generated by the stream function
    /// `psi = strength * (1 - |x-center|^2/radius^2)^4` inside the ball.
    StreamBump { center: [f64; 2], radius: f64, strength: f64 },
    /// Rigid clockwise rotation about `center` inside `core_radius`,
    /// smoothly cut off to zero at `outer_radius`. Divergence-free.
    Rotation { center: [f64; 2], core_radius: f64, outer_radius: f64, strength: f64 },
    /// Translation along `direction`, modulated by a plateau bump: on the
    /// plateau the flow is an exact uniform translation.
    Translate {
        dim: usize,
        center: [f64; 2],
        radius: f64,
        strength: f64,
        direction: [f64; 2],
    },
    /// Radial expansion (`strength > 0`) or compression about `center`,
    /// modulated by a plateau bump. Not divergence-free.
    Expand { dim: usize, center: [f64; 2], radius: f64, strength: f64 },
    /// Pointwise sum of two fields of the same dimension.
    Sum { left: Box<DeformationField>, right: Box<DeformationField> },
    /// Scalar multiple of a field.
    Scale { factor: f64, field: Box<DeformationField> },
}

impl DeformationField {
    pub fn dim(&self) -> usize {
        match self {
            DeformationField::Zero { dim } => *dim,
            DeformationField::StreamBump { .. } | DeformationField::Rotation { .. } => 2,
            DeformationField::Translate { dim, .. } | DeformationField::Expand { dim, .. } => *dim,
            DeformationField::Sum { left, .. } => left.dim(),
            DeformationField::Scale { field, .. } => field.dim(),
        }
    }

    /// Structural checks: dimensions agree, radii are ordered, directions
    /// are nonzero, 1D fields have no transverse component.
    pub fn validate(&self) -> Result<()> {
        match self {
            DeformationField::Zero { dim } => {
                if *dim != 1 && *dim != 2 {
                    return Err(Error::BadDimension(*dim));
                }
            }
            DeformationField::StreamBump { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::Config("stream bump radius must be positive".into()));
                }
            }
            DeformationField::Rotation { core_radius, outer_radius, .. } => {
                if !(0.0 < *core_radius && *core_radius < *outer_radius) {
                    return Err(Error::Config(
                        "rotation needs 0 < core_radius < outer_radius".into(),
                    ));
                }
            }
            DeformationField::Translate { dim, radius, direction, center, .. } => {
                if *dim != 1 && *dim != 2 {
                    return Err(Error::BadDimension(*dim));
                }
                if !(*radius > 0.0) {
                    return Err(Error::Config("translate radius must be positive".into()));
                }
                let norm = direction[0].hypot(direction[1]);
                if !(norm > 0.0) {
                    return Err(Error::Config("translate direction must be nonzero".into()));
                }
                if *dim == 1 && (direction[1] != 0.0 || center[1] != 0.0) {
                    return Err(Error::Config(
                        "1D translate must have direction and center on the axis".into(),
                    ));
                }
            }
            DeformationField::Expand { dim, radius, center, .. } => {
                if *dim != 1 && *dim != 2 {
                    return Err(Error::BadDimension(*dim));
                }
                if !(*radius > 0.0) {
                    return Err(Error::Config("expand radius must be positive".into()));
                }
                if *dim == 1 && center[1] != 0.0 {
                    return Err(Error::Config("1D expand center must lie on the axis".into()));
                }
            }
            DeformationField::Sum { left, right } => {
                left.validate()?;
                right.validate()?;
                if left.dim() != right.dim() {
                    return Err(Error::DimensionMismatch {
                        mesh: left.dim(),
                        field: right.dim(),
                    });
                }
            }
            DeformationField::Scale { field, .. } => field.validate()?,
        }
        Ok(())
    }

    /// Velocity at a point (second component is 0 for 1D fields).
    pub fn value(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            DeformationField::Zero { .. } => [0.0, 0.0],
            DeformationField::StreamBump { center, radius, strength } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let r2 = radius * radius;
                let sigma = (dx * dx + dy * dy) / r2;
                if sigma >= 1.0 {
                    return [0.0, 0.0];
                }
                let k = 8.0 * strength * (1.0 - sigma).powi(3) / r2;
                [-k * dy, k * dx]
            }
            DeformationField::Rotation { center, core_radius, outer_radius, strength } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let rho = dx.hypot(dy);
                if rho >= *outer_radius {
                    return [0.0, 0.0];
                }
                let chi = if rho <= *core_radius {
                    1.0
                } else {
                    1.0 - smoothstep((rho - core_radius) / (outer_radius - core_radius))
                };
                [strength * chi * dy, -strength * chi * dx]
            }
            DeformationField::Translate { center, radius, strength, direction, .. } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let rho = dx.hypot(dy) / radius;
                let b = strength * bump(rho);
                [b * direction[0], b * direction[1]]
            }
            DeformationField::Expand { center, radius, strength, .. } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let rho = dx.hypot(dy) / radius;
                let b = strength * bump(rho);
                [b * dx, b * dy]
            }
            DeformationField::Sum { left, right } => {
                let va = left.value(x);
                let vb = right.value(x);
                [va[0] + vb[0], va[1] + vb[1]]
            }
            DeformationField::Scale { factor, field } => {
                let v = field.value(x);
                [factor * v[0], factor * v[1]]
            }
        }
    }

    /// Jacobian `J[i][j] = dW_i / dx_j`, hand-derived per family and
    /// cross-checked against finite differences in the tests.
    pub fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        match self {
            DeformationField::Zero { .. } => [[0.0; 2]; 2],
            DeformationField::StreamBump { center, radius, strength } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let r2 = radius * radius;
                let sigma = (dx * dx + dy * dy) / r2;
                if sigma >= 1.0 {
                    return [[0.0; 2]; 2];
                }
                let k = 8.0 * strength * (1.0 - sigma).powi(3) / r2;
                let kp = -24.0 * strength * (1.0 - sigma).powi(2) / r2;
                let sx = 2.0 * dx / r2;
                let sy = 2.0 * dy / r2;
                [
                    [-kp * sx * dy, -kp * sy * dy - k],
                    [kp * sx * dx + k, kp * sy * dx],
                ]
            }
            DeformationField::Rotation { center, core_radius, outer_radius, strength } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let rho = dx.hypot(dy);
                if rho >= *outer_radius {
                    return [[0.0; 2]; 2];
                }
                if rho <= *core_radius {
                    return [[0.0, *strength], [-*strength, 0.0]];
                }
                let width = outer_radius - core_radius;
                let chi = 1.0 - smoothstep((rho - core_radius) / width);
                let chip = -smoothstep_deriv((rho - core_radius) / width) / width;
                let rx = dx / rho;
                let ry = dy / rho;
                [
                    [strength * chip * rx * dy, strength * (chip * ry * dy + chi)],
                    [-strength * (chip * rx * dx + chi), -strength * chip * ry * dx],
                ]
            }
            DeformationField::Translate { center, radius, strength, direction, .. } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let d = dx.hypot(dy);
                let rho = d / radius;
                let bp = bump_deriv(rho);
                if bp == 0.0 || d == 0.0 {
                    return [[0.0; 2]; 2];
                }
                let scale = strength * bp / (radius * d);
                [
                    [scale * direction[0] * dx, scale * direction[0] * dy],
                    [scale * direction[1] * dx, scale * direction[1] * dy],
                ]
            }
            DeformationField::Expand { dim, center, radius, strength } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let d = dx.hypot(dy);
                let rho = d / radius;
                let b = strength * bump(rho);
                let bp = bump_deriv(rho);
                let scale = if d > 0.0 { strength * bp / (radius * d) } else { 0.0 };
                if *dim == 1 {
                    // The 1D family has no transverse component anywhere.
                    return [[scale * dx * dx + b, 0.0], [0.0, 0.0]];
                }
                [
                    [scale * dx * dx + b, scale * dx * dy],
                    [scale * dy * dx, scale * dy * dy + b],
                ]
            }
            DeformationField::Sum { left, right } => {
                let ja = left.jacobian(x);
                let jb = right.jacobian(x);
                [
                    [ja[0][0] + jb[0][0], ja[0][1] + jb[0][1]],
                    [ja[1][0] + jb[1][0], ja[1][1] + jb[1][1]],
                ]
            }
            DeformationField::Scale { factor, field } => {
                let j = field.jacobian(x);
                [
                    [factor * j[0][0], factor * j[0][1]],
                    [factor * j[1][0], factor * j[1][1]],
                ]
            }
        }
    }

    /// Analytic divergence. Identically zero (the literal constant, not a
    /// rounded value) for the stream-generated and rotation families.
    pub fn divergence(&self, x: [f64; 2]) -> f64 {
        match self {
            DeformationField::Zero { .. }
            | DeformationField::StreamBump { .. }
            | DeformationField::Rotation { .. } => 0.0,
            DeformationField::Translate { center, radius, strength, direction, .. } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let d = dx.hypot(dy);
                let rho = d / radius;
                let bp = bump_deriv(rho);
                if bp == 0.0 || d == 0.0 {
                    0.0
                } else {
                    strength * bp * (dx * direction[0] + dy * direction[1]) / (radius * d)
                }
            }
            DeformationField::Expand { dim, center, radius, strength } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let d = dx.hypot(dy);
                let rho = d / radius;
                strength * (bump_deriv(rho) * d / radius + *dim as f64 * bump(rho))
            }
            DeformationField::Sum { left, right } => left.divergence(x) + right.divergence(x),
            DeformationField::Scale { factor, field } => factor * field.divergence(x),
        }
    }

    /// Whether the divergence vanishes identically by construction.
    pub fn divergence_free(&self) -> bool {
        match self {
            DeformationField::Zero { .. }
            | DeformationField::StreamBump { .. }
            | DeformationField::Rotation { .. } => true,
            DeformationField::Translate { .. } | DeformationField::Expand { .. } => false,
            DeformationField::Sum { left, right } => {
                left.divergence_free() && right.divergence_free()
            }
            DeformationField::Scale { field, .. } => field.divergence_free(),
        }
    }

    /// Stream function for stream-generated fields (`W = (d psi/dy, -d psi/dx)`).
    pub fn stream_function(&self, x: [f64; 2]) -> Option<f64> {
        match self {
            DeformationField::StreamBump { center, radius, strength } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let sigma = (dx * dx + dy * dy) / (radius * radius);
                Some(if sigma >= 1.0 { 0.0 } else { strength * (1.0 - sigma).powi(4) })
            }
            DeformationField::Scale { factor, field } => {
                field.stream_function(x).map(|v| factor * v)
            }
            _ => None,
        }
    }

    /// Ball outside which the field vanishes; `None` for the zero field.
    pub fn support(&self) -> Option<([f64; 2], f64)> {
        match self {
            DeformationField::Zero { .. } => None,
            DeformationField::StreamBump { center, radius, .. } => Some((*center, *radius)),
            DeformationField::Rotation { center, outer_radius, .. } => {
                Some((*center, *outer_radius))
            }
            DeformationField::Translate { center, radius, .. }
            | DeformationField::Expand { center, radius, .. } => Some((*center, *radius)),
            DeformationField::Sum { left, right } => match (left.support(), right.support()) {
                (None, s) | (s, None) => s,
                (Some((ca, ra)), Some((cb, rb))) => {
                    // Smallest ball containing both supports, centered midway.
                    let d = (cb[0] - ca[0]).hypot(cb[1] - ca[1]);
                    let r = 0.5 * (d + ra + rb);
                    let r = r.max(ra).max(rb);
                    let t = if d > 0.0 { (r - ra) / d } else { 0.0 };
                    Some(([ca[0] + t * (cb[0] - ca[0]), ca[1] + t * (cb[1] - ca[1])], r))
                }
            },
            DeformationField::Scale { factor, field } => {
                if *factor == 0.0 {
                    None
                } else {
                    field.support()
                }
            }
        }
    }

    /// Checks that the support ball stays at least one grid spacing away
    /// from the boundary of the meshed domain.
    pub fn validate_support(&self, mesh: &Mesh) -> Result<()> {
        self.validate()?;
        if self.dim() != mesh.dimension {
            return Err(Error::DimensionMismatch { mesh: mesh.dimension, field: self.dim() });
        }
        let Some((c, r)) = self.support() else { return Ok(()) };
        let [hx, hy] = mesh.spacing();
        let margins = [
            (c[0] - r) - (mesh.extents[0][0] + hx),
            (mesh.extents[0][1] - hx) - (c[0] + r),
        ];
        let mut worst = margins[0].min(margins[1]);
        if mesh.dimension == 2 {
            worst = worst
                .min((c[1] - r) - (mesh.extents[1][0] + hy))
                .min((mesh.extents[1][1] - hy) - (c[1] + r));
        }
        if worst < 0.0 {
            return Err(Error::SupportTouchesBoundary(format!(
                "support ball (center ({}, {}), radius {r}) vs extents {:?}",
                c[0], c[1], mesh.extents
            )));
        }
        Ok(())
    }
}

/// Flow integration parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Runge-Kutta substeps per unit of flow time; at least 16 substeps are
    /// always taken regardless of how small `t` is.
    pub steps_per_unit_time: u32,
}

impl Default for FlowConfig {
    fn default() -> Self {
        // 2560 steps/unit keeps flow-map round-trips near 1e-10 and
        // finite-difference volume defects below 1e-7 even for the
        // stiffest library field; small |t| is floored at 16 substeps,
        // so short transports stay cheap regardless.
        FlowConfig { steps_per_unit_time: 2560 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_unit_time < 16 {
            return Err(Error::Config(format!(
                "steps_per_unit_time must be at least 16, got {}",
                self.steps_per_unit_time
            )));
        }
        Ok(())
    }

    fn substeps(&self, t: f64) -> usize {
        ((t.abs() * self.steps_per_unit_time as f64).ceil() as usize).max(16)
    }
}

fn rk4(field: &DeformationField, sign: f64, t: f64, x: [f64; 2], config: &FlowConfig) -> Result<[f64; 2]> {
    if t == 0.0 {
        return Ok(x);
    }
    let n = config.substeps(t);
    let dt = sign * t / n as f64;
    let mut y = x;
    for _ in 0..n {
        let k1 = field.value(y);
        let k2 = field.value([y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
        let k3 = field.value([y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
        let k4 = field.value([y[0] + dt * k3[0], y[1] + dt * k3[1]]);
        y[0] += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        y[1] += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    }
    if !y[0].is_finite() || !y[1].is_finite() {
        return Err(Error::FlowDiverged);
    }
    Ok(y)
}

/// Position after flowing from `x` for time `t` (either sign).
pub fn flow_map(field: &DeformationField, t: f64, x: [f64; 2], config: &FlowConfig) -> Result<[f64; 2]> {
    config.validate()?;
    rk4(field, 1.0, t, x, config)
}

/// Inverse of `flow_map` at the same `t`: the flow of the negated field,
/// which coincides with the exact inverse for autonomous fields.
pub fn inverse_flow_map(
    field: &DeformationField,
    t: f64,
    x: [f64; 2],
    config: &FlowConfig,
) -> Result<[f64; 2]> {
    config.validate()?;
    rk4(field, -1.0, t, x, config)
}

/// Push a cell field forward along the flow: each cell takes the value of
/// the cell containing the preimage of its centroid. Values are always
/// drawn from the existing multiset; cells outside the support of `field`
/// are returned unchanged (their preimage is exactly themselves).
pub fn transport_field(
    mesh: &Mesh,
    f: &CellField,
    field: &DeformationField,
    t: f64,
    config: &FlowConfig,
) -> Result<CellField> {
    f.validate(mesh)?;
    field.validate_support(mesh)?;
    config.validate()?;
    let support = field.support();
    let mut out = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let x = mesh.centroids[c];
        if let Some((ctr, r)) = support {
            let d = (x[0] - ctr[0]).hypot(x[1] - ctr[1]);
            if d >= r {
                out.push(f.values[c]);
                continue;
            }
        } else {
            out.push(f.values[c]);
            continue;
        }
        let y = inverse_flow_map(field, t, x, config)?;
        let cell = mesh.locate(y)?;
        out.push(f.values[cell]);
    }
    Ok(CellField::new(out))
}

/// Maximum deviation of `det D(flow_map)` from 1 over a deterministic
/// sample of points in the support — the measure-preservation certificate.
/// Only meaningful for divergence-free fields (their flows preserve volume
/// exactly), so any other field is refused.
pub fn jacobian_defect(field: &DeformationField, t: f64, config: &FlowConfig) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    field.validate()?;
    config.validate()?;
    if !field.divergence_free() {
        return Err(Error::NotDivergenceFree);
    }
    let Some((c, r)) = field.support() else { return Ok(0.0) };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x0DEF);
    let delta = 1e-5 * r.max(1e-3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = if field.dim() == 1 {
            [c[0] + rng.gen_range(-r..r), 0.0]
        } else {
            [c[0] + rng.gen_range(-r..r), c[1] + rng.gen_range(-r..r)]
        };
        let col = |axis: usize, rng_x: [f64; 2]| -> Result<[f64; 2]> {
            let mut plus = rng_x;
            let mut minus = rng_x;
            plus[axis] += delta;
            minus[axis] -= delta;
            let fp = flow_map(field, t, plus, config)?;
            let fm = flow_map(field, t, minus, config)?;
            Ok([(fp[0] - fm[0]) / (2.0 * delta), (fp[1] - fm[1]) / (2.0 * delta)])
        };
        let c0 = col(0, x)?;
        let det = if field.dim() == 1 {
            c0[0]
        } else {
            let c1 = col(1, x)?;
            c0[0] * c1[1] - c0[1] * c1[0]
        };
        worst = worst.max((det - 1.0).abs());
    }
    Ok(worst)
}

/// Sampled Lipschitz estimate of the field (largest difference quotient
/// over seeded random pairs near the support).
pub fn lipschitz_estimate(field: &DeformationField, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let Some((c, r)) = field.support() else { return 0.0 };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            if field.dim() == 1 {
                [c[0] + rng.gen_range(-1.2 * r..1.2 * r), 0.0]
            } else {
                [
                    c[0] + rng.gen_range(-1.2 * r..1.2 * r),
                    c[1] + rng.gen_range(-1.2 * r..1.2 * r),
                ]
            }
        };
        let x = draw(&mut rng);
        let mut y = x;
        let step = rng.gen_range(1e-6 * r..0.1 * r);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        if field.dim() == 1 {
            y[0] += step;
        } else {
            y[0] += step * angle.cos();
            y[1] += step * angle.sin();
        }
        let wx = field.value(x);
        let wy = field.value(y);
        let dw = (wx[0] - wy[0]).hypot(wx[1] - wy[1]);
        let dxy = (x[0] - y[0]).hypot(x[1] - y[1]);
        if dxy > 0.0 {
            best = best.max(dw / dxy);
        }
    }
    best
}

/// Mean absolute difference between the sorted value multisets of two
/// fields of equal length — how far transport has drifted from an exact
/// rearrangement.
pub fn multiset_distance(a: &CellField, b: &CellField) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { expected: a.len(), got: b.len() });
    }
    let mut sa = a.values.clone();
    let mut sb = b.values.clone();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let total: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.len() as f64)
}

/// The canonical six-field library used by the derivative validation suite:
/// two divergence-free 2D fields, two general 2D fields, two general 1D
/// fields, all supported inside the unit interval/square.
pub fn standard_library() -> Vec<(&'static str, DeformationField)> {
    vec![
        (
            "stream_bump",
            DeformationField::StreamBump { center: [0.45, 0.55], radius: 0.32, strength: 1.0 },
        ),
        (
            "rotation",
            DeformationField::Rotation {
                center: [0.5, 0.5],
                core_radius: 0.18,
                outer_radius: 0.36,
                strength: 1.0,
            },
        ),
        (
            "translate_2d",
            DeformationField::Translate {
                dim: 2,
                center: [0.55, 0.45],
                radius: 0.3,
                strength: 1.0,
                direction: [0.8944271909999159, 0.4472135954999579],
            },
        ),
        (
            "expand_2d",
            DeformationField::Expand { dim: 2, center: [0.45, 0.5], radius: 0.3, strength: 0.8 },
        ),
        (
            "translate_1d",
            DeformationField::Translate {
                dim: 1,
                center: [0.45, 0.0],
                radius: 0.3,
                strength: 1.0,
                direction: [1.0, 0.0],
            },
        ),
        (
            "expand_1d",
            DeformationField::Expand { dim: 1, center: [0.55, 0.0], radius: 0.3, strength: 0.8 },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tight() -> FlowConfig {
        FlowConfig::default()
    }

    #[test]
    fn test_rotation_flow_matches_closed_form() {
        let field = DeformationField::Rotation {
            center: [0.5, 0.5],
            core_radius: 0.3,
            outer_radius: 0.45,
            strength: 1.0,
        };
        // Deliberately coarse: 64 substeps at t = 0.1 must already be at
        // 1e-8 accuracy against the exact rotation.
        let coarse = FlowConfig { steps_per_unit_time: 640 };
        let t = 0.1;
        // Points within the core rotate rigidly: radius is preserved, so the
        // trajectory never leaves the un-cut region.
        let mut worst: f64 = 0.0;
        for k in 0..40 {
            let angle = k as f64 * 0.157;
            let rad = 0.05 + 0.2 * (k as f64 / 40.0);
            let x = [0.5 + rad * angle.cos(), 0.5 + rad * angle.sin()];
            let got = flow_map(&field, t, x, &coarse).unwrap();
            let dx = x[0] - 0.5;
            let dy = x[1] - 0.5;
            let expect = [
                0.5 + dx * t.cos() + dy * t.sin(),
                0.5 - dx * t.sin() + dy * t.cos(),
            ];
            worst = worst.max((got[0] - expect[0]).hypot(got[1] - expect[1]));
        }
        assert!(worst <= 1e-8, "rotation flow error {worst} exceeds 1e-8");
    }

    #[test]
    fn test_flow_of_zero_field_is_identity() {
        let field = DeformationField::Zero { dim: 2 };
        let x = [0.3, 0.7];
        assert_eq!(flow_map(&field, 2.5, x, &tight()).unwrap(), x);
    }

    #[test]
    fn test_plateau_translation_is_exact() {
        let field = DeformationField::Translate {
            dim: 1,
            center: [0.5, 0.0],
            radius: 0.3,
            strength: 0.7,
            direction: [1.0, 0.0],
        };
        // Stay on the plateau: |x - 0.5| + t*s <= 0.4 * 0.3.
        let t = 0.05;
        let x = [0.45, 0.0];
        let got = flow_map(&field, t, x, &tight()).unwrap();
        assert!((got[0] - (x[0] + t * 0.7)).abs() < 1e-12);
        assert_eq!(got[1], 0.0);
    }

    #[test]
    fn test_inverse_flow_roundtrip() {
        let fields = standard_library();
        for (name, field) in &fields {
            let t = 0.1;
            let points: Vec<[f64; 2]> = if field.dim() == 1 {
                vec![[0.4, 0.0], [0.55, 0.0], [0.62, 0.0]]
            } else {
                vec![[0.4, 0.5], [0.55, 0.6], [0.35, 0.45]]
            };
            for x in points {
                let fwd = flow_map(field, t, x, &tight()).unwrap();
                let back = inverse_flow_map(field, t, fwd, &tight()).unwrap();
                let err = (back[0] - x[0]).hypot(back[1] - x[1]);
                assert!(err <= 1e-8, "{name}: roundtrip error {err}");
            }
        }
    }

    #[test]
    fn test_flow_semigroup_property() {
        let field = DeformationField::StreamBump {
            center: [0.5, 0.5],
            radius: 0.35,
            strength: 0.8,
        };
        let x = [0.42, 0.58];
        let one = flow_map(&field, 0.12, x, &tight()).unwrap();
        let two = flow_map(&field, 0.05, one, &tight()).unwrap();
        let direct = flow_map(&field, 0.17, x, &tight()).unwrap();
        let err = (two[0] - direct[0]).hypot(two[1] - direct[1]);
        assert!(err <= 1e-9, "semigroup defect {err}");
    }

    #[test]
    fn test_jacobians_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (name, field) in standard_library() {
            let (c, r) = field.support().unwrap();
            for _ in 0..300 {
                let x = if field.dim() == 1 {
                    [c[0] + rng.gen_range(-1.1 * r..1.1 * r), 0.0]
                } else {
                    [
                        c[0] + rng.gen_range(-1.1 * r..1.1 * r),
                        c[1] + rng.gen_range(-1.1 * r..1.1 * r),
                    ]
                };
                let j = field.jacobian(x);
                let delta = 1e-6;
                for axis in 0..field.dim() {
                    let mut plus = x;
                    let mut minus = x;
                    plus[axis] += delta;
                    minus[axis] -= delta;
                    let vp = field.value(plus);
                    let vm = field.value(minus);
                    for comp in 0..2 {
                        let fd = (vp[comp] - vm[comp]) / (2.0 * delta);
                        assert!(
                            (j[comp][axis] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                            "{name}: J[{comp}][{axis}] = {} vs fd {} at {:?}",
                            j[comp][axis],
                            fd,
                            x
                        );
                    }
                }
                // Divergence agrees with the trace of the Jacobian.
                let tr = j[0][0] + j[1][1];
                assert!(
                    (field.divergence(x) - tr).abs() <= 1e-12 * (1.0 + tr.abs()),
                    "{name}: divergence vs trace mismatch"
                );
            }
        }
    }

    #[test]
    fn test_divergence_free_fields_have_exactly_zero_divergence() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for (name, field) in standard_library() {
            if !field.divergence_free() {
                continue;
            }
            for _ in 0..1000 {
                let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                assert!(
                    field.divergence(x).abs() <= 1e-12,
                    "{name}: nonzero divergence at {x:?}"
                );
            }
        }
    }

    #[test]
    fn test_stream_function_generates_the_field() {
        let field = DeformationField::StreamBump {
            center: [0.5, 0.5],
            radius: 0.3,
            strength: 0.9,
        };
        let delta = 1e-6;
        for x in [[0.45, 0.5], [0.55, 0.62], [0.38, 0.41]] {
            let psi = |p: [f64; 2]| field.stream_function(p).unwrap();
            let wy = (psi([x[0], x[1] + delta]) - psi([x[0], x[1] - delta])) / (2.0 * delta);
            let wx = -(psi([x[0] + delta, x[1]]) - psi([x[0] - delta, x[1]])) / (2.0 * delta);
            let v = field.value(x);
            assert!((v[0] - wy).abs() < 1e-6);
            assert!((v[1] - wx).abs() < 1e-6);
        }
    }

    #[test]
    fn test_jacobian_defect_small_for_divergence_free() {
        for (name, field) in standard_library() {
            if field.divergence_free() {
                let defect = jacobian_defect(&field, 0.1, &tight()).unwrap();
                assert!(defect <= 1e-6, "{name}: volume defect {defect}");
            } else {
                assert!(
                    matches!(jacobian_defect(&field, 0.1, &tight()), Err(Error::NotDivergenceFree)),
                    "{name}: volume certificate must refuse compressible fields"
                );
            }
        }
    }

    #[test]
    fn test_jacobian_defect_zero_field() {
        let defect = jacobian_defect(&DeformationField::Zero { dim: 2 }, 0.5, &tight()).unwrap();
        assert_eq!(defect, 0.0);
    }

    #[test]
    fn test_jacobian_linearization_in_time() {
        // det D(flow) = 1 + t * div W + o(t) pointwise.
        let field = DeformationField::Expand { dim: 2, center: [0.5, 0.5], radius: 0.3, strength: 0.8 };
        let x = [0.52, 0.48];
        let delta = 1e-6;
        for t in [0.02, 0.01, 0.005] {
            let col = |axis: usize| {
                let mut plus = x;
                let mut minus = x;
                plus[axis] += delta;
                minus[axis] -= delta;
                let fp = flow_map(&field, t, plus, &tight()).unwrap();
                let fm = flow_map(&field, t, minus, &tight()).unwrap();
                [(fp[0] - fm[0]) / (2.0 * delta), (fp[1] - fm[1]) / (2.0 * delta)]
            };
            let c0 = col(0);
            let c1 = col(1);
            let det = c0[0] * c1[1] - c0[1] * c1[0];
            let linear = 1.0 + t * field.divergence(x);
            assert!(
                (det - linear).abs() <= 5.0 * t * t,
                "t={t}: det {det} vs linearization {linear}"
            );
        }
    }

    #[test]
    fn test_transport_preserves_constant_fields() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 16, 16).unwrap();
        let f = CellField::constant(&mesh, 3.25);
        let field = DeformationField::StreamBump { center: [0.5, 0.5], radius: 0.3, strength: 1.0 };
        let moved = transport_field(&mesh, &f, &field, 0.2, &tight()).unwrap();
        assert_eq!(moved.values, f.values);
    }

    #[test]
    fn test_transport_fixes_cells_outside_support() {
        let mesh = Mesh::interval(0.0, 1.0, 64).unwrap();
        let f = CellField::from_fn(&mesh, |x| x[0]);
        let field = DeformationField::Translate {
            dim: 1,
            center: [0.5, 0.0],
            radius: 0.25,
            strength: 1.0,
            direction: [1.0, 0.0],
        };
        let moved = transport_field(&mesh, &f, &field, 0.1, &tight()).unwrap();
        for c in 0..mesh.n_cells() {
            let x = mesh.centroids[c][0];
            if (x - 0.5).abs() >= 0.25 {
                assert_eq!(moved.values[c], f.values[c], "cell at {x} is outside the support");
            }
        }
        // Inside the plateau the data really moves.
        let mid = mesh.locate([0.5, 0.0]).unwrap();
        assert_ne!(moved.values[mid], f.values[mid]);
    }

    #[test]
    fn test_transport_first_order_matches_directional_derivative() {
        // On the plateau of a translation, transported values are exact
        // samples of f(x - t W), so (f_t - f)/t approaches -f' * W with an
        // O(t) + O(h) error.
        let mesh = Mesh::interval(0.0, 1.0, 256).unwrap();
        let profile = |x: f64| (std::f64::consts::PI * x).sin();
        let f = CellField::from_fn(&mesh, |x| profile(x[0]));
        let w = 0.5;
        let field = DeformationField::Translate {
            dim: 1,
            center: [0.5, 0.0],
            radius: 0.3,
            strength: w,
            direction: [1.0, 0.0],
        };
        let t = 0.1;
        let moved = transport_field(&mesh, &f, &field, t, &tight()).unwrap();
        let h = mesh.h_max();
        // Check cells well inside the plateau (|x - 0.5| < 0.05).
        for c in 0..mesh.n_cells() {
            let x = mesh.centroids[c][0];
            if (x - 0.5).abs() < 0.05 {
                let fd = (moved.values[c] - f.values[c]) / t;
                let exact = -profile_deriv(x) * w;
                // Two error sources: O(t) from linearizing the flow and
                // O(h/t) from cell-lookup quantization of the displacement.
                let tol = 4.0 * (t + h / t);
                assert!(
                    (fd - exact).abs() <= tol,
                    "cell at {x}: transport rate {fd} vs -f'W {exact} (tol {tol})"
                );
            }
        }
        fn profile_deriv(x: f64) -> f64 {
            std::f64::consts::PI * (std::f64::consts::PI * x).cos()
        }
    }

    #[test]
    fn test_transport_multiset_drift_shrinks_under_refinement() {
        // Transport by sub-cell lookup only approximately preserves the value
        // multiset; the drift should shrink roughly linearly with h.
        let field = DeformationField::Rotation {
            center: [0.5, 0.5],
            core_radius: 0.2,
            outer_radius: 0.4,
            strength: 1.0,
        };
        let mut dists = Vec::new();
        for n in [16usize, 32, 64] {
            let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], n, n).unwrap();
            let f = CellField::from_fn(&mesh, |x| {
                ScalarSpecLike::eval(x)
            });
            let moved = transport_field(&mesh, &f, &field, 0.3, &tight()).unwrap();
            dists.push(multiset_distance(&f, &moved).unwrap());
        }
        assert!(
            dists[1] <= 0.75 * dists[0] && dists[2] <= 0.75 * dists[1],
            "multiset drift should shrink under refinement: {dists:?}"
        );

        struct ScalarSpecLike;
        impl ScalarSpecLike {
            fn eval(x: [f64; 2]) -> f64 {
                let dx = x[0] - 0.5;
                let dy = x[1] - 0.35;
                1.0 + (-8.0 * (dx * dx + dy * dy)).exp()
            }
        }
    }

    #[test]
    fn test_support_validation_rejects_boundary_touching_fields() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 16, 16).unwrap();
        let bad = DeformationField::StreamBump { center: [0.2, 0.5], radius: 0.25, strength: 1.0 };
        assert!(matches!(
            bad.validate_support(&mesh),
            Err(Error::SupportTouchesBoundary(_))
        ));
        let good = DeformationField::StreamBump { center: [0.5, 0.5], radius: 0.3, strength: 1.0 };
        good.validate_support(&mesh).unwrap();
    }

    #[test]
    fn test_lipschitz_estimate_is_finite_and_positive() {
        for (name, field) in standard_library() {
            let lip = lipschitz_estimate(&field, 2000, 3);
            assert!(lip.is_finite() && lip > 0.0, "{name}: Lipschitz estimate {lip}");
            assert!(lip < 100.0, "{name}: implausibly large Lipschitz estimate {lip}");
        }
    }

    #[test]
    fn test_sum_and_scale_combinators() {
        let a = DeformationField::StreamBump { center: [0.4, 0.5], radius: 0.25, strength: 1.0 };
        let b = DeformationField::Rotation {
            center: [0.6, 0.5],
            core_radius: 0.1,
            outer_radius: 0.2,
            strength: 0.5,
        };
        let sum = DeformationField::Sum { left: Box::new(a.clone()), right: Box::new(b.clone()) };
        assert!(sum.divergence_free());
        let x = [0.5, 0.52];
        let va = a.value(x);
        let vb = b.value(x);
        let vs = sum.value(x);
        assert_eq!(vs, [va[0] + vb[0], va[1] + vb[1]]);
        let scaled = DeformationField::Scale { factor: -2.0, field: Box::new(a.clone()) };
        let vsc = scaled.value(x);
        assert_eq!(vsc, [-2.0 * va[0], -2.0 * va[1]]);
        // The enclosing support ball covers both components.
        let (c, r) = sum.support().unwrap();
        for f in [&a, &b] {
            let (cf, rf) = f.support().unwrap();
            let d = (cf[0] - c[0]).hypot(cf[1] - c[1]);
            assert!(d + rf <= r + 1e-12);
        }
    }
}
