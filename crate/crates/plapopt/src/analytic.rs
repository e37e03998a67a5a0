//! Scalar data generators for weights and potentials.
//!
//! A `ScalarSpec` describes how to produce a piecewise-constant cell field:
//! either from a pointwise-evaluable function (constant, radial bump, step)
//! or from per-cell data (explicit values, seeded random draws). Smooth
//! specs can be evaluated at arbitrary points, which is what the derivative
//! oracle needs to resample data along a flow without grid quantization.

use crate::mesh::{CellField, Mesh};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Recipe for a scalar cell field.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarSpec {
    /// The constant function.
    Constant { value: f64 },
    /// `base + amplitude * (1 - (|x-center|/radius)^2)^4` inside the ball of
    /// `radius` about `center`, `base` outside. C^3 in space.
    Radial { center: [f64; 2], radius: f64, base: f64, amplitude: f64 },
    /// Axis-aligned two-level step: `low` where `x[axis] < threshold`.
    Step { axis: usize, threshold: f64, low: f64, high: f64 },
    /// Independent uniform draws in `[low, high)` per cell, reproducible
    /// from the seed.
    Random { low: f64, high: f64, seed: u64 },
    /// Explicit per-cell values.
    Values { values: Vec<f64> },
}

impl ScalarSpec {
    /// Whether the spec defines a smooth pointwise function (evaluable
    /// anywhere, differentiable — what flow resampling requires).
    pub fn is_smooth(&self) -> bool {
        matches!(self, ScalarSpec::Constant { .. } | ScalarSpec::Radial { .. })
    }

    /// Pointwise evaluation. Errors for data-only specs (`Random`, `Values`)
    /// and for the discontinuous `Step`.
    pub fn eval(&self, x: [f64; 2]) -> Result<f64> {
        match self {
            ScalarSpec::Constant { value } => Ok(*value),
            ScalarSpec::Radial { center, radius, base, amplitude } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let rho2 = (dx * dx + dy * dy) / (radius * radius);
                if rho2 >= 1.0 {
                    Ok(*base)
                } else {
                    let t = 1.0 - rho2;
                    Ok(base + amplitude * t * t * t * t)
                }
            }
            _ => Err(Error::Config(format!(
                "scalar spec {self:?} is not pointwise evaluable"
            ))),
        }
    }

    /// Sample onto a mesh: smooth specs and steps at centroids, `Random`
    /// from a seeded stream in cell order, `Values` verbatim.
    pub fn sample(&self, mesh: &Mesh) -> Result<CellField> {
        match self {
            ScalarSpec::Constant { .. } | ScalarSpec::Radial { .. } => {
                let mut values = Vec::with_capacity(mesh.n_cells());
                for &c in &mesh.centroids {
                    values.push(self.eval(c)?);
                }
                Ok(CellField::new(values))
            }
            ScalarSpec::Step { axis, threshold, low, high } => {
                if *axis >= mesh.dimension {
                    return Err(Error::Config(format!(
                        "step axis {axis} out of range for a {}D mesh",
                        mesh.dimension
                    )));
                }
                Ok(CellField::new(
                    mesh.centroids
                        .iter()
                        .map(|c| if c[*axis] < *threshold { *low } else { *high })
                        .collect(),
                ))
            }
            ScalarSpec::Random { low, high, seed } => {
                if !(low < high) {
                    return Err(Error::Config(format!(
                        "random spec needs low < high, got [{low}, {high})"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok(CellField::new(
                    (0..mesh.n_cells()).map(|_| rng.gen_range(*low..*high)).collect(),
                ))
            }
            ScalarSpec::Values { values } => {
                let f = CellField::new(values.clone());
                f.validate(mesh)?;
                Ok(f)
            }
        }
    }
}
