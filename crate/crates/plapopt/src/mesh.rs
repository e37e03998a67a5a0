//! Structured P1 meshes on intervals and axis-aligned rectangles.
//!
//! A 1D mesh partitions `[a, b]` into equal subintervals; a 2D mesh splits
//! each rectangle of a uniform grid into two triangles along the diagonal
//! from the lower-left to the upper-right corner. Every cell has exactly the
//! same measure, which is what lets the rearrangement module treat sorting
//! of cell values as an exact measure-preserving rearrangement.
//!
//! Node data (`NodeField`) is understood as a continuous piecewise-linear
//! function; cell data (`CellField`) as a piecewise-constant one. Gradients
//! of node fields are constant per cell and exact for affine functions.

use crate::{Error, Result};

/// Sentinel for the unused third vertex slot of 1D cells.
pub const NO_VERTEX: usize = usize::MAX;

/// Structured simplicial mesh of an interval or a rectangle.
///
/// All fields are plain data; the mesh is immutable after construction and
/// safe to share across threads. Positions are stored as `[x, y]` pairs even
/// in 1D (with `y = 0`), so downstream geometry code has a single path.
#[derive(Clone, Debug)]
pub struct Mesh {
    /// 1 or 2.
    pub dimension: usize,
    /// Axis ranges; `extents[1]` is `[0, 0]` in 1D.
    pub extents: [[f64; 2]; 2],
    /// Cells per axis; `resolution[1]` is `0` in 1D.
    pub resolution: [usize; 2],
    /// Node coordinates.
    pub nodes: Vec<[f64; 2]>,
    /// Cell connectivity; 1D cells use the first two slots.
    pub cells: Vec<[usize; 3]>,
    /// 2 in 1D, 3 in 2D.
    pub verts_per_cell: usize,
    /// Per-cell measure (length/area). Equal for all cells by construction,
    /// but stored per cell so violations are representable and checkable.
    pub cell_measures: Vec<f64>,
    /// Per-node boundary flag.
    pub boundary: Vec<bool>,
    /// Per-cell centroid.
    pub centroids: Vec<[f64; 2]>,
    /// Gradient of each vertex basis function on each cell.
    pub grad_basis: Vec<[[f64; 2]; 3]>,
    /// CSR offsets into `node_cells`: cells incident to each node.
    pub node_cell_offsets: Vec<usize>,
    /// CSR adjacency payload.
    pub node_cells: Vec<usize>,
}

impl Mesh {
    /// Uniform partition of `[a, b]` into `n` cells.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::build(1, &[[a, b]], &[n])
    }

    /// Uniform triangulation of `[ax, bx] x [ay, by]` with `nx * ny * 2` cells.
    pub fn rectangle(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        Self::build(2, &[x, y], &[nx, ny])
    }

    /// Dimension-generic constructor used by the configuration front end.
    pub fn build(dimension: usize, extents: &[[f64; 2]], resolution: &[usize]) -> Result<Self> {
        if dimension != 1 && dimension != 2 {
            return Err(Error::BadDimension(dimension));
        }
        if extents.len() != dimension {
            return Err(Error::SizeMismatch { expected: dimension, got: extents.len() });
        }
        if resolution.len() != dimension {
            return Err(Error::SizeMismatch { expected: dimension, got: resolution.len() });
        }
        for &[lo, hi] in extents {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::DegenerateExtents(lo, hi));
            }
        }
        for &n in resolution {
            if n < 2 {
                return Err(Error::ResolutionTooSmall(n));
            }
        }
        let mesh = if dimension == 1 {
            Self::build_1d(extents[0], resolution[0])
        } else {
            Self::build_2d(extents[0], extents[1], resolution[0], resolution[1])
        };
        debug_assert!(mesh.validate().is_ok());
        Ok(mesh)
    }

    fn build_1d([a, b]: [f64; 2], n: usize) -> Self {
        let h = (b - a) / n as f64;
        let nodes: Vec<[f64; 2]> = (0..=n).map(|i| [a + i as f64 * h, 0.0]).collect();
        let cells: Vec<[usize; 3]> = (0..n).map(|i| [i, i + 1, NO_VERTEX]).collect();
        let mut boundary = vec![false; n + 1];
        boundary[0] = true;
        boundary[n] = true;
        let centroids = (0..n).map(|i| [a + (i as f64 + 0.5) * h, 0.0]).collect();
        // phi_i has slope -1/h, phi_{i+1} slope +1/h on cell i.
        let grad_basis = vec![[[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]]; n];
        let mut mesh = Mesh {
            dimension: 1,
            extents: [[a, b], [0.0, 0.0]],
            resolution: [n, 0],
            nodes,
            cells,
            verts_per_cell: 2,
            cell_measures: vec![h; n],
            boundary,
            centroids,
            grad_basis,
            node_cell_offsets: Vec::new(),
            node_cells: Vec::new(),
        };
        mesh.build_adjacency();
        mesh
    }

    fn build_2d(xr: [f64; 2], yr: [f64; 2], nx: usize, ny: usize) -> Self {
        let hx = (xr[1] - xr[0]) / nx as f64;
        let hy = (yr[1] - yr[0]) / ny as f64;
        let node = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([xr[0] + i as f64 * hx, yr[0] + j as f64 * hy]);
                boundary.push(i == 0 || i == nx || j == 0 || j == ny);
            }
        }
        let n_cells = 2 * nx * ny;
        let mut cells = Vec::with_capacity(n_cells);
        let mut centroids = Vec::with_capacity(n_cells);
        let mut grad_basis = Vec::with_capacity(n_cells);
        let area = 0.5 * hx * hy;
        for j in 0..ny {
            for i in 0..nx {
                let x0 = xr[0] + i as f64 * hx;
                let y0 = yr[0] + j as f64 * hy;
                // Lower triangle: (i,j), (i+1,j), (i+1,j+1).
                cells.push([node(i, j), node(i + 1, j), node(i + 1, j + 1)]);
                centroids.push([x0 + 2.0 * hx / 3.0, y0 + hy / 3.0]);
                grad_basis.push(Self::triangle_grads(
                    [x0, y0],
                    [x0 + hx, y0],
                    [x0 + hx, y0 + hy],
                ));
                // Upper triangle: (i,j), (i+1,j+1), (i,j+1).
                cells.push([node(i, j), node(i + 1, j + 1), node(i, j + 1)]);
                centroids.push([x0 + hx / 3.0, y0 + 2.0 * hy / 3.0]);
                grad_basis.push(Self::triangle_grads(
                    [x0, y0],
                    [x0 + hx, y0 + hy],
                    [x0, y0 + hy],
                ));
            }
        }
        let mut mesh = Mesh {
            dimension: 2,
            extents: [xr, yr],
            resolution: [nx, ny],
            nodes,
            cells,
            verts_per_cell: 3,
            cell_measures: vec![area; n_cells],
            boundary,
            centroids,
            grad_basis,
            node_cell_offsets: Vec::new(),
            node_cells: Vec::new(),
        };
        mesh.build_adjacency();
        mesh
    }

    /// Gradients of the three vertex basis functions of a triangle.
    fn triangle_grads(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [[f64; 2]; 3] {
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        // grad phi_a is perpendicular to the opposite edge b-c.
        let g = |p: [f64; 2], q: [f64; 2]| [-(q[1] - p[1]) / det, (q[0] - p[0]) / det];
        [g(b, c), g(c, a), g(a, b)]
    }

    fn build_adjacency(&mut self) {
        let n = self.nodes.len();
        let mut counts = vec![0usize; n + 1];
        for cell in &self.cells {
            for &v in &cell[..self.verts_per_cell] {
                counts[v + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut payload = vec![0usize; counts[n]];
        let mut cursor = counts.clone();
        for (c, cell) in self.cells.iter().enumerate() {
            for &v in &cell[..self.verts_per_cell] {
                payload[cursor[v]] = c;
                cursor[v] += 1;
            }
        }
        self.node_cell_offsets = counts;
        self.node_cells = payload;
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Cells incident to a node.
    pub fn cells_of_node(&self, v: usize) -> &[usize] {
        &self.node_cells[self.node_cell_offsets[v]..self.node_cell_offsets[v + 1]]
    }

    /// True when every cell has bitwise the same measure.
    pub fn equal_measure(&self) -> bool {
        self.cell_measures.windows(2).all(|w| w[0] == w[1])
    }

    /// Measure of one cell (callers should have checked `equal_measure`).
    pub fn cell_measure(&self) -> f64 {
        self.cell_measures[0]
    }

    pub fn domain_measure(&self) -> f64 {
        let [ax, bx] = self.extents[0];
        if self.dimension == 1 {
            bx - ax
        } else {
            let [ay, by] = self.extents[1];
            (bx - ax) * (by - ay)
        }
    }

    pub fn diameter(&self) -> f64 {
        let dx = self.extents[0][1] - self.extents[0][0];
        if self.dimension == 1 {
            dx
        } else {
            let dy = self.extents[1][1] - self.extents[1][0];
            dx.hypot(dy)
        }
    }

    /// Grid spacing per axis (`[h, 0]` in 1D).
    pub fn spacing(&self) -> [f64; 2] {
        let hx = (self.extents[0][1] - self.extents[0][0]) / self.resolution[0] as f64;
        if self.dimension == 1 {
            [hx, 0.0]
        } else {
            [hx, (self.extents[1][1] - self.extents[1][0]) / self.resolution[1] as f64]
        }
    }

    /// Largest grid spacing, the refinement parameter of convergence studies.
    pub fn h_max(&self) -> f64 {
        let [hx, hy] = self.spacing();
        hx.max(hy)
    }

    /// Indices of nodes not on the boundary.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&v| !self.boundary[v]).collect()
    }

    /// Cell containing `x`. Points within a small tolerance outside the
    /// domain are clamped to the nearest cell; farther points error.
    pub fn locate(&self, x: [f64; 2]) -> Result<usize> {
        let tol = 1e-9 * self.diameter();
        let [ax, bx] = self.extents[0];
        if !x[0].is_finite() || x[0] < ax - tol || x[0] > bx + tol {
            return Err(Error::PointLocation(x[0], x[1]));
        }
        let [hx, hy] = self.spacing();
        let nx = self.resolution[0];
        let i = (((x[0] - ax) / hx).floor() as isize).clamp(0, nx as isize - 1) as usize;
        if self.dimension == 1 {
            return Ok(i);
        }
        let [ay, by] = self.extents[1];
        if !x[1].is_finite() || x[1] < ay - tol || x[1] > by + tol {
            return Err(Error::PointLocation(x[0], x[1]));
        }
        let ny = self.resolution[1];
        let j = (((x[1] - ay) / hy).floor() as isize).clamp(0, ny as isize - 1) as usize;
        // Fractional coordinates inside the grid rectangle decide the triangle:
        // the lower one lies below the diagonal eta = xi.
        let xi = ((x[0] - ax) / hx - i as f64).clamp(0.0, 1.0);
        let eta = ((x[1] - ay) / hy - j as f64).clamp(0.0, 1.0);
        let base = 2 * (j * nx + i);
        Ok(if eta <= xi { base } else { base + 1 })
    }

    /// Structural soundness check used by tests and the builders.
    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::BadDimension(self.dimension));
        }
        let total: f64 = self.cell_measures.iter().sum();
        let rel = (total - self.domain_measure()).abs() / self.domain_measure();
        if rel > 1e-12 {
            return Err(Error::Admissibility(format!(
                "cell measures sum to {total}, expected {}",
                self.domain_measure()
            )));
        }
        for cell in &self.cells {
            for &v in &cell[..self.verts_per_cell] {
                if v >= self.n_nodes() {
                    return Err(Error::Admissibility(format!("cell vertex {v} out of range")));
                }
            }
        }
        Ok(())
    }
}

/// Values attached to mesh nodes, interpreted as a continuous piecewise
/// linear function. `dirichlet` marks fields constrained to vanish on the
/// boundary (eigenfunctions, descent iterates).
#[derive(Clone, Debug, PartialEq)]
pub struct NodeField {
    pub values: Vec<f64>,
    pub dirichlet: bool,
}

impl NodeField {
    pub fn zeros(mesh: &Mesh, dirichlet: bool) -> Self {
        NodeField { values: vec![0.0; mesh.n_nodes()], dirichlet }
    }

    /// Sample a function at the nodes; boundary values are zeroed when the
    /// field is Dirichlet.
    pub fn from_fn(mesh: &Mesh, dirichlet: bool, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        let values = mesh
            .nodes
            .iter()
            .enumerate()
            .map(|(v, &x)| if dirichlet && mesh.boundary[v] { 0.0 } else { f(x) })
            .collect();
        NodeField { values, dirichlet }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks length, finiteness, and the Dirichlet constraint.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.n_nodes() {
            return Err(Error::SizeMismatch { expected: mesh.n_nodes(), got: self.values.len() });
        }
        for (v, &u) in self.values.iter().enumerate() {
            if !u.is_finite() {
                return Err(Error::Admissibility(format!("non-finite node value at node {v}")));
            }
            if self.dirichlet && mesh.boundary[v] && u != 0.0 {
                return Err(Error::Admissibility(format!(
                    "Dirichlet field is nonzero ({u}) at boundary node {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Values attached to cells, interpreted as a piecewise constant function.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    pub values: Vec<f64>,
}

impl CellField {
    pub fn new(values: Vec<f64>) -> Self {
        CellField { values }
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        CellField { values: vec![value; mesh.n_cells()] }
    }

    /// Sample a function at cell centroids.
    pub fn from_fn(mesh: &Mesh, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        CellField { values: mesh.centroids.iter().map(|&x| f(x)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.n_cells() {
            return Err(Error::SizeMismatch { expected: mesh.n_cells(), got: self.values.len() });
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Admissibility(format!("non-finite cell value {v}")));
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Constant gradient of a piecewise-linear field on one cell.
pub fn cell_gradient(mesh: &Mesh, values: &[f64], c: usize) -> [f64; 2] {
    let mut g = [0.0, 0.0];
    let cell = &mesh.cells[c];
    let basis = &mesh.grad_basis[c];
    for k in 0..mesh.verts_per_cell {
        let u = values[cell[k]];
        g[0] += u * basis[k][0];
        g[1] += u * basis[k][1];
    }
    g
}

/// Per-cell gradients of a node field. Exact for affine functions.
pub fn p1_gradient(mesh: &Mesh, u: &NodeField) -> Result<Vec<[f64; 2]>> {
    u.validate(mesh)?;
    Ok((0..mesh.n_cells()).map(|c| cell_gradient(mesh, &u.values, c)).collect())
}

/// Integral of a cell field against a piecewise-constant weight:
/// `sum_c  c_c * w_c * |cell c|`.
pub fn integrate(mesh: &Mesh, f: &CellField, weight: &CellField) -> Result<f64> {
    f.validate(mesh)?;
    weight.validate(mesh)?;
    let mut acc = 0.0;
    for c in 0..mesh.n_cells() {
        acc += f.values[c] * weight.values[c] * mesh.cell_measures[c];
    }
    Ok(acc)
}

/// Cell average of the vertex values of `|u|^power` — the quadrature used
/// everywhere a node field meets a cell field.
pub fn cell_average_abs_pow(mesh: &Mesh, u: &NodeField, power: f64) -> CellField {
    let k = mesh.verts_per_cell as f64;
    let values = (0..mesh.n_cells())
        .map(|c| {
            let cell = &mesh.cells[c];
            let mut acc = 0.0;
            for i in 0..mesh.verts_per_cell {
                acc += u.values[cell[i]].abs().powf(power);
            }
            acc / k
        })
        .collect();
    CellField { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn test_interval_mesh_dimensions() {
        let mesh = Mesh::interval(0.0, 1.0, 8).unwrap();
        assert_eq!(mesh.n_nodes(), 9);
        assert_eq!(mesh.n_cells(), 8);
        assert!(mesh.equal_measure());
        assert!((mesh.cell_measure() - 0.125).abs() < 1e-15);
        assert_eq!(mesh.boundary.iter().filter(|&&b| b).count(), 2);
        mesh.validate().unwrap();
    }

    #[test]
    fn test_rectangle_mesh_dimensions() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 2.0], 4, 8).unwrap();
        assert_eq!(mesh.n_nodes(), 5 * 9);
        assert_eq!(mesh.n_cells(), 64);
        assert!(mesh.equal_measure());
        assert!((mesh.cell_measure() - 0.25 * 0.25 / 2.0).abs() < 1e-15);
        let total: f64 = mesh.cell_measures.iter().sum();
        assert!(
            (total - 2.0).abs() < 1e-12,
            "cell measures should sum to the domain area, got {total}"
        );
        mesh.validate().unwrap();
    }

    #[test]
    fn test_degenerate_extents_rejected() {
        assert!(matches!(Mesh::interval(0.0, 0.0, 4), Err(Error::DegenerateExtents(_, _))));
        assert!(matches!(Mesh::interval(1.0, 0.0, 4), Err(Error::DegenerateExtents(_, _))));
    }

    #[test]
    fn test_too_coarse_resolution_rejected() {
        assert!(matches!(Mesh::interval(0.0, 1.0, 1), Err(Error::ResolutionTooSmall(1))));
        assert!(matches!(
            Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 4, 1),
            Err(Error::ResolutionTooSmall(1))
        ));
    }

    #[test]
    fn test_gradient_exact_for_affine_1d() {
        let mesh = Mesh::interval(-1.0, 3.0, 17).unwrap();
        let u = NodeField::from_fn(&mesh, false, |x| 2.5 * x[0] - 0.75);
        let grads = p1_gradient(&mesh, &u).unwrap();
        for g in grads {
            assert!((g[0] - 2.5).abs() < 1e-13, "affine slope should be exact, got {}", g[0]);
            assert_eq!(g[1], 0.0);
        }
    }

    #[test]
    fn test_gradient_exact_for_affine_2d() {
        let mesh = Mesh::rectangle([0.0, 2.0], [-1.0, 1.0], 7, 5).unwrap();
        let u = NodeField::from_fn(&mesh, false, |x| 2.0 * x[0] + 3.0 * x[1] + 0.5);
        let grads = p1_gradient(&mesh, &u).unwrap();
        for g in grads {
            assert!((g[0] - 2.0).abs() < 1e-12);
            assert!((g[1] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn test_integrate_constant_recovers_measure() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 6, 6).unwrap();
        let one = CellField::constant(&mesh, 1.0);
        let val = integrate(&mesh, &one, &one).unwrap();
        assert!((val - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_locate_finds_centroids() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 5, 4).unwrap();
        for c in 0..mesh.n_cells() {
            assert_eq!(mesh.locate(mesh.centroids[c]).unwrap(), c);
        }
        let mesh1 = Mesh::interval(0.0, 1.0, 9).unwrap();
        for c in 0..mesh1.n_cells() {
            assert_eq!(mesh1.locate(mesh1.centroids[c]).unwrap(), c);
        }
    }

    #[test]
    fn test_locate_rejects_far_points() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 4, 4).unwrap();
        assert!(mesh.locate([1.5, 0.5]).is_err());
        assert!(mesh.locate([0.5, -0.2]).is_err());
        // Points a hair outside are clamped rather than rejected.
        assert!(mesh.locate([1.0 + 1e-13, 0.5]).is_ok());
    }

    #[test]
    fn test_dirichlet_field_zeroed_on_boundary() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 4, 4).unwrap();
        let u = NodeField::from_fn(&mesh, true, |_| 1.0);
        u.validate(&mesh).unwrap();
        for v in 0..mesh.n_nodes() {
            if mesh.boundary[v] {
                assert_eq!(u.values[v], 0.0);
            } else {
                assert_eq!(u.values[v], 1.0);
            }
        }
    }

    #[test]
    fn test_cell_average_abs_pow_of_constant() {
        let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
        let u = NodeField::from_fn(&mesh, false, |_| -2.0);
        let avg = cell_average_abs_pow(&mesh, &u, 3.0);
        for v in avg.values {
            assert!((v - 8.0).abs() < 1e-13);
        }
    }

    #[test]
    fn test_node_adjacency_is_consistent() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 3, 3).unwrap();
        for v in 0..mesh.n_nodes() {
            for &c in mesh.cells_of_node(v) {
                assert!(mesh.cells[c][..3].contains(&v));
            }
        }
        // Every cell appears exactly verts_per_cell times in the adjacency.
        assert_eq!(mesh.node_cells.len(), mesh.n_cells() * 3);
    }

    proptest! {
        /// The discrete gradient is linear in the nodal values.
        #[test]
        fn prop_gradient_linearity(a in -10.0f64..10.0, b in -10.0f64..10.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 4, 3).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let u = NodeField { values: (0..mesh.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect(), dirichlet: false };
            let v = NodeField { values: (0..mesh.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect(), dirichlet: false };
            let combo = NodeField {
                values: u.values.iter().zip(&v.values).map(|(&x, &y)| a * x + b * y).collect(),
                dirichlet: false,
            };
            let gu = p1_gradient(&mesh, &u).unwrap();
            let gv = p1_gradient(&mesh, &v).unwrap();
            let gc = p1_gradient(&mesh, &combo).unwrap();
            for c in 0..mesh.n_cells() {
                for d in 0..2 {
                    let expect = a * gu[c][d] + b * gv[c][d];
                    prop_assert!((gc[c][d] - expect).abs() <= 1e-9 * (1.0 + expect.abs()),
                        "gradient must be linear: got {} expected {}", gc[c][d], expect);
                }
            }
        }
    }
}
