//! Structured meshes on the unit square and finite-element assembly.
//!
//! Both benchmark problems live on Ω = [0,1]² with homogeneous Dirichlet
//! boundary conditions. The heat problem uses piecewise-linear elements on the
//! triangulation obtained by splitting every grid cell along its diagonal; the
//! convection-diffusion problem uses bilinear quadrilateral elements with
//! streamline-upwind (SUPG) stabilization of the transport operator. Boundary
//! unknowns are eliminated so that the mass matrix stays symmetric positive
//! definite and the stiffness operator stays positive definite.

mod convdiff;
mod poisson;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Which PDE the system discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FemKind {
    Poisson,
    ConvectionDiffusion,
}

impl std::fmt::Display for FemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FemKind::Poisson => write!(f, "poisson"),
            FemKind::ConvectionDiffusion => write!(f, "convection_diffusion"),
        }
    }
}

/// Uniform vertex grid on the unit square with step `h = 1/divisions`.
///
/// Vertices are numbered row-major: `v = iy * (divisions + 1) + ix`, so the
/// total count is `(1/h + 1)²` including the boundary.
#[derive(Debug, Clone)]
pub struct StructuredMesh {
    divisions: usize,
}

impl StructuredMesh {
    /// Builds the grid for a step size `h`; `1/h` must be an integer ≥ 2.
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || h > 0.5 {
            return Err(Error::InvalidMesh(format!("step {h} outside (0, 0.5]")));
        }
        let divisions_f = 1.0 / h;
        let divisions = divisions_f.round() as usize;
        if (divisions_f - divisions as f64).abs() > 1e-9 {
            return Err(Error::InvalidMesh(format!(
                "step {h} does not divide the unit interval"
            )));
        }
        Ok(StructuredMesh { divisions })
    }

    pub fn from_divisions(divisions: usize) -> Result<Self> {
        if divisions < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 divisions, got {divisions}"
            )));
        }
        Ok(StructuredMesh { divisions })
    }

    pub fn step(&self) -> f64 {
        1.0 / self.divisions as f64
    }

    pub fn divisions(&self) -> usize {
        self.divisions
    }

    /// Vertices per side.
    pub fn side(&self) -> usize {
        self.divisions + 1
    }

    /// Total vertex count, boundary included.
    pub fn n_vertices(&self) -> usize {
        self.side() * self.side()
    }

    pub fn n_interior(&self) -> usize {
        (self.divisions - 1) * (self.divisions - 1)
    }

    pub fn vertex_coord(&self, v: usize) -> [f64; 2] {
        let side = self.side();
        let (ix, iy) = (v % side, v / side);
        let h = self.step();
        [ix as f64 * h, iy as f64 * h]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        let side = self.side();
        let (ix, iy) = (v % side, v / side);
        ix == 0 || iy == 0 || ix == side - 1 || iy == side - 1
    }

    /// Grid cells as (cx, cy, [v00, v10, v11, v01]) with counter-clockwise corners.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, [usize; 4])> + '_ {
        let side = self.side();
        (0..self.divisions).flat_map(move |cy| {
            (0..self.divisions).map(move |cx| {
                let v00 = cy * side + cx;
                (cx, cy, [v00, v00 + 1, v00 + side + 1, v00 + side])
            })
        })
    }
}

/// Shape of the actuator functions attached to the layout centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceShape {
    /// κ·exp(−‖x−c‖²/ω)
    Gaussian,
    /// κ on an axis-aligned square of the given side length centered at c.
    Square { side: f64 },
}

/// Candidate source positions plus the common height/width parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceLayout {
    pub centers: Vec<[f64; 2]>,
    pub kappa: f64,
    pub omega: f64,
    pub grid_spacing: f64,
    pub adjacency_radius: f64,
    pub shape: SourceShape,
}

/// Width parameter ω such that a Gaussian of height κ evaluates to
/// `fraction · κ` at distance `spacing` from its center:
/// ω = spacing² / ln(1/fraction).
pub fn gaussian_width_from_overlap(spacing: f64, fraction: f64) -> Result<f64> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidSourceLayout(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidSourceLayout(format!(
            "overlap fraction must lie in (0, 1), got {fraction}"
        )));
    }
    Ok(spacing * spacing / (1.0 / fraction).ln())
}

impl SourceLayout {
    /// An m×m grid of Gaussian sources, centered in the domain with the given
    /// spacing. The adjacency radius is 1.2× the spacing so that the full
    /// (diagonal-inclusive) neighborhood counts as adjacent.
    pub fn gaussian_grid(m: usize, spacing: f64, kappa: f64, overlap: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidSourceLayout("empty source grid".into()));
        }
        let width = (m - 1) as f64 * spacing;
        if width >= 1.0 {
            return Err(Error::InvalidSourceLayout(format!(
                "grid of {m} sources at spacing {spacing} exceeds the unit square"
            )));
        }
        let offset = (1.0 - width) / 2.0;
        let mut centers = Vec::with_capacity(m * m);
        for iy in 0..m {
            for ix in 0..m {
                centers.push([offset + ix as f64 * spacing, offset + iy as f64 * spacing]);
            }
        }
        let layout = SourceLayout {
            centers,
            kappa,
            omega: gaussian_width_from_overlap(spacing, overlap)?,
            grid_spacing: spacing,
            adjacency_radius: 1.2 * spacing,
            shape: SourceShape::Gaussian,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Piecewise-constant sources on the m×m uniform decomposition of the unit
    /// square: source i is κ on its subsquare and 0 elsewhere.
    pub fn square_grid(m: usize, kappa: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidSourceLayout("empty source grid".into()));
        }
        let side = 1.0 / m as f64;
        let mut centers = Vec::with_capacity(m * m);
        for iy in 0..m {
            for ix in 0..m {
                centers.push([(ix as f64 + 0.5) * side, (iy as f64 + 0.5) * side]);
            }
        }
        let layout = SourceLayout {
            centers,
            kappa,
            // Width parameter used when sampling Gaussian generator sources
            // for synthetic instances; the layout sources themselves are flat.
            omega: gaussian_width_from_overlap(side, 0.05)?,
            grid_spacing: side,
            adjacency_radius: 1.2 * side,
            shape: SourceShape::Square { side },
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::InvalidSourceLayout("no source centers".into()));
        }
        for (i, c) in self.centers.iter().enumerate() {
            if !(0.0..=1.0).contains(&c[0]) || !(0.0..=1.0).contains(&c[1]) {
                return Err(Error::InvalidSourceLayout(format!(
                    "center {i} at ({}, {}) lies outside the unit square",
                    c[0], c[1]
                )));
            }
        }
        if !(self.kappa > 0.0) || !(self.omega > 0.0) || !(self.adjacency_radius > 0.0) {
            return Err(Error::InvalidSourceLayout(
                "kappa, omega and adjacency radius must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Evaluates source `i` at a point.
    pub fn evaluate(&self, i: usize, x: [f64; 2]) -> f64 {
        let c = self.centers[i];
        match self.shape {
            SourceShape::Gaussian => {
                let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                self.kappa * (-d2 / self.omega).exp()
            }
            SourceShape::Square { side } => {
                // Half-open membership so the subsquares partition the domain.
                let m = (1.0 / side).round() as usize;
                let cell = |t: f64| ((t / side).floor() as usize).min(m - 1);
                let cx = ((c[0] / side).floor() as usize).min(m - 1);
                let cy = ((c[1] / side).floor() as usize).min(m - 1);
                if cell(x[0]) == cx && cell(x[1]) == cy {
                    self.kappa
                } else {
                    0.0
                }
            }
        }
    }
}

/// Axis-aligned observation window; the tracking objective only weighs the
/// state inside this box.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObsBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Default for ObsBox {
    fn default() -> Self {
        ObsBox {
            x0: 0.25,
            x1: 0.5,
            y0: 0.25,
            y1: 0.5,
        }
    }
}

impl ObsBox {
    fn aligned_index(value: f64, h: f64, what: &str) -> Result<usize> {
        let idx_f = value / h;
        let idx = idx_f.round();
        if (idx_f - idx).abs() > 1e-9 {
            return Err(Error::InvalidObsBox(format!(
                "{what} = {value} is not aligned with the grid step {h}"
            )));
        }
        Ok(idx as usize)
    }

    /// Vertex index ranges [ix0..=ix1] × [iy0..=iy1] covered by the closed box.
    fn vertex_ranges(&self, mesh: &StructuredMesh) -> Result<(usize, usize, usize, usize)> {
        if !(self.x0 < self.x1 && self.y0 < self.y1) {
            return Err(Error::InvalidObsBox("box has non-positive extent".into()));
        }
        if self.x0 <= 0.0 || self.y0 <= 0.0 || self.x1 >= 1.0 || self.y1 >= 1.0 {
            return Err(Error::InvalidObsBox(
                "box must be strictly inside the unit square".into(),
            ));
        }
        let h = mesh.step();
        Ok((
            Self::aligned_index(self.x0, h, "x0")?,
            Self::aligned_index(self.x1, h, "x1")?,
            Self::aligned_index(self.y0, h, "y0")?,
            Self::aligned_index(self.y1, h, "y1")?,
        ))
    }
}

/// Assembled spatial discretization of one benchmark problem.
///
/// All matrices act on interior unknowns only (Dirichlet rows and columns are
/// eliminated). Observation rows select interior vertices inside the
/// observation box, ordered by vertex index.
#[derive(Debug, Clone)]
pub struct FemSystem {
    pub kind: FemKind,
    pub mesh: StructuredMesh,
    pub layout: SourceLayout,
    pub obs_box: ObsBox,
    /// Interior unknown count.
    pub n_dofs: usize,
    pub dof_of_vertex: Vec<Option<usize>>,
    pub vertex_of_dof: Vec<usize>,
    /// Mass matrix (symmetric positive definite).
    pub mass: CsrMatrix,
    /// Stiffness / transport operator (positive definite; symmetric only for
    /// the heat problem).
    pub stiffness: CsrMatrix,
    /// Source-to-node map: column i holds source i evaluated at the interior
    /// vertices.
    pub phi: DMatrix<f64>,
    /// Interior dofs observed by the tracking term, sorted by vertex index.
    pub obs_dofs: Vec<usize>,
    /// Mass matrix of the observation subdomain, indexed like `obs_dofs`.
    pub obs_mass: CsrMatrix,
}

pub fn assemble_poisson(
    mesh: &StructuredMesh,
    layout: &SourceLayout,
    obs_box: &ObsBox,
) -> Result<FemSystem> {
    if !matches!(layout.shape, SourceShape::Gaussian) {
        return Err(Error::InvalidSourceLayout(
            "the heat problem expects Gaussian sources".into(),
        ));
    }
    assemble(FemKind::Poisson, mesh, layout, obs_box)
}

pub fn assemble_convection_diffusion(
    mesh: &StructuredMesh,
    layout: &SourceLayout,
    obs_box: &ObsBox,
) -> Result<FemSystem> {
    if !matches!(layout.shape, SourceShape::Square { .. }) {
        return Err(Error::InvalidSourceLayout(
            "the convection-diffusion problem expects piecewise-constant square sources".into(),
        ));
    }
    assemble(FemKind::ConvectionDiffusion, mesh, layout, obs_box)
}

pub fn assemble(
    kind: FemKind,
    mesh: &StructuredMesh,
    layout: &SourceLayout,
    obs_box: &ObsBox,
) -> Result<FemSystem> {
    layout.validate()?;
    let (mass_full, stiff_full) = match kind {
        FemKind::Poisson => poisson::full_matrices(mesh),
        FemKind::ConvectionDiffusion => convdiff::full_matrices(mesh),
    };

    // Dirichlet elimination: interior vertices only, numbered row-major.
    let n_vert = mesh.n_vertices();
    let mut dof_of_vertex = vec![None; n_vert];
    let mut vertex_of_dof = Vec::with_capacity(mesh.n_interior());
    for v in 0..n_vert {
        if !mesh.is_boundary(v) {
            dof_of_vertex[v] = Some(vertex_of_dof.len());
            vertex_of_dof.push(v);
        }
    }
    let n_dofs = vertex_of_dof.len();
    let restrict = |triplets: &[(usize, usize, f64)]| -> Result<CsrMatrix> {
        let kept: Vec<(usize, usize, f64)> = triplets
            .iter()
            .filter_map(|&(r, c, v)| Some((dof_of_vertex[r]?, dof_of_vertex[c]?, v)))
            .collect();
        CsrMatrix::from_triplets(n_dofs, n_dofs, &kept)
    };
    let mass = restrict(&mass_full)?;
    let stiffness = restrict(&stiff_full)?;

    let mut phi = DMatrix::zeros(n_dofs, layout.len());
    for (dof, &v) in vertex_of_dof.iter().enumerate() {
        let x = mesh.vertex_coord(v);
        for i in 0..layout.len() {
            phi[(dof, i)] = layout.evaluate(i, x);
        }
    }

    let (ix0, ix1, iy0, iy1) = obs_box.vertex_ranges(mesh)?;
    let side = mesh.side();
    let mut obs_row_of_vertex = vec![None; n_vert];
    let mut obs_dofs = Vec::new();
    for iy in iy0..=iy1 {
        for ix in ix0..=ix1 {
            let v = iy * side + ix;
            let dof = dof_of_vertex[v].ok_or_else(|| {
                Error::InvalidObsBox("observation box touches the boundary".into())
            })?;
            obs_row_of_vertex[v] = Some(obs_dofs.len());
            obs_dofs.push(dof);
        }
    }

    // Mass matrix of the observation subdomain, assembled from the cells that
    // lie inside the box (the box is grid-aligned, so no cell straddles it).
    let mut obs_triplets = Vec::new();
    for (cx, cy, _corners) in mesh.cells() {
        if cx >= ix0 && cx + 1 <= ix1 && cy >= iy0 && cy + 1 <= iy1 {
            let cell_mass = match kind {
                FemKind::Poisson => poisson::cell_mass(mesh, cx, cy),
                FemKind::ConvectionDiffusion => convdiff::cell_mass(mesh, cx, cy),
            };
            for (r, c, v) in cell_mass {
                let (Some(ro), Some(co)) = (obs_row_of_vertex[r], obs_row_of_vertex[c]) else {
                    unreachable!("cell inside the box has all vertices observed");
                };
                obs_triplets.push((ro, co, v));
            }
        }
    }
    let obs_mass = CsrMatrix::from_triplets(obs_dofs.len(), obs_dofs.len(), &obs_triplets)?;

    Ok(FemSystem {
        kind,
        mesh: mesh.clone(),
        layout: layout.clone(),
        obs_box: *obs_box,
        n_dofs,
        dof_of_vertex,
        vertex_of_dof,
        mass,
        stiffness,
        phi,
        obs_dofs,
        obs_mass,
    })
}

impl FemSystem {
    pub fn n_sources(&self) -> usize {
        self.layout.len()
    }

    /// Number of observed vertices.
    pub fn n_obs(&self) -> usize {
        self.obs_dofs.len()
    }

    /// out = Cᵀ M_obs C y for one spatial block y.
    pub fn apply_obs_weight(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n_dofs);
        debug_assert_eq!(out.len(), self.n_dofs);
        let p = self.n_obs();
        let mut gathered = vec![0.0; p];
        for (row, &dof) in self.obs_dofs.iter().enumerate() {
            gathered[row] = y[dof];
        }
        let mut weighted = vec![0.0; p];
        self.obs_mass.matvec(&gathered, &mut weighted);
        out.fill(0.0);
        for (row, &dof) in self.obs_dofs.iter().enumerate() {
            out[dof] = weighted[row];
        }
    }

    /// yᵀ Cᵀ M_obs C y for one spatial block (squared observation seminorm).
    pub fn obs_seminorm_sq(&self, y: &[f64]) -> f64 {
        let gathered: Vec<f64> = self.obs_dofs.iter().map(|&d| y[d]).collect();
        self.obs_mass.bilinear(&gathered, &gathered)
    }

    /// Dense observation selector (one unit entry per row) for tests and
    /// small-scale oracles.
    pub fn obs_matrix_dense(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n_obs(), self.n_dofs);
        for (row, &dof) in self.obs_dofs.iter().enumerate() {
            c[(row, dof)] = 1.0;
        }
        c
    }

    /// Evaluates Gaussian bump sources with the given centers at the interior
    /// vertices; used to synthesize desired states from freshly drawn sources.
    pub fn gaussian_node_values(&self, centers: &[[f64; 2]], kappa: f64, omega: f64) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(self.n_dofs, centers.len());
        for (dof, &v) in self.vertex_of_dof.iter().enumerate() {
            let x = self.mesh.vertex_coord(v);
            for (i, c) in centers.iter().enumerate() {
                let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                phi[(dof, i)] = kappa * (-d2 / omega).exp();
            }
        }
        phi
    }
}

#[cfg(test)]
mod tests;
