use super::*;
use crate::linalg::BandedLu;
use approx::assert_relative_eq;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn desk_gaussians() -> SourceLayout {
    SourceLayout::gaussian_grid(3, 0.25, 100.0, 0.05).unwrap()
}

#[test]
fn vertex_counts() {
    assert_eq!(StructuredMesh::new(1.0 / 64.0).unwrap().n_vertices(), 4225);
    assert_eq!(StructuredMesh::new(1.0 / 16.0).unwrap().n_vertices(), 289);
    assert_eq!(StructuredMesh::new(1.0 / 16.0).unwrap().n_interior(), 225);
}

#[test]
fn rejects_non_divisor_step() {
    assert!(StructuredMesh::new(0.3).is_err());
    assert!(StructuredMesh::new(0.0).is_err());
    assert!(StructuredMesh::new(-0.1).is_err());
    assert!(StructuredMesh::new(1.0 / 7.0).is_ok());
}

#[test]
fn boundary_classification_and_coords() {
    let mesh = StructuredMesh::new(0.25).unwrap();
    assert_eq!(mesh.n_vertices(), 25);
    assert!(mesh.is_boundary(0));
    assert!(mesh.is_boundary(4));
    assert!(!mesh.is_boundary(6));
    assert_eq!(mesh.vertex_coord(6), [0.25, 0.25]);
    assert_eq!(mesh.cells().count(), 16);
}

#[test]
fn full_mass_sums_to_domain_area() {
    // The basis is a partition of unity, so summing all entries of the
    // pre-elimination mass matrix integrates 1 over the unit square.
    let mesh = StructuredMesh::new(0.125).unwrap();
    for kind in [FemKind::Poisson, FemKind::ConvectionDiffusion] {
        let (mass, _) = match kind {
            FemKind::Poisson => poisson::full_matrices(&mesh),
            FemKind::ConvectionDiffusion => convdiff::full_matrices(&mesh),
        };
        let total: f64 = mass.iter().map(|t| t.2).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn poisson_matrices_symmetric_and_positive() {
    let mesh = StructuredMesh::new(1.0 / 8.0).unwrap();
    let fem = assemble_poisson(&mesh, &desk_gaussians(), &ObsBox::default()).unwrap();
    assert_eq!(fem.n_dofs, 49);
    assert!(fem.mass.max_symmetry_defect() < 1e-14);
    assert!(fem.stiffness.max_symmetry_defect() < 1e-12);
    // SPD via Cholesky.
    assert!(nalgebra::Cholesky::new(fem.mass.to_dense()).is_some());
    assert!(nalgebra::Cholesky::new(fem.stiffness.to_dense()).is_some());
}

#[test]
fn convdiff_operator_positive_definite() {
    let mesh = StructuredMesh::new(1.0 / 8.0).unwrap();
    let layout = SourceLayout::square_grid(3, 100.0).unwrap();
    let fem = assemble_convection_diffusion(&mesh, &layout, &ObsBox::default()).unwrap();
    assert!(fem.mass.max_symmetry_defect() < 1e-14);
    assert!(fem.stiffness.max_symmetry_defect() > 1e-6, "transport should be nonsymmetric");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let v: Vec<f64> = (0..fem.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(fem.stiffness.bilinear(&v, &v) > 0.0);
    }
}

#[test]
fn poisson_solution_converges_at_order_two() {
    // Manufactured solution u = sin(πx)·sin(πy), forcing g = 2π²·u;
    // the discrete solve K y = M g_I should converge at order 2 in L².
    let exact = |x: f64, y: f64| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
    let mut errors = Vec::new();
    for divisions in [8usize, 16, 32] {
        let mesh = StructuredMesh::from_divisions(divisions).unwrap();
        let fem = assemble_poisson(&mesh, &desk_gaussians(), &ObsBox::default()).unwrap();
        let g: Vec<f64> = fem
            .vertex_of_dof
            .iter()
            .map(|&v| {
                let [x, y] = mesh.vertex_coord(v);
                2.0 * std::f64::consts::PI.powi(2) * exact(x, y)
            })
            .collect();
        let mut rhs = vec![0.0; fem.n_dofs];
        fem.mass.matvec(&g, &mut rhs);
        let lu = BandedLu::from_csr(&fem.stiffness).unwrap();
        let y_h = lu.solve(&rhs);
        // Nodal coefficients over all vertices (0 on the boundary).
        let coeff = |v: usize| fem.dof_of_vertex[v].map_or(0.0, |d| y_h[d]);
        // L² error by mid-edge quadrature on each triangle.
        let mut err_sq = 0.0;
        let side = mesh.side();
        for (cx, cy, _) in mesh.cells() {
            let v00 = cy * side + cx;
            let tris = [
                [v00, v00 + 1, v00 + side + 1],
                [v00, v00 + side + 1, v00 + side],
            ];
            for tri in tris {
                let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.vertex_coord(v)).collect();
                let c: Vec<f64> = tri.iter().map(|&v| coeff(v)).collect();
                let area = 0.5 * mesh.step() * mesh.step();
                for (a, b) in [(0usize, 1usize), (1, 2), (2, 0)] {
                    let mx = 0.5 * (p[a][0] + p[b][0]);
                    let my = 0.5 * (p[a][1] + p[b][1]);
                    let uh = 0.5 * (c[a] + c[b]);
                    err_sq += area / 3.0 * (uh - exact(mx, my)).powi(2);
                }
            }
        }
        errors.push(err_sq.sqrt());
    }
    let rate1 = (errors[0] / errors[1]).log2();
    let rate2 = (errors[1] / errors[2]).log2();
    assert!((rate1 - 2.0).abs() < 0.25, "rate {rate1}");
    assert!((rate2 - 2.0).abs() < 0.25, "rate {rate2}");
}

#[test]
fn gaussian_width_matches_overlap_rule() {
    let w = gaussian_width_from_overlap(1.0 / 6.0, 0.05).unwrap();
    assert_relative_eq!(w, (1.0 / 36.0) / 20.0f64.ln(), epsilon = 1e-15);
    assert_relative_eq!(w, 9.2727e-3, epsilon = 1e-6);
    // The defining property: neighbor center sees fraction·κ.
    let layout = SourceLayout::gaussian_grid(5, 1.0 / 6.0, 100.0, 0.05).unwrap();
    let c0 = layout.centers[0];
    let c1 = layout.centers[1];
    assert_relative_eq!(layout.evaluate(0, c1), 0.05 * 100.0, epsilon = 1e-10);
    assert_relative_eq!(layout.evaluate(0, c0), 100.0);
    assert!(gaussian_width_from_overlap(1.0 / 6.0, 0.0).is_err());
    assert!(gaussian_width_from_overlap(1.0 / 6.0, 1.0).is_err());
}

#[test]
fn phi_peaks_at_source_centers() {
    // Desk layout centers coincide with grid vertices at h = 1/16.
    let mesh = StructuredMesh::new(1.0 / 16.0).unwrap();
    let layout = desk_gaussians();
    let fem = assemble_poisson(&mesh, &layout, &ObsBox::default()).unwrap();
    for (i, c) in layout.centers.iter().enumerate() {
        let ix = (c[0] * 16.0).round() as usize;
        let iy = (c[1] * 16.0).round() as usize;
        let dof = fem.dof_of_vertex[iy * mesh.side() + ix].unwrap();
        assert_relative_eq!(fem.phi[(dof, i)], 100.0, epsilon = 1e-12);
    }
}

#[test]
fn square_sources_partition_the_domain() {
    let mesh = StructuredMesh::new(1.0 / 16.0).unwrap();
    let layout = SourceLayout::square_grid(5, 100.0).unwrap();
    let fem = assemble_convection_diffusion(&mesh, &layout, &ObsBox::default()).unwrap();
    for dof in 0..fem.n_dofs {
        let row_sum: f64 = (0..fem.n_sources()).map(|i| fem.phi[(dof, i)]).sum();
        assert_relative_eq!(row_sum, 100.0, epsilon = 1e-12);
        let nonzero = (0..fem.n_sources())
            .filter(|&i| fem.phi[(dof, i)] != 0.0)
            .count();
        assert_eq!(nonzero, 1);
    }
}

#[test]
fn observation_selector_shape() {
    let mesh = StructuredMesh::new(1.0 / 16.0).unwrap();
    let fem = assemble_poisson(&mesh, &desk_gaussians(), &ObsBox::default()).unwrap();
    assert_eq!(fem.n_obs(), 25); // vertices at 4/16 ..= 8/16 in each direction
    let c = fem.obs_matrix_dense();
    for r in 0..c.nrows() {
        let ones = (0..c.ncols()).filter(|&j| c[(r, j)] != 0.0).count();
        assert_eq!(ones, 1);
    }
    // Columns are distinct unit vectors: column sums are 0 or 1.
    for j in 0..c.ncols() {
        let s: f64 = (0..c.nrows()).map(|r| c[(r, j)]).sum();
        assert!(s == 0.0 || s == 1.0);
    }
    // obs mass is SPD and sums to the box area.
    assert!(nalgebra::Cholesky::new(fem.obs_mass.to_dense()).is_some());
    assert_relative_eq!(fem.obs_mass.sum_entries(), 0.0625, epsilon = 1e-12);
}

#[test]
fn misaligned_or_out_of_range_boxes_rejected() {
    let mesh = StructuredMesh::new(1.0 / 16.0).unwrap();
    let layout = desk_gaussians();
    let bad = ObsBox {
        x0: 0.26,
        x1: 0.5,
        y0: 0.25,
        y1: 0.5,
    };
    assert!(assemble_poisson(&mesh, &layout, &bad).is_err());
    let outside = ObsBox {
        x0: 0.0,
        x1: 0.5,
        y0: 0.25,
        y1: 0.5,
    };
    assert!(assemble_poisson(&mesh, &layout, &outside).is_err());
}

#[test]
fn layout_validation() {
    assert!(SourceLayout::gaussian_grid(0, 0.25, 100.0, 0.05).is_err());
    assert!(SourceLayout::gaussian_grid(9, 0.25, 100.0, 0.05).is_err()); // exceeds square
    let mut layout = desk_gaussians();
    layout.centers[0] = [1.5, 0.5];
    assert!(layout.validate().is_err());
    // Shape mismatch per problem kind.
    let mesh = StructuredMesh::new(0.125).unwrap();
    let squares = SourceLayout::square_grid(3, 100.0).unwrap();
    assert!(assemble_poisson(&mesh, &squares, &ObsBox::default()).is_err());
    assert!(assemble_convection_diffusion(&mesh, &desk_gaussians(), &ObsBox::default()).is_err());
}

#[test]
fn obs_weight_application_matches_dense() {
    let mesh = StructuredMesh::new(1.0 / 8.0).unwrap();
    let fem = assemble_poisson(&mesh, &desk_gaussians(), &ObsBox::default()).unwrap();
    let c = fem.obs_matrix_dense();
    let m_obs = fem.obs_mass.to_dense();
    let dense = c.transpose() * &m_obs * &c;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y: Vec<f64> = (0..fem.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; fem.n_dofs];
    fem.apply_obs_weight(&y, &mut out);
    let expected = dense * nalgebra::DVector::from_column_slice(&y);
    for i in 0..fem.n_dofs {
        assert_relative_eq!(out[i], expected[i], epsilon = 1e-12);
    }
    // The weighting matrix is singular whenever the box is a strict subset.
    assert!(nalgebra::Cholesky::new(c.transpose() * m_obs * &c).is_none());
}
