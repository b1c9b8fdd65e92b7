//! Piecewise-linear elements for the heat problem.
//!
//! Every grid cell is split into two triangles along the diagonal from its
//! lower-left to its upper-right corner, which keeps the vertex set equal to
//! the grid vertices.

use super::StructuredMesh;

/// Element matrices for a linear triangle with the given corner coordinates.
/// Returns (mass, stiffness) as row-major 3×3 arrays.
fn tri_element(p: [[f64; 2]; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();

    // Barycentric gradients: ∇λ_i = rot(p_{i+1} − p_{i+2}) / det.
    let mut grads = [[0.0f64; 2]; 3];
    for i in 0..3 {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        grads[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }

    let mut mass = [[0.0; 3]; 3];
    let mut stiff = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            mass[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
            stiff[i][j] = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
        }
    }
    (mass, stiff)
}

fn cell_triangles(mesh: &StructuredMesh, cx: usize, cy: usize) -> [[usize; 3]; 2] {
    let side = mesh.side();
    let v00 = cy * side + cx;
    let (v10, v01, v11) = (v00 + 1, v00 + side, v00 + side + 1);
    [[v00, v10, v11], [v00, v11, v01]]
}

/// Assembles mass and stiffness triplets over all vertices (no boundary
/// treatment here).
pub(super) fn full_matrices(
    mesh: &StructuredMesh,
) -> (Vec<(usize, usize, f64)>, Vec<(usize, usize, f64)>) {
    let mut mass = Vec::new();
    let mut stiff = Vec::new();
    for (cx, cy, _) in mesh.cells() {
        for tri in cell_triangles(mesh, cx, cy) {
            let coords = [
                mesh.vertex_coord(tri[0]),
                mesh.vertex_coord(tri[1]),
                mesh.vertex_coord(tri[2]),
            ];
            let (m_e, k_e) = tri_element(coords);
            for i in 0..3 {
                for j in 0..3 {
                    mass.push((tri[i], tri[j], m_e[i][j]));
                    stiff.push((tri[i], tri[j], k_e[i][j]));
                }
            }
        }
    }
    (mass, stiff)
}

/// Mass contribution of a single cell (both triangles), as vertex triplets.
pub(super) fn cell_mass(mesh: &StructuredMesh, cx: usize, cy: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(18);
    for tri in cell_triangles(mesh, cx, cy) {
        let coords = [
            mesh.vertex_coord(tri[0]),
            mesh.vertex_coord(tri[1]),
            mesh.vertex_coord(tri[2]),
        ];
        let (m_e, _) = tri_element(coords);
        for i in 0..3 {
            for j in 0..3 {
                out.push((tri[i], tri[j], m_e[i][j]));
            }
        }
    }
    out
}
