//! Bilinear quadrilateral elements for the convection-diffusion problem.
//!
//! The transport operator combines unit diffusion with the recirculating wind
//!     w(x) = ( 2·x₂·(1 − x₁²),  −2·x₁·(1 − x₂²) )
//! and streamline-upwind (SUPG) stabilization. The stabilization enters the
//! transport operator only; the mass matrix stays the plain Galerkin one so it
//! remains symmetric positive definite.

use super::StructuredMesh;

pub(super) fn wind(x: [f64; 2]) -> [f64; 2] {
    [
        2.0 * x[1] * (1.0 - x[0] * x[0]),
        -2.0 * x[0] * (1.0 - x[1] * x[1]),
    ]
}

/// SUPG parameter for one element:
///     τ = h_e / (2‖w‖) · (coth(Pe) − 1/Pe),   Pe = ‖w‖·h_e / 2,
/// evaluated with the wind at the element centroid and unit diffusion.
/// A series expansion covers the small-Péclet limit (τ → h²/12).
fn supg_tau(h: f64, wind_norm: f64) -> f64 {
    if wind_norm < 1e-14 {
        return 0.0;
    }
    let pe = wind_norm * h / 2.0;
    let xi = if pe < 1e-4 {
        pe / 3.0 - pe.powi(3) / 45.0
    } else {
        1.0 / pe.tanh() - 1.0 / pe
    };
    h / (2.0 * wind_norm) * xi
}

/// 3-point Gauss rule on [−1, 1].
const GAUSS: [(f64, f64); 3] = [
    (-0.7745966692414834, 0.5555555555555556),
    (0.0, 0.8888888888888888),
    (0.7745966692414834, 0.5555555555555556),
];

/// Reference shape functions at (ξ, η), corner order (00, 10, 11, 01).
fn shapes(xi: f64, eta: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let n = [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ];
    let dxi = [
        -0.25 * (1.0 - eta),
        0.25 * (1.0 - eta),
        0.25 * (1.0 + eta),
        -0.25 * (1.0 + eta),
    ];
    let deta = [
        -0.25 * (1.0 - xi),
        -0.25 * (1.0 + xi),
        0.25 * (1.0 + xi),
        0.25 * (1.0 - xi),
    ];
    (n, dxi, deta)
}

/// Element matrices (mass, transport) for the cell with lower-left corner
/// (x0, y0) and side h.
fn q1_element(x0: f64, y0: f64, h: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let centroid = [x0 + 0.5 * h, y0 + 0.5 * h];
    let w_c = wind(centroid);
    let w_norm = (w_c[0] * w_c[0] + w_c[1] * w_c[1]).sqrt();
    let tau = supg_tau(h, w_norm);

    let jac = h / 2.0; // per axis
    let det = jac * jac;
    let inv_jac = 2.0 / h;

    let mut mass = [[0.0; 4]; 4];
    let mut transport = [[0.0; 4]; 4];
    for &(xi, wx) in &GAUSS {
        for &(eta, wy) in &GAUSS {
            let weight = wx * wy * det;
            let (n, dxi, deta) = shapes(xi, eta);
            let x = [x0 + (xi + 1.0) * jac, y0 + (eta + 1.0) * jac];
            let w = wind(x);
            let gx: [f64; 4] = std::array::from_fn(|i| dxi[i] * inv_jac);
            let gy: [f64; 4] = std::array::from_fn(|i| deta[i] * inv_jac);
            let stream: [f64; 4] = std::array::from_fn(|i| w[0] * gx[i] + w[1] * gy[i]);
            for i in 0..4 {
                for j in 0..4 {
                    mass[i][j] += weight * n[i] * n[j];
                    let diffusion = gx[i] * gx[j] + gy[i] * gy[j];
                    let convection = n[i] * stream[j];
                    let stabilization = tau * stream[i] * stream[j];
                    transport[i][j] += weight * (diffusion + convection + stabilization);
                }
            }
        }
    }
    (mass, transport)
}

pub(super) fn full_matrices(
    mesh: &StructuredMesh,
) -> (Vec<(usize, usize, f64)>, Vec<(usize, usize, f64)>) {
    let h = mesh.step();
    let mut mass = Vec::new();
    let mut stiff = Vec::new();
    for (cx, cy, corners) in mesh.cells() {
        let (m_e, k_e) = q1_element(cx as f64 * h, cy as f64 * h, h);
        for i in 0..4 {
            for j in 0..4 {
                mass.push((corners[i], corners[j], m_e[i][j]));
                stiff.push((corners[i], corners[j], k_e[i][j]));
            }
        }
    }
    (mass, stiff)
}

/// Mass contribution of a single cell, as vertex triplets.
pub(super) fn cell_mass(mesh: &StructuredMesh, cx: usize, cy: usize) -> Vec<(usize, usize, f64)> {
    let h = mesh.step();
    let (m_e, _) = q1_element(cx as f64 * h, cy as f64 * h, h);
    let side = mesh.side();
    let v00 = cy * side + cx;
    let corners = [v00, v00 + 1, v00 + side + 1, v00 + side];
    let mut out = Vec::with_capacity(16);
    for i in 0..4 {
        for j in 0..4 {
            out.push((corners[i], corners[j], m_e[i][j]));
        }
    }
    out
}
