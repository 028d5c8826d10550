//! Published batch-reactor controllers (two-decimal entries as printed).

use crate::controller_runtime::ControllerMatrices;
use crate::linalg::Matrix;

/// Split a stacked `[A_c B_c; C_c D_c]` with `n_c` states.
fn split(rows: &[[f64; 6]], n_c: usize) -> ControllerMatrices {
    let full = Matrix::from_rows(rows);
    let n_y = full.cols() - n_c;
    let n_u = full.rows() - n_c;
    ControllerMatrices::new(
        full.submatrix(0, 0, n_c, n_c),
        full.submatrix(0, n_c, n_c, n_y),
        full.submatrix(n_c, 0, n_u, n_c),
        full.submatrix(n_c, n_c, n_u, n_y),
    )
    .expect("preset blocks are consistent")
}

/// Controller designed for a reset period of 25.
#[allow(clippy::approx_constant)]
pub fn reactor_controller_t25() -> ControllerMatrices {
    split(
        &[
            [0.26, -0.03, -0.29, 0.31, -0.52, -0.03],
            [-0.32, 1.24, 1.40, -3.05, 5.46, 1.25],
            [-0.45, 0.02, 0.87, -0.75, 2.32, -0.01],
            [-0.05, -0.04, 0.72, -0.51, 2.28, -0.08],
            [1.02, -2.65, -2.65, 6.28, -11.3, -4.09],
        ],
        4,
    )
}

/// Controller designed for a reset period of 8.
pub fn reactor_controller_t8() -> ControllerMatrices {
    split(
        &[
            [-0.18, -0.01, -0.77, 0.84, -1.11, -0.01],
            [9.17, 0.43, 13.4, -16.2, 22.8, 0.42],
            [1.24, 0.10, 3.82, -4.22, 7.81, 0.06],
            [1.32, 0.10, 3.47, -3.87, 7.89, 0.06],
            [-19.6, -0.93, -28.8, 34.9, -49.0, -2.33],
        ],
        4,
    )
}
