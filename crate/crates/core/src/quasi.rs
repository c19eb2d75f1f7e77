//! Low-discrepancy point sets on the unit cube.

use sobol::params::JoeKuoD6;
use sobol::Sobol;

/// First `n` points of the unscrambled Sobol sequence in `[0, 1)^dim`.
pub fn unit_points(dim: usize, n: usize) -> Vec<Vec<f64>> {
    if dim == 0 {
        return vec![Vec::new(); n];
    }
    let params = JoeKuoD6::standard();
    Sobol::<f64>::new(dim, &params).take(n).collect()
}
