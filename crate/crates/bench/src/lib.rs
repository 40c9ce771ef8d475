//! Shared fixtures for the benchmarks.

use twospeed::generator::{assemble, GeneratorMatrix, Grid};
use twospeed::FieldSpec;

pub fn goldstein_taylor(n: usize) -> GeneratorMatrix {
    assemble(
        &FieldSpec::constant(1.0),
        &FieldSpec::constant(-1.0),
        &FieldSpec::constant(1.0),
        Grid::new(n).expect("benchmark grids have at least 8 cells"),
    )
    .expect("Goldstein-Taylor generator")
}

/// `b2 = -1 + 0.4 sin(2 pi x)`.
pub fn variant(n: usize) -> GeneratorMatrix {
    assemble(
        &FieldSpec::constant(1.0),
        &FieldSpec::trigonometric(-1.0, 0.4, 0.0),
        &FieldSpec::constant(1.0),
        Grid::new(n).expect("benchmark grids have at least 8 cells"),
    )
    .expect("variant generator")
}
