//! Numerical toolkit for Finsler metrics of constant flag curvature.
//!
//! The crate builds concrete metric families (the round sphere, a
//! phase-parametrized family of non-reversible metrics on spheres whose
//! geodesics are projective lines, and Hilbert metrics on convex bodies)
//! and provides the machinery to interrogate them numerically: fundamental
//! and Cartan tensors, geodesic sprays and integrators, flag-curvature
//! sampling and constancy certification, the two-dimensional magnetic
//! surface calculus with its Zoll pipeline, and the exact character
//! arithmetic behind the generality count for such structures.
//!
//! See the `book/` directory for a guided tour; every chapter's snippets run
//! as doc-tests of this crate.

// Index loops mirror the tensor formulas they implement, and negated
// comparisons are deliberate NaN traps.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characters;
pub mod cli;
pub mod curvature;
pub mod dual;
pub mod error;
pub mod gallery;
pub mod jet;
pub mod metric;
pub mod spray;
pub mod surface;

pub use error::{Error, Result};

// Book chapters double as doc-tests so the guide cannot drift from the API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(unused)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(
        MetricsAndOracles,
        "../../../book/src/metrics-and-oracles.md"
    );
    chapter!(
        GeodesicsAndSprays,
        "../../../book/src/geodesics-and-sprays.md"
    );
    chapter!(FlagCurvature, "../../../book/src/flag-curvature.md");
    chapter!(QuadricFamily, "../../../book/src/quadric-family.md");
    chapter!(HilbertMetrics, "../../../book/src/hilbert-metrics.md");
    chapter!(SurfacesAndZoll, "../../../book/src/surfaces-and-zoll.md");
    chapter!(
        StructureEquations,
        "../../../book/src/structure-equations.md"
    );
    chapter!(
        CharacterArithmetic,
        "../../../book/src/character-arithmetic.md"
    );
    chapter!(CommandLine, "../../../book/src/command-line.md");
}
