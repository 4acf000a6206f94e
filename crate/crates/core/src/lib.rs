//! Numerical laboratory for the coefficient inverse problem of the
//! second-order mean field games system
//!
//! ```text
//! u_t + Δu − k(x)|∇u|²/2 + ∫_Ω Y(x,y) m(y,t) dy + f(x,t) m = 0,
//! m_t − Δm − div(k(x) m ∇u) = 0,          (x,t) ∈ Ω × (0,T),
//! ```
//!
//! on the prism `Ω = (a,b) × Π(−B_i, B_i)`.
//!
//! * [`grid`]: tensor grid, finite differences, quadrature and norms.
//! * [`kernels`]: the three interaction-kernel forms and the majorant `G`.
//! * [`mfg`]: Fokker–Planck / HJB marching, Picard coupling, manufactured triples.
//! * [`carleman`]: the Carleman weight, estimate functional and integral lemmas.
//! * [`cip`]: single-measurement data, noise injection and data distances.
//! * [`stability`]: difference systems, reconstruction of `k₁ − k₂`,
//!   parameter calculus and the Hölder sweep.

pub mod carleman;
pub mod cip;
pub mod error;
pub mod family;
pub mod fit;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod mfg;
pub mod stability;
mod stencil;

pub use error::{Error, Result};
pub use grid::{make_grid, BoundaryTrace, Face, Field, Grid, Norm, Prism, Region, Side, SpaceField};

pub(crate) mod par {
    /// Maps `0..n` through `f`, in parallel when the `parallel` feature is on.
    #[cfg(feature = "parallel")]
    pub fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }

    #[cfg(not(feature = "parallel"))]
    pub fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        (0..n).map(f).collect()
    }
}
