//! Electromagnetic core: Green's tensors and coupled-dipole scattering.

mod axial;
mod dda;
mod green;
mod linsolve;
mod voxel;

pub use axial::{AxialSolution, AxialSystem, SourceFields};
pub use dda::{assemble_scattering, BornCell, ScatteringSolution};
pub use green::{free_space_green, free_space_green_zz_axial, Dyadic, Vec3};
pub use linsolve::SolverOptions;
pub use voxel::{
    polarizability, polarizability_derivative, ResolutionProfile, Ring, RingCloud, RingShape,
    Voxel, VoxelCloud,
};
