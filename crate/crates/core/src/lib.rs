//! Reflectionless scattering modes of truncated inverted power-law potentials.

pub mod cli_io;
pub mod eigensolver;
pub mod fit;
pub mod hamiltonian;
pub mod ode;
pub mod par;
pub mod potentials;
pub mod rzero;
pub mod scattering;
pub mod sweeps;
pub mod wkb;
