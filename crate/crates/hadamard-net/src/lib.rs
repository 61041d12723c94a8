//! A complex-valued neural-network engine that trains and infers entirely in
//! the frequency domain.
//!
//! Convolutions become Hadamard products after the DFT, norm-scaling
//! activations commute with the transform, and backpropagation runs on
//! Wirtinger calculus: dual gradients `(dL/dz, dL/dzbar)` for activations,
//! conjugate gradients only for parameters. A slow reference oracle and a
//! space-domain twin network make every layer's commutation with the DFT
//! machine-checkable.

pub mod checkpoint;
pub mod data;
pub mod layers;
pub mod network;
pub mod oracle;
pub mod spectral;
pub mod training;
pub mod verify;
pub mod wirtinger;

pub use spectral::{Domain, KernelPattern, SpectralTensor, C64};
