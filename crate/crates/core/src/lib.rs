//! Snapshot near-infrared hyperspectral imaging through a diffractive optical
//! element.
//!
//! The crate follows the physical pipeline: [`doe`] builds the height map,
//! [`propagation`] turns it into per-wavelength PSFs, [`encoder`] forms the
//! single sensor image, and [`recon`] or [`net`] decode it back into a
//! datacube. [`metrics`] scores the result and [`cli`] wires everything to the
//! `nirsnap` binary.

// Validation relies on `!(x > 0.0)` rejecting NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binio;
pub mod cli;
pub mod config;
pub mod cube;
pub mod doe;
pub mod encoder;
pub mod error;
pub mod fft;
pub mod grid;
pub mod metrics;
pub mod net;
pub mod propagation;
pub mod recon;
pub mod spectral;

pub use cube::HyperCube;
pub use doe::{DoeFabSpec, HeightMap, MaterialModel, RadialProfile};
pub use encoder::{EncodedImage, SensorModel};
pub use error::{Error, Result};
pub use propagation::{ComplexField, OpticalConfig, PsfStack};
pub use spectral::SpectralGrid;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/doe.md")]
    mod doe {}
    #[doc = include_str!("../../../book/src/psf.md")]
    mod psf {}
    #[doc = include_str!("../../../book/src/encoding.md")]
    mod encoding {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
