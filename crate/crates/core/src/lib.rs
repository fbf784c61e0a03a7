//! Structured-light 3D scanning over a polarization channel.
//!
//! A projector emits vertical stripes that differ only in their angle of
//! linear polarization; radiance stays uniform, so the pattern is invisible
//! to an ordinary camera and does not fight scene texture. A polarization
//! camera recovers per-pixel Stokes vectors, the stripe code identifies
//! projector columns, and triangulation yields depth. Because the projected
//! light is fully polarized and the surface response is linear in the
//! Stokes domain, the same captures also separate diffuse from specular
//! reflection and support reflectance fitting.
//!
//! Modules follow the pipeline order:
//!
//! * [`polarization`]: Stokes/Mueller algebra and the sensor mosaic model,
//! * [`codebook`]: constrained de Bruijn stripe codes over AoLP levels,
//! * [`reflectance`]: the polarimetric surface response model,
//! * [`simulator`]: synthetic rendering of scenes under stripe illumination,
//! * [`decoder`]: single-shot stripe decoding and triangulation,
//! * [`decompose`]: diffuse/specular separation from decoded correspondences,
//! * [`brdf`]: reflectance parameter fitting and relighting,
//! * [`dense`]: multi-frame per-pixel decoding with shifted patterns,
//! * [`interp`]: scattered-data densification,
//! * [`eval`]: reconstruction metrics,
//! * [`io`]: file formats shared with the command-line tools.

pub mod brdf;
pub mod codebook;
pub mod decoder;
pub mod decompose;
pub mod dense;
pub mod dp;
pub mod eval;
pub mod interp;
pub mod io;
pub mod polarization;
pub mod reflectance;
pub mod simulator;

pub use brdf::{FitConfig, FitError, FitResult, FitSample, NormalEstimate, RelightSource, SurfacePoint};
pub use codebook::{CodeParams, ConstraintGraph, ProjectorPattern};
pub use decoder::{Correspondence, DecodeConfig, DecodeResult, StokesPair};
pub use decompose::{DecomposeSummary, DecomposedPoint, MuellerEstimate, ReflectionSplit};
pub use dense::{
    DenseConfig, DenseError, DenseResult, MotionMask, ShiftedPatternSet, StokesStack,
};
pub use eval::ErrorStats;
pub use interp::InterpError;
pub use io::{CloudFile, CloudPoint, IoError, PatternFile};
pub use polarization::{
    LinearPolarizationState, MuellerMatrix, PolarimetricImage, RawIntensityImage, StokesVector,
};
pub use reflectance::{BrdfParams, ReflectanceSample, ShadingGeometry};
pub use simulator::{GroundTruth, Material, RenderOptions, Rig, Scene, SceneObject, Surface, Texture};
