//! Parametric face model: coefficient vectors, linear bases, normals and
//! spherical-harmonics shading.

mod basis;
mod io;
mod mesh;
mod params;
mod pca;
mod shading;
pub(crate) mod template;

pub use basis::{synth_basis, FaceBasis, LANDMARK_COUNT, SIGMA_DECAY};
pub use mesh::{vertex_normals, Mesh, ShadedMesh};
pub(crate) use mesh::accumulated_normals;
pub use params::{ModelDims, ParamVector, GAMMA_LEN};
pub use pca::{compress_expression_basis, ExpressionPca};
pub use shading::{
    default_gamma, irradiance, lighting, sh_basis, sh_basis_gradient, shade_vertices, SH_C0,
};
