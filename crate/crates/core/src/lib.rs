//! Ghost-penalty stabilized unfitted Raviart–Thomas discretization of the
//! Darcy problem on Cartesian background meshes.

pub mod analysis;
pub mod assembly;
pub mod experiments;
pub mod geometry;
pub mod mesh;
pub mod polynomial;
pub mod quadrature;
pub mod spaces;

pub use analysis::{
    compute_norms, condition_number, divergence_report, solve, AnalysisError, ConditionMode, DivergenceReport,
    ErrorRules, MixedSolution, NormReport,
};
pub use assembly::{
    assemble_system, AssembledSystem, AssemblyError, Discretization, ExactSolution, FormulationConfig, ProblemData,
    ReducedSystem, Stabilization,
};
pub use experiments::{registry, registry_names, run_experiment, ExperimentError, ExperimentSpec, SpecError};
pub use geometry::{BcMode, BoundaryTag, CellClass, Domain, DomainKind, GeometryError, Point, Rect};
pub use mesh::{build_mesh, classify_mesh, BackgroundMesh, MeshClassification, MeshError};
pub use spaces::DofHandler;

/// Any failure of the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}
