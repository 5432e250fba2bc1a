//! Panel data, network structure, parameter transforms and moment
//! systems for the system of estimating equations.

mod moments;
mod network;
mod panel;
mod transform;

pub use moments::{
    assemble_linear_moments, evaluate_quadratic_moments, evaluate_scores, LinearMomentSystem,
    QuadPair, QuadraticMomentSet,
};
pub use network::NetworkSpec;
pub use panel::PanelData;
pub use transform::{
    build_lagged_transform, build_network_transform, build_spatial_transform,
    build_spillover_transform, single_equation_transform, TransformSpec,
};
