//! Conditional flows, interaction fields, and the constructive mapping between them.

pub mod config;
pub mod coupling;
pub mod datasets;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod flows;
pub mod point;
pub mod rng;
pub mod superposition;
pub mod trainer;

pub use coupling::{Coupling, CouplingMode};
pub use error::{Error, Result};
pub use fields::{field_from_flow, flow_from_field, FieldKind, FieldSpec, FieldValue, VectorField};
pub use flows::{FlowKind, FlowSpec, VeVariant};
pub use point::{EndpointPair, ExtendedPoint, Point};
pub use rng::{gaussian_draw, RngStream};
