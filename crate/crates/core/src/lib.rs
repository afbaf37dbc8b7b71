pub mod corpus;
pub mod error;
pub mod featurizer;
pub mod hash;
pub mod model;
pub mod nn;
pub mod eval;
pub mod pipeline;
pub mod trainer;
pub mod synth;
