pub mod dataio;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod vit;
