pub mod cohort;
pub mod forest;
pub mod impute;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod survival;
pub mod weights;
