//! Benign/malignant classification of ultrasound video clips with a
//! dual-pathway 3D CNN and a swapped-assignment clustering head.

pub mod augment;
pub mod dataio;
pub mod experiment;
pub mod model;
pub mod numeric;
pub mod swav;
pub mod synth;
pub mod train;
