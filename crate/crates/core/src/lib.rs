pub mod classifier;
pub mod datagen;
pub mod dataset;
pub mod desk;
pub mod embed;
pub mod eval;
pub mod extract;
pub mod pipeline;
pub mod prompts;
pub mod registry;
pub mod text;
