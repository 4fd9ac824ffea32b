pub mod autodiff;
pub mod editing;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod inversion;
pub mod latent;
pub mod nn;
pub mod perception;
pub mod rng;
pub mod synthesis;
pub mod tower;
pub mod training;
pub mod workspace;

pub use error::{Error, Result};
pub use image::{Image, Mask};
pub use latent::{LatentCode, Space};
pub use perception::{FeatureExtractor, FeatureMap};
pub use rng::SeededRng;
pub use synthesis::{GeneratorConfig, GeneratorModel, MapperConfig};
pub use workspace::{Dataset, DatasetSpec};
