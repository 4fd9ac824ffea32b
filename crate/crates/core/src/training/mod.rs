//! Parameter learning: GAN pre-training and the two encoder variants.

pub mod loops;
pub mod losses;
pub mod nets;

pub use loops::*;
pub use losses::*;
pub use nets::*;