pub(crate) mod attention;
pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod fft;
pub(crate) mod linear;
pub(crate) mod norm;
pub(crate) mod shape;

pub use norm::BatchStats;
