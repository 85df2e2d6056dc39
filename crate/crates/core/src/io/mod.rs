//! File formats: NetPBM images, the named-tensor checkpoint container and
//! flat configuration files.

pub mod checkpoint;
pub mod netpbm;
pub mod settings;
