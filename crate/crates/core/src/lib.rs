pub mod apps;
pub mod bits;
pub mod keymgmt;
pub mod keyrate;
pub mod photonics;
pub mod postproc;
pub mod sim;
pub mod topology;
