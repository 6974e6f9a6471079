pub mod diagnostics;
pub mod harness;
pub mod hmc;
pub mod modefinder;
pub mod numerics;
pub mod regeneration;
pub mod targets;
pub mod textfmt;
pub mod wormhole;
