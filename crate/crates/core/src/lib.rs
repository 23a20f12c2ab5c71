pub mod bench;
pub mod linalg;
pub mod model;
pub mod ochs;
pub mod qp;
pub mod selftest;
pub mod tilt;
