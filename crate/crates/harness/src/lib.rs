//! Holds the `acceptance` test target. Its package name sorts last in the
//! workspace, so `cargo test --workspace` runs it after every other suite.
