//! Holds the end-to-end acceptance suite under `tests/acceptance.rs`. Run it
//! alone with `cargo test -p fedtraffic-verification --test acceptance`.
