//! Acceptance checks for the trustvote pipeline live in `tests/acceptance.rs`.
//! Run them with `cargo test -p trustvote-suite --test acceptance`.
