//! Acceptance suite for `fdloc`; see `tests/acceptance.rs`.
