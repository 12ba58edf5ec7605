//! Test-only oracles and synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;
pub mod planted;
pub mod trials;
