#![allow(dead_code)]

pub mod checks;
pub mod fixtures;
pub mod grads;
pub mod identities;
pub mod oracle;
pub mod reference;
pub mod stopping;
