//! Symbolic Dolev-Yao simulator for the OpenID Financial-grade API
//! authorization flows: honest browsers, clients, authorization and
//! resource servers, a network attacker, security monitors and schedulers.

pub mod attacker;
pub mod authserver;
pub mod browser;
pub mod client;
pub mod https;
pub mod monitors;
pub mod resourceserver;
pub mod runtime;
pub mod scenario;
pub mod terms;
