//! A data-plane laboratory for path-aware inter-domain forwarding in the
//! style of SCION.
//!
//! The crate models a multi-AS network with typed provider/customer and
//! core links, constructs cryptographically authorized path segments whose
//! hop authenticators chain through XOR-folded segment identifiers, forwards
//! packets through per-AS router engines with configurable validity checks,
//! attacks the network with a symbolic Dolev-Yao adversary, and decides
//! path authorization, valley freedom, and loop freedom over the resulting
//! execution traces.

pub mod attacker;
pub mod authseg;
pub mod generate;
pub mod harness;
pub mod packet;
pub mod properties;
pub mod router;
pub mod scenario;
pub mod sim;
pub mod terms;
pub mod testkit;
pub mod topology;
