pub mod congestion;
pub mod crypto;
pub mod handover;
pub mod net;
pub mod netem;
pub mod sim;
pub mod transport;
pub mod xads;
