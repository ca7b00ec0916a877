//! Chip-level baseband simulation of wireless relay network coding.
//!
//! Three schemes share one delay/fading/AWGN relay channel model:
//!
//! - **Routing**: the relay decodes and re-forwards each direction in its
//!   own time slot (4 slots for a bidirectional exchange).
//! - **DNC**: digital network coding; the relay decodes both packets and
//!   broadcasts their XOR (3 slots).
//! - **ANC / RAS**: real-amplitude-scaling analog network coding; sources
//!   transmit simultaneously, the relay amplifies-and-forwards the
//!   superposed waveform, and each node solves a least-squares system over
//!   segment sums of the received composite to recover every message
//!   (2 slots).
//!
//! The crate is organized bottom-up: [`seqkit`] (PN sequences and
//! correlation), [`channel`] (link draws, propagation, superposition),
//! [`linsys`] (dense least squares), [`ras`] (the RAS codec), [`digital`]
//! (quantized BPSK schemes), and [`harness`] (Monte Carlo sweeps and CSV
//! emission). The `relaycode` binary in [`cli`] drives sweeps from the
//! command line.

pub mod channel;
pub mod cli;
pub mod digital;
pub mod harness;
pub mod linsys;
pub mod ras;
pub mod seqkit;

pub use channel::{ChannelConfig, EndToEndGain, LinkRealization};
pub use seqkit::{NodeId, PeakEstimate, PnSignature, SigSlot};
