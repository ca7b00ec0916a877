//! The Real Amplitude Scaling codec.
//!
//! A RAS packet is two equal-length PN sequences back to back: a marker at
//! fixed amplitude and a data signature whose amplitude carries the
//! message. All sources transmit simultaneously; the relay forwards the
//! superposition unchanged, so each node receives
//!
//! ```text
//! y[t] = Σ_i  g_i · ( A·marker_i[t-d_i]  ++  scale_i·sig_i[t-d_i-L] ) + noise
//! ```
//!
//! with one unknown pair per node: `z_i = A·g_i` (marker contribution) and
//! `x_i = scale_i·g_i` (payload contribution). Decoding is a two-stage
//! pipeline:
//!
//! 1. **Correlator** — estimate every node's total delay `d_i` from marker
//!    correlation peaks. A single pass of plain peak picking is unreliable
//!    once several faded users overlap, so the locator iterates: after each
//!    per-node peak pick it subtracts the estimated packets of the other
//!    nodes and re-locates on the residual, restarting from a different
//!    node order if the converged configuration does not explain the
//!    received energy.
//! 2. **Joint decoding** — cut the received stream into segments, one
//!    linear equation per segment: the right-hand side is the plain sample
//!    sum over the segment and each node contributes the partial chip sums
//!    of whichever of its signatures overlap that segment. One extra
//!    consistency row ties the decoder's own pair together
//!    (`x_own = ratio_own·z_own`). The overdetermined system is solved in
//!    the least-squares sense and every message is read off the ratio
//!    `x_i / z_i`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linsys::{self, LeastSquaresProblem};
use crate::seqkit::{self, dot, PeakEstimate, PnSignature};

/// Marker amplitude in the packet layout; payload scaling is relative to it.
pub const MARKER_AMPLITUDE: f64 = 1.0;

/// Ratios with `|z|` below this fraction of the largest `|z|` are reported
/// as undecodable instead of dividing by a vanishing gain.
pub const DEGENERATE_GAIN_FLOOR: f64 = 1e-12;

/// Multiplier on the expected noise residual above which a solved system
/// is rejected as model mismatch (wrong marker offsets).
pub const RESIDUAL_GATE_FACTOR: f64 = 3.0;

/// Iteration caps for the cancelling locator.
const SIC_MAX_PASSES: usize = 30;
const SIC_RESTARTS: usize = 4;

/// Maps a message onto the payload amplitude: `(100·r + 40) / 40`.
pub fn scale_message(r: f64) -> f64 {
    (100.0 * r + 40.0) / 40.0
}

/// Inverse of [`scale_message`].
pub fn unscale_ratio(scale: f64) -> f64 {
    (40.0 * scale - 40.0) / 100.0
}

/// One node's pair of signatures (marker first, data signature second).
#[derive(Debug, Clone)]
pub struct NodeSignatures {
    pub marker: PnSignature,
    pub data: PnSignature,
}

impl NodeSignatures {
    pub fn sig_len(&self) -> usize {
        self.marker.len()
    }
}

/// A source node's RAS transmit frame.
#[derive(Debug, Clone)]
pub struct RasPacket {
    pub marker: PnSignature,
    pub data_signature: PnSignature,
    /// Payload amplitude `(100·r + 40)/40`.
    pub scale: f64,
    /// The message the packet encodes.
    pub r: f64,
}

impl RasPacket {
    /// Emitted stream at unit marker amplitude: `[marker ++ scale·sig]`,
    /// length `2L`.
    pub fn unit_stream(&self) -> Vec<f64> {
        self.stream_with_marker_amplitude(MARKER_AMPLITUDE)
    }

    /// Emitted stream with the marker section scaled to `a` and the payload
    /// section scaled by `a·scale` relative chips; used by equal-power
    /// operation where the marker amplitude is solved from the power budget.
    pub fn stream_with_marker_amplitude(&self, a: f64) -> Vec<f64> {
        let l = self.marker.len();
        let mut out = Vec::with_capacity(2 * l);
        out.extend(self.marker.chips().iter().map(|&c| a * c));
        out.extend(self.data_signature.chips().iter().map(|&c| self.scale * c));
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RasError {
    #[error("marker and data signature must share one length ({marker} vs {data})")]
    LengthMismatch { marker: usize, data: usize },
    #[error("received stream is empty")]
    EmptyReceived,
    #[error("segment length must be at least 1")]
    InvalidSegmentLen,
    #[error("need one location per node ({nodes} nodes, {locations} locations)")]
    LocationCountMismatch { nodes: usize, locations: usize },
    #[error("node {index} packet at offset {offset} does not fit frame of {frame}")]
    OffsetOutOfFrame {
        index: usize,
        offset: usize,
        frame: usize,
    },
    #[error("unknown node index {index} (network has {nodes})")]
    UnknownNode { index: usize, nodes: usize },
    #[error("segment system is rank deficient (rank {rank} of {cols})")]
    RankDeficient { rank: usize, cols: usize },
    #[error("solution residual {residual:.3e} exceeds the noise gate {gate:.3e}")]
    ResidualMismatch { residual: f64, gate: f64 },
    #[error(transparent)]
    Seq(#[from] seqkit::SeqError),
}

/// Builds a RAS packet from a message and the node's signature pair.
pub fn ras_encode(
    r: f64,
    marker: &PnSignature,
    data_signature: &PnSignature,
) -> Result<RasPacket, RasError> {
    if marker.len() != data_signature.len() {
        return Err(RasError::LengthMismatch {
            marker: marker.len(),
            data: data_signature.len(),
        });
    }
    Ok(RasPacket {
        marker: marker.clone(),
        data_signature: data_signature.clone(),
        scale: scale_message(r),
        r,
    })
}

/// One plain correlation peak per marker over the full composite.
pub fn locate_all_markers(
    received: &[f64],
    markers: &[PnSignature],
) -> Result<Vec<PeakEstimate>, RasError> {
    markers
        .iter()
        .map(|m| seqkit::locate_signature(received, m).map_err(RasError::from))
        .collect()
}

/// Marker location with successive cancellation.
///
/// Offsets are searched over `0..=max_offset` (the receiver knows the slot
/// timing, so the total two-hop delay is bounded). Each pass re-locates
/// every node on the composite minus the other nodes' current packet
/// estimates; passes repeat until the configuration is stable. If the
/// converged packets leave more residual energy than `noise_sigma2` can
/// account for, the search restarts from a different processing order and
/// the best configuration found is kept.
pub fn locate_markers_sic(
    received: &[f64],
    network: &[NodeSignatures],
    max_offset: usize,
    noise_sigma2: f64,
) -> Result<Vec<PeakEstimate>, RasError> {
    let n = network.len();
    if received.is_empty() {
        return Err(RasError::EmptyReceived);
    }
    for (index, node) in network.iter().enumerate() {
        if max_offset + 2 * node.sig_len() > received.len() {
            return Err(RasError::OffsetOutOfFrame {
                index,
                offset: max_offset,
                frame: received.len(),
            });
        }
    }
    let frame = received.len();
    let norm_y = received.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gate = RESIDUAL_GATE_FACTOR * (noise_sigma2 * frame as f64).sqrt()
        + 1e-9 * norm_y.max(1.0);

    let mut best: Option<(Vec<SicState>, f64)> = None;
    for attempt in 0..SIC_RESTARTS.min(n.max(1)) {
        // Rotated first-pass order; later passes go strongest-first.
        let order0: Vec<usize> = (0..n).map(|i| (i + attempt) % n).collect();
        let states = sic_converge(received, network, max_offset, &order0);
        let resid = sic_residual_norm(received, network, &states);
        if best.as_ref().map_or(true, |(_, r)| resid < *r) {
            best = Some((states, resid));
        }
        if best.as_ref().unwrap().1 <= gate {
            break;
        }
    }
    let (states, _) = best.expect("at least one attempt");
    Ok(states
        .iter()
        .zip(network)
        .map(|(s, node)| PeakEstimate {
            offset: s.offset,
            peak_value: s.marker_amp * node.sig_len() as f64,
            gain_estimate: s.marker_amp,
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct SicState {
    offset: usize,
    marker_amp: f64,
    payload_amp: f64,
}

fn sic_converge(
    received: &[f64],
    network: &[NodeSignatures],
    max_offset: usize,
    order0: &[usize],
) -> Vec<SicState> {
    let n = network.len();
    let mut states = vec![
        SicState {
            offset: 0,
            marker_amp: 0.0,
            payload_amp: 0.0,
        };
        n
    ];
    let mut residual = received.to_vec();
    let mut order: Vec<usize> = order0.to_vec();
    for pass in 0..SIC_MAX_PASSES {
        if pass > 0 {
            order.sort_by(|&a, &b| {
                states[b]
                    .marker_amp
                    .abs()
                    .partial_cmp(&states[a].marker_amp.abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        }
        let mut max_delta = 0.0f64;
        let mut amp_scale = 0.0f64;
        let mut offsets_moved = false;
        for &i in &order {
            let node = &network[i];
            let l = node.sig_len();
            // Put node i's current packet back; residual now excludes
            // everybody else only.
            apply_packet(&mut residual, node, states[i], 1.0);
            let mut best_d = 0;
            let mut best_v = f64::NEG_INFINITY;
            for d in 0..=max_offset {
                let v = dot(&residual[d..d + l], node.marker.chips());
                if v > best_v {
                    best_v = v;
                    best_d = d;
                }
            }
            let marker_amp = best_v / l as f64;
            let payload_amp =
                dot(&residual[best_d + l..best_d + 2 * l], node.data.chips()) / l as f64;
            let next = SicState {
                offset: best_d,
                marker_amp,
                payload_amp,
            };
            offsets_moved |= next.offset != states[i].offset;
            max_delta = max_delta
                .max((next.marker_amp - states[i].marker_amp).abs())
                .max((next.payload_amp - states[i].payload_amp).abs());
            amp_scale = amp_scale.max(marker_amp.abs()).max(payload_amp.abs());
            states[i] = next;
            apply_packet(&mut residual, node, states[i], -1.0);
        }
        if pass >= 3 && !offsets_moved && max_delta <= 1e-12 * amp_scale.max(1e-300) {
            break;
        }
    }
    states
}

fn apply_packet(buffer: &mut [f64], node: &NodeSignatures, state: SicState, sign: f64) {
    let l = node.sig_len();
    let d = state.offset;
    for (k, &c) in node.marker.chips().iter().enumerate() {
        buffer[d + k] += sign * state.marker_amp * c;
    }
    for (k, &c) in node.data.chips().iter().enumerate() {
        buffer[d + l + k] += sign * state.payload_amp * c;
    }
}

fn sic_residual_norm(received: &[f64], network: &[NodeSignatures], states: &[SicState]) -> f64 {
    let mut residual = received.to_vec();
    for (node, &state) in network.iter().zip(states) {
        apply_packet(&mut residual, node, state, -1.0);
    }
    residual.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// The per-segment linear system `C·[z_1,x_1,...,z_N,x_N]^T = Y`.
///
/// Column layout is interleaved per node: `z_i` at column `2i`, `x_i` at
/// `2i+1`, recorded in `col_map`.
#[derive(Debug, Clone)]
pub struct SegmentSystem {
    pub c: DMatrix<f64>,
    pub y: DVector<f64>,
    pub col_map: Vec<(usize, usize)>,
    pub segment_len: usize,
    /// Rows built from segments (excludes appended constraint rows).
    pub segment_rows: usize,
}

impl SegmentSystem {
    /// Appends the own-message consistency row `x_own - ratio·z_own = 0`.
    ///
    /// `own_ratio` is the known amplitude ratio of the node's own payload to
    /// its marker (the message run through [`scale_message`], divided by the
    /// marker amplitude when that is not 1).
    pub fn append_own_constraint(
        &mut self,
        own_ratio: f64,
        own_index: usize,
    ) -> Result<(), RasError> {
        let nodes = self.col_map.len();
        if own_index >= nodes {
            return Err(RasError::UnknownNode {
                index: own_index,
                nodes,
            });
        }
        let (zc, xc) = self.col_map[own_index];
        let rows = self.c.nrows();
        let mut c = self.c.clone().insert_row(rows, 0.0);
        c[(rows, zc)] = -own_ratio;
        c[(rows, xc)] = 1.0;
        self.c = c;
        self.y = self.y.clone().insert_row(rows, 0.0);
        Ok(())
    }

    pub fn problem(&self) -> LeastSquaresProblem {
        LeastSquaresProblem {
            a: self.c.clone(),
            b: self.y.clone(),
        }
    }
}

/// Assembles the segment system from the received composite, the marker
/// locations, and the known signature chips.
///
/// For segment `k` spanning samples `[a, b)`: `Y[k]` is the plain sample
/// sum, and node `i` contributes the partial chip sum of its marker over
/// `[a, b) ∩ [d_i, d_i+L)` in its z column and of its data signature over
/// `[a, b) ∩ [d_i+L, d_i+2L)` in its x column; both are zero without
/// overlap, and both are present when the segment straddles the two
/// signatures. The trailing partial segment is kept as a shorter row.
pub fn build_segment_system(
    received: &[f64],
    network: &[NodeSignatures],
    locations: &[PeakEstimate],
    segment_len: usize,
) -> Result<SegmentSystem, RasError> {
    if received.is_empty() {
        return Err(RasError::EmptyReceived);
    }
    if segment_len == 0 {
        return Err(RasError::InvalidSegmentLen);
    }
    if network.len() != locations.len() {
        return Err(RasError::LocationCountMismatch {
            nodes: network.len(),
            locations: locations.len(),
        });
    }
    let frame = received.len();
    for (index, (node, loc)) in network.iter().zip(locations).enumerate() {
        if loc.offset + 2 * node.sig_len() > frame {
            return Err(RasError::OffsetOutOfFrame {
                index,
                offset: loc.offset,
                frame,
            });
        }
    }
    let n = network.len();
    let rows = frame.div_ceil(segment_len);
    let mut c = DMatrix::zeros(rows, 2 * n);
    let mut y = DVector::zeros(rows);
    for k in 0..rows {
        let a = k * segment_len;
        let b = ((k + 1) * segment_len).min(frame);
        y[k] = received[a..b].iter().sum();
        for (i, (node, loc)) in network.iter().zip(locations).enumerate() {
            let l = node.sig_len();
            let d = loc.offset;
            c[(k, 2 * i)] = overlap_sum(node.marker.chips(), d, a, b);
            c[(k, 2 * i + 1)] = overlap_sum(node.data.chips(), d + l, a, b);
        }
    }
    Ok(SegmentSystem {
        c,
        y,
        col_map: (0..n).map(|i| (2 * i, 2 * i + 1)).collect(),
        segment_len,
        segment_rows: rows,
    })
}

/// Sum of `chips` (placed at `start`) over the sample window `[a, b)`.
fn overlap_sum(chips: &[f64], start: usize, a: usize, b: usize) -> f64 {
    let lo = a.max(start);
    let hi = b.min(start + chips.len());
    if hi <= lo {
        return 0.0;
    }
    chips[lo - start..hi - start].iter().sum()
}

/// Solved unknown pairs, one `(z, x)` per node in network order.
#[derive(Debug, Clone)]
pub struct UnknownSolution {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

impl UnknownSolution {
    pub fn from_vector(v: &DVector<f64>, col_map: &[(usize, usize)]) -> UnknownSolution {
        UnknownSolution {
            z: col_map.iter().map(|&(zc, _)| v[zc]).collect(),
            x: col_map.iter().map(|&(_, xc)| v[xc]).collect(),
        }
    }
}

/// Amplitude-ratio estimate for one node; `None` when the solved marker
/// gain is too close to zero to divide by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub node_index: usize,
    pub ratio: Option<f64>,
}

/// Reads off `x_i / z_i` for every node other than the decoder's own.
pub fn decode_ratios(solution: &UnknownSolution, own_index: usize) -> Vec<RatioEstimate> {
    let floor = DEGENERATE_GAIN_FLOOR
        * solution
            .z
            .iter()
            .fold(0.0f64, |acc, &z| acc.max(z.abs()));
    (0..solution.z.len())
        .filter(|&i| i != own_index)
        .map(|i| RatioEstimate {
            node_index: i,
            ratio: if solution.z[i].abs() <= floor {
                None
            } else {
                Some(solution.x[i] / solution.z[i])
            },
        })
        .collect()
}

/// Decoded message estimate for one node; `None` marks a degenerate gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageEstimate {
    pub node_index: usize,
    pub r_hat: Option<f64>,
}

/// Full decode pipeline: cancelling correlator, segment system, own-message
/// constraint, least squares, ratio readout, amplitude unscaling.
///
/// `noise_sigma2` is the per-sample noise variance at this receiver; it
/// parameterizes the residual gate that rejects mislocated systems.
#[allow(clippy::too_many_arguments)]
pub fn ras_decode(
    received: &[f64],
    own_index: usize,
    r_own: f64,
    network: &[NodeSignatures],
    segment_len: usize,
    max_offset: usize,
    marker_amplitude: f64,
    noise_sigma2: f64,
) -> Result<Vec<MessageEstimate>, RasError> {
    if own_index >= network.len() {
        return Err(RasError::UnknownNode {
            index: own_index,
            nodes: network.len(),
        });
    }
    let locations = locate_markers_sic(received, network, max_offset, noise_sigma2)?;
    let mut system = build_segment_system(received, network, &locations, segment_len)?;
    system.append_own_constraint(scale_message(r_own) / marker_amplitude, own_index)?;
    let solution = linsys::solve_ls(&system.problem()).map_err(|e| match e {
        linsys::LinsysError::RankDeficient { rank, cols } => {
            RasError::RankDeficient { rank, cols }
        }
        other => panic!("segment system shape is valid by construction: {other}"),
    })?;

    // Model-mismatch gate: wrong offsets leave signal energy the noise
    // budget cannot explain. The constraint row is noiseless, so degrees of
    // freedom come from the segment rows alone.
    let dof = system.segment_rows.saturating_sub(2 * network.len()).max(1);
    let norm_y = system.y.norm();
    let gate = RESIDUAL_GATE_FACTOR * (noise_sigma2 * segment_len as f64 * dof as f64).sqrt()
        + 1e-9 * norm_y.max(1.0);
    if solution.residual_norm > gate {
        return Err(RasError::ResidualMismatch {
            residual: solution.residual_norm,
            gate,
        });
    }

    let unknowns = UnknownSolution::from_vector(&solution.v, &system.col_map);
    Ok(decode_ratios(&unknowns, own_index)
        .into_iter()
        .map(|est| MessageEstimate {
            node_index: est.node_index,
            r_hat: est.ratio.map(|rho| unscale_ratio(rho * marker_amplitude)),
        })
        .collect())
}
