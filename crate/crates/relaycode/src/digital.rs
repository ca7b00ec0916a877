//! Digital comparison schemes: quantized BPSK packets, self-interference
//! cancellation, and the bit-level XOR relay primitive.
//!
//! A digital packet is a PN marker for frame sync followed by the BPSK
//! chips of the message's fixed-point code, everything at one amplitude so
//! the per-chip power is exactly `A^2`.

use thiserror::Error;

use crate::seqkit::{self, PnSignature};

/// Gain estimates below this absolute floor make a packet undecodable.
pub const DEGENERATE_GAIN_FLOOR: f64 = 1e-12;

/// Midpoint uniform quantizer over a symmetric range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub n_bits: u32,
    /// Symmetric range bound `Q`: codes cover `[-Q, +Q]`.
    pub range: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum DigitalError {
    #[error("quantizer needs 1..=63 bits, got {0}")]
    InvalidBitCount(u32),
    #[error("quantizer range must be positive, got {0}")]
    InvalidRange(f64),
    #[error("marker ({marker}) plus payload ({bits}) exceeds slot of {slot} chips")]
    SlotOverflow {
        marker: usize,
        bits: usize,
        slot: usize,
    },
    #[error("payload window [{start}, {end}) falls outside frame of {frame}")]
    PayloadOutOfFrame {
        start: usize,
        end: usize,
        frame: usize,
    },
    #[error("gain estimate {0:.3e} below degeneracy floor; packet undecodable")]
    DegenerateGain(f64),
    #[error(transparent)]
    Seq(#[from] seqkit::SeqError),
}

impl QuantizerSpec {
    pub fn new(n_bits: u32, range: f64) -> Result<QuantizerSpec, DigitalError> {
        if n_bits == 0 || n_bits > 63 {
            return Err(DigitalError::InvalidBitCount(n_bits));
        }
        if !(range > 0.0) {
            return Err(DigitalError::InvalidRange(range));
        }
        Ok(QuantizerSpec { n_bits, range })
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.n_bits
    }

    pub fn step(&self) -> f64 {
        2.0 * self.range / self.levels() as f64
    }
}

/// Clamps into range and codes to the containing cell; in-range inputs land
/// within `step/2` of their reconstruction.
pub fn quantize(r: f64, spec: &QuantizerSpec) -> u64 {
    let clamped = r.clamp(-spec.range, spec.range);
    let idx = ((clamped + spec.range) / spec.step()).floor() as i64;
    idx.clamp(0, spec.levels() as i64 - 1) as u64
}

/// Cell midpoint for a code.
pub fn dequantize(code: u64, spec: &QuantizerSpec) -> f64 {
    -spec.range + (code as f64 + 0.5) * spec.step()
}

/// MSB-first BPSK expansion of a code: bit 0 → −1, bit 1 → +1.
pub fn code_to_bits(code: u64, n_bits: u32) -> Vec<f64> {
    (0..n_bits)
        .rev()
        .map(|k| if (code >> k) & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// Inverse of [`code_to_bits`] by sign threshold.
pub fn bits_to_code(bits: &[f64]) -> u64 {
    bits.iter()
        .fold(0u64, |acc, &b| (acc << 1) | u64::from(b >= 0.0))
}

/// Bitwise XOR of two codes (the relay's algebraic combine).
pub fn xor_codes(a: u64, b: u64) -> u64 {
    a ^ b
}

/// A digital transmit frame: sync marker plus BPSK payload at amplitude `A`.
#[derive(Debug, Clone)]
pub struct DigitalPacket {
    pub marker: PnSignature,
    /// Unit-amplitude BPSK chips of the code, MSB first.
    pub bits: Vec<f64>,
    pub code: u64,
    /// The source message.
    pub r: f64,
    pub amplitude: f64,
}

impl DigitalPacket {
    /// Emitted stream `A·[marker ++ bits]`.
    pub fn stream(&self) -> Vec<f64> {
        self.unit_stream()
            .into_iter()
            .map(|c| self.amplitude * c)
            .collect()
    }

    /// The ±1 stream before amplitude scaling; what cancellation subtracts
    /// after estimating the received amplitude.
    pub fn unit_stream(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.marker.len() + self.bits.len());
        out.extend_from_slice(self.marker.chips());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn len(&self) -> usize {
        self.marker.len() + self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Quantizes a message and frames it behind the node's marker.
pub fn digital_encode(
    r: f64,
    marker: &PnSignature,
    spec: &QuantizerSpec,
    amplitude: f64,
    slot_len: usize,
) -> Result<DigitalPacket, DigitalError> {
    if marker.len() + spec.n_bits as usize > slot_len {
        return Err(DigitalError::SlotOverflow {
            marker: marker.len(),
            bits: spec.n_bits as usize,
            slot: slot_len,
        });
    }
    let code = quantize(r, spec);
    Ok(DigitalPacket {
        marker: marker.clone(),
        bits: code_to_bits(code, spec.n_bits),
        code,
        r,
        amplitude,
    })
}

/// Locates the node's own marker in the received composite, reads the
/// received amplitude off the correlation peak, and subtracts the
/// reconstructed own stream. Returns the residual.
pub fn cancel_self_interference(
    received: &[f64],
    own_packet: &DigitalPacket,
) -> Result<Vec<f64>, DigitalError> {
    let peak = seqkit::locate_signature(received, &own_packet.marker)?;
    let mut residual = received.to_vec();
    for (k, &c) in own_packet.unit_stream().iter().enumerate() {
        if let Some(s) = residual.get_mut(peak.offset + k) {
            *s -= peak.gain_estimate * c;
        }
    }
    Ok(residual)
}

/// Outcome of a digital payload decode.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalDecodeResult {
    pub r_hat: f64,
    pub code: u64,
    pub detected_bits: Vec<f64>,
    /// Hamming distance to the reference bits.
    pub bit_errors: u32,
    pub gain_estimate: f64,
    pub offset: usize,
}

/// Locates the sender's marker in the residual, hard-detects each payload
/// chip by the sign of `gain · sample`, and dequantizes.
///
/// `reference_bits` are the transmitted BPSK chips; the decode reports its
/// Hamming distance to them for BER accounting.
pub fn digital_decode(
    residual: &[f64],
    other_marker: &PnSignature,
    spec: &QuantizerSpec,
    reference_bits: &[f64],
) -> Result<DigitalDecodeResult, DigitalError> {
    let peak = seqkit::locate_signature(residual, other_marker)?;
    if peak.gain_estimate.abs() < DEGENERATE_GAIN_FLOOR {
        return Err(DigitalError::DegenerateGain(peak.gain_estimate));
    }
    let start = peak.offset + other_marker.len();
    let end = start + spec.n_bits as usize;
    if end > residual.len() {
        return Err(DigitalError::PayloadOutOfFrame {
            start,
            end,
            frame: residual.len(),
        });
    }
    let sign = peak.gain_estimate.signum();
    let detected_bits: Vec<f64> = residual[start..end]
        .iter()
        .map(|&s| if sign * s >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    let code = bits_to_code(&detected_bits);
    let bit_errors = detected_bits
        .iter()
        .zip(reference_bits)
        .filter(|(a, b)| a.signum() != b.signum())
        .count() as u32;
    Ok(DigitalDecodeResult {
        r_hat: dequantize(code, spec),
        code,
        detected_bits,
        bit_errors,
        gain_estimate: peak.gain_estimate,
        offset: peak.offset,
    })
}
