//! Flat binary parameter files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `AGVP` |
//! | 4     | format version (`1`) |
//! | 4     | family tag (1 tabular, 2 linear, 3 mlp, 4 gaussian) |
//! | 24    | three `u64` shape fields, unused ones zero |
//! | 8     | dimension `d` |
//! | 8     | seed |
//! | 8 d   | `f64` parameters |
//!
//! Shape fields are `(states, actions, 0)` for tabular, `(features,
//! actions, 0)` for linear, `(features, hidden, actions)` for mlp and
//! `(features, action_dim, 0)` for gaussian policies.

use crate::error::{Error, Result};
use crate::policy::{DifferentiablePolicy, PolicyFamily};

pub const MAGIC: &[u8; 4] = b"AGVP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 24 + 8 + 8;

fn shape(family: PolicyFamily) -> [u64; 3] {
    match family {
        PolicyFamily::TabularSoftmax { num_states, num_actions } => [num_states as u64, num_actions as u64, 0],
        PolicyFamily::LinearSoftmax { num_features, num_actions } => [num_features as u64, num_actions as u64, 0],
        PolicyFamily::MlpSoftmax { num_features, hidden, num_actions } => {
            [num_features as u64, hidden as u64, num_actions as u64]
        }
        PolicyFamily::Gaussian { num_features, action_dim } => [num_features as u64, action_dim as u64, 0],
    }
}

fn family_from(tag: u32, s: [u64; 3]) -> Result<PolicyFamily> {
    let [a, b, c] = s.map(|v| v as usize);
    Ok(match tag {
        1 => PolicyFamily::TabularSoftmax { num_states: a, num_actions: b },
        2 => PolicyFamily::LinearSoftmax { num_features: a, num_actions: b },
        3 => PolicyFamily::MlpSoftmax { num_features: a, hidden: b, num_actions: c },
        4 => PolicyFamily::Gaussian { num_features: a, action_dim: b },
        _ => return Err(Error::Data(format!("unknown family tag {tag}"))),
    })
}

pub fn encode(policy: &DifferentiablePolicy) -> Vec<u8> {
    let theta = policy.theta();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * theta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&policy.family().tag().to_le_bytes());
    for v in shape(policy.family()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    out.extend_from_slice(&policy.seed().to_le_bytes());
    for x in theta {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DifferentiablePolicy> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Data(format!("parameter file of {} bytes is shorter than its header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Data("bad magic, not a parameter file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Data(format!("unsupported format version {version}")));
    }
    let family = family_from(u32_at(8), [u64_at(12), u64_at(20), u64_at(28)])?;
    let dim = u64_at(36) as usize;
    let seed = u64_at(44);
    if dim != family.dim() {
        return Err(Error::Data(format!("dimension {dim} does not match a {} of dimension {}", family.name(), family.dim())));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * dim {
        return Err(Error::Data(format!("expected {} parameter bytes, found {}", 8 * dim, body.len())));
    }
    let theta = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DifferentiablePolicy::with_theta(family, theta, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_family() {
        let families = [
            PolicyFamily::TabularSoftmax { num_states: 3, num_actions: 2 },
            PolicyFamily::LinearSoftmax { num_features: 4, num_actions: 3 },
            PolicyFamily::MlpSoftmax { num_features: 4, hidden: 5, num_actions: 2 },
            PolicyFamily::Gaussian { num_features: 2, action_dim: 1 },
        ];
        for (i, f) in families.into_iter().enumerate() {
            let p = DifferentiablePolicy::new(f, 40 + i as u64);
            let bytes = encode(&p);
            assert_eq!(bytes.len(), HEADER_LEN + 8 * f.dim());
            assert_eq!(decode(&bytes).unwrap(), p);
        }
    }

    #[test]
    fn rejects_corruption() {
        let p = DifferentiablePolicy::new(PolicyFamily::TabularSoftmax { num_states: 2, num_actions: 2 }, 1);
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(decode(&bad).is_err());
    }
}
