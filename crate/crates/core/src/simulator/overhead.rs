use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::codec::{CodecProfile, IPV4_BASE_HEADER_LEN};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OverheadRow {
    pub size: u64,
    pub added_bytes: u64,
    #[serde(skip)]
    pub ratio: Ratio<u64>,
    /// Percentage rounded half-up to four decimals, e.g. "2.6667%".
    pub percent: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("packet size {0} is smaller than a bare IPv4 header")]
pub struct OverheadError(pub u64);

/// Option bytes relative to whole-packet size, one row per size.
pub fn overhead_report(profile: &CodecProfile, sizes: &[u64]) -> Result<Vec<OverheadRow>, OverheadError> {
    let added = profile.padded_len() as u64;
    sizes
        .iter()
        .map(|&size| {
            if size < IPV4_BASE_HEADER_LEN as u64 {
                return Err(OverheadError(size));
            }
            let ratio = Ratio::new(added, size);
            Ok(OverheadRow {
                size,
                added_bytes: added,
                ratio,
                percent: format_percent(ratio),
            })
        })
        .collect()
}

/// `r` as a percentage with four decimals, rounding half up.
pub fn format_percent(r: Ratio<u64>) -> String {
    let scaled = Ratio::new(u128::from(*r.numer()) * 1_000_000, u128::from(*r.denom()));
    let rounded = (scaled + Ratio::new(1, 2)).floor().to_integer();
    format!("{}.{:04}%", rounded / 10_000, rounded % 10_000)
}
