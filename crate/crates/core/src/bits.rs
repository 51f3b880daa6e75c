//! Bit strings used for challenges, responses, inserted values and masks.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_len, Error, Result};

/// An ordered sequence of bits, one `u8` (0 or 1) per element.
///
/// Serializes as a `"0101"` string. Position `i` in the string is element `i`.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitString(Vec<u8>);

/// A full-length challenge `c_1 … c_k`.
pub type Challenge = BitString;
/// A partial challenge of `k − m` bits, as seen on the wire.
pub type PartialChallenge = BitString;

impl BitString {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn zeros(len: usize) -> Self {
        Self(alloc::vec![0; len])
    }

    /// Builds a bit string from 0/1 values.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::invalid(alloc::format!("bit value {bad} is not 0 or 1")));
        }
        Ok(Self(bits.to_vec()))
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        Self(bits.into_iter().map(u8::from).collect())
    }

    /// Low `len` bits of `value`, most significant first.
    pub fn from_uint(value: u64, len: usize) -> Self {
        Self((0..len).rev().map(|i| ((value >> i) & 1) as u8).collect())
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self((0..len).map(|_| rng.random::<bool>() as u8).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        self.0[i] = bit as u8;
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit as u8);
    }

    #[inline]
    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.iter().copied()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| b ^ 1).collect())
    }

    pub fn xor(&self, other: &Self) -> Result<Self> {
        check_len(self.len(), other.len())?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect()))
    }

    pub fn hamming_distance(&self, other: &Self) -> Result<usize> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }

    /// Packs the bits MSB-first into `ceil(len / 8)` bytes; padding bits are zero.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = alloc::vec![0u8; self.len().div_ceil(8)];
        for (i, &b) in self.0.iter().enumerate() {
            out[i / 8] |= b << (7 - (i % 8));
        }
        out
    }

    /// Inverse of [`to_packed`](Self::to_packed). Returns the bit index of the
    /// first non-zero padding bit on failure.
    pub fn from_packed(bytes: &[u8], len: usize) -> core::result::Result<Self, usize> {
        debug_assert_eq!(bytes.len(), len.div_ceil(8));
        let bits = (0..len).map(|i| (bytes[i / 8] >> (7 - (i % 8))) & 1).collect();
        for i in len..bytes.len() * 8 {
            if (bytes[i / 8] >> (7 - (i % 8))) & 1 == 1 {
                return Err(i);
            }
        }
        Ok(Self(bits))
    }
}

impl From<Vec<bool>> for BitString {
    fn from(v: Vec<bool>) -> Self {
        Self::from_bools(v)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::invalid(alloc::format!("'{other}' is not a bit"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Self)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        let text: String = self.0.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        s.serialize_str(&text)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
