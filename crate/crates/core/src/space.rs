//! Rectangular search domains discretised on a per-dimension binary grid.
//!
//! Each dimension `i` holds `2^bits_i` equally spaced values covering
//! `[min_i, max_i]` inclusively. A [`Chromosome`] stores the grid index of
//! every dimension as plain (non-Gray) binary, most significant bit first,
//! with all bits of the first dimension before those of the second and so on.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported resolution per dimension; keeps grid indices exact in `f64`.
pub const MAX_BITS: u32 = 52;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub min: f64,
    pub max: f64,
    pub bits: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Dimension {
    pub fn new(min: f64, max: f64, bits: u32) -> Self {
        Self {
            min,
            max,
            bits,
            name: None,
        }
    }

    /// Highest grid index, `2^bits - 1`.
    pub fn levels(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.levels() as f64
    }

    pub fn value_at(&self, index: u64) -> f64 {
        let levels = self.levels();
        if index >= levels {
            return self.max;
        }
        self.min + (self.max - self.min) * (index as f64 / levels as f64)
    }

    /// Nearest grid index after clamping; exact midpoints round away from zero.
    pub fn index_of(&self, value: f64) -> u64 {
        let levels = self.levels();
        let clamped = value.clamp(self.min, self.max);
        let t = (clamped - self.min) * levels as f64 / (self.max - self.min);
        (t.round().max(0.0) as u64).min(levels)
    }

    fn validate(&self, i: usize) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::InvalidSpace(format!("dimension {i} has non-finite bounds")));
        }
        if self.min >= self.max {
            return Err(Error::InvalidSpace(format!(
                "dimension {i}: min {} must be below max {}",
                self.min, self.max
            )));
        }
        if self.bits == 0 || self.bits > MAX_BITS {
            return Err(Error::InvalidSpace(format!(
                "dimension {i}: bits must be in 1..={MAX_BITS}, got {}",
                self.bits
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Dimension>", into = "Vec<Dimension>")]
pub struct ParameterSpace {
    dims: Vec<Dimension>,
}

impl TryFrom<Vec<Dimension>> for ParameterSpace {
    type Error = Error;

    fn try_from(dims: Vec<Dimension>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<ParameterSpace> for Vec<Dimension> {
    fn from(space: ParameterSpace) -> Self {
        space.dims
    }
}

impl ParameterSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("at least one dimension is required".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            d.validate(i)?;
        }
        Ok(Self { dims })
    }

    /// `n` identical dimensions.
    pub fn uniform(n: usize, min: f64, max: f64, bits: u32) -> Result<Self> {
        Self::new(vec![Dimension::new(min, max, bits); n])
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn total_bits(&self) -> usize {
        self.dims.iter().map(|d| d.bits as usize).sum()
    }

    pub fn step(&self, i: usize) -> f64 {
        self.dims[i].step()
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dims.len()
            && values
                .iter()
                .zip(&self.dims)
                .all(|(v, d)| *v >= d.min && *v <= d.max)
    }

    pub fn decode(&self, chromosome: &Chromosome) -> Result<Vec<f64>> {
        self.check_length(chromosome)?;
        let mut offset = 0;
        Ok(self
            .dims
            .iter()
            .map(|d| {
                let bits = d.bits as usize;
                let index = chromosome.bits[offset..offset + bits]
                    .iter()
                    .fold(0u64, |acc, &b| (acc << 1) | b as u64);
                offset += bits;
                d.value_at(index)
            })
            .collect())
    }

    /// Chromosome of the nearest grid point; out-of-range values are clamped first.
    pub fn encode(&self, values: &[f64]) -> Result<Chromosome> {
        let indices = self.indices(values)?;
        let mut bits = Vec::with_capacity(self.total_bits());
        for (index, d) in indices.into_iter().zip(&self.dims) {
            for shift in (0..d.bits).rev() {
                bits.push((index >> shift) & 1 == 1);
            }
        }
        Ok(Chromosome { bits })
    }

    /// Per-dimension grid indices of the nearest grid point.
    pub fn indices(&self, values: &[f64]) -> Result<Vec<u64>> {
        if values.len() != self.dims.len() {
            return Err(Error::Contract(format!(
                "phenotype has {} values, space has {} dimensions",
                values.len(),
                self.dims.len()
            )));
        }
        values
            .iter()
            .zip(&self.dims)
            .enumerate()
            .map(|(i, (&v, d))| {
                if v.is_finite() {
                    Ok(d.index_of(v))
                } else {
                    Err(Error::NonFinite { dim: i, value: v })
                }
            })
            .collect()
    }

    /// Nearest grid point, i.e. `decode(encode(values))`.
    pub fn snap(&self, values: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .indices(values)?
            .into_iter()
            .zip(&self.dims)
            .map(|(i, d)| d.value_at(i))
            .collect())
    }

    pub fn random_chromosome<R: Rng + ?Sized>(&self, rng: &mut R) -> Chromosome {
        Chromosome {
            bits: (0..self.total_bits()).map(|_| rng.gen::<bool>()).collect(),
        }
    }

    /// Latin hypercube points before grid snapping: per dimension, exactly one
    /// point falls in each of the `count` equal-width strata.
    pub fn lhs_points<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::with_capacity(self.dims.len()); count];
        let mut strata: Vec<usize> = (0..count).collect();
        for d in &self.dims {
            strata.shuffle(rng);
            for (point, &stratum) in points.iter_mut().zip(&strata) {
                let u: f64 = rng.gen();
                let t = (stratum as f64 + u) / count as f64;
                point.push(d.min + (d.max - d.min) * t);
            }
        }
        points
    }

    pub fn lhs_sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Chromosome>> {
        if count == 0 {
            return Err(Error::Contract("LHS sample count must be at least 1".into()));
        }
        self.lhs_points(count, rng)
            .iter()
            .map(|p| self.encode(p))
            .collect()
    }

    /// Space restricted to the listed dimensions, in the given order.
    pub fn subspace(&self, keep: &[usize]) -> Result<Self> {
        let dims = keep
            .iter()
            .map(|&i| {
                self.dims
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidSpace(format!("no dimension {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims)
    }

    fn check_length(&self, chromosome: &Chromosome) -> Result<()> {
        let expected = self.total_bits();
        if chromosome.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: chromosome.len(),
            });
        }
        Ok(())
    }
}

/// Bit-string genome. Serializes as a string of `0`/`1` characters.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chromosome {
    bits: Vec<bool>,
}

impl Chromosome {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn hamming(&self, other: &Chromosome) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }

    pub fn xor(&self, other: &Chromosome) -> Chromosome {
        Chromosome {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a ^ b).collect(),
        }
    }

    /// Packed words, used as a compact duplicate-detection key.
    pub fn packed(&self) -> Vec<u64> {
        let mut words = vec![self.bits.len() as u64];
        for chunk in self.bits.chunks(64) {
            words.push(chunk.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64));
        }
        words
    }
}

impl fmt::Display for Chromosome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Chromosome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Contract(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(|bits| Chromosome { bits })
    }
}

impl Serialize for Chromosome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Chromosome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sym12() -> ParameterSpace {
        ParameterSpace::uniform(1, -5.0, 5.0, 12).unwrap()
    }

    fn chromosome_for_index(index: u64, bits: u32) -> Chromosome {
        Chromosome::from_bits((0..bits).rev().map(|s| (index >> s) & 1 == 1).collect())
    }

    #[test]
    fn decode_endpoints() {
        let space = sym12();
        assert_eq!(space.decode(&Chromosome::zeros(12)).unwrap(), vec![-5.0]);
        let ones = Chromosome::from_bits(vec![true; 12]);
        assert_eq!(space.decode(&ones).unwrap(), vec![5.0]);
    }

    #[test]
    fn decode_interior_index() {
        // -5 + 2048 * 10 / 4095
        let v = sym12().decode(&chromosome_for_index(2048, 12)).unwrap()[0];
        assert!((v - 0.001_221_001_221_001_221).abs() < 1e-15, "{v}");
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let err = sym12().decode(&Chromosome::zeros(11)).unwrap_err();
        assert_eq!(err, Error::LengthMismatch { expected: 12, actual: 11 });
    }

    #[test]
    fn encode_examples() {
        let space = sym12();
        assert_eq!(space.encode(&[-5.0]).unwrap(), Chromosome::zeros(12));
        // (0 - (-5)) * 4095 / 10 = 2047.5, tie rounds up
        assert_eq!(space.encode(&[0.0]).unwrap(), chromosome_for_index(2048, 12));
        assert_eq!(space.encode(&[7.3]).unwrap(), Chromosome::from_bits(vec![true; 12]));
        assert!(matches!(space.encode(&[f64::NAN]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn bit_packing_is_dimension_major() {
        let space = ParameterSpace::new(vec![Dimension::new(0.0, 3.0, 2), Dimension::new(0.0, 7.0, 3)]).unwrap();
        let c = space.encode(&[1.0, 6.0]).unwrap();
        assert_eq!(c.to_string(), "01110");
        assert_eq!(space.decode(&c).unwrap(), vec![1.0, 6.0]);
    }

    #[test]
    fn invalid_spaces_rejected() {
        assert!(ParameterSpace::uniform(1, 1.0, 1.0, 4).is_err());
        assert!(ParameterSpace::uniform(1, 0.0, 1.0, 0).is_err());
        assert!(ParameterSpace::new(vec![]).is_err());
    }

    #[test]
    fn random_chromosome_is_reproducible() {
        let space = ParameterSpace::uniform(3, 0.0, 1.0, 12).unwrap();
        let a = space.random_chromosome(&mut ChaCha8Rng::seed_from_u64(5));
        let b = space.random_chromosome(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let one_bit = ParameterSpace::uniform(1, 0.0, 1.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let s = one_bit.random_chromosome(&mut rng).to_string();
            assert!(s == "0" || s == "1");
        }
    }

    #[test]
    fn random_bits_are_balanced() {
        let space = ParameterSpace::uniform(2, 0.0, 1.0, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ones = vec![0usize; 24];
        for _ in 0..10_000 {
            for (count, &bit) in ones.iter_mut().zip(space.random_chromosome(&mut rng).bits()) {
                *count += bit as usize;
            }
        }
        for count in ones {
            let frac = count as f64 / 10_000.0;
            assert!((0.47..=0.53).contains(&frac), "{frac}");
        }
    }

    #[test]
    fn lhs_four_strata() {
        let space = ParameterSpace::uniform(1, 0.0, 1.0, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut values: Vec<f64> = space.lhs_points(4, &mut rng).into_iter().map(|p| p[0]).collect();
        values.sort_by(f64::total_cmp);
        for (k, v) in values.iter().enumerate() {
            assert!(*v >= k as f64 * 0.25 && *v < (k + 1) as f64 * 0.25, "{values:?}");
        }
        // snapped values stay within half a grid step of their stratum
        let half = space.step(0) / 2.0;
        let mut snapped: Vec<f64> = space
            .lhs_sample(4, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap()
            .iter()
            .map(|c| space.decode(c).unwrap()[0])
            .collect();
        snapped.sort_by(f64::total_cmp);
        for (k, v) in snapped.iter().enumerate() {
            assert!(*v >= k as f64 * 0.25 - half && *v <= (k + 1) as f64 * 0.25 + half);
        }
    }

    #[test]
    fn lhs_seventy_strata_fully_occupied() {
        let space = ParameterSpace::uniform(2, -5.0, 5.0, 12).unwrap();
        let points = space.lhs_points(70, &mut ChaCha8Rng::seed_from_u64(21));
        for d in 0..2 {
            let mut strata: Vec<usize> = points
                .iter()
                .map(|p| (((p[d] + 5.0) / 10.0) * 70.0).floor() as usize)
                .collect();
            strata.sort_unstable();
            strata.dedup();
            assert_eq!(strata.len(), 70);
        }
        assert_eq!(space.lhs_sample(1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().len(), 1);
        assert!(space.lhs_sample(0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn chromosome_string_round_trip() {
        let c: Chromosome = "1001101".parse().unwrap();
        assert_eq!(c.to_string(), "1001101");
        assert!("10a".parse::<Chromosome>().is_err());
    }

    proptest! {
        #[test]
        fn grid_round_trip(index in 0u64..4096, lo in -100.0f64..0.0, width in 0.1f64..200.0) {
            let d = Dimension::new(lo, lo + width, 12);
            let space = ParameterSpace::new(vec![d.clone()]).unwrap();
            let v = d.value_at(index);
            prop_assert_eq!(space.snap(&[v]).unwrap(), vec![v]);
            let c = chromosome_for_index(index, 12);
            prop_assert_eq!(space.encode(&space.decode(&c).unwrap()).unwrap(), c);
        }

        #[test]
        fn decode_is_monotone(a in 0u64..4095) {
            let space = sym12();
            let lo = space.decode(&chromosome_for_index(a, 12)).unwrap()[0];
            let hi = space.decode(&chromosome_for_index(a + 1, 12)).unwrap()[0];
            prop_assert!(hi > lo);
        }

        #[test]
        fn encode_picks_nearest_grid_value(v in -6.0f64..6.0) {
            let space = sym12();
            let snapped = space.snap(&[v]).unwrap()[0];
            let clamped = v.clamp(-5.0, 5.0);
            prop_assert!((snapped - clamped).abs() <= space.step(0) / 2.0 + 1e-12);
        }
    }
}
