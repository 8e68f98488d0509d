//! Contractive compressors and their uplink payloads.
//!
//! A compressor `C` is `q^2`-contractive when `E||C(x) - x||^2 <= q^2 ||x||^2`.
//! Top-k and Rand-k (without rescaling) both satisfy this with
//! `q^2 = 1 - k/p`; the identity has `q^2 = 0`.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressorKind {
    Identity,
    TopK,
    RandK,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Retain {
    Count(usize),
    /// Fraction in `(0, 1]`, resolved as `ceil(r * p)`.
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub retain: Retain,
}

impl CompressorSpec {
    pub fn identity() -> Self {
        CompressorSpec {
            kind: CompressorKind::Identity,
            retain: Retain::Ratio(1.0),
        }
    }

    pub fn top_k(k: usize) -> Self {
        CompressorSpec {
            kind: CompressorKind::TopK,
            retain: Retain::Count(k),
        }
    }

    pub fn top_ratio(r: f64) -> Self {
        CompressorSpec {
            kind: CompressorKind::TopK,
            retain: Retain::Ratio(r),
        }
    }

    pub fn rand_k(k: usize) -> Self {
        CompressorSpec {
            kind: CompressorKind::RandK,
            retain: Retain::Count(k),
        }
    }

    pub fn rand_ratio(r: f64) -> Self {
        CompressorSpec {
            kind: CompressorKind::RandK,
            retain: Retain::Ratio(r),
        }
    }

    /// Number of retained coordinates at dimension `dim`.
    pub fn resolve(&self, dim: usize) -> Result<usize> {
        if dim == 0 {
            return Err(Error::invalid("compressor dimension must be positive"));
        }
        if self.kind == CompressorKind::Identity {
            return Ok(dim);
        }
        let k = match self.retain {
            Retain::Count(k) => {
                if k == 0 {
                    return Err(Error::invalid("retained count must be at least 1"));
                }
                k
            }
            Retain::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::invalid(format!(
                        "retain ratio must lie in (0, 1], got {r}"
                    )));
                }
                ((r * dim as f64).ceil() as usize).max(1)
            }
        };
        if k > dim {
            return Err(Error::RetainExceedsDim { k, dim });
        }
        Ok(k)
    }

    /// `q^2` at dimension `dim`.
    pub fn contraction_factor(&self, dim: usize) -> Result<f64> {
        let k = self.resolve(dim)?;
        Ok(match self.kind {
            CompressorKind::Identity => 0.0,
            _ => 1.0 - k as f64 / dim as f64,
        })
    }

    /// Compress `x`, returning the payload and its densified vector.
    ///
    /// Top-k keeps the largest magnitudes, breaking ties by lowest index.
    /// Rand-k draws `k` distinct indices from `rng` and does not rescale.
    pub fn compress(
        &self,
        x: &ParamVector,
        rng: Option<&mut RngStream>,
    ) -> Result<(SparsePayload, ParamVector)> {
        let dim = x.len();
        let k = self.resolve(dim)?;
        if self.kind != CompressorKind::Identity && dim as u64 > u32::MAX as u64 + 1 {
            return Err(Error::invalid(
                "sparse payloads use 4-byte indices; dimension too large",
            ));
        }
        let values = x.as_slice();
        let payload = match self.kind {
            CompressorKind::Identity => SparsePayload::dense(values.to_vec()),
            CompressorKind::TopK => {
                let mut order: Vec<usize> = (0..dim).collect();
                let by_magnitude = |a: &usize, b: &usize| {
                    values[*b].abs().total_cmp(&values[*a].abs()).then(a.cmp(b))
                };
                if k < dim {
                    order.select_nth_unstable_by(k - 1, by_magnitude);
                }
                let mut kept = order[..k].to_vec();
                kept.sort_unstable();
                SparsePayload::sparse(dim, kept.into_iter().map(|i| (i as u32, values[i])))
            }
            CompressorKind::RandK => {
                let rng = rng.ok_or_else(|| Error::invalid("rand-k requires an rng stream"))?;
                let mut kept = index::sample(rng, dim, k).into_vec();
                kept.sort_unstable();
                SparsePayload::sparse(dim, kept.into_iter().map(|i| (i as u32, values[i])))
            }
        };
        let dense = payload.densify();
        Ok((payload, dense))
    }
}

/// Compressed message. Sparse payloads carry `(index, value)` pairs with
/// strictly increasing indices; dense payloads carry every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePayload {
    dim: usize,
    dense: bool,
    entries: Vec<(u32, f64)>,
}

const HEADER_BYTES: usize = 8 + 1 + 8;

impl SparsePayload {
    pub fn dense(values: Vec<f64>) -> Self {
        let dim = values.len();
        SparsePayload {
            dim,
            dense: true,
            entries: values
                .into_iter()
                .enumerate()
                .map(|(i, v)| (i as u32, v))
                .collect(),
        }
    }

    fn sparse(dim: usize, entries: impl Iterator<Item = (u32, f64)>) -> Self {
        SparsePayload {
            dim,
            dense: false,
            entries: entries.collect(),
        }
    }

    /// Validating constructor for sparse payloads.
    pub fn from_entries(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::invalid("payload indices must strictly increase"));
            }
        }
        if let Some((i, _)) = entries.last() {
            if *i as usize >= dim {
                return Err(Error::invalid(format!(
                    "payload index {i} out of range {dim}"
                )));
            }
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { op: "payload" });
        }
        Ok(SparsePayload {
            dim,
            dense: false,
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_dense(&self) -> bool {
        self.dense
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn densify(&self) -> ParamVector {
        let mut out = vec![0.0; self.dim];
        for (i, v) in &self.entries {
            out[*i as usize] = *v;
        }
        ParamVector::new(out).expect("payload entries are finite")
    }

    /// Accounted size: 8 bytes per retained element (index + value) for
    /// sparse payloads, 4 bytes per coordinate for dense ones.
    pub fn payload_bytes(&self) -> u64 {
        if self.dense {
            4 * self.dim as u64
        } else {
            8 * self.entries.len() as u64
        }
    }

    /// Canonical wire form: `dim: u64 LE`, `dense: u8`, `count: u64 LE`, then
    /// `(u32 index, f32 value)` pairs, or `dim` f32 values when dense.
    /// Values are rounded to single precision here and nowhere else.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.payload_bytes() as usize);
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.push(u8::from(self.dense));
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (i, v) in &self.entries {
            if !self.dense {
                out.extend_from_slice(&i.to_le_bytes());
            }
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Decode(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        let dim = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let dense = match bytes[8] {
            0 => false,
            1 => true,
            b => return Err(Error::Decode(format!("bad dense flag {b}"))),
        };
        let count = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        if dim > u32::MAX as u64 + 1 {
            return Err(Error::Decode(format!(
                "dimension {dim} exceeds 32-bit index range"
            )));
        }
        let dim = dim as usize;
        let body = &bytes[HEADER_BYTES..];
        let width = if dense { 4 } else { 8 };
        let count = usize::try_from(count).map_err(|_| Error::Decode("count overflow".into()))?;
        if dense && count != dim {
            return Err(Error::Decode(format!(
                "dense payload count {count} != dim {dim}"
            )));
        }
        if body.len() != count.saturating_mul(width) {
            return Err(Error::Decode(format!(
                "expected {} body bytes, found {}",
                count.saturating_mul(width),
                body.len()
            )));
        }
        let f32_at = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap()) as f64;
        if dense {
            let values: Vec<f64> = body.chunks_exact(4).map(f32_at).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "payload" });
            }
            Ok(SparsePayload::dense(values))
        } else {
            let entries = body
                .chunks_exact(8)
                .map(|c| {
                    (
                        u32::from_le_bytes(c[0..4].try_into().unwrap()),
                        f32_at(&c[4..8]),
                    )
                })
                .collect();
            SparsePayload::from_entries(dim, entries).map_err(|e| Error::Decode(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn top1_keeps_largest_magnitude() {
        let x = pv(&[1.0, -3.0, 2.0]);
        let (payload, dense) = CompressorSpec::top_k(1).compress(&x, None).unwrap();
        assert_eq!(dense, pv(&[0.0, -3.0, 0.0]));
        assert_eq!(payload.entries(), &[(1, -3.0)]);
        // ||C(x) - x||^2 = 5 against q^2 ||x||^2 = (2/3) * 14
        let err = dense.sub(&x).unwrap().sq_norm();
        let q2 = CompressorSpec::top_k(1).contraction_factor(3).unwrap();
        assert_eq!(err, 5.0);
        assert!(err <= q2 * x.sq_norm());
        assert!((q2 * x.sq_norm() - 28.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_ties_prefer_lowest_index() {
        let x = pv(&[2.0, -2.0, 2.0, 1.0]);
        let (_, dense) = CompressorSpec::top_k(2).compress(&x, None).unwrap();
        assert_eq!(dense, pv(&[2.0, -2.0, 0.0, 0.0]));
    }

    #[test]
    fn identity_is_dense_and_exact() {
        let x = pv(&[0.5, -1.25, 3.0]);
        let (payload, dense) = CompressorSpec::identity().compress(&x, None).unwrap();
        assert!(payload.is_dense());
        assert_eq!(dense, x);
        assert_eq!(payload.payload_bytes(), 12);
    }

    #[test]
    fn contraction_factors() {
        assert_eq!(CompressorSpec::top_k(5).contraction_factor(5).unwrap(), 0.0);
        let q2 = CompressorSpec::top_ratio(0.01)
            .contraction_factor(400)
            .unwrap();
        assert!((q2 - 0.99).abs() < 1e-15);
        assert_eq!(
            CompressorSpec::rand_k(1).contraction_factor(2).unwrap(),
            0.5
        );
        assert_eq!(
            CompressorSpec::identity().contraction_factor(9).unwrap(),
            0.0
        );
    }

    #[test]
    fn ratio_resolution_uses_ceil_and_clamps() {
        assert_eq!(CompressorSpec::top_ratio(0.01).resolve(20).unwrap(), 1);
        assert_eq!(CompressorSpec::top_ratio(0.1).resolve(25).unwrap(), 3);
        assert_eq!(CompressorSpec::top_ratio(1.0).resolve(7).unwrap(), 7);
        assert!(CompressorSpec::top_ratio(1.5).resolve(7).is_err());
    }

    #[test]
    fn oversized_k_is_an_error() {
        let err = CompressorSpec::top_k(4)
            .compress(&pv(&[1.0, 2.0]), None)
            .unwrap_err();
        assert_eq!(err, Error::RetainExceedsDim { k: 4, dim: 2 });
    }

    #[test]
    fn rand_k_needs_a_stream() {
        assert!(CompressorSpec::rand_k(1)
            .compress(&pv(&[1.0, 2.0]), None)
            .is_err());
        let mut rng = derive_stream(1, "rk").unwrap();
        let (p, _) = CompressorSpec::rand_k(1)
            .compress(&pv(&[1.0, 2.0]), Some(&mut rng))
            .unwrap();
        assert_eq!(p.entries().len(), 1);
    }

    #[test]
    fn byte_accounting() {
        let sparse = SparsePayload::from_entries(10, vec![(0, 1.0), (3, 2.0), (9, 3.0)]).unwrap();
        assert_eq!(sparse.payload_bytes(), 24);
        assert_eq!(SparsePayload::dense(vec![0.0; 10]).payload_bytes(), 40);
        assert_eq!(
            SparsePayload::from_entries(10, vec![])
                .unwrap()
                .payload_bytes(),
            0
        );
    }

    #[test]
    fn encoded_layout_is_fixed() {
        let p = SparsePayload::from_entries(5, vec![(1, 0.5), (4, -2.0)]).unwrap();
        let bytes = p.encode();
        assert_eq!(bytes.len(), 17 + 16);
        assert_eq!(&bytes[0..8], &5u64.to_le_bytes());
        assert_eq!(bytes[8], 0);
        assert_eq!(&bytes[9..17], &2u64.to_le_bytes());
        assert_eq!(&bytes[17..21], &1u32.to_le_bytes());
        assert_eq!(&bytes[21..25], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[25..29], &4u32.to_le_bytes());

        let d = SparsePayload::dense(vec![1.0, 2.0]);
        let bytes = d.encode();
        assert_eq!(bytes.len(), 17 + 8);
        assert_eq!(bytes[8], 1);
        assert_eq!(&bytes[17..21], &1.0f32.to_le_bytes());
    }

    #[test]
    fn decode_rejects_malformed_input() {
        assert!(SparsePayload::decode(&[0u8; 5]).is_err());
        let mut bytes = SparsePayload::from_entries(5, vec![(1, 0.5)])
            .unwrap()
            .encode();
        bytes.pop();
        assert!(SparsePayload::decode(&bytes).is_err());
        let unordered = {
            let mut b = Vec::new();
            b.extend_from_slice(&5u64.to_le_bytes());
            b.push(0);
            b.extend_from_slice(&2u64.to_le_bytes());
            for i in [3u32, 1] {
                b.extend_from_slice(&i.to_le_bytes());
                b.extend_from_slice(&1.0f32.to_le_bytes());
            }
            b
        };
        assert!(SparsePayload::decode(&unordered).is_err());
    }

    proptest! {
        #[test]
        fn wire_roundtrip_is_single_precision(
            values in prop::collection::vec(-1e6f64..1e6, 1..40),
            k in 1usize..40,
        ) {
            let x = pv(&values);
            let spec = if k % 3 == 0 { CompressorSpec::identity() } else { CompressorSpec::top_k(k.min(values.len())) };
            let (payload, _) = spec.compress(&x, None).unwrap();
            let back = SparsePayload::decode(&payload.encode()).unwrap();
            prop_assert_eq!(back.dim(), payload.dim());
            prop_assert_eq!(back.is_dense(), payload.is_dense());
            prop_assert_eq!(back.entries().len(), payload.entries().len());
            for ((i, a), (j, b)) in back.entries().iter().zip(payload.entries()) {
                prop_assert_eq!(i, j);
                prop_assert_eq!(*a, (*b as f32) as f64);
            }
        }

        #[test]
        fn top_k_is_scale_equivariant(
            values in prop::collection::vec(-100.0f64..100.0, 2..30),
            alpha in prop_oneof![-8.0f64..-0.125, 0.125f64..8.0],
            k in 1usize..30,
        ) {
            let x = pv(&values);
            let spec = CompressorSpec::top_k(k.min(values.len()));
            let (_, cx) = spec.compress(&x, None).unwrap();
            let (_, cax) = spec.compress(&x.scale(alpha).unwrap(), None).unwrap();
            prop_assert_eq!(cax, cx.scale(alpha).unwrap());
        }

        #[test]
        fn top_k_zero_count_on_distinct_magnitudes(
            values in prop::collection::hash_set(1i64..100_000, 2..50),
            k in 1usize..50,
        ) {
            let v: Vec<f64> = values.iter().map(|a| *a as f64 * 0.01).collect();
            let k = k.min(v.len());
            let (_, dense) = CompressorSpec::top_k(k).compress(&pv(&v), None).unwrap();
            prop_assert_eq!(dense.iter().filter(|a| **a == 0.0).count(), v.len() - k);
        }
    }
}
