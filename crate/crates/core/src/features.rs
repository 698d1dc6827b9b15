//! Per-pixel feature rows: location, color, HSV value and excess color
//! indexes, z-score normalized and scaled by a feature weight preset.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::RgbImage;

/// Features per pixel: row, col, R, G, B, V, ExR, ExG, ExB.
pub const NUM_FEATURES: usize = 9;

/// Row-major `n x 9` feature matrix, one row per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<[f64; NUM_FEATURES]>) -> Self {
        Self {
            data: rows.into_iter().flatten().collect(),
        }
    }

    /// Wraps a flat row-major buffer whose length is a multiple of 9.
    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        if !data.len().is_multiple_of(NUM_FEATURES) {
            return Err(Error::dim(format!(
                "{} values do not form rows of {NUM_FEATURES}",
                data.len()
            )));
        }
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / NUM_FEATURES
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * NUM_FEATURES..(i + 1) * NUM_FEATURES]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(NUM_FEATURES).copied()
    }

    /// Euclidean distance between rows `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        squared_distance(self.row(i), self.row(j)).sqrt()
    }
}

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-feature weights applied after normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaPreset {
    name: Option<&'static str>,
    weights: [f64; NUM_FEATURES],
}

impl LambdaPreset {
    /// All features weighted equally.
    pub fn uniform() -> Self {
        Self {
            name: Some("uniform"),
            weights: [1.0; NUM_FEATURES],
        }
    }

    /// Location weighted twice as much as the seven color features.
    pub fn location() -> Self {
        Self {
            name: Some("location"),
            weights: [1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
        }
    }

    pub fn custom(weights: [f64; NUM_FEATURES]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::param("feature weights must be finite and >= 0"));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::param("at least one feature weight must be positive"));
        }
        Ok(Self { name: None, weights })
    }

    pub fn weights(&self) -> &[f64; NUM_FEATURES] {
        &self.weights
    }
}

impl Default for LambdaPreset {
    fn default() -> Self {
        Self::uniform()
    }
}

impl fmt::Display for LambdaPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name {
            Some(name) => f.write_str(name),
            None => {
                let parts: Vec<String> = self.weights.iter().map(f64::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// Accepts `uniform`, `location`, or nine comma-separated weights.
impl FromStr for LambdaPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(Self::uniform()),
            "location" => Ok(Self::location()),
            other => {
                let values = other
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| Error::param(format!("unknown lambda preset {other:?}")))?;
                let weights: [f64; NUM_FEATURES] = values.try_into().map_err(|v: Vec<f64>| {
                    Error::param(format!("expected {NUM_FEATURES} weights, got {}", v.len()))
                })?;
                Self::custom(weights)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaRepr {
    Name(String),
    Weights(Vec<f64>),
}

impl TryFrom<LambdaRepr> for LambdaPreset {
    type Error = Error;

    fn try_from(r: LambdaRepr) -> Result<Self> {
        match r {
            LambdaRepr::Name(s) => s.parse(),
            LambdaRepr::Weights(w) => {
                let n = w.len();
                let weights = w.try_into().map_err(|_| {
                    Error::param(format!("expected {NUM_FEATURES} weights, got {n}"))
                })?;
                Self::custom(weights)
            }
        }
    }
}

impl Serialize for LambdaPreset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LambdaRepr::from(self.clone()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for LambdaPreset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        LambdaRepr::deserialize(d)?
            .try_into()
            .map_err(serde::de::Error::custom)
    }
}

impl From<LambdaPreset> for LambdaRepr {
    fn from(l: LambdaPreset) -> Self {
        match l.name {
            Some(name) => LambdaRepr::Name(name.to_string()),
            None => LambdaRepr::Weights(l.weights.to_vec()),
        }
    }
}

/// Raw, unnormalized features in row-major pixel order.
pub fn extract_raw_features(img: &RgbImage) -> FeatureMatrix {
    let w = img.width();
    let data = img
        .pixels()
        .iter()
        .enumerate()
        .flat_map(|(i, &[r, g, b])| {
            [
                (i / w) as f64,
                (i % w) as f64,
                r,
                g,
                b,
                r.max(g).max(b),
                2.0 * r - (g + b),
                2.0 * g - (r + b),
                2.0 * b - (g + r),
            ]
        })
        .collect();
    FeatureMatrix { data }
}

/// Z-scores every column with population statistics, then multiplies column
/// `j` by `lambda.weights()[j]`. Constant columns become zero.
pub fn normalize_and_scale(feats: &FeatureMatrix, lambda: &LambdaPreset) -> Result<FeatureMatrix> {
    let n = feats.len();
    if n < 2 {
        return Err(Error::InsufficientData(n));
    }
    let mut scale = [0.0; NUM_FEATURES];
    let mut mean = [0.0; NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        let (lo, hi) = feats
            .column(j)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if lo == hi {
            continue;
        }
        let m = feats.column(j).sum::<f64>() / n as f64;
        let var = feats.column(j).map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean[j] = m;
        scale[j] = lambda.weights[j] / var.sqrt();
    }
    let data = feats
        .data
        .chunks_exact(NUM_FEATURES)
        .flat_map(|row| {
            let mut out = [0.0; NUM_FEATURES];
            for j in 0..NUM_FEATURES {
                if scale[j] != 0.0 {
                    out[j] = (row[j] - mean[j]) * scale[j];
                }
            }
            out
        })
        .collect();
    Ok(FeatureMatrix { data })
}

/// Raw extraction followed by normalization.
pub fn image_features(img: &RgbImage, lambda: &LambdaPreset) -> Result<FeatureMatrix> {
    normalize_and_scale(&extract_raw_features(img), lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(f: &FeatureMatrix, j: usize) -> Vec<f64> {
        f.column(j).collect()
    }

    #[test]
    fn pure_red_and_gray() {
        let img = RgbImage::new(2, 1, vec![[1.0, 0.0, 0.0], [0.5, 0.5, 0.5]]).unwrap();
        let f = extract_raw_features(&img);
        assert_eq!(&f.row(0)[5..], &[1.0, 2.0, -1.0, -1.0]);
        assert_eq!(&f.row(1)[5..], &[0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn row_major_location_features() {
        let img = RgbImage::filled(3, 2, [0.0; 3]).unwrap();
        let f = extract_raw_features(&img);
        let loc: Vec<(f64, f64)> = (0..6).map(|i| (f.row(i)[0], f.row(i)[1])).collect();
        assert_eq!(
            loc,
            vec![(0.0, 0.0), (0.0, 1.0), (0.0, 2.0), (1.0, 0.0), (1.0, 1.0), (1.0, 2.0)]
        );
    }

    #[test]
    fn two_value_column_and_constant_column() {
        let f = FeatureMatrix::from_rows(vec![[0.0; 9], {
            let mut r = [0.0; 9];
            r[0] = 2.0;
            r
        }]);
        let out = normalize_and_scale(&f, &LambdaPreset::uniform()).unwrap();
        assert_eq!(col(&out, 0), vec![-1.0, 1.0]);
        assert_eq!(col(&out, 3), vec![0.0, 0.0]);

        let f = FeatureMatrix::from_rows(vec![[5.0; 9]; 3]);
        let out = normalize_and_scale(&f, &LambdaPreset::uniform()).unwrap();
        assert!(out.as_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn location_preset_halves_color() {
        let img = RgbImage::new(
            2,
            2,
            vec![[0.1, 0.7, 0.2], [0.9, 0.3, 0.3], [0.4, 0.4, 0.8], [0.0, 1.0, 0.5]],
        )
        .unwrap();
        let raw = extract_raw_features(&img);
        let a = normalize_and_scale(&raw, &LambdaPreset::uniform()).unwrap();
        let b = normalize_and_scale(&raw, &LambdaPreset::location()).unwrap();
        for (x, y) in col(&a, 2).iter().zip(col(&b, 2)) {
            assert_eq!(x * 0.5, y);
        }
        assert_eq!(col(&a, 0), col(&b, 0));
    }

    #[test]
    fn single_row_is_rejected() {
        let f = FeatureMatrix::from_rows(vec![[1.0; 9]]);
        assert!(matches!(
            normalize_and_scale(&f, &LambdaPreset::uniform()),
            Err(Error::InsufficientData(1))
        ));
    }

    #[test]
    fn lambda_parsing() {
        assert_eq!("uniform".parse::<LambdaPreset>().unwrap(), LambdaPreset::uniform());
        assert_eq!("location".parse::<LambdaPreset>().unwrap(), LambdaPreset::location());
        let c: LambdaPreset = "1,1,0,0,0,0,0,0,2".parse().unwrap();
        assert_eq!(c.weights()[8], 2.0);
        assert_eq!(c.to_string(), "1,1,0,0,0,0,0,0,2");
        assert!("1,2".parse::<LambdaPreset>().is_err());
        assert!("0,0,0,0,0,0,0,0,0".parse::<LambdaPreset>().is_err());
        assert!("-1,1,1,1,1,1,1,1,1".parse::<LambdaPreset>().is_err());
        assert!("bogus".parse::<LambdaPreset>().is_err());

        let j: LambdaPreset = serde_json::from_str("\"location\"").unwrap();
        assert_eq!(j, LambdaPreset::location());
        let j: LambdaPreset = serde_json::from_str("[1,1,1,1,1,1,1,1,3]").unwrap();
        assert_eq!(serde_json::to_string(&j).unwrap(), "[1.0,1.0,1.0,1.0,1.0,1.0,1.0,1.0,3.0]");
        assert!(serde_json::from_str::<LambdaPreset>("[1,2]").is_err());
    }

    fn matrix(n: usize) -> impl Strategy<Value = FeatureMatrix> {
        proptest::collection::vec(-50.0f64..50.0, n * NUM_FEATURES)
            .prop_map(|d| FeatureMatrix::from_flat(d).unwrap())
    }

    proptest! {
        #[test]
        fn normalized_columns_have_zero_mean_unit_std(f in matrix(17)) {
            let out = normalize_and_scale(&f, &LambdaPreset::uniform()).unwrap();
            for j in 0..NUM_FEATURES {
                let c = col(&out, j);
                let m = c.iter().sum::<f64>() / c.len() as f64;
                let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64).sqrt();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
                prop_assert!(c.iter().all(|v| v.is_finite()));
            }
        }

        #[test]
        fn normalization_is_idempotent(f in matrix(11)) {
            let once = normalize_and_scale(&f, &LambdaPreset::uniform()).unwrap();
            let twice = normalize_and_scale(&once, &LambdaPreset::uniform()).unwrap();
            for (a, b) in once.as_flat().iter().zip(twice.as_flat()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn distance_ignores_column_offsets(f in matrix(6), j in 0usize..9, shift in -100.0f64..100.0) {
            let mut shifted = f.as_flat().to_vec();
            for v in shifted.iter_mut().skip(j).step_by(NUM_FEATURES) {
                *v += shift;
            }
            let shifted = FeatureMatrix::from_flat(shifted).unwrap();
            let a = normalize_and_scale(&f, &LambdaPreset::uniform()).unwrap();
            let b = normalize_and_scale(&shifted, &LambdaPreset::uniform()).unwrap();
            for i in 1..6 {
                prop_assert!((a.distance(0, i) - b.distance(0, i)).abs() < 1e-6);
            }
        }

        #[test]
        fn location_preset_damps_color_swaps(
            p in proptest::collection::vec(0.0f64..1.0, 3),
            q in proptest::collection::vec(0.0f64..1.0, 3),
            others in proptest::collection::vec(0.0f64..1.0, 12),
        ) {
            // Two images that differ only by swapping the colors of pixels 0 and 1.
            let mut px: Vec<[f64; 3]> = vec![[p[0], p[1], p[2]], [q[0], q[1], q[2]]];
            px.extend(others.chunks(3).map(|c| [c[0], c[1], c[2]]));
            let mut swapped = px.clone();
            swapped.swap(0, 1);
            let a = extract_raw_features(&RgbImage::new(3, 2, px).unwrap());
            let b = extract_raw_features(&RgbImage::new(3, 2, swapped).unwrap());
            let (u1, u2) = (
                normalize_and_scale(&a, &LambdaPreset::uniform()).unwrap(),
                normalize_and_scale(&b, &LambdaPreset::uniform()).unwrap(),
            );
            let (l1, l2) = (
                normalize_and_scale(&a, &LambdaPreset::location()).unwrap(),
                normalize_and_scale(&b, &LambdaPreset::location()).unwrap(),
            );
            for j in 2..NUM_FEATURES {
                let du = (u1.row(0)[j] - u2.row(0)[j]).abs();
                let dl = (l1.row(0)[j] - l2.row(0)[j]).abs();
                prop_assert!(dl <= 0.5 * du + 1e-12);
            }
        }
    }
}
