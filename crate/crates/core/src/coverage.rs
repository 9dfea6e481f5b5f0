//! Data-coverage measurement for a local dataset.
//!
//! The ε-coverage of a point set is the volume of the unit cube lying within
//! distance ε (open ball) of some point. It is estimated by Monte Carlo: a
//! fixed stream of uniform samples is drawn from the cube and the nearest-point
//! distance of every sample is computed once. Coverage quality integrates the
//! ε-coverage over ε ∈ [0, √d] with the composite trapezoid rule, reusing the
//! same distances for every ε so the curve is monotone per sample.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Samples handed to one rayon task when computing nearest distances.
const DISTANCE_CHUNK: usize = 1024;

/// A finite set of points in the unit hypercube `[0,1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dimension: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn empty(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::domain("point cloud dimension must be at least 1"));
        }
        Ok(Self {
            dimension,
            coords: Vec::new(),
        })
    }

    pub fn new(dimension: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        let mut cloud = Self::empty(dimension)?;
        for p in &points {
            cloud.push(p)?;
        }
        Ok(cloud)
    }

    /// Builds a cloud from row-major coordinates.
    pub fn from_flat(dimension: usize, coords: Vec<f64>) -> Result<Self> {
        let cloud = Self::empty(dimension)?;
        if !coords.len().is_multiple_of(dimension) {
            return Err(Error::contract(format!(
                "{} coordinates do not split into points of dimension {dimension}",
                coords.len()
            )));
        }
        check_unit(&coords)?;
        Ok(Self { coords, ..cloud })
    }

    pub fn push(&mut self, point: &[f64]) -> Result<()> {
        if point.len() != self.dimension {
            return Err(Error::LengthMismatch {
                expected: self.dimension,
                got: point.len(),
            });
        }
        check_unit(point)?;
        self.coords.extend_from_slice(point);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dimension)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// Euclidean distance from `x` to the nearest point, `+inf` for an empty cloud.
    pub fn nearest_distance(&self, x: &[f64]) -> f64 {
        self.points()
            .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    /// Writes one point per row under the header `x1,...,xd`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.dimension).map(|k| format!("x{k}")))?;
        for p in self.points() {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cloud written by [`PointCloud::write_csv`]; the dimension is taken
    /// from the header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        for (k, h) in headers.iter().enumerate() {
            if h.trim() != format!("x{}", k + 1) {
                return Err(Error::contract(format!(
                    "unexpected column header `{h}` at position {}",
                    k + 1
                )));
            }
        }
        let mut cloud = Self::empty(headers.len())?;
        for record in r.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::contract(format!("bad coordinate `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            cloud.push(&row)?;
        }
        Ok(cloud)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn check_unit(coords: &[f64]) -> Result<()> {
    match coords.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::domain(format!("coordinate {v} outside [0,1]"))),
        None => Ok(()),
    }
}

/// Monte Carlo estimate of the ε-coverage.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoverageEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub sample_count: usize,
}

impl CoverageEstimate {
    fn from_hits(hits: usize, sample_count: usize) -> Self {
        let value = hits as f64 / sample_count as f64;
        Self {
            value,
            standard_error: (value * (1.0 - value) / sample_count as f64).sqrt(),
            sample_count,
        }
    }
}

/// Uniform samples from the unit cube, drawn sequentially from one seeded stream
/// so the sample set never depends on the worker count.
pub(crate) fn uniform_samples(dimension: usize, samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dimension * samples).map(|_| rng.random::<f64>()).collect()
}

/// Nearest-point distance for every sample, in sample order.
fn nearest_distances(cloud: &PointCloud, samples: &[f64]) -> Vec<f64> {
    let d = cloud.dimension();
    samples
        .par_chunks(d * DISTANCE_CHUNK)
        .flat_map_iter(|chunk| chunk.chunks_exact(d).map(|x| cloud.nearest_distance(x)))
        .collect()
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::domain("sample count must be positive"));
    }
    Ok(())
}

/// Fraction of `samples` uniform draws lying strictly within `epsilon` of the cloud.
pub fn estimate_coverage(
    cloud: &PointCloud,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    let max_radius = (cloud.dimension() as f64).sqrt();
    if !(0.0..=max_radius).contains(&epsilon) {
        return Err(Error::domain(format!(
            "epsilon {epsilon} outside [0, sqrt(d)] = [0, {max_radius}]"
        )));
    }
    check_samples(samples)?;
    if cloud.is_empty() {
        return Ok(CoverageEstimate::from_hits(0, samples));
    }
    let draws = uniform_samples(cloud.dimension(), samples, seed);
    let hits = nearest_distances(cloud, &draws)
        .into_iter()
        .filter(|&dist| dist < epsilon)
        .count();
    Ok(CoverageEstimate::from_hits(hits, samples))
}

/// Normalized integral of the ε-coverage over `[0, √d]`, by the composite
/// trapezoid rule on `radius_steps` equally spaced radii.
pub fn coverage_quality(
    cloud: &PointCloud,
    radius_steps: usize,
    samples_per_step: usize,
    seed: u64,
) -> Result<f64> {
    if radius_steps < 2 {
        return Err(Error::domain("coverage quality needs at least 2 radius steps"));
    }
    check_samples(samples_per_step)?;
    if cloud.is_empty() {
        return Ok(0.0);
    }
    let draws = uniform_samples(cloud.dimension(), samples_per_step, seed);
    let mut dist = nearest_distances(cloud, &draws);
    dist.sort_by(f64::total_cmp);

    let max_radius = (cloud.dimension() as f64).sqrt();
    let intervals = (radius_steps - 1) as f64;
    let coverage_at = |k: usize| {
        let eps = max_radius * k as f64 / intervals;
        dist.partition_point(|&x| x < eps) as f64 / samples_per_step as f64
    };
    let mut area = 0.0;
    let mut prev = coverage_at(0);
    for k in 1..radius_steps {
        let next = coverage_at(k);
        area += 0.5 * (prev + next);
        prev = next;
    }
    // The √d step width cancels against the 1/√d normalization.
    Ok((area / intervals).clamp(0.0, 1.0))
}

/// Buckets a quality value into one of `type_count` equal-width types, 1-based.
///
/// A value on a shared boundary `i/I` goes to the higher bucket, except `1.0`
/// which belongs to the top type.
pub fn classify_type(theta: f64, type_count: usize) -> Result<usize> {
    if type_count == 0 {
        return Err(Error::domain("type count must be positive"));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::domain(format!("theta {theta} outside [0,1]")));
    }
    let bucket = (theta * type_count as f64).floor() as usize + 1;
    Ok(bucket.min(type_count))
}

/// Assigns a measured quality to the type whose tabulated quality is closest,
/// preferring the higher type on exact ties. Returns a 1-based index.
pub fn classify_by_table(theta: f64, type_thetas: &[f64]) -> Result<usize> {
    if type_thetas.is_empty() {
        return Err(Error::domain("type table is empty"));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::domain(format!("theta {theta} outside [0,1]")));
    }
    let mut best = 0;
    for (i, t) in type_thetas.iter().enumerate() {
        if (theta - t).abs() <= (theta - type_thetas[best]).abs() {
            best = i;
        }
    }
    Ok(best + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singleton(x: f64) -> PointCloud {
        PointCloud::new(1, vec![vec![x]]).unwrap()
    }

    #[test]
    fn empty_cloud_has_zero_coverage() {
        let cloud = PointCloud::empty(3).unwrap();
        let est = estimate_coverage(&cloud, 0.7, 500, 1).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.standard_error, 0.0);
        assert_eq!(coverage_quality(&cloud, 16, 500, 1).unwrap(), 0.0);
    }

    #[test]
    fn midpoint_ball_covers_half_the_interval() {
        let est = estimate_coverage(&singleton(0.5), 0.25, 100_000, 7).unwrap();
        assert!(est.standard_error > 0.0);
        assert!((est.value - 0.5).abs() <= 3.0 * est.standard_error, "{est:?}");
    }

    #[test]
    fn wide_ball_covers_everything() {
        let est = estimate_coverage(&singleton(0.5), 1.0, 100_000, 7).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn epsilon_outside_range_is_rejected() {
        let cloud = singleton(0.5);
        assert!(matches!(
            estimate_coverage(&cloud, -0.1, 10, 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            estimate_coverage(&cloud, 1.01, 10, 0),
            Err(Error::Domain(_))
        ));
        let cloud2 = PointCloud::new(2, vec![vec![0.1, 0.2]]).unwrap();
        assert!(estimate_coverage(&cloud2, 2f64.sqrt(), 10, 0).is_ok());
        assert!(estimate_coverage(&cloud, 0.5, 0, 0).is_err());
    }

    #[test]
    fn zero_radius_covers_nothing() {
        let est = estimate_coverage(&singleton(0.5), 0.0, 1000, 3).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn midpoint_quality_near_three_quarters() {
        let q = coverage_quality(&singleton(0.5), 64, 100_000, 11).unwrap();
        assert!((q - 0.75).abs() < 0.01, "{q}");
    }

    #[test]
    fn dense_grid_quality_near_one() {
        let pts = (0..1000).map(|k| vec![(k as f64 + 0.5) / 1000.0]).collect();
        let cloud = PointCloud::new(1, pts).unwrap();
        let q = coverage_quality(&cloud, 64, 20_000, 5).unwrap();
        assert!(q >= 0.99, "{q}");
    }

    #[test]
    fn quality_needs_two_steps() {
        assert!(coverage_quality(&singleton(0.5), 1, 100, 0).is_err());
    }

    #[test]
    fn coordinates_must_be_in_unit_cube() {
        assert!(PointCloud::new(2, vec![vec![0.5, 1.2]]).is_err());
        assert!(PointCloud::new(2, vec![vec![0.5]]).is_err());
        assert!(PointCloud::empty(0).is_err());
        assert!(PointCloud::from_flat(2, vec![0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(classify_type(0.0, 10).unwrap(), 1);
        assert_eq!(classify_type(1.0, 10).unwrap(), 10);
        assert_eq!(classify_type(0.35, 10).unwrap(), 4);
        assert_eq!(classify_type(0.5, 10).unwrap(), 6);
        assert_eq!(classify_type(0.5, 2).unwrap(), 2);
        assert_eq!(classify_type(0.7, 1).unwrap(), 1);
        assert!(classify_type(1.01, 10).is_err());
        assert!(classify_type(-0.01, 10).is_err());
        assert!(classify_type(0.5, 0).is_err());
    }

    #[test]
    fn table_classification_picks_nearest() {
        let table = [0.79, 0.80, 0.81];
        assert_eq!(classify_by_table(0.0, &table).unwrap(), 1);
        assert_eq!(classify_by_table(0.803, &table).unwrap(), 2);
        assert_eq!(classify_by_table(0.805, &table).unwrap(), 3);
        assert_eq!(classify_by_table(1.0, &table).unwrap(), 3);
        assert!(classify_by_table(0.5, &[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cloud = PointCloud::new(2, vec![vec![0.1, 0.25], vec![1.0, 0.0]]).unwrap();
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2\n"));
        assert_eq!(PointCloud::read_csv(buf.as_slice()).unwrap(), cloud);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let text = "a,b\n0.1,0.2\n";
        assert!(PointCloud::read_csv(text.as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cloud_2d() -> impl Strategy<Value = Vec<Vec<f64>>> {
            prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 2), 0..12)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn adding_points_never_lowers_coverage(
                base in cloud_2d(),
                extra in cloud_2d(),
                eps in 0.0..1.4f64,
                seed in 0u64..1000,
            ) {
                let small = PointCloud::new(2, base.clone()).unwrap();
                let mut all = base;
                all.extend(extra);
                let big = PointCloud::new(2, all).unwrap();
                let a = estimate_coverage(&small, eps, 400, seed).unwrap().value;
                let b = estimate_coverage(&big, eps, 400, seed).unwrap().value;
                prop_assert!(a <= b);
                let qa = coverage_quality(&small, 8, 400, seed).unwrap();
                let qb = coverage_quality(&big, 8, 400, seed).unwrap();
                prop_assert!(qa <= qb);
                prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&qb));
            }

            #[test]
            fn classification_is_monotone_and_total(a in 0.0..=1.0f64, b in 0.0..=1.0f64, n in 1usize..20) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let ilo = classify_type(lo, n).unwrap();
                let ihi = classify_type(hi, n).unwrap();
                prop_assert!(ilo <= ihi);
                prop_assert!((1..=n).contains(&ilo));
                let lower = (ilo - 1) as f64 / n as f64;
                let upper = ilo as f64 / n as f64;
                prop_assert!(lower <= lo + 1e-12 && lo <= upper + 1e-12);
            }
        }
    }
}
