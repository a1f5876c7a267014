//! Parameter grids, dataset synthesis, normalization and splitting.
//!
//! Each microphone class is described by a [`ClassGridSpec`]: three `f2`
//! values, ten `f3` and ten `f4` values on a linear range, and fifteen
//! damping values shared by both resonances. The Cartesian product gives
//! 67,500 tuples per class and 202,500 records overall. Every record holds
//! the sampled amplitudes followed by the sampled phases.
//!
//! Normalization divides every feature column by its maximum absolute value
//! over the whole dataset. The statistics are taken before the split, so
//! dev and test columns contribute to the scale (a mild leak kept on
//! purpose so the numbers line up with the reference experiment).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::response::{self, FrequencyGrid, MicClass, MicParams};
use crate::{Error, Result};

/// Smallest and largest damping value in the training grid.
pub const XI_MIN: f64 = 0.015;
pub const XI_MAX: f64 = 0.99;
pub const XI_COUNT: usize = 15;

/// Fifteen geometrically spaced damping values on `[XI_MIN, XI_MAX]`.
pub fn xi_grid() -> Vec<f64> {
    let ratio = (XI_MAX / XI_MIN).powf(1.0 / (XI_COUNT - 1) as f64);
    let mut v: Vec<f64> = (0..XI_COUNT).map(|k| XI_MIN * ratio.powi(k as i32)).collect();
    v[XI_COUNT - 1] = XI_MAX;
    v
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let mut v: Vec<f64> = (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect();
            v[count - 1] = hi;
            v
        }
    }
}

/// Parameter grid of one microphone class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGridSpec {
    pub mic_class: MicClass,
    pub f2_values: Vec<f64>,
    pub f3_range: (f64, f64),
    pub f4_range: (f64, f64),
    pub f3_count: usize,
    pub f4_count: usize,
    pub xi_values: Vec<f64>,
}

impl ClassGridSpec {
    pub fn f3_values(&self) -> Vec<f64> {
        linspace(self.f3_range.0, self.f3_range.1, self.f3_count)
    }

    pub fn f4_values(&self) -> Vec<f64> {
        linspace(self.f4_range.0, self.f4_range.1, self.f4_count)
    }

    pub fn tuple_count(&self) -> usize {
        self.f2_values.len() * self.f3_count * self.f4_count * self.xi_values.len().pow(2)
    }

    pub fn f2_range(&self) -> (f64, f64) {
        min_max(&self.f2_values)
    }

    pub fn xi_range(&self) -> (f64, f64) {
        min_max(&self.xi_values)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f2_values.is_empty() || self.f3_count == 0 || self.f4_count == 0 || self.xi_values.is_empty() {
            return Err(Error::InvalidParameter(format!("{} grid has an empty axis", self.mic_class)));
        }
        for (lo, hi) in [self.f3_range, self.f4_range] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!("bad resonance range [{lo}, {hi}]")));
            }
        }
        let (f2_lo, _) = self.f2_range();
        let (xi_lo, xi_hi) = self.xi_range();
        if !(f2_lo > 0.0 && xi_lo > 0.0 && xi_hi <= 1.0) {
            return Err(Error::InvalidParameter(format!("{} grid values out of range", self.mic_class)));
        }
        Ok(())
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// The three class grids used for training.
pub fn default_grid_specs() -> Vec<ClassGridSpec> {
    let xi = xi_grid();
    let spec = |mic_class, central: f64, f3_range, f4_range| ClassGridSpec {
        mic_class,
        f2_values: vec![central * 0.95, central, central * 1.05],
        f3_range,
        f4_range,
        f3_count: 10,
        f4_count: 10,
        xi_values: xi.clone(),
    };
    vec![
        spec(MicClass::Ecm30b, 25.0, (8930.0, 9866.0), (13965.0, 15432.0)),
        spec(MicClass::Ecm60, 15.0, (7980.0, 8817.0), (7980.0, 8817.0)),
        spec(MicClass::Wm66, 65.0, (13015.0, 14383.0), (13015.0, 14383.0)),
    ]
}

/// Cartesian product of the class grid, `f2` outermost, then `f3`, `f4`,
/// `xi3`, `xi4`.
pub fn enumerate_params(spec: &ClassGridSpec) -> Vec<(MicClass, MicParams)> {
    let f3s = spec.f3_values();
    let f4s = spec.f4_values();
    let mut out = Vec::with_capacity(spec.tuple_count());
    for &f2 in &spec.f2_values {
        for &f3 in &f3s {
            for &f4 in &f4s {
                for &xi3 in &spec.xi_values {
                    for &xi4 in &spec.xi_values {
                        out.push((spec.mic_class, MicParams { f2, f3, f4, xi3, xi4 }));
                    }
                }
            }
        }
    }
    out
}

/// Per-feature maximum absolute values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub max_abs: Vec<f64>,
}

impl NormStats {
    pub fn new(max_abs: Vec<f64>) -> Result<Self> {
        let s = NormStats { max_abs };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.max_abs.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::ZeroColumn(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.max_abs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.max_abs.is_empty()
    }

    /// Scales one raw feature row in place.
    pub fn apply(&self, features: &mut [f64]) -> Result<()> {
        if features.len() != self.max_abs.len() {
            return Err(Error::Shape(format!(
                "{} features but {} normalization entries",
                features.len(),
                self.max_abs.len()
            )));
        }
        for (x, m) in features.iter_mut().zip(&self.max_abs) {
            *x /= m;
        }
        Ok(())
    }
}

/// One labeled row.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub features: Vec<f64>,
    pub label: MicClass,
}

/// Row-major feature matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: FrequencyGrid,
    /// Stats the features were scaled with; `None` for raw responses.
    pub norm: Option<NormStats>,
    /// Hex digest of the generating configuration.
    pub provenance: String,
    features: Vec<f64>,
    labels: Vec<MicClass>,
    n_features: usize,
}

impl Dataset {
    pub fn empty(grid: FrequencyGrid, provenance: String) -> Self {
        let n_features = 2 * grid.count;
        Dataset { grid, norm: None, provenance, features: Vec::new(), labels: Vec::new(), n_features }
    }

    pub fn with_capacity(grid: FrequencyGrid, provenance: String, rows: usize) -> Self {
        let mut d = Dataset::empty(grid, provenance);
        d.features.reserve(rows * d.n_features);
        d.labels.reserve(rows);
        d
    }

    pub fn from_records(grid: FrequencyGrid, records: &[Record]) -> Result<Self> {
        let mut d = Dataset::with_capacity(grid, String::new(), records.len());
        for r in records {
            d.push(&r.features, r.label)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, features: &[f64], label: MicClass) -> Result<()> {
        if features.len() != self.n_features {
            return Err(Error::Shape(format!(
                "record has {} features, dataset expects {}",
                features.len(),
                self.n_features
            )));
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> MicClass {
        self.labels[i]
    }

    pub fn labels(&self) -> &[MicClass] {
        &self.labels
    }

    /// The whole feature matrix, row-major.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn record(&self, i: usize) -> Record {
        Record { features: self.row(i).to_vec(), label: self.label(i) }
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], MicClass)> + '_ {
        self.features.chunks_exact(self.n_features.max(1)).zip(self.labels.iter().copied())
    }

    pub fn class_counts(&self) -> [usize; MicClass::COUNT] {
        let mut counts = [0; MicClass::COUNT];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        let mut d = Dataset::with_capacity(self.grid.clone(), self.provenance.clone(), indices.len());
        d.norm = self.norm.clone();
        for &i in indices {
            d.features.extend_from_slice(self.row(i));
            d.labels.push(self.labels[i]);
        }
        d
    }
}

/// Hex SHA-256 over the JSON form of the generating configuration.
pub fn config_digest(specs: &[ClassGridSpec], grid: &FrequencyGrid) -> String {
    let json = serde_json::to_vec(&(specs, grid)).expect("specs serialize");
    hex::encode(Sha256::digest(&json))
}

/// One record per grid tuple, classes in the order given, tuples in
/// [`enumerate_params`] order. Features are raw (not normalized).
pub fn build_dataset(specs: &[ClassGridSpec], grid: &FrequencyGrid) -> Result<Dataset> {
    grid.validate()?;
    for s in specs {
        s.validate()?;
    }
    let total: usize = specs.iter().map(ClassGridSpec::tuple_count).sum();
    let mut d = Dataset::with_capacity(grid.clone(), config_digest(specs, grid), total);
    let mut row = vec![0.0; d.n_features];
    for spec in specs {
        for (class, params) in enumerate_params(spec) {
            response::sweep_into(&params, grid, &mut row)?;
            d.push(&row, class)?;
        }
    }
    Ok(d)
}

/// Column-wise maximum of absolute values.
pub fn compute_norm_stats(d: &Dataset) -> Result<NormStats> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut max_abs = vec![0.0f64; d.n_features];
    for (row, _) in d.rows() {
        for (m, x) in max_abs.iter_mut().zip(row) {
            *m = m.max(x.abs());
        }
    }
    NormStats::new(max_abs)
}

/// Divides every column by its maximum absolute value. Labels are untouched.
pub fn normalize(mut d: Dataset, stats: &NormStats) -> Result<Dataset> {
    if stats.len() != d.n_features {
        return Err(Error::Shape(format!(
            "normalization stats cover {} features, dataset has {}",
            stats.len(),
            d.n_features
        )));
    }
    if d.norm.is_some() {
        return Err(Error::Schema("dataset is already normalized".into()));
    }
    stats.validate()?;
    for row in d.features.chunks_exact_mut(d.n_features.max(1)) {
        for (x, m) in row.iter_mut().zip(&stats.max_abs) {
            *x /= m;
        }
    }
    d.norm = Some(stats.clone());
    Ok(d)
}

/// Which frequency band the features are sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeKind {
    /// 150 points, 20 Hz to 20 kHz.
    Full,
    /// 70 points, 800 Hz to 20 kHz.
    Restricted,
}

impl RangeKind {
    pub fn grid(self) -> FrequencyGrid {
        match self {
            RangeKind::Full => FrequencyGrid::full_range(),
            RangeKind::Restricted => FrequencyGrid::restricted_range(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RangeKind::Full => "20-20000 Hz",
            RangeKind::Restricted => "800-20000 Hz",
        }
    }
}

impl std::str::FromStr for RangeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RangeKind::Full),
            "restricted" => Ok(RangeKind::Restricted),
            other => Err(Error::Config(format!("unknown range {other:?}, expected full or restricted"))),
        }
    }
}

/// The normalized training dataset for one range: every grid tuple,
/// scaled by its own column maxima, in enumeration order.
pub fn training_dataset(range: RangeKind) -> Result<Dataset> {
    let d = build_dataset(&default_grid_specs(), &range.grid())?;
    let stats = compute_norm_stats(&d)?;
    normalize(d, &stats)
}

/// Train/dev/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.90, dev: 0.05, test: 0.05 }
    }
}

impl SplitFractions {
    /// Train and dev counts are floored; test takes the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {parts:?} must be non-negative and sum to 1")));
        }
        // Guards against products like 202500 * 0.9 landing a hair under an integer.
        let floor = |f: f64| (((n as f64) * f) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let dev = floor(self.dev).min(n - train);
        Ok((train, dev, n - train - dev))
    }
}

#[derive(Debug, Clone)]
pub struct SplitSet {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

/// Seeded Fisher-Yates shuffle followed by contiguous train/dev/test slices.
pub fn shuffle_split(d: &Dataset, seed: u64, fractions: SplitFractions) -> Result<SplitSet> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n_train, n_dev, _) = fractions.counts(d.len())?;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(n_train);
    let (dev, test) = rest.split_at(n_dev);
    Ok(SplitSet { train: d.subset(train), dev: d.subset(dev), test: d.subset(test), seed })
}

fn draw_off_grid<R: Rng>(rng: &mut R, (lo, hi): (f64, f64), grid_values: &[f64]) -> f64 {
    if lo == hi {
        return lo;
    }
    loop {
        let v = rng.gen_range(lo..hi);
        if v > lo && !grid_values.contains(&v) {
            return v;
        }
    }
}

/// Off-grid parameter tuples: every component drawn uniformly inside its
/// class range and never equal to a training grid value.
pub fn offgrid_params(specs: &[ClassGridSpec], seed: u64, per_class: usize) -> Vec<(MicClass, MicParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(specs.len() * per_class);
    for spec in specs {
        let (f3s, f4s) = (spec.f3_values(), spec.f4_values());
        for _ in 0..per_class {
            let f2 = draw_off_grid(&mut rng, spec.f2_range(), &spec.f2_values);
            let f3 = draw_off_grid(&mut rng, spec.f3_range, &f3s);
            let f4 = draw_off_grid(&mut rng, spec.f4_range, &f4s);
            let xi3 = draw_off_grid(&mut rng, spec.xi_range(), &spec.xi_values);
            let xi4 = draw_off_grid(&mut rng, spec.xi_range(), &spec.xi_values);
            out.push((spec.mic_class, MicParams { f2, f3, f4, xi3, xi4 }));
        }
    }
    out
}

/// Synthesized raw records for [`offgrid_params`].
pub fn make_offgrid_tests(
    specs: &[ClassGridSpec],
    grid: &FrequencyGrid,
    seed: u64,
    per_class: usize,
) -> Result<Dataset> {
    let params = offgrid_params(specs, seed, per_class);
    let provenance = format!("{}:offgrid:{seed}", config_digest(specs, grid));
    let mut d = Dataset::with_capacity(grid.clone(), provenance, params.len());
    let mut row = vec![0.0; d.n_features];
    for (class, p) in params {
        response::sweep_into(&p, grid, &mut row)?;
        d.push(&row, class)?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn tiny_spec() -> ClassGridSpec {
        ClassGridSpec {
            mic_class: MicClass::Ecm60,
            f2_values: vec![15.0],
            f3_range: (8000.0, 8000.0),
            f4_range: (8500.0, 8500.0),
            f3_count: 1,
            f4_count: 1,
            xi_values: vec![0.3],
        }
    }

    #[test]
    fn default_specs_counts_and_steps() {
        let specs = default_grid_specs();
        assert_eq!(specs.len(), 3);
        for s in &specs {
            assert_eq!(s.f2_values.len(), 3);
            assert_eq!(s.f3_values().len(), 10);
            assert_eq!(s.f4_values().len(), 10);
            assert_eq!(s.xi_values.len(), 15);
            assert_eq!(s.tuple_count(), 67_500);
        }
        let f3 = specs[0].f3_values();
        for w in f3.windows(2) {
            assert_relative_eq!(w[1] - w[0], 104.0, max_relative = 1e-12);
        }
        assert_eq!(specs[2].f2_values, vec![61.75, 65.0, 68.25]);
        assert_eq!(specs[0].f2_values, vec![23.75, 25.0, 26.25]);
        assert_eq!(specs[1].f2_values, vec![14.25, 15.0, 15.75]);
        assert_eq!(specs.iter().map(ClassGridSpec::tuple_count).sum::<usize>(), 202_500);
    }

    #[test]
    fn xi_grid_is_geometric() {
        let xi = xi_grid();
        assert_eq!(xi.len(), 15);
        assert_eq!(xi[0], 0.015);
        assert_eq!(xi[14], 0.99);
        let r = xi[1] / xi[0];
        for w in xi.windows(2) {
            assert_relative_eq!(w[1] / w[0], r, max_relative = 1e-12);
        }
    }

    #[test]
    fn enumeration_order() {
        let specs = default_grid_specs();
        let tuples = enumerate_params(&specs[0]);
        assert_eq!(tuples.len(), 67_500);
        let first = tuples[0].1;
        assert_eq!((first.f2, first.f3, first.f4, first.xi3, first.xi4), (23.75, 8930.0, 13965.0, 0.015, 0.015));
        // xi4 varies fastest
        assert_eq!(tuples[1].1.xi3, 0.015);
        assert!(tuples[1].1.xi4 > 0.015);
        let last = tuples.last().unwrap().1;
        assert_eq!((last.f2, last.f3, last.f4, last.xi4), (26.25, 9866.0, 15432.0, 0.99));
        assert_eq!(enumerate_params(&tiny_spec()).len(), 1);
    }

    #[test]
    fn minimal_dataset() {
        let g = FrequencyGrid::linear(100.0, 1000.0, 2).unwrap();
        let d = build_dataset(&[tiny_spec()], &g).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.n_features(), 4);
        assert_eq!(d.label(0), MicClass::Ecm60);
        // feature ordering: amplitude block then phase block
        let p = enumerate_params(&tiny_spec())[0].1;
        let (a, ph) = response::amplitude_phase_sweep(&p, &g).unwrap();
        assert_eq!(d.row(0), &[a[0], a[1], ph[0], ph[1]]);
    }

    #[test]
    fn restricted_grid_gives_140_features() {
        let mut spec = default_grid_specs().remove(2);
        spec.f2_values.truncate(1);
        spec.xi_values.truncate(2);
        let d = build_dataset(&[spec], &FrequencyGrid::restricted_range()).unwrap();
        assert_eq!(d.n_features(), 140);
        assert_eq!(d.len(), 400);
    }

    #[test]
    fn norm_stats_examples() {
        let grid = FrequencyGrid::linear(5.0, 5.0, 1).unwrap();
        let d = Dataset::from_records(grid.clone(), &[Record { features: vec![2.0, -4.0], label: MicClass::Ecm30b }])
            .unwrap();
        let s = compute_norm_stats(&d).unwrap();
        assert_eq!(s.max_abs, vec![2.0, 4.0]);

        let n = normalize(d, &s).unwrap();
        assert_eq!(n.row(0), &[1.0, -1.0]);
        assert_eq!(n.label(0), MicClass::Ecm30b);
        assert_eq!(compute_norm_stats(&n).unwrap().max_abs, vec![1.0, 1.0]);

        let half = Dataset::from_records(grid.clone(), &[Record { features: vec![3.0, 1.0], label: MicClass::Wm66 }])
            .unwrap();
        let n = normalize(half, &NormStats::new(vec![6.0, 2.0]).unwrap()).unwrap();
        assert_eq!(n.row(0), &[0.5, 0.5]);

        let empty = Dataset::empty(grid.clone(), String::new());
        assert!(matches!(compute_norm_stats(&empty), Err(Error::EmptyDataset)));

        let zero = Dataset::from_records(grid, &[Record { features: vec![0.0, 1.0], label: MicClass::Wm66 }]).unwrap();
        assert!(matches!(compute_norm_stats(&zero), Err(Error::ZeroColumn(0))));
    }

    #[test]
    fn normalize_rejects_length_mismatch() {
        let grid = FrequencyGrid::linear(5.0, 5.0, 1).unwrap();
        let d = Dataset::from_records(grid, &[Record { features: vec![1.0, 1.0], label: MicClass::Wm66 }]).unwrap();
        let s = NormStats::new(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(normalize(d, &s), Err(Error::Shape(_))));
    }

    #[test]
    fn split_counts() {
        let f = SplitFractions::default();
        assert_eq!(f.counts(202_500).unwrap(), (182_250, 10_125, 10_125));
        assert_eq!(f.counts(10).unwrap(), (9, 0, 1));
        assert!(SplitFractions { train: 0.5, dev: 0.5, test: 0.5 }.counts(10).is_err());
    }

    fn small_dataset(n: usize) -> Dataset {
        let grid = FrequencyGrid::linear(5.0, 5.0, 1).unwrap();
        let recs: Vec<Record> = (0..n)
            .map(|i| Record { features: vec![i as f64, -(i as f64)], label: MicClass::ALL[i % 3] })
            .collect();
        Dataset::from_records(grid, &recs).unwrap()
    }

    #[test]
    fn split_is_deterministic_partition() {
        let d = small_dataset(1000);
        let a = shuffle_split(&d, 7, SplitFractions::default()).unwrap();
        let b = shuffle_split(&d, 7, SplitFractions::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = shuffle_split(&d, 8, SplitFractions::default()).unwrap();
        assert_ne!(a.train, c.train);

        let mut seen: Vec<usize> = [&a.train, &a.dev, &a.test]
            .iter()
            .flat_map(|s| s.rows().map(|(r, _)| r[0] as usize).collect::<Vec<_>>())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..1000).collect::<Vec<_>>());
        assert!(shuffle_split(&Dataset::empty(d.grid.clone(), String::new()), 1, SplitFractions::default()).is_err());
    }

    #[test]
    fn offgrid_draws_stay_inside_and_off_grid() {
        let specs = default_grid_specs();
        let g = FrequencyGrid::full_range();
        let d = make_offgrid_tests(&specs, &g, 11, 5).unwrap();
        assert_eq!(d.len(), 15);
        assert_eq!(d.class_counts(), [5, 5, 5]);
        for seed in 0..50 {
            for (class, p) in offgrid_params(&specs, seed, 5) {
                let s = &specs[class.index()];
                assert!(p.f3 > s.f3_range.0 && p.f3 < s.f3_range.1);
                assert!(p.f4 > s.f4_range.0 && p.f4 < s.f4_range.1);
                assert!(p.f2 > s.f2_range().0 && p.f2 < s.f2_range().1);
                assert!(p.xi3 > XI_MIN && p.xi3 < XI_MAX);
                assert!(!s.f3_values().contains(&p.f3));
                assert!(!s.xi_values.contains(&p.xi4));
                p.validate().unwrap();
            }
        }
    }

    proptest! {
        #[test]
        fn normalization_bounds_and_order(rows in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 1..40)) {
            prop_assume!((0..3).all(|j| rows.iter().any(|r| r[j] != 0.0)));
            let recs: Vec<Record> = rows.iter().map(|r| {
                let mut f = r.clone();
                f.push(1.0);
                Record { features: f, label: MicClass::Ecm30b }
            }).collect();
            let grid = FrequencyGrid::linear(5.0, 6.0, 2).unwrap();
            let d = Dataset::from_records(grid, &recs).unwrap();
            let s = compute_norm_stats(&d).unwrap();
            let n = normalize(d.clone(), &s).unwrap();
            let s2 = compute_norm_stats(&n).unwrap();
            for m in &s2.max_abs {
                prop_assert!((m - 1.0).abs() <= 1e-12);
            }
            for i in 0..d.len() {
                for k in 0..d.len() {
                    for j in 0..4 {
                        prop_assert_eq!(d.row(i)[j] < d.row(k)[j], n.row(i)[j] < n.row(k)[j]);
                    }
                }
            }
        }
    }
}
