//! Synthetic labeled-pose datasets, pose jitter, and CSV I/O.
//!
//! Category `i` renders a pose `y` as `x = A_i·φ(Q_i·y) + o_i + ε`, where `φ`
//! stacks `sin(v_j/2), cos(v_j/2), sin(v_j), cos(v_j)` for each component of
//! `v`, `Q_i` is a fixed random rotation (the category's reference frame),
//! `A_i` a fixed Gaussian matrix, `o_i` a category offset and `ε ~ N(0, σ²)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::so3::{exp_map, log_map, random_rotation, viewpoint_error_deg, AxisAngle, Mat3, Rotation};

/// Number of trigonometric pose features.
pub const POSE_FEATURES: usize = 12;

/// Stream offset separating map generation from sample generation.
const MAP_STREAM: u64 = 1000;
const TEST_SEED_SALT: u64 = 0x5eed_7e57;
const FRAME_MAX_ANGLE: f64 = std::f64::consts::PI - 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub category: usize,
    pub rotation: Rotation<f64>,
    pub axis_angle: AxisAngle<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_categories: usize,
    pub input_dim: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Tensor2<f64> {
        let mut data = Vec::with_capacity(self.len() * self.input_dim);
        for s in &self.samples {
            data.extend_from_slice(&s.x);
        }
        Tensor2::from_vec(self.len(), self.input_dim, data).expect("rows share the input width")
    }

    pub fn categories(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.category).collect()
    }

    pub fn rotations(&self) -> Vec<Rotation<f64>> {
        self.samples.iter().map(|s| s.rotation).collect()
    }

    pub fn category_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_categories];
        for s in &self.samples {
            counts[s.category] += 1;
        }
        counts
    }

    /// Samples whose category is in `keep`.
    pub fn filter_categories(&self, keep: &[usize]) -> Dataset {
        Dataset {
            num_categories: self.num_categories,
            input_dim: self.input_dim,
            samples: self.samples.iter().filter(|s| keep.contains(&s.category)).cloned().collect(),
        }
    }

    /// Re-labels the category count, checking every label fits.
    pub fn with_num_categories(mut self, k: usize) -> Result<Dataset> {
        if let Some(s) = self.samples.iter().find(|s| s.category >= k) {
            return Err(Error::IndexOutOfRange { index: s.category, len: k });
        }
        self.num_categories = k;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_categories: usize,
    pub samples_per_category: usize,
    pub input_dim: usize,
    /// Seeds the per-category maps `A_i`, `o_i`.
    pub generator_seed: u64,
    pub noise: f64,
    pub max_angle: f64,
    /// Standard deviation of the per-component category offsets.
    pub offset_scale: f64,
}

impl SynthConfig {
    /// K=4, 500 per category, 64 inputs, σ=0.05, offset scale 0.5.
    pub fn standard(seed: u64) -> Self {
        Self {
            num_categories: 4,
            samples_per_category: 500,
            input_dim: 64,
            generator_seed: seed,
            noise: 0.05,
            max_angle: std::f64::consts::PI - 0.1,
            offset_scale: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 1 || self.input_dim < 1 {
            return Err(Error::InvalidConfig("need at least one category and one input".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(self.max_angle >= 0.0 && self.max_angle < std::f64::consts::PI) {
            return Err(Error::InvalidConfig(format!("max angle must be in [0, pi), got {}", self.max_angle)));
        }
        if !(self.offset_scale >= 0.0 && self.offset_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("offset scale must be >= 0, got {}", self.offset_scale)));
        }
        Ok(())
    }
}

/// The fixed per-category maps.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: SynthConfig,
    /// `input_dim × POSE_FEATURES` per category, row-major.
    maps: Vec<Vec<f64>>,
    frames: Vec<Mat3<f64>>,
    offsets: Vec<Vec<f64>>,
}

impl Generator {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let gain = 1.0 / (POSE_FEATURES as f64).sqrt();
        let mut maps = Vec::with_capacity(cfg.num_categories);
        let mut frames = Vec::with_capacity(cfg.num_categories);
        let mut offsets = Vec::with_capacity(cfg.num_categories);
        for i in 0..cfg.num_categories {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.generator_seed);
            rng.set_stream(MAP_STREAM + i as u64);
            let a: Vec<f64> = (0..cfg.input_dim * POSE_FEATURES)
                .map(|_| gain * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let o: Vec<f64> = (0..cfg.input_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    cfg.offset_scale * z
                })
                .collect();
            let q = random_rotation::<f64, _>(&mut rng, FRAME_MAX_ANGLE)?;
            maps.push(a);
            frames.push(*q.matrix());
            offsets.push(o);
        }
        Ok(Self {
            cfg,
            maps,
            frames,
            offsets,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// `A_c·φ(Q_c·y) + o_c + ε`.
    pub fn render<R: Rng + ?Sized>(&self, category: usize, y: &AxisAngle<f64>, rng: &mut R) -> Vec<f64> {
        let v = self.frames[category].mul_vec(&y.y);
        let mut phi = [0.0; POSE_FEATURES];
        for j in 0..3 {
            let v = v[j];
            phi[4 * j] = (0.5 * v).sin();
            phi[4 * j + 1] = (0.5 * v).cos();
            phi[4 * j + 2] = v.sin();
            phi[4 * j + 3] = v.cos();
        }
        let noise = Normal::new(0.0, self.cfg.noise).expect("validated noise level");
        let a = &self.maps[category];
        (0..self.cfg.input_dim)
            .map(|d| {
                let row = &a[d * POSE_FEATURES..(d + 1) * POSE_FEATURES];
                let signal: f64 = row.iter().zip(&phi).map(|(w, f)| w * f).sum();
                let eps = if self.cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                signal + self.offsets[category][d] + eps
            })
            .collect()
    }

    fn sample<R: Rng + ?Sized>(&self, category: usize, rng: &mut R) -> Result<LabeledSample> {
        let r = random_rotation::<f64, _>(rng, self.cfg.max_angle)?;
        let axis_angle = log_map(&r)?;
        // Store the rotation re-derived from the encoding so that CSV round trips are exact.
        let rotation = exp_map(&axis_angle);
        let x = self.render(category, &axis_angle, rng);
        Ok(LabeledSample {
            x,
            category,
            rotation,
            axis_angle,
        })
    }

    /// `samples_per_category` draws for each category; category `i` uses ChaCha stream `i`.
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let mut samples = Vec::with_capacity(self.cfg.num_categories * self.cfg.samples_per_category);
        for c in 0..self.cfg.num_categories {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            for _ in 0..self.cfg.samples_per_category {
                samples.push(self.sample(c, &mut rng)?);
            }
        }
        Ok(Dataset {
            num_categories: self.cfg.num_categories,
            input_dim: self.cfg.input_dim,
            samples,
        })
    }

    /// Rotates the pose by a random rotation of at most `max_deg` degrees and
    /// re-renders the features. Poses landing within `1e-3` of `π` are redrawn.
    pub fn jitter<R: Rng + ?Sized>(&self, sample: &LabeledSample, rng: &mut R, max_deg: f64) -> Result<LabeledSample> {
        if !(0.0..=10.0).contains(&max_deg) {
            return Err(Error::InvalidRange {
                value: max_deg,
                range: "[0, 10] degrees",
            });
        }
        if max_deg == 0.0 {
            return Ok(sample.clone());
        }
        let limit = std::f64::consts::PI - 1e-3;
        let r = loop {
            let delta = random_rotation::<f64, _>(rng, max_deg.to_radians())?;
            let r = delta.compose(&sample.rotation);
            if r.angle() < limit {
                break r;
            }
        };
        let axis_angle = log_map(&r)?;
        let rotation = exp_map(&axis_angle);
        debug_assert!(viewpoint_error_deg(&rotation, &sample.rotation) <= max_deg + 1e-9);
        Ok(LabeledSample {
            x: self.render(sample.category, &axis_angle, rng),
            category: sample.category,
            rotation,
            axis_angle,
        })
    }
}

/// Generates a dataset with maps seeded by `cfg.generator_seed` and samples by `seed`.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    Generator::new(cfg.clone())?.generate(seed)
}

/// The standard benchmark: train and test splits sharing the maps of `seed`.
pub fn standard_benchmark(seed: u64, test_per_category: usize) -> Result<(Dataset, Dataset)> {
    let cfg = SynthConfig::standard(seed);
    let gen = Generator::new(cfg.clone())?;
    let train = gen.generate(seed)?;
    let test = Generator::new(SynthConfig {
        samples_per_category: test_per_category,
        ..cfg
    })?
    .generate(test_seed(seed))?;
    Ok((train, test))
}

/// Sample seed of the held-out split that belongs to a training seed.
pub fn test_seed(seed: u64) -> u64 {
    seed ^ TEST_SEED_SALT
}

/// Writes `x0..x{D-1},cat,y0,y1,y2` with 17 significant digits and LF line endings.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        let csv_err = |e: csv::Error| Error::io(&tmp, std::io::Error::other(e));
        w.write_record(header(dataset.input_dim)).map_err(csv_err)?;
        let mut record = Vec::with_capacity(dataset.input_dim + 4);
        for s in &dataset.samples {
            record.clear();
            record.extend(s.x.iter().map(|v| format!("{v:.16e}")));
            record.push(s.category.to_string());
            record.extend(s.axis_angle.y.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&record).map_err(csv_err)?;
        }
        let mut inner = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        inner.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    h.push("cat".into());
    h.extend(["y0", "y1", "y2"].map(String::from));
    h
}

/// Reads a dataset; the category count is `max label + 1`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let head = r.headers().map_err(|e| schema(e.to_string()))?.clone();
    let fields: Vec<&str> = head.iter().collect();
    if fields.len() < 5 {
        return Err(schema(format!("expected at least 5 columns, found {}", fields.len())));
    }
    let d = fields.len() - 4;
    let expected = header(d);
    if let Some(i) = (0..fields.len()).find(|&i| fields[i] != expected[i]) {
        return Err(schema(format!("column {} is '{}', expected '{}'", i + 1, fields[i], expected[i])));
    }
    let mut samples = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match r.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: e.position().map_or(0, |p| p.line()),
                    column: 0,
                    message: e.to_string(),
                });
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        let parse = |column: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        };
        let float = |i: usize| -> Result<f64> {
            let v: f64 = record[i].trim().parse().map_err(|e| parse(i + 1, format!("'{}': {e}", &record[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse(i + 1, format!("non-finite value '{}'", &record[i])))
            }
        };
        let x = (0..d).map(float).collect::<Result<Vec<_>>>()?;
        let category: usize = record[d].trim().parse().map_err(|e| parse(d + 1, format!("'{}': {e}", &record[d])))?;
        let y = [float(d + 1)?, float(d + 2)?, float(d + 3)?];
        let axis_angle = AxisAngle::new(y);
        if !axis_angle.is_canonical() {
            return Err(parse(d + 2, format!("pose {y:?} has angle >= pi")));
        }
        samples.push(LabeledSample {
            x,
            category,
            rotation: exp_map(&axis_angle),
            axis_angle,
        });
    }
    let num_categories = samples.iter().map(|s| s.category + 1).max().unwrap_or(0);
    Ok(Dataset {
        num_categories,
        input_dim: d,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::geodesic_distance;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            num_categories: 2,
            samples_per_category: 100,
            input_dim: 8,
            generator_seed: 3,
            noise,
            max_angle: std::f64::consts::PI - 0.1,
            offset_scale: 0.5,
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate(&small(0.0), 11).unwrap();
        let b = generate(&small(0.0), 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&small(0.0), 12).unwrap());
    }

    #[test]
    fn counts_and_balance() {
        let d = generate(&small(0.05), 1).unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(d.category_counts(), vec![100, 100]);
    }

    #[test]
    fn encodings_are_consistent() {
        let cfg = small(0.05);
        let d = generate(&cfg, 2).unwrap();
        for s in &d.samples {
            assert!(s.axis_angle.angle() <= cfg.max_angle + 1e-12);
            let r = exp_map(&s.axis_angle);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((r.matrix().get(i, j) - s.rotation.matrix().get(i, j)).abs() <= 1e-12);
                }
            }
            let y = log_map(&s.rotation).unwrap();
            for j in 0..3 {
                assert!((y.y[j] - s.axis_angle.y[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = small(-1.0);
        assert!(matches!(generate(&c, 0), Err(Error::InvalidConfig(_))));
        c.noise = 0.0;
        c.max_angle = std::f64::consts::PI;
        assert!(matches!(generate(&c, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn jitter_contract() {
        let gen = Generator::new(small(0.05)).unwrap();
        let d = gen.generate(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for s in d.samples.iter().take(50) {
            assert_eq!(&gen.jitter(s, &mut rng, 0.0).unwrap(), s);
            let j = gen.jitter(s, &mut rng, 5.0).unwrap();
            assert_eq!(j.category, s.category);
            assert!(viewpoint_error_deg(&j.rotation, &s.rotation) <= 5.0 + 1e-9);
            assert!(geodesic_distance(&exp_map(&j.axis_angle), &j.rotation) < 1e-7);
            assert!(j.axis_angle.angle() < std::f64::consts::PI - 1e-3);
        }
        assert!(gen.jitter(&d.samples[0], &mut rng, 11.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = generate(&small(0.05), 5).unwrap();
        save_csv(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,x2,x3,x4,x5,x6,x7,cat,y0,y1,y2\n"));
        assert!(!text.contains('\r'));
        let back = load_csv(&path).unwrap();
        assert_eq!(back.len(), d.len());
        for (a, b) in back.samples.iter().zip(&d.samples) {
            assert_eq!(a.category, b.category);
            for (u, v) in a.x.iter().zip(&b.x) {
                assert!((u - v).abs() <= 1e-15 * v.abs().max(1.0));
            }
            assert_eq!(a.axis_angle, b.axis_angle);
            assert_eq!(a.rotation, b.rotation);
        }
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad_row = dir.path().join("bad.csv");
        std::fs::write(&bad_row, "x0,cat,y0,y1,y2\n1.0,0,0.1,0.2,0.3\n2.0,1,oops,0.2,0.3\n").unwrap();
        match load_csv(&bad_row) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("expected parse error, got {other:?}"),
        }
        let short = dir.path().join("short.csv");
        std::fs::write(&short, "x0,cat,y0,y1,y2\n1.0,0,0.1,0.2\n").unwrap();
        assert!(matches!(load_csv(&short), Err(Error::Parse { line: 2, .. })));
        let bad_head = dir.path().join("head.csv");
        std::fs::write(&bad_head, "x0,label,y0,y1,y2\n1.0,0,0.1,0.2,0.3\n").unwrap();
        assert!(matches!(load_csv(&bad_head), Err(Error::Schema { .. })));
        assert!(matches!(load_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }
}
