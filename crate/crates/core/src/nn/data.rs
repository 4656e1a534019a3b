use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::NnError;

/// Labeled examples with flat feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self, NnError> {
        if inputs.len() != labels.len() {
            return Err(NnError::Dataset(format!("{} inputs but {} labels", inputs.len(), labels.len())));
        }
        if inputs.is_empty() {
            return Err(NnError::Dataset("no examples".into()));
        }
        let dim = inputs[0].len();
        if dim == 0 || inputs.iter().any(|x| x.len() != dim) {
            return Err(NnError::Dataset("examples must share a nonzero feature count".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(NnError::Dataset(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self { inputs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Seeded shuffle into `(train, test)` with `test_fraction` held out.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let pick = |idx: &[usize]| Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        };
        (pick(&order[n_test..]), pick(&order[..n_test]))
    }
}

/// Isotropic Gaussian clusters: centers drawn from `N(0, 1)` per coordinate,
/// samples with unit-variance noise scaled by `spread`.
pub fn blobs(per_class: usize, dim: usize, classes: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| unit.sample(&mut rng)).collect()).collect();
    let mut inputs = Vec::with_capacity(per_class * classes);
    let mut labels = Vec::with_capacity(per_class * classes);
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            inputs.push(center.iter().map(|&m| m + spread * unit.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    Dataset { inputs, labels, num_classes: classes }
}

const GLYPHS: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["####.", "....#", "....#", ".###.", "....#", "....#", "####."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
];

/// Synthetic 8x8 digit images: fixed 5x7 glyphs placed at a random offset
/// with additive Gaussian pixel noise. Features are the 64 pixels,
/// row-major, roughly in `[0, 1]`.
pub fn digits(per_class: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).unwrap();
    let mut inputs = Vec::with_capacity(per_class * 10);
    let mut labels = Vec::with_capacity(per_class * 10);
    for _ in 0..per_class {
        for (label, glyph) in GLYPHS.iter().enumerate() {
            let (oy, ox) = (rng.gen_range(0..=1), rng.gen_range(0..=3));
            let mut img = vec![0.0; 64];
            for (r, row) in glyph.iter().enumerate() {
                for (c, ch) in row.bytes().enumerate() {
                    if ch == b'#' {
                        img[(r + oy) * 8 + c + ox] = 1.0;
                    }
                }
            }
            for p in &mut img {
                *p += jitter.sample(&mut rng);
            }
            inputs.push(img);
            labels.push(label);
        }
    }
    Dataset { inputs, labels, num_classes: 10 }
}

/// Reads `label,x1,x2,...` rows. Blank lines and lines starting with `#`
/// are skipped; a first row that fails to parse is treated as a header.
pub fn read_csv(path: &Path) -> Result<Dataset, NnError> {
    let text = std::fs::read_to_string(path).map_err(|e| NnError::Dataset(format!("{}: {e}", path.display())))?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label = fields.next().unwrap_or_default().parse::<usize>();
        let values: Result<Vec<f64>, _> = fields.map(str::parse).collect();
        match (label, values) {
            (Ok(l), Ok(v)) => {
                labels.push(l);
                inputs.push(v);
            }
            _ if inputs.is_empty() && n == 0 => continue,
            _ => return Err(NnError::Dataset(format!("{}:{}: malformed row", path.display(), n + 1))),
        }
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, labels, classes)
}

/// Where training data comes from: `blobs`, `digits`, or `file:PATH`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Blobs,
    Digits,
    File(PathBuf),
}

impl DatasetSource {
    /// Default desk sizes: 4 blob classes in 64 dimensions with 200 examples
    /// each, or 10 digit classes with 120 examples each.
    pub fn load(&self, seed: u64) -> Result<Dataset, NnError> {
        match self {
            DatasetSource::Blobs => Ok(blobs(200, 64, 4, 1.0, seed)),
            DatasetSource::Digits => Ok(digits(120, 0.2, seed)),
            DatasetSource::File(path) => read_csv(path),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blobs" => Ok(DatasetSource::Blobs),
            "digits" => Ok(DatasetSource::Digits),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(DatasetSource::File(PathBuf::from(p))),
                _ => Err(NnError::Dataset(format!("unknown dataset `{s}`; expected blobs, digits or file:PATH"))),
            },
        }
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Blobs => f.write_str("blobs"),
            DatasetSource::Digits => f.write_str("digits"),
            DatasetSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(blobs(5, 8, 3, 1.0, 4), blobs(5, 8, 3, 1.0, 4));
        assert_ne!(blobs(5, 8, 3, 1.0, 4), blobs(5, 8, 3, 1.0, 5));
        let d = digits(3, 0.1, 2);
        assert_eq!((d.len(), d.dim(), d.num_classes), (30, 64, 10));
        assert_eq!(d, digits(3, 0.1, 2));
    }

    #[test]
    fn split_partitions() {
        let d = blobs(10, 4, 2, 1.0, 0);
        let (train, test) = d.split(0.25, 1);
        assert_eq!((train.len(), test.len()), (15, 5));
        let mut all: Vec<_> = train.inputs.iter().chain(&test.inputs).cloned().collect();
        let mut orig = d.inputs.clone();
        let key = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        all.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(all, orig);
    }

    #[test]
    fn csv_reader() {
        let dir = std::env::temp_dir().join(format!("zkwm-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        std::fs::write(&path, "label,a,b\n0,1.5,2\n# note\n1, -3, 4e-1\n").unwrap();
        let d = read_csv(&path).unwrap();
        assert_eq!(d.inputs, vec![vec![1.5, 2.0], vec![-3.0, 0.4]]);
        assert_eq!((d.labels.clone(), d.num_classes), (vec![0, 1], 2));
        std::fs::write(&path, "0,1\n1,x\n").unwrap();
        assert!(read_csv(&path).is_err());
        assert!(read_csv(&dir.join("missing.csv")).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn source_parsing() {
        assert_eq!("blobs".parse::<DatasetSource>().unwrap(), DatasetSource::Blobs);
        assert_eq!("file:/x.csv".parse::<DatasetSource>().unwrap(), DatasetSource::File("/x.csv".into()));
        assert!("file:".parse::<DatasetSource>().is_err());
        assert!("mnist".parse::<DatasetSource>().is_err());
    }
}
