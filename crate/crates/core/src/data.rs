//! Datasets, synthetic generators and file ingestion.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RandomStream;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    classes: Vec<usize>,
    num_classes: usize,
}

/// Feature matrix with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Option<Labels>,
    split: String,
    provenance: String,
    feature_range: (f64, f64),
}

impl Dataset {
    pub fn new(features: Matrix, labels: Option<(Vec<usize>, usize)>, provenance: impl Into<String>) -> Result<Self> {
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
        let labels = match labels {
            None => None,
            Some((classes, num_classes)) => {
                if classes.len() != features.rows() {
                    return Err(Error::DimensionMismatch { expected: features.rows(), actual: classes.len() });
                }
                if num_classes < 2 {
                    return Err(Error::InvalidArgument("labelled data needs at least 2 classes".into()));
                }
                if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
                    return Err(Error::IndexOutOfRange { index: bad, len: num_classes });
                }
                Some(Labels { classes, num_classes })
            }
        };
        let feature_range = range_of(features.as_slice());
        Ok(Self { features, labels, split: "full".into(), provenance: provenance.into(), feature_range })
    }

    pub fn with_split(mut self, tag: impl Into<String>) -> Self {
        self.split = tag.into();
        self
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn is_labelled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.num_classes)
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l.classes[i])
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_ref().map(|l| l.classes.as_slice())
    }

    pub fn one_hot(&self, i: usize) -> Option<Vec<f64>> {
        let l = self.labels.as_ref()?;
        let mut v = vec![0.0; l.num_classes];
        v[l.classes[i]] = 1.0;
        Some(v)
    }

    pub fn split_tag(&self) -> &str {
        &self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Smallest and largest feature value over the whole matrix.
    pub fn feature_range(&self) -> (f64, f64) {
        self.feature_range
    }

    /// Rows in the given order.
    pub fn select(&self, indices: &[usize], tag: &str) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let features = Matrix::from_row_major(indices.len(), d, data).expect("consistent shape");
        let labels = self.labels.as_ref().map(|l| Labels {
            classes: indices.iter().map(|&i| l.classes[i]).collect(),
            num_classes: l.num_classes,
        });
        let feature_range = range_of(features.as_slice());
        Dataset { features, labels, split: tag.into(), provenance: self.provenance.clone(), feature_range }
    }

    /// Apply `f` to every feature row.
    pub fn map_features(&self, mut f: impl FnMut(&mut [f64])) -> Result<Dataset> {
        let mut features = self.features.clone();
        let d = self.dim();
        for row in features.as_mut_slice().chunks_mut(d) {
            f(row);
        }
        let labels = self.labels.as_ref().map(|l| (l.classes.clone(), l.num_classes));
        Ok(Dataset::new(features, labels, self.provenance.clone())?.with_split(self.split.clone()))
    }

    /// Same rows, labels dropped (e.g. to treat a labelled set as OOD).
    pub fn unlabelled(&self) -> Dataset {
        Dataset { labels: None, ..self.clone() }
    }

    /// Native CSV container: `x0..x{d-1}` columns, then `label` when present.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        if self.is_labelled() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(c) = self.label(i) {
                rec.push(c.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the native CSV container. The class count is inferred as
    /// `max label + 1` unless given.
    pub fn read_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = r.headers()?.clone();
        let labelled = headers.iter().next_back() == Some("label");
        let d = headers.len() - usize::from(labelled);
        if d == 0 {
            return Err(Error::Format(format!("{}: no feature columns", path.display())));
        }
        let mut data = Vec::new();
        let mut classes = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(Error::Format(format!("{}: row {} has {} fields", path.display(), line + 1, rec.len())));
            }
            for j in 0..d {
                data.push(rec[j].trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("{}: row {} column {j}: {e}", path.display(), line + 1))
                })?);
            }
            if labelled {
                classes.push(rec[d].trim().parse::<usize>().map_err(|e| {
                    Error::Format(format!("{}: row {} label: {e}", path.display(), line + 1))
                })?);
            }
        }
        let n = data.len() / d;
        let features = Matrix::from_row_major(n, d, data)?;
        let labels = labelled.then(|| {
            let k = num_classes.unwrap_or_else(|| classes.iter().max().map_or(0, |m| m + 1));
            (classes, k)
        });
        Dataset::new(features, labels, format!("csv:{}", path.display()))
    }
}

fn range_of(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Per-feature min-max scaling onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let d = data.dim();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for i in 0..data.len() {
            for (j, &v) in data.row(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.min.len() {
            return Err(Error::DimensionMismatch { expected: self.min.len(), actual: data.dim() });
        }
        data.map_features(|row| {
            for ((v, lo), hi) in row.iter_mut().zip(&self.min).zip(&self.max) {
                let span = hi - lo;
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        })
    }
}

/// Centers of an equilateral triangle with the given side, centroid at 0.
pub fn triangle_centers(side: f64) -> Vec<Vec<f64>> {
    let r = side / 3f64.sqrt();
    (0..3)
        .map(|i| {
            let t = std::f64::consts::FRAC_PI_2 + i as f64 * 2.0 * std::f64::consts::PI / 3.0;
            vec![r * t.cos(), r * t.sin()]
        })
        .collect()
}

/// Isotropic Gaussian clusters, `n_per_class` rows per center, class order.
pub fn make_blobs(k: usize, n_per_class: usize, centers: &[Vec<f64>], spread: f64, rng: &mut RandomStream) -> Result<Dataset> {
    if k < 2 || k != centers.len() {
        return Err(Error::InvalidArgument(format!("need k = len(centers) >= 2, got k={k}, {} centers", centers.len())));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be positive".into()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::InvalidArgument(format!("spread {spread} must be non-negative")));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::InvalidArgument("centers must share a positive dimension".into()));
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(k * n_per_class * d);
    let mut classes = Vec::with_capacity(k * n_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in center {
                data.push(m + spread * noise.sample(rng));
            }
            classes.push(c);
        }
    }
    let features = Matrix::from_row_major(k * n_per_class, d, data)?;
    Dataset::new(features, Some((classes, k)), format!("blobs:k={k},n={n_per_class},spread={spread}"))
}

/// Unlabelled points on a sphere around the data mean, at
/// `radius_factor` times the largest distance of any row from the mean.
pub fn make_ood_ring(data: &Dataset, radius_factor: f64, n: usize, rng: &mut RandomStream) -> Result<Dataset> {
    if !(radius_factor.is_finite() && radius_factor > 1.0) {
        return Err(Error::InvalidArgument(format!("radius_factor {radius_factor} must exceed 1")));
    }
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let d = data.dim();
    let mut mean = vec![0.0; d];
    for i in 0..data.len() {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= data.len() as f64;
    }
    let max_dist = (0..data.len())
        .map(|i| data.row(i).iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let radius = radius_factor * max_dist;
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        };
        out.extend(dir.iter().zip(&mean).map(|(u, m)| m + radius * u));
    }
    Ok(Dataset::new(Matrix::from_row_major(n, d, out)?, None, format!("ood-ring:factor={radius_factor}"))?
        .with_split("ood"))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn truncated(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |_| Error::Format(format!("{}: truncated IDX file", path.display()))
}

/// IDX image file: magic 0x803, then count, rows, cols and unsigned bytes.
/// Pixels are scaled to `[0, 1]` and flattened row-major.
pub fn load_idx_images(path: &Path) -> Result<Matrix> {
    parse_idx_images(&read_all(path)?, path)
}

fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>().map_err(truncated(path))?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!("{}: bad image magic {magic:#010x}", path.display())));
    }
    let count = cur.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let rows = cur.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let cols = cur.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let body = &bytes[16..];
    let need = count * rows * cols;
    if body.len() < need {
        return Err(Error::Format(format!("{}: truncated IDX file ({} of {need} pixel bytes)", path.display(), body.len())));
    }
    let data = body[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_row_major(count, rows * cols, data)
}

/// IDX label file: magic 0x801, then count and unsigned byte labels.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    parse_idx_labels(&read_all(path)?, path)
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>().map_err(truncated(path))?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!("{}: bad label magic {magic:#010x}", path.display())));
    }
    let count = cur.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format(format!("{}: truncated IDX file ({} of {count} labels)", path.display(), body.len())));
    }
    Ok(body[..count].iter().map(|&b| b as usize).collect())
}

/// Labelled IDX pair. The class count is `max label + 1` unless given.
pub fn load_idx(images: &Path, labels: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let features = load_idx_images(images)?;
    let classes = load_idx_labels(labels)?;
    if classes.len() != features.rows() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            features.rows(),
            classes.len()
        )));
    }
    let k = num_classes.unwrap_or_else(|| classes.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, Some((classes, k)), format!("idx:{}", images.display()))
}

/// Unlabelled IDX images (for out-of-distribution sets).
pub fn load_idx_unlabelled(images: &Path) -> Result<Dataset> {
    Dataset::new(load_idx_images(images)?, None, format!("idx:{}", images.display()))
}

/// Stratified, seeded partition. Within every class the rows are shuffled
/// and cut at the rounded cumulative fractions, so each part holds its share
/// of every class to within one row.
pub fn split(data: &Dataset, fractions: &[f64], rng: &mut RandomStream) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidArgument(format!("fractions {fractions:?} must be positive")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("fractions sum to {total}, not 1")));
    }
    let groups: Vec<Vec<usize>> = match data.labels() {
        Some(classes) => {
            let k = data.num_classes().unwrap();
            let mut g = vec![Vec::new(); k];
            for (i, &c) in classes.iter().enumerate() {
                g[c].push(i);
            }
            g
        }
        None => vec![(0..data.len()).collect()],
    };
    let mut parts = vec![Vec::new(); fractions.len()];
    for mut idx in groups {
        idx.shuffle(rng);
        let n = idx.len() as f64;
        let mut start = 0;
        let mut cum = 0.0;
        for (p, f) in parts.iter_mut().zip(fractions) {
            cum += f;
            let end = ((cum * n).round() as usize).min(idx.len());
            p.extend_from_slice(&idx[start..end]);
            start = end;
        }
        parts.last_mut().unwrap().extend_from_slice(&idx[start..]);
    }
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(i, mut idx)| {
            idx.sort_unstable();
            data.select(&idx, &format!("part{i}"))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn blobs(seed: u64) -> Dataset {
        make_blobs(3, 100, &triangle_centers(4.0), 0.6, &mut rng::stream(seed)).unwrap()
    }

    #[test]
    fn blobs_shape_and_balance() {
        let b = blobs(1);
        assert_eq!(b.len(), 300);
        assert_eq!(b.num_classes(), Some(3));
        for c in 0..3 {
            assert_eq!(b.labels().unwrap().iter().filter(|&&l| l == c).count(), 100);
        }
        assert_eq!(b, blobs(1));
        assert_ne!(b, blobs(2));
        assert_eq!(b.one_hot(0), Some(vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn zero_spread_collapses_to_centers() {
        let centers = triangle_centers(4.0);
        let b = make_blobs(3, 5, &centers, 0.0, &mut rng::stream(1)).unwrap();
        for i in 0..b.len() {
            assert_eq!(b.row(i), centers[b.label(i).unwrap()].as_slice());
        }
        for (i, c) in centers.iter().enumerate() {
            for d in centers.iter().skip(i + 1) {
                let side = ((c[0] - d[0]).powi(2) + (c[1] - d[1]).powi(2)).sqrt();
                assert!((side - 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blob_errors() {
        let c = triangle_centers(4.0);
        assert!(make_blobs(2, 5, &c, 0.5, &mut rng::stream(1)).is_err());
        assert!(make_blobs(3, 0, &c, 0.5, &mut rng::stream(1)).is_err());
        assert!(make_blobs(3, 5, &c, -1.0, &mut rng::stream(1)).is_err());
    }

    #[test]
    fn ring_is_off_manifold() {
        let b = blobs(3);
        let ring = make_ood_ring(&b, 1.5, 200, &mut rng::stream(4)).unwrap();
        assert_eq!(ring.len(), 200);
        assert!(!ring.is_labelled());
        let mean: Vec<f64> = (0..2).map(|j| (0..b.len()).map(|i| b.row(i)[j]).sum::<f64>() / b.len() as f64).collect();
        let dist = |x: &[f64]| x.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>().sqrt();
        let max_train = (0..b.len()).map(|i| dist(b.row(i))).fold(0.0, f64::max);
        let min_ring = (0..ring.len()).map(|i| dist(ring.row(i))).fold(f64::INFINITY, f64::min);
        assert!(min_ring > max_train);
        assert!(make_ood_ring(&b, 1.0, 10, &mut rng::stream(4)).is_err());
    }

    #[test]
    fn stratified_split() {
        let b = blobs(5);
        let parts = split(&b, &[0.9, 0.1], &mut rng::stream(6)).unwrap();
        assert_eq!(parts[0].len(), 270);
        assert_eq!(parts[1].len(), 30);
        for c in 0..3 {
            assert_eq!(parts[0].labels().unwrap().iter().filter(|&&l| l == c).count(), 90);
            assert_eq!(parts[1].labels().unwrap().iter().filter(|&&l| l == c).count(), 10);
        }
        let again = split(&b, &[0.9, 0.1], &mut rng::stream(6)).unwrap();
        assert_eq!(parts, again);
        let whole = split(&b, &[1.0], &mut rng::stream(6)).unwrap();
        assert_eq!(whole[0].features(), b.features());
        assert!(split(&b, &[0.5, 0.6], &mut rng::stream(6)).is_err());
        assert!(split(&b, &[1.5, -0.5], &mut rng::stream(6)).is_err());
    }

    #[test]
    fn scaler_maps_to_unit_box() {
        let b = blobs(7);
        let s = MinMaxScaler::fit(&b).unwrap().transform(&b).unwrap();
        assert_eq!(s.feature_range(), (0.0, 1.0));
        assert_eq!(s.labels(), b.labels());
    }

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn idx_parsing() {
        let p = Path::new("mem");
        let pixels: Vec<u8> = (0..10 * 784).map(|i| (i % 256) as u8).collect();
        let m = parse_idx_images(&idx_images(10, 28, 28, &pixels), p).unwrap();
        assert_eq!((m.rows(), m.cols()), (10, 784));
        assert_eq!(m.get(0, 255), 1.0);
        assert_eq!(m.get(0, 0), 0.0);

        let mut bad = idx_images(1, 2, 2, &[0, 1, 2, 3]);
        bad[3] = 0x04;
        assert!(matches!(parse_idx_images(&bad, p), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&idx_images(2, 2, 2, &[0; 5]), p), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&[0, 0, 8], p), Err(Error::Format(_))));

        let mut labels = Vec::new();
        labels.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&labels, p).unwrap(), vec![7, 0, 9]);
        labels[3] = 0x03;
        assert!(parse_idx_labels(&labels, p).is_err());
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::write(&img, idx_images(2, 1, 2, &[0, 255, 128, 64])).unwrap();
        let mut labels = IDX_LABEL_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[0, 1, 1]);
        fs::write(&lab, &labels).unwrap();
        assert!(load_idx(&img, &lab, None).is_err());
        labels[7] = 2;
        labels.pop();
        fs::write(&lab, &labels).unwrap();
        let d = load_idx(&img, &lab, Some(10)).unwrap();
        assert_eq!(d.num_classes(), Some(10));
        assert_eq!(d.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "x0,x1,label\n0.5,abc,1\n").unwrap();
        assert!(Dataset::read_csv(&p, None).is_err());
    }
}
