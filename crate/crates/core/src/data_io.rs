//! Datasets, normalization, seeded splits and model persistence.
//!
//! Binary formats are little-endian throughout:
//!
//! * dataset (`DADL1`): magic, `u64` samples, `u64` features, `u8` label width
//!   in bytes (1, 2, 4 or 8), then the samples as row-major `f64`s, then one
//!   unsigned label per sample.
//! * model (`DADLM1`): magic, hyperparameters, per-domain name, features,
//!   labels and projection block, then the dictionary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::KernelSpec;
use crate::trainer::{Dictionary, Hyperparams, ObjectiveTrace, TrainedModel};

pub const DATASET_MAGIC: &[u8; 5] = b"DADL1";
pub const MODEL_MAGIC: &[u8; 6] = b"DADLM1";

/// One domain's samples (columns of `features`) and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub name: String,
}

impl DomainDataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.ncols() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.ncols(),
                got: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(DomainDataset {
            features,
            labels,
            name: name.into(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.features.ncols()
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    /// Number of classes implied by the largest label.
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> DomainDataset {
        DomainDataset {
            features: self.features.select_columns(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            name: self.name.clone(),
        }
    }

    pub fn normalized(&self) -> Result<DomainDataset> {
        Ok(DomainDataset {
            features: normalize_l1(&self.features)?,
            labels: self.labels.clone(),
            name: self.name.clone(),
        })
    }

    /// Reject features the kernel cannot accept.
    pub fn check_kernel(&self, spec: KernelSpec) -> Result<()> {
        if spec.requires_nonnegative() {
            if let Some(&value) = self.features.iter().find(|v| **v < 0.0) {
                return Err(Error::NegativeEntry { value });
            }
        }
        Ok(())
    }
}

/// On-disk dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Packed,
}

impl Format {
    /// `.csv` files are CSV; anything else is read as packed binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Packed,
        }
    }
}

fn domain_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("domain")
        .to_string()
}

pub fn load_dataset(path: &Path, format: Format) -> Result<DomainDataset> {
    match format {
        Format::Csv => load_csv(path),
        Format::Packed => load_packed(path),
    }
}

pub fn save_dataset(ds: &DomainDataset, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => save_csv(ds, path),
        Format::Packed => save_packed(ds, path),
    }
}

fn load_csv(path: &Path) -> Result<DomainDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(path, format!("row {}: {e}", row + 1)))?;
        if record.len() < 2 {
            return Err(Error::malformed(
                path,
                format!("row {} needs features and a label", row + 1),
            ));
        }
        let features = record.len() - 1;
        match width {
            None => width = Some(features),
            Some(w) if w != features => {
                return Err(Error::malformed(
                    path,
                    format!("row {} has {features} features, expected {w}", row + 1),
                ))
            }
            _ => {}
        }
        for (col, field) in record.iter().take(features).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::malformed(
                    path,
                    format!(
                        "row {} column {}: not a number: {field:?}",
                        row + 1,
                        col + 1
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::malformed(
                    path,
                    format!("row {} column {}: non-finite value", row + 1, col + 1),
                ));
            }
            values.push(v);
        }
        let label = &record[features];
        let label: usize = label.parse().map_err(|_| {
            Error::malformed(
                path,
                format!("row {}: label {label:?} is not a class id", row + 1),
            )
        })?;
        labels.push(label);
    }
    let width = width.ok_or_else(|| Error::malformed(path, "no samples"))?;
    let features = DMatrix::from_vec(width, labels.len(), values);
    DomainDataset::new(features, labels, domain_name(path))
}

fn save_csv(ds: &DomainDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (j, col) in ds.features.column_iter().enumerate() {
        let mut line = String::new();
        for v in col.iter() {
            // `{}` on f64 prints the shortest string that parses back exactly
            line.push_str(&format!("{v},"));
        }
        line.push_str(&ds.labels[j].to_string());
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn label_width(max_label: usize) -> u8 {
    match max_label {
        0..=0xff => 1,
        0x100..=0xffff => 2,
        0x1_0000..=0xffff_ffff => 4,
        _ => 8,
    }
}

fn save_packed(ds: &DomainDataset, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    w.write_all(DATASET_MAGIC).map_err(io)?;
    w.write_u64::<LittleEndian>(ds.num_samples() as u64)
        .map_err(io)?;
    w.write_u64::<LittleEndian>(ds.dim() as u64).map_err(io)?;
    let width = label_width(ds.labels.iter().copied().max().unwrap_or(0));
    w.write_u8(width).map_err(io)?;
    for col in ds.features.column_iter() {
        for v in col.iter() {
            w.write_f64::<LittleEndian>(*v).map_err(io)?;
        }
    }
    for &l in &ds.labels {
        match width {
            1 => w.write_u8(l as u8),
            2 => w.write_u16::<LittleEndian>(l as u16),
            4 => w.write_u32::<LittleEndian>(l as u32),
            _ => w.write_u64::<LittleEndian>(l as u64),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

fn load_packed(path: &Path) -> Result<DomainDataset> {
    let io = |e| Error::io(path, e);
    let file = File::open(path).map_err(io)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::malformed(
            path,
            format!("bad magic {:?}", String::from_utf8_lossy(&magic)),
        ));
    }
    let samples = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let dim = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let width = r.read_u8().map_err(io)?;
    if ![1, 2, 4, 8].contains(&width) {
        return Err(Error::malformed(
            path,
            format!("label width {width} is not 1, 2, 4 or 8"),
        ));
    }
    let count = samples
        .checked_mul(dim)
        .filter(|c| *c <= (1usize << 34))
        .ok_or_else(|| Error::malformed(path, "header dimensions overflow"))?;
    let mut values = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let v = r.read_f64::<LittleEndian>().map_err(io)?;
        if !v.is_finite() {
            return Err(Error::malformed(path, "non-finite feature value"));
        }
        values.push(v);
    }
    let mut labels = Vec::with_capacity(samples.min(1 << 24));
    for _ in 0..samples {
        let l = match width {
            1 => r.read_u8().map(u64::from),
            2 => r.read_u16::<LittleEndian>().map(u64::from),
            4 => r.read_u32::<LittleEndian>().map(u64::from),
            _ => r.read_u64::<LittleEndian>(),
        }
        .map_err(io)?;
        labels.push(l as usize);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::malformed(
            path,
            format!("{} trailing bytes", rest.len()),
        ));
    }
    // stored row-major (one sample per row), i.e. one sample per column here
    let features = DMatrix::from_vec(dim, samples, values);
    DomainDataset::new(features, labels, domain_name(path))
}

/// Scale every column to unit L1 mass.
pub fn normalize_l1(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(&value) = x.iter().find(|v| **v < 0.0) {
        return Err(Error::NegativeEntry { value });
    }
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mass: f64 = col.iter().sum();
        if mass.is_nan() || mass <= 0.0 {
            return Err(Error::ZeroColumn(j));
        }
        col /= mass;
    }
    Ok(out)
}

/// Draw `per_class` samples of every class without replacement.
/// Returns `(selected, remainder)`, each in original sample order.
pub fn make_split(
    ds: &DomainDataset,
    per_class: usize,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; ds.num_samples()];
    for class in 0..ds.classes() {
        let mut members: Vec<usize> = (0..ds.num_samples())
            .filter(|&j| ds.labels[j] == class)
            .collect();
        if members.len() < per_class {
            return Err(Error::ClassTooSmall {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        members.shuffle(&mut rng);
        for &j in &members[..per_class] {
            chosen[j] = true;
        }
    }
    let selected: Vec<usize> = (0..ds.num_samples()).filter(|&j| chosen[j]).collect();
    let remainder: Vec<usize> = (0..ds.num_samples()).filter(|&j| !chosen[j]).collect();
    Ok((ds.select(&selected), ds.select(&remainder)))
}

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(m.nrows() as u64)?;
    w.write_u64::<LittleEndian>(m.ncols() as u64)?;
    for v in m.iter() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_len<R: Read>(r: &mut R) -> std::io::Result<usize> {
    let v = r.read_u64::<LittleEndian>()?;
    if v > (1 << 32) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "implausible length",
        ));
    }
    Ok(v as usize)
}

fn read_matrix<R: Read>(r: &mut R) -> std::io::Result<DMatrix<f64>> {
    let rows = read_len(r)?;
    let cols = read_len(r)?;
    let count = rows
        .checked_mul(cols)
        .filter(|c| *c <= (1 << 32))
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "matrix too large"))?;
    let mut values = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        values.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(DMatrix::from_vec(rows, cols, values))
}

fn write_labels<W: Write>(w: &mut W, labels: &[usize]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(labels.len() as u64)?;
    for &l in labels {
        w.write_u64::<LittleEndian>(l as u64)?;
    }
    Ok(())
}

fn read_labels<R: Read>(r: &mut R) -> std::io::Result<Vec<usize>> {
    let n = read_len(r)?;
    (0..n)
        .map(|_| r.read_u64::<LittleEndian>().map(|v| v as usize))
        .collect()
}

fn write_hyperparams<W: Write>(w: &mut W, h: &Hyperparams) -> std::io::Result<()> {
    for v in [h.lambda1, h.lambda2, h.lambda3, h.mu1, h.mu2] {
        w.write_f64::<LittleEndian>(v)?;
    }
    for v in [
        h.sparsity,
        h.atoms_per_class,
        h.dim,
        h.k_nn,
        h.outer_iters,
        h.inner_iters,
    ] {
        w.write_u64::<LittleEndian>(v as u64)?;
    }
    w.write_u64::<LittleEndian>(h.seed)?;
    let (kind, bandwidth) = match h.kernel {
        KernelSpec::HistogramIntersection => (0u8, 0.0),
        KernelSpec::Linear => (1, 0.0),
        KernelSpec::Gaussian { bandwidth } => (2, bandwidth),
    };
    w.write_u8(kind)?;
    w.write_f64::<LittleEndian>(bandwidth)
}

fn read_hyperparams<R: Read>(r: &mut R) -> std::io::Result<Hyperparams> {
    let mut f = [0.0; 5];
    for v in &mut f {
        *v = r.read_f64::<LittleEndian>()?;
    }
    let mut u = [0usize; 6];
    for v in &mut u {
        *v = r.read_u64::<LittleEndian>()? as usize;
    }
    let seed = r.read_u64::<LittleEndian>()?;
    let kind = r.read_u8()?;
    let bandwidth = r.read_f64::<LittleEndian>()?;
    let kernel = match kind {
        0 => KernelSpec::HistogramIntersection,
        1 => KernelSpec::Linear,
        2 => KernelSpec::Gaussian { bandwidth },
        _ => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "unknown kernel kind",
            ))
        }
    };
    Ok(Hyperparams {
        lambda1: f[0],
        lambda2: f[1],
        lambda3: f[2],
        mu1: f[3],
        mu2: f[4],
        sparsity: u[0],
        atoms_per_class: u[1],
        dim: u[2],
        k_nn: u[3],
        outer_iters: u[4],
        inner_iters: u[5],
        seed,
        kernel,
    })
}

/// Write a trained model. The objective trace is not persisted.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    let body = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        write_hyperparams(w, &model.hyperparams)?;
        w.write_u64::<LittleEndian>(model.classes as u64)?;
        w.write_u64::<LittleEndian>(model.domain_names.len() as u64)?;
        for ((name, x), a) in model
            .domain_names
            .iter()
            .zip(&model.features)
            .zip(&model.projections)
        {
            w.write_u64::<LittleEndian>(name.len() as u64)?;
            w.write_all(name.as_bytes())?;
            write_matrix(w, x)?;
            write_matrix(w, a)?;
        }
        write_matrix(w, &model.dictionary.atoms)?;
        write_labels(w, &model.dictionary.atom_classes)?;
        w.write_u64::<LittleEndian>(model.dictionary.classes as u64)?;
        w.flush()
    };
    body(&mut w).map_err(io)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let io = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::InvalidData {
            Error::malformed(path, e.to_string())
        } else {
            Error::io(path, e)
        }
    };
    let file = File::open(path).map_err(io)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Version {
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut body = || -> std::io::Result<TrainedModel> {
        let hyperparams = read_hyperparams(&mut r)?;
        let classes = read_len(&mut r)?;
        let domains = read_len(&mut r)?;
        let mut domain_names = Vec::with_capacity(domains);
        let mut features = Vec::with_capacity(domains);
        let mut projections = Vec::with_capacity(domains);
        for _ in 0..domains {
            let len = read_len(&mut r)?;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, "domain name is not UTF-8")
            })?;
            domain_names.push(name);
            features.push(read_matrix(&mut r)?);
            projections.push(read_matrix(&mut r)?);
        }
        let atoms = read_matrix(&mut r)?;
        let atom_classes = read_labels(&mut r)?;
        let dict_classes = read_len(&mut r)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "trailing bytes",
            ));
        }
        Ok(TrainedModel {
            hyperparams,
            projections,
            features,
            domain_names,
            dictionary: Dictionary {
                atoms,
                atom_classes,
                classes: dict_classes,
            },
            classes,
            trace: ObjectiveTrace::default(),
        })
    };
    let model = body().map_err(io)?;
    for (x, a) in model.features.iter().zip(&model.projections) {
        if a.nrows() != x.ncols() || a.ncols() != model.dictionary.atoms.nrows() {
            return Err(Error::malformed(
                path,
                "projection block does not match its domain",
            ));
        }
    }
    if model.dictionary.atom_classes.len() != model.dictionary.atoms.ncols() {
        return Err(Error::malformed(
            path,
            "dictionary labels do not match atoms",
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn write(dir: &Path, name: &str, content: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn csv_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"1.0,0.0,0\n0.0,1.0,1\n");
        let ds = load_dataset(&p, Format::Csv).unwrap();
        assert_eq!(ds.num_samples(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.features, DMatrix::identity(2, 2));
        assert_eq!(ds.name, "a");
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [
            ("ragged.csv", &b"1,2,0\n1,0\n"[..]),
            ("nan.csv", b"NaN,1,0\n"),
            ("inf.csv", b"inf,1,0\n"),
            ("word.csv", b"a,1,0\n"),
            ("label.csv", b"1,1,1.5\n"),
            ("neg_label.csv", b"1,1,-1\n"),
            ("empty.csv", b""),
            ("single.csv", b"3\n"),
        ] {
            let p = write(dir.path(), name, body);
            assert!(
                matches!(load_dataset(&p, Format::Csv), Err(Error::Malformed { .. })),
                "{name}"
            );
        }
        assert!(matches!(
            load_dataset(&dir.path().join("missing.csv"), Format::Csv),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn packed_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ds = DomainDataset::new(DMatrix::from_element(3, 2, 0.5), vec![0, 1], "d").unwrap();
        let p = dir.path().join("d.dadl");
        save_dataset(&ds, &p, Format::Packed).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        let t = write(dir.path(), "t.dadl", &bytes[..bytes.len() - 1]);
        assert!(matches!(
            load_dataset(&t, Format::Packed),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let b = write(dir.path(), "b.dadl", &bad);
        assert!(matches!(
            load_dataset(&b, Format::Packed),
            Err(Error::Malformed { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        let e = write(dir.path(), "e.dadl", &extra);
        assert!(matches!(
            load_dataset(&e, Format::Packed),
            Err(Error::Malformed { .. })
        ));
        let mut width = bytes.clone();
        width[21] = 3;
        let w = write(dir.path(), "w.dadl", &width);
        assert!(matches!(
            load_dataset(&w, Format::Packed),
            Err(Error::Malformed { .. })
        ));
        let mut nan = bytes;
        nan[22..30].copy_from_slice(&f64::NAN.to_le_bytes());
        let n = write(dir.path(), "n.dadl", &nan);
        assert!(matches!(
            load_dataset(&n, Format::Packed),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn csv_and_packed_agree() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = DomainDataset::new(
            DMatrix::from_fn(4, 9, |_, _| rng.random::<f64>() * 1e3 - 5e2),
            (0..9).map(|j| j % 300).collect(),
            "same",
        )
        .unwrap();
        let c = dir.path().join("same.csv");
        let p = dir.path().join("same.dadl");
        save_dataset(&ds, &c, Format::Csv).unwrap();
        save_dataset(&ds, &p, Format::Packed).unwrap();
        let from_csv = load_dataset(&c, Format::from_path(&c)).unwrap();
        let from_packed = load_dataset(&p, Format::from_path(&p)).unwrap();
        assert_eq!(from_csv, ds);
        assert_eq!(from_packed, ds);
    }

    proptest! {
        #[test]
        fn dataset_round_trip_is_bit_identical(
            values in proptest::collection::vec(-1e300f64..1e300, 1..40),
            label_seed in 0usize..100_000,
        ) {
            let dim = 1 + values.len() % 4;
            let samples = values.len() / dim;
            prop_assume!(samples > 0);
            let x = DMatrix::from_vec(dim, samples, values[..dim * samples].to_vec());
            let labels: Vec<usize> = (0..samples).map(|j| (label_seed * (j + 1)) % 70_000).collect();
            let ds = DomainDataset::new(x, labels, "rt").unwrap();
            let dir = tempfile::tempdir().unwrap();
            for (file, fmt) in [("rt.csv", Format::Csv), ("rt.dadl", Format::Packed)] {
                let p = dir.path().join(file);
                save_dataset(&ds, &p, fmt).unwrap();
                let back = load_dataset(&p, fmt).unwrap();
                prop_assert_eq!(back.labels.clone(), ds.labels.clone());
                for (a, b) in back.features.iter().zip(ds.features.iter()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn l1_normalization() {
        let x = DMatrix::from_column_slice(2, 1, &[2.0, 2.0]);
        assert_eq!(
            normalize_l1(&x).unwrap(),
            DMatrix::from_column_slice(2, 1, &[0.5, 0.5])
        );
        let done = DMatrix::from_column_slice(3, 1, &[0.25, 0.5, 0.25]);
        assert_eq!(normalize_l1(&done).unwrap(), done);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = normalize_l1(&DMatrix::from_fn(7, 30, |_, _| rng.random::<f64>())).unwrap();
        for c in r.column_iter() {
            assert!((c.sum() - 1.0).abs() <= 1e-12);
        }
        assert!(matches!(
            normalize_l1(&DMatrix::zeros(2, 2)),
            Err(Error::ZeroColumn(0))
        ));
        assert!(matches!(
            normalize_l1(&DMatrix::from_column_slice(2, 1, &[1.0, -1.0])),
            Err(Error::NegativeEntry { .. })
        ));
    }

    fn labeled(n_per_class: &[usize]) -> DomainDataset {
        let labels: Vec<usize> = n_per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let n = labels.len();
        DomainDataset::new(DMatrix::from_fn(2, n, |i, j| (i + j) as f64), labels, "s").unwrap()
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let ds = labeled(&[5, 7, 4]);
        let (sel, rem) = make_split(&ds, 3, 9).unwrap();
        assert_eq!(sel.num_samples(), 9);
        assert_eq!(rem.num_samples(), 7);
        for c in 0..3 {
            assert_eq!(sel.labels.iter().filter(|&&l| l == c).count(), 3);
        }
        // columns are distinct, so feature column j identifies sample j
        let mut ids: Vec<usize> = sel
            .features
            .column_iter()
            .chain(rem.features.column_iter())
            .map(|c| c[0] as usize)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..16).collect::<Vec<_>>());
        let (sel2, rem2) = make_split(&ds, 3, 9).unwrap();
        assert_eq!(sel, sel2);
        assert_eq!(rem, rem2);
        let (sel3, _) = make_split(&ds, 3, 10).unwrap();
        assert_ne!(sel, sel3);
    }

    #[test]
    fn split_whole_class_and_too_small() {
        let ds = labeled(&[4, 6]);
        let (_, rem) = make_split(&ds, 4, 1).unwrap();
        assert!(rem.labels.iter().all(|&l| l == 1));
        assert!(matches!(
            make_split(&ds, 5, 1),
            Err(Error::ClassTooSmall {
                class: 0,
                available: 4,
                requested: 5
            })
        ));
    }

    #[test]
    fn model_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.dadlm", b"DADLM9rest");
        assert!(matches!(load_model(&p), Err(Error::Version { .. })));
        let p = write(dir.path(), "short.dadlm", b"DADLM1\x01\x02");
        assert!(matches!(load_model(&p), Err(Error::Truncated(_))));
        assert!(matches!(load_model(Path::new("")), Err(Error::Io { .. })));
    }
}
