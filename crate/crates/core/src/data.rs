//! Multimodal datasets: synthetic generation with controllable modality
//! strength, the `mmfeat` text format, stratified splits, and test-time
//! perturbations (additive noise, missing modality).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMeta {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// One feature vector per modality, aligned with `Dataset::modalities`.
    pub features: Vec<Vec<f64>>,
    pub label: usize,
    /// Present flags; an absent modality has all-zero features.
    pub present: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modalities: Vec<ModalityMeta>,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    /// Feature matrix for one modality over the given sample indices.
    /// Absent samples contribute their (zero) stored features.
    pub fn feature_matrix(&self, modality: usize, indices: &[usize]) -> Matrix {
        let dim = self.modalities[modality].dim;
        Matrix::from_fn(indices.len(), dim, |i, j| self.samples[indices[i]].features[modality][j])
    }

    /// One-hot label matrix over the given sample indices.
    pub fn label_matrix(&self, indices: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(indices.len(), self.num_classes);
        for (i, &idx) in indices.iter().enumerate() {
            m.set(i, self.samples[idx].label, 1.0);
        }
        m
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Pooled standard deviation over every feature entry of one modality
    /// (present samples only).
    pub fn feature_std(&self, modality: usize) -> f64 {
        let mut n = 0usize;
        let mut mean = 0.0;
        for s in &self.samples {
            if s.present[modality] {
                for &v in &s.features[modality] {
                    n += 1;
                    mean += v;
                }
            }
        }
        if n == 0 {
            return 0.0;
        }
        mean /= n as f64;
        let mut var = 0.0;
        for s in &self.samples {
            if s.present[modality] {
                for &v in &s.features[modality] {
                    var += (v - mean) * (v - mean);
                }
            }
        }
        (var / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModalitySpec {
    pub name: String,
    pub dim: usize,
    /// Pairwise distance between class means; 0 makes the modality
    /// uninformative.
    pub separation: f64,
    /// Gaussian noise scale around the class mean; > 0.
    pub noise: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub k: usize,
    pub modalities: Vec<SyntheticModalitySpec>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("need K >= 2 classes, got {}", self.k)));
        }
        if self.n < self.k {
            return Err(Error::InvalidArgument(format!(
                "need N >= K samples, got N={} K={}",
                self.n, self.k
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::InvalidArgument("need at least one modality".to_string()));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.modalities {
            validate_modality_name(&m.name)?;
            if !names.insert(&m.name) {
                return Err(Error::InvalidArgument(format!("duplicate modality {:?}", m.name)));
            }
            if m.dim < self.k {
                return Err(Error::InvalidArgument(format!(
                    "modality {:?}: dim {} must be >= K={} for the simplex means",
                    m.name, m.dim, self.k
                )));
            }
            if m.separation < 0.0 {
                return Err(Error::InvalidArgument("separation must be >= 0".to_string()));
            }
            if m.noise <= 0.0 {
                return Err(Error::InvalidArgument("noise must be > 0".to_string()));
            }
        }
        Ok(())
    }
}

fn validate_modality_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(Error::InvalidArgument(format!(
            "modality name {name:?} must be non-empty [A-Za-z0-9_]"
        )));
    }
    Ok(())
}

/// Class means sit on a scaled coordinate simplex: mean_k = (sep/sqrt(2)) e_k,
/// so any two means are exactly `separation` apart. Labels are balanced
/// round-robin; features are mean + noise * N(0, I).
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = i % spec.k;
        let mut features = Vec::with_capacity(spec.modalities.len());
        for m in &spec.modalities {
            let scale = m.separation / std::f64::consts::SQRT_2;
            let mut x = Vec::with_capacity(m.dim);
            for d in 0..m.dim {
                let mean = if d == label { scale } else { 0.0 };
                let z: f64 = rng.sample(StandardNormal);
                x.push(mean + m.noise * z);
            }
            features.push(x);
        }
        samples.push(Sample { features, label, present: vec![true; spec.modalities.len()] });
    }
    Ok(Dataset {
        modalities: spec
            .modalities
            .iter()
            .map(|m| ModalityMeta { name: m.name.clone(), dim: m.dim })
            .collect(),
        num_classes: spec.k,
        samples,
    })
}

/// Write the line-oriented `mmfeat` format:
/// header `#mmfeat v1 K=<k> modalities=<name:dim,...>`, then one line per
/// sample `label;<m1 floats comma-separated>;<m2 floats ...>`.
///
/// The format has no present mask, so datasets with absent modalities are
/// refused.
pub fn save_features(dataset: &Dataset, path: &Path) -> Result<()> {
    if dataset.samples.iter().any(|s| s.present.iter().any(|&p| !p)) {
        return Err(Error::InvalidArgument(
            "mmfeat cannot represent absent modalities".to_string(),
        ));
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mods: Vec<String> =
        dataset.modalities.iter().map(|m| format!("{}:{}", m.name, m.dim)).collect();
    writeln!(file, "#mmfeat v1 K={} modalities={}", dataset.num_classes, mods.join(","))?;
    for s in &dataset.samples {
        write!(file, "{}", s.label)?;
        for feats in &s.features {
            write!(file, ";")?;
            for (j, v) in feats.iter().enumerate() {
                if j > 0 {
                    write!(file, ",")?;
                }
                write!(file, "{v:?}")?;
            }
        }
        writeln!(file)?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::Parse { line: 1, msg: "missing #mmfeat header".to_string() }),
    };
    let (num_classes, modalities) = parse_header(&header)?;

    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let lineno = lineno + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(parse_row(&line, lineno, num_classes, &modalities)?);
    }
    if samples.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no samples".to_string() });
    }
    Ok(Dataset { modalities, num_classes, samples })
}

fn parse_header(header: &str) -> Result<(usize, Vec<ModalityMeta>)> {
    let bad = |msg: &str| Error::Parse { line: 1, msg: msg.to_string() };
    let rest = header
        .strip_prefix("#mmfeat v1 ")
        .ok_or_else(|| bad("expected header starting with '#mmfeat v1 '"))?;
    let mut k: Option<usize> = None;
    let mut mods: Option<Vec<ModalityMeta>> = None;
    for field in rest.split_whitespace() {
        if let Some(v) = field.strip_prefix("K=") {
            k = Some(v.parse().map_err(|_| bad(&format!("bad K value {v:?}")))?);
        } else if let Some(v) = field.strip_prefix("modalities=") {
            let mut out = Vec::new();
            for part in v.split(',') {
                let (name, dim) = part
                    .split_once(':')
                    .ok_or_else(|| bad(&format!("bad modality field {part:?}")))?;
                validate_modality_name(name).map_err(|e| bad(&e.to_string()))?;
                let dim: usize =
                    dim.parse().map_err(|_| bad(&format!("bad modality dim {dim:?}")))?;
                if dim == 0 {
                    return Err(bad("modality dim must be positive"));
                }
                out.push(ModalityMeta { name: name.to_string(), dim });
            }
            mods = Some(out);
        } else {
            return Err(bad(&format!("unknown header field {field:?}")));
        }
    }
    let k = k.ok_or_else(|| bad("header missing K="))?;
    let mods = mods.ok_or_else(|| bad("header missing modalities="))?;
    if k < 2 {
        return Err(bad("K must be >= 2"));
    }
    if mods.is_empty() {
        return Err(bad("need at least one modality"));
    }
    Ok((k, mods))
}

fn parse_row(
    line: &str,
    lineno: usize,
    num_classes: usize,
    modalities: &[ModalityMeta],
) -> Result<Sample> {
    let bad = |msg: String| Error::Parse { line: lineno, msg };
    let mut parts = line.split(';');
    let label_str = parts.next().unwrap_or("");
    let label: usize =
        label_str.parse().map_err(|_| bad(format!("bad label {label_str:?}")))?;
    if label >= num_classes {
        return Err(bad(format!("label {label} out of range 0..{num_classes}")));
    }
    let mut features = Vec::with_capacity(modalities.len());
    for meta in modalities {
        let block = parts
            .next()
            .ok_or_else(|| bad(format!("missing feature block for modality {}", meta.name)))?;
        let mut feats = Vec::with_capacity(meta.dim);
        for tok in block.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad float {tok:?} in modality {}", meta.name)))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite feature in modality {}", meta.name)));
            }
            feats.push(v);
        }
        if feats.len() != meta.dim {
            return Err(bad(format!(
                "modality {} expects {} features, got {}",
                meta.name,
                meta.dim,
                feats.len()
            )));
        }
        features.push(feats);
    }
    if parts.next().is_some() {
        return Err(bad("trailing feature block".to_string()));
    }
    Ok(Sample { features, label, present: vec![true; modalities.len()] })
}

/// Deterministic stratified split. Per class, round(frac * count) samples go
/// to train and val; the remainder is test, so the pieces are disjoint and
/// exhaustive with class proportions preserved within one sample.
pub fn split(
    dataset: &Dataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_frac)
        || !(0.0..=1.0).contains(&val_frac)
        || train_frac + val_frac > 1.0 + 1e-12
    {
        return Err(Error::InvalidArgument(format!(
            "bad split fractions train={train_frac} val={val_frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for class_indices in &mut by_class {
        class_indices.shuffle(&mut rng);
        let n = class_indices.len();
        let t = ((train_frac * n as f64) + 0.5).floor() as usize;
        let v = (((val_frac * n as f64) + 0.5).floor() as usize).min(n - t.min(n));
        let t = t.min(n);
        parts[0].extend(&class_indices[..t]);
        parts[1].extend(&class_indices[t..t + v]);
        parts[2].extend(&class_indices[t + v..]);
    }
    let subset = |indices: &[usize]| Dataset {
        modalities: dataset.modalities.clone(),
        num_classes: dataset.num_classes,
        samples: indices.iter().map(|&i| dataset.samples[i].clone()).collect(),
    };
    Ok((subset(&parts[0]), subset(&parts[1]), subset(&parts[2])))
}

/// Test-time perturbation. Rates are percentages of samples hit; both kinds
/// target one modality and are deterministic in the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub target: String,
    /// Percent of samples whose target features get additive Gaussian noise.
    #[serde(default)]
    pub noise_rate: f64,
    /// Noise sigma as a multiple of the modality's pooled feature std.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// Percent of samples whose target modality is dropped entirely.
    #[serde(default)]
    pub missing_rate: f64,
    pub seed: u64,
}

fn default_noise_scale() -> f64 {
    1.0
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.noise_rate) || !(0.0..=100.0).contains(&self.missing_rate)
        {
            return Err(Error::InvalidArgument(format!(
                "rates must be in [0,100], got noise={} missing={}",
                self.noise_rate, self.missing_rate
            )));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::InvalidArgument("noise_scale must be >= 0".to_string()));
        }
        Ok(())
    }
}

/// Number of samples hit by a percentage rate: round(rate/100 * n).
fn hit_count(rate: f64, n: usize) -> usize {
    ((rate / 100.0) * n as f64 + 0.5).floor() as usize
}

pub fn perturb(dataset: &Dataset, spec: &PerturbationSpec) -> Result<Dataset> {
    spec.validate()?;
    let modality = dataset
        .modality_index(&spec.target)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown modality {:?}", spec.target)))?;
    let mut out = dataset.clone();
    let n = out.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    if spec.noise_rate > 0.0 {
        let sigma = spec.noise_scale * dataset.feature_std(modality);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in order.iter().take(hit_count(spec.noise_rate, n)) {
            for v in &mut out.samples[i].features[modality] {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma * z;
            }
        }
    }
    if spec.missing_rate > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in order.iter().take(hit_count(spec.missing_rate, n)) {
            out.samples[i].present[modality] = false;
            out.samples[i].features[modality].fill(0.0);
        }
    }
    Ok(out)
}
