//! Multimodal architecture: one encoder per modality, a growable stack of
//! configurable classifiers per modality, and a single head layer shared by
//! every classifier of every modality.
//!
//! Classifier t of modality o is `softmax(head(relu(layer1_t(u))))` where
//! `u` is the encoder feature. Appending a classifier adds a fresh layer1
//! and reuses the shared head, so all stacks stay coupled through it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};

/// How a stack of predictions is combined into a single row per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    Sum,
    #[default]
    Mean,
}

/// Encoder layer chain. A single-entry chain is the identity encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    dims: Vec<usize>,
}

impl EncoderSpec {
    pub fn identity(dim: usize) -> Self {
        EncoderSpec { dims: vec![dim] }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        EncoderSpec { dims }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("encoder dims must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LinearLayer {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    spec: EncoderSpec,
    layers: Vec<LinearLayer>,
}

/// Per-classifier first layer; the second layer lives in `SharedHead`.
#[derive(Debug, Clone)]
pub struct ConfigurableClassifier {
    w1: ParamId,
    b1: ParamId,
}

#[derive(Debug, Clone)]
pub struct SharedHead {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub struct ModalityModel {
    name: String,
    encoder: Encoder,
    classifiers: Vec<ConfigurableClassifier>,
}

impl ModalityModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of classifiers currently stacked (n^o >= 1).
    pub fn num_classifiers(&self) -> usize {
        self.classifiers.len()
    }

    pub fn encoder_spec(&self) -> &EncoderSpec {
        &self.encoder.spec
    }
}

/// Outcome of an append attempt under an optional stack cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    Added,
    Capped,
}

/// Forward-pass handles for one modality on one tape.
#[derive(Debug, Clone)]
pub struct ModalityForward {
    pub feature: NodeId,
    /// Probability rows p_1..p_n in stack order.
    pub stack: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct MultimodalModel {
    store: ParamStore,
    modalities: Vec<ModalityModel>,
    head: SharedHead,
    num_classes: usize,
    classifier_hidden: usize,
}

fn init_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl MultimodalModel {
    /// Build a fresh model with one classifier per modality.
    ///
    /// `modalities` pairs each name with its encoder spec; every encoder must
    /// emit the same feature width because classifiers share the head.
    pub fn new(
        modalities: &[(String, EncoderSpec)],
        num_classes: usize,
        classifier_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Config("at least one modality required".to_string()));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!("need K >= 2 classes, got {num_classes}")));
        }
        if classifier_hidden == 0 {
            return Err(Error::Config("classifier_hidden must be positive".to_string()));
        }
        let mut names = std::collections::BTreeSet::new();
        for (name, spec) in modalities {
            spec.validate()?;
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Config(format!(
                    "modality name {name:?} must be non-empty [A-Za-z0-9_]"
                )));
            }
            if !names.insert(name) {
                return Err(Error::Config(format!("duplicate modality name {name:?}")));
            }
        }

        let mut store = ParamStore::new();
        let mut mods = Vec::with_capacity(modalities.len());
        for (name, spec) in modalities {
            let mut layers = Vec::with_capacity(spec.num_layers());
            for l in 0..spec.num_layers() {
                let (din, dout) = (spec.dims[l], spec.dims[l + 1]);
                let w = store.register(format!("{name}.enc{}.w", l + 1), init_matrix(din, dout, din, rng))?;
                let b = store.register(format!("{name}.enc{}.b", l + 1), init_matrix(1, dout, din, rng))?;
                layers.push(LinearLayer { w, b });
            }
            let feature_dim = spec.output_dim();
            let w1 = store.register(
                format!("{name}.cls1.w1"),
                init_matrix(feature_dim, classifier_hidden, feature_dim, rng),
            )?;
            let b1 = store
                .register(format!("{name}.cls1.b1"), init_matrix(1, classifier_hidden, feature_dim, rng))?;
            mods.push(ModalityModel {
                name: name.clone(),
                encoder: Encoder { spec: spec.clone(), layers },
                classifiers: vec![ConfigurableClassifier { w1, b1 }],
            });
        }
        let head_w = store.register(
            "shared.head.w".to_string(),
            init_matrix(classifier_hidden, num_classes, classifier_hidden, rng),
        )?;
        let head_b = store.register(
            "shared.head.b".to_string(),
            init_matrix(1, num_classes, classifier_hidden, rng),
        )?;

        Ok(MultimodalModel {
            store,
            modalities: mods,
            head: SharedHead { w: head_w, b: head_b },
            num_classes,
            classifier_hidden,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classifier_hidden(&self) -> usize {
        self.classifier_hidden
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality(&self, idx: usize) -> &ModalityModel {
        &self.modalities[idx]
    }

    pub fn modalities(&self) -> &[ModalityModel] {
        &self.modalities
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    /// u = encoder(x); identity encoders pass the input through.
    pub fn encode(&self, tape: &mut Tape, modality: usize, x: NodeId) -> Result<NodeId> {
        let m = &self.modalities[modality];
        let expect = m.encoder.spec.input_dim();
        let got = tape.value(x).cols();
        if got != expect {
            return Err(Error::shape("encode", format!("modality {} expects input dim {expect}, got {got}", m.name)));
        }
        let mut cur = x;
        let n = m.encoder.layers.len();
        for (l, layer) in m.encoder.layers.iter().enumerate() {
            let w = tape.param(&self.store, layer.w);
            let b = tape.param(&self.store, layer.b);
            cur = tape.linear(cur, w, b)?;
            if l + 1 < n {
                cur = tape.relu(cur);
            }
        }
        Ok(cur)
    }

    /// p_t = softmax(head(relu(layer1_t(u)))), t is 1-based stack position.
    pub fn classify_one(&self, tape: &mut Tape, modality: usize, u: NodeId, t: usize) -> Result<NodeId> {
        let m = &self.modalities[modality];
        if t == 0 || t > m.classifiers.len() {
            return Err(Error::InvalidArgument(format!(
                "classifier index {t} out of range 1..={} for modality {}",
                m.classifiers.len(),
                m.name
            )));
        }
        let cls = &m.classifiers[t - 1];
        let w1 = tape.param(&self.store, cls.w1);
        let b1 = tape.param(&self.store, cls.b1);
        let h = tape.linear(u, w1, b1)?;
        let h = tape.relu(h);
        let w2 = tape.param(&self.store, self.head.w);
        let b2 = tape.param(&self.store, self.head.b);
        let z = tape.linear(h, w2, b2)?;
        tape.softmax(z)
    }

    /// All stack predictions [p_1 .. p_n] in order.
    pub fn predict_stack(&self, tape: &mut Tape, modality: usize, u: NodeId) -> Result<Vec<NodeId>> {
        (1..=self.modalities[modality].num_classifiers())
            .map(|t| self.classify_one(tape, modality, u, t))
            .collect()
    }

    /// Encode a raw batch and run the full stack.
    pub fn forward_modality(&self, tape: &mut Tape, modality: usize, x: Matrix) -> Result<ModalityForward> {
        let xn = tape.constant(x);
        let feature = self.encode(tape, modality, xn)?;
        let stack = self.predict_stack(tape, modality, feature)?;
        Ok(ModalityForward { feature, stack })
    }

    /// Rebuild a model from a loaded parameter store.
    ///
    /// Structure is recovered from the entry names: `<mod>.enc<L>.w/b`,
    /// `<mod>.cls<T>.w1/b1` and `shared.head.w/b`. Modalities keep their
    /// order of first appearance; a modality without encoder entries gets an
    /// identity encoder.
    pub fn from_store(store: ParamStore) -> Result<Self> {
        use std::collections::BTreeMap;

        #[derive(Default)]
        struct Acc {
            enc_w: BTreeMap<usize, ParamId>,
            enc_b: BTreeMap<usize, ParamId>,
            cls_w1: BTreeMap<usize, ParamId>,
            cls_b1: BTreeMap<usize, ParamId>,
        }
        let bad = |msg: String| Error::InvalidArgument(format!("checkpoint: {msg}"));

        let mut order: Vec<String> = Vec::new();
        let mut accs: BTreeMap<String, Acc> = BTreeMap::new();
        let mut head_w = None;
        let mut head_b = None;

        for (id, p) in store.iter() {
            let parts: Vec<&str> = p.name.split('.').collect();
            match parts.as_slice() {
                ["shared", "head", leaf @ ("w" | "b")] => {
                    let slot = if *leaf == "w" { &mut head_w } else { &mut head_b };
                    if slot.replace(id).is_some() {
                        return Err(bad(format!("duplicate entry {}", p.name)));
                    }
                }
                [modality, comp, leaf] => {
                    let (kind, idx_str) = comp.split_at(3);
                    let idx: usize = idx_str
                        .parse()
                        .map_err(|_| bad(format!("unrecognized entry {}", p.name)))?;
                    if idx == 0 {
                        return Err(bad(format!("unrecognized entry {}", p.name)));
                    }
                    if !accs.contains_key(*modality) {
                        order.push(modality.to_string());
                    }
                    let acc = accs.entry(modality.to_string()).or_default();
                    let map = match (kind, *leaf) {
                        ("enc", "w") => &mut acc.enc_w,
                        ("enc", "b") => &mut acc.enc_b,
                        ("cls", "w1") => &mut acc.cls_w1,
                        ("cls", "b1") => &mut acc.cls_b1,
                        _ => return Err(bad(format!("unrecognized entry {}", p.name))),
                    };
                    if map.insert(idx, id).is_some() {
                        return Err(bad(format!("duplicate entry {}", p.name)));
                    }
                }
                _ => return Err(bad(format!("unrecognized entry {}", p.name))),
            }
        }

        let head_w = head_w.ok_or_else(|| bad("missing shared.head.w".to_string()))?;
        let head_b = head_b.ok_or_else(|| bad("missing shared.head.b".to_string()))?;
        let hidden = store.value(head_w).rows();
        let num_classes = store.value(head_w).cols();
        if store.value(head_b).rows() != 1 || store.value(head_b).cols() != num_classes {
            return Err(bad("head bias shape mismatch".to_string()));
        }
        if order.is_empty() {
            return Err(bad("no modality entries".to_string()));
        }

        let contiguous = |map: &BTreeMap<usize, ParamId>, what: &str| -> Result<Vec<ParamId>> {
            for (expect, (&idx, _)) in (1..).zip(map.iter()) {
                if idx != expect {
                    return Err(bad(format!("non-contiguous {what} indices")));
                }
            }
            Ok(map.values().copied().collect())
        };

        let mut modalities = Vec::with_capacity(order.len());
        for name in order {
            let acc = &accs[&name];
            let enc_w = contiguous(&acc.enc_w, &format!("{name} encoder"))?;
            let enc_b = contiguous(&acc.enc_b, &format!("{name} encoder bias"))?;
            let cls_w1 = contiguous(&acc.cls_w1, &format!("{name} classifier"))?;
            let cls_b1 = contiguous(&acc.cls_b1, &format!("{name} classifier bias"))?;
            if enc_w.len() != enc_b.len() || cls_w1.len() != cls_b1.len() || cls_w1.is_empty() {
                return Err(bad(format!("incomplete entries for modality {name}")));
            }

            let mut dims = Vec::new();
            for (i, (&w, &b)) in enc_w.iter().zip(&enc_b).enumerate() {
                let (wm, bm) = (store.value(w), store.value(b));
                if bm.rows() != 1 || bm.cols() != wm.cols() {
                    return Err(bad(format!("{name}.enc{}: bias shape mismatch", i + 1)));
                }
                if i == 0 {
                    dims.push(wm.rows());
                } else if dims[i] != wm.rows() {
                    return Err(bad(format!("{name}.enc{}: layer chain mismatch", i + 1)));
                }
                dims.push(wm.cols());
            }

            let feature_dim = store.value(cls_w1[0]).rows();
            let spec = if dims.is_empty() {
                EncoderSpec::identity(feature_dim)
            } else {
                if *dims.last().unwrap() != feature_dim {
                    return Err(bad(format!("{name}: encoder output vs classifier input")));
                }
                EncoderSpec { dims }
            };

            let mut classifiers = Vec::with_capacity(cls_w1.len());
            for (t, (&w1, &b1)) in cls_w1.iter().zip(&cls_b1).enumerate() {
                let (wm, bm) = (store.value(w1), store.value(b1));
                if wm.rows() != feature_dim
                    || wm.cols() != hidden
                    || bm.rows() != 1
                    || bm.cols() != hidden
                {
                    return Err(bad(format!("{name}.cls{}: shape mismatch", t + 1)));
                }
                classifiers.push(ConfigurableClassifier { w1, b1 });
            }

            let layers = enc_w
                .into_iter()
                .zip(enc_b)
                .map(|(w, b)| LinearLayer { w, b })
                .collect();
            modalities.push(ModalityModel { name, encoder: Encoder { spec, layers }, classifiers });
        }

        Ok(MultimodalModel {
            store,
            modalities,
            head: SharedHead { w: head_w, b: head_b },
            num_classes,
            classifier_hidden: hidden,
        })
    }

    /// Append a freshly initialized classifier; existing parameters are
    /// untouched. With a cap, appends beyond it are refused.
    pub fn add_classifier(
        &mut self,
        modality: usize,
        rng: &mut impl Rng,
        max_classifiers: Option<usize>,
    ) -> Result<AddOutcome> {
        let n = self.modalities[modality].classifiers.len();
        if let Some(cap) = max_classifiers {
            if n >= cap {
                return Ok(AddOutcome::Capped);
            }
        }
        let name = self.modalities[modality].name.clone();
        let feature_dim = self.modalities[modality].encoder.spec.output_dim();
        let t = n + 1;
        let w1 = self.store.register(
            format!("{name}.cls{t}.w1"),
            init_matrix(feature_dim, self.classifier_hidden, feature_dim, rng),
        )?;
        let b1 = self.store.register(
            format!("{name}.cls{t}.b1"),
            init_matrix(1, self.classifier_hidden, feature_dim, rng),
        )?;
        self.modalities[modality].classifiers.push(ConfigurableClassifier { w1, b1 });
        Ok(AddOutcome::Added)
    }
}

/// Combine stack predictions on the tape: elementwise sum, divided by the
/// count in mean mode.
pub fn ensemble_prediction(tape: &mut Tape, preds: &[NodeId], mode: EnsembleMode) -> Result<NodeId> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("ensemble of zero predictions".to_string()));
    }
    let mut acc = preds[0];
    for &p in &preds[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(match mode {
        EnsembleMode::Sum => acc,
        EnsembleMode::Mean => tape.scale(acc, 1.0 / preds.len() as f64),
    })
}

/// Value-level counterpart of `ensemble_prediction` for evaluation paths.
pub fn ensemble_values(preds: &[&Matrix], mode: EnsembleMode) -> Result<Matrix> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("ensemble of zero predictions".to_string()));
    }
    let mut acc = preds[0].clone();
    for p in &preds[1..] {
        acc = acc.add(p)?;
    }
    Ok(match mode {
        EnsembleMode::Sum => acc,
        EnsembleMode::Mean => acc.scale(1.0 / preds.len() as f64),
    })
}
