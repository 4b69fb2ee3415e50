//! Synthetic datasets with controllable domain skew and group imbalance.
//!
//! Domain datasets mimic the color / grayscale construction: the first
//! `d - d_c` coordinates carry class-conditional Gaussian blobs, the last
//! `d_c` coordinates carry a class-specific "tint". Converting a sample to
//! gray replaces the tint by its mean, the analogue of averaging color
//! channels. Skewing which classes are mostly color and which mostly gray
//! plants a spurious correlation between domain and label.
//!
//! Attribute datasets are multi-label with a binary group tag; every
//! attribute's positives are split between the groups at a requested rate.
//!
//! CSV layout, header mandatory: `id,label,domain,group,attr_bits,f0..f{d-1}`.
//! `domain` is `color` or `gray`, `group` is `a`, `b` or empty, `attr_bits`
//! is a string of `0`/`1` characters or empty. Floats use 17 significant
//! digits.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nnkit::{Example, Matrix, Target};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Bit set on the id of a gray test sample derived from a color test sample.
pub const GRAY_TWIN_BIT: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Color,
    Gray,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Color => "color",
            Domain::Gray => "gray",
        }
    }
}

/// Sensitive-group tag. In weighted AP and real-world bias, `A` plays the
/// role of women (`w`) and `B` of men (`m`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: Domain,
    pub group: Option<Group>,
    pub attributes: Option<Vec<bool>>,
}

impl LabeledSample {
    /// Training view: attribute bits when present, the class label otherwise.
    pub fn example(&self) -> Example<'_> {
        let target = match &self.attributes {
            Some(bits) => Target::Bits(bits),
            None => Target::Class(self.label),
        };
        Example { id: self.id, features: &self.features, target }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        let ds = Self { samples, num_classes, feature_dim };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if s.features.len() != self.feature_dim {
                return Err(Error::Data(format!(
                    "sample {} has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    self.feature_dim
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample {} has non-finite features", s.id)));
            }
            if s.label >= self.num_classes {
                return Err(Error::Data(format!(
                    "sample {} has label {} but only {} classes",
                    s.id, s.label, self.num_classes
                )));
            }
            if !seen.insert(s.id) {
                return Err(Error::Data(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn features(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.feature_dim);
        for s in &self.samples {
            data.extend_from_slice(&s.features);
        }
        Matrix::new(self.len(), self.feature_dim, data).expect("validated feature widths")
    }

    pub fn num_attributes(&self) -> usize {
        self.samples
            .iter()
            .find_map(|s| s.attributes.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    /// Copy restricted to samples matching `keep`.
    pub fn filter(&self, keep: impl Fn(&LabeledSample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    pub fn without_ids(&self, ids: &HashSet<u64>) -> Dataset {
        self.filter(|s| !ids.contains(&s.id))
    }

    /// Concatenation of datasets sharing class count and width.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        let samples = parts.iter().flat_map(|p| p.samples.iter().cloned()).collect();
        Dataset::new(samples, first.num_classes, first.feature_dim)
    }
}

/// Parameters of the skewed color / gray dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_classes: usize,
    /// Training samples per class.
    pub samples_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Total feature width `d`.
    pub feature_dim: usize,
    /// Trailing tint coordinates `d_c`.
    pub domain_channels: usize,
    /// Fraction of each class's training samples in its majority domain.
    pub skew: f64,
    /// Classes whose majority domain is color; the rest are mostly gray.
    /// Empty means "the first half of the classes".
    pub majority_color_classes: Vec<usize>,
    /// Scale of the class means in the content coordinates.
    pub class_separation: f64,
    /// Scale of the class-specific tint pattern.
    pub tint_strength: f64,
    /// Standard deviation of the per-sample tint noise.
    pub tint_noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 500,
            val_per_class: 100,
            test_per_class: 100,
            feature_dim: 16,
            domain_channels: 4,
            skew: 0.5,
            majority_color_classes: Vec::new(),
            class_separation: 2.0,
            tint_strength: 1.0,
            tint_noise: 0.5,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(0.5..=1.0).contains(&self.skew) {
            return Err(Error::Config(format!("skew {} outside [0.5, 1]", self.skew)));
        }
        if self.domain_channels == 0 || self.domain_channels >= self.feature_dim {
            return Err(Error::Config(format!(
                "domain channels {} must be in [1, feature_dim) with feature_dim {}",
                self.domain_channels, self.feature_dim
            )));
        }
        if let Some(c) = self.majority_color_classes.iter().find(|c| **c >= self.num_classes) {
            return Err(Error::Config(format!("majority color class {c} out of range")));
        }
        Ok(())
    }

    fn color_majority(&self) -> Vec<bool> {
        let mut flags = vec![false; self.num_classes];
        if self.majority_color_classes.is_empty() {
            flags.iter_mut().take(self.num_classes / 2).for_each(|f| *f = true);
        } else {
            for &c in &self.majority_color_classes {
                flags[c] = true;
            }
        }
        flags
    }

    /// Generates the dataset from this spec's own seed.
    pub fn generate(&self) -> Result<DomainSplits> {
        make_synthetic_domain_dataset(self, &mut rng::stream(self.seed, "data"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test_color: Dataset,
    pub test_gray: Dataset,
    pub domain_channels: usize,
}

fn gaussian(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gray version of a sample: the trailing `domain_channels` coordinates are
/// replaced by their mean.
pub fn to_gray(sample: &LabeledSample, domain_channels: usize) -> LabeledSample {
    let mut out = sample.clone();
    let d = out.features.len();
    let k = domain_channels.min(d);
    if k > 0 {
        let tint = &mut out.features[d - k..];
        let mean = tint.iter().sum::<f64>() / k as f64;
        tint.iter_mut().for_each(|v| *v = mean);
    }
    out.domain = Domain::Gray;
    out
}

/// Builds train / val / color test / gray test splits.
///
/// Each class contributes `round(skew * n)` training and validation samples
/// in its majority domain and the rest in the other. Both test sets hold
/// every class; the gray test set is the gray conversion of the color one,
/// with ids tagged by [`GRAY_TWIN_BIT`].
pub fn make_synthetic_domain_dataset(spec: &DatasetSpec, rng: &mut StreamRng) -> Result<DomainSplits> {
    spec.validate()?;
    let d = spec.feature_dim;
    let dc = spec.domain_channels;
    let content = d - dc;

    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|c| {
            let mut m = vec![0.0; content];
            if spec.num_classes <= content {
                m[c] = spec.class_separation;
            } else {
                for v in &mut m {
                    *v = gaussian(rng);
                }
                let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                m.iter_mut().for_each(|v| *v *= spec.class_separation / norm);
            }
            m
        })
        .collect();
    let tints: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..dc).map(|_| spec.tint_strength * rng.gen_range(-1.0..=1.0)).collect())
        .collect();

    let mut next_id = 0u64;
    let mut draw = |class: usize, rng: &mut StreamRng| {
        let mut features: Vec<f64> = means[class].iter().map(|m| m + gaussian(rng)).collect();
        features.extend(tints[class].iter().map(|t| t + spec.tint_noise * gaussian(rng)));
        let s = LabeledSample {
            id: next_id,
            features,
            label: class,
            domain: Domain::Color,
            group: None,
            attributes: None,
        };
        next_id += 1;
        s
    };

    let majority_color = spec.color_majority();
    let mut skewed = |per_class: usize, rng: &mut StreamRng| {
        let mut samples = Vec::with_capacity(per_class * spec.num_classes);
        for (class, &color_major) in majority_color.iter().enumerate() {
            let majority = (spec.skew * per_class as f64).round() as usize;
            for i in 0..per_class {
                let s = draw(class, rng);
                let in_majority = i < majority;
                let color = in_majority == color_major;
                samples.push(if color { s } else { to_gray(&s, dc) });
            }
        }
        samples
    };
    let train = skewed(spec.samples_per_class, rng);
    let val = skewed(spec.val_per_class, rng);
    let mut test_color = Vec::with_capacity(spec.test_per_class * spec.num_classes);
    for class in 0..spec.num_classes {
        for _ in 0..spec.test_per_class {
            test_color.push(draw(class, rng));
        }
    }
    let test_gray = test_color
        .iter()
        .map(|s| {
            let mut g = to_gray(s, dc);
            g.id |= GRAY_TWIN_BIT;
            g
        })
        .collect();

    let make = |samples| Dataset::new(samples, spec.num_classes, d);
    Ok(DomainSplits {
        train: make(train)?,
        val: make(val)?,
        test_color: make(test_color)?,
        test_gray: make(test_gray)?,
        domain_channels: dc,
    })
}

/// Parameters of the multi-label, group-imbalanced dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeSpec {
    pub num_samples: usize,
    pub feature_dim: usize,
    pub num_attributes: usize,
    /// Fraction of all samples that carry each attribute.
    pub prevalence: f64,
    /// Per attribute, the share of its positives that belong to group `a`.
    /// A single value is broadcast to every attribute.
    pub group_rates: Vec<f64>,
    /// Strength of each attribute's direction in feature space.
    pub attribute_signal: f64,
    /// Strength of the group direction in feature space.
    pub group_signal: f64,
    pub seed: u64,
}

impl Default for AttributeSpec {
    fn default() -> Self {
        Self {
            num_samples: 2000,
            feature_dim: 16,
            num_attributes: 4,
            prevalence: 0.3,
            group_rates: vec![0.8],
            attribute_signal: 1.5,
            group_signal: 1.0,
            seed: 0,
        }
    }
}

impl AttributeSpec {
    fn rate(&self, attribute: usize) -> f64 {
        match self.group_rates.as_slice() {
            [single] => *single,
            rates => rates[attribute],
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        make_group_imbalanced_dataset(self, &mut rng::stream(self.seed, "data"))
    }
}

/// Multi-label dataset with exactly `round(rate * positives)` of each
/// attribute's positives in group `a`. Groups are balanced overall.
pub fn make_group_imbalanced_dataset(spec: &AttributeSpec, rng: &mut StreamRng) -> Result<Dataset> {
    if spec.group_rates.len() != 1 && spec.group_rates.len() != spec.num_attributes {
        return Err(Error::Config(format!(
            "{} group rates for {} attributes",
            spec.group_rates.len(),
            spec.num_attributes
        )));
    }
    if let Some(r) = spec.group_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("group rate {r} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&spec.prevalence) {
        return Err(Error::Config(format!("prevalence {} outside [0, 1]", spec.prevalence)));
    }
    let n = spec.num_samples;
    let d = spec.feature_dim;
    let unit = |rng: &mut StreamRng| {
        let mut v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        v
    };
    let group_dir = unit(rng);
    let attr_dirs: Vec<Vec<f64>> = (0..spec.num_attributes).map(|_| unit(rng)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut groups = vec![Group::B; n];
    for &i in &order[..n / 2] {
        groups[i] = Group::A;
    }
    let members_a: Vec<usize> = (0..n).filter(|&i| groups[i] == Group::A).collect();
    let members_b: Vec<usize> = (0..n).filter(|&i| groups[i] == Group::B).collect();

    let mut bits = vec![vec![false; spec.num_attributes]; n];
    for k in 0..spec.num_attributes {
        let positives = (spec.prevalence * n as f64).round() as usize;
        if positives == 0 {
            return Err(Error::Data(format!("attribute {k} has no positive samples")));
        }
        let in_a = (spec.rate(k) * positives as f64).round() as usize;
        let in_b = positives - in_a;
        if in_a > members_a.len() || in_b > members_b.len() {
            return Err(Error::Data(format!(
                "attribute {k} needs {in_a} positives in group a and {in_b} in group b, but the groups hold {} and {}",
                members_a.len(),
                members_b.len()
            )));
        }
        for (pool, count) in [(&members_a, in_a), (&members_b, in_b)] {
            for &i in pool.choose_multiple(rng, count) {
                bits[i][k] = true;
            }
        }
    }

    let samples = (0..n)
        .map(|i| {
            let g = if groups[i] == Group::A { 1.0 } else { -1.0 };
            let mut features: Vec<f64> = (0..d).map(|j| gaussian(rng) + g * spec.group_signal * group_dir[j]).collect();
            for (k, dir) in attr_dirs.iter().enumerate() {
                if bits[i][k] {
                    features.iter_mut().zip(dir).for_each(|(f, u)| *f += spec.attribute_signal * u);
                }
            }
            LabeledSample {
                id: i as u64,
                features,
                label: 0,
                domain: Domain::Color,
                group: Some(groups[i]),
                attributes: Some(bits[i].clone()),
            }
        })
        .collect();
    Dataset::new(samples, 1, d)
}

/// Class-stratified partition into parts of the given fractions.
///
/// Within each class the samples are shuffled, then allotted by largest
/// remainder. Each part keeps the original sample order.
pub fn split(dataset: &Dataset, fractions: &[f64], rng: &mut StreamRng) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::Config("split fractions must be non-negative".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut assignment = vec![0usize; dataset.len()];
    for indices in by_class.values_mut() {
        indices.shuffle(rng);
        let n = indices.len();
        let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
        let mut remainders: Vec<(f64, usize)> = fractions
            .iter()
            .enumerate()
            .map(|(j, f)| (f * n as f64 - counts[j] as f64, j))
            .collect();
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let missing = n - counts.iter().sum::<usize>();
        for &(_, j) in remainders.iter().take(missing) {
            counts[j] += 1;
        }
        let mut cursor = 0;
        for (part, &count) in counts.iter().enumerate() {
            for &i in &indices[cursor..cursor + count] {
                assignment[i] = part;
            }
            cursor += count;
        }
    }
    let mut parts: Vec<Vec<LabeledSample>> = vec![Vec::new(); fractions.len()];
    for (i, s) in dataset.samples.iter().enumerate() {
        parts[assignment[i]].push(s.clone());
    }
    Ok(parts
        .into_iter()
        .map(|samples| Dataset { samples, num_classes: dataset.num_classes, feature_dim: dataset.feature_dim })
        .collect())
}

fn header(feature_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["id", "label", "domain", "group", "attr_bits"].iter().map(|s| s.to_string()).collect();
    h.extend((0..feature_dim).map(|i| format!("f{i}")));
    h
}

pub fn write_csv<W: std::io::Write>(dataset: &Dataset, out: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(dataset.feature_dim)).map_err(to_err)?;
    for s in &dataset.samples {
        let mut row = vec![
            s.id.to_string(),
            s.label.to_string(),
            s.domain.as_str().to_string(),
            match s.group {
                Some(Group::A) => "a".into(),
                Some(Group::B) => "b".into(),
                None => String::new(),
            },
            s.attributes
                .as_ref()
                .map(|bits| bits.iter().map(|b| if *b { '1' } else { '0' }).collect())
                .unwrap_or_default(),
        ];
        row.extend(s.features.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv write failed: {e}")))
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let head = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let fixed = ["id", "label", "domain", "group", "attr_bits"];
    if head.len() < fixed.len() || head.iter().zip(fixed).any(|(a, b)| a != b) {
        return Err(Error::Parse { line: 1, message: format!("header must start with {}", fixed.join(",")) });
    }
    let feature_dim = head.len() - fixed.len();
    if header(feature_dim).iter().zip(head.iter()).any(|(a, b)| a != b) {
        return Err(Error::Parse { line: 1, message: "feature columns must be f0..f{d-1}".into() });
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str, value: &str| Error::Parse { line, message: format!("bad {what} {value:?}") };
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(0).parse::<u64>().map_err(|_| bad("id", field(0)))?;
        let label = field(1).parse::<usize>().map_err(|_| bad("label", field(1)))?;
        let domain = match field(2) {
            "color" => Domain::Color,
            "gray" => Domain::Gray,
            other => return Err(bad("domain", other)),
        };
        let group = match field(3) {
            "a" => Some(Group::A),
            "b" => Some(Group::B),
            "" => None,
            other => return Err(bad("group", other)),
        };
        let attributes = match field(4) {
            "" => None,
            bits => Some(
                bits.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(bad("attribute bits", bits)),
                    })
                    .collect::<Result<Vec<bool>>>()?,
            ),
        };
        let features = (0..feature_dim)
            .map(|j| {
                let raw = field(fixed.len() + j);
                raw.parse::<f64>().map_err(|_| bad("float", raw))
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(LabeledSample { id, features, label, domain, group, attributes });
    }
    let num_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(1);
    Dataset::new(samples, num_classes, feature_dim)
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(skew: f64, per_class: usize) -> DatasetSpec {
        DatasetSpec {
            samples_per_class: per_class,
            val_per_class: 20,
            test_per_class: 10,
            skew,
            seed: 3,
            ..DatasetSpec::default()
        }
    }

    fn domain_counts(ds: &Dataset, class: usize) -> (usize, usize) {
        let color = ds.samples.iter().filter(|s| s.label == class && s.domain == Domain::Color).count();
        let gray = ds.samples.iter().filter(|s| s.label == class && s.domain == Domain::Gray).count();
        (color, gray)
    }

    #[test]
    fn skew_counts_per_class() {
        for (skew, expected_major) in [(0.95, 95), (0.75, 75)] {
            let splits = spec(skew, 100).generate().unwrap();
            for class in 0..10 {
                let (color, gray) = domain_counts(&splits.train, class);
                let (major, minor) = if class < 5 { (color, gray) } else { (gray, color) };
                assert_eq!((major, minor), (expected_major, 100 - expected_major), "class {class}");
            }
        }
        let splits = spec(0.5, 101).generate().unwrap();
        for class in 0..10 {
            let (c, g) = domain_counts(&splits.train, class);
            assert!(c.abs_diff(g) <= 1);
        }
    }

    #[test]
    fn overall_domain_balance_with_half_color_classes() {
        let splits = spec(0.95, 100).generate().unwrap();
        let color = splits.train.samples.iter().filter(|s| s.domain == Domain::Color).count();
        assert!(color.abs_diff(splits.train.len() - color) <= 1);
    }

    #[test]
    fn test_sets_are_twins_and_ids_unique() {
        let splits = spec(0.95, 50).generate().unwrap();
        for (c, g) in splits.test_color.samples.iter().zip(&splits.test_gray.samples) {
            assert_eq!(g.id, c.id | GRAY_TWIN_BIT);
            let mut expected = to_gray(c, splits.domain_channels);
            expected.id = g.id;
            assert_eq!(&expected, g);
        }
        let mut all = HashSet::new();
        for ds in [&splits.train, &splits.val, &splits.test_color, &splits.test_gray] {
            for id in ds.ids() {
                assert!(all.insert(id));
            }
        }
        for class in 0..10 {
            assert!(splits.test_color.samples.iter().any(|s| s.label == class));
        }
    }

    #[test]
    fn generation_is_pure() {
        assert_eq!(spec(0.75, 30).generate().unwrap(), spec(0.75, 30).generate().unwrap());
    }

    #[test]
    fn gray_conversion_fixtures() {
        let s = LabeledSample {
            id: 7,
            features: vec![5.0, 1.0, 2.0, 3.0],
            label: 1,
            domain: Domain::Color,
            group: None,
            attributes: None,
        };
        let g = to_gray(&s, 3);
        assert_eq!(g.features, vec![5.0, 2.0, 2.0, 2.0]);
        assert_eq!((g.id, g.label, g.domain), (7, 1, Domain::Gray));
        assert_eq!(to_gray(&g, 3), g);
        let flat = LabeledSample { features: vec![0.0, 4.0, 4.0, 4.0], ..s };
        let gf = to_gray(&flat, 3);
        assert_eq!(gf.features, flat.features);
        assert_eq!(gf.domain, Domain::Gray);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(spec(0.4, 10).generate().is_err());
        assert!(DatasetSpec { domain_channels: 0, ..spec(0.5, 10) }.generate().is_err());
        assert!(DatasetSpec { majority_color_classes: vec![12], ..spec(0.5, 10) }.generate().is_err());
    }

    fn attr_spec(rate: f64) -> AttributeSpec {
        AttributeSpec { num_samples: 1000, group_rates: vec![rate], seed: 11, ..AttributeSpec::default() }
    }

    fn positives_in_a(ds: &Dataset, k: usize) -> (usize, usize) {
        let pos: Vec<_> = ds.samples.iter().filter(|s| s.attributes.as_ref().unwrap()[k]).collect();
        (pos.iter().filter(|s| s.group == Some(Group::A)).count(), pos.len())
    }

    #[test]
    fn group_rates_are_realized() {
        for (rate, want) in [(0.5, 150), (0.8, 240), (1.0, 300)] {
            let ds = attr_spec(rate).generate().unwrap();
            let a = ds.samples.iter().filter(|s| s.group == Some(Group::A)).count();
            assert_eq!(a, 500);
            for k in 0..4 {
                assert_eq!(positives_in_a(&ds, k), (want, 300));
            }
        }
    }

    #[test]
    fn degenerate_attribute_rates_error() {
        let empty = AttributeSpec { prevalence: 0.0, ..attr_spec(0.5) };
        match empty.generate() {
            Err(Error::Data(msg)) => assert!(msg.contains("attribute 0")),
            other => panic!("unexpected {other:?}"),
        }
        let overfull = AttributeSpec { prevalence: 0.9, ..attr_spec(1.0) };
        assert!(matches!(overfull.generate(), Err(Error::Data(_))));
    }

    #[test]
    fn split_fixtures() {
        let ds = spec(0.5, 40).generate().unwrap().train;
        let whole = split(&ds, &[1.0], &mut rng::stream(1, "s")).unwrap();
        assert_eq!(whole, vec![ds.clone()]);

        let a = split(&ds, &[0.5, 0.3, 0.2], &mut rng::stream(9, "s")).unwrap();
        let b = split(&ds, &[0.5, 0.3, 0.2], &mut rng::stream(9, "s")).unwrap();
        assert_eq!(a, b);
        let mut seen = HashSet::new();
        for part in &a {
            for id in part.ids() {
                assert!(seen.insert(id));
            }
        }
        assert_eq!(seen.len(), ds.len());
        for class in 0..10 {
            let count = |p: &Dataset| p.samples.iter().filter(|s| s.label == class).count();
            assert_eq!((count(&a[0]), count(&a[1]), count(&a[2])), (20, 12, 8));
        }
        assert!(split(&ds, &[0.5, 0.4], &mut rng::stream(1, "s")).is_err());
    }

    #[test]
    fn csv_round_trip_all_fields() {
        let mut ds = attr_spec(0.8).generate().unwrap();
        ds.samples.truncate(20);
        ds.samples[3].domain = Domain::Gray;
        ds.samples[4].group = None;
        ds.samples[5].attributes = None;
        ds.samples[6].features[0] = 0.1 + 0.2;
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "id,label,domain,group,attr_bits,f0\n0,0,color,,,1.0\n1,0,purple,,,2.0\n";
        match read_csv(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("purple"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_csv("x,y\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
