//! Seeded grayscale shape images with disjoint in-distribution and
//! out-of-distribution class sets.

mod container;
mod shapes;

pub(crate) use container::hex;
pub use container::{read_dataset, write_dataset};
pub use shapes::{render_shape, Pose, ShapeKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub image_side: usize,
    pub id_classes: Vec<ShapeKind>,
    pub ood_classes: Vec<ShapeKind>,
    /// ID images per class before the train/validation split.
    pub per_class_train: usize,
    pub per_class_id_test: usize,
    pub per_class_ood_test: usize,
    pub noise_sigma: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub pose: PoseRanges,
}

/// Sampling ranges for shape placement, as fractions of the image side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseRanges {
    /// Maximum offset of the shape centre from the image centre, per axis.
    pub center_jitter: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub max_rotation_deg: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            center_jitter: 0.15,
            min_scale: 0.28,
            max_scale: 0.42,
            max_rotation_deg: 15.0,
        }
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            image_side: 16,
            id_classes: ShapeKind::ID_DEFAULT.to_vec(),
            ood_classes: ShapeKind::OOD_DEFAULT.to_vec(),
            per_class_train: 470,
            per_class_id_test: 100,
            per_class_ood_test: 100,
            noise_sigma: 0.05,
            validation_fraction: 0.15,
            seed: 17,
            pose: PoseRanges::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_side < 4 {
            return Err(Error::Config("image_side must be at least 4".into()));
        }
        if self.id_classes.len() < 2 {
            return Err(Error::Config("need at least two ID classes".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for kind in self.id_classes.iter().chain(&self.ood_classes) {
            if !seen.insert(*kind) {
                return Err(Error::Config(format!(
                    "shape {kind} listed twice; ID and OOD classes must be disjoint"
                )));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        let p = &self.pose;
        if !((0.0..0.5).contains(&p.center_jitter)
            && p.min_scale > 0.0
            && p.min_scale <= p.max_scale
            && p.max_scale.is_finite()
            && (0.0..=180.0).contains(&p.max_rotation_deg))
        {
            return Err(Error::Config(format!("invalid pose ranges {p:?}")));
        }
        if self.per_class_train == 0 {
            return Err(Error::Config("per_class_train must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_side * self.image_side
    }

    /// Validation images taken from each class's pool.
    pub fn validation_per_class(&self) -> usize {
        (self.per_class_train as f64 * self.validation_fraction).round() as usize
    }
}

/// Images as rows of a `[N × side²]` tensor with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    fn from_parts(rows: Vec<f64>, labels: Vec<usize>, pixels: usize) -> Self {
        Self {
            images: Tensor::new(vec![labels.len(), pixels], rows).expect("row count matches labels"),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }
}

/// ID train/validation/test splits plus an OOD test set. OOD labels index
/// into `spec.ood_classes` and never reach a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub spec: DatasetSpec,
    pub train: LabeledImages,
    pub validation: LabeledImages,
    pub id_test: LabeledImages,
    pub ood_test: LabeledImages,
}

fn sample_pose<R: Rng>(rng: &mut R, side: usize, ranges: &PoseRanges) -> Pose {
    let s = side as f64;
    let jitter = ranges.center_jitter * s;
    let max_rot = ranges.max_rotation_deg;
    Pose {
        center: (
            s / 2.0 + rng.random_range(-jitter..=jitter),
            s / 2.0 + rng.random_range(-jitter..=jitter),
        ),
        scale: rng.random_range(ranges.min_scale * s..=ranges.max_scale * s),
        rotation: rng.random_range(-max_rot..=max_rot).to_radians(),
        intensity: rng.random_range(0.6..=1.0),
    }
}

fn sample_image<R: Rng>(rng: &mut R, kind: ShapeKind, spec: &DatasetSpec, noise: &Normal<f64>) -> Vec<f64> {
    let pose = sample_pose(rng, spec.image_side, &spec.pose);
    let mut img = render_shape(kind, &pose, spec.image_side).expect("sampled pose lies on the canvas");
    if spec.noise_sigma > 0.0 {
        for px in &mut img {
            *px = (*px + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    img
}

/// Deterministic in `spec.seed`. The validation split takes the same
/// rounded share of every class.
pub fn generate(spec: &DatasetSpec) -> Result<SplitDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    let pixels = spec.pixels();
    let n_val = spec.validation_per_class();

    let (mut tr, mut tr_l) = (Vec::new(), Vec::new());
    let (mut va, mut va_l) = (Vec::new(), Vec::new());
    let (mut te, mut te_l) = (Vec::new(), Vec::new());
    for (label, &kind) in spec.id_classes.iter().enumerate() {
        for i in 0..spec.per_class_train {
            let img = sample_image(&mut rng, kind, spec, &noise);
            // poses are i.i.d., so the first n_val draws are a random subset
            if i < n_val {
                va.extend(img);
                va_l.push(label);
            } else {
                tr.extend(img);
                tr_l.push(label);
            }
        }
        for _ in 0..spec.per_class_id_test {
            te.extend(sample_image(&mut rng, kind, spec, &noise));
            te_l.push(label);
        }
    }
    let (mut od, mut od_l) = (Vec::new(), Vec::new());
    for (label, &kind) in spec.ood_classes.iter().enumerate() {
        for _ in 0..spec.per_class_ood_test {
            od.extend(sample_image(&mut rng, kind, spec, &noise));
            od_l.push(label);
        }
    }
    Ok(SplitDataset {
        spec: spec.clone(),
        train: LabeledImages::from_parts(tr, tr_l, pixels),
        validation: LabeledImages::from_parts(va, va_l, pixels),
        id_test: LabeledImages::from_parts(te, te_l, pixels),
        ood_test: LabeledImages::from_parts(od, od_l, pixels),
    })
}

/// Mirrors a `side × side` image in place.
pub fn flip_image(img: &mut [f64], side: usize, horizontal: bool, vertical: bool) {
    if horizontal {
        for row in img.chunks_mut(side) {
            row.reverse();
        }
    }
    if vertical {
        for y in 0..side / 2 {
            for x in 0..side {
                img.swap(y * side + x, (side - 1 - y) * side + x);
            }
        }
    }
}

/// Independent horizontal and vertical flips, each with probability 1/2.
pub fn random_flip<R: Rng>(img: &mut [f64], side: usize, rng: &mut R) {
    let h = rng.random::<bool>();
    let v = rng.random::<bool>();
    flip_image(img, side, h, v);
}
