//! Data generation and partitioning into clusters of clients.
//!
//! Each generator realises one kind of distribution shift across clusters:
//!
//! * concept shift: shared `P(x)`, per-cluster linear teacher `theta_j`;
//! * label shift: each cluster sees a disjoint group of labels;
//! * covariate shift: each cluster sees the same images under its own rotation;
//! * domain shift: clusters draw from different corpora with disjoint label ranges.
//!
//! Train and validation rows of a client are drawn without replacement from
//! the source's training split; test rows come from the source's held-out
//! split, so no test sample is ever trained on.

mod idx;
mod rotate;

pub use idx::{encode_images, encode_labels, load_idx_images, parse_images, parse_labels};
pub use rotate::rotate_image;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Dataset;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    fn pooled(&self) -> usize {
        self.train + self.validation
    }
}

/// A corpus with a training split (partitioned across clients) and a
/// held-out split (used for per-client test sets).
#[derive(Debug, Clone)]
pub struct SourceCorpus {
    pub train: Dataset,
    pub test: Dataset,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corpus {
    Mnist,
    FashionMnist,
}

/// Number of images taken as the training split of the combined
/// Fashion-MNIST file; the remainder is the held-out split.
pub const FASHION_TRAIN_SPLIT: usize = 60_000;

impl Corpus {
    /// Loads the corpus from `dir`. MNIST uses the canonical file names;
    /// Fashion-MNIST uses `fashion-all-{images-idx3,labels-idx1}-ubyte`
    /// (as written by `scripts/fetch_data.py`), split at [`FASHION_TRAIN_SPLIT`].
    pub fn load(self, dir: &Path) -> Result<SourceCorpus> {
        match self {
            Corpus::Mnist => Ok(SourceCorpus {
                train: load_idx_images(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?,
                test: load_idx_images(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?,
                num_classes: 10,
            }),
            Corpus::FashionMnist => {
                let all = load_idx_images(
                    &dir.join("fashion-all-images-idx3-ubyte"),
                    &dir.join("fashion-all-labels-idx1-ubyte"),
                )?;
                if all.len() <= FASHION_TRAIN_SPLIT {
                    return Err(Error::InsufficientSamples {
                        needed: FASHION_TRAIN_SPLIT + 1,
                        available: all.len(),
                        context: "fashion-mnist combined file".into(),
                    });
                }
                let train: Vec<usize> = (0..FASHION_TRAIN_SPLIT).collect();
                let test: Vec<usize> = (FASHION_TRAIN_SPLIT..all.len()).collect();
                Ok(SourceCorpus {
                    train: all.subset(&train),
                    test: all.subset(&test),
                    num_classes: 10,
                })
            }
        }
    }

    /// Like [`Corpus::load`] but memoised per process, since every run of an
    /// experiment re-partitions the same corpus.
    pub fn load_cached(self, dir: &Path) -> Result<Arc<SourceCorpus>> {
        static CACHE: OnceLock<Mutex<HashMap<(Corpus, PathBuf), Arc<SourceCorpus>>>> =
            OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = (self, dir.to_path_buf());
        if let Some(hit) = cache.lock().expect("corpus cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let loaded = Arc::new(self.load(dir)?);
        cache
            .lock()
            .expect("corpus cache poisoned")
            .insert(key, loaded.clone());
        Ok(loaded)
    }
}

/// Declarative description of how client data is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShiftScenario {
    ConceptShiftSynthetic {
        cluster_sizes: Vec<usize>,
        dim: usize,
        noise_sigma: f64,
        theta_range: (f64, f64),
    },
    LabelShift {
        corpus: Corpus,
        cluster_sizes: Vec<usize>,
        /// One label set per cluster; `None` samples disjoint groups of
        /// `labels_per_cluster` labels at random.
        label_groups: Option<Vec<Vec<usize>>>,
        labels_per_cluster: usize,
        data_dir: PathBuf,
    },
    CovariateShiftRotation {
        corpus: Corpus,
        cluster_sizes: Vec<usize>,
        angles: Vec<f64>,
        data_dir: PathBuf,
    },
    DomainShiftMix {
        cluster_sizes: Vec<usize>,
        data_dir: PathBuf,
    },
}

impl ShiftScenario {
    pub fn cluster_sizes(&self) -> &[usize] {
        match self {
            ShiftScenario::ConceptShiftSynthetic { cluster_sizes, .. }
            | ShiftScenario::LabelShift { cluster_sizes, .. }
            | ShiftScenario::CovariateShiftRotation { cluster_sizes, .. }
            | ShiftScenario::DomainShiftMix { cluster_sizes, .. } => cluster_sizes,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.cluster_sizes().iter().sum()
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_sizes().len()
    }

    /// Input dimension and number of classes (`None` for regression).
    pub fn shape(&self) -> (usize, Option<usize>) {
        match self {
            ShiftScenario::ConceptShiftSynthetic { dim, .. } => (*dim, None),
            ShiftScenario::LabelShift { .. } | ShiftScenario::CovariateShiftRotation { .. } => {
                (784, Some(10))
            }
            ShiftScenario::DomainShiftMix { .. } => (784, Some(20)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self.cluster_sizes();
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::invalid("every cluster needs at least one client"));
        }
        match self {
            ShiftScenario::ConceptShiftSynthetic {
                dim, theta_range, noise_sigma, ..
            } => {
                if *dim == 0 {
                    return Err(Error::invalid("dim must be >= 1"));
                }
                if !(theta_range.0 < theta_range.1) {
                    return Err(Error::invalid("theta range must satisfy low < high"));
                }
                if *noise_sigma < 0.0 {
                    return Err(Error::invalid("noise_sigma must be >= 0"));
                }
            }
            ShiftScenario::CovariateShiftRotation { angles, .. } if angles.len() != sizes.len() => {
                return Err(Error::invalid("one rotation angle per cluster is required"));
            }
            ShiftScenario::DomainShiftMix { .. } if sizes.len() != 2 => {
                return Err(Error::invalid("domain shift uses exactly two clusters"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Generates all client datasets for one run.
    pub fn generate(&self, sizes: SplitSizes, seed: u64) -> Result<Vec<ClientData>> {
        self.validate()?;
        match self {
            ShiftScenario::ConceptShiftSynthetic {
                cluster_sizes,
                dim,
                noise_sigma,
                theta_range,
            } => Ok(gen_concept_shift(
                cluster_sizes,
                *dim,
                sizes,
                *noise_sigma,
                *theta_range,
                seed,
            )?
            .clients),
            ShiftScenario::LabelShift {
                corpus,
                cluster_sizes,
                label_groups,
                labels_per_cluster,
                data_dir,
            } => {
                let source = corpus.load_cached(data_dir)?;
                let groups = match label_groups {
                    Some(g) => g.clone(),
                    None => random_label_groups(
                        source.num_classes,
                        cluster_sizes.len(),
                        *labels_per_cluster,
                        seed,
                    )?,
                };
                partition_label_shift(&source, &groups, cluster_sizes, sizes, seed)
            }
            ShiftScenario::CovariateShiftRotation {
                corpus,
                cluster_sizes,
                angles,
                data_dir,
            } => {
                let source = corpus.load_cached(data_dir)?;
                partition_covariate_shift(&source, angles, cluster_sizes, sizes, seed)
            }
            ShiftScenario::DomainShiftMix {
                cluster_sizes,
                data_dir,
            } => {
                let a = Corpus::Mnist.load_cached(data_dir)?;
                let b = Corpus::FashionMnist.load_cached(data_dir)?;
                partition_domain_shift(&a, &b, cluster_sizes, sizes, 10, seed)
            }
        }
    }
}

/// Output of the synthetic generator: the clients plus the per-cluster
/// teachers, which tests use as ground truth.
#[derive(Debug, Clone)]
pub struct ConceptShiftData {
    pub clients: Vec<ClientData>,
    pub thetas: Vec<Vec<f64>>,
}

fn linear_samples<R: Rng>(
    rng: &mut R,
    n: usize,
    theta: &[f64],
    noise: &Normal<f64>,
    cluster_id: usize,
) -> Dataset {
    let d = theta.len();
    let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-10.0..10.0));
    let targets = features
        .rows()
        .into_iter()
        .map(|x| x.iter().zip(theta).fold(0.0, |acc, (a, b)| acc + a * b))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|clean| clean + noise.sample(rng))
        .collect();
    Dataset::new(features, targets, cluster_id).expect("shapes agree by construction")
}

/// Synthetic concept shift: one teacher `theta_j` per cluster, features
/// uniform on [-10, 10], targets `<x, theta_j> + N(0, noise_sigma^2)`.
pub fn gen_concept_shift(
    cluster_sizes: &[usize],
    dim: usize,
    sizes: SplitSizes,
    noise_sigma: f64,
    theta_range: (f64, f64),
    seed: u64,
) -> Result<ConceptShiftData> {
    if dim == 0 || sizes.train == 0 {
        return Err(Error::invalid("dim and train size must be >= 1"));
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut theta_rng = stream(seed, Stream::Data, &[0]);
    let thetas: Vec<Vec<f64>> = cluster_sizes
        .iter()
        .map(|_| {
            (0..dim)
                .map(|_| theta_rng.random_range(theta_range.0..theta_range.1))
                .collect()
        })
        .collect();

    let mut clients = Vec::with_capacity(cluster_sizes.iter().sum());
    for (cluster, &count) in cluster_sizes.iter().enumerate() {
        for _ in 0..count {
            let client = clients.len() as u64;
            let mut rng = stream(seed, Stream::Data, &[1, client]);
            let theta = &thetas[cluster];
            clients.push(ClientData {
                train: linear_samples(&mut rng, sizes.train, theta, &noise, cluster),
                validation: linear_samples(&mut rng, sizes.validation.max(1), theta, &noise, cluster),
                test: linear_samples(&mut rng, sizes.test.max(1), theta, &noise, cluster),
                cluster_id: cluster,
            });
        }
    }
    Ok(ConceptShiftData { clients, thetas })
}

/// Draws `num_groups` disjoint groups of `per_group` labels out of
/// `0..num_classes`.
pub fn random_label_groups(
    num_classes: usize,
    num_groups: usize,
    per_group: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if num_groups * per_group > num_classes {
        return Err(Error::invalid(format!(
            "{num_groups} groups of {per_group} labels exceed {num_classes} classes"
        )));
    }
    let mut labels: Vec<usize> = (0..num_classes).collect();
    labels.shuffle(&mut stream(seed, Stream::Partition, &[u64::MAX]));
    Ok(labels
        .chunks(per_group)
        .take(num_groups)
        .map(|c| {
            let mut g = c.to_vec();
            g.sort_unstable();
            g
        })
        .collect())
}

fn shuffled<R: Rng>(mut v: Vec<usize>, rng: &mut R) -> Vec<usize> {
    v.shuffle(rng);
    v
}

/// Carves `count` clients out of `pool` (train+validation, without
/// replacement) and draws each client's test rows from `test_pool`.
#[allow(clippy::too_many_arguments)]
fn carve_clients<R: Rng>(
    source: &SourceCorpus,
    pool: &[usize],
    test_pool: &[usize],
    count: usize,
    sizes: SplitSizes,
    cluster_id: usize,
    rng: &mut R,
    transform: &dyn Fn(Dataset) -> Dataset,
) -> Result<Vec<ClientData>> {
    let needed = count * sizes.pooled();
    if pool.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            available: pool.len(),
            context: format!("training pool of cluster {cluster_id}"),
        });
    }
    if test_pool.len() < sizes.test {
        return Err(Error::InsufficientSamples {
            needed: sizes.test,
            available: test_pool.len(),
            context: format!("held-out pool of cluster {cluster_id}"),
        });
    }
    let relabel = |mut d: Dataset| {
        d.cluster_id = cluster_id;
        transform(d)
    };
    let mut out = Vec::with_capacity(count);
    for chunk in pool.chunks(sizes.pooled()).take(count) {
        let (train_idx, val_idx) = chunk.split_at(sizes.train);
        let test_idx: Vec<usize> = test_pool
            .choose_multiple(rng, sizes.test)
            .copied()
            .collect();
        out.push(ClientData {
            train: relabel(source.train.subset(train_idx)),
            validation: relabel(source.train.subset(val_idx)),
            test: relabel(source.test.subset(&test_idx)),
            cluster_id,
        });
    }
    Ok(out)
}

fn indices_with_labels(data: &Dataset, labels: &[usize]) -> Vec<usize> {
    (0..data.len())
        .filter(|&i| labels.contains(&data.class_of(i)))
        .collect()
}

/// Label shift: cluster `j` only ever sees labels in `label_groups[j]`.
pub fn partition_label_shift(
    source: &SourceCorpus,
    label_groups: &[Vec<usize>],
    cluster_sizes: &[usize],
    sizes: SplitSizes,
    seed: u64,
) -> Result<Vec<ClientData>> {
    if label_groups.len() != cluster_sizes.len() {
        return Err(Error::invalid("one label group per cluster is required"));
    }
    for (i, a) in label_groups.iter().enumerate() {
        for b in &label_groups[i + 1..] {
            if a.iter().any(|l| b.contains(l)) {
                return Err(Error::invalid("label groups must be disjoint"));
            }
        }
    }
    let mut clients = Vec::new();
    for (cluster, (group, &count)) in label_groups.iter().zip(cluster_sizes).enumerate() {
        let mut rng = stream(seed, Stream::Partition, &[cluster as u64]);
        let pool = shuffled(indices_with_labels(&source.train, group), &mut rng);
        let test_pool = indices_with_labels(&source.test, group);
        clients.extend(carve_clients(
            source, &pool, &test_pool, count, sizes, cluster, &mut rng, &|d| d,
        )?);
    }
    Ok(clients)
}

fn rotate_rows(mut d: Dataset, angle: f64) -> Dataset {
    if angle.rem_euclid(360.0) == 0.0 {
        return d;
    }
    for mut row in d.features.axis_iter_mut(Axis(0)) {
        let rotated = rotate_image(row.as_slice().expect("row-major features"), angle);
        row.assign(&ndarray::ArrayView1::from(&rotated));
    }
    d
}

/// Covariate shift: all clusters draw from one shuffled pool (so labels are
/// identically distributed) and each cluster rotates its images by its angle.
pub fn partition_covariate_shift(
    source: &SourceCorpus,
    angles: &[f64],
    cluster_sizes: &[usize],
    sizes: SplitSizes,
    seed: u64,
) -> Result<Vec<ClientData>> {
    if angles.len() != cluster_sizes.len() {
        return Err(Error::invalid("one rotation angle per cluster is required"));
    }
    if source.train.dim() != rotate::SIDE * rotate::SIDE {
        return Err(Error::Dimension {
            expected: rotate::SIDE * rotate::SIDE,
            actual: source.train.dim(),
        });
    }
    let total: usize = cluster_sizes.iter().sum();
    let mut pool_rng = stream(seed, Stream::Partition, &[u64::MAX - 1]);
    let pool = shuffled((0..source.train.len()).collect(), &mut pool_rng);
    if pool.len() < total * sizes.pooled() {
        return Err(Error::InsufficientSamples {
            needed: total * sizes.pooled(),
            available: pool.len(),
            context: "covariate-shift training pool".into(),
        });
    }
    let test_pool: Vec<usize> = (0..source.test.len()).collect();
    let mut clients = Vec::new();
    let mut offset = 0;
    for (cluster, (&angle, &count)) in angles.iter().zip(cluster_sizes).enumerate() {
        let mut rng = stream(seed, Stream::Partition, &[cluster as u64]);
        let span = count * sizes.pooled();
        clients.extend(carve_clients(
            source,
            &pool[offset..offset + span],
            &test_pool,
            count,
            sizes,
            cluster,
            &mut rng,
            &|d| rotate_rows(d, angle),
        )?);
        offset += span;
    }
    Ok(clients)
}

/// Domain shift: cluster 0 draws from `corpus_a`, cluster 1 from `corpus_b`
/// with its labels shifted by `label_offset_b` so the two domains occupy
/// disjoint ranges of one joint label space.
pub fn partition_domain_shift(
    corpus_a: &SourceCorpus,
    corpus_b: &SourceCorpus,
    cluster_sizes: &[usize],
    sizes: SplitSizes,
    label_offset_b: usize,
    seed: u64,
) -> Result<Vec<ClientData>> {
    if cluster_sizes.len() != 2 {
        return Err(Error::invalid("domain shift uses exactly two clusters"));
    }
    if corpus_a.train.dim() != corpus_b.train.dim() {
        return Err(Error::Dimension {
            expected: corpus_a.train.dim(),
            actual: corpus_b.train.dim(),
        });
    }
    let shift = |mut d: Dataset| {
        d.targets.iter_mut().for_each(|y| *y += label_offset_b as f64);
        d
    };
    let mut clients = Vec::new();
    for (cluster, (source, &count)) in [corpus_a, corpus_b].into_iter().zip(cluster_sizes).enumerate() {
        let mut rng = stream(seed, Stream::Partition, &[cluster as u64]);
        let pool = shuffled((0..source.train.len()).collect(), &mut rng);
        let test_pool: Vec<usize> = (0..source.test.len()).collect();
        let transform: &dyn Fn(Dataset) -> Dataset = if cluster == 0 { &|d| d } else { &shift };
        clients.extend(carve_clients(
            source, &pool, &test_pool, count, sizes, cluster, &mut rng, transform,
        )?);
    }
    Ok(clients)
}
