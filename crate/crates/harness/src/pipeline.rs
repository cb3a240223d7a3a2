//! The experiment pipeline: pretrain a backbone, attach a fresh task
//! head, fine-tune everything under each requested credit-assignment
//! rule, then measure clean and robust metrics for every attack and
//! perturbation budget.
//!
//! Every stage persists its artifact (checkpoints under the output
//! directory) and reloads it when present, so a pipeline interrupted
//! after pretraining resumes to identical results: all randomness is
//! derived from the experiment seed through fixed stream tags, never
//! from run-to-run state.

use std::path::Path;
use std::time::Instant;

use concord_core::activation::Activation;
use concord_core::attacks::{
    boundary_attack, fgsm, hag, hsja, pgd, AttackFamily, AttackSpec, NetworkOracle,
};
use concord_core::checkpoint;
use concord_core::feedback::{
    gather_examples, train, FeedbackRule, FeedbackState, LearningRates, TrainConfig,
};
use concord_core::net::{Head, LayerSpec, LossKind, Network, Padding, Targets};
use concord_core::retrieval::{binarize_rows, map_at_k, HashCode, RetrievalIndex};
use concord_core::rng::{stream_id, SeededRng};
use concord_core::tensor::Tensor;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, DatasetKind, ExperimentConfig, ModelSpec, Task};
use crate::dataset::{self, DataError, Dataset, Split};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Net(#[from] concord_core::net::NetError),
    #[error("training: {0}")]
    Feedback(#[from] concord_core::feedback::FeedbackError),
    #[error("attack: {0}")]
    Attack(#[from] concord_core::attacks::AttackError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] concord_core::checkpoint::CheckpointError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] concord_core::retrieval::RetrievalError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, PipelineError>;

/// One (rule, attack, epsilon) measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub rule: String,
    pub attack: String,
    pub epsilon: f64,
    pub clean: f64,
    pub robust: f64,
    pub n_eval: usize,
    pub wall_time_s: f64,
    pub seed: u64,
}

/// Everything the evaluation stage needs, with checkpoints already on
/// disk.
pub struct PipelineArtifacts {
    pub train_set: Dataset,
    pub test_set: Dataset,
    pub pretrained: Network,
    pub finetuned: Vec<(FeedbackRule, Network)>,
}

/// Caps the rayon pool from the `CONCORD_THREADS` env var. Call once at
/// process start; later calls are ignored.
pub fn init_thread_pool_from_env() {
    if let Ok(value) = std::env::var("CONCORD_THREADS") {
        if let Ok(n) = value.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

pub fn load_data(cfg: &ExperimentConfig, split: Split) -> Result<Dataset> {
    let mut ds = match cfg.dataset {
        DatasetKind::Mnist => {
            let dir = cfg.data_dir.clone().unwrap_or_else(|| "data/mnist-desk".into());
            dataset::load_mnist(&dir, split)?
        }
        DatasetKind::Cifar10 => {
            let dir = cfg.data_dir.clone().unwrap_or_else(|| "data/cifar10".into());
            dataset::load_cifar10(&dir, split)?
        }
        DatasetKind::SyntheticBlobs => {
            let per_class = match split {
                Split::Train => cfg.blob_train_per_class,
                Split::Test => cfg.blob_test_per_class,
            };
            dataset::synthetic_blobs(
                cfg.blob_dim,
                cfg.blob_classes,
                per_class,
                cfg.blob_spread,
                cfg.seed,
                split,
            )
        }
    };
    if split == Split::Train {
        if let Some(limit) = cfg.train_limit {
            ds.truncate(limit);
        }
    }
    Ok(ds)
}

fn layer_specs(spec: &ModelSpec, example_shape: &[usize]) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    match spec {
        ModelSpec::Mlp { hidden } => {
            if example_shape.len() > 1 {
                specs.push(LayerSpec::Flatten);
            }
            for &h in hidden {
                specs.push(LayerSpec::dense(h, Activation::Relu));
            }
        }
        ModelSpec::Cnn { c1, c2, fc } => {
            specs.push(LayerSpec::conv(*c1, 5, Padding::Valid, Activation::Relu));
            specs.push(LayerSpec::MaxPool2x2);
            specs.push(LayerSpec::conv(*c2, 5, Padding::Valid, Activation::Relu));
            specs.push(LayerSpec::MaxPool2x2);
            specs.push(LayerSpec::Flatten);
            specs.push(LayerSpec::dense(*fc, Activation::Relu));
        }
    }
    specs
}

fn task_head(cfg: &ExperimentConfig, num_classes: usize) -> Head {
    match cfg.task {
        Task::Classification => Head::Classifier {
            classes: num_classes,
        },
        Task::Hashing => Head::Hasher {
            bits: cfg.code_bits,
        },
    }
}

fn task_loss(cfg: &ExperimentConfig) -> LossKind {
    match cfg.task {
        Task::Classification => LossKind::CrossEntropy,
        Task::Hashing => LossKind::PairwiseHash,
    }
}

fn task_targets(cfg: &ExperimentConfig, ds: &Dataset) -> Targets {
    match cfg.task {
        Task::Classification => Targets::Classes(ds.classes.clone()),
        Task::Hashing => Targets::LabelSets(ds.label_sets()),
    }
}

fn finetune_seed(cfg: &ExperimentConfig, rule: FeedbackRule) -> u64 {
    stream_id("finetune", &[cfg.seed, rule as u64])
}

/// Pretrains the backbone with a classifier head (or loads the existing
/// checkpoint). Returns the network and its per-epoch loss curve (empty
/// when reloaded).
pub fn pretrain_stage(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    train_set: &Dataset,
) -> Result<(Network, Vec<f64>)> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("pretrained.ckpt");
    if let Some(net) = checkpoint::load_if_exists(&path)? {
        return Ok((net, Vec::new()));
    }
    let spec = cfg.model_spec()?;
    let init_seed = stream_id("pretrain-init", &[cfg.seed]);
    let mut net = Network::new(
        train_set.example_shape(),
        &layer_specs(&spec, &train_set.example_shape()),
        Head::Classifier {
            classes: train_set.num_classes,
        },
        init_seed,
    )?;
    let mut tc = TrainConfig::new(
        cfg.pretrain_rule()?,
        LossKind::CrossEntropy,
        cfg.pretrain_epochs,
        cfg.batch_size,
    );
    tc.lrs = LearningRates::uniform(cfg.lr_pretrain);
    tc.weight_decay = cfg.weight_decay;
    tc.seed = stream_id("pretrain", &[cfg.seed]);
    let report = train(
        &mut net,
        &train_set.inputs,
        &Targets::Classes(train_set.classes.clone()),
        &tc,
    )?;
    checkpoint::save(&net, &path)?;
    Ok((net, report.loss_curve))
}

/// Fine-tunes all weights under one rule starting from the pretrained
/// backbone with a fresh task head, or loads the existing checkpoint.
/// The fresh head is drawn from a rule-independent stream so every rule
/// starts from the same parameters.
pub fn finetune_stage(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    pretrained: &Network,
    train_set: &Dataset,
    rule: FeedbackRule,
) -> Result<(Network, Vec<f64>)> {
    let path = out_dir.join(format!("finetuned-{}.ckpt", rule.name()));
    if let Some(net) = checkpoint::load_if_exists(&path)? {
        return Ok((net, Vec::new()));
    }
    let mut net = pretrained.clone();
    net.replace_head(
        task_head(cfg, train_set.num_classes),
        stream_id("head-init", &[cfg.seed]),
    )?;
    let mut tc = TrainConfig::new(rule, task_loss(cfg), cfg.finetune_epochs, cfg.batch_size);
    tc.lrs = LearningRates {
        backbone: cfg.lr_backbone,
        head: cfg.lr_head,
    };
    tc.weight_decay = cfg.weight_decay;
    tc.seed = finetune_seed(cfg, rule);
    let report = train(&mut net, &train_set.inputs, &task_targets(cfg, train_set), &tc)?;
    checkpoint::save(&net, &path)?;
    Ok((net, report.loss_curve))
}

/// Runs (or resumes) every stage up to evaluation.
pub fn prepare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PipelineArtifacts> {
    cfg.validate()?;
    let train_set = load_data(cfg, Split::Train)?;
    let test_set = load_data(cfg, Split::Test)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(PipelineError::Config(ConfigError::Invalid(
            "dataset has no examples".into(),
        )));
    }
    let (pretrained, _) = pretrain_stage(cfg, out_dir, &train_set)?;
    if pretrained.input_shape() != train_set.example_shape() {
        return Err(PipelineError::Config(ConfigError::Invalid(format!(
            "checkpoint input shape {:?} does not match dataset {:?}",
            pretrained.input_shape(),
            train_set.example_shape()
        ))));
    }
    let mut finetuned = Vec::new();
    for rule in cfg.finetune_rule_list()? {
        let (net, _) = finetune_stage(cfg, out_dir, &pretrained, &train_set, rule)?;
        finetuned.push((rule, net));
    }
    Ok(PipelineArtifacts {
        train_set,
        test_set,
        pretrained,
        finetuned,
    })
}

/// Seeded evaluation subset of the test split.
pub fn eval_indices(cfg: &ExperimentConfig, test_len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..test_len).collect();
    let mut rng = SeededRng::new(cfg.seed, stream_id("eval-subset", &[]));
    rng.shuffle(&mut order);
    order.truncate(cfg.n_eval.min(test_len));
    order
}

fn single(x: &Tensor, i: usize) -> Tensor {
    gather_examples(x, &[i])
}

/// Classification accuracy over the chosen subset.
fn accuracy(net: &Network, test: &Dataset, idx: &[usize]) -> Result<f64> {
    let x = gather_examples(&test.inputs, idx);
    let predicted = net.predict_classes(&x)?;
    let correct = predicted
        .iter()
        .zip(idx.iter().map(|&i| test.classes[i]))
        .filter(|(p, y)| **p == *y)
        .count();
    Ok(correct as f64 / idx.len() as f64)
}

/// The gradient-transport state handed to white-box attackers: plain BP
/// by default, or the deployed rule's state when the config asks for it.
/// The deployed state is rebuilt from the fine-tuning seed, which is
/// exact for rules whose feedback is fixed after init (FA, frSF) and a
/// fair per-update draw for brSF.
fn attack_state(
    cfg: &ExperimentConfig,
    net: &Network,
    rule: FeedbackRule,
) -> FeedbackState {
    if cfg.attacker_uses_deployed_rule {
        FeedbackState::init(net, rule, finetune_seed(cfg, rule))
    } else {
        FeedbackState::init(net, FeedbackRule::Bp, finetune_seed(cfg, rule))
    }
}

fn whitebox_spec(cfg: &ExperimentConfig, family: AttackFamily, eps: f64) -> AttackSpec {
    match family {
        AttackFamily::Fgsm => AttackSpec::fgsm(eps, (0.0, 1.0)),
        AttackFamily::Pgd => AttackSpec::pgd(eps, cfg.pgd_steps, (0.0, 1.0)),
        AttackFamily::Hag => {
            let mut s = AttackSpec::hag(eps, cfg.hag_steps, (0.0, 1.0));
            s.alpha = eps / 3.0;
            s
        }
        _ => unreachable!("black-box specs built separately"),
    }
}

/// Robust accuracy under one white-box classification attack.
fn robust_accuracy_whitebox(
    cfg: &ExperimentConfig,
    net: &Network,
    state: &FeedbackState,
    test: &Dataset,
    idx: &[usize],
    family: AttackFamily,
    eps: f64,
) -> Result<f64> {
    let spec = whitebox_spec(cfg, family, eps);
    let survived: Vec<bool> = idx
        .par_iter()
        .map(|&i| -> Result<bool> {
            let x = single(&test.inputs, i);
            let target = Targets::Classes(vec![test.classes[i]]);
            let r = match family {
                AttackFamily::Fgsm => fgsm(net, state, &x, &target, LossKind::CrossEntropy, &spec)?,
                AttackFamily::Pgd => pgd(net, state, &x, &target, LossKind::CrossEntropy, &spec)?,
                _ => unreachable!("white-box families only"),
            };
            Ok(!r.success)
        })
        .collect::<Result<_>>()?;
    Ok(survived.iter().filter(|s| **s).count() as f64 / idx.len() as f64)
}

/// Robust accuracy under a decision-based attack: an input counts as
/// robust when the attack cannot flip it with a perturbation inside the
/// L-inf budget using the query budget.
fn robust_accuracy_blackbox(
    cfg: &ExperimentConfig,
    net: &Network,
    test: &Dataset,
    idx: &[usize],
    family: AttackFamily,
    eps: f64,
    rule_salt: u64,
) -> Result<f64> {
    let survived: Vec<bool> = idx
        .par_iter()
        .enumerate()
        .map(|(j, &i)| -> Result<bool> {
            let x = single(&test.inputs, i);
            let y = test.classes[i];
            let oracle = NetworkOracle::new(net);
            if concord_core::attacks::predict_label(net, &x)? != y {
                return Ok(false);
            }
            let seed = stream_id("attack", &[cfg.seed, rule_salt, family as u64, j as u64]);
            let result = match family {
                AttackFamily::Boundary => boundary_attack(
                    &oracle,
                    &x,
                    y,
                    &AttackSpec::boundary(eps, cfg.query_budget, (0.0, 1.0)),
                    seed,
                ),
                AttackFamily::Hsja => hsja(
                    &oracle,
                    &x,
                    y,
                    &AttackSpec::hsja(eps, cfg.query_budget, (0.0, 1.0)),
                    seed,
                ),
                _ => unreachable!("decision-based families only"),
            };
            match result {
                Ok(r) => Ok(!(r.success && r.achieved_linf <= eps + 1e-9)),
                Err(concord_core::attacks::AttackError::StartNotFound) => Ok(true),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<_>>()?;
    Ok(survived.iter().filter(|s| **s).count() as f64 / idx.len() as f64)
}

/// Builds the retrieval database from the training split.
pub fn build_index(net: &Network, train: &Dataset) -> Result<RetrievalIndex> {
    let codes = binarize_rows(&net.continuous_codes(&train.inputs)?);
    let labels = train.label_sets();
    let ids: Vec<u64> = (0..train.len() as u64).collect();
    Ok(RetrievalIndex::new(codes, labels, ids)?)
}

fn query_codes(net: &Network, test: &Dataset, idx: &[usize]) -> Result<Vec<(HashCode, u64)>> {
    let x = gather_examples(&test.inputs, idx);
    let codes = binarize_rows(&net.continuous_codes(&x)?);
    Ok(codes
        .into_iter()
        .zip(idx.iter().map(|&i| 1u64 << test.classes[i]))
        .collect())
}

/// Robust mAP under the Hamming attack: queries are perturbed, the
/// database stays fixed.
fn robust_map_hag(
    cfg: &ExperimentConfig,
    net: &Network,
    state: &FeedbackState,
    index: &RetrievalIndex,
    test: &Dataset,
    idx: &[usize],
    eps: f64,
) -> Result<f64> {
    let spec = whitebox_spec(cfg, AttackFamily::Hag, eps);
    let adv_codes: Vec<(HashCode, u64)> = idx
        .par_iter()
        .map(|&i| -> Result<(HashCode, u64)> {
            let x = single(&test.inputs, i);
            let r = hag(net, state, &x, &spec)?;
            let code = binarize_rows(&net.continuous_codes(&r.x_adv)?)
                .pop()
                .expect("one query row");
            Ok((code, 1u64 << test.classes[i]))
        })
        .collect::<Result<_>>()?;
    Ok(map_at_k(&adv_codes, index, cfg.map_cutoff)?)
}

/// Full evaluation: one record per (rule, attack, epsilon).
pub fn evaluate(cfg: &ExperimentConfig, artifacts: &PipelineArtifacts) -> Result<Vec<RunRecord>> {
    let hash = cfg.config_hash();
    let idx = eval_indices(cfg, artifacts.test_set.len());
    let attacks = cfg.attack_list()?;
    let mut records = Vec::new();
    for (rule, net) in &artifacts.finetuned {
        let state = attack_state(cfg, net, *rule);
        let (clean, index) = match cfg.task {
            Task::Classification => (accuracy(net, &artifacts.test_set, &idx)?, None),
            Task::Hashing => {
                let index = build_index(net, &artifacts.train_set)?;
                let queries = query_codes(net, &artifacts.test_set, &idx)?;
                (map_at_k(&queries, &index, cfg.map_cutoff)?, Some(index))
            }
        };
        for family in &attacks {
            for (eps_i, &eps) in cfg.epsilons.iter().enumerate() {
                let started = Instant::now();
                let robust = if eps == 0.0 {
                    // No perturbation fits in a zero ball; the robust
                    // metric is the clean metric by definition.
                    clean
                } else {
                    match family {
                        AttackFamily::Fgsm | AttackFamily::Pgd => robust_accuracy_whitebox(
                            cfg,
                            net,
                            &state,
                            &artifacts.test_set,
                            &idx,
                            *family,
                            eps,
                        )?,
                        AttackFamily::Hag => robust_map_hag(
                            cfg,
                            net,
                            &state,
                            index.as_ref().expect("hashing task builds an index"),
                            &artifacts.test_set,
                            &idx,
                            eps,
                        )?,
                        AttackFamily::Boundary | AttackFamily::Hsja => robust_accuracy_blackbox(
                            cfg,
                            net,
                            &artifacts.test_set,
                            &idx,
                            *family,
                            eps,
                            *rule as u64 ^ (eps_i as u64) << 8,
                        )?,
                    }
                };
                records.push(RunRecord {
                    config_hash: hash.clone(),
                    rule: rule.name().to_string(),
                    attack: family.name().to_string(),
                    epsilon: eps,
                    clean,
                    robust,
                    n_eval: idx.len(),
                    wall_time_s: started.elapsed().as_secs_f64(),
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(records)
}

/// End-to-end: prepare all artifacts, evaluate, return the records.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunRecord>> {
    let artifacts = prepare(cfg, out_dir)?;
    evaluate(cfg, &artifacts)
}
