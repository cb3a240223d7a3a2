//! Gradient-based attacks: FGSM, PGD, and the Hamming-distance attack on
//! hashing heads.
//!
//! All three share one step primitive: move by `alpha * sign(g)` where
//! `g` is the input gradient of the attack objective, clip back into the
//! L-inf ball around the original input, then clamp to the data range.
//! FGSM is exactly the single-step case with `alpha = epsilon`, and PGD
//! with `k = 1, alpha = epsilon` reproduces it bit for bit.

use crate::feedback::{input_gradient, FeedbackState};
use crate::net::{Head, LossKind, Network, Targets};
use crate::retrieval::{binarize, hamming, HashCode};
use crate::tensor::Tensor;

use super::{predict_label, AttackError, AttackFamily, AdversarialResult, AttackSpec, Result};

/// Output-side gradient of the attack objective at the current iterate.
type ObjectiveGrad<'a> = dyn Fn(&Tensor) -> Result<Tensor> + 'a;

/// Iterated sign-gradient ascent inside the epsilon ball.
fn sign_gradient_steps(
    net: &Network,
    state: &FeedbackState,
    x: &Tensor,
    objective_grad: &ObjectiveGrad<'_>,
    epsilon: f64,
    alpha: f64,
    steps: usize,
    range: (f64, f64),
    queries: &mut usize,
) -> Result<Tensor> {
    let mut current = x.clone();
    for _ in 0..steps {
        let trace = net.forward(&current)?;
        *queries += 1;
        let out_grad = objective_grad(trace.output())?;
        let grad = input_gradient(net, &trace, state, &out_grad)?;
        let sign = grad.sign()?;
        let mut next = current.clone();
        let nd = next.data_mut();
        for (i, s) in sign.data().iter().enumerate() {
            let stepped = nd[i] + alpha * s;
            // Project into the epsilon ball around the original input,
            // then into the data range.
            let lo = x.data()[i] - epsilon;
            let hi = x.data()[i] + epsilon;
            nd[i] = stepped.min(hi).max(lo).min(range.1).max(range.0);
        }
        current = next;
    }
    Ok(current)
}

fn classification_objective<'a>(
    kind: LossKind,
    target: &'a Targets,
) -> impl Fn(&Tensor) -> Result<Tensor> + 'a {
    move |output: &Tensor| {
        crate::net::loss_grad_output(kind, output, target).map_err(AttackError::from)
    }
}

/// Single-step sign-gradient attack:
/// `x_adv = clip(x + epsilon * sign(grad_x L))`.
///
/// The input gradient is transported through `state`'s rule: pass a BP
/// state for the standard attacker, or the deployed rule's state to model
/// an attacker that sees the model's own feedback path.
pub fn fgsm(
    net: &Network,
    state: &FeedbackState,
    x: &Tensor,
    target: &Targets,
    loss: LossKind,
    spec: &AttackSpec,
) -> Result<AdversarialResult> {
    spec.validate(AttackFamily::Fgsm)?;
    run_classifier_attack(net, state, x, target, loss, spec, spec.epsilon, 1)
}

/// Iterated FGSM with per-step projection into the epsilon ball.
pub fn pgd(
    net: &Network,
    state: &FeedbackState,
    x: &Tensor,
    target: &Targets,
    loss: LossKind,
    spec: &AttackSpec,
) -> Result<AdversarialResult> {
    spec.validate(AttackFamily::Pgd)?;
    run_classifier_attack(net, state, x, target, loss, spec, spec.alpha, spec.steps)
}

fn run_classifier_attack(
    net: &Network,
    state: &FeedbackState,
    x: &Tensor,
    target: &Targets,
    loss: LossKind,
    spec: &AttackSpec,
    alpha: f64,
    steps: usize,
) -> Result<AdversarialResult> {
    let true_label = target_label(target)?;
    let mut queries = 0usize;
    let objective = classification_objective(loss, target);
    let x_adv = sign_gradient_steps(
        net,
        state,
        x,
        &objective,
        spec.epsilon,
        alpha,
        steps,
        spec.data_range,
        &mut queries,
    )?;
    let predicted = predict_label(net, &x_adv)?;
    queries += 1;
    let achieved_linf = x_adv.max_abs_diff(x)?;
    Ok(AdversarialResult {
        x_adv,
        success: predicted != true_label,
        queries_used: queries,
        achieved_linf,
    })
}

fn target_label(target: &Targets) -> Result<usize> {
    match target {
        Targets::Classes(c) if c.len() == 1 => Ok(c[0]),
        Targets::Values(v) if v.shape() == [1, 1] => Ok(usize::from(v.data()[0] > 0.5)),
        _ => Err(AttackError::Spec(
            "white-box attacks take a single-example target".into(),
        )),
    }
}

/// Surrogate objective for the Hamming attack:
/// `-(1/k) * b0^T tanh(u)`, which is `-1` when every code coordinate is
/// saturated in agreement with `b0` and grows as bits are pushed across
/// zero.
pub fn hag_surrogate(b0: &HashCode, u: &Tensor) -> f64 {
    let k = b0.len() as f64;
    let dot: f64 = b0
        .bits()
        .iter()
        .zip(u.data())
        .map(|(&b, &v)| f64::from(b) * v.tanh())
        .sum();
    -dot / k
}

/// Hamming-distance attack on a hasher head: sign-gradient ascent on the
/// surrogate, success when at least a quarter of the code bits flip.
pub fn hag(
    net: &Network,
    state: &FeedbackState,
    x: &Tensor,
    spec: &AttackSpec,
) -> Result<AdversarialResult> {
    spec.validate(AttackFamily::Hag)?;
    let Head::Hasher { bits } = net.head() else {
        return Err(AttackError::Spec(
            "the Hamming attack needs a hasher head, found a classifier".into(),
        ));
    };
    let mut queries = 0usize;
    let u0 = net.forward(x)?.output().clone();
    queries += 1;
    let b0 = binarize(&u0);
    let k = bits as f64;
    // Ascent on the surrogate == descent on b0^T tanh(u) / k; the
    // transported gradient of that scalar is negated before stepping.
    let objective = |output: &Tensor| -> Result<Tensor> {
        let data: Vec<f64> = output
            .data()
            .iter()
            .zip(b0.bits())
            .map(|(&u, &b)| {
                let t = u.tanh();
                -(f64::from(b) * (1.0 - t * t)) / k
            })
            .collect();
        Ok(Tensor::new(output.shape().to_vec(), data)?)
    };
    let x_adv = sign_gradient_steps(
        net,
        state,
        x,
        &objective,
        spec.epsilon,
        spec.alpha,
        spec.steps,
        spec.data_range,
        &mut queries,
    )?;
    let u_adv = net.forward(&x_adv)?.output().clone();
    queries += 1;
    let shift = hamming(&b0, &binarize(&u_adv)).expect("equal code lengths");
    let achieved_linf = x_adv.max_abs_diff(x)?;
    Ok(AdversarialResult {
        x_adv,
        success: u64::from(shift) * 4 >= bits as u64,
        queries_used: queries,
        achieved_linf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::feedback::{train, FeedbackRule, LearningRates, TrainConfig};
    use crate::net::{Head, LayerSpec};
    use crate::rng::SeededRng;

    fn bp_state(net: &Network) -> FeedbackState {
        FeedbackState::init(net, FeedbackRule::Bp, 0)
    }

    #[test]
    fn fgsm_zero_epsilon_returns_input() {
        let net = Network::new(
            vec![3],
            &[LayerSpec::dense(4, Activation::Tanh)],
            Head::Classifier { classes: 2 },
            1,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![0.2, 0.8, 0.5]]).unwrap();
        let spec = AttackSpec::fgsm(0.0, (0.0, 1.0));
        let r = fgsm(
            &net,
            &bp_state(&net),
            &x,
            &Targets::Classes(vec![0]),
            LossKind::CrossEntropy,
            &spec,
        )
        .unwrap();
        assert_eq!(r.x_adv, x);
        let already_wrong = predict_label(&net, &x).unwrap() != 0;
        assert_eq!(r.success, already_wrong);
    }

    #[test]
    fn fgsm_single_pixel_sign_step() {
        // Identity-ish single-input net: gradient of squared error with
        // target 0 at a positive output is positive, so the step is +eps.
        let mut net = Network::new(vec![1], &[], Head::Classifier { classes: 1 }, 0).unwrap();
        net.set_layer_weights(0, Tensor::new(vec![1, 1], vec![2.0]).unwrap())
            .unwrap();
        let x = Tensor::from_rows(&[vec![0.5]]).unwrap();
        let spec = AttackSpec::fgsm(0.1, (0.0, 1.0));
        let target = Targets::Values(Tensor::from_rows(&[vec![0.0]]).unwrap());
        let r = fgsm(
            &net,
            &bp_state(&net),
            &x,
            &target,
            LossKind::SquaredError,
            &spec,
        )
        .unwrap();
        assert!((r.x_adv.data()[0] - 0.6).abs() < 1e-15, "{}", r.x_adv.data()[0]);
    }

    fn trained_xor() -> Network {
        let mut net = Network::new(
            vec![2],
            &[LayerSpec::dense(8, Activation::Tanh)],
            Head::Classifier { classes: 1 },
            42,
        )
        .unwrap();
        let x = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let y = Targets::Values(
            Tensor::from_rows(&[vec![0.0], vec![1.0], vec![1.0], vec![0.0]]).unwrap(),
        );
        let mut cfg = TrainConfig::new(FeedbackRule::Bp, LossKind::SquaredError, 1500, 4);
        cfg.lrs = LearningRates::uniform(0.02);
        cfg.weight_decay = 0.0;
        cfg.seed = 42;
        train(&mut net, &x, &y, &cfg).unwrap();
        net
    }

    #[test]
    fn fgsm_flips_at_least_one_xor_point() {
        let net = trained_xor();
        let state = bp_state(&net);
        let points = [
            (vec![0.0, 0.0], 0usize),
            (vec![0.0, 1.0], 1),
            (vec![1.0, 0.0], 1),
            (vec![1.0, 1.0], 0),
        ];
        // The net must actually have learned XOR for the test to mean much.
        for (p, y) in &points {
            let x = Tensor::from_rows(&[p.clone()]).unwrap();
            assert_eq!(predict_label(&net, &x).unwrap(), *y);
        }
        let spec = AttackSpec::fgsm(0.3, (-0.5, 1.5));
        let mut flips = 0;
        for (p, y) in &points {
            let x = Tensor::from_rows(&[p.clone()]).unwrap();
            let target = Targets::Values(Tensor::from_rows(&[vec![*y as f64]]).unwrap());
            let r = fgsm(&net, &state, &x, &target, LossKind::SquaredError, &spec).unwrap();
            if r.success {
                flips += 1;
            }
        }
        assert!(flips >= 1, "FGSM at eps=0.3 flipped no XOR point");
    }

    #[test]
    fn pgd_single_step_equals_fgsm_bit_for_bit() {
        let net = Network::new(
            vec![4],
            &[LayerSpec::dense(6, Activation::Tanh)],
            Head::Classifier { classes: 3 },
            7,
        )
        .unwrap();
        let state = bp_state(&net);
        let mut rng = SeededRng::new(3, 0);
        for trial in 0..25 {
            let x = crate::rng::sample_uniform(&mut rng, vec![1, 4], 0.0, 1.0).unwrap();
            let target = Targets::Classes(vec![trial % 3]);
            let eps = 0.05 + 0.01 * trial as f64;
            let f_spec = AttackSpec::fgsm(eps, (0.0, 1.0));
            let mut p_spec = AttackSpec::pgd(eps, 1, (0.0, 1.0));
            p_spec.alpha = eps;
            let a = fgsm(&net, &state, &x, &target, LossKind::CrossEntropy, &f_spec).unwrap();
            let b = pgd(&net, &state, &x, &target, LossKind::CrossEntropy, &p_spec).unwrap();
            assert_eq!(a.x_adv, b.x_adv, "trial {trial}");
        }
    }

    #[test]
    fn pgd_respects_epsilon_ball_on_random_trials() {
        let net = Network::new(
            vec![5],
            &[LayerSpec::dense(8, Activation::Relu)],
            Head::Classifier { classes: 4 },
            11,
        )
        .unwrap();
        let state = bp_state(&net);
        let mut rng = SeededRng::new(9, 1);
        for trial in 0..1000 {
            let x = crate::rng::sample_uniform(&mut rng, vec![1, 5], 0.0, 1.0).unwrap();
            let eps = rng.uniform(0.0, 0.4);
            let steps = 1 + rng.below(6);
            let mut spec = AttackSpec::pgd(eps, steps, (0.0, 1.0));
            spec.alpha = eps / 2.0 + 1e-6;
            let target = Targets::Classes(vec![trial % 4]);
            let r = pgd(&net, &state, &x, &target, LossKind::CrossEntropy, &spec).unwrap();
            assert!(
                r.achieved_linf <= eps + 1e-9,
                "trial {trial}: {} > {eps}",
                r.achieved_linf
            );
            assert!(r
                .x_adv
                .data()
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    fn trained_hasher() -> Network {
        let mut net = Network::new(
            vec![6],
            &[LayerSpec::dense(12, Activation::Tanh)],
            Head::Hasher { bits: 16 },
            5,
        )
        .unwrap();
        let mut rng = SeededRng::new(6, 0);
        let x = crate::rng::sample_uniform(&mut rng, vec![40, 6], 0.0, 1.0).unwrap();
        let labels: Vec<u64> = (0..40).map(|i| 1u64 << (i % 4)).collect();
        let mut cfg = TrainConfig::new(FeedbackRule::Bp, LossKind::PairwiseHash, 30, 8);
        cfg.lrs = LearningRates::uniform(5e-3);
        cfg.seed = 6;
        train(&mut net, &x, &Targets::LabelSets(labels), &cfg).unwrap();
        net
    }

    #[test]
    fn hag_zero_epsilon_no_shift() {
        let net = trained_hasher();
        let state = bp_state(&net);
        let x = Tensor::from_rows(&[vec![0.3, 0.7, 0.1, 0.9, 0.5, 0.2]]).unwrap();
        let spec = AttackSpec::hag(0.0, 5, (0.0, 1.0));
        let r = hag(&net, &state, &x, &spec).unwrap();
        assert_eq!(r.x_adv, x);
        assert!(!r.success);
        assert_eq!(r.achieved_linf, 0.0);
    }

    #[test]
    fn hag_surrogate_value_at_origin() {
        let net = trained_hasher();
        let x = Tensor::from_rows(&[vec![0.4, 0.6, 0.2, 0.8, 0.3, 0.7]]).unwrap();
        let u = net.continuous_codes(&x).unwrap();
        let b0 = binarize(&u);
        let s = hag_surrogate(&b0, &u);
        let k = b0.len() as f64;
        let expect = -u.data().iter().map(|v| v.tanh().abs()).sum::<f64>() / k;
        assert!((s - expect).abs() < 1e-12);
        assert!(s >= -1.0);
    }

    #[test]
    fn hag_rejects_classifier_heads() {
        let net = Network::new(vec![3], &[], Head::Classifier { classes: 2 }, 1).unwrap();
        let state = bp_state(&net);
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let spec = AttackSpec::hag(0.1, 3, (0.0, 1.0));
        assert!(matches!(
            hag(&net, &state, &x, &spec),
            Err(AttackError::Spec(_))
        ));
    }

    #[test]
    fn hag_mean_shift_monotone_in_epsilon() {
        let net = trained_hasher();
        let state = bp_state(&net);
        let mut rng = SeededRng::new(14, 2);
        let inputs: Vec<Tensor> = (0..24)
            .map(|_| crate::rng::sample_uniform(&mut rng, vec![1, 6], 0.0, 1.0).unwrap())
            .collect();
        let mut shifts = Vec::new();
        for &eps in &[0.001, 0.01, 0.1, 0.5] {
            let spec = AttackSpec::hag(eps, 5, (0.0, 1.0));
            let mut total = 0u32;
            for x in &inputs {
                let b0 = binarize(&net.continuous_codes(x).unwrap());
                let r = hag(&net, &state, x, &spec).unwrap();
                let b1 = binarize(&net.continuous_codes(&r.x_adv).unwrap());
                total += hamming(&b0, &b1).unwrap();
            }
            shifts.push(f64::from(total) / inputs.len() as f64);
        }
        for w in shifts.windows(2) {
            assert!(
                w[1] >= w[0],
                "mean Hamming shift not monotone: {shifts:?}"
            );
        }
    }
}
