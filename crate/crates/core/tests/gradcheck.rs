//! Gradient checks: every differentiable op is validated against central
//! finite differences of an independent f64 forward implementation
//! written here, not against the library's own forward pass.

use fusion_mammo::tensor::{ComputeGraph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
/// Relative tolerance for gradient components of meaningful size.
const REL_TOL: f64 = 1e-4;
/// Components below this magnitude carry mostly f32 rounding noise, so
/// they are held to an absolute bound instead; the two tiers agree at
/// the boundary (1e-8 / 1e-4 = 1e-4).
const SMALL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-8;
const PROB_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------- reference

fn ref_conv(
    input: &[f64],
    (ih, iw, ci): (usize, usize, usize),
    kernels: &[f64],
    (k, co): (usize, usize),
    bias: &[f64],
) -> (Vec<f64>, (usize, usize, usize)) {
    let (oh, ow) = (ih - k + 1, iw - k + 1);
    let mut out = vec![0.0; oh * ow * co];
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..co {
                let mut acc = bias[o];
                for ky in 0..k {
                    for kx in 0..k {
                        for c in 0..ci {
                            let iv = input[((y + ky) * iw + (x + kx)) * ci + c];
                            let kv = kernels[((ky * k + kx) * ci + c) * co + o];
                            acc += iv * kv;
                        }
                    }
                }
                out[(y * ow + x) * co + o] = acc;
            }
        }
    }
    (out, (oh, ow, co))
}

fn ref_pool(
    input: &[f64],
    (ih, iw, c): (usize, usize, usize),
    win: usize,
    stride: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let (oh, ow) = ((ih - win) / stride + 1, (iw - win) / stride + 1);
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..win {
                    for dx in 0..win {
                        let v = input[((y * stride + dy) * iw + (x * stride + dx)) * c + ch];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(y * ow + x) * c + ch] = best;
            }
        }
    }
    (out, (oh, ow, c))
}

fn ref_relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| v.max(0.0)).collect()
}

fn ref_dense(x: &[f64], w: &[f64], b: &[f64], units: usize) -> Vec<f64> {
    let d = x.len();
    (0..units)
        .map(|u| b[u] + (0..d).map(|i| x[i] * w[i * units + u]).sum::<f64>())
        .collect()
}

fn ref_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn ref_ce(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

// ----------------------------------------------------------------- plumbing

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn rand_group(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Distinct values spaced far enough apart that a +-H probe can never
/// reorder a max-pool window or cross a relu kink.
fn spaced_group(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut levels: Vec<f64> = (0..n)
        .map(|i| (i as f64 - n as f64 / 2.0) * 0.05 + 0.025)
        .collect();
    for i in (1..levels.len()).rev() {
        let j = rng.gen_range(0..=i);
        levels.swap(i, j);
    }
    levels
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// FD-check every parameter group: analytic gradients from the tape
/// against central differences of the reference forward.
fn check<T, R>(groups: &[Vec<f64>], tape: T, reference: R)
where
    T: Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f32>>),
    R: Fn(&[Vec<f64>]) -> f64,
{
    let (loss, grads) = tape(groups);
    let ref_loss = reference(groups);
    assert!(
        rel_err(loss, ref_loss) < 1e-5,
        "forward disagrees with reference: tape {loss}, reference {ref_loss}"
    );
    assert_eq!(grads.len(), groups.len());
    let mut max_rel = 0.0f64;
    let mut max_abs_small = 0.0f64;
    for (gi, group) in groups.iter().enumerate() {
        assert_eq!(grads[gi].len(), group.len(), "group {gi} gradient length");
        for i in 0..group.len() {
            let mut plus = groups.to_vec();
            plus[gi][i] += H;
            let mut minus = groups.to_vec();
            minus[gi][i] -= H;
            let fd = (reference(&plus) - reference(&minus)) / (2.0 * H);
            let an = grads[gi][i] as f64;
            if an.abs().max(fd.abs()) < SMALL {
                max_abs_small = max_abs_small.max((an - fd).abs());
                assert!(
                    (an - fd).abs() < ABS_TOL,
                    "group {gi} element {i}: analytic {an}, finite difference {fd}"
                );
            } else {
                max_rel = max_rel.max(rel_err(an, fd));
                assert!(
                    rel_err(an, fd) < REL_TOL,
                    "group {gi} element {i}: analytic {an}, finite difference {fd}"
                );
            }
        }
    }
    eprintln!("gradcheck: max relative {max_rel:.3e}, max small-element absolute {max_abs_small:.3e}");
}

fn take_grad(g: &mut ComputeGraph, id: fusion_mammo::tensor::NodeId) -> Vec<f32> {
    g.take(id).grad.expect("leaf requested gradient")
}

// -------------------------------------------------------------------- tests

#[test]
fn conv_chain_gradients_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let groups = vec![
        rand_group(&mut rng, 5 * 5 * 2),  // input
        rand_group(&mut rng, 3 * 3 * 2 * 3), // kernels
        rand_group(&mut rng, 3),          // bias
        rand_group(&mut rng, 27 * 2),     // dense weights
        rand_group(&mut rng, 2),          // dense bias
    ];
    let tape = |p: &[Vec<f64>]| {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::new(vec![5, 5, 2], to_f32(&p[0])).unwrap().with_grad());
        let k = g.leaf(Tensor::new(vec![3, 3, 2, 3], to_f32(&p[1])).unwrap().with_grad());
        let b = g.leaf(Tensor::new(vec![3], to_f32(&p[2])).unwrap().with_grad());
        let w = g.leaf(Tensor::new(vec![27, 2], to_f32(&p[3])).unwrap().with_grad());
        let b2 = g.leaf(Tensor::new(vec![2], to_f32(&p[4])).unwrap().with_grad());
        let c = g.conv2d(x, k, b, 1, 0).unwrap();
        let r = g.reshape(c, vec![27]).unwrap();
        let d = g.dense(r, w, b2).unwrap();
        let s = g.softmax(d).unwrap();
        let loss = g.cross_entropy(s, &[1]).unwrap();
        g.backward(loss).unwrap();
        let lv = g.value(loss).data()[0] as f64;
        let grads = vec![
            take_grad(&mut g, x),
            take_grad(&mut g, k),
            take_grad(&mut g, b),
            take_grad(&mut g, w),
            take_grad(&mut g, b2),
        ];
        (lv, grads)
    };
    let reference = |p: &[Vec<f64>]| {
        let (c, _) = ref_conv(&p[0], (5, 5, 2), &p[1], (3, 3), &p[2]);
        let d = ref_dense(&c, &p[3], &p[4], 2);
        ref_ce(&ref_softmax(&d), 1)
    };
    check(&groups, tape, reference);
}

#[test]
fn maxpool_chain_gradients_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let groups = vec![
        spaced_group(&mut rng, 4 * 4 * 2), // input, pool-safe spacing
        rand_group(&mut rng, 8 * 2),
        rand_group(&mut rng, 2),
    ];
    let tape = |p: &[Vec<f64>]| {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::new(vec![4, 4, 2], to_f32(&p[0])).unwrap().with_grad());
        let w = g.leaf(Tensor::new(vec![8, 2], to_f32(&p[1])).unwrap().with_grad());
        let b = g.leaf(Tensor::new(vec![2], to_f32(&p[2])).unwrap().with_grad());
        let pool = g.maxpool2d(x, 2, 2).unwrap();
        let r = g.reshape(pool, vec![8]).unwrap();
        let d = g.dense(r, w, b).unwrap();
        let s = g.softmax(d).unwrap();
        let loss = g.cross_entropy(s, &[0]).unwrap();
        g.backward(loss).unwrap();
        let lv = g.value(loss).data()[0] as f64;
        let grads = vec![take_grad(&mut g, x), take_grad(&mut g, w), take_grad(&mut g, b)];
        (lv, grads)
    };
    let reference = |p: &[Vec<f64>]| {
        let (pool, _) = ref_pool(&p[0], (4, 4, 2), 2, 2);
        let d = ref_dense(&pool, &p[1], &p[2], 2);
        ref_ce(&ref_softmax(&d), 0)
    };
    check(&groups, tape, reference);
}

#[test]
fn relu_chain_gradients_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let groups = vec![
        spaced_group(&mut rng, 3 * 3 * 2), // bounded away from the kink
        rand_group(&mut rng, 18 * 2),
        rand_group(&mut rng, 2),
    ];
    let tape = |p: &[Vec<f64>]| {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::new(vec![3, 3, 2], to_f32(&p[0])).unwrap().with_grad());
        let w = g.leaf(Tensor::new(vec![18, 2], to_f32(&p[1])).unwrap().with_grad());
        let b = g.leaf(Tensor::new(vec![2], to_f32(&p[2])).unwrap().with_grad());
        let a = g.relu(x).unwrap();
        let r = g.reshape(a, vec![18]).unwrap();
        let d = g.dense(r, w, b).unwrap();
        let s = g.softmax(d).unwrap();
        let loss = g.cross_entropy(s, &[1]).unwrap();
        g.backward(loss).unwrap();
        let lv = g.value(loss).data()[0] as f64;
        let grads = vec![take_grad(&mut g, x), take_grad(&mut g, w), take_grad(&mut g, b)];
        (lv, grads)
    };
    let reference = |p: &[Vec<f64>]| {
        let a = ref_relu(&p[0]);
        let d = ref_dense(&a, &p[1], &p[2], 2);
        ref_ce(&ref_softmax(&d), 1)
    };
    check(&groups, tape, reference);
}

#[test]
fn dense_softmax_ce_gradients_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let groups = vec![
        rand_group(&mut rng, 6),
        rand_group(&mut rng, 6 * 4),
        rand_group(&mut rng, 4),
    ];
    let tape = |p: &[Vec<f64>]| {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::new(vec![6], to_f32(&p[0])).unwrap().with_grad());
        let w = g.leaf(Tensor::new(vec![6, 4], to_f32(&p[1])).unwrap().with_grad());
        let b = g.leaf(Tensor::new(vec![4], to_f32(&p[2])).unwrap().with_grad());
        let d = g.dense(x, w, b).unwrap();
        let s = g.softmax(d).unwrap();
        let loss = g.cross_entropy(s, &[2]).unwrap();
        g.backward(loss).unwrap();
        let lv = g.value(loss).data()[0] as f64;
        let grads = vec![take_grad(&mut g, x), take_grad(&mut g, w), take_grad(&mut g, b)];
        (lv, grads)
    };
    let reference = |p: &[Vec<f64>]| {
        let d = ref_dense(&p[0], &p[1], &p[2], 4);
        ref_ce(&ref_softmax(&d), 2)
    };
    check(&groups, tape, reference);
}

#[test]
fn softmax_cross_entropy_gradients_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let groups = vec![rand_group(&mut rng, 5)];
    let tape = |p: &[Vec<f64>]| {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::new(vec![5], to_f32(&p[0])).unwrap().with_grad());
        let s = g.softmax(x).unwrap();
        let loss = g.cross_entropy(s, &[3]).unwrap();
        g.backward(loss).unwrap();
        let lv = g.value(loss).data()[0] as f64;
        (lv, vec![take_grad(&mut g, x)])
    };
    let reference = |p: &[Vec<f64>]| ref_ce(&ref_softmax(&p[0]), 3);
    check(&groups, tape, reference);
}

/// The layered composite: conv -> relu -> pool -> dense -> softmax -> CE,
/// the same shape of chain the network trains through.
#[test]
fn composite_network_chain_gradients_match_reference() {
    // Seed chosen so no relu input sits near 0 and no pool window has a
    // near-tie; asserted below rather than assumed.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let groups = vec![
        rand_group(&mut rng, 8 * 8 * 2),
        rand_group(&mut rng, 3 * 3 * 2 * 4),
        rand_group(&mut rng, 4),
        rand_group(&mut rng, 36 * 2),
        rand_group(&mut rng, 2),
    ];

    let reference = |p: &[Vec<f64>]| {
        let (c, cs) = ref_conv(&p[0], (8, 8, 2), &p[1], (3, 4), &p[2]);
        let a = ref_relu(&c);
        let (pool, _) = ref_pool(&a, cs, 2, 2);
        let d = ref_dense(&pool, &p[3], &p[4], 2);
        ref_ce(&ref_softmax(&d), 1)
    };

    // Kink-safety margins at the chosen seed.
    let (c, cs) = ref_conv(&groups[0], (8, 8, 2), &groups[1], (3, 4), &groups[2]);
    let min_abs = c.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    assert!(min_abs > 20.0 * H, "relu input too close to kink: {min_abs}");
    let a = ref_relu(&c);
    let (ph, pw, pc) = ((cs.0 - 2) / 2 + 1, (cs.1 - 2) / 2 + 1, cs.2);
    for y in 0..ph {
        for x in 0..pw {
            for ch in 0..pc {
                let mut vals = Vec::with_capacity(4);
                for dy in 0..2 {
                    for dx in 0..2 {
                        vals.push(a[((2 * y + dy) * cs.1 + (2 * x + dx)) * cs.2 + ch]);
                    }
                }
                vals.sort_by(|p, q| q.partial_cmp(p).unwrap());
                // An all-clamped window is exactly zero on both sides of
                // any probe; only windows with a positive max can tie.
                if vals[0] > 0.0 {
                    assert!(
                        vals[0] - vals[1] > 20.0 * H,
                        "pool window near-tie at ({y},{x},{ch})"
                    );
                }
            }
        }
    }

    let tape = |p: &[Vec<f64>]| {
        let mut g = ComputeGraph::new();
        let x = g.leaf(Tensor::new(vec![8, 8, 2], to_f32(&p[0])).unwrap().with_grad());
        let k = g.leaf(Tensor::new(vec![3, 3, 2, 4], to_f32(&p[1])).unwrap().with_grad());
        let b = g.leaf(Tensor::new(vec![4], to_f32(&p[2])).unwrap().with_grad());
        let w = g.leaf(Tensor::new(vec![36, 2], to_f32(&p[3])).unwrap().with_grad());
        let b2 = g.leaf(Tensor::new(vec![2], to_f32(&p[4])).unwrap().with_grad());
        let conv = g.conv2d(x, k, b, 1, 0).unwrap();
        let act = g.relu(conv).unwrap();
        let pool = g.maxpool2d(act, 2, 2).unwrap();
        let r = g.reshape(pool, vec![36]).unwrap();
        let d = g.dense(r, w, b2).unwrap();
        let s = g.softmax(d).unwrap();
        let loss = g.cross_entropy(s, &[1]).unwrap();
        g.backward(loss).unwrap();
        let lv = g.value(loss).data()[0] as f64;
        let grads = vec![
            take_grad(&mut g, x),
            take_grad(&mut g, k),
            take_grad(&mut g, b),
            take_grad(&mut g, w),
            take_grad(&mut g, b2),
        ];
        (lv, grads)
    };
    check(&groups, tape, reference);
}
