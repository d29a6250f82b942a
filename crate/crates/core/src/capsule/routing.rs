//! Routing-by-agreement between two capsule layers.

use crate::tensor::tape::{Tape, VarId};
use crate::tensor::{Tensor, TensorError};

/// Value snapshots taken during one routing run, for inspection and tests.
/// The gradients still flow through every unrolled iteration on the tape.
#[derive(Clone, Debug)]
pub struct RoutingTrace {
    /// Coupling coefficients after each softmax, one `(num_in, num_out)`
    /// tensor per iteration. Every row is a probability distribution over
    /// the output capsules.
    pub coefficients: Vec<Tensor>,
    /// Agreement logits after the final update.
    pub logits: Tensor,
    /// Final weighted sums `s_j`.
    pub weighted_sums: Tensor,
    /// Final squashed outputs `v_j`.
    pub outputs: Tensor,
}

/// Iterative agreement routing over prediction vectors `û (num_in, num_out, dim)`.
///
/// Logits start at zero and are not trainable; they are recomputed per
/// forward pass. Each iteration takes a softmax over the output capsules,
/// forms the coefficient-weighted sums, and squashes them. The logit update
/// `b_ij += û_ij · v_j` is skipped after the last iteration because nothing
/// would consume it.
///
/// Returns the final output capsules `(num_out, dim)` plus a [`RoutingTrace`].
pub fn dynamic_routing(
    tape: &mut Tape,
    u_hat: VarId,
    iterations: usize,
) -> Result<(VarId, RoutingTrace), TensorError> {
    if iterations < 1 {
        return Err(TensorError::Invalid {
            op: "dynamic_routing",
            detail: "at least one iteration is required".into(),
        });
    }
    let [num_in, num_out] = match tape.shape(u_hat) {
        [i, j, _] => [*i, *j],
        other => {
            return Err(TensorError::RankMismatch {
                op: "dynamic_routing",
                expected: 3,
                shape: other.to_vec(),
            })
        }
    };

    let mut logits = tape.leaf(Tensor::zeros(&[num_in, num_out]));
    let mut coefficients = Vec::with_capacity(iterations);
    let mut final_v = None;
    let mut final_s = None;

    for iteration in 0..iterations {
        let c = tape.softmax_rows(logits)?;
        coefficients.push(tape.value(c).clone());
        let s = tape.caps_weighted_sum(c, u_hat)?;
        let v = tape.squash_rows(s)?;
        if iteration + 1 < iterations {
            let agreement = tape.caps_agreement(u_hat, v)?;
            logits = tape.add(logits, agreement)?;
        }
        final_s = Some(s);
        final_v = Some(v);
    }

    let v = final_v.expect("iterations >= 1");
    let trace = RoutingTrace {
        coefficients,
        logits: tape.value(logits).clone(),
        weighted_sums: tape.value(final_s.expect("iterations >= 1")).clone(),
        outputs: tape.value(v).clone(),
    };
    Ok((v, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain-array reimplementation of the routing loop, kept deliberately
    /// independent of the tape code. Returns the outputs and the last
    /// coefficients.
    fn naive_routing(
        u_hat: &[f64],
        num_in: usize,
        num_out: usize,
        dim: usize,
        iterations: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut b = vec![0.0; num_in * num_out];
        let mut v = vec![0.0; num_out * dim];
        let mut c = vec![0.0; num_in * num_out];
        for iteration in 0..iterations {
            for i in 0..num_in {
                let row = &b[i * num_out..(i + 1) * num_out];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for j in 0..num_out {
                    c[i * num_out + j] = exps[j] / total;
                }
            }
            let mut s = vec![0.0; num_out * dim];
            for i in 0..num_in {
                for j in 0..num_out {
                    for e in 0..dim {
                        s[j * dim + e] += c[i * num_out + j] * u_hat[(i * num_out + j) * dim + e];
                    }
                }
            }
            for j in 0..num_out {
                let row = &s[j * dim..(j + 1) * dim];
                let n2: f64 = row.iter().map(|x| x * x).sum::<f64>() + 1e-9;
                let scale = n2.sqrt() / (1.0 + n2);
                for e in 0..dim {
                    v[j * dim + e] = row[e] * scale;
                }
            }
            if iteration + 1 < iterations {
                for i in 0..num_in {
                    for j in 0..num_out {
                        let mut dot = 0.0;
                        for e in 0..dim {
                            dot += u_hat[(i * num_out + j) * dim + e] * v[j * dim + e];
                        }
                        b[i * num_out + j] += dot;
                    }
                }
            }
        }
        (v, c)
    }

    fn route(u_hat: &Tensor, iterations: usize) -> (Tensor, RoutingTrace) {
        let mut tape = Tape::new();
        let u = tape.leaf(u_hat.clone());
        let (v, trace) = dynamic_routing(&mut tape, u, iterations).unwrap();
        (tape.value(v).clone(), trace)
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::zeros(&[2, 2, 4]));
        assert!(dynamic_routing(&mut tape, u, 0).is_err());
    }

    #[test]
    fn first_iteration_coefficients_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let u_hat = Tensor::uniform(&[5, 4, 6], -1.0, 1.0, &mut rng);
        let (_, trace) = route(&u_hat, 3);
        for &c in trace.coefficients[0].data() {
            assert!((c - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn coefficient_rows_are_distributions_after_every_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let u_hat = Tensor::uniform(&[6, 3, 5], -2.0, 2.0, &mut rng);
        let (_, trace) = route(&u_hat, 3);
        assert_eq!(trace.coefficients.len(), 3);
        for c in &trace.coefficients {
            for row in c.data().chunks_exact(3) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "row sums to {sum}");
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn output_norms_stay_below_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let u_hat = Tensor::uniform(&[8, 4, 6], -3.0, 3.0, &mut rng);
        let (v, _) = route(&u_hat, 3);
        for row in v.data().chunks_exact(6) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm < 1.0);
        }
    }

    #[test]
    fn single_output_capsule_ignores_iteration_count() {
        // With one output the softmax is identically 1, so v = squash(Σ û).
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u_hat = Tensor::uniform(&[7, 1, 5], -1.0, 1.0, &mut rng);
        let (v1, trace) = route(&u_hat, 1);
        let (v3, _) = route(&u_hat, 3);
        for (a, b) in v1.data().iter().zip(v3.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for &c in trace.coefficients[0].data() {
            assert_eq!(c, 1.0);
        }
    }

    #[test]
    fn one_iteration_equals_uniform_weighted_squash() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (num_in, num_out, dim) = (6, 4, 5);
        let u_hat = Tensor::uniform(&[num_in, num_out, dim], -1.5, 1.5, &mut rng);
        let (v, _) = route(&u_hat, 1);

        // Closed form computed directly from the definition.
        for j in 0..num_out {
            let mut s = vec![0.0; dim];
            for i in 0..num_in {
                for e in 0..dim {
                    s[e] += u_hat.data()[(i * num_out + j) * dim + e] / num_out as f64;
                }
            }
            let n2: f64 = s.iter().map(|x| x * x).sum::<f64>() + 1e-9;
            let scale = n2.sqrt() / (1.0 + n2);
            for e in 0..dim {
                let expected = s[e] * scale;
                let got = v.data()[j * dim + e];
                assert!((got - expected).abs() < 1e-12, "v[{j},{e}] = {got} vs {expected}");
            }
        }
    }

    #[test]
    fn matches_naive_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (num_in, num_out, dim) = (5, 3, 4);
        let u_hat = Tensor::uniform(&[num_in, num_out, dim], -2.0, 2.0, &mut rng);
        let (v, trace) = route(&u_hat, 3);
        let (nv, nc) = naive_routing(u_hat.data(), num_in, num_out, dim, 3);
        for (a, b) in v.data().iter().zip(&nv) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in trace.coefficients[2].data().iter().zip(&nc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn agreement_example_concentrates_coefficients() {
        // Input 1 predicts output 1's consensus, input 2 predicts output 2's.
        // After 3 iterations the matching coefficients must dominate.
        let dim = 4;
        let mut u_hat = vec![0.0; 2 * 2 * dim];
        // û[0,0] = 2·e1, û[0,1] = 0.2·e2, û[1,0] = 0.2·e1, û[1,1] = 2·e2
        u_hat[0] = 2.0; // (i=0, j=0) e1
        u_hat[dim + 1] = 0.2; // (i=0, j=1) e2
        u_hat[2 * dim] = 0.2; // (i=1, j=0) e1
        u_hat[3 * dim + 1] = 2.0; // (i=1, j=1) e2
        let u_hat = Tensor::new(vec![2, 2, dim], u_hat).unwrap();

        let (_, trace) = route(&u_hat, 3);
        let c = trace.coefficients.last().unwrap();
        assert!(
            c.at2(0, 0) > c.at2(0, 1),
            "input 1 should prefer output 1: {} vs {}",
            c.at2(0, 0),
            c.at2(0, 1)
        );
        assert!(
            c.at2(1, 1) > c.at2(1, 0),
            "input 2 should prefer output 2: {} vs {}",
            c.at2(1, 1),
            c.at2(1, 0)
        );

        // The independent reimplementation agrees on the inequalities.
        let (_, nc) = naive_routing(u_hat.data(), 2, 2, dim, 3);
        assert!(nc[0] > nc[1] && nc[3] > nc[2]);
    }

    #[test]
    fn permuting_output_capsules_permutes_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (num_in, num_out, dim) = (4, 3, 5);
        let u_hat = Tensor::uniform(&[num_in, num_out, dim], -1.0, 1.0, &mut rng);

        // Swap output capsules 0 and 2 in û.
        let perm = [2usize, 1, 0];
        let mut permuted = vec![0.0; u_hat.len()];
        for i in 0..num_in {
            for j in 0..num_out {
                let src = (i * num_out + j) * dim;
                let dst = (i * num_out + perm[j]) * dim;
                permuted[dst..dst + dim].copy_from_slice(&u_hat.data()[src..src + dim]);
            }
        }
        let permuted = Tensor::new(vec![num_in, num_out, dim], permuted).unwrap();

        let (v, _) = route(&u_hat, 3);
        let (vp, _) = route(&permuted, 3);
        for j in 0..num_out {
            let a = &v.data()[j * dim..(j + 1) * dim];
            let b = &vp.data()[perm[j] * dim..(perm[j] + 1) * dim];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_one_output_column_preserves_direction_at_iteration_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (num_in, num_out, dim) = (5, 3, 4);
        let u_hat = Tensor::uniform(&[num_in, num_out, dim], -1.0, 1.0, &mut rng);
        let mut scaled = u_hat.data().to_vec();
        let target_j = 1;
        for i in 0..num_in {
            for e in 0..dim {
                scaled[(i * num_out + target_j) * dim + e] *= 3.5;
            }
        }
        let scaled = Tensor::new(vec![num_in, num_out, dim], scaled).unwrap();

        let (v, _) = route(&u_hat, 1);
        let (vs, _) = route(&scaled, 1);
        let a = &v.data()[target_j * dim..(target_j + 1) * dim];
        let b = &vs.data()[target_j * dim..(target_j + 1) * dim];
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (x, y) in a.iter().zip(b) {
            assert!((x / na - y / nb).abs() < 1e-9, "direction changed");
        }
    }

    #[test]
    fn gradients_flow_through_all_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let u_hat = Tensor::uniform(&[3, 2, 4], -1.0, 1.0, &mut rng);
        let err = finite_difference_check(
            |tape, u| {
                let (v, _) = dynamic_routing(tape, u, 3)?;
                let lens = tape.row_norms(v)?;
                Ok(tape.sum(lens))
            },
            &u_hat,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "routing gradient error {err}");
    }
}
