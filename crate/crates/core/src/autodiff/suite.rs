//! Finite-difference checks over every op kind with random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gradcheck::finite_diff_check;
use super::{Graph, Tensor, Var};
use crate::error::Result;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;

/// Names of the ops covered by [`op_suite`], one per [`super::OpKind`].
pub const SUITE_OPS: [&str; 21] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "concat",
    "softmax",
    "exp",
    "log",
    "abs",
    "huber",
    "layer_norm",
    "l2_normalize",
    "mean",
    "sum",
    "relu",
    "sigmoid",
    "slice",
    "reshape",
    "transpose_last_two",
    "permute",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpCheck {
    pub op: &'static str,
    pub draws: usize,
    pub checked: usize,
    pub excluded: usize,
    pub worst_rel_error: f64,
    pub passed: bool,
}

fn shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Contracts `y` with fixed random weights so that every output
/// coordinate reaches the scalar with a distinct factor.
fn contract(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let w = g.constant(w.clone());
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

struct Case {
    x: Tensor,
    build: Box<dyn Fn(&mut Graph, Var) -> Result<Var>>,
}

fn case(rng: &mut ChaCha8Rng, op: &str, draw: usize) -> Result<Case> {
    let rank = rng.random_range(1..=3usize);
    let s = shape(rng, rank);
    let std = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -2.0, 2.0);
    let (x, build): (Tensor, Box<dyn Fn(&mut Graph, Var) -> Result<Var>>) = match op {
        "matmul" => {
            let (b, m, k, n) = (rng.random_range(1..=3), shape(rng, 1)[0], shape(rng, 1)[0], shape(rng, 1)[0]);
            let lhs_is_x = draw % 2 == 0;
            let shared = draw % 4 < 2;
            let xs = if lhs_is_x { vec![b, m, k] } else if shared { vec![k, n] } else { vec![b, k, n] };
            let cs = if lhs_is_x {
                if shared { vec![k, n] } else { vec![b, k, n] }
            } else {
                vec![b, m, k]
            };
            let c = std(rng, &cs);
            let w = std(rng, &[b, m, n]);
            (
                std(rng, &xs),
                Box::new(move |g, x| {
                    let c = g.constant(c.clone());
                    let y = if lhs_is_x { g.matmul(x, c)? } else { g.matmul(c, x)? };
                    contract(g, y, &w)
                }),
            )
        }
        "add" | "sub" | "mul" => {
            let full = s.clone();
            let k = rng.random_range(0..=full.len());
            let suffix = full[k..].to_vec();
            let x_full = draw % 2 == 0;
            let (xs, cs) = if x_full { (full.clone(), suffix) } else { (suffix, full.clone()) };
            let c = std(rng, &cs);
            let w = std(rng, &full);
            let op = op.to_string();
            (
                std(rng, &xs),
                Box::new(move |g, x| {
                    let c = g.constant(c.clone());
                    let (a, b) = if x_full { (x, c) } else { (c, x) };
                    let y = match op.as_str() {
                        "add" => g.add(a, b)?,
                        "sub" => g.sub(a, b)?,
                        _ => g.mul(a, b)?,
                    };
                    contract(g, y, &w)
                }),
            )
        }
        "concat" => {
            let axis = rng.random_range(0..rank);
            let mut cs = s.clone();
            cs[axis] = rng.random_range(1..=3);
            let c = std(rng, &cs);
            let mut os = s.clone();
            os[axis] += cs[axis];
            let w = std(rng, &os);
            let first = draw % 2 == 0;
            (
                std(rng, &s),
                Box::new(move |g, x| {
                    let c = g.constant(c.clone());
                    let parts = if first { [x, c] } else { [c, x] };
                    let y = g.concat(&parts, axis as isize)?;
                    contract(g, y, &w)
                }),
            )
        }
        "slice" => {
            let axis = rng.random_range(0..rank);
            let start = rng.random_range(0..s[axis]);
            let end = rng.random_range(start + 1..=s[axis]);
            let mut os = s.clone();
            os[axis] = end - start;
            let w = std(rng, &os);
            (
                std(rng, &s),
                Box::new(move |g, x| {
                    let y = g.slice(x, axis as isize, start, end)?;
                    contract(g, y, &w)
                }),
            )
        }
        "reshape" => {
            let n: usize = s.iter().product();
            let target = vec![1, n];
            let w = std(rng, &target);
            (
                std(rng, &s),
                Box::new(move |g, x| {
                    let y = g.reshape(x, &target)?;
                    contract(g, y, &w)
                }),
            )
        }
        "transpose_last_two" | "permute" => {
            let s = shape(rng, 3);
            let axes: Vec<usize> = if op == "permute" {
                let mut a = vec![0, 1, 2];
                a.rotate_left(1 + draw % 2);
                a
            } else {
                vec![0, 2, 1]
            };
            let os: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
            let w = std(rng, &os);
            let transpose = op == "transpose_last_two";
            (
                std(rng, &s),
                Box::new(move |g, x| {
                    let y = if transpose { g.transpose_last_two(x)? } else { g.permute(x, &axes)? };
                    contract(g, y, &w)
                }),
            )
        }
        "mean" | "sum" | "softmax" => {
            let axis = rng.random_range(0..rank);
            let mut os = s.clone();
            if op != "softmax" {
                os.remove(axis);
            }
            let w = std(rng, &os);
            let op = op.to_string();
            (
                std(rng, &s),
                Box::new(move |g, x| {
                    let y = match op.as_str() {
                        "mean" => g.mean(x, axis as isize)?,
                        "sum" => g.sum(x, axis as isize)?,
                        _ => g.softmax(x, axis as isize)?,
                    };
                    contract(g, y, &w)
                }),
            )
        }
        _ => {
            let x = match op {
                "log" => uniform(rng, &s, 0.3, 3.0),
                "layer_norm" | "l2_normalize" => {
                    let mut s = s.clone();
                    *s.last_mut().expect("rank >= 1") = rng.random_range(2..=5);
                    std(rng, &s)
                }
                _ => std(rng, &s),
            };
            let w = std(rng, x.shape());
            let c = rng.random_range(-3.0..3.0);
            let op = op.to_string();
            (
                x,
                Box::new(move |g, x| {
                    let y = match op.as_str() {
                        "scale" => g.scale(x, c)?,
                        "exp" => g.exp(x)?,
                        "log" => g.log(x)?,
                        "abs" => g.abs(x)?,
                        "huber" => g.huber(x, 0.5)?,
                        "layer_norm" => g.layer_norm(x, 1e-6)?,
                        "l2_normalize" => g.l2_normalize(x)?,
                        "relu" => g.relu(x)?,
                        "sigmoid" => g.sigmoid(x)?,
                        other => unreachable!("op {other} has no case"),
                    };
                    contract(g, y, &w)
                }),
            )
        }
    };
    Ok(Case { x, build })
}

/// Runs `draws` random cases per op; each op's verdict covers all draws.
pub fn op_suite(seed: u64, draws: usize, tolerance: f64) -> Result<Vec<OpCheck>> {
    SUITE_OPS
        .iter()
        .enumerate()
        .map(|(k, &op)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut out = OpCheck {
                op,
                draws,
                checked: 0,
                excluded: 0,
                worst_rel_error: 0.0,
                passed: true,
            };
            for d in 0..draws {
                let c = case(&mut rng, op, d)?;
                let r = finite_diff_check(&c.build, &c.x, FD_STEP, tolerance)?;
                out.checked += r.checked;
                out.excluded += r.excluded.len();
                out.worst_rel_error = out.worst_rel_error.max(r.worst_rel_error());
                out.passed &= r.passed;
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_a_few_draws() {
        for c in op_suite(7, 3, OP_TOLERANCE).unwrap() {
            assert!(c.passed, "{c:?}");
            assert!(c.checked > 0, "{c:?}");
        }
    }
}
