//! Finite-difference verification of every differentiable tape operation.
//!
//! Each case builds `loss = Σ r ⊙ op(inputs)` with random weights `r`, then
//! compares the tape gradient of every input element against the central
//! difference `(f(x+h) − f(x−h)) / 2h` evaluated on fresh forward passes.

use super::graph::{BnMode, Graph, Var};
use super::pool::PoolMode;
use super::rng::Rng;
use super::tensor::{Tensor, TensorResult};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor: below this magnitude the error is measured absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> TensorResult<Var>;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval_loss(inputs: &[Tensor<f64>], build: &Build, weights: &Tensor<f64>) -> TensorResult<f64> {
    let mut g = Graph::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), false)).collect();
    let y = build(&mut g, &vars)?;
    let loss = g.weighted_sum(y, weights.clone())?;
    Ok(g.value(loss).data()[0])
}

/// Max relative error over every input element for one instance.
pub fn check_instance(inputs: &[Tensor<f64>], build: &Build, rng: &mut Rng) -> TensorResult<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let y = build(&mut g, &vars)?;
    let weights = random_tensor(g.dims(y), rng, 1.0);
    let loss = g.weighted_sum(y, weights.clone())?;
    let grads = g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].dims());
        let analytic = grads.get(*v).unwrap_or(&zero);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + STEP;
            let fp = eval_loss(&probe, build, &weights)?;
            probe[i].data_mut()[j] = x0 - STEP;
            let fm = eval_loss(&probe, build, &weights)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

pub fn random_tensor(dims: &[usize], rng: &mut Rng, scale: f64) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| scale * rng.normal()).collect()).expect("dims")
}

/// Values bounded away from zero, for kinks at the origin.
fn away_from_zero(dims: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform_range(0.05, 1.5);
            if rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(dims, data).expect("dims")
}

/// Distinct values with pairwise gaps far above the step, for arg-max stability.
fn well_separated(dims: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
    rng.shuffle(&mut data);
    Tensor::new(dims, data).expect("dims")
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn simplex_rows(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<f64> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.uniform() + 0.01).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.into_iter().map(|v| v / s));
    }
    Tensor::new(&[rows, cols], data).expect("dims")
}

struct Case {
    inputs: Vec<Tensor<f64>>,
    build: Box<Build>,
}

fn conv_case(rng: &mut Rng) -> Case {
    let n = dim(rng, 1, 2);
    let c = dim(rng, 1, 3);
    let co = dim(rng, 1, 3);
    let ext = [dim(rng, 1, 4), dim(rng, 2, 5), dim(rng, 2, 5)];
    let mut k = [0; 3];
    let mut stride = [0; 3];
    let mut pad = [0; 3];
    for a in 0..3 {
        pad[a] = rng.below(2);
        k[a] = dim(rng, 1, (ext[a] + 2 * pad[a]).min(3));
        stride[a] = dim(rng, 1, 2);
    }
    let with_bias = rng.bernoulli(0.5);
    let mut inputs = vec![
        random_tensor(&[n, c, ext[0], ext[1], ext[2]], rng, 1.0),
        random_tensor(&[co, c, k[0], k[1], k[2]], rng, 0.5),
    ];
    if with_bias {
        inputs.push(random_tensor(&[co], rng, 0.5));
    }
    Case {
        inputs,
        build: Box::new(move |g, v| g.conv3d(v[0], v[1], v.get(2).copied(), stride, pad)),
    }
}

fn pool_case(rng: &mut Rng, mode: PoolMode) -> Case {
    let dims = [dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 2, 5), dim(rng, 2, 5)];
    let mut window = [0; 3];
    let mut stride = [0; 3];
    let mut pad = [0; 3];
    for a in 0..3 {
        window[a] = dim(rng, 1, dims[2 + a].min(3));
        stride[a] = dim(rng, 1, 2);
        pad[a] = if window[a] > 1 && mode == PoolMode::Max { rng.below(2) } else { 0 };
    }
    let x = match mode {
        PoolMode::Max => well_separated(&dims, rng),
        PoolMode::Avg => random_tensor(&dims, rng, 1.0),
    };
    Case {
        inputs: vec![x],
        build: Box::new(move |g, v| g.pool3d(v[0], mode, window, stride, pad)),
    }
}

fn affine_case(rng: &mut Rng) -> Case {
    let (n, d, o) = (dim(rng, 1, 4), dim(rng, 1, 5), dim(rng, 1, 4));
    let bias = rng.bernoulli(0.7);
    let mut inputs = vec![random_tensor(&[n, d], rng, 1.0), random_tensor(&[o, d], rng, 1.0)];
    if bias {
        inputs.push(random_tensor(&[o], rng, 1.0));
    }
    Case {
        inputs,
        build: Box::new(|g, v| g.affine(v[0], v[1], v.get(2).copied())),
    }
}

fn bn_case(rng: &mut Rng, train: bool) -> Case {
    let dims = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 2, 3)];
    let c = dims[1];
    let mean: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.5, 2.0)).collect();
    Case {
        inputs: vec![
            random_tensor(&dims, rng, 1.5),
            random_tensor(&[c], rng, 1.0),
            random_tensor(&[c], rng, 1.0),
        ],
        build: Box::new(move |g, v| {
            let mode = if train {
                BnMode::Train
            } else {
                BnMode::Eval { mean: &mean, var: &var }
            };
            Ok(g.batch_norm3d(v[0], v[1], v[2], mode, 1e-5)?.0)
        }),
    }
}

fn rows_case(rng: &mut Rng) -> [usize; 2] {
    [dim(rng, 1, 4), dim(rng, 2, 6)]
}

fn relu_case(rng: &mut Rng) -> Case {
    let dims = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
    Case {
        inputs: vec![away_from_zero(&dims, rng)],
        build: Box::new(|g, v| Ok(g.relu(v[0]))),
    }
}

fn l2_case(rng: &mut Rng) -> Case {
    let dims = rows_case(rng);
    Case {
        inputs: vec![random_tensor(&dims, rng, 1.0)],
        build: Box::new(|g, v| g.l2_normalize(v[0], 1e-12)),
    }
}

fn softmax_case(rng: &mut Rng) -> Case {
    let dims = rows_case(rng);
    let tau = rng.uniform_range(0.2, 2.0);
    Case {
        inputs: vec![random_tensor(&dims, rng, 1.0)],
        build: Box::new(move |g, v| g.softmax(v[0], tau)),
    }
}

fn ce_case(rng: &mut Rng) -> Case {
    let [n, k] = rows_case(rng);
    let tau = rng.uniform_range(0.2, 2.0);
    let target = simplex_rows(n, k, rng);
    Case {
        inputs: vec![random_tensor(&[n, k], rng, 1.0)],
        build: Box::new(move |g, v| g.cross_entropy_soft(v[0], target.clone(), tau)),
    }
}

fn bce_case(rng: &mut Rng) -> Case {
    let n = dim(rng, 1, 6);
    let targets: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
    Case {
        inputs: vec![random_tensor(&[n, 1], rng, 2.0)],
        build: Box::new(move |g, v| g.bce_with_logits(v[0], &targets)),
    }
}

fn gap_case(rng: &mut Rng) -> Case {
    let dims = [dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
    Case {
        inputs: vec![random_tensor(&dims, rng, 1.0)],
        build: Box::new(|g, v| g.global_avg_pool(v[0])),
    }
}

fn concat_slice_case(rng: &mut Rng) -> Case {
    let n = dim(rng, 2, 4);
    let (a, b) = (dim(rng, 1, 3), dim(rng, 1, 3));
    let start = rng.below(n - 1);
    let len = dim(rng, 1, n - start);
    Case {
        inputs: vec![random_tensor(&[n, a], rng, 1.0), random_tensor(&[n, b], rng, 1.0)],
        build: Box::new(move |g, v| {
            let c = g.concat_cols(&[v[0], v[1]])?;
            g.slice_rows(c, start, len)
        }),
    }
}

fn arith_case(rng: &mut Rng) -> Case {
    let dims = [dim(rng, 1, 3), dim(rng, 1, 4)];
    let c = rng.uniform_range(-2.0, 2.0);
    Case {
        inputs: vec![random_tensor(&dims, rng, 1.0), random_tensor(&dims, rng, 1.0)],
        build: Box::new(move |g, v| {
            let p = g.mul(v[0], v[1])?;
            let s = g.add(p, v[0])?;
            Ok(g.scale(s, c))
        }),
    }
}

/// conv → batch norm → relu → max pool → global pool → affine → soft CE.
fn composite_case(rng: &mut Rng) -> Case {
    let n = 2;
    let k = 3;
    let target = simplex_rows(n, k, rng);
    Case {
        inputs: vec![
            random_tensor(&[n, 1, 2, 4, 4], rng, 1.0),
            random_tensor(&[2, 1, 1, 3, 3], rng, 0.5),
            random_tensor(&[2], rng, 0.5),
            random_tensor(&[2], rng, 0.3),
            random_tensor(&[k, 2], rng, 1.0),
        ],
        build: Box::new(move |g, v| {
            let c = g.conv3d(v[0], v[1], None, [1, 1, 1], [0, 1, 1])?;
            let (b, _) = g.batch_norm3d(c, v[2], v[3], BnMode::Train, 1e-5)?;
            let r = g.relu(b);
            let p = g.pool3d(r, PoolMode::Max, [1, 2, 2], [1, 2, 2], [0, 0, 0])?;
            let h = g.global_avg_pool(p)?;
            let l = g.affine(h, v[4], None)?;
            g.cross_entropy_soft(l, target.clone(), 0.5)
        }),
    }
}

type CaseGen = fn(&mut Rng) -> Case;

fn registry() -> Vec<(&'static str, CaseGen)> {
    vec![
        ("conv3d", conv_case),
        ("pool3d_max", |r| pool_case(r, PoolMode::Max)),
        ("pool3d_avg", |r| pool_case(r, PoolMode::Avg)),
        ("affine", affine_case),
        ("batch_norm3d_train", |r| bn_case(r, true)),
        ("batch_norm3d_eval", |r| bn_case(r, false)),
        ("relu", relu_case),
        ("l2_normalize", l2_case),
        ("softmax", softmax_case),
        ("cross_entropy_soft", ce_case),
        ("bce_with_logits", bce_case),
        ("global_avg_pool", gap_case),
        ("concat_slice", concat_slice_case),
        ("add_mul_scale", arith_case),
        ("composite", composite_case),
    ]
}

/// Runs `cases_per_op` random instances of every operation.
pub fn run_suite(seed: u64, cases_per_op: usize) -> TensorResult<Vec<OpCheck>> {
    let mut report = Vec::new();
    for (op, gen) in registry() {
        let mut rng = Rng::derived(seed, op);
        let mut worst: f64 = 0.0;
        for _ in 0..cases_per_op {
            let case = gen(&mut rng);
            worst = worst.max(check_instance(&case.inputs, case.build.as_ref(), &mut rng)?);
        }
        report.push(OpCheck {
            op,
            cases: cases_per_op,
            max_rel_error: worst,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // relu's true gradient vs. a build that hides a constant offset in the value only.
        let mut rng = Rng::new(3);
        let x = Tensor::from_f64(&[3], &[0.5, -0.7, 1.2]).unwrap();
        let err = check_instance(&[x], &|g, v| Ok(g.relu(v[0])), &mut rng).unwrap();
        assert!(err < TOLERANCE);
        assert!(relative_error(1.0, 1.1) > TOLERANCE);
    }

    #[test]
    fn every_op_passes_on_a_few_instances() {
        for check in run_suite(11, 3).unwrap() {
            assert!(check.passed(), "{check:?}");
        }
    }
}
