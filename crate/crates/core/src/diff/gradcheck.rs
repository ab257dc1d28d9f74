//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::graph::{Graph, ParamStore, Var};
use super::matrix::Matrix;
use super::nn::{Activation, Linear, Mlp};
use crate::error::ShapeError;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub seeds: usize,
    /// Worst relative error over seeds and parameters.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub passed: bool,
}

/// Relative error between analytic and numeric gradients of one tensor,
/// `|a - n| / max(|a|, |n|)` in the Euclidean norm. Pairs where both norms are
/// below `1e-10` count as exact.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff = analytic.zip_map(numeric, |a, b| a - b).norm();
    let scale = analytic.norm().max(numeric.norm());
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares backprop gradients of `forward` against central differences for
/// every parameter in `store`. Returns `(worst relative error, parameter name)`.
pub fn check_gradients<F>(store: &mut ParamStore, forward: F, eps: f64) -> Result<(f64, String), ShapeError>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var), ShapeError>,
{
    store.zero_grad();
    let (graph, loss) = forward(store)?;
    graph.backward(loss).accumulate_into(&graph, store, 1.0);

    let mut worst = (0.0, String::new());
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = store.get(id).grad.clone();
        let mut numeric = Matrix::zeros(analytic.rows(), analytic.cols());
        for k in 0..analytic.len() {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + eps;
            let plus = eval(store, &forward)?;
            store.value_mut(id).data_mut()[k] = original - eps;
            let minus = eval(store, &forward)?;
            store.value_mut(id).data_mut()[k] = original;
            numeric.data_mut()[k] = (plus - minus) / (2.0 * eps);
        }
        let err = relative_error(&analytic, &numeric);
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, store.get(id).name.clone());
        }
    }
    store.zero_grad();
    Ok(worst)
}

fn eval<F>(store: &ParamStore, forward: &F) -> Result<f64, ShapeError>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var), ShapeError>,
{
    let (g, loss) = forward(store)?;
    Ok(g.value(loss).item())
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )
}

/// Reduces any node to a scalar through a fixed random projection so every
/// output entry contributes a distinct weight to the loss.
pub fn project_to_scalar(g: &mut Graph, y: Var, weights: &Matrix) -> Result<Var, ShapeError> {
    let w = g.constant(weights.clone());
    let prod = g.mul(y, w)?;
    Ok(g.sum(prod))
}

type Case = fn(&mut ChaCha8Rng) -> (ParamStore, Box<dyn Fn(&ParamStore) -> Result<(Graph, Var), ShapeError>>);

macro_rules! case {
    ($rng:ident, [$($name:literal: $shape:expr),*], |$g:ident, $store:ident, $v:ident| $body:expr) => {{
        let mut store = ParamStore::new();
        $( let (r, c) = $shape; store.add($name, random_matrix(r, c, $rng)); )*
        let out_weights: std::cell::OnceCell<Matrix> = std::cell::OnceCell::new();
        let proj_seed: u64 = $rng.random();
        let f = move |$store: &ParamStore| -> Result<(Graph, Var), ShapeError> {
            let mut $g = Graph::new();
            let $v: Vec<Var> = $store.ids().map(|id| $g.param($store, id)).collect();
            let y: Var = $body?;
            let (r, c) = $g.shape(y);
            let w = out_weights.get_or_init(|| random_matrix(r, c, &mut ChaCha8Rng::seed_from_u64(proj_seed)));
            let loss = project_to_scalar(&mut $g, y, w)?;
            Ok(($g, loss))
        };
        (store, Box::new(f) as Box<dyn Fn(&ParamStore) -> Result<(Graph, Var), ShapeError>>)
    }};
}

fn primitive_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", |rng| case!(rng, ["a": (3, 4), "b": (4, 2)], |g, s, v| g.matmul(v[0], v[1]))),
        ("add", |rng| case!(rng, ["a": (3, 4), "b": (3, 4)], |g, s, v| g.add(v[0], v[1]))),
        ("sub", |rng| case!(rng, ["a": (3, 4), "b": (3, 4)], |g, s, v| g.sub(v[0], v[1]))),
        ("mul", |rng| case!(rng, ["a": (3, 4), "b": (3, 4)], |g, s, v| g.mul(v[0], v[1]))),
        ("add_broadcast_row", |rng| {
            case!(rng, ["a": (3, 4), "b": (1, 4)], |g, s, v| g.add_broadcast(v[0], v[1]))
        }),
        ("add_broadcast_col", |rng| {
            case!(rng, ["a": (3, 4), "b": (3, 1)], |g, s, v| g.add_broadcast(v[0], v[1]))
        }),
        ("add_broadcast_scalar", |rng| {
            case!(rng, ["a": (3, 4), "b": (1, 1)], |g, s, v| g.add_broadcast(v[0], v[1]))
        }),
        ("scale", |rng| case!(rng, ["a": (2, 5)], |g, s, v| Ok::<_, ShapeError>(g.scale(v[0], -1.7)))),
        ("one_minus", |rng| case!(rng, ["a": (2, 5)], |g, s, v| Ok::<_, ShapeError>(g.one_minus(v[0])))),
        ("tanh", |rng| case!(rng, ["a": (3, 3)], |g, s, v| Ok::<_, ShapeError>(g.tanh(v[0])))),
        ("relu", |rng| case!(rng, ["a": (3, 3)], |g, s, v| Ok::<_, ShapeError>(g.relu(v[0])))),
        ("sigmoid", |rng| case!(rng, ["a": (3, 3)], |g, s, v| Ok::<_, ShapeError>(g.sigmoid(v[0])))),
        ("softmax_rows", |rng| {
            case!(rng, ["a": (3, 5)], |g, s, v| Ok::<_, ShapeError>(g.softmax_rows(v[0])))
        }),
        ("transpose", |rng| case!(rng, ["a": (2, 5)], |g, s, v| Ok::<_, ShapeError>(g.transpose(v[0])))),
        ("slice_rows", |rng| case!(rng, ["a": (5, 3)], |g, s, v| g.slice_rows(v[0], 1, 4))),
        ("slice_cols", |rng| case!(rng, ["a": (3, 5)], |g, s, v| g.slice_cols(v[0], 2, 5))),
        ("concat_cols", |rng| {
            case!(rng, ["a": (3, 2), "b": (3, 4)], |g, s, v| g.concat_cols(&[v[0], v[1]]))
        }),
        ("concat_rows", |rng| {
            case!(rng, ["a": (2, 3), "b": (4, 3)], |g, s, v| g.concat_rows(&[v[0], v[1]]))
        }),
        ("sum", |rng| case!(rng, ["a": (3, 4)], |g, s, v| Ok::<_, ShapeError>(g.sum(v[0])))),
        ("mean", |rng| case!(rng, ["a": (3, 4)], |g, s, v| Ok::<_, ShapeError>(g.mean(v[0])))),
        ("cross_entropy", |rng| {
            let target = rng.random_range(0..6);
            case!(rng, ["logits": (1, 6)], |g, s, v| g.cross_entropy(v[0], target))
        }),
        ("bce_with_logits", |rng| {
            let targets: Vec<f64> = (0..8).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            let weights: Vec<f64> = (0..8).map(|k| if k == 3 { 0.0 } else { 1.0 }).collect();
            case!(rng, ["logits": (2, 4)], |g, s, v| g.bce_with_logits(v[0], &targets, &weights))
        }),
        ("linear", |rng| {
            let mut store = ParamStore::new();
            let x = store.add("x", random_matrix(4, 5, rng));
            let lin = Linear::new(&mut store, "lin", 5, 3, true, rng);
            randomize(&mut store, rng);
            let proj = random_matrix(4, 3, rng);
            let f = move |s: &ParamStore| {
                let mut g = Graph::new();
                let xv = g.param(s, x);
                let y = lin.forward(&mut g, s, xv)?;
                let loss = project_to_scalar(&mut g, y, &proj)?;
                Ok((g, loss))
            };
            (store, Box::new(f))
        }),
        ("composite_3_layer", |rng| {
            // tanh -> relu -> sigmoid stack ending in cross-entropy
            let mut store = ParamStore::new();
            let x = store.add("x", random_matrix(1, 6, rng));
            let l1 = Linear::new(&mut store, "l1", 6, 5, true, rng);
            let l2 = Mlp::new(&mut store, "l2", (5, 4, 4), Activation::Relu, rng);
            let l3 = Linear::new(&mut store, "l3", 4, 3, true, rng);
            randomize(&mut store, rng);
            let target = rng.random_range(0..3);
            let f = move |s: &ParamStore| {
                let mut g = Graph::new();
                let xv = g.param(s, x);
                let h = l1.forward(&mut g, s, xv)?;
                let h = g.tanh(h);
                let h = l2.forward(&mut g, s, h)?;
                let h = g.sigmoid(h);
                let y = l3.forward(&mut g, s, h)?;
                let loss = g.cross_entropy(y, target)?;
                Ok((g, loss))
            };
            (store, Box::new(f))
        }),
    ]
}

fn randomize(store: &mut ParamStore, rng: &mut impl Rng) {
    for p in store.iter_mut() {
        p.value = random_matrix(p.value.rows(), p.value.cols(), rng);
    }
}

/// Runs one named check over `seeds` random instances.
pub fn run_case<F>(name: &str, seeds: usize, root_seed: u64, tolerance: f64, mut build: F) -> Result<CheckOutcome, ShapeError>
where
    F: FnMut(&mut ChaCha8Rng) -> (ParamStore, Box<dyn Fn(&ParamStore) -> Result<(Graph, Var), ShapeError>>),
{
    let mut worst = (0.0_f64, String::new());
    for s in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed.wrapping_mul(1_000_003).wrapping_add(s));
        let (mut store, forward) = build(&mut rng);
        let (err, param) = check_gradients(&mut store, forward, DEFAULT_EPS)?;
        if err >= worst.0 {
            worst = (err, param);
        }
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        seeds,
        max_rel_error: worst.0,
        worst_param: worst.1,
        passed: worst.0 <= tolerance,
    })
}

/// Finite-difference checks for every primitive the heads use.
pub fn primitive_suite(root_seed: u64, seeds: usize) -> Result<Vec<CheckOutcome>, ShapeError> {
    primitive_cases()
        .into_iter()
        .map(|(name, build)| run_case(name, seeds, root_seed, DEFAULT_TOLERANCE, build))
        .collect()
}
