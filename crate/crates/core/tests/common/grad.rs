//! Gradient checks shared by the gradcheck and acceptance targets. Each
//! check returns the worst relative error seen, or a description of the
//! first failure.

use super::*;
use s2pd::distill::{default_weights, student_gradients, teacher_gradients, teacher_targets, DistillConfig};
use s2pd::numerics::{Linear, RngState, Tape, Tensor, Var};
use s2pd::student::{StudentConfig, StudentModel};
use s2pd::teacher::TeacherModel;

pub type Outcome = Result<f64, String>;

pub const ELEMENTWISE_TOL: f64 = 1e-4;
pub const TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;

pub struct Input {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn rand_input(seed: u64, shape: &[usize]) -> Input {
    let n = shape.iter().product();
    Input {
        shape: shape.to_vec(),
        data: uniform(&mut rng(seed), n, -1.0, 1.0),
    }
}

fn scaled(mut i: Input, factor: f32, shift: f32) -> Input {
    i.data.iter_mut().for_each(|v| *v = *v * factor + shift);
    i
}

/// Values bounded away from zero, for ops with a kink there.
fn kinkless_input(seed: u64, shape: &[usize]) -> Input {
    let mut i = rand_input(seed, shape);
    i.data.iter_mut().for_each(|v| *v = v.signum() * (0.1 + 0.9 * v.abs()));
    i
}

/// Checks `op` through the scalar `Σ cᵢ·op(x)ᵢ` with fixed random weights
/// `c`, both for the forward values and for every input's gradient.
pub fn check_op(
    name: &str,
    inputs: Vec<Input>,
    tol: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    reference: impl Fn(&[Vec<f64>]) -> Vec<f64>,
) -> Outcome {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|i| tape.leaf(Tensor::new(i.shape.clone(), i.data.clone()).unwrap().with_requires_grad(true)))
        .collect();
    let out = build(&mut tape, &vars);
    let out_shape = tape.shape(out).to_vec();
    let n_out = out_shape.iter().product::<usize>().max(1);
    let c = uniform(&mut rng(99), n_out, -1.0, 1.0);
    let cv = tape.constant(Tensor::new(out_shape, c.clone()).unwrap());
    let weighted = tape.mul(out, cv).unwrap();
    let loss = tape.sum(weighted);
    tape.backward(loss).unwrap();

    let xs: Vec<Vec<f64>> = inputs.iter().map(|i| to_f64(&i.data)).collect();
    let expect = reference(&xs);
    let got = tape.value(out).data();
    if got.len() != expect.len() {
        return Err(format!("{name}: output size {} vs {}", got.len(), expect.len()));
    }
    for (g, e) in got.iter().zip(&expect) {
        if (*g as f64 - e).abs() > 1e-5 * (1.0 + e.abs()) {
            return Err(format!("{name}: forward {g} vs {e}"));
        }
    }

    let c64 = to_f64(&c);
    let scalar = |xs: &[Vec<f64>]| reference(xs).iter().zip(&c64).map(|(a, b)| a * b).sum::<f64>();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let mut work = xs.clone();
        let numeric: Vec<f64> = (0..xs[k].len())
            .map(|i| {
                let orig = work[k][i];
                work[k][i] = orig + STEP;
                let up = scalar(&work);
                work[k][i] = orig - STEP;
                let down = scalar(&work);
                work[k][i] = orig;
                (up - down) / (2.0 * STEP)
            })
            .collect();
        let analytic = tape.grad(*v).ok_or_else(|| format!("{name}: input {k} got no gradient"))?;
        let err = rel_err(analytic, &numeric);
        if err > tol {
            return Err(format!("{name}: input {k} relative error {err:.3e} > {tol:.0e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn map(a: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.iter().map(|&x| f(x)).collect()
}

pub fn op_matmul() -> Outcome {
    check_op(
        "matmul",
        vec![rand_input(1, &[3, 4]), rand_input(2, &[4, 5])],
        TOL,
        |t, v| t.matmul(v[0], v[1]).unwrap(),
        |x| matmul(&x[0], &x[1], 3, 4, 5),
    )
}

pub fn op_bmm() -> Outcome {
    check_op(
        "bmm",
        vec![rand_input(3, &[2, 3, 4]), rand_input(4, &[2, 4, 2])],
        TOL,
        |t, v| t.bmm(v[0], v[1]).unwrap(),
        |x| {
            let mut out = matmul(&x[0][..12], &x[1][..8], 3, 4, 2);
            out.extend(matmul(&x[0][12..], &x[1][8..], 3, 4, 2));
            out
        },
    )
}

fn pair() -> Vec<Input> {
    vec![rand_input(5, &[2, 3]), rand_input(6, &[2, 3])]
}

pub fn op_add() -> Outcome {
    check_op("add", pair(), ELEMENTWISE_TOL, |t, v| t.add(v[0], v[1]).unwrap(), |x| zip(&x[0], &x[1], |a, b| a + b))
}

pub fn op_sub() -> Outcome {
    check_op("sub", pair(), ELEMENTWISE_TOL, |t, v| t.sub(v[0], v[1]).unwrap(), |x| zip(&x[0], &x[1], |a, b| a - b))
}

pub fn op_mul() -> Outcome {
    check_op("mul", pair(), ELEMENTWISE_TOL, |t, v| t.mul(v[0], v[1]).unwrap(), |x| zip(&x[0], &x[1], |a, b| a * b))
}

pub fn op_add_broadcast() -> Outcome {
    let mut worst = 0.0f64;
    for y_shape in [vec![4], vec![3, 4]] {
        worst = worst.max(check_op(
            "add_broadcast",
            vec![rand_input(7, &[2, 3, 4]), rand_input(8, &y_shape)],
            ELEMENTWISE_TOL,
            |t, v| t.add_broadcast(v[0], v[1]).unwrap(),
            |x| x[0].iter().enumerate().map(|(i, a)| a + x[1][i % x[1].len()]).collect(),
        )?);
    }
    Ok(worst)
}

pub fn op_scale() -> Outcome {
    check_op("scale", vec![rand_input(9, &[5])], ELEMENTWISE_TOL, |t, v| t.scale(v[0], -2.5), |x| {
        map(&x[0], |a| -2.5 * a)
    })
}

pub fn op_square() -> Outcome {
    check_op("square", vec![rand_input(10, &[5])], ELEMENTWISE_TOL, |t, v| t.square(v[0]), |x| map(&x[0], |a| a * a))
}

pub fn op_relu() -> Outcome {
    check_op("relu", vec![kinkless_input(11, &[3, 4])], ELEMENTWISE_TOL, |t, v| t.relu(v[0]), |x| map(&x[0], relu))
}

pub fn op_gelu() -> Outcome {
    check_op("gelu", vec![scaled(rand_input(12, &[3, 4]), 3.0, 0.0)], ELEMENTWISE_TOL, |t, v| t.gelu(v[0]), |x| {
        map(&x[0], gelu)
    })
}

pub fn op_softmax() -> Outcome {
    check_op(
        "softmax",
        vec![rand_input(13, &[3, 5])],
        TOL,
        |t, v| t.softmax(v[0]).unwrap(),
        |x| x[0].chunks(5).flat_map(softmax).collect(),
    )
}

pub fn op_layer_norm() -> Outcome {
    check_op(
        "layer_norm",
        vec![rand_input(14, &[4, 6]), scaled(rand_input(15, &[6]), 1.0, 1.0), rand_input(16, &[6])],
        TOL,
        |t, v| t.layer_norm(v[0], v[1], v[2]).unwrap(),
        |x| layer_norm(&x[0], &x[1], &x[2], 6),
    )
}

pub fn op_attention() -> Outcome {
    let (batch, seq, width, heads) = (2, 3, 4, 2);
    let shape = [batch * seq, width];
    check_op(
        "attention",
        vec![rand_input(17, &shape), rand_input(18, &shape), rand_input(19, &shape)],
        TOL,
        |t, v| t.attention(v[0], v[1], v[2], batch, seq, heads).unwrap(),
        |x| {
            let n = seq * width;
            (0..batch)
                .flat_map(|b| {
                    let s = b * n..(b + 1) * n;
                    attention(&x[0][s.clone()], &x[1][s.clone()], &x[2][s], seq, width, heads)
                })
                .collect()
        },
    )
}

pub fn op_reshape() -> Outcome {
    check_op("reshape", vec![rand_input(20, &[2, 6])], TOL, |t, v| t.reshape(v[0], &[3, 4]).unwrap(), |x| {
        x[0].clone()
    })
}

pub fn op_sum() -> Outcome {
    check_op("sum", vec![rand_input(21, &[2, 3])], TOL, |t, v| t.sum(v[0]), |x| vec![x[0].iter().sum()])
}

pub fn op_mean() -> Outcome {
    check_op("mean", vec![rand_input(22, &[2, 3])], TOL, |t, v| t.mean(v[0]), |x| {
        vec![x[0].iter().sum::<f64>() / 6.0]
    })
}

/// Every differentiable tape op.
pub fn all_ops() -> Vec<(&'static str, Outcome)> {
    vec![
        ("matmul", op_matmul()),
        ("bmm", op_bmm()),
        ("add", op_add()),
        ("sub", op_sub()),
        ("mul", op_mul()),
        ("add_broadcast", op_add_broadcast()),
        ("scale", op_scale()),
        ("square", op_square()),
        ("relu", op_relu()),
        ("gelu", op_gelu()),
        ("softmax", op_softmax()),
        ("layer_norm", op_layer_norm()),
        ("attention", op_attention()),
        ("reshape", op_reshape()),
        ("sum", op_sum()),
        ("mean", op_mean()),
    ]
}

fn check_named(grads: &[(String, Vec<f32>)], p: &Params, step: f64, f: impl Fn(&Params) -> f64) -> Outcome {
    if grads.len() != p.len() {
        return Err(format!("{} gradients for {} parameters", grads.len(), p.len()));
    }
    let mut worst = 0.0f64;
    for (name, g) in grads {
        let err = rel_err(g, &central_diff(p, name, step, &f));
        if err > TOL {
            return Err(format!("{name}: relative error {err:.3e} > {TOL:.0e}"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Full trajectory loss of the downsized teacher, every parameter.
pub fn teacher_objective() -> Outcome {
    let cfg = small_teacher();
    let model = TeacherModel::init(cfg, &mut RngState::new(31)).unwrap();
    let windows = random_windows(32, 3, cfg.history, cfg.horizon);
    let refs: Vec<_> = windows.iter().collect();
    let (loss, grads) = teacher_gradients(&model, &refs).map_err(|e| e.to_string())?;

    let p = params_of(model.named_params());
    let ref_loss = teacher_loss(&cfg, &p, &windows);
    if (loss as f64 - ref_loss).abs() > 1e-5 * ref_loss.max(1.0) {
        return Err(format!("teacher loss {loss} vs reference {ref_loss}"));
    }
    check_named(&grads, &p, 1e-5, |q| teacher_loss(&cfg, q, &windows))
}

/// Full composite student loss with every term active, every student and
/// projection parameter.
pub fn student_objective() -> Outcome {
    let tcfg = small_teacher();
    let teacher = TeacherModel::init(tcfg, &mut RngState::new(41)).unwrap();
    let scfg = StudentConfig {
        input_dim: 7,
        hidden_dim: 8,
        embed_dim: 4,
    };
    let student = StudentModel::init(scfg, &mut RngState::new(42)).unwrap();
    let proj = Linear::init(tcfg.model_dim, scfg.embed_dim, &mut RngState::new(43));
    let windows = random_windows(44, 5, tcfg.history, tcfg.horizon);
    let refs: Vec<_> = windows.iter().collect();
    let weights = default_weights(tcfg.horizon, 0.8).unwrap();
    let targets = teacher_targets(&teacher, &refs, &weights).unwrap();
    let cfg = DistillConfig::default();
    let (parts, grads) = student_gradients(&student, &proj, &refs, Some(&targets), &cfg).map_err(|e| e.to_string())?;
    if !(parts.logit > 0.0 && parts.feat > 0.0) {
        return Err("distillation terms are inactive".into());
    }

    let mut p = params_of(student.named_params());
    p.insert("projection.weight".into(), to_f64(proj.weight.data()));
    p.insert("projection.bias".into(), to_f64(proj.bias.data()));
    let soft: Vec<f64> = targets.iter().map(|t| t.soft as f64).collect();
    let ctx: Vec<Vec<f64>> = targets.iter().map(|t| to_f64(&t.context)).collect();
    let f = |q: &Params| composite_loss(q, &windows, &soft, &ctx, scfg.hidden_dim, scfg.embed_dim, cfg.lambda);

    let ref_total = f(&p);
    if (parts.total as f64 - ref_total).abs() > 1e-5 * ref_total.max(1.0) {
        return Err(format!("composite loss {} vs reference {ref_total}", parts.total));
    }
    check_named(&grads, &p, 1e-6, f)
}
