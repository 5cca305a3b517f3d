use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use respec_core::qp::{kkt_residual, solve};
use respec_core::spec::{BinOp, EntityField, EvalNotes, Expr, Func, RobotField};
use respec_core::world::Overlay;

use crate::Outcome;

const GRADIENT_CASES: usize = 100;
const GRADIENT_TOL: f64 = 1e-6;
const KKT_TOL: f64 = 1e-6;
const QP2_CASES: usize = 200;
const QP2_TOL: f64 = 1e-4;

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn random_vector(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    match rng.gen_range(0..4) {
        0 => Expr::RobotXy,
        1 => Expr::Entity {
            name: ["a", "b"][rng.gen_range(0..2)].into(),
            field: EntityField::Xy,
        },
        2 if depth > 0 => Expr::Vec2(b(random_scalar(rng, depth - 1)), b(random_scalar(rng, depth - 1))),
        _ => Expr::Bin(
            BinOp::Sub,
            b(Expr::RobotXy),
            b(Expr::Entity {
                name: "a".into(),
                field: EntityField::Xy,
            }),
        ),
    }
}

fn random_scalar(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.2) {
        return match rng.gen_range(0..3) {
            0 => Expr::Num(rng.gen_range(-2.0..2.0)),
            1 => Expr::Robot(RobotField::ALL[rng.gen_range(0..6)]),
            _ => Expr::Entity {
                name: ["a", "b"][rng.gen_range(0..2)].into(),
                field: [EntityField::X, EntityField::Y, EntityField::Z][rng.gen_range(0..3)],
            },
        };
    }
    let d = depth - 1;
    match rng.gen_range(0..11) {
        0 => Expr::Neg(b(random_scalar(rng, d))),
        1 => Expr::Bin(BinOp::Add, b(random_scalar(rng, d)), b(random_scalar(rng, d))),
        2 => Expr::Bin(BinOp::Sub, b(random_scalar(rng, d)), b(random_scalar(rng, d))),
        3 => Expr::Bin(BinOp::Mul, b(random_scalar(rng, d)), b(random_scalar(rng, d))),
        4 => Expr::Bin(BinOp::Div, b(random_scalar(rng, d)), b(random_scalar(rng, d))),
        5 => Expr::Call(Func::Abs, vec![random_scalar(rng, d)]),
        6 => Expr::Call(Func::Sin, vec![random_scalar(rng, d)]),
        7 => Expr::Call(Func::Cos, vec![random_scalar(rng, d)]),
        8 => Expr::Call(Func::Atan2, vec![random_scalar(rng, d), random_scalar(rng, d)]),
        9 => Expr::Call(Func::Wrap, vec![random_scalar(rng, d)]),
        _ => Expr::Call(Func::Norm2, vec![random_vector(rng, d)]),
    }
}

fn value(e: &Expr, x: &[f64; 6], entities: &BTreeMap<String, [f64; 3]>) -> Option<f64> {
    e.eval(&Overlay { robot: *x, entities }).ok()
}

/// Central difference with one Richardson extrapolation step.
fn richardson(e: &Expr, x: &[f64; 6], entities: &BTreeMap<String, [f64; 3]>, i: usize, h: f64) -> Option<f64> {
    let central = |h: f64| -> Option<f64> {
        let (mut p, mut m) = (*x, *x);
        p[i] += h;
        m[i] -= h;
        Some((value(e, &p, entities)? - value(e, &m, entities)?) / (2.0 * h))
    };
    Some((4.0 * central(h / 2.0)? - central(h)?) / 3.0)
}

/// One-sided slopes; disagreement marks a kink or jump near `x`.
fn smooth_near(e: &Expr, x: &[f64; 6], entities: &BTreeMap<String, [f64; 3]>, i: usize, h: f64) -> Option<bool> {
    let f0 = value(e, x, entities)?;
    let (mut p, mut m) = (*x, *x);
    p[i] += h;
    m[i] -= h;
    let fwd = (value(e, &p, entities)? - f0) / h;
    let bwd = (f0 - value(e, &m, entities)?) / h;
    Some((fwd - bwd).abs() <= 1e-2 * fwd.abs().max(bwd.abs()).max(1.0))
}

fn gradients() -> (usize, usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut checked, mut skipped, mut failed) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    while checked < GRADIENT_CASES {
        let e = random_scalar(&mut rng, 4);
        let mut x = [0.0; 6];
        for (i, v) in x.iter_mut().enumerate() {
            *v = if i >= 3 { rng.gen_range(0.1..2.0) } else { rng.gen_range(-3.0..3.0) };
        }
        let entities: BTreeMap<String, [f64; 3]> = ["a", "b"]
            .iter()
            .map(|n| (n.to_string(), [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.0..1.0)]))
            .collect();
        let env = Overlay { robot: x, entities: &entities };
        let mut notes = EvalNotes::default();
        let Ok(dual) = e.eval_dual(&env, &mut notes) else {
            skipped += 1;
            continue;
        };
        if notes.nondifferentiable || dual.v.abs() > 1e4 || dual.d.iter().any(|g| g.abs() > 1e4) {
            skipped += 1;
            continue;
        }
        let h = 1e-3;
        let mut fd = [0.0; 6];
        let mut usable = true;
        for i in 0..6 {
            match (smooth_near(&e, &x, &entities, i, h), richardson(&e, &x, &entities, i, h)) {
                (Some(true), Some(d)) => fd[i] = d,
                _ => usable = false,
            }
        }
        if !usable {
            skipped += 1;
            continue;
        }
        let scale = fd.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let err = dual.d.iter().zip(&fd).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
        checked += 1;
        failed += usize::from(err > GRADIENT_TOL);
    }
    (checked, skipped, failed, worst)
}

/// Random strictly convex QP with a known interior point.
fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let b = &g * &x0 - DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));
    (h, c, g, b)
}

fn kkt() -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (total, mut failed) = (200, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..total {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(0..=20);
        let (h, c, g, b) = random_qp(&mut rng, n, m);
        match solve(&h, &c, &g, &b) {
            Ok(s) => {
                let r = kkt_residual(&h, &c, &g, &b, &s.x, &s.multipliers);
                worst = worst.max(r);
                failed += usize::from(r > KKT_TOL);
            }
            Err(_) => failed += 1,
        }
    }
    (total, failed, worst)
}

struct Plane {
    h: [[f64; 2]; 2],
    c: [f64; 2],
    rows: Vec<([f64; 2], f64)>,
}

impl Plane {
    fn objective(&self, x: [f64; 2]) -> f64 {
        let h = &self.h;
        0.5 * (h[0][0] * x[0] * x[0] + 2.0 * h[0][1] * x[0] * x[1] + h[1][1] * x[1] * x[1]) + self.c[0] * x[0] + self.c[1] * x[1]
    }

    /// Feasible range of the second coordinate for a fixed first one, and
    /// the largest violation of rows that do not involve it.
    fn slice(&self, x1: f64) -> (f64, f64, f64) {
        let (mut lo, mut hi, mut flat) = (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (a, b) in &self.rows {
            let r = b - a[0] * x1;
            if a[1].abs() < 1e-12 {
                flat = flat.max(r);
            } else if a[1] > 0.0 {
                lo = lo.max(r / a[1]);
            } else {
                hi = hi.min(r / a[1]);
            }
        }
        (lo, hi, flat)
    }

    fn infeasibility(&self, x1: f64) -> f64 {
        let (lo, hi, flat) = self.slice(x1);
        (lo - hi).max(flat)
    }

    /// Best objective over the slice at `x1`, with the exact minimizer in the
    /// second coordinate.
    fn best_at(&self, x1: f64) -> f64 {
        let (lo, hi, flat) = self.slice(x1);
        if lo > hi + 1e-12 || flat > 1e-12 {
            return f64::INFINITY;
        }
        let x2 = (-(self.h[0][1] * x1 + self.c[1]) / self.h[1][1]).clamp(lo, hi.max(lo));
        self.objective([x1, x2])
    }
}

fn ternary(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    0.5 * (a + b)
}

/// Dense grid over the first coordinate, then refinement of the convex
/// value function on the feasible interval around the best grid point.
fn grid_oracle(p: &Plane) -> f64 {
    const N: usize = 4001;
    let xs: Vec<f64> = (0..N).map(|i| -2.0 + 4.0 * i as f64 / (N - 1) as f64).collect();
    let (mut best_i, mut best) = (None, f64::INFINITY);
    for (i, &x1) in xs.iter().enumerate() {
        let v = p.best_at(x1);
        if v < best {
            best = v;
            best_i = Some(i);
        }
    }
    // The feasible set projects onto an interval; find it by bisection from
    // the least infeasible point so thin sets between grid points count too.
    let centre = best_i.map_or_else(|| ternary(-2.0, 2.0, |x| p.infeasibility(x)), |i| xs[i]);
    if p.infeasibility(centre) > 1e-12 {
        return f64::INFINITY;
    }
    let edge = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if p.infeasibility(mid) <= 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    let left = if p.infeasibility(-2.0) <= 0.0 { -2.0 } else { edge(centre, -2.0) };
    let right = if p.infeasibility(2.0) <= 0.0 { 2.0 } else { edge(centre, 2.0) };
    let x1 = ternary(left, right, |x| p.best_at(x));
    best.min(p.best_at(x1))
}

fn planar() -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut agree, mut compared) = (0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..QP2_CASES {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let hm = &a * a.transpose() + DMatrix::identity(2, 2) * 0.05;
        let c = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let mut rows = vec![([1.0, 0.0], -2.0), ([-1.0, 0.0], -2.0), ([0.0, 1.0], -2.0), ([0.0, -1.0], -2.0)];
        let x0 = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
        for _ in 0..rng.gen_range(0..=4) {
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let n = [ang.cos(), ang.sin()];
            rows.push((n, n[0] * x0[0] + n[1] * x0[1] - rng.gen_range(0.0..1.0)));
        }
        let p = Plane {
            h: [[hm[(0, 0)], hm[(0, 1)]], [hm[(1, 0)], hm[(1, 1)]]],
            c,
            rows,
        };
        let g = DMatrix::from_fn(p.rows.len(), 2, |i, j| p.rows[i].0[j]);
        let bv = DVector::from_iterator(p.rows.len(), p.rows.iter().map(|r| r.1));
        let cv = DVector::from_row_slice(&c);
        let Ok(sol) = solve(&hm, &cv, &g, &bv) else {
            compared += 1;
            continue;
        };
        let oracle = grid_oracle(&p);
        let gap = (sol.objective - oracle).abs();
        worst = worst.max(gap);
        compared += 1;
        agree += usize::from(gap <= QP2_TOL);
    }
    (agree, compared, worst)
}

pub fn run() -> Outcome {
    let (checked, skipped, grad_fail, grad_worst) = gradients();
    let (total, kkt_fail, kkt_worst) = kkt();
    let (agree, compared, qp_worst) = planar();
    Outcome::new(
        grad_fail == 0 && kkt_fail == 0 && agree == compared && compared == QP2_CASES,
        format!(
            "gradients {}/{checked} within {GRADIENT_TOL:e} (worst {grad_worst:.1e}, {skipped} kinked or undefined skipped); \
             KKT {}/{} within {KKT_TOL:e} (worst {kkt_worst:.1e}); 2-D QPs {agree}/{compared} within {QP2_TOL:e} of grid oracle (worst {qp_worst:.1e})",
            checked - grad_fail,
            total - kkt_fail,
            total,
        ),
    )
}
