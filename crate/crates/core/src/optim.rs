//! Bounded derivative-free maximizers: golden-section search on an interval
//! and a box-projected Nelder–Mead simplex.

use crate::model::ParamDomain;

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Final bracket width (scalar) or simplex diameter (vector).
    pub spread: f64,
    pub converged: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes `f` on `[lo, hi]`. The endpoints are also evaluated so that a
/// monotone objective returns the boundary exactly.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> OptimResult
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a) > tol && iterations < max_iter {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let (mut x, mut value) = if fc >= fd { (c, fc) } else { (d, fd) };
    for end in [lo, hi] {
        let fe = f(end);
        if fe > value {
            x = end;
            value = fe;
        }
    }
    OptimResult {
        x: vec![x],
        value,
        iterations,
        spread: b - a,
        converged: (b - a) <= tol,
    }
}

fn project(x: &mut [f64], domain: &ParamDomain) {
    for ((xi, lo), hi) in x.iter_mut().zip(domain.lower()).zip(domain.upper()) {
        *xi = xi.clamp(*lo, *hi);
    }
}

/// Nelder–Mead maximization with every trial point projected onto the box.
/// Convergence: simplex diameter (max coordinate distance to the best vertex)
/// below `tol`.
pub fn nelder_mead_max<F>(
    mut f: F,
    start: &[f64],
    domain: &ParamDomain,
    tol: f64,
    max_iter: usize,
) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let p = start.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    let mut x0 = start.to_vec();
    project(&mut x0, domain);
    simplex.push(x0.clone());
    for i in 0..p {
        let mut v = x0.clone();
        let step = 0.1 * domain.width(i);
        v[i] = if v[i] + step <= domain.upper()[i] {
            v[i] + step
        } else {
            v[i] - step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let diameter = |s: &[Vec<f64>]| {
        s[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&s[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max)
    };

    let mut iterations = 0;
    loop {
        // descending by value: best first
        let mut order: Vec<usize> = (0..=p).collect();
        order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = diameter(&simplex);
        if spread <= tol || iterations >= max_iter {
            return OptimResult {
                x: simplex[0].clone(),
                value: values[0],
                iterations,
                spread,
                converged: spread <= tol,
            };
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..p)
            .map(|i| simplex[..p].iter().map(|v| v[i]).sum::<f64>() / p as f64)
            .collect();
        let along = |t: f64| {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&simplex[p])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut x, domain);
            x
        };

        let xr = along(1.0);
        let fr = eval(&xr);
        if fr > values[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe > fr {
                simplex[p] = xe;
                values[p] = fe;
            } else {
                simplex[p] = xr;
                values[p] = fr;
            }
            continue;
        }
        if fr > values[p - 1] {
            simplex[p] = xr;
            values[p] = fr;
            continue;
        }
        let (xc, fc) = if fr > values[p] {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc > values[p].max(fr) {
            simplex[p] = xc;
            values[p] = fc;
            continue;
        }
        // shrink toward the best vertex
        for k in 1..=p {
            let shrunk: Vec<f64> = simplex[k]
                .iter()
                .zip(&simplex[0])
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            values[k] = eval(&shrunk);
            simplex[k] = shrunk;
        }
    }
}
