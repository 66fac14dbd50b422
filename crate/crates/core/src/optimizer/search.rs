/// Inverse golden ratio, (√5 − 1)/2.
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`,
/// stopping once the bracket is narrower than `tol`. Returns `(x, f(x))`.
pub(crate) fn golden_section_max(
    f: impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> (f64, f64) {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

pub(crate) struct GridScan {
    pub points: Vec<(f64, f64)>,
    pub argmax: usize,
    pub local_maxima: usize,
}

/// Evaluates `f` on `count` evenly spaced points spanning `[a, b]`.
pub(crate) fn grid_scan(f: impl Fn(f64) -> f64, a: f64, b: f64, count: usize) -> GridScan {
    let count = count.max(2);
    let step = (b - a) / (count - 1) as f64;
    let points: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            let x = if i + 1 == count { b } else { a + step * i as f64 };
            (x, f(x))
        })
        .collect();
    let mut argmax = 0;
    for (i, p) in points.iter().enumerate() {
        if p.1 > points[argmax].1 {
            argmax = i;
        }
    }
    let local_maxima = (0..count)
        .filter(|&i| {
            let left = i == 0 || points[i].1 > points[i - 1].1;
            let right = i + 1 == count || points[i].1 >= points[i + 1].1;
            left && right
        })
        .count();
    GridScan {
        points,
        argmax,
        local_maxima,
    }
}
