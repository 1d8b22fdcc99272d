//! Reference implementations shared by integration tests.

/// Hoeffding's D straight from the definition in `O(n²)` floating point:
/// per point, the midranks `R`, `S` and the bivariate count `Q` (ties weigh
/// 1/2, joint ties 1/4, the point itself excluded, plus one).
pub fn hoeffding_oracle(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    let mut d3 = 0.0;
    for i in 0..n {
        let mut r = 1.0;
        let mut s = 1.0;
        let mut q = 1.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let (xl, xe) = (x[j] < x[i], x[j] == x[i]);
            let (yl, ye) = (y[j] < y[i], y[j] == y[i]);
            r += if xl { 1.0 } else if xe { 0.5 } else { 0.0 };
            s += if yl { 1.0 } else if ye { 0.5 } else { 0.0 };
            q += match (xl, xe, yl, ye) {
                (true, _, true, _) => 1.0,
                (true, _, _, true) | (_, true, true, _) => 0.5,
                (_, true, _, true) => 0.25,
                _ => 0.0,
            };
        }
        d1 += (q - 1.0) * (q - 2.0);
        d2 += (r - 1.0) * (r - 2.0) * (s - 1.0) * (s - 2.0);
        d3 += (r - 2.0) * (s - 2.0) * (q - 1.0);
    }
    let nf = n as f64;
    let num = (nf - 2.0) * (nf - 3.0) * d1 + d2 - 2.0 * (nf - 2.0) * d3;
    let den = nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0) * (nf - 4.0);
    30.0 * num / den
}
