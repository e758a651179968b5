//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code under test except for plain data types.

#![allow(dead_code)]

/// Levenshtein distance by direct recursion over suffixes, memoized on the
/// (i, j) pair only to keep runtime bounded.
pub fn edit_distance_recursive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == a.len() {
            b.len() - j
        } else if j == b.len() {
            a.len() - i
        } else {
            let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
            let del = go(a, b, i + 1, j, memo) + 1;
            let ins = go(a, b, i, j + 1, memo) + 1;
            sub.min(del).min(ins)
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, 0, 0, &mut memo)
}

/// Weights of one LoRA head laid out explicitly as matrices, counted entry
/// by entry.
pub fn lora_head_weights_enumerated(d_k: usize, d_model: usize, r: usize, fused: bool) -> usize {
    // (rows, cols) of every matrix: A maps the layer input down to r, B maps
    // r up to the projection output.
    let shapes: Vec<(usize, usize)> = if fused {
        vec![(d_model, r), (r, 3 * d_k)]
    } else {
        (0..3).flat_map(|_| [(d_model, r), (r, d_k)]).collect()
    };
    let mut n = 0;
    for (rows, cols) in shapes {
        for _ in 0..rows {
            for _ in 0..cols {
                n += 1;
            }
        }
    }
    n
}

/// Scalar AdamW written from the textbook recurrence.
pub struct ScalarAdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub wd: f64,
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdamW {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, wd: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            wd,
            m: 0.0,
            v: 0.0,
            t: 0,
        }
    }

    pub fn step(&mut self, p: f64, g: f64) -> f64 {
        self.t += 1;
        let p = p - self.lr * self.wd * p;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g;
        let m_hat = self.m / (1.0 - self.beta1.powi(self.t));
        let v_hat = self.v / (1.0 - self.beta2.powi(self.t));
        p - self.lr * m_hat / (v_hat.sqrt() + self.eps)
    }
}

/// Double-double value `hi + lo`.
#[derive(Clone, Copy, Debug)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DD {
    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: DD) -> DD {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = two_sum(s, e);
        DD { hi, lo }
    }

    pub fn mul(self, o: DD) -> DD {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = two_sum(p, e);
        DD { hi, lo }
    }

    pub fn div_f64(self, d: f64) -> DD {
        let q1 = self.hi / d;
        let (p, e) = two_prod(q1, d);
        let r = (self.hi - p - e + self.lo) / d;
        let (hi, lo) = two_sum(q1, r);
        DD { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// `exp(x)` for |x| small enough, in double-double via Taylor series after
/// halving the argument.
fn exp_dd(x: f64) -> DD {
    let k = 10;
    let y = x / f64::from(1 << k);
    let mut term = DD::new(1.0);
    let mut sum = DD::new(1.0);
    for n in 1..30 {
        term = term.mul(DD::new(y)).div_f64(n as f64);
        sum = sum.add(term);
    }
    for _ in 0..k {
        sum = sum.mul(sum);
    }
    sum
}

/// Natural log of a double-double by Newton refinement of the f64 log.
fn ln_dd(x: DD) -> DD {
    let mut y = DD::new(x.hi.ln());
    for _ in 0..2 {
        // y += x * exp(-y) - 1
        let e = exp_dd(-y.to_f64());
        let corr = x.mul(e).add(DD::new(-1.0));
        y = y.add(corr);
    }
    y
}

/// Mean squared log-partition over rows, accumulated in double-double.
pub fn z_loss_dd(rows: &[Vec<f64>]) -> f64 {
    let mut total = DD::new(0.0);
    for row in rows {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = DD::new(0.0);
        for &v in row {
            s = s.add(exp_dd(v - max));
        }
        let lse = ln_dd(s).add(DD::new(max));
        total = total.add(lse.mul(lse));
    }
    total.to_f64() / rows.len() as f64
}

/// Relative error `|a - n| / max(|a| + |n|, floor)` over whole vectors,
/// in the 2-norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(floor)
}

/// `sqrt(bs) * base` written out without the library helper.
pub fn sqrt_scaled(base: f64, per_device: usize, devices: usize) -> f64 {
    base * ((per_device * devices) as f64).sqrt()
}
