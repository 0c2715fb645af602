//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use mpfem::softfloat::{FloatFormat, OpKind};
use rand::Rng;

/// Significand bits and exponent range of a binary interchange format.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub t: u32,
    pub w: u32,
}

impl Layout {
    pub fn of(f: FloatFormat) -> Layout {
        Layout {
            t: f.t,
            w: f.exponent_bits,
        }
    }

    fn bias(self) -> i32 {
        (1 << (self.w - 1)) - 1
    }

    fn emin(self) -> i32 {
        1 - self.bias()
    }

    fn emax(self) -> i32 {
        self.bias()
    }

    /// Exponent of the last significand bit of a subnormal.
    fn qmin(self) -> i32 {
        self.emin() - (self.t as i32 - 1)
    }

    /// Decodes a finite encoding `(sign, biased exponent, fraction)`.
    pub fn decode(self, neg: bool, e: u32, frac: u64) -> Exact {
        let (m, q) = if e == 0 {
            (frac as u128, self.qmin())
        } else {
            ((frac | (1u64 << (self.t - 1))) as u128, e as i32 - self.bias() - (self.t as i32 - 1))
        };
        Exact { neg, m, q }
    }

    /// A random finite nonzero value, uniform over encodings.
    pub fn random(self, rng: &mut impl Rng) -> f64 {
        loop {
            let neg = rng.gen::<bool>();
            let e = rng.gen_range(0..(1u32 << self.w) - 1);
            let frac = rng.gen::<u64>() & ((1u64 << (self.t - 1)) - 1);
            if e == 0 && frac == 0 {
                continue;
            }
            return self.decode(neg, e, frac).to_f64();
        }
    }

    /// Random finite nonzero value with exponent in `[-span, span]`.
    pub fn random_moderate(self, rng: &mut impl Rng, span: i32) -> f64 {
        let e = rng.gen_range((self.bias() - span).max(1)..=(self.bias() + span).min(2 * self.bias())) as u32;
        let frac = rng.gen::<u64>() & ((1u64 << (self.t - 1)) - 1);
        self.decode(rng.gen(), e, frac).to_f64()
    }
}

/// `(-1)^neg * m * 2^q` held exactly.
#[derive(Clone, Copy, Debug)]
pub struct Exact {
    pub neg: bool,
    pub m: u128,
    pub q: i32,
}

fn two_pow(e: i32) -> f64 {
    // Split so that neither factor leaves the binary64 range.
    if e < -1000 {
        2f64.powi(-1000) * 2f64.powi(e + 1000)
    } else if e > 1000 {
        2f64.powi(1000) * 2f64.powi(e - 1000)
    } else {
        2f64.powi(e)
    }
}

impl Exact {
    pub fn from_f64(x: f64) -> Exact {
        let bits = x.to_bits();
        let neg = bits >> 63 == 1;
        let e = ((bits >> 52) & 0x7ff) as i32;
        let frac = (bits & ((1u64 << 52) - 1)) as u128;
        let (m, q) = if e == 0 { (frac, -1074) } else { (frac | (1u128 << 52), e - 1075) };
        Exact { neg, m, q }
    }

    /// Exact only when the value fits binary64 without rounding.
    pub fn to_f64(self) -> f64 {
        let v = (self.m as f64) * two_pow(self.q);
        if self.neg {
            -v
        } else {
            v
        }
    }

    /// Shifts the significand so that it has exactly `bits` bits (nonzero only).
    fn normalized(self, bits: u32) -> Exact {
        let len = 128 - self.m.leading_zeros();
        let s = bits as i32 - len as i32;
        Exact {
            m: self.m << s,
            q: self.q - s,
            ..self
        }
    }
}

/// Correctly rounded (nearest, ties to even) value of `x` in `l`, with
/// gradual underflow and overflow to infinity.
pub fn round_exact(x: Exact, l: Layout) -> f64 {
    if x.m == 0 {
        return if x.neg { -0.0 } else { 0.0 };
    }
    let len = 128 - x.m.leading_zeros() as i32;
    let lead = x.q + len - 1;
    let q = lead.max(l.emin()) - (l.t as i32 - 1);
    let m = if q > x.q {
        let s = (q - x.q) as u32;
        if s > 128 {
            0
        } else if s == 128 {
            (x.m > 1u128 << 127) as u128
        } else {
            let kept = x.m >> s;
            let rem = x.m & ((1u128 << s) - 1);
            let half = 1u128 << (s - 1);
            if rem > half || (rem == half && kept & 1 == 1) {
                kept + 1
            } else {
                kept
            }
        }
    } else {
        x.m << (x.q - q) as u32
    };
    let max_m = (1u128 << l.t) - 1;
    let top_q = l.emax() - (l.t as i32 - 1);
    let over = m > 0 && (q > top_q || (q == top_q && m > max_m));
    if over {
        return if x.neg { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    Exact { neg: x.neg, m, q }.to_f64()
}

/// `a op b` for finite nonzero `a`, `b` representable in `l`, rounded once.
pub fn oracle(a: f64, b: f64, kind: OpKind, l: Layout) -> f64 {
    let (x, y) = (Exact::from_f64(a), Exact::from_f64(b));
    let t = l.t.max(53);
    let exact = match kind {
        OpKind::Mul => Exact {
            neg: x.neg ^ y.neg,
            m: x.m * y.m,
            q: x.q + y.q,
        },
        OpKind::Add | OpKind::Sub => {
            let y = if kind == OpKind::Sub { Exact { neg: !y.neg, ..y } } else { y };
            let (x, y) = (x.normalized(t), y.normalized(t));
            let (big, small) = if (x.q, x.m) >= (y.q, y.m) { (x, y) } else { (y, x) };
            let gap = (big.q - small.q) as u32;
            let (mb, ms, q) = if gap > t + 4 {
                // `small` is far below a quarter ulp of `big`: keep only its sign.
                (big.m << (t + 4), 1u128, big.q - (t + 4) as i32)
            } else {
                (big.m << gap, small.m, small.q)
            };
            if big.neg == small.neg {
                Exact { neg: big.neg, m: mb + ms, q }
            } else if mb >= ms {
                Exact { neg: big.neg, m: mb - ms, q }
            } else {
                Exact { neg: small.neg, m: ms - mb, q }
            }
        }
        OpKind::Div => {
            let (x, y) = (x.normalized(t), y.normalized(t));
            let k = t + 3;
            let num = x.m << k;
            let quo = num / y.m;
            let sticky = (num % y.m != 0) as u128;
            Exact {
                neg: x.neg ^ y.neg,
                m: (quo << 1) | sticky,
                q: x.q - y.q - k as i32 - 1,
            }
        }
    };
    let r = round_exact(exact, l);
    if r == 0.0 && exact.m == 0 {
        0.0
    } else {
        r
    }
}
