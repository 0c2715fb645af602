//! Round-to-nearest-even emulation of bf16, fp16, fp32 and fp64.
//!
//! Every value is carried as an `f64` snapped to the grid of its format.
//! A single operation is computed in binary64 and rounded once; for
//! formats with `t <= 25` this matches native arithmetic bit for bit.

use std::fmt;
use std::ops::{BitOr, BitOrAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Sticky IEEE exception flags.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub const NONE: Flags = Flags(0);
    pub const OVERFLOW: Flags = Flags(1);
    pub const UNDERFLOW: Flags = Flags(2);
    pub const INVALID: Flags = Flags(4);
    pub const DIV_BY_ZERO: Flags = Flags(8);

    #[inline]
    pub fn raise(&mut self, f: Flags) {
        self.0 |= f.0;
    }

    pub fn contains(self, f: Flags) -> bool {
        self.0 & f.0 == f.0 && f.0 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Short names joined by `|`, or `-` when empty.
    pub fn describe(self) -> String {
        let mut parts = Vec::new();
        for (f, name) in [
            (Flags::OVERFLOW, "overflow"),
            (Flags::UNDERFLOW, "underflow"),
            (Flags::INVALID, "invalid"),
            (Flags::DIV_BY_ZERO, "divbyzero"),
        ] {
            if self.contains(f) {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "-".to_string()
        } else {
            parts.join("|")
        }
    }
}

impl Serialize for Flags {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.describe())
    }
}

impl BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

impl BitOrAssign for Flags {
    fn bitor_assign(&mut self, rhs: Flags) {
        self.0 |= rhs.0;
    }
}

impl fmt::Debug for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Flags({})", self.describe())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum SubnormalPolicy {
    #[default]
    Supported,
    FlushToZero,
}

/// A binary floating-point format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FloatFormat {
    name: &'static str,
    /// Significand bits including the implicit bit.
    pub t: u32,
    pub exponent_bits: u32,
    pub subnormal_policy: SubnormalPolicy,
}

impl FloatFormat {
    pub const BF16: FloatFormat = FloatFormat::named("bf16", 8, 8);
    pub const FP16: FloatFormat = FloatFormat::named("fp16", 11, 5);
    pub const FP32: FloatFormat = FloatFormat::named("fp32", 24, 8);
    pub const FP64: FloatFormat = FloatFormat::named("fp64", 53, 11);

    pub const ALL: [FloatFormat; 4] = [
        FloatFormat::FP64,
        FloatFormat::FP32,
        FloatFormat::FP16,
        FloatFormat::BF16,
    ];

    const fn named(name: &'static str, t: u32, exponent_bits: u32) -> FloatFormat {
        FloatFormat {
            name,
            t,
            exponent_bits,
            subnormal_policy: SubnormalPolicy::Supported,
        }
    }

    pub fn with_policy(mut self, policy: SubnormalPolicy) -> FloatFormat {
        self.subnormal_policy = policy;
        self
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn emax(&self) -> i32 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    pub fn emin(&self) -> i32 {
        1 - self.emax()
    }

    /// Unit roundoff `2^-t`.
    pub fn u(&self) -> f64 {
        pow2(-(self.t as i32))
    }

    pub fn x_min(&self) -> f64 {
        pow2(self.emin())
    }

    pub fn x_max(&self) -> f64 {
        (2.0 - pow2(1 - self.t as i32)) * pow2(self.emax())
    }

    /// Smallest positive subnormal.
    pub fn x_min_sub(&self) -> f64 {
        pow2(self.emin() + 1 - self.t as i32)
    }

    /// True when `self` has a smaller unit roundoff than `other`.
    pub fn finer_than(&self, other: &FloatFormat) -> bool {
        self.t > other.t
    }

    fn ftz(&self) -> bool {
        self.subnormal_policy == SubnormalPolicy::FlushToZero
    }

    /// Rounds `x` to this format, raising flags into `flags`.
    #[inline]
    pub fn round(&self, x: f64, flags: &mut Flags) -> f64 {
        if self.t >= 53 {
            round_wide(x, self.ftz(), flags)
        } else {
            round_narrow(x, self.t, self.emin(), self.x_max(), self.ftz(), flags)
        }
    }

    /// Rounds `x`, discarding flags.
    pub fn quantize(&self, x: f64) -> f64 {
        let mut fl = Flags::NONE;
        self.round(x, &mut fl)
    }

    pub fn is_representable(&self, x: f64) -> bool {
        if !x.is_finite() {
            return true;
        }
        self.quantize(x).to_bits() == x.to_bits()
    }

    #[inline]
    pub fn add(&self, a: f64, b: f64, flags: &mut Flags) -> f64 {
        self.apply(a, b, OpKind::Add, flags)
    }

    #[inline]
    pub fn sub(&self, a: f64, b: f64, flags: &mut Flags) -> f64 {
        self.apply(a, b, OpKind::Sub, flags)
    }

    #[inline]
    pub fn mul(&self, a: f64, b: f64, flags: &mut Flags) -> f64 {
        self.apply(a, b, OpKind::Mul, flags)
    }

    #[inline]
    pub fn div(&self, a: f64, b: f64, flags: &mut Flags) -> f64 {
        self.apply(a, b, OpKind::Div, flags)
    }

    #[inline]
    pub fn apply(&self, a: f64, b: f64, kind: OpKind, flags: &mut Flags) -> f64 {
        let r = exact_op(a, b, kind, flags);
        self.round(r, flags)
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

impl FromStr for FloatFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<FloatFormat> {
        match s {
            "fp64" => Ok(FloatFormat::FP64),
            "fp32" => Ok(FloatFormat::FP32),
            "fp16" => Ok(FloatFormat::FP16),
            "bf16" => Ok(FloatFormat::BF16),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

impl Serialize for FloatFormat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name)
    }
}

impl<'de> Deserialize<'de> for FloatFormat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<FloatFormat, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div];
}

#[inline]
fn exact_op(a: f64, b: f64, kind: OpKind, flags: &mut Flags) -> f64 {
    let r = match kind {
        OpKind::Add => a + b,
        OpKind::Sub => a - b,
        OpKind::Mul => a * b,
        OpKind::Div => {
            if b == 0.0 && a.is_finite() && a != 0.0 {
                flags.raise(Flags::DIV_BY_ZERO);
            }
            a / b
        }
    };
    if r.is_nan() && !a.is_nan() && !b.is_nan() {
        flags.raise(Flags::INVALID);
    } else if r.is_infinite() && a.is_finite() && b.is_finite() && !(kind == OpKind::Div && b == 0.0) {
        flags.raise(Flags::OVERFLOW);
    }
    r
}

pub(crate) fn pow2(e: i32) -> f64 {
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (e + 1074))
    }
}

#[inline(always)]
fn round_wide(x: f64, ftz: bool, flags: &mut Flags) -> f64 {
    if x.is_nan() {
        flags.raise(Flags::INVALID);
        return f64::NAN;
    }
    if ftz && x != 0.0 && x.abs() < f64::MIN_POSITIVE {
        flags.raise(Flags::UNDERFLOW);
        return 0.0f64.copysign(x);
    }
    x
}

/// Rounds to a format with `t < 53` significand bits and minimum exponent `emin`.
#[inline(always)]
fn round_narrow(x: f64, t: u32, emin: i32, x_max: f64, ftz: bool, flags: &mut Flags) -> f64 {
    let bits = x.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i32 - 1023;
    if e >= emin {
        if e == 1024 {
            if x.is_nan() {
                flags.raise(Flags::INVALID);
                return f64::NAN;
            }
            return x;
        }
        let shift = 53 - t;
        let lsb = (bits >> shift) & 1;
        let mask = (1u64 << shift) - 1;
        let r = f64::from_bits((bits + (mask >> 1) + lsb) & !mask);
        if r.abs() > x_max {
            flags.raise(Flags::OVERFLOW);
            return f64::INFINITY.copysign(x);
        }
        r
    } else {
        round_tiny(x, t, emin, ftz, flags)
    }
}

#[cold]
#[inline(never)]
fn round_tiny(x: f64, t: u32, emin: i32, ftz: bool, flags: &mut Flags) -> f64 {
    let a = x.abs();
    // Adding a power of two whose ulp is the subnormal quantum rounds `a`
    // to that quantum in one step, ties to even.
    let big = pow2(emin - t as i32 + 53);
    let mut r = (a + big) - big;
    if r != a {
        flags.raise(Flags::UNDERFLOW);
    }
    if ftz && r != 0.0 && r < pow2(emin) {
        flags.raise(Flags::UNDERFLOW);
        r = 0.0;
    }
    r.copysign(x)
}

/// Compile-time rounding for hot loops.
pub trait Rounding: Copy + Send + Sync + 'static {
    fn format(&self) -> FloatFormat;
    fn round(&self, x: f64, flags: &mut Flags) -> f64;

    #[inline(always)]
    fn add(&self, a: f64, b: f64, flags: &mut Flags) -> f64 {
        self.round(a + b, flags)
    }

    #[inline(always)]
    fn mul(&self, a: f64, b: f64, flags: &mut Flags) -> f64 {
        self.round(a * b, flags)
    }

    /// `round(c + round(a * b))`: the two-rounding multiply-add step.
    #[inline(always)]
    fn madd(&self, c: f64, a: f64, b: f64, flags: &mut Flags) -> f64 {
        let p = self.round(a * b, flags);
        self.round(c + p, flags)
    }
}

impl Rounding for FloatFormat {
    fn format(&self) -> FloatFormat {
        *self
    }
    #[inline]
    fn round(&self, x: f64, flags: &mut Flags) -> f64 {
        FloatFormat::round(self, x, flags)
    }
}

/// Fixed narrow format: `T` significand bits, minimum exponent `EMIN`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Narrow<const T: u32, const EMIN: i32, const FTZ: bool>;

impl<const T: u32, const EMIN: i32, const FTZ: bool> Narrow<T, EMIN, FTZ> {
    const X_MAX: f64 = f64::from_bits(
        (((1 - EMIN + 1023) as u64) << 52) | (((1u64 << (T - 1)) - 1) << (53 - T)),
    );
}

impl<const T: u32, const EMIN: i32, const FTZ: bool> Rounding for Narrow<T, EMIN, FTZ> {
    fn format(&self) -> FloatFormat {
        let base = match T {
            8 => FloatFormat::BF16,
            11 => FloatFormat::FP16,
            _ => FloatFormat::FP32,
        };
        if FTZ {
            base.with_policy(SubnormalPolicy::FlushToZero)
        } else {
            base
        }
    }

    #[inline(always)]
    fn round(&self, x: f64, flags: &mut Flags) -> f64 {
        round_narrow(x, T, EMIN, Self::X_MAX, FTZ, flags)
    }
}

/// Binary64, the carrier's own arithmetic.
#[derive(Clone, Copy, Debug, Default)]
pub struct Wide<const FTZ: bool>;

impl<const FTZ: bool> Rounding for Wide<FTZ> {
    fn format(&self) -> FloatFormat {
        if FTZ {
            FloatFormat::FP64.with_policy(SubnormalPolicy::FlushToZero)
        } else {
            FloatFormat::FP64
        }
    }

    #[inline(always)]
    fn round(&self, x: f64, flags: &mut Flags) -> f64 {
        if FTZ {
            round_wide(x, true, flags)
        } else {
            if x.is_nan() {
                flags.raise(Flags::INVALID);
            }
            x
        }
    }
}

pub type Bf16 = Narrow<8, -126, false>;
pub type Fp16 = Narrow<11, -14, false>;
pub type Fp32 = Narrow<24, -126, false>;
pub type Fp64 = Wide<false>;

/// A computation generic over the rounding type, run by [`dispatch`].
pub trait WithRounding {
    type Output;
    fn run<R: Rounding>(self, r: R) -> Self::Output;
}

/// Calls `w.run` with the monomorphized rounding for `fmt`.
/// `ftz` overrides the format's own subnormal policy when true.
pub fn dispatch<W: WithRounding>(fmt: FloatFormat, ftz: bool, w: W) -> W::Output {
    let ftz = ftz || fmt.ftz();
    match (fmt.t, fmt.exponent_bits, ftz) {
        (8, 8, false) => w.run(Narrow::<8, -126, false>),
        (8, 8, true) => w.run(Narrow::<8, -126, true>),
        (11, 5, false) => w.run(Narrow::<11, -14, false>),
        (11, 5, true) => w.run(Narrow::<11, -14, true>),
        (24, 8, false) => w.run(Narrow::<24, -126, false>),
        (24, 8, true) => w.run(Narrow::<24, -126, true>),
        (53, 11, false) => w.run(Wide::<false>),
        (53, 11, true) => w.run(Wide::<true>),
        _ => w.run(fmt.with_policy(if ftz {
            SubnormalPolicy::FlushToZero
        } else {
            SubnormalPolicy::Supported
        })),
    }
}

/// A value together with its format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftScalar {
    pub value: f64,
    pub format: FloatFormat,
}

impl SoftScalar {
    pub fn to_f64(self) -> f64 {
        self.value
    }
}

/// Per-task arithmetic context carrying sticky flags.
#[derive(Clone, Debug, Default)]
pub struct FpContext {
    pub flags: Flags,
}

impl FpContext {
    pub fn new() -> FpContext {
        FpContext::default()
    }

    pub fn round_to(&mut self, x: f64, fmt: FloatFormat) -> SoftScalar {
        SoftScalar {
            value: fmt.round(x, &mut self.flags),
            format: fmt,
        }
    }

    pub fn op(&mut self, a: SoftScalar, b: SoftScalar, kind: OpKind, fmt: FloatFormat) -> SoftScalar {
        SoftScalar {
            value: fmt.apply(a.value, b.value, kind, &mut self.flags),
            format: fmt,
        }
    }

    pub fn cast(&mut self, a: SoftScalar, fmt_to: FloatFormat) -> SoftScalar {
        self.round_to(a.value, fmt_to)
    }

    pub fn take_flags(&mut self) -> Flags {
        std::mem::take(&mut self.flags)
    }
}

/// `round_to` without an explicit context; returns the flags raised.
pub fn round_to(x: f64, fmt: FloatFormat) -> (SoftScalar, Flags) {
    let mut ctx = FpContext::new();
    let s = ctx.round_to(x, fmt);
    (s, ctx.flags)
}

pub fn op(a: SoftScalar, b: SoftScalar, kind: OpKind, fmt: FloatFormat) -> (SoftScalar, Flags) {
    let mut ctx = FpContext::new();
    let s = ctx.op(a, b, kind, fmt);
    (s, ctx.flags)
}

pub fn cast(a: SoftScalar, fmt_to: FloatFormat) -> (SoftScalar, Flags) {
    round_to(a.value, fmt_to)
}
