//! One-dimensional adaptive quadrature specialised to log-concave integrands.
//!
//! Integrands are passed in log form. The envelope step locates the mode,
//! measures the width of the peak and walks outward geometrically until the
//! log-density has dropped by `drop` nats; concavity then bounds the ignored
//! tail mass by the secant slope at the last probe. The probe points become
//! breakpoints of an adaptive Gauss–Kronrod (10/21) rule, so narrow peaks are
//! never straddled by a single panel.

use crate::error::{Error, Result};
use rand::Rng;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_36,
    0.295_524_224_714_752_87,
];

#[derive(Clone, Copy, Debug)]
pub struct Panel<const N: usize> {
    pub a: f64,
    pub b: f64,
    pub value: [f64; N],
    pub error: [f64; N],
    frozen: bool,
}

/// Single 21-point Kronrod panel with the QUADPACK error heuristic.
pub fn gk21<const N: usize, F: FnMut(f64) -> [f64; N]>(f: &mut F, a: f64, b: f64) -> Panel<N> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = [0.0; N];
    let mut resg = [0.0; N];
    let mut resabs = [0.0; N];
    let mut samples = [[[0.0; N]; 2]; 10];
    for k in 0..N {
        resk[k] = WGK[10] * fc[k];
        resabs[k] = WGK[10] * fc[k].abs();
    }
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..N {
            resk[k] += WGK[j] * (f1[k] + f2[k]);
            resabs[k] += WGK[j] * (f1[k].abs() + f2[k].abs());
            if j % 2 == 1 {
                resg[k] += WG[j / 2] * (f1[k] + f2[k]);
            }
        }
        samples[j] = [f1, f2];
    }
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for k in 0..N {
        let mean = 0.5 * resk[k];
        let mut resasc = WGK[10] * (fc[k] - mean).abs();
        for j in 0..10 {
            resasc += WGK[j] * ((samples[j][0][k] - mean).abs() + (samples[j][1][k] - mean).abs());
        }
        let hh = h.abs();
        value[k] = resk[k] * h;
        let mut err = ((resk[k] - resg[k]) * h).abs();
        let resasc = resasc * hh;
        if resasc != 0.0 && err != 0.0 {
            err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
        }
        let floor = 50.0 * f64::EPSILON * resabs[k] * hh;
        error[k] = err.max(floor);
    }
    Panel {
        a,
        b,
        value,
        error,
        frozen: false,
    }
}

/// Kronrod nodes and weights of one panel, for reusing a converged partition.
pub fn kronrod_nodes(a: f64, b: f64) -> [(f64, f64); 21] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(c, WGK[10] * h); 21];
    for j in 0..10 {
        out[2 * j] = (c - h * XGK[j], WGK[j] * h);
        out[2 * j + 1] = (c + h * XGK[j], WGK[j] * h);
    }
    out
}

#[derive(Clone, Debug)]
pub struct Adaptive<const N: usize> {
    pub panels: Vec<Panel<N>>,
    pub value: [f64; N],
    pub error: [f64; N],
    pub converged: bool,
}

/// Globally adaptive bisection over the intervals delimited by `breaks`.
///
/// Component `k` is accepted once its summed error is below
/// `max(rel * |value_k|, abs[k])`.
pub fn adaptive<const N: usize, F: FnMut(f64) -> [f64; N]>(
    mut f: F,
    breaks: &[f64],
    rel: f64,
    abs: [f64; N],
    max_panels: usize,
) -> Adaptive<N> {
    let mut panels: Vec<Panel<N>> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk21(&mut f, w[0], w[1]))
        .collect();
    loop {
        let mut value = [0.0; N];
        let mut error = [0.0; N];
        for p in &panels {
            for k in 0..N {
                value[k] += p.value[k];
                error[k] += p.error[k];
            }
        }
        let tol: Vec<f64> = (0..N).map(|k| (rel * value[k].abs()).max(abs[k])).collect();
        let done = (0..N).all(|k| error[k] <= tol[k]);
        let worst = panels
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.frozen)
            .map(|(i, p)| {
                let score = (0..N)
                    .map(|k| p.error[k] / tol[k].max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                (i, score)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1));
        let Some((i, _)) = worst.filter(|_| !done && panels.len() < max_panels) else {
            return Adaptive {
                panels,
                value,
                error,
                converged: done,
            };
        };
        let p = panels[i];
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b || (p.b - p.a) <= 1e-15 * (p.a.abs() + p.b.abs()) {
            panels[i].frozen = true;
            continue;
        }
        let left = gk21(&mut f, p.a, mid);
        let right = gk21(&mut f, mid, p.b);
        panels[i] = left;
        panels.insert(i + 1, right);
    }
}

/// Options for integrating `exp(logf)` over `(lo, hi)`.
#[derive(Clone, Debug)]
pub struct LcOptions {
    pub lo: f64,
    pub hi: f64,
    /// Starting point for the mode search.
    pub guess: f64,
    /// Rough length scale of the integrand, used for the first probe.
    pub scale: f64,
    /// Points where the integrand may have kinks.
    pub breaks: Vec<f64>,
    pub rel_tol: f64,
    /// Truncation depth in nats below the peak.
    pub drop: f64,
    pub max_panels: usize,
}

impl Default for LcOptions {
    fn default() -> Self {
        LcOptions {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            guess: 0.0,
            scale: 1.0,
            breaks: Vec::new(),
            rel_tol: 1e-13,
            drop: 46.0,
            max_panels: 2000,
        }
    }
}

impl LcOptions {
    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn with_guess(mut self, guess: f64, scale: f64) -> Self {
        self.guess = guess;
        self.scale = scale.abs().max(1e-300);
        self
    }

    pub fn with_breaks(mut self, breaks: Vec<f64>) -> Self {
        self.breaks = breaks;
        self
    }
}

/// Location of the mass of a log-concave integrand.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub mode: f64,
    pub peak: f64,
    pub lo: f64,
    pub hi: f64,
    /// Width at which the log-integrand has fallen by one nat (geometric mean of both sides).
    pub width: f64,
    /// Upper bound on the truncated mass, in units of `exp(peak)`.
    pub tail: f64,
    pub probes: Vec<f64>,
}

fn checked<L: Fn(f64) -> f64>(logf: &L, y: f64) -> Result<f64> {
    let v = logf(y);
    if v.is_nan() {
        return Err(Error::Domain(format!("log-integrand is NaN at {y}")));
    }
    if v == f64::INFINITY {
        return Err(Error::Divergent(format!("log-integrand is +inf at {y}")));
    }
    Ok(v)
}

fn golden_max<L: Fn(f64) -> f64>(logf: &L, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let tol = 1e-10 * (b - a) + 1e-15 * (a.abs() + b.abs());
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    let mut fc = checked(logf, c)?;
    let mut fd = checked(logf, d)?;
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        if fc < fd {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = checked(logf, d)?;
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = checked(logf, c)?;
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for e in [a, b] {
        let fe = checked(logf, e)?;
        if fe > best.1 {
            best = (e, fe);
        }
    }
    Ok(best)
}

/// Find the mode of a log-concave function on `(lo, hi)`.
fn locate_mode<L: Fn(f64) -> f64>(logf: &L, opts: &LcOptions) -> Result<(f64, f64)> {
    let (lo, hi) = (opts.lo, opts.hi);
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty support [{lo}, {hi}]")));
    }
    let mut x0 = opts.guess.clamp(lo, hi);
    let mut f0 = checked(logf, x0)?;
    if f0 == f64::NEG_INFINITY {
        // search for a point of finite density when the guess misses the support
        let mut found = false;
        if lo.is_finite() && hi.is_finite() {
            for k in 1..64 {
                let t = (k as f64) / 64.0;
                let y = lo + t * (hi - lo);
                let v = checked(logf, y)?;
                if v > f64::NEG_INFINITY {
                    x0 = y;
                    f0 = v;
                    found = true;
                    break;
                }
            }
        }
        if !found {
            return Err(Error::Domain(format!(
                "integrand vanishes at the starting point {x0}"
            )));
        }
    }
    let mut h = opts.scale;
    let right = (x0 + h).min(hi);
    let left = (x0 - h).max(lo);
    let fr = checked(logf, right)?;
    let fl = checked(logf, left)?;
    let (a, b) = if fr > f0 {
        walk(logf, x0, f0, h, 1.0, hi)?
    } else if fl > f0 {
        walk(logf, x0, f0, h, -1.0, lo)?
    } else {
        h = h.max(0.0);
        ((x0 - h).max(lo), (x0 + h).min(hi))
    };
    golden_max(logf, a.min(b), a.max(b))
}

/// Walk uphill with doubling steps until the function decreases.
fn walk<L: Fn(f64) -> f64>(
    logf: &L,
    x0: f64,
    f0: f64,
    h0: f64,
    dir: f64,
    bound: f64,
) -> Result<(f64, f64)> {
    let mut prev = x0;
    let mut cur = x0 + dir * h0;
    if dir > 0.0 {
        cur = cur.min(bound);
    } else {
        cur = cur.max(bound);
    }
    let mut fcur = checked(logf, cur)?;
    let mut fprev = f0;
    let mut h = h0;
    for _ in 0..2000 {
        if cur == bound {
            return Ok((prev, cur));
        }
        h *= 2.0;
        let mut next = x0 + dir * h;
        if dir > 0.0 {
            next = next.min(bound);
        } else {
            next = next.max(bound);
        }
        if !next.is_finite() || next.abs() > 1e150 {
            return Err(Error::Divergent(format!(
                "log-integrand keeps increasing past {cur}"
            )));
        }
        let fnext = checked(logf, next)?;
        if fnext < fcur {
            return Ok((prev, next));
        }
        prev = cur;
        fprev = fcur;
        cur = next;
        fcur = fnext;
    }
    let _ = fprev;
    Err(Error::Divergent("mode search did not terminate".into()))
}

/// Distance from the mode at which the log-integrand falls by one nat.
fn unit_width<L: Fn(f64) -> f64>(logf: &L, m: f64, peak: f64, dir: f64, bound: f64, scale: f64) -> Result<f64> {
    let room = (bound - m).abs();
    if room == 0.0 {
        return Ok(0.0);
    }
    let mut h = scale.min(room);
    let drops = |h: f64| -> Result<bool> { Ok(checked(logf, m + dir * h)? < peak - 1.0) };
    if drops(h)? {
        for _ in 0..200 {
            let half = 0.5 * h;
            if half == 0.0 || !drops(half)? {
                break;
            }
            h = half;
        }
        Ok(h)
    } else {
        for _ in 0..2000 {
            if h >= room {
                return Ok(room);
            }
            h = (2.0 * h).min(room);
            if !h.is_finite() || h > 1e150 {
                return Err(Error::Divergent(format!(
                    "log-integrand does not decay beyond the mode {m}"
                )));
            }
            if drops(h)? {
                return Ok(h);
            }
        }
        Err(Error::Divergent("tail does not decay".into()))
    }
}

/// Walk outward from the mode until the log-integrand is `drop` below the peak.
fn tail<L: Fn(f64) -> f64>(
    logf: &L,
    m: f64,
    peak: f64,
    width: f64,
    dir: f64,
    bound: f64,
    drop: f64,
    probes: &mut Vec<f64>,
) -> Result<(f64, f64)> {
    let room = (bound - m).abs();
    if room == 0.0 {
        return Ok((m, 0.0));
    }
    let mut h = if width > 0.0 { width.min(room) } else { room.min(1.0) };
    let mut prev = (m, peak);
    for _ in 0..3000 {
        let y = if h >= room { bound } else { m + dir * h };
        let fy = checked(logf, y)?;
        probes.push(y);
        if y == bound {
            return Ok((y, 0.0));
        }
        if fy < peak - drop {
            let slope = (fy - prev.1) / (y - prev.0).abs();
            if !(slope < 0.0) {
                return Err(Error::Divergent(format!("non-decaying tail near {y}")));
            }
            return Ok((y, (fy - peak).exp() / (-slope)));
        }
        prev = (y, fy);
        h *= 2.0;
        if !h.is_finite() || h > 1e150 {
            return Err(Error::Divergent(format!("tail beyond {y} does not decay")));
        }
    }
    Err(Error::Divergent("tail search did not terminate".into()))
}

pub fn envelope<L: Fn(f64) -> f64>(logf: &L, opts: &LcOptions) -> Result<Envelope> {
    let (mode, peak) = locate_mode(logf, opts)?;
    if !peak.is_finite() {
        return Err(Error::Domain("integrand vanishes identically".into()));
    }
    let wr = unit_width(logf, mode, peak, 1.0, opts.hi, opts.scale)?;
    let wl = unit_width(logf, mode, peak, -1.0, opts.lo, opts.scale)?;
    let mut probes = vec![mode];
    let (hi, tr) = tail(logf, mode, peak, wr, 1.0, opts.hi, opts.drop, &mut probes)?;
    let (lo, tl) = tail(logf, mode, peak, wl, -1.0, opts.lo, opts.drop, &mut probes)?;
    let width = match (wl > 0.0, wr > 0.0) {
        (true, true) => (wl * wr).sqrt(),
        (true, false) => wl,
        (false, true) => wr,
        (false, false) => return Err(Error::Domain("degenerate support".into())),
    };
    Ok(Envelope {
        mode,
        peak,
        lo,
        hi,
        width,
        tail: tl + tr,
        probes,
    })
}

fn breakpoints(env: &Envelope, extra: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = env
        .probes
        .iter()
        .chain(extra.iter())
        .copied()
        .filter(|y| y.is_finite() && *y >= env.lo && *y <= env.hi)
        .collect();
    pts.push(env.lo);
    pts.push(env.hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Result of integrating `weights(y) * exp(logf(y) - peak)` over the envelope.
#[derive(Clone, Debug)]
pub struct LcIntegral<const N: usize> {
    pub env: Envelope,
    pub values: [f64; N],
    pub errors: [f64; N],
    pub panels: Vec<Panel<N>>,
}

pub fn integrate_on<const N: usize, L, W>(
    env: &Envelope,
    logf: &L,
    mut weights: W,
    abs: [f64; N],
    opts: &LcOptions,
) -> Result<LcIntegral<N>>
where
    L: Fn(f64) -> f64,
    W: FnMut(f64) -> [f64; N],
{
    let peak = env.peak;
    let breaks = breakpoints(env, &opts.breaks);
    let res = adaptive(
        |y| {
            let e = (logf(y) - peak).exp();
            let mut w = weights(y);
            for v in w.iter_mut() {
                *v *= e;
            }
            w
        },
        &breaks,
        opts.rel_tol,
        abs,
        opts.max_panels,
    );
    if !res.converged {
        let residual = (0..N)
            .map(|k| res.error[k] / (opts.rel_tol * res.value[k].abs()).max(abs[k]))
            .fold(0.0, f64::max);
        return Err(Error::Quadrature {
            context: format!("adaptive rule exhausted {} panels", res.panels.len()),
            residual,
        });
    }
    Ok(LcIntegral {
        env: env.clone(),
        values: res.value,
        errors: res.error,
        panels: res.panels,
    })
}

pub fn integrate<const N: usize, L, W>(logf: &L, weights: W, abs: [f64; N], opts: &LcOptions) -> Result<LcIntegral<N>>
where
    L: Fn(f64) -> f64,
    W: FnMut(f64) -> [f64; N],
{
    let env = envelope(logf, opts)?;
    integrate_on(&env, logf, weights, abs, opts)
}

/// `log ∫ exp(logf)` with a relative error bound (quadrature plus tail).
pub fn log_integral<L: Fn(f64) -> f64>(logf: &L, opts: &LcOptions) -> Result<(f64, f64)> {
    let env = envelope(logf, opts)?;
    let abs = [opts.rel_tol * env.width * 1e-3];
    let res = integrate_on(&env, logf, |_| [1.0], abs, opts)?;
    let mass = res.values[0];
    if !(mass > 0.0) {
        return Err(Error::Quadrature {
            context: "non-positive mass".into(),
            residual: f64::NAN,
        });
    }
    Ok((env.peak + mass.ln(), (res.errors[0] + env.tail) / mass))
}

/// Normalising constant and first three central moments of `exp(logf)`.
#[derive(Clone, Copy, Debug)]
pub struct Moments {
    pub log_mass: f64,
    pub mean: f64,
    pub var: f64,
    pub third: f64,
    pub rel_err: f64,
}

pub fn moments<L: Fn(f64) -> f64>(logf: &L, opts: &LcOptions) -> Result<Moments> {
    let env = envelope(logf, opts)?;
    let m = env.mode;
    let w = env.width;
    let t = opts.rel_tol;
    let abs = [t * w * 1e-3, t * w * w, t * w * w * w, t * w * w * w * w];
    let res = integrate_on(
        &env,
        logf,
        |y| {
            let d = y - m;
            [1.0, d, d * d, d * d * d]
        },
        abs,
        opts,
    )?;
    let [m0, m1, m2, m3] = res.values;
    if !(m0 > 0.0) {
        return Err(Error::Quadrature {
            context: "non-positive mass".into(),
            residual: f64::NAN,
        });
    }
    let e1 = m1 / m0;
    let e2 = m2 / m0;
    let e3 = m3 / m0;
    let var = (e2 - e1 * e1).max(0.0);
    let third = e3 - 3.0 * e1 * e2 + 2.0 * e1 * e1 * e1;
    Ok(Moments {
        log_mass: env.peak + m0.ln(),
        mean: m + e1,
        var,
        third,
        rel_err: (res.errors[0] + env.tail) / m0,
    })
}

/// A normalised one-dimensional log-concave density with exact inverse-CDF sampling.
pub struct Density1d<L: Fn(f64) -> f64> {
    logf: L,
    env: Envelope,
    panels: Vec<(f64, f64, f64)>,
    cum: Vec<f64>,
    total: f64,
    log_norm: f64,
}

impl<L: Fn(f64) -> f64> Density1d<L> {
    pub fn new(logf: L, opts: &LcOptions) -> Result<Self> {
        let env = envelope(&logf, opts)?;
        let abs = [opts.rel_tol * env.width * 1e-3];
        let res = integrate_on(&env, &logf, |_| [1.0], abs, opts)?;
        let mut cum = Vec::with_capacity(res.panels.len());
        let mut acc = 0.0;
        let mut panels = Vec::with_capacity(res.panels.len());
        for p in &res.panels {
            acc += p.value[0].max(0.0);
            cum.push(acc);
            panels.push((p.a, p.b, p.value[0].max(0.0)));
        }
        if !(acc > 0.0) {
            return Err(Error::Quadrature {
                context: "density has no mass".into(),
                residual: f64::NAN,
            });
        }
        let log_norm = env.peak + acc.ln();
        Ok(Density1d {
            logf,
            env,
            panels,
            cum,
            total: acc,
            log_norm,
        })
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn support(&self) -> (f64, f64) {
        (self.env.lo, self.env.hi)
    }

    pub fn mode(&self) -> f64 {
        self.env.mode
    }

    pub fn pdf(&self, y: f64) -> f64 {
        ((self.logf)(y) - self.log_norm).exp()
    }

    fn scaled(&self, y: f64) -> f64 {
        ((self.logf)(y) - self.env.peak).exp()
    }

    fn partial(&self, a: f64, y: f64) -> f64 {
        if y <= a {
            return 0.0;
        }
        let mut f = |t: f64| [self.scaled(t)];
        gk21(&mut f, a, y).value[0]
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= self.env.lo {
            return 0.0;
        }
        if y >= self.env.hi {
            return 1.0;
        }
        let idx = self.panels.partition_point(|p| p.1 <= y);
        let before = if idx == 0 { 0.0 } else { self.cum[idx - 1] };
        let (a, _, _) = self.panels[idx.min(self.panels.len() - 1)];
        ((before + self.partial(a, y)) / self.total).clamp(0.0, 1.0)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let target = u.clamp(0.0, 1.0) * self.total;
        let idx = self
            .cum
            .partition_point(|c| *c < target)
            .min(self.panels.len() - 1);
        let before = if idx == 0 { 0.0 } else { self.cum[idx - 1] };
        let (a, b, mass) = self.panels[idx];
        let local = (target - before).clamp(0.0, mass);
        if mass <= 0.0 {
            return 0.5 * (a + b);
        }
        let (mut lo, mut hi) = (a, b);
        let mut y = a + (b - a) * local / mass;
        let tol = 1e-13 * self.total;
        for _ in 0..100 {
            let r = self.partial(a, y) - local;
            if r.abs() <= tol {
                break;
            }
            if r > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let e = self.scaled(y);
            let newton = if e > 0.0 { y - r / e } else { f64::NAN };
            y = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * (1.0 + y.abs()) {
                break;
            }
        }
        y
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(crate::rng::open_unit(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::PI;

    #[test]
    fn gaussian_mass_and_moments() {
        let s2: f64 = 2.5;
        let logf = |y: f64| -0.5 * (y - 1.0) * (y - 1.0) / s2;
        let m = moments(&logf, &LcOptions::default()).unwrap();
        assert!((m.log_mass - 0.5 * (2.0 * PI * s2).ln()).abs() < 1e-12);
        assert!((m.mean - 1.0).abs() < 1e-12);
        assert!((m.var - s2).abs() < 1e-11);
        assert!(m.third.abs() < 1e-11);
    }

    #[test]
    fn laplace_with_kink() {
        let logf = |y: f64| -y.abs();
        let opts = LcOptions::default().with_breaks(vec![0.0]);
        let (l, err) = log_integral(&logf, &opts).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-13);
        assert!(err < 1e-12);
    }

    #[test]
    fn narrow_peak_far_from_guess() {
        let logf = |y: f64| -1e8 * (y - 40.0).powi(2);
        let (l, _) = log_integral(&logf, &LcOptions::default()).unwrap();
        let exact = 0.5 * (PI / 1e8).ln();
        assert!((l - exact).abs() < 1e-11, "{l} vs {exact}");
    }

    #[test]
    fn bounded_support_uniform() {
        let logf = |y: f64| if (0.0..=3.0).contains(&y) { 0.0 } else { f64::NEG_INFINITY };
        let opts = LcOptions::default().with_support(0.0, 3.0);
        let (l, _) = log_integral(&logf, &opts).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn divergence_is_detected() {
        let logf = |y: f64| 1.5 * y - y.abs();
        assert!(matches!(
            log_integral(&logf, &LcOptions::default()),
            Err(Error::Divergent(_))
        ));
        let flat = |y: f64| y - y.abs();
        assert!(log_integral(&flat, &LcOptions::default()).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let d = Density1d::new(|y: f64| 0.3 * y - y.abs(), &LcOptions::default().with_breaks(vec![0.0])).unwrap();
        for &u in &[1e-9, 0.01, 0.2, 0.5, 0.77, 0.999999] {
            let y = d.quantile(u);
            assert!((d.cdf(y) - u).abs() < 1e-10, "u={u}");
        }
    }

    #[test]
    fn sampled_mean_matches_moment() {
        let logf = |y: f64| -y.powi(4) + 0.7 * y;
        let opts = LcOptions::default();
        let m = moments(&logf, &opts).unwrap();
        let d = Density1d::new(logf, &opts).unwrap();
        let mut rng = stream(3, 0);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (m.var / n as f64).sqrt();
        assert!((mean - m.mean).abs() < 4.0 * se);
    }
}
