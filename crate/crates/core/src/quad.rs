//! Globally adaptive Gauss–Kronrod (10/21) quadrature for vector-valued
//! integrands over a set of initial panels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy)]
pub struct Panel<const N: usize> {
    pub a: f64,
    pub b: f64,
    pub value: [f64; N],
    pub error: [f64; N],
}

/// QUADPACK-style error rescaling.
fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut e = err.abs();
    if res_asc != 0.0 && e != 0.0 {
        let scale = (200.0 * e / res_asc).powf(1.5);
        e = if scale < 1.0 {
            res_asc * scale
        } else {
            res_asc
        };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        e = e.max(50.0 * f64::EPSILON * res_abs);
    }
    e
}

pub fn gk21<const N: usize, F>(f: &mut F, a: f64, b: f64) -> Panel<N>
where
    F: FnMut(f64) -> [f64; N],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut fv1 = [[0.0; N]; 10];
    let mut fv2 = [[0.0; N]; 10];
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    let mut res_abs = [0.0; N];
    for i in 0..N {
        kron[i] = fc[i] * WGK[10];
        res_abs[i] = kron[i].abs();
    }
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        for i in 0..N {
            let s = f1[i] + f2[i];
            kron[i] += WGK[j] * s;
            res_abs[i] += WGK[j] * (f1[i].abs() + f2[i].abs());
            // Gauss nodes are the odd Kronrod abscissae.
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    let h = half.abs();
    for i in 0..N {
        let mean = 0.5 * kron[i];
        let mut asc = WGK[10] * (fc[i] - mean).abs();
        for j in 0..10 {
            asc += WGK[j] * ((fv1[j][i] - mean).abs() + (fv2[j][i] - mean).abs());
        }
        let err = (kron[i] - gauss[i]) * half;
        value[i] = kron[i] * half;
        error[i] = rescale_error(err, res_abs[i] * h, asc * h);
    }
    Panel { a, b, value, error }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<const N: usize> {
    pub value: [f64; N],
    pub error: [f64; N],
    pub evaluations: usize,
    pub panels: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadTolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_panels: usize,
}

impl Default for QuadTolerance {
    fn default() -> Self {
        Self {
            rel: 1e-10,
            abs: 1e-14,
            max_panels: 4_000_000,
        }
    }
}

struct Ranked<const N: usize> {
    key: f64,
    panel: Panel<N>,
}

impl<const N: usize> PartialEq for Ranked<N> {
    fn eq(&self, other: &Self) -> bool {
        self.key.total_cmp(&other.key) == Ordering::Equal
    }
}
impl<const N: usize> Eq for Ranked<N> {}
impl<const N: usize> PartialOrd for Ranked<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Ranked<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key)
    }
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, bisecting the panel with
/// the largest weighted error until every component meets
/// `max(rel * |I|, abs)`.
pub fn integrate<const N: usize, F>(mut f: F, breaks: &[f64], tol: QuadTolerance) -> QuadResult<N>
where
    F: FnMut(f64) -> [f64; N],
{
    let mut heap = BinaryHeap::with_capacity(breaks.len());
    let mut total = [0.0; N];
    let mut total_err = [0.0; N];
    let mut evaluations = 0usize;
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let p = gk21(&mut f, w[0], w[1]);
        evaluations += 21;
        for i in 0..N {
            total[i] += p.value[i];
            total_err[i] += p.error[i];
        }
        heap.push(Ranked { key: 0.0, panel: p });
    }
    let targets = |total: &[f64; N]| -> [f64; N] {
        let mut t = [0.0; N];
        for i in 0..N {
            t[i] = (tol.rel * total[i].abs()).max(tol.abs);
        }
        t
    };
    let key_of = |p: &Panel<N>, t: &[f64; N]| -> f64 {
        (0..N).map(|i| p.error[i] / t[i]).fold(0.0, f64::max)
    };
    let mut t = targets(&total);
    // Re-key with the first estimate of the totals.
    heap = heap
        .into_iter()
        .map(|r| Ranked {
            key: key_of(&r.panel, &t),
            panel: r.panel,
        })
        .collect();

    let done = |err: &[f64; N], t: &[f64; N]| (0..N).all(|i| err[i] <= t[i]);
    let mut converged = done(&total_err, &t);
    let mut since_rekey = 0usize;
    while !converged && heap.len() < tol.max_panels {
        let Some(Ranked { panel, .. }) = heap.pop() else {
            break;
        };
        let mid = 0.5 * (panel.a + panel.b);
        if mid <= panel.a || mid >= panel.b {
            // Panel cannot be split further in floating point.
            heap.push(Ranked { key: 0.0, panel });
            if heap.peek().map_or(true, |r| r.key == 0.0) {
                break;
            }
            continue;
        }
        let left = gk21(&mut f, panel.a, mid);
        let right = gk21(&mut f, mid, panel.b);
        evaluations += 42;
        for i in 0..N {
            total[i] += left.value[i] + right.value[i] - panel.value[i];
            total_err[i] += left.error[i] + right.error[i] - panel.error[i];
        }
        since_rekey += 1;
        if since_rekey > heap.len() / 4 + 64 {
            t = targets(&total);
            since_rekey = 0;
        }
        heap.push(Ranked {
            key: key_of(&left, &t),
            panel: left,
        });
        heap.push(Ranked {
            key: key_of(&right, &t),
            panel: right,
        });
        converged = done(&total_err, &targets(&total));
    }

    // Re-sum from the panels to shed accumulated rounding in the running totals.
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    let mut panels: Vec<Panel<N>> = heap.into_iter().map(|r| r.panel).collect();
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    for p in &panels {
        for i in 0..N {
            value[i] += p.value[i];
            error[i] += p.error[i];
        }
    }
    let converged = done(&error, &targets(&value));
    QuadResult {
        value,
        error,
        evaluations,
        panels: panels.len(),
        converged,
    }
}
