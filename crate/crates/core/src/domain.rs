//! Periodic domain and the Gibbs potential family.

use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Scan resolution used for the cached extrema of a potential.
pub const DEFAULT_SCAN_RESOLUTION: usize = 1024;

/// Periodic box `[lo, lo + period)^dim` with `lo = -period / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusDomain<T: Scalar = f64> {
    dim: usize,
    period: T,
    diam: T,
}

impl<T: Scalar> TorusDomain<T> {
    pub fn new(dim: usize, period: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("domain.dim", "dimension must be at least 1"));
        }
        if !(period > T::zero()) || !period.is_finite() {
            return Err(Error::config("domain.period", "period must be positive and finite"));
        }
        let diam = T::of_usize(dim).sqrt() * period / T::of(2.0);
        Ok(Self { dim, period, diam })
    }

    /// Overrides the derived diameter `sqrt(dim) * period / 2`.
    pub fn with_diameter(mut self, diam: T) -> Result<Self> {
        if !(diam > T::zero()) {
            return Err(Error::config("domain.diam", "diameter must be positive"));
        }
        self.diam = diam;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> T {
        self.period
    }

    pub fn diam(&self) -> T {
        self.diam
    }

    /// Lower corner of the canonical cell along every axis.
    pub fn lo(&self) -> T {
        -self.period / T::of(2.0)
    }

    /// Lebesgue volume `|T^d|`.
    pub fn volume(&self) -> T {
        self.period.powi(self.dim as i32)
    }

    /// Maps a coordinate into `[lo, lo + period)`.
    #[inline]
    pub fn wrap(&self, x: T) -> T {
        let lo = self.lo();
        let hi = lo + self.period;
        if x >= lo && x < hi {
            return x;
        }
        let y = x - lo;
        let mut w = y - self.period * (y / self.period).floor() + lo;
        if w >= hi {
            w = lo;
        }
        if w < lo {
            w = lo;
        }
        w
    }

    pub fn wrap_point(&self, x: &mut [T]) {
        for v in x.iter_mut() {
            *v = self.wrap(*v);
        }
    }

    /// Shortest signed displacement `b - a` on one periodic axis.
    pub fn periodic_delta(&self, a: T, b: T) -> T {
        let half = self.period / T::of(2.0);
        let mut d = b - a;
        d = d - self.period * ((d + half) / self.period).floor();
        d
    }
}

/// Members of the potential family.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialKind<T: Scalar = f64> {
    /// `(x^2 - c)^2 / 80`, summed over axes.
    DoubleWell { c: T },
    /// `2 * sum_k sin^2(2 pi (x_k - 0.1))`.
    SineModes,
    /// `(A / 2) (1 - cos 2x)`, summed over axes: minima at `0, ±pi`, saddles at `±pi/2`.
    CosineWell { amplitude: T },
    /// `sum_k sum_j coeffs[j] * x_k^j`.
    Polynomial { coeffs: Vec<T> },
    /// Node values on a periodic grid, interpolated by cubic convolution.
    Tabulated { values: Vec<T>, resolution: usize },
}

/// Interior critical point located by a curvature scan (1D only).
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalPoint<T: Scalar = f64> {
    pub location: T,
    pub value: T,
    /// Second derivative `F''` at the point.
    pub curvature: T,
    /// `1 / sqrt(|F''|)`: the curvature length used in Laplace asymptotics.
    pub alpha: T,
}

/// Result of a dense grid scan of a potential.
#[derive(Clone, Debug, PartialEq)]
pub struct Extrema<T: Scalar = f64> {
    pub resolution: usize,
    pub f_min: T,
    pub f_max: T,
    /// Minimum over the scan of the smallest Hessian eigenvalue.
    pub kappa: T,
    /// Local minimizers (refined in 1D, grid points otherwise).
    pub minimizers: Vec<Vec<T>>,
    /// 1D local minima with their curvature parameters.
    pub minima: Vec<CriticalPoint<T>>,
    /// 1D local maxima (the saddles between wells) with their curvature parameters.
    pub saddles: Vec<CriticalPoint<T>>,
}

/// A Gibbs potential on a torus.
#[derive(Clone, Debug)]
pub struct Potential<T: Scalar = f64> {
    kind: PotentialKind<T>,
    domain: TorusDomain<T>,
    extrema: OnceLock<Extrema<T>>,
}

impl<T: Scalar> Potential<T> {
    pub fn new(kind: PotentialKind<T>, domain: TorusDomain<T>) -> Result<Self> {
        match &kind {
            PotentialKind::DoubleWell { c } if !c.is_finite() => {
                return Err(Error::config("potential.c", "must be finite"));
            }
            PotentialKind::CosineWell { amplitude } if !amplitude.is_finite() => {
                return Err(Error::config("potential.amplitude", "must be finite"));
            }
            PotentialKind::Polynomial { coeffs } => {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config("potential.coeffs", "coefficients must be finite"));
                }
            }
            PotentialKind::Tabulated { values, resolution } => {
                if *resolution < 4 {
                    return Err(Error::config("potential.grid_file", "resolution must be at least 4"));
                }
                let expected = resolution
                    .checked_pow(domain.dim() as u32)
                    .ok_or_else(|| Error::config("potential.grid_file", "grid too large"))?;
                if values.len() != expected {
                    return Err(Error::config(
                        "potential.grid_file",
                        format!("expected {expected} values, found {}", values.len()),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("potential.grid_file", "grid values must be finite"));
                }
            }
            _ => {}
        }
        Ok(Self {
            kind,
            domain,
            extrema: OnceLock::new(),
        })
    }

    /// `(x^2 - c)^2 / 80` on `[-pi, pi)`.
    pub fn double_well(c: T) -> Result<Self> {
        Self::new(
            PotentialKind::DoubleWell { c },
            TorusDomain::new(1, T::PI() * T::of(2.0))?,
        )
    }

    /// `2 [sin^2(2 pi (x1 - 0.1)) + sin^2(2 pi (x2 - 0.1))]` on `[-1, 1)^2`.
    pub fn sine_modes() -> Result<Self> {
        Self::new(PotentialKind::SineModes, TorusDomain::new(2, T::of(2.0))?)
    }

    /// `(A / 2)(1 - cos 2x)` on `[-pi, pi)`.
    pub fn cosine_well(amplitude: T) -> Result<Self> {
        Self::new(
            PotentialKind::CosineWell { amplitude },
            TorusDomain::new(1, T::PI() * T::of(2.0))?,
        )
    }

    pub fn polynomial(coeffs: Vec<T>, domain: TorusDomain<T>) -> Result<Self> {
        Self::new(PotentialKind::Polynomial { coeffs }, domain)
    }

    pub fn constant_zero(domain: TorusDomain<T>) -> Result<Self> {
        Self::polynomial(vec![T::zero()], domain)
    }

    pub fn tabulated(values: Vec<T>, resolution: usize, domain: TorusDomain<T>) -> Result<Self> {
        Self::new(PotentialKind::Tabulated { values, resolution }, domain)
    }

    /// Loads a tabulated grid. The first line is `dim,resolution,period`; the
    /// values follow row-major, either as text (any mix of commas and
    /// whitespace) or, for a `.bin` file, as little-endian `f64`.
    pub fn from_grid_file(path: &Path) -> Result<Self> {
        let key = "potential.grid_file";
        let bytes = std::fs::read(path).map_err(|e| Error::config(key, format!("{}: {e}", path.display())))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::config(key, "missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::config(key, "header is not UTF-8"))?;
        let fields: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::config(key, "header must be `dim,resolution,period`"));
        }
        let dim: usize = fields[0].parse().map_err(|_| Error::config(key, "bad dim in header"))?;
        let resolution: usize = fields[1]
            .parse()
            .map_err(|_| Error::config(key, "bad resolution in header"))?;
        let period: f64 = fields[2]
            .parse()
            .map_err(|_| Error::config(key, "bad period in header"))?;
        let body = &bytes[nl + 1..];
        let binary = path.extension().is_some_and(|e| e == "bin");
        let values: Vec<T> = if binary {
            if body.len() % 8 != 0 {
                return Err(Error::config(key, "binary body is not a whole number of f64"));
            }
            body.chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect()
        } else {
            let text = std::str::from_utf8(body).map_err(|_| Error::config(key, "body is not UTF-8"))?;
            text.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map(T::of)
                        .map_err(|_| Error::config(key, format!("bad value `{s}`")))
                })
                .collect::<Result<_>>()?
        };
        Self::tabulated(values, resolution, TorusDomain::new(dim, T::of(period))?)
    }

    pub fn kind(&self) -> &PotentialKind<T> {
        &self.kind
    }

    pub fn domain(&self) -> &TorusDomain<T> {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "point has {} coordinates, domain has {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite coordinate".into()));
        }
        Ok(())
    }

    /// `F(wrap(x))`.
    pub fn eval(&self, x: &[T]) -> Result<T> {
        self.check_point(x)?;
        let mut w = x.to_vec();
        self.domain.wrap_point(&mut w);
        Ok(self.eval_wrapped(&w))
    }

    /// Gradient at `wrap(x)`.
    pub fn grad(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_point(x)?;
        let mut w = x.to_vec();
        self.domain.wrap_point(&mut w);
        let mut g = vec![T::zero(); self.dim()];
        self.grad_wrapped(&w, &mut g);
        Ok(g)
    }

    /// Evaluates the closed form at a point assumed finite and inside the
    /// canonical cell. Hot loops call this directly.
    #[inline]
    pub fn eval_wrapped(&self, x: &[T]) -> T {
        match &self.kind {
            PotentialKind::Tabulated { values, resolution } => self.interp(values, *resolution, x),
            _ => x.iter().map(|&xi| self.axis_value(xi)).sum(),
        }
    }

    #[inline]
    pub fn grad_wrapped(&self, x: &[T], out: &mut [T]) {
        match &self.kind {
            PotentialKind::Tabulated { values, resolution } => {
                // 4th-order central differences on the interpolant.
                let h = self.domain.period() / T::of(4096.0);
                let mut p = x.to_vec();
                for k in 0..x.len() {
                    let mut f = |s: T| {
                        p[k] = self.domain.wrap(x[k] + s * h);
                        let v = self.interp(values, *resolution, &p);
                        p[k] = x[k];
                        v
                    };
                    let d = -f(T::of(2.0)) + T::of(8.0) * f(T::one()) - T::of(8.0) * f(-T::one()) + f(T::of(-2.0));
                    out[k] = d / (T::of(12.0) * h);
                }
            }
            _ => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = self.axis_slope(xi);
                }
            }
        }
    }

    #[inline]
    fn axis_value(&self, x: T) -> T {
        match &self.kind {
            PotentialKind::DoubleWell { c } => {
                let q = x * x - *c;
                q * q / T::of(80.0)
            }
            PotentialKind::SineModes => {
                let s = (T::of(2.0) * T::PI() * (x - T::of(0.1))).sin();
                T::of(2.0) * s * s
            }
            PotentialKind::CosineWell { amplitude } => *amplitude / T::of(2.0) * (T::one() - (T::of(2.0) * x).cos()),
            PotentialKind::Polynomial { coeffs } => coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c),
            PotentialKind::Tabulated { .. } => unreachable!("tabulated potentials are not separable"),
        }
    }

    #[inline]
    fn axis_slope(&self, x: T) -> T {
        match &self.kind {
            PotentialKind::DoubleWell { c } => x * (x * x - *c) / T::of(20.0),
            PotentialKind::SineModes => T::of(4.0) * T::PI() * (T::of(4.0) * T::PI() * (x - T::of(0.1))).sin(),
            PotentialKind::CosineWell { amplitude } => *amplitude * (T::of(2.0) * x).sin(),
            PotentialKind::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(T::zero(), |acc, (j, &c)| acc * x + T::of_usize(j) * c),
            PotentialKind::Tabulated { .. } => unreachable!("tabulated potentials are not separable"),
        }
    }

    fn interp(&self, values: &[T], res: usize, x: &[T]) -> T {
        let spacing = self.domain.period() / T::of_usize(res);
        let lo = self.domain.lo();
        let dim = x.len();
        let mut base = [0isize; 8];
        let mut weights = [[T::zero(); 4]; 8];
        for k in 0..dim {
            let t = (x[k] - lo) / spacing;
            let j = t.floor();
            let frac = t - j;
            base[k] = j.to_isize().unwrap_or(0);
            for (m, w) in weights[k].iter_mut().enumerate() {
                *w = keys_kernel(frac - T::of(m as f64 - 1.0));
            }
        }
        let mut acc = T::zero();
        let taps = 4usize.pow(dim as u32);
        for tap in 0..taps {
            let mut idx = 0usize;
            let mut w = T::one();
            let mut rem = tap;
            for k in 0..dim {
                let m = rem % 4;
                rem /= 4;
                let j = (base[k] + m as isize - 1).rem_euclid(res as isize) as usize;
                idx = idx * res + j;
                w = w * weights[k][m];
            }
            acc = acc + w * values[idx];
        }
        acc
    }

    /// Cached scan at [`DEFAULT_SCAN_RESOLUTION`] points per axis.
    pub fn extrema(&self) -> Result<&Extrema<T>> {
        if let Some(e) = self.extrema.get() {
            return Ok(e);
        }
        let e = self.scan_extrema_curvature(DEFAULT_SCAN_RESOLUTION)?;
        Ok(self.extrema.get_or_init(|| e))
    }

    /// Dense scan over cell centers: extremal values, the minimum Hessian
    /// eigenvalue, local minimizers and (in 1D) the curvature lengths at
    /// minima and saddles.
    pub fn scan_extrema_curvature(&self, resolution: usize) -> Result<Extrema<T>> {
        if resolution < 64 {
            return Err(Error::config("scan.resolution", "need at least 64 points per axis"));
        }
        let dim = self.dim();
        if dim > 2 {
            return Err(Error::config("domain.dim", "curvature scans support dim <= 2"));
        }
        let n = resolution.pow(dim as u32);
        let spacing = self.domain.period() / T::of_usize(resolution);
        let lo = self.domain.lo();
        let center = |i: usize| lo + (T::of_usize(i) + T::of(0.5)) * spacing;
        let point = |flat: usize| -> Vec<T> {
            if dim == 1 {
                vec![center(flat)]
            } else {
                vec![center(flat / resolution), center(flat % resolution)]
            }
        };
        // Stencil stays inside one cell, so the seam of the canonical cell is never straddled.
        let fd = (T::of(1e-4) * self.domain.period()).min(spacing / T::of(4.0));

        let values: Vec<T> = (0..n).map(|i| self.eval_wrapped(&point(i))).collect();
        let mut f_min = values.iter().copied().fold(T::infinity(), T::min);
        let mut f_max = values.iter().copied().fold(T::neg_infinity(), T::max);
        // Cell corners catch extrema on the seam, where wrapped potentials may have a kink.
        for i in 0..n {
            let mut x = point(i);
            x.iter_mut().for_each(|c| *c = *c - spacing / T::of(2.0));
            let f = self.eval_wrapped(&x);
            f_min = f_min.min(f);
            f_max = f_max.max(f);
        }
        let mut kappa = T::infinity();
        for i in 0..n {
            let x = point(i);
            kappa = kappa.min(self.min_hessian_eigenvalue(&x, fd));
        }

        let neighbours = |flat: usize| -> Vec<usize> {
            let r = resolution as isize;
            if dim == 1 {
                let i = flat as isize;
                vec![(i - 1).rem_euclid(r) as usize, (i + 1).rem_euclid(r) as usize]
            } else {
                let (i, j) = ((flat / resolution) as isize, (flat % resolution) as isize);
                let mut v = Vec::with_capacity(8);
                for di in -1..=1isize {
                    for dj in -1..=1isize {
                        if di != 0 || dj != 0 {
                            let a = (i + di).rem_euclid(r) as usize;
                            let b = (j + dj).rem_euclid(r) as usize;
                            v.push(a * resolution + b);
                        }
                    }
                }
                v
            }
        };
        let below = |a: usize, b: usize| (values[a], a) < (values[b], b);
        let above = |a: usize, b: usize| (values[a], a) > (values[b], b);

        let mut minimizers = Vec::new();
        let mut minima = Vec::new();
        let mut saddles = Vec::new();
        for i in 0..n {
            let nb = neighbours(i);
            let is_min = nb.iter().all(|&j| below(i, j));
            let is_max = dim == 1 && nb.iter().all(|&j| above(i, j));
            if is_min {
                let x = point(i);
                if dim == 1 {
                    let cp = self.refine_critical_1d(x[0], spacing, fd);
                    minimizers.push(vec![cp.location]);
                    minima.push(cp);
                } else {
                    minimizers.push(x);
                }
            } else if is_max {
                saddles.push(self.refine_critical_1d(point(i)[0], spacing, fd));
            }
        }
        // Refined 1D critical values tighten the cell-centre bounds.
        f_min = minima.iter().map(|c| c.value).fold(f_min, T::min);
        f_max = saddles.iter().map(|c| c.value).fold(f_max, T::max);
        Ok(Extrema {
            resolution,
            f_min,
            f_max,
            kappa,
            minimizers,
            minima,
            saddles,
        })
    }

    fn second_derivative_1d(&self, x: T, h: T) -> T {
        let f = |s: T| self.eval_wrapped(&[self.domain.wrap(s)]);
        (f(x + h) - T::of(2.0) * f(x) + f(x - h)) / (h * h)
    }

    fn min_hessian_eigenvalue(&self, x: &[T], h: T) -> T {
        let f = |p: &[T]| {
            let mut q = p.to_vec();
            self.domain.wrap_point(&mut q);
            self.eval_wrapped(&q)
        };
        let f0 = f(x);
        let two = T::of(2.0);
        let mut p = x.to_vec();
        let mut second = |k: usize| {
            p[k] = x[k] + h;
            let a = f(&p);
            p[k] = x[k] - h;
            let b = f(&p);
            p[k] = x[k];
            (a - two * f0 + b) / (h * h)
        };
        if x.len() == 1 {
            return second(0);
        }
        let h11 = second(0);
        let h22 = second(1);
        let mut q = x.to_vec();
        let mut corner = |s0: T, s1: T| {
            q[0] = x[0] + s0 * h;
            q[1] = x[1] + s1 * h;
            f(&q)
        };
        let h12 = (corner(T::one(), T::one()) - corner(T::one(), -T::one()) - corner(-T::one(), T::one())
            + corner(-T::one(), -T::one()))
            / (T::of(4.0) * h * h);
        let mean = (h11 + h22) / two;
        let half_diff = (h11 - h22) / two;
        mean - (half_diff * half_diff + h12 * h12).sqrt()
    }

    /// Newton iteration on `F'` from a grid extremum; keeps the grid point if
    /// the iteration wanders more than one cell away.
    fn refine_critical_1d(&self, x0: T, spacing: T, fd: T) -> CriticalPoint<T> {
        let slope = |x: T| {
            let mut g = [T::zero()];
            self.grad_wrapped(&[self.domain.wrap(x)], &mut g);
            g[0]
        };
        let mut x = x0;
        for _ in 0..30 {
            let curv = self.second_derivative_1d(x, fd);
            if curv == T::zero() || !curv.is_finite() {
                break;
            }
            let step = slope(x) / curv;
            let next = x - step;
            if (next - x0).abs() > spacing {
                x = x0;
                break;
            }
            x = next;
            if step.abs() <= T::epsilon() * (T::one() + x.abs()) * T::of(4.0) {
                break;
            }
        }
        let location = self.domain.wrap(x);
        let curvature = self.second_derivative_1d(location, fd);
        CriticalPoint {
            location,
            value: self.eval_wrapped(&[location]),
            curvature,
            alpha: T::one() / curvature.abs().sqrt(),
        }
    }
}

/// Keys cubic-convolution kernel (a = -1/2); C¹ and interpolating.
fn keys_kernel<T: Scalar>(s: T) -> T {
    let a = s.abs();
    if a <= T::one() {
        (T::of(1.5) * a - T::of(2.5)) * a * a + T::one()
    } else if a < T::of(2.0) {
        ((T::of(-0.5) * a + T::of(2.5)) * a - T::of(4.0)) * a + T::of(2.0)
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn double_well_values() {
        let p = Potential::double_well(1.0).unwrap();
        assert_relative_eq!(p.eval(&[0.0]).unwrap(), 0.0125, epsilon = 1e-15);
        assert_eq!(p.eval(&[1.0]).unwrap(), 0.0);
        assert_eq!(p.eval(&[-1.0]).unwrap(), 0.0);
        assert_eq!(p.grad(&[0.0]).unwrap()[0], 0.0);
        assert_eq!(p.grad(&[1.0]).unwrap()[0], 0.0);
        let p5 = Potential::double_well(5.0).unwrap();
        assert_relative_eq!(p5.grad(&[2.0]).unwrap()[0], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn sine_modes_vanish_at_offset() {
        let p = Potential::<f64>::sine_modes().unwrap();
        assert!(p.eval(&[0.1, 0.1]).unwrap().abs() < 1e-30);
    }

    #[test]
    fn non_finite_points_are_domain_errors() {
        let p = Potential::double_well(1.0).unwrap();
        assert!(matches!(p.eval(&[f64::NAN]), Err(Error::Domain(_))));
        assert!(matches!(p.grad(&[f64::INFINITY]), Err(Error::Domain(_))));
    }

    #[test]
    fn wrap_lands_in_canonical_cell() {
        let d = TorusDomain::new(1, 2.0 * PI).unwrap();
        for &x in &[-100.0, -PI, PI, 3.5, 1e6, -1e-300] {
            let w = d.wrap(x);
            assert!((-PI..PI).contains(&w), "{x} -> {w}");
            assert_eq!(d.wrap(w), w);
        }
        assert_eq!(d.wrap(PI), -PI);
    }

    #[test]
    fn zero_polynomial_scan() {
        let d = TorusDomain::new(1, 2.0 * PI).unwrap();
        let p = Potential::polynomial(vec![0.0, 0.0, 0.0], d).unwrap();
        let e = p.scan_extrema_curvature(128).unwrap();
        assert_eq!(e.f_min, 0.0);
        assert_eq!(e.f_max, 0.0);
        assert_eq!(e.kappa, 0.0);
    }

    #[test]
    fn double_well_scan_finds_wells() {
        let p = Potential::<f64>::double_well(1.0).unwrap();
        let e = p.scan_extrema_curvature(1024).unwrap();
        assert!(e.f_min.abs() < 1e-5);
        let mut locs: Vec<f64> = e.minima.iter().map(|m| m.location).collect();
        locs.sort_by(f64::total_cmp);
        assert_eq!(locs.len(), 2);
        assert!((locs[0] + 1.0).abs() < 1e-8 && (locs[1] - 1.0).abs() < 1e-8);
        // F''(±1) = (12 - 4) / 80
        assert_relative_eq!(e.minima[0].curvature, 0.1, max_relative = 1e-6);
    }

    #[test]
    fn resolution_below_64_is_rejected() {
        let p = Potential::double_well(1.0).unwrap();
        assert!(matches!(p.scan_extrema_curvature(32), Err(Error::Config { .. })));
    }

    // Independent oracle: min over a fine grid of the analytic second
    // derivative (12 x^2 - 4c) / 80, which is -c/20 at x = 0.
    #[test]
    fn curvature_decreases_with_c() {
        let oracle = |c: f64| {
            (0..1 << 16)
                .map(|i| -PI + (i as f64 + 0.5) * 2.0 * PI / 65536.0)
                .map(|x| (12.0 * x * x - 4.0 * c) / 80.0)
                .fold(f64::INFINITY, f64::min)
        };
        let k1 = Potential::double_well(1.0).unwrap().extrema().unwrap().kappa;
        let k9 = Potential::double_well(9.0).unwrap().extrema().unwrap().kappa;
        assert!((k1 - oracle(1.0)).abs() < 1e-4, "{k1} vs {}", oracle(1.0));
        assert!((k9 - oracle(9.0)).abs() < 1e-4, "{k9} vs {}", oracle(9.0));
        assert!(k9 < k1);
    }

    #[test]
    fn cosine_well_structure() {
        let p = Potential::<f64>::cosine_well(1.0).unwrap();
        let e = p.extrema().unwrap();
        assert_eq!(e.saddles.len(), 2);
        for s in &e.saddles {
            assert!((s.location.abs() - PI / 2.0).abs() < 1e-8);
            assert_relative_eq!(s.value, 1.0, max_relative = 1e-10);
            // F'' = -2 at the saddle
            assert_relative_eq!(s.alpha, 1.0 / 2f64.sqrt(), max_relative = 1e-5);
        }
        assert!(e.minima.iter().any(|m| m.location.abs() < 1e-8));
    }

    #[test]
    fn sine_modes_have_sixteen_minima() {
        let p = Potential::<f64>::sine_modes().unwrap();
        let e = p.scan_extrema_curvature(128).unwrap();
        assert_eq!(e.minimizers.len(), 16);
    }

    #[test]
    fn tabulated_reproduces_smooth_function() {
        let res = 256;
        let d = TorusDomain::new(1, 2.0 * PI).unwrap();
        let values: Vec<f64> = (0..res)
            .map(|j| (-PI + j as f64 * 2.0 * PI / res as f64).sin())
            .collect();
        let p = Potential::tabulated(values, res, d).unwrap();
        for &x in &[-3.0, -0.3, 0.77, 2.9] {
            assert!((p.eval(&[x]).unwrap() - f64::sin(x)).abs() < 1e-5);
            assert!((p.grad(&[x]).unwrap()[0] - f64::cos(x)).abs() < 1e-3);
        }
        // periodic across the seam
        let a = p.eval(&[PI - 1e-9]).unwrap();
        let b = p.eval(&[-PI]).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn tabulated_rejects_bad_grids() {
        let d = TorusDomain::new(1, 2.0).unwrap();
        assert!(Potential::tabulated(vec![0.0; 10], 16, d.clone()).is_err());
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(Potential::tabulated(v, 16, d).is_err());
    }

    #[test]
    fn grid_file_roundtrip_text_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let res = 32;
        let vals: Vec<f64> = (0..res * res).map(|i| (i % 7) as f64 * 0.25).collect();
        let text = dir.path().join("grid.csv");
        let mut body = String::from("2,32,2\n");
        for row in vals.chunks(res) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            body.push_str(&line.join(","));
            body.push('\n');
        }
        std::fs::write(&text, body).unwrap();
        let bin = dir.path().join("grid.bin");
        let mut raw = b"2,32,2\n".to_vec();
        for v in &vals {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&bin, raw).unwrap();
        let pt = Potential::<f64>::from_grid_file(&text).unwrap();
        let pb = Potential::<f64>::from_grid_file(&bin).unwrap();
        assert_eq!(pt.dim(), 2);
        let x = [-0.3, 0.41];
        assert_eq!(pt.eval(&x).unwrap(), pb.eval(&x).unwrap());
        // interpolating: node values are reproduced
        let node = [-1.0 + 3.0 * 2.0 / 32.0, -1.0 + 5.0 * 2.0 / 32.0];
        assert!((pt.eval(&node).unwrap() - vals[3 * 32 + 5]).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let p = Potential::<f32>::double_well(1.0).unwrap();
        assert!((p.eval(&[0.0]).unwrap() - 0.0125).abs() < 1e-7);
        let e = p.scan_extrema_curvature(256).unwrap();
        assert!(e.f_min >= 0.0 && e.f_max > 0.9);
    }

    fn analytic_kinds() -> Vec<Potential<f64>> {
        let d1 = TorusDomain::new(1, 2.0 * PI).unwrap();
        vec![
            Potential::double_well(1.0).unwrap(),
            Potential::double_well(9.0).unwrap(),
            Potential::sine_modes().unwrap(),
            Potential::cosine_well(1.3).unwrap(),
            Potential::polynomial(vec![0.5, -0.2, 0.1, 0.03], d1).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(u in prop::collection::vec(-0.999f64..0.999, 2)) {
            for p in analytic_kinds() {
                let d = p.domain();
                let x: Vec<f64> = u[..p.dim()].iter().map(|v| v * d.period() / 2.0).collect();
                let g = p.grad(&x).unwrap();
                let h = 1e-5;
                for k in 0..p.dim() {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[k] += h;
                    b[k] -= h;
                    // stay inside the cell so the seam is not straddled
                    prop_assume!(a[k] < d.lo() + d.period() && b[k] >= d.lo());
                    let cd = (p.eval(&a).unwrap() - p.eval(&b).unwrap()) / (2.0 * h);
                    prop_assert!((g[k] - cd).abs() <= 1e-6 * (1.0 + g[k].abs()),
                        "{:?} at {:?}: {} vs {}", p.kind(), x, g[k], cd);
                }
            }
        }

        #[test]
        fn translation_periodicity(u in prop::collection::vec(-0.999f64..0.999, 2), shift in -3i32..3) {
            for p in analytic_kinds() {
                let d = p.domain();
                let x: Vec<f64> = u[..p.dim()].iter().map(|v| v * d.period() / 2.0).collect();
                let mut y = x.clone();
                y[0] += shift as f64 * d.period();
                let (fx, fy) = (p.eval(&x).unwrap(), p.eval(&y).unwrap());
                // equality up to the rounding of the wrap itself
                let wrap_err = (d.wrap(y[0]) - x[0]).abs();
                let slope = p.grad(&x).unwrap()[0].abs();
                prop_assert!((fx - fy).abs() <= 4.0 * slope * wrap_err + 1e-15 * fx.abs().max(1.0));
            }
        }

        #[test]
        fn wrap_is_idempotent(x in -1e6f64..1e6, period in 0.1f64..10.0) {
            let d = TorusDomain::new(1, period).unwrap();
            let w = d.wrap(x);
            prop_assert!(w >= d.lo() && w < d.lo() + period);
            prop_assert_eq!(d.wrap(w), w);
        }
    }

    #[test]
    fn scan_bounds_fresh_points() {
        use crate::rng::PhiloxStream;
        let mut s = PhiloxStream::new(9, 0, 0);
        for p in analytic_kinds() {
            let e = p.extrema().unwrap();
            let h = p.domain().period() / e.resolution as f64;
            // F_max + O(h^2) slack: max |F''| h^2 / 8 with a generous bound on |F''|
            let slack = 200.0 * h * h;
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..p.dim())
                    .map(|_| p.domain().lo() + s.uniform() * p.domain().period())
                    .collect();
                let f = p.eval(&x).unwrap();
                assert!(f >= e.f_min - slack && f <= e.f_max + slack);
            }
        }
    }
}
