//! Dense tensors, named parameter sets and a finite-difference gradient checker.
//!
//! Gradients for the networks are hand-derived per layer; this module only
//! supplies the storage, a GEMM wrapper and the central-difference oracle the
//! layer backward passes are checked against.

use crate::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self { dims: dims.to_vec(), data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Parameters in insertion order, addressed by index or unique name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.dims());
        self.params.push(Param { name, value, grad });
        Ok(self.params.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Copies parameter values (not gradients) from `other`, which must have
    /// the same layout.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Shape("parameter sets differ in length".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.dims() != b.value.dims() {
                return Err(Error::Shape(format!("parameter {:?} layout differs", a.name)));
            }
            a.value.data_mut().copy_from_slice(b.value.data());
        }
        Ok(())
    }
}

/// `C = alpha * op(A) * op(B) + beta * C` with row-major storage.
///
/// `op(A)` is `m x k`; when `trans_a` is set `A` is stored as `k x m`.
/// Likewise `op(B)` is `k x n`, stored `n x k` when `trans_b` is set.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k, "gemm: A too short");
    assert!(b.len() >= k * n, "gemm: B too short");
    assert!(c.len() >= m * n, "gemm: C too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches for the
    // given dimensions and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Scalar objective value a gradient check can difference.
pub trait Objective: Copy + std::fmt::Debug {
    /// `(plus - minus) / (2 eps)`, with the subtraction carried out in the
    /// value's own precision.
    fn central_difference(plus: Self, minus: Self, eps: f64) -> f64;
    fn identical(a: Self, b: Self) -> bool;
}

impl Objective for f64 {
    fn central_difference(plus: Self, minus: Self, eps: f64) -> f64 {
        (plus - minus) / (2.0 * eps)
    }
    fn identical(a: Self, b: Self) -> bool {
        a.to_bits() == b.to_bits()
    }
}

impl Objective for crate::dd::DoubleDouble {
    fn central_difference(plus: Self, minus: Self, eps: f64) -> f64 {
        (plus - minus).to_f64() / (2.0 * eps)
    }
    fn identical(a: Self, b: Self) -> bool {
        a.hi.to_bits() == b.hi.to_bits() && a.lo.to_bits() == b.lo.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
    pub passed: bool,
}

/// Compares analytic gradients against central differences.
///
/// `f` evaluates the scalar objective at the current parameter values and
/// writes the analytic gradient into the parameters' accumulators (it is
/// responsible for zeroing them first). Every scalar entry is perturbed by
/// `±eps`. `f` is evaluated twice at the baseline; any difference is reported
/// as non-determinism.
pub fn grad_check<V, F>(params: &mut ParamSet, eps: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    V: Objective,
    F: FnMut(&mut ParamSet) -> V,
{
    grad_check_entries(params, eps, tol, None, f)
}

/// [`grad_check`] restricted to `entries` (parameter index, flat index).
pub fn grad_check_entries<V, F>(
    params: &mut ParamSet,
    eps: f64,
    tol: f64,
    entries: Option<&[(usize, usize)]>,
    mut f: F,
) -> Result<GradCheckReport>
where
    V: Objective,
    F: FnMut(&mut ParamSet) -> V,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let base = f(params);
    let analytic: Vec<Vec<f64>> = params.params.iter().map(|p| p.grad.data().to_vec()).collect();
    let again = f(params);
    if !V::identical(base, again) {
        return Err(Error::Config(format!(
            "objective is not deterministic: {base:?} vs {again:?}"
        )));
    }

    let all: Vec<(usize, usize)>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = params
                .params
                .iter()
                .enumerate()
                .flat_map(|(pi, p)| (0..p.value.len()).map(move |i| (pi, i)))
                .collect();
            &all
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
        passed: true,
    };
    for &(pi, i) in entries {
        let orig = params.params[pi].value.data()[i];
        params.params[pi].value.data_mut()[i] = orig + eps;
        let plus = f(params);
        params.params[pi].value.data_mut()[i] = orig - eps;
        let minus = f(params);
        params.params[pi].value.data_mut()[i] = orig;

        let numeric = V::central_difference(plus, minus, eps);
        let a = analytic[pi][i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.n_checked += 1;
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst = Some((params.params[pi].name.clone(), i));
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    // Leave the accumulators holding the baseline gradient.
    f(params);
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
