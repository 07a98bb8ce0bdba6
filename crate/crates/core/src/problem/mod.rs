//! Problem data: raw specifications, validated coefficient sets, aggregates and feedback controls.

mod path;
mod spec_file;

use nalgebra::{DMatrix, DVector};

pub use path::{add_paths, Interpolate, Location, MatrixPath, Path, ScalarPath, TimeGrid, VectorPath};
pub use spec_file::{parse_problem, problem_to_json};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};

/// Largest symmetrization correction accepted before a matrix is deemed malformed.
pub const SYMMETRY_LIMIT: f64 = 1e-8;

/// Raw coefficient entry as supplied by a user or a config file.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Entry<S> {
    #[default]
    Zero,
    Constant(S),
    PerNode(Vec<S>),
}

impl<S> From<S> for Entry<S> {
    fn from(value: S) -> Self {
        Entry::Constant(value)
    }
}

/// Unvalidated problem description. Missing coefficients are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec<T: Real> {
    pub n: usize,
    pub m: usize,
    pub horizon: T,
    pub steps: usize,
    pub x0: DVector<T>,
    pub a: Entry<DMatrix<T>>,
    pub b: Entry<DMatrix<T>>,
    pub c: Entry<DMatrix<T>>,
    pub d: Entry<DMatrix<T>>,
    pub b_vec: Entry<DVector<T>>,
    pub sigma: Entry<DVector<T>>,
    pub q: Entry<DMatrix<T>>,
    pub s: Entry<DMatrix<T>>,
    pub r: Entry<DMatrix<T>>,
    pub q_tilde: Entry<DMatrix<T>>,
    pub s_tilde: Entry<DMatrix<T>>,
    pub r_tilde: Entry<DMatrix<T>>,
    pub g: DMatrix<T>,
    pub g_tilde: DMatrix<T>,
    pub g_vec: DVector<T>,
}

impl<T: Real> ProblemSpec<T> {
    /// All-zero problem of the given size.
    pub fn new(n: usize, m: usize, horizon: T, steps: usize) -> Self {
        Self {
            n,
            m,
            horizon,
            steps,
            x0: DVector::zeros(n),
            a: Entry::Zero,
            b: Entry::Zero,
            c: Entry::Zero,
            d: Entry::Zero,
            b_vec: Entry::Zero,
            sigma: Entry::Zero,
            q: Entry::Zero,
            s: Entry::Zero,
            r: Entry::Zero,
            q_tilde: Entry::Zero,
            s_tilde: Entry::Zero,
            r_tilde: Entry::Zero,
            g: DMatrix::zeros(n, n),
            g_tilde: DMatrix::zeros(n, n),
            g_vec: DVector::zeros(n),
        }
    }

    pub fn validate(&self) -> Result<CoefficientSet<T>> {
        validate(self)
    }
}

/// Validated, immutable problem data on a uniform grid.
#[derive(Clone, Debug)]
pub struct CoefficientSet<T: Real> {
    n: usize,
    m: usize,
    grid: TimeGrid<T>,
    x0: DVector<T>,
    a: MatrixPath<T>,
    b: MatrixPath<T>,
    c: MatrixPath<T>,
    d: MatrixPath<T>,
    b_vec: VectorPath<T>,
    sigma: VectorPath<T>,
    q: MatrixPath<T>,
    s: MatrixPath<T>,
    r: MatrixPath<T>,
    q_tilde: MatrixPath<T>,
    s_tilde: MatrixPath<T>,
    r_tilde: MatrixPath<T>,
    g: DMatrix<T>,
    g_tilde: DMatrix<T>,
    g_vec: DVector<T>,
    symmetry_correction: T,
}

/// Coefficients frozen at a single time, together with the aggregates.
#[derive(Clone, Debug)]
pub struct Snapshot<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
    pub b_vec: DVector<T>,
    pub sigma: DVector<T>,
    pub q: DMatrix<T>,
    pub s: DMatrix<T>,
    pub r: DMatrix<T>,
    pub q_tilde: DMatrix<T>,
    pub s_tilde: DMatrix<T>,
    pub r_tilde: DMatrix<T>,
    pub q_agg: DMatrix<T>,
    pub s_agg: DMatrix<T>,
    pub r_agg: DMatrix<T>,
}

/// Componentwise sums `R + R̃`, `Q + Q̃`, `G + G̃`, `S + S̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateNotation<T: Real> {
    pub r_agg: MatrixPath<T>,
    pub q_agg: MatrixPath<T>,
    pub g_agg: DMatrix<T>,
    pub s_agg: MatrixPath<T>,
}

fn entry_path<T: Real, S>(
    field: &str,
    entry: &Entry<S>,
    grid: &TimeGrid<T>,
    zero: S,
    shape: impl Fn(&S) -> (usize, usize),
    finite: impl Fn(&S) -> bool,
) -> Result<Path<T, S>>
where
    S: Interpolate<T>,
{
    let want = shape(&zero);
    let check = |v: &S, node: usize| -> Result<()> {
        let got = shape(v);
        if got != want {
            return Err(Error::dim(
                field,
                format!("{}x{}", want.0, want.1),
                format!("{}x{}", got.0, got.1),
            ));
        }
        if !finite(v) {
            return Err(Error::NonFinite {
                field: field.to_string(),
                node,
            });
        }
        Ok(())
    };
    match entry {
        Entry::Zero => Ok(Path::constant(grid.horizon(), zero)),
        Entry::Constant(v) => {
            check(v, 0)?;
            Ok(Path::constant(grid.horizon(), v.clone()))
        }
        Entry::PerNode(values) => {
            if values.len() != grid.len() {
                return Err(Error::dim(
                    field,
                    format!("{} node values", grid.len()),
                    format!("{} node values", values.len()),
                ));
            }
            for (k, v) in values.iter().enumerate() {
                check(v, k)?;
            }
            Path::sampled(*grid, values.clone())
        }
    }
}

fn mat_path<T: Real>(
    field: &str,
    entry: &Entry<DMatrix<T>>,
    grid: &TimeGrid<T>,
    rows: usize,
    cols: usize,
) -> Result<MatrixPath<T>> {
    entry_path(
        field,
        entry,
        grid,
        DMatrix::zeros(rows, cols),
        |m| m.shape(),
        |m| all_finite(m),
    )
}

fn vec_path<T: Real>(field: &str, entry: &Entry<DVector<T>>, grid: &TimeGrid<T>, len: usize) -> Result<VectorPath<T>> {
    entry_path(
        field,
        entry,
        grid,
        DVector::zeros(len),
        |v| (v.len(), 1),
        |v| all_finite(v),
    )
}

/// Replaces `m` by its symmetric part and returns the Frobenius norm of the removed part.
fn symmetrize<T: Real>(m: &mut DMatrix<T>) -> T {
    let skew = (&*m - m.transpose()) * T::lit(0.5);
    let correction = skew.norm();
    if correction > T::zero() {
        *m = (&*m + m.transpose()) * T::lit(0.5);
    }
    correction
}

fn symmetrize_path<T: Real>(field: &str, path: &mut MatrixPath<T>) -> Result<T> {
    let mut worst = T::zero();
    match path {
        Path::Constant { value, .. } => worst = symmetrize(value),
        Path::Sampled { values, .. } => {
            for v in values.iter_mut() {
                worst = worst.max(symmetrize(v));
            }
        }
    }
    check_symmetry(field, worst)?;
    Ok(worst)
}

fn check_symmetry<T: Real>(field: &str, correction: T) -> Result<()> {
    if correction > T::lit(SYMMETRY_LIMIT) {
        return Err(Error::Asymmetric {
            field: field.to_string(),
            correction: correction.as_f64(),
            limit: SYMMETRY_LIMIT,
        });
    }
    Ok(())
}

/// Checks shapes and finiteness, symmetrizes quadratic-form matrices, and builds paths.
pub fn validate<T: Real>(spec: &ProblemSpec<T>) -> Result<CoefficientSet<T>> {
    let (n, m) = (spec.n, spec.m);
    if n == 0 || m == 0 {
        return Err(Error::dim("n/m", "positive dimensions", format!("n={n}, m={m}")));
    }
    let grid = TimeGrid::new(spec.horizon, spec.steps)?;
    if spec.x0.len() != n {
        return Err(Error::dim("x0", n, spec.x0.len()));
    }
    if !all_finite(&spec.x0) {
        return Err(Error::NonFinite {
            field: "x0".into(),
            node: 0,
        });
    }

    let a = mat_path("A", &spec.a, &grid, n, n)?;
    let b = mat_path("B", &spec.b, &grid, n, m)?;
    let c = mat_path("C", &spec.c, &grid, n, n)?;
    let d = mat_path("D", &spec.d, &grid, n, m)?;
    let b_vec = vec_path("b", &spec.b_vec, &grid, n)?;
    let sigma = vec_path("sigma", &spec.sigma, &grid, n)?;
    let mut q = mat_path("Q", &spec.q, &grid, n, n)?;
    let s = mat_path("S", &spec.s, &grid, m, n)?;
    let mut r = mat_path("R", &spec.r, &grid, m, m)?;
    let mut q_tilde = mat_path("Q_tilde", &spec.q_tilde, &grid, n, n)?;
    let s_tilde = mat_path("S_tilde", &spec.s_tilde, &grid, m, n)?;
    let mut r_tilde = mat_path("R_tilde", &spec.r_tilde, &grid, m, m)?;

    let terminal = |field: &str, mat: &DMatrix<T>| -> Result<DMatrix<T>> {
        if mat.shape() != (n, n) {
            return Err(Error::dim(
                field,
                format!("{n}x{n}"),
                format!("{}x{}", mat.nrows(), mat.ncols()),
            ));
        }
        if !all_finite(mat) {
            return Err(Error::NonFinite {
                field: field.into(),
                node: grid.steps(),
            });
        }
        Ok(mat.clone())
    };
    let mut g = terminal("G", &spec.g)?;
    let mut g_tilde = terminal("G_tilde", &spec.g_tilde)?;
    if spec.g_vec.len() != n {
        return Err(Error::dim("g", n, spec.g_vec.len()));
    }
    if !all_finite(&spec.g_vec) {
        return Err(Error::NonFinite {
            field: "g".into(),
            node: grid.steps(),
        });
    }

    let mut correction = T::zero();
    correction = correction.max(symmetrize_path("Q", &mut q)?);
    correction = correction.max(symmetrize_path("R", &mut r)?);
    correction = correction.max(symmetrize_path("Q_tilde", &mut q_tilde)?);
    correction = correction.max(symmetrize_path("R_tilde", &mut r_tilde)?);
    for (field, mat) in [("G", &mut g), ("G_tilde", &mut g_tilde)] {
        let c = symmetrize(mat);
        check_symmetry(field, c)?;
        correction = correction.max(c);
    }

    Ok(CoefficientSet {
        n,
        m,
        grid,
        x0: spec.x0.clone(),
        a,
        b,
        c,
        d,
        b_vec,
        sigma,
        q,
        s,
        r,
        q_tilde,
        s_tilde,
        r_tilde,
        g,
        g_tilde,
        g_vec: spec.g_vec.clone(),
        symmetry_correction: correction,
    })
}

fn to_entry<T: Real, S: Interpolate<T>>(path: &Path<T, S>) -> Entry<S> {
    match path {
        Path::Constant { value, .. } => Entry::Constant(value.clone()),
        Path::Sampled { values, .. } => Entry::PerNode(values.clone()),
    }
}

impl<T: Real> CoefficientSet<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn horizon(&self) -> T {
        self.grid.horizon()
    }

    pub fn x0(&self) -> &DVector<T> {
        &self.x0
    }

    pub fn a(&self) -> &MatrixPath<T> {
        &self.a
    }

    pub fn b(&self) -> &MatrixPath<T> {
        &self.b
    }

    pub fn c(&self) -> &MatrixPath<T> {
        &self.c
    }

    pub fn d(&self) -> &MatrixPath<T> {
        &self.d
    }

    pub fn b_vec(&self) -> &VectorPath<T> {
        &self.b_vec
    }

    pub fn sigma(&self) -> &VectorPath<T> {
        &self.sigma
    }

    pub fn q(&self) -> &MatrixPath<T> {
        &self.q
    }

    pub fn s(&self) -> &MatrixPath<T> {
        &self.s
    }

    pub fn r(&self) -> &MatrixPath<T> {
        &self.r
    }

    pub fn q_tilde(&self) -> &MatrixPath<T> {
        &self.q_tilde
    }

    pub fn s_tilde(&self) -> &MatrixPath<T> {
        &self.s_tilde
    }

    pub fn r_tilde(&self) -> &MatrixPath<T> {
        &self.r_tilde
    }

    pub fn g(&self) -> &DMatrix<T> {
        &self.g
    }

    pub fn g_tilde(&self) -> &DMatrix<T> {
        &self.g_tilde
    }

    pub fn g_vec(&self) -> &DVector<T> {
        &self.g_vec
    }

    /// Frobenius norm of the largest skew part removed during validation.
    pub fn symmetry_correction(&self) -> T {
        self.symmetry_correction
    }

    /// True when all conditional-expectation weights vanish.
    pub fn is_time_consistent(&self) -> bool {
        let zero = |p: &MatrixPath<T>| p.samples().all(|m| m.iter().all(|x| x.is_zero()));
        zero(&self.q_tilde)
            && zero(&self.s_tilde)
            && zero(&self.r_tilde)
            && self.g_tilde.iter().all(|x| x.is_zero())
    }

    /// True when the diffusion coefficient is identically zero.
    pub fn is_noise_free(&self) -> bool {
        let zm = |p: &MatrixPath<T>| p.samples().all(|m| m.iter().all(|x| x.is_zero()));
        zm(&self.c) && zm(&self.d) && self.sigma.samples().all(|v| v.iter().all(|x| x.is_zero()))
    }

    /// Same problem with a different initial state.
    pub fn with_x0(&self, x0: DVector<T>) -> Result<Self> {
        if x0.len() != self.n {
            return Err(Error::dim("x0", self.n, x0.len()));
        }
        Ok(Self { x0, ..self.clone() })
    }

    pub fn at(&self, s: T) -> Result<Snapshot<T>> {
        let r = self.r.sample(s)?;
        let r_tilde = self.r_tilde.sample(s)?;
        let q = self.q.sample(s)?;
        let q_tilde = self.q_tilde.sample(s)?;
        let sm = self.s.sample(s)?;
        let s_tilde = self.s_tilde.sample(s)?;
        Ok(Snapshot {
            a: self.a.sample(s)?,
            b: self.b.sample(s)?,
            c: self.c.sample(s)?,
            d: self.d.sample(s)?,
            b_vec: self.b_vec.sample(s)?,
            sigma: self.sigma.sample(s)?,
            r_agg: &r + &r_tilde,
            q_agg: &q + &q_tilde,
            s_agg: &sm + &s_tilde,
            q,
            s: sm,
            r,
            q_tilde,
            s_tilde,
            r_tilde,
        })
    }

    /// Snapshots at every node of `grid`.
    pub fn snapshots(&self, grid: &TimeGrid<T>) -> Result<Vec<Snapshot<T>>> {
        grid.nodes().into_iter().map(|s| self.at(s)).collect()
    }

    pub fn aggregates(&self) -> Result<AggregateNotation<T>> {
        Ok(AggregateNotation {
            r_agg: add_paths(&self.r, &self.r_tilde, &self.grid)?,
            q_agg: add_paths(&self.q, &self.q_tilde, &self.grid)?,
            g_agg: &self.g + &self.g_tilde,
            s_agg: add_paths(&self.s, &self.s_tilde, &self.grid)?,
        })
    }

    /// Raw description reproducing this set on validation.
    pub fn to_spec(&self) -> ProblemSpec<T> {
        ProblemSpec {
            n: self.n,
            m: self.m,
            horizon: self.grid.horizon(),
            steps: self.grid.steps(),
            x0: self.x0.clone(),
            a: to_entry(&self.a),
            b: to_entry(&self.b),
            c: to_entry(&self.c),
            d: to_entry(&self.d),
            b_vec: to_entry(&self.b_vec),
            sigma: to_entry(&self.sigma),
            q: to_entry(&self.q),
            s: to_entry(&self.s),
            r: to_entry(&self.r),
            q_tilde: to_entry(&self.q_tilde),
            s_tilde: to_entry(&self.s_tilde),
            r_tilde: to_entry(&self.r_tilde),
            g: self.g.clone(),
            g_tilde: self.g_tilde.clone(),
            g_vec: self.g_vec.clone(),
        }
    }
}

/// Affine feedback `u = (Θ₁ + Θ₂)X + φ`.
///
/// Under a spike perturbation only the `Θ₁` part sees the perturbed state,
/// while `Θ₂` keeps acting on the unperturbed one.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackControl<T: Real> {
    pub theta1: MatrixPath<T>,
    pub theta2: MatrixPath<T>,
    pub phi: VectorPath<T>,
}

impl<T: Real> FeedbackControl<T> {
    pub fn new(theta1: MatrixPath<T>, theta2: MatrixPath<T>, phi: VectorPath<T>) -> Self {
        Self { theta1, theta2, phi }
    }

    /// Deterministic control `u = φ`.
    pub fn open_loop(u: VectorPath<T>, n: usize) -> Self {
        let horizon = u.horizon();
        let m = u.samples().next().map_or(0, |v| v.len());
        let zero = Path::constant(horizon, DMatrix::zeros(m, n));
        Self {
            theta1: zero.clone(),
            theta2: zero,
            phi: u,
        }
    }

    pub fn zero(problem: &CoefficientSet<T>) -> Self {
        Self::open_loop(
            Path::constant(problem.horizon(), DVector::zeros(problem.m())),
            problem.n(),
        )
    }

    pub fn is_deterministic(&self) -> bool {
        let zero = |p: &MatrixPath<T>| p.samples().all(|m| m.iter().all(|x| x.is_zero()));
        zero(&self.theta1) && zero(&self.theta2)
    }

    /// `(Θ₁(s), Θ₂(s), φ(s))`.
    pub fn at(&self, s: T) -> Result<(DMatrix<T>, DMatrix<T>, DVector<T>)> {
        Ok((self.theta1.sample(s)?, self.theta2.sample(s)?, self.phi.sample(s)?))
    }

    pub fn check_shape(&self, n: usize, m: usize) -> Result<()> {
        for (field, p) in [("theta1", &self.theta1), ("theta2", &self.theta2)] {
            for mat in p.samples() {
                if mat.shape() != (m, n) {
                    return Err(Error::dim(
                        field,
                        format!("{m}x{n}"),
                        format!("{}x{}", mat.nrows(), mat.ncols()),
                    ));
                }
                if !all_finite(mat) {
                    return Err(Error::NonFinite {
                        field: field.into(),
                        node: 0,
                    });
                }
            }
        }
        for v in self.phi.samples() {
            if v.len() != m {
                return Err(Error::dim("phi", m, v.len()));
            }
            if !all_finite(v) {
                return Err(Error::NonFinite {
                    field: "phi".into(),
                    node: 0,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn scalar_spec() -> ProblemSpec<f64> {
        let mut spec = ProblemSpec::new(1, 1, 1.0, 10);
        spec.a = dmatrix![0.3].into();
        spec.b = dmatrix![1.0].into();
        spec.q = dmatrix![2.0].into();
        spec.r = dmatrix![1.0].into();
        spec.g = dmatrix![1.0];
        spec
    }

    #[test]
    fn scalar_problem_has_no_correction() {
        let c = scalar_spec().validate().unwrap();
        assert_eq!(c.symmetry_correction(), 0.0);
    }

    #[test]
    fn roundoff_asymmetry_is_symmetrized() {
        let mut spec = ProblemSpec::new(2, 1, 1.0, 4);
        spec.q = dmatrix![1.0, 1.0; 1.0 + 1e-15, 2.0].into();
        let c = spec.validate().unwrap();
        let q = c.q().sample(0.5).unwrap();
        assert_eq!(q, q.transpose());
        assert!(c.symmetry_correction() > 0.0 && c.symmetry_correction() < 1e-14);
    }

    #[test]
    fn gross_asymmetry_is_rejected() {
        let mut spec = ProblemSpec::new(2, 1, 1.0, 4);
        spec.r_tilde = Entry::Zero;
        spec.q = dmatrix![1.0, 0.0; 1.0, 2.0].into();
        assert!(matches!(spec.validate(), Err(Error::Asymmetric { ref field, .. }) if field == "Q"));
    }

    #[test]
    fn wrong_b_shape_is_rejected() {
        let mut spec = ProblemSpec::new(2, 1, 1.0, 4);
        spec.b = DMatrix::<f64>::zeros(2, 2).into();
        assert!(matches!(spec.validate(), Err(Error::Dimension { ref field, .. }) if field == "B"));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut spec = scalar_spec();
        let mut nodes = vec![dmatrix![0.0]; 11];
        nodes[3] = dmatrix![f64::INFINITY];
        spec.c = Entry::PerNode(nodes);
        assert!(matches!(spec.validate(), Err(Error::NonFinite { node: 3, .. })));
    }

    #[test]
    fn per_node_count_checked() {
        let mut spec = scalar_spec();
        spec.a = Entry::PerNode(vec![dmatrix![0.0]; 10]);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_tilde_aggregate_equals_base() {
        let c = scalar_spec().validate().unwrap();
        let agg = c.aggregates().unwrap();
        assert_eq!(agg.r_agg, *c.r());
    }

    #[test]
    fn identity_sum() {
        let mut spec = ProblemSpec::new(2, 2, 1.0, 4);
        spec.r = DMatrix::<f64>::identity(2, 2).into();
        spec.r_tilde = DMatrix::<f64>::identity(2, 2).into();
        let agg = spec.validate().unwrap().aggregates().unwrap();
        assert_eq!(agg.r_agg.sample(0.3).unwrap(), DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn variance_weights_cancel_in_aggregate() {
        let mut spec = ProblemSpec::new(2, 1, 1.0, 4);
        spec.g = DMatrix::identity(2, 2);
        spec.g_tilde = -DMatrix::<f64>::identity(2, 2);
        let agg = spec.validate().unwrap().aggregates().unwrap();
        assert_eq!(agg.g_agg, DMatrix::zeros(2, 2));
    }

    #[test]
    fn mixed_paths_aggregate_on_grid() {
        let mut spec = scalar_spec();
        spec.r_tilde = Entry::PerNode((0..=10).map(|k| dmatrix![k as f64]).collect());
        let c = spec.validate().unwrap();
        let agg = c.aggregates().unwrap();
        for k in 0..=10 {
            let t = c.grid().node(k);
            assert_eq!(agg.r_agg.sample(t).unwrap()[(0, 0)], 1.0 + k as f64);
        }
    }

    #[test]
    fn feedback_open_loop_is_deterministic() {
        let c = scalar_spec().validate().unwrap();
        let u = FeedbackControl::open_loop(Path::constant(1.0, dvector![0.5]), 1);
        assert!(u.is_deterministic());
        u.check_shape(c.n(), c.m()).unwrap();
    }

    fn arb_sym(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-3.0..3.0f64, n * n).prop_map(move |v| {
            let m = DMatrix::from_vec(n, n, v);
            (&m + m.transpose()) * 0.5
        })
    }

    proptest! {
        #[test]
        fn validate_is_idempotent(q in arb_sym(2), r in arb_sym(2), a in arb_sym(2)) {
            let mut spec = ProblemSpec::new(2, 2, 1.5, 6);
            spec.q = q.into();
            spec.r = r.into();
            spec.a = a.into();
            let once = spec.validate().unwrap();
            let twice = once.to_spec().validate().unwrap();
            prop_assert_eq!(once.to_spec(), twice.to_spec());
            prop_assert_eq!(twice.symmetry_correction(), 0.0);
        }

        #[test]
        fn aggregates_are_linear(r1 in arb_sym(2), r2 in arb_sym(2), rt1 in arb_sym(2), rt2 in arb_sym(2)) {
            let build = |r: &DMatrix<f64>, rt: &DMatrix<f64>| {
                let mut spec = ProblemSpec::new(2, 2, 1.0, 4);
                spec.r = r.clone().into();
                spec.r_tilde = rt.clone().into();
                spec.g_tilde = rt.clone();
                spec.validate().unwrap().aggregates().unwrap()
            };
            let sum = build(&(&r1 + &r2), &(&rt1 + &rt2));
            let a1 = build(&r1, &rt1);
            let a2 = build(&r2, &rt2);
            let lhs = sum.r_agg.sample(0.5).unwrap();
            let rhs = a1.r_agg.sample(0.5).unwrap() + a2.r_agg.sample(0.5).unwrap();
            prop_assert!((lhs - rhs).amax() <= 1e-12);
            prop_assert!((sum.g_agg - (a1.g_agg + a2.g_agg)).amax() <= 1e-12);
        }
    }
}
