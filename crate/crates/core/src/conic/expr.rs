use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// Handle to a decision variable of a [`super::ConicProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine expression `Σ a_j x_j + c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lin {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Lin {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn term(v: Var, a: f64) -> Self {
        Self { terms: vec![(v.0, a)], constant: 0.0 }
    }

    pub fn add_term(&mut self, v: Var, a: f64) {
        if a != 0.0 {
            self.terms.push((v.0, a));
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (j, a) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => out.push((j, a)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Self { terms: out, constant: self.constant }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }
}

impl From<Var> for Lin {
    fn from(v: Var) -> Self {
        Lin::term(v, 1.0)
    }
}

impl From<f64> for Lin {
    fn from(c: f64) -> Self {
        Lin::constant(c)
    }
}

impl<T: Into<Lin>> AddAssign<T> for Lin {
    fn add_assign(&mut self, rhs: T) {
        let rhs = rhs.into();
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl<T: Into<Lin>> SubAssign<T> for Lin {
    fn sub_assign(&mut self, rhs: T) {
        *self += rhs.into().scaled(-1.0);
    }
}

impl<T: Into<Lin>> Add<T> for Lin {
    type Output = Lin;
    fn add(mut self, rhs: T) -> Lin {
        self += rhs;
        self
    }
}

impl<T: Into<Lin>> Sub<T> for Lin {
    type Output = Lin;
    fn sub(mut self, rhs: T) -> Lin {
        self -= rhs;
        self
    }
}

impl<T: Into<Lin>> Add<T> for Var {
    type Output = Lin;
    fn add(self, rhs: T) -> Lin {
        Lin::from(self) + rhs
    }
}

impl<T: Into<Lin>> Sub<T> for Var {
    type Output = Lin;
    fn sub(self, rhs: T) -> Lin {
        Lin::from(self) - rhs
    }
}

impl Neg for Lin {
    type Output = Lin;
    fn neg(self) -> Lin {
        self.scaled(-1.0)
    }
}

impl Neg for Var {
    type Output = Lin;
    fn neg(self) -> Lin {
        Lin::term(self, -1.0)
    }
}

impl Mul<f64> for Lin {
    type Output = Lin;
    fn mul(self, s: f64) -> Lin {
        self.scaled(s)
    }
}

impl Mul<Lin> for f64 {
    type Output = Lin;
    fn mul(self, e: Lin) -> Lin {
        e.scaled(self)
    }
}

impl Mul<Var> for f64 {
    type Output = Lin;
    fn mul(self, v: Var) -> Lin {
        Lin::term(v, self)
    }
}

impl Mul<f64> for Var {
    type Output = Lin;
    fn mul(self, s: f64) -> Lin {
        Lin::term(self, s)
    }
}
