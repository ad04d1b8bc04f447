use super::{ConicProblem, Lin, Var};

/// `u v >= w²` with `u, v >= 0`.
pub fn encode_hyperbolic(p: &mut ConicProblem, u: impl Into<Lin>, v: impl Into<Lin>, w: impl Into<Lin>) {
    p.rsoc(u, v, vec![w.into()]);
}

/// `f³ <= s` for `f >= 0` through an auxiliary `y` with `f² <= y` and
/// `y² <= s f`. Returns `y`.
pub fn encode_cube_bound(p: &mut ConicProblem, f: impl Into<Lin>, s: impl Into<Lin>) -> Var {
    let f = f.into();
    let y = p.var();
    p.rsoc(y, Lin::constant(1.0), vec![f.clone()]);
    p.rsoc(s, f, vec![Lin::from(y)]);
    y
}
