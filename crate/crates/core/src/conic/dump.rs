use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::ConicProblem;
use crate::{Error, Result};

/// Plain-text standard form, one record per line:
///
/// ```text
/// vars <n>
/// objective <constant> [<j>:<coef> ...]
/// cone <kind> <dim>
/// row <i> <constant> [<j>:<coef> ...]
/// ```
///
/// Each row is an affine expression, and consecutive rows fill the cones in
/// order.
pub fn to_text(p: &ConicProblem) -> String {
    let mut out = String::new();
    let fmt_terms = |out: &mut String, e: &super::Lin| {
        let _ = write!(out, " {:e}", e.constant);
        for &(j, a) in &e.terms {
            let _ = write!(out, " {j}:{a:e}");
        }
        out.push('\n');
    };
    let _ = writeln!(out, "vars {}", p.num_vars());
    out.push_str("objective");
    fmt_terms(&mut out, p.objective());
    for c in p.cones() {
        let _ = writeln!(out, "cone {} {}", c.kind.name(), c.dim);
    }
    for (i, r) in p.rows().iter().enumerate() {
        let _ = write!(out, "row {i}");
        fmt_terms(&mut out, r);
    }
    out
}

pub fn write_text(p: &ConicProblem, path: &Path) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(to_text(p).as_bytes()).map_err(io)
}
