//! Fixed-format MPS export, for handing a program to another solver when
//! debugging.

use std::fmt::Write;

use crate::scalar::Scalar;

use super::LinearProgram;

/// Formats `v` into at most 12 characters.
fn num12(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e11 {
        return format!("{v:.0}");
    }
    for prec in (0..=6).rev() {
        let s = format!("{v:.prec$e}");
        if s.len() <= 12 {
            return s;
        }
    }
    format!("{v:.0e}")
}

fn line(out: &mut String, code: &str, name: &str, f1: &str, v1: Option<f64>) {
    // Field columns: 2-3, 5-12, 15-22, 25-36.
    let _ = write!(out, " {code:<2} {name:<8}  {f1:<8}");
    if let Some(v) = v1 {
        let _ = write!(out, "  {:>12}", num12(v));
    }
    out.push('\n');
}

pub fn write_mps<T: Scalar>(lp: &LinearProgram<T>, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {}", &name[..name.len().min(8)]);
    out.push_str("ROWS\n");
    out.push_str(" N  COST\n");
    let mi = lp.inequalities().len();
    let row_name = |r: usize| {
        if r < mi {
            format!("L{r:07}")
        } else {
            format!("E{:07}", r - mi)
        }
    };
    for r in 0..mi {
        let _ = writeln!(out, " L  {}", row_name(r));
    }
    for r in 0..lp.equalities().len() {
        let _ = writeln!(out, " E  {}", row_name(mi + r));
    }
    let n = lp.num_vars();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, c) in lp.inequalities().iter().chain(lp.equalities()).enumerate() {
        for &(j, v) in &c.row.entries {
            cols[j].push((r, v.as_f64()));
        }
    }
    out.push_str("COLUMNS\n");
    for (j, col) in cols.iter().enumerate() {
        let cname = format!("X{j:07}");
        let c = lp.objective()[j].as_f64();
        if c != 0.0 {
            line(&mut out, "", &cname, "COST", Some(c));
        }
        for &(r, v) in col {
            line(&mut out, "", &cname, &row_name(r), Some(v));
        }
    }
    out.push_str("RHS\n");
    for (r, c) in lp.inequalities().iter().chain(lp.equalities()).enumerate() {
        let v = c.rhs.as_f64();
        if v != 0.0 {
            line(&mut out, "", "RHS", &row_name(r), Some(v));
        }
    }
    out.push_str("BOUNDS\n");
    for j in 0..n {
        let cname = format!("X{j:07}");
        let (l, u) = lp.bounds(j);
        let (l, u) = (l.as_f64(), u.as_f64());
        if l == u {
            line(&mut out, "FX", "BND", &cname, Some(l));
            continue;
        }
        match (l.is_finite(), u.is_finite()) {
            (false, false) => line(&mut out, "FR", "BND", &cname, None),
            (false, true) => {
                line(&mut out, "MI", "BND", &cname, None);
                line(&mut out, "UP", "BND", &cname, Some(u));
            }
            (true, fu) => {
                if l != 0.0 {
                    line(&mut out, "LO", "BND", &cname, Some(l));
                }
                if fu {
                    line(&mut out, "UP", "BND", &cname, Some(u));
                }
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}
