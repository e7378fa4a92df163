//! CSV and report output.
//!
//! Columns are `t`, then positions (`q…` or `x…`), velocities (`v…`, not for
//! control problems), multipliers (`mu…`), controls (`u…`) and `z`. Values
//! are written with 17 significant digits so they read back exactly.

use std::io::{self, Write};

use herglotz::DiscretePath;

use crate::problem::Kind;

pub fn header(kind: Kind, path: &DiscretePath) -> Vec<String> {
    let n = path.dim();
    let control = kind == Kind::Hocp;
    let mut cols = vec!["t".to_string()];
    let pos = if control { "x" } else { "q" };
    cols.extend((1..=n).map(|i| format!("{pos}{i}")));
    if !control {
        cols.extend((1..=n).map(|i| format!("v{i}")));
    }
    if let Some(mu) = &path.mu {
        cols.extend((1..=mu[0].len()).map(|i| format!("mu{i}")));
    }
    if let Some(u) = &path.u {
        cols.extend((1..=u[0].len()).map(|i| format!("u{i}")));
    }
    cols.push("z".into());
    cols
}

pub fn row(kind: Kind, path: &DiscretePath, i: usize) -> Vec<f64> {
    let mut r = vec![path.times[i]];
    r.extend_from_slice(&path.q[i]);
    if kind != Kind::Hocp {
        r.extend_from_slice(&path.v[i]);
    }
    if let Some(mu) = &path.mu {
        r.extend_from_slice(&mu[i]);
    }
    if let Some(u) = &path.u {
        r.extend_from_slice(&u[i]);
    }
    if let Some(z) = &path.z {
        r.push(z[i]);
    }
    r
}

pub fn write_csv<W: Write>(mut w: W, kind: Kind, path: &DiscretePath) -> io::Result<()> {
    writeln!(w, "{}", header(kind, path).join(","))?;
    for i in 0..path.len() {
        let cells: Vec<String> = row(kind, path, i).iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_round_trip() {
        let path = DiscretePath::new(vec![0.0, 0.1], vec![vec![1.0 / 3.0], vec![-2e-300]], vec![vec![0.0], vec![1e300]])
            .unwrap()
            .with_z(vec![std::f64::consts::PI, -0.0])
            .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, Kind::HerglotzIvp, &path).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,q1,v1,z"));
        for (i, line) in lines.enumerate() {
            let parsed: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(parsed, row(Kind::HerglotzIvp, &path, i));
        }
    }

    #[test]
    fn control_columns() {
        let path = DiscretePath::new(vec![0.0, 1.0], vec![vec![0.0]; 2], vec![vec![1.0]; 2])
            .unwrap()
            .with_z(vec![0.0, -0.5])
            .unwrap()
            .with_mu(vec![vec![-1.0]; 2])
            .unwrap()
            .with_u(vec![vec![1.0]; 2])
            .unwrap();
        assert_eq!(header(Kind::Hocp, &path), ["t", "x1", "mu1", "u1", "z"]);
        assert_eq!(row(Kind::Hocp, &path, 1), [1.0, 0.0, -1.0, 1.0, -0.5]);
    }
}
