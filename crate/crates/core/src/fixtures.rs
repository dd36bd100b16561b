//! Small models with known invariants.

use crate::error::{Error, Result};
use crate::linalg::{c64, CMat, C64, ZERO};
use crate::model::ChiralModel;
use crate::tol::Tolerances;

fn two_band(v: C64, a_pm: C64, a_mp: C64) -> ChiralModel {
    let m = |z: C64| CMat::from_element(1, 1, z);
    ChiralModel::from_blocks(m(v), vec![m(a_pm)], vec![m(a_mp)], &Tolerances::default())
        .expect("two-band fixture is chiral by construction")
}

/// `V = 0`, `A = [[0,0],[1,0]]`: `h_{+-}(lambda) = lambda`, winding `+1`.
pub fn dimerized_plus() -> ChiralModel {
    two_band(ZERO, c64(1.0, 0.0), ZERO)
}

/// `V = 0`, `A = [[0,1],[0,0]]`: `h_{+-}(lambda) = 1/lambda`, winding `-1`.
pub fn dimerized_minus() -> ChiralModel {
    two_band(ZERO, ZERO, c64(1.0, 0.0))
}

/// `V = [[0,1],[1,0]]`, `A = 0`: no hopping between cells.
pub fn dimerized_trivial() -> ChiralModel {
    two_band(c64(1.0, 0.0), ZERO, ZERO)
}

/// `h_{+-}(lambda) = t1 + t2 lambda`.
pub fn ssh(t1: f64, t2: f64) -> ChiralModel {
    two_band(c64(t1, 0.0), c64(t2, 0.0), ZERO)
}

/// `V = [[0,1],[1,0]]`, `A = e^{i theta} [[0,1/4],[1,0]]`. The zero-energy
/// companion matrix is defective with double roots `-e^{-i theta}/2` and
/// `-2 e^{-i theta}`.
pub fn double_root(theta: f64) -> ChiralModel {
    let e = C64::from_polar(1.0, theta);
    two_band(c64(1.0, 0.0), e, 0.25 * e)
}

/// Resolve a fixture name. `dimerized-all` yields three models; parametric
/// fixtures take `ssh:t1,t2` and `double-root:theta`.
pub fn by_name(name: &str) -> Result<Vec<(String, ChiralModel)>> {
    let bad = || Error::InvalidArgument(format!("unknown fixture '{name}'"));
    let parse = |s: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad fixture parameter '{s}' in '{name}'")))
    };
    let (head, args) = match name.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (name, None),
    };
    let one = |m: ChiralModel| Ok(vec![(name.to_string(), m)]);
    match (head, args) {
        ("dimerized-plus", None) => one(dimerized_plus()),
        ("dimerized-minus", None) => one(dimerized_minus()),
        ("dimerized-trivial", None) => one(dimerized_trivial()),
        ("dimerized-all", None) => Ok(vec![
            ("dimerized-plus".into(), dimerized_plus()),
            ("dimerized-minus".into(), dimerized_minus()),
            ("dimerized-trivial".into(), dimerized_trivial()),
        ]),
        ("ssh", Some(a)) => {
            let (t1, t2) = a.split_once(',').ok_or_else(bad)?;
            one(ssh(parse(t1)?, parse(t2)?))
        }
        ("double-root", Some(a)) => one(double_root(parse(a)?)),
        ("double-root", None) => one(double_root(0.0)),
        _ => Err(bad()),
    }
}

pub const NAMES: [&str; 6] =
    ["dimerized-plus", "dimerized-minus", "dimerized-trivial", "dimerized-all", "ssh:<t1>,<t2>", "double-root:<theta>"];
