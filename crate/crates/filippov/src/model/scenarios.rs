//! Built-in scenarios. All use `a = 1`, `m = 2` and `f = 1`.
//!
//! * `s1`: regular-fold at `(-1, 0)`; the closing orbit is the graph of the
//!   antiderivative of `-(x+1)(x-1/3)`, which vanishes again at `x = 1`.
//! * `s2`: regular-cusp at `(-1, 0)`, `g = (x+1)^2 (1/2 - x)` at `alpha = 0`.
//! * `s3`: fold-fold at `(-1, 0)` and `(1, 0)`; the linear equation
//!   `y' = x^3 - x + c (x^2 - 1) + y` has the orbit through `(-1, 0)` returning
//!   to `(1, 0)` exactly when `c = (e^2 - 7) / 2`.

use super::FilippovModel;
use crate::error::{Error, Result};
use crate::exprs::parse_expr;

/// The constant `(e^2 - 7) / 2` of scenario `s3`.
pub const S3_CONSTANT: f64 = 0.194_528_049_465_325_2;

const S1_G: &str = "-(x+1)*(x-1/3) + a1 + a2*(x+1)";
const S2_G: &str = "(x+1)^2*(1/2-x) + a1 + a2*(x+1)";
const S3_G: &str = "x^3 - x + (exp(2)-7)/2*(x^2-1) + y + a1 + a2*x";

pub fn scenario_names() -> [&'static str; 3] {
    ["s1", "s2", "s3"]
}

/// One-line description used by the CLI listing.
pub fn scenario_summary(name: &str) -> Option<&'static str> {
    Some(match name {
        "s1" => "regular-fold (codim1): g = -(x+1)(x-1/3) + a1 + a2(x+1)",
        "s2" => "regular-cusp (cusp): g = (x+1)^2(1/2-x) + a1 + a2(x+1)",
        "s3" => "fold-fold (foldfold): g = x^3 - x + c(x^2-1) + y + a1 + a2 x, c = (e^2-7)/2",
        _ => return None,
    })
}

pub fn load_scenario(name: &str) -> Result<FilippovModel> {
    let g = match name.to_ascii_lowercase().as_str() {
        "s1" => S1_G,
        "s2" => S2_G,
        "s3" => S3_G,
        other => return Err(Error::ModelFile(format!("unknown scenario `{other}`"))),
    };
    let f = parse_expr("1", 2)?;
    let g = parse_expr(g, 2)?;
    FilippovModel::new(f, g, 2, 1.0, &name.to_ascii_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s3_constant_matches_closed_form() {
        assert!((S3_CONSTANT - (2f64.exp() - 7.0) / 2.0).abs() < 1e-16);
    }

    #[test]
    fn unknown_scenario() {
        assert!(load_scenario("s9").is_err());
    }
}
