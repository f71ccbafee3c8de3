//! Configuration-code grammar used to label reranking runs, e.g.
//! `K400_N200_scan2000`, `K200_lk10_a0p950_it5`, `K3_a2.0`, `K400_C500_S42`
//! and `ext_extpool_size3000_K400_N100_seed42`.
//!
//! Parsing is strict: a code is accepted only if emitting the parsed spec
//! reproduces it byte for byte.

use serde::{Deserialize, Serialize};

use super::{CohortSpec, NormMethod, RerankMethod, RerankSpec};
use crate::error::{Error, Result};

/// Formatting details that do not change behavior but must survive a
/// parse/emit round trip.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeStyle {
    /// Leading `internal_`.
    pub internal_prefix: bool,
    /// Diffusion alpha written as `a0.950` rather than `a0p950`.
    pub dotted_alpha: bool,
    /// `N` field of external-cohort codes for methods that do not use it.
    pub label_n: Option<usize>,
}

fn bad(code: &str, reason: impl Into<String>) -> Error {
    Error::ConfigCode {
        code: code.to_string(),
        reason: reason.into(),
    }
}

fn field<'a>(code: &str, part: Option<&'a str>, prefix: &str) -> Result<&'a str> {
    part.and_then(|p| p.strip_prefix(prefix))
        .ok_or_else(|| bad(code, format!("expected field `{prefix}...`")))
}

fn int(code: &str, part: Option<&str>, prefix: &str) -> Result<usize> {
    field(code, part, prefix)?
        .parse()
        .map_err(|_| bad(code, format!("`{prefix}` must be an unsigned integer")))
}

fn int64(code: &str, part: Option<&str>, prefix: &str) -> Result<u64> {
    field(code, part, prefix)?
        .parse()
        .map_err(|_| bad(code, format!("`{prefix}` must be an unsigned integer")))
}

fn finish<'a>(code: &str, mut parts: impl Iterator<Item = &'a str>) -> Result<()> {
    match parts.next() {
        None => Ok(()),
        Some(extra) => Err(bad(code, format!("unexpected trailing field `{extra}`"))),
    }
}

pub(crate) fn method_name(method: &RerankMethod) -> &'static str {
    match method {
        RerankMethod::Baseline => "baseline",
        RerankMethod::BestOfK => "bestofk",
        RerankMethod::Norm(NormMethod::Z) => "znorm",
        RerankMethod::Norm(NormMethod::T) => "tnorm",
        RerankMethod::Norm(NormMethod::S) => "snorm",
        RerankMethod::Norm(NormMethod::C) => "cnorm",
        RerankMethod::AsNorm { .. } => "asnorm",
        RerankMethod::Diffusion { .. } => "diffusion",
        RerankMethod::AlphaQe { .. } => "aqe",
    }
}

/// Parses a method name plus configuration code. `default_shortlist_k` is
/// used only by query expansion, whose code carries the expansion size
/// instead of the shortlist size.
pub fn parse(method: &str, code: &str, default_shortlist_k: usize) -> Result<RerankSpec> {
    let spec = parse_loose(method, code, default_shortlist_k)?;
    let emitted = spec.code();
    if emitted != code {
        return Err(bad(
            code,
            format!("non-canonical form (canonical: `{emitted}`)"),
        ));
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_external(code: &str, rest: &str) -> Result<(String, usize, usize, usize, u64)> {
    let at = rest
        .find("_size")
        .ok_or_else(|| bad(code, "external code needs `_size<C>`"))?;
    let pool = &rest[..at];
    if pool.is_empty() {
        return Err(bad(code, "empty pool label"));
    }
    let mut parts = rest[at + 1..].split('_');
    let size = int(code, parts.next(), "size")?;
    let k = int(code, parts.next(), "K")?;
    let n = int(code, parts.next(), "N")?;
    let seed = int64(code, parts.next(), "seed")?;
    finish(code, parts)?;
    Ok((pool.to_string(), size, k, n, seed))
}

fn parse_loose(method: &str, code: &str, default_shortlist_k: usize) -> Result<RerankSpec> {
    let norm = match method {
        "znorm" => Some(NormMethod::Z),
        "tnorm" => Some(NormMethod::T),
        "snorm" => Some(NormMethod::S),
        "cnorm" => Some(NormMethod::C),
        _ => None,
    };
    let mut style = CodeStyle::default();
    if let Some(rest) = code.strip_prefix("ext_") {
        let (pool, size, k, n, seed) = parse_external(code, rest)?;
        let cohort = CohortSpec::External { pool, size, seed };
        let method = if let Some(m) = norm {
            style.label_n = Some(n);
            RerankMethod::Norm(m)
        } else if method == "asnorm" {
            RerankMethod::AsNorm {
                top_n: n,
                scan: None,
            }
        } else {
            return Err(bad(
                code,
                format!("method `{method}` does not take an external cohort"),
            ));
        };
        return Ok(RerankSpec {
            method,
            shortlist_k: k,
            cohort,
            style,
        });
    }
    let body = match code.strip_prefix("internal_") {
        Some(b) => {
            style.internal_prefix = true;
            b
        }
        None => code,
    };
    let mut parts = body.split('_');
    let spec = match method {
        "baseline" => {
            if body != "baseline" || style.internal_prefix {
                return Err(bad(code, "baseline code is `baseline`"));
            }
            RerankSpec {
                method: RerankMethod::Baseline,
                shortlist_k: default_shortlist_k,
                cohort: CohortSpec::None,
                style,
            }
        }
        "bestofk" => {
            let k = int(code, parts.next(), "K")?;
            finish(code, parts)?;
            RerankSpec {
                method: RerankMethod::BestOfK,
                shortlist_k: k,
                cohort: CohortSpec::None,
                style,
            }
        }
        "znorm" | "tnorm" | "snorm" | "cnorm" => {
            let k = int(code, parts.next(), "K")?;
            let size = int(code, parts.next(), "C")?;
            let seed = int64(code, parts.next(), "S")?;
            finish(code, parts)?;
            RerankSpec {
                method: RerankMethod::Norm(norm.unwrap()),
                shortlist_k: k,
                cohort: CohortSpec::Internal { size, seed },
                style,
            }
        }
        "asnorm" => {
            let k = int(code, parts.next(), "K")?;
            let top_n = int(code, parts.next(), "N")?;
            let scan = int(code, parts.next(), "scan")?;
            finish(code, parts)?;
            RerankSpec {
                method: RerankMethod::AsNorm {
                    top_n,
                    scan: Some(scan),
                },
                shortlist_k: k,
                cohort: CohortSpec::Gallery,
                style,
            }
        }
        "diffusion" => {
            let k = int(code, parts.next(), "K")?;
            let local_k = int(code, parts.next(), "lk")?;
            let a = field(code, parts.next(), "a")?;
            let iterations = int(code, parts.next(), "it")?;
            finish(code, parts)?;
            style.dotted_alpha = a.contains('.');
            let alpha: f64 = a
                .replace('p', ".")
                .parse()
                .map_err(|_| bad(code, "diffusion alpha must look like 0p950"))?;
            RerankSpec {
                method: RerankMethod::Diffusion {
                    local_k,
                    alpha,
                    iterations,
                },
                shortlist_k: k,
                cohort: CohortSpec::None,
                style,
            }
        }
        "aqe" | "alphaqe" => {
            let qe_k = int(code, parts.next(), "K")?;
            let alpha: f64 = field(code, parts.next(), "a")?
                .parse()
                .map_err(|_| bad(code, "query-expansion alpha must be a decimal like 2.0"))?;
            finish(code, parts)?;
            RerankSpec {
                method: RerankMethod::AlphaQe { qe_k, alpha },
                shortlist_k: default_shortlist_k,
                cohort: CohortSpec::None,
                style,
            }
        }
        other => return Err(bad(code, format!("unknown method `{other}`"))),
    };
    Ok(spec)
}

pub(crate) fn emit(spec: &RerankSpec) -> String {
    let prefix = if spec.style.internal_prefix {
        "internal_"
    } else {
        ""
    };
    let k = spec.shortlist_k;
    match (&spec.method, &spec.cohort) {
        (RerankMethod::Baseline, _) => "baseline".to_string(),
        (RerankMethod::BestOfK, _) => format!("{prefix}K{k}"),
        (RerankMethod::Norm(_), CohortSpec::External { pool, size, seed }) => {
            let n = spec.style.label_n.unwrap_or(0);
            format!("ext_{pool}_size{size}_K{k}_N{n}_seed{seed}")
        }
        (RerankMethod::AsNorm { top_n, .. }, CohortSpec::External { pool, size, seed }) => {
            format!("ext_{pool}_size{size}_K{k}_N{top_n}_seed{seed}")
        }
        (RerankMethod::Norm(_), CohortSpec::Internal { size, seed }) => {
            format!("{prefix}K{k}_C{size}_S{seed}")
        }
        (RerankMethod::Norm(_), _) => format!("{prefix}K{k}"),
        (RerankMethod::AsNorm { top_n, scan }, _) => match scan {
            Some(scan) => format!("{prefix}K{k}_N{top_n}_scan{scan}"),
            None => format!("{prefix}K{k}_N{top_n}"),
        },
        (
            RerankMethod::Diffusion {
                local_k,
                alpha,
                iterations,
            },
            _,
        ) => {
            let a = format!("{alpha:.3}");
            let a = if spec.style.dotted_alpha {
                a
            } else {
                a.replace('.', "p")
            };
            format!("{prefix}K{k}_lk{local_k}_a{a}_it{iterations}")
        }
        (RerankMethod::AlphaQe { qe_k, alpha }, _) => format!("{prefix}K{qe_k}_a{alpha:?}"),
    }
}
