//! Browser bindings for the demo page. Every export returns a JSON string so
//! the page needs no generated type glue.

use lodpatch::descriptor::{dim_cov, dim_lod, FusionMethod};
use lodpatch::intralevel::{order_plane, star_discrepancy_estimate, IntraOrderKind};
use lodpatch::midoc::{order_points, OrderOptions, LEVEL_INF};
use lodpatch::quant::QuantDomain;
use lodpatch::synth::{seeded_shape, Shape};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn fused(ppl: &[u64], method: FusionMethod) -> Value {
    match dim_lod(ppl, method) {
        Ok(d) => json!({ "fused": d.fused, "low_confidence": d.low_confidence, "per_level": d.per_level }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

/// Orders a synthetic `line`, `plane` or `volume` patch in the unit cube.
/// Returns the points in output order with their level, plus ppl and
/// dimension estimates.
#[wasm_bindgen]
pub fn order_shape(shape: &str, n: usize, seed: u64, levels: u8, intra: &str) -> Result<String, JsValue> {
    let shape = Shape::from_name(shape).ok_or_else(|| err(format!("unknown shape {shape:?}")))?;
    let intra: IntraOrderKind = intra.parse().map_err(err)?;
    let points = seeded_shape(shape, n, seed);
    let domain = QuantDomain::new([0.0; 3], 1.0, levels.max(1)).map_err(err)?;
    let res = order_points(&points, &domain, OrderOptions { levels, intra }).map_err(err)?;
    let ordered: Vec<[f64; 3]> = res.order.iter().map(|&i| points[i]).collect();
    let level: Vec<i32> =
        res.levels_in_order().into_iter().map(|l| if l == LEVEL_INF { -1 } else { i32::from(l) }).collect();
    let cov = dim_cov(&points).map_err(err)?;
    Ok(json!({
        "points": ordered,
        "level": level,
        "ppl": res.ppl,
        "dim_lod_ransac": fused(&res.ppl, FusionMethod::Ransac),
        "dim_lod_median": fused(&res.ppl, FusionMethod::Median),
        "dim_cov": cov.dim,
        "p_dim": cov.p_dim,
    })
    .to_string())
}

/// Orders the cell centers of a `2^bits` square grid with one intra-level
/// order and reports the star discrepancy of growing prefixes.
#[wasm_bindgen]
pub fn order_grid(intra: &str, bits: u8) -> Result<String, JsValue> {
    if !(1..=6).contains(&bits) {
        return Err(err("bits must be between 1 and 6"));
    }
    let kind: IntraOrderKind = intra.parse().map_err(err)?;
    let n = 1usize << bits;
    let cells: Vec<[f64; 2]> =
        (0..n * n).map(|k| [((k % n) as f64 + 0.5) / n as f64, ((k / n) as f64 + 0.5) / n as f64]).collect();
    let order = order_plane(&cells, bits, kind).map_err(err)?;
    let ordered: Vec<[f64; 2]> = order.iter().map(|&i| cells[i]).collect();
    let mut prefixes = Vec::new();
    let mut m = 4;
    while m < ordered.len() {
        let d = star_discrepancy_estimate(&ordered[..m], 2000, 7).map_err(err)?;
        prefixes.push(json!({ "n": m, "discrepancy": d }));
        m *= 2;
    }
    Ok(json!({ "points": ordered, "prefixes": prefixes }).to_string())
}

/// Dimension estimates from a comma separated points-per-level list.
#[wasm_bindgen]
pub fn describe_ppl(ppl: &str) -> Result<String, JsValue> {
    let ppl: Vec<u64> = ppl.split(',').map(|t| t.trim().parse::<u64>()).collect::<Result<_, _>>().map_err(err)?;
    Ok(json!({
        "simple": fused(&ppl, FusionMethod::Simple),
        "diff": fused(&ppl, FusionMethod::Diff),
        "ransac": fused(&ppl, FusionMethod::Ransac),
        "median": fused(&ppl, FusionMethod::Median),
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_json_has_all_points() {
        let v: Value = serde_json::from_str(&order_shape("plane", 300, 3, 5, "reverse-morton").unwrap()).unwrap();
        assert_eq!(v["points"].as_array().unwrap().len(), 300);
        assert_eq!(v["ppl"][0], 1);
    }

    #[test]
    fn grid_and_ppl() {
        let v: Value = serde_json::from_str(&order_grid("halton", 4).unwrap()).unwrap();
        assert_eq!(v["points"].as_array().unwrap().len(), 256);
        let d: Value = serde_json::from_str(&describe_ppl("1,8,36,74").unwrap()).unwrap();
        assert!(d["simple"]["fused"].is_number());
    }
}
