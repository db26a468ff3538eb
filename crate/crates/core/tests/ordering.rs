use lodpatch::midoc::{midoc_linear, midoc_recursive, order_points, OrderOptions};
use lodpatch::intralevel::IntraOrderKind;
use lodpatch::quant::QuantDomain;
use proptest::prelude::*;

fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 1..200)
}

fn unit(level: u8) -> QuantDomain {
    QuantDomain::new([0.0; 3], 1.0, level).unwrap()
}

proptest! {
    #[test]
    fn linear_matches_recursive(points in cloud(), levels in 0u8..=5) {
        let d = unit(levels.max(1));
        prop_assert_eq!(midoc_linear(&points, &d, levels).unwrap(), midoc_recursive(&points, &d, levels).unwrap());
    }

    #[test]
    fn reordering_is_idempotent(points in cloud(), levels in 1u8..=5, kind in 0usize..5) {
        let intra = [
            IntraOrderKind::AxisY,
            IntraOrderKind::Random { seed: 3 },
            IntraOrderKind::Halton,
            IntraOrderKind::ReverseMorton { offset: 0 },
            IntraOrderKind::ReverseHilbert { offset: 0 },
        ][kind];
        let opts = OrderOptions { levels, intra };
        let first = order_points(&points, &unit(levels), opts).unwrap();
        let ordered: Vec<[f64; 3]> = first.order.iter().map(|&i| points[i]).collect();
        let again = order_points(&ordered, &unit(levels), opts).unwrap();
        let replayed: Vec<[f64; 3]> = again.order.iter().map(|&i| ordered[i]).collect();
        prop_assert_eq!(again.ppl, first.ppl);
        if !matches!(intra, IntraOrderKind::Random { .. }) {
            prop_assert_eq!(replayed, ordered);
        }
    }

    #[test]
    fn cardinality_bounds(points in cloud(), levels in 1u8..=5) {
        let r = midoc_linear(&points, &unit(levels), levels).unwrap();
        for (l, &n) in r.ppl.iter().enumerate() {
            prop_assert!(n <= 8u64.pow(l as u32));
            if l > 0 {
                prop_assert!(n <= 8 * r.ppl[..l].iter().sum::<u64>().max(1));
            }
        }
        prop_assert_eq!(r.ppl.iter().sum::<u64>() as usize + r.inf_count(), points.len());
    }
}

#[test]
fn octant_centers_take_one_level() {
    let pts: Vec<[f64; 3]> = (0..8)
        .map(|o| [0.25 + 0.5 * f64::from(o >> 2 & 1), 0.25 + 0.5 * f64::from(o >> 1 & 1), 0.25 + 0.5 * f64::from(o & 1)])
        .collect();
    let r = midoc_linear(&pts, &unit(2), 2).unwrap();
    assert_eq!(r.ppl, vec![1, 7, 0]);
    assert_eq!(r.inf_count(), 0);
}
