use lodpatch::quant::{
    bit_reverse, deinterleave, hilbert_decode, hilbert_encode, interleave, morton_decode, morton_encode, CellAddress,
    QuantCoord, QuantDomain,
};
use proptest::prelude::*;

fn coord(bits: u8) -> impl Strategy<Value = QuantCoord> {
    let n = 1u32 << bits;
    (0..n, 0..n, 0..n).prop_map(|(x, y, z)| QuantCoord::new(x, y, z))
}

proptest! {
    #[test]
    fn morton_round_trips((bits, q) in (1u8..=21).prop_flat_map(|b| (Just(b), coord(b)))) {
        prop_assert_eq!(morton_decode(morton_encode(q, bits), bits).unwrap(), q);
    }

    #[test]
    fn hilbert_round_trips((bits, q) in (1u8..=21).prop_flat_map(|b| (Just(b), coord(b)))) {
        prop_assert_eq!(hilbert_decode(hilbert_encode(q, bits), bits).unwrap(), q);
    }

    #[test]
    fn hilbert_steps_are_unit((bits, code) in (1u8..=10).prop_flat_map(|b| (Just(b), 0..(1u64 << (3 * b)) - 1))) {
        let a = hilbert_decode(code, bits).unwrap().to_array();
        let b = hilbert_decode(code + 1, bits).unwrap().to_array();
        let l1: u32 = (0..3).map(|k| a[k].abs_diff(b[k])).sum();
        prop_assert_eq!(l1, 1);
    }

    #[test]
    fn two_dimensional_interleave_round_trips(x in 0u32..1 << 16, y in 0u32..1 << 16) {
        prop_assert_eq!(deinterleave::<2>(interleave([x, y], 16), 16), [x, y]);
    }

    #[test]
    fn bit_reverse_is_an_involution(code in any::<u64>(), nbits in 1u32..=64) {
        let c = if nbits == 64 { code } else { code & ((1u64 << nbits) - 1) };
        prop_assert_eq!(bit_reverse(bit_reverse(c, nbits), nbits), c);
    }

    #[test]
    fn quantized_point_lies_in_its_cell(p in prop::array::uniform3(0.0f64..1.0), level in 0u8..=6) {
        let domain = QuantDomain::new([-3.0, 2.0, 10.0], 4.0, 8).unwrap();
        let world: [f64; 3] = std::array::from_fn(|k| domain.origin()[k] + 4.0 * p[k]);
        let q = domain.quantize_point(&world, 0).unwrap();
        let cell = domain.cell_of(q, level).unwrap();
        let center = domain.cell_center(&cell);
        let half = domain.cell_side(level) / 2.0;
        for k in 0..3 {
            prop_assert!((world[k] - center[k]).abs() <= half * (1.0 + 1e-12));
        }
    }
}

#[test]
fn cell_paths_match_subdivision() {
    let domain = QuantDomain::new([0.0; 3], 8.0, 3).unwrap();
    let q = QuantCoord::new(0b101, 0b010, 0b000);
    let cell = domain.cell_of(q, 2).unwrap();
    assert_eq!(cell.path(), vec![4, 2]);
    assert_eq!(domain.cell_center(&CellAddress::from_path(&[4, 2]).unwrap()), [5.0, 3.0, 1.0]);
    // Bit by bit, x first: 100 010 100.
    assert_eq!(morton_encode(QuantCoord::new(5, 2, 0), 3), 0b100_010_100);
}
