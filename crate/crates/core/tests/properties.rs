use proptest::prelude::*;

use kg2d::model::{parse_system, serialize_system, Axis};
use kg2d::{DerivIndex, MassPair, Monomial, QuadraticSystem, Rat};

fn arb_rat() -> impl Strategy<Value = Rat> {
    (-20i64..=20, 1i64..=12).prop_map(|(n, d)| Rat::new(n.into(), d.into()))
}

fn arb_deriv() -> impl Strategy<Value = DerivIndex> {
    proptest::collection::vec(0usize..3, 0..=2)
        .prop_map(|ix| DerivIndex::new(&ix.into_iter().map(Axis::from_index).collect::<Vec<_>>()))
}

fn arb_monomial() -> impl Strategy<Value = Monomial> {
    (1u8..=2, 1u8..=2, arb_deriv(), 1u8..=2, arb_deriv())
        .prop_filter_map("valid monomial", |(eq, k, a, l, b)| Monomial::new(eq, k, a, l, b).ok())
}

fn arb_system() -> impl Strategy<Value = QuadraticSystem> {
    let masses = (1i64..=9, 1i64..=4).prop_map(|(n, d)| {
        let m1 = Rat::new(n.into(), d.into());
        let m2 = Rat::from_integer(2.into()) * &m1;
        MassPair::new(m1, m2).unwrap()
    });
    (masses, proptest::collection::vec((arb_monomial(), arb_rat()), 0..8)).prop_map(
        |(masses, terms)| {
            let mut sys = QuadraticSystem::new(masses);
            for (m, c) in terms {
                sys.add_term(m, c);
            }
            sys
        },
    )
}

proptest! {
    #[test]
    fn serialization_round_trips(sys in arb_system()) {
        let text = serialize_system(&sys);
        let back = parse_system(&text).unwrap();
        prop_assert_eq!(sys, back);
    }

    #[test]
    fn monomial_factor_order_is_canonical(
        eq in 1u8..=2, k in 1u8..=2, a in arb_deriv(), l in 1u8..=2, b in arb_deriv()
    ) {
        let fwd = Monomial::new(eq, k, a.clone(), l, b.clone());
        let rev = Monomial::new(eq, l, b, k, a);
        prop_assert_eq!(fwd.unwrap(), rev.unwrap());
    }

    #[test]
    fn add_term_cancellation(sys in arb_system(), m in arb_monomial(), c in arb_rat()) {
        let mut perturbed = sys.clone();
        perturbed.add_term(m.clone(), c.clone());
        perturbed.add_term(m, -c);
        prop_assert_eq!(sys, perturbed);
    }

    #[test]
    fn deriv_index_with_is_sorted_insert(d in arb_deriv(), extra in 0usize..3) {
        let a = Axis::from_index(extra);
        let grown = d.with(a);
        prop_assert_eq!(grown.order(), d.order() + 1);
        let mut axes = d.axes().to_vec();
        axes.push(a);
        prop_assert_eq!(grown, DerivIndex::new(&axes));
    }
}
