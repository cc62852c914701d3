use proptest::prelude::*;
use qkdnet::topology::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn reference_topology_is_valid() {
    let g = NetworkGraph::reference();
    assert_eq!(validate(&g), vec![]);
    assert_eq!(reference_layout_violations(&g), Vec::<String>::new());
    let file = NetworkGraph::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/hefei.toml")).unwrap();
    assert_eq!(file, g);
}

#[test]
fn reference_paths() {
    let g = NetworkGraph::reference();
    let id = |s: &str| g.id_of(s).unwrap();
    let ub1 = g.node(id("UB-1")).unwrap();
    let b = g.path_budget(id("UB-1"), id("TR-1")).unwrap();
    assert_eq!(b.fiber_km, ub1.fiber_km.unwrap());
    assert_eq!(b.switch_loss_db, 0.0);
    assert!(g.path_budget(id("UB-1"), id("UB-13")).is_err());
    assert!(g.path_budget(id("UB-1"), id("UB-2")).is_err());
    assert!(g.path_budget(id("UA-1"), id("UA-8")).is_err());

    let (a, c) = (g.node(id("UA-1")).unwrap(), g.node(id("UA-3")).unwrap());
    let p = g.quantum_path(a.id, c.id).unwrap();
    assert!((p.budget.fiber_km - a.fiber_km.unwrap() - c.fiber_km.unwrap()).abs() < 1e-12);
    assert_eq!(p.budget.switch_loss_db, 1.0);

    // The matrix switch joins its two users and reaches the relay from
    // either side.
    for (x, y) in [("UA-6", "UA-7"), ("UA-6", "TR-2"), ("UA-7", "TR-2")] {
        assert!(g.quantum_path(id(x), id(y)).is_ok(), "{x}-{y}");
    }
    for (x, y) in [("TR-1", "TR-2"), ("TR-1", "TR-3"), ("TR-2", "TR-3")] {
        assert!(g.quantum_path(id(x), id(y)).is_ok());
    }
    // 27 relay spokes, 3 relay links, C(6,2) + C(3,2) + C(7,2) switch paths.
    assert_eq!(g.quantum_paths().len(), 27 + 3 + 15 + 3 + 21);
}

#[test]
fn spoke_draws_respect_anchors() {
    let g = NetworkGraph::reference();
    for n in g.nodes.iter().filter(|n| n.kind.is_user()) {
        let f = n.fiber_km.unwrap();
        assert!((2.0..=18.0).contains(&f), "{} {f}", n.name);
    }
}

#[test]
fn relay_of_follows_subnetworks() {
    let g = NetworkGraph::reference();
    let id = |s: &str| g.id_of(s).unwrap();
    assert_eq!(g.relay_of(id("UB-5")), Some(id("TR-1")));
    assert_eq!(g.relay_of(id("UA-2")), Some(id("TR-2")));
    assert_eq!(g.relay_of(id("UA-9")), Some(id("TR-3")));
    assert_eq!(g.relay_of(id("TR-3")), Some(id("TR-3")));
}

#[test]
fn missing_relay_link_is_reported() {
    let mut g = NetworkGraph::reference();
    g.relay_links.pop();
    let v = validate(&g);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].nodes, vec![2, 3]);
}

#[test]
fn every_pair_extends_to_a_full_matching() {
    // For each admissible first pair, some completion reaches 8 pairs;
    // checked by exhaustive search over the remaining ports.
    fn complete(f: &mut SwitchFabric) -> bool {
        if f.active_pairs.len() == 8 {
            return true;
        }
        let free: Vec<Port> = (1..=16).filter(|&p| !f.is_busy(p)).collect();
        let a = free[0];
        for &b in &free[1..] {
            f.connect(a, b).unwrap();
            if complete(f) {
                return true;
            }
            f.disconnect(a, b);
        }
        false
    }
    for a in 1..=16u8 {
        for b in a + 1..=16 {
            let mut f = SwitchFabric::new(FabricKind::AllPass16, 1.0);
            f.connect(a, b).unwrap();
            assert!(complete(&mut f));
            assert!(f.violations().is_empty());
        }
    }
}

proptest! {
    #[test]
    fn validate_ignores_record_order(seed in any::<u64>(), drop in 0usize..60) {
        let mut g = NetworkGraph::reference();
        if drop < g.nodes.len() {
            g.nodes.remove(drop);
        }
        let before = validate(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.nodes.shuffle(&mut rng);
        g.relay_links.shuffle(&mut rng);
        g.switch_ports.shuffle(&mut rng);
        prop_assert_eq!(validate(&g), before.clone());
        prop_assert_eq!(validate(&g), before);
    }

    #[test]
    fn connect_disconnect_round_trips(ops in prop::collection::vec((1u8..=16, 1u8..=16), 0..40), matrix in any::<bool>()) {
        let kind = if matrix { FabricKind::Matrix4x8 } else { FabricKind::AllPass16 };
        let mut f = SwitchFabric::new(kind, 0.9);
        for (a, b) in ops {
            let before = f.clone();
            match f.connect(a, b) {
                Ok(()) => {
                    prop_assert!(f.violations().is_empty());
                    prop_assert!(f.disconnect(a, b));
                    prop_assert_eq!(&f, &before);
                    f.connect(a, b).unwrap();
                }
                Err(_) => prop_assert_eq!(&f, &before),
            }
            prop_assert!(f.active_pairs.len() <= kind.capacity());
        }
    }
}
