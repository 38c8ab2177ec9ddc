mod common;

use common::{fuzz_ledger, ora_world, AssetKind};
use proptest::prelude::*;
use provenant::ledger::{load_ledger, replay, save_ledger, verify_ora_triangle, LedgerState, TxOp};
use provenant::manifest::{format_ara_uri, parse_ara_uri, AraUri};
use provenant::Address;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn actors(n: u64) -> Vec<Address> {
    (1..=n).map(Address::from_low_u64).collect()
}

fn funded(actors: &[Address]) -> LedgerState {
    let mut l = LedgerState::default();
    for a in actors {
        l.submit(*a, TxOp::Faucet { to: *a, amount: 50_000 }).unwrap();
    }
    l
}

#[test]
fn conservation_over_ten_thousand_random_transactions() {
    let who = actors(8);
    let mut ledger = funded(&who);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let applied = fuzz_ledger(&mut ledger, &who, 10_000, &mut rng);
    assert!(applied > 1000, "only {applied} applied");
    assert_eq!(ledger.log.len(), 8 + 10_000);
    // Something interesting happened beyond plain transfers.
    let paid = ledger
        .log
        .iter()
        .filter(|r| {
            matches!(
                &r.status,
                provenant::ledger::TxStatus::Applied {
                    receipt: provenant::ledger::Receipt::Paid(_)
                }
            )
        })
        .count();
    eprintln!("applied {applied}, payouts {paid}");
}

#[test]
fn replay_reproduces_state_and_persistence_round_trips() {
    let who = actors(6);
    let mut ledger = funded(&who);
    fuzz_ledger(&mut ledger, &who, 3000, &mut ChaCha8Rng::seed_from_u64(5));
    let again = replay(ledger.chain.clone(), &ledger.log).unwrap();
    assert_eq!(again.state_digest(), ledger.state_digest());
    assert_eq!(again.log_digest(), ledger.log_digest());

    let dir = tempfile::tempdir().unwrap();
    let (state, log) = (dir.path().join("ledger.json"), dir.path().join("ledger.jsonl"));
    save_ledger(&ledger, &state, &log).unwrap();
    // Appending more then saving again only extends the log.
    fuzz_ledger(&mut ledger, &who, 500, &mut ChaCha8Rng::seed_from_u64(6));
    save_ledger(&ledger, &state, &log).unwrap();
    let loaded = load_ledger(&state, &log).unwrap();
    assert_eq!(loaded.state_digest(), ledger.state_digest());
    assert_eq!(loaded.log.len(), ledger.log.len());
}

#[test]
fn tampered_log_is_refused() {
    let who = actors(3);
    let mut ledger = funded(&who);
    fuzz_ledger(&mut ledger, &who, 200, &mut ChaCha8Rng::seed_from_u64(9));
    let dir = tempfile::tempdir().unwrap();
    let (state, log) = (dir.path().join("s.json"), dir.path().join("l.jsonl"));
    save_ledger(&ledger, &state, &log).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let forged = text.replacen("\"amount\":50000", "\"amount\":50001", 1);
    assert_ne!(forged, text);
    std::fs::write(&log, forged).unwrap();
    assert!(load_ledger(&state, &log).is_err());
}

#[test]
fn ora_run_detects_every_attack() {
    let mut world = ora_world(100, 17);
    let mut counts = [0usize; 4];
    for (kind, manifest) in &world.assets {
        let check = verify_ora_triangle(manifest, &world.ledger, &world.store, &world.host).unwrap();
        match kind {
            AssetKind::Honest => {
                counts[0] += 1;
                assert!(
                    check.ownership_ok && check.rights_ok && check.attribution_ok && !check.copy_mint_detected,
                    "{:?}",
                    check.problems
                );
            }
            AssetKind::CopyMintDeclared | AssetKind::CopyMintCreatorWallet => {
                counts[1] += 1;
                assert!(check.copy_mint_detected, "{kind:?} missed: {:?}", check);
            }
            AssetKind::UriSubstitution => {
                counts[2] += 1;
                assert!(!check.attribution_ok, "substitution missed");
            }
        }
    }
    assert_eq!(counts[..3], [70, 20, 10]);
    let actors = world.actors.clone();
    fuzz_ledger(&mut world.ledger, &actors, 10_000, &mut ChaCha8Rng::seed_from_u64(18));
    let again = replay(world.ledger.chain.clone(), &world.ledger.log).unwrap();
    assert_eq!(again.state_digest(), world.ledger.state_digest());
}

#[test]
fn ara_literal_parses() {
    let uri = parse_ara_uri("c2pa-nft://eip155:5:0x789/0x123").unwrap();
    assert_eq!(uri.namespace, "eip155");
    assert_eq!(uri.chain_id, "5");
    assert_eq!(uri.contract, Address::from_low_u64(0x789));
    assert_eq!(uri.nft_id, 0x123);
    assert_eq!(format_ara_uri(&uri), "c2pa-nft://eip155:5:0x789/0x123");
}

#[test]
fn thousand_random_ara_uris_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let namespaces = ["eip155", "cosmos", "bip122", "sim-1"];
    for _ in 0..1000 {
        let mut bytes = [0u8; 20];
        let lead = rng.random_range(0..20);
        rng.fill(&mut bytes[lead..]);
        let contract = Address(bytes);
        let chain: String = (0..rng.random_range(1..12))
            .map(|_| b"abcXYZ019_-"[rng.random_range(0..11)] as char)
            .collect();
        let uri = AraUri::new(namespaces[rng.random_range(0..4)], &chain, contract, rng.random()).unwrap();
        let text = format_ara_uri(&uri);
        assert_eq!(parse_ara_uri(&text).unwrap(), uri, "{text}");
    }
}

#[test]
fn malformed_ara_uris_are_rejected() {
    for bad in [
        "nft://eip155:5:0x789/0x123",
        "c2pa-nft://eip155:5/0x123",
        "c2pa-nft://eip155:5:0x789",
        "c2pa-nft://EIP155:5:0x789/1",
        "c2pa-nft://eip155:5:789/1",
        "c2pa-nft://eip155:5:0x789/0x",
        "c2pa-nft://eip155:5:0x789/-1",
        "c2pa-nft://eip155:5:0x789:9/1",
    ] {
        assert!(parse_ara_uri(bad).is_err(), "{bad}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn conservation_holds_for_any_seed(seed in any::<u64>(), n in 1u64..6) {
        let who = actors(n);
        let mut ledger = funded(&who);
        fuzz_ledger(&mut ledger, &who, 400, &mut ChaCha8Rng::seed_from_u64(seed));
        let again = replay(ledger.chain.clone(), &ledger.log).unwrap();
        prop_assert_eq!(again.state_digest(), ledger.state_digest());
    }
}
