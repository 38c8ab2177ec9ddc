//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails. Run with `cargo test -p provenant-core --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use provenant::apportion::{apportion, compute_weights, credit_per_patch, AttributionConfig, ScoredMatch};
use provenant::demo::{run_demo, DemoConfig, DemoOutcome};
use provenant::fingerprint::{
    contrastive_loss, extract_patch, train_encoder, ConvEncoder, CorpusImage, EncoderConfig, EncoderTrainReport,
    FeatureExtractor, FeatureMap,
};
use provenant::index::{brute_force_search, build_index, recall_at_k, IndexParams, SearchOptions};
use provenant::ledger::{replay, verify_ora_triangle};
use provenant::manifest::{format_ara_uri, parse_ara_uri, AraUri};
use provenant::verifier::{
    correlate, generate_windows, pool_windows, train_verifier, MapShape, Reduction, VerifierConfig, VerifierModel,
    VerifierTrainReport, GEM_EPS,
};
use provenant::Address;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Suite {
    failed: Vec<&'static str>,
}

impl Suite {
    fn run(&mut self, name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.1?}, budget {b:?}")),
            (o, _) => o,
        };
        match &outcome {
            Ok(detail) => println!("PASS  {name:<28} {:>8.2}s  {detail}", elapsed.as_secs_f64()),
            Err(detail) => {
                println!("FAIL  {name:<28} {:>8.2}s  {detail}", elapsed.as_secs_f64());
                self.failed.push(name);
            }
        }
    }
}

// ---- contrastive loss ----

fn loss_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (n, dim, h) = (4usize, 8usize, 1e-5);
    let mut worst = 0.0f64;
    for tau in [0.1, 0.5] {
        for _ in 0..20 {
            let phi: Vec<f64> = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let hat: Vec<f64> = phi
                .iter()
                .map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let out = contrastive_loss(&phi, &hat, dim, tau).map_err(|e| e.to_string())?;
            let reference = oracle_contrastive(&phi, &hat, dim, tau);
            ensure((out.loss - reference).abs() <= 1e-9 * reference.abs().max(1.0), || {
                format!("loss {} vs oracle {reference}", out.loss)
            })?;
            let mut fd = Vec::with_capacity(2 * n * dim);
            for which in 0..2 {
                for k in 0..n * dim {
                    let (mut p, mut q) = (phi.clone(), hat.clone());
                    let (mut pm, mut qm) = (phi.clone(), hat.clone());
                    if which == 0 {
                        p[k] += h;
                        pm[k] -= h;
                    } else {
                        q[k] += h;
                        qm[k] -= h;
                    }
                    fd.push(
                        (oracle_contrastive(&p, &q, dim, tau) - oracle_contrastive(&pm, &qm, dim, tau)) / (2.0 * h),
                    );
                }
            }
            let analytic: Vec<f64> = out.grad_phi.iter().chain(&out.grad_phi_hat).copied().collect();
            let diff = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = analytic
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
            worst = worst.max(diff / scale);
        }
    }
    ensure(worst <= 1e-4, || format!("relative gradient error {worst:.3e}"))?;

    // Orthogonal anchors, each its own positive, tau = 1.
    let phi = [1.0, 0.0, 0.0, 1.0];
    let out = contrastive_loss(&phi, &phi, 2, 1.0).map_err(|e| e.to_string())?;
    let e = std::f64::consts::E;
    let term = -(e / (e + 1.0)).ln();
    let per_term = out.loss / 2.0;
    ensure((per_term - term).abs() <= 1e-9, || {
        format!("closed form {per_term} vs {term}")
    })?;
    Ok(format!(
        "max rel grad err {worst:.2e}; closed-form err {:.1e}",
        (per_term - term).abs()
    ))
}

// ---- pooling and correlation ----

fn pooling_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let (side, depth, out_depth, p) = (8usize, 64usize, 16usize, 3.0);
    let windows = generate_windows(side, side).map_err(|e| e.to_string())?;
    let expected: Vec<(usize, usize, usize)> = oracle_windows(side);
    let got: Vec<(usize, usize, usize)> = windows.iter().map(|w| (w.x, w.y, w.side)).collect();
    ensure(got == expected, || format!("windows {got:?} vs {expected:?}"))?;
    let red = Reduction {
        input_depth: depth,
        output_depth: out_depth,
        offset: 0,
    };
    let mut worst = 0.0f64;
    let mut previous: Option<(provenant::verifier::Pooled, Vec<Vec<f64>>)> = None;
    for _ in 0..50 {
        let map = random_map(side, depth, &mut rng);
        let params: Vec<f64> = (0..red.param_count()).map(|_| rng.random_range(-0.3..0.3)).collect();
        let pooled = pool_windows(&map, &windows, &params, &red, p).map_err(|e| e.to_string())?;
        let oracle = oracle_pool(
            &map,
            &params[..out_depth * depth],
            &params[out_depth * depth..],
            p,
            GEM_EPS,
        );
        for (i, row) in oracle.iter().enumerate() {
            for (a, b) in pooled.row(i).iter().zip(row) {
                worst = worst.max((a - b).abs());
            }
        }
        if let Some((prev, prev_oracle)) = &previous {
            let c = correlate(&pooled, prev).map_err(|e| e.to_string())?;
            let co = oracle_correlate(&oracle, prev_oracle);
            let n = co.len();
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((c[i * n + j] - co[i][j]).abs());
                }
            }
        }
        previous = Some((pooled, oracle));
    }
    ensure(worst <= 1e-6, || format!("max abs err {worst:.3e}"))?;
    Ok(format!("55 windows; max abs err {worst:.2e} over 50 maps"))
}

// ---- symmetry ----

fn patch_maps(encoder: &ConvEncoder, corpus: &[CorpusImage], count: usize, seed: u64) -> Vec<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = encoder.config.input_size;
    let pixels: Vec<_> = (0..count)
        .map(|_| {
            let img = &corpus[rng.random_range(0..corpus.len())];
            extract_patch(&img.image, rng.random_range(0..21), size)
                .expect("patch")
                .pixels
        })
        .collect();
    let refs: Vec<_> = pixels.iter().collect();
    encoder.feature_maps(&refs).expect("feature maps")
}

fn symmetry(models: Option<&Models>, corpus: &[CorpusImage]) -> Check {
    let models = models.ok_or("models unavailable")?;
    let maps = patch_maps(&models.encoder, corpus, 200, 300);
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let shape = MapShape {
        side: maps[0].height,
        depth: maps[0].depth,
    };
    let untrained = VerifierModel::new(VerifierConfig::default(), shape, 5).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let (a, b) = (&maps[rng.random_range(0..200)], &maps[rng.random_range(0..200)]);
        let ab = models.verifier.score_maps(a, b).map_err(|e| e.to_string())?;
        let ba = models.verifier.score_maps(b, a).map_err(|e| e.to_string())?;
        ensure(ab.to_bits() == ba.to_bits(), || {
            format!("score(a,b) {ab:e} != score(b,a) {ba:e}")
        })?;
        let u = untrained.score_maps(a, b).map_err(|e| e.to_string())?;
        ensure(u == 0.5, || format!("untrained score {u}"))?;
    }
    Ok("100 trained pairs bit-identical; untrained = 0.5".into())
}

// ---- credit ----

fn oracle_credit(matches: &[ScoredMatch], lambda: f64) -> BTreeMap<u8, BTreeMap<String, f64>> {
    let mut w: BTreeMap<u8, BTreeMap<String, f64>> = BTreeMap::new();
    for m in matches {
        let e = (m.score - lambda).max(0.0);
        *w.entry(m.query_slot)
            .or_default()
            .entry(m.image_id.clone())
            .or_default() += e;
    }
    w.into_iter()
        .filter_map(|(j, per)| {
            let total: f64 = per.values().sum();
            (total > 0.0).then(|| {
                (
                    j,
                    per.into_iter()
                        .filter(|(_, v)| *v > 0.0)
                        .map(|(k, v)| (k, v / total))
                        .collect(),
                )
            })
        })
        .collect()
}

fn credit_normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let config = AttributionConfig::default();
    let mut worst = 0.0f64;
    let mut patches = 0;
    for _ in 0..500 {
        let matches: Vec<ScoredMatch> = (0..rng.random_range(1..300))
            .map(|_| ScoredMatch {
                query_slot: rng.random_range(0..21),
                image_id: format!("img-{}", rng.random_range(0..40)),
                slot: rng.random_range(0..21),
                score: rng.random(),
            })
            .collect();
        let report = apportion("q", &matches, &config);
        let oracle = oracle_credit(&matches, config.lambda);
        ensure(report.per_patch_credits.keys().eq(oracle.keys()), || {
            "credited patches differ from oracle".into()
        })?;
        for (j, credits) in &report.per_patch_credits {
            patches += 1;
            worst = worst.max((credits.values().sum::<f64>() - 1.0).abs());
            for (id, c) in credits {
                worst = worst.max((c - oracle[j][id]).abs());
            }
        }
        if !report.royalty_weights.is_empty() {
            worst = worst.max((report.royalty_weights.values().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("normalization error {worst:.3e}"))?;

    let low: Vec<ScoredMatch> = (0..21u8)
        .map(|j| ScoredMatch {
            query_slot: j,
            image_id: "a".into(),
            slot: j,
            score: rng.random_range(0.0..=0.7),
        })
        .collect();
    let report = apportion("q", &low, &config);
    ensure(
        report.is_empty() && report.per_patch_credits.is_empty() && report.royalty_weights.is_empty(),
        || "scores at or below lambda produced credit".into(),
    )?;

    let hit = |score: f64, id: &str| ScoredMatch {
        query_slot: 0,
        image_id: id.into(),
        slot: 0,
        score,
    };
    let w = compute_weights(&[hit(0.9, "a")], 0.7);
    ensure(w[&0]["a"] == 0.2, || format!("0.9 / 0.7 gave {}", w[&0]["a"]))?;
    let w = compute_weights(&[hit(0.8, "a"), hit(0.75, "a"), hit(0.95, "b")], 0.7);
    ensure(w[&0]["a"] == 0.15 && w[&0]["b"] == 0.25, || format!("{w:?}"))?;
    let c = credit_per_patch(&w[&0]);
    ensure((c["a"] - 0.375).abs() < 1e-12 && (c["b"] - 0.625).abs() < 1e-12, || {
        format!("{c:?}")
    })?;
    Ok(format!(
        "{patches} patches; max err {worst:.1e}; w(0.9, 0.7) = 0.2 exactly"
    ))
}

// ---- index ----

fn index_quality() -> Check {
    let records = clustered(10_000, 256, 200, 0.8, 1);
    let params = IndexParams {
        nlist: 64,
        m: 16,
        nprobe: 8,
        seed: 11,
        ..IndexParams::default()
    };
    let idx = build_index(&records, &params).map_err(|e| e.to_string())?;
    let qs = queries(&records, 200, 2);
    let mut total = 0.0;
    for q in &qs {
        let approx = idx
            .search_with(q, &SearchOptions::new(10, 8))
            .map_err(|e| e.to_string())?;
        total += recall_at_k(&approx, &brute_force_search(&records, q, 10));
    }
    let recall = total / qs.len() as f64;
    ensure(recall >= 0.9, || format!("recall@10 {recall:.4}"))?;
    for q in qs.iter().take(50) {
        let exhaustive = idx
            .search_with(q, &SearchOptions::exhaustive(10, 64))
            .map_err(|e| e.to_string())?;
        let got: Vec<usize> = exhaustive.iter().map(|h| h.record as usize).collect();
        let want = oracle_top_k(&records, q, 10);
        ensure(got == want, || format!("exhaustive {got:?} vs oracle {want:?}"))?;
    }
    Ok(format!(
        "recall@10 {recall:.4}; exhaustive ranking = oracle on 50 queries"
    ))
}

// ---- models and end to end ----

struct Models {
    encoder: ConvEncoder,
    verifier: VerifierModel,
    encoder_report: EncoderTrainReport,
    verifier_report: VerifierTrainReport,
    elapsed: Duration,
}

fn train_models(corpus: &[CorpusImage], cfg: &DemoConfig) -> Result<Models, String> {
    let start = Instant::now();
    let (encoder, encoder_report) =
        train_encoder(corpus, EncoderConfig::default(), &cfg.encoder).map_err(|e| e.to_string())?;
    let (verifier, verifier_report) =
        train_verifier(corpus, &encoder, VerifierConfig::default(), &cfg.verifier).map_err(|e| e.to_string())?;
    Ok(Models {
        encoder,
        verifier,
        encoder_report,
        verifier_report,
        elapsed: start.elapsed(),
    })
}

fn end_to_end(
    models: Option<&Models>,
    corpus: &[CorpusImage],
    cfg: &DemoConfig,
    mild: &mut Option<DemoOutcome>,
) -> Check {
    let models = models.ok_or("models unavailable")?;
    let start = Instant::now();
    let outcome = run_demo(corpus, &models.encoder, &models.verifier, cfg).map_err(|e| e.to_string())?;
    let mut plain_cfg = cfg.clone();
    plain_cfg.compose.augment = None;
    let plain = run_demo(corpus, &models.encoder, &models.verifier, &plain_cfg).map_err(|e| e.to_string())?;
    let total = models.elapsed + start.elapsed();
    let (r5, r1) = (outcome.summary.mean_recall_at_5, plain.summary.mean_recall_at_1);
    *mild = Some(outcome);
    ensure(r5 >= 0.8, || format!("mild R@5 {r5:.3}"))?;
    ensure(r1 == 1.0, || format!("unaugmented R@1 {r1:.3}"))?;
    ensure(total < Duration::from_secs(15 * 60), || {
        format!("{total:.1?} including training")
    })?;
    Ok(format!(
        "mild R@5 {r5:.3}; unaugmented R@1 {r1:.3}; {:.0}s incl. training",
        total.as_secs_f64()
    ))
}

fn ablation(models: Option<&Models>) -> Check {
    let models = models.ok_or("models unavailable")?;
    let v = &models.verifier_report.validation;
    ensure(v.verifier_auc > v.fingerprint_auc, || {
        format!(
            "verifier AUC {:.4} <= fingerprint AUC {:.4}",
            v.verifier_auc, v.fingerprint_auc
        )
    })?;
    Ok(format!(
        "verifier AUC {:.4} > fingerprint AUC {:.4} ({} pos / {} hard neg)",
        v.verifier_auc,
        v.fingerprint_auc,
        v.positives.len(),
        v.negatives.len()
    ))
}

fn provenance(outcome: Option<&DemoOutcome>, base_royalty: u64) -> Check {
    let outcome = outcome.ok_or("demo did not run")?;
    let s = &outcome.summary;
    for q in &outcome.queries {
        let p = &q.provenance;
        ensure(p.all_match && p.contributors_recovered == p.training_manifests, || {
            format!(
                "{}: recovered {} of {}",
                q.truth.query_id, p.contributors_recovered, p.training_manifests
            )
        })?;
        ensure(p.routes_resolved == p.training_manifests, || {
            format!("{}: unresolved wallet routes", q.truth.query_id)
        })?;
        ensure(q.settlement.failures.is_empty(), || {
            format!("{}: {:?}", q.truth.query_id, q.settlement.failures)
        })?;
        for (id, w) in &q.report.royalty_weights {
            let want = (base_royalty as f64 * w).round_ties_even() as u64;
            let got = q.settlement.payouts.get(id).map(|p| p.amount);
            ensure(got == Some(want), || {
                format!("{}: {id} paid {got:?}, expected {want}", q.truth.query_id)
            })?;
        }
        let expected: u64 = q.expected_payouts.values().sum();
        ensure(q.escrow_decrease == expected, || {
            format!(
                "{}: escrow fell {} but payouts total {expected}",
                q.truth.query_id, q.escrow_decrease
            )
        })?;
    }
    ensure(
        s.provenance_complete && s.payouts_exact && s.conservation_ok && s.creator_balances_ok,
        || format!("{s:?}"),
    )?;
    Ok(format!(
        "{} queries x {} contributors recovered; paid {} = escrow decrease {}",
        s.queries, s.corpus_size, s.total_paid, s.escrow_decrease
    ))
}

// ---- ledger ----

fn ora_protocol() -> Check {
    let mut world = ora_world(100, 17);
    let (mut honest, mut attacks) = (0, 0);
    for (kind, manifest) in &world.assets {
        let check =
            verify_ora_triangle(manifest, &world.ledger, &world.store, &world.host).map_err(|e| e.to_string())?;
        match kind {
            AssetKind::Honest => {
                honest += 1;
                ensure(
                    check.ownership_ok && check.rights_ok && check.attribution_ok && !check.copy_mint_detected,
                    || format!("honest asset failed: {:?}", check.problems),
                )?;
            }
            AssetKind::CopyMintDeclared | AssetKind::CopyMintCreatorWallet => {
                attacks += 1;
                ensure(check.copy_mint_detected, || format!("{kind:?} undetected"))?;
            }
            AssetKind::UriSubstitution => {
                attacks += 1;
                ensure(!check.attribution_ok, || "URI substitution undetected".into())?;
            }
        }
    }
    let actors = world.actors.clone();
    let applied = fuzz_ledger(&mut world.ledger, &actors, 10_000, &mut ChaCha8Rng::seed_from_u64(18));
    let again = replay(world.ledger.chain.clone(), &world.ledger.log).map_err(|e| e.to_string())?;
    ensure(again.state_digest() == world.ledger.state_digest(), || {
        "replay digest differs".into()
    })?;
    Ok(format!("{honest} honest verified, {attacks} attacks detected; 10000 txs ({applied} applied) conserve funds; replay digest equal"))
}

fn ara_round_trip() -> Check {
    let uri = parse_ara_uri("c2pa-nft://eip155:5:0x789/0x123").map_err(|e| e.to_string())?;
    ensure(
        uri.namespace == "eip155"
            && uri.chain_id == "5"
            && uri.contract == Address::from_low_u64(0x789)
            && uri.nft_id == 0x123,
        || format!("literal parsed to {uri:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for _ in 0..1000 {
        let mut bytes = [0u8; 20];
        let lead = rng.random_range(0..20);
        rng.fill(&mut bytes[lead..]);
        let chain: String = (0..rng.random_range(1..=32))
            .map(|_| b"abcdefXYZ0123456789-_"[rng.random_range(0..21)] as char)
            .collect();
        let ns = ["eip155", "cosmos", "bip122", "solana", "sim-1"][rng.random_range(0..5)];
        let uri = AraUri::new(ns, &chain, Address(bytes), rng.random()).map_err(|e| e.to_string())?;
        let text = format_ara_uri(&uri);
        let back = parse_ara_uri(&text).map_err(|e| format!("{text}: {e}"))?;
        ensure(back == uri && format_ara_uri(&back) == text, || {
            format!("{text} did not round-trip")
        })?;
    }
    Ok("literal example parsed; 1000 random URIs round-trip".into())
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: Vec::new() };
    let cfg = DemoConfig::default();

    suite.run("loss gradient", Some(Duration::from_secs(10)), loss_gradient);
    suite.run(
        "pooling/correlation oracle",
        Some(Duration::from_secs(10)),
        pooling_oracles,
    );
    suite.run("credit normalization", None, credit_normalization);
    suite.run("ivfpq quality", Some(Duration::from_secs(60)), index_quality);
    suite.run("ora protocol", Some(Duration::from_secs(60)), ora_protocol);
    suite.run("ara round trip", None, ara_round_trip);

    let corpus = provenant::demo::demo_corpus(&cfg);
    let models = match train_models(&corpus, &cfg) {
        Ok(m) => {
            println!(
                "      trained encoder (val gap {:.3}) and verifier in {:.0}s",
                m.encoder_report.validation.gap,
                m.elapsed.as_secs_f64()
            );
            Some(m)
        }
        Err(e) => {
            println!("      model training failed: {e}");
            None
        }
    };
    suite.run("verifier symmetry", None, || symmetry(models.as_ref(), &corpus));
    suite.run("verifier ablation", None, || ablation(models.as_ref()));
    let mut mild = None;
    suite.run("end-to-end attribution", Some(Duration::from_secs(15 * 60)), || {
        end_to_end(models.as_ref(), &corpus, &cfg, &mut mild)
    });
    suite.run("provenance and payouts", None, || {
        provenance(mild.as_ref(), cfg.base_royalty)
    });

    if suite.failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failed: {}", suite.failed.len(), suite.failed.join(", "));
        ExitCode::FAILURE
    }
}
