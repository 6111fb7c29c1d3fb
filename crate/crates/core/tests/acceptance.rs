//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then
//! asserts the same condition.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use amsueo::attack::{detect_useful_session, run_attack, AttackConfig, AttackReport, PartialMatrix};
use amsueo::experiment::{extrapolated_checks, ExperimentRow};
use amsueo::grade::{grade, Grade};
use amsueo::modmath::{mat_vec_mod_raw, LimbCodec, Mat2, Vec2};
use amsueo::params::{FamilyMode, SystemParams, Z_DBLTKM, Z_SUEO};
use amsueo::protocol::{
    decrypt_message, derive_effective_state, encrypt_message, update_state, SecretState, StateIndices, UpdateSecrets,
};
use amsueo::simulator::{GroundTruth, Simulator};
use amsueo::system::SystemFile;

/// Written to the process stdout so the line shows without `--nocapture`.
fn report(n: u32, name: &str, pass: bool, detail: String, elapsed: Duration) {
    let line = format!(
        "criterion {n} {name}: {} ({detail}; {:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn mat_vec_oracle(m: Mat2, t: Vec2, q: u64) -> Vec2 {
    let b = |x: u64| BigUint::from(x);
    let q = b(q);
    let r1 = (b(m.m11) * b(t.c1) + b(m.m12) * b(t.c2)) % &q;
    let r2 = (b(m.m21) * b(t.c1) + b(m.m22) * b(t.c2)) % &q;
    Vec2::new(r1.try_into().unwrap(), r2.try_into().unwrap())
}

fn limb_oracle(x: u128, limb_bits: u32) -> Vec2 {
    Vec2::new((x >> limb_bits) as u64, (x & ((1u128 << limb_bits) - 1)) as u64)
}

fn state(sys: &SystemFile, dbltkm: u64, sueo: u64, am: u64) -> SecretState {
    SecretState { indices: StateIndices { dbltkm, sueo, am }, ..sys.secrets.clone() }
}

fn base_variant(a: Mat2, b: Mat2, sueo: u64) -> Mat2 {
    match sueo {
        0 => a,
        1 => b,
        2 => Mat2::new(a.m11, a.m21, a.m12, a.m22),
        _ => Mat2::new(b.m11, b.m21, b.m12, b.m22),
    }
}

fn desk(seed: u64) -> SystemParams {
    SystemParams::with_modulus_bits(32, 16).with_seed(seed)
}

struct Run {
    sys: SystemFile,
    truth: Vec<GroundTruth>,
    attack: AttackReport,
    grade: Grade,
    seconds: f64,
}

fn run_seed(params: &SystemParams, sessions: u64) -> Run {
    let start = Instant::now();
    let sys = SystemFile::generate(params).expect("system generation");
    let (transcripts, truth) = Simulator::from_system(&sys).collect(sessions).expect("campaign");
    let attack = run_attack(&transcripts, &AttackConfig::from_params(params)).expect("attack");
    let grade = grade(&attack, &sys, &truth);
    Run { sys, truth, attack, grade, seconds: start.elapsed().as_secs_f64() }
}

#[test]
fn criterion_1_round_trip_all_states() {
    let start = Instant::now();
    let mut checked = 0u64;
    let mut failures = 0u64;
    for bits in [32u32, 64] {
        let f = if bits == 32 { 16 } else { 20 };
        let mut params = SystemParams::with_modulus_bits(bits, f).with_seed(1000 + bits as u64);
        params.family_mode = FamilyMode::Full20;
        let sys = SystemFile::generate(&params).unwrap();
        let codec = LimbCodec::new(params.limb_bits).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(bits as u64);
        for d in 0..Z_DBLTKM {
            for s in 0..Z_SUEO {
                for am in 0..params.z_am() {
                    let eff = derive_effective_state(&state(&sys, d, s, am), &sys.am, &params).unwrap();
                    let q = eff.modulus;
                    let payload: Vec<u128> = (0..100).map(|_| rng.gen_range(0..params.value_bound())).collect();
                    let blocks = encrypt_message(&payload, &eff, codec).unwrap();
                    for (i, (&x, &c)) in payload.iter().zip(&blocks).enumerate() {
                        if c != mat_vec_oracle(eff.matrix_at(i), limb_oracle(x, params.limb_bits), q) {
                            failures += 1;
                        }
                    }
                    let back = decrypt_message(&blocks, &eff, codec).unwrap();
                    failures += payload.iter().zip(&back).filter(|(a, b)| a != b).count() as u64;
                    checked += payload.len() as u64;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && checked == 2 * 20 * 4 * 8 * 100 && elapsed < Duration::from_secs(60);
    report(1, "round-trip", pass, format!("{checked} payloads, {failures} mismatches"), elapsed);
    assert!(pass);
}

#[test]
fn criterion_2_unreduced_coordinates_lose_information() {
    let start = Instant::now();
    let params = desk(21);
    let sys = SystemFile::generate(&params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut wrong = 0;
    for case in 0..100u64 {
        let s = rng.gen_range(0..Z_SUEO);
        let am = rng.gen_range(0..params.z_am());
        let eff = derive_effective_state(&state(&sys, 0, s, am), &sys.am, &params).unwrap();
        let q = eff.modulus;
        let x = rng.gen_range(q..=u64::MAX);
        let y = rng.gen_range(0..q);
        let t = if case % 2 == 0 { Vec2::new(x, y) } else { Vec2::new(y, x) };
        let refused = eff.encrypt_block(0, t).is_err();
        let c = mat_vec_mod_raw(eff.matrix_at(0), t, q).unwrap();
        let back = eff.decrypt_block(0, c).unwrap();
        let residue = Vec2::new(t.c1 % q, t.c2 % q);
        if !(refused && back == residue && back != t) {
            wrong += 1;
        }
    }
    let pass = wrong == 0;
    report(2, "residue-only decryption", pass, format!("100 crafted cases, {wrong} not reduced"), start.elapsed());
    assert!(pass);
}

#[test]
fn criterion_3_update_entropy() {
    let start = Instant::now();
    let mut params = desk(33);
    params.family_mode = FamilyMode::Full20;
    let sys = SystemFile::generate(&params).unwrap();
    let z_am = params.z_am() as u128;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bound = params.value_bound();
    let mut bad = 0;
    for _ in 0..1000 {
        let u = UpdateSecrets::random(&params, &mut rng);
        let k = |rng: &mut ChaCha8Rng, z: u128, x: u128| {
            let room = (bound - 1 - x) / z;
            z * rng.gen_range(0..=room.min(1 << 40))
        };
        let v = UpdateSecrets {
            sd: u.sd + k(&mut rng, Z_DBLTKM as u128, u.sd),
            sp: u.sp + k(&mut rng, Z_SUEO as u128, u.sp),
            sc: u.sc + k(&mut rng, z_am, u.sc),
        };
        let from = state(&sys, rng.gen_range(0..Z_DBLTKM), rng.gen_range(0..Z_SUEO), rng.gen_range(0..params.z_am()));
        let (su, sv) = (update_state(&from, &u, &params), update_state(&from, &v, &params));
        let expect = StateIndices {
            dbltkm: (u.sd % Z_DBLTKM as u128) as u64,
            sueo: (u.sp % Z_SUEO as u128) as u64,
            am: (u.sc % z_am) as u64,
        };
        let eff = |s: &SecretState| derive_effective_state(s, &sys.am, &params).unwrap();
        if su != sv || su.indices != expect || eff(&su) != eff(&sv) {
            bad += 1;
        }
    }
    let pass = bad == 0;
    report(3, "update entropy", pass, format!("1000 triples, {bad} diverging"), start.elapsed());
    assert!(pass);
}

#[test]
fn criterion_4_coincidence_rate() {
    let start = Instant::now();
    let mut sessions = 0u64;
    let mut coincident = 0u64;
    let mut reported = 0u64;
    for seed in 0..10 {
        let params = desk(400 + seed);
        assert_eq!(params.family_mode, FamilyMode::PaperModel);
        let sys = SystemFile::generate(&params).unwrap();
        let stats = Simulator::from_system(&sys)
            .run_campaign(100_000, |_, gt| {
                sessions += 1;
                if gt.pre.sueo == gt.post.sueo && gt.pre.am == gt.post.am {
                    coincident += 1;
                }
                Ok(())
            })
            .unwrap();
        reported += stats.coincident;
    }
    let rate = coincident as f64 / sessions as f64;
    let ratio = rate * 32.0;
    let elapsed = start.elapsed();
    let pass = sessions == 1_000_000
        && reported == coincident
        && (0.7..=1.3).contains(&ratio)
        && elapsed < Duration::from_secs(120);
    report(4, "coincidence rate", pass, format!("rate {rate:.5} = {ratio:.3} x 1/32 over {sessions} sessions"), elapsed);
    assert!(pass);
}

#[test]
fn criterion_5_no_false_leaks() {
    let start = Instant::now();
    let mut leaks = 0u64;
    let mut false_leaks = 0u64;
    for seed in 0..10 {
        let params = desk(500 + seed);
        let sys = SystemFile::generate(&params).unwrap();
        let (a, b) = (sys.secrets.a, sys.secrets.b);
        let (ts, truth) = Simulator::from_system(&sys).collect(10_000).unwrap();
        for (i, (t, gt)) in ts.iter().zip(&truth).enumerate() {
            let Some(col) = detect_useful_session(i, t).and_then(|l| l.unwrapped_column()) else { continue };
            leaks += 1;
            let m = base_variant(a, b, gt.pre.sueo);
            let same_state = gt.pre.sueo == gt.post.sueo && gt.pre.am == gt.post.am;
            if !same_state || col != Vec2::new(m.m12, m.m22) {
                false_leaks += 1;
            }
        }
    }
    let pass = leaks > 0 && false_leaks == 0;
    report(5, "leak exactness", pass, format!("{leaks} unwrapped leaks, {false_leaks} false"), start.elapsed());
    assert!(pass);
}

fn partial_matches(p: &PartialMatrix, m: Mat2) -> bool {
    let t = Mat2::new(m.m11, m.m21, m.m12, m.m22);
    [m, t].iter().any(|x| (p.m12, p.m21, p.m22) == (x.m12, x.m21, x.m22))
}

fn desk_runs() -> &'static Vec<Run> {
    static RUNS: std::sync::OnceLock<Vec<Run>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| (0..20).map(|s| run_seed(&desk(s), 4096)).collect())
}

#[test]
fn criterion_6_three_entry_recovery() {
    let start = Instant::now();
    let runs = desk_runs();
    let both = runs
        .iter()
        .filter(|r| {
            let (a, b) = (r.sys.secrets.a, r.sys.secrets.b);
            r.attack.partials.iter().any(|p| partial_matches(p, a)) && r.attack.partials.iter().any(|p| partial_matches(p, b))
        })
        .count();
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let pass = both * 100 >= 95 * runs.len() && slowest < 120.0;
    report(6, "three-entry recovery", pass, format!("{both}/20 seeds with both partials, slowest seed {slowest:.1}s"), start.elapsed());
    assert!(pass);
}

#[test]
fn criterion_7_scan_discrimination() {
    let start = Instant::now();
    let mut missed = Vec::new();
    let mut spurious = 0usize;
    let mut slowest = 0f64;
    for seed in 0..20 {
        let mut params = desk(700 + seed);
        params.factor_bound_bits = 16;
        let r = run_seed(&params, 16_384);
        assert_eq!(r.attack.config.accept_threshold, 4);
        let accepted: BTreeSet<u64> = r.attack.scan.candidates.iter().map(|c| c.qx).collect();
        for p in r.sys.am.shared_primes() {
            if !accepted.contains(&p) {
                missed.push((seed, p));
            }
        }
        let table: BTreeSet<u64> = r.sys.am.moduli().collect();
        spurious += r.attack.verified.iter().filter(|v| !table.contains(&v.q)).count();
        slowest = slowest.max(r.seconds);
    }
    let pass = missed.is_empty() && spurious == 0 && slowest < 300.0;
    report(
        7,
        "scan discrimination",
        pass,
        format!("missed shared primes {missed:?}, {spurious} spurious verified moduli, slowest seed {slowest:.1}s"),
        start.elapsed(),
    );
    assert!(pass);
}

#[test]
fn criterion_8_end_to_end_break() {
    let start = Instant::now();
    let runs = desk_runs();
    let mut full = 0;
    for r in runs {
        let g = &r.grade;
        let reduced_all = g.reduced_wrong == 0 && g.reduced_correct == g.sessions_decrypted && g.sessions_decrypted > 0;
        let ok = g.full
            && g.a_correct
            && g.b_correct
            && g.s_correct
            && g.id_correct
            && g.verified_moduli >= 1
            && g.spurious_moduli.is_empty()
            && reduced_all
            && g.prediction_correct
            && g.forgery_accepted
            && r.truth.len() == 4096;
        if ok {
            full += 1;
        }
    }
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let pass = full >= 18 && slowest < 600.0;
    report(8, "end-to-end break", pass, format!("{full}/20 seeds fully broken, slowest seed {slowest:.1}s"), start.elapsed());
    assert!(pass);
}

#[test]
#[ignore = "scaling probe; run with --ignored"]
fn criterion_9_scaling_probe() {
    let start = Instant::now();
    let params = SystemParams::with_modulus_bits(64, 20).with_seed(900);
    let r = run_seed(&params, 4096);
    let scan_seconds = r.attack.scan.seconds;
    let row = ExperimentRow { scan_pairs: r.attack.scan.pairs, ..Default::default() };
    let log2_work = extrapolated_checks(&row, 32).log2();
    let log10_ratio = (log2_work - 39.0) * 2f64.log10();
    let pass = r.grade.full && scan_seconds < 3600.0 && log10_ratio.abs() <= 1.0;
    report(
        9,
        "scaling probe",
        pass,
        format!(
            "full={}, scan {scan_seconds:.1}s over {} primes x {} pairs, 2^32 extrapolation 2^{log2_work:.2} checks vs 2^39",
            r.grade.full, r.attack.scan.primes_scanned, r.attack.scan.pairs
        ),
        start.elapsed(),
    );
    assert!(pass);
}
