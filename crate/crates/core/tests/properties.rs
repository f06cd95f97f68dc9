use opaqnet::baseline::shuffle_count;
use opaqnet::bundled;
use opaqnet::certificates::{check_certificate, check_zero_leakage, emit_certificate};
use opaqnet::engine::ExploreOptions;
use opaqnet::enforcement::{
    evaluate, masking_effect, model_architecture, synthesize, EnforcementPolicy, SynthesisOptions, SynthesisOutcome,
};
use opaqnet::gen::{self, ModelParams};
use opaqnet::model::Step;
use opaqnet::oracle;
use opaqnet::rational::{ratio, Rational};
use opaqnet::stabilizer::Tableau;
use opaqnet::unfolding::{Pomset, TargetFamily};
use opaqnet::verifier::{self, PosteriorAggregate};
use proptest::prelude::*;
use rand::Rng;
use std::collections::HashMap;

fn one() -> Rational {
    Rational::from_integer(1.into())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tableau_matches_dense(seed in any::<u64>()) {
        prop_assert_eq!(oracle::program_case(seed, 4), Ok(()));
    }

    #[test]
    fn weight_monotone(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let (prep, steps) = gen::random_program(&mut rng, 3, 25);
        let mut t = Tableau::init(&prep, 3).unwrap();
        for s in &steps {
            let before = t.weight().clone();
            t.apply_step(s).unwrap();
            match s {
                Step::Gate(_) | Step::Prep { .. } => prop_assert_eq!(t.weight(), &before),
                _ => prop_assert!(t.weight() <= &before),
            }
        }
    }

    #[test]
    fn canonical_form_ignores_numbering(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let n = rng.gen_range(0..=7);
        let labels: Vec<String> = (0..n).map(|_| ["a", "b", "c"][rng.gen_range(0..3)].to_string()).collect();
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).filter(|_| rng.gen_bool(0.3)).collect();
        let p = Pomset::new(labels.clone(), &edges).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let mut relabelled = vec![String::new(); n];
        for (i, &j) in perm.iter().enumerate() {
            relabelled[j] = labels[i].clone();
        }
        let moved: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        prop_assert_eq!(p.canonical(), Pomset::new(relabelled, &moved).unwrap().canonical());
    }

    #[test]
    fn masking_contracts(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let k = rng.gen_range(1..=2);
        let a0 = gen::random_aggregate(&mut rng, k, false);
        let a1 = gen::random_aggregate(&mut rng, k, true);
        let before = verifier::leakage(&a0, &a1).unwrap();
        let p = ratio(rng.gen_range(0..=10), 10);
        let all: Vec<usize> = (0..k).collect();
        let mask = |a: &PosteriorAggregate| {
            let mut b = a.clone();
            b.omega = masking_effect(&a.omega, &all, &p).unwrap();
            b
        };
        let after = verifier::leakage(&mask(&a0), &mask(&a1)).unwrap();
        let keep = opaqnet::rational::to_f64(&(one() - &p));
        prop_assert!((after.value - keep * before.value).abs() <= 1e-12);
        if k == 1 {
            prop_assert_eq!(after.exact.unwrap(), before.exact.unwrap().scale(&(one() - &p)));
        }
    }

    #[test]
    fn zero_leakage_certificates_are_sound(seed in any::<u64>()) {
        let mut rng = gen::rng(seed);
        let m = bundled::repeater();
        let a0 = gen::random_aggregate(&mut rng, 1, false);
        let a1 = if rng.gen_bool(0.5) {
            let f = ratio(rng.gen_range(1..=4), 4);
            PosteriorAggregate { secret: true, omega: a0.omega.scaled(&f), p: &a0.p * &f, ..a0.clone() }
        } else {
            gen::random_aggregate(&mut rng, 1, true)
        };
        let (c0, c1) = (emit_certificate(&m, "O", &a0), emit_certificate(&m, "O", &a1));
        prop_assert!(check_certificate(&c0, &a0).unwrap() && check_certificate(&c1, &a1).unwrap());
        let l = verifier::leakage(&a0, &a1).unwrap().value;
        match check_zero_leakage(&c1, &c0) {
            Some(_) => prop_assert!(l <= 1e-12),
            None => prop_assert!(l > 0.0),
        }
    }
}

/// Smallest encoding over all renumberings.
fn brute_canonical(labels: &[usize], less: &[Vec<bool>]) -> Vec<usize> {
    let n = labels.len();
    let mut best: Option<Vec<usize>> = None;
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        let mut code: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        for &i in &perm {
            for &j in &perm {
                code.push(less[i][j] as usize);
            }
        }
        if best.as_ref().is_none_or(|b| code < *b) {
            best = Some(code);
        }
        // next permutation
        let Some(i) = (1..n).rev().find(|&i| perm[i - 1] < perm[i]) else { break };
        let j = (i..n).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
    best.unwrap_or_default()
}

#[test]
fn canonical_form_separates_small_posets() {
    for n in 0..=5usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
        let mut seen: HashMap<String, Vec<usize>> = HashMap::new();
        for bits in 0u32..1 << pairs.len() {
            let edges: Vec<(usize, usize)> =
                pairs.iter().enumerate().filter(|(k, _)| bits >> k & 1 == 1).map(|(_, &e)| e).collect();
            let mut less = vec![vec![false; n]; n];
            for &(a, b) in &edges {
                less[a][b] = true;
            }
            let closed = (0..n).all(|i| (0..n).all(|j| (0..n).all(|k| !(less[i][j] && less[j][k]) || less[i][k])));
            if !closed {
                continue;
            }
            for lab in 0u32..1 << n {
                let labels: Vec<usize> = (0..n).map(|i| (lab >> i & 1) as usize).collect();
                let names = labels.iter().map(|&l| ["a", "b"][l].to_string()).collect();
                let canon = Pomset::new(names, &edges).unwrap().canonical();
                let brute = brute_canonical(&labels, &less);
                let prev = seen.entry(canon.clone()).or_insert_with(|| brute.clone());
                assert_eq!(*prev, brute, "{canon} names non-isomorphic posets");
            }
        }
        let distinct: std::collections::HashSet<&Vec<usize>> = seen.values().collect();
        assert_eq!(distinct.len(), seen.len());
    }
}

#[test]
fn observable_interleavings_of_em() {
    let m = bundled::repeater();
    for k in 0..=6usize {
        let fam = TargetFamily::from_specs(&[bundled::em_target(k)]).unwrap();
        let x = verifier::explore(&m, &fam, &ExploreOptions::default()).unwrap();
        let canon = &fam.targets[0].canonical;
        let i = x.maximal_with_obs(canon).next().expect("E_m is reached");
        let obs = x.unfolding.obs_pomset(&x.nodes[i].config);
        assert_eq!(obs.count_linear_extensions().unwrap(), shuffle_count(k as u64));
    }
}

#[test]
fn maximal_members_do_not_double_count() {
    let mut models = vec![(bundled::repeater(), TargetFamily::from_specs(&bundled::repeater().targets).unwrap())];
    let mut rng = gen::rng(11);
    for _ in 0..40 {
        let m = gen::random_model(&mut rng, ModelParams { choice_free: true, ..Default::default() });
        let fam = TargetFamily::new(vec![("O".into(), gen::random_chain_target(&mut rng, &m))]).unwrap();
        models.push((m, fam));
    }
    for (m, fam) in &models {
        let x = verifier::explore(m, fam, &ExploreOptions::default()).unwrap();
        for t in &fam.targets {
            let members: Vec<usize> = x.maximal_with_obs(&t.canonical).collect();
            for b in [false, true] {
                let total: Rational =
                    members.iter().filter(|&&i| x.nodes[i].secret == b).map(|&i| x.nodes[i].state.weight().clone()).sum();
                assert!(total <= one(), "{} class {}: total weight {total}", t.name, b as u8);
            }
            for &a in &members {
                for &b in &members {
                    let (ea, eb) = (&x.nodes[a].config.events, &x.nodes[b].config.events);
                    assert!(a == b || !ea.iter().all(|e| eb.contains(e)), "nested maximal members");
                }
            }
        }
    }
}

#[test]
fn empty_policy_is_the_open_loop() {
    let m = bundled::repeater();
    let arch = model_architecture(&m).unwrap();
    let fam = TargetFamily::from_specs(&m.targets).unwrap();
    let opts = ExploreOptions::default();
    let cl = evaluate(&m, &arch, &EnforcementPolicy::default(), &fam, 0.1, &opts).unwrap();
    let x = verifier::explore(&m, &fam, &opts).unwrap();
    let open = verifier::aggregate(&x, &m, &fam).unwrap();
    for (a, b) in cl.aggregates.iter().zip(&open) {
        assert_eq!(a.classes, b.classes);
    }
}

#[test]
fn synthesized_policies_reverify() {
    let m = bundled::repeater();
    let arch = model_architecture(&m).unwrap();
    let opts = ExploreOptions::default();
    for names in [vec!["O_fg"], vec!["O_fail"], vec!["O_fg", "O_fail"]] {
        let all = TargetFamily::from_specs(&m.targets).unwrap();
        let fam =
            TargetFamily::new(names.iter().map(|n| (n.to_string(), all.get(n).unwrap().pomset.clone())).collect()).unwrap();
        for eps in [0.0, 0.05, 0.25] {
            let sopts = SynthesisOptions { epsilon: eps, ..Default::default() };
            if let SynthesisOutcome::Success(s) = synthesize(&m, &arch, &fam, sopts, &opts).unwrap() {
                let again = evaluate(&m, &arch, &s.policy, &fam, eps, &opts).unwrap();
                assert!(again.report.epsilon_opaque, "{names:?} eps={eps}");
                assert!(opaqnet::enforcement::admissibility_violation(&m, &arch, &s.policy, &fam, &opts).unwrap().is_none());
            }
        }
    }
}

#[test]
fn random_interleavings_match_quotient() {
    let r = oracle::interleaving_suite(0, 200);
    assert!(r.ok(), "{} {:?}", r.summary(), r.failures.first());
}

#[test]
fn certificates_ignore_summation_order() {
    let mut rng = gen::rng(5);
    let m = bundled::repeater();
    for _ in 0..20 {
        let parts: Vec<PosteriorAggregate> = (0..3).map(|_| gen::random_aggregate(&mut rng, 1, false)).collect();
        let sum = |order: &[usize]| {
            let mut omega = parts[0].omega.scaled(&Rational::from_integer(0.into()));
            for &i in order {
                omega.add_assign(&parts[i].omega);
            }
            let p = omega.trace();
            emit_certificate(&m, "O", &PosteriorAggregate { omega, p, ..parts[0].clone() })
        };
        assert_eq!(sum(&[0, 1, 2]), sum(&[2, 0, 1]));
    }
}
