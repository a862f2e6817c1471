mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use mmplan::allocator::{comm_cost, initial_assignment, local_search, Assignment, CostWeights};
use mmplan::clusterer::{agglomerate, cluster_languages, LanguageDistanceMatrix};
use mmplan::configgen::{generate, FullConfig};
use mmplan::model::{validate_config, ClusterTopology, DeviceId, ModuleKey, Side};
use mmplan::pathtmpl::PathTemplate;
use mmplan::sharing::{resolve_group_name, DEFAULT_PARAMS_PER_LAYER};
use mmplan::syncsim::{
    preset_arch, run_benchmark, sync_step, synthetic_config, DeviceState, Matrix, SimSettings,
};
use mmplan::SharingPattern;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn code() -> impl Strategy<Value = String> {
    "[a-z0-9_]{1,5}"
}

fn side() -> impl Strategy<Value = Side> {
    prop_oneof![Just(Side::Encoder), Just(Side::Decoder)]
}

proptest! {
    #[test]
    fn module_key_serde_round_trip(s in side(), pos in 0usize..100, g in "[a-zA-Z0-9_:-]{0,12}") {
        let k = ModuleKey::new(s, pos, g);
        let json = serde_json::to_string(&k).unwrap();
        prop_assert_eq!(&serde_json::from_str::<ModuleKey>(&json).unwrap(), &k);
        let yaml = serde_yaml::to_string(&k).unwrap();
        prop_assert_eq!(serde_yaml::from_str::<ModuleKey>(&yaml).unwrap(), k);
    }

    #[test]
    fn validate_is_idempotent_and_order_insensitive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let langs = pool(4);
        let n = rng.random_range(0..10);
        let mut tasks = random_tasks(&mut rng, n, &langs, &preset_arch("partial").unwrap(), &Default::default());
        // Corrupt a few tasks so there is something to report.
        for t in tasks.iter_mut() {
            match rng.random_range(0..6) {
                0 => t.weight = 0,
                1 => { t.enc_modules.pop(); t.enc_layers.pop(); }
                2 => t.device = Some(DeviceId::new(5, 0)),
                3 => t.dec_layers = vec![0],
                _ => t.device = Some(DeviceId::new(0, 0)),
            }
        }
        let topo = ClusterTopology::new(1, 1, 3);
        let first = validate_config(&tasks, &topo);
        prop_assert_eq!(&validate_config(&tasks, &topo), &first);
        tasks.shuffle(&mut rng);
        prop_assert_eq!(validate_config(&tasks, &topo), first);
    }

    #[test]
    fn symmetric_rendering_is_direction_consistent(a in code(), b in code()) {
        prop_assume!(a != b);
        let (a, b) = (lang(&a), lang(&b));
        let src = PathTemplate::symmetric("{lang_a}.{lang_b}/{sorted_pair}.{side_a}").unwrap();
        let tgt = PathTemplate::symmetric("{lang_a}.{lang_b}/{sorted_pair}.{side_b}").unwrap();
        prop_assert_eq!(src.render(&a, &b), tgt.render(&b, &a));
        prop_assert_eq!(tgt.render(&a, &b), src.render(&b, &a));
        let sp = PathTemplate::symmetric("{sorted_pair}").unwrap();
        prop_assert_eq!(sp.render(&a, &b), sp.render(&b, &a));
        let lp = PathTemplate::directional("{lang_pair}").unwrap();
        prop_assert_ne!(lp.render(&a, &b), lp.render(&b, &a));
    }

    #[test]
    fn rendering_leaves_no_braces(a in code(), b in code(), lit in "[a-z./_-]{0,6}") {
        let (a, b) = (lang(&a), lang(&b));
        let d = PathTemplate::directional(&format!("{lit}{{src_lang}}{lit}{{tgt_lang}}/{{lang_pair}}")).unwrap();
        let s = PathTemplate::symmetric(&format!("{{lang_a}}{lit}{{lang_b}}{{side_a}}{{side_b}}{{sorted_pair}}{lit}")).unwrap();
        let brace = '{';
        prop_assert!(!d.render(&a, &b).contains(brace));
        prop_assert!(!s.render(&a, &b).contains(brace));
    }

    #[test]
    fn group_aliases_are_exact(seed in any::<u64>(), si in 0usize..5, ti in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let langs = pool(5);
        let groups = random_groups(&mut rng, &langs);
        let (s, t) = (&langs[si], &langs[ti]);
        prop_assert_eq!(
            resolve_group_name(SharingPattern::Group, Side::Encoder, s, t, &groups).unwrap(),
            resolve_group_name(SharingPattern::SrcGroup, Side::Encoder, s, t, &groups).unwrap()
        );
        prop_assert_eq!(
            resolve_group_name(SharingPattern::Group, Side::Decoder, s, t, &groups).unwrap(),
            resolve_group_name(SharingPattern::TgtGroup, Side::Decoder, s, t, &groups).unwrap()
        );
    }

    #[test]
    fn clustering_partitions_and_ignores_input_order(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let langs = pool(n);
        let mut rows = vec![vec![0.0f64; n]; n];
        // Small integer distances make ties common.
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        for (i, j) in pairs {
            let d = f64::from(rng.random_range(1..5u8));
            rows[i][j] = d;
            rows[j][i] = d;
        }
        let k = rng.random_range(1..=n);
        let m = LanguageDistanceMatrix::new(langs.clone(), rows.clone()).unwrap();
        let groups = cluster_languages(&m, k).unwrap();
        prop_assert_eq!(groups.keys().cloned().collect::<Vec<_>>(), langs.clone());
        prop_assert_eq!(groups.values().collect::<BTreeSet<_>>().len(), k);

        let (merges, _) = agglomerate(&m, 1).unwrap();
        prop_assert!(merges.windows(2).all(|w| w[0].height <= w[1].height));

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let plangs = perm.iter().map(|&i| langs[i].clone()).collect();
        let prows = perm.iter().map(|&i| perm.iter().map(|&j| rows[i][j]).collect()).collect();
        let pm = LanguageDistanceMatrix::new(plangs, prows).unwrap();
        prop_assert_eq!(cluster_languages(&pm, k).unwrap(), groups);
    }

    #[test]
    fn local_search_never_worsens(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = ClusterTopology::new(rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4));
        let n = rng.random_range(1..=topo.total_slots().min(16));
        let langs = pool(5);
        let arch = random_arch(&mut rng, true);
        let groups = random_groups(&mut rng, &langs);
        let tasks = random_tasks(&mut rng, n, &langs, &arch, &groups);
        let inv = mmplan::sharing::enumerate_modules(&tasks, DEFAULT_PARAMS_PER_LAYER).unwrap();
        let w = CostWeights::default();
        let a0 = initial_assignment(&tasks, &topo, seed).unwrap();
        a0.check(&tasks, &topo).unwrap();
        let a = local_search(&a0, &tasks, &inv, &topo, w, 2_000, seed).unwrap();
        a.check(&tasks, &topo).unwrap();
        prop_assert!(comm_cost(&a, &tasks, &inv, w).total <= comm_cost(&a0, &tasks, &inv, w).total);
    }

    #[test]
    fn comm_cost_ignores_device_labels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let langs = pool(4);
        let arch = random_arch(&mut rng, false);
        let n = rng.random_range(1..=12);
        let tasks = random_tasks(&mut rng, n, &langs, &arch, &Default::default());
        let inv = mmplan::sharing::enumerate_modules(&tasks, DEFAULT_PARAMS_PER_LAYER).unwrap();
        let placement: BTreeMap<_, _> = tasks
            .iter()
            .map(|t| (t.id.clone(), DeviceId::new(rng.random_range(0..3), rng.random_range(0..3))))
            .collect();
        let mut nodes: Vec<usize> = (0..3).collect();
        nodes.shuffle(&mut rng);
        let gpus: Vec<Vec<usize>> = (0..3)
            .map(|_| { let mut g: Vec<usize> = (0..3).collect(); g.shuffle(&mut rng); g })
            .collect();
        let relabeled = placement
            .iter()
            .map(|(id, d)| (id.clone(), DeviceId::new(nodes[d.node], gpus[d.node][d.gpu])))
            .collect();
        let w = CostWeights { w_intra: rng.random_range(0.0..2.0), w_inter: rng.random_range(2.0..8.0) };
        let a = comm_cost(&Assignment { placement }, &tasks, &inv, w).total;
        let b = comm_cost(&Assignment { placement: relabeled }, &tasks, &inv, w).total;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sync_is_linear(seed in any::<u64>(), c in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<ModuleKey> = (0..3).map(|i| ModuleKey::new(Side::Encoder, i, "m")).collect();
        let dim = 3;
        let n_dev = rng.random_range(1..=5);
        let mut plain = Vec::new();
        let mut scaled = Vec::new();
        for d in 0..n_dev {
            let hosted: Vec<&ModuleKey> = keys.iter().filter(|_| rng.random_bool(0.7)).collect();
            let mut p = DeviceState::<f64>::new(DeviceId::new(0, d), hosted.iter().copied(), dim);
            let mut s = p.clone();
            for k in hosted {
                if rng.random_bool(0.6) {
                    let g = Matrix::from_rows((0..dim).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).unwrap();
                    let mut gc = g.clone();
                    gc.scale(c);
                    p.add_gradient(k, &g).unwrap();
                    s.add_gradient(k, &gc).unwrap();
                }
            }
            plain.push(p);
            scaled.push(s);
        }
        let a = sync_step(&mut plain).unwrap();
        let b = sync_step(&mut scaled).unwrap();
        for (k, g) in &a.gradients {
            let mut expect = g.clone();
            expect.scale(c);
            prop_assert!(expect.relative_diff(&b.gradients[k]) <= 1e-12);
            let m = &a.modules[k];
            if m.group.len() == 1 {
                prop_assert!(!m.allreduces_gradient());
            }
        }
    }

    #[test]
    fn singleton_modules_never_charged(seed in any::<u64>(), k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let name = ["independent", "partial", "shared", "full"][rng.random_range(0..4)];
        let cfg = synthetic_config(&preset_arch(name).unwrap(), k).unwrap();
        let r = run_benchmark::<f64>(&cfg, &SimSettings { steps: 2, seed, ..SimSettings::default() }).unwrap();
        for m in &r.ledger.modules {
            if m.group_size == 1 {
                prop_assert_eq!(m.grad_bytes, 0);
            }
        }
    }
}

fn ledger_bytes(cfg: &FullConfig, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let s = SimSettings {
        steps: 4,
        seed,
        accum_count: 2,
        ..SimSettings::default()
    };
    let r = run_benchmark::<f64>(cfg, &s).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    r.ledger.write_steps(&mut a).unwrap();
    r.ledger.write_modules(&mut b).unwrap();
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ledgers_are_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let langs = pool(rng.random_range(2..=4));
        let arch = random_arch(&mut rng, false);
        let (meta, corpus) = meta_with_corpus(&mut rng, &langs, &arch);
        let cfg = generate(&meta, None, &corpus).unwrap();
        prop_assert_eq!(ledger_bytes(&cfg, seed), ledger_bytes(&cfg, seed));
    }

    #[test]
    fn generate_is_deterministic_and_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let langs = pool(rng.random_range(1..=5));
        let arch = random_arch(&mut rng, false);
        let (mut meta, corpus) = meta_with_corpus(&mut rng, &langs, &arch);
        if langs.len() == 1 || rng.random_bool(0.5) {
            meta.autoencoder = Some(Default::default());
        }
        let a = generate(&meta, None, &corpus);
        let b = generate(&meta, None, &corpus);
        prop_assert_eq!(&a, &b);
        if let Ok(cfg) = a {
            let text = cfg.to_yaml().unwrap();
            prop_assert_eq!(&text, &b.unwrap().to_yaml().unwrap());
            let back = FullConfig::from_yaml(&text).unwrap();
            prop_assert!(back.validate().is_empty());
            prop_assert_eq!(back, cfg);
        }
    }
}
