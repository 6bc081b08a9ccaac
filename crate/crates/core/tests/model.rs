use branchnet::model::{block_topology, build_branched_net, count_parameters, BranchedNetConfig, BranchedNetwork};
use branchnet::tensor_core::{BatchNormOptions, Mode, RunningStats, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(stage_blocks: Vec<usize>, widths: Vec<usize>, split: usize, branches: usize) -> BranchedNetConfig {
    BranchedNetConfig {
        stage_blocks,
        stage_widths: widths,
        branch_after_block: split,
        num_branches: branches,
        num_classes: 5,
        input_height: 8,
        input_width: 8,
        ..BranchedNetConfig::mini()
    }
}

fn batch(seed: u64, n: usize) -> Tensor {
    Tensor::randn(&[n, 3, 8, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn paper_topology_has_93_blocks_and_200_layers() {
    let topo = block_topology(&BranchedNetConfig::paper_scale()).unwrap();
    assert_eq!(topo.shared_blocks, 39);
    assert_eq!(topo.per_branch_blocks, 27);
    assert_eq!(topo.total_blocks_materialized, 93);
    assert_eq!(topo.conv_layers, 199);
    assert_eq!(topo.weighted_layers, 200);
}

#[test]
fn topology_boundaries() {
    let mut c = BranchedNetConfig::paper_scale();
    c.branch_after_block = 0;
    assert_eq!(block_topology(&c).unwrap().total_blocks_materialized, 132);
    c.branch_after_block = 66;
    let t = block_topology(&c).unwrap();
    assert_eq!(t.total_blocks_materialized, 66);
    assert_eq!(t.per_branch_blocks, 0);
    c.branch_after_block = 67;
    assert!(block_topology(&c).is_err());
}

#[test]
fn materialized_block_formula_holds_for_all_branch_points() {
    let mut c = BranchedNetConfig::paper_scale();
    for k in 1..=4 {
        c.num_branches = k;
        for b in 0..=66 {
            c.branch_after_block = b;
            let t = block_topology(&c).unwrap();
            assert_eq!(t.total_blocks_materialized, b + k * (66 - b));
        }
    }
}

#[test]
fn same_seed_builds_identical_registries() {
    let c = tiny(vec![1, 1], vec![4, 8], 1, 2);
    let a = build_branched_net(&c, 42).unwrap();
    let b = build_branched_net(&c, 42).unwrap();
    let pa: Vec<_> = a.named_params().collect();
    let pb: Vec<_> = b.named_params().collect();
    assert_eq!(pa, pb);
    let c2 = build_branched_net(&c, 43).unwrap();
    assert_ne!(a.param("trunk.stem.conv.weight"), c2.param("trunk.stem.conv.weight"));
}

#[test]
fn branches_are_independently_initialized() {
    let c = tiny(vec![1, 1], vec![4, 8], 1, 2);
    let net = build_branched_net(&c, 7).unwrap();
    for suffix in ["block2.conv1.weight", "block2.conv2.weight", "head.weight"] {
        let a = net.param(&format!("branch1.{suffix}")).unwrap();
        let b = net.param(&format!("branch2.{suffix}")).unwrap();
        assert_eq!(a.shape(), b.shape());
        assert_ne!(a, b, "{suffix}");
    }
}

#[test]
fn registry_matches_hand_enumerated_layers() {
    let mut c = tiny(vec![1, 1], vec![8, 16], 1, 2);
    c.num_classes = 10;
    let net = build_branched_net(&c, 0).unwrap();
    let got: Vec<(String, Vec<usize>)> = net
        .named_params()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();

    let mut want: Vec<(String, Vec<usize>)> = vec![
        ("trunk.stem.conv.weight".into(), vec![8, 3, 3, 3]),
        ("trunk.stem.bn.gamma".into(), vec![8]),
        ("trunk.stem.bn.beta".into(), vec![8]),
        ("trunk.block1.conv1.weight".into(), vec![8, 8, 3, 3]),
        ("trunk.block1.bn1.gamma".into(), vec![8]),
        ("trunk.block1.bn1.beta".into(), vec![8]),
        ("trunk.block1.conv2.weight".into(), vec![8, 8, 3, 3]),
        ("trunk.block1.bn2.gamma".into(), vec![8]),
        ("trunk.block1.bn2.beta".into(), vec![8]),
    ];
    for b in ["branch1", "branch2"] {
        want.extend([
            (format!("{b}.block2.conv1.weight"), vec![16, 8, 3, 3]),
            (format!("{b}.block2.bn1.gamma"), vec![16]),
            (format!("{b}.block2.bn1.beta"), vec![16]),
            (format!("{b}.block2.conv2.weight"), vec![16, 16, 3, 3]),
            (format!("{b}.block2.bn2.gamma"), vec![16]),
            (format!("{b}.block2.bn2.beta"), vec![16]),
            (format!("{b}.block2.shortcut.conv.weight"), vec![16, 8, 1, 1]),
            (format!("{b}.block2.shortcut.bn.gamma"), vec![16]),
            (format!("{b}.block2.shortcut.bn.beta"), vec![16]),
            (format!("{b}.head.weight"), vec![10, 16]),
            (format!("{b}.head.bias"), vec![10]),
        ]);
    }
    assert_eq!(got, want);
}

#[test]
fn mini_counts_match_hand_computation() {
    // stem: 3·8·9 + 2·8 = 232
    // block1 (8→8, identity): 2·(8·8·9 + 16) = 1184
    // block2 (8→16, stride 2, projection): 8·16·9 + 32 + 16·16·9 + 32 + 8·16 + 32 = 3680
    // head: 16·10 + 10 = 170
    let mut c = tiny(vec![1, 1], vec![8, 16], 1, 2);
    c.num_classes = 10;
    let r = count_parameters(&c).unwrap();
    assert_eq!(r.stem_params, 232);
    assert_eq!(r.shared_params, 1184);
    assert_eq!(r.per_branch_params, vec![3680, 3680]);
    assert_eq!(r.head_params, vec![170, 170]);
    assert_eq!(r.total_params, 232 + 1184 + 2 * (3680 + 170));
    assert_eq!(r.equivalent_independent_ensemble_params, 2 * (232 + 1184 + 3680 + 170));
    assert_eq!(r.sharing_ratio, 9116.0 / 10532.0);

    let net = build_branched_net(&c, 1).unwrap();
    assert_eq!(net.param_report(), r);
    assert_eq!(net.scalar_param_count(), 9116);
}

#[test]
fn registry_counts_agree_with_plan_counts() {
    let cases = [
        (vec![2, 2, 2], vec![4, 8, 16], 4, 2),
        (vec![2, 2, 2], vec![4, 8, 16], 0, 3),
        (vec![1, 2], vec![4, 8], 3, 2),
        (vec![2, 1], vec![4, 4], 2, 1),
    ];
    for (stages, widths, split, k) in cases {
        let c = tiny(stages, widths, split, k);
        let net = build_branched_net(&c, 3).unwrap();
        assert_eq!(net.param_report(), count_parameters(&c).unwrap(), "{c:?}");
    }
    let mut c = tiny(vec![1, 1], vec![2, 4], 1, 2);
    c.bottleneck = true;
    let net = build_branched_net(&c, 3).unwrap();
    assert_eq!(net.param_report(), count_parameters(&c).unwrap());
}

#[test]
fn no_sharing_gives_ratio_one() {
    let mut c = BranchedNetConfig::paper_scale();
    c.branch_after_block = 0;
    assert_eq!(count_parameters(&c).unwrap().sharing_ratio, 1.0);
    let c = tiny(vec![2, 2, 2], vec![4, 8, 16], 0, 2);
    assert_eq!(build_branched_net(&c, 0).unwrap().param_report().sharing_ratio, 1.0);
}

#[test]
fn paper_scale_shares_parameters_and_ratio_is_monotone() {
    let mut c = BranchedNetConfig::paper_scale();
    let r = count_parameters(&c).unwrap();
    let single = r.equivalent_independent_ensemble_params / 2;
    assert!(r.total_params < 2 * single);
    assert!(r.sharing_ratio < 1.0);

    let mut prev = f64::INFINITY;
    for b in 0..=66 {
        c.branch_after_block = b;
        let ratio = count_parameters(&c).unwrap().sharing_ratio;
        assert!(ratio <= prev, "ratio rose at B={b}");
        prev = ratio;
    }
}

#[test]
fn identical_branch_weights_give_identical_logits() {
    let c = tiny(vec![1, 2], vec![4, 8], 1, 2);
    let mut net = build_branched_net(&c, 5).unwrap();
    let names: Vec<String> = net
        .param_names()
        .filter(|n| n.starts_with("branch1."))
        .map(String::from)
        .collect();
    for n in names {
        let v = net.param(&n).unwrap().clone();
        net.set_param(&n.replacen("branch1.", "branch2.", 1), v).unwrap();
    }
    for mode in [Mode::Train, Mode::Eval] {
        let mut tape = Tape::new();
        let x = tape.constant(batch(1, 3));
        let out = net.forward_all_branches(&mut tape, x, mode).unwrap();
        let (a, b) = (tape.value(out.logits[0]), tape.value(out.logits[1]));
        assert!(a.max_abs_diff(b) <= 1e-12);
    }
}

#[test]
fn trunk_runs_once_regardless_of_branch_count() {
    for k in 1..=4 {
        let c = tiny(vec![2, 2, 2], vec![4, 8, 16], 4, k);
        let mut net = build_branched_net(&c, 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(batch(0, 2));
        let out = net.forward_all_branches(&mut tape, x, Mode::Train).unwrap();
        assert_eq!(out.trunk_block_evals, 4);
        assert_eq!(out.branch_block_evals, vec![2; k]);
        assert_eq!(out.logits.len(), k);
        assert_eq!(tape.value(out.logits[0]).shape(), &[2, 5]);
    }
}

#[test]
fn rejects_wrong_input_shape() {
    let c = tiny(vec![1, 1], vec![4, 8], 1, 2);
    let mut net = build_branched_net(&c, 0).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 3, 9, 8]));
    assert!(net.forward_all_branches(&mut tape, x, Mode::Train).is_err());
}

#[test]
fn eval_forward_does_not_touch_running_stats() {
    let c = tiny(vec![1, 1], vec![4, 8], 1, 2);
    let mut net = build_branched_net(&c, 0).unwrap();
    let before: Vec<RunningStats> = net.named_running_stats().map(|(_, s)| s.clone()).collect();
    let mut tape = Tape::new();
    let x = tape.constant(batch(2, 2));
    net.forward_eval(&mut tape, x).unwrap();
    let after: Vec<RunningStats> = net.named_running_stats().map(|(_, s)| s.clone()).collect();
    assert_eq!(before, after);
    net.forward_all_branches(&mut tape, x, Mode::Train).unwrap();
    let trained: Vec<RunningStats> = net.named_running_stats().map(|(_, s)| s.clone()).collect();
    assert_ne!(before, trained);
}

/// Plain residual network forward written directly against the registry.
fn plain_forward(net: &BranchedNetwork, x: &Tensor, mode: Mode) -> Tensor {
    let cfg = net.config();
    let mut stats: Vec<(String, RunningStats)> = net
        .named_running_stats()
        .map(|(n, s)| (n.to_string(), s.clone()))
        .collect();
    let mut tape = Tape::new();
    let p = |tape: &mut Tape, name: &str| -> Var { tape.param(net.param(name).unwrap().clone()) };
    let mut conv_bn = |tape: &mut Tape, h: Var, prefix: &str, conv: &str, bn: &str, stride: usize| {
        let w = p(tape, &format!("{prefix}.{conv}.weight"));
        let k = tape.value(w).shape()[2];
        let y = tape.conv2d(h, w, None, stride, k / 2).unwrap();
        let g = p(tape, &format!("{prefix}.{bn}.gamma"));
        let b = p(tape, &format!("{prefix}.{bn}.beta"));
        let key = format!("{prefix}.{bn}");
        let s = &mut stats.iter_mut().find(|(n, _)| *n == key).unwrap().1;
        tape.batch_norm2d(y, g, b, s, mode, BatchNormOptions::default())
            .unwrap()
    };

    let mut h = tape.constant(x.clone());
    h = conv_bn(&mut tape, h, "trunk", "stem.conv", "stem.bn", 1);
    h = tape.relu(h).unwrap();
    let mut index = 0;
    for (stage, &count) in cfg.stage_blocks.iter().enumerate() {
        for j in 0..count {
            index += 1;
            let stride = if stage > 0 && j == 0 { 2 } else { 1 };
            let pre = format!("trunk.block{index}");
            let a = conv_bn(&mut tape, h, &pre, "conv1", "bn1", stride);
            let a = tape.relu(a).unwrap();
            let a = conv_bn(&mut tape, a, &pre, "conv2", "bn2", 1);
            let skip = if net.param(&format!("{pre}.shortcut.conv.weight")).is_some() {
                conv_bn(&mut tape, h, &pre, "shortcut.conv", "shortcut.bn", stride)
            } else {
                h
            };
            let s = tape.add(a, skip).unwrap();
            h = tape.relu(s).unwrap();
        }
    }
    let g = tape.global_avg_pool(h).unwrap();
    let w = p(&mut tape, "branch1.head.weight");
    let b = p(&mut tape, "branch1.head.bias");
    let out = tape.linear(g, w, b).unwrap();
    tape.value(out).clone()
}

#[test]
fn single_branch_full_trunk_equals_plain_resnet() {
    let c = tiny(vec![2, 1, 2], vec![4, 8, 8], 5, 1);
    let mut net = build_branched_net(&c, 9).unwrap();
    let x = batch(4, 3);
    for mode in [Mode::Train, Mode::Eval] {
        let expect = plain_forward(&net, &x, mode);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = net.forward_all_branches(&mut tape, xv, mode).unwrap();
        assert_eq!(tape.value(out.logits[0]), &expect);
    }
}
