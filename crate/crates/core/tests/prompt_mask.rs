use icon_core::model::{forward, init_params, ModelConfig};
use icon_core::prompt::{build_mask, Prompt, Role, Token};
use icon_core::RngStream;

const ROLES: [Role; 4] = [Role::DemoCond, Role::DemoQoi, Role::QuestionCond, Role::Query];

/// Visibility written as a lookup on (query role, key role) within one
/// example; earlier examples are fully visible except for their queries.
fn oracle(q: &Token, k: &Token) -> bool {
    let same_example = [
        // key:  DemoCond DemoQoi QuestionCond Query
        [true, false, true, false],  // DemoCond
        [true, true, true, false],   // DemoQoi
        [true, false, true, false],  // QuestionCond
        [true, false, true, false],  // Query
    ];
    let r = |role: Role| ROLES.iter().position(|&x| x == role).unwrap();
    if k.role == Role::Query {
        false
    } else if k.example_index == q.example_index {
        same_example[r(q.role)][r(k.role)]
    } else {
        k.example_index < q.example_index
    }
}

fn random_prompt(rng: &mut RngStream) -> Prompt {
    let n_demos = rng.below(6);
    let mut tokens = Vec::new();
    let mut push = |role, ex, n: usize, rng: &mut RngStream| {
        for _ in 0..n {
            let value = if role == Role::Query { 0.0 } else { rng.normal() };
            tokens.push(Token { t: rng.uniform(), x: rng.uniform(), role, value, example_index: ex });
        }
    };
    for i in 1..=n_demos {
        push(Role::DemoCond, i, 1 + rng.below(5), rng);
        push(Role::DemoQoi, i, 1 + rng.below(5), rng);
    }
    push(Role::QuestionCond, n_demos + 1, 1 + rng.below(5), rng);
    for i in 2..=n_demos {
        push(Role::Query, i, 1 + rng.below(4), rng);
    }
    push(Role::Query, n_demos + 1, 1 + rng.below(4), rng);
    let mask = build_mask(&tokens);
    Prompt { tokens, mask, n_examples: n_demos, targets: Vec::new() }
}

/// Tokens whose features can reach position `q` through any number of
/// attention layers.
fn reachable(p: &Prompt, q: usize) -> Vec<bool> {
    let n = p.len();
    let mut seen = vec![false; n];
    let mut stack = vec![q];
    seen[q] = true;
    while let Some(i) = stack.pop() {
        for k in 0..n {
            if p.allowed(i, k) && !seen[k] {
                seen[k] = true;
                stack.push(k);
            }
        }
    }
    seen
}

#[test]
fn mask_matches_lookup_table() {
    let mut rng = RngStream::new(5, 0);
    for _ in 0..50 {
        let p = random_prompt(&mut rng);
        for (i, q) in p.tokens.iter().enumerate() {
            for (j, k) in p.tokens.iter().enumerate() {
                assert_eq!(p.allowed(i, j), oracle(q, k), "{q:?} -> {k:?}");
            }
        }
    }
}

#[test]
fn question_never_reaches_demo_queries_or_later_examples() {
    let mut rng = RngStream::new(6, 0);
    for _ in 0..50 {
        let p = random_prompt(&mut rng);
        for q in p.query_positions() {
            let r = reachable(&p, q);
            let ex = p.tokens[q].example_index;
            for (k, tok) in p.tokens.iter().enumerate() {
                if k == q {
                    continue;
                }
                if r[k] {
                    assert!(tok.role != Role::Query);
                    assert!(tok.example_index < ex || tok.role.is_condition());
                }
            }
        }
    }
}

#[test]
fn perturbing_unreachable_tokens_changes_nothing() {
    let params = init_params(&ModelConfig::toy(), &mut RngStream::new(1, 0)).unwrap();
    let mut rng = RngStream::new(7, 0);
    for _ in 0..50 {
        let p = random_prompt(&mut rng);
        let base = forward(&params, &p).unwrap();
        let queries = p.query_positions();
        for (qi, &q) in queries.iter().enumerate() {
            let r = reachable(&p, q);
            let mut moved = p.clone();
            for (k, tok) in moved.tokens.iter_mut().enumerate() {
                if !r[k] {
                    tok.value += 10.0 * rng.normal();
                    tok.t = rng.uniform();
                    tok.x = rng.uniform();
                }
            }
            let out = forward(&params, &moved).unwrap();
            assert_eq!(out[qi].to_bits(), base[qi].to_bits());
        }
    }
}

#[test]
fn permuting_within_segments_keeps_predictions() {
    let params = init_params(&ModelConfig::toy(), &mut RngStream::new(2, 0)).unwrap();
    let mut rng = RngStream::new(8, 0);
    for _ in 0..50 {
        let p = random_prompt(&mut rng);
        let base = forward(&params, &p).unwrap();
        // shuffle token order inside every (example, role) segment
        let n = p.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut start = 0;
        while start < n {
            let key = |i: usize| (p.tokens[i].example_index, p.tokens[i].role);
            let mut end = start + 1;
            while end < n && key(end) == key(start) {
                end += 1;
            }
            rng.shuffle(&mut order[start..end]);
            start = end;
        }
        let tokens: Vec<Token> = order.iter().map(|&i| p.tokens[i]).collect();
        let shuffled = Prompt { mask: build_mask(&tokens), tokens, ..p.clone() };
        let out = forward(&params, &shuffled).unwrap();
        // map predictions back through the permutation of query positions
        let qpos = p.query_positions();
        let new_qpos = shuffled.query_positions();
        for (j, &np) in new_qpos.iter().enumerate() {
            let orig = qpos.iter().position(|&q| q == order[np]).unwrap();
            assert!((out[j] - base[orig]).abs() <= 1e-6);
        }
    }
}

#[test]
fn targets_do_not_enter_tokens_or_mask() {
    let mut rng = RngStream::new(9, 0);
    let mut p = random_prompt(&mut rng);
    p.targets = (0..p.n_queries()).map(|_| rng.normal()).collect();
    let mut zeroed = p.clone();
    zeroed.targets.iter_mut().for_each(|t| *t = 0.0);
    assert_eq!(p.tokens, zeroed.tokens);
    assert_eq!(p.mask, zeroed.mask);
    let params = init_params(&ModelConfig::toy(), &mut RngStream::new(3, 0)).unwrap();
    assert_eq!(forward(&params, &p).unwrap(), forward(&params, &zeroed).unwrap());
}
