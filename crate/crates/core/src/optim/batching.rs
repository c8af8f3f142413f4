/// Groups of example indices, one group per microbatch.
pub type BatchPlan = Vec<Vec<usize>>;

/// Buckets examples by length and packs each bucket greedily so that
/// `examples * (longest source + longest target)` stays within `budget`.
/// An example over budget on its own still gets a batch of one.
pub fn plan_batches(lengths: &[(usize, usize)], budget: usize) -> BatchPlan {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i].0 + lengths[i].1, i));
    let mut plan = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let (mut max_src, mut max_tgt) = (0, 0);
    for i in order {
        let (s, t) = lengths[i];
        let (ns, nt) = (max_src.max(s), max_tgt.max(t));
        if !group.is_empty() && (group.len() + 1) * (ns + nt) > budget {
            plan.push(std::mem::take(&mut group));
            max_src = s;
            max_tgt = t;
        } else {
            max_src = ns;
            max_tgt = nt;
        }
        group.push(i);
    }
    if !group.is_empty() {
        plan.push(group);
    }
    plan
}
