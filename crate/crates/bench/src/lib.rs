//! Synthetic inputs shared by the benchmarks.

use newsloc_core::kb::{InstanceOf, KbCache, KbClient, Qid, WikidataItem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn qid(n: usize) -> Qid {
    Qid::new(&format!("Q{n}")).expect("valid id")
}

/// `chains` administrative chains of `depth` non-city items each, ending in
/// a city. Returns the knowledge base and the bottom item of every chain.
pub fn chain_kb(chains: usize, depth: usize) -> (KbClient, Vec<WikidataItem>) {
    let cache = KbCache::in_memory();
    let mut bottoms = Vec::with_capacity(chains);
    for c in 0..chains {
        let base = 1_000 + c * (depth + 1);
        for level in 0..=depth {
            let mut it = WikidataItem::new(qid(base + level));
            it.labels.insert("en".into(), format!("Item {}", base + level));
            let label = if level == depth { "city" } else { "district" };
            it.p31.push(InstanceOf { qid: qid(515), label: label.into() });
            if level < depth {
                it.p131.push(qid(base + level + 1));
            }
            cache.insert_wikidata(&it).expect("in-memory insert");
            if level == 0 {
                bottoms.push(it);
            }
        }
    }
    (KbClient::cache_only(cache), bottoms)
}
