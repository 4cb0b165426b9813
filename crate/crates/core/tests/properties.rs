//! Properties of built indexes and of search over them, on random libraries.

use std::collections::HashSet;
use std::sync::Arc;

use artirec::catalog::{Artifact, ArtifactLibrary};
use artirec::embed::{Embedder, HashedEmbedder};
use artirec::search::{recommend, SearchConfig};
use artirec::summarize::OfflineSummarizer;
use artirec::tree::{build_tree, BuildConfig, TreeIndex};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "parse", "json", "chart", "render", "http", "client", "retry", "hash", "password", "token", "stream", "file", "test",
    "mock", "date", "format", "color", "image", "resize", "queue", "email", "schema", "validate", "cache",
];

fn library() -> impl Strategy<Value = ArtifactLibrary> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(WORDS), 2..7), 1..40).prop_map(|docs| {
        let artifacts = docs
            .into_iter()
            .enumerate()
            .map(|(i, words)| Artifact::new(format!("a{i:02}"), format!("pkg{i}"), words.join(" ")))
            .collect();
        ArtifactLibrary::new(artifacts).unwrap()
    })
}

fn build(lib: &ArtifactLibrary, seed: u64) -> (TreeIndex, Arc<dyn Embedder>) {
    let emb: Arc<dyn Embedder> = Arc::new(HashedEmbedder::new(64, seed));
    let cfg = BuildConfig {
        seed,
        ..BuildConfig::default()
    };
    let t = build_tree(lib, emb.clone(), &OfflineSummarizer::new(emb.clone()), &cfg).unwrap();
    (t, emb)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn built_index_is_valid_and_stable(lib in library(), seed in 0u64..1000) {
        let (t, _) = build(&lib, seed);
        prop_assert!(t.validate().is_ok());
        prop_assert!(t.check_coverage(&lib).is_ok());
        prop_assert_eq!(t.leaves().count(), lib.len());
        let json = t.to_json();
        prop_assert_eq!(TreeIndex::from_json(&json).unwrap().to_json(), json);
    }

    #[test]
    fn search_returns_distinct_ranked_artifacts(
        lib in library(),
        seed in 0u64..1000,
        query in prop::collection::vec(prop::sample::select(WORDS), 1..5),
        k in 1usize..8,
    ) {
        let (t, emb) = build(&lib, seed);
        let out = recommend(&t, &query.join(" "), &SearchConfig::new(k), emb.as_ref(), None).unwrap();
        prop_assert_eq!(out.len(), k.min(lib.len()));
        let ids: HashSet<&str> = out.entries.iter().map(|e| e.artifact_id.as_str()).collect();
        prop_assert_eq!(ids.len(), out.len());
        prop_assert!(ids.iter().all(|id| lib.contains(id)));
        prop_assert!(out.entries.windows(2).all(|w| w[0].score >= w[1].score));
        prop_assert!(out.node_evaluations <= t.nodes().len());
    }

    #[test]
    fn wide_beam_search_is_exhaustive(lib in library(), seed in 0u64..1000, query in prop::sample::select(WORDS)) {
        // a beam as wide as the library keeps every leaf, so the result is
        // the flat cosine ranking
        let (t, emb) = build(&lib, seed);
        let n = lib.len();
        let cfg = SearchConfig::new(n).with_beam(n.max(t.nodes().len()));
        let out = recommend(&t, query, &cfg, emb.as_ref(), None).unwrap();
        let q = emb.embed_one(query).unwrap();
        let best = t
            .leaves()
            .map(|l| artirec::embed::cosine(&q, &l.embedding).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(out.len(), n);
        prop_assert!((out.entries[0].score - best).abs() < 1e-12);
    }
}
