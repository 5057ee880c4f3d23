use proptest::prelude::*;
use zeus_core::embio::{read_embeddings, write_embeddings, EmbeddingFile, FileKind};

fn arb_set() -> impl Strategy<Value = EmbeddingFile> {
    (
        any::<bool>(),
        "[a-z0-9_./-]{0,24}",
        "[A-Za-z0-9 -]{0,24}",
        1usize..12,
        prop::collection::vec((0u64..5, prop::collection::vec(-1e30f32..1e30f32, 12)), 0..20),
    )
        .prop_map(|(text, model, slide, dim, recs)| {
            let kind = if text { FileKind::Text } else { FileKind::Patch };
            let mut f = EmbeddingFile::new(kind, model, slide, dim).unwrap();
            let mut id = 0u64;
            for (step, v) in recs {
                id += if text { step } else { step + 1 };
                f.push(id, &v[..dim]).unwrap();
            }
            f
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn roundtrip_is_bit_exact(set in arb_set()) {
        let mut buf = Vec::new();
        let n = write_embeddings(&set, &mut buf).unwrap();
        prop_assert_eq!(n as usize, buf.len());
        let back = read_embeddings(&buf[..]).unwrap();
        prop_assert_eq!(back.kind, set.kind);
        prop_assert_eq!(back.ids(), set.ids());
        for i in 0..set.len() {
            let a: Vec<u32> = set.vector(i).iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.vector(i).iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
        let mut again = Vec::new();
        write_embeddings(&back, &mut again).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn mutated_files_never_panic(set in arb_set(), flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6), cut in any::<prop::sample::Index>()) {
        let mut buf = Vec::new();
        write_embeddings(&set, &mut buf).unwrap();
        for (idx, byte) in flips {
            let i = idx.index(buf.len());
            buf[i] ^= byte | 1;
        }
        let cut = cut.index(buf.len() + 1);
        let _ = read_embeddings(&buf[..cut]);
    }
}
