//! Corpus BLEU-1..4 and CIDEr-D for a handful of candidates.

use image_transformer::metrics::{bleu, sentence_bleu, CiderD};

fn main() -> image_transformer::Result<()> {
    let refs = vec![
        vec!["a cat inside a box", "a small cat sits inside a box"],
        vec!["a dog beside a tree and a bench"],
        vec!["a cup beside a plate"],
    ];
    let cands = ["a cat inside a box", "a dog beside a bench", "a plate beside a cup"];
    for n in 1..=4 {
        println!("BLEU-{n} {:.4}", bleu(&cands, &refs, n)?);
    }
    let scorer = CiderD::new(&refs)?;
    let (mean, per) = scorer.corpus_score(&cands, &refs)?;
    println!("CIDEr-D {mean:.4}");
    for ((c, r), s) in cands.iter().zip(&refs).zip(per) {
        println!("  {c:<24} CIDEr-D {s:.4}  smoothed BLEU-4 {:.4}", sentence_bleu(c, r, 4)?);
    }
    Ok(())
}
