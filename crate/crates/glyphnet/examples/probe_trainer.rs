// scratch probe, not part of the deliverable
// `overfit`: criterion-8-shaped 32-image sanity check at 64x64
// `full`: end-to-end dry run at criterion-6 scale with per-epoch test metrics
use glyphnet::corpus::{load_domains, split_dataset};
use glyphnet::glyphs::{generate_corpus, generate_homoglyph, GenerationConfig, GlyphPool};
use glyphnet::metrics::evaluate_model;
use glyphnet::model::data::ImageSet;
use glyphnet::model::trainer::Trainer;
use glyphnet::model::{build_model, ModelConfig, TrainConfig};
use glyphnet::render::{render, render_manifest, RenderConfig};
use glyphnet::tensor::ops::{bce_logit_grad, bce_loss};
use glyphnet::tensor::rmsprop::RmsProp;
use glyphnet::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::Instant;

fn overfit() -> glyphnet::Result<()> {
    let (reals, _) = load_domains(Path::new("data/top_domains_10k.txt"))?;
    let pool = GlyphPool::default_pool();
    let gen_cfg = GenerationConfig::default();
    let rc = RenderConfig {
        width: 64,
        height: 64,
        font_px: 14,
        ..RenderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for real in reals.iter().take(16) {
        let fake = generate_homoglyph(&real.text, &gen_cfg, &pool, &mut rng)?;
        for (text, y) in [(&real.text, 1.0f32), (&fake.text, 0.0)] {
            let img = render(text, &rc);
            data.extend(img.pixels.iter().map(|&p| p as f32 / 255.0));
            labels.push(y);
        }
    }
    let x = Tensor::from_vec(&[32, 1, 64, 64], data)?;
    let cfg = ModelConfig {
        input_h: 64,
        input_w: 64,
        ..ModelConfig::default()
    };
    let mut model = build_model(&cfg, 8)?;
    let mut opt = RmsProp::new(1e-3);
    let t0 = Instant::now();
    for step in 1..=200 {
        let (probs, cache) = model.forward(&x)?;
        let (loss, _) = bce_loss(&probs, &labels)?;
        if step % 10 == 1 || loss < 0.05 {
            println!("step {step} loss {loss:.4} ({:?})", t0.elapsed());
        }
        if loss < 0.05 {
            println!("overfit reached at step {step}");
            return Ok(());
        }
        let grad = bce_logit_grad(&probs, &labels)?;
        let (grads, _) = model.backward_from_logits(&cache, &grad)?;
        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        let mut params = model.params_mut();
        opt.step(&mut params, &grad_refs)?;
    }
    println!("overfit NOT reached in 200 steps");
    Ok(())
}

fn full() -> glyphnet::Result<()> {
    let t0 = Instant::now();
    let (reals, skipped) = load_domains(Path::new("data/top_domains_10k.txt"))?;
    println!(
        "loaded {} reals ({skipped} skipped) {:?}",
        reals.len(),
        t0.elapsed()
    );
    let pool = GlyphPool::default_pool();
    let (fakes, gen_skipped) = generate_corpus(&reals, &pool, &GenerationConfig::default(), 77)?;
    println!(
        "generated {} fakes ({gen_skipped} skipped) {:?}",
        fakes.len(),
        t0.elapsed()
    );
    let mut all = reals;
    all.extend(fakes);
    let manifest = split_dataset(all, (0.7, 0.2, 0.1), 77)?;
    let out = Path::new("/tmp/probe_c6");
    let stats = render_manifest(&manifest, &RenderConfig::default(), out)?;
    println!(
        "rendered {} images ({} missing glyphs) {:?}",
        stats.rendered,
        stats.missing_glyphs,
        t0.elapsed()
    );

    let train = ImageSet::open(&out.join("train"))?;
    let val = ImageSet::open(&out.join("val"))?;
    let test = ImageSet::open(&out.join("test"))?;
    println!(
        "train {} val {} test {}",
        train.len(),
        val.len(),
        test.len()
    );
    let model = build_model(&ModelConfig::default(), 77)?;
    let mut trainer = Trainer::new(model, train, val, TrainConfig::default())?;
    let train_t = Instant::now();
    for _ in 0..6 {
        let row = trainer.run_epoch()?;
        let report = evaluate_model(trainer.model(), &test, 256)?;
        println!(
            "epoch {} train_loss {:.4} acc {:.4} | val_loss {:.4} acc {:.4} | test auc {:.4} acc {:.4} | {:.1} min",
            row.epoch, row.train_loss, row.train_acc, row.val_loss, row.val_acc,
            report.auc, report.accuracy,
            train_t.elapsed().as_secs_f64() / 60.0
        );
        if trainer.should_stop() {
            break;
        }
    }
    Ok(())
}

fn main() -> glyphnet::Result<()> {
    match std::env::args().nth(1).as_deref() {
        Some("overfit") => overfit(),
        _ => full(),
    }
}
