// Calibration run for the desk-scale benchmark: recognizer quality, then
// DDPM* (k_b=0) vs TCDM* (GT text) super-resolution on degraded renders.
use std::time::Instant;
use textsr::diffusion::NoiseSchedule;
use textsr::metrics;
use textsr::pipeline::*;
use textsr::recognizer::*;
use textsr::rng;
use textsr::text::Charset;

type F = f32;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let rec_iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let sr_iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let base: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let n_train: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(256);

    let canvas = Canvas::desk();
    let dict = WordList::builtin();
    let t0 = Instant::now();

    // datasets
    let train: Vec<PairedSample<F>> = make_base_dataset(n_train, &canvas, 13, &dict, 101).unwrap();
    let bench: Vec<PairedSample<F>> = make_base_dataset(64, &canvas, 13, &dict, 202).unwrap();
    // recognizer training set: clean renders (hr side) of more words
    let rec_data: Vec<(textsr::Tensor<F>, String)> = make_base_dataset(600, &canvas, 13, &dict, 303)
        .unwrap()
        .into_iter()
        .map(|p| (p.hr, p.label))
        .collect();
    let rec_holdout: Vec<(textsr::Tensor<F>, String)> = make_base_dataset(200, &canvas, 13, &dict, 404)
        .unwrap()
        .into_iter()
        .map(|p| (p.hr, p.label))
        .collect();
    println!("[{:.0?}] datasets ready", t0.elapsed());

    // recognizer
    let mut rec = Recognizer::<F>::build(RecognizerConfig::desk(), Charset::recognition(), &mut rng::root(1)).unwrap();
    let opts = RecognizerTrainOptions { iterations: rec_iters, batch_size: 8, lr: 2e-3, seed: 11 };
    train_recognizer(&mut rec, &rec_data, &opts, |s, l| {
        if s % 300 == 0 { println!("[{:.0?}] rec step={s} loss={l:.4}", t0.elapsed()); }
    }).unwrap();
    let acc_train = exact_match_rate(&rec, &rec_data).unwrap();
    let acc_hold = exact_match_rate(&rec, &rec_holdout).unwrap();
    let bench_hr: Vec<(textsr::Tensor<F>, String)> = bench.iter().map(|p| (p.hr.clone(), p.label.clone())).collect();
    let bench_lr: Vec<(textsr::Tensor<F>, String)> = bench.iter().map(|p| (p.lr.clone(), p.label.clone())).collect();
    let acc_bench_hr = exact_match_rate(&rec, &bench_hr).unwrap();
    let acc_bench_lr = exact_match_rate(&rec, &bench_lr).unwrap();
    println!(
        "[{:.0?}] recognizer: train={acc_train:.3} holdout={acc_hold:.3} bench_hr={acc_bench_hr:.3} bench_lr(bicubic)={acc_bench_lr:.3}",
        t0.elapsed()
    );

    // SR variants
    let sched = NoiseSchedule::desk();
    let mk_cfg = |k_b: usize| RoleModelConfig {
        role: Role::SuperResolver,
        text_mode: TextMode::Gt,
        canvas,
        max_len: 26,
        base_channels: base,
        channel_multipliers: vec![1, 2],
        k_b,
        k_m: 0,
        attention_resolutions: vec![],
        d_embed: 64,
        n_heads: 1,
        encoder_blocks: 2,
        dropout: 0.1,
        degrader_text: true,
    };
    for (name, k_b) in [("DDPM*", 0usize), ("TCDM*", 2)] {
        let mut model = RoleModel::<F>::build(mk_cfg(k_b), Charset::ground_truth(), None, &mut rng::root(21)).unwrap();
        let opts = RoleTrainOptions {
            iterations: sr_iters,
            batch_size: 4,
            lr: 1e-3,
            seed: 31,
            lambda: 1.0,
            loss_mode: LossMode::Kl,
            ema_decay: Some(0.999),
        };
        let tt = Instant::now();
        train_role(&mut model, &sched, &train, &opts, |s, l| {
            if s % 300 == 0 { println!("[{:.0?}] {name} step={s} loss={l:.4}", t0.elapsed()); }
        }).unwrap();
        let train_time = tt.elapsed();
        // evaluate on bench
        let so = SampleOptions { stride: 10, variance_mode: textsr::diffusion::VarianceMode::Posterior };
        let tt = Instant::now();
        let mut samples = Vec::new();
        for (i, p) in bench.iter().enumerate() {
            let sr = run_role(&model, &sched, &p.label, Some(&p.lr), &so, &mut rng::stream(41, i as u64)).unwrap();
            samples.push((sr, p.hr.clone(), p.label.clone()));
        }
        let report = metrics::evaluate(&rec, &samples).unwrap();
        // bicubic baseline fidelity
        let base_samples: Vec<_> = bench.iter().map(|p| (p.lr.clone(), p.hr.clone(), p.label.clone())).collect();
        let base_report = metrics::evaluate(&rec, &base_samples).unwrap();
        println!(
            "[{:.0?}] {name}: params={} train={train_time:.0?} eval={:.0?} acc={:.3} (bicubic {:.3}) psnr={:.2} (bicubic {:.2}) ssim={:.4} (bicubic {:.4})",
            t0.elapsed(), model.param_count(), tt.elapsed(),
            report.accuracy, base_report.accuracy,
            report.psnr_db, base_report.psnr_db,
            report.ssim, base_report.ssim,
        );
    }
}
