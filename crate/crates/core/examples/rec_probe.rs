// Recognizer training diagnostics: vary lr and dataset size.
use textsr::pipeline::*;
use textsr::recognizer::*;
use textsr::rng;
use textsr::text::Charset;
use textsr::Tensor;

type F = f32;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let max_len: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(13);

    let canvas = Canvas::desk();
    let dict = WordList::builtin();
    let data: Vec<(Tensor<F>, String)> = make_base_dataset(n, &canvas, max_len, &dict, 303)
        .unwrap().into_iter().map(|p| (p.hr, p.label)).collect();
    let mut rec = Recognizer::<F>::build(RecognizerConfig::desk(), Charset::recognition(), &mut rng::root(1)).unwrap();
    let opts = RecognizerTrainOptions { iterations: iters, batch_size: 8, lr, seed: 11 };
    let t0 = std::time::Instant::now();
    let mut recent = Vec::new();
    train_recognizer(&mut rec, &data, &opts, |s, l| {
        recent.push(l);
        if recent.len() > 50 { recent.remove(0); }
        if s % 250 == 0 {
            let avg: f64 = recent.iter().sum::<f64>() / recent.len() as f64;
            println!("[{:.0?}] step={s} loss(avg50)={avg:.3}", t0.elapsed());
        }
    }).unwrap();
    let acc = exact_match_rate(&rec, &data).unwrap();
    let holdout: Vec<(Tensor<F>, String)> = make_base_dataset(200, &canvas, max_len, &dict, 404)
        .unwrap().into_iter().map(|p| (p.hr, p.label)).collect();
    let hacc = exact_match_rate(&rec, &holdout).unwrap();
    println!("final train acc={acc:.3} holdout acc={hacc:.3} over {n} samples, lr={lr}, {iters} iters");
}
