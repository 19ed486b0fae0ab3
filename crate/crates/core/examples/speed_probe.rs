// Throughput probe for the acceptance-scale configuration.
use textsr::denoiser::{Denoiser, DenoiserConfig};
use textsr::diffusion::{denoise_loss, NoiseSchedule};
use textsr::optim::Adam;
use textsr::tensor::Tensor;
use textsr::{rng, tape::Tape};

fn main() {
    let cfg = DenoiserConfig {
        base_channels: 16,
        channel_multipliers: vec![1, 2],
        k_b: 2,
        k_m: 0,
        attention_resolutions: vec![],
        d_embed: 64,
        n_heads: 1,
        in_channels: 2,
        out_channels: 1,
        height: 16,
        width: 64,
    };
    let mut model = Denoiser::<f32>::build(cfg, &mut rng::root(1)).unwrap();
    println!("params = {}", model.param_count());
    let sched = NoiseSchedule::desk();
    let mut r = rng::root(2);
    let x0 = Tensor::<f32>::randn(vec![1, 16, 64], &mut r);
    let lr_img = Tensor::<f32>::randn(vec![1, 16, 64], &mut r);
    let z = Tensor::<f32>::randn(vec![26, 64], &mut r);

    // inference
    let x_cond = textsr::text::concat_condition(&x0, &lr_img).unwrap();
    let start = std::time::Instant::now();
    let n_inf = 50;
    for t in 1..=n_inf {
        let _ = model.infer(&x_cond, Some(&z), t).unwrap();
    }
    println!("infer: {:?}/call", start.elapsed() / n_inf as u32);

    // training step, batch 4
    let mut adam = Adam::new(1e-3);
    let start = std::time::Instant::now();
    let n_steps = 20;
    for _ in 0..n_steps {
        let mut tape = Tape::new();
        let mut total = None;
        for _ in 0..4 {
            let l = denoise_loss(&mut tape, &x0, Some(&lr_img), &sched, &mut r, |tape, ns| {
                let zv = tape.constant(z.clone());
                model.forward(tape, ns.x_cond, Some(zv), ns.t)
            })
            .unwrap();
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l).unwrap(),
            });
        }
        let loss = tape.scale(total.unwrap(), 0.25);
        let grads = tape.backward(loss).unwrap();
        adam.step(&mut model, &tape, &grads);
    }
    println!("train step (batch 4): {:?}/step", start.elapsed() / n_steps as u32);
}
