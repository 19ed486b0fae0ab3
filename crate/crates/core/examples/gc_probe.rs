// quick probe: denoiser grad_check timing + error
use textsr::denoiser::{Denoiser, DenoiserConfig};
use textsr::gradcheck::{grad_check, perturb_params};
use textsr::tensor::Tensor;
use textsr::{rng, text};

fn main() {
    let cfg = DenoiserConfig {
        base_channels: 8,
        channel_multipliers: vec![1, 2],
        k_b: 1,
        k_m: 0,
        attention_resolutions: vec![],
        d_embed: 12,
        n_heads: 1,
        in_channels: 2,
        out_channels: 1,
        height: 8,
        width: 16,
    };
    let mut model = Denoiser::<f64>::build(cfg, &mut rng::root(1)).unwrap();
    println!("param_count = {}", model.param_count());
    perturb_params(&mut model, 0.02, 7);
    let mut r = rng::root(2);
    let x0 = Tensor::<f64>::randn(vec![1, 8, 16], &mut r);
    let lr = Tensor::<f64>::randn(vec![1, 8, 16], &mut r);
    let z = Tensor::<f64>::randn(vec![5, 12], &mut r);
    let eps = Tensor::<f64>::randn(vec![1, 8, 16], &mut r);
    let t = 5usize;
    let sched = textsr::diffusion::NoiseSchedule::linear(8, 0.01, 0.2).unwrap();
    let x_t = textsr::diffusion::forward_sample(&x0, t, &eps, &sched).unwrap();
    let x_cond = text::concat_condition(&x_t, &lr).unwrap();

    let start = std::time::Instant::now();
    let err = grad_check(
        &mut model,
        |tape, m| {
            let xv = tape.constant(x_cond.clone());
            let zv = tape.constant(z.clone());
            let eps_v = tape.constant(eps.clone());
            let pred = m.forward(tape, xv, Some(zv), t)?;
            tape.mse(eps_v, pred)
        },
        1e-5,
        32,
        11,
    )
    .unwrap();
    println!("grad_check err = {err:.3e}  elapsed = {:?}", start.elapsed());
}
