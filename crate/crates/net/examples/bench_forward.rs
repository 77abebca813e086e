#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
use pvfi_net::{Model, ModelConfig};
use pvfi_tensor::Tape;
use std::time::Instant;

fn main() {
    for (scales, heads) in [(1usize, vec![2usize]), (2, vec![2, 4]), (3, vec![2, 4, 8])] {
        let cfg = ModelConfig {
            scales,
            heads,
            ..ModelConfig::desk_default()
        };
        let model = Model::new(cfg, 1).unwrap();
        let frames: Vec<f32> = (0..6 * 4 * 64 * 64).map(|i| ((i * 37) % 101) as f32 / 101.0).collect();
        // forward only
        let t0 = Instant::now();
        let reps = 3;
        for _ in 0..reps {
            let tape = Tape::new();
            let x = tape.leaf(frames.clone(), &[6, 4, 64, 64], false).unwrap();
            let bound = model.bind_with_grad(&tape, false).unwrap();
            let y = model.forward_with(&tape, &bound, &x).unwrap();
            std::hint::black_box(y.data()[0]);
        }
        let fwd = t0.elapsed().as_secs_f64() / reps as f64;
        // forward + backward
        let t0 = Instant::now();
        for _ in 0..reps {
            let tape = Tape::new();
            let x = tape.leaf(frames.clone(), &[6, 4, 64, 64], false).unwrap();
            let bound = model.bind(&tape).unwrap();
            let y = model.forward_with(&tape, &bound, &x).unwrap();
            let loss = y.square().unwrap().mean_all().unwrap();
            let grads = loss.backward().unwrap();
            std::hint::black_box(grads.get(&bound.leaves[0]));
        }
        let fb = t0.elapsed().as_secs_f64() / reps as f64;
        println!("L={scales}: forward {fwd:.3}s  forward+backward {fb:.3}s   (20 epochs x 500 samples => {:.1} min)", fb * 10000.0 / 60.0);
    }
}
