#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

// Fresh tape per repetition: mirrors real training memory behavior.
use pvfi_net::attention::MaskCache;
use pvfi_net::{swin_block, AttentionConfig};
use pvfi_tensor::Tape;
use std::time::Instant;

fn main() {
    let d = 32usize;
    let acfg = AttentionConfig { cube: [2, 4, 4], heads: 2, width: d, pos_groups: d };
    let masks = MaskCache::default();
    let x_data = vec![0.2f32; 6 * 64 * 64 * d];
    for what in ["fwd", "fwd+bwd"] {
        let t0 = Instant::now();
        let reps = 5;
        for _ in 0..reps {
            let tape = Tape::new();
            let x = tape.leaf(x_data.clone(), &[6, 64, 64, d], true).unwrap();
            let mk = |len: usize, shape: &[usize]| tape.leaf(vec![0.05; len], shape, true).unwrap();
            let sub = || pvfi_net::SubBlockWeights {
                ln1_g: mk(d, &[d]), ln1_b: mk(d, &[d]),
                attn: pvfi_net::AttentionWeights {
                    wq: mk(d*d, &[d,d]), wk: mk(d*d, &[d,d]), wv: mk(d*d, &[d,d]), wo: mk(d*d, &[d,d]),
                    scale: mk(1, &[1]),
                    pos1_w: mk(d*27, &[d,1,3,3,3]), pos1_b: mk(d, &[d]),
                    pos2_w: mk(d*27, &[d,1,3,3,3]), pos2_b: mk(d, &[d]),
                },
                ln2_g: mk(d, &[d]), ln2_b: mk(d, &[d]),
                ffn1_w: mk(d*2*d, &[d,2*d]), ffn1_b: mk(2*d, &[2*d]),
                ffn2_w: mk(2*d*d, &[2*d,d]), ffn2_b: mk(d, &[d]),
            };
            let w = pvfi_net::SwinBlockWeights { sub: [sub(), sub()] };
            let y = swin_block(&tape, &x, &acfg, &w, &masks).unwrap();
            if what == "fwd" {
                std::hint::black_box(y.data()[0]);
            } else {
                let l = y.square().unwrap().mean_all().unwrap();
                std::hint::black_box(l.backward().unwrap().get(&x).map(|g| g[0]));
            }
        }
        println!("swin block {what}: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    }
}
