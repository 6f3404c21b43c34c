// temporary conv shape profiling; removed before release
use std::time::Instant;

use dtl_core::autodiff::Tensor;
use dtl_core::rng;
use rand::Rng;

fn t(shape: &[usize], seed: u64, param: bool) -> Tensor {
    let mut r = rng::stream(seed, "bench");
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    if param {
        Tensor::param(shape, v)
    } else {
        Tensor::constant(shape, v)
    }
}

fn bench(name: &str, c_in: usize, c_out: usize, h: usize, w: usize, stride: usize, reps: usize) {
    let x = t(&[c_in, h, w], 1, true);
    let k = t(&[c_out, c_in, 3, 3], 2, true);
    let b = t(&[c_out], 3, true);
    let h_out = (h + 2 - 3) / stride + 1;
    let w_out = (w + 2 - 3) / stride + 1;
    let macs = (c_out * c_in * 9 * h_out * w_out) as f64;

    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = x.conv2d(&k, &b, stride, 1).unwrap();
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;

    let t1 = Instant::now();
    for _ in 0..reps {
        let y = x.conv2d(&k, &b, stride, 1).unwrap();
        y.sum().backward().unwrap();
        x.zero_grad();
        k.zero_grad();
        b.zero_grad();
    }
    let full = t1.elapsed().as_secs_f64() / reps as f64;
    println!(
        "{name}: fwd {:.3} ms ({:.2} G MAC/s), fwd+bwd {:.3} ms ({:.2} G MAC/s eff)",
        fwd * 1e3,
        macs / fwd / 1e9,
        full * 1e3,
        3.0 * macs / full / 1e9
    );
}

fn main() {
    bench("enc1   8->16 @64 s1", 8, 16, 64, 64, 1, 200);
    bench("enc2  16->32 @64 s2", 16, 32, 64, 64, 2, 200);
    bench("enc3  32->64 @32 s2", 32, 64, 32, 32, 2, 200);
    bench("pen   64->64 @16 s1", 64, 64, 16, 16, 1, 200);
    bench("res1  64->64 @16 s1", 64, 64, 16, 16, 1, 200);
    bench("up1   64->32 @32 s1", 64, 32, 32, 32, 1, 200);
    bench("res2  32->32 @32 s1", 32, 32, 32, 32, 1, 200);
    bench("up2   32->16 @64 s1", 32, 16, 64, 64, 1, 100);
    bench("head  16->1  @64 s1", 16, 1, 64, 64, 1, 200);
}
