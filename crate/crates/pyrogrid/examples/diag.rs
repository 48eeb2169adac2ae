use pyrogrid::environment::{load_grid_series, DatasetManifest};
use pyrogrid::numerics::{Tape, Tensor};
use pyrogrid::trainer::{System, TrainConfig};
use std::path::Path;

fn main() {
    let ckpt = std::env::args().nth(1).unwrap();
    let data_dir = std::env::args().nth(2).unwrap();
    let cfg_path = Path::new(&ckpt).parent().unwrap().join("config.resolved.json");
    let cfg: TrainConfig = serde_json::from_str(&std::fs::read_to_string(cfg_path).unwrap()).unwrap();
    let dir = Path::new(&data_dir);
    let manifest = DatasetManifest::load(&dir.join("manifest.json")).unwrap();
    let mut series = Vec::new();
    for a in &manifest.agents {
        series.push(load_grid_series(&dir.join(&a.path)).unwrap());
    }
    let mut sys = System::new(cfg.clone(), &series).unwrap();
    sys.restore_checkpoint(Path::new(&ckpt)).unwrap();
    for (i, agent) in sys.agents.iter().enumerate() {
        let gs = &sys.train_data[i];
        let mut h = Tensor::zeros(&[cfg.d_h]);
        let mut hs: Vec<Vec<f64>> = Vec::new();
        let mut z_mean = 0.0;
        let mut enc_var = 0.0;
        let mut pvar_sum = 0.0;
        for t in 0..60 {
            let mut tape = Tape::new();
            let hn = tape.constant(h.clone());
            let xn = tape.constant(gs.frame(t));
            let en = agent.sys.enc.forward(&mut tape, xn, false).unwrap();
            let ev = tape.value(en).clone();
            let em = ev.data().iter().sum::<f64>() / ev.numel() as f64;
            enc_var += ev.data().iter().map(|v| (v - em) * (v - em)).sum::<f64>() / ev.numel() as f64;
            let h2 = agent.sys.gru.forward(&mut tape, hn, en, false).unwrap();
            // recompute z gate by hand
            {
                let w = agent.sys.gru.w_z.value();
                let u = agent.sys.gru.u_z.value();
                let b = agent.sys.gru.b_z.value();
                let d = b.numel();
                let dx = ev.numel();
                for j in 0..d {
                    let mut zp = b.data()[j];
                    for kx in 0..dx { zp += w.data()[j * dx + kx] * ev.data()[kx]; }
                    for kh in 0..d { zp += u.data()[j * d + kh] * h.data()[kh]; }
                    z_mean += 1.0 / (1.0 + (-zp).exp()) / (d as f64 * 60.0);
                }
            }
            h = tape.value(h2).clone();
            hs.push(h.data().to_vec());
            let p = agent.predict_probs(&h);
            let pd = p.data();
            let m = pd.iter().sum::<f64>() / pd.len() as f64;
            pvar_sum += pd.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / pd.len() as f64;
        }
        let d = h.numel();
        let mut var_sum = 0.0;
        for j in 0..d {
            let col: Vec<f64> = hs.iter().map(|v| v[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            var_sum += col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
        }
        let last = hs.last().unwrap();
        println!(
            "agent {i}: h var {:.6}, |h| {:.3}, pvar {:.6}, z mean {:.3}, enc var {:.4}",
            var_sum / d as f64,
            last.iter().map(|v| v * v).sum::<f64>().sqrt(),
            pvar_sum / 60.0,
            z_mean,
            enc_var / 60.0
        );
    }
}
