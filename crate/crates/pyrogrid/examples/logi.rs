use pyrogrid::environment::{load_grid_series, split, DatasetManifest};
use pyrogrid::trainer::LogisticBaseline;
use std::path::Path;

fn main() {
    let dir = std::env::args().nth(1).unwrap();
    let dir = Path::new(&dir);
    let manifest = DatasetManifest::load(&dir.join("manifest.json")).unwrap();
    let mut sum = 0.0;
    let mut n = 0;
    for (i, f) in manifest.agents.iter().enumerate() {
        let gs = load_grid_series(&dir.join(&f.path)).unwrap();
        let t = gs.dims().0;
        let c = gs.dims().1;
        let (train, val) = split(&gs, manifest.train_weeks, t - manifest.train_weeks).unwrap();
        let mut m = LogisticBaseline::new(c, &[1, 2, 3, 4]);
        m.fit(&train, 150, 0.05).unwrap();
        let table = m.evaluate(&val, i, "logistic").unwrap();
        for r in &table.rows {
            println!("agent {} horizon {} bce {:.4} auroc {:.1}%", r.agent, r.horizon, r.bce, r.auroc * 100.0);
            sum += r.bce;
            n += 1;
        }
    }
    println!("logistic avg bce {:.4}", sum / n as f64);
}
