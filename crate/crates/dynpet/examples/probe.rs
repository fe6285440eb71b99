use dynpet::phantom::{simulate_study, standard_schedule, PhantomSpec};
use dynpet::preprocess::{extract_tacs, resample_frame_patch, resample_mask_patch};

fn main() {
    let spec = PhantomSpec { noise_level: 0.0, grid: [64,64,32], voxel_spacing_mm: [1.5625,1.5625,1.635], ..PhantomSpec::default() };
    let (study, masks, _) = simulate_study(&spec, &standard_schedule(), "p").unwrap();
    let tacs = extract_tacs(&study, &masks).unwrap();
    let peaks = [tacs.myo.iter().cloned().fold(0.0,f64::max), tacs.lvbp.iter().cloned().fold(0.0,f64::max), tacs.rvbp.iter().cloned().fold(0.0,f64::max)];
    let grid = spec.grid;
    let size = grid; let center = [grid[0] as i64/2, grid[1] as i64/2, grid[2] as i64/2];
    let mut worst: f64 = 0.0; let mut worst_rel_signal: f64 = 0.0;
    for frame_i in [2usize, 4, 8, 12, 20, 26] {
        let fr = study.frame(frame_i);
        for angle in [5.0f64, 20.0, 45.0, -30.0] {
            for (mi, (name, mask)) in [("myo", &masks.myo), ("lvbp", &masks.lvbp), ("rvbp", &masks.rvbp)].into_iter().enumerate() {
                let ft = resample_frame_patch(&fr, center, size, angle, [1,-2,0]);
                let mt = resample_mask_patch(&mask.view(), center, size, angle, [1,-2,0], [0,0,0]);
                let t0 = { let mut acc = 0.0; let mut n = 0.0;
                    for ((x,y,z), &b) in mask.indexed_iter() { if b==1 { acc += fr[[x,y,z]] as f64; n += 1.0; } }
                    acc / n };
                let (mut acc, mut n) = (0.0f64, 0.0f64);
                for (v, &b) in ft.iter().zip(mt.iter()) { if b==1 { acc += *v as f64; n += 1.0; } }
                let t1 = acc/n;
                let rel_peak = (t1-t0).abs()/peaks[mi];
                let rel_sig = (t1-t0).abs()/t0.abs().max(1e-12);
                if rel_peak > worst { worst = rel_peak; }
                if t0 > 0.2*peaks[mi] && rel_sig > worst_rel_signal { worst_rel_signal = rel_sig; println!("strong-signal worst so far: frame {frame_i} angle {angle} {name} rel {:.4}", rel_sig); }
            }
        }
    }
    println!("worst rel-to-peak: {worst:.4}; worst rel-to-signal (signal>20% peak): {worst_rel_signal:.4}");
}
