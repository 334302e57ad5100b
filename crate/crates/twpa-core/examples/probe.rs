use twpa_core::transient::*;
use twpa_core::cme::DriveSpec;
use twpa_core::snail::*;
use std::time::Instant;

fn main() {
    let spec = DeviceSpec::reference();
    let real = sample_device(&spec, &DisorderSpec::new(0.0, 0).unwrap());
    let drive = DriveSpec::reference(-76.0);
    let set = DriveSet::from_drive_spec(&drive, 50.0, true, true).unwrap();
    let mut config = TransientConfig::default();
    config.t_window = 10e-9;
    config.settle_transits = 0.5;
    let mut sys = assemble_system(&real, &set, &config, std::f64::consts::PI).unwrap();
    let t0 = Instant::now();
    let _ = run_transient(&mut sys).unwrap();
    let el = t0.elapsed();
    let st = sys.stats();
    println!("{:.1} us/step, iters/step {:.3}, factors/step {:.4}", el.as_secs_f64()*1e6/st.steps as f64, st.newton_iters as f64/st.steps as f64, st.factorizations as f64 / st.steps as f64);
}
