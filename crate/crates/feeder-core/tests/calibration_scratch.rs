//! Scratch diagnostics used while calibrating fixture and scenario
//! constants. Run with `cargo test --test calibration_scratch -- --ignored --nocapture`.

use feeder_core::dynamics::*;
use feeder_core::fixtures::*;
use feeder_core::powerflow::*;
use feeder_core::reduction::*;
use feeder_core::topology::FeederGraph;

#[test]
#[ignore]
fn fixture_and_reduction_diagnostics() {
    let spec = FixtureSpec::default();
    let (d, manifest) = generate_fixture_with_manifest(&spec).unwrap();
    println!(
        "nodes {} sections {} loaded {}",
        d.node_count,
        d.sections.len(),
        d.loaded_section_count()
    );
    println!(
        "head {:.4} MVA  minV {:.4}",
        manifest.achieved_head_mva, manifest.min_voltage_pu
    );
    let g = FeederGraph::build(&d).unwrap();
    println!(
        "trunk len {} total {:.3} ohm",
        g.trunk.len(),
        g.trunk_total_ohms()
    );
    let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
    println!(
        "sweep iters {} head {:.4} MVA minV {:.4}",
        sol.iterations,
        sol.head_power_mva.norm(),
        sol.min_voltage_pu()
    );
    let params = ReductionParams::default();
    let pockets = identify_load_pockets(&d, &g, &sol, &params).unwrap();
    for (i, p) in pockets.iter().enumerate() {
        println!(
            "pocket {i}: nodes {} load {:.3} MW anchor {} dist {:.3}",
            p.nodes.len(),
            p.total_load_mva.re,
            p.trunk_anchor,
            p.distance_from_root_ohms
        );
    }
    let model = reduce_dataset(&d, &g, &sol, &params).unwrap();
    for s in &model.segments {
        println!(
            "seg {}: z {:.4}+j{:.4} pu  frac {:.4}  drop {:.3}%",
            s.index, s.z_r_pu, s.z_x_pu, s.load_fraction, s.vdrop_pct
        );
    }
    println!("rated {:.4} MVA pf {:.4}", model.rated_mva, model.load_power_factor);

    // Reduction fidelity: detailed trunk-end voltage vs reduced bus 3.
    let trunk_end = *g.trunk.last().unwrap();
    let detailed = sol.node_voltage[trunk_end.index()].norm();
    let reduced = model.bus_voltages(1.02, 1.0).unwrap()[3].norm();
    println!("trunk-end detailed {detailed:.4} vs reduced bus3 {reduced:.4}");
}

#[test]
#[ignore]
fn scenario_band_diagnostics() {
    let spec = FixtureSpec::default();
    let d = generate_fixture(&spec).unwrap();
    let g = FeederGraph::build(&d).unwrap();
    let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
    let feeder_m = reduce_dataset(&d, &g, &sol, &ReductionParams::default()).unwrap();
    let feeder_o = builtin_feeder_o();
    let params = SimulationParams::default();

    for zf in [
        0.050, 0.055, 0.060, 0.065, 0.070, 0.075, 0.080, 0.085, 0.090, 0.100, 0.120,
    ] {
        let scenario = ScenarioSpec {
            label: format!("zf{zf}"),
            fault_impedance_pu: num_complex::Complex64::new(zf, 0.0),
            ..ScenarioSpec::moderate()
        };
        let ratios = fault_phase_ratios(&scenario).unwrap();
        print!("zf {zf:.3} |rA| {:.3}\n", ratios[0].norm());
        for (name, model) in [("O", &feeder_o), ("M", &feeder_m)] {
            match simulate_scenario(model, &scenario, &params) {
                Ok(ts) => {
                    // Early window: all devices still connected and running.
                    let early = ((scenario.fault_start_ms + 2.5) / scenario.dt_ms) as usize;
                    let late = ((scenario.fault_start_ms + scenario.fault_duration_ms - 2.0)
                        / scenario.dt_ms) as usize;
                    let se = &ts.steps[early];
                    let sl = &ts.steps[late];
                    let m = extract_metrics(&ts, scenario.fault_start_ms);
                    println!(
                        "  {name}: early=({:.3},{:.3},{:.3}) late=({:.3},{:.3},{:.3}) st={:?} ims={:?} vend={:.3}",
                        se.terminal_v_pu[0][0],
                        se.terminal_v_pu[1][0],
                        se.terminal_v_pu[2][0],
                        sl.terminal_v_pu[0][0],
                        sl.terminal_v_pu[1][0],
                        sl.terminal_v_pu[2][0],
                        m.st,
                        m.ims,
                        ts.final_step().head_v_pos_pu
                    );
                }
                Err(e) => println!("  {name}: ERR {e}"),
            }
        }
    }
}
