use combphase::calibration::{self, ScaledObjective};
use combphase::control::{self, ControllerState, SoiBounds};
use combphase::engine::{self, EngineGeometry, IvcState, MixtureState};
use combphase::lattice::{halton_lattice, ConditionBox};
use combphase::model::{self, ModelParams, OperatingCondition, PressureTrace, WiebeParams};
use combphase::plant::{Plant, PlantConfig, Ramp, TransientProfile};
use proptest::prelude::*;

fn geom() -> EngineGeometry {
    EngineGeometry::default()
}

prop_compose! {
    fn condition()(
        n in 1200.0..1500.0f64,
        t in 372.6..413.9f64,
        p in 2.85..4.38f64,
        phi in 0.5..0.9f64,
        egr in 0.0..0.5f64,
        soi in -5.0..5.0f64,
        x_r in 0.02..0.06f64,
    ) -> OperatingCondition {
        OperatingCondition { n, egr, phi, ivc: IvcState::at_ivc(&geom(), p, t), x_r, soi }
    }
}

prop_compose! {
    fn engine_geometry()(
        bore in 0.08..0.16f64,
        stroke in 0.08..0.2f64,
        rod_ratio in 1.4..2.0f64,
        cr in 12.0..22.0f64,
    ) -> EngineGeometry {
        EngineGeometry { bore, stroke, rod_length: rod_ratio * stroke, compression_ratio: cr, ..EngineGeometry::default() }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bdc_volume_is_cr_times_tdc(g in engine_geometry()) {
        let v0 = engine::cylinder_volume(0.0, &g);
        let v180 = engine::cylinder_volume(180.0, &g);
        prop_assert!((v0 * g.compression_ratio - v180).abs() <= 1e-12 * v180);
    }

    #[test]
    fn polytropic_is_identity_at_ivc(p in 0.5..6.0f64, t in 250.0..500.0f64, kc in 1.05..1.39f64) {
        let g = geom();
        let ivc = IvcState::at_ivc(&g, p, t);
        let (pp, tt) = engine::polytropic_state(g.ivc_angle, &ivc, kc, &g).unwrap();
        prop_assert!((pp - p).abs() <= 1e-12 * p);
        prop_assert!((tt - t).abs() <= 1e-12 * t);
    }

    #[test]
    fn pv_kappa_is_constant(p in 0.5..6.0f64, t in 250.0..500.0f64, kc in 1.05..1.39f64, theta in -148.5..137.0f64) {
        let g = geom();
        let ivc = IvcState::at_ivc(&g, p, t);
        let (pp, _) = engine::polytropic_state(theta, &ivc, kc, &g).unwrap();
        let lhs = pp * engine::cylinder_volume(theta, &g).powf(kc);
        let rhs = p * ivc.v_ivc.powf(kc);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs);
    }

    #[test]
    fn equivalence_ratio_is_scale_free(fuel in 1e-6..1e-3f64, air in 1e-4..1e-1f64, s in 0.01..100.0f64) {
        let a = MixtureState::new(fuel, air, 0.0, 0.0).unwrap();
        let b = MixtureState::new(s * fuel, s * air, 0.0, 0.0).unwrap();
        let (pa, pb) = (engine::equivalence_ratio(&a).unwrap(), engine::equivalence_ratio(&b).unwrap());
        prop_assert!((pa - pb).abs() <= 1e-12 * pa);
    }

    #[test]
    fn quadrature_converges(c in condition()) {
        let p = ModelParams::REFERENCE;
        let coarse = model::soc_full_integral(&c, &p, &geom(), 0.1).unwrap();
        let fine = model::soc_full_integral(&c, &p, &geom(), 0.01).unwrap();
        prop_assert!((coarse - fine).abs() <= 0.05);
    }

    #[test]
    fn frozen_integral_matches_closed_form(c in condition(), step in 0.01..0.5f64) {
        let p = ModelParams::REFERENCE;
        let g = geom();
        let frozen = model::soc_integral(&c, &p, &g, step, PressureTrace::FrozenAtSoi).unwrap();
        let (ps, ts) = model::soi_state(&c, &p, &g).unwrap();
        let closed = model::soc_simplified(&c, ps, ts, &p).unwrap();
        prop_assert!((frozen - closed).abs() <= step);
    }

    #[test]
    fn wiebe_is_monotone_and_half_at_ca50(
        a in 1.0..10.0f64, b in 1.0..4.0f64, c9 in 2.0..8.0f64,
        soc in -10.0..20.0f64, xd in 0.0..0.6f64, phi in 0.2..1.0f64,
        d1 in 0.0..60.0f64, d2 in 0.0..60.0f64,
    ) {
        let p = ModelParams { c9, ..ModelParams::REFERENCE };
        let w = WiebeParams::consistent(a, b, c9);
        let bd = model::burn_duration(xd, phi, &p, &w);
        let (lo, hi) = (d1.min(d2), d1.max(d2));
        prop_assert!(model::wiebe_mfb(soc + lo, soc, bd, &w).unwrap() <= model::wiebe_mfb(soc + hi, soc, bd, &w).unwrap());
        let ca50 = soc + model::ca50_offset(xd, phi, &p);
        prop_assert!((model::wiebe_mfb(ca50, soc, bd, &w).unwrap() - 0.5).abs() <= 1e-12);
        let root = model::ca50_by_wiebe_root(soc, bd, &w).unwrap();
        prop_assert!((root - ca50).abs() <= 1e-9);
    }

    #[test]
    fn burn_offset_ignores_speed_and_state(c in condition(), n2 in 800.0..2500.0f64, p2 in 1.0..6.0f64, t2 in 280.0..450.0f64) {
        let p = ModelParams::REFERENCE;
        let g = geom();
        let offset = |c: &OperatingCondition, ps: f64, ts: f64| {
            model::ca50_predict(c, ps, ts, &p).unwrap() - model::soc_simplified(c, ps, ts, &p).unwrap()
        };
        let (ps, ts) = model::soi_state(&c, &p, &g).unwrap();
        let other = OperatingCondition { n: n2, ..c };
        prop_assert!((offset(&c, ps, ts) - offset(&other, p2 * 20.0, t2 * 1.5)).abs() <= 1e-12);
    }

    #[test]
    fn feedforward_inverts_prediction(c in condition(), target in 4.0..14.0f64) {
        let p = ModelParams::REFERENCE;
        let g = geom();
        let cmd = control::ff_soi(target, &c, &p, &g, control::X_R_BAR, &SoiBounds::default()).unwrap();
        prop_assume!(!cmd.saturated);
        let (p0, t0) = model::tdc_state(&c.ivc, &p, &g);
        let cond = OperatingCondition { soi: cmd.soi, x_r: control::X_R_BAR, ..c };
        prop_assert!((model::ca50_predict(&cond, p0, t0, &p).unwrap() - target).abs() <= 1e-9);
    }

    #[test]
    fn observer_cancels_error_in_one_step(
        x1 in 1e-4..1e-2f64, x2 in 3.0..7.0f64, r1 in 0.5..1.5f64, r2 in 0.5..1.5f64,
        n in 1000.0..2000.0f64, phi in 0.3..1.0f64, target in 4.0..14.0f64,
    ) {
        // Plant obeys y = u + α·x1 + β·x2 with the same α, β as the observer.
        let (alpha, beta) = control::alpha_beta(n, phi, &ModelParams::REFERENCE);
        let plant = |u: f64| u + alpha * x1 + beta * x2;
        let bounds = SoiBounds { min: -1e9, max: 1e9 };
        let mut s = ControllerState::new(r1 * x1, r2 * x2, alpha, beta);
        let y0 = plant(control::adaptive_soi(&s, target, &bounds).soi);
        let v0 = control::lyapunov_value(target, y0);
        s = control::observer_update(&s, y0, target);
        let y1 = plant(control::adaptive_soi(&s, target, &bounds).soi);
        let v1 = control::lyapunov_value(target, y1);
        prop_assert!(((v1 - v0) + (target - y0).powi(2)).abs() <= 1e-9 * v0.max(1.0));
        prop_assert!(v1 <= 1e-18);
    }

    #[test]
    fn observer_loop_is_gain_scale_invariant(
        x1 in 1e-4..1e-2f64, x2 in 3.0..7.0f64, s in 0.01..100.0f64,
        ys in proptest::collection::vec(4.0..12.0f64, 1..8), target in 4.0..14.0f64,
    ) {
        let (alpha, beta) = control::alpha_beta(1200.0, 0.7, &ModelParams::REFERENCE);
        let bounds = SoiBounds { min: -1e9, max: 1e9 };
        let mut a = ControllerState::new(x1, x2, alpha, beta);
        let mut b = ControllerState::new(x1 / s, x2 / s, s * alpha, s * beta);
        for y in ys {
            let ua = control::adaptive_soi(&a, target, &bounds).soi;
            let ub = control::adaptive_soi(&b, target, &bounds).soi;
            prop_assert!((ua - ub).abs() <= 1e-9 * ua.abs().max(1.0));
            a = control::observer_update(&a, y, target);
            b = control::observer_update(&b, y, target);
        }
    }

    #[test]
    fn quantized_soi_is_nearest_multiple(x in -20.0..20.0f64) {
        let c = PlantConfig::default();
        let q = c.quantize(x);
        prop_assert!((q - x).abs() <= 0.05 + 1e-12);
        prop_assert!(((q / 0.1).round() * 0.1 - q).abs() <= 1e-12);
    }

    #[test]
    fn param_file_round_trips(
        free in proptest::array::uniform6(-1e4..1e4f64),
        c2 in 1e-9..1e-3f64, c9 in 0.1..20.0f64, kc in 1.01..1.39f64,
    ) {
        let v = [free[0].abs() * 1e-9, c2, free[1], free[2], free[3], free[4], free[5], c9, kc];
        let p = ModelParams::from_array(v);
        let back = ModelParams::from_param_str(&p.to_param_string(), "mem").unwrap();
        prop_assert_eq!(back.to_array(), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plant_ca50_is_monotone_in_soi(
        n in 1200.0..1500.0f64, t in 290.0..340.0f64, phi in 0.5..0.9f64, egr in 0.0..0.5f64,
        s1 in -5.0..5.0f64, s2 in -5.0..5.0f64,
    ) {
        let cfg = PlantConfig { fuel_delay_cycles: 0, soi_quantum: None, ..PlantConfig::default() };
        let profile = TransientProfile::flat(n, egr, phi, 2.0, t, 8.0);
        let fire = |soi: f64| Plant::new(cfg.clone(), profile).unwrap().step_cycle(soi).ca50.unwrap();
        let (lo, hi) = (s1.min(s2), s1.max(s2));
        prop_assert!(fire(lo) <= fire(hi));
    }

    #[test]
    fn cycle_period_follows_realized_speed(n0 in 900.0..1500.0f64, n1 in 900.0..2000.0f64, start in 0.2..1.0f64) {
        let profile = TransientProfile { n: Ramp::new(n0, n1, start, 0.3), ..TransientProfile::flat(n0, 0.25, 0.7, 2.0, 300.0, 8.0) };
        let mut plant = Plant::new(PlantConfig::default(), profile).unwrap();
        let recs: Vec<_> = (0..20).map(|_| plant.step_cycle(0.0)).collect();
        for w in recs.windows(2) {
            let expected = 120.0 / profile.n.eval(w[0].time_s);
            prop_assert!((w[1].time_s - w[0].time_s - expected).abs() <= 1e-12);
            prop_assert_eq!(w[0].cond.n, profile.n.eval(w[0].time_s));
        }
    }

    #[test]
    fn gradient_step_descends(seed_scale in proptest::array::uniform9(0.9..1.1f64)) {
        let g = geom();
        let conds = halton_lattice(&ConditionBox::SIMULATION, 80, &g);
        let data = calibration::self_consistent_dataset(&conds, &ModelParams::REFERENCE, &g, false).unwrap();
        let r = ModelParams::REFERENCE.to_array();
        let mut v = r;
        for i in 0..8 { v[i] *= seed_scale[i]; }
        v[8] = 1.0 + (r[8] - 1.0) * seed_scale[8];
        let start = ModelParams::from_array(v);
        let obj = ScaledObjective::new(&data, &g, &start, 0.5).unwrap();
        let z = obj.scaled(&start);
        let j0 = obj.value(&z);
        prop_assume!(j0 > 1e-12);
        let grad = obj.gradient(&z);
        let g2: f64 = grad.iter().map(|x| x * x).sum();
        let h = 1e-6 / g2.sqrt().max(1.0);
        let next: [f64; 9] = std::array::from_fn(|i| z[i] - h * grad[i]);
        let rmse = |p: &ModelParams| calibration::rmse(&data, p, &g).unwrap();
        prop_assert!(rmse(&obj.params(&next)) < rmse(&start));
    }

    #[test]
    fn dataset_csv_round_trips(conds in proptest::collection::vec(condition(), 1..20), with_soc in any::<bool>()) {
        let g = geom();
        let data = calibration::self_consistent_dataset(&conds, &ModelParams::REFERENCE, &g, with_soc).unwrap();
        let mut buf = Vec::new();
        calibration::write_dataset(&mut buf, &data).unwrap();
        prop_assert_eq!(calibration::read_dataset(buf.as_slice(), "mem", &g).unwrap(), data);
    }
}
