mod common;

use proptest::prelude::*;
use secsched::latency::{breakdown_parts, check_slo, cold_start_ms, comm_ms, compute_ms, LatencyParams};
use secsched::scenario::{link_rate, FunctionSpec, LinkModel, NodeSpec, Request};

fn arb_node(id: usize) -> impl Strategy<Value = NodeSpec> {
    (0.0..2000.0f64, 0.0..2000.0f64, 8u32..=32, 2.4..3.6f64, 10_240.0..30_720.0f64, 12.5..125.0f64).prop_map(
        move |(x, y, cores, freq, mem, bw)| NodeSpec {
            node_id: id,
            pos_x: x,
            pos_y: y,
            type_id: 0,
            cpu_cores: cores,
            cpu_freq_ghz: freq,
            mem_mb: mem,
            registry_bw_mbps: bw,
        },
    )
}

fn arb_function() -> impl Strategy<Value = FunctionSpec> {
    (20.0..200.0f64, 100.0..500.0f64).prop_map(|(image, init)| FunctionSpec {
        function_id: 0,
        image_mb: image,
        base_init_ms: init,
        ref_mem_mb: 512.0,
        default_cpu_cores: 1.0,
        default_mem_mb: 512.0,
        default_cpu_time_ms: 100.0,
        default_data_mb: 1.0,
    })
}

fn arb_request() -> impl Strategy<Value = Request> {
    (1.0..4.0f64, 64.0..2048.0f64, 10.0..500.0f64, 0.0..5.0f64, 200.0..400.0f64).prop_map(
        |(cores, mem, cpu, data, slo)| Request {
            request_id: 0,
            arrival_ms: 0.0,
            source_node: 0,
            function_id: 0,
            cpu_cores: cores,
            mem_mb: mem,
            cpu_time_ms: cpu,
            data_mb: data,
            slo_ms: slo,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn total_is_sum_of_parts(
        src in arb_node(0), dst in arb_node(1), f in arb_function(), r in arb_request(),
        new in any::<bool>(), scaling in any::<bool>(), wait in 0.0..1000.0f64,
    ) {
        let link = LinkModel::default();
        let b = breakdown_parts(&r, &f, &src, &dst, &link, LatencyParams { frequency_scaling: scaling }, new, wait);
        prop_assert_eq!(b.total_ms, b.cold_ms + b.comp_ms + b.comm_ms + b.wait_ms);
        prop_assert_eq!(b.cold_ms, cold_start_ms(&f, &dst, r.mem_mb, new));
        prop_assert_eq!(b.comp_ms, compute_ms(&r, &dst, scaling));
        prop_assert_eq!(b.comm_ms, comm_ms(&r, &link, &src, &dst));
        prop_assert!(b.comp_ms > 0.0 && b.comm_ms >= 0.0);
        if new { prop_assert!(b.cold_ms > 0.0) } else { prop_assert_eq!(b.cold_ms, 0.0) }
        prop_assert_eq!(check_slo(&b, &r), b.total_ms <= r.slo_ms);
    }

    #[test]
    fn local_placement_has_no_transfer(n in arb_node(0), r in arb_request()) {
        prop_assert_eq!(comm_ms(&r, &LinkModel::default(), &n, &n), 0.0);
    }

    #[test]
    fn link_rate_decreases_with_distance(a in arb_node(0), mut b in arb_node(1), extra in 0.0..2000.0f64) {
        let m = LinkModel::default();
        let near = link_rate(&m, &a, &b);
        b.pos_x += if b.pos_x >= a.pos_x { extra } else { -extra };
        prop_assert!(link_rate(&m, &a, &b) <= near);
    }

    #[test]
    fn more_cores_never_slower(n in arb_node(0), r in arb_request(), extra in 0.0..4.0f64) {
        let mut r2 = r.clone();
        r2.cpu_cores += extra;
        prop_assert!(compute_ms(&r2, &n, false) <= compute_ms(&r, &n, false));
    }
}
