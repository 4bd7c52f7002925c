use mdpcg::game::{nash_gap, player_costs, potential};
use mdpcg::mdp::flow_residual;
use mdpcg_testkit::{minimize_potential, oracle_instance};

#[test]
fn minimiser_is_feasible_and_stationary() {
    for seed in 0..5 {
        let inst = oracle_instance(seed);
        let m = minimize_potential(
            &inst,
            |x| potential(x, inst.model()).unwrap(),
            |x| player_costs(x, inst.model()).unwrap(),
            5000,
        );
        assert!(m.iterations < 5000);
        for i in 0..inst.players() {
            assert!(flow_residual(m.x.player(i), inst.kernel(i), inst.initial(i)).unwrap() < 1e-10);
        }
        assert!(nash_gap(&m.x, inst.model(), inst.kernels()).unwrap().gap < 1e-10);
    }
}
