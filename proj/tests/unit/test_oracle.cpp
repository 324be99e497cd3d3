#include <gtest/gtest.h>

#include "dmpc/oracle.hpp"

using namespace dmpc;

namespace {

SubsystemModel scalar_model(double a, double b, double q, double r, double ulim,
                            double drift = 0.0) {
    SubsystemModel m;
    m.A = Mat::Constant(1, 1, a);
    m.B = Mat::Constant(1, 1, b);
    m.w = Vec::Constant(1, drift);
    m.Q = Mat::Constant(1, 1, q);
    m.R = Mat::Constant(1, 1, r);
    m.u_min = Vec::Constant(1, -ulim);
    m.u_max = Vec::Constant(1, ulim);
    return m;
}

Scenario pair_scenario(double budget, double delta) {
    Scenario sc;
    sc.graph = CouplingGraph(2, {{0, 1}});
    sc.models.push_back(scalar_model(0.5, 1.0, 1.0, 1.0, 2.0));
    sc.models.push_back(scalar_model(0.5, 1.0, 1.0, 1.0, 2.0));

    CoupledConstraint c;
    c.id = 0;
    for (int i = 0; i < 2; ++i) {
        ConstraintTerm t;
        t.agent = i;
        t.a = Vec::Ones(1);
        c.terms.push_back(t);
    }
    c.budget = budget;
    sc.constraints.push_back(c);
    sc.horizon = 3;
    sc.alpha = 0.5;
    sc.delta = delta;
    sc.q_max = 5;
    return sc;
}

// Both agents drift upward against a shared ceiling, so the later coupled
// stages bind and the agents have to negotiate who backs off.
Scenario drifting_pair() {
    Scenario sc;
    sc.graph = CouplingGraph(2, {{0, 1}});
    sc.models.push_back(scalar_model(1.0, 1.0, 1.0, 5.0, 2.0, 0.3));
    sc.models.push_back(scalar_model(1.0, 1.0, 1.0, 5.0, 2.0, 0.3));

    CoupledConstraint c;
    c.id = 0;
    for (int i = 0; i < 2; ++i) {
        ConstraintTerm t;
        t.agent = i;
        t.a = Vec::Ones(1);
        c.terms.push_back(t);
    }
    c.budget = 0.1;
    sc.constraints.push_back(c);
    sc.horizon = 3;
    sc.alpha = 0.5;
    sc.delta = 0.5;
    sc.q_max = 5;
    return sc;
}

std::map<int, Vec> pair_states(double x0, double x1) {
    return {{0, Vec::Constant(1, x0)}, {1, Vec::Constant(1, x1)}};
}

}  // namespace

TEST(StackedLayout, OffsetsPartitionTheVector) {
    auto sc = pair_scenario(1.0, 0.5);
    auto layout = StackedLayout::build(sc);

    ASSERT_EQ(layout.agent_count(), 2);
    // Scalar agents, N = 3: (1+1)*4 + 1 = 9 variables each.
    EXPECT_EQ(layout.base[0], 0);
    EXPECT_EQ(layout.base[1], 9);
    EXPECT_EQ(layout.size(), 18);
    EXPECT_EQ(layout.x_offset(1, 0), 9);
    EXPECT_EQ(layout.u_offset(0, 3), 7);
    EXPECT_EQ(layout.v_index(1), 17);

    Vec y = Vec::LinSpaced(18, 0.0, 17.0);
    Vec slice = layout.agent_slice(y, 1);
    ASSERT_EQ(slice.size(), 9);
    EXPECT_EQ(slice[0], 9.0);
    EXPECT_EQ(slice[8], 17.0);
}

TEST(BuildCentralProgram, RowCountsMatchTheScenario) {
    auto sc = pair_scenario(1.0, 0.5);
    auto assembly = build_central_program(sc, pair_states(0.3, 0.2));
    const auto& p = assembly.program;

    // Dynamics plus initial pin: nx*(N+1) = 4 equality rows per agent.
    EXPECT_EQ(p.F.rows(), 8);
    // Coupling at stages 1..N-1 plus the shared slack-sum row.
    EXPECT_EQ(p.G.rows(), 3);
    // One terminal stability row per agent.
    EXPECT_EQ(p.quadratic.size(), 2u);
    EXPECT_EQ(p.n(), 18);
}

TEST(BuildCentralProgram, PinnedSlackSwitchesToEqualityRows) {
    auto sc = pair_scenario(1.0, 0.5);
    sc.alpha = 1.0;
    sc.pin_slack_to_zero = true;
    auto assembly = build_central_program(sc, pair_states(0.3, 0.2));
    const auto& p = assembly.program;

    // Per agent: 4 dynamics rows, the v pin, and nx+nu terminal pins.
    EXPECT_EQ(p.F.rows(), 14);
    // No slack-sum row once every v is pinned.
    EXPECT_EQ(p.G.rows(), 2);
    EXPECT_EQ(p.quadratic.size(), 0u);
}

TEST(SolveCentralized, OriginIsExactlyZero) {
    auto sc = pair_scenario(1.0, 0.5);
    auto sol = solve_centralized(sc, pair_states(0.0, 0.0));

    ASSERT_TRUE(sol.feasible);
    EXPECT_EQ(sol.status, SolveStatus::Optimal);
    EXPECT_EQ(sol.objective, 0.0);
    EXPECT_EQ(sol.decisions.at(0).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(sol.decisions.at(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(SolveCentralized, InteriorOptimumMatchesHandSolution) {
    // Two decoupled unit agents, N = 1: min x0² + u0² + (x0+u0)² has
    // u0 = -x0/2, so each agent contributes 1.5 x0² and nothing binds.
    Scenario sc;
    sc.graph = CouplingGraph(2, {});
    sc.models.push_back(scalar_model(1.0, 1.0, 1.0, 1.0, 10.0));
    sc.models.push_back(scalar_model(1.0, 1.0, 1.0, 1.0, 10.0));
    sc.horizon = 1;
    sc.alpha = 0.5;

    auto sol = solve_centralized(sc, pair_states(0.6, -0.4));
    ASSERT_TRUE(sol.feasible);
    EXPECT_NEAR(sol.objective, 1.5 * (0.36 + 0.16), 1e-6);
    EXPECT_NEAR(sol.decisions.at(0)[sol.layout.agents[0].u_offset(0)], -0.3, 1e-5);
    EXPECT_NEAR(sol.decisions.at(1)[sol.layout.agents[1].u_offset(0)], 0.2, 1e-5);

    auto assembly = build_central_program(sc, pair_states(0.6, -0.4));
    EXPECT_LE(program_violation(assembly.program, sol.y), 1e-8);
}

TEST(SolveCentralized, ActiveBoxMatchesHandKkt) {
    // Single agent, N = 1, x0 = 1, u ∈ [-0.05, 0.05]. The unconstrained
    // input -0.45 clips to the lower bound: x1 = 0.85, J = 1.725, and
    // stationarity leaves 1.6 on the lower-bound multiplier.
    Scenario sc;
    sc.graph = CouplingGraph(1, {});
    sc.models.push_back(scalar_model(0.9, 1.0, 1.0, 1.0, 0.05));
    sc.horizon = 1;
    sc.alpha = 0.1;

    std::map<int, Vec> x{{0, Vec::Constant(1, 1.0)}};
    auto sol = solve_centralized(sc, x);
    ASSERT_TRUE(sol.feasible);
    EXPECT_NEAR(sol.objective, 1.725, 1e-6);

    const int u00 = sol.layout.u_offset(0, 0);
    EXPECT_NEAR(sol.y[u00], -0.05, 1e-7);
    EXPECT_NEAR(sol.raw.box_lower_multipliers[u00], 1.6, 1e-4);
    EXPECT_NEAR(sol.raw.box_upper_multipliers[u00], 0.0, 1e-6);
}

TEST(SolveCentralized, SurfacesInfeasibilityWithDiagnostics) {
    // Unstabilizable growth against a contraction requirement.
    Scenario sc;
    sc.graph = CouplingGraph(1, {});
    sc.models.push_back(scalar_model(2.0, 0.1, 1.0, 1.0, 1.0));
    sc.horizon = 3;
    sc.alpha = 0.99;

    std::map<int, Vec> x{{0, Vec::Constant(1, 1.0)}};
    auto sol = solve_centralized(sc, x);
    EXPECT_FALSE(sol.feasible);
    EXPECT_EQ(sol.status, SolveStatus::Infeasible);
    EXPECT_FALSE(sol.message.empty());
}

TEST(SolveCentralized, MeasuredViolationShortCircuits) {
    auto sc = pair_scenario(1.0, 0.5);
    auto sol = solve_centralized(sc, pair_states(3.0, 3.0));
    EXPECT_FALSE(sol.feasible);
    EXPECT_NE(sol.message.find("measured state infeasible"), std::string::npos);
}

TEST(SolveCentralized, FastPathMatchesStepperExactly) {
    auto sc = pair_scenario(1.0, 0.5);
    auto x = pair_states(1e-5, -2e-5);

    auto central = solve_centralized(sc, x);
    auto step = mpc_step(sc, x);
    ASSERT_TRUE(central.feasible);
    ASSERT_TRUE(step.feasible);
    EXPECT_TRUE(step.fast_path);
    EXPECT_EQ(gap_report(step.J, central.objective), 0.0);
}

TEST(GapReport, FrozenValues) {
    EXPECT_EQ(gap_report(250.0, 250.0), 0.0);
    EXPECT_NEAR(gap_report(102.0, 100.0), 0.02, 1e-12);
    // Denominator floors at 1 for small optima.
    EXPECT_NEAR(gap_report(0.5, 0.3), 0.2, 1e-12);
    EXPECT_NEAR(gap_report(1.0, -0.5), 1.5, 1e-12);
}

TEST(Oracle, DistributedIteratesStayAboveTheCentralOptimum) {
    auto sc = pair_scenario(1.0, 0.5);
    auto x = pair_states(0.55, 0.35);

    auto central = solve_centralized(sc, x);
    ASSERT_TRUE(central.feasible);
    auto assembly = build_central_program(sc, x);
    auto rdp = build_rdp_constraints(sc, x, false);

    Scenario one = sc;
    one.q_max = 1;
    std::optional<ConsensusState> warm;
    for (int q = 0; q < 6; ++q) {
        auto alg = run_algorithm1(one, rdp, x, warm);
        ASSERT_TRUE(alg.feasible);
        EXPECT_GE(gap_report(alg.objective, central.objective), -1e-8);
        // Every distributed iterate must pass the whole-fleet row set.
        Vec stacked = stack_decisions(assembly.layout, alg.y);
        EXPECT_LE(program_violation(assembly.program, stacked), 1e-8);
        warm = std::move(alg.state);
    }
}

TEST(Oracle, PairGapClosesWithIterations) {
    auto sc = drifting_pair();
    auto x = pair_states(-0.5, -0.4);

    auto central = solve_centralized(sc, x);
    ASSERT_TRUE(central.feasible);

    auto rdp = build_rdp_constraints(sc, x, false);

    sc.q_max = 50;
    auto mid = run_algorithm1(sc, rdp, x);
    ASSERT_TRUE(mid.feasible);
    EXPECT_LE(gap_report(mid.objective, central.objective), 0.02);

    sc.q_max = 200;
    auto late = run_algorithm1(sc, rdp, x);
    ASSERT_TRUE(late.feasible);
    double gap = gap_report(late.objective, central.objective);
    EXPECT_GE(gap, -1e-8);
    EXPECT_LE(gap, 0.01);
}
