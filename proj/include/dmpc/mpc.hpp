#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmpc/distopt.hpp"
#include "dmpc/model.hpp"
#include "dmpc/problem.hpp"
#include "dmpc/stability.hpp"

namespace dmpc {

// Linear-in-time tracking reference: x_r(k) = x0 + k·step, u_r constant.
// Scenarios are posed in error coordinates; references only translate a
// trace back to absolute quantities for reporting.
struct Reference {
    Vec x0;
    Vec step;
    Vec u;

    Vec state_at(int k) const { return x0 + static_cast<double>(k) * step; }
};

// Per-step structural assembly: the stability rows for the measured state
// and each agent's dynamics/cost/bounds core. Throws when the measured
// state violates the original constraints.
struct StepAssembly {
    RdpConstraintSet rdp;
    std::vector<AgentProblemCore> cores;
    std::vector<std::vector<int>> coupled_sets;  // per agent: combined constraint indices
};

inline StepAssembly assemble_step(const Scenario& sc, const std::map<int, Vec>& measured,
                                  int step = 0) {
    auto violations = check_initial_feasibility(sc, measured);
    if (!violations.empty()) throw InitialInfeasible(step, std::move(violations));

    StepAssembly out;
    out.rdp = build_rdp_constraints(sc, measured, sc.pin_slack_to_zero);
    out.coupled_sets.resize(sc.agent_count());
    const auto ctxs = build_constraint_contexts(sc, out.rdp);
    for (const auto& ctx : ctxs)
        for (int a : ctx.sg.participants) out.coupled_sets[a].push_back(ctx.index);
    for (int i = 0; i < sc.agent_count(); ++i)
        out.cores.push_back(build_agent_core(sc.models[i], sc.horizon, measured.at(i),
                                             out.rdp.rows[i], out.rdp.mode,
                                             out.rdp.slack_pinned_to_zero));
    return out;
}

struct StepOutcome {
    bool feasible = false;
    std::string message;
    std::map<int, Vec> inputs;     // applied u_i(k|k)
    std::map<int, Vec> decisions;  // full AgentDecision vectors
    double J = kInf;               // Σ_i Σ_k ℓ_i on the returned decisions
    std::vector<IterationDiagnostics> iterations;
    ConsensusState state;  // warm start for the next step
    bool fast_path = false;
};

namespace detail {

// Below this weighted-state energy the tightened problems lose their
// interior (the terminal row's right side shrinks like ‖x‖²), so the step
// applies zero input and reports the zero-input rollout. Every acceptance
// tolerance is orders of magnitude above this floor.
inline constexpr double kFastPathEnergy = 1e-8;

inline bool fast_path_applies(const Scenario& sc, const std::map<int, Vec>& x) {
    double energy = 0.0;
    for (int i = 0; i < sc.agent_count(); ++i) {
        const auto& m = sc.models[i];
        if (m.w.size() > 0 && m.w.cwiseAbs().maxCoeff() > 0.0) return false;
        if ((m.u_min.array() > 0.0).any() || (m.u_max.array() < 0.0).any()) return false;
        energy += x.at(i).dot(m.Q * x.at(i));
    }
    if (energy > kFastPathEnergy) return false;

    // The rollout must keep every original constraint satisfied.
    std::map<int, Vec> roll = x;
    for (int k = 1; k <= sc.horizon; ++k) {
        for (int i = 0; i < sc.agent_count(); ++i) roll[i] = sc.models[i].A * roll[i];
        for (const auto& c : sc.constraints)
            if (evaluate_constraint(c, roll) > 1e-9) return false;
    }
    return true;
}

inline Vec zero_input_decision(const SubsystemModel& m, int N, const Vec& x) {
    AgentLayout lay{m.nx(), m.nu(), N};
    Vec y = Vec::Zero(lay.size());
    Vec xi = x;
    y.segment(lay.x_offset(0), lay.nx) = xi;
    for (int k = 1; k <= N; ++k) {
        xi = m.A * xi;
        y.segment(lay.x_offset(k), lay.nx) = xi;
    }
    return y;
}

inline StepOutcome fast_path_outcome(const Scenario& sc, const std::map<int, Vec>& x,
                                     const std::optional<ConsensusState>& warm,
                                     const RdpConstraintSet& rdp) {
    StepOutcome out;
    out.feasible = true;
    out.fast_path = true;
    out.message = "zero-input rollout below the convergence floor";
    out.J = 0.0;
    for (int i = 0; i < sc.agent_count(); ++i) {
        const auto& m = sc.models[i];
        AgentLayout lay{m.nx(), m.nu(), sc.horizon};
        Vec y = zero_input_decision(m, sc.horizon, x.at(i));
        out.J += agent_objective(m, lay, y);
        out.inputs[i] = Vec::Zero(m.nu());
        out.decisions[i] = std::move(y);
    }
    out.state = warm ? *warm : init_consensus(build_constraint_contexts(sc, rdp));
    return out;
}

}  // namespace detail

inline StepOutcome mpc_step(const Scenario& sc, const std::map<int, Vec>& measured,
                            const std::optional<ConsensusState>& warm = std::nullopt,
                            int step = 0, const MessageSink& sink = {}) {
    StepOutcome out;
    auto violations = check_initial_feasibility(sc, measured);
    if (!violations.empty()) {
        out.message = "measured state infeasible: " + violations.front();
        return out;
    }

    auto rdp = build_rdp_constraints(sc, measured, sc.pin_slack_to_zero);
    if (detail::fast_path_applies(sc, measured))
        return detail::fast_path_outcome(sc, measured, warm, rdp);

    // Scenario constraints keep their consensus across steps (their geometry
    // is step-invariant), but the slack-sum shares were split against the
    // previous step's terminal right-hand sides, which shrink with the state;
    // carrying them can pin an agent's slack below its new feasible interval.
    std::optional<ConsensusState> carried = warm;
    if (carried && !rdp.slack_pinned_to_zero && !carried->constraints.empty()) {
        auto& cc = carried->constraints.back();
        cc.running_budget = 0.0;
        for (auto& [a, val] : cc.z) val = 0.0;
        for (auto& [a, val] : cc.share) val = 0.0;
        for (auto& [a, val] : cc.rho) val = 0.0;
        for (auto& [a, val] : cc.lambda) val = 0.0;
        for (auto& [a, val] : cc.gap) val = 0.0;
        for (auto& [a, val] : cc.literal_offset) val = 0.0;
    }

    auto alg = run_algorithm1(sc, rdp, measured, carried, sink, step);
    out.iterations = std::move(alg.iterations);
    if (!alg.feasible) {
        out.message = "agent " + std::to_string(alg.failure->agent) + " at inner iteration " +
                      std::to_string(alg.failure->iteration) + ": " + alg.failure->message;
        return out;
    }

    out.feasible = true;
    out.J = alg.objective;
    out.state = std::move(alg.state);
    for (int i = 0; i < sc.agent_count(); ++i) {
        AgentLayout lay{sc.models[i].nx(), sc.models[i].nu(), sc.horizon};
        out.inputs[i] = lay.input(alg.y.at(i), 0);
        out.decisions[i] = std::move(alg.y.at(i));
    }
    return out;
}

enum class TraceStatus { Completed, InfeasibleAtStep };

struct StepRecord {
    std::map<int, Vec> state;  // error coordinates at step k
    std::map<int, Vec> input;  // applied inputs
    double stage_cost = 0.0;   // ℓ(x(k), u(k))
    double J = 0.0;
    double wall_seconds = 0.0;
    bool fast_path = false;
    std::vector<IterationDiagnostics> iterations;
    std::map<int, Vec> decisions;
};

struct ClosedLoopTrace {
    TraceStatus status = TraceStatus::Completed;
    int infeasible_step = -1;
    std::string failure_message;
    std::vector<StepRecord> steps;
    double initial_objective = 0.0;  // J at step 0, feeds the J(0)/α bound
    std::map<int, Vec> final_state;
    std::vector<Reference> references;  // absolute-coordinate reporting only
};

inline ClosedLoopTrace simulate(const Scenario& sc, const std::map<int, Vec>& x0, int steps,
                                const std::vector<Reference>& references = {},
                                const MessageSink& sink = {}) {
    ClosedLoopTrace trace;
    trace.references = references;
    std::map<int, Vec> x = x0;
    std::optional<ConsensusState> warm;

    for (int k = 0; k < steps; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        auto outcome = mpc_step(sc, x, warm, k, sink);
        const auto t1 = std::chrono::steady_clock::now();
        if (!outcome.feasible) {
            trace.status = TraceStatus::InfeasibleAtStep;
            trace.infeasible_step = k;
            trace.failure_message = outcome.message;
            break;
        }

        StepRecord rec;
        rec.state = x;
        rec.input = outcome.inputs;
        rec.stage_cost = 0.0;
        for (int i = 0; i < sc.agent_count(); ++i)
            rec.stage_cost += stage_cost(sc.models[i], x.at(i), outcome.inputs.at(i));
        rec.J = outcome.J;
        rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        rec.fast_path = outcome.fast_path;
        rec.iterations = std::move(outcome.iterations);
        rec.decisions = std::move(outcome.decisions);
        if (k == 0) trace.initial_objective = outcome.J;
        trace.steps.push_back(std::move(rec));

        for (int i = 0; i < sc.agent_count(); ++i)
            x[i] = step_dynamics(sc.models[i], x.at(i), outcome.inputs.at(i));
        // paper_literal resets its budget bookkeeping every step; the
        // conserving mode carries shares and z forward (shifted problems
        // are near-identical).
        if (sc.mode == RedistributionMode::BudgetConserving)
            warm = std::move(outcome.state);
        else
            warm.reset();
    }
    trace.final_state = x;
    return trace;
}

}  // namespace dmpc
