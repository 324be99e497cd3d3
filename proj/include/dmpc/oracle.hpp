#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dmpc/mpc.hpp"

namespace dmpc {

// Offsets of each agent's decision block inside one stacked vector
// y = [y_0, y_1, ..., y_{n-1}], agents in index order.
struct StackedLayout {
    std::vector<AgentLayout> agents;
    std::vector<int> base;

    static StackedLayout build(const Scenario& sc) {
        StackedLayout out;
        int off = 0;
        for (const auto& m : sc.models) {
            AgentLayout lay{m.nx(), m.nu(), sc.horizon};
            out.base.push_back(off);
            off += lay.size();
            out.agents.push_back(lay);
        }
        return out;
    }

    int size() const {
        return agents.empty() ? 0 : base.back() + agents.back().size();
    }

    int agent_count() const { return static_cast<int>(agents.size()); }

    int x_offset(int i, int k) const { return base[i] + agents[i].x_offset(k); }
    int u_offset(int i, int k) const { return base[i] + agents[i].u_offset(k); }
    int v_index(int i) const { return base[i] + agents[i].v_index(); }

    Vec agent_slice(const Vec& y, int i) const {
        return y.segment(base[i], agents[i].size());
    }
};

// The whole-fleet program: every agent's core embedded block-diagonally plus
// the coupled rows, built from the same row builders as the per-agent
// assembly so the two formulations stay row-identical.
struct CentralAssembly {
    StackedLayout layout;
    ConvexProgram program;
};

inline CentralAssembly build_central_program(const Scenario& sc,
                                             const std::map<int, Vec>& measured) {
    CentralAssembly out;
    out.layout = StackedLayout::build(sc);
    const int D = out.layout.size();
    const int n = sc.agent_count();

    const auto rdp = build_rdp_constraints(sc, measured, sc.pin_slack_to_zero);

    std::vector<AgentProblemCore> cores;
    cores.reserve(n);
    for (int i = 0; i < n; ++i)
        cores.push_back(build_agent_core(sc.models[i], sc.horizon, measured.at(i), rdp.rows[i],
                                         rdp.mode, rdp.slack_pinned_to_zero));

    auto& p = out.program;
    p.H = Mat::Zero(D, D);
    p.f = Vec::Zero(D);
    p.lb = Vec::Constant(D, -kInf);
    p.ub = Vec::Constant(D, kInf);

    int eq_rows = 0;
    for (const auto& c : cores) eq_rows += static_cast<int>(c.F.rows());
    p.F = Mat::Zero(eq_rows, D);
    p.e = Vec::Zero(eq_rows);

    int er = 0;
    for (int i = 0; i < n; ++i) {
        const auto& c = cores[i];
        const int b = out.layout.base[i];
        const int d = c.layout.size();
        p.H.block(b, b, d, d) = c.H;
        p.lb.segment(b, d) = c.lb;
        p.ub.segment(b, d) = c.ub;
        p.F.block(er, b, c.F.rows(), d) = c.F;
        p.e.segment(er, c.F.rows()) = c.e;
        er += static_cast<int>(c.F.rows());
        if (c.rdp_row) {
            ConvexProgram::QuadraticRow q;
            q.M = Mat::Zero(D, D);
            q.M.block(b, b, d, d) = c.rdp_row->M;
            q.a = Vec::Zero(D);
            q.a.segment(b, d) = c.rdp_row->a;
            q.r = c.rdp_row->r;
            p.quadratic.push_back(std::move(q));
        }
    }

    std::vector<Vec> g_rows;
    std::vector<double> g_rhs;
    for (const auto& c : sc.constraints) {
        for (int k : constraint_stages(c.schedule, sc.horizon)) {
            RowAccumulator acc(D);
            for (const auto& t : c.terms) acc.add_term(t, out.layout.x_offset(t.agent, k));
            if (acc.is_quadratic()) {
                ConvexProgram::QuadraticRow q;
                q.M = std::move(acc.M);
                q.a = std::move(acc.a);
                q.r = c.budget - acc.constant;
                p.quadratic.push_back(std::move(q));
            } else {
                g_rows.push_back(std::move(acc.a));
                g_rhs.push_back(c.budget - acc.constant);
            }
        }
    }
    if (!rdp.slack_pinned_to_zero) {
        Vec row = Vec::Zero(D);
        for (int i = 0; i < n; ++i) row[out.layout.v_index(i)] = 1.0;
        g_rows.push_back(std::move(row));
        g_rhs.push_back(0.0);
    }
    p.G = Mat::Zero(static_cast<int>(g_rows.size()), D);
    p.h = Vec::Zero(static_cast<int>(g_rows.size()));
    for (int r = 0; r < static_cast<int>(g_rows.size()); ++r) {
        p.G.row(r) = g_rows[r].transpose();
        p.h[r] = g_rhs[r];
    }
    return out;
}

// Worst violation of any program row at y; nonpositive means feasible.
// Equalities count as |Fy - e|, inequalities as signed slack overrun.
inline double program_violation(const ConvexProgram& p, const Vec& y) {
    double worst = -kInf;
    if (p.F.rows() > 0) worst = std::max(worst, (p.F * y - p.e).cwiseAbs().maxCoeff());
    if (p.G.rows() > 0) worst = std::max(worst, (p.G * y - p.h).maxCoeff());
    for (const auto& q : p.quadratic) worst = std::max(worst, y.dot(q.M * y) + q.a.dot(y) - q.r);
    if (p.lb.size() == y.size()) {
        for (int j = 0; j < y.size(); ++j)
            if (std::isfinite(p.lb[j])) worst = std::max(worst, p.lb[j] - y[j]);
    }
    if (p.ub.size() == y.size()) {
        for (int j = 0; j < y.size(); ++j)
            if (std::isfinite(p.ub[j])) worst = std::max(worst, y[j] - p.ub[j]);
    }
    return worst;
}

inline Vec stack_decisions(const StackedLayout& layout, const std::map<int, Vec>& decisions) {
    Vec y = Vec::Zero(layout.size());
    for (int i = 0; i < layout.agent_count(); ++i) {
        const Vec& yi = decisions.at(i);
        if (yi.size() != layout.agents[i].size())
            throw InvalidArgument("stack: decision length mismatch for agent " +
                                  std::to_string(i));
        y.segment(layout.base[i], yi.size()) = yi;
    }
    return y;
}

struct CentralSolution {
    bool feasible = false;
    SolveStatus status = SolveStatus::MaxIterations;
    std::string message;
    double objective = kInf;       // Σ_i Σ_k ℓ_i at the minimizer
    Vec y;                         // stacked decisions
    std::map<int, Vec> decisions;  // per-agent views of y
    StackedLayout layout;
    SolverSolution raw;            // multipliers and residuals
};

// Solves the fleet problem in one piece. Serves as the reference the
// distributed iterates are measured against: any distributed objective on the
// same measured state is bounded below by this one (minus solver tolerance).
// Sized for diagnostics, not scale; dense blocks grow with agents x horizon.
inline CentralSolution solve_centralized(const Scenario& sc, const std::map<int, Vec>& measured) {
    CentralSolution out;
    out.layout = StackedLayout::build(sc);

    auto violations = check_initial_feasibility(sc, measured);
    if (!violations.empty()) {
        out.status = SolveStatus::Infeasible;
        out.message = "measured state infeasible: " + violations.front();
        return out;
    }

    if (detail::fast_path_applies(sc, measured)) {
        // Below the floor both the stepper and the oracle report the same
        // zero-input rollout, so the gap between them is exactly zero.
        out.feasible = true;
        out.status = SolveStatus::Optimal;
        out.message = "zero-input rollout below the convergence floor";
        out.objective = 0.0;
        out.y = Vec::Zero(out.layout.size());
        for (int i = 0; i < sc.agent_count(); ++i) {
            Vec yi = detail::zero_input_decision(sc.models[i], sc.horizon, measured.at(i));
            out.objective += agent_objective(sc.models[i], out.layout.agents[i], yi);
            out.y.segment(out.layout.base[i], yi.size()) = yi;
            out.decisions[i] = std::move(yi);
        }
        out.raw.status = SolveStatus::Optimal;
        out.raw.y = out.y;
        out.raw.objective = out.objective;
        out.raw.kkt = {0.0, 0.0, 0.0, 0.0};
        return out;
    }

    auto assembly = build_central_program(sc, measured);
    SolveOptions opts;
    opts.max_iter = 800;  // one program carries every agent's barrier stages
    out.raw = solve(assembly.program, opts);
    out.status = out.raw.status;
    out.message = out.raw.message;
    if (out.status == SolveStatus::Infeasible) return out;

    out.feasible = out.status == SolveStatus::Optimal || detail::usable_solution(out.raw);
    if (!out.feasible) return out;

    out.y = out.raw.y;
    out.objective = 0.0;
    for (int i = 0; i < sc.agent_count(); ++i) {
        Vec yi = out.layout.agent_slice(out.y, i);
        out.objective += agent_objective(sc.models[i], out.layout.agents[i], yi);
        out.decisions[i] = std::move(yi);
    }
    return out;
}

// Relative suboptimality of a distributed objective against the fleet
// optimum, floored at 1 so near-zero optima do not blow the ratio up.
// Never meaningfully negative: below -1e-8 means the reference is wrong.
inline double gap_report(double distributed_objective, double central_objective) {
    return (distributed_objective - central_objective) /
           std::max(1.0, std::abs(central_objective));
}

}  // namespace dmpc
