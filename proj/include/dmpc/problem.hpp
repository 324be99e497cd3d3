#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmpc/model.hpp"
#include "dmpc/solver.hpp"
#include "dmpc/stability.hpp"

namespace dmpc {

// Stacked per-agent decision vector over horizon N:
//   y_i = [x(0), ..., x(N), u(0), ..., u(N), v]
// with stage indices relative to the current step. Length (nx+nu)(N+1)+1.
struct AgentLayout {
    int nx = 0;
    int nu = 0;
    int N = 0;

    int size() const { return (nx + nu) * (N + 1) + 1; }

    int x_offset(int k) const {
        check_stage(k);
        return k * nx;
    }

    int u_offset(int k) const {
        check_stage(k);
        return nx * (N + 1) + k * nu;
    }

    int v_index() const { return (nx + nu) * (N + 1); }

    Vec state(const Vec& y, int k) const { return y.segment(x_offset(k), nx); }
    Vec input(const Vec& y, int k) const { return y.segment(u_offset(k), nu); }
    double slack(const Vec& y) const { return y[v_index()]; }

private:
    void check_stage(int k) const {
        if (k < 0 || k > N) throw InvalidArgument("layout: stage index out of range");
    }
};

// Stages at which a coupled constraint's rows are imposed. Stage 0 is the
// measured state and carries no decision content, so its row is omitted;
// initial feasibility is checked separately. The terminal stage is reserved
// for the stability rows unless the constraint is terminal-scheduled.
inline std::vector<int> constraint_stages(ConstraintSchedule schedule, int N) {
    std::vector<int> out;
    switch (schedule) {
        case ConstraintSchedule::EveryStage:
            for (int k = 1; k < N; ++k) out.push_back(k);
            break;
        case ConstraintSchedule::TerminalOnly:
            out.push_back(N);
            break;
        case ConstraintSchedule::SlackSum:
            break;  // acts on the slack variable, not a stage
    }
    return out;
}

// One inequality row being assembled from constraint terms; becomes an
// affine G row or a quadratic row depending on what was accumulated.
struct RowAccumulator {
    Vec a;
    Mat M;  // allocated lazily on the first quadratic term
    double constant = 0.0;

    explicit RowAccumulator(int dim) : a(Vec::Zero(dim)) {}

    void add_term(const ConstraintTerm& t, int x_col) {
        a.segment(x_col, t.a.size()) += t.a;
        constant += t.offset;
        if (t.is_quadratic()) {
            if (M.rows() == 0) M = Mat::Zero(a.size(), a.size());
            M.block(x_col, x_col, t.M.rows(), t.M.cols()) += t.M;
        }
    }

    bool is_quadratic() const { return M.rows() > 0; }
};

// Everything in one agent's problem except the coupled-constraint rows:
// objective blocks, dynamics equalities, input boxes, and the terminal
// stability row. The distributed and centralized assemblies both start here.
struct AgentProblemCore {
    AgentLayout layout;
    Mat H;  // ½ yᵀH y = Σ_k stage cost
    Mat F;
    Vec e;
    Vec lb, ub;
    std::optional<ConvexProgram::QuadraticRow> rdp_row;  // absent when pinned
};

inline Mat stage_cost_hessian(const SubsystemModel& m, const AgentLayout& lay) {
    Mat H = Mat::Zero(lay.size(), lay.size());
    for (int k = 0; k <= lay.N; ++k) {
        H.block(lay.x_offset(k), lay.x_offset(k), lay.nx, lay.nx) = 2.0 * m.Q;
        H.block(lay.u_offset(k), lay.u_offset(k), lay.nu, lay.nu) = 2.0 * m.R;
    }
    return H;
}

inline AgentProblemCore build_agent_core(const SubsystemModel& m, int N, const Vec& x_measured,
                                         const RdpRow& rdp, TerminalMode mode,
                                         bool slack_pinned) {
    if (N < 1) throw InvalidArgument("core: horizon must be at least 1");
    if (x_measured.size() != m.nx()) throw InvalidArgument("core: measured state dimension");

    AgentProblemCore core;
    auto& lay = core.layout;
    lay.nx = m.nx();
    lay.nu = m.nu();
    lay.N = N;
    const int D = lay.size();

    core.H = stage_cost_hessian(m, lay);

    int eq_rows = lay.nx * (N + 1);  // init + N dynamics blocks
    if (slack_pinned) eq_rows += 1;
    if (mode == TerminalMode::EqualityPinned) eq_rows += lay.nx + lay.nu;
    core.F = Mat::Zero(eq_rows, D);
    core.e = Vec::Zero(eq_rows);

    int r = 0;
    core.F.block(r, lay.x_offset(0), lay.nx, lay.nx) = Mat::Identity(lay.nx, lay.nx);
    core.e.segment(r, lay.nx) = x_measured;
    r += lay.nx;
    for (int k = 0; k < N; ++k) {
        core.F.block(r, lay.x_offset(k + 1), lay.nx, lay.nx) = Mat::Identity(lay.nx, lay.nx);
        core.F.block(r, lay.x_offset(k), lay.nx, lay.nx) = -m.A;
        core.F.block(r, lay.u_offset(k), lay.nx, lay.nu) = -m.B;
        core.e.segment(r, lay.nx) = m.w;
        r += lay.nx;
    }
    if (slack_pinned) {
        core.F(r, lay.v_index()) = 1.0;
        r += 1;
    }
    if (mode == TerminalMode::EqualityPinned) {
        core.F.block(r, lay.x_offset(N), lay.nx, lay.nx) = Mat::Identity(lay.nx, lay.nx);
        r += lay.nx;
        core.F.block(r, lay.u_offset(N), lay.nu, lay.nu) = Mat::Identity(lay.nu, lay.nu);
        r += lay.nu;
    } else {
        ConvexProgram::QuadraticRow q;
        q.M = Mat::Zero(D, D);
        q.M.block(lay.x_offset(N), lay.x_offset(N), lay.nx, lay.nx) = m.Q;
        q.M.block(lay.u_offset(N), lay.u_offset(N), lay.nu, lay.nu) = m.R;
        q.a = Vec::Zero(D);
        q.a[lay.v_index()] = -1.0;
        q.r = rdp.rhs_constant;
        core.rdp_row = std::move(q);
    }

    core.lb = Vec::Constant(D, -kInf);
    core.ub = Vec::Constant(D, kInf);
    for (int k = 0; k <= N; ++k) {
        core.lb.segment(lay.u_offset(k), lay.nu) = m.u_min;
        core.ub.segment(lay.u_offset(k), lay.nu) = m.u_max;
    }
    return core;
}

// Objective actually reported for a solved trajectory: Σ_{k=0..N} ℓ(x_k, u_k).
inline double agent_objective(const SubsystemModel& m, const AgentLayout& lay, const Vec& y) {
    if (y.size() < lay.size()) throw InvalidArgument("objective: decision vector too short");
    double total = 0.0;
    for (int k = 0; k <= lay.N; ++k) total += stage_cost(m, lay.state(y, k), lay.input(y, k));
    return total;
}

inline std::vector<std::string> check_initial_feasibility(const Scenario& sc,
                                                          const std::map<int, Vec>& states,
                                                          double tol = 1e-8) {
    std::vector<std::string> violations;
    for (const auto& c : sc.constraints) {
        const double resid = evaluate_constraint(c, states);
        if (resid > tol)
            violations.push_back("constraint " + std::to_string(c.id) + " violated by " +
                                 std::to_string(resid));
    }
    return violations;
}

// The measured state failed check_initial_feasibility at some step.
class InitialInfeasible : public std::runtime_error {
public:
    InitialInfeasible(int step_, std::vector<std::string> violations_)
        : std::runtime_error("measured state infeasible at step " + std::to_string(step_)),
          step(step_),
          violations(std::move(violations_)) {}

    int step;
    std::vector<std::string> violations;
};

}  // namespace dmpc
