#pragma once

#include <map>
#include <vector>

#include "dmpc/common.hpp"
#include "dmpc/model.hpp"

namespace dmpc {

// Per-agent terminal-stage inequality
//   ℓ_i(x_i(k+N|k), u_i(k+N|k)) − v_i ≤ (1−α)·x_i(k)ᵀQ_i x_i(k)
// rendered as data; the problem assembly turns it into quadratic rows over
// the terminal slices of the agent's decision vector.
struct RdpRow {
    int agent = -1;
    double rhs_constant = 0.0;
};

// With α = 1 and the slack pinned to zero, the quadratic row ℓ ≤ 0 has no
// interior; it is equivalent to x(k+N) = 0, u(k+N) = 0 and is assembled as
// those equality rows instead.
enum class TerminalMode { QuadraticRow, EqualityPinned };

struct RdpConstraintSet {
    double alpha = 0.0;
    TerminalMode mode = TerminalMode::QuadraticRow;
    bool slack_pinned_to_zero = false;
    std::vector<RdpRow> rows;     // one per agent, agent order 0..n-1
    CoupledConstraint slack_sum;  // Σ_i v_i ≤ 0 over all agents
};

inline RdpConstraintSet build_rdp_constraints(const Scenario& sc,
                                              const std::map<int, Vec>& measured_states,
                                              bool pin_slack_to_zero = false) {
    if (!(sc.alpha > 0.0 && sc.alpha <= 1.0))
        throw InvalidArgument("rdp: alpha out of (0,1]");

    RdpConstraintSet out;
    out.alpha = sc.alpha;
    out.slack_pinned_to_zero = pin_slack_to_zero;
    out.mode = (sc.alpha == 1.0 && pin_slack_to_zero) ? TerminalMode::EqualityPinned
                                                      : TerminalMode::QuadraticRow;

    for (int i = 0; i < sc.agent_count(); ++i) {
        auto it = measured_states.find(i);
        if (it == measured_states.end())
            throw InvalidArgument("rdp: missing measured state for agent " + std::to_string(i));
        const Vec& x = it->second;
        if (x.size() != sc.models[i].nx())
            throw InvalidArgument("rdp: measured state dimension mismatch for agent " +
                                  std::to_string(i));
        RdpRow row;
        row.agent = i;
        row.rhs_constant = (1.0 - sc.alpha) * x.dot(sc.models[i].Q * x);
        out.rows.push_back(row);
    }

    out.slack_sum.id = -1;  // runtime construct, never collides with scenario ids
    out.slack_sum.budget = 0.0;
    out.slack_sum.schedule = ConstraintSchedule::SlackSum;
    for (int i = 0; i < sc.agent_count(); ++i) {
        ConstraintTerm t;
        t.agent = i;
        t.a = Vec::Ones(1);  // acts on the scalar slack slice
        out.slack_sum.terms.push_back(std::move(t));
    }
    return out;
}

// J(k) ≥ α·ℓ(k) + J(k+1) − tol.
inline bool check_lyapunov_decrease(double J_k, double J_k_next, double ell_k, double alpha,
                                    double tol) {
    return J_k >= alpha * ell_k + J_k_next - tol;
}

// Closed-loop cost bound J_∞ ≤ J(0)/α.
inline double performance_bound(double J_0, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("performance_bound: alpha out of (0,1]");
    if (J_0 < 0.0) throw InvalidArgument("performance_bound: negative objective");
    return J_0 / alpha;
}

}  // namespace dmpc
