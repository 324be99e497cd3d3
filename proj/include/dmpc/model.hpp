#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dmpc/common.hpp"
#include "dmpc/graph.hpp"
#include "dmpc/solver.hpp"

namespace dmpc {

// x⁺ = A x + B u + w, stage cost ‖x‖²_Q + ‖u‖²_R, box-bounded input.
struct SubsystemModel {
    Mat A;
    Mat B;
    Vec w;
    Mat Q;
    Mat R;
    Vec u_min;
    Vec u_max;

    int nx() const { return static_cast<int>(A.rows()); }
    int nu() const { return static_cast<int>(B.cols()); }
};

// One participant's convex share g(x) = xᵀM x + aᵀx + offset of a coupled
// constraint. M empty means affine.
struct ConstraintTerm {
    int agent = -1;
    Mat M;  // empty or PSD
    Vec a;
    double offset = 0.0;

    bool is_quadratic() const { return M.size() > 0 && M.cwiseAbs().maxCoeff() > 0.0; }

    double evaluate(const Vec& x) const {
        if (x.size() != a.size())
            throw InvalidArgument("constraint term: state dimension mismatch");
        double v = a.dot(x) + offset;
        if (M.size() > 0) v += x.dot(M * x);
        return v;
    }

    Vec gradient(const Vec& x) const {
        if (x.size() != a.size())
            throw InvalidArgument("constraint term: state dimension mismatch");
        Vec g = a;
        if (M.size() > 0) g += 2.0 * (M * x);
        return g;
    }
};

enum class ConstraintSchedule { EveryStage, TerminalOnly, SlackSum };

// Σ_j g_sj(x_j) ≤ budget over the participant set. A single participant with
// budget 0 is a local constraint.
struct CoupledConstraint {
    int id = -1;
    std::vector<ConstraintTerm> terms;
    double budget = 0.0;
    ConstraintSchedule schedule = ConstraintSchedule::EveryStage;
    std::optional<double> delta_override;

    // Ascending agent ids; the canonical participant order everywhere.
    std::vector<int> participants() const {
        std::vector<int> out;
        out.reserve(terms.size());
        for (const auto& t : terms) out.push_back(t.agent);
        std::sort(out.begin(), out.end());
        return out;
    }

    const ConstraintTerm& term_for(int agent) const {
        for (const auto& t : terms)
            if (t.agent == agent) return t;
        throw InvalidArgument("constraint " + std::to_string(id) + ": agent " +
                              std::to_string(agent) + " is not a participant");
    }

    bool is_local() const { return terms.size() == 1; }
};

enum class RedistributionMode { BudgetConserving, PaperLiteral };

struct Scenario {
    CouplingGraph graph;
    std::vector<SubsystemModel> models;
    std::vector<CoupledConstraint> constraints;

    int horizon = 1;
    double alpha = 0.5;
    double delta = 0.5;  // default tightening, per-constraint override on the constraint
    std::optional<double> penalty_weight;  // w; auto: 1e4 · max_i λmax(H_i)
    std::optional<double> step_size;       // γ; auto: 0.05 · min positive z-box half-width
    std::optional<double> gap_threshold;   // d_min; auto: 1e-6 · max_s budget
    int q_max = 5;
    RedistributionMode mode = RedistributionMode::BudgetConserving;
    WeightScheme weight_scheme = WeightScheme::Metropolis;
    // Force every v_i to 0; combined with alpha = 1 this pins the terminal
    // stage to the origin instead of adding the quadratic terminal row.
    bool pin_slack_to_zero = false;

    int agent_count() const { return static_cast<int>(models.size()); }

    double effective_delta(const CoupledConstraint& c) const {
        return c.delta_override.value_or(delta);
    }
};

inline double stage_cost(const SubsystemModel& m, const Vec& x, const Vec& u) {
    if (x.size() != m.nx() || u.size() != m.nu())
        throw InvalidArgument("stage_cost: dimension mismatch");
    return x.dot(m.Q * x) + u.dot(m.R * u);
}

inline Vec step_dynamics(const SubsystemModel& m, const Vec& x, const Vec& u) {
    if (x.size() != m.nx() || u.size() != m.nu())
        throw InvalidArgument("step_dynamics: dimension mismatch");
    return m.A * x + m.B * u + m.w;
}

// Σ_j g_sj(x_j) − budget; feasible iff ≤ 0.
inline double evaluate_constraint(const CoupledConstraint& c, const std::map<int, Vec>& states) {
    double total = -c.budget;
    for (const auto& t : c.terms) {
        auto it = states.find(t.agent);
        if (it == states.end())
            throw InvalidArgument("evaluate_constraint: missing state for agent " +
                                  std::to_string(t.agent) + " in constraint " +
                                  std::to_string(c.id));
        total += t.evaluate(it->second);
    }
    return total;
}

namespace detail {

// inf over the agent's local constraint set of one term; used for the
// normalization requirement inf g ≤ 0. Returns the best value found together
// with whether that value is trustworthy (solver converged or the objective
// is provably unbounded below).
struct TermInfimum {
    double value = kInf;
    bool certain = false;
    bool empty_set = false;
};

inline TermInfimum term_infimum(const Scenario& sc, const ConstraintTerm& term) {
    TermInfimum out;
    const int nx = static_cast<int>(term.a.size());

    // Local rows of the same agent (excluding slack-sum constructs).
    std::vector<const ConstraintTerm*> rows;
    for (const auto& c : sc.constraints)
        if (c.is_local() && c.schedule != ConstraintSchedule::SlackSum &&
            c.terms[0].agent == term.agent && &c.terms[0] != &term)
            rows.push_back(&c.terms[0]);

    const bool quadratic = term.is_quadratic();
    if (rows.empty()) {
        if (!quadratic) {
            // Linear functional on an unconstrained space.
            out.certain = true;
            out.value = term.a.cwiseAbs().maxCoeff() > 0.0 ? -kInf : term.offset;
            return out;
        }
    }

    ConvexProgram p;
    p.H = quadratic ? Mat(2.0 * term.M) : Mat(Mat::Zero(nx, nx));
    p.f = term.a;
    int nrows = 0;
    for (const auto* r : rows)
        if (!r->is_quadratic()) ++nrows;
    p.G = Mat::Zero(nrows, nx);
    p.h = Vec::Zero(nrows);
    int gi = 0;
    for (const auto* r : rows) {
        if (r->is_quadratic()) {
            ConvexProgram::QuadraticRow q;
            q.M = r->M;
            q.a = r->a;
            q.r = -r->offset;
            p.quadratic.push_back(std::move(q));
        } else {
            p.G.row(gi) = r->a.transpose();
            p.h[gi] = -r->offset;
            ++gi;
        }
    }

    SolveOptions opt;
    auto s = solve(p, opt);
    if (s.status == SolveStatus::Infeasible) {
        out.empty_set = true;
        return out;
    }
    out.value = s.objective + term.offset;
    out.certain = s.status == SolveStatus::Optimal;
    return out;
}

}  // namespace detail

// Collects every violated invariant; an empty result means the scenario can
// be handed to assembly.
inline std::vector<std::string> validate_scenario(const Scenario& sc) {
    std::vector<std::string> out;
    auto fail = [&out](const std::string& msg) { out.push_back(msg); };

    const int n = sc.agent_count();
    if (n == 0) fail("scenario has no agents");
    if (sc.graph.node_count() != n)
        fail("graph node count " + std::to_string(sc.graph.node_count()) +
             " does not match agent count " + std::to_string(n));
    if (sc.horizon < 1) fail("horizon must be >= 1");
    if (!(sc.alpha > 0.0 && sc.alpha <= 1.0)) fail("alpha out of (0,1]");
    if (!(sc.delta > 0.0 && sc.delta <= 1.0)) fail("delta out of (0,1]");
    if (sc.q_max < 1) fail("q_max must be >= 1");
    if (sc.penalty_weight && *sc.penalty_weight <= 0.0) fail("penalty weight w must be > 0");
    if (sc.step_size && *sc.step_size <= 0.0) fail("step size gamma must be > 0");
    if (sc.gap_threshold && *sc.gap_threshold < 0.0) fail("gap threshold d_min must be >= 0");

    for (int i = 0; i < n; ++i) {
        const auto& m = sc.models[i];
        const std::string who = "agent " + std::to_string(i) + ": ";
        if (m.A.rows() != m.A.cols() || m.A.rows() == 0) fail(who + "A must be square and nonempty");
        if (m.B.rows() != m.A.rows()) fail(who + "B row count does not match A");
        if (m.w.size() != m.A.rows()) fail(who + "w dimension does not match A");
        if (m.Q.rows() != m.A.rows() || !is_pd(m.Q)) fail(who + "Q not positive definite");
        if (m.R.rows() != m.B.cols() || !is_pd(m.R)) fail(who + "R not positive definite");
        if (m.u_min.size() != m.B.cols() || m.u_max.size() != m.B.cols())
            fail(who + "input bounds dimension mismatch");
        else if ((m.u_min.array() > m.u_max.array()).any())
            fail(who + "input lower bound exceeds upper bound");
    }
    if (!out.empty()) return out;  // later checks assume sane dimensions

    for (const auto& c : sc.constraints) {
        const std::string who = "constraint " + std::to_string(c.id) + ": ";
        if (c.terms.empty()) {
            fail(who + "no terms");
            continue;
        }
        if (c.schedule == ConstraintSchedule::SlackSum) {
            fail(who + "slack-sum constraints are constructed at runtime, not configured");
            continue;
        }
        if (c.budget < 0.0) fail(who + "budget must be >= 0");
        if (c.is_local() && c.budget != 0.0) fail(who + "local constraint must have budget 0");

        std::set<int> seen;
        bool terms_ok = true;
        for (const auto& t : c.terms) {
            if (t.agent < 0 || t.agent >= n) {
                fail(who + "term references invalid agent " + std::to_string(t.agent));
                terms_ok = false;
                continue;
            }
            if (!seen.insert(t.agent).second) {
                fail(who + "duplicate term for agent " + std::to_string(t.agent));
                terms_ok = false;
            }
            if (t.a.size() != sc.models[t.agent].nx()) {
                fail(who + "term dimension does not match agent " + std::to_string(t.agent));
                terms_ok = false;
            }
            if (t.M.size() > 0 &&
                (t.M.rows() != sc.models[t.agent].nx() || t.M.cols() != sc.models[t.agent].nx())) {
                fail(who + "quadratic matrix dimension mismatch for agent " +
                     std::to_string(t.agent));
                terms_ok = false;
            } else if (t.M.size() > 0 && !is_psd(t.M)) {
                fail(who + "quadratic matrix for agent " + std::to_string(t.agent) +
                     " is not positive semidefinite");
                terms_ok = false;
            }
        }
        if (!terms_ok) continue;

        if (!c.is_local()) {
            auto parts = c.participants();
            try {
                auto sg = induce_subgraph(sc.graph, c.id, parts);
                if (!sg.connected())
                    fail(who + "participants are not connected in the coupling graph");
                else
                    build_weight_matrix(sg, sc.weight_scheme);
            } catch (const InvalidArgument& e) {
                fail(who + e.what());
            }
        }
        const double dlt = sc.effective_delta(c);
        if (!(dlt > 0.0 && dlt <= 1.0)) fail(who + "delta out of (0,1]");

        // Normalization: every term must be able to reach a nonpositive value
        // on its agent's local set, else the tightened budget split has no
        // feasible interior.
        for (const auto& t : c.terms) {
            auto inf = detail::term_infimum(sc, t);
            std::ostringstream msg;
            if (inf.empty_set) {
                msg << who << "agent " << t.agent << " has an empty local constraint set";
                fail(msg.str());
            } else if (inf.value > 1e-8 * (1.0 + std::abs(t.offset))) {
                msg << who << "term for agent " << t.agent
                    << " cannot reach a nonpositive value (inf " << inf.value
                    << (inf.certain ? "" : ", unverified") << ")";
                fail(msg.str());
            }
        }
    }
    return out;
}

}  // namespace dmpc
