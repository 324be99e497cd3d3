#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmpc/graph.hpp"
#include "dmpc/model.hpp"
#include "dmpc/problem.hpp"
#include "dmpc/solver.hpp"
#include "dmpc/stability.hpp"

namespace dmpc {

// One coupled constraint as seen by the distributed layer: the scenario
// constraints followed by the runtime slack-sum coupling (omitted when the
// slack is pinned to zero).
struct ConstraintContext {
    const CoupledConstraint* c = nullptr;
    int index = -1;  // position in the combined list
    ConstraintSubgraph sg;
    Mat P;
    double delta = 0.0;
    std::vector<int> stages;  // decision stages carrying rows (empty for SlackSum)

    int participant_count() const { return sg.size(); }
};

inline std::vector<ConstraintContext> build_constraint_contexts(const Scenario& sc,
                                                                const RdpConstraintSet& rdp) {
    std::vector<ConstraintContext> out;
    auto add = [&](const CoupledConstraint& c) {
        ConstraintContext ctx;
        ctx.c = &c;
        ctx.index = static_cast<int>(out.size());
        ctx.sg = induce_subgraph(sc.graph, c.id, c.participants());
        ctx.P = build_weight_matrix(ctx.sg, sc.weight_scheme).P;
        ctx.delta = sc.effective_delta(c);
        ctx.stages = constraint_stages(c.schedule, sc.horizon);
        out.push_back(std::move(ctx));
    };
    for (const auto& c : sc.constraints) add(c);
    if (!rdp.slack_pinned_to_zero) add(rdp.slack_sum);
    return out;
}

// Consensus bookkeeping for one coupled constraint, keyed by agent id.
// budget_conserving: shares sum to the original budget. paper_literal:
// running_budget grows and per-agent offsets shift the constraint functions.
struct ConstraintConsensus {
    int constraint = -1;
    std::map<int, double> z;
    std::map<int, double> share;
    std::map<int, double> rho;
    std::map<int, double> lambda;
    std::map<int, double> gap;
    double running_budget = 0.0;
    std::map<int, double> literal_offset;
};

struct ConsensusState {
    std::vector<ConstraintConsensus> constraints;
    int q = 0;  // completed iterations, cumulative across warm-started calls
};

inline ConsensusState init_consensus(const std::vector<ConstraintContext>& ctxs) {
    ConsensusState cs;
    for (const auto& ctx : ctxs) {
        ConstraintConsensus cc;
        cc.constraint = ctx.index;
        cc.running_budget = ctx.c->budget;
        const double equal = ctx.c->budget / ctx.participant_count();
        for (int a : ctx.sg.participants) {
            cc.z[a] = 0.0;
            cc.share[a] = equal;
            cc.rho[a] = 0.0;
            cc.lambda[a] = 0.0;
            cc.gap[a] = 0.0;
            cc.literal_offset[a] = 0.0;
        }
        cs.constraints.push_back(std::move(cc));
    }
    return cs;
}

// Defaults for the knobs the scenario may leave unset.
struct DerivedParams {
    double w = 0.0;      // relaxation penalty weight
    double gamma = 0.0;  // z step size
    double d_min = 0.0;  // gap-norm threshold selecting the redistribution branch
};

inline DerivedParams derive_parameters(const Scenario& sc) {
    DerivedParams p;
    if (sc.penalty_weight) {
        p.w = *sc.penalty_weight;
    } else {
        double top = 0.0;
        for (const auto& m : sc.models)
            top = std::max(top, 2.0 * std::max(max_eigenvalue(m.Q), max_eigenvalue(m.R)));
        p.w = 1e4 * top;
    }
    if (sc.step_size) {
        p.gamma = *sc.step_size;
    } else {
        double min_hw = kInf;
        for (const auto& c : sc.constraints) {
            if (c.budget <= 0.0) continue;
            const int n = static_cast<int>(c.participants().size());
            min_hw = std::min(min_hw, sc.effective_delta(c) * c.budget / (2.0 * n));
        }
        p.gamma = std::isfinite(min_hw) ? 0.05 * min_hw : 0.0;
    }
    if (sc.gap_threshold) {
        p.d_min = *sc.gap_threshold;
    } else {
        double max_d = 0.0;
        for (const auto& c : sc.constraints) max_d = std::max(max_d, c.budget);
        p.d_min = 1e-6 * max_d;
    }
    return p;
}

inline double box_half_width(const ConstraintContext& ctx, const ConstraintConsensus& cc,
                             RedistributionMode mode) {
    const double d = (mode == RedistributionMode::PaperLiteral) ? cc.running_budget
                                                                : ctx.c->budget;
    return ctx.delta * d / (2.0 * ctx.participant_count());
}

inline double project_z(double value, double half_width) {
    return std::min(half_width, std::max(-half_width, value));
}

// z_i − Σ_j p_ij z_j: what agent i's row gains from the slack exchange.
inline double z_shift(const ConstraintContext& ctx, const ConstraintConsensus& cc, int agent) {
    const int k = ctx.sg.index_of(agent);
    double shift = cc.z.at(agent);
    for (int j = 0; j < ctx.participant_count(); ++j) {
        const double p = ctx.P(k, j);
        if (p <= 0.0) continue;
        auto it = cc.z.find(ctx.sg.participants[j]);
        if (it == cc.z.end())
            throw InvalidArgument("distopt: missing z for constraint " +
                                  std::to_string(ctx.c->id) + ", agent " +
                                  std::to_string(ctx.sg.participants[j]));
        shift -= p * it->second;
    }
    return shift;
}

// Agent i's component of (I − P)ᵀ λ; note the transpose uses column weights.
inline double z_gradient(int agent, const ConstraintSubgraph& sg, const Mat& P,
                         const std::map<int, double>& lambda) {
    const int k = sg.index_of(agent);
    auto fetch = [&](int participant_index) {
        auto it = lambda.find(sg.participants[participant_index]);
        if (it == lambda.end())
            throw InvalidArgument("distopt: missing multiplier for agent " +
                                  std::to_string(sg.participants[participant_index]));
        return it->second;
    };
    double g = fetch(k);
    for (int j = 0; j < sg.size(); ++j)
        if (P(j, k) > 0.0) g -= P(j, k) * fetch(j);
    return g;
}

// Gap-driven share update. budget_conserving: shares move by −Δd + mean(Δd),
// then a floor of δ·d/n per share (the worst-case z shift) is restored by
// water-filling so every later tightened problem keeps a feasible point.
// paper_literal: per-agent function offsets grow by Δd and the shared budget
// grows by ΣΔd, verbatim.
inline void redistribute_budget(ConstraintConsensus& cc, const ConstraintContext& ctx,
                                RedistributionMode mode) {
    const int n = ctx.participant_count();
    if (mode == RedistributionMode::PaperLiteral) {
        double total = 0.0;
        for (int a : ctx.sg.participants) total += cc.gap.at(a);
        for (int a : ctx.sg.participants) cc.literal_offset[a] += cc.gap.at(a);
        cc.running_budget += total;
        return;
    }

    double mean = 0.0;
    for (int a : ctx.sg.participants) mean += cc.gap.at(a);
    mean /= n;
    for (int a : ctx.sg.participants) cc.share[a] += mean - cc.gap.at(a);

    const double d = ctx.c->budget;
    if (d <= 0.0) return;  // no floor: z is pinned and shares may trade sign
    const double floor = ctx.delta * d / n;
    for (int round = 0; round < n; ++round) {
        double deficit = 0.0;
        int above = 0;
        for (int a : ctx.sg.participants) {
            if (cc.share[a] < floor) {
                deficit += floor - cc.share[a];
                cc.share[a] = floor;
            } else if (cc.share[a] > floor) {
                ++above;
            }
        }
        if (deficit <= 0.0 || above == 0) break;
        const double cut = deficit / above;
        for (int a : ctx.sg.participants)
            if (cc.share[a] > floor) cc.share[a] -= cut;
    }
}

// Agent i's tightened problem: AgentDecision plus one ρ per coupled
// constraint the agent participates in.
struct LocalTightenedProblem {
    int agent = -1;
    ConvexProgram program;
    AgentLayout layout;
    int rho_offset = 0;
    std::vector<int> rho_constraint;  // combined constraint index per ρ slot

    struct CoupledRowRef {
        int constraint;  // combined index
        int stage;       // -1 for the slack-sum row
        bool quadratic;
        int row;  // index into program.G rows or program.quadratic
    };
    std::vector<CoupledRowRef> coupled_rows;

    int rho_slot(int constraint_index) const {
        for (size_t k = 0; k < rho_constraint.size(); ++k)
            if (rho_constraint[k] == constraint_index) return static_cast<int>(k);
        throw InvalidArgument("distopt: agent has no slot for that constraint");
    }
};

inline LocalTightenedProblem build_local_problem(const Scenario& sc, int agent, const Vec& x_i,
                                                 const RdpConstraintSet& rdp,
                                                 const std::vector<ConstraintContext>& ctxs,
                                                 const ConsensusState& cs, double w) {
    const auto& m = sc.models[agent];
    auto core = build_agent_core(m, sc.horizon, x_i, rdp.rows[agent], rdp.mode,
                                 rdp.slack_pinned_to_zero);
    const int D = core.layout.size();

    std::vector<int> mine;
    for (const auto& ctx : ctxs) {
        const auto& parts = ctx.sg.participants;
        if (std::find(parts.begin(), parts.end(), agent) != parts.end())
            mine.push_back(ctx.index);
    }
    const int R = static_cast<int>(mine.size());
    const int total = D + R;

    LocalTightenedProblem lp;
    lp.agent = agent;
    lp.layout = core.layout;
    lp.rho_offset = D;
    lp.rho_constraint = mine;

    auto& p = lp.program;
    p.H = Mat::Zero(total, total);
    p.H.topLeftCorner(D, D) = core.H;
    p.f = Vec::Zero(total);
    for (int k = 0; k < R; ++k) p.f[D + k] = w;
    p.F = Mat::Zero(core.F.rows(), total);
    p.F.leftCols(D) = core.F;
    p.e = core.e;
    p.lb = Vec::Constant(total, -kInf);
    p.ub = Vec::Constant(total, kInf);
    p.lb.head(D) = core.lb;
    p.ub.head(D) = core.ub;
    for (int k = 0; k < R; ++k) {
        p.lb[D + k] = 0.0;
        p.ub[D + k] = ctxs[mine[k]].delta;
    }

    std::vector<Vec> g_rows;
    std::vector<double> g_rhs;
    const RedistributionMode mode = sc.mode;
    for (int k = 0; k < R; ++k) {
        const auto& ctx = ctxs[mine[k]];
        const auto& cc = cs.constraints[ctx.index];
        const int n = ctx.participant_count();
        const double d = (mode == RedistributionMode::PaperLiteral) ? cc.running_budget
                                                                    : ctx.c->budget;
        const double shift = z_shift(ctx, cc, agent);
        double rhs_base = (1.0 - ctx.delta) * d / n;
        if (mode == RedistributionMode::PaperLiteral) {
            rhs_base -= cc.literal_offset.at(agent);
        } else {
            rhs_base += cc.share.at(agent) - ctx.c->budget / n;
        }
        const double rho_coeff = d / n;

        if (ctx.c->schedule == ConstraintSchedule::SlackSum) {
            Vec row = Vec::Zero(total);
            row[core.layout.v_index()] = ctx.c->term_for(agent).a[0];
            if (rho_coeff > 0.0) row[D + k] = -rho_coeff;
            lp.coupled_rows.push_back({ctx.index, -1, false, static_cast<int>(g_rows.size())});
            g_rows.push_back(std::move(row));
            g_rhs.push_back(rhs_base - shift);
            continue;
        }

        const auto& term = ctx.c->term_for(agent);
        for (int stage : ctx.stages) {
            RowAccumulator acc(total);
            acc.add_term(term, core.layout.x_offset(stage));
            if (acc.is_quadratic()) {
                ConvexProgram::QuadraticRow q;
                q.M = std::move(acc.M);
                q.a = std::move(acc.a);
                if (rho_coeff > 0.0) q.a[D + k] = -rho_coeff;
                q.r = rhs_base - acc.constant - shift;
                lp.coupled_rows.push_back(
                    {ctx.index, stage, true, static_cast<int>(p.quadratic.size())});
                p.quadratic.push_back(std::move(q));
            } else {
                if (rho_coeff > 0.0) acc.a[D + k] = -rho_coeff;
                lp.coupled_rows.push_back(
                    {ctx.index, stage, false, static_cast<int>(g_rows.size())});
                g_rows.push_back(std::move(acc.a));
                g_rhs.push_back(rhs_base - acc.constant - shift);
            }
        }
    }

    if (!g_rows.empty()) {
        p.G = Mat::Zero(static_cast<int>(g_rows.size()), total);
        p.h = Vec::Zero(static_cast<int>(g_rows.size()));
        for (size_t r = 0; r < g_rows.size(); ++r) {
            p.G.row(static_cast<int>(r)) = g_rows[r].transpose();
            p.h[static_cast<int>(r)] = g_rhs[r];
        }
    }
    if (core.rdp_row) {
        ConvexProgram::QuadraticRow q;
        q.M = Mat::Zero(total, total);
        q.M.topLeftCorner(D, D) = core.rdp_row->M;
        q.a = Vec::Zero(total);
        q.a.head(D) = core.rdp_row->a;
        q.r = core.rdp_row->r;
        p.quadratic.push_back(std::move(q));
    }
    return lp;
}

// Δd for one constraint: the smallest slack among the agent's rows of that
// constraint, i.e. the budget the agent demonstrably did not use.
inline double compute_gap(const LocalTightenedProblem& lp, const Vec& y, int constraint_index) {
    double gap = kInf;
    for (const auto& ref : lp.coupled_rows) {
        if (ref.constraint != constraint_index) continue;
        double slack;
        if (ref.quadratic) {
            const auto& q = lp.program.quadratic[ref.row];
            slack = q.r - (y.dot(q.M * y) + q.a.dot(y));
        } else {
            slack = lp.program.h[ref.row] - lp.program.G.row(ref.row).dot(y);
        }
        gap = std::min(gap, slack);
    }
    return gap;
}

// λ_i^[s]: total multiplier mass on the agent's rows of constraint s.
inline double coupled_dual_sum(const LocalTightenedProblem& lp, const SolverSolution& sol,
                               int constraint_index) {
    double total = 0.0;
    for (const auto& ref : lp.coupled_rows) {
        if (ref.constraint != constraint_index) continue;
        total += ref.quadratic ? sol.quad_multipliers[ref.row] : sol.ineq_multipliers[ref.row];
    }
    return total;
}

struct ConstraintIterRecord {
    enum class Branch { None, Redistributed, GradientStep };
    int constraint = -1;
    std::map<int, double> gap;
    Branch branch = Branch::None;
    double residual = 0.0;  // max over stages of the original constraint value
};

struct IterationDiagnostics {
    int iteration = 0;  // 1-based within one run_algorithm1 call
    std::map<int, double> phi;
    std::vector<ConstraintIterRecord> constraints;
    int z_messages = 0;
    int lambda_messages = 0;
    int gap_messages = 0;
};

struct LocalInfeasibility {
    int agent = -1;
    int iteration = 0;
    std::string message;
};

struct Algorithm1Result {
    bool feasible = false;
    std::optional<LocalInfeasibility> failure;
    std::map<int, Vec> y;  // AgentDecision part only
    std::map<int, double> phi;
    double objective = kInf;  // Σ_i Σ_k ℓ_i, no penalty terms
    ConsensusState state;
    std::vector<IterationDiagnostics> iterations;
};

using MessageSink = std::function<void(const std::string&)>;

namespace detail {

inline void log_message(const MessageSink& sink, const char* type, int step, int q,
                        int constraint_id, int agent, double value) {
    if (!sink) return;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s %d %d %d %d %.17g", type, step, q, constraint_id, agent,
                  value);
    sink(buf);
}

// A solution usable by the outer loop: optimal, or iteration-capped with
// residuals already near the barrier's floor.
inline bool usable_solution(const SolverSolution& sol) {
    if (sol.status == SolveStatus::Optimal) return true;
    if (sol.status != SolveStatus::MaxIterations) return false;
    return sol.kkt.stationarity <= 1e-5 && sol.kkt.equality <= 1e-8 &&
           sol.kkt.inequality <= 1e-9;
}

}  // namespace detail

// One call = q_max synchronized iterations on a fixed measured state:
// exchange z, solve local problems in participant order, exchange λ and Δd,
// then per constraint either redistribute budget (‖Δd‖ > d_min) or take a
// projected gradient step on z. Message counts tally one message per
// directed subgraph edge per exchanged quantity.
//
// The update selected by the final exchange is not executed: the returned
// state is the one the returned iterate was solved against. A warm-started
// continuation therefore prices the shifted previous solution against rows
// it already satisfies at zero relaxation, which is what lets the per-step
// value chain J(k+1) ≤ J(k) − α ℓ(k) telescope across closed-loop steps.
inline Algorithm1Result run_algorithm1(const Scenario& sc, const RdpConstraintSet& rdp,
                                       const std::map<int, Vec>& measured,
                                       const std::optional<ConsensusState>& warm = std::nullopt,
                                       const MessageSink& sink = {}, int step = 0) {
    const auto ctxs = build_constraint_contexts(sc, rdp);
    const auto params = derive_parameters(sc);

    Algorithm1Result res;
    res.state = warm ? *warm : init_consensus(ctxs);
    if (res.state.constraints.size() != ctxs.size())
        throw InvalidArgument("distopt: warm state does not match the constraint set");

    const int n_agents = sc.agent_count();
    std::vector<std::optional<Vec>> hint(n_agents);
    std::vector<LocalTightenedProblem> problems(n_agents);
    std::vector<SolverSolution> sols(n_agents);

    for (int q = 1; q <= sc.q_max; ++q) {
        IterationDiagnostics diag;
        diag.iteration = q;

        // Barrier 1: z values flow along subgraph edges.
        for (const auto& ctx : ctxs) {
            if (ctx.stages.empty() && ctx.c->schedule != ConstraintSchedule::SlackSum) continue;
            const auto& cc = res.state.constraints[ctx.index];
            for (const auto& [a, b] : ctx.sg.edges) {
                diag.z_messages += 2;
                detail::log_message(sink, "Z", step, q, ctx.c->id, ctx.sg.participants[a],
                                    cc.z.at(ctx.sg.participants[a]));
                detail::log_message(sink, "Z", step, q, ctx.c->id, ctx.sg.participants[b],
                                    cc.z.at(ctx.sg.participants[b]));
            }
        }

        for (int i = 0; i < n_agents; ++i) {
            problems[i] = build_local_problem(sc, i, measured.at(i), rdp, ctxs, res.state,
                                              params.w);
            SolveOptions opt;
            opt.hint = hint[i];
            sols[i] = solve(problems[i].program, opt);
            if (!detail::usable_solution(sols[i])) {
                res.failure = LocalInfeasibility{i, q, to_string(sols[i].status) +
                                                           std::string(": ") + sols[i].message};
                res.iterations.push_back(std::move(diag));
                return res;
            }
            hint[i] = sols[i].y;
            diag.phi[i] = sols[i].objective;
        }

        // Barrier 2: multipliers and gaps flow back; update consensus state.
        for (const auto& ctx : ctxs) {
            auto& cc = res.state.constraints[ctx.index];
            ConstraintIterRecord rec;
            rec.constraint = ctx.index;
            const bool has_rows =
                !ctx.stages.empty() || ctx.c->schedule == ConstraintSchedule::SlackSum;
            if (has_rows) {
                for (int a : ctx.sg.participants) {
                    const auto& lp = problems[a];
                    const auto& sol = sols[a];
                    cc.lambda[a] = coupled_dual_sum(lp, sol, ctx.index);
                    cc.gap[a] = compute_gap(lp, sol.y, ctx.index);
                    cc.rho[a] = sol.y[lp.rho_offset + lp.rho_slot(ctx.index)];
                    rec.gap[a] = cc.gap[a];
                }
                for (const auto& [a, b] : ctx.sg.edges) {
                    diag.lambda_messages += 2;
                    diag.gap_messages += 2;
                    detail::log_message(sink, "LAMBDA", step, q, ctx.c->id,
                                        ctx.sg.participants[a],
                                        cc.lambda.at(ctx.sg.participants[a]));
                    detail::log_message(sink, "LAMBDA", step, q, ctx.c->id,
                                        ctx.sg.participants[b],
                                        cc.lambda.at(ctx.sg.participants[b]));
                    detail::log_message(sink, "GAP", step, q, ctx.c->id, ctx.sg.participants[a],
                                        cc.gap.at(ctx.sg.participants[a]));
                    detail::log_message(sink, "GAP", step, q, ctx.c->id, ctx.sg.participants[b],
                                        cc.gap.at(ctx.sg.participants[b]));
                }
            }

            // Residual of the original constraint on the concatenated solution.
            if (ctx.c->schedule == ConstraintSchedule::SlackSum) {
                double total = -ctx.c->budget;
                for (int a : ctx.sg.participants)
                    total += problems[a].layout.slack(sols[a].y);
                rec.residual = total;
            } else if (!ctx.stages.empty()) {
                double worst = -kInf;
                for (int stage : ctx.stages) {
                    std::map<int, Vec> xs;
                    for (int a : ctx.sg.participants)
                        xs[a] = problems[a].layout.state(sols[a].y, stage);
                    worst = std::max(worst, evaluate_constraint(*ctx.c, xs));
                }
                rec.residual = worst;
            }

            if (has_rows && q < sc.q_max) {
                Vec gaps(ctx.participant_count());
                for (int k = 0; k < ctx.participant_count(); ++k)
                    gaps[k] = cc.gap.at(ctx.sg.participants[k]);
                if (gaps.norm() > params.d_min) {
                    redistribute_budget(cc, ctx, sc.mode);
                    rec.branch = ConstraintIterRecord::Branch::Redistributed;
                } else {
                    const double hw = box_half_width(ctx, cc, sc.mode);
                    std::map<int, double> updated;
                    for (int a : ctx.sg.participants)
                        updated[a] = project_z(
                            cc.z.at(a) - params.gamma * z_gradient(a, ctx.sg, ctx.P, cc.lambda),
                            hw);
                    cc.z = std::move(updated);
                    rec.branch = ConstraintIterRecord::Branch::GradientStep;
                }
            }
            diag.constraints.push_back(std::move(rec));
        }

        res.state.q += 1;
        res.iterations.push_back(std::move(diag));
    }

    res.feasible = true;
    res.objective = 0.0;
    for (int i = 0; i < n_agents; ++i) {
        res.y[i] = sols[i].y.head(problems[i].layout.size());
        res.phi[i] = sols[i].objective;
        res.objective += agent_objective(sc.models[i], problems[i].layout, sols[i].y);
    }
    return res;
}

}  // namespace dmpc
