#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dmpc/common.hpp"

namespace dmpc {

// min ½ yᵀH y + fᵀy
// s.t. F y = e
//      G y ≤ h
//      yᵀM_c y + a_cᵀy ≤ r_c          (M_c symmetric PSD)
//      lb ≤ y ≤ ub                    (optional, ±inf allowed)
struct ConvexProgram {
    Mat H;
    Vec f;
    Mat F;
    Vec e;
    Mat G;
    Vec h;

    struct QuadraticRow {
        Mat M;
        Vec a;
        double r = 0.0;
    };
    std::vector<QuadraticRow> quadratic;

    Vec lb, ub;

    int n() const { return static_cast<int>(H.rows()); }

    double objective(const Vec& y) const { return 0.5 * y.dot(H * y) + f.dot(y); }

    void validate() const {
        const int ny = n();
        if (ny == 0) throw InvalidProgram("program: empty decision vector");
        if (f.size() != ny) throw InvalidProgram("program: f dimension mismatch");
        if (!is_psd(H)) throw InvalidProgram("program: H is not positive semidefinite");
        if (F.rows() > 0 && (F.cols() != ny || e.size() != F.rows()))
            throw InvalidProgram("program: equality block dimension mismatch");
        if (G.rows() > 0 && (G.cols() != ny || h.size() != G.rows()))
            throw InvalidProgram("program: inequality block dimension mismatch");
        for (const auto& q : quadratic) {
            if (q.M.rows() != ny || q.M.cols() != ny || q.a.size() != ny)
                throw InvalidProgram("program: quadratic row dimension mismatch");
            if (!is_psd(q.M)) throw InvalidProgram("program: quadratic row is not PSD");
        }
        if (lb.size() != 0 && lb.size() != ny) throw InvalidProgram("program: lb dimension mismatch");
        if (ub.size() != 0 && ub.size() != ny) throw InvalidProgram("program: ub dimension mismatch");
        if (lb.size() == ny && ub.size() == ny && (lb.array() > ub.array()).any())
            throw InvalidProgram("program: lb exceeds ub");
    }
};

enum class SolveStatus { Optimal, Infeasible, MaxIterations };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "Optimal";
        case SolveStatus::Infeasible: return "Infeasible";
        case SolveStatus::MaxIterations: return "MaxIterations";
    }
    return "?";
}

struct KktResiduals {
    double stationarity = kInf;
    double equality = kInf;
    double inequality = kInf;
    double complementarity = kInf;

    double max() const {
        return std::max(std::max(stationarity, equality), std::max(inequality, complementarity));
    }
};

// Multiplier sign convention: L = f0(y) + μᵀ(Fy − e) + Σ λ_r (g_r(y) − rhs_r),
// λ ≥ 0 on g_r(y) ≤ rhs_r.
struct SolverSolution {
    SolveStatus status = SolveStatus::MaxIterations;
    Vec y;
    double objective = kInf;
    Vec eq_multipliers;         // per F row
    Vec ineq_multipliers;       // per G row
    Vec quad_multipliers;       // per quadratic row
    Vec box_lower_multipliers;  // per coordinate (0 where lb = -inf)
    Vec box_upper_multipliers;  // per coordinate (0 where ub = +inf)
    int iterations = 0;
    KktResiduals kkt;
    std::string message;
};

struct SolveOptions {
    double tol = 1e-8;
    int max_iter = 400;
    std::optional<Vec> hint;  // skips phase I when strictly feasible
};

namespace detail {

// Uniform view of all inequality rows as g(y) ≤ rhs.
struct RowSet {
    const ConvexProgram* p = nullptr;
    // kind: 0 affine G row, 1 box lower, 2 box upper, 3 quadratic
    struct Row {
        int kind;
        int index;  // row in G / coordinate / quadratic index
    };
    std::vector<Row> rows;

    static RowSet build(const ConvexProgram& p) {
        RowSet rs;
        rs.p = &p;
        for (int i = 0; i < p.G.rows(); ++i) rs.rows.push_back({0, i});
        if (p.lb.size() == p.n())
            for (int j = 0; j < p.n(); ++j)
                if (std::isfinite(p.lb[j])) rs.rows.push_back({1, j});
        if (p.ub.size() == p.n())
            for (int j = 0; j < p.n(); ++j)
                if (std::isfinite(p.ub[j])) rs.rows.push_back({2, j});
        for (int c = 0; c < static_cast<int>(p.quadratic.size()); ++c) rs.rows.push_back({3, c});
        return rs;
    }

    int count() const { return static_cast<int>(rows.size()); }

    double value(int r, const Vec& y) const {
        const Row& w = rows[r];
        switch (w.kind) {
            case 0: return p->G.row(w.index).dot(y);
            case 1: return -y[w.index];
            case 2: return y[w.index];
            default: {
                const auto& q = p->quadratic[w.index];
                return y.dot(q.M * y) + q.a.dot(y);
            }
        }
    }

    double rhs(int r) const {
        const Row& w = rows[r];
        switch (w.kind) {
            case 0: return p->h[w.index];
            case 1: return -p->lb[w.index];
            case 2: return p->ub[w.index];
            default: return p->quadratic[w.index].r;
        }
    }

    Vec gradient(int r, const Vec& y) const {
        const Row& w = rows[r];
        Vec g = Vec::Zero(p->n());
        switch (w.kind) {
            case 0: g = p->G.row(w.index).transpose(); break;
            case 1: g[w.index] = -1.0; break;
            case 2: g[w.index] = 1.0; break;
            default: {
                const auto& q = p->quadratic[w.index];
                g = 2.0 * (q.M * y) + q.a;
            }
        }
        return g;
    }

    bool is_quadratic(int r) const { return rows[r].kind == 3; }
    const Mat& quad_matrix(int r) const { return p->quadratic[rows[r].index].M; }
};

// Largest s ∈ (0, cap] keeping all slacks strictly positive along y + s·dy.
inline double max_feasible_step(const RowSet& rs, const Vec& y, const Vec& dy, double cap) {
    double s = cap;
    for (int r = 0; r < rs.count(); ++r) {
        const double slack = rs.rhs(r) - rs.value(r, y);
        if (rs.is_quadratic(r)) {
            const Mat& M = rs.quad_matrix(r);
            const double q = dy.dot(M * dy);
            const double l = rs.gradient(r, y).dot(dy);
            if (q > 1e-300) {
                const double disc = l * l + 4.0 * q * slack;
                if (disc >= 0.0) {
                    const double root = (-l + std::sqrt(disc)) / (2.0 * q);
                    if (root > 0.0) s = std::min(s, root);
                }
            } else if (l > 0.0) {
                s = std::min(s, slack / l);
            }
        } else {
            const double l = rs.gradient(r, y).dot(dy);
            if (l > 0.0) s = std::min(s, slack / l);
        }
    }
    return s;
}

struct BarrierResult {
    Vec y;
    double mu = 0.0;
    bool converged = false;
    bool hit_iteration_cap = false;
    bool diverged = false;
};

// Equality-constrained Newton descent on ½yᵀHy + fᵀy − μ Σ log(slack_r),
// staged over a decreasing μ sequence. The iterate stays on {Fy = e} and
// strictly inside every inequality. early_exit, when set, stops as soon as
// the predicate holds (used by phase I).
template <typename EarlyExit>
BarrierResult barrier_minimize(const ConvexProgram& p, const RowSet& rs, Vec y, double tol,
                               int max_iter, int& used_iter, EarlyExit early_exit) {
    const int ny = p.n();
    const int me = static_cast<int>(p.F.rows());
    const int m = rs.count();
    BarrierResult out;

    double mu = std::max(1e-3, 0.1 * (1.0 + std::abs(p.objective(y))) / std::max(1, m));
    const double mu_final = std::max(1e-12, std::min(1e-9, 0.01 * tol));

    Mat kkt(ny + me, ny + me);
    Vec rhs(ny + me);

    while (true) {
        // Newton loop at fixed mu.
        for (int it = 0; it < 60; ++it) {
            if (used_iter >= max_iter) {
                out.y = y;
                out.mu = mu;
                out.hit_iteration_cap = true;
                return out;
            }
            if (early_exit(y)) {
                out.y = y;
                out.mu = mu;
                out.converged = true;
                return out;
            }

            Vec obj_grad = p.H * y + p.f;
            Vec grad = obj_grad;
            Mat hess = p.H;
            for (int r = 0; r < m; ++r) {
                const double slack = rs.rhs(r) - rs.value(r, y);
                const Vec gr = rs.gradient(r, y);
                grad.noalias() += (mu / slack) * gr;
                hess.noalias() += (mu / (slack * slack)) * (gr * gr.transpose());
                if (rs.is_quadratic(r)) hess.noalias() += (2.0 * mu / slack) * rs.quad_matrix(r);
            }
            // Damp each coordinate against its own curvature. A single global
            // regularizer scaled by the largest diagonal entry would couple
            // scales: a penalty variable pinned near its bound carries
            // mu/slack² ~ w²/mu, and damping everything by 1e-12 of that
            // freezes the whole trajectory block.
            hess.diagonal().array() += 1e-12 * (1.0 + hess.diagonal().array().abs());

            kkt.setZero();
            kkt.topLeftCorner(ny, ny) = hess;
            if (me > 0) {
                kkt.topRightCorner(ny, me) = p.F.transpose();
                kkt.bottomLeftCorner(me, ny) = p.F;
            }
            rhs.head(ny) = -grad;
            if (me > 0) rhs.tail(me) = p.e - p.F * y;  // absorbs accumulated drift

            Vec sol = kkt.partialPivLu().solve(rhs);
            if (!sol.allFinite()) sol = kkt.fullPivLu().solve(rhs);
            if (!sol.allFinite()) {
                out.y = y;
                out.mu = mu;
                out.diverged = true;
                return out;
            }
            Vec dy = sol.head(ny);
            ++used_iter;

            // Trust region: unbounded directions (phase I in particular) must
            // not blast the iterate to a scale that poisons later stages.
            const double cap_norm = 1e2 * (1.0 + y.norm());
            if (dy.norm() > cap_norm) dy *= cap_norm / dy.norm();

            const double dec2 = -grad.dot(dy);  // Newton decrement², eq-constrained case
            const double eq_drift = me == 0 ? 0.0
                                            : (p.F * y - p.e).cwiseAbs().maxCoeff() /
                                                  (1.0 + p.e.cwiseAbs().maxCoeff());
            const bool on_manifold = eq_drift <= 1e-12;
            const bool last_stage = mu <= mu_final;
            // Intermediate stages only need enough centering to follow the
            // path; the last stage must hand back a small true gradient, since
            // the multipliers mu/slack are read off this point. Its scale must
            // match the final KKT acceptance scale: measuring against the
            // objective gradient instead would let a large penalty weight
            // inflate the allowance by orders of magnitude. The decrement
            // floor escapes once roundoff owns the remaining error.
            bool settled;
            if (last_stage) {
                const double stat_scale = 1.0 + std::abs(p.objective(y));
                settled = grad.cwiseAbs().maxCoeff() <= 0.5 * tol * stat_scale ||
                          dec2 * 0.5 <= 1e-16 * stat_scale;
            } else {
                const double stage_tol =
                    std::max(0.01 * mu, 1e-16 * (1.0 + std::abs(p.objective(y))));
                settled = dec2 * 0.5 <= stage_tol;
            }
            if (settled && on_manifold) break;

            double step = std::min(1.0, 0.99 * max_feasible_step(rs, y, dy, 1.0 / 0.99));
            // Armijo backtracking on the barrier objective.
            auto barrier_value = [&](const Vec& yy) {
                double v = p.objective(yy);
                for (int r = 0; r < m; ++r) {
                    const double slack = rs.rhs(r) - rs.value(r, yy);
                    if (slack <= 0.0) return kInf;
                    v -= mu * std::log(slack);
                }
                return v;
            };
            const double v0 = barrier_value(y);
            int bt = 0;
            while (bt < 60) {
                const Vec cand = y + step * dy;
                const double v1 = barrier_value(cand);
                if (v1 <= v0 - 1e-4 * step * dec2 || v1 < v0 - 1e-14 * std::abs(v0)) {
                    y = cand;
                    break;
                }
                step *= 0.5;
                ++bt;
            }
            if (bt >= 60) break;  // no progress at this mu; tighten mu or give up below
            if (y.cwiseAbs().maxCoeff() > 1e13) {
                out.y = y;
                out.mu = mu;
                out.diverged = true;
                return out;
            }
        }
        if (mu <= mu_final) {
            out.y = y;
            out.mu = mu;
            out.converged = true;
            return out;
        }
        mu = std::max(mu * 0.1, mu_final);
    }
}

}  // namespace detail

// Independent KKT check: recomputes all residuals from the program and the
// returned primal/dual values, making no use of solver internals.
inline KktResiduals kkt_residuals(const ConvexProgram& p, const SolverSolution& s) {
    KktResiduals res;
    const int ny = p.n();
    const Vec& y = s.y;
    if (y.size() != ny) return res;

    Vec stat = p.H * y + p.f;
    if (p.F.rows() > 0) stat.noalias() += p.F.transpose() * s.eq_multipliers;
    if (p.G.rows() > 0) stat.noalias() += p.G.transpose() * s.ineq_multipliers;
    for (int c = 0; c < static_cast<int>(p.quadratic.size()); ++c) {
        const auto& q = p.quadratic[c];
        stat.noalias() += s.quad_multipliers[c] * (2.0 * (q.M * y) + q.a);
    }
    if (s.box_lower_multipliers.size() == ny) stat -= s.box_lower_multipliers;
    if (s.box_upper_multipliers.size() == ny) stat += s.box_upper_multipliers;
    res.stationarity = stat.cwiseAbs().maxCoeff();

    res.equality = p.F.rows() > 0 ? (p.F * y - p.e).cwiseAbs().maxCoeff() : 0.0;

    double viol = 0.0, comp = 0.0;
    auto tally = [&](double val, double rhs, double lambda) {
        viol = std::max(viol, val - rhs);
        comp = std::max(comp, std::abs(lambda * (rhs - val)));
    };
    for (int i = 0; i < p.G.rows(); ++i) tally(p.G.row(i).dot(y), p.h[i], s.ineq_multipliers[i]);
    for (int c = 0; c < static_cast<int>(p.quadratic.size()); ++c) {
        const auto& q = p.quadratic[c];
        tally(y.dot(q.M * y) + q.a.dot(y), q.r, s.quad_multipliers[c]);
    }
    if (p.lb.size() == ny)
        for (int j = 0; j < ny; ++j)
            if (std::isfinite(p.lb[j])) tally(-y[j], -p.lb[j], s.box_lower_multipliers[j]);
    if (p.ub.size() == ny)
        for (int j = 0; j < ny; ++j)
            if (std::isfinite(p.ub[j])) tally(y[j], p.ub[j], s.box_upper_multipliers[j]);
    res.inequality = viol;
    res.complementarity = comp;
    return res;
}

// Feasible-start log-barrier method. Phase I (min t over g_r(y) ≤ rhs_r + t)
// either produces a strictly feasible start or certifies infeasibility; the
// main phase then keeps every iterate strictly feasible, which is what the
// violation-freedom guarantees downstream rely on.
inline SolverSolution solve(const ConvexProgram& p, SolveOptions opt = {}) {
    p.validate();
    const int ny = p.n();
    const int me = static_cast<int>(p.F.rows());
    const auto rs = detail::RowSet::build(p);
    const int m = rs.count();

    SolverSolution sol;
    int used_iter = 0;

    // Base point on the equality manifold.
    Vec y0 = Vec::Zero(ny);
    if (me > 0) {
        y0 = p.F.colPivHouseholderQr().solve(p.e);
        const double resid = (p.F * y0 - p.e).cwiseAbs().maxCoeff();
        if (resid > 1e-8 * (1.0 + p.e.cwiseAbs().maxCoeff())) {
            sol.status = SolveStatus::Infeasible;
            sol.message = "inconsistent equality constraints";
            sol.y = y0;
            return sol;
        }
    }

    // No inequalities: the KKT system is linear, solve it directly.
    if (m == 0) {
        Mat kkt = Mat::Zero(ny + me, ny + me);
        kkt.topLeftCorner(ny, ny) = p.H;
        kkt.topLeftCorner(ny, ny).diagonal().array() += 1e-12 * (1.0 + p.H.cwiseAbs().maxCoeff());
        if (me > 0) {
            kkt.topRightCorner(ny, me) = p.F.transpose();
            kkt.bottomLeftCorner(me, ny) = p.F;
        }
        Vec rhs(ny + me);
        rhs.head(ny) = -p.f;
        if (me > 0) rhs.tail(me) = p.e;
        Vec z = kkt.fullPivLu().solve(rhs);
        sol.y = z.head(ny);
        sol.eq_multipliers = me > 0 ? Vec(z.tail(me)) : Vec(0);
        sol.ineq_multipliers = Vec::Zero(p.G.rows());
        sol.quad_multipliers = Vec::Zero(static_cast<int>(p.quadratic.size()));
        sol.box_lower_multipliers = Vec::Zero(ny);
        sol.box_upper_multipliers = Vec::Zero(ny);
        sol.objective = p.objective(sol.y);
        sol.iterations = 1;
        sol.kkt = kkt_residuals(p, sol);
        sol.status = sol.kkt.max() <= opt.tol ? SolveStatus::Optimal : SolveStatus::MaxIterations;
        return sol;
    }

    const double rhs_scale = [&] {
        double v = 1.0;
        for (int r = 0; r < m; ++r) v = std::max(v, std::abs(rs.rhs(r)));
        return v;
    }();

    // Strictly feasible start: accept the hint if usable, otherwise phase I.
    Vec y;
    bool have_start = false;
    if (opt.hint && opt.hint->size() == ny) {
        Vec cand = *opt.hint;
        if (me > 0) {
            // Project the hint onto the equality manifold.
            cand += p.F.colPivHouseholderQr().solve(p.e - p.F * cand);
        }
        bool ok = (me == 0 || (p.F * cand - p.e).cwiseAbs().maxCoeff() <=
                                  1e-9 * (1.0 + p.e.cwiseAbs().maxCoeff()));
        for (int r = 0; ok && r < m; ++r)
            ok = rs.rhs(r) - rs.value(r, cand) >= 1e-9 * (1.0 + std::abs(rs.rhs(r)));
        if (ok) {
            y = cand;
            have_start = true;
        }
    }

    if (!have_start) {
        // Phase I: min t s.t. g_r(y) − t ≤ rhs_r, F y = e.
        ConvexProgram aux;
        aux.H = Mat::Zero(ny + 1, ny + 1);
        aux.f = Vec::Zero(ny + 1);
        aux.f[ny] = 1.0;
        if (me > 0) {
            aux.F = Mat::Zero(me, ny + 1);
            aux.F.leftCols(ny) = p.F;
            aux.e = p.e;
        }
        const int mg = static_cast<int>(p.G.rows());
        int nb = 0;
        if (p.lb.size() == ny)
            for (int j = 0; j < ny; ++j) nb += std::isfinite(p.lb[j]) ? 1 : 0;
        if (p.ub.size() == ny)
            for (int j = 0; j < ny; ++j) nb += std::isfinite(p.ub[j]) ? 1 : 0;
        aux.G = Mat::Zero(mg + nb, ny + 1);
        aux.h = Vec::Zero(mg + nb);
        int row = 0;
        for (int i = 0; i < mg; ++i, ++row) {
            aux.G.row(row).head(ny) = p.G.row(i);
            aux.G(row, ny) = -1.0;
            aux.h[row] = p.h[i];
        }
        if (p.lb.size() == ny)
            for (int j = 0; j < ny; ++j)
                if (std::isfinite(p.lb[j])) {
                    aux.G(row, j) = -1.0;
                    aux.G(row, ny) = -1.0;
                    aux.h[row] = -p.lb[j];
                    ++row;
                }
        if (p.ub.size() == ny)
            for (int j = 0; j < ny; ++j)
                if (std::isfinite(p.ub[j])) {
                    aux.G(row, j) = 1.0;
                    aux.G(row, ny) = -1.0;
                    aux.h[row] = p.ub[j];
                    ++row;
                }
        for (const auto& q : p.quadratic) {
            ConvexProgram::QuadraticRow qq;
            qq.M = Mat::Zero(ny + 1, ny + 1);
            qq.M.topLeftCorner(ny, ny) = q.M;
            qq.a = Vec::Zero(ny + 1);
            qq.a.head(ny) = q.a;
            qq.a[ny] = -1.0;
            qq.r = q.r;
            aux.quadratic.push_back(std::move(qq));
        }

        const auto aux_rs = detail::RowSet::build(aux);
        Vec ya(ny + 1);
        ya.head(ny) = y0;
        double worst = -kInf;
        for (int r = 0; r < m; ++r) worst = std::max(worst, rs.value(r, y0) - rs.rhs(r));
        ya[ny] = worst + 1.0 + 0.01 * rhs_scale;

        const double exit_margin = 1e-3 * rhs_scale;
        auto done = [&](const Vec& yy) { return yy[ny] < -exit_margin; };
        // Loose tolerance: phase I only needs the sign of t, not tight duals.
        auto pr = detail::barrier_minimize(aux, aux_rs, ya, 1e-6, opt.max_iter, used_iter, done);
        if (pr.hit_iteration_cap) {
            sol.status = SolveStatus::MaxIterations;
            sol.message = "iteration cap reached during phase I";
            sol.y = pr.y.head(ny);
            sol.iterations = used_iter;
            return sol;
        }
        if (pr.diverged || pr.y[ny] >= -1e-11 * rhs_scale) {
            sol.status = SolveStatus::Infeasible;
            sol.message = "phase I found no strictly feasible point (best margin " +
                          std::to_string(pr.y[ny]) + ")";
            sol.y = pr.y.head(ny);
            sol.iterations = used_iter;
            return sol;
        }
        y = pr.y.head(ny);
    }

    // Main phase.
    auto never = [](const Vec&) { return false; };
    auto mr = detail::barrier_minimize(p, rs, y, opt.tol, opt.max_iter, used_iter, never);
    y = mr.y;

    sol.y = y;
    sol.objective = p.objective(y);
    sol.iterations = used_iter;

    // Duals from the final barrier point: λ_r = μ / slack_r.
    sol.ineq_multipliers = Vec::Zero(p.G.rows());
    sol.quad_multipliers = Vec::Zero(static_cast<int>(p.quadratic.size()));
    sol.box_lower_multipliers = Vec::Zero(ny);
    sol.box_upper_multipliers = Vec::Zero(ny);
    Vec grad_rest = p.H * y + p.f;
    for (int r = 0; r < m; ++r) {
        const double lam = mr.mu / (rs.rhs(r) - rs.value(r, y));
        const auto& w = rs.rows[r];
        switch (w.kind) {
            case 0: sol.ineq_multipliers[w.index] = lam; break;
            case 1: sol.box_lower_multipliers[w.index] = lam; break;
            case 2: sol.box_upper_multipliers[w.index] = lam; break;
            default: sol.quad_multipliers[w.index] = lam; break;
        }
        grad_rest.noalias() += lam * rs.gradient(r, y);
    }
    sol.eq_multipliers = Vec(0);
    if (me > 0)
        sol.eq_multipliers = p.F.transpose().colPivHouseholderQr().solve(-grad_rest);

    sol.kkt = kkt_residuals(p, sol);

    // Active-set polish: the barrier point carries O(mu/slack) noise on
    // active rows. Solving the KKT system of the apparent active set takes
    // the residuals to machine precision; the result is adopted only when
    // the independently recomputed residuals actually improve. A grazing row
    // (within the activity window but with a vanishing true multiplier)
    // solves to a negative multiplier; pinning it anyway would freeze the
    // point off the optimum, so such rows are dropped and the system re-run.
    {
        std::vector<int> act;
        for (int r = 0; r < m; ++r) {
            const double slack = rs.rhs(r) - rs.value(r, y);
            if (slack <= std::sqrt(mr.mu) * (1.0 + std::abs(rs.rhs(r)))) act.push_back(r);
        }
        for (int round = 0; round < 4; ++round) {
            const int ma = static_cast<int>(act.size());
            if (ma == 0 && me == 0) break;

            Vec yp = y;
            Vec nu = me > 0 ? sol.eq_multipliers : Vec(0);
            Vec lam(ma);
            for (int k = 0; k < ma; ++k)
                lam[k] = mr.mu / (rs.rhs(act[k]) - rs.value(act[k], y));

            bool usable = true;
            for (int newton = 0; newton < 5 && usable; ++newton) {
                Mat J = Mat::Zero(ny + me + ma, ny + me + ma);
                Vec R(ny + me + ma);
                Mat Hl = p.H;
                Vec stat = p.H * yp + p.f;
                if (me > 0) {
                    stat.noalias() += p.F.transpose() * nu;
                    J.block(0, ny, ny, me) = p.F.transpose();
                    J.block(ny, 0, me, ny) = p.F;
                    R.segment(ny, me) = p.F * yp - p.e;
                }
                for (int k = 0; k < ma; ++k) {
                    const Vec gr = rs.gradient(act[k], yp);
                    stat.noalias() += lam[k] * gr;
                    if (rs.is_quadratic(act[k])) Hl.noalias() += 2.0 * lam[k] * rs.quad_matrix(act[k]);
                    J.block(0, ny + me + k, ny, 1) = gr;
                    J.block(ny + me + k, 0, 1, ny) = gr.transpose();
                    R[ny + me + k] = rs.value(act[k], yp) - rs.rhs(act[k]);
                }
                J.topLeftCorner(ny, ny) = Hl;
                R.head(ny) = stat;
                Vec d = J.fullPivLu().solve(-R);
                if (!d.allFinite()) {
                    usable = false;
                    break;
                }
                yp += d.head(ny);
                if (me > 0) nu += d.segment(ny, me);
                lam += d.tail(ma);
            }
            if (!usable || !yp.allFinite()) break;

            // A negative multiplier is judged by the stationarity error its
            // clamp would leave behind, against the same scale the final KKT
            // check uses. Multiplier magnitudes differ by orders across rows
            // (penalty boxes vs coupling rows), so no shared threshold works.
            const double kkt_tol = 0.25 * opt.tol * (1.0 + std::abs(p.objective(yp)));
            std::vector<int> next;
            for (int k = 0; k < ma; ++k) {
                const bool harmful =
                    lam[k] < 0.0 &&
                    -lam[k] * rs.gradient(act[k], yp).cwiseAbs().maxCoeff() > kkt_tol;
                if (!harmful) next.push_back(act[k]);
            }
            if (static_cast<int>(next.size()) < ma) {
                act = std::move(next);
                continue;  // re-solve without the dropped rows
            }

            // Sign noise and non-active feasibility must survive.
            for (int k = 0; k < ma; ++k)
                if (lam[k] < 0.0) lam[k] = 0.0;
            for (int r = 0; r < m && usable; ++r) {
                const double slack = rs.rhs(r) - rs.value(r, yp);
                if (slack < -1e-10 * (1.0 + std::abs(rs.rhs(r)))) usable = false;
            }
            if (usable) {
                SolverSolution cand = sol;
                cand.y = yp;
                cand.objective = p.objective(yp);
                cand.eq_multipliers = nu;
                cand.ineq_multipliers.setZero();
                cand.quad_multipliers.setZero();
                cand.box_lower_multipliers.setZero();
                cand.box_upper_multipliers.setZero();
                for (int k = 0; k < ma; ++k) {
                    const auto& w = rs.rows[act[k]];
                    switch (w.kind) {
                        case 0: cand.ineq_multipliers[w.index] = lam[k]; break;
                        case 1: cand.box_lower_multipliers[w.index] = lam[k]; break;
                        case 2: cand.box_upper_multipliers[w.index] = lam[k]; break;
                        default: cand.quad_multipliers[w.index] = lam[k]; break;
                    }
                }
                cand.kkt = kkt_residuals(p, cand);
                if (cand.kkt.max() <= sol.kkt.max()) sol = cand;
            }
            break;
        }
    }
    const double kkt_scale = 1.0 + std::abs(sol.objective);
    if (sol.kkt.max() <= opt.tol * kkt_scale && !mr.diverged) {
        sol.status = SolveStatus::Optimal;
    } else if (mr.diverged) {
        sol.status = SolveStatus::MaxIterations;
        sol.message = "barrier iteration diverged (problem may be unbounded)";
    } else {
        sol.status = SolveStatus::MaxIterations;
        sol.message = mr.hit_iteration_cap ? "iteration cap reached"
                                           : "residual tolerance not reached";
    }
    return sol;
}

}  // namespace dmpc
