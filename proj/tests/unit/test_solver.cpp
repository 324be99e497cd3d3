#include "dmpc/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using namespace dmpc;

// Residual check written from scratch against the documented convention
// L = f0 + mu'(Fy - e) + sum_r lambda_r (g_r(y) - rhs_r); no solver internals.
struct CheckedResiduals {
    double stationarity = 0, equality = 0, violation = 0, complementarity = 0, dual_negativity = 0;
};

CheckedResiduals check_kkt(const ConvexProgram& p, const SolverSolution& s) {
    CheckedResiduals r;
    const int n = p.n();
    Vec grad = p.H * s.y + p.f;
    if (p.F.rows() > 0) {
        grad += p.F.transpose() * s.eq_multipliers;
        r.equality = (p.F * s.y - p.e).cwiseAbs().maxCoeff();
    }
    auto row = [&](const Vec& gr, double val, double rhs, double lam) {
        grad += lam * gr;
        r.violation = std::max(r.violation, val - rhs);
        r.complementarity = std::max(r.complementarity, std::abs(lam * (rhs - val)));
        r.dual_negativity = std::max(r.dual_negativity, -lam);
    };
    for (int i = 0; i < p.G.rows(); ++i)
        row(p.G.row(i).transpose(), p.G.row(i).dot(s.y), p.h[i], s.ineq_multipliers[i]);
    for (size_t c = 0; c < p.quadratic.size(); ++c) {
        const auto& q = p.quadratic[c];
        row(2.0 * (q.M * s.y) + q.a, s.y.dot(q.M * s.y) + q.a.dot(s.y), q.r,
            s.quad_multipliers[static_cast<int>(c)]);
    }
    for (int j = 0; j < n; ++j) {
        if (p.lb.size() == n && std::isfinite(p.lb[j]))
            row(-Vec::Unit(n, j), -s.y[j], -p.lb[j], s.box_lower_multipliers[j]);
        if (p.ub.size() == n && std::isfinite(p.ub[j]))
            row(Vec::Unit(n, j), s.y[j], p.ub[j], s.box_upper_multipliers[j]);
    }
    r.stationarity = grad.cwiseAbs().maxCoeff();
    return r;
}

ConvexProgram least_norm_to(const Vec& target) {
    ConvexProgram p;
    const int n = static_cast<int>(target.size());
    p.H = Mat::Identity(n, n);
    p.f = -target;
    return p;
}

TEST(Solver, EqualityOnlyHasClosedFormMultiplier) {
    // min 0.5*|y|^2 s.t. y0 + y1 = 2  ->  y = (1,1), eq multiplier -1.
    ConvexProgram p;
    p.H = Mat::Identity(2, 2);
    p.f = Vec::Zero(2);
    p.F = Mat::Ones(1, 2);
    p.e = Vec::Constant(1, 2.0);
    auto s = solve(p);
    ASSERT_EQ(s.status, SolveStatus::Optimal);
    EXPECT_NEAR(s.y[0], 1.0, 1e-9);
    EXPECT_NEAR(s.y[1], 1.0, 1e-9);
    EXPECT_NEAR(s.eq_multipliers[0], -1.0, 1e-9);
    EXPECT_NEAR(s.objective, 1.0, 1e-9);
    EXPECT_LE(s.kkt.max(), 1e-8);
}

TEST(Solver, ActiveLowerBoundMultiplier) {
    // min 0.5*y^2 s.t. y >= 1  ->  y = 1, lower-bound multiplier 1.
    ConvexProgram p;
    p.H = Mat::Identity(1, 1);
    p.f = Vec::Zero(1);
    p.lb = Vec::Constant(1, 1.0);
    p.ub = Vec::Constant(1, kInf);
    auto s = solve(p);
    ASSERT_EQ(s.status, SolveStatus::Optimal);
    EXPECT_NEAR(s.y[0], 1.0, 1e-6);
    EXPECT_NEAR(s.box_lower_multipliers[0], 1.0, 1e-5);
    EXPECT_NEAR(s.box_upper_multipliers[0], 0.0, 1e-8);
    EXPECT_LE(s.kkt.max(), 1e-8);
}

TEST(Solver, ActiveAffineRowMultiplier) {
    // min 0.5*|y - (2,2)|^2 s.t. y0 + y1 <= 2  ->  y = (1,1), multiplier 1.
    ConvexProgram p = least_norm_to(Vec::Constant(2, 2.0));
    p.G = Mat::Ones(1, 2);
    p.h = Vec::Constant(1, 2.0);
    auto s = solve(p);
    ASSERT_EQ(s.status, SolveStatus::Optimal);
    EXPECT_NEAR(s.y[0], 1.0, 1e-6);
    EXPECT_NEAR(s.y[1], 1.0, 1e-6);
    EXPECT_NEAR(s.ineq_multipliers[0], 1.0, 1e-5);
    EXPECT_LE(s.kkt.max(), 1e-8);
}

TEST(Solver, ActiveQuadraticRowMultiplier) {
    // min -y0 s.t. |y|^2 <= 4  ->  y = (2,0), multiplier 1/4.
    ConvexProgram p;
    p.H = Mat::Zero(2, 2);
    p.f = -Vec::Unit(2, 0);
    ConvexProgram::QuadraticRow q;
    q.M = Mat::Identity(2, 2);
    q.a = Vec::Zero(2);
    q.r = 4.0;
    p.quadratic.push_back(q);
    auto s = solve(p);
    ASSERT_EQ(s.status, SolveStatus::Optimal);
    EXPECT_NEAR(s.y[0], 2.0, 1e-6);
    EXPECT_NEAR(s.y[1], 0.0, 1e-6);
    EXPECT_NEAR(s.quad_multipliers[0], 0.25, 1e-5);
    EXPECT_LE(s.kkt.max(), 1e-8);
}

TEST(Solver, MultiplierMatchesFiniteDifferenceSensitivity) {
    // dJ*/d(rhs) of an active row equals -lambda.
    auto solve_rhs = [](double rhs) {
        ConvexProgram p = least_norm_to(Vec::Constant(2, 2.0));
        p.G = Mat::Ones(1, 2);
        p.h = Vec::Constant(1, rhs);
        return solve(p);
    };
    const double eps = 1e-4;
    auto base = solve_rhs(2.0);
    auto bumped = solve_rhs(2.0 + eps);
    ASSERT_EQ(base.status, SolveStatus::Optimal);
    ASSERT_EQ(bumped.status, SolveStatus::Optimal);
    const double fd = (bumped.objective - base.objective) / eps;
    EXPECT_NEAR(fd, -base.ineq_multipliers[0], 2e-2);
}

TEST(Solver, DetectsAffineInfeasibility) {
    ConvexProgram p;
    p.H = Mat::Identity(1, 1);
    p.f = Vec::Zero(1);
    p.G = Mat(2, 1);
    p.G << 1.0, -1.0;
    p.h = Vec(2);
    p.h << 1.0, -3.0;  // y <= 1 and y >= 3
    auto s = solve(p);
    EXPECT_EQ(s.status, SolveStatus::Infeasible);
    EXPECT_FALSE(s.message.empty());
}

TEST(Solver, DetectsQuadraticInfeasibility) {
    // y^2 <= 4 and y >= 3.
    ConvexProgram p;
    p.H = Mat::Identity(1, 1);
    p.f = Vec::Zero(1);
    ConvexProgram::QuadraticRow q;
    q.M = Mat::Identity(1, 1);
    q.a = Vec::Zero(1);
    q.r = 4.0;
    p.quadratic.push_back(q);
    p.lb = Vec::Constant(1, 3.0);
    p.ub = Vec::Constant(1, kInf);
    auto s = solve(p);
    EXPECT_EQ(s.status, SolveStatus::Infeasible);
}

TEST(Solver, DetectsInconsistentEqualities) {
    ConvexProgram p;
    p.H = Mat::Identity(1, 1);
    p.f = Vec::Zero(1);
    p.F = Mat(2, 1);
    p.F << 1.0, 1.0;
    p.e = Vec(2);
    p.e << 1.0, 2.0;
    auto s = solve(p);
    EXPECT_EQ(s.status, SolveStatus::Infeasible);
    EXPECT_NE(s.message.find("equality"), std::string::npos);
}

TEST(Solver, HintSkipsNothingItShouldNot) {
    ConvexProgram p = least_norm_to(Vec::Constant(2, 2.0));
    p.G = Mat::Ones(1, 2);
    p.h = Vec::Constant(1, 2.0);

    SolveOptions with_hint;
    with_hint.hint = Vec::Zero(2);  // strictly feasible
    auto s1 = solve(p, with_hint);
    ASSERT_EQ(s1.status, SolveStatus::Optimal);
    EXPECT_NEAR(s1.y[0], 1.0, 1e-6);

    SolveOptions bad_hint;
    bad_hint.hint = Vec::Constant(2, 3.0);  // violates the row; must fall back
    auto s2 = solve(p, bad_hint);
    ASSERT_EQ(s2.status, SolveStatus::Optimal);
    EXPECT_NEAR(s2.y[0], 1.0, 1e-6);
}

TEST(Solver, TrivialRowIsHarmless) {
    ConvexProgram p = least_norm_to(Vec::Zero(2));
    p.G = Mat::Zero(1, 2);
    p.h = Vec::Constant(1, 1.0);
    auto s = solve(p);
    ASSERT_EQ(s.status, SolveStatus::Optimal);
    EXPECT_NEAR(s.y.norm(), 0.0, 1e-7);
}

TEST(Solver, ReportsIterationCap) {
    ConvexProgram p = least_norm_to(Vec::Constant(2, 2.0));
    p.G = Mat::Ones(1, 2);
    p.h = Vec::Constant(1, 2.0);
    SolveOptions opt;
    opt.max_iter = 0;
    auto s = solve(p, opt);
    EXPECT_EQ(s.status, SolveStatus::MaxIterations);
    EXPECT_FALSE(s.message.empty());
    EXPECT_EQ(s.iterations, 0);
}

TEST(Solver, ValidatesProgramShape) {
    ConvexProgram p;
    p.H = Mat::Identity(2, 2);
    p.f = Vec::Zero(3);
    EXPECT_THROW(solve(p), InvalidProgram);

    ConvexProgram indef;
    indef.H = Mat::Identity(2, 2);
    indef.H(1, 1) = -1.0;
    indef.f = Vec::Zero(2);
    EXPECT_THROW(solve(indef), InvalidProgram);

    ConvexProgram asym;
    asym.H = Mat::Zero(2, 2);
    asym.H(0, 1) = 1.0;
    asym.f = Vec::Zero(2);
    EXPECT_THROW(solve(asym), InvalidProgram);

    ConvexProgram crossed;
    crossed.H = Mat::Identity(1, 1);
    crossed.f = Vec::Zero(1);
    crossed.lb = Vec::Constant(1, 2.0);
    crossed.ub = Vec::Constant(1, 1.0);
    EXPECT_THROW(solve(crossed), InvalidProgram);
}

// Independent oracle: projected-gradient descent on the same barrier
// objective, staged over decreasing mu. First-order only; shares no code
// with the Newton path.
double gd_barrier_objective(const ConvexProgram& p, Vec y, int stages = 10, int iters = 4000) {
    const int n = p.n();
    Mat proj = Mat::Identity(n, n);
    if (p.F.rows() > 0) {
        Mat FFt = p.F * p.F.transpose();
        proj -= p.F.transpose() * FFt.ldlt().solve(p.F);
    }
    auto slack_and_grad = [&](const Vec& yy, double mu, double& value, Vec& grad) -> bool {
        value = 0.5 * yy.dot(p.H * yy) + p.f.dot(yy);
        grad = p.H * yy + p.f;
        auto add = [&](double slack, const Vec& gr) {
            if (slack <= 0.0) return false;
            value -= mu * std::log(slack);
            grad += (mu / slack) * gr;
            return true;
        };
        for (int i = 0; i < p.G.rows(); ++i)
            if (!add(p.h[i] - p.G.row(i).dot(yy), p.G.row(i).transpose())) return false;
        for (const auto& q : p.quadratic)
            if (!add(q.r - yy.dot(q.M * yy) - q.a.dot(yy), 2.0 * (q.M * yy) + q.a)) return false;
        for (int j = 0; j < n; ++j) {
            if (p.lb.size() == n && std::isfinite(p.lb[j]))
                if (!add(yy[j] - p.lb[j], -Vec::Unit(n, j))) return false;
            if (p.ub.size() == n && std::isfinite(p.ub[j]))
                if (!add(p.ub[j] - yy[j], Vec::Unit(n, j))) return false;
        }
        return true;
    };

    double mu = 1.0;
    for (int stage = 0; stage < stages; ++stage, mu *= 0.1) {
        for (int it = 0; it < iters; ++it) {
            double v0;
            Vec g;
            if (!slack_and_grad(y, mu, v0, g)) return kInf;
            Vec d = -(proj * g);
            if (d.norm() <= 1e-13 * (1.0 + g.norm())) break;
            double step = 1.0;
            bool moved = false;
            for (int bt = 0; bt < 70; ++bt) {
                Vec cand = y + step * d;
                double v1;
                Vec gtmp;
                if (slack_and_grad(cand, mu, v1, gtmp) &&
                    v1 <= v0 + 1e-4 * step * g.dot(d)) {
                    y = cand;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
        }
    }
    return 0.5 * y.dot(p.H * y) + p.f.dot(y);
}

TEST(Solver, AgreesWithFirstOrderBarrierOracle) {
    ConvexProgram p = least_norm_to(Vec::Constant(2, 2.0));
    p.G = Mat::Ones(1, 2);
    p.h = Vec::Constant(1, 2.0);
    auto s = solve(p);
    ASSERT_EQ(s.status, SolveStatus::Optimal);
    const double oracle = gd_barrier_objective(p, Vec::Zero(2));
    EXPECT_NEAR(s.objective, oracle, 1e-4 * (1.0 + std::abs(oracle)));

    ConvexProgram box = least_norm_to((Vec(4) << 3, -3, 0.5, 2).finished());
    box.lb = Vec::Constant(4, -1.0);
    box.ub = Vec::Constant(4, 1.0);
    box.F = Mat::Zero(1, 4);
    box.F(0, 0) = 1.0;
    box.F(0, 1) = 1.0;
    box.e = Vec::Constant(1, 0.5);
    auto s2 = solve(box);
    ASSERT_EQ(s2.status, SolveStatus::Optimal);
    Vec y0 = Vec::Zero(4);
    y0[0] = 0.25;
    y0[1] = 0.25;
    const double oracle2 = gd_barrier_objective(box, y0);
    EXPECT_NEAR(s2.objective, oracle2, 1e-4 * (1.0 + std::abs(oracle2)));
}

TEST(Solver, RandomProgramsSatisfyKktAndBeatFeasibleReference) {
    std::mt19937 rng(987123);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> ndist(2, 6);
    std::uniform_int_distribution<int> medist(0, 2);
    std::uniform_int_distribution<int> mgdist(0, 4);
    std::uniform_int_distribution<int> coin(0, 1);

    int optimal_count = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int n = ndist(rng);
        Mat A(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) A(i, j) = gauss(rng);
        ConvexProgram p;
        p.H = A.transpose() * A + 0.1 * Mat::Identity(n, n);
        p.f = Vec::NullaryExpr(n, [&](int) { return gauss(rng); });

        Vec witness = Vec::NullaryExpr(n, [&](int) { return 0.5 * gauss(rng); });

        const int me = std::min(medist(rng), n - 1);
        if (me > 0) {
            p.F = Mat::NullaryExpr(me, n, [&](int, int) { return gauss(rng); });
            p.e = p.F * witness;  // witness stays on the manifold
        }
        const int mg = mgdist(rng);
        if (mg > 0) {
            p.G = Mat::NullaryExpr(mg, n, [&](int, int) { return gauss(rng); });
            p.h = p.G * witness + Vec::NullaryExpr(mg, [&](int) { return 0.3 + std::abs(gauss(rng)); });
        }
        if (coin(rng)) {
            p.lb = witness.array() - 1.5;
            p.ub = witness.array() + 1.5;
        }
        if (coin(rng)) {
            ConvexProgram::QuadraticRow q;
            q.M = Mat::Identity(n, n);
            q.a = Vec::Zero(n);
            q.r = witness.squaredNorm() + 1.0 + std::abs(gauss(rng));
            p.quadratic.push_back(q);
        }

        auto s = solve(p);
        ASSERT_EQ(s.status, SolveStatus::Optimal) << "trial " << trial << ": " << s.message;
        ++optimal_count;

        auto r = check_kkt(p, s);
        EXPECT_LE(r.stationarity, 1e-6) << "trial " << trial;
        EXPECT_LE(r.equality, 1e-8) << "trial " << trial;
        EXPECT_LE(r.violation, 1e-9) << "trial " << trial;
        EXPECT_LE(r.complementarity, 1e-8) << "trial " << trial;
        EXPECT_LE(r.dual_negativity, 1e-9) << "trial " << trial;
        EXPECT_LE(s.objective, p.objective(witness) + 1e-7 * (1.0 + std::abs(s.objective)))
            << "trial " << trial;
    }
    EXPECT_EQ(optimal_count, 60);
}

}  // namespace
