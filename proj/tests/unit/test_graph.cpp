#include "dmpc/graph.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

using namespace dmpc;

TEST(CouplingGraph, NormalizesEdgesAndTreatsSelfAsNeighbor) {
    CouplingGraph g(4, {{2, 0}, {0, 2}, {1, 1}, {2, 3}});
    EXPECT_EQ(g.node_count(), 4);
    EXPECT_EQ(g.edges().size(), 2u);  // duplicate collapsed, self-edge dropped
    EXPECT_TRUE(g.has_edge(0, 2));
    EXPECT_TRUE(g.has_edge(2, 0));
    EXPECT_TRUE(g.has_edge(1, 1));
    EXPECT_FALSE(g.has_edge(0, 1));
    EXPECT_EQ(g.neighbors(2), (std::vector<int>{0, 2, 3}));
    EXPECT_EQ(g.neighbors(1), (std::vector<int>{1}));
}

TEST(CouplingGraph, RejectsBadInput) {
    EXPECT_THROW(CouplingGraph(0, {}), InvalidArgument);
    EXPECT_THROW(CouplingGraph(2, {{0, 2}}), InvalidArgument);
    EXPECT_THROW(CouplingGraph(2, {{-1, 0}}), InvalidArgument);
    CouplingGraph g(2, {});
    EXPECT_THROW(g.neighbors(2), InvalidArgument);
}

TEST(InduceSubgraph, MapsAgentsToParticipantIndices) {
    CouplingGraph g(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
    auto sg = induce_subgraph(g, 7, {1, 3, 2});
    EXPECT_EQ(sg.constraint_id, 7);
    EXPECT_EQ(sg.size(), 3);
    EXPECT_EQ(sg.index_of(3), 1);
    // Coupling edges (1,2) and (2,3) map to participant-index pairs.
    EXPECT_EQ(sg.edges, (std::vector<std::pair<int, int>>{{0, 2}, {1, 2}}));
    EXPECT_EQ(sg.local_neighbors(2), (std::vector<int>{0, 1, 2}));
    EXPECT_EQ(sg.local_neighbors(0), (std::vector<int>{0, 2}));
    EXPECT_TRUE(sg.connected());
}

TEST(InduceSubgraph, RejectsDuplicatesAndOutOfRange) {
    CouplingGraph g(3, {{0, 1}});
    EXPECT_THROW(induce_subgraph(g, 0, {0, 0}), InvalidArgument);
    EXPECT_THROW(induce_subgraph(g, 0, {0, 3}), InvalidArgument);
}

TEST(InduceSubgraph, DetectsDisconnectedParticipants) {
    CouplingGraph g(4, {{0, 1}, {2, 3}});
    auto sg = induce_subgraph(g, 0, {0, 1, 2});
    EXPECT_FALSE(sg.connected());
    EXPECT_THROW(build_weight_matrix(sg, WeightScheme::Metropolis), InvalidArgument);
}

TEST(DoublyStochastic, AcceptsAndRejects) {
    Mat ok = Mat::Constant(3, 3, 1.0 / 3.0);
    EXPECT_TRUE(validate_doubly_stochastic(ok));

    Mat perm(2, 2);
    perm << 0, 1, 1, 0;
    EXPECT_TRUE(validate_doubly_stochastic(perm));

    Mat bad_row = ok;
    bad_row(0, 0) += 1e-6;
    EXPECT_FALSE(validate_doubly_stochastic(bad_row));

    Mat negative(2, 2);
    negative << 1.5, -0.5, -0.5, 1.5;
    EXPECT_FALSE(validate_doubly_stochastic(negative));

    EXPECT_FALSE(validate_doubly_stochastic(Mat::Zero(2, 3)));
}

TEST(WeightMatrix, MetropolisChainOfThree) {
    CouplingGraph g(3, {{0, 1}, {1, 2}});
    auto sg = induce_subgraph(g, 0, {0, 1, 2});
    auto wm = build_weight_matrix(sg, WeightScheme::Metropolis);

    // Degrees (1,2,1): both edges carry 1/(1+2) = 1/3.
    Mat want(3, 3);
    want << 2.0 / 3.0, 1.0 / 3.0, 0.0,
            1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0,
            0.0,       1.0 / 3.0, 2.0 / 3.0;
    EXPECT_LT((wm.P - want).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_TRUE(validate_doubly_stochastic(wm.P));
}

TEST(WeightMatrix, MetropolisStar) {
    CouplingGraph g(4, {{0, 1}, {0, 2}, {0, 3}});
    auto sg = induce_subgraph(g, 0, {0, 1, 2, 3});
    auto wm = build_weight_matrix(sg, WeightScheme::Metropolis);
    EXPECT_NEAR(wm.P(0, 1), 0.25, 1e-15);
    EXPECT_NEAR(wm.P(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(wm.P(1, 1), 0.75, 1e-15);
    EXPECT_NEAR(wm.P(1, 2), 0.0, 1e-15);
    EXPECT_TRUE(validate_doubly_stochastic(wm.P));
}

TEST(WeightMatrix, UniformNeedsCompleteSubgraph) {
    CouplingGraph g(3, {{0, 1}, {1, 2}, {0, 2}});
    auto sg = induce_subgraph(g, 0, {0, 1, 2});
    auto wm = build_weight_matrix(sg, WeightScheme::Uniform);
    EXPECT_LT((wm.P - Mat::Constant(3, 3, 1.0 / 3.0)).cwiseAbs().maxCoeff(), 1e-15);

    CouplingGraph chain(3, {{0, 1}, {1, 2}});
    auto sg2 = induce_subgraph(chain, 0, {0, 1, 2});
    EXPECT_THROW(build_weight_matrix(sg2, WeightScheme::Uniform), InvalidArgument);
}

TEST(WeightMatrix, SingleParticipantIsIdentity) {
    CouplingGraph g(3, {{0, 1}});
    auto sg = induce_subgraph(g, 2, {1});
    auto wm = build_weight_matrix(sg, WeightScheme::Uniform);
    EXPECT_EQ(wm.P.rows(), 1);
    EXPECT_DOUBLE_EQ(wm.P(0, 0), 1.0);
    auto wm2 = build_weight_matrix(sg, WeightScheme::Metropolis);
    EXPECT_DOUBLE_EQ(wm2.P(0, 0), 1.0);
}

// Property: on random connected subgraphs the Metropolis matrix is doubly
// stochastic and its support matches the subgraph exactly.
TEST(WeightMatrix, MetropolisPropertyOnRandomGraphs) {
    std::mt19937 rng(20240517);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> size_dist(2, 8);
        const int n = size_dist(rng);
        std::vector<std::pair<int, int>> edges;
        // Random spanning tree, then extra random edges.
        for (int v = 1; v < n; ++v) {
            std::uniform_int_distribution<int> parent(0, v - 1);
            edges.emplace_back(parent(rng), v);
        }
        std::uniform_int_distribution<int> node(0, n - 1);
        for (int extra = 0; extra < n; ++extra) edges.emplace_back(node(rng), node(rng));

        CouplingGraph g(n, edges);
        std::vector<int> participants(n);
        for (int v = 0; v < n; ++v) participants[v] = v;
        auto sg = induce_subgraph(g, trial, participants);
        ASSERT_TRUE(sg.connected());
        auto wm = build_weight_matrix(sg, WeightScheme::Metropolis);

        EXPECT_TRUE(validate_doubly_stochastic(wm.P, 1e-12));
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                const bool support = (a == b) || g.has_edge(a, b);
                EXPECT_EQ(wm.P(a, b) > 0.0, support) << "entry " << a << "," << b;
            }
        EXPECT_LT((wm.P - wm.P.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    }
}

}  // namespace
