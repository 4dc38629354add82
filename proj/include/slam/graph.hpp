#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "slam/pose2.hpp"

namespace slam {

using NodeId = int;

using Mat3 = std::array<std::array<double, 3>, 3>;
using Mat2 = std::array<std::array<double, 2>, 2>;

enum class EdgeKind { RelativePose2, PositionPrior2, AnchorPrior2 };

// Measurement factor: a relative-pose constraint between two poses, a 2D
// position prior on one pose, or a full-pose anchor prior (gauge fixing).
struct Edge {
    EdgeKind kind = EdgeKind::RelativePose2;
    NodeId from = 0;          // RelativePose2: first endpoint; priors: the node
    NodeId to = 0;            // RelativePose2 only
    Pose2 meas;               // RelativePose2 / AnchorPrior2 measurement
    double prior_x = 0.0;     // PositionPrior2 measurement
    double prior_y = 0.0;
    Mat3 info3{};             // RelativePose2 / AnchorPrior2 information
    Mat2 info2{};             // PositionPrior2 information

    static Edge relative_pose(NodeId from, NodeId to, const Pose2& meas, const Mat3& info) {
        if (from == to) throw std::invalid_argument("Edge: relative pose requires from != to");
        Edge e;
        e.kind = EdgeKind::RelativePose2;
        e.from = from;
        e.to = to;
        e.meas = meas;
        e.info3 = info;
        return e;
    }
    static Edge position_prior(NodeId node, double px, double py, const Mat2& info) {
        Edge e;
        e.kind = EdgeKind::PositionPrior2;
        e.from = node;
        e.to = node;
        e.prior_x = px;
        e.prior_y = py;
        e.info2 = info;
        return e;
    }
    static Edge anchor_prior(NodeId node, const Pose2& meas, const Mat3& info) {
        Edge e;
        e.kind = EdgeKind::AnchorPrior2;
        e.from = node;
        e.to = node;
        e.meas = meas;
        e.info3 = info;
        return e;
    }

    bool is_unary() const { return kind != EdgeKind::RelativePose2; }
    // Number of scalar residual rows this edge contributes.
    int rows() const { return kind == EdgeKind::PositionPrior2 ? 2 : 3; }
};

// Pose graph: nodes with initial estimates, edges, and node->edge adjacency.
// Each node occupies 3 consecutive scalar variables.
struct Graph {
    std::vector<Pose2> nodes;                    // indexed by NodeId
    std::vector<Edge> edges;
    std::vector<std::vector<int>> adjacency;     // node -> incident edge indices

    int num_nodes() const { return static_cast<int>(nodes.size()); }
    int num_edges() const { return static_cast<int>(edges.size()); }
    int num_vars() const { return 3 * num_nodes(); }

    NodeId add_node(const Pose2& initial) {
        nodes.push_back(initial);
        adjacency.emplace_back();
        return static_cast<NodeId>(nodes.size()) - 1;
    }

    int add_edge(const Edge& e) {
        if (e.from < 0 || e.from >= num_nodes() ||
            (!e.is_unary() && (e.to < 0 || e.to >= num_nodes()))) {
            throw std::out_of_range("Graph::add_edge: endpoint does not exist");
        }
        const int idx = static_cast<int>(edges.size());
        edges.push_back(e);
        adjacency[e.from].push_back(idx);
        if (!e.is_unary() && e.to != e.from) adjacency[e.to].push_back(idx);
        return idx;
    }
};

}  // namespace slam
