#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slam/graph.hpp"
#include "slam/pose2.hpp"

namespace slam {
namespace io {

struct MalformedRecord : std::runtime_error {
    int line;
    MalformedRecord(int line_, const std::string& what)
        : std::runtime_error("line " + std::to_string(line_) + ": " + what), line(line_) {}
};
struct UnanchoredGraph : std::runtime_error {
    explicit UnanchoredGraph(const std::string& what) : std::runtime_error(what) {}
};
struct UnsupportedRecord : std::runtime_error {
    explicit UnsupportedRecord(const std::string& what) : std::runtime_error(what) {}
};

struct RawVertex {
    int id = 0;
    Pose2 pose;
};

// Edges in anchored playback order plus the file-provided initial estimates.
struct DatasetStream {
    std::string name;
    int num_poses = 0;
    std::vector<Edge> edges;          // playback order
    std::vector<Pose2> initial;       // indexed by pose id
    std::vector<char> has_initial;    // whether a vertex record existed
};

// Parsers: unknown record tags are skipped (warning to stderr).
std::pair<std::vector<RawVertex>, std::vector<Edge>> parse_g2o(const std::string& text);
std::pair<std::vector<RawVertex>, std::vector<Edge>> parse_toro(const std::string& text);

// Anchored playback: growth edges (each initializing one new pose) keep file
// order; every other edge is emitted immediately after both endpoints exist,
// ties in file order. Throws UnanchoredGraph when some edge's component never
// connects to pose 0.
DatasetStream playback_order(const std::vector<RawVertex>& vertices,
                             const std::vector<Edge>& edges, const std::string& name);

// For every pose id == 0 (mod every): a PositionPrior2 with mean = reference
// position + N(0, sigma^2) per axis, info = diag(1/sigma^2), inserted
// immediately after the edge that initializes the pose (pose 0's prior leads
// the stream). Deterministic for a fixed seed.
DatasetStream inject_priors(const DatasetStream& stream, const std::vector<Pose2>& reference,
                            int every, double sigma, unsigned seed);

// Serializers (canonical formatting; numeric round trip to 1e-12 or better).
std::string serialize_g2o(const DatasetStream& s);
std::string serialize_toro(const DatasetStream& s);
std::string serialize_jsonl(const DatasetStream& s);
DatasetStream parse_jsonl(const std::string& text);  // keeps stored order

// Parse + playback for a file on disk; format is "g2o", "toro" or "jsonl".
DatasetStream load_dataset(const std::string& path, const std::string& format,
                           const std::string& name);

// True for relative-pose edges between non-consecutive pose ids.
inline bool is_loop_closure(const Edge& e) {
    return e.kind == EdgeKind::RelativePose2 && std::abs(e.from - e.to) != 1;
}

}  // namespace io
}  // namespace slam
