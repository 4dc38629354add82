#include "slam/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <system_error>

#include "json.hpp"

namespace slam {
namespace io {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

double num(const std::string& tok, int line) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw MalformedRecord(line, "non-numeric field '" + tok + "'");
    }
    if (pos != tok.size()) throw MalformedRecord(line, "non-numeric field '" + tok + "'");
    return v;
}

int intnum(const std::string& tok, int line) {
    const double v = num(tok, line);
    if (v != std::floor(v)) throw MalformedRecord(line, "non-integer id '" + tok + "'");
    return static_cast<int>(v);
}

Mat3 info_from_upper(double i11, double i12, double i13, double i22, double i23, double i33) {
    Mat3 m{};
    m[0][0] = i11; m[0][1] = i12; m[0][2] = i13;
    m[1][0] = i12; m[1][1] = i22; m[1][2] = i23;
    m[2][0] = i13; m[2][1] = i23; m[2][2] = i33;
    return m;
}

using Parsed = std::pair<std::vector<RawVertex>, std::vector<Edge>>;

Parsed parse_generic(const std::string& text, const std::string& vtag, const std::string& etag,
                     bool toro_info_order) {
    Parsed out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto t = split_ws(line);
        if (t.empty() || t[0][0] == '#') continue;
        if (t[0] == vtag) {
            if (t.size() != 5) throw MalformedRecord(lineno, "vertex record needs 4 fields");
            RawVertex v;
            v.id = intnum(t[1], lineno);
            v.pose = Pose2(num(t[2], lineno), num(t[3], lineno), num(t[4], lineno));
            out.first.push_back(v);
        } else if (t[0] == etag) {
            if (t.size() != 12) throw MalformedRecord(lineno, "edge record needs 11 fields");
            const int i = intnum(t[1], lineno), j = intnum(t[2], lineno);
            const Pose2 meas(num(t[3], lineno), num(t[4], lineno), num(t[5], lineno));
            double f[6];
            for (int k = 0; k < 6; ++k) f[k] = num(t[6 + k], lineno);
            const Mat3 info = toro_info_order
                                  // TORO: I11 I12 I22 I33 I13 I23
                                  ? info_from_upper(f[0], f[1], f[4], f[2], f[5], f[3])
                                  // g2o: I11 I12 I13 I22 I23 I33
                                  : info_from_upper(f[0], f[1], f[2], f[3], f[4], f[5]);
            out.second.push_back(Edge::relative_pose(i, j, meas, info));
        } else {
            std::cerr << "warning: line " << lineno << ": skipping unknown record '" << t[0]
                      << "'\n";
        }
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Parsed parse_g2o(const std::string& text) {
    return parse_generic(text, "VERTEX_SE2", "EDGE_SE2", false);
}

Parsed parse_toro(const std::string& text) {
    return parse_generic(text, "VERTEX2", "EDGE2", true);
}

DatasetStream playback_order(const std::vector<RawVertex>& vertices,
                             const std::vector<Edge>& edges, const std::string& name) {
    DatasetStream s;
    s.name = name;
    int maxid = 0;
    for (const auto& v : vertices) maxid = std::max(maxid, v.id);
    for (const auto& e : edges) maxid = std::max({maxid, e.from, e.to});
    s.num_poses = maxid + 1;
    s.initial.assign(s.num_poses, Pose2());
    s.has_initial.assign(s.num_poses, 0);
    for (const auto& v : vertices) {
        if (v.id < 0) throw UnanchoredGraph("negative vertex id");
        s.initial[v.id] = v.pose;
        s.has_initial[v.id] = 1;
    }

    std::vector<char> used(edges.size(), 0);
    std::vector<char> init(s.num_poses, 0);
    init[0] = 1;
    auto ready = [&](const Edge& e) {
        return e.is_unary() ? static_cast<bool>(init[e.from]) : (init[e.from] && init[e.to]);
    };
    bool changed = true;
    while (changed) {
        changed = false;
        // one growth edge: first odometry edge (consecutive ids) in file order
        // with exactly one endpoint live; loop closures never initialize poses
        for (std::size_t k = 0; k < edges.size(); ++k) {
            const Edge& e = edges[k];
            if (used[k] || e.is_unary() || std::abs(e.from - e.to) != 1) continue;
            if (static_cast<bool>(init[e.from]) != static_cast<bool>(init[e.to])) {
                s.edges.push_back(e);
                used[k] = 1;
                init[e.from] = init[e.to] = 1;
                changed = true;
                break;
            }
        }
        // then everything whose endpoints all exist, in file order
        for (std::size_t k = 0; k < edges.size(); ++k) {
            if (used[k]) continue;
            if (ready(edges[k])) {
                s.edges.push_back(edges[k]);
                used[k] = 1;
                changed = true;
            }
        }
    }
    for (std::size_t k = 0; k < edges.size(); ++k)
        if (!used[k])
            throw UnanchoredGraph("edge " + std::to_string(edges[k].from) + "-" +
                                  std::to_string(edges[k].to) + " never connects to pose 0");
    return s;
}

DatasetStream inject_priors(const DatasetStream& stream, const std::vector<Pose2>& reference,
                            int every, double sigma, unsigned seed) {
    if (static_cast<int>(reference.size()) < stream.num_poses)
        throw std::invalid_argument("inject_priors: reference does not cover all poses");
    if (every < 1) throw std::invalid_argument("inject_priors: every must be >= 1");

    // Deterministic Gaussian draws: explicit Box-Muller over mt19937 so the
    // stream is reproducible independent of the standard library.
    std::mt19937 rng(seed);
    auto gauss = [&rng]() {
        const double u1 = (static_cast<double>(rng()) + 1.0) / (static_cast<double>(rng.max()) + 2.0);
        const double u2 = (static_cast<double>(rng()) + 1.0) / (static_cast<double>(rng.max()) + 2.0);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    };
    Mat2 info{};
    const double w = sigma > 0.0 ? 1.0 / (sigma * sigma) : 1.0;
    info[0][0] = w;
    info[1][1] = w;
    auto make_prior = [&](int pose) {
        const double nx = gauss(), ny = gauss();
        return Edge::position_prior(pose, reference[pose].x + sigma * nx,
                                    reference[pose].y + sigma * ny, info);
    };

    DatasetStream out = stream;
    out.edges.clear();
    out.name = stream.name + "-P";
    std::vector<char> init(stream.num_poses, 0);
    init[0] = 1;
    out.edges.push_back(make_prior(0));
    for (const Edge& e : stream.edges) {
        out.edges.push_back(e);
        for (int p : {e.from, e.to}) {
            if (p >= 0 && !init[p]) {
                init[p] = 1;
                if (p % every == 0) out.edges.push_back(make_prior(p));
            }
        }
    }
    return out;
}

std::string serialize_g2o(const DatasetStream& s) {
    std::string out;
    for (int i = 0; i < s.num_poses; ++i)
        if (s.has_initial[i])
            out += "VERTEX_SE2 " + std::to_string(i) + " " + fmt(s.initial[i].x) + " " +
                   fmt(s.initial[i].y) + " " + fmt(s.initial[i].theta) + "\n";
    for (const Edge& e : s.edges) {
        if (e.kind != EdgeKind::RelativePose2)
            throw UnsupportedRecord("g2o cannot represent prior records");
        const Mat3& m = e.info3;
        out += "EDGE_SE2 " + std::to_string(e.from) + " " + std::to_string(e.to) + " " +
               fmt(e.meas.x) + " " + fmt(e.meas.y) + " " + fmt(e.meas.theta) + " " +
               fmt(m[0][0]) + " " + fmt(m[0][1]) + " " + fmt(m[0][2]) + " " + fmt(m[1][1]) + " " +
               fmt(m[1][2]) + " " + fmt(m[2][2]) + "\n";
    }
    return out;
}

std::string serialize_toro(const DatasetStream& s) {
    std::string out;
    for (int i = 0; i < s.num_poses; ++i)
        if (s.has_initial[i])
            out += "VERTEX2 " + std::to_string(i) + " " + fmt(s.initial[i].x) + " " +
                   fmt(s.initial[i].y) + " " + fmt(s.initial[i].theta) + "\n";
    for (const Edge& e : s.edges) {
        if (e.kind != EdgeKind::RelativePose2)
            throw UnsupportedRecord("toro cannot represent prior records");
        const Mat3& m = e.info3;
        out += "EDGE2 " + std::to_string(e.from) + " " + std::to_string(e.to) + " " +
               fmt(e.meas.x) + " " + fmt(e.meas.y) + " " + fmt(e.meas.theta) + " " +
               fmt(m[0][0]) + " " + fmt(m[0][1]) + " " + fmt(m[1][1]) + " " + fmt(m[2][2]) + " " +
               fmt(m[0][2]) + " " + fmt(m[1][2]) + "\n";
    }
    return out;
}

std::string serialize_jsonl(const DatasetStream& s) {
    using nlohmann::json;
    std::string out;
    out += json{{"kind", "meta"}, {"name", s.name}, {"num_poses", s.num_poses}}.dump() + "\n";
    for (int i = 0; i < s.num_poses; ++i)
        if (s.has_initial[i])
            out += json{{"kind", "vertex"},
                        {"id", i},
                        {"x", s.initial[i].x},
                        {"y", s.initial[i].y},
                        {"theta", s.initial[i].theta}}
                       .dump() +
                   "\n";
    for (const Edge& e : s.edges) {
        json j;
        if (e.kind == EdgeKind::RelativePose2) {
            const Mat3& m = e.info3;
            j = json{{"kind", "relative_pose"}, {"from", e.from}, {"to", e.to},
                     {"dx", e.meas.x},          {"dy", e.meas.y}, {"dtheta", e.meas.theta},
                     {"info", {m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2]}}};
        } else if (e.kind == EdgeKind::PositionPrior2) {
            const Mat2& m = e.info2;
            j = json{{"kind", "position_prior"},
                     {"node", e.from},
                     {"x", e.prior_x},
                     {"y", e.prior_y},
                     {"info", {m[0][0], m[0][1], m[1][1]}}};
        } else {
            throw UnsupportedRecord("jsonl streams do not carry anchor records");
        }
        out += j.dump() + "\n";
    }
    return out;
}

DatasetStream parse_jsonl(const std::string& text) {
    using nlohmann::json;
    DatasetStream s;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    std::vector<RawVertex> verts;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw MalformedRecord(lineno, e.what());
        }
        try {
            const std::string kind = j.at("kind");
            if (kind == "meta") {
                s.name = j.at("name");
                s.num_poses = j.at("num_poses");
            } else if (kind == "vertex") {
                verts.push_back({j.at("id"), Pose2(j.at("x"), j.at("y"), j.at("theta"))});
            } else if (kind == "relative_pose") {
                const auto& m = j.at("info");
                s.edges.push_back(Edge::relative_pose(
                    j.at("from"), j.at("to"), Pose2(j.at("dx"), j.at("dy"), j.at("dtheta")),
                    info_from_upper(m.at(0), m.at(1), m.at(2), m.at(3), m.at(4), m.at(5))));
            } else if (kind == "position_prior") {
                const auto& m = j.at("info");
                Mat2 info{};
                info[0][0] = m.at(0);
                info[0][1] = info[1][0] = m.at(1);
                info[1][1] = m.at(2);
                s.edges.push_back(Edge::position_prior(j.at("node"), j.at("x"), j.at("y"), info));
            } else {
                std::cerr << "warning: line " << lineno << ": skipping unknown record '" << kind
                          << "'\n";
            }
        } catch (const json::exception& e) {
            throw MalformedRecord(lineno, e.what());
        }
    }
    for (const Edge& e : s.edges) s.num_poses = std::max({s.num_poses, e.from + 1, e.to + 1});
    s.initial.assign(s.num_poses, Pose2());
    s.has_initial.assign(s.num_poses, 0);
    for (const auto& v : verts) {
        if (v.id < 0 || v.id >= s.num_poses) throw UnanchoredGraph("vertex id out of range");
        s.initial[v.id] = v.pose;
        s.has_initial[v.id] = 1;
    }
    return s;
}

DatasetStream load_dataset(const std::string& path, const std::string& format,
                           const std::string& name) {
    std::ifstream f(path);
    if (!f)
        throw std::ios_base::failure("cannot open " + path,
                                     std::make_error_code(std::errc::no_such_file_or_directory));
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string text = buf.str();
    DatasetStream s;
    if (format == "g2o") {
        auto [v, e] = parse_g2o(text);
        s = playback_order(v, e, name);
    } else if (format == "toro") {
        auto [v, e] = parse_toro(text);
        s = playback_order(v, e, name);
    } else if (format == "jsonl") {
        s = parse_jsonl(text);
    } else {
        throw std::invalid_argument("unknown format '" + format + "'");
    }
    if (s.num_poses == 0) throw UnanchoredGraph("dataset has no poses: " + path);
    return s;
}

}  // namespace io
}  // namespace slam
