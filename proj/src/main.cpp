// slam-bench: experiment runner and data tooling.
//
// Subcommands:
//   run       stream a dataset through a solver variant, emit CSV/JSON
//   make-mitp regenerate the position-prior variant of a dataset
//   convert   convert between g2o, TORO and JSON-lines formats
//   validate  dense-oracle property suite on random graphs
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "slam/dense_oracle.hpp"
#include "slam/solver.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace slam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

std::string infer_format(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "g2o") return "g2o";
    if (ext == "graph" || ext == "toro") return "toro";
    if (ext == "jsonl") return "jsonl";
    throw std::invalid_argument("cannot infer format from '" + path + "'; pass --format");
}

std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct RunOutput {
    std::string csv;
    json summary;
};

RunOutput render_run(const std::string& dataset_name, const std::string& variant,
                     const solver::RunResult& res) {
    std::ostringstream csv;
    csv << "t,n_edges,delta_eta,gated,gn_iters,active_max,nchi2,ate,"
           "flops_update,flops_solve,cum_flops_update,cum_flops_solve\n";
    long long cum_u = 0, cum_s = 0;
    double sum_nchi2 = 0.0, sum_ate = 0.0;
    long long sum_u = 0, sum_s = 0, sum_sf = 0;
    bool have_ate = true;
    for (const auto& r : res.records) {
        cum_u += r.flops_update;
        cum_s += r.flops_solve;
        int active_max = 0;
        for (int a : r.active_set_sizes) active_max = std::max(active_max, a);
        csv << r.t << ',' << r.n_new_edges << ',' << fmt_double(r.delta_eta) << ','
            << (r.gated_global ? 1 : 0) << ',' << r.gn_iters_used << ',' << active_max << ','
            << fmt_double(r.nchi2) << ',' << fmt_double(r.ate) << ',' << r.flops_update << ','
            << r.flops_solve << ',' << cum_u << ',' << cum_s << '\n';
        sum_nchi2 += r.nchi2;
        if (std::isnan(r.ate)) have_ate = false;
        else sum_ate += r.ate;
        sum_u += r.flops_update;
        sum_s += r.flops_solve;
        sum_sf += r.flops_solve_full;
    }
    const double n = static_cast<double>(res.records.size());
    json summary;
    summary["dataset"] = dataset_name;
    summary["variant"] = variant;
    summary["increments"] = res.records.size();
    summary["final_nchi2"] = res.records.back().nchi2;
    summary["mean_nchi2"] = sum_nchi2 / n;
    if (have_ate) {
        summary["final_ate"] = res.records.back().ate;
        summary["mean_ate"] = sum_ate / n;
    } else {
        summary["final_ate"] = nullptr;
        summary["mean_ate"] = nullptr;
    }
    summary["mean_update_flops"] = static_cast<double>(sum_u) / n;
    summary["mean_solve_flops"] = static_cast<double>(sum_s) / n;
    summary["mean_solve_flops_full"] = static_cast<double>(sum_sf) / n;
    summary["accepted_steps"] = res.accepted_steps;
    summary["cost_increase_steps"] = res.cost_increase_steps;
    return {csv.str(), std::move(summary)};
}

struct RunJob {
    std::string dataset;
    std::string format;
    std::string variant;
};

int cmd_run(const std::vector<std::string>& datasets, std::string format,
            const std::vector<std::string>& variants, double tau_d, double tau_eta, int tau_gn,
            const std::string& out_dir, const std::string& emit, int jobs) {
    std::vector<RunJob> jobs_list;
    for (const auto& ds : datasets)
        for (const auto& v : variants)
            jobs_list.push_back({ds, format.empty() ? infer_format(ds) : format, v});
    // validate variant names up front (usage error, not a run failure)
    for (const auto& j : jobs_list) solver::variant_config(j.variant, tau_d, tau_eta, tau_gn);

    fs::create_directories(out_dir);
    const bool flat = jobs_list.size() == 1;

    std::mutex io_mutex;
    std::atomic<size_t> next{0};
    std::atomic<int> status{kExitOk};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs_list.size() || status.load() != kExitOk) return;
            const RunJob& job = jobs_list[i];
            try {
                const std::string name = fs::path(job.dataset).stem().string();
                auto stream = io::load_dataset(job.dataset, job.format, name);
                if (stream.edges.empty())
                    throw io::UnanchoredGraph("dataset has no edges: " + job.dataset);
                const auto ref_x = solver::reference_solution(stream);
                std::vector<Pose2> ref;
                for (size_t v = 0; v + 2 < ref_x.size() + 1; v += 3)
                    ref.emplace_back(ref_x[v], ref_x[v + 1], ref_x[v + 2]);
                auto res = solver::run_variant(job.variant, stream, tau_d, tau_eta, tau_gn, &ref);
                auto out = render_run(name, job.variant, res);

                fs::path dir = flat ? fs::path(out_dir)
                                    : fs::path(out_dir) / (name + "-" + job.variant);
                fs::create_directories(dir);
                if (emit == "csv" || emit == "both")
                    std::ofstream(dir / "increments.csv") << out.csv;
                if (emit == "json" || emit == "both")
                    std::ofstream(dir / "summary.json") << out.summary.dump(2) << '\n';
                std::lock_guard<std::mutex> lk(io_mutex);
                std::cerr << name << " " << job.variant
                          << ": final_nchi2=" << out.summary["final_nchi2"] << "\n";
            } catch (const io::MalformedRecord& e) {
                std::lock_guard<std::mutex> lk(io_mutex);
                std::cerr << "data error: " << job.dataset << ": " << e.what() << "\n";
                status.store(kExitData);
            } catch (const io::UnanchoredGraph& e) {
                std::lock_guard<std::mutex> lk(io_mutex);
                std::cerr << "data error: " << job.dataset << ": " << e.what() << "\n";
                status.store(kExitData);
            } catch (const solver::UnanchoredEdge& e) {
                std::lock_guard<std::mutex> lk(io_mutex);
                std::cerr << "data error: " << job.dataset << ": " << e.what() << "\n";
                status.store(kExitData);
            } catch (const std::ios_base::failure& e) {
                std::lock_guard<std::mutex> lk(io_mutex);
                std::cerr << "data error: " << job.dataset << ": " << e.what() << "\n";
                status.store(kExitData);
            } catch (const std::runtime_error& e) {
                // sparse numerical failures derive from runtime_error
                std::lock_guard<std::mutex> lk(io_mutex);
                std::cerr << "numerical failure: " << job.dataset << " " << job.variant << ": "
                          << e.what() << "\n";
                status.store(kExitNumerical);
            }
        }
    };
    const int nthreads = std::max(1, std::min<int>(jobs, static_cast<int>(jobs_list.size())));
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return status.load();
}

int cmd_make_mitp(const std::string& mit_path, std::string format, int every, double sigma,
                  unsigned seed, const std::string& out_path) {
    if (format.empty()) format = infer_format(mit_path);
    auto stream = io::load_dataset(mit_path, format, fs::path(mit_path).stem().string());
    const auto ref_x = solver::reference_solution(stream);
    std::vector<Pose2> ref;
    for (size_t v = 0; v + 2 < ref_x.size() + 1; v += 3)
        ref.emplace_back(ref_x[v], ref_x[v + 1], ref_x[v + 2]);
    auto withp = io::inject_priors(stream, ref, every, sigma, seed);
    withp.name = stream.name + "-P";
    std::ofstream out(out_path);
    if (!out) {
        std::cerr << "data error: cannot open '" << out_path << "' for writing\n";
        return kExitData;
    }
    out << io::serialize_jsonl(withp);
    int priors = 0;
    for (const auto& e : withp.edges)
        if (e.kind == EdgeKind::PositionPrior2) ++priors;
    std::cerr << "wrote " << out_path << " (" << withp.edges.size() << " records, " << priors
              << " priors)\n";
    return kExitOk;
}

int cmd_convert(const std::string& in_path, std::string in_format, const std::string& out_path,
                std::string out_format) {
    if (in_format.empty()) in_format = infer_format(in_path);
    if (out_format.empty()) out_format = infer_format(out_path);
    auto stream = io::load_dataset(in_path, in_format, fs::path(in_path).stem().string());
    std::string text;
    if (out_format == "g2o") text = io::serialize_g2o(stream);
    else if (out_format == "toro") text = io::serialize_toro(stream);
    else if (out_format == "jsonl") text = io::serialize_jsonl(stream);
    else throw CLI::ValidationError("--out-format", "unknown format '" + out_format + "'");
    std::ofstream out(out_path);
    if (!out) {
        std::cerr << "data error: cannot open '" << out_path << "' for writing\n";
        return kExitData;
    }
    out << text;
    return kExitOk;
}

// Dense-oracle property suite on random graphs. Returns true on success;
// prints a minimal reproducer (seed, trial, check) on the first violation.
bool validate_once(std::mt19937& rng, int scale, unsigned seed, int trial) {
    std::uniform_int_distribution<int> np(2, std::max(2, scale));
    const int nposes = np(rng);
    std::uniform_int_distribution<int> nl(0, std::max(1, nposes / 3));
    Graph g = oracle::make_random_graph(rng, nposes, nl(rng));
    const auto x = oracle::state_of(g);
    const auto facs = oracle::linearize_all(g, x);
    auto [H, b] = oracle::assemble_H_b(g.num_vars(), facs);
    const auto perm = sparse::amd_order(H, {});
    const auto f = sparse::factorize(H, perm);

    auto fail = [&](const char* check, double err) {
        std::cerr << "validate FAILED: check=" << check << " seed=" << seed << " trial=" << trial
                  << " poses=" << nposes << " err=" << err << "\n";
        return false;
    };

    // factorization: R^T R == P H P^T
    {
        const auto R = oracle::dense_of(f.R());
        const auto Hd = oracle::dense_of(H);
        auto RtR = oracle::matmul(oracle::transpose(R), R);
        const int n = g.num_vars();
        oracle::Dense Hp = oracle::zeros(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) Hp[f.perm[i]][f.perm[j]] = Hd[i][j];
        const double err = oracle::frob(oracle::sub(RtR, Hp)) / std::max(1.0, oracle::frob(Hp));
        if (err > 1e-9) return fail("factorize", err);
    }
    // full solve vs dense SPD solve
    {
        const auto d = sparse::full_solve(f, b);
        const auto dd = oracle::dense_solve_spd(oracle::dense_of(H), b);
        double err = 0.0;
        for (size_t i = 0; i < d.size(); ++i) err = std::max(err, std::abs(d[i] - dd[i]));
        if (err > 1e-9) return fail("full_solve", err);
    }
    // partial solve vs dense block oracle on a random node-block-closed S
    {
        std::uniform_int_distribution<int> pickn(0, g.num_nodes() - 1);
        std::set<int> snodes;
        const int k = 1 + pickn(rng) % std::max(1, g.num_nodes() / 2);
        for (int i = 0; i < k; ++i) snodes.insert(pickn(rng));
        std::vector<int> S;
        for (int nd : snodes)
            for (int c = 0; c < 3; ++c) S.push_back(3 * nd + c);
        sparse::StaticBlockCache cache;
        const auto d = sparse::partial_solve(f, b, S, cache);
        const auto dd = oracle::dense_partial_oracle(f, b, S);
        double err = 0.0;
        for (size_t i = 0; i < d.size(); ++i) err = std::max(err, std::abs(d[i] - dd[i]));
        if (err > 1e-9) return fail("partial_solve", err);
    }
    // incremental row additions reach the same factor as a scratch build
    {
        auto inc = sparse::CholeskyFactor::empty(0);
        std::vector<double> binc;
        for (const auto& fac : facs) {
            const int need = 3 * (1 + std::max(fac.nodes[0], fac.n_nodes > 1 ? fac.nodes[1] : 0));
            if (need > inc.n) {
                inc.extend(need - inc.n);
                binc.resize(need, 0.0);
            }
            sparse::add_rows(inc, binc, {fac});
        }
        const auto scratch = sparse::factorize(H, inc.perm);
        const auto A = oracle::dense_of(inc.R());
        const auto B = oracle::dense_of(scratch.R());
        const double err = oracle::frob(oracle::sub(A, B)) / std::max(1.0, oracle::frob(B));
        if (err > 1e-9) return fail("add_rows", err);
    }
    return true;
}

int cmd_validate(int scale, unsigned seed, int trials) {
    std::mt19937 rng(seed);
    for (int t = 0; t < trials; ++t)
        if (!validate_once(rng, scale, seed, t)) return kExitNumerical;
    std::cerr << "validate: " << trials << " random graphs (<= " << scale << " poses) OK\n";
    return kExitOk;
}

// Structured config file support: flags win on conflict, so the file only
// fills in values the user did not pass explicitly.
void apply_config_file(const CLI::App* sub, const std::string& path, std::string& format,
                       std::vector<std::string>& datasets, std::vector<std::string>& variants,
                       double& tau_d, double& tau_eta, int& tau_gn, std::string& out,
                       std::string& emit, int& jobs) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open config file '" + path + "'");
    json cfg = json::parse(in);
    auto unset = [&](const char* flag) { return sub->count(flag) == 0; };
    if (cfg.contains("dataset") && unset("--dataset")) {
        datasets.clear();
        if (cfg["dataset"].is_array())
            for (const auto& d : cfg["dataset"]) datasets.push_back(d.get<std::string>());
        else
            datasets.push_back(cfg["dataset"].get<std::string>());
    }
    if (cfg.contains("variant") && unset("--variant")) {
        variants.clear();
        if (cfg["variant"].is_array())
            for (const auto& v : cfg["variant"]) variants.push_back(v.get<std::string>());
        else
            variants.push_back(cfg["variant"].get<std::string>());
    }
    if (cfg.contains("format") && unset("--format")) format = cfg["format"].get<std::string>();
    if (cfg.contains("tau_d") && unset("--tau-d")) tau_d = cfg["tau_d"].get<double>();
    if (cfg.contains("tau_eta") && unset("--tau-eta")) tau_eta = cfg["tau_eta"].get<double>();
    if (cfg.contains("tau_gn") && unset("--tau-gn")) tau_gn = cfg["tau_gn"].get<int>();
    if (cfg.contains("out") && unset("--out")) out = cfg["out"].get<std::string>();
    if (cfg.contains("emit") && unset("--emit")) emit = cfg["emit"].get<std::string>();
    if (cfg.contains("jobs") && unset("--jobs")) jobs = cfg["jobs"].get<int>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"incremental pose-graph SLAM benchmark harness"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "stream a dataset through a solver variant");
    std::vector<std::string> datasets, variants{"GNi-SPO-IGG"};
    std::string format, out_dir = ".", emit = "both", config_path;
    double tau_d = 1e-3, tau_eta = 1.0;
    int tau_gn = 10, jobs = 1;
    unsigned seed = 0;
    run->add_option("--dataset", datasets, "dataset file(s)");
    run->add_option("--format", format, "g2o|toro|jsonl (default: by extension)");
    run->add_option("--variant", variants,
                    "GN1|GNi|GNi-LCG|GNi-IGG|GNi-SPO|GNi-SPO-LCG|GNi-SPO-IGG");
    run->add_option("--tau-d", tau_d, "increment-magnitude threshold");
    run->add_option("--tau-eta", tau_eta, "information-gain threshold");
    run->add_option("--tau-gn", tau_gn, "max GN iterations per increment");
    run->add_option("--seed", seed, "random seed (reserved; runs are deterministic)");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--emit", emit, "csv|json|both")
        ->check(CLI::IsMember({"csv", "json", "both"}));
    run->add_option("--jobs", jobs, "parallel (dataset, variant) pairs")
        ->check(CLI::PositiveNumber);
    run->add_option("--config", config_path, "JSON config file (flags win on conflict)");

    // make-mitp
    auto* mitp = app.add_subcommand("make-mitp", "inject position priors into a dataset");
    std::string mit_path, mitp_out = "mitp.jsonl", mitp_format;
    int every = 50;
    double sigma = 1.0;
    unsigned mitp_seed = 0;
    mitp->add_option("--dataset", mit_path, "source dataset")->required();
    mitp->add_option("--format", mitp_format, "g2o|toro|jsonl (default: by extension)");
    mitp->add_option("--every", every, "prior every k-th pose")->check(CLI::PositiveNumber);
    mitp->add_option("--sigma", sigma, "prior noise std dev (meters)");
    mitp->add_option("--seed", mitp_seed, "random seed");
    mitp->add_option("--out", mitp_out, "output JSON-lines path");

    // convert
    auto* conv = app.add_subcommand("convert", "convert between dataset formats");
    std::string conv_in, conv_out, conv_in_fmt, conv_out_fmt;
    conv->add_option("--dataset,--in", conv_in, "input file")->required();
    conv->add_option("--format,--in-format", conv_in_fmt, "input format (default: by extension)");
    conv->add_option("--out", conv_out, "output file")->required();
    conv->add_option("--out-format", conv_out_fmt, "output format (default: by extension)");

    // validate
    auto* val = app.add_subcommand("validate", "dense-oracle property suite");
    int scale = 30, trials = 40;
    unsigned val_seed = 1;
    val->add_option("--scale", scale, "max poses per random graph")->check(CLI::PositiveNumber);
    val->add_option("--seed", val_seed, "random seed");
    val->add_option("--trials", trials, "number of random graphs")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // --help is success
    } catch (const CLI::Error& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (run->parsed()) {
            if (!config_path.empty())
                apply_config_file(run, config_path, format, datasets, variants, tau_d, tau_eta,
                                  tau_gn, out_dir, emit, jobs);
            if (datasets.empty()) {
                std::cerr << "usage error: at least one --dataset is required\n";
                return kExitUsage;
            }
            return cmd_run(datasets, format, variants, tau_d, tau_eta, tau_gn, out_dir, emit,
                           jobs);
        }
        if (mitp->parsed())
            return cmd_make_mitp(mit_path, mitp_format, every, sigma, mitp_seed, mitp_out);
        if (conv->parsed()) return cmd_convert(conv_in, conv_in_fmt, conv_out, conv_out_fmt);
        if (val->parsed()) return cmd_validate(scale, val_seed, trials);
    } catch (const CLI::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const io::MalformedRecord& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const io::UnanchoredGraph& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const io::UnsupportedRecord& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::runtime_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitUsage;
}
