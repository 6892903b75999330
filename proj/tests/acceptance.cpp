// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   slamkit_acceptance [--work DIR] [--record-fixture]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "oracles.hpp"
#include "slamkit/config.hpp"
#include "slamkit/ensemble.hpp"
#include "slamkit/metrics.hpp"
#include "slamkit/pipeline.hpp"
#include "slamkit/predictions.hpp"

namespace fs = std::filesystem;
using namespace slamkit;
using Clock = std::chrono::steady_clock;

namespace {

// tolerances and budgets
constexpr int kOracleDatasets = 30;
constexpr double kOracleGainTol = 1e-9;  // relative; histogram and row sums add in different orders
constexpr double kOracleBudgetS = 30.0;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradBudgetS = 60.0;
constexpr int kAucSets = 100;
constexpr std::size_t kAucSetSize = 50;
constexpr double kClosedFormTol = 1e-12;
constexpr double kDominanceSlack = 1e-12;
constexpr double kTestBlendSlack = 0.02;
constexpr double kFixtureTol = 1e-9;
constexpr double kGbdtPower = 0.8;
constexpr double kNetPower = 0.6;
constexpr double kLearningBudgetS = 600.0;
constexpr double kRarityShare = 0.04;
constexpr double kRarityShareTol = 0.01;
constexpr int kMonotoneIters = 200;
constexpr double kMonotoneSlack = 0.0;

struct Result {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

PredictionSet read_preds(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return read_predictions(in);
}

double auc_on(const PredictionSet& p, const std::unordered_map<std::string, int>& labels) {
    std::vector<int> y;
    std::vector<double> s;
    for (const auto& e : p.entries()) {
        auto it = labels.find(e.id);
        if (it == labels.end()) throw std::runtime_error("prediction without a label: " + e.id);
        y.push_back(it->second);
        s.push_back(e.p);
    }
    return auc(y, s);
}

std::vector<double> base_gradients_loss(const std::vector<int>& y, std::vector<gbdt::GradHess>& gh) {
    const double rate = static_cast<double>(std::count(y.begin(), y.end(), 1)) / static_cast<double>(y.size());
    const std::vector<double> scores(y.size(), std::log(rate / (1.0 - rate)));
    gh = gbdt::grad_hess(y, scores);
    return scores;
}

// 1
Result oracle_equivalence() {
    const auto t0 = Clock::now();
    int ok = 0, with_cat = 0;
    std::string first_error;
    for (int i = 0; i < kOracleDatasets; ++i) {
        const auto c = oracle::random_case(1000 + static_cast<std::uint64_t>(i));
        for (const auto& col : c.x.columns()) with_cat += col.kind == ColumnKind::categorical;
        const auto p = oracle::exact_params(c.num_leaves);
        const auto r = gbdt::train(c.x, c.y, nullptr, {}, p);
        std::vector<gbdt::GradHess> gh;
        base_gradients_loss(c.y, gh);
        const auto err = r.forest.trees.empty() ? std::string("no tree") : oracle::check_tree(r.forest.trees[0], c.x, gh, p, kOracleGainTol);
        if (err.empty()) ++ok;
        else if (first_error.empty()) first_error = fmt::format("dataset {}: {}", i, err);
    }
    const double s = seconds_since(t0);
    Result res;
    res.pass = ok == kOracleDatasets && s < kOracleBudgetS;
    res.detail = fmt::format("{}/{} first trees equal leaf-wise exhaustive search ({} categorical columns), {:.2f} s (< {} s)",
                             ok, kOracleDatasets, with_cat, s, kOracleBudgetS);
    if (!first_error.empty()) res.detail += "; " + first_error;
    return res;
}

// 2
Result gradient_check() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_name;
    std::size_t tensors = 0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto t = oracle::tiny_net(seed, true);
        for (const auto& e : oracle::gradient_check(t.net, t.batch)) {
            ++tensors;
            if (e.max_rel >= worst) {
                worst = e.max_rel;
                worst_name = e.name;
            }
        }
    }
    const double s = seconds_since(t0);
    return {worst < kGradRelTol && s < kGradBudgetS,
            fmt::format("{} tensors over 3 bidirectional dims-2 nets; worst relative error {:.2e} ({}) < {:.0e}, {:.2f} s",
                        tensors, worst, worst_name, kGradRelTol, s)};
}

// 3
Result metric_oracles() {
    Rng rng(0xA0C);
    int exact = 0;
    for (int k = 0; k < kAucSets; ++k) {
        std::vector<int> y(kAucSetSize);
        std::vector<double> s(kAucSetSize);
        for (std::size_t i = 0; i < kAucSetSize; ++i) {
            y[i] = static_cast<int>(rng.below(2));
            s[i] = static_cast<double>(rng.below(10)) / 10.0;
        }
        y[0] = 0;
        y[1] = 1;
        exact += auc(y, s) == oracle::pairwise_auc(y, s);
    }
    const std::vector<int> fy{1, 1, 0};
    const std::vector<double> fs_{0.9, 0.4, 0.6};
    const double f1_err = std::fabs(f1(fy, fs_) - 0.5);
    const double f1_perfect = std::fabs(f1(std::vector<int>{1, 0}, std::vector<double>{0.9, 0.1}) - 1.0);
    const double ll_err = std::fabs(log_loss(std::vector<int>{1, 0}, std::vector<double>{0.8, 0.4}) -
                                    (-std::log(0.8) - std::log(0.6)) / 2.0);
    const double ll_half = std::fabs(log_loss(std::vector<int>{1, 0, 0}, std::vector<double>{0.5, 0.5, 0.5}) - std::log(2.0));
    const double worst = std::max({f1_err, f1_perfect, ll_err, ll_half});
    return {exact == kAucSets && worst <= kClosedFormTol,
            fmt::format("AUC equals the pairwise count on {}/{} tied {}-instance sets; F1/log-loss worst error {:.1e} (<= {:.0e})",
                        exact, kAucSets, kAucSetSize, worst, kClosedFormTol)};
}

struct Standard {
    RunConfig cfg;
    double oracle_dev = 0, gbdt_dev = 0, rnn_dev = 0, blend_dev = 0, grid_best = 0;
    double gbdt_test = 0, rnn_test = 0, blend_test = 0;
    double seconds = 0;
    nlohmann::json analysis;
};

seqnet::NetConfig acceptance_net(seqnet::NetConfig n) {
    n.recurrent_units = 32;
    n.ff_units = 32;
    n.subseq_len = 64;
    n.epochs = 5;
    n.learning_rate = 0.003;
    return n;
}

Standard run_standard(const fs::path& dir) {
    Standard s;
    s.cfg = RunConfig{};
    s.cfg.set_seed(s.cfg.seed);
    s.cfg.out_dir = dir;
    s.cfg.rnn = acceptance_net(s.cfg.rnn);
    const auto t0 = Clock::now();
    pipeline::synth(s.cfg);
    pipeline::train_gbdt(s.cfg);
    pipeline::train_rnn(s.cfg);
    s.seconds = seconds_since(t0);
    pipeline::ensemble(s.cfg, pipeline::default_ensemble_inputs(s.cfg));
    pipeline::EvalInputs in;
    in.predictions = dir / "gbdt_dev.pred";
    in.partition = Partition::dev;
    in.forest = dir / "gbdt_model.json";
    pipeline::analyze(s.cfg, in);
    s.analysis = nlohmann::json::parse(read_file(dir / "gbdt_dev.analysis.json"));

    const auto d = pipeline::load_data(s.cfg);
    const auto dev = partition_labels(d, Partition::dev);
    const auto test = partition_labels(d, Partition::test);
    s.oracle_dev = auc_on(read_preds(dir / "oracle_dev.pred"), dev);
    s.gbdt_dev = auc_on(read_preds(dir / "gbdt_dev.pred"), dev);
    s.rnn_dev = auc_on(read_preds(dir / "rnn_dev.pred"), dev);
    s.blend_dev = auc_on(read_preds(dir / "ensemble_dev.pred"), dev);
    s.grid_best = nlohmann::json::parse(read_file(dir / "ensemble.json")).at("dev_auc").get<double>();
    s.gbdt_test = auc_on(read_preds(dir / "gbdt_test.pred"), test);
    s.rnn_test = auc_on(read_preds(dir / "rnn_test.pred"), test);
    s.blend_test = auc_on(read_preds(dir / "ensemble_test.pred"), test);
    return s;
}

// 4
Result ensemble_dominance(const Standard& s, const fs::path& fixture, bool record) {
    const double best_dev = std::max(s.gbdt_dev, s.rnn_dev);
    const double best_test = std::max(s.gbdt_test, s.rnn_test);
    const bool dev_ok = s.grid_best >= best_dev - kDominanceSlack;
    const bool test_ok = s.blend_test >= best_test - kTestBlendSlack;

    nlohmann::ordered_json now;
    now["gbdt_test_auc"] = s.gbdt_test;
    now["rnn_test_auc"] = s.rnn_test;
    now["ensemble_test_auc"] = s.blend_test;
    std::string fixture_note;
    bool fixture_ok = true;
    if (record) {
        std::ofstream(fixture) << now.dump(2) << '\n';
        fixture_note = "fixture recorded";
    } else if (!fs::exists(fixture)) {
        fixture_ok = false;
        fixture_note = "fixture missing: " + fixture.string();
    } else {
        const auto want = nlohmann::json::parse(read_file(fixture));
        double drift = 0.0;
        for (const auto& [k, v] : now.items()) drift = std::max(drift, std::fabs(v.get<double>() - want.at(k).get<double>()));
        fixture_ok = drift <= kFixtureTol;
        fixture_note = fmt::format("fixture drift {:.1e} (<= {:.0e})", drift, kFixtureTol);
    }
    return {dev_ok && test_ok && fixture_ok,
            fmt::format("dev grid best {:.5f} (file {:.5f}) >= max(gbdt {:.5f}, rnn {:.5f}) - 1e-12; "
                        "test blend {:.5f} vs best component {:.5f} (slack {}); {}",
                        s.grid_best, s.blend_dev, s.gbdt_dev, s.rnn_dev, s.blend_test, best_test, kTestBlendSlack,
                        fixture_note)};
}

// 5
Result learning_power(const Standard& s) {
    const double need_gbdt = 0.5 + kGbdtPower * (s.oracle_dev - 0.5);
    const double need_net = 0.5 + kNetPower * (s.oracle_dev - 0.5);
    return {s.gbdt_dev >= need_gbdt && s.rnn_dev >= need_net && s.seconds < kLearningBudgetS,
            fmt::format("oracle {:.5f}; gbdt {:.5f} >= {:.5f}; rnn {:.5f} >= {:.5f}; {:.1f} s (< {} s)", s.oracle_dev,
                        s.gbdt_dev, need_gbdt, s.rnn_dev, need_net, s.seconds, kLearningBudgetS)};
}

// 6
Result decay(const Standard& s) {
    const auto& d = s.analysis.at("decay");
    const double q = d.at("log_loss_at_0.25").get<double>();
    const double one = d.at("log_loss_at_1").get<double>();
    const bool setup = s.cfg.synth.nonstationarity_drift > 0.0 && s.cfg.gbdt.use_user;
    return {setup && one > q,
            fmt::format("drift {}, user feature {}; GBDT dev log loss at 1.0 {:.5f} > at 0.25 {:.5f}",
                        s.cfg.synth.nonstationarity_drift, s.cfg.gbdt.use_user ? "on" : "off", one, q)};
}

// 7
Result rarity(const Standard& s) {
    const auto& r = s.analysis.at("rarity");
    const double is = r.at("instance_share").get<double>();
    const double ls = r.at("loss_share").get<double>();
    const bool near = std::fabs(is - kRarityShare) <= kRarityShareTol;
    return {near && ls > is,
            fmt::format("{} rarest tokens: instance share {:.4f} (target {} +- {}), loss share {:.4f}",
                        r.at("rarest_tokens").get<std::size_t>(), is, kRarityShare, kRarityShareTol, ls)};
}

// 8
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) m[e.path().filename().string()] = read_file(e.path());
    return m;
}

void run_all_commands(const RunConfig& c) {
    pipeline::synth(c);
    pipeline::ingest(c);
    pipeline::train_gbdt(c);
    pipeline::train_rnn(c);
    pipeline::ensemble(c, pipeline::default_ensemble_inputs(c));
    pipeline::evaluate(c, pipeline::default_eval_inputs(c));
    auto in = pipeline::default_eval_inputs(c);
    pipeline::analyze(c, in);
    in.predictions = c.out_dir / "rnn_test.pred";
    in.partition = Partition::test;
    pipeline::evaluate(c, in);
    pipeline::analyze(c, in);
}

Result determinism(const fs::path& dir) {
    RunConfig c;
    c.set_seed(424242);
    c.out_dir = dir;
    c.synth.n_users = 30;
    c.synth.exercises_per_user = 15;
    c.gbdt.params.n_estimators = 60;
    c.gbdt.final_refit = true;
    c.rnn.embed_dim = 4;
    c.rnn.recurrent_units = 8;
    c.rnn.ff_units = 8;
    c.rnn.subseq_len = 32;
    c.rnn.epochs = 2;
    c.rnn.cross_buckets = 1024;
    run_all_commands(c);
    const auto first = snapshot(dir);
    run_all_commands(c);
    const auto second = snapshot(dir);
    std::vector<std::string> differing;
    for (const auto& [name, bytes] : first) {
        auto it = second.find(name);
        if (it == second.end() || it->second != bytes) differing.push_back(name);
    }
    for (const auto& [name, bytes] : second)
        if (!first.count(name)) differing.push_back(name);
    std::string detail = fmt::format("{} output files byte-identical across reruns", first.size() - differing.size());
    if (!differing.empty()) detail += "; differ: " + fmt::format("{}", fmt::join(differing, ", "));
    return {differing.empty() && first.size() > 20, detail};
}

// 9
Result monotone(const Standard& s) {
    auto cfg = s.cfg;
    const auto d = pipeline::load_data(cfg);
    const auto v = build_vocab(d);
    const auto train_rows = select_partition(engineer(d, v), Partition::train);
    const auto x = to_tabular(train_rows, v, TabularOptions{cfg.gbdt.use_user, cfg.gbdt.use_morph});
    const auto y = labels_of(train_rows);
    auto p = gbdt::desk_params();
    p.n_estimators = kMonotoneIters;
    p.learning_rate = 0.05;
    p.lambda_l2 = 0.0;
    p.seed = cfg.gbdt.params.seed;
    const auto r = gbdt::train(x, y, nullptr, {}, p);
    std::vector<gbdt::GradHess> gh;
    const auto base = base_gradients_loss(y, gh);
    double prev = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double z = y[i] ? -base[i] : base[i];
        prev += std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z)));
    }
    prev /= static_cast<double>(y.size());
    const double start = prev;
    int rises = 0;
    double worst = 0.0;
    for (double l : r.log.train_loss) {
        if (l > prev + kMonotoneSlack) {
            ++rises;
            worst = std::max(worst, l - prev);
        }
        prev = l;
    }
    const bool full = static_cast<int>(r.log.train_loss.size()) == kMonotoneIters;
    return {full && rises == 0,
            fmt::format("{} iterations on {} train rows (lr 0.05, lambda 0): log loss {:.5f} -> {:.5f}, {} increases{}",
                        r.log.train_loss.size(), y.size(), start, r.log.train_loss.empty() ? start : r.log.train_loss.back(),
                        rises, rises ? fmt::format(" (largest {:.2e})", worst) : std::string())};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "slamkit_acceptance";
    bool record = false;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work" && i + 1 < argc) work = argv[++i];
        else if (a == "--record-fixture") record = true;
        else {
            std::cerr << "usage: slamkit_acceptance [--work DIR] [--record-fixture]\n";
            return 2;
        }
    }
    fs::remove_all(work);
    fs::create_directories(work);
    const fs::path fixture = fs::path(SLAMKIT_FIXTURE_DIR) / "ensemble_standard.json";

    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Result()>& f) {
        Result r;
        try {
            r = f();
        } catch (const std::exception& e) {
            r = {false, std::string("error: ") + e.what()};
        }
        failed += !r.pass;
        std::cout << (r.pass ? "PASS" : "FAIL") << ' ' << id << ' ' << name << ": " << r.detail << std::endl;
    };

    report(1, "GBDT oracle equivalence", oracle_equivalence);
    report(2, "gradient check", gradient_check);
    report(3, "metric oracles", metric_oracles);

    std::optional<Standard> standard;
    std::string standard_error;
    try {
        standard = run_standard(work / "standard");
    } catch (const std::exception& e) {
        standard_error = std::string("standard run failed: ") + e.what();
    }
    auto on_standard = [&](const std::function<Result(const Standard&)>& f) {
        return [&, f]() -> Result {
            if (!standard) return {false, standard_error};
            return f(*standard);
        };
    };
    report(4, "ensemble dominance", on_standard([&](const Standard& s) { return ensemble_dominance(s, fixture, record); }));
    report(5, "learning power", on_standard(learning_power));
    report(6, "decay with distance from the label horizon", on_standard(decay));
    report(7, "rare-token loss share", on_standard(rarity));
    report(8, "determinism", [&] { return determinism(work / "determinism"); });
    report(9, "monotone boosting", on_standard(monotone));

    std::cout << (failed ? fmt::format("{} of 9 criteria failed", failed) : std::string("all 9 criteria passed")) << std::endl;
    return failed ? 1 : 0;
}
